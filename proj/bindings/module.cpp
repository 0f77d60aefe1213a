#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "avvp/cli.hpp"
#include "avvp/error.hpp"
#include "avvp/metrics.hpp"
#include "avvp/train.hpp"
#include "avvp/verify.hpp"

namespace py = pybind11;

namespace {

using namespace avvp;

Array array_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  Shape shape;
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(arr.shape(i));
  Array out(shape);
  std::memcpy(out.data.data(), arr.data(), out.data.size() * sizeof(double));
  return out;
}

py::array_t<double> numpy_from_array(const Array& a) {
  std::vector<py::ssize_t> shape(a.shape.begin(), a.shape.end());
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), a.data.data(), a.data.size() * sizeof(double));
  return out;
}

BinMat binmat_from_numpy(const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 2) throw DimensionError("expected a rank-2 binary matrix");
  BinMat out(arr.shape(0), arr.shape(1));
  std::memcpy(out.data.data(), arr.data(), out.data.size());
  return out;
}

RunConfig config_from_dict(const py::dict& d) {
  RunConfig cfg;
  for (const auto& item : d) {
    apply_config_entry(cfg, py::str(item.first).cast<std::string>(),
                       py::str(item.second).cast<std::string>());
  }
  return cfg;
}

py::dict report_to_dict(const EvalReport& r) {
  py::dict out;
  auto level = [](const LevelReport& l) {
    py::dict d;
    d["audio_f"] = l.audio_f;
    d["visual_f"] = l.visual_f;
    d["av_f"] = l.av_f;
    d["type_at_av"] = l.type_at_av_f;
    d["event_at_av"] = l.event_at_av_f;
    d["audio_counts"] = py::make_tuple(l.audio.tp, l.audio.fp, l.audio.fn);
    d["visual_counts"] = py::make_tuple(l.visual.tp, l.visual.fp, l.visual.fn);
    d["av_counts"] = py::make_tuple(l.av.tp, l.av.fp, l.av.fn);
    return d;
  };
  out["segment"] = level(r.segment);
  out["event"] = level(r.event);
  py::dict excl;
  auto opt = [](const std::optional<double>& v) {
    return v ? py::cast(*v) : py::cast<py::none>(py::none());
  };
  excl["single_f"] = opt(r.exclusivity.single_f);
  excl["multi_f"] = opt(r.exclusivity.multi_f);
  excl["audio_single_f"] = opt(r.exclusivity.audio_single_f);
  excl["visual_single_f"] = opt(r.exclusivity.visual_single_f);
  excl["audio_multi_f"] = opt(r.exclusivity.audio_multi_f);
  excl["visual_multi_f"] = opt(r.exclusivity.visual_multi_f);
  excl["n_single"] = r.exclusivity.n_single;
  excl["n_multi"] = r.exclusivity.n_multi;
  out["exclusivity"] = excl;
  out["num_videos"] = r.num_videos;
  out["theta"] = r.theta;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Messenger-guided mid-fusion transformer toolkit for weakly-supervised "
            "audio-visual video parsing";

  py::register_exception<ConfigError>(m, "ConfigurationError", PyExc_ValueError);
  py::register_exception<ArgumentError>(m, "InvalidArgumentError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FileFormatError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericFailure", PyExc_FloatingPointError);

  m.def("type_at_av", &type_at_av, py::arg("audio_f"), py::arg("visual_f"), py::arg("av_f"),
        "Arithmetic mean of the Audio / Visual / Audio-Visual F-scores.");

  m.def(
      "extract_events",
      [](const std::vector<uint8_t>& seq) {
        py::list out;
        for (const Span& s : extract_events(seq)) out.append(py::make_tuple(s.start, s.end));
        return out;
      },
      py::arg("sequence"), "Maximal runs of 1s as inclusive (start, end) spans.");

  m.def(
      "synth",
      [](const py::dict& config) {
        const RunConfig cfg = config_from_dict(config);
        if (cmd_synth(cfg) != 0) throw Error("synth failed");
      },
      py::arg("config"), "Generate a synthetic dataset directory (see config schema).");

  m.def(
      "train",
      [](const py::dict& config) {
        const RunConfig cfg = config_from_dict(config);
        if (cmd_train(cfg) != 0) throw Error("train failed");
      },
      py::arg("config"), "Run the three-stage training pipeline on a dataset directory.");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& dataset_dir, double theta) {
        const Checkpoint cp = load_checkpoint(checkpoint);
        const std::vector<VideoSample> data = read_dataset(dataset_dir);
        Evaluator ev(theta);
        for (const VideoSample& s : data) {
          if (!s.gt_audio || !s.gt_visual) {
            throw ArgumentError("evaluate: dataset lacks ground truth");
          }
          ev.add(forward_values(cp.params, cp.config, s.audio, s.visual), *s.gt_audio, *s.gt_visual);
        }
        return report_to_dict(ev.report());
      },
      py::arg("checkpoint"), py::arg("dataset_dir"), py::arg("theta") = 0.5,
      "Evaluate a checkpoint over a ground-truth dataset; returns the metric report.");

  m.def(
      "evaluate_parses",
      [](const std::vector<py::array_t<uint8_t, py::array::c_style | py::array::forcecast>>& pred_a,
         const std::vector<py::array_t<uint8_t, py::array::c_style | py::array::forcecast>>& pred_v,
         const std::vector<py::array_t<uint8_t, py::array::c_style | py::array::forcecast>>& gt_a,
         const std::vector<py::array_t<uint8_t, py::array::c_style | py::array::forcecast>>& gt_v) {
        if (pred_a.size() != pred_v.size() || pred_a.size() != gt_a.size() ||
            pred_a.size() != gt_v.size()) {
          throw ArgumentError("evaluate_parses: list lengths disagree");
        }
        Evaluator ev(0.5);
        for (size_t i = 0; i < pred_a.size(); ++i) {
          BinaryParse parse;
          parse.audio = binmat_from_numpy(pred_a[i]);
          parse.visual = binmat_from_numpy(pred_v[i]);
          parse.av = binmat_and(parse.audio, parse.visual);
          ev.add_parse(parse, binmat_from_numpy(gt_a[i]), binmat_from_numpy(gt_v[i]));
        }
        return report_to_dict(ev.report());
      },
      py::arg("pred_audio"), py::arg("pred_visual"), py::arg("gt_audio"), py::arg("gt_visual"),
      "Metric report from binary per-video parses (lists of [T,C] uint8 matrices).");

  m.def(
      "forward",
      [](const std::string& checkpoint, const py::array_t<double, py::array::c_style | py::array::forcecast>& audio,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& visual) {
        const Checkpoint cp = load_checkpoint(checkpoint);
        const PredictionSet p =
            forward_values(cp.params, cp.config, array_from_numpy(audio), array_from_numpy(visual));
        py::dict out;
        out["p_a"] = numpy_from_array(p.p_a);
        out["p_v"] = numpy_from_array(p.p_v);
        out["ptilde_a"] = numpy_from_array(p.ptilde_a);
        out["ptilde_v"] = numpy_from_array(p.ptilde_v);
        out["ptilde_video"] = numpy_from_array(p.ptilde_video);
        return out;
      },
      py::arg("checkpoint"), py::arg("audio"), py::arg("visual"),
      "Segment and video-level probabilities for one video's features.");

  m.def(
      "verify",
      [](int gradient_samples, int matching_instances, int invariant_draws, bool end_to_end) {
        VerifyOptions opts;
        opts.gradient_samples = gradient_samples;
        opts.matching_instances = matching_instances;
        opts.invariant_draws = invariant_draws;
        opts.end_to_end_gradient = end_to_end;
        py::list out;
        for (const CheckResult& r : run_verification_suite(opts)) {
          out.append(py::make_tuple(r.name, r.pass, r.detail));
        }
        return out;
      },
      py::arg("gradient_samples") = 100, py::arg("matching_instances") = 1000,
      py::arg("invariant_draws") = 1000, py::arg("end_to_end") = true,
      "Run the self-verification suite; returns (name, pass, detail) tuples.");

  m.attr("__version__") = "0.1.0";
}
