#pragma once

#include <string>
#include <vector>

#include "avvp/metrics.hpp"
#include "avvp/model.hpp"

namespace avvp {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct VerifyOptions {
  int gradient_samples = 100;    // random tensors per primitive
  int matching_instances = 1000; // event-matching oracle cases
  int invariant_draws = 1000;    // randomized battery size
  bool end_to_end_gradient = true;
  uint64_t seed = 20240501;
  std::string tmp_dir;  // defaults to a fresh directory under the system tmp
};

/// Finite-difference battery over every primitive op.
std::vector<CheckResult> run_gradient_battery(const VerifyOptions& opts);

/// End-to-end gradient of the total training loss (classification plus the
/// cross-audio consistency term through a second forward pass) on a tiny
/// configuration, checked element-by-element against central differences.
CheckResult run_end_to_end_gradient_check(uint64_t seed, double h = 1e-5, double tol = 1e-4);

/// Maximum bipartite matching versus brute-force enumeration.
CheckResult run_matching_oracle(int instances, uint64_t seed);

/// Brute-force maximum one-to-one matching under the IoU threshold
/// (enumeration over injective assignments; independent of the production
/// matcher).
int64_t brute_force_matching(const std::vector<Span>& pred, const std::vector<Span>& gt,
                             double iou_thresh);

/// File-format round trips and negative cases.
std::vector<CheckResult> run_format_checks(const std::string& tmp_dir, int randomized_cases,
                                           uint64_t seed);

/// Bit-exactness of repeated forwards and a short repeated training run.
std::vector<CheckResult> run_determinism_checks(uint64_t seed);

/// Randomized invariants: attention row sums, messenger range, prediction
/// convexity, pseudo-label union, classifier column equivariance.
std::vector<CheckResult> run_invariant_batteries(int draws, uint64_t seed);

/// The whole suite in the order the verify command reports it.
std::vector<CheckResult> run_verification_suite(const VerifyOptions& opts = {});

}  // namespace avvp
