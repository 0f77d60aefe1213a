#include "avvp/rng.hpp"

#include <cmath>
#include <cstring>
#include <locale>
#include <sstream>

#include "avvp/error.hpp"

namespace avvp {

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (hi < lo) throw ArgumentError("uniform_int: empty range");
  uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<int64_t>(next_u64());  // full 64-bit range
  uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return lo + static_cast<int64_t>(x % range);
}

double Rng::normal(double mean, double sigma) {
  if (have_spare_) {
    have_spare_ = false;
    return mean + sigma * spare_;
  }
  // Box-Muller; u clamped away from 0 so log stays finite
  double u = uniform();
  if (u < 0x1.0p-60) u = 0x1.0p-60;
  double v = uniform();
  double r = std::sqrt(-2.0 * std::log(u));
  double theta = 2.0 * M_PI * v;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return mean + sigma * r * std::cos(theta);
}

int64_t Rng::poisson(double lambda) {
  if (lambda < 0) throw ArgumentError("poisson: negative rate");
  if (lambda == 0) return 0;
  double limit = std::exp(-lambda);
  int64_t k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= uniform();
  } while (p > limit);
  return k - 1;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  uint64_t spare_bits;
  std::memcpy(&spare_bits, &spare_, sizeof spare_bits);
  os << gen_ << " " << (have_spare_ ? 1 : 0) << " " << spare_bits;
  return os.str();
}

Rng Rng::deserialize(const std::string& s) {
  Rng r;
  std::istringstream is(s);
  is.imbue(std::locale::classic());
  int spare_flag = 0;
  uint64_t spare_bits = 0;
  is >> r.gen_ >> spare_flag >> spare_bits;
  if (is.fail()) throw FormatError("rng state: unparsable serialization");
  r.have_spare_ = spare_flag != 0;
  std::memcpy(&r.spare_, &spare_bits, sizeof r.spare_);
  return r;
}

bool Rng::operator==(const Rng& other) const {
  return gen_ == other.gen_ && have_spare_ == other.have_spare_ && spare_ == other.spare_;
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL + (b << 1 | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace avvp
