#pragma once
// Shared infrastructure for the qcertlab testbed: scalar/matrix aliases,
// the error taxonomy with process exit codes, dimension caps, deterministic
// RNG streams, and small numeric helpers (pairwise summation, sample stats).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qcertlab {

using cx = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

// Tolerances used by validating constructors and internal consistency checks.
inline constexpr double kHermTol = 1e-10;   // Hermiticity: max |M - M^dag|
inline constexpr double kTraceTol = 1e-10;  // unit trace deviation
inline constexpr double kPsdTol = 1e-10;    // allowed negative eigenvalue dip
inline constexpr double kEigClamp = 1e-12;  // clamp before fractional powers

// ---------------------------------------------------------------------------
// Error taxonomy. Process exit codes: 0 = pass, 1 = invariant/test failure,
// 2 = resource limit exceeded, 3 = configuration error.
// ---------------------------------------------------------------------------
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code)
      : std::runtime_error(what), exit_code_(exit_code) {}
  [[nodiscard]] int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

struct InvalidParameter : Error {
  explicit InvalidParameter(const std::string& w)
      : Error("invalid-parameter: " + w, 3) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error("shape-error: " + w, 3) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config-error: " + w, 3) {}
};
struct ResourceLimit : Error {
  explicit ResourceLimit(const std::string& w)
      : Error("resource-limit: " + w, 2) {}
};
struct PreconditionError : Error {
  explicit PreconditionError(const std::string& w)
      : Error("precondition-error: " + w, 1) {}
};
struct ConstructionError : Error {
  explicit ConstructionError(const std::string& w)
      : Error("construction-error: " + w, 1) {}
};
struct CalibrationFailure : Error {
  explicit CalibrationFailure(const std::string& w)
      : Error("calibration-failure: " + w, 1) {}
};
struct UnreachableBranch : Error {
  explicit UnreachableBranch(const std::string& w)
      : Error("unreachable-branch: " + w, 1) {}
};

// ---------------------------------------------------------------------------
// Dimension caps. The default cap of 1024 on any materialized tensor-power
// dimension (and 4x that for the moment oracle's extended register count)
// can be overridden with the QCERTLAB_DIM_CAP environment variable.
// ---------------------------------------------------------------------------
inline std::size_t dim_cap() {
  static const std::size_t cap = []() -> std::size_t {
    if (const char* s = std::getenv("QCERTLAB_DIM_CAP")) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(s, &end, 10);
      if (end == s || *end != '\0' || v == 0) {
        throw ConfigError("QCERTLAB_DIM_CAP must be a positive integer, got '" +
                          std::string(s) + "'");
      }
      return static_cast<std::size_t>(v);
    }
    return 1024;
  }();
  return cap;
}

inline std::size_t oracle_dim_cap() { return 4 * dim_cap(); }

// Computes base^exp, throwing resource-limit if the result would exceed cap.
inline std::size_t checked_pow(std::size_t base, int exp, std::size_t cap,
                               const std::string& what) {
  if (base == 0) throw InvalidParameter(what + ": zero base dimension");
  std::size_t v = 1;
  for (int i = 0; i < exp; ++i) {
    if (base != 0 && v > cap / base) {
      throw ResourceLimit(what + ": " + std::to_string(base) + "^" +
                          std::to_string(exp) + " exceeds cap " +
                          std::to_string(cap));
    }
    v *= base;
  }
  if (v > cap) {
    throw ResourceLimit(what + ": " + std::to_string(v) + " exceeds cap " +
                        std::to_string(cap));
  }
  return v;
}

// ---------------------------------------------------------------------------
// Deterministic RNG streams. A stream is keyed by (master seed, stream index,
// label); the key is whitened with splitmix64 rounds into an mt19937_64 seed,
// so sibling streams are statistically independent and reproducible.
// ---------------------------------------------------------------------------
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::string_view label) {
  std::uint64_t state = master;
  (void)splitmix64(state);
  state ^= 0xd1b54a32d192ed03ULL * (stream + 1);
  (void)splitmix64(state);
  state ^= fnv1a64(label);
  return splitmix64(state);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : eng_(seed) {}
  RngStream(std::uint64_t master, std::uint64_t stream, std::string_view label)
      : eng_(derive_seed(master, stream, label)) {}

  double uniform() { return unif_(eng_); }
  double normal() { return norm_(eng_); }
  double gamma(double shape) {
    std::gamma_distribution<double> g(shape, 1.0);
    return g(eng_);
  }
  // Beta(a, b) via the two-gamma construction.
  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }
  std::uint64_t integer(std::uint64_t n) {  // uniform on {0, ..., n-1}
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(eng_);
  }
  // Samples an index proportionally to non-negative weights (need not be
  // normalized). Tiny negative weights from roundoff are clamped to zero.
  std::size_t discrete(std::span<const double> weights) {
    double total = 0.0;
    for (const double w : weights) total += std::max(w, 0.0);
    if (!(total > 0.0)) {
      throw InvalidParameter("discrete(): weights sum to zero");
    }
    double u = uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      u -= std::max(weights[i], 0.0);
      if (u <= 0.0) return i;
    }
    return weights.size() - 1;  // guard against roundoff spill
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  std::normal_distribution<double> norm_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Numeric helpers.
// ---------------------------------------------------------------------------

// Pairwise (cascade) summation: deterministic given the input order and
// accurate to O(log n) rounding growth.
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0.0;
    for (const double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.subspan(0, half)) + pairwise_sum(xs.subspan(half));
}

inline double pairwise_mean(std::span<const double> xs) {
  if (xs.empty()) throw InvalidParameter("pairwise_mean(): empty sample");
  return pairwise_sum(xs) / static_cast<double>(xs.size());
}

// Batch of scalar samples with exact (two-pass) moment computation, plus the
// standard error of the sample variance used by the variance-match checks.
struct SampleStats {
  std::vector<double> xs;

  void push(double x) { xs.push_back(x); }
  [[nodiscard]] std::size_t count() const { return xs.size(); }

  [[nodiscard]] double mean() const { return pairwise_mean(xs); }

  [[nodiscard]] double central_moment(int k) const {
    const double m = mean();
    std::vector<double> pw(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      pw[i] = std::pow(xs[i] - m, k);
    }
    return pairwise_mean(pw);
  }

  // Unbiased sample variance.
  [[nodiscard]] double variance() const {
    const auto n = static_cast<double>(xs.size());
    if (xs.size() < 2) throw InvalidParameter("variance(): need >= 2 samples");
    return central_moment(2) * n / (n - 1.0);
  }

  [[nodiscard]] double mean_stderr() const {
    return std::sqrt(variance() / static_cast<double>(xs.size()));
  }

  // Standard error of the unbiased sample variance, using the standard
  // fourth-moment formula  Var[S^2] ~ (m4 - m2^2 (n-3)/(n-1)) / n.
  [[nodiscard]] double variance_stderr() const {
    const auto n = static_cast<double>(xs.size());
    const double m2 = central_moment(2);
    const double m4 = central_moment(4);
    const double v = (m4 - m2 * m2 * (n - 3.0) / (n - 1.0)) / n;
    return std::sqrt(std::max(v, 0.0));
  }
};

// Binomial coefficient as double (exact for the small arguments used here).
inline double binom(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double v = 1.0;
  for (int i = 0; i < k; ++i) {
    v = v * static_cast<double>(n - i) / static_cast<double>(i + 1);
  }
  return std::round(v);  // products of small integers: exact in double
}

inline double factorial(int n) {
  double v = 1.0;
  for (int i = 2; i <= n; ++i) v *= i;
  return v;
}

// Dimension of the symmetric subspace of n copies of C^D: C(D+n-1, n).
inline double sym_dim(int D, int n) { return binom(D + n - 1, n); }

}  // namespace qcertlab
