#pragma once
// Property testers built on the estimator sources: purity estimation,
// mixedness testing, Hilbert-Schmidt closeness (single-copy and t-copy
// sources), the batched two-observable tester operating directly on Schur
// blocks, and the bucketed certification tester for a known target state.

#include <functional>
#include <memory>

#include "qcertlab/estimators.hpp"

namespace qcertlab {

// ---------------------------------------------------------------------------
// Estimator sources: anything producing i.i.d. Hermitian estimates with known
// exact first and second moments.
// ---------------------------------------------------------------------------
struct EstimatorSource {
  int d = 0;
  int copies_per_sample = 0;
  Mat first_moment;
  Mat second_moment;  // E[est ox est] on (C^d)^{ox 2}
  std::function<Mat(RngStream&)> draw;
};

inline EstimatorSource make_ptsw_source(const Mat& rho, int t) {
  auto src = std::make_shared<PtswSource>(rho, t);
  EstimatorSource out;
  out.d = src->d();
  out.copies_per_sample = t;
  out.first_moment = src->first_moment();
  out.second_moment = src->second_moment();
  out.draw = [src](RngStream& rng) { return src->sample(rng); };
  return out;
}

// Raw uniform-POVM outcomes |psi><psi| (not debiased).
inline EstimatorSource make_uniform_raw_source(const Mat& rho) {
  auto sampler = std::make_shared<UniformPovmSampler>(rho);
  EstimatorSource out;
  out.d = sampler->d;
  out.copies_per_sample = 1;
  out.first_moment = uniform_first_moment(rho);
  out.second_moment = uniform_second_moment(rho);
  out.draw = [sampler](RngStream& rng) {
    const Vec psi = sampler->sample(rng);
    return (psi * psi.adjoint()).eval();
  };
  return out;
}

// A known state handled classically: every "estimate" is the state itself.
inline EstimatorSource make_deterministic_source(const Mat& m) {
  EstimatorSource out;
  out.d = static_cast<int>(m.rows());
  out.copies_per_sample = 0;
  out.first_moment = m;
  out.second_moment = kron(m, m);
  out.draw = [m](RngStream&) { return m; };
  return out;
}

// ---------------------------------------------------------------------------
// Collision statistics: X_bar = (1/C(n,2)) sum_{i<j} tr(M_i M_j), computed as
// (|sum M|_F^2 - sum |M_i|_F^2) / (n (n-1)) for Hermitian estimates.
// ---------------------------------------------------------------------------
inline double collision_statistic(const std::vector<Mat>& ests) {
  const auto n = static_cast<double>(ests.size());
  if (ests.size() < 2) throw InvalidParameter("collision_statistic: n >= 2");
  Mat sum = Mat::Zero(ests.front().rows(), ests.front().cols());
  double diag = 0.0;
  for (const Mat& m : ests) {
    sum += m;
    diag += m.squaredNorm();
  }
  return (sum.squaredNorm() - diag) / (n * (n - 1.0));
}

// Exact mean of X_bar for i.i.d. estimates with first moment e1.
inline double collision_mean_exact(const Mat& e1) {
  return (e1 * e1).trace().real();
}

// Exact variance of X_bar: the two-term law with overlapping-pair and
// same-pair contributions.
inline double collision_variance_exact(const Mat& e1, const Mat& e2, int n) {
  if (n < 2) throw InvalidParameter("collision_variance_exact: n >= 2");
  const double mu = collision_mean_exact(e1);
  const double cross = (e2 * kron(e1, e1)).trace().real();
  const double same = (e2 * e2).trace().real();
  const double pairs = binom(n, 2);
  return (6.0 * binom(n, 3) * (cross - mu * mu) +
          pairs * (same - mu * mu)) /
         (pairs * pairs);
}

// Moments of the difference estimate Delta_i = A_i - B_i for independent
// sources (used by the closeness testers).
inline std::pair<Mat, Mat> difference_moments(const EstimatorSource& a,
                                              const EstimatorSource& b) {
  const Mat e1 = a.first_moment - b.first_moment;
  const Mat e2 = a.second_moment + b.second_moment -
                 kron(a.first_moment, b.first_moment) -
                 kron(b.first_moment, a.first_moment);
  return {e1, e2};
}

inline double purity_xbar(const EstimatorSource& src, int n, RngStream& rng,
                          long long* copies = nullptr) {
  std::vector<Mat> ests;
  ests.reserve(n);
  for (int i = 0; i < n; ++i) ests.push_back(src.draw(rng));
  if (copies) *copies += static_cast<long long>(n) * src.copies_per_sample;
  return collision_statistic(ests);
}

inline double closeness_xbar(const EstimatorSource& a, const EstimatorSource& b,
                             int n, RngStream& rng,
                             long long* copies = nullptr) {
  std::vector<Mat> ests;
  ests.reserve(n);
  for (int i = 0; i < n; ++i) {
    ests.push_back((a.draw(rng) - b.draw(rng)).eval());
  }
  if (copies) {
    *copies += static_cast<long long>(n) *
               (a.copies_per_sample + b.copies_per_sample);
  }
  return collision_statistic(ests);
}

// One-sided variance bound for the raw uniform-POVM closeness statistic.
inline double uniform_collision_variance_bound(double tr_delta_sq, int n,
                                               int d) {
  const double dd = static_cast<double>(d);
  return 10.0 * (tr_delta_sq / (n * dd * dd * dd * dd) +
                 1.0 / (static_cast<double>(n) * n * dd * dd));
}

// ---------------------------------------------------------------------------
// Verdicts.
// ---------------------------------------------------------------------------
struct TesterVerdict {
  bool accept = false;
  double statistic = 0.0;
  double threshold = 0.0;
  long long copies_used = 0;
  int n_used = 0;
  int t_used = 0;
};

// ---------------------------------------------------------------------------
// Mixedness tester: X_bar - 1/d against (eps/sqrt(d))^2 / 2, with t silently
// clamped to d^2 and an odd number of majority-vote repetitions.
// ---------------------------------------------------------------------------
inline TesterVerdict mixedness_test(const Mat& rho, int t, double eps, int n,
                                    RngStream& rng, int reps = 1) {
  if (eps <= 0.0) throw InvalidParameter("mixedness_test: eps > 0");
  if (reps < 1 || reps % 2 == 0) {
    throw InvalidParameter("mixedness_test: reps must be odd and >= 1");
  }
  const int d = static_cast<int>(rho.rows());
  const int t_used = std::min(t, d * d);
  const double eps_hs = eps / std::sqrt(static_cast<double>(d));
  TesterVerdict v;
  v.threshold = eps_hs * eps_hs / 2.0;
  v.t_used = t_used;
  v.n_used = n;
  const EstimatorSource src = make_ptsw_source(rho, t_used);
  int votes = 0;
  std::vector<double> stats;
  for (int r = 0; r < reps; ++r) {
    const double stat = purity_xbar(src, n, rng, &v.copies_used) - 1.0 / d;
    stats.push_back(stat);
    if (stat < v.threshold) ++votes;
  }
  std::nth_element(stats.begin(), stats.begin() + stats.size() / 2,
                   stats.end());
  v.statistic = stats[stats.size() / 2];
  v.accept = votes > reps / 2;  // accept = "maximally mixed"
  return v;
}

// ---------------------------------------------------------------------------
// Closeness testers. Uniform-POVM variant uses raw outcomes, so the statistic
// estimates |rho - sigma|_2^2 / (d+1)^2; the t-copy variant debiases via the
// PTSW source and estimates |rho - sigma|_2^2 directly.
// ---------------------------------------------------------------------------
inline TesterVerdict closeness_test_uniform(const Mat& rho, const Mat& sigma,
                                            double eps, int n,
                                            RngStream& rng) {
  if (eps <= 0.0) throw InvalidParameter("closeness_test_uniform: eps > 0");
  const int d = static_cast<int>(rho.rows());
  if (sigma.rows() != d) throw ShapeError("closeness_test_uniform: dims");
  TesterVerdict v;
  v.threshold = eps * eps / (2.0 * (d + 1.0) * (d + 1.0));
  v.t_used = 1;
  v.n_used = n;
  const EstimatorSource a = make_uniform_raw_source(rho);
  const EstimatorSource b = make_uniform_raw_source(sigma);
  v.statistic = closeness_xbar(a, b, n, rng, &v.copies_used);
  v.accept = v.statistic < v.threshold;  // accept = "equal"
  return v;
}

inline TesterVerdict closeness_test_tcopy(const Mat& rho, const Mat& sigma,
                                          double eps, int t, int n,
                                          RngStream& rng) {
  if (eps <= 0.0) throw InvalidParameter("closeness_test_tcopy: eps > 0");
  const int d = static_cast<int>(rho.rows());
  if (sigma.rows() != d) throw ShapeError("closeness_test_tcopy: dims");
  const int t_used = std::min(t, d * d);
  TesterVerdict v;
  v.threshold = eps * eps / 2.0;
  v.t_used = t_used;
  v.n_used = n;
  const EstimatorSource a = make_ptsw_source(rho, t_used);
  const EstimatorSource b = make_ptsw_source(sigma, t_used);
  v.statistic = closeness_xbar(a, b, n, rng, &v.copies_used);
  v.accept = v.statistic < v.threshold;
  return v;
}

// Purity estimation: the statistic is the estimate itself.
inline TesterVerdict purity_protocol(const Mat& rho, int t, int n,
                                     RngStream& rng) {
  const int d = static_cast<int>(rho.rows());
  const int t_used = std::min(t, d * d);
  TesterVerdict v;
  v.t_used = t_used;
  v.n_used = n;
  v.threshold = 0.0;
  const EstimatorSource src = make_ptsw_source(rho, t_used);
  v.statistic = purity_xbar(src, n, rng, &v.copies_used);
  v.accept = true;
  return v;
}

// ---------------------------------------------------------------------------
// Swap-test primitive: a +-1 outcome with P[+1] = (1 + tr(rho sigma)) / 2.
// ---------------------------------------------------------------------------
inline int swap_test_sample(const Mat& rho, const Mat& sigma, RngStream& rng) {
  const double overlap = (rho * sigma).trace().real();
  return rng.uniform() < (1.0 + overlap) / 2.0 ? 1 : -1;
}

// ---------------------------------------------------------------------------
// Batched two-observable tester. Per batch (t copies each of rho and sigma)
// three commuting observables are measured jointly: a = sum of swaps inside
// the rho copies, b = the same inside the sigma copies, and x = the sum of
// swaps across the bipartition. On Schur blocks (lamA, lamB) the cross
// observable acts as I ox I ox Y with Y = sum_ab g_ab^{lamA} ox g_ba^{lamB}
// on the GL parts, and a, b collapse to the content sums c(lam). The batch
// statistic z = (a + b)/C(t,2) - 2x/t^2 is unbiased for |rho - sigma|_2^2.
// ---------------------------------------------------------------------------
struct BowPairDistribution {
  std::vector<double> values;  // distinct z contributions from eigenvalues
  std::vector<double> weights;
};

class BowDistribution {
 public:
  BowDistribution(const Mat& rho, const Mat& sigma, int t) {
    if (t < 2 || t % 2 != 0) {
      throw InvalidParameter("BowDistribution: t must be even and >= 2");
    }
    d_ = static_cast<int>(rho.rows());
    if (sigma.rows() != d_) throw ShapeError("BowDistribution: dims");
    t_ = t;
    const auto& blocks = gl_blocks(d_, t);
    const Mat rho_t = kron_pow(rho, t);
    const Mat sigma_t = kron_pow(sigma, t);
    p_a_ = gl_block_probabilities(rho_t, d_, t);
    p_b_ = gl_block_probabilities(sigma_t, d_, t);
    const std::size_t nb = blocks.size();
    std::vector<Mat> abar(nb), bbar(nb);
    for (std::size_t i = 0; i < nb; ++i) {
      const auto& blk = blocks[i];
      if (p_a_[i] > 1e-15) {
        abar[i] = (blk.isometry.adjoint() * rho_t * blk.isometry) *
                  (blk.sn_dim / p_a_[i]);
      }
      if (p_b_[i] > 1e-15) {
        bbar[i] = (blk.isometry.adjoint() * sigma_t * blk.isometry) *
                  (blk.sn_dim / p_b_[i]);
      }
    }
    contents_.resize(nb);
    for (std::size_t i = 0; i < nb; ++i) {
      contents_[i] = blocks[i].lam.content_sum();
    }
    pair_.resize(nb * nb);
    const double pairs_t = binom(t, 2);
    for (std::size_t i = 0; i < nb; ++i) {
      if (p_a_[i] <= 1e-15) continue;
      for (std::size_t j = 0; j < nb; ++j) {
        if (p_b_[j] <= 1e-15) continue;
        const int ma = blocks[i].gl_dim;
        const int mb = blocks[j].gl_dim;
        Mat y = Mat::Zero(ma * mb, ma * mb);
        for (int a = 0; a < d_; ++a) {
          for (int b = 0; b < d_; ++b) {
            y += kron(blocks[i].gen[static_cast<std::size_t>(a) * d_ + b],
                      blocks[j].gen[static_cast<std::size_t>(b) * d_ + a]);
          }
        }
        const auto [yvals, yvecs] = eigh(y);
        // Cross-swap sums have integer spectrum bounded by t^2.
        for (int k = 0; k < yvals.size(); ++k) {
          if (std::abs(yvals[k] - std::round(yvals[k])) > 1e-7 ||
              std::abs(yvals[k]) > t * t + 1e-7) {
            throw ConstructionError(
                "BowDistribution: cross observable spectrum is not the "
                "expected integer set");
          }
        }
        const Mat state = kron(abar[i], bbar[j]);
        const Mat rotated = yvecs.adjoint() * state * yvecs;
        BowPairDistribution pd;
        pd.values.resize(yvals.size());
        pd.weights.resize(yvals.size());
        double wsum = 0.0;
        for (int k = 0; k < yvals.size(); ++k) {
          pd.values[k] = (contents_[i] + contents_[j]) / pairs_t -
                         2.0 * yvals[k] / (static_cast<double>(t) * t);
          pd.weights[k] = std::max(0.0, rotated(k, k).real());
          wsum += pd.weights[k];
        }
        if (std::abs(wsum - 1.0) > 1e-8) {
          throw ConstructionError("BowDistribution: eigenweights sum to " +
                                  std::to_string(wsum));
        }
        for (double& w : pd.weights) w /= wsum;
        pair_[i * nb + j] = std::move(pd);
      }
    }
  }

  [[nodiscard]] int t() const { return t_; }

  double sample(RngStream& rng) const {
    const std::size_t i = rng.discrete(p_a_);
    const std::size_t j = rng.discrete(p_b_);
    const auto& pd = pair_[i * p_b_.size() + j];
    return pd.values[rng.discrete(pd.weights)];
  }

  [[nodiscard]] double exact_mean() const {
    double acc = 0.0;
    for (std::size_t i = 0; i < p_a_.size(); ++i) {
      if (p_a_[i] <= 1e-15) continue;
      for (std::size_t j = 0; j < p_b_.size(); ++j) {
        if (p_b_[j] <= 1e-15) continue;
        const auto& pd = pair_[i * p_b_.size() + j];
        for (std::size_t k = 0; k < pd.values.size(); ++k) {
          acc += p_a_[i] * p_b_[j] * pd.weights[k] * pd.values[k];
        }
      }
    }
    return acc;
  }

  [[nodiscard]] double exact_variance() const {
    const double mu = exact_mean();
    double acc = 0.0;
    for (std::size_t i = 0; i < p_a_.size(); ++i) {
      if (p_a_[i] <= 1e-15) continue;
      for (std::size_t j = 0; j < p_b_.size(); ++j) {
        if (p_b_[j] <= 1e-15) continue;
        const auto& pd = pair_[i * p_b_.size() + j];
        for (std::size_t k = 0; k < pd.values.size(); ++k) {
          const double dz = pd.values[k] - mu;
          acc += p_a_[i] * p_b_[j] * pd.weights[k] * dz * dz;
        }
      }
    }
    return acc;
  }

 private:
  int d_ = 0;
  int t_ = 0;
  std::vector<double> p_a_, p_b_;
  std::vector<double> contents_;
  std::vector<BowPairDistribution> pair_;
};

struct BowMoments {
  double mean = 0.0;
  double variance = 0.0;
};

// Closed-form per-batch moments in terms of polynomial invariants of rho and
// sigma.
inline BowMoments bow_moments_closed(const Mat& rho, const Mat& sigma, int t) {
  const double p2r = (rho * rho).trace().real();
  const double p3r = (rho * rho * rho).trace().real();
  const double p2s = (sigma * sigma).trace().real();
  const double p3s = (sigma * sigma * sigma).trace().real();
  const double c = (rho * sigma).trace().real();
  const double rrs = (rho * rho * sigma).trace().real();
  const double rss = (rho * sigma * sigma).trace().real();
  const double pairs = binom(t, 2);
  const double t2 = static_cast<double>(t) * t;
  const double var_a =
      pairs * (1.0 - p2r * p2r) + 6.0 * binom(t, 3) * (p3r - p2r * p2r);
  const double var_b =
      pairs * (1.0 - p2s * p2s) + 6.0 * binom(t, 3) * (p3s - p2s * p2s);
  const double var_x =
      t2 * (1.0 - c * c) + t2 * (t - 1.0) * (rss + rrs - 2.0 * c * c);
  const double cov_ax = t2 * (t - 1.0) * (rrs - p2r * c);
  const double cov_bx = t2 * (t - 1.0) * (rss - p2s * c);
  BowMoments out;
  out.mean = p2r + p2s - 2.0 * c;
  out.variance = (var_a + var_b) / (pairs * pairs) + 4.0 * var_x / (t2 * t2) -
                 4.0 * (cov_ax + cov_bx) / (pairs * t2);
  return out;
}

inline TesterVerdict bow_batched_test(const Mat& rho, const Mat& sigma,
                                      double eps, int t, int n_batches,
                                      RngStream& rng) {
  if (eps <= 0.0) throw InvalidParameter("bow_batched_test: eps > 0");
  const BowDistribution dist(rho, sigma, t);
  TesterVerdict v;
  v.threshold = 0.75 * eps * eps;
  v.t_used = t;
  v.n_used = n_batches;
  double acc = 0.0;
  std::vector<double> zs;
  zs.reserve(n_batches);
  for (int i = 0; i < n_batches; ++i) zs.push_back(dist.sample(rng));
  acc = pairwise_sum(zs);
  v.statistic = acc / n_batches;
  v.copies_used = 2LL * t * n_batches;
  v.accept = v.statistic < v.threshold;  // accept = "close"
  return v;
}

// ---------------------------------------------------------------------------
// Bucketed certification of a known target sigma against copies of rho.
// The plan splits sigma's spectrum into a small tail plus dyadic buckets
// S_j = {i : 2^{-j-1} < w_i <= 2^{-j}}; the tester pre-checks bucket masses
// of rho (within a factor of two of sigma's), then runs Hilbert-Schmidt
// sub-tests on every bucket and bucket pair with bucket-dependent radii.
// ---------------------------------------------------------------------------
struct Bucket {
  int label = 0;
  std::vector<int> indices;  // positions in the descending eigenvalue order
  int dim = 0;
  double mass = 0.0;
  Mat isometry;     // d x dim, columns are sigma eigenvectors
  Mat sigma_block;  // dim x dim, normalized
};

struct BucketPlan {
  int d = 0;
  double eps = 0.0;
  double tail_budget = 0.0;
  double tail_mass = 0.0;
  std::vector<int> tail_indices;
  Mat tail_isometry;  // d x |tail| (may be empty)
  std::vector<Bucket> buckets;
  RVec evals;  // descending
  Mat evecs;   // columns matching evals
};

inline BucketPlan bucket_plan(const Mat& sigma, double eps) {
  if (eps <= 0.0 || eps > 2.0) throw InvalidParameter("bucket_plan: eps");
  require_density(sigma, "bucket_plan", 1e-8, 1e-8, 1e-8);
  const int d = static_cast<int>(sigma.rows());
  auto [evals_asc, evecs_asc] = eigh(sigma);
  BucketPlan plan;
  plan.d = d;
  plan.eps = eps;
  plan.tail_budget = eps * eps / 20.0;
  plan.evals = RVec(d);
  plan.evecs = Mat(d, d);
  for (int i = 0; i < d; ++i) {  // flip to descending order
    plan.evals[i] = std::max(0.0, evals_asc[d - 1 - i]);
    plan.evecs.col(i) = evecs_asc.col(d - 1 - i);
  }
  // Greedy ascending tail: the maximal suffix with mass <= eps^2/20.
  double tail = 0.0;
  int first_tail = d;
  for (int i = d - 1; i >= 0; --i) {
    if (tail + plan.evals[i] <= plan.tail_budget) {
      tail += plan.evals[i];
      first_tail = i;
    } else {
      break;
    }
  }
  plan.tail_mass = tail;
  for (int i = first_tail; i < d; ++i) plan.tail_indices.push_back(i);
  if (!plan.tail_indices.empty()) {
    plan.tail_isometry = Mat(d, plan.tail_indices.size());
    for (std::size_t k = 0; k < plan.tail_indices.size(); ++k) {
      plan.tail_isometry.col(k) = plan.evecs.col(plan.tail_indices[k]);
    }
  }
  // Dyadic buckets by label j = floor(-log2(w)).
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < first_tail; ++i) {
    const int label =
        static_cast<int>(std::floor(-std::log2(plan.evals[i])));
    groups[label].push_back(i);
  }
  for (const auto& [label, idx] : groups) {
    Bucket b;
    b.label = label;
    b.indices = idx;
    b.dim = static_cast<int>(idx.size());
    b.isometry = Mat(d, b.dim);
    Mat blk = Mat::Zero(b.dim, b.dim);
    for (int k = 0; k < b.dim; ++k) {
      b.isometry.col(k) = plan.evecs.col(idx[k]);
      b.mass += plan.evals[idx[k]];
      blk(k, k) = plan.evals[idx[k]];
    }
    b.sigma_block = blk / b.mass;
    plan.buckets.push_back(std::move(b));
  }
  const double m_bound = 4.0 * std::log2(d / eps) + 4.0;
  if (static_cast<double>(plan.buckets.size()) > m_bound + 1e-9) {
    throw ConstructionError("bucket_plan: bucket count " +
                            std::to_string(plan.buckets.size()) +
                            " exceeds bound " + std::to_string(m_bound));
  }
  return plan;
}

// Sub-test radii. Diagonal: eps_j = c_diag eps / (d_j^{3/2} 2^{-j}).
// Off-diagonal with blocks ordered so d_j >= d_j' by dimension:
// eps_{jj'} = c_off eps / (sqrt(d_j') (d_j 2^{-j} + d_j' 2^{-j'})).
inline double certify_diag_radius(const Bucket& b, double eps, double c_diag) {
  return c_diag * eps /
         (std::pow(static_cast<double>(b.dim), 1.5) * std::pow(2.0, -b.label));
}

inline double certify_offdiag_radius(const Bucket& b1, const Bucket& b2,
                                     double eps, double c_off) {
  const Bucket& big = (b1.dim >= b2.dim) ? b1 : b2;
  const Bucket& small = (b1.dim >= b2.dim) ? b2 : b1;
  return c_off * eps /
         (std::sqrt(static_cast<double>(small.dim)) *
          (big.dim * std::pow(2.0, -big.label) +
           small.dim * std::pow(2.0, -small.label)));
}

struct CertifyConstants {
  double c_diag = 0.5;    // diagonal radius scale
  double c_off = 0.5;     // off-diagonal radius scale
  double c_sub = 4.0;     // sub-test group-size multiplier
  double c_pre = 8.0;     // mass pre-check sample multiplier
  double mom_factor = 2.0;  // median-of-means group-count multiplier
  double rejection_cap = 50.0;  // per-copy rejection attempts, in units of 1/q
};

struct CertifyVerdict {
  bool accept = false;
  bool tail_ok = true;
  bool mass_ok = true;
  bool pair_mass_ok = true;
  bool diag_ok = true;
  bool offdiag_ok = true;
  long long copies_used = 0;
  double worst_margin = 0.0;  // most adverse (statistic - threshold) seen
};

namespace detail {

inline long long geometric_copies(double q, double cap_units, RngStream& rng,
                                  bool* capped) {
  if (q >= 1.0) return 1;
  const auto cap = static_cast<long long>(
      std::ceil(cap_units / std::max(q, 1e-12)));
  const double u = std::max(rng.uniform(), 1e-300);
  auto g = static_cast<long long>(std::ceil(std::log(u) / std::log1p(-q)));
  if (g < 1) g = 1;
  if (g > cap) {
    *capped = true;
    return cap;
  }
  return g;
}

// Median-of-means Hilbert-Schmidt sub-test of the rho block against a known
// sigma block. Returns true when the block passes (median below threshold).
inline bool certify_subtest(const Mat& rho_block, double q_true,
                            const Mat& sigma_block, double radius, int t,
                            int groups, int n_group,
                            const CertifyConstants& cc, RngStream& rng,
                            long long* copies, double* margin) {
  const int dim = static_cast<int>(sigma_block.rows());
  if (dim == 1) {  // one-dimensional blocks are identical by normalization
    *margin = std::min(*margin, -radius * radius / 2.0);
    return true;
  }
  const int t_used = std::min(t, dim * dim);
  const EstimatorSource known = make_deterministic_source(sigma_block);
  const EstimatorSource unknown = make_ptsw_source(rho_block, t_used);
  std::vector<double> medians;
  bool capped = false;
  for (int g = 0; g < groups; ++g) {
    std::vector<Mat> ests;
    ests.reserve(n_group);
    for (int i = 0; i < n_group; ++i) {
      // Each conditioned copy costs a geometric number of raw copies.
      for (int copy = 0; copy < t_used; ++copy) {
        *copies += geometric_copies(q_true, cc.rejection_cap, rng, &capped);
      }
      if (capped) return false;
      ests.push_back((unknown.draw(rng) - known.draw(rng)).eval());
    }
    medians.push_back(collision_statistic(ests));
  }
  std::nth_element(medians.begin(), medians.begin() + medians.size() / 2,
                   medians.end());
  const double stat = medians[medians.size() / 2];
  const double threshold = radius * radius / 2.0;
  *margin = std::min(*margin, threshold - stat);
  return stat < threshold;
}

}  // namespace detail

inline CertifyVerdict certify_test(const Mat& rho, const Mat& sigma,
                                   double eps, double delta, int t,
                                   const CertifyConstants& cc,
                                   RngStream& rng) {
  if (delta <= 0.0 || delta >= 1.0) throw InvalidParameter("certify: delta");
  const BucketPlan plan = bucket_plan(sigma, eps);
  const auto m = static_cast<double>(plan.buckets.size());
  CertifyVerdict v;
  v.worst_margin = 1e300;
  if (plan.buckets.empty()) {
    throw ConstructionError("certify_test: no buckets survive the tail");
  }

  // ---- Mass pre-checks: one multinomial measurement in sigma's eigenbasis
  // projector family {buckets..., tail}.
  double q_min = 1.0;
  for (const auto& b : plan.buckets) q_min = std::min(q_min, b.mass);
  const int n_pre = static_cast<int>(std::ceil(
      cc.c_pre * std::log(std::max(12.0 * m * m, 12.0) / delta) / q_min));
  std::vector<double> probs;  // true rho masses per bucket, then tail, then rest
  for (const auto& b : plan.buckets) {
    probs.push_back(
        std::max(0.0, (b.isometry.adjoint() * rho * b.isometry).trace().real()));
  }
  double tail_prob = 0.0;
  if (!plan.tail_indices.empty()) {
    tail_prob = std::max(
        0.0,
        (plan.tail_isometry.adjoint() * rho * plan.tail_isometry).trace().real());
  }
  probs.push_back(tail_prob);
  std::vector<long long> counts(probs.size(), 0);
  for (int i = 0; i < n_pre; ++i) counts[rng.discrete(probs)] += 1;
  v.copies_used += n_pre;

  for (std::size_t j = 0; j < plan.buckets.size(); ++j) {
    const double qhat = static_cast<double>(counts[j]) / n_pre;
    const double q = plan.buckets[j].mass;
    if (qhat < q / 2.0 || qhat > 2.0 * q) v.mass_ok = false;
    for (std::size_t k = j + 1; k < plan.buckets.size(); ++k) {
      const double qhat2 =
          static_cast<double>(counts[j] + counts[k]) / n_pre;
      const double q2 = q + plan.buckets[k].mass;
      if (qhat2 < q2 / 2.0 || qhat2 > 2.0 * q2) v.pair_mass_ok = false;
    }
  }
  {
    const double qhat_tail =
        static_cast<double>(counts.back()) / n_pre;
    const double slack =
        std::sqrt(3.0 * std::log(3.0 / delta) *
                  std::max(plan.tail_budget, 1e-12) / n_pre) +
        3.0 * std::log(3.0 / delta) / n_pre;
    if (qhat_tail > 2.0 * plan.tail_budget + slack) v.tail_ok = false;
  }

  // ---- Hilbert-Schmidt sub-tests on buckets and bucket pairs.
  const auto mom_groups = [&](double conf_parts) {
    int g = static_cast<int>(
        std::ceil(cc.mom_factor * std::log(conf_parts / delta)));
    if (g < 1) g = 1;
    if (g % 2 == 0) ++g;
    return g;
  };
  const auto group_size = [&](int dim, int t_used, double radius) {
    const double e2 = radius * radius;
    const double mins = std::min(static_cast<double>(dim) * dim,
                                 static_cast<double>(t_used));
    const double tt = static_cast<double>(t_used);
    const double n = cc.c_sub * (16.0 / (tt * e2) +
                                 4.0 * dim * std::sqrt(mins) / (tt * tt * e2) +
                                 4.0 * std::sqrt(static_cast<double>(dim)) /
                                     (tt * e2));
    return std::max(2, static_cast<int>(std::ceil(n)));
  };

  for (const auto& b : plan.buckets) {
    if (!v.mass_ok) break;  // masses already falsify; skip expensive work
    const double radius = certify_diag_radius(b, eps, cc.c_diag);
    const double q_true = std::max(
        0.0, (b.isometry.adjoint() * rho * b.isometry).trace().real());
    Mat rho_block = b.isometry.adjoint() * rho * b.isometry;
    const double tr = rho_block.trace().real();
    if (tr <= 1e-12) {
      v.diag_ok = false;
      break;
    }
    rho_block = ((rho_block + rho_block.adjoint()) / (2.0 * tr)).eval();
    const int t_used = std::min(t, b.dim * b.dim);
    const int groups = mom_groups(6.0 * m);
    const int n_group = group_size(b.dim, t_used, radius);
    if (!detail::certify_subtest(rho_block, q_true, b.sigma_block, radius, t,
                                 groups, n_group, cc, rng, &v.copies_used,
                                 &v.worst_margin)) {
      v.diag_ok = false;
    }
  }

  for (std::size_t j = 0; v.mass_ok && v.diag_ok && j < plan.buckets.size();
       ++j) {
    for (std::size_t k = j + 1; k < plan.buckets.size(); ++k) {
      const Bucket& b1 = plan.buckets[j];
      const Bucket& b2 = plan.buckets[k];
      const double radius = certify_offdiag_radius(b1, b2, eps, cc.c_off);
      const int dim = b1.dim + b2.dim;
      Mat iso(plan.d, dim);
      iso.leftCols(b1.dim) = b1.isometry;
      iso.rightCols(b2.dim) = b2.isometry;
      const double q_sigma = b1.mass + b2.mass;
      Mat sigma_block = Mat::Zero(dim, dim);
      for (int a = 0; a < b1.dim; ++a) {
        sigma_block(a, a) = plan.evals[b1.indices[a]] / q_sigma;
      }
      for (int a = 0; a < b2.dim; ++a) {
        sigma_block(b1.dim + a, b1.dim + a) =
            plan.evals[b2.indices[a]] / q_sigma;
      }
      Mat rho_block = iso.adjoint() * rho * iso;
      const double q_true = std::max(0.0, rho_block.trace().real());
      if (q_true <= 1e-12) {
        v.offdiag_ok = false;
        break;
      }
      rho_block = ((rho_block + rho_block.adjoint()) / (2.0 * q_true)).eval();
      const int t_used = std::min(t, dim * dim);
      const int groups = mom_groups(6.0 * m * m);
      const int n_group = group_size(dim, t_used, radius);
      if (!detail::certify_subtest(rho_block, q_true, sigma_block, radius, t,
                                   groups, n_group, cc, rng, &v.copies_used,
                                   &v.worst_margin)) {
        v.offdiag_ok = false;
        break;
      }
    }
  }

  v.accept = v.tail_ok && v.mass_ok && v.pair_mass_ok && v.diag_ok &&
             v.offdiag_ok;
  return v;
}

}  // namespace qcertlab
