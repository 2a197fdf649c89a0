#pragma once
// Single-copy and collective-copy estimators: the uniform (covariant) POVM,
// the symmetric-subspace (Hayashi) POVM with its debiased pure-state
// estimator, closed-form outcome moments, the sum-of-squares cone test used
// to certify the truncated second-moment bound, the purification channel,
// and the partial-trace Schur-Weyl (PTSW) tomography source.

#include <optional>

#include "qcertlab/schurweyl.hpp"

namespace qcertlab {

// ---------------------------------------------------------------------------
// Uniform POVM {d |psi><psi| dpsi}: exact two-stage sampler. Conditioned on
// the outcome direction being graded against eigenvector v_i (chosen with
// probability p_i), the squared overlap is Beta(2, d-1)-distributed, the
// overlap phase is uniform, and the orthogonal remainder is Haar.
// ---------------------------------------------------------------------------
struct UniformPovmSampler {
  int d = 0;
  RVec probs;
  Mat vecs;  // columns are eigenvectors

  explicit UniformPovmSampler(const Mat& rho) {
    require_density(rho, "UniformPovmSampler", 1e-8, 1e-8, 1e-8);
    d = static_cast<int>(rho.rows());
    auto [evals, evecs] = eigh(rho);
    probs = evals.cwiseMax(0.0);
    probs /= probs.sum();
    vecs = evecs;
  }

  Vec sample(RngStream& rng) const {
    if (d == 1) return Vec::Ones(1);
    std::vector<double> p(probs.data(), probs.data() + d);
    const auto i = static_cast<int>(rng.discrete(p));
    const double beta = rng.beta(2.0, d - 1.0);
    const double theta = 2.0 * M_PI * rng.uniform();
    // Haar direction in the orthogonal complement of v_i.
    Vec g = gaussian_vector(d, rng);
    const Vec vi = vecs.col(i);
    g -= vi * (vi.adjoint() * g);
    const double gn = g.norm();
    Vec rest = (gn > 1e-300) ? Vec((g / gn).eval()) : Vec(Vec::Zero(d));
    Vec psi = std::sqrt(beta) * cx(std::cos(theta), std::sin(theta)) * vi +
              std::sqrt(std::max(0.0, 1.0 - beta)) * rest;
    psi /= psi.norm();
    return psi;
  }
};

inline Vec uniform_povm_sample(const Mat& rho, RngStream& rng) {
  return UniformPovmSampler(rho).sample(rng);
}

// Raw outcome moments of the uniform POVM applied to rho.
inline Mat uniform_first_moment(const Mat& rho) {
  const int d = static_cast<int>(rho.rows());
  return ((rho + identity(d)) / (d + 1.0)).eval();
}

inline Mat uniform_second_moment(const Mat& rho) {
  const int d = static_cast<int>(rho.rows());
  const Mat eye = identity(d);
  const Mat sw = permutation_operator(d, {1, 0});
  const Mat lift = kron(rho, eye) + kron(eye, rho);
  return ((identity(d * d) + sw + lift * (identity(d * d) + sw)) /
          ((d + 1.0) * (d + 2.0)))
      .eval();
}

// ---------------------------------------------------------------------------
// Symmetric-subspace POVM moments. For a state Psi supported on the
// symmetric subspace of (C^D)^{ox n} with single-copy marginal tau1 and
// two-copy marginal tau12, the POVM {d[n] |psi^n><psi^n| dpsi} outcome
// moments are closed-form in tau1 and tau12.
// ---------------------------------------------------------------------------
inline Mat hayashi_first_moment(const Mat& tau1, int D, int n) {
  return (identity(D) / (D + n) +
          (static_cast<double>(n) / (D + n)) * tau1)
      .eval();
}

inline Mat hayashi_second_moment(const Mat& tau1, const Mat& tau12, int D,
                                 int n) {
  const Mat eye2 = identity(D * D);
  const Mat sw = permutation_operator(D, {1, 0});
  const Mat lift = kron(tau1, identity(D)) + kron(identity(D), tau1);
  Mat out = eye2 + sw + static_cast<double>(n) * lift * (eye2 + sw);
  if (n > 1) out += static_cast<double>(n) * (n - 1.0) * tau12;
  return (out / ((D + n) * (D + n + 1.0))).eval();
}

// Debiased pure-state estimator from a symmetric-subspace POVM outcome:
// sigma_hat = ((D+n)/n)|psi><psi| - I/n, unbiased for tau1.
inline Mat gps_estimate(const Vec& psi, int D, int n) {
  if (psi.size() != D) throw ShapeError("gps_estimate: outcome has wrong dim");
  return ((static_cast<double>(D + n) / n) * (psi * psi.adjoint()) -
          identity(D) / static_cast<double>(n))
      .eval();
}

// Exact second moment E[sigma_hat ox sigma_hat] of the debiased estimator.
inline Mat gps_second_moment(const Mat& tau1, const Mat& tau12, int D, int n) {
  const double q = static_cast<double>(D + n) / (D + n + 1.0);
  const Mat eye = identity(D);
  const Mat eye2 = identity(D * D);
  const Mat sw = permutation_operator(D, {1, 0});
  const Mat lift = kron(tau1, eye) + kron(eye, tau1);
  Mat out = (q / n) * lift * sw - lift / (n * (D + n + 1.0)) +
            (q / (static_cast<double>(n) * n)) * sw -
            eye2 / (static_cast<double>(n) * n * (D + n + 1.0));
  if (n > 1) out += ((n - 1.0) / n) * q * tau12;
  return out.eval();
}

// Truncated (dominating) form of the second moment: the three leading terms
// with their 1/(D+n+1) corrections dropped. The difference
// truncated - exact lies in the sum-of-squares cone.
inline Mat gps_second_moment_truncated(const Mat& tau1, const Mat& tau12,
                                       int D, int n) {
  const Mat sw = permutation_operator(D, {1, 0});
  const Mat lift = kron(tau1, identity(D)) + kron(identity(D), tau1);
  Mat out = (1.0 / n) * lift * sw + sw / (static_cast<double>(n) * n);
  if (n > 1) out += ((n - 1.0) / n) * tau12;
  return out.eval();
}

// ---------------------------------------------------------------------------
// Sum-of-squares cone on (C^d)^{ox 2}: SoS(d) = {sum_i c_i X_i ox X_i :
// c_i >= 0, X_i Hermitian}. Membership is equivalent to three conditions on
// the realignment R[(i,k),(l,j)] = L[(i,j),(k,l)], which maps X ox X to
// rvec(X) rvec(X)^dag: R Hermitian, R PSD, and conj(R) = S R S for the
// index-swap permutation S.
// ---------------------------------------------------------------------------
struct SosReport {
  double herm_defect = 0.0;
  double min_eigenvalue = 0.0;
  double conj_symmetry_defect = 0.0;
  [[nodiscard]] bool ok(double tol) const {
    return herm_defect <= tol && min_eigenvalue >= -tol &&
           conj_symmetry_defect <= tol;
  }
};

inline Mat sos_realignment(const Mat& l, int d) {
  if (l.rows() != d * d || l.cols() != d * d) {
    throw ShapeError("sos_realignment: operator must be d^2 x d^2");
  }
  Mat r(d * d, d * d);
  for (int i = 0; i < d; ++i) {
    for (int k = 0; k < d; ++k) {
      for (int ll = 0; ll < d; ++ll) {
        for (int j = 0; j < d; ++j) {
          r(i * d + k, ll * d + j) = l(i * d + j, k * d + ll);
        }
      }
    }
  }
  return r;
}

inline SosReport sos_report(const Mat& l, int d) {
  const Mat r = sos_realignment(l, d);
  SosReport rep;
  rep.herm_defect = (r - r.adjoint()).cwiseAbs().maxCoeff();
  const Mat herm = ((r + r.adjoint()) / 2.0).eval();
  Eigen::SelfAdjointEigenSolver<Mat> solver(herm, Eigen::EigenvaluesOnly);
  rep.min_eigenvalue = solver.eigenvalues().minCoeff();
  double sym = 0.0;
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b < d; ++b) {
      for (int c = 0; c < d; ++c) {
        for (int e = 0; e < d; ++e) {
          sym = std::max(sym, std::abs(std::conj(r(a * d + b, c * d + e)) -
                                       r(b * d + a, e * d + c)));
        }
      }
    }
  }
  rep.conj_symmetry_defect = sym;
  return rep;
}

inline bool in_sos_cone(const Mat& l, int d, double tol = 1e-9) {
  return sos_report(l, d).ok(tol);
}

// ---------------------------------------------------------------------------
// Rejection sampler for the symmetric-subspace POVM: outcome density against
// the Haar measure is d[n] <psi^n| tau |psi^n>, enveloped by
// d[n] lambda_max(tau).
// ---------------------------------------------------------------------------
struct HayashiSampler {
  int D = 0;
  int n = 0;
  Mat tau;
  double lam_max = 0.0;
  mutable long long attempts = 0;
  mutable long long accepts = 0;

  HayashiSampler() = default;
  HayashiSampler(Mat tau_in, int D_in, int n_in)
      : D(D_in), n(n_in), tau(std::move(tau_in)) {
    const std::size_t dim = checked_pow(static_cast<std::size_t>(D), n,
                                        dim_cap(), "HayashiSampler");
    if (static_cast<std::size_t>(tau.rows()) != dim) {
      throw ShapeError("HayashiSampler: tau must be D^n x D^n");
    }
    Eigen::SelfAdjointEigenSolver<Mat> solver(tau, Eigen::EigenvaluesOnly);
    lam_max = solver.eigenvalues().maxCoeff();
    if (lam_max <= 0.0) {
      throw PreconditionError("HayashiSampler: tau has no positive spectrum");
    }
    // Guaranteed acceptance probability 1 / (d[n] lambda_max).
    if (1.0 / (sym_dim(D, n) * lam_max) < 1e-4) {
      throw PreconditionError(
          "HayashiSampler: guaranteed acceptance below 1e-4");
    }
  }

  Vec sample(RngStream& rng) const {
    for (long long guard = 0; guard < 100000000LL; ++guard) {
      ++attempts;
      const Vec psi = haar_state(D, rng);
      const Vec psin = kron_vec_pow(psi, n);
      const double val =
          std::max(0.0, (psin.adjoint() * (tau * psin)).value().real());
      if (rng.uniform() * lam_max < val) {
        ++accepts;
        return psi;
      }
    }
    throw ConstructionError("HayashiSampler: rejection loop did not terminate");
  }

  [[nodiscard]] double acceptance_rate() const {
    return attempts == 0 ? 0.0
                         : static_cast<double>(accepts) /
                               static_cast<double>(attempts);
  }
};

// ---------------------------------------------------------------------------
// Purification channel Phi^{d,r} on n copies. For X on (C^d)^{ox n},
//   Phi(X) = sum_{mu |- n} (r^n dim_mu / m_mu(r)) Pi_sym^{(dr,n)}
//            reorder(P_mu X P_mu ox (I_r/r)^{ox n}) Pi_sym^{(dr,n)},
// where P_mu is the S_n-isotypic projector on (C^d)^{ox n}, m_mu(r) the Weyl
// dimension, and reorder interleaves (A_1..A_n, B_1..B_n) into
// ((A_1 B_1)..(A_n B_n)). On product inputs rho'^{ox n} with rank(rho') <= r
// this equals the Haar average of |purification><purification|^{ox n}.
// ---------------------------------------------------------------------------
inline std::vector<int> interleave_order(int n) {
  std::vector<int> order(2 * n);
  for (int i = 0; i < n; ++i) {
    order[2 * i] = i;
    order[2 * i + 1] = n + i;
  }
  return order;
}

// Single-block form: for X supported on the lam-isotypic block (a weak Schur
// conditional), with r = length(lam) and t = |lam|.
inline Mat purification_block(const Mat& cond, const Partition& lam, int d) {
  const int t = lam.sum();
  const int r = lam.length();
  const double m_r = weyl_dim(lam, r);
  if (m_r <= 0.0) {
    throw ConstructionError("purification_block: vanishing Weyl dimension");
  }
  const double scale = std::pow(r, t) * irrep_dimension(lam) / m_r;
  const std::size_t rdim =
      checked_pow(static_cast<std::size_t>(r), t, dim_cap(), "purification r^t");
  Mat y = kron(cond, (identity(rdim) / static_cast<double>(rdim)).eval());
  std::vector<int> dims(2 * t, d);
  for (int i = 0; i < t; ++i) dims[t + i] = r;
  y = permute_registers(y, dims, interleave_order(t));
  const Mat pi = symmetric_projector(d * r, t);
  Mat tau = scale * (pi * y * pi);
  tau = ((tau + tau.adjoint()) / 2.0).eval();
  const double tr = tau.trace().real();
  if (std::abs(tr - 1.0) > 1e-6) {
    throw ConstructionError("purification_block: output trace " +
                            std::to_string(tr) + " deviates from 1");
  }
  return tau;
}

struct McAverage {
  Mat mean;
  RMat stderr_entry;  // entrywise standard error of the complex mean
};

// Monte Carlo oracle: average of |purification><purification|^{ox n} over
// Haar unitaries on the rank-r purifying register, with registers interleaved
// per copy to match the channel output convention.
inline McAverage mc_purification_average(const Mat& rho_prime, int r, int n,
                                         int n_samples, RngStream& rng) {
  require_density(rho_prime, "mc_purification_average", 1e-8, 1e-8, 1e-8);
  const int d = static_cast<int>(rho_prime.rows());
  auto [evals, evecs] = eigh(rho_prime);
  std::vector<int> support;
  for (int i = 0; i < evals.size(); ++i) {
    if (evals[i] > 1e-12) support.push_back(i);
  }
  if (static_cast<int>(support.size()) > r) {
    throw InvalidParameter("mc_purification_average: rank exceeds r");
  }
  const std::size_t dim = checked_pow(static_cast<std::size_t>(d * r), n,
                                      dim_cap(), "mc_purification_average");
  Mat acc = Mat::Zero(dim, dim);
  RMat acc_sq = RMat::Zero(dim, dim);
  for (int s = 0; s < n_samples; ++s) {
    const Mat u = haar_unitary(r, rng);
    Vec phi = Vec::Zero(static_cast<std::size_t>(d) * r);
    for (std::size_t j = 0; j < support.size(); ++j) {
      phi += std::sqrt(evals[support[j]]) *
             kron_vec(evecs.col(support[j]), u.col(j));
    }
    const Vec phin = kron_vec_pow(phi, n);
    const Mat outer = phin * phin.adjoint();
    acc += outer;
    acc_sq += outer.cwiseAbs2();
  }
  McAverage out;
  out.mean = acc / n_samples;
  const RMat var =
      (acc_sq / n_samples - out.mean.cwiseAbs2()).cwiseMax(0.0) / n_samples;
  out.stderr_entry = var.cwiseSqrt();
  return out;
}

struct PurificationChannel {
  int d = 0;
  int r = 0;

  Mat apply(const Mat& x, int n) const {
    if (x.rows() != x.cols()) throw ShapeError("PurificationChannel: square");
    const std::size_t din = checked_pow(static_cast<std::size_t>(d), n,
                                        dim_cap(), "purification input");
    if (static_cast<std::size_t>(x.rows()) != din) {
      throw ShapeError("PurificationChannel: input must be d^n x d^n");
    }
    const std::size_t dout = checked_pow(static_cast<std::size_t>(d) * r, n,
                                         dim_cap(), "purification output");
    const std::size_t rdim = checked_pow(static_cast<std::size_t>(r), n,
                                         dim_cap(), "purification r^n");
    const Mat pi_out = symmetric_projector(d * r, n);
    std::vector<int> dims(2 * n, d);
    for (int i = 0; i < n; ++i) dims[n + i] = r;
    const auto order = interleave_order(n);
    Mat out = Mat::Zero(dout, dout);
    const double in_norm = std::max(1.0, x.cwiseAbs().maxCoeff());
    for (const auto& [lam, proj] : isotypic_projectors(d, n)) {
      const Mat block = proj * x * proj;
      const double mass = block.cwiseAbs().maxCoeff();
      if (lam.length() > r) {
        if (mass > 1e-8 * in_norm) {
          throw PreconditionError(
              "PurificationChannel: input supported on partitions taller "
              "than the purifying rank");
        }
        continue;
      }
      if (mass < 1e-15 * in_norm) continue;
      const double m_r = weyl_dim(lam, r);
      const double scale =
          std::pow(r, n) * irrep_dimension(lam) / m_r;
      Mat y = kron(block, (identity(rdim) / static_cast<double>(rdim)).eval());
      y = permute_registers(y, dims, order);
      out += scale * (pi_out * y * pi_out);
    }
    return out;
  }
};

// Builds (and caches) the channel for local dimension d and purifying rank r,
// validating it against the definition: exact product form at n = 1 and the
// Monte Carlo purification average at n = 2 within four standard errors.
inline const PurificationChannel& build_purification_channel(int d, int r) {
  if (d < 1 || r < 1) throw InvalidParameter("build_purification_channel");
  static std::map<std::pair<int, int>, PurificationChannel> cache;
  static std::mutex cache_mutex;
  const std::lock_guard<std::mutex> lock(cache_mutex);
  const auto key = std::make_pair(d, r);
  if (const auto it = cache.find(key); it != cache.end()) return it->second;

  PurificationChannel ch{d, r};
  RngStream rng(0x9E3779B9u, static_cast<uint64_t>(d), "purification-gate");
  RngStream rng_r(0x9E3779B9u, static_cast<uint64_t>(r), "purification-gate-r");
  const Mat rho1 = random_density(d, std::min(d, r), rng);
  // Gate 1: n = 1 must reproduce rho' ox I_r/r exactly.
  const Mat got1 = ch.apply(rho1, 1);
  const Mat want1 = kron(rho1, (identity(r) / static_cast<double>(r)).eval());
  if ((got1 - want1).cwiseAbs().maxCoeff() > 1e-10) {
    throw ConstructionError(
        "build_purification_channel: n=1 gate failed for d=" +
        std::to_string(d) + " r=" + std::to_string(r));
  }
  // Gate 2: n = 2 against the Monte Carlo purification average.
  const Mat rho2 = random_density(d, std::min(d, r), rng_r);
  const Mat got2 = ch.apply(kron(rho2, rho2), 2);
  const McAverage mc = mc_purification_average(rho2, r, 2, 1500, rng);
  const RMat diff = (got2 - mc.mean).cwiseAbs();
  if ((diff.array() > 4.0 * mc.stderr_entry.array() + 1e-9).any()) {
    throw ConstructionError(
        "build_purification_channel: n=2 Monte Carlo gate failed for d=" +
        std::to_string(d) + " r=" + std::to_string(r));
  }
  auto [it, inserted] = cache.emplace(key, ch);
  return it->second;
}

// ---------------------------------------------------------------------------
// PTSW tomography source. One sample consumes t copies of rho: weak Schur
// sampling gives a partition lam with conditional block rho|_lam; the
// purification block tau_lam lives on t copies of C^{d l(lam)}; a
// symmetric-subspace POVM outcome psi is debiased to sigma_hat and the
// purifying register of the first copy is traced out. E[rho_hat] = rho.
// ---------------------------------------------------------------------------

// Closed-form conditional second moment E[rho_hat ox rho_hat | lam] on
// (C^d)^{ox 2}, in terms of the A-marginals of tau_lam (ell = l(lam),
// D = d*ell).
inline Mat ptsw_conditional_second_moment(const Mat& tau_a1, const Mat& tau_a12,
                                          int d, int ell, int t) {
  const int D = d * ell;
  const double q = static_cast<double>(D + t) / (D + t + 1.0);
  const Mat eye = identity(d);
  const Mat sw = permutation_operator(d, {1, 0});
  const Mat lift = kron(tau_a1, eye) + kron(eye, tau_a1);
  Mat out = (q / t) * lift * sw -
            (static_cast<double>(ell) / (t * (D + t + 1.0))) * lift +
            (ell * q / (static_cast<double>(t) * t)) * sw -
            (static_cast<double>(ell) * ell /
             (static_cast<double>(t) * t * (D + t + 1.0))) *
                identity(d * d);
  if (t > 1) out += ((t - 1.0) / t) * q * tau_a12;
  return out.eval();
}

struct PtswBlock {
  Partition lam;
  double prob = 0.0;
  int ell = 0;
  int D = 0;
  Mat tau;      // purification block on (C^D)^{ox t}
  Mat tau_a1;   // A-marginal of the first copy (d x d)
  Mat tau_a12;  // A-marginal of the first two copies (d^2 x d^2), t >= 2
  HayashiSampler sampler;
};

class PtswSource {
 public:
  PtswSource(const Mat& rho, int t) : d_(static_cast<int>(rho.rows())), t_(t) {
    if (t < 1) throw InvalidParameter("PtswSource: t must be >= 1");
    rho_ = rho;
    for (const auto& o : schur_outcomes(rho, t)) {
      if (o.prob < 1e-14) continue;
      PtswBlock blk;
      blk.lam = o.lam;
      blk.prob = o.prob;
      blk.ell = o.lam.length();
      blk.D = d_ * blk.ell;
      blk.tau = purification_block(o.conditional, o.lam, d_);
      // Marginal of the first copy, then of its A register.
      std::vector<int> copy_dims(t, blk.D);
      const Mat tau1 = partial_trace(blk.tau, copy_dims, {0});
      blk.tau_a1 = partial_trace(tau1, {d_, blk.ell}, {0});
      if (t >= 2) {
        const Mat tau12 = partial_trace(blk.tau, copy_dims, {0, 1});
        blk.tau_a12 =
            partial_trace(tau12, {d_, blk.ell, d_, blk.ell}, {0, 2});
      }
      blk.sampler = HayashiSampler(blk.tau, blk.D, t);
      probs_.push_back(blk.prob);
      blocks_.push_back(std::move(blk));
    }
  }

  [[nodiscard]] int d() const { return d_; }
  [[nodiscard]] int t() const { return t_; }
  [[nodiscard]] const std::vector<PtswBlock>& blocks() const { return blocks_; }

  // One estimate rho_hat (consumes t copies of rho).
  Mat sample(RngStream& rng) const {
    const auto& blk = blocks_[rng.discrete(probs_)];
    const Vec psi = blk.sampler.sample(rng);
    const Mat sigma_hat = gps_estimate(psi, blk.D, t_);
    return partial_trace(sigma_hat, {d_, blk.ell}, {0});
  }

  [[nodiscard]] Mat first_moment() const {
    Mat out = Mat::Zero(d_, d_);
    for (const auto& blk : blocks_) out += blk.prob * blk.tau_a1;
    return out;
  }

  [[nodiscard]] Mat second_moment() const {
    Mat out = Mat::Zero(d_ * d_, d_ * d_);
    for (const auto& blk : blocks_) {
      out += blk.prob * ptsw_conditional_second_moment(blk.tau_a1, blk.tau_a12,
                                                       d_, blk.ell, t_);
    }
    return out;
  }

  [[nodiscard]] double acceptance_rate() const {
    long long att = 0, acc = 0;
    for (const auto& blk : blocks_) {
      att += blk.sampler.attempts;
      acc += blk.sampler.accepts;
    }
    return att == 0 ? 0.0 : static_cast<double>(acc) / static_cast<double>(att);
  }

 private:
  int d_;
  int t_;
  Mat rho_;
  std::vector<PtswBlock> blocks_;
  std::vector<double> probs_;
};

}  // namespace qcertlab
