#pragma once
// Lower-bound laboratory: Rademacher hard instances around the maximally
// mixed state, Lüders and single-register induced channels in Liouville
// form, exact chi-square divergences of measurement outcome distributions,
// the Ingster-Suslina moment bound, linearized decompositions of the t-copy
// perturbation, and adversarial basis construction from a channel's small
// eigenvectors.

#include "qcertlab/qcore.hpp"

namespace qcertlab {

// ---------------------------------------------------------------------------
// vec / unvec with column stacking: vec(M)[i + d*j] = M(i, j).
// ---------------------------------------------------------------------------
inline Vec vec_col(const Mat& m) {
  Vec v(m.size());
  for (int j = 0; j < m.cols(); ++j) {
    v.segment(j * m.rows(), m.rows()) = m.col(j);
  }
  return v;
}

inline Mat unvec_col(const Vec& v, int d) {
  if (v.size() != static_cast<Eigen::Index>(d) * d) {
    throw ShapeError("unvec_col: length mismatch");
  }
  Mat m(d, d);
  for (int j = 0; j < d; ++j) m.col(j) = v.segment(j * d, d);
  return m;
}

// ---------------------------------------------------------------------------
// Finite rank-1 POVMs {|psi_x><psi_x|} with sum_x |psi_x><psi_x| = I.
// ---------------------------------------------------------------------------
struct RankOnePovm {
  int dim = 0;
  std::vector<Vec> vectors;

  RankOnePovm(int dim_in, std::vector<Vec> vecs)
      : dim(dim_in), vectors(std::move(vecs)) {
    Mat acc = Mat::Zero(dim, dim);
    for (const Vec& v : vectors) {
      if (v.size() != dim) throw ShapeError("RankOnePovm: vector length");
      acc += v * v.adjoint();
    }
    if ((acc - identity(dim)).cwiseAbs().maxCoeff() > 1e-9) {
      throw InvalidParameter("RankOnePovm: completeness violated");
    }
  }

  [[nodiscard]] std::size_t outcomes() const { return vectors.size(); }
};

inline RankOnePovm computational_povm(int d) {
  std::vector<Vec> vecs;
  for (int i = 0; i < d; ++i) {
    Vec v = Vec::Zero(d);
    v[i] = 1.0;
    vecs.push_back(v);
  }
  return {d, std::move(vecs)};
}

// k-outcome rank-1 POVM from the rows of a Haar-ish isometry (QR of a
// Gaussian matrix), k >= d.
inline RankOnePovm random_rank1_povm(int d, int k, RngStream& rng) {
  if (k < d) throw InvalidParameter("random_rank1_povm: k >= d required");
  Mat g(k, d);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < d; ++j) g(i, j) = cx(rng.normal(), rng.normal());
  }
  const Mat q = Eigen::HouseholderQR<Mat>(g).householderQ() *
                Mat::Identity(k, d);
  std::vector<Vec> vecs;
  for (int i = 0; i < k; ++i) vecs.push_back(q.row(i).adjoint());
  return {d, std::move(vecs)};
}

// ---------------------------------------------------------------------------
// Superoperators in Liouville form: vec(Phi(X)) = S vec(X).
// ---------------------------------------------------------------------------
struct Superoperator {
  int dim = 0;  // operator dimension (acts on dim x dim matrices)
  Mat liouville;

  [[nodiscard]] Mat apply(const Mat& x) const {
    if (x.rows() != dim || x.cols() != dim) {
      throw ShapeError("Superoperator::apply: dimension mismatch");
    }
    return unvec_col(liouville * vec_col(x), dim);
  }
};

// Lüders channel of a rank-1 POVM: H(A) = sum_x tr(M_x A) M_x / tr(M_x).
inline Superoperator lueders_channel(const RankOnePovm& povm) {
  const int d = povm.dim;
  Mat s = Mat::Zero(d * d, d * d);
  for (const Vec& psi : povm.vectors) {
    const double w = psi.squaredNorm();
    if (w < 1e-14) continue;
    Vec v(d * d);  // vec(|psi><psi|) = conj(psi) kron psi (column stacking)
    for (int j = 0; j < d; ++j) v.segment(j * d, d) = std::conj(psi[j]) * psi;
    s += (v * v.adjoint()) / w;
  }
  return Superoperator{d, std::move(s)};
}

// Single-register induced channel of a t-copy channel H:
// H_tilde(M) = (1/t^2) sum_{j,k} tr_{[t] minus {j}}(H(M at slot k, mm rest)),
// computed as S_tilde = (d^{t-1}/t^2) B^dagger S_H B with B = sum_k F_k and
// F_k the vec-level embedding at slot k.
inline Superoperator induced_channel(const Superoperator& h, int d, int t) {
  const auto big = checked_pow(d, t, dim_cap(), "induced_channel");
  if (h.dim != static_cast<int>(big)) {
    throw ShapeError("induced_channel: H must act on d^t");
  }
  const int bigd = static_cast<int>(big);
  const Mat mm = maximally_mixed(d);
  Mat b = Mat::Zero(static_cast<Eigen::Index>(bigd) * bigd,
                    static_cast<Eigen::Index>(d) * d);
  for (int k = 0; k < t; ++k) {
    for (int col = 0; col < d * d; ++col) {
      Mat e = Mat::Zero(d, d);
      e(col % d, col / d) = 1.0;  // vec index col = row + d*colIdx
      Mat embedded = Mat::Ones(1, 1);
      for (int slot = 0; slot < t; ++slot) {
        embedded = kron(embedded, slot == k ? e : mm).eval();
      }
      b.col(col) += vec_col(embedded);
    }
  }
  const double scale =
      std::pow(static_cast<double>(d), t - 1) / (static_cast<double>(t) * t);
  Mat s = scale * (b.adjoint() * h.liouville * b);
  return Superoperator{d, std::move(s)};
}

// ---------------------------------------------------------------------------
// Generalized Gell-Mann basis: orthonormal Hermitian family with the
// identity direction I/sqrt(d) forced last.
// ---------------------------------------------------------------------------
inline std::vector<Mat> gell_mann_basis(int d) {
  std::vector<Mat> basis;
  const double r2 = std::sqrt(2.0);
  for (int j = 0; j < d; ++j) {
    for (int k = j + 1; k < d; ++k) {
      Mat x = Mat::Zero(d, d);
      x(j, k) = 1.0 / r2;
      x(k, j) = 1.0 / r2;
      basis.push_back(x);
      Mat y = Mat::Zero(d, d);
      y(j, k) = cx(0.0, -1.0 / r2);
      y(k, j) = cx(0.0, 1.0 / r2);
      basis.push_back(y);
    }
  }
  for (int l = 1; l < d; ++l) {
    Mat z = Mat::Zero(d, d);
    for (int m = 0; m < l; ++m) z(m, m) = 1.0;
    z(l, l) = -static_cast<double>(l);
    basis.push_back(z / std::sqrt(static_cast<double>(l) * (l + 1)));
  }
  basis.push_back(identity(d) / std::sqrt(static_cast<double>(d)));
  return basis;
}

// ---------------------------------------------------------------------------
// Hard instances: Delta_z = (c eps / sqrt(d ell)) sum_i z_i V_i,
// a_z = min{1, 1/(d |Delta_z|_op)}, rho_z = mm + a_z Delta_z.
// ---------------------------------------------------------------------------
inline constexpr double kDefaultHardInstanceC = 2.0;

struct HardInstanceEnsemble {
  int d = 0;
  int ell = 0;
  double eps = 0.0;
  double c = kDefaultHardInstanceC;
  std::vector<Mat> basis;  // d^2 operators, V_{d^2} = I/sqrt(d)
  Mat vmat;                // d^2 x ell, columns vec(V_1)..vec(V_ell)

  HardInstanceEnsemble(int d_in, int ell_in, double eps_in,
                       std::vector<Mat> basis_in,
                       double c_in = kDefaultHardInstanceC)
      : d(d_in), ell(ell_in), eps(eps_in), c(c_in), basis(std::move(basis_in)) {
    if (ell < 1 || ell > d * d - 1) {
      throw InvalidParameter("HardInstanceEnsemble: ell in [1, d^2-1]");
    }
    if (eps < 0.0) throw InvalidParameter("HardInstanceEnsemble: eps >= 0");
    if (static_cast<int>(basis.size()) != d * d) {
      throw InvalidParameter("HardInstanceEnsemble: basis must have d^2 ops");
    }
    for (int i = 0; i < d * d; ++i) {
      for (int j = i; j < d * d; ++j) {
        const cx ip = (basis[i].adjoint() * basis[j]).trace();
        const double want = (i == j) ? 1.0 : 0.0;
        if (std::abs(ip - want) > 1e-10) {
          throw InvalidParameter("HardInstanceEnsemble: basis not orthonormal");
        }
      }
      if (i < d * d - 1 && std::abs(basis[i].trace()) > 1e-10) {
        throw InvalidParameter("HardInstanceEnsemble: V_i must be traceless");
      }
    }
    if ((basis.back() - identity(d) / std::sqrt(static_cast<double>(d)))
            .cwiseAbs()
            .maxCoeff() > 1e-10) {
      throw InvalidParameter("HardInstanceEnsemble: last element is I/sqrt(d)");
    }
    vmat = Mat(d * d, ell);
    for (int i = 0; i < ell; ++i) vmat.col(i) = vec_col(basis[i]);
  }

  // Sign vector for an enumeration index: bit i set -> z_i = +1.
  [[nodiscard]] std::vector<int> signs(std::size_t index) const {
    std::vector<int> z(ell);
    for (int i = 0; i < ell; ++i) z[i] = (index >> i) & 1u ? 1 : -1;
    return z;
  }

  [[nodiscard]] Mat direction(const std::vector<int>& z) const {
    if (static_cast<int>(z.size()) != ell) {
      throw ShapeError("HardInstanceEnsemble: z length");
    }
    Mat delta = Mat::Zero(d, d);
    for (int i = 0; i < ell; ++i) delta += static_cast<double>(z[i]) * basis[i];
    return (c * eps / std::sqrt(static_cast<double>(d) * ell)) * delta;
  }
};

struct HardInstance {
  Mat rho;
  double a = 1.0;
};

inline HardInstance hard_instance(const HardInstanceEnsemble& ens,
                                  const std::vector<int>& z) {
  const Mat delta = ens.direction(z);
  const auto [evals, evecs] = eigh(delta);
  const double opnorm =
      std::max(std::abs(evals.minCoeff()), std::abs(evals.maxCoeff()));
  HardInstance inst;
  inst.a = (ens.d * opnorm <= 1.0) ? 1.0 : 1.0 / (ens.d * opnorm);
  inst.rho = maximally_mixed(ens.d) + inst.a * delta;
  return inst;
}

// ---------------------------------------------------------------------------
// Outcome distributions and likelihood-deviation inner products.
// ---------------------------------------------------------------------------
inline RVec outcome_distribution(const RankOnePovm& povm, const Mat& rho,
                                 int t) {
  const auto big = checked_pow(static_cast<std::size_t>(rho.rows()), t,
                               dim_cap(), "outcome_distribution");
  if (povm.dim != static_cast<int>(big)) {
    throw ShapeError("outcome_distribution: POVM acts on d^t");
  }
  const Mat rho_t = kron_pow(rho, t);
  RVec p(povm.outcomes());
  for (std::size_t x = 0; x < povm.outcomes(); ++x) {
    p[x] = std::max(0.0, (povm.vectors[x].adjoint() * rho_t *
                          povm.vectors[x])(0, 0).real());
  }
  const double total = p.sum();
  if (std::abs(total - 1.0) > 1e-10) {
    throw ConstructionError("outcome_distribution: sums to " +
                            std::to_string(total));
  }
  return p;
}

// phi = sum_x (p_z(x) - q(x)) (p_z'(x) - q(x)) / q(x), the likelihood-ratio
// route.
inline double phi_likelihood(const RankOnePovm& povm, const Mat& rho_z,
                             const Mat& rho_zp, int t) {
  const int d = static_cast<int>(rho_z.rows());
  const RVec q = outcome_distribution(povm, maximally_mixed(d), t);
  const RVec p1 = outcome_distribution(povm, rho_z, t);
  const RVec p2 = outcome_distribution(povm, rho_zp, t);
  double acc = 0.0;
  for (int x = 0; x < q.size(); ++x) {
    if (q[x] < 1e-15) continue;
    acc += (p1[x] - q[x]) * (p2[x] - q[x]) / q[x];
  }
  return acc;
}

// The same quantity via the Lüders channel: d^t tr(Delta_z^{(t)} H(Delta')).
inline double phi_lueders(const Superoperator& h, const Mat& rho_z,
                          const Mat& rho_zp, int t) {
  const int d = static_cast<int>(rho_z.rows());
  const Mat mm_t = kron_pow(maximally_mixed(d), t);
  const Mat d1 = kron_pow(rho_z, t) - mm_t;
  const Mat d2 = kron_pow(rho_zp, t) - mm_t;
  const double scale = std::pow(static_cast<double>(d), t);
  return scale * (vec_col(d1).adjoint() * h.liouville * vec_col(d2))(0, 0)
                     .real();
}

// ---------------------------------------------------------------------------
// Exact chi-square and the Ingster-Suslina bound. Round i of n uses
// schedule[i % schedule.size()].
// ---------------------------------------------------------------------------
namespace detail {

inline void check_chi2_budget(const HardInstanceEnsemble& ens,
                              const std::vector<RankOnePovm>& schedule, int n,
                              const char* what) {
  if (schedule.empty()) throw InvalidParameter("chi2: empty schedule");
  if (ens.ell > 12) {
    throw ResourceLimit(std::string(what) + ": ell <= 12 required");
  }
  if (n < 1 || n > 3) {
    throw ResourceLimit(std::string(what) + ": n <= 3 required");
  }
  for (const auto& povm : schedule) {
    if (povm.outcomes() > 16) {
      throw ResourceLimit(std::string(what) + ": outcome sets <= 16");
    }
  }
}

// Per-measurement outcome tables for every z: rows indexed by z-enumeration.
struct OutcomeTables {
  std::vector<RVec> q;                 // per measurement
  std::vector<std::vector<RVec>> p;    // [measurement][z]
};

inline OutcomeTables build_tables(const HardInstanceEnsemble& ens,
                                  const std::vector<RankOnePovm>& schedule,
                                  int t) {
  OutcomeTables tab;
  const std::size_t nz = std::size_t{1} << ens.ell;
  std::vector<Mat> rhos(nz);
  for (std::size_t b = 0; b < nz; ++b) {
    rhos[b] = hard_instance(ens, ens.signs(b)).rho;
  }
  for (const auto& povm : schedule) {
    tab.q.push_back(outcome_distribution(povm, maximally_mixed(ens.d), t));
    std::vector<RVec> pz(nz);
    for (std::size_t b = 0; b < nz; ++b) {
      pz[b] = outcome_distribution(povm, rhos[b], t);
    }
    tab.p.push_back(std::move(pz));
  }
  return tab;
}

}  // namespace detail

inline double chi2_exact(const HardInstanceEnsemble& ens,
                         const std::vector<RankOnePovm>& schedule, int n,
                         int t) {
  detail::check_chi2_budget(ens, schedule, n, "chi2_exact");
  const auto tab = detail::build_tables(ens, schedule, t);
  const std::size_t nz = std::size_t{1} << ens.ell;
  const std::size_t m = schedule.size();
  std::vector<int> x(n, 0);
  std::vector<double> tuple_terms;
  std::vector<double> zbuf(nz);
  while (true) {
    double q_joint = 1.0;
    for (int i = 0; i < n; ++i) q_joint *= tab.q[i % m][x[i]];
    if (q_joint > 1e-300) {
      for (std::size_t b = 0; b < nz; ++b) {
        double prod = 1.0;
        for (int i = 0; i < n; ++i) prod *= tab.p[i % m][b][x[i]];
        zbuf[b] = prod;
      }
      const double pbar = pairwise_mean(zbuf);
      tuple_terms.push_back((pbar - q_joint) * (pbar - q_joint) / q_joint);
    }
    int pos = n - 1;
    while (pos >= 0 &&
           ++x[pos] == static_cast<int>(tab.q[pos % m].size())) {
      x[pos] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  return pairwise_sum(tuple_terms);
}

inline double ingster_suslina_bound(const HardInstanceEnsemble& ens,
                                    const std::vector<RankOnePovm>& schedule,
                                    int n, int t) {
  detail::check_chi2_budget(ens, schedule, n, "ingster_suslina_bound");
  const auto tab = detail::build_tables(ens, schedule, t);
  const std::size_t nz = std::size_t{1} << ens.ell;
  const std::size_t m = schedule.size();
  // Deviation vectors u_z(x) = (p_z(x) - q(x)) / sqrt(q(x)) per measurement,
  // plus the number of rounds each measurement is used.
  std::vector<int> rounds(m, 0);
  for (int i = 0; i < n; ++i) rounds[i % m] += 1;
  std::vector<std::vector<RVec>> u(m);
  for (std::size_t i = 0; i < m; ++i) {
    u[i].resize(nz);
    for (std::size_t b = 0; b < nz; ++b) {
      RVec ub(tab.q[i].size());
      for (int x = 0; x < ub.size(); ++x) {
        ub[x] = tab.q[i][x] < 1e-15
                    ? 0.0
                    : (tab.p[i][b][x] - tab.q[i][x]) / std::sqrt(tab.q[i][x]);
      }
      u[i][b] = std::move(ub);
    }
  }
  std::vector<double> row_means(nz);
  std::vector<double> rowbuf(nz);
  for (std::size_t b = 0; b < nz; ++b) {
    for (std::size_t bp = 0; bp < nz; ++bp) {
      double phi_total = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        phi_total += rounds[i] * u[i][b].dot(u[i][bp]);
      }
      rowbuf[bp] = std::exp(phi_total);
    }
    row_means[b] = pairwise_mean(rowbuf);
  }
  return pairwise_mean(row_means) - 1.0;
}

// Both orderings of the schedule-vs-ensemble game; no optimality claim.
inline double minmax_is_bound(
    const std::vector<HardInstanceEnsemble>& ensembles,
    const std::vector<std::vector<RankOnePovm>>& schedules, int n, int t) {
  double best = 1e300;
  for (const auto& sched : schedules) {
    double worst = -1e300;
    for (const auto& ens : ensembles) {
      worst = std::max(worst, ingster_suslina_bound(ens, sched, n, t));
    }
    best = std::min(best, worst);
  }
  return best;
}

inline double maxmin_is_bound(
    const std::vector<HardInstanceEnsemble>& ensembles,
    const std::vector<std::vector<RankOnePovm>>& schedules, int n, int t) {
  double best = -1e300;
  for (const auto& ens : ensembles) {
    double worst = 1e300;
    for (const auto& sched : schedules) {
      worst = std::min(worst, ingster_suslina_bound(ens, sched, n, t));
    }
    best = std::max(best, worst);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Linearized decomposition: Delta_z^{(t)} = L_z + H_z with
// L_z = sum_j mm ox .. ox (a_z Delta_z at slot j) ox .. ox mm.
// ---------------------------------------------------------------------------
struct LinearizedTerms {
  double ll = 0.0;
  double lh = 0.0;
  double hl = 0.0;
  double hh = 0.0;

  [[nodiscard]] double sum() const { return ll + lh + hl + hh; }
  [[nodiscard]] double nonlinear() const { return lh + hl + hh; }
};

namespace detail {

inline Mat linear_tensor_part(const Mat& perturbation, int d, int t) {
  const Mat mm = maximally_mixed(d);
  Mat acc = Mat::Zero(checked_pow(d, t, dim_cap(), "linear_tensor_part"),
                      checked_pow(d, t, dim_cap(), "linear_tensor_part"));
  for (int j = 0; j < t; ++j) {
    Mat term = Mat::Ones(1, 1);
    for (int slot = 0; slot < t; ++slot) {
      term = kron(term, slot == j ? perturbation : mm).eval();
    }
    acc += term;
  }
  return acc;
}

}  // namespace detail

inline LinearizedTerms linearized_terms(const HardInstanceEnsemble& ens,
                                        const Superoperator& h,
                                        const std::vector<int>& z,
                                        const std::vector<int>& zp, int t) {
  const int d = ens.d;
  const Mat mm_t = kron_pow(maximally_mixed(d), t);
  const HardInstance i1 = hard_instance(ens, z);
  const HardInstance i2 = hard_instance(ens, zp);
  const Mat l1 = detail::linear_tensor_part(i1.rho - maximally_mixed(d), d, t);
  const Mat l2 = detail::linear_tensor_part(i2.rho - maximally_mixed(d), d, t);
  const Mat h1 = kron_pow(i1.rho, t) - mm_t - l1;
  const Mat h2 = kron_pow(i2.rho, t) - mm_t - l2;
  const auto pairing = [&](const Mat& a, const Mat& b) {
    return (vec_col(a).adjoint() * h.liouville * vec_col(b))(0, 0).real();
  };
  LinearizedTerms out;
  out.ll = pairing(l1, l2);
  out.lh = pairing(l1, h2);
  out.hl = pairing(h1, l2);
  out.hh = pairing(h1, h2);
  return out;
}

// ---------------------------------------------------------------------------
// Adversarial basis: the ell smallest-eigenvalue Hermitian eigenvectors of an
// induced channel's Liouville matrix, restricted to the traceless space, with
// I/sqrt(d) appended last. Ties are broken by the lexicographic order of the
// (sign-normalized) coefficient vector in the Gell-Mann basis.
// ---------------------------------------------------------------------------
inline std::vector<Mat> adversarial_basis(const Superoperator& s, int ell) {
  const int d = s.dim;
  if (ell < 1 || ell > d * d - 1) {
    throw InvalidParameter("adversarial_basis: ell in [1, d^2-1]");
  }
  const std::vector<Mat> gm = gell_mann_basis(d);
  const int nt = d * d - 1;  // traceless subspace dimension
  RMat tmat(nt, nt);
  for (int b = 0; b < nt; ++b) {
    const Mat hgb = s.apply(gm[b]);
    for (int a = 0; a < nt; ++a) {
      tmat(a, b) = (gm[a].adjoint() * hgb).trace().real();
    }
  }
  tmat = ((tmat + tmat.transpose()) / 2.0).eval();
  Eigen::SelfAdjointEigenSolver<RMat> solver(tmat);
  if (solver.info() != Eigen::Success) {
    throw ConstructionError("adversarial_basis: eigensolver failed");
  }
  struct Entry {
    double lam;
    RVec coeff;
  };
  std::vector<Entry> entries;
  for (int i = 0; i < nt; ++i) {
    RVec c = solver.eigenvectors().col(i);
    for (int a = 0; a < nt; ++a) {  // canonical sign
      if (std::abs(c[a]) > 1e-9) {
        if (c[a] < 0.0) c = -c;
        break;
      }
    }
    entries.push_back({solver.eigenvalues()[i], std::move(c)});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& x, const Entry& y) {
    if (std::abs(x.lam - y.lam) > 1e-12) return x.lam < y.lam;
    for (int a = 0; a < x.coeff.size(); ++a) {
      if (std::abs(x.coeff[a] - y.coeff[a]) > 1e-12) {
        return x.coeff[a] < y.coeff[a];
      }
    }
    return false;
  });
  std::vector<Mat> basis;
  for (const Entry& e : entries) {
    Mat v = Mat::Zero(d, d);
    for (int a = 0; a < nt; ++a) v += e.coeff[a] * gm[a];
    basis.push_back(((v + v.adjoint()) / 2.0).eval());
  }
  basis.push_back(identity(d) / std::sqrt(static_cast<double>(d)));
  return basis;
}

// Spectral norm of V^dagger S V over the first ell basis directions.
inline double adversarial_compression_norm(const Superoperator& s,
                                           const std::vector<Mat>& basis,
                                           int ell) {
  const int d = s.dim;
  Mat v(d * d, ell);
  for (int i = 0; i < ell; ++i) v.col(i) = vec_col(basis[i]);
  const Mat compressed = v.adjoint() * s.liouville * v;
  const Mat herm = (compressed + compressed.adjoint()) / 2.0;
  const auto [evals, evecs] = eigh(herm);
  return std::max(std::abs(evals.minCoeff()), std::abs(evals.maxCoeff()));
}

// ---------------------------------------------------------------------------
// Normalization-removal direction of the MGF lemma, for the bilinear form of
// the linear-terms reduction: f(z, z') = t^2 d s^2 z^T M z' with
// M_ij = tr(V_i H_tilde(V_j)) and s = c eps / sqrt(d ell). Checks
// E exp(a_z a_z' f) <= E exp(f) + 4 exp(-d) by exhaustive enumeration.
// ---------------------------------------------------------------------------
struct NormalizationRemovalCheck {
  double lhs = 0.0;
  double rhs = 0.0;

  [[nodiscard]] bool ok() const { return lhs <= rhs + 1e-12; }
};

inline NormalizationRemovalCheck normalization_removal_check(
    const HardInstanceEnsemble& ens, const Superoperator& induced, int t) {
  if (ens.ell > 10) {
    throw ResourceLimit("normalization_removal_check: ell <= 10");
  }
  const int d = ens.d;
  const double s = ens.c * ens.eps / std::sqrt(static_cast<double>(d) * ens.ell);
  RMat m(ens.ell, ens.ell);
  for (int j = 0; j < ens.ell; ++j) {
    const Mat hj = induced.apply(ens.basis[j]);
    for (int i = 0; i < ens.ell; ++i) {
      m(i, j) = (ens.basis[i].adjoint() * hj).trace().real();
    }
  }
  const double scale = static_cast<double>(t) * t * d * s * s;
  const std::size_t nz = std::size_t{1} << ens.ell;
  std::vector<RVec> zs(nz);
  std::vector<double> a(nz);
  for (std::size_t b = 0; b < nz; ++b) {
    const auto sign = ens.signs(b);
    RVec zv(ens.ell);
    for (int i = 0; i < ens.ell; ++i) zv[i] = sign[i];
    zs[b] = std::move(zv);
    a[b] = hard_instance(ens, sign).a;
  }
  std::vector<double> lhs_rows(nz), rhs_rows(nz), buf_l(nz), buf_r(nz);
  for (std::size_t b = 0; b < nz; ++b) {
    const RVec mz = m * zs[b];
    for (std::size_t bp = 0; bp < nz; ++bp) {
      const double f = scale * zs[bp].dot(mz);
      buf_l[bp] = std::exp(a[b] * a[bp] * f);
      buf_r[bp] = std::exp(f);
    }
    lhs_rows[b] = pairwise_mean(buf_l);
    rhs_rows[b] = pairwise_mean(buf_r);
  }
  NormalizationRemovalCheck out;
  out.lhs = pairwise_mean(lhs_rows);
  out.rhs = pairwise_mean(rhs_rows) + 4.0 * std::exp(-static_cast<double>(d));
  return out;
}

}  // namespace qcertlab
