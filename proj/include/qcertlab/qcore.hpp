#pragma once
// Dense complex linear algebra for multi-register quantum states.
//
// Conventions (used consistently across the testbed):
//  * Registers are big-endian: register 0 is the most significant tensor
//    factor, so kron(A, B) puts A on register 0.
//  * Permutation operators act as V(pi)|i_1 .. i_n> = |i_{pi^-1(1)} ..
//    i_{pi^-1(n)}>, which gives the composition rule V(pi) V(tau) =
//    V(pi o tau) with (pi o tau)(x) = pi(tau(x)).
//  * Schatten norms of Hermitian inputs use |eigenvalue| singular values,
//    clamped at kEigClamp before fractional powers.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <numeric>
#include <utility>
#include <vector>

#include "qcertlab/common.hpp"

namespace qcertlab {

// ---------------------------------------------------------------------------
// Validation helpers.
// ---------------------------------------------------------------------------
inline void require_square(const Mat& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw ShapeError(std::string(what) + ": expected nonempty square matrix, got " +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

inline double hermiticity_defect(const Mat& m) {
  return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

inline void require_hermitian(const Mat& m, const char* what,
                              double tol = kHermTol) {
  require_square(m, what);
  const double defect = hermiticity_defect(m);
  if (defect > tol) {
    throw InvalidParameter(std::string(what) + ": not Hermitian (defect " +
                           std::to_string(defect) + ")");
  }
}

// Eigendecomposition of a Hermitian matrix; eigenvalues ascending.
inline std::pair<RVec, Mat> eigh(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> solver(m);
  if (solver.info() != Eigen::Success) {
    throw ConstructionError("eigh(): eigensolver failed to converge");
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

inline void require_density(const Mat& m, const char* what,
                            double herm_tol = kHermTol,
                            double trace_tol = kTraceTol,
                            double psd_tol = kPsdTol) {
  require_hermitian(m, what, herm_tol);
  const double tr_defect = std::abs(m.trace() - cx(1.0, 0.0));
  if (tr_defect > trace_tol) {
    throw InvalidParameter(std::string(what) + ": trace deviates from 1 by " +
                           std::to_string(tr_defect));
  }
  Eigen::SelfAdjointEigenSolver<Mat> solver(m, Eigen::EigenvaluesOnly);
  const double min_eig = solver.eigenvalues().minCoeff();
  if (min_eig < -psd_tol) {
    throw InvalidParameter(std::string(what) + ": not PSD (min eigenvalue " +
                           std::to_string(min_eig) + ")");
  }
}

// ---------------------------------------------------------------------------
// Validated wrapper types (thin; the numerical kernels work on raw Mat).
// ---------------------------------------------------------------------------
struct HermitianOp {
  Mat m;
  explicit HermitianOp(Mat mat) : m(std::move(mat)) {
    require_hermitian(this->m, "HermitianOp");
  }
  [[nodiscard]] int dim() const { return static_cast<int>(m.rows()); }
};

struct DensityMatrix {
  Mat m;
  explicit DensityMatrix(Mat mat) : m(std::move(mat)) {
    require_density(this->m, "DensityMatrix");
  }
  [[nodiscard]] int dim() const { return static_cast<int>(m.rows()); }
};

struct PureState {
  Vec v;
  explicit PureState(Vec vec) : v(std::move(vec)) {
    if (v.size() == 0) throw ShapeError("PureState: empty vector");
    const double norm_defect = std::abs(v.norm() - 1.0);
    if (norm_defect > kTraceTol) {
      throw InvalidParameter("PureState: norm deviates from 1 by " +
                             std::to_string(norm_defect));
    }
  }
  [[nodiscard]] int dim() const { return static_cast<int>(v.size()); }
  [[nodiscard]] Mat projector() const { return v * v.adjoint(); }
};

// ---------------------------------------------------------------------------
// Elementary constructions.
// ---------------------------------------------------------------------------
inline Mat identity(int d) { return Mat::Identity(d, d); }

inline Mat maximally_mixed(int d) {
  return Mat::Identity(d, d) / static_cast<double>(d);
}

inline Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

inline Mat kron_pow(const Mat& a, int n) {
  if (n < 1) throw InvalidParameter("kron_pow: n must be >= 1");
  checked_pow(static_cast<std::size_t>(a.rows()), n, dim_cap(), "kron_pow");
  Mat out = a;
  for (int i = 1; i < n; ++i) out = kron(out, a);
  return out;
}

inline Vec kron_vec(const Vec& a, const Vec& b) {
  Vec out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    out.segment(i * b.size(), b.size()) = a(i) * b;
  }
  return out;
}

inline Vec kron_vec_pow(const Vec& a, int n) {
  if (n < 1) throw InvalidParameter("kron_vec_pow: n must be >= 1");
  checked_pow(static_cast<std::size_t>(a.size()), n, oracle_dim_cap(),
              "kron_vec_pow");
  Vec out = a;
  for (int i = 1; i < n; ++i) out = kron_vec(out, a);
  return out;
}

// ---------------------------------------------------------------------------
// Haar-random objects.
// ---------------------------------------------------------------------------
inline Vec gaussian_vector(int d, RngStream& rng) {
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = cx(rng.normal(), rng.normal());
  return v;
}

inline Vec haar_state(int d, RngStream& rng) {
  if (d < 1) throw InvalidParameter("haar_state: d must be >= 1");
  Vec v = gaussian_vector(d, rng);
  return v / v.norm();
}

// Haar-distributed unitary via QR of a Ginibre matrix with the R-diagonal
// phase correction (Mezzadri's recipe).
inline Mat haar_unitary(int d, RngStream& rng) {
  if (d < 1) throw InvalidParameter("haar_unitary: d must be >= 1");
  Mat g(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) g(i, j) = cx(rng.normal(), rng.normal());
  }
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j) {
    const cx rjj = r(j, j);
    const double a = std::abs(rjj);
    q.col(j) *= (a > 0.0) ? rjj / a : cx(1.0, 0.0);
  }
  return q;
}

// Random rank-r density matrix: G G^dag / tr(G G^dag) with G a d x r Ginibre
// block (rank exactly r almost surely).
inline Mat random_density(int d, int rank, RngStream& rng) {
  if (d < 1 || rank < 1 || rank > d) {
    throw InvalidParameter("random_density: need 1 <= rank <= d");
  }
  Mat g(d, rank);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < rank; ++j) g(i, j) = cx(rng.normal(), rng.normal());
  }
  Mat rho = g * g.adjoint();
  rho /= rho.trace().real();
  // Exact Hermitization guards against accumulated roundoff in the product.
  return ((rho + rho.adjoint()) / 2.0).eval();
}

// ---------------------------------------------------------------------------
// Multi-register index arithmetic (big-endian digit order).
// ---------------------------------------------------------------------------
inline std::size_t mixed_radix_index(std::span<const int> digits,
                                     std::span<const int> dims) {
  std::size_t idx = 0;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    idx = idx * static_cast<std::size_t>(dims[k]) +
          static_cast<std::size_t>(digits[k]);
  }
  return idx;
}

inline void mixed_radix_digits(std::size_t index, std::span<const int> dims,
                               std::span<int> digits) {
  for (std::size_t k = dims.size(); k-- > 0;) {
    const auto d = static_cast<std::size_t>(dims[k]);
    digits[k] = static_cast<int>(index % d);
    index /= d;
  }
}

inline std::size_t total_dim(std::span<const int> dims) {
  std::size_t t = 1;
  for (const int d : dims) {
    if (d < 1) throw InvalidParameter("total_dim: register dims must be >= 1");
    if (t > dim_cap() / static_cast<std::size_t>(d)) {
      throw ResourceLimit("total_dim: product of register dims exceeds cap " +
                          std::to_string(dim_cap()));
    }
    t *= static_cast<std::size_t>(d);
  }
  return t;
}

// Basis-index image of the permutation action on n registers of dimension d:
// image[j] is the index V(pi) maps basis state |j> to. `cap` bounds the total
// dimension d^n (0 selects the default cap).
inline std::vector<std::size_t> permutation_basis_image(
    int d, const std::vector<int>& pi, std::size_t cap = 0) {
  const int n = static_cast<int>(pi.size());
  // Validate that pi is a permutation of 0..n-1 (0-based positions).
  std::vector<bool> seen(n, false);
  for (const int p : pi) {
    if (p < 0 || p >= n || seen[p]) {
      throw InvalidParameter("permutation_basis_image: not a permutation");
    }
    seen[p] = true;
  }
  const std::size_t total = checked_pow(
      static_cast<std::size_t>(d), n, cap == 0 ? dim_cap() : cap, "permutation");
  std::vector<int> inv(n);
  for (int k = 0; k < n; ++k) inv[pi[k]] = k;
  std::vector<std::size_t> image(total);
  std::vector<int> in(n), out(n);
  std::vector<int> dims(n, d);
  for (std::size_t j = 0; j < total; ++j) {
    mixed_radix_digits(j, dims, in);
    for (int k = 0; k < n; ++k) out[k] = in[inv[k]];
    image[j] = mixed_radix_index(out, dims);
  }
  return image;
}

// Dense permutation operator V_d(pi) on (C^d)^{ox n}.
inline Mat permutation_operator(int d, const std::vector<int>& pi) {
  const auto image = permutation_basis_image(d, pi);
  Mat v = Mat::Zero(image.size(), image.size());
  for (std::size_t j = 0; j < image.size(); ++j) v(image[j], j) = 1.0;
  return v;
}

// Projector onto the symmetric subspace of (C^d)^{ox n}; average of all V(pi).
inline Mat symmetric_projector(int d, int n) {
  const std::size_t total =
      checked_pow(static_cast<std::size_t>(d), n, dim_cap(), "symmetric_projector");
  Mat p = Mat::Zero(total, total);
  std::vector<int> pi(n);
  std::iota(pi.begin(), pi.end(), 0);
  double count = 0.0;
  do {
    const auto image = permutation_basis_image(d, pi);
    for (std::size_t j = 0; j < total; ++j) p(image[j], j) += 1.0;
    count += 1.0;
  } while (std::next_permutation(pi.begin(), pi.end()));
  return p / count;
}

// Partial trace: keeps the registers listed in `keep` (in their original
// order) and traces out the rest.
inline Mat partial_trace(const Mat& m, const std::vector<int>& dims,
                         const std::vector<int>& keep) {
  const std::size_t total = total_dim(dims);
  if (static_cast<std::size_t>(m.rows()) != total ||
      static_cast<std::size_t>(m.cols()) != total) {
    throw ShapeError("partial_trace: matrix size does not match register dims");
  }
  const int n = static_cast<int>(dims.size());
  std::vector<bool> kept(n, false);
  for (const int k : keep) {
    if (k < 0 || k >= n || kept[k]) {
      throw InvalidParameter("partial_trace: bad keep list");
    }
    kept[k] = true;
  }
  std::vector<int> keep_sorted(keep);
  std::sort(keep_sorted.begin(), keep_sorted.end());
  std::vector<int> traced;
  for (int k = 0; k < n; ++k) {
    if (!kept[k]) traced.push_back(k);
  }
  std::vector<int> kdims, tdims;
  kdims.reserve(keep_sorted.size());
  for (const int k : keep_sorted) kdims.push_back(dims[k]);
  for (const int k : traced) tdims.push_back(dims[k]);
  const std::size_t ktotal = kdims.empty() ? 1 : total_dim(kdims);
  const std::size_t ttotal = tdims.empty() ? 1 : total_dim(tdims);

  Mat out = Mat::Zero(ktotal, ktotal);
  std::vector<int> full_r(n), full_c(n), kr(keep_sorted.size()),
      kc(keep_sorted.size()), td(traced.size());
  for (std::size_t r = 0; r < ktotal; ++r) {
    mixed_radix_digits(r, kdims, kr);
    for (std::size_t c = 0; c < ktotal; ++c) {
      mixed_radix_digits(c, kdims, kc);
      cx acc = 0.0;
      for (std::size_t t = 0; t < ttotal; ++t) {
        if (!tdims.empty()) mixed_radix_digits(t, tdims, td);
        for (std::size_t k = 0; k < keep_sorted.size(); ++k) {
          full_r[keep_sorted[k]] = kr[k];
          full_c[keep_sorted[k]] = kc[k];
        }
        for (std::size_t k = 0; k < traced.size(); ++k) {
          full_r[traced[k]] = td[k];
          full_c[traced[k]] = td[k];
        }
        acc += m(mixed_radix_index(full_r, dims), mixed_radix_index(full_c, dims));
      }
      out(r, c) = acc;
    }
  }
  return out;
}

// Register reordering: output register j is input register order[j].
inline Mat permute_registers(const Mat& m, const std::vector<int>& dims,
                             const std::vector<int>& order) {
  const std::size_t total = total_dim(dims);
  if (static_cast<std::size_t>(m.rows()) != total ||
      static_cast<std::size_t>(m.cols()) != total) {
    throw ShapeError("permute_registers: matrix size does not match dims");
  }
  const int n = static_cast<int>(dims.size());
  std::vector<bool> seen(n, false);
  for (const int o : order) {
    if (o < 0 || o >= n || seen[o]) {
      throw InvalidParameter("permute_registers: order is not a permutation");
    }
    seen[o] = true;
  }
  std::vector<int> odims(n);
  for (int j = 0; j < n; ++j) odims[j] = dims[order[j]];
  // Map each output basis index to the corresponding input basis index.
  std::vector<std::size_t> src(total);
  std::vector<int> odig(n), idig(n);
  for (std::size_t j = 0; j < total; ++j) {
    mixed_radix_digits(j, odims, odig);
    for (int k = 0; k < n; ++k) idig[order[k]] = odig[k];
    src[j] = mixed_radix_index(idig, dims);
  }
  Mat out(total, total);
  for (std::size_t r = 0; r < total; ++r) {
    for (std::size_t c = 0; c < total; ++c) out(r, c) = m(src[r], src[c]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Norms and functionals.
// ---------------------------------------------------------------------------

// Schatten p-(quasi)norm of a Hermitian matrix: singular values are
// |eigenvalues|, clamped at kEigClamp before fractional powers so that
// p < 1 quasinorms are well defined in floating point.
inline double schatten(const Mat& m, double p) {
  if (!(p > 0.0)) throw InvalidParameter("schatten: p must be > 0");
  require_hermitian(m, "schatten", 1e-8);
  Eigen::SelfAdjointEigenSolver<Mat> solver(m, Eigen::EigenvaluesOnly);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
    double s = std::abs(solver.eigenvalues()(i));
    if (s < kEigClamp) s = 0.0;
    if (s > 0.0) acc += std::pow(s, p);
  }
  return std::pow(acc, 1.0 / p);
}

inline double trace_norm(const Mat& m) { return schatten(m, 1.0); }
inline double hs_norm(const Mat& m) { return schatten(m, 2.0); }
inline double trace_distance(const Mat& a, const Mat& b) {
  return 0.5 * trace_norm(a - b);
}
inline double hs_distance(const Mat& a, const Mat& b) { return hs_norm(a - b); }
inline double purity(const Mat& rho) { return (rho * rho).trace().real(); }

}  // namespace qcertlab
