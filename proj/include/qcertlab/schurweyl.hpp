#pragma once
// Schur-Weyl structure on (C^d)^{ox t}: integer partitions, symmetric-group
// characters (Murnaghan-Nakayama via beta numbers), isotypic projectors,
// weak Schur sampling, Weyl-module (GL-part) compressions built from Young
// symmetrizers, and the Haar moment oracle for symmetric-subspace POVMs.

#include <map>
#include <mutex>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "qcertlab/qcore.hpp"

namespace qcertlab {

// ---------------------------------------------------------------------------
// Partitions.
// ---------------------------------------------------------------------------
struct Partition {
  std::vector<int> parts;  // weakly decreasing, strictly positive

  Partition() = default;
  explicit Partition(std::vector<int> p) : parts(std::move(p)) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (parts[i] < 1 || (i > 0 && parts[i] > parts[i - 1])) {
        throw InvalidParameter("Partition: parts must be weakly decreasing, >= 1");
      }
    }
  }

  [[nodiscard]] int sum() const {
    return std::accumulate(parts.begin(), parts.end(), 0);
  }
  [[nodiscard]] int length() const { return static_cast<int>(parts.size()); }
  [[nodiscard]] int part(int i) const {  // 0-based, 0 beyond the length
    return (i >= 0 && i < length()) ? parts[i] : 0;
  }

  // Sum of cell contents (j - i) over cells (i, j), rows/columns 1-based.
  [[nodiscard]] double content_sum() const {
    double c = 0.0;
    for (int i = 1; i <= length(); ++i) {
      const double li = parts[i - 1];
      c += li * (li - 2.0 * i + 1.0) / 2.0;
    }
    return c;
  }

  [[nodiscard]] std::string str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(parts[i]);
    }
    return s + ")";
  }

  friend bool operator==(const Partition& a, const Partition& b) {
    return a.parts == b.parts;
  }
  friend bool operator<(const Partition& a, const Partition& b) {
    return a.parts < b.parts;
  }
};

// All partitions of t, ordered lexicographically descending, so the first
// entry is (t) and the last is (1, 1, ..., 1).
inline std::vector<Partition> partitions(int t) {
  if (t < 0) throw InvalidParameter("partitions: t must be >= 0");
  std::vector<Partition> out;
  std::vector<int> cur;
  auto rec = [&](auto&& self, int remaining, int max_part) -> void {
    if (remaining == 0) {
      out.emplace_back(Partition(cur));
      return;
    }
    for (int p = std::min(remaining, max_part); p >= 1; --p) {
      cur.push_back(p);
      self(self, remaining - p, p);
      cur.pop_back();
    }
  };
  rec(rec, t, t == 0 ? 1 : t);
  return out;
}

// Conjugate (transposed) partition.
inline Partition conjugate(const Partition& lam) {
  if (lam.length() == 0) return lam;
  std::vector<int> out(lam.parts[0], 0);
  for (const int p : lam.parts) {
    for (int j = 0; j < p; ++j) out[j] += 1;
  }
  return Partition(out);
}

// Dimension of the S_t irrep labelled by lam (hook length formula).
inline double irrep_dimension(const Partition& lam) {
  const int t = lam.sum();
  const Partition conj = conjugate(lam);
  double denom = 1.0;
  for (int i = 1; i <= lam.length(); ++i) {
    for (int j = 1; j <= lam.parts[i - 1]; ++j) {
      denom *= (lam.parts[i - 1] - j) + (conj.parts[j - 1] - i) + 1;
    }
  }
  return std::round(factorial(t) / denom);
}

// Dimension of the GL(d) Weyl module labelled by lam (Weyl dimension
// formula); zero when the partition is taller than d.
inline double weyl_dim(const Partition& lam, int d) {
  if (lam.length() > d) return 0.0;
  double v = 1.0;
  for (int i = 1; i <= d; ++i) {
    for (int j = i + 1; j <= d; ++j) {
      v *= static_cast<double>(lam.part(i - 1) - lam.part(j - 1) + j - i) /
           static_cast<double>(j - i);
    }
  }
  return std::round(v);
}

// ---------------------------------------------------------------------------
// Murnaghan-Nakayama characters via beta numbers. The beta set of lam with
// length L is {lam_i + (L - 1 - i)} (0-based i); removing a border strip of
// size r means replacing some b by b - r >= 0 not already present, with sign
// (-1)^{#{b' in B : b - r < b' < b}}.
// ---------------------------------------------------------------------------
namespace detail {

inline Partition partition_from_beta(std::vector<int> beta) {
  std::sort(beta.begin(), beta.end(), std::greater<int>());
  const int L = static_cast<int>(beta.size());
  std::vector<int> parts;
  for (int i = 0; i < L; ++i) {
    const int p = beta[i] - (L - 1 - i);
    if (p > 0) parts.push_back(p);
  }
  return Partition(parts);
}

inline double mn_character(const Partition& lam, std::vector<int> mu,
                           std::map<std::pair<std::vector<int>, std::vector<int>>,
                                    double>& memo);

inline double mn_character_impl(
    const Partition& lam, std::vector<int> mu,
    std::map<std::pair<std::vector<int>, std::vector<int>>, double>& memo) {
  if (mu.empty()) return lam.length() == 0 ? 1.0 : 0.0;
  const int r = mu.front();
  std::vector<int> rest(mu.begin() + 1, mu.end());

  const int L = lam.length();
  std::vector<int> beta(L);
  for (int i = 0; i < L; ++i) beta[i] = lam.parts[i] + (L - 1 - i);

  double total = 0.0;
  for (int k = 0; k < L; ++k) {
    const int target = beta[k] - r;
    if (target < 0) continue;
    bool occupied = false;
    int crossings = 0;
    for (int j = 0; j < L; ++j) {
      if (j == k) continue;
      if (beta[j] == target) occupied = true;
      if (beta[j] > target && beta[j] < beta[k]) ++crossings;
    }
    if (occupied) continue;
    std::vector<int> nb = beta;
    nb[k] = target;
    const double sign = (crossings % 2 == 0) ? 1.0 : -1.0;
    total += sign * mn_character(partition_from_beta(std::move(nb)), rest, memo);
  }
  return total;
}

inline double mn_character(
    const Partition& lam, std::vector<int> mu,
    std::map<std::pair<std::vector<int>, std::vector<int>>, double>& memo) {
  const auto key = std::make_pair(lam.parts, mu);
  if (const auto it = memo.find(key); it != memo.end()) return it->second;
  const double v = mn_character_impl(lam, std::move(mu), memo);
  memo.emplace(key, v);
  return v;
}

}  // namespace detail

// Character chi^lam evaluated on the conjugacy class of cycle type mu.
inline double character(const Partition& lam, const Partition& mu) {
  if (lam.sum() != mu.sum()) {
    throw InvalidParameter("character: |lambda| and |mu| must agree");
  }
  static std::map<std::pair<std::vector<int>, std::vector<int>>, double> memo;
  static std::mutex memo_mutex;
  const std::lock_guard<std::mutex> lock(memo_mutex);
  return detail::mn_character(lam, mu.parts, memo);
}

// Cycle type of a permutation given as 0-based position map.
inline Partition cycle_type(const std::vector<int>& pi) {
  const int n = static_cast<int>(pi.size());
  std::vector<bool> seen(n, false);
  std::vector<int> cycles;
  for (int s = 0; s < n; ++s) {
    if (seen[s]) continue;
    int len = 0;
    int x = s;
    while (!seen[x]) {
      seen[x] = true;
      x = pi[x];
      ++len;
    }
    cycles.push_back(len);
  }
  std::sort(cycles.begin(), cycles.end(), std::greater<int>());
  return Partition(cycles);
}

// Size of the conjugacy class with cycle type mu in S_t: t! / z_mu.
inline double conjugacy_class_size(const Partition& mu) {
  double z = 1.0;
  int run = 0;
  int prev = -1;
  for (const int p : mu.parts) {
    z *= p;
    if (p == prev) {
      ++run;
      z *= run;
    } else {
      prev = p;
      run = 1;
    }
  }
  return factorial(mu.sum()) / z;
}

// ---------------------------------------------------------------------------
// Isotypic (central Young) projectors on (C^d)^{ox t}, cached per (d, t):
// P_lam = (dim_lam / t!) sum_pi chi^lam(type(pi)) V_d(pi).
// ---------------------------------------------------------------------------
inline const std::vector<std::pair<Partition, Mat>>& isotypic_projectors(int d,
                                                                         int t) {
  if (d < 1 || t < 1) throw InvalidParameter("isotypic_projectors: d, t >= 1");
  static std::map<std::pair<int, int>, std::vector<std::pair<Partition, Mat>>>
      cache;
  static std::mutex cache_mutex;
  const std::lock_guard<std::mutex> lock(cache_mutex);
  const auto key = std::make_pair(d, t);
  if (const auto it = cache.find(key); it != cache.end()) return it->second;

  const std::size_t total =
      checked_pow(static_cast<std::size_t>(d), t, dim_cap(), "isotypic_projectors");
  const auto lams = partitions(t);
  // Characters indexed by cycle type, precomputed once.
  std::map<std::vector<int>, std::vector<double>> chi_by_type;
  for (const auto& mu : lams) {
    auto& col = chi_by_type[mu.parts];
    col.resize(lams.size());
    for (std::size_t li = 0; li < lams.size(); ++li) {
      col[li] = character(lams[li], mu);
    }
  }
  std::vector<std::pair<Partition, Mat>> projs;
  projs.reserve(lams.size());
  for (const auto& lam : lams) projs.emplace_back(lam, Mat::Zero(total, total));

  std::vector<int> pi(t);
  std::iota(pi.begin(), pi.end(), 0);
  do {
    const auto image = permutation_basis_image(d, pi);
    const auto& chis = chi_by_type.at(cycle_type(pi).parts);
    for (std::size_t li = 0; li < lams.size(); ++li) {
      if (chis[li] == 0.0) continue;
      auto& p = projs[li].second;
      for (std::size_t j = 0; j < total; ++j) p(image[j], j) += chis[li];
    }
  } while (std::next_permutation(pi.begin(), pi.end()));

  const double tfact = factorial(t);
  for (std::size_t li = 0; li < lams.size(); ++li) {
    projs[li].second *= irrep_dimension(lams[li]) / tfact;
  }
  auto [it, inserted] = cache.emplace(key, std::move(projs));
  return it->second;
}

inline Mat isotypic_projector(int d, const Partition& lam) {
  const auto& projs = isotypic_projectors(d, lam.sum());
  for (const auto& [l, p] : projs) {
    if (l == lam) return p;
  }
  throw InvalidParameter("isotypic_projector: partition does not divide t");
}

// ---------------------------------------------------------------------------
// Weak Schur sampling: measure {P_lam} on rho^{ox t}.
// ---------------------------------------------------------------------------
struct SchurOutcome {
  Partition lam;
  double prob = 0.0;
  Mat conditional;  // P rho^{ox t} P / prob on (C^d)^{ox t}
};

// Full outcome table; entries with probability below `min_prob` keep their
// probability but drop the conditional block (it is numerically undefined
// when prob = 0, e.g. partitions taller than the state's dimension).
inline std::vector<SchurOutcome> schur_outcomes(const Mat& rho, int t,
                                                double min_prob = 1e-14) {
  require_density(rho, "schur_outcomes", 1e-8, 1e-8, 1e-8);
  const int d = static_cast<int>(rho.rows());
  const Mat rho_t = kron_pow(rho, t);
  std::vector<SchurOutcome> out;
  double psum = 0.0;
  for (const auto& [lam, proj] : isotypic_projectors(d, t)) {
    SchurOutcome o;
    o.lam = lam;
    const Mat prp = proj * rho_t * proj;
    o.prob = prp.trace().real();
    if (o.prob > min_prob) {
      o.conditional = prp / o.prob;
      // Exact Hermitization of the conditional block.
      o.conditional = ((o.conditional + o.conditional.adjoint()) / 2.0).eval();
    }
    psum += o.prob;
    out.push_back(std::move(o));
  }
  if (std::abs(psum - 1.0) > 1e-8) {
    throw ConstructionError("schur_outcomes: projector probabilities sum to " +
                            std::to_string(psum));
  }
  return out;
}

inline const SchurOutcome& sample_schur_outcome(
    const std::vector<SchurOutcome>& outcomes, RngStream& rng) {
  std::vector<double> w;
  w.reserve(outcomes.size());
  for (const auto& o : outcomes) w.push_back(o.prob);
  return outcomes[rng.discrete(w)];
}

struct SchurSample {
  Partition lam;
  double prob = 0.0;
  Mat conditional;
};

inline SchurSample weak_schur_sample(const Mat& rho, int t, RngStream& rng) {
  const auto outcomes = schur_outcomes(rho, t);
  const auto& o = sample_schur_outcome(outcomes, rng);
  return {o.lam, o.prob, o.conditional};
}

// E[l(lambda)] under weak Schur sampling; always <= min(2 sqrt(t), d).
inline double expected_partition_length(const Mat& rho, int t) {
  double acc = 0.0;
  for (const auto& o : schur_outcomes(rho, t)) {
    acc += o.prob * o.lam.length();
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Haar moment oracle. For the symmetric-subspace POVM with density
// d[n] <psi^{ox n}| Psi |psi^{ox n}> against Haar on C^D (Psi a state on the
// symmetric subspace of (C^D)^{ox n}), the k-th outcome moment is
//   E[(psi psi)^{ox k}] = (d[n]/d[n+k]) tr_{1..n}((Psi ox I^{ox k})
//                          Pi_sym^{(n+k)}),
// evaluated here by per-permutation accumulation so the (n+k)-register
// projector is never materialized.
// ---------------------------------------------------------------------------
inline Mat haar_moment_oracle(const Mat& psi_sym, int D, int n, int k) {
  if (D < 1 || n < 1 || k < 1) {
    throw InvalidParameter("haar_moment_oracle: D, n, k must be >= 1");
  }
  const std::size_t dim_n =
      checked_pow(static_cast<std::size_t>(D), n, dim_cap(), "haar_moment_oracle n");
  const std::size_t dim_nk = checked_pow(static_cast<std::size_t>(D), n + k,
                                         oracle_dim_cap(), "haar_moment_oracle n+k");
  if (static_cast<std::size_t>(psi_sym.rows()) != dim_n ||
      static_cast<std::size_t>(psi_sym.cols()) != dim_n) {
    throw ShapeError("haar_moment_oracle: Psi must be D^n x D^n");
  }
  // Precondition: Psi is supported on the symmetric subspace. Equivalent to
  // invariance under the adjacent-transposition generators.
  const double scale = std::max(1.0, psi_sym.cwiseAbs().maxCoeff());
  for (int g = 0; g + 1 < n; ++g) {
    std::vector<int> tau(n);
    std::iota(tau.begin(), tau.end(), 0);
    std::swap(tau[g], tau[g + 1]);
    const auto image = permutation_basis_image(D, tau);
    double defect = 0.0;
    for (std::size_t j = 0; j < dim_n; ++j) {
      for (std::size_t i = 0; i < dim_n; ++i) {
        defect = std::max(defect, std::abs(psi_sym(image[i], j) - psi_sym(i, j)));
      }
    }
    if (defect > 1e-8 * scale) {
      throw PreconditionError(
          "haar_moment_oracle: input not supported on the symmetric subspace "
          "(defect " + std::to_string(defect) + ")");
    }
  }

  const std::size_t dim_k = dim_nk / dim_n;
  Mat acc = Mat::Zero(dim_k, dim_k);
  std::vector<int> pi(n + k);
  std::iota(pi.begin(), pi.end(), 0);
  do {
    const auto image =
        permutation_basis_image(D, pi, /*cap=*/oracle_dim_cap());
    for (std::size_t j = 0; j < dim_nk; ++j) {
      const std::size_t r = j / dim_k;
      const std::size_t b = j % dim_k;
      const std::size_t w = image[j];
      acc(w % dim_k, b) += psi_sym(r, w / dim_k);
    }
  } while (std::next_permutation(pi.begin(), pi.end()));

  const double norml =
      sym_dim(D, n) / (sym_dim(D, n + k) * factorial(n + k));
  return (acc * norml).eval();
}

// ---------------------------------------------------------------------------
// GL-part (Weyl module) compression. The image of the Young symmetrizer
// y_lam = (sum_{p in Row}) (sum_{q in Col} sgn(q)) of the row-major standard
// filling is a single copy of the Weyl module inside (C^d)^{ox t};
// orthonormalizing it gives an isometry U with U^dag U = I_{m_lam(d)}.
// Compressed gl(d) generators g_ab = U^dag G_ab U (G_ab = sum_i E_ab^{(i)})
// satisfy sum_ab g_ab g_ba = (t d + 2 c(lam)) I.
// ---------------------------------------------------------------------------
namespace detail {

// Enumerates the subgroup of S_t preserving the blocks of `groups` (each a
// list of positions), calling fn(perm, sign) for every element.
template <typename Fn>
void for_each_block_permutation(int t, const std::vector<std::vector<int>>& groups,
                                bool with_sign, Fn&& fn) {
  std::vector<int> base(t);
  std::iota(base.begin(), base.end(), 0);
  // Backtracking over the product of per-block permutations.
  std::vector<std::vector<int>> perms_per_group;
  for (const auto& g : groups) {
    std::vector<int> idx(g.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<std::vector<int>> all;
    do {
      all.push_back(idx);
    } while (std::next_permutation(idx.begin(), idx.end()));
    perms_per_group.push_back({});
    perms_per_group.back().reserve(all.size() * g.size());
    for (const auto& a : all) {
      for (const int v : a) perms_per_group.back().push_back(v);
    }
  }
  std::vector<std::size_t> choice(groups.size(), 0);
  while (true) {
    std::vector<int> pi = base;
    int inversions = 0;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto& g = groups[gi];
      const int gs = static_cast<int>(g.size());
      const int* arr = perms_per_group[gi].data() + choice[gi] * gs;
      for (int a = 0; a < gs; ++a) pi[g[a]] = g[arr[a]];
      if (with_sign) {
        for (int a = 0; a < gs; ++a) {
          for (int b = a + 1; b < gs; ++b) {
            if (arr[a] > arr[b]) ++inversions;
          }
        }
      }
    }
    fn(pi, (inversions % 2 == 0) ? 1.0 : -1.0);
    std::size_t gi = 0;
    for (; gi < groups.size(); ++gi) {
      const std::size_t count = perms_per_group[gi].size() / groups[gi].size();
      if (++choice[gi] < count) break;
      choice[gi] = 0;
    }
    if (gi == groups.size()) break;
  }
}

}  // namespace detail

struct GlBlock {
  Partition lam;
  double sn_dim = 0.0;    // dim of the S_t irrep
  int gl_dim = 0;         // m_lam(d), the Weyl module dimension
  Mat isometry;           // d^t x m_lam(d), orthonormal columns
  std::vector<Mat> gen;   // d*d compressed generators, gen[a*d+b] = U^dag G_ab U
};

inline GlBlock gl_block(const Partition& lam, int d) {
  const int t = lam.sum();
  if (lam.length() > d) {
    throw InvalidParameter("gl_block: partition taller than local dimension");
  }
  const std::size_t total =
      checked_pow(static_cast<std::size_t>(d), t, dim_cap(), "gl_block");

  // Row-major standard filling: rows and columns as position groups.
  std::vector<std::vector<int>> rows(lam.length());
  std::vector<std::vector<int>> cols(lam.parts.empty() ? 0 : lam.parts[0]);
  {
    int pos = 0;
    for (int i = 0; i < lam.length(); ++i) {
      for (int j = 0; j < lam.parts[i]; ++j) {
        rows[i].push_back(pos);
        cols[j].push_back(pos);
        ++pos;
      }
    }
  }

  // y = (row symmetrizer) * (signed column antisymmetrizer); build densely by
  // scattering the composed permutations.
  Mat y = Mat::Zero(total, total);
  detail::for_each_block_permutation(
      t, rows, /*with_sign=*/false, [&](const std::vector<int>& p, double) {
        detail::for_each_block_permutation(
            t, cols, /*with_sign=*/true,
            [&](const std::vector<int>& q, double sgn) {
              std::vector<int> pq(t);
              for (int x = 0; x < t; ++x) pq[x] = p[q[x]];
              const auto image = permutation_basis_image(d, pq);
              for (std::size_t j = 0; j < total; ++j) y(image[j], j) += sgn;
            });
      });

  GlBlock blk;
  blk.lam = lam;
  blk.sn_dim = irrep_dimension(lam);
  blk.gl_dim = static_cast<int>(weyl_dim(lam, d));

  // Orthonormal basis of the column space via column-pivoted QR.
  Eigen::ColPivHouseholderQR<Mat> qr(y);
  qr.setThreshold(1e-9);
  const int rank = static_cast<int>(qr.rank());
  if (rank != blk.gl_dim) {
    throw ConstructionError("gl_block: Young symmetrizer rank " +
                            std::to_string(rank) + " != Weyl dimension " +
                            std::to_string(blk.gl_dim) + " for " + lam.str());
  }
  Mat q = qr.householderQ();
  blk.isometry = q.leftCols(rank);

  // Compressed generators g_ab = U^dag (G_ab U).
  blk.gen.resize(static_cast<std::size_t>(d) * d);
  std::vector<int> digits(t);
  const std::vector<int> dims(t, d);
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b < d; ++b) {
      Mat gu = Mat::Zero(total, rank);
      for (std::size_t j = 0; j < total; ++j) {
        mixed_radix_digits(j, dims, digits);
        for (int i = 0; i < t; ++i) {
          if (digits[i] != b) continue;
          std::vector<int> moved = digits;
          moved[i] = a;
          gu.row(mixed_radix_index(moved, dims)) += blk.isometry.row(j);
        }
      }
      blk.gen[static_cast<std::size_t>(a) * d + b] = blk.isometry.adjoint() * gu;
    }
  }
  return blk;
}

// Cached GL blocks for all partitions of t with length <= d.
inline const std::vector<GlBlock>& gl_blocks(int d, int t) {
  static std::map<std::pair<int, int>, std::vector<GlBlock>> cache;
  static std::mutex cache_mutex;
  const std::lock_guard<std::mutex> lock(cache_mutex);
  const auto key = std::make_pair(d, t);
  if (const auto it = cache.find(key); it != cache.end()) return it->second;
  std::vector<GlBlock> blocks;
  for (const auto& lam : partitions(t)) {
    if (lam.length() <= d) blocks.push_back(gl_block(lam, d));
  }
  auto [it, inserted] = cache.emplace(key, std::move(blocks));
  return it->second;
}

// Weak Schur sampling probabilities via the GL route: p_lam = dim_lam *
// tr(U^dag rho^{ox t} U). Avoids t!-size projector builds at larger t.
inline std::vector<double> gl_block_probabilities(const Mat& rho_t, int d, int t) {
  const auto& blocks = gl_blocks(d, t);
  std::vector<double> probs;
  probs.reserve(blocks.size());
  double sum = 0.0;
  for (const auto& blk : blocks) {
    const double p =
        blk.sn_dim *
        (blk.isometry.adjoint() * rho_t * blk.isometry).trace().real();
    probs.push_back(std::max(p, 0.0));
    sum += probs.back();
  }
  if (std::abs(sum - 1.0) > 1e-8) {
    throw ConstructionError("gl_block_probabilities: probabilities sum to " +
                            std::to_string(sum));
  }
  return probs;
}

}  // namespace qcertlab
