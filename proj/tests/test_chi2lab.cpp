#include <catch2/catch_amalgamated.hpp>

#include "qcertlab/chi2lab.hpp"

using namespace qcertlab;

namespace {

std::vector<int> signs_from_bits(std::size_t bits, int ell) {
  std::vector<int> z(ell);
  for (int i = 0; i < ell; ++i) z[i] = (bits >> i) & 1u ? 1 : -1;
  return z;
}

HardInstanceEnsemble gm_ensemble(int d, int ell, double eps,
                                 double c = kDefaultHardInstanceC) {
  return {d, ell, eps, gell_mann_basis(d), c};
}

// A basis for d=2 with the diagonal direction first, handy for scenarios
// where the computational POVM must see the perturbation.
std::vector<Mat> z_first_basis() {
  std::vector<Mat> gm = gell_mann_basis(2);  // X', Y', Z', I'
  std::swap(gm[0], gm[2]);
  return gm;
}

}  // namespace

TEST_CASE("vec and unvec use column stacking") {
  Mat m(2, 2);
  m << cx(1, 0), cx(2, 0), cx(3, 0), cx(4, 0);
  const Vec v = vec_col(m);
  REQUIRE(v[0] == cx(1, 0));
  REQUIRE(v[1] == cx(3, 0));  // (row 1, col 0) at index 1 + 2*0
  REQUIRE(v[2] == cx(2, 0));
  REQUIRE(v[3] == cx(4, 0));
  REQUIRE((unvec_col(v, 2) - m).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE_THROWS_AS(unvec_col(v, 3), ShapeError);
}

TEST_CASE("Gell-Mann basis is orthonormal with the identity last") {
  for (int d : {2, 3, 4}) {
    const auto basis = gell_mann_basis(d);
    REQUIRE(static_cast<int>(basis.size()) == d * d);
    for (int i = 0; i < d * d; ++i) {
      REQUIRE(hermiticity_defect(basis[i]) < 1e-14);
      if (i < d * d - 1) REQUIRE(std::abs(basis[i].trace()) < 1e-14);
      for (int j = i; j < d * d; ++j) {
        const cx ip = (basis[i].adjoint() * basis[j]).trace();
        REQUIRE(std::abs(ip - (i == j ? 1.0 : 0.0)) < 1e-12);
      }
    }
    REQUIRE((basis.back() - identity(d) / std::sqrt(double(d)))
                .cwiseAbs()
                .maxCoeff() < 1e-14);
  }
}

TEST_CASE("rank-1 POVMs enforce completeness") {
  RngStream rng(31, 0, "povm");
  const RankOnePovm comp = computational_povm(3);
  REQUIRE(comp.outcomes() == 3);
  for (int k : {2, 4, 6}) {
    const RankOnePovm p = random_rank1_povm(2, k, rng);
    Mat acc = Mat::Zero(2, 2);
    for (const Vec& v : p.vectors) acc += v * v.adjoint();
    REQUIRE((acc - identity(2)).cwiseAbs().maxCoeff() < 1e-9);
  }
  std::vector<Vec> bad = computational_povm(2).vectors;
  bad.pop_back();
  REQUIRE_THROWS_AS(RankOnePovm(2, bad), InvalidParameter);
  REQUIRE_THROWS_AS(random_rank1_povm(3, 2, rng), InvalidParameter);
}

TEST_CASE("Lüders channel of the computational basis dephases") {
  for (int d : {2, 3}) {
    const Superoperator h = lueders_channel(computational_povm(d));
    const auto [evals, evecs] = eigh(h.liouville);
    int units = 0;
    for (int i = 0; i < evals.size(); ++i) {
      if (std::abs(evals[i] - 1.0) < 1e-10) ++units;
      else REQUIRE(std::abs(evals[i]) < 1e-10);
    }
    REQUIRE(units == d);
    REQUIRE(h.liouville.trace().real() == Catch::Approx(double(d)).margin(1e-10));
    RngStream rng(32, d, "dephase");
    const Mat a = random_density(d, d, rng);
    const Mat ha = h.apply(a);
    REQUIRE((ha - Mat(a.diagonal().asDiagonal())).cwiseAbs().maxCoeff() <
            1e-12);
  }
}

TEST_CASE("Lüders channels satisfy the spectral axioms") {
  RngStream rng(33, 0, "lueders-axioms");
  const auto gm = gell_mann_basis(2);
  for (int rep = 0; rep < 10; ++rep) {
    const RankOnePovm povm = random_rank1_povm(2, 2 + rep % 5, rng);
    const Superoperator h = lueders_channel(povm);
    REQUIRE(hermiticity_defect(h.liouville) < 1e-10);
    const auto [evals, evecs] = eigh(h.liouville);
    REQUIRE(evals.minCoeff() > -1e-9);
    REQUIRE(evals.maxCoeff() < 1.0 + 1e-9);
    REQUIRE(std::abs(h.liouville.trace().real() - povm.dim) < 1e-8);
    REQUIRE((h.apply(identity(2)) - identity(2)).cwiseAbs().maxCoeff() <
            1e-10);
    for (const Mat& g : gm) {  // Hermiticity preservation
      REQUIRE(hermiticity_defect(h.apply(g)) < 1e-12);
    }
  }
}

TEST_CASE("induced channel reduces to the Lüders channel at t=1") {
  RngStream rng(34, 0, "induced-t1");
  const RankOnePovm povm = random_rank1_povm(2, 4, rng);
  const Superoperator h = lueders_channel(povm);
  const Superoperator ht = induced_channel(h, 2, 1);
  REQUIRE((ht.liouville - h.liouville).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("induced channels satisfy the trace and spectrum axioms") {
  RngStream rng(35, 0, "induced-axioms");
  for (int rep = 0; rep < 10; ++rep) {
    const RankOnePovm povm = random_rank1_povm(4, 4 + rep % 4, rng);
    const Superoperator h = lueders_channel(povm);
    const Superoperator ht = induced_channel(h, 2, 2);
    REQUIRE(ht.dim == 2);
    REQUIRE(hermiticity_defect(ht.liouville) < 1e-10);
    const auto [evals, evecs] = eigh(ht.liouville);
    REQUIRE(evals.minCoeff() > -1e-9);
    REQUIRE(evals.maxCoeff() < 1.0 + 1e-9);
    REQUIRE(ht.liouville.trace().real() < 2.0 + 1e-8);
    REQUIRE((ht.apply(identity(2)) - identity(2)).cwiseAbs().maxCoeff() <
            1e-9);
  }
}

TEST_CASE("outcome distributions match direct substitution") {
  RngStream rng(36, 0, "outcomes");
  const RankOnePovm povm = random_rank1_povm(4, 5, rng);
  const RVec q = outcome_distribution(povm, maximally_mixed(2), 2);
  for (std::size_t x = 0; x < povm.outcomes(); ++x) {
    REQUIRE(q[x] ==
            Catch::Approx(povm.vectors[x].squaredNorm() / 4.0).margin(1e-12));
  }
  Mat rho = Mat::Zero(2, 2);
  rho(0, 0) = 0.7;
  rho(1, 1) = 0.3;
  const RVec p = outcome_distribution(computational_povm(2), rho, 1);
  REQUIRE(p[0] == Catch::Approx(0.7));
  REQUIRE(p[1] == Catch::Approx(0.3));
  REQUIRE_THROWS_AS(outcome_distribution(povm, rho, 1), ShapeError);
}

TEST_CASE("hard instances are valid states with the clamp geometry") {
  RngStream rng(37, 0, "hard-instance");
  SECTION("clamp inactive at small eps") {
    const auto ens = gm_ensemble(2, 3, 0.01);
    const HardInstance inst = hard_instance(ens, {1, -1, 1});
    REQUIRE(inst.a == 1.0);
    const Mat delta = ens.direction({1, -1, 1});
    REQUIRE((inst.rho - maximally_mixed(2) - delta).cwiseAbs().maxCoeff() <
            1e-14);
  }
  SECTION("random signs give valid densities") {
    for (int d : {2, 3}) {
      const auto ens = gm_ensemble(d, d * d - 1, 1.5);
      for (int rep = 0; rep < 50; ++rep) {
        std::vector<int> z(ens.ell);
        for (int& zi : z) zi = rng.uniform() < 0.5 ? -1 : 1;
        const HardInstance inst = hard_instance(ens, z);
        REQUIRE_NOTHROW(require_density(inst.rho, "hard instance"));
        REQUIRE(std::abs(inst.rho.trace().real() - 1.0) < 1e-12);
      }
    }
  }
  SECTION("almost-eps perturbation at the default scale") {
    const auto ens = gm_ensemble(3, 5, 0.05);
    int far = 0;
    for (std::size_t b = 0; b < 32; ++b) {
      const HardInstance inst = hard_instance(ens, signs_from_bits(b, 5));
      if (trace_norm(inst.rho - maximally_mixed(3)) >= 0.05) ++far;
    }
    REQUIRE(far >= 16);
  }
  SECTION("invalid bases are rejected") {
    auto bad = gell_mann_basis(2);
    bad[0] *= 1.1;
    REQUIRE_THROWS_AS(HardInstanceEnsemble(2, 2, 0.1, bad), InvalidParameter);
    REQUIRE_THROWS_AS(gm_ensemble(2, 4, 0.1), InvalidParameter);
    auto rotated = gell_mann_basis(2);
    std::swap(rotated[1], rotated[3]);  // identity not last
    REQUIRE_THROWS_AS(HardInstanceEnsemble(2, 2, 0.1, rotated),
                      InvalidParameter);
  }
}

TEST_CASE("chi2_exact matches a scalar two-point mixture pipeline") {
  const auto ens = HardInstanceEnsemble(2, 1, 0.2, z_first_basis(), 1.0);
  const std::vector<RankOnePovm> schedule = {computational_povm(2)};
  // rho_z = diag(1/2 + g z, 1/2 - g z) with g = c eps / (sqrt(d ell) sqrt(2)).
  const double g = 0.2 / (std::sqrt(2.0) * std::sqrt(2.0));
  for (int n : {1, 2, 3}) {
    double chi2 = 0.0;
    std::vector<int> x(n, 0);
    while (true) {
      double pbar = 0.0;
      for (int zi : {1, -1}) {
        double prod = 1.0;
        for (int i = 0; i < n; ++i) {
          prod *= (x[i] == 0) ? 0.5 + g * zi : 0.5 - g * zi;
        }
        pbar += 0.5 * prod;
      }
      const double q = std::pow(0.5, n);
      chi2 += (pbar - q) * (pbar - q) / q;
      int pos = n - 1;
      while (pos >= 0 && ++x[pos] == 2) {
        x[pos] = 0;
        --pos;
      }
      if (pos < 0) break;
    }
    INFO("n=" << n);
    REQUIRE(chi2_exact(ens, schedule, n, 1) ==
            Catch::Approx(chi2).margin(1e-14));
  }
}

TEST_CASE("chi2_exact is zero at eps=0 and monotone in the round count") {
  const auto zero = HardInstanceEnsemble(2, 2, 0.0, z_first_basis(), 1.0);
  const std::vector<RankOnePovm> schedule = {computational_povm(2)};
  REQUIRE(chi2_exact(zero, schedule, 2, 1) == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(ingster_suslina_bound(zero, schedule, 2, 1) ==
          Catch::Approx(0.0).margin(1e-14));

  const auto ens = HardInstanceEnsemble(2, 2, 0.3, z_first_basis(), 1.0);
  double prev = 0.0;
  for (int n : {1, 2, 3}) {
    const double cur = chi2_exact(ens, schedule, n, 1);
    REQUIRE(cur >= prev - 1e-14);
    prev = cur;
  }
  REQUIRE(prev > 1e-6);
}

TEST_CASE("chi2_exact equals the product-form enumeration over sign pairs") {
  RngStream rng(38, 0, "product-form");
  const auto ens = HardInstanceEnsemble(2, 3, 0.4, z_first_basis(), 1.0);
  const std::vector<RankOnePovm> schedule = {random_rank1_povm(2, 3, rng),
                                             random_rank1_povm(2, 4, rng)};
  const int n = 3;
  std::vector<Mat> rhos;
  for (std::size_t b = 0; b < 8; ++b) {
    rhos.push_back(hard_instance(ens, signs_from_bits(b, 3)).rho);
  }
  double acc = 0.0;
  for (std::size_t b = 0; b < 8; ++b) {
    for (std::size_t bp = 0; bp < 8; ++bp) {
      double prod = 1.0;
      for (int i = 0; i < n; ++i) {
        prod *= 1.0 + phi_likelihood(schedule[i % 2], rhos[b], rhos[bp], 1);
      }
      acc += prod / 64.0;
    }
  }
  REQUIRE(chi2_exact(ens, schedule, n, 1) ==
          Catch::Approx(acc - 1.0).margin(1e-12));
}

TEST_CASE("Ingster-Suslina bound dominates the exact chi-square") {
  RngStream rng(39, 0, "is-bound");
  for (int rep = 0; rep < 12; ++rep) {
    const int t = 1 + rep % 2;
    const int n = 1 + rep % 3;
    const int ell = 1 + rep % 3;
    const int bigd = t == 1 ? 2 : 4;
    const auto ens = HardInstanceEnsemble(2, ell, 0.25 + 0.05 * (rep % 4),
                                          z_first_basis(), 1.0);
    std::vector<RankOnePovm> schedule;
    schedule.push_back(random_rank1_povm(bigd, bigd + rep % 3, rng));
    if (rep % 2 == 1) {
      schedule.push_back(random_rank1_povm(bigd, bigd + 2, rng));
    }
    const double exact = chi2_exact(ens, schedule, n, t);
    const double bound = ingster_suslina_bound(ens, schedule, n, t);
    INFO("rep=" << rep << " t=" << t << " n=" << n << " ell=" << ell
                << " exact=" << exact << " bound=" << bound);
    REQUIRE(bound >= exact - 1e-12);
  }
}

TEST_CASE("likelihood-ratio phi equals the Lüders-route identity") {
  RngStream rng(40, 0, "phi-identity");
  for (int t : {1, 2}) {
    const int bigd = t == 1 ? 2 : 4;
    const auto ens = gm_ensemble(2, 3, 0.3, 1.0);
    const RankOnePovm povm = random_rank1_povm(bigd, bigd + 2, rng);
    const Superoperator h = lueders_channel(povm);
    for (int rep = 0; rep < 5; ++rep) {
      std::vector<int> z(3), zp(3);
      for (int i = 0; i < 3; ++i) {
        z[i] = rng.uniform() < 0.5 ? -1 : 1;
        zp[i] = rng.uniform() < 0.5 ? -1 : 1;
      }
      const Mat r1 = hard_instance(ens, z).rho;
      const Mat r2 = hard_instance(ens, zp).rho;
      const double via_q = phi_likelihood(povm, r1, r2, t);
      const double via_h = phi_lueders(h, r1, r2, t);
      INFO("t=" << t << " rep=" << rep);
      REQUIRE(std::abs(via_q - via_h) < 1e-10);
    }
  }
}

TEST_CASE("linearized decomposition reconstructs the t-copy perturbation") {
  RngStream rng(41, 0, "linearized");
  for (int d : {2, 3}) {
    for (int t : {1, 2, 3}) {
      if (std::pow(d, t) > 27) continue;
      const int bigd = static_cast<int>(std::pow(d, t));
      const auto ens = gm_ensemble(d, d * d - 1, 0.4, 1.0);
      const RankOnePovm povm = random_rank1_povm(bigd, bigd + 1, rng);
      const Superoperator h = lueders_channel(povm);
      std::vector<int> z(ens.ell, 1), zp(ens.ell, -1);
      zp[0] = 1;
      const LinearizedTerms terms = linearized_terms(ens, h, z, zp, t);
      const double direct =
          phi_lueders(h, hard_instance(ens, z).rho,
                      hard_instance(ens, zp).rho, t) /
          std::pow(static_cast<double>(d), t);
      INFO("d=" << d << " t=" << t);
      REQUIRE(terms.sum() == Catch::Approx(direct).margin(1e-10));
      if (t == 1) {
        REQUIRE(terms.lh == 0.0);
        REQUIRE(terms.hl == 0.0);
        REQUIRE(terms.hh == 0.0);
      }
    }
  }
}

TEST_CASE("the linear-linear term reduces to the induced channel") {
  RngStream rng(42, 0, "ll-reduction");
  const int t = 2;
  const auto ens = gm_ensemble(2, 3, 0.9, 1.5);  // large eps: clamps active
  const RankOnePovm povm = random_rank1_povm(4, 5, rng);
  const Superoperator h = lueders_channel(povm);
  const Superoperator ht = induced_channel(h, 2, t);
  std::vector<int> z = {1, 1, -1};
  std::vector<int> zp = {-1, 1, 1};
  const HardInstance i1 = hard_instance(ens, z);
  const HardInstance i2 = hard_instance(ens, zp);
  REQUIRE(i1.a < 1.0);  // ensure the clamp really participates
  const LinearizedTerms terms = linearized_terms(ens, h, z, zp, t);
  const double reduced =
      i1.a * i2.a * t * t / 2.0 *
      (ens.direction(z).adjoint() * ht.apply(ens.direction(zp)))
          .trace()
          .real();
  REQUIRE(terms.ll == Catch::Approx(reduced).margin(1e-10));
}

TEST_CASE("the nonlinear remainder decays at the cubic rate") {
  RngStream rng(43, 0, "cubic-rate");
  const RankOnePovm povm = random_rank1_povm(4, 6, rng);
  const Superoperator h = lueders_channel(povm);
  const std::vector<int> z = {1, 1};
  const std::vector<int> zp = {1, -1};
  std::vector<double> eps_grid, resid;
  for (int k = 0; k <= 4; ++k) {
    const double eps = 0.5 * std::pow(0.5, k);
    const auto ens = gm_ensemble(2, 2, eps, 0.5);
    const LinearizedTerms terms = linearized_terms(ens, h, z, zp, 2);
    eps_grid.push_back(eps);
    resid.push_back(std::abs(terms.nonlinear()));
  }
  REQUIRE(resid.back() > 1e-14);  // the eps^3 coefficient is present
  // Least-squares slope of log2|N| against log2 eps.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    const double x = std::log2(eps_grid[i]);
    const double y = std::log2(resid[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double npts = static_cast<double>(eps_grid.size());
  const double slope = (npts * sxy - sx * sy) / (npts * sxx - sx * sx);
  INFO("slope=" << slope);
  REQUIRE(slope >= 2.7);
  REQUIRE(slope <= 3.3);
}

TEST_CASE("adversarial basis finds the dephasing kernel") {
  const Superoperator h = lueders_channel(computational_povm(2));
  const Superoperator ht = induced_channel(h, 2, 1);
  const auto basis = adversarial_basis(ht, 2);
  REQUIRE(basis.size() == 4);
  REQUIRE((basis.back() - identity(2) / std::sqrt(2.0)).cwiseAbs().maxCoeff() <
          1e-12);
  for (int i = 0; i < 2; ++i) {  // selected ops live off the diagonal
    REQUIRE(std::abs(basis[i](0, 0)) < 1e-10);
    REQUIRE(std::abs(basis[i](1, 1)) < 1e-10);
  }
  REQUIRE(adversarial_compression_norm(ht, basis, 2) < 1e-10);
}

TEST_CASE("adversarial basis satisfies the eigenvalue and norm guarantees") {
  RngStream rng(44, 0, "adversarial");
  for (int rep = 0; rep < 10; ++rep) {
    const RankOnePovm povm = random_rank1_povm(2, 2 + rep % 4, rng);
    const Superoperator ht = induced_channel(lueders_channel(povm), 2, 1);
    const int ell = 2;  // d^2/2
    const auto basis = adversarial_basis(ht, ell);
    // Orthonormal Hermitian family, identity last.
    for (std::size_t i = 0; i < basis.size(); ++i) {
      REQUIRE(hermiticity_defect(basis[i]) < 1e-10);
      for (std::size_t j = i; j < basis.size(); ++j) {
        const cx ip = (basis[i].adjoint() * basis[j]).trace();
        REQUIRE(std::abs(ip - (i == j ? 1.0 : 0.0)) < 1e-9);
      }
    }
    const double small = adversarial_compression_norm(ht, basis, ell);
    REQUIRE(small <= std::sqrt(2.0) + 1e-9);
    for (int i = 0; i < ell; ++i) {
      const double lam =
          (basis[i].adjoint() * ht.apply(basis[i])).trace().real();
      REQUIRE(lam <= 2.0 / (4.0 - ell) + 1e-9);
    }
    // Sanity direction: the largest eigenvectors never compress better.
    Mat vbig(4, ell);
    for (int i = 0; i < ell; ++i) {
      vbig.col(i) = vec_col(basis[3 - 1 - i]);  // top of the traceless three
    }
    const Mat compressed = vbig.adjoint() * ht.liouville * vbig;
    const auto [evals, evecs] =
        eigh(((compressed + compressed.adjoint()) / 2.0).eval());
    const double big =
        std::max(std::abs(evals.minCoeff()), std::abs(evals.maxCoeff()));
    REQUIRE(big >= small - 1e-12);
    // Determinism under repeated construction.
    const auto again = adversarial_basis(ht, ell);
    for (std::size_t i = 0; i < basis.size(); ++i) {
      REQUIRE((basis[i] - again[i]).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("normalization removal costs at most 4 exp(-d)") {
  RngStream rng(45, 0, "norm-removal");
  for (int d : {2, 3}) {
    const int ell = d * d - 1;
    const auto ens = gm_ensemble(d, ell, 2.0, 2.0);  // clamps active
    bool clamped = false;
    for (std::size_t b = 0; b < (std::size_t{1} << ell); ++b) {
      if (hard_instance(ens, ens.signs(b)).a < 1.0) clamped = true;
    }
    REQUIRE(clamped);
    const RankOnePovm povm = random_rank1_povm(d, d + 2, rng);
    const Superoperator ht = induced_channel(lueders_channel(povm), d, 1);
    const auto check = normalization_removal_check(ens, ht, 1);
    INFO("d=" << d << " lhs=" << check.lhs << " rhs=" << check.rhs);
    REQUIRE(check.ok());
  }
  const auto big = gm_ensemble(4, 11, 0.1, 1.0);
  const Superoperator ht =
      induced_channel(lueders_channel(computational_povm(4)), 4, 1);
  REQUIRE_THROWS_AS(normalization_removal_check(big, ht, 1), ResourceLimit);
}

TEST_CASE("maxmin is never larger than minmax over small games") {
  RngStream rng(46, 0, "game-orders");
  std::vector<HardInstanceEnsemble> ensembles;
  ensembles.push_back(HardInstanceEnsemble(2, 2, 0.3, z_first_basis(), 1.0));
  ensembles.push_back(HardInstanceEnsemble(2, 3, 0.25, z_first_basis(), 1.0));
  std::vector<std::vector<RankOnePovm>> schedules;
  schedules.push_back({computational_povm(2)});
  schedules.push_back({random_rank1_povm(2, 4, rng)});
  const double lo = maxmin_is_bound(ensembles, schedules, 2, 1);
  const double hi = minmax_is_bound(ensembles, schedules, 2, 1);
  REQUIRE(lo <= hi + 1e-12);
}

TEST_CASE("chi2 budget limits are enforced") {
  const auto ens = HardInstanceEnsemble(2, 2, 0.3, z_first_basis(), 1.0);
  const std::vector<RankOnePovm> schedule = {computational_povm(2)};
  REQUIRE_THROWS_AS(chi2_exact(ens, schedule, 4, 1), ResourceLimit);
  REQUIRE_THROWS_AS(chi2_exact(ens, {}, 1, 1), InvalidParameter);
  RngStream rng(47, 0, "budget");
  const std::vector<RankOnePovm> wide = {random_rank1_povm(2, 17, rng)};
  REQUIRE_THROWS_AS(ingster_suslina_bound(ens, wide, 1, 1), ResourceLimit);
}
