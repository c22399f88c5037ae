#include <catch_amalgamated.hpp>

#include "tdwo/frames.hpp"

#include <numbers>
#include <random>

using namespace tdwo;
using Catch::Matchers::WithinAbs;

namespace {

constexpr double kT = 50.0;

TwoLevelModel at_point(double W, double D, double gamma = 0.5) {
  TwoLevelModel m;
  m.gamma = gamma;
  m.path = static_path(1.0, W, D);
  return m;
}

std::vector<double> random_times(int n, double T, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, T);
  std::vector<double> out;
  for (int k = 0; k < n; ++k) out.push_back(u(rng));
  return out;
}

bool near_ep(const TwoLevelModel& m, double t) { return std::abs(two_level_principal_root(m, t)) < 1e-3; }

// d/dt of a frame column on a fixed branch (w continued from the centre)
template <class Get>
CVector fd_column(const TwoLevelModel& m, double t, int f, double h, Get get) {
  const cplx w = two_level_w(m, t, f);
  const auto fp = two_level_frame(m, t + h, f, two_level_w_continuous(m, t + h, w), 0.0);
  const auto fm = two_level_frame(m, t - h, f, two_level_w_continuous(m, t - h, w), 0.0);
  return (get(fp) - get(fm)) / (2.0 * h);
}

} // namespace

TEST_CASE("standard path") {
  const auto p = standard_two_level_path(kT, 0.5);
  REQUIRE_THAT(p.coord1(0.0), WithinAbs(0.0, 1e-15));
  REQUIRE_THAT(p.coord2(0.0), WithinAbs(0.0, 1e-15));
  REQUIRE_THAT(p.coord1(kT / 4), WithinAbs(0.25, 1e-14));
  REQUIRE_THAT(p.coord2(kT / 4), WithinAbs(0.0, 1e-14));
  REQUIRE_THAT(p.coord1(kT / 2), WithinAbs(0.0, 1e-14));
  REQUIRE_THAT(p.coord2(kT / 2), WithinAbs(0.0, 1e-14));
  REQUIRE_THAT(p.coord1(kT), WithinAbs(p.coord1(0.0), 1e-14));
  REQUIRE_THAT(p.coord2(kT), WithinAbs(p.coord2(0.0), 1e-14));
  REQUIRE_THROWS_AS(standard_two_level_path(0.0, 0.5), PreconditionViolation);

  const double h = 1e-5;
  for (double t : random_times(100, kT, 7)) {
    const double d1 = (p.coord1(t + h) - p.coord1(t - h)) / (2 * h);
    const double d2 = (p.coord2(t + h) - p.coord2(t - h)) / (2 * h);
    REQUIRE(std::abs(d1 - p.coord1_dot(t)) <= 1e-6 * std::max(1e-3, std::abs(d1)));
    REQUIRE(std::abs(d2 - p.coord2_dot(t)) <= 1e-6 * std::max(1e-3, std::abs(d2)));
  }
}

TEST_CASE("molecular path derivatives") {
  const auto p = molecular_path(40000.0, 0.105, 0.10242, 0.0005);
  REQUIRE_THAT(p.coord1(0.0), WithinAbs(0.0, 1e-15));
  REQUIRE_THAT(p.coord2(0.0), WithinAbs(0.10242, 1e-15));
  const double h = 1e-1;
  for (double t : random_times(50, 40000.0, 9)) {
    const double d1 = (p.coord1(t + h) - p.coord1(t - h)) / (2 * h);
    REQUIRE(std::abs(d1 - p.coord1_dot(t)) <= 1e-6 * std::max(1e-6, std::abs(d1)));
  }
}

TEST_CASE("two-level Hamiltonian entries") {
  const CMatrix h0 = two_level_hamiltonian(at_point(0.0, 0.0), 0.0);
  REQUIRE(std::abs(h0(0, 0)) < 1e-15);
  REQUIRE(std::abs(h0(0, 1)) < 1e-15);
  REQUIRE(std::abs(h0(1, 1) - cplx(0, -0.125)) < 1e-15);

  const CMatrix hep = two_level_hamiltonian(at_point(0.125, 0.0), 0.0);
  REQUIRE(std::abs(hep(0, 1) - 0.0625) < 1e-15);
  REQUIRE(std::abs(hep(1, 0) - 0.0625) < 1e-15);
  REQUIRE(std::abs(hep(1, 1) - cplx(0, -0.125)) < 1e-15);

  const auto m = standard_two_level_model(kT);
  for (double t : random_times(100, kT, 1)) {
    if (near_ep(m, t)) continue;
    const CMatrix h = two_level_hamiltonian(m, t);
    for (int s : {+1, -1}) {
      const auto fr = two_level_frame(m, t, s, two_level_w(m, t, s), 0.0);
      REQUIRE(std::abs(fr.lambda0 + fr.lambda1 - h.trace()) < 1e-13);
      REQUIRE(std::abs(fr.lambda0 * fr.lambda1 - h.determinant()) < 1e-13);
    }
  }
}

TEST_CASE("two-level eigensystem closed forms") {
  {
    const auto es = two_level_eigensystem(at_point(0.0, 0.0), 0.0, +1);
    REQUIRE(std::abs(es.eigenvalues[0]) < 1e-15);
    REQUIRE(std::abs(es.eigenvalues[1] - cplx(0, -0.125)) < 1e-15);
  }
  REQUIRE_THROWS_AS(two_level_eigensystem(at_point(0.125, 0.0), 0.0, +1), ExceptionalPointProximity);
  // coalescence as the point approaches the EP
  double prev = 1.0;
  for (double eps : {1e-1, 1e-2, 1e-3}) {
    const auto es = two_level_eigensystem(at_point(0.125 + eps, 0.0), 0.0, +1);
    const double gap = std::abs(es.eigenvalues[1] - es.eigenvalues[0]);
    REQUIRE(gap < prev);
    prev = gap;
  }
  REQUIRE(prev < 0.02);

  const auto m = standard_two_level_model(kT);
  for (double t : random_times(100, kT, 2)) {
    if (near_ep(m, t)) continue;
    const CMatrix h = two_level_hamiltonian(m, t);
    for (int s : {+1, -1}) {
      BiorthonormalEigensystem es;
      try {
        es = two_level_eigensystem(m, t, s);
      } catch (const DenominatorDegenerate&) {
        continue; // that family's vectors vanish here
      }
      REQUIRE((es.dual * es.right - CMatrix::Identity(2, 2)).norm() < 1e-10);
      for (int i = 0; i < 2; ++i)
        REQUIRE((h * es.right.col(i) - es.eigenvalues[i] * es.right.col(i)).norm() <= 1e-12);
    }
    // the two sheets carry the same spectrum with the labels swapped
    const auto fp = two_level_frame(m, t, +1, two_level_w(m, t, +1), 0.0);
    const auto fm = two_level_frame(m, t, -1, two_level_w(m, t, -1), 0.0);
    REQUIRE(std::abs(fp.lambda0 - fm.lambda1) < 1e-14);
    REQUIRE(std::abs(fp.lambda1 - fm.lambda0) < 1e-14);
  }
}

TEST_CASE("principal root follows the cut rule") {
  // W = 0 with Delta = 0: u = z^2 = -Gamma^2/16 lies on the cut, p = -i Gamma/4 = z
  const auto m = at_point(0.0, 0.0);
  REQUIRE(std::abs(two_level_principal_root(m, 0.0) - cplx(0, -0.125)) < 1e-15);
  REQUIRE(std::abs(two_level_w(m, 0.0, -1) - cplx(0, 0.125)) < 1e-15);
}

TEST_CASE("connection against finite differences") {
  REQUIRE(std::abs(two_level_connection(at_point(0.3, 0.1), 0.0, +1)) < 1e-15);
  const auto m = standard_two_level_model(kT);
  const double h = 1e-5;
  int checked = 0;
  for (double t : random_times(40, kT, 4)) {
    if (near_ep(m, t)) continue;
    for (int s : {+1, -1}) {
      const cplx w = two_level_w(m, t, s);
      TwoLevelFrame fr;
      try {
        fr = two_level_frame(m, t, s, w);
      } catch (const DenominatorDegenerate&) {
        continue;
      }
      const CVector d0 = fd_column(m, t, s, h, [](const TwoLevelFrame& f) { return f.phi0; });
      const CVector d1 = fd_column(m, t, s, h, [](const TwoLevelFrame& f) { return f.phi1; });
      const cplx a0 = (fr.dual0 * d0)(0, 0), a1 = (fr.dual1 * d1)(0, 0);
      REQUIRE(std::abs(a0 - fr.connection) < 1e-6 * std::max(1.0, std::abs(a0)));
      REQUIRE(std::abs(a1 - fr.connection) < 1e-6 * std::max(1.0, std::abs(a1)));
      REQUIRE(std::abs(two_level_connection(m, t, s) - fr.connection) < 1e-14);
      ++checked;
    }
  }
  REQUIRE(checked >= 40);
}

TEST_CASE("non-adiabatic coupling") {
  REQUIRE(std::abs(two_level_nonadiabatic_coupling(at_point(0.3, 0.1), 0.0, +1)) < 1e-15);
  const auto m = standard_two_level_model(kT);
  const double h = 1e-5;
  for (double t : random_times(20, kT, 5)) {
    if (near_ep(m, t)) continue;
    REQUIRE(std::abs(two_level_nonadiabatic_coupling(m, t, +1) + two_level_nonadiabatic_coupling(m, t, -1)) <
            1e-14);
    for (int s : {+1, -1}) {
      const cplx w = two_level_w(m, t, s);
      const auto fr = two_level_frame(m, t, s, w, 0.0);
      const CVector d0 = fd_column(m, t, s, h, [](const TwoLevelFrame& f) { return f.phi0; });
      const CVector d1 = fd_column(m, t, s, h, [](const TwoLevelFrame& f) { return f.phi1; });
      const cplx c01 = (fr.dual0 * d1)(0, 0), c10 = (fr.dual1 * d0)(0, 0);
      const double scale = std::max(1.0, std::abs(fr.coupling));
      REQUIRE(std::abs(c01 - fr.coupling) < 1e-6 * scale);
      REQUIRE(std::abs(c10 + fr.coupling) < 1e-6 * scale);
    }
  }
}

TEST_CASE("analytic projector derivative") {
  const auto m = standard_two_level_model(kT);
  const double h = 1e-5;
  for (double t : random_times(20, kT, 6)) {
    if (near_ep(m, t)) continue;
    const cplx w = two_level_w(m, t, +1);
    auto p0 = [&](double s) {
      const cplx ws = two_level_w_continuous(m, s, w);
      const auto fr = two_level_frame(m, s, +1, ws, 0.0);
      return CMatrix(fr.phi0 * fr.dual0);
    };
    const CMatrix fd = (p0(t + h) - p0(t - h)) / (2 * h);
    REQUIRE((fd - two_level_projector_dot(m, t, w)).norm() < 1e-6 * std::max(1.0, fd.norm()));
  }
}

TEST_CASE("model validation") {
  auto m = standard_two_level_model(kT);
  REQUIRE_NOTHROW(m.validate());
  m.sheet_schedule = {{30.0, -1}, {20.0, +1}};
  REQUIRE_THROWS_AS(m.validate(), PreconditionViolation);
  m = standard_two_level_model(kT);
  m.gamma = 0.0;
  REQUIRE_THROWS_AS(m.validate(), PreconditionViolation);
  m = standard_two_level_model(kT);
  REQUIRE(m.sheet_at(10.0) == +1);
  REQUIRE(m.sheet_at(30.0) == -1);
  REQUIRE(m.sheet_at(kT) == +1);
}

TEST_CASE("DVR kinetic matrix") {
  DvrModel m = default_dvr_model();
  m.n_points = 32;
  const DvrGrid g = dvr_basis_and_kinetic(m);
  REQUIRE((g.kinetic - g.kinetic.adjoint()).norm() < 1e-10);
  REQUIRE_THAT(g.r[1] - g.r[0], WithinAbs(m.r_max / 32, 1e-15));

  std::vector<double> expect;
  for (int j = 0; j < 32; ++j) {
    const double k = 2.0 * std::numbers::pi * (j - 16) / m.r_max;
    expect.push_back(k * k / (2.0 * m.reduced_mass));
  }
  std::sort(expect.begin(), expect.end());
  Eigen::SelfAdjointEigenSolver<CMatrix> es(g.kinetic);
  for (int j = 0; j < 32; ++j) REQUIRE_THAT(es.eigenvalues()[j], WithinAbs(expect[j], 1e-8));

  const CVector ones = CVector::Ones(32);
  REQUIRE((g.kinetic * ones).norm() / ones.norm() <= expect.back() * (1 + 1e-12));

  m.n_points = 4;
  REQUIRE_THROWS_AS(dvr_basis_and_kinetic(m), PreconditionViolation);
}

TEST_CASE("DVR Hamiltonian structure") {
  DvrModel m = default_dvr_model();
  m.n_points = 40;
  const int n = 40;
  const DvrOperators ops = dvr_operators(m);
  const CMatrix h = dvr_hamiltonian(ops, m.path, 0.0); // W = 0 at t = 0
  REQUIRE(h.topRightCorner(n, n).norm() == 0.0);
  REQUIRE(h.bottomLeftCorner(n, n).norm() == 0.0);
  const double t = 3000.0;
  const CMatrix ht = dvr_hamiltonian(ops, m.path, t);
  REQUIRE((ht - ht.transpose()).norm() < 1e-14);
  const CMatrix anti = (ht - ht.adjoint()) / 2.0;
  for (int i = 0; i < 2 * n; ++i)
    for (int j = 0; j < 2 * n; ++j) {
      const cplx expect = i == j ? cplx(0, -m.v_opt(ops.grid.r[i % n])) : cplx(0);
      REQUIRE(std::abs(anti(i, j) - expect) < 1e-14);
    }

  // g-block spectrum does not see omega
  DvrModel m2 = m;
  m2.path = molecular_path(m.path.duration, 0.105, 0.2, 0.0005);
  const CMatrix g1 = dvr_hamiltonian(m, 0.0).topLeftCorner(n, n), g2 = dvr_hamiltonian(m2, 0.0).topLeftCorner(n, n);
  REQUIRE((g1 - g2).norm() == 0.0);

  // no absorption, no field: bound levels of the well are real
  DvrPotentialParams p;
  p.opt_strength = 0.0;
  const DvrModel m3 = default_dvr_model(p);
  const CMatrix g3 = dvr_hamiltonian(m3, 0.0).topLeftCorner(100, 100);
  const auto es = eig_nonhermitian(g3);
  int bound = 0;
  for (int i = 0; i < es.size(); ++i)
    if (es.eigenvalues[i].real() < 0) {
      REQUIRE(std::abs(es.eigenvalues[i].imag()) < 1e-8);
      ++bound;
    }
  REQUIRE(bound >= 10);
}

TEST_CASE("Hellmann-Feynman couplings") {
  const DvrModel m = default_dvr_model();
  const DvrOperators ops = dvr_operators(m);
  // static path: no coupling
  ParameterPath still = static_path(1.0, 0.05, 0.10242);
  const auto es_s = eig_nonhermitian(dvr_hamiltonian(ops, still, 0.0));
  REQUIRE(std::abs(hellmann_feynman_coupling(ops, still, es_s, 0, 1, 0.0)) == 0.0);
  REQUIRE_THROWS_AS(hellmann_feynman_coupling(ops, still, es_s, 3, 3, 0.0), PreconditionViolation);

  // against d/dt of phi^T phi = 1 eigenvectors tracked by overlap
  const double t = 3000.0, h = 0.5;
  auto eig_at = [&](double s) {
    auto es = eig_nonhermitian(dvr_hamiltonian(ops, m.path, s));
    symmetric_normalize(es);
    return es;
  };
  const auto e0 = eig_at(t), ep = eig_at(t + h), em = eig_at(t - h);
  const auto tp = apply_tracking(ep, track_eigenpair(e0, ep));
  const auto tm = apply_tracking(em, track_eigenpair(e0, em));
  const auto idx = dvr_bound_state_indices(eig_at(0.0), m.n_points, {8, 9});
  int checked = 0;
  // the least absorbed states, paired with a well separated partner
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 20; ++j) {
      if (i == j || std::abs(e0.eigenvalues[j] - e0.eigenvalues[i]) < 1e-3) continue;
      // the sign fix of tracking is a phase on a phi^T phi = 1 vector: +-1
      CVector vp = tp.right.col(j), vm = tm.right.col(j);
      const cplx sp = (vp.transpose() * vp)(0, 0), sm = (vm.transpose() * vm)(0, 0);
      vp /= std::sqrt(sp);
      vm /= std::sqrt(sm);
      if ((e0.dual.row(j) * vp)(0, 0).real() < 0) vp = -vp;
      if ((e0.dual.row(j) * vm)(0, 0).real() < 0) vm = -vm;
      const cplx fd = (e0.dual.row(i) * ((vp - vm) / (2 * h)))(0, 0);
      const cplx hf = hellmann_feynman_coupling(ops, m.path, e0, i, j, t);
      REQUIRE(std::abs(fd - hf) <= 1e-4 * std::abs(hf) + 1e-12);
      ++checked;
      break;
    }
  }
  REQUIRE(checked > 0);
  REQUIRE(idx.size() == 2);
}

TEST_CASE("eigenpair tracking") {
  CMatrix a = CMatrix::Zero(3, 3);
  a.diagonal() << 1.0, 2.0, cplx(3.0, -0.5);
  const auto es = eig_nonhermitian(a);
  const auto same = track_eigenpair(es, es);
  for (int i = 0; i < 3; ++i) {
    REQUIRE(same.permutation[i] == i);
    REQUIRE(std::abs(same.phases[i] - 1.0) < 1e-14);
  }
  REQUIRE_FALSE(same.sheet_switch);

  // small unitary rotation keeps the labels
  const double th = 0.05;
  CMatrix r = CMatrix::Identity(3, 3);
  r(0, 0) = r(1, 1) = std::cos(th);
  r(0, 1) = -std::sin(th);
  r(1, 0) = std::sin(th);
  const auto rot = eig_nonhermitian(r * a * r.adjoint());
  const auto tr = track_eigenpair(es, rot);
  for (int i = 0; i < 3; ++i) REQUIRE(tr.permutation[i] == i);

  // degenerate overlaps are refused
  const auto id = eig_nonhermitian(CMatrix::Identity(2, 2));
  BiorthonormalEigensystem mixed = id;
  mixed.right.col(0) = CVector::Ones(2) / std::sqrt(2.0);
  mixed.right.col(1) = CVector::Ones(2) / std::sqrt(2.0);
  mixed.right(1, 1) *= -1.0;
  REQUIRE_THROWS_AS(track_eigenpair(id, mixed), AmbiguousTracking);
}

TEST_CASE("tracking across the scheduled switch agrees with the sheet labels") {
  const auto m = standard_two_level_model(kT);
  const double d = 0.5;
  const auto before = two_level_eigensystem(m, kT / 2 - d, +1);
  const auto after = two_level_eigensystem(m, kT / 2 + d, -1);
  const auto tr = track_eigenpair(before, after);
  REQUIRE(tr.permutation[0] == 0);
  REQUIRE(tr.permutation[1] == 1);
  REQUIRE(std::abs(before.eigenvalues[0] - after.eigenvalues[0]) < std::abs(before.eigenvalues[0] - after.eigenvalues[1]));
  // the principal-sheet labels would have swapped
  const auto naive = two_level_eigensystem(m, kT / 2 + d, +1);
  REQUIRE(track_eigenpair(before, naive).permutation[0] == 1);
}

TEST_CASE("symmetric normalization of a complex symmetric matrix") {
  std::mt19937 rng(8);
  std::normal_distribution<double> g;
  CMatrix a(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j <= i; ++j) a(i, j) = a(j, i) = cplx(g(rng), g(rng));
  auto es = eig_nonhermitian(a);
  symmetric_normalize(es);
  for (int k = 0; k < 5; ++k) {
    REQUIRE(std::abs((es.right.col(k).transpose() * es.right.col(k))(0, 0) - 1.0) < 1e-12);
    REQUIRE((es.dual.row(k) - es.right.col(k).transpose()).norm() < 1e-10);
  }
}
