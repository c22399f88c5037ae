#pragma once

#include "tdwo/numerics.hpp"

#include <functional>
#include <numbers>
#include <utility>
#include <vector>

namespace tdwo {

// ---------------------------------------------------------------- paths

struct PathPoint {
  double c1, c2;     // (W, Delta) or (W, omega)
  double c1_dot, c2_dot;
};

struct ParameterPath {
  double duration = 1.0;
  std::function<double(double)> coord1, coord2, coord1_dot, coord2_dot;

  PathPoint at(double t) const { return {coord1(t), coord2(t), coord1_dot(t), coord2_dot(t)}; }
};

// Double loop around the exceptional point (Gamma/4, 0), starting at the origin.
inline ParameterPath standard_two_level_path(double T, double gamma) {
  if (!(T > 0)) throw PreconditionViolation("standard_two_level_path: T must be positive");
  const double a = gamma / 4.0, k = 4.0 * std::numbers::pi / T;
  ParameterPath p;
  p.duration = T;
  p.coord1 = [a, k](double t) { return a * (1.0 - std::cos(k * t)); };
  p.coord2 = [a, k](double t) { return a * std::sin(k * t); };
  p.coord1_dot = [a, k](double t) { return a * k * std::sin(k * t); };
  p.coord2_dot = [a, k](double t) { return a * k * std::cos(k * t); };
  return p;
}

// Same loop shape in the (field amplitude, laser frequency) plane.
inline ParameterPath molecular_path(double T, double w0, double omega_star, double d_omega) {
  if (!(T > 0)) throw PreconditionViolation("molecular_path: T must be positive");
  const double k = 4.0 * std::numbers::pi / T;
  ParameterPath p;
  p.duration = T;
  p.coord1 = [w0, k](double t) { return w0 * (1.0 - std::cos(k * t)); };
  p.coord2 = [omega_star, d_omega, k](double t) { return omega_star + d_omega * std::sin(k * t); };
  p.coord1_dot = [w0, k](double t) { return w0 * k * std::sin(k * t); };
  p.coord2_dot = [d_omega, k](double t) { return d_omega * k * std::cos(k * t); };
  return p;
}

inline ParameterPath static_path(double T, double c1, double c2) {
  ParameterPath p;
  p.duration = T;
  p.coord1 = [c1](double) { return c1; };
  p.coord2 = [c2](double) { return c2; };
  p.coord1_dot = [](double) { return 0.0; };
  p.coord2_dot = [](double) { return 0.0; };
  return p;
}

// ---------------------------------------------------------------- two-level

struct SheetSwitch {
  double time;
  int sheet; // +1 or -1
};

struct TwoLevelModel {
  double gamma = 0.5;
  double hbar = 1.0;
  ParameterPath path;
  int initial_sheet = +1;
  std::vector<SheetSwitch> sheet_schedule;
  double ep_tolerance = 1e-8;

  int sheet_at(double t) const {
    int s = initial_sheet;
    for (const auto& sw : sheet_schedule)
      if (t >= sw.time) s = sw.sheet;
    return s;
  }
  void validate() const {
    if (!(gamma > 0)) throw PreconditionViolation("TwoLevelModel: gamma must be positive");
    if (!(hbar > 0)) throw PreconditionViolation("TwoLevelModel: hbar must be positive");
    double prev = 0.0;
    for (const auto& sw : sheet_schedule) {
      // a switch exactly at T is allowed: the principal root jumps there
      if (!(sw.time > prev) || sw.time > path.duration)
        throw PreconditionViolation("TwoLevelModel: sheet schedule must increase within (0, T]");
      if (sw.sheet != 1 && sw.sheet != -1)
        throw PreconditionViolation("TwoLevelModel: sheet must be +1 or -1");
      prev = sw.time;
    }
  }
};

// One turn per half period: the labels swap at T/2 and come back at T.
inline TwoLevelModel standard_two_level_model(double T, double gamma = 0.5) {
  TwoLevelModel m;
  m.gamma = gamma;
  m.path = standard_two_level_path(T, gamma);
  m.sheet_schedule = {{T / 2.0, -1}, {T, +1}};
  return m;
}

struct TwoLevelParams {
  double W, Wd;
  cplx z, zd;
};

inline TwoLevelParams two_level_params(const TwoLevelModel& m, double t) {
  const PathPoint p = m.path.at(t);
  return {p.c1, p.c1_dot, cplx(p.c2, -m.gamma / 4.0), cplx(p.c2_dot, 0.0)};
}

inline CMatrix two_level_hamiltonian(const TwoLevelModel& m, double t) {
  const TwoLevelParams q = two_level_params(m, t);
  CMatrix h(2, 2);
  h << 0.0, q.W, q.W, 2.0 * q.z;
  return 0.5 * m.hbar * h;
}

inline CMatrix two_level_hamiltonian_dot(const TwoLevelModel& m, double t) {
  const TwoLevelParams q = two_level_params(m, t);
  CMatrix h(2, 2);
  h << 0.0, q.Wd, q.Wd, 2.0 * q.zd;
  return 0.5 * m.hbar * h;
}

// Principal root of W^2 + z^2. On the negative real axis (which the standard
// path touches exactly at the origin) the Delta -> 0+ limit is taken, so the
// value does not flip with the sign of a rounding error.
inline cplx two_level_principal_root(const TwoLevelModel& m, double t) {
  const TwoLevelParams q = two_level_params(m, t);
  const cplx u = q.W * q.W + q.z * q.z;
  if (std::abs(u.imag()) <= 1e-12 * std::abs(u) && u.real() < 0.0)
    return cplx(0.0, -std::sqrt(-u.real()));
  return std::sqrt(u);
}

inline cplx two_level_w(const TwoLevelModel& m, double t, int sheet) {
  return static_cast<double>(sheet) * two_level_principal_root(m, t);
}

// Root of W^2 + z^2 closest to `hint`; used to stay on one branch inside a step.
inline cplx two_level_w_continuous(const TwoLevelModel& m, double t, cplx hint) {
  const cplx p = two_level_principal_root(m, t);
  return std::abs(p - hint) <= std::abs(p + hint) ? p : -p;
}

// Everything the closed forms give at one time for a given vector family
// (sheet sign) and a given root w.
struct TwoLevelFrame {
  double t;
  int family;
  cplx w;
  cplx lambda0, lambda1;
  CVector phi0, phi1;
  Eigen::RowVectorXcd dual0, dual1;
  cplx connection; // <phi0*|d phi0/dt> = <phi1*|d phi1/dt>
  cplx coupling;   // the closed-form non-adiabatic coupling
};

inline void check_ep(const TwoLevelModel& m, double t, cplx w) {
  if (std::abs(w) <= m.ep_tolerance)
    throw ExceptionalPointProximity("two-level model: |w| below ep_tolerance", t);
}

inline cplx two_level_connection_w(const TwoLevelModel& m, double t, int f, cplx w) {
  check_ep(m, t, w);
  const TwoLevelParams q = two_level_params(m, t);
  const double s = f;
  const cplx wz = w + s * q.z;
  if (std::abs(wz) <= m.ep_tolerance)
    throw DenominatorDegenerate("two_level_connection: |w +- z| below ep_tolerance");
  return ((2.0 * w + s * q.z) * q.W * q.Wd + s * wz * wz * q.zd) / (2.0 * w * w * wz);
}

inline cplx two_level_coupling_w(const TwoLevelModel& m, double t, int f, cplx w) {
  check_ep(m, t, w);
  const TwoLevelParams q = two_level_params(m, t);
  return static_cast<double>(f) * (q.z * q.Wd - q.W * q.zd) / (2.0 * w * w);
}

// `denominator_tolerance` guards |w +- z|; the propagation passes 0 because a
// vector family that shrinks towards zero is still a valid (if small) gauge.
inline TwoLevelFrame two_level_frame(const TwoLevelModel& m, double t, int f, cplx w,
                                     double denominator_tolerance) {
  check_ep(m, t, w);
  const TwoLevelParams q = two_level_params(m, t);
  TwoLevelFrame fr;
  fr.t = t;
  fr.family = f;
  fr.w = w;
  fr.lambda0 = 0.5 * m.hbar * (q.z - w);
  fr.lambda1 = 0.5 * m.hbar * (q.z + w);
  fr.phi0.resize(2);
  fr.phi1.resize(2);
  if (f > 0) {
    fr.phi0 << q.z + w, -q.W;
    fr.phi1 << q.W, q.z + w;
  } else {
    fr.phi0 << q.W, q.z - w;
    fr.phi1 << q.z - w, -q.W;
  }
  const double s = f;
  const cplx wz = w + s * q.z;
  if (!(std::abs(wz) > denominator_tolerance))
    throw DenominatorDegenerate("two-level frame: |w +- z| below tolerance");
  const cplx c = 1.0 / (2.0 * w * wz);
  fr.dual0 = c * fr.phi0.transpose();
  fr.dual1 = c * fr.phi1.transpose();
  fr.connection = ((2.0 * w + s * q.z) * q.W * q.Wd + s * wz * wz * q.zd) / (2.0 * w * w * wz);
  fr.coupling = two_level_coupling_w(m, t, f, w);
  return fr;
}

inline TwoLevelFrame two_level_frame(const TwoLevelModel& m, double t, int f, cplx w) {
  return two_level_frame(m, t, f, w, m.ep_tolerance);
}

inline TwoLevelFrame two_level_frame(const TwoLevelModel& m, double t, int sheet) {
  return two_level_frame(m, t, sheet, two_level_w(m, t, sheet));
}

inline BiorthonormalEigensystem two_level_eigensystem(const TwoLevelModel& m, double t, int sheet) {
  const TwoLevelFrame fr = two_level_frame(m, t, sheet);
  BiorthonormalEigensystem es;
  es.eigenvalues.resize(2);
  es.eigenvalues << fr.lambda0, fr.lambda1;
  es.right.resize(2, 2);
  es.right.col(0) = fr.phi0;
  es.right.col(1) = fr.phi1;
  es.dual.resize(2, 2);
  es.dual.row(0) = fr.dual0;
  es.dual.row(1) = fr.dual1;
  es.sheet = {sheet, sheet};
  return es;
}

inline cplx two_level_connection(const TwoLevelModel& m, double t, int sheet) {
  return two_level_connection_w(m, t, sheet, two_level_w(m, t, sheet));
}

// Closed form (z W' - W z') / (2 w^2) with the sheet sign. As a matrix element
// it is <phi0*|d phi1/dt>, i.e. minus <phi1*|d phi0/dt>.
inline cplx two_level_nonadiabatic_coupling(const TwoLevelModel& m, double t, int sheet) {
  return two_level_coupling_w(m, t, sheet, two_level_w(m, t, sheet));
}

// dP0/dt for P0 = (H - lambda1)/(lambda0 - lambda1), analytic.
inline CMatrix two_level_projector_dot(const TwoLevelModel& m, double t, cplx w) {
  check_ep(m, t, w);
  const TwoLevelParams q = two_level_params(m, t);
  const cplx wd = (q.W * q.Wd + q.z * q.zd) / w;
  const double hb = m.hbar;
  const cplx l0 = 0.5 * hb * (q.z - w), l1 = 0.5 * hb * (q.z + w);
  const cplx l0d = 0.5 * hb * (q.zd - wd), l1d = 0.5 * hb * (q.zd + wd);
  const CMatrix id = CMatrix::Identity(2, 2);
  const CMatrix h = two_level_hamiltonian(m, t);
  const CMatrix hd = two_level_hamiltonian_dot(m, t);
  return (hd - l1d * id) / (l0 - l1) - (h - l1 * id) * (l0d - l1d) / ((l0 - l1) * (l0 - l1));
}

// ---------------------------------------------------------------- DVR model

struct DvrModel {
  int n_points = 100;
  double r_max = 12.0;
  double reduced_mass = 911.389;
  double hbar = 1.0;
  std::function<double(double)> v_g, v_u, dipole, v_opt;
  ParameterPath path; // (W, omega)
};

struct DvrPotentialParams {
  double morse_depth = 0.1026;
  double morse_r_eq = 2.0;
  double morse_width = 0.72;
  double repulsive_height = 0.33;
  double repulsive_decay = 0.9;
  double dipole_slope = 0.5;
  double opt_strength = 0.1;
  double opt_power = 2.0;
  double opt_start_fraction = 0.75;
};

inline DvrModel default_dvr_model(const DvrPotentialParams& p = {}, double T = 40000.0,
                                  double w0 = 0.105, double omega_star = 0.10242,
                                  double d_omega = 0.0005, int n_points = 100, double r_max = 12.0,
                                  double reduced_mass = 911.389) {
  DvrModel m;
  m.n_points = n_points;
  m.r_max = r_max;
  m.reduced_mass = reduced_mass;
  // Morse well with its asymptote at 0
  m.v_g = [p](double r) {
    const double e = 1.0 - std::exp(-p.morse_width * (r - p.morse_r_eq));
    return p.morse_depth * e * e - p.morse_depth;
  };
  // repulsive, flattening towards 0 at large r
  m.v_u = [p](double r) { return p.repulsive_height * std::exp(-p.repulsive_decay * (r - p.morse_r_eq)); };
  m.dipole = [p](double r) { return p.dipole_slope * r; };
  m.v_opt = [p, r_max](double r) {
    const double r0 = p.opt_start_fraction * r_max;
    if (r <= r0) return 0.0;
    return p.opt_strength * std::pow((r - r0) / (r_max - r0), p.opt_power);
  };
  m.path = molecular_path(T, w0, omega_star, d_omega);
  return m;
}

struct DvrGrid {
  std::vector<double> r;
  std::vector<double> k;
  CMatrix kinetic; // N x N
};

inline DvrGrid dvr_basis_and_kinetic(const DvrModel& m) {
  const int n = m.n_points;
  if (n < 8) throw PreconditionViolation("dvr_basis_and_kinetic: need at least 8 points");
  if (!(m.r_max > 0)) throw PreconditionViolation("dvr_basis_and_kinetic: r_max must be positive");
  DvrGrid g;
  g.r.resize(n);
  g.k.resize(n);
  for (int i = 0; i < n; ++i) g.r[i] = i * m.r_max / n;
  for (int j = 0; j < n; ++j) g.k[j] = 2.0 * std::numbers::pi * (j - n / 2.0) / m.r_max;
  // <zeta_i|T|zeta_l> = (1/N) sum_j exp(i k_j (r_i - r_l)) hbar^2 k_j^2 / (2m)
  CMatrix f(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) f(i, j) = std::exp(I * (g.k[j] * g.r[i])) / std::sqrt(double(n));
  CVector e(n);
  for (int j = 0; j < n; ++j) e[j] = m.hbar * m.hbar * g.k[j] * g.k[j] / (2.0 * m.reduced_mass);
  g.kinetic = f * e.asDiagonal() * f.adjoint();
  return g;
}

// Block layout: indices [0, N) are the g channel, [N, 2N) the u channel.
struct DvrOperators {
  DvrGrid grid;
  CMatrix static_part; // kinetic, V_g, V_u, -i V_opt
  CMatrix dH_dW;       // dipole coupling block
  CMatrix dH_domega;   // -hbar on the u channel
};

inline DvrOperators dvr_operators(const DvrModel& m) {
  DvrOperators ops;
  ops.grid = dvr_basis_and_kinetic(m);
  const int n = m.n_points;
  ops.static_part = CMatrix::Zero(2 * n, 2 * n);
  ops.static_part.topLeftCorner(n, n) = ops.grid.kinetic;
  ops.static_part.bottomRightCorner(n, n) = ops.grid.kinetic;
  ops.dH_dW = CMatrix::Zero(2 * n, 2 * n);
  ops.dH_domega = CMatrix::Zero(2 * n, 2 * n);
  for (int i = 0; i < n; ++i) {
    const double r = ops.grid.r[i];
    const double vopt = m.v_opt(r);
    if (vopt < 0) throw PreconditionViolation("DvrModel: optical potential must be nonnegative");
    ops.static_part(i, i) += cplx(m.v_g(r), -vopt);
    ops.static_part(n + i, n + i) += cplx(m.v_u(r), -vopt);
    ops.dH_dW(i, n + i) = ops.dH_dW(n + i, i) = m.dipole(r);
    ops.dH_domega(n + i, n + i) = -m.hbar;
  }
  return ops;
}

inline CMatrix dvr_hamiltonian(const DvrOperators& ops, const ParameterPath& path, double t) {
  const PathPoint p = path.at(t);
  return ops.static_part + p.c1 * ops.dH_dW + p.c2 * ops.dH_domega;
}

inline CMatrix dvr_hamiltonian(const DvrModel& m, double t) {
  return dvr_hamiltonian(dvr_operators(m), m.path, t);
}

inline CMatrix dvr_hamiltonian_dot(const DvrOperators& ops, const ParameterPath& path, double t) {
  const PathPoint p = path.at(t);
  return p.c1_dot * ops.dH_dW + p.c2_dot * ops.dH_domega;
}

// <dual_i| dH/dt |right_j> / (lambda_j - lambda_i)
inline cplx hellmann_feynman_coupling(const DvrOperators& ops, const ParameterPath& path,
                                      const BiorthonormalEigensystem& es, int i, int j, double t,
                                      double gap_tolerance = 1e-10) {
  if (i == j) throw PreconditionViolation("hellmann_feynman_coupling: needs i != j");
  const cplx gap = es.eigenvalues[j] - es.eigenvalues[i];
  if (std::abs(gap) <= gap_tolerance)
    throw DegenerateGap("hellmann_feynman_coupling: eigenvalues nearly degenerate");
  const CMatrix hd = dvr_hamiltonian_dot(ops, path, t);
  return (es.dual.row(i) * hd * es.right.col(j))(0, 0) / gap;
}

inline cplx hellmann_feynman_coupling(const DvrModel& m, const BiorthonormalEigensystem& es, int i,
                                      int j, double t, double gap_tolerance = 1e-10) {
  return hellmann_feynman_coupling(dvr_operators(m), m.path, es, i, j, t, gap_tolerance);
}

// Rescale so that phi^T phi = 1 (and the dual accordingly). For a complex
// symmetric matrix the dual is then phi^T and <phi*|dphi/dt> vanishes.
inline void symmetric_normalize(BiorthonormalEigensystem& es) {
  for (int k = 0; k < es.size(); ++k) {
    const cplx s = std::sqrt((es.right.col(k).transpose() * es.right.col(k))(0, 0));
    if (std::abs(s) < 1e-150) continue; // self-orthogonal: leave it alone
    es.right.col(k) /= s;
    es.dual.row(k) *= s;
  }
}

// ---------------------------------------------------------------- tracking

struct TrackingResult {
  std::vector<int> permutation; // previous index i continues as current index permutation[i]
  std::vector<cplx> phases;     // multiply current right vector by phases[i] (dual by 1/phases[i])
  bool sheet_switch = false;
};

inline TrackingResult track_eigenpair(const BiorthonormalEigensystem& prev,
                                      const BiorthonormalEigensystem& curr, int followed = 0,
                                      double ambiguity = 1e-6) {
  if (prev.size() != curr.size() || prev.right.rows() != curr.right.rows())
    throw PreconditionViolation("track_eigenpair: dimension mismatch");
  const int n = prev.size();
  const CMatrix ov = prev.dual * curr.right; // ov(i, j) = <dual_prev_i|right_curr_j>
  TrackingResult res;
  res.permutation.assign(n, -1);
  res.phases.assign(n, cplx(1.0));
  std::vector<bool> used(n, false);
  for (int i = 0; i < n; ++i) {
    int best = -1;
    double b1 = -1.0, b2 = -1.0;
    for (int j = 0; j < n; ++j) {
      if (used[j]) continue;
      const double a = std::abs(ov(i, j));
      if (a > b1) {
        b2 = b1;
        b1 = a;
        best = j;
      } else if (a > b2) {
        b2 = a;
      }
    }
    if (b2 >= 0.0 && b1 - b2 < ambiguity)
      throw AmbiguousTracking("track_eigenpair: competing overlaps for one eigenpair");
    used[best] = true;
    res.permutation[i] = best;
    const cplx o = ov(i, best);
    res.phases[i] = std::abs(o) > 0 ? std::conj(o) / std::abs(o) : cplx(1.0);
  }
  if (followed >= 0 && followed < n) res.sheet_switch = res.permutation[followed] != followed;
  return res;
}

// Reorder `curr` to follow `prev` and apply the phase fixes.
inline BiorthonormalEigensystem apply_tracking(const BiorthonormalEigensystem& curr,
                                               const TrackingResult& tr) {
  BiorthonormalEigensystem out = curr;
  for (int i = 0; i < curr.size(); ++i) {
    const int j = tr.permutation[i];
    out.eigenvalues[i] = curr.eigenvalues[j];
    out.right.col(i) = curr.right.col(j) * tr.phases[i];
    out.dual.row(i) = curr.dual.row(j) / tr.phases[i];
    out.sheet[i] = curr.sheet[j];
  }
  return out;
}

} // namespace tdwo
