#pragma once

#include "tdwo/frames.hpp"

#include <memory>

namespace tdwo {

// ---------------------------------------------------------------- Riccati

// a_ij x^2 - i gap x / hbar + a_ji
inline cplx riccati_rhs_general(cplx x, double /*t*/, cplx coupling_ij, cplx coupling_ji, cplx gap,
                                double hbar = 1.0) {
  return coupling_ij * x * x - I * gap * x / hbar + coupling_ji;
}

inline cplx riccati_rhs_two_level(cplx x, double t, const TwoLevelModel& m, int sheet) {
  const cplx w = two_level_w(m, t, sheet);
  const cplx a = two_level_coupling_w(m, t, sheet, w);
  return riccati_rhs_general(x, t, a, a, m.hbar * w, m.hbar);
}

// Riccati right-hand side in a frame sample, for the followed state 0 and
// the limbo state 1:
//   x' = C01 x^2 - (i/hbar (l1 - l0) + C11 - C00) x - C10.
// The diagonal terms cancel for both shipped models.
inline cplx frame_riccati_rhs(cplx x, const FrameSample& s, double hbar) {
  const CMatrix& c = s.coupling;
  return riccati_rhs_general(x, s.t, c(0, 1), -c(1, 0), s.lambda[1] - s.lambda[0], hbar) -
         (c(1, 1) - c(0, 0)) * x;
}

// int A over one step: exact when both samples carry the potential,
// trapezoidal otherwise.
inline cplx connection_increment(const FrameSample& a, const FrameSample& b, double dt) {
  if (a.connection_potential && b.connection_potential)
    return 0.5 * std::log(*b.connection_potential / *a.connection_potential);
  return 0.5 * dt * (a.coupling(0, 0) + b.coupling(0, 0));
}

struct WaveOperatorState {
  double t = 0.0;
  cplx x{0.0, 0.0};
  int sheet = 0;
  cplx branch{0.0, 0.0};
  cplx accumulated_eta{0.0, 0.0};
  cplx accumulated_dynamical{0.0, 0.0};
  cplx accumulated_connection{0.0, 0.0};
};

// Integrates the reduced wave operator of the followed state together with
// the phase integrals. At a scheduled sheet change the frame family changes
// at the start of the step: x and the connection integral are carried over
// by the gauge factors between the two (collinear) families, so the
// represented state is continuous; eta is integrated in one piece.
template <class Provider>
std::vector<WaveOperatorState> propagate_reduced_waveop(const Provider& p, const PropagationPlan& plan,
                                                        Scheme scheme) {
  plan.validate();
  if (scheme != Scheme::FOD && scheme != Scheme::RK4)
    throw PreconditionViolation("propagate_reduced_waveop: scheme must be FOD or RK4");
  const double hb = p.hbar();
  const double dt = plan.dt();

  FrameSample cur = p.sample(plan.t0, p.sheet_at(plan.t0));
  WaveOperatorState st;
  st.t = plan.t0;
  st.sheet = cur.sheet;
  st.branch = cur.branch;
  std::vector<WaveOperatorState> out{st};

  for (int k = 0; k < plan.n_steps; ++k) {
    const double ta = plan.time(k), tb = plan.time(k + 1);
    const int s_next = p.sheet_at(tb);
    if (s_next != cur.sheet) {
      const FrameSample nw = p.sample(ta, s_next, cur.branch);
      const CVector g = gauge_factors(cur, nw);
      st.x *= g[1] / g[0];
      st.accumulated_connection -= std::log(g[0]);
      cur = nw;
    }
    FrameSample end;
    cplx xn;
    try {
      if (scheme == Scheme::FOD) {
        end = p.sample(tb, s_next, cur.branch);
        xn = st.x + dt * frame_riccati_rhs(st.x, cur, hb);
        if (!(std::abs(xn) <= 1e12)) throw StageOverflow("Riccati step overflow", ta, k);
      } else {
        const FrameSample mid = p.sample(ta + 0.5 * dt, s_next, cur.branch);
        end = p.sample(tb, s_next, mid.branch);
        auto f = [&](double t, cplx x) {
          const double u = (t - ta) / dt;
          const FrameSample& s = u < 0.25 ? cur : (u > 0.75 ? end : mid);
          return frame_riccati_rhs(x, s, hb);
        };
        xn = rk4_step(f, ta, st.x, dt);
      }
    } catch (const StageOverflow& e) {
      throw StageOverflow(e.what(), ta, k);
    }
    st.accumulated_dynamical += 0.5 * dt * (cur.lambda[0] + end.lambda[0]);
    st.accumulated_connection += connection_increment(cur, end, dt);
    st.accumulated_eta += 0.5 * dt * (st.x * cur.coupling(0, 1) + xn * end.coupling(0, 1));
    st.x = xn;
    st.t = tb;
    st.sheet = end.sheet;
    st.branch = end.branch;
    cur = end;
    if (plan.records(k + 1)) out.push_back(st);
  }
  return out;
}

inline std::vector<WaveOperatorState> propagate_reduced_waveop(const TwoLevelModel& m,
                                                               const PropagationPlan& plan, Scheme scheme) {
  return propagate_reduced_waveop(TwoLevelFrames(m), plan, scheme);
}

// ---------------------------------------------------------------- assembled Omega

struct AssembledWaveOperator {
  CMatrix omega;
  CMatrix p0;
  double t = 0.0;
};

// Omega = |phi0><phi0*| + x |phi1><phi0*|
inline AssembledWaveOperator assemble_wave_operator(cplx x, const FrameSample& s) {
  AssembledWaveOperator a;
  a.t = s.t;
  a.p0 = s.right.col(0) * s.dual.row(0);
  a.omega = (s.right.col(0) + x * s.right.col(1)) * s.dual.row(0);
  return a;
}

inline AssembledWaveOperator assemble_wave_operator(cplx x, const BiorthonormalEigensystem& eig, int /*sheet*/) {
  FrameSample s;
  s.right = eig.right;
  s.dual = eig.dual;
  s.lambda = eig.eigenvalues;
  return assemble_wave_operator(x, s);
}

// ---------------------------------------------------------------- kernel, V, Y

// K = i hbar (P0' P0 + Q0' Q0) with central differences for P0'.
inline CMatrix adiabatic_kernel(const std::function<CMatrix(double)>& p0, double t, double fd_step,
                                double hbar = 1.0) {
  const CMatrix p = p0(t);
  const CMatrix pd = (p0(t + fd_step) - p0(t - fd_step)) / (2.0 * fd_step);
  const CMatrix q = CMatrix::Identity(p.rows(), p.cols()) - p;
  const CMatrix qd = -pd;
  return I * hbar * (pd * p + qd * q);
}

// Instantaneous-basis matrix diag(l0, l1) with the off-diagonal -i hbar A
// (upper) and +i hbar A (lower), A the closed-form coupling.
inline CMatrix renormalized_hamiltonian_two_level(const TwoLevelModel& m, double t, int sheet) {
  const TwoLevelFrame fr = two_level_frame(m, t, sheet);
  CMatrix h(2, 2);
  h << fr.lambda0, -I * m.hbar * fr.coupling, I * m.hbar * fr.coupling, fr.lambda1;
  return h;
}

// (Q00 - Y) H (P00 + Y) / (i hbar), projected back onto the Q00 . P00 block.
inline CMatrix y_equation_rhs(const CMatrix& y, const CMatrix& h_tilde, const CMatrix& p00, const CMatrix& q00,
                              double hbar = 1.0) {
  const double scale = std::max(1.0, y.norm());
  if ((q00 * y - y).norm() > 1e-8 * scale || (y * p00 - y).norm() > 1e-8 * scale)
    throw BlockViolation("y_equation_rhs: Y leaves the Q0(0) Y P0(0) block");
  const CMatrix r = (q00 - y) * h_tilde * (p00 + y) / (I * hbar);
  return q00 * r * p00;
}

// V(t) = F(t) C(t) F(0)^{-1} with C the ordered exponential of the
// block-diagonal part of F^{-1} dF/dt. The frame's columns are
// phase-aligned with the previous grid point before differencing.
inline std::vector<CMatrix> intertwining_propagate(const std::function<CMatrix(double)>& basis, int active_dim,
                                                   const PropagationPlan& plan, double fd_step = -1.0) {
  plan.validate();
  if (plan.n_steps < 1) throw GridTooCoarse("intertwining_propagate: need at least one step");
  const double h = fd_step > 0 ? fd_step : 1e-3 * plan.dt();
  auto align = [](CMatrix f, const CMatrix& ref) {
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
      const cplx o = ref.col(c).dot(f.col(c));
      if (std::abs(o) > 0) f.col(c) *= std::conj(o) / std::abs(o);
    }
    return f;
  };
  std::vector<double> times;
  std::vector<CMatrix> frames, gens;
  CMatrix prev;
  for (int k = 0; k <= plan.n_steps; ++k) {
    const double t = plan.time(k);
    CMatrix f = basis(t);
    if (k > 0) f = align(f, prev);
    const CMatrix fp = align(basis(t + h), f), fm = align(basis(t - h), f);
    const CMatrix fd = (fp - fm) / (2.0 * h);
    CMatrix g = f.partialPivLu().solve(fd);
    const Eigen::Index n = g.rows(), m = active_dim;
    g.topRightCorner(m, n - m).setZero();
    g.bottomLeftCorner(n - m, m).setZero();
    times.push_back(t);
    frames.push_back(f);
    gens.push_back(g);
    prev = f;
  }
  const std::vector<CMatrix> c = time_ordered_exponential_series(gens, times);
  const CMatrix f0inv = frames.front().inverse();
  std::vector<CMatrix> v;
  v.reserve(c.size());
  for (size_t k = 0; k < c.size(); ++k) v.push_back(frames[k] * c[k] * f0inv);
  return v;
}

// ---------------------------------------------------------------- residuals

// H^eff = (P0 H + i hbar P0') Omega, which makes i hbar d/dt(P0 psi) = H^eff P0 psi
// for psi = Omega P0 psi.
inline CMatrix effective_hamiltonian(const CMatrix& p0, const CMatrix& h, const CMatrix& p0_dot,
                                     const CMatrix& omega, double hbar = 1.0) {
  return (p0 * h + I * hbar * p0_dot) * omega;
}

// || i hbar Omega' - H Omega + Omega H Omega - i hbar Omega Omega' ||
inline double bloch_residual(const CMatrix& omega, const CMatrix& omega_dot, const CMatrix& h, double hbar = 1.0) {
  return (I * hbar * omega_dot - h * omega + omega * h * omega - I * hbar * omega * omega_dot).norm();
}

} // namespace tdwo
