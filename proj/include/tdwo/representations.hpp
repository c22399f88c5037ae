#pragma once

#include "tdwo/waveop.hpp"

namespace tdwo {

struct PhaseBreakdown {
  cplx dynamical{0.0, 0.0};  // integral of lambda (enters as -i/hbar)
  cplx connection{0.0, 0.0}; // integral of A
  cplx waveop{0.0, 0.0};     // integral of eta
};

struct RepresentedWavefunction {
  CVector psi;
  PhaseBreakdown phases;
  int sheet = 0;
  double t = 0.0;
};

inline cplx phase_factor(const PhaseBreakdown& p, double hbar) {
  return std::exp(-I * p.dynamical / hbar - p.connection - p.waveop);
}

// exp(-i/hbar int l0 - int A) phi0
template <class Provider>
RepresentedWavefunction adiabatic_wavefunction(const Provider& p, const WaveOperatorState& st) {
  const FrameSample s = p.sample(st.t, st.sheet, st.branch);
  RepresentedWavefunction r;
  r.t = st.t;
  r.sheet = st.sheet;
  r.phases.dynamical = st.accumulated_dynamical;
  r.phases.connection = st.accumulated_connection;
  r.psi = phase_factor(r.phases, p.hbar()) * s.right.col(0);
  return r;
}

// exp(-i/hbar int l0 - int A - int eta) (phi0 + x phi1)
template <class Provider>
RepresentedWavefunction almost_adiabatic_wavefunction(const Provider& p, const WaveOperatorState& st) {
  const FrameSample s = p.sample(st.t, st.sheet, st.branch);
  RepresentedWavefunction r;
  r.t = st.t;
  r.sheet = st.sheet;
  r.phases.dynamical = st.accumulated_dynamical;
  r.phases.connection = st.accumulated_connection;
  r.phases.waveop = st.accumulated_eta;
  r.psi = phase_factor(r.phases, p.hbar()) * (s.right.col(0) + st.x * s.right.col(1));
  return r;
}

inline RepresentedWavefunction adiabatic_wavefunction(const TwoLevelModel& m, const WaveOperatorState& st) {
  return adiabatic_wavefunction(TwoLevelFrames(m), st);
}

inline RepresentedWavefunction almost_adiabatic_wavefunction(const TwoLevelModel& m, const WaveOperatorState& st) {
  return almost_adiabatic_wavefunction(TwoLevelFrames(m), st);
}

enum class Representation { Adiabatic, AlmostAdiabatic };

template <class Provider>
Trajectory represent_series(const Provider& p, const std::vector<WaveOperatorState>& states, Representation kind) {
  Trajectory tr;
  for (const auto& st : states)
    tr.push(st.t, kind == Representation::Adiabatic ? adiabatic_wavefunction(p, st).psi
                                                    : almost_adiabatic_wavefunction(p, st).psi);
  return tr;
}

struct EffectivePhaseRate {
  cplx lambda_eff;
  cplx eta_hat;
  cplx eta;
};

// lambda^eff = <phi0*| Omega^{-1} H Omega |phi0> with Omega^{-1} = P0 P and P
// the orthogonal projector onto Ran Omega; eta_hat follows from
// eta_hat = -i/hbar (lambda^eff - lambda0) + eta.
inline EffectivePhaseRate effective_dynamical_phase_rate(cplx x, const FrameSample& s, double hbar = 1.0) {
  const CVector chi = s.right.col(0) + x * s.right.col(1);
  const CVector hchi = s.lambda[0] * s.right.col(0) + x * s.lambda[1] * s.right.col(1);
  EffectivePhaseRate r;
  r.lambda_eff = chi.dot(hchi) / chi.squaredNorm();
  r.eta = x * s.coupling(0, 1);
  r.eta_hat = -I * (r.lambda_eff - s.lambda[0]) / hbar + r.eta;
  return r;
}

inline EffectivePhaseRate effective_dynamical_phase_rate(const WaveOperatorState& st, const FrameSample& s,
                                                         double hbar = 1.0) {
  return effective_dynamical_phase_rate(st.x, s, hbar);
}

// ---------------------------------------------------------------- m-dimensional active space

// Frame coordinates: x holds the (K-m) x m limbo block of the wave operator,
// c the m x m ordered exponential of the effective generator
// i/hbar E^eff + A^eff + eta.
struct MultidimState {
  double t = 0.0;
  int sheet = 0;
  cplx branch{0.0, 0.0};
  CMatrix x;
  CMatrix c;
};

namespace detail {

inline CMatrix frame_generator(const FrameSample& s, double hbar) {
  CMatrix g = -s.coupling;
  for (int b = 0; b < s.size(); ++b) g(b, b) -= I * s.lambda[b] / hbar;
  return g;
}

// x' = G_ia + G_ii x - x G_aa - x G_ai x
inline CMatrix matrix_riccati_rhs(const CMatrix& x, const FrameSample& s, int m, double hbar) {
  const CMatrix g = frame_generator(s, hbar);
  const int k = s.size();
  const auto gaa = g.topLeftCorner(m, m);
  const auto gai = g.topRightCorner(m, k - m);
  const auto gia = g.bottomLeftCorner(k - m, m);
  const auto gii = g.bottomRightCorner(k - m, k - m);
  return gia + gii * x - x * gaa - x * gai * x;
}

// i/hbar E^eff + A^eff + eta for the active block
inline CMatrix effective_generator(const CMatrix& x, const FrameSample& s, int m, double hbar) {
  CMatrix e = s.coupling.topLeftCorner(m, m) + s.coupling.topRightCorner(m, s.size() - m) * x;
  for (int b = 0; b < m; ++b) e(b, b) += I * s.lambda[b] / hbar;
  return e;
}

} // namespace detail

template <class Provider>
std::vector<MultidimState> propagate_multidim(const Provider& p, int m, const PropagationPlan& plan, Scheme scheme,
                                              bool freeze_waveop = false) {
  plan.validate();
  if (scheme != Scheme::FOD && scheme != Scheme::RK4)
    throw PreconditionViolation("propagate_multidim: scheme must be FOD or RK4");
  const double hb = p.hbar();
  const double dt = plan.dt();
  FrameSample cur = p.sample(plan.t0, p.sheet_at(plan.t0));
  const int k = cur.size();
  if (m < 1 || m >= k) throw PreconditionViolation("propagate_multidim: active dimension out of range");

  MultidimState st;
  st.t = plan.t0;
  st.sheet = cur.sheet;
  st.branch = cur.branch;
  st.x = CMatrix::Zero(k - m, m);
  st.c = CMatrix::Identity(m, m);
  std::vector<MultidimState> out{st};

  for (int n = 0; n < plan.n_steps; ++n) {
    const double ta = plan.time(n), tb = plan.time(n + 1);
    const int s_next = p.sheet_at(tb);
    if (s_next != cur.sheet) {
      const FrameSample nw = p.sample(ta, s_next, cur.branch);
      const CVector g = gauge_factors(cur, nw);
      const CVector ga = g.head(m), gi = g.tail(k - m);
      st.x = gi.asDiagonal() * st.x * ga.cwiseInverse().asDiagonal();
      st.c = ga.asDiagonal() * st.c;
      cur = nw;
    }
    FrameSample end;
    CMatrix xn;
    if (freeze_waveop) {
      end = p.sample(tb, s_next, cur.branch);
      xn = st.x;
    } else if (scheme == Scheme::FOD) {
      end = p.sample(tb, s_next, cur.branch);
      xn = st.x + dt * detail::matrix_riccati_rhs(st.x, cur, m, hb);
    } else {
      const FrameSample mid = p.sample(ta + 0.5 * dt, s_next, cur.branch);
      end = p.sample(tb, s_next, mid.branch);
      auto f = [&](double t, const CMatrix& x) {
        const double u = (t - ta) / dt;
        const FrameSample& s = u < 0.25 ? cur : (u > 0.75 ? end : mid);
        return CMatrix(detail::matrix_riccati_rhs(x, s, m, hb));
      };
      try {
        xn = rk4_step(f, ta, st.x, dt);
      } catch (const StageOverflow& e) {
        throw StageOverflow(e.what(), ta, n);
      }
    }
    std::vector<CMatrix> gens{detail::effective_generator(st.x, cur, m, hb),
                              detail::effective_generator(xn, end, m, hb)};
    // With one active state the connection commutes with the rest and is
    // taken exactly when the frame knows its potential; a trapezoid is
    // wrong by O(1) next to a zero of phi0^T phi0.
    const bool exact_conn = m == 1 && cur.connection_potential && end.connection_potential;
    if (exact_conn) {
      gens[0](0, 0) -= cur.coupling(0, 0);
      gens[1](0, 0) -= end.coupling(0, 0);
    }
    st.c = time_ordered_exponential(gens, {ta, tb}) * st.c;
    if (exact_conn) st.c *= std::exp(-connection_increment(cur, end, dt));
    st.x = xn;
    st.t = tb;
    st.sheet = end.sheet;
    st.branch = end.branch;
    cur = end;
    if (plan.records(n + 1)) out.push_back(st);
  }
  return out;
}

// psi(t) = sum_b C_{b a} Omega phi_b, i.e. F [1; x] C e_a in frame coordinates.
template <class Provider>
RepresentedWavefunction multidim_almost_adiabatic(const Provider& p, const MultidimState& st, int initial = 0) {
  const FrameSample s = p.sample(st.t, st.sheet, st.branch);
  const int m = static_cast<int>(st.c.rows()), k = s.size();
  if (initial < 0 || initial >= m) throw PreconditionViolation("multidim_almost_adiabatic: bad initial index");
  const CMatrix act = s.right.leftCols(m);
  const CMatrix gram = act.adjoint() * act;
  if (!(gram.partialPivLu().rcond() > 1e-10))
    throw SingularOverlap("multidim_almost_adiabatic: effective basis degenerate");
  CMatrix block(k, m);
  block.topRows(m) = CMatrix::Identity(m, m);
  block.bottomRows(k - m) = st.x;
  RepresentedWavefunction r;
  r.t = st.t;
  r.sheet = st.sheet;
  r.psi = s.right * (block * st.c.col(initial));
  return r;
}

} // namespace tdwo
