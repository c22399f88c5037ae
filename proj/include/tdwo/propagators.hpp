#pragma once

#include "tdwo/numerics.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace tdwo {

enum class Scheme { SplitSOD, SOD, FOD, SEO, RK4 };

inline std::string to_string(Scheme s) {
  switch (s) {
  case Scheme::SplitSOD: return "split-sod";
  case Scheme::SOD: return "sod";
  case Scheme::FOD: return "fod";
  case Scheme::SEO: return "seo";
  case Scheme::RK4: return "rk4";
  }
  return "?";
}

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "split-sod" || s == "splitsod") return Scheme::SplitSOD;
  if (s == "sod") return Scheme::SOD;
  if (s == "fod") return Scheme::FOD;
  if (s == "seo") return Scheme::SEO;
  if (s == "rk4") return Scheme::RK4;
  throw PreconditionViolation("unknown scheme '" + s + "'");
}

struct PropagationPlan {
  int n_steps = 1000;
  double t0 = 0.0;
  double t1 = 1.0;
  Scheme scheme = Scheme::SplitSOD;
  int record_every = 1;

  double dt() const { return (t1 - t0) / n_steps; }
  double time(int k) const { return k == n_steps ? t1 : t0 + k * dt(); }
  void validate() const {
    if (n_steps <= 0) throw PreconditionViolation("PropagationPlan: n_steps must be positive");
    if (!(t1 > t0)) throw PreconditionViolation("PropagationPlan: t1 must exceed t0");
    if (record_every <= 0) throw PreconditionViolation("PropagationPlan: record_every must be positive");
  }
  bool records(int k) const { return k % record_every == 0 || k == n_steps; }
};

struct Trajectory {
  std::vector<double> times;
  std::vector<CVector> states;
  std::vector<double> norms_sq;

  void push(double t, const CVector& psi) {
    times.push_back(t);
    states.push_back(psi);
    norms_sq.push_back(psi.squaredNorm());
  }
  size_t size() const { return times.size(); }
};

using HamiltonianFn = std::function<CMatrix(double)>;

namespace detail {

inline void guard_divergence(const CVector& psi, double limit, double t, int k) {
  const double n = psi.norm();
  if (!(n <= limit))
    throw SchemeDivergence("propagation diverged: norm above 1e6 times the initial norm", t, k);
}

} // namespace detail

// psi_{n+1} = e^{-2iD dt} psi_{n-1} - 2i dt e^{-iD dt} H0(t_n) psi_n, with the
// first step done by one exact exponential of H0(0) + D.
inline Trajectory split_sod_propagate(const HamiltonianFn& h0, const CMatrix& d, const CVector& psi0,
                                      const PropagationPlan& plan, double hbar = 1.0) {
  plan.validate();
  const double dt = plan.dt();
  const double limit = 1e6 * psi0.norm();
  const bool has_d = !d.isZero(0.0);
  const CMatrix e1 = has_d ? matrix_exponential(d, -I * dt / hbar) : CMatrix();
  const CMatrix e2 = has_d ? matrix_exponential(d, -2.0 * I * dt / hbar) : CMatrix();

  Trajectory tr;
  tr.push(plan.t0, psi0);
  CVector prev = psi0;
  const CMatrix h_start = h0(plan.t0) + d;
  CVector cur = matrix_exponential(h_start, -I * dt / hbar) * psi0;
  detail::guard_divergence(cur, limit, plan.time(1), 1);
  if (plan.records(1)) tr.push(plan.time(1), cur);
  for (int n = 1; n < plan.n_steps; ++n) {
    const double t = plan.time(n);
    CVector hpsi = h0(t) * cur;
    CVector next;
    if (has_d)
      next = e2 * prev - (2.0 * I * dt / hbar) * (e1 * hpsi);
    else
      next = prev - (2.0 * I * dt / hbar) * hpsi;
    prev = std::move(cur);
    cur = std::move(next);
    detail::guard_divergence(cur, limit, plan.time(n + 1), n + 1);
    if (plan.records(n + 1)) tr.push(plan.time(n + 1), cur);
  }
  return tr;
}

// Plain second-order differencing: the split scheme without a dissipative split.
inline Trajectory sod_propagate(const HamiltonianFn& h, const CVector& psi0, const PropagationPlan& plan,
                                double hbar = 1.0) {
  const CMatrix zero = CMatrix::Zero(psi0.size(), psi0.size());
  return split_sod_propagate(h, zero, psi0, plan, hbar);
}

inline Trajectory fod_propagate(const HamiltonianFn& h, const CVector& psi0, const PropagationPlan& plan,
                                double hbar = 1.0) {
  plan.validate();
  const double dt = plan.dt();
  const double limit = 1e6 * psi0.norm();
  Trajectory tr;
  tr.push(plan.t0, psi0);
  CVector psi = psi0;
  for (int n = 0; n < plan.n_steps; ++n) {
    psi = psi - (I * dt / hbar) * (h(plan.time(n)) * psi);
    detail::guard_divergence(psi, limit, plan.time(n + 1), n + 1);
    if (plan.records(n + 1)) tr.push(plan.time(n + 1), psi);
  }
  return tr;
}

// One exponential of H(t_k) per step. `eigensystem_at(k)` may supply a
// precomputed diagonalization of H(t_k) so that it is shared with other users.
inline Trajectory seo_propagate(const HamiltonianFn& h, const CVector& psi0, const PropagationPlan& plan,
                                double hbar = 1.0,
                                const std::function<BiorthonormalEigensystem(int)>& eigensystem_at = {}) {
  plan.validate();
  const double dt = plan.dt();
  const double limit = 1e6 * psi0.norm();
  Trajectory tr;
  tr.push(plan.t0, psi0);
  CVector psi = psi0;
  for (int n = 0; n < plan.n_steps; ++n) {
    const cplx s = -I * dt / hbar;
    if (eigensystem_at)
      psi = exp_from_eigensystem(eigensystem_at(n), s) * psi;
    else
      psi = matrix_exponential(h(plan.time(n)), s) * psi;
    detail::guard_divergence(psi, limit, plan.time(n + 1), n + 1);
    if (plan.records(n + 1)) tr.push(plan.time(n + 1), psi);
  }
  return tr;
}

// Classical RK4 on i hbar psi' = H psi; only used as an alternative reference.
template <class F, class S>
S rk4_step(F&& f, double t, const S& y, double dt);

inline Trajectory rk4_propagate(const HamiltonianFn& h, const CVector& psi0, const PropagationPlan& plan,
                                double hbar = 1.0) {
  plan.validate();
  const double dt = plan.dt();
  const double limit = 1e6 * psi0.norm();
  auto f = [&](double t, const CVector& y) { return CVector((-I / hbar) * (h(t) * y)); };
  Trajectory tr;
  tr.push(plan.t0, psi0);
  CVector psi = psi0;
  for (int n = 0; n < plan.n_steps; ++n) {
    psi = rk4_step(f, plan.time(n), psi, dt);
    detail::guard_divergence(psi, limit, plan.time(n + 1), n + 1);
    if (plan.records(n + 1)) tr.push(plan.time(n + 1), psi);
  }
  return tr;
}

namespace detail {

inline double magnitude(const cplx& v) { return std::abs(v); }
template <class Derived>
double magnitude(const Eigen::MatrixBase<Derived>& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

} // namespace detail

// Classical four-stage Runge-Kutta step. Stages beyond 1e12 (or non-finite)
// raise StageOverflow.
template <class F, class S>
S rk4_step(F&& f, double t, const S& y, double dt) {
  auto check = [t](const S& k) {
    const double m = detail::magnitude(k);
    if (!(m <= 1e12)) throw StageOverflow("rk4_step: stage magnitude overflow", t);
  };
  const S k1 = f(t, y);
  check(k1);
  const S k2 = f(t + 0.5 * dt, S(y + (0.5 * dt) * k1));
  check(k2);
  const S k3 = f(t + 0.5 * dt, S(y + (0.5 * dt) * k2));
  check(k3);
  const S k4 = f(t + dt, S(y + dt * k3));
  check(k4);
  return S(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

// Index of the recorded sample nearest to t (times sorted).
inline size_t nearest_sample(const std::vector<double>& times, double t) {
  auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0;
  if (it == times.end()) return times.size() - 1;
  const size_t hi = static_cast<size_t>(it - times.begin());
  return (t - times[hi - 1] <= times[hi] - t) ? hi - 1 : hi;
}

// (1/t_end) * integral_0^{t_end} v dt by trapezoid, using the samples up to t_end.
inline double window_average(const std::vector<double>& times, const std::vector<double>& values,
                             double t_end) {
  double acc = 0.0, t_last = times.front();
  for (size_t k = 1; k < times.size() && times[k] <= t_end * (1.0 + 1e-12); ++k) {
    acc += 0.5 * (values[k] + values[k - 1]) * (times[k] - times[k - 1]);
    t_last = times[k];
  }
  const double span = t_last - times.front();
  return span > 0 ? acc / span : values.front();
}

// Mean distance over the first half of the run, (2/T) int_0^{T/2}.
inline double half_window_mean_distance(const Trajectory& run, const Trajectory& reference) {
  std::vector<double> d(run.size());
  for (size_t k = 0; k < run.size(); ++k)
    d[k] = wavefunction_distance(run.states[k], reference.states[nearest_sample(reference.times, run.times[k])]);
  const double t0 = run.times.front();
  const double half = t0 + 0.5 * (run.times.back() - t0);
  return window_average(run.times, d, half);
}

inline std::vector<std::pair<int, double>>
convergence_curve(const std::function<Trajectory(int)>& runner, const Trajectory& reference,
                  const std::vector<int>& step_counts) {
  std::vector<std::pair<int, double>> out;
  for (int n : step_counts) out.emplace_back(n, half_window_mean_distance(runner(n), reference));
  return out;
}

// Least-squares slope of log10(dist) against log10(n).
inline double loglog_slope(const std::vector<std::pair<int, double>>& curve) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(curve.size());
  for (const auto& [n, d] : curve) {
    const double x = std::log10(static_cast<double>(n)), y = std::log10(d);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

} // namespace tdwo
