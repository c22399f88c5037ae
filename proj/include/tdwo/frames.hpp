#pragma once

// Instantaneous eigenframes along a path. A frame sample carries K tracked
// eigenpairs (index 0 is the followed state) and the matrix of couplings
// <dual_b|d right_c/dt>. Two providers ship: closed forms for the two-level
// model and a grid table built by diagonalization for generic matrices.

#include "tdwo/models.hpp"
#include "tdwo/propagators.hpp"

#include <memory>
#include <optional>

namespace tdwo {

struct FrameSample {
  double t = 0.0;
  int sheet = 0;
  cplx branch{0.0, 0.0}; // continuity datum (the root w for the two-level model)
  CVector lambda;        // K
  CMatrix right;         // d x K
  CMatrix dual;          // K x d
  CMatrix coupling;      // K x K
  // phi0^T phi0 when the connection is known to be (1/2) d/dt log of it
  // (complex symmetric H); lets the driver integrate it exactly.
  std::optional<cplx> connection_potential;

  int size() const { return static_cast<int>(lambda.size()); }
};

class TwoLevelFrames {
public:
  explicit TwoLevelFrames(TwoLevelModel m) : m_(std::move(m)) { m_.validate(); }

  double hbar() const { return m_.hbar; }
  int sheet_at(double t) const { return m_.sheet_at(t); }
  const TwoLevelModel& model() const { return m_; }
  CMatrix hamiltonian(double t) const { return two_level_hamiltonian(m_, t); }

  FrameSample sample(double t, int sheet, std::optional<cplx> branch = std::nullopt) const {
    const cplx w = branch ? two_level_w_continuous(m_, t, *branch) : two_level_w(m_, t, sheet);
    const TwoLevelFrame fr = two_level_frame(m_, t, sheet, w, 0.0);
    FrameSample s;
    s.t = t;
    s.sheet = sheet;
    s.branch = w;
    s.lambda.resize(2);
    s.lambda << fr.lambda0, fr.lambda1;
    s.right.resize(2, 2);
    s.right.col(0) = fr.phi0;
    s.right.col(1) = fr.phi1;
    s.dual.resize(2, 2);
    s.dual.row(0) = fr.dual0;
    s.dual.row(1) = fr.dual1;
    s.coupling.resize(2, 2);
    s.coupling << fr.connection, fr.coupling, -fr.coupling, fr.connection;
    s.connection_potential = (fr.phi0.transpose() * fr.phi0)(0, 0);
    return s;
  }

private:
  TwoLevelModel m_;
};

// A matrix-valued Hamiltonian with an analytic time derivative.
struct NumericModel {
  int dim = 0;
  double hbar = 1.0;
  double duration = 1.0;
  std::function<CMatrix(double)> hamiltonian;
  std::function<CMatrix(double)> hamiltonian_dot;
};

inline NumericModel dvr_numeric_model(const DvrModel& m) {
  auto ops = std::make_shared<DvrOperators>(dvr_operators(m));
  NumericModel nm;
  nm.dim = 2 * m.n_points;
  nm.hbar = m.hbar;
  nm.duration = m.path.duration;
  const ParameterPath path = m.path;
  nm.hamiltonian = [ops, path](double t) { return dvr_hamiltonian(*ops, path, t); };
  nm.hamiltonian_dot = [ops, path](double t) { return dvr_hamiltonian_dot(*ops, path, t); };
  return nm;
}

// Synthetic complex symmetric 3-level Hamiltonian H0 + s(t) V with
// s = (1 - cos(2 pi t / T)) / 2: two low states (the active pair) and a
// dissipative third one.
inline NumericModel three_level_toy_model(double T) {
  CMatrix h0 = CMatrix::Zero(3, 3);
  h0(1, 1) = 0.25;
  h0(2, 2) = cplx(0.8, -0.05);
  CMatrix v(3, 3);
  v << 0.0, 0.1, 0.15, 0.1, 0.05, 0.1, 0.15, 0.1, 0.0;
  const double k = 2.0 * std::numbers::pi / T;
  NumericModel nm;
  nm.dim = 3;
  nm.duration = T;
  nm.hamiltonian = [h0, v, k](double t) { return CMatrix(h0 + 0.5 * (1.0 - std::cos(k * t)) * v); };
  nm.hamiltonian_dot = [v, k](double t) { return CMatrix(0.5 * k * std::sin(k * t) * v); };
  return nm;
}

// Indices (in eig_nonhermitian order) of the field-free bound states of the
// g channel with the requested vibrational numbers (counted from 0).
inline std::vector<int> dvr_bound_state_indices(const BiorthonormalEigensystem& es, int n_points,
                                                const std::vector<int>& levels, double imag_tol = 1e-7) {
  std::vector<std::pair<double, int>> bound;
  for (int j = 0; j < es.size(); ++j) {
    const double wg = es.right.col(j).head(n_points).squaredNorm() / es.right.col(j).squaredNorm();
    if (wg > 0.5 && std::abs(es.eigenvalues[j].imag()) < imag_tol) bound.emplace_back(es.eigenvalues[j].real(), j);
  }
  std::sort(bound.begin(), bound.end());
  std::vector<int> out;
  for (int v : levels) {
    if (v < 0 || v >= static_cast<int>(bound.size()))
      throw PreconditionViolation("dvr_bound_state_indices: level " + std::to_string(v) + " is not bound");
    out.push_back(bound[v].second);
  }
  return out;
}

// Orthogonal projector onto the field-free bound states of the g channel.
inline CMatrix dvr_bound_projector(const BiorthonormalEigensystem& es, int n_points, double imag_tol = 1e-7) {
  std::vector<int> idx;
  for (int j = 0; j < es.size(); ++j) {
    const double wg = es.right.col(j).head(n_points).squaredNorm() / es.right.col(j).squaredNorm();
    if (wg > 0.5 && std::abs(es.eigenvalues[j].imag()) < imag_tol) idx.push_back(j);
  }
  CMatrix b(es.right.rows(), static_cast<Eigen::Index>(idx.size()));
  for (size_t c = 0; c < idx.size(); ++c) b.col(static_cast<Eigen::Index>(c)) = es.right.col(idx[c]);
  Eigen::HouseholderQR<CMatrix> qr(b);
  const CMatrix q = qr.householderQ() * CMatrix::Identity(b.rows(), b.cols());
  return q * q.adjoint();
}

// Couplings from the Hellmann-Feynman identity; the diagonal vanishes in the
// phi^T phi = 1 gauge used for complex symmetric matrices.
inline CMatrix hellmann_feynman_matrix(const CMatrix& hdot, const CVector& lambda, const CMatrix& right,
                                       const CMatrix& dual, double t, double gap_tolerance = 1e-10) {
  const CMatrix num = dual * hdot * right;
  const int k = static_cast<int>(lambda.size());
  CMatrix c = CMatrix::Zero(k, k);
  for (int b = 0; b < k; ++b)
    for (int d = 0; d < k; ++d) {
      if (b == d) continue;
      const cplx gap = lambda[d] - lambda[b];
      if (std::abs(gap) <= gap_tolerance)
        throw DegenerateGap("coupling: tracked eigenvalues degenerate at t=" + std::to_string(t));
      c(b, d) = num(b, d) / gap;
    }
  return c;
}

// Inverse iteration for one eigenpair of a complex symmetric matrix near
// (sigma, v0); returns phi with phi^T phi = 1 oriented like v0. The shift is
// moved to the Rayleigh quotient every few sweeps; a result that lost its
// overlap with v0 is rejected rather than silently swapped.
inline std::pair<cplx, CVector> refine_symmetric_eigenpair(const CMatrix& h, cplx sigma, const CVector& v0,
                                                           int max_iter = 40) {
  const Eigen::Index n = h.rows();
  const CMatrix id = CMatrix::Identity(n, n);
  Eigen::PartialPivLU<CMatrix> lu(h - sigma * id);
  CVector v = v0 / v0.norm();
  cplx lam = sigma;
  const double scale = h.cwiseAbs().maxCoeff();
  bool done = false;
  for (int it = 0; it < max_iter && !done; ++it) {
    v = lu.solve(v);
    const double nv = v.norm();
    if (!(nv > 0) || !std::isfinite(nv)) throw NonConvergence("inverse iteration broke down");
    v /= nv;
    lam = (v.transpose() * h * v)(0, 0) / (v.transpose() * v)(0, 0);
    done = (h * v - lam * v).norm() <= 1e-11 * scale;
    if (!done && it % 4 == 3) lu.compute(h - lam * id);
  }
  if (!done) throw NonConvergence("inverse iteration did not converge");
  if (std::abs(v.dot(v0)) < 0.5 * v0.norm())
    throw AmbiguousTracking("inverse iteration left the starting eigenvector");
  v /= std::sqrt((v.transpose() * v)(0, 0));
  if ((v.transpose() * v0)(0, 0).real() < 0) v = -v;
  return {lam, v};
}

// Frames on the grid t0 + j*dt/2 for a complex symmetric Hamiltonian. Integer
// points come from a full diagonalization (handed to `on_eigensystem` so that
// SEO can share it); midpoints are diagonalized too and matched against the
// preceding grid point. Inverse iteration from averaged endpoint vectors was
// tried and fails at avoided crossings.
class TrackedFrames {
public:
  using EigCallback = std::function<void(int, double, const BiorthonormalEigensystem&)>;

  TrackedFrames(NumericModel model, const PropagationPlan& plan, std::vector<int> initial_indices,
                bool with_midpoints = true, const EigCallback& on_eigensystem = {})
      : model_(std::move(model)), t0_(plan.t0), dt_(plan.dt()), n_(plan.n_steps) {
    plan.validate();
    const int k = static_cast<int>(initial_indices.size());
    if (k < 1) throw PreconditionViolation("TrackedFrames: no states to follow");
    FrameSample prev;
    for (int j = 0; j <= n_; ++j) {
      const double t = plan.time(j);
      const CMatrix h = model_.hamiltonian(t);
      if (j == 0 && (h - h.transpose()).norm() > 1e-10 * std::max(1.0, h.norm()))
        throw PreconditionViolation("TrackedFrames: Hamiltonian must be complex symmetric");
      BiorthonormalEigensystem es = eig_nonhermitian(h);
      if (on_eigensystem) on_eigensystem(j, t, es);
      FrameSample s;
      s.t = t;
      s.lambda.resize(k);
      s.right.resize(h.rows(), k);
      s.dual.resize(k, h.rows());
      std::vector<bool> used(es.size(), false);
      for (int b = 0; b < k; ++b) {
        int idx;
        if (j == 0) {
          idx = initial_indices[b];
          if (idx < 0 || idx >= es.size()) throw PreconditionViolation("TrackedFrames: bad initial index");
        } else {
          idx = best_match(prev.dual.row(b), es, used, t);
        }
        used[idx] = true;
        CVector v = es.right.col(idx);
        v /= std::sqrt((v.transpose() * v)(0, 0));
        if (j > 0 && (prev.dual.row(b) * v)(0, 0).real() < 0) v = -v;
        s.lambda[b] = es.eigenvalues[idx];
        s.right.col(b) = v;
        s.dual.row(b) = v.transpose();
      }
      s.coupling = hellmann_feynman_matrix(model_.hamiltonian_dot(t), s.lambda, s.right, s.dual, t);
      const std::vector<int> rank = im_rank(s.lambda);
      if (j > 0)
        for (int b = 0; b < k; ++b)
          if (rank[b] != prev_rank_[b]) switches_.push_back({t, b});
      prev_rank_ = rank;
      integer_.push_back(s);
      prev = s;
    }
    if (with_midpoints) {
      for (int j = 0; j < n_; ++j) {
        const FrameSample& a = integer_[j];
        const double t = t0_ + (j + 0.5) * dt_;
        const CMatrix h = model_.hamiltonian(t);
        const BiorthonormalEigensystem es = eig_nonhermitian(h);
        FrameSample s;
        s.t = t;
        s.lambda.resize(k);
        s.right.resize(h.rows(), k);
        s.dual.resize(k, h.rows());
        std::vector<bool> used(es.size(), false);
        for (int c = 0; c < k; ++c) {
          const int idx = best_match(a.dual.row(c), es, used, t);
          used[idx] = true;
          CVector v = es.right.col(idx);
          v /= std::sqrt((v.transpose() * v)(0, 0));
          if ((a.dual.row(c) * v)(0, 0).real() < 0) v = -v;
          s.lambda[c] = es.eigenvalues[idx];
          s.right.col(c) = v;
          s.dual.row(c) = v.transpose();
        }
        s.coupling = hellmann_feynman_matrix(model_.hamiltonian_dot(t), s.lambda, s.right, s.dual, t);
        mid_.push_back(s);
      }
    }
  }

  double hbar() const { return model_.hbar; }
  int sheet_at(double) const { return 0; }
  const NumericModel& model() const { return model_; }
  CMatrix hamiltonian(double t) const { return model_.hamiltonian(t); }
  // Times at which a followed eigenvalue changed its place in the
  // imaginary-part ordering of the followed set (the labels exchange).
  struct Switch {
    double t;
    int state;
  };
  const std::vector<Switch>& ordering_switches() const { return switches_; }
  const std::vector<FrameSample>& grid_samples() const { return integer_; }

  FrameSample sample(double t, int = 0, std::optional<cplx> = std::nullopt) const {
    const double u = (t - t0_) / (0.5 * dt_);
    const long j = std::lround(u);
    if (std::abs(u - static_cast<double>(j)) > 1e-6 || j < 0 || j > 2L * n_)
      throw PreconditionViolation("TrackedFrames: time is not on the frame grid");
    if (j % 2 == 0) return integer_[static_cast<size_t>(j / 2)];
    if (mid_.empty()) throw PreconditionViolation("TrackedFrames: midpoints were not computed");
    return mid_[static_cast<size_t>(j / 2)];
  }

private:
  static int best_match(const Eigen::RowVectorXcd& dual_prev, const BiorthonormalEigensystem& es,
                        const std::vector<bool>& used, double t) {
    // compare directions: the dual of a phi^T phi = 1 vector is not unit size
    const double scale = dual_prev.norm();
    double b1 = -1, b2 = -1;
    int best = -1;
    for (int j = 0; j < es.size(); ++j) {
      if (used[j]) continue;
      const double a = std::abs((dual_prev * es.right.col(j))(0, 0)) / scale;
      if (a > b1) {
        b2 = b1;
        b1 = a;
        best = j;
      } else if (a > b2) {
        b2 = a;
      }
    }
    if (best < 0 || b1 - b2 < 1e-6)
      throw AmbiguousTracking("frame tracking: ambiguous continuation at t=" + std::to_string(t));
    return best;
  }

  NumericModel model_;
  double t0_, dt_;
  int n_;
  std::vector<FrameSample> integer_, mid_;
  static std::vector<int> im_rank(const CVector& lambda) {
    std::vector<int> r(lambda.size(), 0);
    const double tol = 1e-8 * std::max(1e-300, lambda.cwiseAbs().maxCoeff());
    for (Eigen::Index a = 0; a < lambda.size(); ++a)
      for (Eigen::Index b = 0; b < lambda.size(); ++b)
        if (lambda[b].imag() > lambda[a].imag() + tol) ++r[a];
    return r;
  }

  std::vector<int> prev_rank_;
  std::vector<Switch> switches_;
};

// Gauge factors relating two frames of the same eigenpairs at one time:
// old right_b = g_b * new right_b.
inline CVector gauge_factors(const FrameSample& from, const FrameSample& to) {
  CVector g(from.size());
  for (int b = 0; b < from.size(); ++b) g[b] = (to.dual.row(b) * from.right.col(b))(0, 0);
  return g;
}

} // namespace tdwo
