#pragma once

#include "tdwo/errors.hpp"

#include <Eigen/Dense>
#ifdef TDWO_HAVE_LAPACKE
#include <lapacke.h>
#endif

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <vector>

namespace tdwo {

using cplx = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

inline constexpr cplx I{0.0, 1.0};

inline bool all_finite(const CMatrix& m) { return m.allFinite(); }

struct EigOptions {
  int max_dim = 512;
  double cond_limit = 1e12; // condition of the right-vector matrix
  int max_iterations_per_row = 60;
};

// Eigenvalues with right eigenvectors (columns of `right`, unit 2-norm) and
// the dual bras (rows of `dual`) so that dual * right = 1.
struct BiorthonormalEigensystem {
  CVector eigenvalues;
  CMatrix right;
  CMatrix dual;
  std::vector<int> sheet; // 0 when the notion does not apply

  int size() const { return static_cast<int>(eigenvalues.size()); }
  CVector right_vector(int i) const { return right.col(i); }
  // Bra components; <dual_i|v> = dual_row(i) * v without conjugation.
  Eigen::RowVectorXcd dual_row(int i) const { return dual.row(i); }
  cplx pairing(int i, int j) const { return (dual.row(i) * right.col(j))(0, 0); }
  CMatrix projector(int i) const { return right.col(i) * dual.row(i); }
  CMatrix reconstruct() const {
    return right * eigenvalues.asDiagonal() * dual;
  }
};

// Hessenberg reduction + shifted QR with back-substituted vectors (LAPACK
// zgeev when available, Eigen's ComplexEigenSolver otherwise); duals from the
// inverse.
inline BiorthonormalEigensystem eig_nonhermitian(const CMatrix& m,
                                                 const EigOptions& opt = {}) {
  if (m.rows() != m.cols())
    throw PreconditionViolation("eig_nonhermitian: matrix is not square");
  if (m.rows() == 0 || m.rows() > opt.max_dim)
    throw PreconditionViolation("eig_nonhermitian: dimension outside the configured cap");
  if (!m.allFinite())
    throw NonConvergence("eig_nonhermitian: non-finite input");
  const Eigen::Index n = m.rows();

  CVector ev(n);
  CMatrix vecs(n, n);
#ifdef TDWO_HAVE_LAPACKE
  {
    CMatrix a = m;
    const lapack_int info = LAPACKE_zgeev(LAPACK_COL_MAJOR, 'N', 'V', static_cast<lapack_int>(n),
                                          reinterpret_cast<lapack_complex_double*>(a.data()),
                                          static_cast<lapack_int>(n),
                                          reinterpret_cast<lapack_complex_double*>(ev.data()), nullptr, 1,
                                          reinterpret_cast<lapack_complex_double*>(vecs.data()),
                                          static_cast<lapack_int>(n));
    if (info != 0) throw NonConvergence("eig_nonhermitian: QR iteration did not converge");
  }
#else
  {
    Eigen::ComplexEigenSolver<CMatrix> es;
    es.setMaxIterations(opt.max_iterations_per_row * static_cast<int>(n)); // a total, not per row
    es.compute(m, true);
    if (es.info() != Eigen::Success)
      throw NonConvergence("eig_nonhermitian: QR iteration did not converge");
    ev = es.eigenvalues();
    vecs = es.eigenvectors();
  }
#endif

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (ev[a].imag() != ev[b].imag()) return ev[a].imag() > ev[b].imag();
    return ev[a].real() < ev[b].real();
  });

  BiorthonormalEigensystem out;
  out.eigenvalues.resize(n);
  out.right.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.eigenvalues[k] = ev[order[k]];
    CVector v = vecs.col(order[k]);
    const double nv = v.norm();
    if (!(nv > 0.0)) throw DefectiveMatrix("eig_nonhermitian: null eigenvector");
    out.right.col(k) = v / nv;
  }
  Eigen::PartialPivLU<CMatrix> lu(out.right);
  const double rcond = lu.rcond();
  if (!(rcond * opt.cond_limit > 1.0))
    throw DefectiveMatrix("eig_nonhermitian: eigenvectors nearly dependent (exceptional point?)");
  out.dual = lu.inverse();
  out.sheet.assign(static_cast<size_t>(n), 0);
  return out;
}

namespace detail {

// Scaling-and-squaring Taylor series; only used when the eigenbasis is
// unusable.
inline CMatrix expm_taylor(const CMatrix& a) {
  const Eigen::Index n = a.rows();
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  int s = 0;
  if (norm1 > 0.5) s = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));
  if (s > 1000) throw NonConvergence("matrix_exponential: argument too large");
  const CMatrix b = a / std::ldexp(1.0, s);
  CMatrix term = CMatrix::Identity(n, n);
  CMatrix sum = term;
  for (int k = 1; k <= 40; ++k) {
    term = (term * b) / static_cast<double>(k);
    sum += term;
    if (term.cwiseAbs().maxCoeff() <= 1e-18 * sum.cwiseAbs().maxCoeff()) break;
  }
  for (int i = 0; i < s; ++i) sum = (sum * sum).eval();
  if (!sum.allFinite()) throw NonConvergence("matrix_exponential: overflow in squaring");
  return sum;
}

} // namespace detail

inline CMatrix exp_from_eigensystem(const BiorthonormalEigensystem& es, cplx scale) {
  CVector e(es.size());
  for (int k = 0; k < es.size(); ++k) e[k] = std::exp(scale * es.eigenvalues[k]);
  return es.right * e.asDiagonal() * es.dual;
}

inline CMatrix matrix_exponential(const CMatrix& m, cplx scale) {
  if (m.rows() != m.cols())
    throw PreconditionViolation("matrix_exponential: matrix is not square");
  if (m.isZero(0.0)) return CMatrix::Identity(m.rows(), m.cols());
  try {
    return exp_from_eigensystem(eig_nonhermitian(m), scale);
  } catch (const DefectiveMatrix&) {
    return detail::expm_taylor(scale * m);
  } catch (const NonConvergence&) {
    return detail::expm_taylor(scale * m);
  }
}

// arccos|det Z1^dag Z2|^2 for orthogonal projectors.
inline double fubini_study_distance(const CMatrix& p1, const CMatrix& p2,
                                    double tol = 1e-10) {
  auto check = [tol](const CMatrix& p) {
    if (p.rows() != p.cols()) throw NotAProjector("fubini_study_distance: not square");
    const double scale = std::max(1.0, p.norm());
    if ((p * p - p).norm() > tol * scale) throw NotAProjector("fubini_study_distance: not idempotent");
    if ((p - p.adjoint()).norm() > tol * scale) throw NotAProjector("fubini_study_distance: not self-adjoint");
  };
  check(p1);
  check(p2);
  if (p1.rows() != p2.rows()) throw RankMismatch("fubini_study_distance: dimension mismatch");
  const double tr1 = p1.trace().real(), tr2 = p2.trace().real();
  if (std::abs(tr1 - tr2) > 0.5) throw RankMismatch("fubini_study_distance: ranks differ");
  const int m = static_cast<int>(std::lround(tr1));
  if (m == 0) return 0.0;

  auto range_basis = [m](const CMatrix& p) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(p);
    // ascending eigenvalues: the last m columns span the range
    return CMatrix(es.eigenvectors().rightCols(m));
  };
  const CMatrix z1 = range_basis(p1), z2 = range_basis(p2);
  const double d = std::abs((z1.adjoint() * z2).determinant());
  return std::acos(std::clamp(d * d, 0.0, 1.0));
}

// Cumulative products exp(-G_mid dt_k) ... exp(-G_mid dt_0), with G_mid the
// mean of the two end samples of each interval. out[k] is the propagator from
// t_0 to t_k.
inline std::vector<CMatrix> time_ordered_exponential_series(const std::vector<CMatrix>& generator,
                                                            const std::vector<double>& t_grid) {
  if (t_grid.size() < 2) throw GridTooCoarse("time_ordered_exponential: need at least two grid points");
  if (generator.size() != t_grid.size())
    throw PreconditionViolation("time_ordered_exponential: one generator sample per grid point");
  for (size_t k = 1; k < t_grid.size(); ++k)
    if (!(t_grid[k] > t_grid[k - 1]))
      throw PreconditionViolation("time_ordered_exponential: grid must increase strictly");
  const Eigen::Index n = generator.front().rows();
  std::vector<CMatrix> out;
  out.reserve(t_grid.size());
  out.push_back(CMatrix::Identity(n, n));
  for (size_t k = 1; k < t_grid.size(); ++k) {
    const double dt = t_grid[k] - t_grid[k - 1];
    const CMatrix mid = 0.5 * (generator[k - 1] + generator[k]);
    CMatrix step;
    if (n == 1) {
      step = CMatrix::Constant(1, 1, std::exp(-mid(0, 0) * dt));
    } else {
      step = matrix_exponential(mid, -dt);
    }
    out.push_back(step * out.back());
  }
  return out;
}

inline CMatrix time_ordered_exponential(const std::vector<CMatrix>& generator,
                                        const std::vector<double>& t_grid) {
  return time_ordered_exponential_series(generator, t_grid).back();
}

// 1 - |<psi|phi>| / (|psi| |phi|)
inline double wavefunction_distance(const CVector& psi, const CVector& phi) {
  if (psi.size() != phi.size())
    throw PreconditionViolation("wavefunction_distance: dimension mismatch");
  const double a = psi.norm(), b = phi.norm();
  if (a < 1e-300 || b < 1e-300) throw ZeroVector("wavefunction_distance: zero vector");
  const double c = std::abs(psi.dot(phi)) / (a * b);
  return std::clamp(1.0 - c, 0.0, 1.0);
}

} // namespace tdwo
