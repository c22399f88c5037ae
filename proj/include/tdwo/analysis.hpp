#pragma once

#include "tdwo/propagators.hpp"

#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <variant>

namespace tdwo {

inline constexpr double kNormFloor = 1e-300;

struct PopulationLabel {
  std::string name;
  std::variant<CVector, CMatrix> target; // a state or a projector
};

struct PopulationSeries {
  std::vector<double> times;
  std::vector<std::string> labels;
  std::vector<std::vector<double>> values; // values[label][time]; NaN when the state vanished
  bool renormalized = true;
};

inline PopulationSeries renormalized_populations(const Trajectory& tr, const std::vector<PopulationLabel>& labels) {
  PopulationSeries ps;
  ps.times = tr.times;
  for (const auto& l : labels) ps.labels.push_back(l.name);
  ps.values.assign(labels.size(), std::vector<double>(tr.size(), 0.0));
  for (size_t k = 0; k < tr.size(); ++k) {
    const CVector& psi = tr.states[k];
    const double n2 = psi.squaredNorm();
    for (size_t a = 0; a < labels.size(); ++a) {
      if (n2 < kNormFloor) {
        ps.values[a][k] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      double p;
      if (const auto* v = std::get_if<CVector>(&labels[a].target)) {
        if (v->size() != psi.size()) throw PreconditionViolation("renormalized_populations: dimension mismatch");
        p = std::norm(v->dot(psi)) / v->squaredNorm();
      } else {
        const CMatrix& pr = std::get<CMatrix>(labels[a].target);
        if (pr.cols() != psi.size()) throw PreconditionViolation("renormalized_populations: dimension mismatch");
        p = (pr * psi).squaredNorm();
      }
      ps.values[a][k] = p / n2;
    }
  }
  return ps;
}

inline std::vector<PopulationLabel> basis_labels(int dim) {
  std::vector<PopulationLabel> out;
  for (int i = 0; i < dim; ++i) out.push_back({"|" + std::to_string(i) + ">", CVector(CVector::Unit(dim, i))});
  return out;
}

// log10 |psi(T)|^2
inline double dissipation_rate(const Trajectory& tr) {
  if (tr.size() == 0) throw PreconditionViolation("dissipation_rate: empty trajectory");
  const double n2 = tr.states.back().squaredNorm();
  if (n2 < kNormFloor) throw ZeroVector("dissipation_rate: final norm underflow");
  return std::log10(n2);
}

namespace detail {

inline void require_same_grid(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw PreconditionViolation("series recorded on different grids");
  for (size_t k = 0; k < a.size(); ++k)
    if (std::abs(a[k] - b[k]) > 1e-9 * std::max(1.0, std::abs(b[k])))
      throw PreconditionViolation("series recorded on different grids");
}

} // namespace detail

inline std::vector<double> distance_series(const Trajectory& a, const Trajectory& b) {
  detail::require_same_grid(a.times, b.times);
  std::vector<double> d(a.size());
  for (size_t k = 0; k < a.size(); ++k) d[k] = wavefunction_distance(a.states[k], b.states[k]);
  return d;
}

// |  |a|^2 - |b|^2 | / max(|b|^2, floor)
inline std::vector<double> norm_error_series(const Trajectory& a, const Trajectory& b) {
  detail::require_same_grid(a.times, b.times);
  std::vector<double> d(a.size());
  for (size_t k = 0; k < a.size(); ++k)
    d[k] = std::abs(a.norms_sq[k] - b.norms_sq[k]) / std::max(b.norms_sq[k], kNormFloor);
  return d;
}

// (2/T) int_0^{T/2} of a per-sample series
inline double half_window_mean(const std::vector<double>& times, const std::vector<double>& v) {
  const double half = times.front() + 0.5 * (times.back() - times.front());
  return window_average(times, v, half);
}

// ---------------------------------------------------------------- output

// 17 significant digits, scientific
inline std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

struct Column {
  std::string name;
  std::vector<double> values;
};

inline void write_csv(std::ostream& os, const std::vector<Column>& cols) {
  if (cols.empty()) return;
  for (size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c].name;
  os << '\n';
  const size_t n = cols.front().values.size();
  for (const auto& c : cols)
    if (c.values.size() != n) throw PreconditionViolation("write_csv: ragged columns");
  for (size_t r = 0; r < n; ++r) {
    for (size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << fmt_real(cols[c].values[r]);
    os << '\n';
  }
}

// time, then Re/Im of every component, then |psi|^2
inline std::vector<Column> trajectory_columns(const Trajectory& tr, const std::string& prefix = "psi") {
  std::vector<Column> cols{{"t", tr.times}};
  if (tr.size() == 0) return cols;
  const Eigen::Index d = tr.states.front().size();
  for (Eigen::Index i = 0; i < d; ++i) {
    Column re{"re_" + prefix + std::to_string(i), {}}, im{"im_" + prefix + std::to_string(i), {}};
    for (const auto& s : tr.states) {
      re.values.push_back(s[i].real());
      im.values.push_back(s[i].imag());
    }
    cols.push_back(std::move(re));
    cols.push_back(std::move(im));
  }
  cols.push_back({"norm_sq", tr.norms_sq});
  return cols;
}

} // namespace tdwo
