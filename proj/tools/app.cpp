#include "app.hpp"

#include "tdwo/analysis.hpp"
#include "tdwo/representations.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <sstream>

namespace tdwo::app {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string to_string(ModelKind k) {
  switch (k) {
  case ModelKind::TwoLevel: return "two-level";
  case ModelKind::Dvr: return "dvr";
  case ModelKind::ThreeLevel: return "three-level";
  }
  return "?";
}

// ---------------------------------------------------------------- manifest

namespace {

constexpr double kT0 = 50.0;

ScenarioConfig two_level(const std::string& name, double t_mult) {
  ScenarioConfig c;
  c.name = name;
  c.kind = ModelKind::TwoLevel;
  c.duration = t_mult * kT0;
  c.steps = 1000;
  c.reference_scheme = Scheme::SplitSOD;
  c.waveop_scheme = Scheme::FOD;
  return c;
}

std::vector<std::pair<ManifestEntry, ScenarioConfig>> make_builtins() {
  std::vector<std::pair<ManifestEntry, ScenarioConfig>> v;
  v.push_back({{"two-level-T0", "two-level loop, T = T0: final dissipation, populations, representation errors", 0.3},
               two_level("two-level-T0", 1)});
  v.push_back({{"two-level-2T0", "two-level loop, T = 2 T0", 0.3}, two_level("two-level-2T0", 2)});
  v.push_back({{"two-level-5T0", "two-level loop, T = 5 T0", 0.3}, two_level("two-level-5T0", 5)});
  v.push_back({{"two-level-10T0", "two-level loop, T = 10 T0: populations at T/2", 0.3},
               two_level("two-level-10T0", 10)});
  {
    ScenarioConfig c = two_level("two-level-convergence", 1);
    c.convergence_steps = {100, 125, 160, 200, 250, 400, 500, 800, 1000};
    c.reference_steps = 4000;
    v.push_back({{"two-level-convergence", "mean first-half distance versus step count for SOD, FOD and the "
                                           "almost-adiabatic family, T = T0, 4000-step references",
                  3.0},
                 c});
  }
  {
    ScenarioConfig c;
    c.name = "dvr-demo";
    c.kind = ModelKind::Dvr;
    c.duration = 40000.0;
    c.steps = 200;
    c.reference_scheme = Scheme::SEO;
    c.waveop_scheme = Scheme::RK4;
    c.sheet_schedule.clear();
    v.push_back({{"dvr-demo", "two-channel DVR model driven around a resonance, g-channel level 8 followed with "
                              "level 9 as limbo state, SEO reference",
                  40.0},
                 c});
  }
  {
    ScenarioConfig c;
    c.name = "threelevel-multidim";
    c.kind = ModelKind::ThreeLevel;
    c.duration = 300.0;
    c.steps = 400;
    c.reference_scheme = Scheme::SEO;
    c.waveop_scheme = Scheme::RK4;
    c.sheet_schedule.clear();
    v.push_back({{"threelevel-multidim", "synthetic 3-level model, 2-dimensional active space, SEO reference", 0.5},
                 c});
  }
  return v;
}

const std::vector<std::pair<ManifestEntry, ScenarioConfig>>& builtins() {
  static const auto b = make_builtins();
  return b;
}

} // namespace

const std::vector<ManifestEntry>& builtin_manifest() {
  static const std::vector<ManifestEntry> m = [] {
    std::vector<ManifestEntry> out;
    for (const auto& [e, c] : builtins()) out.push_back(e);
    return out;
  }();
  return m;
}

std::optional<ScenarioConfig> builtin_scenario(const std::string& name) {
  for (const auto& [e, c] : builtins())
    if (e.name == name) return c;
  return std::nullopt;
}

std::string manifest_text() {
  std::ostringstream os;
  for (const auto& e : builtin_manifest()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%6.1f s", e.expected_seconds);
    os << e.name << std::string(e.name.size() < 22 ? 22 - e.name.size() : 1, ' ') << buf << "  " << e.reproduces
       << '\n';
  }
  return os.str();
}

std::string manifest_json() {
  json j = json::array();
  for (const auto& e : builtin_manifest())
    j.push_back({{"name", e.name}, {"reproduces", e.reproduces}, {"expected_seconds", e.expected_seconds}});
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- config

int ScenarioConfig::effective_reference_steps() const {
  if (reference_steps) return *reference_steps;
  switch (kind) {
  case ModelKind::TwoLevel: return steps * ((1000 + steps - 1) / steps);
  case ModelKind::Dvr: return steps;
  case ModelKind::ThreeLevel: return 8 * steps;
  }
  return steps;
}

void ScenarioConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& msg) { throw ConfigError(msg, 0, field); };
  if (!(duration > 0)) bad("path.T", "duration must be positive");
  if (!(hbar > 0)) bad("model.hbar", "hbar must be positive");
  if (steps < 1) bad("plan.steps", "step count must be positive");
  if (record_every < 1) bad("plan.record_every", "record_every must be positive");
  if (steps % record_every != 0) bad("plan.record_every", "record_every must divide the step count");
  const int ref = effective_reference_steps();
  if (ref < steps || ref % steps != 0) bad("plan.reference_steps", "reference steps must be a multiple of steps");
  if (waveop_scheme != Scheme::FOD && waveop_scheme != Scheme::RK4)
    bad("plan.waveop_scheme", "wave operator scheme must be fod or rk4");
  if (representations.empty()) bad("outputs.representations", "no representation requested");
  for (const auto& r : representations)
    if (r != "reference" && r != "adiabatic" && r != "almost_adiabatic")
      bad("outputs.representations", "unknown representation '" + r + "'");
  if (kind == ModelKind::TwoLevel) {
    if (!(gamma > 0)) bad("model.gamma", "gamma must be positive");
    double prev = 0.0;
    for (const auto& sw : sheet_schedule) {
      if (!(sw.time > prev) || sw.time > 1.0)
        bad("path.sheet_schedule", "switch times must increase within (0, 1] (fractions of T)");
      prev = sw.time;
    }
  }
  if (!convergence_steps.empty()) {
    if (kind != ModelKind::TwoLevel) bad("plan.convergence_steps", "convergence study needs the two-level model");
    for (int n : convergence_steps)
      if (n < 2) bad("plan.convergence_steps", "step counts must be at least 2");
  }
  if (kind == ModelKind::Dvr) {
    if (n_points < 8) bad("model.n_points", "need at least 8 grid points");
    if (!(r_max > 0)) bad("model.r_max", "r_max must be positive");
    if (levels.size() != 2) bad("model.levels", "give the followed and the limbo level");
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct ValueReader {
  int line;
  std::string field;

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(msg, line, field); }

  double real(const std::string& v) const {
    try {
      size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) fail("not a number: '" + v + "'");
      return d;
    } catch (const std::logic_error&) {
      fail("not a number: '" + v + "'");
    }
  }
  int integer(const std::string& v) const {
    try {
      size_t pos = 0;
      const long n = std::stol(v, &pos);
      if (pos != v.size() || n < INT32_MIN || n > INT32_MAX) fail("not an integer: '" + v + "'");
      return static_cast<int>(n);
    } catch (const std::logic_error&) {
      fail("not an integer: '" + v + "'");
    }
  }
  int sheet(const std::string& v) const {
    const int s = integer(v);
    if (s != 1 && s != -1) fail("sheet must be +1 or -1");
    return s;
  }
  Scheme scheme(const std::string& v) const {
    try {
      return scheme_from_string(v);
    } catch (const PreconditionViolation&) {
      fail("unknown scheme '" + v + "'");
    }
  }
};

} // namespace

ScenarioConfig parse_config(std::istream& in, const std::string& name, const std::string& source) {
  ScenarioConfig c;
  c.name = name;
  c.source = source;
  std::map<std::string, int> seen; // field -> line
  std::string section, raw;
  int lineno = 0;
  bool have_kind = false;
  std::vector<std::tuple<std::string, std::string, int>> entries;

  while (std::getline(in, raw)) {
    ++lineno;
    std::string s = raw;
    if (const auto h = s.find('#'); h != std::string::npos) s.erase(h);
    s = trim(s);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError("malformed section header", lineno);
      section = trim(s.substr(1, s.size() - 2));
      if (section != "model" && section != "path" && section != "plan" && section != "outputs")
        throw ConfigError("unknown section '" + section + "'", lineno, section);
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", lineno);
    if (section.empty()) throw ConfigError("key outside of a section", lineno);
    const std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
    const std::string field = section + "." + key;
    if (key.empty()) throw ConfigError("empty key", lineno);
    if (seen.count(field)) throw ConfigError("duplicate key", lineno, field);
    seen[field] = lineno;
    if (field == "model.kind") {
      if (value == "two-level") c.kind = ModelKind::TwoLevel;
      else if (value == "dvr") c.kind = ModelKind::Dvr;
      else if (value == "three-level") c.kind = ModelKind::ThreeLevel;
      else throw ConfigError("unknown model kind '" + value + "'", lineno, field);
      have_kind = true;
      continue;
    }
    entries.emplace_back(field, value, lineno);
  }
  if (!have_kind) throw ConfigError("missing model kind", 0, "model.kind");

  // kind-dependent defaults before the explicit values
  if (c.kind == ModelKind::Dvr) {
    c.duration = 40000.0;
    c.steps = 200;
    c.reference_scheme = Scheme::SEO;
    c.waveop_scheme = Scheme::RK4;
    c.sheet_schedule.clear();
  } else if (c.kind == ModelKind::ThreeLevel) {
    c.duration = 300.0;
    c.steps = 400;
    c.reference_scheme = Scheme::SEO;
    c.waveop_scheme = Scheme::RK4;
    c.sheet_schedule.clear();
  }

  for (const auto& [field, value, line] : entries) {
    const ValueReader r{line, field};
    auto& p = c.potentials;
    if (field == "model.hbar") c.hbar = r.real(value);
    else if (field == "model.gamma") c.gamma = r.real(value);
    else if (field == "model.n_points") c.n_points = r.integer(value);
    else if (field == "model.r_max") c.r_max = r.real(value);
    else if (field == "model.reduced_mass") c.reduced_mass = r.real(value);
    else if (field == "model.morse_depth") p.morse_depth = r.real(value);
    else if (field == "model.morse_r_eq") p.morse_r_eq = r.real(value);
    else if (field == "model.morse_width") p.morse_width = r.real(value);
    else if (field == "model.repulsive_height") p.repulsive_height = r.real(value);
    else if (field == "model.repulsive_decay") p.repulsive_decay = r.real(value);
    else if (field == "model.dipole_slope") p.dipole_slope = r.real(value);
    else if (field == "model.opt_strength") p.opt_strength = r.real(value);
    else if (field == "model.opt_power") p.opt_power = r.real(value);
    else if (field == "model.opt_start_fraction") p.opt_start_fraction = r.real(value);
    else if (field == "model.levels") {
      c.levels.clear();
      for (const auto& v : split_list(value)) c.levels.push_back(r.integer(v));
    } else if (field == "path.T") c.duration = r.real(value);
    else if (field == "path.W0") c.w0 = r.real(value);
    else if (field == "path.omega_star") c.omega_star = r.real(value);
    else if (field == "path.d_omega") c.d_omega = r.real(value);
    else if (field == "path.initial_sheet") c.initial_sheet = r.sheet(value);
    else if (field == "path.sheet_schedule") {
      c.sheet_schedule.clear();
      for (const auto& item : split_list(value)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) r.fail("expected 'fraction:sheet' items");
        c.sheet_schedule.push_back({r.real(trim(item.substr(0, colon))), r.sheet(trim(item.substr(colon + 1)))});
      }
    } else if (field == "plan.steps") c.steps = r.integer(value);
    else if (field == "plan.reference_steps") c.reference_steps = r.integer(value);
    else if (field == "plan.scheme") c.reference_scheme = r.scheme(value);
    else if (field == "plan.waveop_scheme") c.waveop_scheme = r.scheme(value);
    else if (field == "plan.record_every") c.record_every = r.integer(value);
    else if (field == "plan.convergence_steps") {
      c.convergence_steps.clear();
      for (const auto& v : split_list(value)) c.convergence_steps.push_back(r.integer(v));
      if (c.convergence_steps.empty()) r.fail("empty step list");
    } else if (field == "outputs.representations") {
      c.representations.clear();
      for (const auto& v : split_list(value)) c.representations.insert(v);
    } else if (field == "outputs.format") {
      if (value == "csv") c.format = OutputFormat::Csv;
      else if (value == "json") c.format = OutputFormat::Json;
      else r.fail("format must be csv or json");
    } else {
      r.fail("unknown key");
    }
  }

  try {
    c.validate();
  } catch (const ConfigError& e) {
    const auto it = seen.find(e.field());
    throw ConfigError(e.what(), it == seen.end() ? 0 : it->second, e.field());
  }
  return c;
}

ScenarioConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  return parse_config(in, path.stem().string(), path.string());
}

ScenarioConfig resolve_scenario(const std::string& name_or_path) {
  if (auto b = builtin_scenario(name_or_path)) return *b;
  if (fs::exists(name_or_path)) return load_config(name_or_path);
  throw ConfigError("'" + name_or_path + "' is neither a builtin scenario nor a config file");
}

// ---------------------------------------------------------------- output

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

class Writer {
public:
  Writer(fs::path dir, OutputFormat fmt) : dir_(std::move(dir)), fmt_(fmt) {}

  void table(const std::string& stem, const std::vector<Column>& cols) const {
    if (fmt_ == OutputFormat::Csv) {
      std::ostringstream os;
      write_csv(os, cols);
      write_file_atomic(dir_ / (stem + ".csv"), os.str());
    } else {
      json j = json::object();
      for (const auto& c : cols) {
        json a = json::array();
        for (double v : c.values) a.push_back(number(v));
        j[c.name] = std::move(a);
      }
      write_file_atomic(dir_ / (stem + ".json"), j.dump(1) + "\n");
    }
  }
  void summary(const json& j) const { write_file_atomic(dir_ / "summary.json", j.dump(2) + "\n"); }

private:
  fs::path dir_;
  OutputFormat fmt_;
};

json config_echo(const ScenarioConfig& c) {
  json m{{"kind", to_string(c.kind)}, {"hbar", c.hbar}};
  json p{{"T", c.duration}};
  if (c.kind == ModelKind::TwoLevel) {
    m["gamma"] = c.gamma;
    p["initial_sheet"] = c.initial_sheet;
    json s = json::array();
    for (const auto& sw : c.sheet_schedule) s.push_back({{"fraction", sw.time}, {"sheet", sw.sheet}});
    p["sheet_schedule"] = s;
  } else if (c.kind == ModelKind::Dvr) {
    const auto& q = c.potentials;
    m.update({{"n_points", c.n_points}, {"r_max", c.r_max}, {"reduced_mass", c.reduced_mass},
              {"levels", c.levels}, {"morse_depth", q.morse_depth}, {"morse_r_eq", q.morse_r_eq},
              {"morse_width", q.morse_width}, {"repulsive_height", q.repulsive_height},
              {"repulsive_decay", q.repulsive_decay}, {"dipole_slope", q.dipole_slope},
              {"opt_strength", q.opt_strength}, {"opt_power", q.opt_power},
              {"opt_start_fraction", q.opt_start_fraction}});
    p.update({{"W0", c.w0}, {"omega_star", c.omega_star}, {"d_omega", c.d_omega}});
  }
  json plan{{"steps", c.steps},
            {"reference_steps", c.effective_reference_steps()},
            {"scheme", to_string(c.reference_scheme)},
            {"waveop_scheme", to_string(c.waveop_scheme)},
            {"record_every", c.record_every}};
  if (!c.convergence_steps.empty()) plan["convergence_steps"] = c.convergence_steps;
  json reps = json::array();
  for (const auto& r : c.representations) reps.push_back(r);
  return {{"model", m},
          {"path", p},
          {"plan", plan},
          {"outputs", {{"representations", reps}, {"format", c.format == OutputFormat::Csv ? "csv" : "json"}}}};
}

Trajectory scaled(Trajectory tr, cplx s) {
  for (size_t k = 0; k < tr.size(); ++k) {
    tr.states[k] *= s;
    tr.norms_sq[k] = tr.states[k].squaredNorm();
  }
  return tr;
}

Trajectory reference_run(const HamiltonianFn& h, const CMatrix& d, const CVector& psi0, const PropagationPlan& plan,
                         double hbar) {
  switch (plan.scheme) {
  case Scheme::SplitSOD: return split_sod_propagate([&](double t) { return CMatrix(h(t) - d); }, d, psi0, plan, hbar);
  case Scheme::SOD: return sod_propagate(h, psi0, plan, hbar);
  case Scheme::FOD: return fod_propagate(h, psi0, plan, hbar);
  case Scheme::SEO: return seo_propagate(h, psi0, plan, hbar);
  case Scheme::RK4: return rk4_propagate(h, psi0, plan, hbar);
  }
  throw PreconditionViolation("unknown scheme");
}

PropagationPlan make_plan(const ScenarioConfig& c, int steps, Scheme s, int record_every) {
  PropagationPlan p;
  p.n_steps = steps;
  p.t0 = 0.0;
  p.t1 = c.duration;
  p.scheme = s;
  p.record_every = record_every;
  return p;
}

double value_at(const std::vector<double>& times, const std::vector<double>& v, double t) {
  return v[nearest_sample(times, t)];
}

std::vector<double> populations_of(const Trajectory& tr, const std::function<CVector(size_t)>& label) {
  std::vector<double> out(tr.size());
  for (size_t k = 0; k < tr.size(); ++k) {
    const double n2 = tr.states[k].squaredNorm();
    if (n2 < kNormFloor) {
      out[k] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const CVector v = label(k);
    out[k] = std::norm(v.dot(tr.states[k])) / (v.squaredNorm() * n2);
  }
  return out;
}

// Distances and norm errors of each requested representation against the reference.
void emit_comparisons(const ScenarioConfig& c, const Writer& w, json& metrics, const Trajectory& ref,
                      const std::map<std::string, Trajectory>& reps) {
  std::vector<Column> cols{{"t", ref.times}};
  for (const auto& [name, tr] : reps) {
    auto d = distance_series(tr, ref);
    metrics["mean_distance_first_half"][name] = number(half_window_mean(ref.times, d));
    metrics["final_distance"][name] = number(d.back());
    cols.push_back({name + "_distance", std::move(d)});
  }
  for (const auto& [name, tr] : reps) cols.push_back({name + "_norm_error", norm_error_series(tr, ref)});
  if (cols.size() > 1) w.table("distances", cols);
  for (const auto& [name, tr] : reps)
    if (c.representations.count(name)) w.table(name, trajectory_columns(tr));
}

void run_two_level(const ScenarioConfig& c, const Writer& w, json& metrics) {
  TwoLevelModel m;
  m.gamma = c.gamma;
  m.hbar = c.hbar;
  m.path = standard_two_level_path(c.duration, c.gamma);
  m.initial_sheet = c.initial_sheet;
  for (const auto& sw : c.sheet_schedule) m.sheet_schedule.push_back({sw.time * c.duration, sw.sheet});
  m.validate();
  const TwoLevelFrames frames(m);
  const HamiltonianFn h = [&m](double t) { return two_level_hamiltonian(m, t); };
  CMatrix d = CMatrix::Zero(2, 2);
  d(1, 1) = -I * m.hbar * m.gamma / 4.0;

  const FrameSample s0 = frames.sample(0.0, m.sheet_at(0.0));
  const double n0 = s0.right.col(0).norm();
  const CVector psi0 = s0.right.col(0) / n0;

  const int ref_steps = c.effective_reference_steps();
  const int ratio = ref_steps / c.steps;
  const Trajectory ref =
      reference_run(h, d, psi0, make_plan(c, ref_steps, c.reference_scheme, ratio * c.record_every), m.hbar);
  metrics["dissipation_rate"] = dissipation_rate(ref);

  const auto states = propagate_reduced_waveop(frames, make_plan(c, c.steps, c.waveop_scheme, c.record_every),
                                               c.waveop_scheme);
  std::map<std::string, Trajectory> reps;
  if (c.representations.count("adiabatic"))
    reps["adiabatic"] = scaled(represent_series(frames, states, Representation::Adiabatic), 1.0 / n0);
  if (c.representations.count("almost_adiabatic"))
    reps["almost_adiabatic"] = scaled(represent_series(frames, states, Representation::AlmostAdiabatic), 1.0 / n0);
  for (const auto& [name, tr] : reps) metrics["dissipation_rate_" + name] = dissipation_rate(tr);
  if (c.representations.count("reference")) w.table("reference", trajectory_columns(ref));

  // populations: basis states and the followed eigenvector phi0(t)
  std::vector<Column> pops{{"t", ref.times}};
  const auto basis = renormalized_populations(ref, basis_labels(2));
  for (size_t a = 0; a < basis.labels.size(); ++a)
    pops.push_back({"reference_pop" + std::to_string(a), basis.values[a]});
  auto followed = [&](size_t k) {
    const WaveOperatorState& st = states[k];
    return CVector(frames.sample(st.t, st.sheet, st.branch).right.col(0));
  };
  pops.push_back({"reference_followed", populations_of(ref, followed)});
  for (const auto& [name, tr] : reps) {
    const auto p = renormalized_populations(tr, basis_labels(2));
    for (size_t a = 0; a < p.labels.size(); ++a) pops.push_back({name + "_pop" + std::to_string(a), p.values[a]});
  }
  w.table("populations", pops);
  const double half = 0.5 * c.duration;
  metrics["reference_pop0_at_half"] = number(value_at(ref.times, pops[1].values, half));
  metrics["reference_followed_at_half"] = number(value_at(ref.times, pops[3].values, half));
  double xmax = 0;
  for (const auto& st : states) xmax = std::max(xmax, std::abs(st.x));
  metrics["max_abs_x"] = xmax;

  emit_comparisons(c, w, metrics, ref, reps);
}

void run_convergence(const ScenarioConfig& c, const Writer& w, json& metrics) {
  TwoLevelModel m;
  m.gamma = c.gamma;
  m.hbar = c.hbar;
  m.path = standard_two_level_path(c.duration, c.gamma);
  m.initial_sheet = c.initial_sheet;
  for (const auto& sw : c.sheet_schedule) m.sheet_schedule.push_back({sw.time * c.duration, sw.sheet});
  m.validate();
  const TwoLevelFrames frames(m);
  const HamiltonianFn h = [&m](double t) { return two_level_hamiltonian(m, t); };
  CMatrix d = CMatrix::Zero(2, 2);
  d(1, 1) = -I * m.hbar * m.gamma / 4.0;
  const FrameSample s0 = frames.sample(0.0, m.sheet_at(0.0));
  const double n0 = s0.right.col(0).norm();
  const CVector psi0 = s0.right.col(0) / n0;

  const int nref = c.effective_reference_steps();
  const Trajectory exact = split_sod_propagate([&](double t) { return CMatrix(h(t) - d); }, d, psi0,
                                               make_plan(c, nref, Scheme::SplitSOD, 1), m.hbar);
  auto almost = [&](int n) {
    const auto st = propagate_reduced_waveop(frames, make_plan(c, n, Scheme::FOD, 1), Scheme::FOD);
    return represent_series(frames, st, Representation::AlmostAdiabatic);
  };
  const Trajectory almost_ref = almost(nref);

  const auto sod = convergence_curve(
      [&](int n) { return sod_propagate(h, psi0, make_plan(c, n, Scheme::SOD, 1), m.hbar); }, exact,
      c.convergence_steps);
  const auto fod = convergence_curve(
      [&](int n) { return fod_propagate(h, psi0, make_plan(c, n, Scheme::FOD, 1), m.hbar); }, exact,
      c.convergence_steps);
  const auto alm = convergence_curve(almost, almost_ref, c.convergence_steps);

  std::vector<Column> cols{{"n", {}}, {"sod", {}}, {"fod", {}}, {"almost_adiabatic", {}}};
  for (size_t i = 0; i < sod.size(); ++i) {
    cols[0].values.push_back(sod[i].first);
    cols[1].values.push_back(sod[i].second);
    cols[2].values.push_back(fod[i].second);
    cols[3].values.push_back(alm[i].second);
  }
  w.table("convergence", cols);
  metrics["slope_sod"] = number(loglog_slope(sod));
  metrics["slope_fod"] = number(loglog_slope(fod));
  metrics["slope_almost_adiabatic"] = number(loglog_slope(alm));
  metrics["reference"] = "split-sod (sod, fod) and fod wave operator (almost_adiabatic), " + std::to_string(nref) +
                         " steps";
}

void run_dvr(const ScenarioConfig& c, const Writer& w, json& metrics) {
  const DvrModel dm = default_dvr_model(c.potentials, c.duration, c.w0, c.omega_star, c.d_omega, c.n_points,
                                        c.r_max, c.reduced_mass);
  NumericModel nm = dvr_numeric_model(dm);
  nm.hbar = c.hbar;
  const int n = nm.dim;
  const BiorthonormalEigensystem es0 = eig_nonhermitian(nm.hamiltonian(0.0), EigOptions{});
  const std::vector<int> idx = dvr_bound_state_indices(es0, c.n_points, c.levels);
  const CMatrix p_bound = dvr_bound_projector(es0, c.n_points);

  const PropagationPlan plan = make_plan(c, c.steps, c.waveop_scheme, c.record_every);
  const int ref_steps = c.effective_reference_steps();
  const bool shared = c.reference_scheme == Scheme::SEO && ref_steps == c.steps;

  CVector phi0 = es0.right.col(idx[0]);
  phi0 /= std::sqrt((phi0.transpose() * phi0)(0, 0));
  const double n0 = phi0.norm();
  const CVector psi0 = phi0 / n0;

  // SEO reference driven by the frame diagonalizations when the grids coincide
  Trajectory ref;
  CVector psi = psi0;
  const double limit = 1e6;
  const double dt = plan.dt();
  auto on_eig = [&](int j, double t, const BiorthonormalEigensystem& es) {
    if (!shared) return;
    if (plan.records(j)) ref.push(t, psi);
    if (j < plan.n_steps) {
      psi = exp_from_eigensystem(es, -I * dt / nm.hbar) * psi;
      if (!(psi.norm() <= limit))
        throw SchemeDivergence("propagation diverged: norm above 1e6 times the initial norm", plan.time(j + 1),
                               j + 1);
    }
  };
  const TrackedFrames frames(nm, plan, idx, c.waveop_scheme == Scheme::RK4, on_eig);
  if (!shared) {
    const int ratio = ref_steps / c.steps;
    CMatrix zero = CMatrix::Zero(n, n);
    ref = reference_run(nm.hamiltonian, zero, psi0, make_plan(c, ref_steps, c.reference_scheme, ratio * c.record_every),
                        nm.hbar);
  }
  metrics["dissipation_rate"] = dissipation_rate(ref);

  const auto states = propagate_reduced_waveop(frames, plan, c.waveop_scheme);
  std::map<std::string, Trajectory> reps;
  if (c.representations.count("adiabatic"))
    reps["adiabatic"] = scaled(represent_series(frames, states, Representation::Adiabatic), 1.0 / n0);
  if (c.representations.count("almost_adiabatic"))
    reps["almost_adiabatic"] = scaled(represent_series(frames, states, Representation::AlmostAdiabatic), 1.0 / n0);
  for (const auto& [name, tr] : reps) metrics["dissipation_rate_" + name] = dissipation_rate(tr);
  if (c.representations.count("reference")) w.table("reference", trajectory_columns(ref));

  CMatrix p_g = CMatrix::Zero(n, n);
  p_g.topLeftCorner(c.n_points, c.n_points).setIdentity();
  const std::vector<PopulationLabel> labels{
      {"initial_level", psi0}, {"bound", p_bound}, {"g_channel", p_g}};
  std::vector<Column> pops{{"t", ref.times}};
  auto add = [&](const std::string& who, const Trajectory& tr) {
    const auto p = renormalized_populations(tr, labels);
    for (size_t a = 0; a < p.labels.size(); ++a) pops.push_back({who + "_" + p.labels[a], p.values[a]});
  };
  add("reference", ref);
  for (const auto& [name, tr] : reps) add(name, tr);
  w.table("populations", pops);

  json sw = json::array();
  for (const auto& s : frames.ordering_switches()) sw.push_back({{"t", s.t}, {"state", s.state}});
  metrics["ordering_switches"] = sw;
  double xmax = 0;
  for (const auto& st : states) xmax = std::max(xmax, std::abs(st.x));
  metrics["max_abs_x"] = xmax;
  json lv = json::array();
  for (int i : idx) lv.push_back({{"re", es0.eigenvalues[i].real()}, {"im", es0.eigenvalues[i].imag()}});
  metrics["initial_levels"] = lv;

  emit_comparisons(c, w, metrics, ref, reps);
}

void run_three_level(const ScenarioConfig& c, const Writer& w, json& metrics) {
  NumericModel nm = three_level_toy_model(c.duration);
  nm.hbar = c.hbar;
  const PropagationPlan plan = make_plan(c, c.steps, c.waveop_scheme, c.record_every);
  const TrackedFrames frames(nm, plan, {0, 1, 2}, c.waveop_scheme == Scheme::RK4);
  const FrameSample s0 = frames.sample(0.0);
  const double n0 = s0.right.col(0).norm();
  const CVector psi0 = s0.right.col(0) / n0;

  const int ref_steps = c.effective_reference_steps();
  const int ratio = ref_steps / c.steps;
  const Trajectory ref = reference_run(nm.hamiltonian, CMatrix::Zero(3, 3), psi0,
                                       make_plan(c, ref_steps, c.reference_scheme, ratio * c.record_every), nm.hbar);
  metrics["dissipation_rate"] = dissipation_rate(ref);

  std::map<std::string, Trajectory> reps;
  auto series = [&](bool freeze) {
    const auto st = propagate_multidim(frames, 2, plan, c.waveop_scheme, freeze);
    Trajectory tr;
    for (const auto& s : st) tr.push(s.t, multidim_almost_adiabatic(frames, s, 0).psi / n0);
    return tr;
  };
  if (c.representations.count("adiabatic")) reps["adiabatic"] = series(true);
  if (c.representations.count("almost_adiabatic")) reps["almost_adiabatic"] = series(false);
  if (c.representations.count("reference")) w.table("reference", trajectory_columns(ref));

  const auto basis = basis_labels(3);
  std::vector<Column> pops{{"t", ref.times}};
  auto add = [&](const std::string& who, const Trajectory& tr) {
    const auto p = renormalized_populations(tr, basis);
    for (size_t a = 0; a < p.labels.size(); ++a) pops.push_back({who + "_pop" + std::to_string(a), p.values[a]});
  };
  add("reference", ref);
  for (const auto& [name, tr] : reps) add(name, tr);
  w.table("populations", pops);

  metrics["active_dimension"] = 2;
  emit_comparisons(c, w, metrics, ref, reps);
}

} // namespace

void run_scenario(const ScenarioConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const Writer w(out_dir / cfg.name, cfg.format);
  json metrics = json::object();
  if (!cfg.convergence_steps.empty()) run_convergence(cfg, w, metrics);
  else if (cfg.kind == ModelKind::TwoLevel) run_two_level(cfg, w, metrics);
  else if (cfg.kind == ModelKind::Dvr) run_dvr(cfg, w, metrics);
  else run_three_level(cfg, w, metrics);
  w.summary({{"scenario", cfg.name}, {"source", cfg.source}, {"config", config_echo(cfg)}, {"metrics", metrics}});
}

// ---------------------------------------------------------------- command line

namespace {

struct Outcome {
  int code = kExitOk;
  std::string message;
};

Outcome guarded_run(const ScenarioConfig& cfg, const fs::path& out) {
  try {
    run_scenario(cfg, out);
    return {};
  } catch (const ConfigError& e) {
    std::ostringstream os;
    os << cfg.name << ": config error";
    if (!e.field().empty()) os << " in " << e.field();
    os << ": " << e.what();
    return {kExitConfig, os.str()};
  } catch (const TimedError& e) {
    std::ostringstream os;
    os << cfg.name << ": numerical failure at step " << e.step() << " (t = " << e.time() << "): " << e.what();
    return {kExitNumerical, os.str()};
  } catch (const Error& e) {
    return {kExitNumerical, cfg.name + ": numerical failure: " + e.what()};
  } catch (const std::exception& e) {
    return {kExitNumerical, cfg.name + ": failure: " + e.what()};
  }
}

std::string describe(const ConfigError& e, const std::string& where) {
  std::ostringstream os;
  os << "config error";
  if (!where.empty()) {
    os << " in " << where;
    if (e.line() > 0) os << ":" << e.line();
  }
  if (!e.field().empty()) os << " (" << e.field() << ")";
  os << ": " << e.what();
  return os.str();
}

} // namespace

int main_entry(int argc, char** argv) {
  CLI::App cli{"Time-dependent wave operator dynamics near exceptional points"};
  cli.require_subcommand(1);

  bool list_json = false;
  auto* list = cli.add_subcommand("list", "List the builtin scenarios");
  list->add_flag("--json", list_json, "Machine-readable manifest");

  std::vector<std::string> targets;
  std::optional<int> steps;
  std::string scheme, format, out = "out";
  auto* run = cli.add_subcommand("run", "Run builtin scenarios or config files (concurrently)");
  run->add_option("target", targets, "Scenario name or config path")->required();
  run->add_option("--steps", steps, "Override the step count")->check(CLI::PositiveNumber);
  run->add_option("--scheme", scheme, "Override the reference scheme (split-sod, sod, fod, seo, rk4)");
  run->add_option("--out", out, "Output directory");
  run->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.exit(e);
    return kExitConfig;
  }

  if (list->parsed()) {
    std::cout << (list_json ? manifest_json() : manifest_text());
    return kExitOk;
  }

  std::vector<ScenarioConfig> cfgs;
  std::set<std::string> names;
  for (const auto& t : targets) {
    try {
      ScenarioConfig c = resolve_scenario(t);
      if (steps) {
        c.steps = *steps;
        if (c.convergence_steps.empty() && c.steps % c.record_every != 0) c.record_every = 1;
      }
      if (!scheme.empty()) c.reference_scheme = ValueReader{0, "plan.scheme"}.scheme(scheme);
      if (format == "csv") c.format = OutputFormat::Csv;
      if (format == "json") c.format = OutputFormat::Json;
      c.validate();
      if (!names.insert(c.name).second) throw ConfigError("scenario name '" + c.name + "' given twice", 0, "name");
      cfgs.push_back(std::move(c));
    } catch (const ConfigError& e) {
      std::cerr << describe(e, fs::exists(t) ? t : std::string()) << '\n';
      return kExitConfig;
    }
  }

  std::vector<std::future<Outcome>> jobs;
  for (const auto& c : cfgs) jobs.push_back(std::async(std::launch::async, guarded_run, c, fs::path(out)));
  int code = kExitOk;
  for (size_t i = 0; i < jobs.size(); ++i) {
    const Outcome o = jobs[i].get();
    if (o.code == kExitOk) std::cout << cfgs[i].name << ": ok -> " << (fs::path(out) / cfgs[i].name).string() << '\n';
    else std::cerr << o.message << '\n';
    code = std::max(code, o.code);
  }
  return code;
}

} // namespace tdwo::app
