#pragma once

// Scene / run configuration files (YAML). Unknown keys are errors.

#include "cherenkov/forward.hpp"
#include "cherenkov/geometry.hpp"
#include "cherenkov/inverse.hpp"
#include "cherenkov/io.hpp"
#include "cherenkov/metric.hpp"

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace cherenkov::config {

/// Malformed configuration; the message names the file, line and field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct SurveySection {
  bool present = false;
  std::vector<Vec3> z;
  std::vector<Vec3> theta;
  std::vector<double> beta;
  double t_min = -1.0;
  double t_max = 1.0;
  int workers = 1;
};

struct InverseSection {
  std::vector<Vec3> sites;
  ReconstructionConfig recon;
};

struct AdmissibilitySection {
  int n_dirs = 64;
  int region_samples = 64;
  /// Global samples: a lattice with this many nodes per axis over the vacuum box (or W).
  int lattice = 9;
};

struct RunConfig {
  std::string path;
  bool has_metric = false;
  Scene scene;
  SimConfig sim;
  SurveySection survey;
  InverseSection inverse;
  AdmissibilitySection admissibility;
  std::uint64_t seed = 0;
};

namespace detail {

class Reader {
 public:
  explicit Reader(std::string file) : file_(std::move(file)) {}

  [[noreturn]] void fail(const YAML::Node& n, const std::string& field, const std::string& msg) const {
    std::string where = file_;
    if (n.IsDefined() && n.Mark().line >= 0) where += ":" + std::to_string(n.Mark().line + 1);
    throw ConfigError(where + ": field '" + field + "': " + msg);
  }

  void only(const YAML::Node& map, const std::string& section, std::initializer_list<const char*> keys) const {
    if (!map.IsMap()) fail(map, section, "expected a mapping");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& kv : map) {
      auto k = kv.first.as<std::string>();
      if (!allowed.count(k)) fail(kv.first, section.empty() ? k : section + "." + k, "unknown key");
    }
  }

  double num(const YAML::Node& n, const std::string& field) const {
    try {
      return n.as<double>();
    } catch (const YAML::Exception&) {
      fail(n, field, "expected a number");
    }
  }
  int integer(const YAML::Node& n, const std::string& field) const {
    try {
      return n.as<int>();
    } catch (const YAML::Exception&) {
      fail(n, field, "expected an integer");
    }
  }
  bool boolean(const YAML::Node& n, const std::string& field) const {
    try {
      return n.as<bool>();
    } catch (const YAML::Exception&) {
      fail(n, field, "expected true or false");
    }
  }
  std::string str(const YAML::Node& n, const std::string& field) const {
    if (!n.IsScalar()) fail(n, field, "expected a string");
    return n.as<std::string>();
  }
  Vec3 vec(const YAML::Node& n, const std::string& field) const {
    if (!n.IsSequence() || n.size() != 3) fail(n, field, "expected a list of 3 numbers");
    return {num(n[0], field), num(n[1], field), num(n[2], field)};
  }
  std::vector<Vec3> vecs(const YAML::Node& n, const std::string& field) const {
    if (!n.IsSequence() || n.size() == 0) fail(n, field, "expected a nonempty list of 3-vectors");
    std::vector<Vec3> out;
    for (const auto& v : n) out.push_back(vec(v, field));
    return out;
  }
  std::vector<double> nums(const YAML::Node& n, const std::string& field) const {
    if (!n.IsSequence() || n.size() == 0) fail(n, field, "expected a nonempty list of numbers");
    std::vector<double> out;
    for (const auto& v : n) out.push_back(num(v, field));
    return out;
  }
  Mat3 mat(const YAML::Node& n, const std::string& field) const {
    if (!n.IsSequence() || n.size() != 3) fail(n, field, "expected a 3x3 matrix (list of 3 rows)");
    Mat3 m;
    for (int r = 0; r < 3; ++r) m.row(r) = vec(n[r], field).transpose();
    return m;
  }
  double positive(const YAML::Node& n, const std::string& field) const {
    double v = num(n, field);
    if (!(v > 0.0)) fail(n, field, "must be positive");
    return v;
  }
  const std::string& file() const { return file_; }

 private:
  std::string file_;
};

inline MetricField parse_metric(const Reader& rd, const YAML::Node& n, const std::filesystem::path& base) {
  if (!n.IsMap() || !n["kind"]) rd.fail(n, "metric.kind", "missing");
  auto kind = rd.str(n["kind"], "metric.kind");
  std::optional<double> h;
  if (n["h_deriv"]) h = rd.positive(n["h_deriv"], "metric.h_deriv");
  try {
    if (kind == "constant") {
      rd.only(n, "metric", {"kind", "g", "diag", "scalar", "h_deriv"});
      int given = int(bool(n["g"])) + int(bool(n["diag"])) + int(bool(n["scalar"]));
      if (given != 1) rd.fail(n, "metric", "constant metric needs exactly one of g, diag, scalar");
      if (n["g"]) return MetricField::constant(rd.mat(n["g"], "metric.g"));
      if (n["diag"]) return MetricField::constant(rd.vec(n["diag"], "metric.diag").asDiagonal().toDenseMatrix());
      return MetricField::constant(rd.positive(n["scalar"], "metric.scalar") * Mat3::Identity());
    }
    if (kind == "isotropic") {
      rd.only(n, "metric", {"kind", "speed", "h_deriv"});
      if (!n["speed"]) rd.fail(n, "metric.speed", "missing");
      return MetricField::isotropic_speed(rd.positive(n["speed"], "metric.speed"));
    }
    if (kind == "conformal_bump") {
      rd.only(n, "metric", {"kind", "amplitude", "width", "center", "h_deriv"});
      double a = n["amplitude"] ? rd.num(n["amplitude"], "metric.amplitude") : 1.0;
      double w = n["width"] ? rd.positive(n["width"], "metric.width") : 1.0;
      Vec3 c = n["center"] ? rd.vec(n["center"], "metric.center") : Vec3::Zero();
      return MetricField::conformal_bump(a, w, c);
    }
    if (kind == "diagonal_analytic") {
      rd.only(n, "metric", {"kind", "base", "amplitude", "center", "width", "h_deriv"});
      Vec3 b = n["base"] ? rd.vec(n["base"], "metric.base") : Vec3::Ones();
      Vec3 a = n["amplitude"] ? rd.vec(n["amplitude"], "metric.amplitude") : Vec3::Zero();
      Vec3 c = n["center"] ? rd.vec(n["center"], "metric.center") : Vec3::Zero();
      double w = n["width"] ? rd.positive(n["width"], "metric.width") : 1.0;
      return MetricField::diagonal_analytic(b, a, c, w);
    }
    if (kind == "grid") {
      rd.only(n, "metric", {"kind", "file", "h_deriv"});
      if (!n["file"]) rd.fail(n, "metric.file", "missing");
      std::filesystem::path p = rd.str(n["file"], "metric.file");
      if (p.is_relative()) p = base / p;
      return io::metric_from_grid(io::read_grid(p.string()), h);
    }
    if (kind == "permittivity") {
      rd.only(n, "metric", {"kind", "eps", "alpha", "h_deriv"});
      if (!n["eps"]) rd.fail(n, "metric.eps", "missing");
      Mat3 eps = n["eps"].IsSequence() && n["eps"].size() == 3 && n["eps"][0].IsScalar()
                     ? Mat3(rd.vec(n["eps"], "metric.eps").asDiagonal())
                     : rd.mat(n["eps"], "metric.eps");
      double alpha = n["alpha"] ? rd.num(n["alpha"], "metric.alpha") : 1.0;
      return metric_from_permittivity(eps, alpha);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    rd.fail(n, "metric", e.what());
  }
  rd.fail(n["kind"], "metric.kind", "unknown kind '" + kind + "'");
}

inline Domain parse_domain(const Reader& rd, const YAML::Node& n) {
  if (!n.IsMap() || !n["kind"]) rd.fail(n, "domain.kind", "missing");
  auto kind = rd.str(n["kind"], "domain.kind");
  Vec3 c = n["center"] ? rd.vec(n["center"], "domain.center") : Vec3::Zero();
  if (kind == "sphere") {
    rd.only(n, "domain", {"kind", "center", "radius"});
    if (!n["radius"]) rd.fail(n, "domain.radius", "missing");
    return Domain(surface_kinds::Sphere{c, rd.positive(n["radius"], "domain.radius")});
  }
  if (kind == "ellipsoid") {
    rd.only(n, "domain", {"kind", "center", "semi_axes"});
    if (!n["semi_axes"]) rd.fail(n, "domain.semi_axes", "missing");
    Vec3 a = rd.vec(n["semi_axes"], "domain.semi_axes");
    if (!(a.array() > 0.0).all()) rd.fail(n["semi_axes"], "domain.semi_axes", "must be positive");
    return Domain(surface_kinds::Ellipsoid{c, a});
  }
  rd.fail(n["kind"], "domain.kind", "unknown kind '" + kind + "'");
}

inline BoundaryPatch parse_observed(const Reader& rd, const YAML::Node& n) {
  if (!n.IsMap() || !n["kind"]) rd.fail(n, "observed.kind", "missing");
  auto kind = rd.str(n["kind"], "observed.kind");
  if (kind == "full") {
    rd.only(n, "observed", {"kind"});
    return BoundaryPatch::full();
  }
  if (kind == "cap") {
    rd.only(n, "observed", {"kind", "axis", "half_angle_deg"});
    if (!n["axis"]) rd.fail(n, "observed.axis", "missing");
    if (!n["half_angle_deg"]) rd.fail(n, "observed.half_angle_deg", "missing");
    Vec3 axis = rd.vec(n["axis"], "observed.axis");
    double deg = rd.positive(n["half_angle_deg"], "observed.half_angle_deg");
    if (axis.norm() == 0.0) rd.fail(n["axis"], "observed.axis", "must be nonzero");
    if (deg > 180.0) rd.fail(n["half_angle_deg"], "observed.half_angle_deg", "must be at most 180");
    return BoundaryPatch::cap(axis, deg * kPi / 180.0);
  }
  rd.fail(n["kind"], "observed.kind", "unknown kind '" + kind + "'");
}

inline Region parse_region(const Reader& rd, const YAML::Node& n) {
  if (!n.IsMap() || !n["kind"]) rd.fail(n, "region.kind", "missing");
  auto kind = rd.str(n["kind"], "region.kind");
  if (kind == "ball") {
    rd.only(n, "region", {"kind", "center", "radius"});
    if (!n["radius"]) rd.fail(n, "region.radius", "missing");
    Vec3 c = n["center"] ? rd.vec(n["center"], "region.center") : Vec3::Zero();
    return Region::ball(c, rd.positive(n["radius"], "region.radius"));
  }
  if (kind == "box") {
    rd.only(n, "region", {"kind", "lo", "hi"});
    if (!n["lo"] || !n["hi"]) rd.fail(n, "region", "box needs lo and hi");
    Box b{rd.vec(n["lo"], "region.lo"), rd.vec(n["hi"], "region.hi")};
    if (!(b.hi.array() > b.lo.array()).all()) rd.fail(n, "region", "hi must exceed lo");
    return Region(region_kinds::AxisBox{b});
  }
  rd.fail(n["kind"], "region.kind", "unknown kind '" + kind + "'");
}

inline void parse_simulation(const Reader& rd, const YAML::Node& n, SimConfig& s) {
  rd.only(n, "simulation", {"n_t", "n_azimuth", "both_sheets", "pair_samples", "rtol", "atol", "r_max",
                            "r_beta", "margin_min", "degeneracy_guard"});
  if (n["n_t"]) {
    s.n_t = rd.integer(n["n_t"], "simulation.n_t");
    if (s.n_t < 1) rd.fail(n["n_t"], "simulation.n_t", "must be >= 1");
  }
  if (n["n_azimuth"]) {
    s.n_azimuth = rd.integer(n["n_azimuth"], "simulation.n_azimuth");
    if (s.n_azimuth < 0) rd.fail(n["n_azimuth"], "simulation.n_azimuth", "must be >= 0");
  }
  if (n["both_sheets"]) s.both_sheets = rd.boolean(n["both_sheets"], "simulation.both_sheets");
  if (n["pair_samples"]) s.pair_samples = rd.boolean(n["pair_samples"], "simulation.pair_samples");
  if (n["rtol"]) s.rtol = rd.positive(n["rtol"], "simulation.rtol");
  if (n["atol"]) s.atol = rd.positive(n["atol"], "simulation.atol");
  if (n["r_max"]) s.r_max = rd.positive(n["r_max"], "simulation.r_max");
  if (n["r_beta"]) s.r_beta = rd.positive(n["r_beta"], "simulation.r_beta");
  if (n["margin_min"]) s.emission.margin_min = rd.positive(n["margin_min"], "simulation.margin_min");
  if (n["degeneracy_guard"]) s.emission.degeneracy_guard = rd.positive(n["degeneracy_guard"], "simulation.degeneracy_guard");
}

inline void parse_survey(const Reader& rd, const YAML::Node& n, SurveySection& s) {
  rd.only(n, "survey", {"z", "theta", "beta", "t_window", "workers"});
  s.present = true;
  if (!n["z"] || !n["theta"] || !n["beta"]) rd.fail(n, "survey", "needs z, theta and beta lists");
  s.z = rd.vecs(n["z"], "survey.z");
  s.theta = rd.vecs(n["theta"], "survey.theta");
  for (auto& t : s.theta) {
    if (t.norm() == 0.0) rd.fail(n["theta"], "survey.theta", "directions must be nonzero");
    t.normalize();
  }
  s.beta = rd.nums(n["beta"], "survey.beta");
  for (double b : s.beta)
    if (!(b > 0.0 && b < 1.0)) rd.fail(n["beta"], "survey.beta", "values must lie in (0, 1)");
  if (n["t_window"]) {
    auto w = rd.nums(n["t_window"], "survey.t_window");
    if (w.size() != 2 || !(w[0] <= w[1])) rd.fail(n["t_window"], "survey.t_window", "expected [t_min, t_max]");
    s.t_min = w[0];
    s.t_max = w[1];
  }
  if (n["workers"]) {
    s.workers = rd.integer(n["workers"], "survey.workers");
    if (s.workers < 1) rd.fail(n["workers"], "survey.workers", "must be >= 1");
  }
}

inline void parse_inverse(const Reader& rd, const YAML::Node& n, InverseSection& s) {
  rd.only(n, "inverse", {"sites", "h", "match_x", "match_t", "match_zeta", "neighbours", "pair_budget"});
  if (n["sites"]) s.sites = rd.vecs(n["sites"], "inverse.sites");
  auto& r = s.recon;
  if (n["h"]) r.h = rd.positive(n["h"], "inverse.h");
  if (n["match_x"]) r.distance.tol.x = rd.positive(n["match_x"], "inverse.match_x");
  if (n["match_t"]) r.distance.tol.t = rd.positive(n["match_t"], "inverse.match_t");
  if (n["match_zeta"]) r.distance.tol.zeta = rd.positive(n["match_zeta"], "inverse.match_zeta");
  if (n["neighbours"]) {
    r.interpolation.neighbours = rd.integer(n["neighbours"], "inverse.neighbours");
    if (r.interpolation.neighbours < 6) rd.fail(n["neighbours"], "inverse.neighbours", "must be >= 6");
  }
  if (n["pair_budget"]) {
    r.distance.pair_budget = rd.integer(n["pair_budget"], "inverse.pair_budget");
    if (r.distance.pair_budget < 0) rd.fail(n["pair_budget"], "inverse.pair_budget", "must be >= 0");
  }
}

inline void parse_admissibility(const Reader& rd, const YAML::Node& n, AdmissibilitySection& s) {
  rd.only(n, "admissibility", {"n_dirs", "region_samples", "lattice"});
  if (n["n_dirs"]) s.n_dirs = rd.integer(n["n_dirs"], "admissibility.n_dirs");
  if (n["region_samples"]) s.region_samples = rd.integer(n["region_samples"], "admissibility.region_samples");
  if (n["lattice"]) s.lattice = rd.integer(n["lattice"], "admissibility.lattice");
  if (s.n_dirs < 1 || s.region_samples < 1 || s.lattice < 2)
    rd.fail(n, "admissibility", "sample counts must be positive (lattice >= 2)");
}

}  // namespace detail

/// Parses configuration text. `name` is used in diagnostics; relative grid paths resolve
/// against `base_dir`.
inline RunConfig parse(const std::string& text, const std::string& name = "<config>",
                       const std::filesystem::path& base_dir = ".") {
  detail::Reader rd(name);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(name + ":" + std::to_string(e.mark.line + 1) + ": syntax error: " + e.msg);
  }
  RunConfig cfg;
  cfg.path = name;
  if (!root.IsDefined() || root.IsNull()) throw ConfigError(name + ": empty configuration");
  rd.only(root, "", {"metric", "domain", "observed", "region", "simulation", "survey", "inverse",
                     "admissibility", "seed"});
  if (root["metric"]) {
    cfg.scene.metric = detail::parse_metric(rd, root["metric"], base_dir);
    cfg.has_metric = true;
  }
  if (!root["domain"]) throw ConfigError(name + ": field 'domain': missing");
  cfg.scene.domain = detail::parse_domain(rd, root["domain"]);
  cfg.scene.observed = root["observed"] ? detail::parse_observed(rd, root["observed"]) : BoundaryPatch::full();
  if (!root["region"]) throw ConfigError(name + ": field 'region': missing");
  cfg.scene.region = detail::parse_region(rd, root["region"]);
  try {
    cfg.scene.validate();
  } catch (const PreconditionError& e) {
    rd.fail(root["region"], "region", e.what());
  }
  if (root["simulation"]) detail::parse_simulation(rd, root["simulation"], cfg.sim);
  if (root["survey"]) detail::parse_survey(rd, root["survey"], cfg.survey);
  if (root["inverse"]) detail::parse_inverse(rd, root["inverse"], cfg.inverse);
  if (root["admissibility"]) detail::parse_admissibility(rd, root["admissibility"], cfg.admissibility);
  if (root["seed"]) {
    try {
      cfg.seed = root["seed"].as<std::uint64_t>();
    } catch (const YAML::Exception&) {
      rd.fail(root["seed"], "seed", "expected a non-negative integer");
    }
  }
  cfg.sim.seed = cfg.seed;
  return cfg;
}

inline RunConfig load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path + ": cannot open");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path, std::filesystem::path(path).parent_path());
}

}  // namespace cherenkov::config
