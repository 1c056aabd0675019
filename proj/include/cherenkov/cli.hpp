#pragma once

// Command line front end: admissibility, simulate, survey, invert, validate.
// Exit codes: 0 success, 1 negative verdict, 2 malformed input, 3 runtime failure.

#include "cherenkov/config.hpp"
#include "cherenkov/forward.hpp"
#include "cherenkov/geometry.hpp"
#include "cherenkov/hash.hpp"
#include "cherenkov/inverse.hpp"
#include "cherenkov/io.hpp"
#include "cherenkov/oracle.hpp"
#include "cherenkov/raytrace.hpp"
#include "cherenkov/source.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace cherenkov::cli {

constexpr int kExitOk = 0;
constexpr int kExitVerdict = 1;
constexpr int kExitMalformed = 2;
constexpr int kExitRuntime = 3;

/// Failure inside a pipeline stage; reported as "stage: message".
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& msg) : Error(stage + ": " + msg), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

namespace detail {

inline Vec3 parse_vec(const std::string& text, const std::string& flag) {
  std::stringstream ss(text);
  std::string part;
  std::vector<double> v;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw config::ConfigError("argument " + flag + ": '" + text + "' is not a comma separated 3-vector");
    }
  }
  if (v.size() != 3) throw config::ConfigError("argument " + flag + ": expected 3 components, got " + std::to_string(v.size()));
  return {v[0], v[1], v[2]};
}

inline std::pair<double, double> parse_window(const std::string& text) {
  auto c = text.find(',');
  if (c == std::string::npos) throw config::ConfigError("argument --t-window: expected t_min,t_max");
  try {
    double a = std::stod(text.substr(0, c)), b = std::stod(text.substr(c + 1));
    if (!(a <= b)) throw config::ConfigError("argument --t-window: t_min must not exceed t_max");
    return {a, b};
  } catch (const std::invalid_argument&) {
    throw config::ConfigError("argument --t-window: '" + text + "' is not numeric");
  }
}

inline void require_writable(const std::string& path) {
  auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty() && !std::filesystem::is_directory(dir))
    throw config::ConfigError("output path " + path + ": directory does not exist");
  std::ofstream probe(path, std::ios::app);
  if (!probe) throw config::ConfigError("output path " + path + ": not writable");
}

inline config::RunConfig load_scene(const std::string& path) {
  auto cfg = config::load(path);
  if (!cfg.has_metric) throw config::ConfigError(path + ": field 'metric': missing");
  return cfg;
}

/// Lattice over the bounding box of W.
inline std::vector<Vec3> lattice(const Box& b, int n) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        pts.push_back(b.lo + Vec3(i, j, k).cwiseProduct(b.hi - b.lo) / double(n - 1));
  return pts;
}

inline AdmissibilityReport admissibility_of(const config::RunConfig& cfg) {
  const auto& s = cfg.scene;
  auto region = s.region.sample(cfg.admissibility.region_samples);
  for (const auto& p : s.region.hull_samples()) region.push_back(p);
  return check_admissible(s.metric, region, lattice(s.domain.bounds(), cfg.admissibility.lattice),
                          cfg.admissibility.n_dirs);
}

/// Forward commands refuse scenes that violate the global condition.
inline void require_forward_admissible(const config::RunConfig& cfg) {
  auto rep = admissibility_of(cfg);
  if (!rep.cond_i_ok)
    throw StageError("admissibility", "metric admits directions with |theta|_g < 1 at " +
                                          format_vec(rep.witness_x) + " (theta = " +
                                          format_vec(rep.witness_theta) + ")");
}

/// Survey data feed the inverse, whose speed window is empty where |theta|_g <= 1 inside U.
inline void require_inverse_admissible(const config::RunConfig& cfg) {
  auto rep = admissibility_of(cfg);
  if (!rep.cond_ii_ok)
    throw StageError("admissibility", "condition (ii) fails in U: min |theta|_g - 1 = " +
                                          std::to_string(rep.min_speed_margin));
}

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const config::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMalformed;
  } catch (const StageError& e) {
    std::cerr << "failure in stage " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return kExitRuntime;
  }
}

inline void write_trace(const std::string& path, const config::RunConfig& cfg, const Shot& shot) {
  std::ofstream os(path);
  if (!os) throw StageError("trace", "cannot write " + path);
  os << "ray,r,x1,x2,x3,t\n" << std::setprecision(12);
  double t0 = 0.5 * (shot.t_min + shot.t_max);
  auto set = emission_circle(cfg.scene.metric, shot, t0, Sheet::plus, std::max(cfg.sim.n_azimuth, 1),
                             cfg.sim.emission);
  if (set.status != EmissionStatus::ok) return;
  const auto& w = cfg.scene.domain;
  for (std::size_t i = 0; i < set.points.size(); ++i) {
    auto traj = trace_bicharacteristic(cfg.scene.metric, set.points[i], Sheet::plus, 20.0 * w.diameter(), {},
                                       [&](double, const PhasePoint& p) { return w.level(p.x) > 0.0; });
    for (std::size_t k = 0; k < traj.samples.size(); ++k) {
      const auto& p = traj.samples[k];
      os << i << "," << traj.r[k] << "," << p.x[0] << "," << p.x[1] << "," << p.x[2] << "," << p.t << "\n";
    }
  }
}

// --- validate ----------------------------------------------------------------------------------

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

inline std::vector<Check> validation_suite(const config::RunConfig& cfg) {
  std::vector<Check> out;
  const auto& s = cfg.scene;
  const auto& m = s.metric;
  const Vec3 c = s.region.center();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss;
  auto rand_dir = [&] {
    Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    return Vec3(v.normalized());
  };

  {
    // Bicharacteristic conservation and reversibility.
    double cone = 0.0, time = 0.0, rev = 0.0;
    for (int i = 0; i < 20; ++i) {
      Vec3 x = 0.5 * (c + s.region.sample(i + 1).back());
      Vec3 xi = rand_dir();
      Sheet sh = i % 2 ? Sheet::minus : Sheet::plus;
      PhasePoint p{x, 0.0, xi, sign_of(sh) * m.norm_covector(x, xi)};
      auto end = integrate_bicharacteristic(m, p, sh, 2.0).back();
      auto back = trace_backward(m, end, sh, 2.0).back();
      cone = std::max(cone, std::abs(cone_residual(m, end)));
      time = std::max(time, std::abs(end.t - 2.0));
      rev = std::max(rev, (back.x - x).norm());
    }
    std::ostringstream d;
    d << "cone " << cone << ", time " << time << ", reversal " << rev;
    out.push_back({"bicharacteristic conservation", cone <= 1e-8 && time <= 1e-10 && rev <= 1e-7, d.str()});
  }
  {
    // Shooting and fast marching against the lattice oracle.
    double worst_shoot = 0.0, worst_fmm = 0.0;
    Vec3 z = c;
    auto field = distance_field(s, z, 48);
    for (int i = 0; i < 3; ++i) {
      Vec3 x = s.domain.radial_point(rand_dir());
      x = z + 0.8 * (x - z);
      Box box = field.bounds();
      double ref = oracle::graph_distance(m, 48, z, x, box);
      double shoot = connect_geodesic(m, z, x).length;
      double fmm = field.at(x);
      worst_shoot = std::max(worst_shoot, std::abs(shoot - ref) / ref);
      worst_fmm = std::max(worst_fmm, std::abs(fmm - ref) / ref);
    }
    std::ostringstream d;
    d << "geodesic " << 100 * worst_shoot << "%, fast marching " << 100 * worst_fmm << "%";
    out.push_back({"distance vs lattice oracle", worst_shoot <= 0.02 && worst_fmm <= 0.02, d.str()});
  }
  if (const auto* ball = std::get_if<surface_kinds::Sphere>(&s.domain.variant());
      ball && m.is_homogeneous() && (m.g(c) - m.g(c)(0, 0) * Mat3::Identity()).norm() < 1e-14 &&
      m.g(c)(0, 0) > 1.0) {
    // Closed-form arrivals for an isotropic medium in a ball.
    double k = 1.0 / std::sqrt(m.g(c)(0, 0));
    Shot shot{ball->center, Vec3::UnitX(), k + 0.5 * (1.0 - k), -1.0, 1.0, {}};
    SimConfig sim = cfg.sim;
    sim.n_t = 9;
    sim.n_azimuth = 16;
    sim.pair_samples = false;
    sim.seed = 0;
    auto got = simulate_shot(s, shot, sim).events;
    auto ref = oracle::flat_arrival_oracle(k, shot, ball->center, ball->radius, 9, 16);
    double worst = 0.0;
    bool same = got.size() == ref.size();
    for (const auto& e : got) {
      auto it = std::find_if(ref.begin(), ref.end(), [&](const ArrivalEvent& r) {
        return r.azimuth == e.azimuth && r.sheet == e.sheet && std::abs(r.t_emit - e.t_emit) < 1e-12;
      });
      if (it == ref.end()) {
        same = false;
        break;
      }
      worst = std::max({worst, (e.x - it->x).norm(), std::abs(e.t - it->t)});
    }
    std::ostringstream d;
    d << got.size() << " events, max deviation " << worst;
    out.push_back({"flat arrivals vs closed form", same && worst <= 1e-6, d.str()});
  }
  {
    // Dual metric fit from exact cone samples at the region center.
    Mat3 h = m.g_inverse(c);
    std::vector<Vec3> xis;
    for (const auto& d : fibonacci_sphere(40)) xis.push_back(d / std::sqrt(d.dot(h * d)));
    auto fit = fit_dual_metric(xis);
    double err = (fit.h - h).norm() / h.norm();
    std::ostringstream d;
    d << "relative error " << err << ", polarization " << fit.polarization_error;
    out.push_back({"dual metric fit", err <= 1e-10 && fit.polarization_error <= 1e-12, d.str()});
  }
  return out;
}

}  // namespace detail

/// Runs the tool. Output goes to `out`, diagnostics to `err`.
inline int execute(int argc, char** argv) {
  CLI::App app{"Cherenkov wavefront simulation and metric reconstruction"};
  app.require_subcommand(1);

  std::string scene, out_path, trace_out, z_text, theta_text, window_text = "-1,1";
  std::string data_path, geometry_path, truth_path;
  double beta = 0.0;
  bool oracle_fields = false;
  int workers = 0;

  auto* adm = app.add_subcommand("admissibility", "check the admissibility conditions of a scene");
  adm->add_option("--scene", scene, "scene configuration")->required();
  adm->add_option("--z", z_text, "source point for the speed threshold (default: center of U)");

  auto* sim = app.add_subcommand("simulate", "simulate one shot");
  sim->add_option("--scene", scene)->required();
  sim->add_option("--z", z_text, "shared point, e.g. 0,0,0")->required();
  sim->add_option("--theta", theta_text, "unit direction")->required();
  sim->add_option("--beta", beta, "speed in (0,1)")->required();
  sim->add_option("--t-window", window_text, "t_min,t_max");
  sim->add_option("--out", out_path, "event file (.csv or .jsonl)")->required();
  sim->add_flag("--oracle-fields", oracle_fields, "include covector, emission time and azimuth");
  sim->add_option("--trace-out", trace_out, "CSV of ray paths from the mid-window emission circle");

  auto* sur = app.add_subcommand("survey", "simulate the survey grid of a scene");
  sur->add_option("--scene", scene)->required();
  sur->add_option("--out", out_path)->required();
  sur->add_option("--workers", workers, "thread count (overrides survey.workers)");
  sur->add_flag("--oracle-fields", oracle_fields);

  auto* inv = app.add_subcommand("invert", "reconstruct the metric from an event file");
  inv->add_option("--data", data_path, "event file with manifest")->required();
  inv->add_option("--scene-geometry", geometry_path, "geometry configuration")->required();
  inv->add_option("--out", out_path, "reconstruction JSON")->required();
  inv->add_option("--truth", truth_path, "scene whose metric is used to report errors");

  auto* val = app.add_subcommand("validate", "compare solvers against reference oracles");
  val->add_option("--scene", scene)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitMalformed;
  }

  if (adm->parsed()) {
    return detail::guarded([&] {
      auto cfg = detail::load_scene(scene);
      auto rep = detail::admissibility_of(cfg);
      std::cout << std::setprecision(10);
      std::cout << "condition (i)  " << (rep.cond_i_ok ? "ok" : "violated") << "  global margin "
                << rep.global_margin << "\n";
      std::cout << "condition (ii) " << (rep.cond_ii_ok ? "ok" : "violated") << "  margin over U "
                << rep.min_speed_margin << "\n";
      if (!rep.cond_i_ok || !rep.cond_ii_ok)
        std::cout << "witness x = " << format_vec(rep.witness_x) << "  theta = " << format_vec(rep.witness_theta)
                  << "\n";
      if (rep.cond_ii_ok) {
        Vec3 z = z_text.empty() ? cfg.scene.region.center() : detail::parse_vec(z_text, "--z");
        try {
          auto th = beta_threshold(cfg.scene, z);
          std::cout << "J_z = (" << th.jz_lo << ", " << th.jz_hi << ")  beta threshold " << th.beta_threshold
                    << " at z = " << format_vec(z) << "\n";
        } catch (const std::exception& e) {
          std::cout << "beta threshold unavailable: " << e.what() << "\n";
        }
      }
      std::cout << "verdict: " << (rep.cond_i_ok && rep.cond_ii_ok ? "admissible" : "not admissible") << "\n";
      return rep.cond_i_ok && rep.cond_ii_ok ? kExitOk : kExitVerdict;
    });
  }

  if (sim->parsed()) {
    return detail::guarded([&] {
      auto cfg = detail::load_scene(scene);
      Shot shot{detail::parse_vec(z_text, "--z"), detail::parse_vec(theta_text, "--theta"), beta, -1.0, 1.0, {}};
      std::tie(shot.t_min, shot.t_max) = detail::parse_window(window_text);
      if (shot.theta.norm() == 0.0) throw config::ConfigError("argument --theta: must be nonzero");
      shot.theta.normalize();
      if (!(beta > 0.0 && beta < 1.0)) throw config::ConfigError("argument --beta: must lie in (0, 1)");
      io::format_for_path(out_path);
      detail::require_writable(out_path);
      detail::require_forward_admissible(cfg);
      DataSet ds;
      try {
        ds = run_survey(cfg.scene, {shot}, cfg.sim, 1);
      } catch (const std::exception& e) {
        throw StageError("simulate", e.what());
      }
      if (!ds.shots.front().error.empty()) throw StageError("simulate", ds.shots.front().error);
      io::save_dataset(out_path, ds, oracle_fields);
      if (!trace_out.empty()) detail::write_trace(trace_out, cfg, shot);
      std::cout << ds.event_count() << " events written to " << out_path << " (scene " << hex64(ds.scene_hash)
                << ")\n";
      return kExitOk;
    });
  }

  if (sur->parsed()) {
    return detail::guarded([&] {
      auto cfg = detail::load_scene(scene);
      if (!cfg.survey.present) throw config::ConfigError(scene + ": field 'survey': missing");
      io::format_for_path(out_path);
      detail::require_writable(out_path);
      detail::require_forward_admissible(cfg);
      detail::require_inverse_admissible(cfg);
      std::vector<Shot> grid;
      for (const auto& z : cfg.survey.z)
        for (const auto& th : cfg.survey.theta)
          for (double b : cfg.survey.beta) grid.push_back({z, th, b, cfg.survey.t_min, cfg.survey.t_max, {}});
      auto ds = run_survey(cfg.scene, grid, cfg.sim, workers > 0 ? workers : cfg.survey.workers);
      io::save_dataset(out_path, ds, oracle_fields);
      int failed = 0;
      for (const auto& rec : ds.shots)
        if (!rec.error.empty()) {
          std::cerr << "failure in stage simulate: shot " << rec.id << ": " << rec.error << "\n";
          ++failed;
        }
      std::cout << grid.size() << " shots, " << ds.event_count() << " events written to " << out_path
                << " (scene " << hex64(ds.scene_hash) << ")\n";
      return failed ? kExitRuntime : kExitOk;
    });
  }

  if (inv->parsed()) {
    return detail::guarded([&] {
      auto geo = config::load(geometry_path);
      std::optional<MetricField> truth;
      if (!truth_path.empty()) truth = detail::load_scene(truth_path).scene.metric;
      io::format_for_path(out_path);
      detail::require_writable(out_path);
      DataSet ds;
      try {
        ds = io::load_dataset(data_path);
      } catch (const std::exception& e) {
        throw StageError("load", e.what());
      }
      auto sites = geo.inverse.sites;
      if (sites.empty()) sites.push_back(geo.scene.region.center());
      auto recon = geo.inverse.recon;
      MetricEstimate est;
      try {
        est = reconstruct_region(ds, geo.scene.domain, sites, recon, truth ? &*truth : nullptr);
      } catch (const std::exception& e) {
        throw StageError("reconstruct", e.what());
      }
      std::ofstream os(out_path);
      os << io::reconstruction_json(est).dump(2) << "\n";
      int failed = 0;
      for (const auto& s : est.sites) {
        std::cout << "site " << format_vec(s.z) << ": ";
        if (!s.failure.empty()) {
          std::cout << "failed (" << s.failure << ")\n";
          ++failed;
        } else {
          std::cout << s.boundary_points << " boundary points";
          if (s.relative_error) std::cout << ", relative error " << *s.relative_error;
          std::cout << "\n";
        }
      }
      if (auto med = est.median_error()) std::cout << "median relative error " << *med << "\n";
      if (failed == static_cast<int>(est.sites.size())) throw StageError("reconstruct", "no site could be estimated");
      return kExitOk;
    });
  }

  if (val->parsed()) {
    return detail::guarded([&] {
      auto cfg = detail::load_scene(scene);
      detail::require_forward_admissible(cfg);
      auto checks = detail::validation_suite(cfg);
      bool all = true;
      for (const auto& c : checks) {
        std::cout << std::left << std::setw(34) << c.name << (c.pass ? "PASS  " : "FAIL  ") << c.detail << "\n";
        all = all && c.pass;
      }
      return all ? kExitOk : kExitVerdict;
    });
  }
  return kExitMalformed;
}

}  // namespace cherenkov::cli
