#pragma once

// Forward simulation: emit covectors along the world line, trace them to the boundary of W and
// record arrivals on the observed patch.

#include "cherenkov/geometry.hpp"
#include "cherenkov/hash.hpp"
#include "cherenkov/raytrace.hpp"
#include "cherenkov/source.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <random>
#include <thread>
#include <tuple>
#include <vector>

namespace cherenkov {

struct ArrivalEvent {
  Vec3 x = Vec3::Zero();
  double t = 0.0;
  /// Tangential part of xi in the surface frame at x.
  Eigen::Vector2d zeta_tan = Eigen::Vector2d::Zero();
  double omega = 0.0;

  // Oracle-only fields, cleared by DataSet::strip_oracle_fields.
  Vec3 xi = Vec3::Zero();
  double t_emit = 0.0;
  int azimuth = -1;
  Sheet sheet = Sheet::plus;
};

/// Surface frame used for tangential covectors: orthonormal_complement of the outward normal.
inline std::pair<Vec3, Vec3> surface_frame(const Domain& w, const Vec3& x) {
  return orthonormal_complement(w.outward_normal(x));
}

inline Eigen::Vector2d tangential_part(const Domain& w, const Vec3& x, const Vec3& xi) {
  auto [ea, eb] = surface_frame(w, x);
  return {xi.dot(ea), xi.dot(eb)};
}

struct SimConfig {
  int n_t = 200;
  int n_azimuth = 64;
  bool both_sheets = true;
  /// Add conormal samples shared with sibling shots (see Shot::companions).
  bool pair_samples = true;
  double rtol = 1e-10;
  double atol = 1e-12;
  /// Flow-parameter cap per ray; 0 selects 20 * diam(W).
  double r_max = 0.0;
  /// Radius of the emission ball; 0 selects 1.1 * the metric support radius.
  double r_beta = 0.0;
  /// Exit crossings are bisected in r to this width.
  double crossing_tol = 1e-10;
  EmissionOptions emission;
  /// Nonzero: rotate each shot's azimuth grid by a pseudo-random fraction of a step drawn from
  /// (seed, shot parameters). Zero keeps the grid aligned.
  std::uint64_t seed = 0;
};

struct ShotDiagnostics {
  int emission_samples = 0;
  int skipped_outside = 0;   // base point outside W or the emission ball
  int skipped_margin = 0;    // subluminal or near-luminal
  int rays = 0;
  int discarded_unobserved = 0;
  int step_failures = 0;
  int trapped = 0;           // reached r_max inside W
};

struct ShotResult {
  std::vector<ArrivalEvent> events;
  ShotDiagnostics diag;
};

inline bool event_order(const ArrivalEvent& a, const ArrivalEvent& b) {
  return std::make_tuple(a.t, a.azimuth, a.t_emit, static_cast<int>(a.sheet)) <
         std::make_tuple(b.t, b.azimuth, b.t_emit, static_cast<int>(b.sheet));
}

/// Emission times: n_t uniform samples over the shot's window (a single sample when the window
/// is a point). Refining with 2 n_t - 1 keeps every earlier sample.
inline std::vector<double> emission_times(const Shot& shot, int n_t) {
  if (n_t < 1) throw PreconditionError("emission_times: n_t must be positive");
  if (shot.t_min == shot.t_max || n_t == 1) return {shot.t_min};
  std::vector<double> ts(static_cast<std::size_t>(n_t));
  for (int i = 0; i < n_t; ++i)
    ts[static_cast<std::size_t>(i)] = shot.t_min + (shot.t_max - shot.t_min) * i / (n_t - 1);
  return ts;
}

namespace detail {

struct RayOutcome {
  enum Kind { exited, trapped, failed } kind = failed;
  PhasePoint exit;
};

/// Integrates until the ray leaves W; the crossing is bisected inside the last accepted step.
inline RayOutcome trace_to_exit(const MetricField& m, const Domain& w, const PhasePoint& start,
                                Sheet sheet, double r_max, const SimConfig& cfg) {
  BicharRhs rhs{&m, sign_of(sheet)};
  auto y = pack(start);
  ode::Tolerances tol;
  tol.rtol = cfg.rtol;
  tol.atol = cfg.atol;
  PhasePoint prev_point = start;
  std::optional<std::pair<PhasePoint, double>> bracket;  // (state at step start, step size)
  auto on_accept = [&](double r_prev, const BicharState&, double r, BicharState& ynew, double) {
    project_to_cone(m, ynew);
    ynew[3] = start.t + r;
    PhasePoint p = unpack(ynew);
    if (w.level(p.x) >= 0.0) {
      bracket.emplace(prev_point, r - r_prev);
      return false;
    }
    prev_point = p;
    return true;
  };
  auto info = ode::integrate<8>(rhs, 0.0, y, r_max, tol, on_accept);
  RayOutcome out;
  if (bracket) {
    const auto& [from, h] = *bracket;
    double lo = 0.0, hi = h;
    while (hi - lo > cfg.crossing_tol) {
      double mid = 0.5 * (lo + hi);
      PhasePoint p = bicharacteristic_substep(m, from, sheet, mid);
      (w.level(p.x) < 0.0 ? lo : hi) = mid;
    }
    out.exit = bicharacteristic_substep(m, from, sheet, hi);
    out.kind = RayOutcome::exited;
    return out;
  }
  out.kind = info.status == ode::Status::step_failure ? RayOutcome::failed : RayOutcome::trapped;
  return out;
}

/// Deterministic value in [0, 1) from the seed and the shot parameters.
inline double jitter_fraction(std::uint64_t seed, const Shot& shot) {
  double key[7] = {shot.z[0], shot.z[1], shot.z[2], shot.theta[0], shot.theta[1], shot.theta[2], shot.beta};
  std::uint64_t h = fnv1a64(key, sizeof key, fnv1a64(&seed, sizeof seed));
  std::mt19937_64 rng(h);
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace detail

inline double default_r_beta(const MetricField& m) { return 1.1 * m.support_radius(); }

/// Simulates the arrivals on the observed patch produced by one shot.
inline ShotResult simulate_shot(const Scene& scene, const Shot& shot, const SimConfig& cfg = {}) {
  shot.validate();
  if (cfg.n_azimuth < 0) throw PreconditionError("simulate_shot: n_azimuth must be >= 0");
  const auto& m = scene.metric;
  const auto& w = scene.domain;
  const double r_max = cfg.r_max > 0.0 ? cfg.r_max : 20.0 * w.diameter();
  const double r_beta = cfg.r_beta > 0.0 ? cfg.r_beta : default_r_beta(m);

  auto times = emission_times(shot, cfg.n_t);
  EmissionOptions emission = cfg.emission;
  if (cfg.seed != 0) emission.azimuth_offset = detail::jitter_fraction(cfg.seed, shot);
  const bool pairs = cfg.pair_samples && !shot.companions.empty() && shot.t_min <= 0.0 &&
                     shot.t_max >= 0.0;
  bool pair_time_on_grid = false;
  for (double t : times) pair_time_on_grid |= (t == 0.0);

  ShotResult res;
  std::vector<Sheet> sheets{Sheet::plus};
  if (cfg.both_sheets) sheets.push_back(Sheet::minus);

  auto shoot_ray = [&](const PhasePoint& p, Sheet sheet, int az) {
    ++res.diag.rays;
    auto out = detail::trace_to_exit(m, w, p, sheet, r_max, cfg);
    if (out.kind == detail::RayOutcome::failed) {
      ++res.diag.step_failures;
      return;
    }
    if (out.kind == detail::RayOutcome::trapped) {
      ++res.diag.trapped;
      return;
    }
    if (!scene.observed_at(out.exit.x)) {
      ++res.diag.discarded_unobserved;
      return;
    }
    ArrivalEvent ev;
    ev.x = out.exit.x;
    ev.t = out.exit.t;
    ev.zeta_tan = tangential_part(w, ev.x, out.exit.xi);
    ev.omega = out.exit.omega;
    ev.xi = out.exit.xi;
    ev.t_emit = p.t;
    ev.azimuth = az;
    ev.sheet = sheet;
    res.events.push_back(ev);
  };

  auto base_ok = [&](double t) {
    Vec3 x = shot.position(t);
    return w.level(x) < 0.0 && x.norm() < r_beta;
  };

  auto emit_pairs = [&](double t, Sheet sheet) {
    for (std::size_t c = 0; c < shot.companions.size(); ++c) {
      auto pts = emission_pair_points(m, shot, t, sheet, shot.companions[c]);
      for (std::size_t l = 0; l < pts.size(); ++l)
        shoot_ray(pts[l], sheet, cfg.n_azimuth + 2 * static_cast<int>(c) + static_cast<int>(l));
    }
  };

  for (double t : times) {
    ++res.diag.emission_samples;
    if (!base_ok(t)) {
      ++res.diag.skipped_outside;
      continue;
    }
    bool emitted = false;
    for (Sheet sheet : sheets) {
      auto set = emission_circle(m, shot, t, sheet, cfg.n_azimuth, emission);
      if (set.status != EmissionStatus::ok) break;
      emitted = true;
      for (std::size_t i = 0; i < set.points.size(); ++i) shoot_ray(set.points[i], sheet, set.azimuth[i]);
      if (pairs && t == 0.0) emit_pairs(t, sheet);
    }
    if (!emitted) ++res.diag.skipped_margin;
  }
  if (pairs && !pair_time_on_grid && base_ok(0.0)) {
    // Companion conormals only exist at the shared point (z, 0).
    EmissionSet probe = emission_circle(m, shot, 0.0, Sheet::plus, 0, emission);
    if (probe.status == EmissionStatus::ok)
      for (Sheet sheet : sheets) emit_pairs(0.0, sheet);
  }
  std::sort(res.events.begin(), res.events.end(), event_order);
  return res;
}

// --- surveys -------------------------------------------------------------------------------

struct ShotRecord {
  int id = 0;
  Shot shot;
  std::vector<ArrivalEvent> events;
  ShotDiagnostics diag;
  std::string error;  // empty on success
};

struct DataSet {
  std::vector<ShotRecord> shots;
  std::uint64_t scene_hash = 0;
  bool has_oracle_fields = true;

  std::size_t event_count() const {
    std::size_t n = 0;
    for (const auto& s : shots) n += s.events.size();
    return n;
  }

  /// Removes the full covector and emission metadata from every event.
  void strip_oracle_fields() {
    for (auto& s : shots)
      for (auto& e : s.events) {
        e.xi = Vec3::Zero();
        e.t_emit = 0.0;
        e.azimuth = -1;
        e.sheet = Sheet::plus;
      }
    has_oracle_fields = false;
  }
};

/// Fills Shot::companions with the directions of other shots sharing z and beta.
inline void assign_companions(std::vector<Shot>& grid) {
  for (auto& s : grid) s.companions.clear();
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = 0; j < grid.size(); ++j) {
      if (i == j) continue;
      if ((grid[i].z - grid[j].z).norm() > 1e-12 || grid[i].beta != grid[j].beta) continue;
      if ((grid[i].theta - grid[j].theta).norm() < 1e-12) continue;
      grid[i].companions.push_back(grid[j].theta);
    }
}

/// Simulates every shot of the grid with `workers` threads. The result does not depend on the
/// number of workers.
inline DataSet run_survey(const Scene& scene, std::vector<Shot> grid, const SimConfig& cfg = {},
                          int workers = 1) {
  if (grid.empty()) throw PreconditionError("run_survey: empty shot grid");
  if (cfg.pair_samples) assign_companions(grid);
  DataSet ds;
  ds.scene_hash = scene_hash(scene);
  ds.shots.resize(grid.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      auto& rec = ds.shots[i];
      rec.id = static_cast<int>(i);
      rec.shot = grid[i];
      try {
        auto r = simulate_shot(scene, grid[i], cfg);
        rec.events = std::move(r.events);
        rec.diag = r.diag;
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
    }
  };
  int n = std::max(1, std::min<int>(workers, static_cast<int>(grid.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return ds;
}

}  // namespace cherenkov
