#pragma once

// Fixtures shared by the unit tests and the acceptance runner.

#include "cherenkov/forward.hpp"
#include "cherenkov/geometry.hpp"
#include "cherenkov/metric.hpp"
#include "cherenkov/raytrace.hpp"

#include <cmath>
#include <random>
#include <tuple>
#include <vector>

namespace cherenkov::testing {

inline const double kFlatK = 0.5;
inline const double kFlatBeta = 1.0 / std::sqrt(2.0);

/// g^{jk} = k^2 delta, W = sphere of radius 2, full boundary observed.
inline Scene flat_scene(double k = kFlatK) {
  return Scene{MetricField::isotropic_speed(k), Domain::sphere(2.0), BoundaryPatch::full(),
               Region::ball(Vec3::Zero(), 0.5)};
}

/// n(x) = 1 + exp(-|x|^2), g = n^2 I.
inline MetricField bump() { return MetricField::conformal_bump(1.0, 1.0); }

inline Scene bump_scene(double radius = 3.0) {
  return Scene{bump(), Domain::sphere(radius), BoundaryPatch::full(), Region::ball(Vec3::Zero(), 0.8)};
}

inline MetricField diag234() { return MetricField::constant(Vec3(2, 3, 4).asDiagonal().toDenseMatrix()); }

/// The 120 degree cap scene used by the end-to-end reconstruction.
inline Scene diag234_scene() {
  return Scene{diag234(), Domain::sphere(2.0), BoundaryPatch::cap(Vec3::UnitX(), kPi / 3.0),
               Region::ball(Vec3(0.8, 0, 0), 0.35)};
}

inline std::vector<Vec3> diag234_sites() {
  return {{0.8, 0, 0}, {0.8, 0.2, 0}, {0.8, -0.2, 0}, {0.8, 0, 0.2}, {0.8, 0, -0.2}};
}

/// The chord direction plus rings at 15 and 30 degrees around `axis`.
inline std::vector<Vec3> direction_fan(const Vec3& axis, int ring = 6) {
  auto [u, v] = orthonormal_complement(axis.normalized());
  std::vector<Vec3> dirs{axis.normalized()};
  for (double deg : {15.0, 30.0})
    for (int i = 0; i < ring; ++i) {
      double a = deg * kPi / 180.0;
      double p = 2.0 * kPi * i / ring + (deg > 20.0 ? kPi / ring : 0.0);
      dirs.push_back(std::cos(a) * axis.normalized() + std::sin(a) * (std::cos(p) * u + std::sin(p) * v));
    }
  return dirs;
}

/// Shots at t = 0 only, from every point in `zs`, for every direction and speed.
inline std::vector<Shot> pair_grid(const std::vector<Vec3>& zs, const std::vector<Vec3>& dirs,
                                   const std::vector<double>& betas, double t_half = 0.0) {
  std::vector<Shot> grid;
  for (const auto& z : zs)
    for (double b : betas)
      for (const auto& d : dirs) grid.push_back(Shot{z, d, b, -t_half, t_half, {}});
  return grid;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

inline Vec3 random_in_ball(std::mt19937_64& rng, const Vec3& c, double r) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return c + r * std::cbrt(u(rng)) * random_unit(rng);
}

/// Identity of an event independent of its sort position.
inline auto event_key(const ArrivalEvent& e) { return std::make_tuple(e.azimuth, static_cast<int>(e.sheet), e.t_emit); }

/// Finds the event in `pool` with the same emission sample, or nullptr.
inline const ArrivalEvent* find_same_sample(const std::vector<ArrivalEvent>& pool, const ArrivalEvent& e) {
  for (const auto& r : pool)
    if (r.azimuth == e.azimuth && r.sheet == e.sheet && std::abs(r.t_emit - e.t_emit) < 1e-12) return &r;
  return nullptr;
}

/// g-length of the spatial path, each accepted step subdivided into `sub` pieces.
inline double path_length(const MetricField& m, const Trajectory& tr, int sub = 40) {
  double len = 0.0;
  for (std::size_t i = 0; i + 1 < tr.samples.size(); ++i) {
    double h = (tr.r[i + 1] - tr.r[i]) / sub;
    PhasePoint p = tr.samples[i];
    for (int k = 0; k < sub; ++k) {
      PhasePoint q = bicharacteristic_substep(m, p, tr.sheet, h);
      len += m.norm_vector(0.5 * (p.x + q.x), q.x - p.x);
      p = q;
    }
  }
  return len;
}

}  // namespace cherenkov::testing
