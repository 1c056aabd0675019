#pragma once

// Moving point sources: superluminal test, emission covectors, break points.

#include "cherenkov/metric.hpp"
#include "cherenkov/raytrace.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace cherenkov {

/// A source moving along x = z + t * beta * theta.
struct Shot {
  Vec3 z = Vec3::Zero();
  Vec3 theta = Vec3::UnitX();
  double beta = 0.5;
  double t_min = -1.0;
  double t_max = 1.0;
  /// Directions of sibling shots sharing (z, beta). Rays emitted at t = 0 along covectors
  /// conormal to both world lines are added so that the two shots record identical events.
  std::vector<Vec3> companions;

  Vec3 position(double t) const { return z + t * beta * theta; }

  void validate() const {
    if (!z.allFinite() || !theta.allFinite()) throw PreconditionError("shot: non-finite z or theta");
    if (std::abs(theta.norm() - 1.0) > 1e-12) throw PreconditionError("shot: theta must be a unit vector");
    if (!(beta > 0.0 && beta < 1.0)) throw PreconditionError("shot: beta must lie in (0, 1)");
    if (!(std::isfinite(t_min) && std::isfinite(t_max) && t_min <= t_max))
      throw PreconditionError("shot: t_window must be a finite interval");
  }
};

// --- superluminal margin ------------------------------------------------------------------------

namespace detail {

/// beta * xi.theta - |xi|_{g*} on the unit sphere, and its projected gradient.
inline double margin_objective(const Mat3& h, const Vec3& theta, double beta, const Vec3& xi,
                               Vec3* tangent_grad) {
  Vec3 hx = h * xi;
  double q = std::sqrt(xi.dot(hx));
  if (tangent_grad) {
    Vec3 grad = beta * theta - hx / q;
    *tangent_grad = grad - grad.dot(xi) * xi;
  }
  return beta * xi.dot(theta) - q;
}

inline double ascend_margin(const Mat3& h, const Vec3& theta, double beta, Vec3 xi) {
  Vec3 grad;
  double f = margin_objective(h, theta, beta, xi, &grad);
  double step = 1.0;
  for (int it = 0; it < 2000; ++it) {
    if (grad.norm() < 1e-13) break;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls) {
      Vec3 cand = (xi + step * grad).normalized();
      Vec3 cgrad;
      double fc = margin_objective(h, theta, beta, cand, &cgrad);
      if (fc > f) {
        xi = cand;
        f = fc;
        grad = cgrad;
        moved = true;
        step = std::min(step * 2.0, 1e3);
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return f;
}

}  // namespace detail

/// max over Euclidean-unit xi of beta |xi.theta| - |xi|_{g*(x)}. Positive iff the light cone
/// at x meets the conormal bundle of the world line.
inline double superluminal_margin(const MetricField& m, const Vec3& x, const Vec3& theta,
                                  double beta) {
  if (std::abs(theta.norm() - 1.0) > 1e-12) throw PreconditionError("superluminal_margin: theta must be unit");
  if (!(beta > 0.0 && beta < 1.0)) throw PreconditionError("superluminal_margin: beta must lie in (0, 1)");
  const Mat3 h = m.g_inverse(x);
  static const std::vector<Vec3> starts = fibonacci_sphere(128);
  // The objective is even in xi, so restrict to the hemisphere xi.theta >= 0.
  std::vector<std::pair<double, Vec3>> seeds;
  seeds.reserve(starts.size());
  for (Vec3 s : starts) {
    if (s.dot(theta) < 0.0) s = -s;
    seeds.emplace_back(detail::margin_objective(h, theta, beta, s, nullptr), s);
  }
  std::partial_sort(seeds.begin(), seeds.begin() + 4, seeds.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });
  double best = -kInf;
  for (int i = 0; i < 4; ++i) best = std::max(best, detail::ascend_margin(h, theta, beta, seeds[i].second));
  return best;
}

// --- emission covectors --------------------------------------------------------------------------

enum class EmissionStatus { ok, below_margin, degenerate };

inline const char* to_string(EmissionStatus s) {
  switch (s) {
    case EmissionStatus::ok: return "ok";
    case EmissionStatus::below_margin: return "superluminal margin below threshold";
    case EmissionStatus::degenerate: return "near-luminal: emission cone degenerates";
  }
  return "?";
}

struct EmissionOptions {
  double margin_min = 1e-3;
  double degeneracy_guard = 1e-3;
  /// Rotation of the azimuth grid, as a fraction of one azimuth step.
  double azimuth_offset = 0.0;
};

struct EmissionSet {
  EmissionStatus status = EmissionStatus::ok;
  double margin = 0.0;
  Vec3 base_x = Vec3::Zero();
  double base_t = 0.0;
  std::vector<PhasePoint> points;
  /// Azimuth index of each point. Grid samples use 0..n-1; companion samples follow.
  std::vector<int> azimuth;
};

namespace detail {

/// beta^2 theta theta^T - g^{-1}: its null cone is the set of conormals of the world line that
/// lie on the light cone.
inline Mat3 emission_form(const Mat3& h, const Vec3& theta, double beta) {
  return beta * beta * theta * theta.transpose() - h;
}

inline std::optional<PhasePoint> orient(const Vec3& xi_raw, const Vec3& x, double t,
                                        const Vec3& theta, double beta, Sheet sheet) {
  Vec3 xi = xi_raw.normalized();
  double d = xi.dot(theta);
  if (d == 0.0) return std::nullopt;
  if (-d * sign_of(sheet) < 0.0) xi = -xi;
  return PhasePoint{x, t, xi, -beta * xi.dot(theta)};
}

}  // namespace detail

/// Covectors in the conormal bundle of the world line at time t that lie on the given sheet
/// of the light cone, sampled at n_samples uniform azimuths around the cone axis. Each point
/// satisfies omega = -beta xi.theta = sign |xi|_{g*} and |xi| = 1.
inline EmissionSet emission_circle(const MetricField& m, const Shot& shot, double t, Sheet sheet,
                                   int n_samples, const EmissionOptions& opt = {}) {
  shot.validate();
  if (n_samples < 0) throw PreconditionError("emission_circle: n_samples must be >= 0");
  EmissionSet out;
  out.base_x = shot.position(t);
  out.base_t = t;
  out.margin = superluminal_margin(m, out.base_x, shot.theta, shot.beta);
  if (!(out.margin > opt.margin_min)) {
    out.status = EmissionStatus::below_margin;
    return out;
  }
  if (std::abs(shot.beta * m.norm_vector(out.base_x, shot.theta) - 1.0) < opt.degeneracy_guard) {
    out.status = EmissionStatus::degenerate;
    return out;
  }
  const Mat3 q = detail::emission_form(m.g_inverse(out.base_x), shot.theta, shot.beta);
  Eigen::SelfAdjointEigenSolver<Mat3> es(q);
  const double lam = es.eigenvalues()[2];
  Vec3 axis = es.eigenvectors().col(2);
  if (axis.dot(shot.theta) < 0.0) axis = -axis;
  // The azimuth origin is tied to theta so that it does not jitter with the eigensolver.
  auto [r1, r2] = orthonormal_complement(shot.theta);
  Vec3 u1 = r1 - r1.dot(axis) * axis;
  if (u1.norm() < 0.1) u1 = r2 - r2.dot(axis) * axis;
  u1.normalize();
  Vec3 u2 = axis.cross(u1);
  for (int j = 0; j < n_samples; ++j) {
    double phi = 2.0 * kPi * (j + opt.azimuth_offset) / n_samples;
    Vec3 u = std::cos(phi) * u1 + std::sin(phi) * u2;
    // Q restricted to the complement of the axis is negative definite.
    double psi = std::atan(std::sqrt(lam / -u.dot(q * u)));
    auto p = detail::orient(std::cos(psi) * axis + std::sin(psi) * u, out.base_x, t, shot.theta,
                            shot.beta, sheet);
    if (!p) continue;
    out.points.push_back(*p);
    out.azimuth.push_back(j);
  }
  return out;
}

/// Covectors on the emission cone at time t that are also conormal to a sibling world line with
/// direction `other` (the plane xi.(theta - other) = 0). Returns at most two points.
inline std::vector<PhasePoint> emission_pair_points(const MetricField& m, const Shot& shot,
                                                    double t, Sheet sheet, const Vec3& other) {
  std::vector<PhasePoint> out;
  Vec3 d = shot.theta - other;
  if (d.norm() < 1e-12) return out;
  const Vec3 x = shot.position(t);
  const Mat3 q = detail::emission_form(m.g_inverse(x), shot.theta, shot.beta);
  auto [p1, p2] = orthonormal_complement(d);
  Eigen::Matrix<double, 3, 2> basis;
  basis << p1, p2;
  Eigen::Matrix2d q2 = basis.transpose() * q * basis;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(q2);
  double neg = es.eigenvalues()[0], pos = es.eigenvalues()[1];
  if (!(pos > 0.0 && neg < 0.0)) return out;
  Vec3 a = basis * es.eigenvectors().col(1);
  Vec3 b = basis * es.eigenvectors().col(0);
  double psi = std::atan(std::sqrt(pos / -neg));
  for (double sgn : {1.0, -1.0}) {
    auto p = detail::orient(std::cos(psi) * a + sgn * std::sin(psi) * b, x, t, shot.theta,
                            shot.beta, sheet);
    if (p) out.push_back(*p);
  }
  return out;
}

// --- break points ------------------------------------------------------------------------------

struct BreakPoint {
  double r;
  Vec3 x;
  /// |d/dr |theta|_g| at the root; zero means the crossing is tangential.
  double margin;
};

/// Roots of r -> |theta|_g(z + r theta) - 1/beta on [a, b], located by a uniform scan with
/// n_scan intervals followed by bisection.
inline std::vector<BreakPoint> break_points(const MetricField& m, const Shot& shot, double a,
                                            double b, int n_scan = 400) {
  if (!(std::isfinite(a) && std::isfinite(b) && a < b)) throw PreconditionError("break_points: interval must be finite with a < b");
  if (n_scan < 1) throw PreconditionError("break_points: n_scan must be positive");
  const Vec3& th = shot.theta;
  auto f = [&](double r) { return m.norm_vector(shot.z + r * th, th) - 1.0 / shot.beta; };
  std::vector<BreakPoint> roots;
  auto add_root = [&](double r) {
    Vec3 x = shot.z + r * th;
    auto dg = m.dg(x);
    Mat3 directional = th[0] * dg[0] + th[1] * dg[1] + th[2] * dg[2];
    double margin = std::abs(th.dot(directional * th)) / (2.0 * m.norm_vector(x, th));
    roots.push_back({r, x, margin});
  };
  double r0 = a, f0 = f(a);
  if (f0 == 0.0) add_root(a);
  for (int i = 1; i <= n_scan; ++i) {
    double r1 = a + (b - a) * i / n_scan;
    double f1 = f(r1);
    if (f1 == 0.0) {
      add_root(r1);
    } else if (f0 != 0.0 && (f0 < 0.0) != (f1 < 0.0)) {
      double lo = r0, hi = r1, flo = f0;
      while (hi - lo > 1e-10) {
        double mid = 0.5 * (lo + hi);
        double fm = f(mid);
        if (fm == 0.0) {
          lo = hi = mid;
          break;
        }
        if ((fm < 0.0) == (flo < 0.0)) {
          lo = mid;
          flo = fm;
        } else {
          hi = mid;
        }
      }
      add_root(0.5 * (lo + hi));
    }
    r0 = r1;
    f0 = f1;
  }
  return roots;
}

/// Half-angle between the propagation directions and theta for a homogeneous isotropic medium
/// with wave speed k.
inline double flat_cone_halfangle(double k, double beta) {
  if (!(k > 0.0 && k <= 1.0)) throw PreconditionError("flat_cone_halfangle: k must lie in (0, 1]");
  if (!(beta > k)) throw Error("subluminal: beta <= k, no emission cone");
  return std::acos(k / beta);
}

}  // namespace cherenkov
