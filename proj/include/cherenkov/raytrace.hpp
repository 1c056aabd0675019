#pragma once

// Bicharacteristics of D_t -/+ |D_x|_g, spatial geodesics and the two-point geodesic problem.

#include "cherenkov/metric.hpp"
#include "cherenkov/ode.hpp"

#include <Eigen/LU>
#include <Eigen/QR>

#include <functional>
#include <optional>
#include <vector>

namespace cherenkov {

/// A covector (xi, omega) over the space-time point (x, t).
struct PhasePoint {
  Vec3 x = Vec3::Zero();
  double t = 0.0;
  Vec3 xi = Vec3::UnitX();
  double omega = 1.0;
};

/// |omega^2 - g^{jk} xi_j xi_k| / (xi . xi).
inline double cone_residual(const MetricField& m, const PhasePoint& p) {
  double q = p.xi.dot(m.g_inverse(p.x) * p.xi);
  return std::abs(p.omega * p.omega - q) / p.xi.squaredNorm();
}

/// Places (x, t, xi) on the requested sheet: omega = sign * |xi|_{g*}.
inline PhasePoint on_cone(const MetricField& m, const Vec3& x, double t, const Vec3& xi,
                          Sheet sheet) {
  return {x, t, xi, sign_of(sheet) * m.norm_covector(x, xi)};
}

enum class Termination { reached_rmax, exited_domain, step_failure };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::reached_rmax: return "reached_rmax";
    case Termination::exited_domain: return "exited_domain";
    case Termination::step_failure: return "step_failure";
  }
  return "?";
}

struct Trajectory {
  std::vector<double> r;
  std::vector<PhasePoint> samples;
  Sheet sheet = Sheet::plus;
  Termination termination = Termination::reached_rmax;
  /// Largest cone residual seen after a step and before projection.
  double max_cone_drift = 0.0;

  const PhasePoint& back() const { return samples.back(); }
};

struct TraceOptions {
  double rtol = 1e-10;
  double atol = 1e-12;
  double h_init = 1e-2;
  double h_max = 0.25;
  bool record_samples = true;
};

namespace detail {

using BicharState = ode::State<8>;

inline BicharState pack(const PhasePoint& p) {
  return {p.x[0], p.x[1], p.x[2], p.t, p.xi[0], p.xi[1], p.xi[2], p.omega};
}

inline PhasePoint unpack(const BicharState& y) {
  return {Vec3(y[0], y[1], y[2]), y[3], Vec3(y[4], y[5], y[6]), y[7]};
}

/// Hamilton equations for p = omega - s |xi|_{g*}:
///   X' = -s g^{-1} xi / |xi|,  T' = 1,  Xi'_k = -s (g^{-1}xi)^T d_k g (g^{-1}xi) / (2|xi|),
///   Omega' = 0.
struct BicharRhs {
  const MetricField* metric;
  double s;
  void operator()(double, const BicharState& y, BicharState& dy) const {
    Vec3 x(y[0], y[1], y[2]);
    Vec3 xi(y[4], y[5], y[6]);
    auto smp = metric->sample(x);
    Vec3 sharp = smp.g_inv * xi;
    double nrm = std::sqrt(xi.dot(sharp));
    Vec3 dx = -s * sharp / nrm;
    dy[0] = dx[0];
    dy[1] = dx[1];
    dy[2] = dx[2];
    dy[3] = 1.0;
    for (int k = 0; k < 3; ++k) dy[4 + k] = -s * sharp.dot(smp.dg[k] * sharp) / (2.0 * nrm);
    dy[7] = 0.0;
  }
};

/// Rescales xi so that |xi|_{g*} = |omega|; returns the residual before projection.
inline double project_to_cone(const MetricField& m, BicharState& y) {
  Vec3 x(y[0], y[1], y[2]);
  Vec3 xi(y[4], y[5], y[6]);
  double q = xi.dot(m.g_inverse(x) * xi);
  double drift = std::abs(y[7] * y[7] - q) / xi.squaredNorm();
  double scale = std::abs(y[7]) / std::sqrt(q);
  for (int k = 0; k < 3; ++k) y[4 + k] *= scale;
  return drift;
}

inline ode::Tolerances to_ode(const TraceOptions& o) {
  ode::Tolerances t;
  t.rtol = o.rtol;
  t.atol = o.atol;
  t.h_init = o.h_init;
  t.h_max = o.h_max;
  return t;
}

}  // namespace detail

/// Integrates the bicharacteristic through `start` on the given sheet from r = 0 to r = r_span
/// (r_span may be negative to integrate backwards). `stop(r, point)` is polled after every
/// accepted step and may end the integration early, which is reported as `exited_domain`.
inline Trajectory trace_bicharacteristic(
    const MetricField& m, const PhasePoint& start, Sheet sheet, double r_span,
    const TraceOptions& opt = {},
    const std::function<bool(double, const PhasePoint&)>& stop = nullptr) {
  if (start.xi.squaredNorm() == 0.0) throw PreconditionError("bicharacteristic: xi must be nonzero");
  if (std::signbit(start.omega) != (sheet == Sheet::minus) || start.omega == 0.0)
    throw PreconditionError("bicharacteristic: omega sign does not match the sheet");
  Trajectory traj;
  traj.sheet = sheet;
  traj.r.push_back(0.0);
  traj.samples.push_back(start);
  if (r_span == 0.0) return traj;

  detail::BicharRhs rhs{&m, sign_of(sheet)};
  auto y = detail::pack(start);
  double t0 = start.t;
  auto on_accept = [&](double, const detail::BicharState&, double r, detail::BicharState& ynew,
                       double) {
    traj.max_cone_drift = std::max(traj.max_cone_drift, detail::project_to_cone(m, ynew));
    ynew[3] = t0 + r;
    PhasePoint p = detail::unpack(ynew);
    if (opt.record_samples) {
      traj.r.push_back(r);
      traj.samples.push_back(p);
    }
    if (stop && stop(r, p)) {
      if (!opt.record_samples) {
        traj.r.push_back(r);
        traj.samples.push_back(p);
      }
      return false;
    }
    return true;
  };
  auto info = ode::integrate<8>(rhs, 0.0, y, r_span, detail::to_ode(opt), on_accept);
  switch (info.status) {
    case ode::Status::completed: traj.termination = Termination::reached_rmax; break;
    case ode::Status::stopped: traj.termination = Termination::exited_domain; break;
    case ode::Status::step_failure: traj.termination = Termination::step_failure; break;
  }
  if (!opt.record_samples && info.status != ode::Status::stopped) {
    traj.r.push_back(info.r);
    traj.samples.push_back(detail::unpack(y));
  }
  return traj;
}

/// Forward bicharacteristic from an on-cone start, r in [0, r_max].
inline Trajectory integrate_bicharacteristic(const MetricField& m, const PhasePoint& start,
                                             Sheet sheet, double r_max, double tol = 1e-10) {
  if (!(r_max >= 0.0)) throw PreconditionError("integrate_bicharacteristic: r_max must be >= 0");
  if (cone_residual(m, start) > 1e-9)
    throw PreconditionError("integrate_bicharacteristic: start is not on the light cone");
  TraceOptions opt;
  opt.rtol = tol;
  opt.atol = tol * 1e-2;
  return trace_bicharacteristic(m, start, sheet, r_max, opt);
}

/// Integrates the same bicharacteristic backwards in the flow parameter by `r_back` >= 0.
inline Trajectory trace_backward(const MetricField& m, const PhasePoint& end, Sheet sheet,
                                 double r_back, double tol = 1e-10) {
  if (!(r_back >= 0.0)) throw PreconditionError("trace_backward: r_back must be >= 0");
  TraceOptions opt;
  opt.rtol = tol;
  opt.atol = tol * 1e-2;
  return trace_bicharacteristic(m, end, sheet, -r_back, opt);
}

/// One Dormand-Prince step of size h (no error control). Used to refine crossings inside an
/// accepted step.
inline PhasePoint bicharacteristic_substep(const MetricField& m, const PhasePoint& from,
                                           Sheet sheet, double h) {
  detail::BicharRhs rhs{&m, sign_of(sheet)};
  auto y = detail::pack(from);
  detail::BicharState out, err;
  ode::dopri_step<8>(rhs, 0.0, y, h, out, err);
  detail::project_to_cone(m, out);
  out[3] = from.t + h;
  return detail::unpack(out);
}

// --- geodesics ------------------------------------------------------------------------------

class GeodesicError : public Error {
 public:
  GeodesicError(const std::string& what, double partial_length)
      : Error(what), partial_length_(partial_length) {}
  double partial_length() const { return partial_length_; }

 private:
  double partial_length_;
};

struct GeodesicEnd {
  Vec3 endpoint;
  Vec3 velocity;
  /// max | |gamma'|_g - 1 | over accepted steps.
  double speed_drift = 0.0;
};

/// Follows the unit-speed geodesic from x with initial velocity v for the given g-length.
inline GeodesicEnd integrate_geodesic(const MetricField& m, const Vec3& x, const Vec3& v,
                                      double length, double rtol = 1e-10) {
  if (!(length >= 0.0)) throw PreconditionError("integrate_geodesic: length must be >= 0");
  if (std::abs(m.norm_vector(x, v) - 1.0) > 1e-10)
    throw PreconditionError("integrate_geodesic: v must have unit g-length");
  ode::State<6> y{x[0], x[1], x[2], v[0], v[1], v[2]};
  GeodesicEnd out{x, v, 0.0};
  if (length == 0.0) return out;
  auto rhs = [&m](double, const ode::State<6>& s, ode::State<6>& ds) {
    Vec3 p(s[0], s[1], s[2]);
    Vec3 u(s[3], s[4], s[5]);
    auto gamma = m.christoffel(p);
    ds[0] = u[0];
    ds[1] = u[1];
    ds[2] = u[2];
    for (int l = 0; l < 3; ++l) ds[3 + l] = -u.dot(gamma[l] * u);
  };
  ode::Tolerances tol;
  tol.rtol = rtol;
  tol.atol = rtol * 1e-2;
  auto on_accept = [&](double, const ode::State<6>&, double, ode::State<6>& s, double) {
    Vec3 p(s[0], s[1], s[2]);
    Vec3 u(s[3], s[4], s[5]);
    out.speed_drift = std::max(out.speed_drift, std::abs(m.norm_vector(p, u) - 1.0));
    return true;
  };
  auto info = ode::integrate<6>(rhs, 0.0, y, length, tol, on_accept);
  if (info.status == ode::Status::step_failure)
    throw GeodesicError("integrate_geodesic: step size underflow", info.r);
  out.endpoint = Vec3(y[0], y[1], y[2]);
  out.velocity = Vec3(y[3], y[4], y[5]);
  return out;
}

class ShootingError : public Error {
 public:
  ShootingError(const std::string& what, double best_residual)
      : Error(what), best_residual_(best_residual) {}
  double best_residual() const { return best_residual_; }

 private:
  double best_residual_;
};

struct GeodesicConnection {
  Vec3 v0;         // unit g-length initial velocity at z
  double length;   // g-length of the connecting geodesic
  double residual; // |endpoint - x|
};

namespace detail {

inline Vec3 exp_map(const MetricField& m, const Vec3& z, const Vec3& w) {
  double len = m.norm_vector(z, w);
  if (len == 0.0) return z;
  return integrate_geodesic(m, z, w / len, len).endpoint;
}

/// Damped Gauss-Newton (Levenberg-Marquardt) on exp_z(w) = x. Returns (w, residual). The
/// damping keeps the iteration stable where the exponential map is singular (caustics).
inline std::pair<Vec3, double> shoot(const MetricField& m, const Vec3& z, const Vec3& x,
                                     Vec3 w, double tol, int max_iter = 60) {
  Vec3 f = exp_map(m, z, w) - x;
  double res = f.norm();
  double lambda = 1e-6;
  for (int it = 0; it < max_iter && res > tol; ++it) {
    Mat3 jac;
    double dw = 1e-7 * std::max(1.0, w.norm());
    for (int c = 0; c < 3; ++c) {
      Vec3 wp = w;
      wp[c] += dw;
      jac.col(c) = (exp_map(m, z, wp) - x - f) / dw;
    }
    Mat3 jtj = jac.transpose() * jac;
    Vec3 jtf = jac.transpose() * f;
    const double scale = std::max(jtj.trace() / 3.0, 1e-300);
    bool improved = false;
    for (int ls = 0; ls < 16; ++ls) {
      Mat3 a = jtj + lambda * scale * Mat3::Identity();
      Vec3 step = -a.ldlt().solve(jtf);
      Vec3 wn = w + step;
      Vec3 fn = exp_map(m, z, wn) - x;
      if (fn.norm() < res) {
        w = wn;
        f = fn;
        res = fn.norm();
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = true;
        break;
      }
      lambda *= 8.0;
    }
    if (!improved) break;
  }
  return {w, res};
}

}  // namespace detail

/// Solves the two-point problem: unit v0 at z and length L with exp_z(L v0) = x. Runs damped
/// Gauss-Newton from the Euclidean chord and eight tilted starts, and keeps the shortest converged
/// geodesic.
inline GeodesicConnection connect_geodesic(const MetricField& m, const Vec3& z, const Vec3& x,
                                           double tol = 1e-9) {
  Vec3 chord = x - z;
  if (chord.norm() == 0.0) throw PreconditionError("connect_geodesic: z and x coincide");
  if (!z.allFinite() || !x.allFinite()) throw PreconditionError("connect_geodesic: non-finite input");
  double est = m.norm_vector(0.5 * (z + x), chord);
  Vec3 c_hat = chord.normalized();
  auto [u, v] = orthonormal_complement(c_hat);

  std::vector<Vec3> starts;
  starts.push_back(c_hat);
  // Alternate a narrow and a wide tilt: strongly focusing media bend the shortest ray well away
  // from the chord.
  for (int i = 0; i < 8; ++i) {
    double phi = 2.0 * kPi * i / 8.0;
    double tilt = (i % 2 == 0 ? 20.0 : 45.0) * kPi / 180.0;
    starts.push_back(std::cos(tilt) * c_hat +
                     std::sin(tilt) * (std::cos(phi) * u + std::sin(phi) * v));
  }

  std::optional<GeodesicConnection> best;
  double best_residual = kInf;
  for (const auto& d : starts) {
    Vec3 w0 = d / m.norm_vector(z, d) * est;
    try {
      auto [w, res] = detail::shoot(m, z, x, w0, tol);
      best_residual = std::min(best_residual, res);
      if (res <= tol) {
        double len = m.norm_vector(z, w);
        if (!best || len < best->length) best = GeodesicConnection{w / len, len, res};
      }
    } catch (const GeodesicError&) {
      continue;
    }
  }
  if (!best) throw ShootingError("connect_geodesic: no start converged", best_residual);
  return *best;
}

}  // namespace cherenkov
