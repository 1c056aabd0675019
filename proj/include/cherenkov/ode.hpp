#pragma once

// Embedded Dormand-Prince 5(4) Runge-Kutta integrator with adaptive step control.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

namespace cherenkov::ode {

template <std::size_t N>
using State = std::array<double, N>;

struct Tolerances {
  double rtol = 1e-10;
  double atol = 1e-12;
  double h_init = 1e-2;
  double h_min = 1e-14;
  double h_max = 0.25;
};

namespace detail {

// Butcher tableau.
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                        b6 = 11.0 / 84;
// Difference between 5th and embedded 4th order weights.
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace detail

/// One Dormand-Prince step of size h from (r, y). Writes the 5th-order solution to `y_out` and
/// the componentwise error estimate to `err`. `f(r, y, dy)` evaluates the right-hand side.
template <std::size_t N, class Rhs>
void dopri_step(Rhs&& f, double r, const State<N>& y, double h, State<N>& y_out,
                State<N>& err) {
  using namespace detail;
  State<N> k1, k2, k3, k4, k5, k6, k7, tmp;
  f(r, y, k1);
  for (std::size_t i = 0; i < N; ++i) tmp[i] = y[i] + h * a21 * k1[i];
  f(r + c2 * h, tmp, k2);
  for (std::size_t i = 0; i < N; ++i) tmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
  f(r + c3 * h, tmp, k3);
  for (std::size_t i = 0; i < N; ++i)
    tmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
  f(r + c4 * h, tmp, k4);
  for (std::size_t i = 0; i < N; ++i)
    tmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
  f(r + c5 * h, tmp, k5);
  for (std::size_t i = 0; i < N; ++i)
    tmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
  f(r + h, tmp, k6);
  for (std::size_t i = 0; i < N; ++i)
    y_out[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
  f(r + h, y_out, k7);
  for (std::size_t i = 0; i < N; ++i)
    err[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
}

template <std::size_t N>
double error_norm(const State<N>& y0, const State<N>& y1, const State<N>& err,
                  const Tolerances& tol) {
  double e = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    double scale = tol.atol + tol.rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    e = std::max(e, std::abs(err[i]) / scale);
  }
  return e;
}

enum class Status { completed, stopped, step_failure };

struct RunInfo {
  Status status = Status::completed;
  double r = 0.0;
  int accepted = 0;
  int rejected = 0;
};

/// Adaptive integration from r0 towards r_end (either direction).
///
/// After every accepted step `on_accept(r_prev, y_prev, r, y, h)` is called; it may modify `y`
/// (e.g. to project onto an invariant manifold) and returns false to stop integration.
template <std::size_t N, class Rhs, class OnAccept>
RunInfo integrate(Rhs&& f, double r0, State<N>& y, double r_end, const Tolerances& tol,
                  OnAccept&& on_accept) {
  RunInfo info;
  info.r = r0;
  const double span = r_end - r0;
  if (span == 0.0) return info;
  const double dir = span > 0 ? 1.0 : -1.0;
  double h = std::min(tol.h_init, std::abs(span));
  double r = r0;
  State<N> y_new, err;
  while (dir * (r_end - r) > 0.0) {
    if (h < tol.h_min) {
      info.status = Status::step_failure;
      info.r = r;
      return info;
    }
    const double remaining = std::abs(r_end - r);
    bool last = h >= remaining;
    double step = last ? remaining : h;
    dopri_step<N>(f, r, y, dir * step, y_new, err);
    double e = error_norm<N>(y, y_new, err, tol);
    if (!std::isfinite(e)) {
      h *= 0.25;
      ++info.rejected;
      continue;
    }
    if (e <= 1.0) {
      State<N> y_prev = y;
      double r_prev = r;
      r = last ? r_end : r + dir * step;
      y = y_new;
      ++info.accepted;
      double factor = e == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(e, -0.2), 0.2, 5.0);
      h = std::min(step * factor, tol.h_max);
      if (!on_accept(r_prev, y_prev, r, y, dir * step)) {
        info.status = Status::stopped;
        info.r = r;
        return info;
      }
    } else {
      ++info.rejected;
      h = step * std::clamp(0.9 * std::pow(e, -0.2), 0.2, 1.0);
    }
  }
  info.r = r;
  return info;
}

}  // namespace cherenkov::ode
