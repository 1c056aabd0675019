#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdio>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace cherenkov {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Spatial derivatives of a matrix field: entry k holds the partial derivative along x^k.
using MatGrad = std::array<Mat3, 3>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kPi = std::numbers::pi;

/// Sheet of the light cone: `plus` means omega = +|xi|_{g*}, `minus` means omega = -|xi|_{g*}.
enum class Sheet : int { plus = 1, minus = -1 };

inline double sign_of(Sheet s) { return static_cast<double>(static_cast<int>(s)); }

inline const char* to_string(Sheet s) { return s == Sheet::plus ? "+" : "-"; }

struct Box {
  Vec3 lo;
  Vec3 hi;

  bool contains(const Vec3& x) const {
    return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
  }
  double diameter() const { return (hi - lo).norm(); }
  Vec3 center() const { return 0.5 * (lo + hi); }
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a precondition of a public operation is violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

inline std::string format_vec(const Vec3& v) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "(%.6g, %.6g, %.6g)", v.x(), v.y(), v.z());
  return buf;
}

/// Deterministic orthonormal pair spanning the plane orthogonal to `axis`.
///
/// The first vector is the normalized projection of the coordinate axis least aligned with
/// `axis`; the second completes a right-handed frame. Every azimuthal parameterization in the
/// library (emission circles, surface charts, the flat oracle) uses this convention.
inline std::pair<Vec3, Vec3> orthonormal_complement(const Vec3& axis) {
  Vec3 a = axis.normalized();
  Eigen::Index k = 0;
  a.cwiseAbs().minCoeff(&k);
  Vec3 ref = Vec3::Zero();
  ref[k] = 1.0;
  Vec3 u = (ref - ref.dot(a) * a).normalized();
  Vec3 v = a.cross(u);
  return {u, v};
}

/// Quasi-uniform points on the unit sphere (golden-angle spiral).
inline std::vector<Vec3> fibonacci_sphere(int n) {
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(n));
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    double y = 1.0 - 2.0 * (i + 0.5) / n;
    double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    double phi = golden * i;
    pts.emplace_back(r * std::cos(phi), y, r * std::sin(phi));
  }
  return pts;
}

inline bool all_finite(const Vec3& v) { return v.allFinite(); }

}  // namespace cherenkov
