#pragma once

// Stable digests of scenes (FNV-1a 64 over a canonical text form).

#include "cherenkov/geometry.hpp"
#include "cherenkov/metric.hpp"

#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>

namespace cherenkov {

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

namespace detail {

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string vec(const Vec3& v) { return num(v[0]) + "," + num(v[1]) + "," + num(v[2]); }

}  // namespace detail

/// Canonical text for everything that affects simulated data. Callable-backed kinds (permittivity
/// fields, implicit surfaces, patch predicates) contribute only their tag.
inline std::string canonical_text(const Scene& scene) {
  using detail::num;
  using detail::vec;
  std::ostringstream os;
  os << "metric=" << to_string(scene.metric.kind()) << ";";
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, metric_kinds::Constant>) {
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) os << num(k.g(i, j)) << ",";
        } else if constexpr (std::is_same_v<K, metric_kinds::ConformalBump>) {
          os << num(k.amplitude) << "," << num(k.width) << "," << vec(k.center);
        } else if constexpr (std::is_same_v<K, metric_kinds::DiagonalAnalytic>) {
          os << vec(k.base) << "," << vec(k.amplitude) << "," << vec(k.center) << "," << num(k.width);
        } else if constexpr (std::is_same_v<K, metric_kinds::GridSampled>) {
          os << k.dims[0] << "," << k.dims[1] << "," << k.dims[2] << "," << vec(k.origin) << ","
             << vec(k.spacing) << ",data:" << fnv1a64(k.data.data(), k.data.size() * sizeof(double));
        } else {
          os << "callable";
        }
      },
      scene.metric.variant());
  if (const auto& b = scene.metric.vacuum_box()) os << ";vacuum_box=" << vec(b->lo) << "," << vec(b->hi);
  os << ";h_deriv=" << num(scene.metric.h_deriv());
  os << ";domain=";
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, surface_kinds::Sphere>) {
          os << "sphere," << vec(k.center) << "," << num(k.radius);
        } else if constexpr (std::is_same_v<K, surface_kinds::Ellipsoid>) {
          os << "ellipsoid," << vec(k.center) << "," << vec(k.semi_axes);
        } else {
          os << "implicit," << vec(k.center) << "," << vec(k.bounds.lo) << "," << vec(k.bounds.hi);
        }
      },
      scene.domain.variant());
  os << ";observed=";
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, patch_kinds::Full>) {
          os << "full";
        } else if constexpr (std::is_same_v<K, patch_kinds::Cap>) {
          os << "cap," << vec(k.axis) << "," << num(k.half_angle);
        } else {
          os << "predicate";
        }
      },
      scene.observed.variant());
  os << ";region=";
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, region_kinds::Ball>) {
          os << "ball," << vec(k.center) << "," << num(k.radius);
        } else {
          os << "box," << vec(k.box.lo) << "," << vec(k.box.hi);
        }
      },
      scene.region.variant());
  return os.str();
}

inline std::uint64_t scene_hash(const Scene& scene) { return fnv1a64(canonical_text(scene)); }

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace cherenkov
