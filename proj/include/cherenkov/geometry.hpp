#pragma once

// Scene geometry: the domain W, observed boundary patch, target region U; fast marching distance
// fields; nearest boundary points and the source speed threshold.

#include "cherenkov/metric.hpp"
#include "cherenkov/raytrace.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <queue>
#include <variant>
#include <vector>

namespace cherenkov {

// --- domain W --------------------------------------------------------------------------------

namespace surface_kinds {

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

/// Axis-aligned ellipsoid.
struct Ellipsoid {
  Vec3 center = Vec3::Zero();
  Vec3 semi_axes = Vec3::Ones();
};

/// {level < 0}; must be star-shaped about `center` and contained in `bounds`.
struct Implicit {
  std::function<double(const Vec3&)> level;
  std::function<Vec3(const Vec3&)> gradient;  // optional; central differences when empty
  Vec3 center = Vec3::Zero();
  Box bounds{Vec3::Constant(-1.0), Vec3::Constant(1.0)};
};

}  // namespace surface_kinds

class Domain {
 public:
  using Variant = std::variant<surface_kinds::Sphere, surface_kinds::Ellipsoid, surface_kinds::Implicit>;

  Domain() : kind_(surface_kinds::Sphere{}) {}
  explicit Domain(Variant v) : kind_(std::move(v)) {
    if (auto* s = std::get_if<surface_kinds::Sphere>(&kind_); s && !(s->radius > 0.0))
      throw PreconditionError("sphere radius must be positive");
    if (auto* e = std::get_if<surface_kinds::Ellipsoid>(&kind_);
        e && !(e->semi_axes.array() > 0.0).all())
      throw PreconditionError("ellipsoid semi-axes must be positive");
    if (auto* f = std::get_if<surface_kinds::Implicit>(&kind_); f && !f->level)
      throw PreconditionError("implicit surface needs a level function");
  }

  static Domain sphere(double radius, const Vec3& center = Vec3::Zero()) {
    return Domain(surface_kinds::Sphere{center, radius});
  }

  const Variant& variant() const { return kind_; }

  /// Negative inside, zero on the boundary.
  double level(const Vec3& x) const {
    return std::visit(
        [&](const auto& k) -> double {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, surface_kinds::Sphere>) {
            return (x - k.center).norm() - k.radius;
          } else if constexpr (std::is_same_v<K, surface_kinds::Ellipsoid>) {
            return (x - k.center).cwiseQuotient(k.semi_axes).norm() - 1.0;
          } else {
            return k.level(x);
          }
        },
        kind_);
  }

  Vec3 gradient(const Vec3& x) const {
    return std::visit(
        [&](const auto& k) -> Vec3 {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, surface_kinds::Sphere>) {
            return (x - k.center).normalized();
          } else if constexpr (std::is_same_v<K, surface_kinds::Ellipsoid>) {
            Vec3 s = (x - k.center).cwiseQuotient(k.semi_axes);
            return s.cwiseQuotient(k.semi_axes) / s.norm();
          } else {
            if (k.gradient) return k.gradient(x);
            Vec3 g;
            const double h = 1e-6 * std::max(1.0, k.bounds.diameter());
            for (int i = 0; i < 3; ++i) {
              Vec3 e = Vec3::Zero();
              e[i] = h;
              g[i] = (k.level(x + e) - k.level(x - e)) / (2.0 * h);
            }
            return g;
          }
        },
        kind_);
  }

  Vec3 outward_normal(const Vec3& x) const { return gradient(x).normalized(); }

  bool inside(const Vec3& x) const { return level(x) < 0.0; }

  Vec3 center() const {
    return std::visit([](const auto& k) -> Vec3 { return k.center; }, kind_);
  }

  Box bounds() const {
    return std::visit(
        [](const auto& k) -> Box {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, surface_kinds::Sphere>) {
            return {k.center.array() - k.radius, k.center.array() + k.radius};
          } else if constexpr (std::is_same_v<K, surface_kinds::Ellipsoid>) {
            return {k.center - k.semi_axes, k.center + k.semi_axes};
          } else {
            return k.bounds;
          }
        },
        kind_);
  }

  double diameter() const { return bounds().diameter() / std::sqrt(3.0); }

  /// Boundary point on the ray from the center through direction u.
  Vec3 radial_point(const Vec3& u) const {
    Vec3 d = u.normalized();
    return std::visit(
        [&](const auto& k) -> Vec3 {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, surface_kinds::Sphere>) {
            return k.center + k.radius * d;
          } else if constexpr (std::is_same_v<K, surface_kinds::Ellipsoid>) {
            return k.center + d / d.cwiseQuotient(k.semi_axes).norm();
          } else {
            double lo = 0.0, hi = k.bounds.diameter();
            if (!(k.level(k.center) < 0.0)) throw PreconditionError("implicit surface: center is not inside");
            for (int it = 0; it < 200 && hi - lo > 1e-14 * (1.0 + hi); ++it) {
              double mid = 0.5 * (lo + hi);
              (k.level(k.center + mid * d) < 0.0 ? lo : hi) = mid;
            }
            return k.center + 0.5 * (lo + hi) * d;
          }
        },
        kind_);
  }

  /// Radial projection of x onto the boundary.
  Vec3 project(const Vec3& x) const { return radial_point(x - center()); }

  std::vector<Vec3> sample_boundary(int n) const {
    std::vector<Vec3> pts;
    for (const auto& u : fibonacci_sphere(n)) pts.push_back(radial_point(u));
    return pts;
  }

  /// Smallest t > 0 at which x + t d meets the boundary, if any (x inside).
  std::optional<double> exit_distance(const Vec3& x, const Vec3& d) const {
    if (auto* s = std::get_if<surface_kinds::Sphere>(&kind_)) {
      Vec3 p = x - s->center;
      double a = d.squaredNorm(), b = p.dot(d), c = p.squaredNorm() - s->radius * s->radius;
      double disc = b * b - a * c;
      if (disc < 0.0) return std::nullopt;
      double t = (-b + std::sqrt(disc)) / a;
      if (t <= 0.0) return std::nullopt;
      return t;
    }
    return std::nullopt;
  }

 private:
  Variant kind_;
};

// --- observed boundary patch -------------------------------------------------------------------

namespace patch_kinds {
struct Full {};
/// Boundary points whose direction from the domain center is within half_angle of axis.
struct Cap {
  Vec3 axis = Vec3::UnitX();
  double half_angle = kPi / 3.0;
};
struct Predicate {
  std::function<bool(const Vec3&)> contains;
};
}  // namespace patch_kinds

class BoundaryPatch {
 public:
  using Variant = std::variant<patch_kinds::Full, patch_kinds::Cap, patch_kinds::Predicate>;

  BoundaryPatch() = default;
  explicit BoundaryPatch(Variant v) : kind_(std::move(v)) {
    if (auto* c = std::get_if<patch_kinds::Cap>(&kind_)) {
      if (c->axis.norm() == 0.0) throw PreconditionError("cap axis must be nonzero");
      if (!(c->half_angle > 0.0 && c->half_angle <= kPi))
        throw PreconditionError("cap half-angle must lie in (0, pi]");
      c->axis.normalize();
    }
    if (auto* p = std::get_if<patch_kinds::Predicate>(&kind_); p && !p->contains)
      throw PreconditionError("patch predicate is empty");
  }

  static BoundaryPatch full() { return BoundaryPatch(patch_kinds::Full{}); }
  static BoundaryPatch cap(const Vec3& axis, double half_angle) {
    return BoundaryPatch(patch_kinds::Cap{axis, half_angle});
  }

  const Variant& variant() const { return kind_; }
  bool is_full() const { return std::holds_alternative<patch_kinds::Full>(kind_); }

  bool contains(const Vec3& x, const Vec3& domain_center) const {
    return std::visit(
        [&](const auto& k) -> bool {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, patch_kinds::Full>) {
            return true;
          } else if constexpr (std::is_same_v<K, patch_kinds::Cap>) {
            Vec3 d = x - domain_center;
            double c = d.dot(k.axis) / d.norm();
            return c >= std::cos(k.half_angle) - 1e-12;
          } else {
            return k.contains(x);
          }
        },
        kind_);
  }

 private:
  Variant kind_ = patch_kinds::Full{};
};

// --- target region U ---------------------------------------------------------------------------

namespace region_kinds {
struct Ball {
  Vec3 center = Vec3::Zero();
  double radius = 0.5;
};
struct AxisBox {
  Box box{Vec3::Constant(-0.5), Vec3::Constant(0.5)};
};
}  // namespace region_kinds

class Region {
 public:
  using Variant = std::variant<region_kinds::Ball, region_kinds::AxisBox>;

  Region() = default;
  explicit Region(Variant v) : kind_(std::move(v)) {
    if (auto* b = std::get_if<region_kinds::Ball>(&kind_); b && !(b->radius > 0.0))
      throw PreconditionError("region ball radius must be positive");
    if (auto* b = std::get_if<region_kinds::AxisBox>(&kind_);
        b && !(b->box.hi.array() > b->box.lo.array()).all())
      throw PreconditionError("region box must have positive extent");
  }
  static Region ball(const Vec3& center, double radius) { return Region(region_kinds::Ball{center, radius}); }

  const Variant& variant() const { return kind_; }

  bool contains(const Vec3& x) const {
    if (auto* b = std::get_if<region_kinds::Ball>(&kind_)) return (x - b->center).norm() <= b->radius;
    return std::get<region_kinds::AxisBox>(kind_).box.contains(x);
  }

  Vec3 center() const {
    if (auto* b = std::get_if<region_kinds::Ball>(&kind_)) return b->center;
    return std::get<region_kinds::AxisBox>(kind_).box.center();
  }

  /// Points on the closure of U used for boundary containment checks.
  std::vector<Vec3> hull_samples(int n = 200) const {
    std::vector<Vec3> pts;
    if (auto* b = std::get_if<region_kinds::Ball>(&kind_)) {
      for (const auto& u : fibonacci_sphere(n)) pts.push_back(b->center + b->radius * u);
    } else {
      const Box& bx = std::get<region_kinds::AxisBox>(kind_).box;
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
          for (int k = 0; k < 5; ++k)
            pts.push_back(bx.lo + (bx.hi - bx.lo).cwiseProduct(Vec3(i, j, k) / 4.0));
    }
    return pts;
  }

  /// Deterministic interior samples: the center first, then shells or lattice points.
  std::vector<Vec3> sample(int n) const {
    std::vector<Vec3> pts{center()};
    if (n <= 1) return pts;
    if (auto* b = std::get_if<region_kinds::Ball>(&kind_)) {
      int rest = n - 1;
      int inner = rest / 2, outer = rest - inner;
      for (const auto& u : fibonacci_sphere(inner)) pts.push_back(b->center + 0.5 * b->radius * u);
      for (const auto& u : fibonacci_sphere(outer)) pts.push_back(b->center + 0.95 * b->radius * u);
    } else {
      const Box& bx = std::get<region_kinds::AxisBox>(kind_).box;
      int m = std::max(2, static_cast<int>(std::ceil(std::cbrt(static_cast<double>(n - 1)))));
      for (int i = 0; i < m && static_cast<int>(pts.size()) < n; ++i)
        for (int j = 0; j < m && static_cast<int>(pts.size()) < n; ++j)
          for (int k = 0; k < m && static_cast<int>(pts.size()) < n; ++k)
            pts.push_back(bx.lo + (bx.hi - bx.lo).cwiseProduct(Vec3(i + 0.5, j + 0.5, k + 0.5) / m));
    }
    return pts;
  }

 private:
  Variant kind_ = region_kinds::Ball{};
};

struct Scene {
  MetricField metric;
  Domain domain;
  BoundaryPatch observed;
  Region region;

  /// Throws PreconditionError when U is not strictly inside W or the boundary is not smooth.
  void validate() const {
    for (const auto& p : region.hull_samples())
      if (!(domain.level(p) < 0.0))
        throw PreconditionError("scene: region U is not strictly inside W (at " + format_vec(p) + ")");
    for (const auto& x : domain.sample_boundary(200))
      if (!(domain.gradient(x).norm() > 1e-12))
        throw PreconditionError("scene: boundary level-set gradient vanishes at " + format_vec(x));
  }

  bool observed_at(const Vec3& x) const { return observed.contains(x, domain.center()); }
};

// --- regular grids -----------------------------------------------------------------------------

/// Samples on a regular grid, stored [i][j][k][c] row-major.
struct GridField {
  std::array<std::int64_t, 3> dims{0, 0, 0};
  Vec3 origin = Vec3::Zero();
  Vec3 spacing = Vec3::Ones();
  int components = 1;
  std::vector<double> data;

  std::int64_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return (i * dims[1] + j) * dims[2] + k;
  }
  Vec3 node(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return origin + spacing.cwiseProduct(Vec3(double(i), double(j), double(k)));
  }
  std::int64_t size() const { return dims[0] * dims[1] * dims[2]; }
  Box bounds() const { return {origin, node(dims[0] - 1, dims[1] - 1, dims[2] - 1)}; }

  /// Trilinear blend of per-node values `value(flat_index)`; coordinates are clamped to the grid.
  template <class NodeValue>
  double blend(const Vec3& x, NodeValue&& value) const {
    Vec3 s = (x - origin).cwiseQuotient(spacing);
    std::array<std::int64_t, 3> i0{};
    Vec3 f;
    for (int a = 0; a < 3; ++a) {
      double u = std::clamp(s[a], 0.0, double(dims[a] - 1));
      i0[a] = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(u)), dims[a] - 2);
      i0[a] = std::max<std::int64_t>(i0[a], 0);
      f[a] = u - double(i0[a]);
    }
    double out = 0.0;
    for (int di = 0; di < 2; ++di)
      for (int dj = 0; dj < 2; ++dj)
        for (int dk = 0; dk < 2; ++dk) {
          double w = (di ? f[0] : 1 - f[0]) * (dj ? f[1] : 1 - f[1]) * (dk ? f[2] : 1 - f[2]);
          if (w == 0.0) continue;
          out += w * value(index(i0[0] + di, i0[1] + dj, i0[2] + dk));
        }
    return out;
  }

  /// Trilinear interpolation of component c.
  double interpolate(const Vec3& x, int c = 0) const {
    return blend(x, [&](std::int64_t id) { return data[static_cast<std::size_t>(id * components + c)]; });
  }
};

/// Distance from a point source. Off-node values interpolate d / |x - z|_{g(z)}, which stays
/// smooth through the source, so the cone at z is reproduced exactly for constant metrics.
struct DistanceField : GridField {
  Vec3 source = Vec3::Zero();
  Mat3 g_source = Mat3::Identity();

  double source_norm(const Vec3& x) const { return std::sqrt((x - source).dot(g_source * (x - source))); }

  double at(const Vec3& x) const {
    double r = source_norm(x);
    if (r == 0.0) return 0.0;
    return r * blend(x, [&](std::int64_t id) {
      double rn = source_norm(node(id / (dims[1] * dims[2]), (id / dims[2]) % dims[1], id % dims[2]));
      return rn > 0.0 ? data[static_cast<std::size_t>(id)] / rn : 1.0;
    });
  }
};

namespace detail {

/// 26-point stencil with the surface of the 3x3x3 cube split into 48 triangles (each face into
/// eight, fanned around the face center).
struct Stencil {
  std::array<std::array<int, 3>, 26> offsets{};
  std::vector<std::array<int, 3>> triangles;
  std::vector<std::array<int, 2>> edges;
  std::array<std::vector<int>, 26> tri_of, edge_of;

  static int code(int a, int b, int c) { return (a + 1) * 9 + (b + 1) * 3 + (c + 1); }

  Stencil() {
    std::array<int, 27> slot{};
    slot.fill(-1);
    int n = 0;
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b)
        for (int c = -1; c <= 1; ++c) {
          if (a == 0 && b == 0 && c == 0) continue;
          offsets[n] = {a, b, c};
          slot[code(a, b, c)] = n++;
        }
    for (int axis = 0; axis < 3; ++axis)
      for (int side : {-1, 1}) {
        int p = (axis + 1) % 3, q = (axis + 2) % 3;
        auto at = [&](int u, int v) {
          std::array<int, 3> o{};
          o[axis] = side;
          o[p] = u;
          o[q] = v;
          return slot[code(o[0], o[1], o[2])];
        };
        // Boundary of the face's 3x3 grid, in cyclic order.
        const int ring[8][2] = {{-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}};
        int centre = at(0, 0);
        for (int r = 0; r < 8; ++r) {
          int s0 = at(ring[r][0], ring[r][1]);
          int s1 = at(ring[(r + 1) % 8][0], ring[(r + 1) % 8][1]);
          triangles.push_back({centre, s0, s1});
        }
      }
    for (const auto& t : triangles)
      for (int e = 0; e < 3; ++e) {
        int a = std::min(t[e], t[(e + 1) % 3]), b = std::max(t[e], t[(e + 1) % 3]);
        if (std::find(edges.begin(), edges.end(), std::array<int, 2>{a, b}) == edges.end())
          edges.push_back({a, b});
      }
    for (int i = 0; i < static_cast<int>(triangles.size()); ++i)
      for (int v : triangles[i]) tri_of[v].push_back(i);
    for (int i = 0; i < static_cast<int>(edges.size()); ++i)
      for (int v : edges[i]) edge_of[v].push_back(i);
  }

  int opposite(int s) const {
    const auto& o = offsets[s];
    return find(-o[0], -o[1], -o[2]);
  }
  int find(int a, int b, int c) const {
    for (int i = 0; i < 26; ++i)
      if (offsets[i] == std::array<int, 3>{a, b, c}) return i;
    return -1;
  }
};

inline const Stencil& stencil() {
  static const Stencil s;
  return s;
}

/// Minimizer over the simplex spanned by vertices y (relative to the updated node) of
/// d(mu) + |y(mu)|_G with d interpolated linearly from the vertex values. Returns nullopt when
/// the stationary point lies outside the simplex.
template <int M>
std::optional<Eigen::Matrix<double, M, 1>> simplex_argmin(const Mat3& g,
                                                          const std::array<Vec3, M + 1>& y,
                                                          const std::array<double, M + 1>& d) {
  using MatM = Eigen::Matrix<double, M, M>;
  using VecM = Eigen::Matrix<double, M, 1>;
  Eigen::Matrix<double, 3, M> p;
  VecM delta;
  for (int i = 0; i < M; ++i) {
    p.col(i) = y[i + 1] - y[0];
    delta[i] = d[i + 1] - d[0];
  }
  MatM mm = p.transpose() * g * p;
  VecM c = p.transpose() * g * y[0];
  Eigen::LDLT<MatM> ldlt(mm);
  if (ldlt.info() != Eigen::Success) return std::nullopt;
  VecM minv_c = ldlt.solve(c);
  VecM minv_d = ldlt.solve(delta);
  double q = 1.0 - delta.dot(minv_d);
  if (!(q > 0.0)) return std::nullopt;
  Vec3 r0 = y[0] - p * minv_c;
  double s = std::sqrt(std::max(0.0, r0.dot(g * r0))) / std::sqrt(q);
  VecM mu = -minv_c - s * minv_d;
  if ((mu.array() < -1e-12).any() || mu.sum() > 1.0 + 1e-12) return std::nullopt;
  return mu;
}

}  // namespace detail

struct FastMarchingOptions {
  /// Nodes within this many cells of the source are initialized with the local closed form.
  double init_radius_cells = 2.5;
};

/// First-arrival solution of |grad d|_{g^{-1}} = 1 with d(z) = 0 on a regular grid covering
/// `box` with n nodes per axis.
inline DistanceField fast_marching(const MetricField& m, const Box& box, int n, const Vec3& z,
                                   const FastMarchingOptions& opt = {}) {
  if (n < 3) throw PreconditionError("fast_marching: need at least 3 nodes per axis");
  if (!box.contains(z)) throw PreconditionError("fast_marching: source outside the grid");
  DistanceField f;
  f.source = z;
  f.g_source = m.g(z);
  f.dims = {n, n, n};
  f.origin = box.lo;
  f.spacing = (box.hi - box.lo) / double(n - 1);
  const std::int64_t total = f.size();
  f.data.assign(static_cast<std::size_t>(total), kInf);

  std::vector<Mat3> node_g(static_cast<std::size_t>(total));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t k = 0; k < n; ++k) node_g[f.index(i, j, k)] = m.g(f.node(i, j, k));

  enum : std::uint8_t { far, trial, fixed, done };
  std::vector<std::uint8_t> state(static_cast<std::size_t>(total), far);
  using Item = std::pair<double, std::int64_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;

  const Mat3 gz = m.g(z);
  const double r_init = opt.init_radius_cells * f.spacing.maxCoeff();
  Vec3 s = (z - f.origin).cwiseQuotient(f.spacing);
  std::array<std::int64_t, 3> lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(s[a] - opt.init_radius_cells - 1)));
    hi[a] = std::min<std::int64_t>(n - 1, static_cast<std::int64_t>(std::ceil(s[a] + opt.init_radius_cells + 1)));
  }
  for (std::int64_t i = lo[0]; i <= hi[0]; ++i)
    for (std::int64_t j = lo[1]; j <= hi[1]; ++j)
      for (std::int64_t k = lo[2]; k <= hi[2]; ++k) {
        Vec3 x = f.node(i, j, k);
        if ((x - z).norm() > r_init) continue;
        auto idx = f.index(i, j, k);
        Vec3 dx = x - z;
        Mat3 geff = 0.5 * (gz + node_g[idx]);
        f.data[idx] = std::sqrt(dx.dot(geff * dx));
        state[idx] = fixed;
        heap.emplace(f.data[idx], idx);
      }
  if (heap.empty()) {
    // Grid too coarse for the init radius: seed the nearest node.
    std::int64_t i = std::llround(std::clamp(s[0], 0.0, double(n - 1)));
    std::int64_t j = std::llround(std::clamp(s[1], 0.0, double(n - 1)));
    std::int64_t k = std::llround(std::clamp(s[2], 0.0, double(n - 1)));
    auto idx = f.index(i, j, k);
    Vec3 dx = f.node(i, j, k) - z;
    f.data[idx] = std::sqrt(dx.dot(gz * dx));
    state[idx] = fixed;
    heap.emplace(f.data[idx], idx);
  }

  const auto& st = detail::stencil();
  std::array<Vec3, 26> rel;
  for (int q = 0; q < 26; ++q)
    rel[q] = f.spacing.cwiseProduct(Vec3(st.offsets[q][0], st.offsets[q][1], st.offsets[q][2]));

  auto coords = [&](std::int64_t idx) {
    std::int64_t k = idx % n;
    std::int64_t j = (idx / n) % n;
    std::int64_t i = idx / (std::int64_t(n) * n);
    return std::array<std::int64_t, 3>{i, j, k};
  };
  auto neighbour = [&](const std::array<std::int64_t, 3>& c, int q) -> std::int64_t {
    std::int64_t i = c[0] + st.offsets[q][0], j = c[1] + st.offsets[q][1], k = c[2] + st.offsets[q][2];
    if (i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n) return -1;
    return f.index(i, j, k);
  };

  // Simplex update with the source factor |x - z|_{G(z)} split off: the minimizer comes from the
  // closed form, the value interpolates only the smooth remainder d - |x - z|_{G(z)}.
  auto source_dist = [&](const Vec3& x) { return std::sqrt((x - z).dot(gz * (x - z))); };
  auto factored = [&]<int M>(const Mat3& geff, const Vec3& pb, const std::array<Vec3, M + 1>& ys,
                             const std::array<double, M + 1>& ds) {
    using VecM = Eigen::Matrix<double, M, 1>;
    using MatM = Eigen::Matrix<double, M, M>;
    auto mu = detail::simplex_argmin<M>(geff, ys, ds);
    if (!mu) return kInf;
    Eigen::Matrix<double, 3, M> p;
    VecM du;
    const double u0 = ds[0] - source_dist(pb + ys[0]);
    for (int i = 0; i < M; ++i) {
      p.col(i) = ys[i + 1] - ys[0];
      du[i] = ds[i + 1] - source_dist(pb + ys[i + 1]) - u0;
    }
    auto value = [&](const VecM& m) {
      Vec3 y = ys[0] + p * m;
      return source_dist(pb + y) + u0 + du.dot(m) + std::sqrt(y.dot(geff * y));
    };
    // Newton polish of the factored objective.
    for (int it = 0; it < 3; ++it) {
      Vec3 y = ys[0] + p * *mu;
      Vec3 w = pb + y - z;
      double a = std::sqrt(w.dot(gz * w)), b = std::sqrt(y.dot(geff * y));
      if (a < 1e-300 || b < 1e-300) break;
      Vec3 gw = gz * w, gy = geff * y;
      VecM grad = p.transpose() * (gw / a + gy / b) + du;
      Mat3 hess3 = (gz - gw * gw.transpose() / (a * a)) / a + (geff - gy * gy.transpose() / (b * b)) / b;
      MatM hess = p.transpose() * hess3 * p;
      Eigen::LDLT<MatM> ldlt(hess);
      if (ldlt.info() != Eigen::Success) break;
      VecM next = *mu - ldlt.solve(grad);
      if (!next.allFinite()) break;
      *mu = next;
    }
    if ((mu->array() < -1e-9).any() || mu->sum() > 1.0 + 1e-9) return kInf;
    return value(*mu);
  };

  while (!heap.empty()) {
    auto [val, a] = heap.top();
    heap.pop();
    if (state[a] == done || val > f.data[a]) continue;
    state[a] = done;
    auto ca = coords(a);
    for (int q = 0; q < 26; ++q) {
      std::int64_t b = neighbour(ca, q);
      if (b < 0 || state[b] == done || state[b] == fixed) continue;
      auto cb = coords(b);
      int sa = st.opposite(q);  // position of a in b's stencil
      // Gather accepted stencil vertices of b.
      auto vertex_ok = [&](int sv, std::int64_t& id) {
        id = neighbour(cb, sv);
        return id >= 0 && state[id] == done;
      };
      const Mat3& gb = node_g[b];
      const Vec3 pb = f.node(cb[0], cb[1], cb[2]);
      double best = f.data[b];
      {
        Mat3 geff = 0.5 * (gb + node_g[a]);
        best = std::min(best, f.data[a] + std::sqrt(rel[sa].dot(geff * rel[sa])));
      }
      for (int e : st.edge_of[sa]) {
        int other = st.edges[e][0] == sa ? st.edges[e][1] : st.edges[e][0];
        std::int64_t ob;
        if (!vertex_ok(other, ob)) continue;
        Mat3 geff = 0.5 * gb + 0.25 * (node_g[a] + node_g[ob]);
        best = std::min(best, factored.template operator()<1>(geff, pb, {rel[sa], rel[other]}, {f.data[a], f.data[ob]}));
      }
      for (int t : st.tri_of[sa]) {
        std::array<int, 3> tri = st.triangles[t];
        std::array<Vec3, 3> ys;
        std::array<double, 3> ds;
        Mat3 gsum = Mat3::Zero();
        bool ok = true;
        for (int v = 0; v < 3 && ok; ++v) {
          std::int64_t id;
          if (!vertex_ok(tri[v], id)) {
            ok = false;
            break;
          }
          ys[v] = rel[tri[v]];
          ds[v] = f.data[id];
          gsum += node_g[id];
        }
        if (!ok) continue;
        Mat3 geff = 0.5 * gb + gsum / 6.0;
        best = std::min(best, factored.template operator()<2>(geff, pb, ys, ds));
      }
      if (best < f.data[b]) {
        f.data[b] = best;
        state[b] = trial;
        heap.emplace(best, b);
      }
    }
  }
  return f;
}

/// Fast marching field from z over the domain's bounding box (padded by 5%).
inline DistanceField distance_field(const Scene& scene, const Vec3& z, int grid_n = 64) {
  Box b = scene.domain.bounds();
  Vec3 pad = 0.05 * (b.hi - b.lo);
  return fast_marching(scene.metric, {b.lo - pad, b.hi + pad}, grid_n, z);
}

// --- nearest boundary points -------------------------------------------------------------------

struct BoundaryHit {
  Vec3 x;
  double dist;
};

struct NearestPoints {
  std::vector<BoundaryHit> points;
  /// Every sampled boundary point is at the same distance (e.g. the center of a sphere in a
  /// constant isotropic medium); `points` then holds a representative set.
  bool degenerate = false;
};

namespace detail {

/// g-distance by shooting, warm-started from a previous initial velocity when available.
inline double geodesic_distance(const MetricField& m, const Vec3& z, const Vec3& x,
                                std::optional<Vec3>* warm = nullptr) {
  if (m.is_homogeneous()) return m.norm_vector(z, x - z);
  if (warm && warm->has_value()) {
    auto [w, res] = shoot(m, z, x, **warm, 1e-9);
    if (res <= 1e-9) {
      *warm = w;
      return m.norm_vector(z, w);
    }
  }
  auto c = connect_geodesic(m, z, x);
  if (warm) *warm = c.v0 * c.length;
  return c.length;
}

/// Compass search over the boundary in a tangent chart at x0. `sign` = +1 minimizes f, -1
/// maximizes.
template <class F>
std::pair<Vec3, double> boundary_search(const Domain& w, const Vec3& x0, double step, double sign,
                                        F&& f) {
  auto [ea, eb] = orthonormal_complement(w.outward_normal(x0));
  double u = 0.0, v = 0.0;
  Vec3 best_x = x0;
  double best = sign * f(x0);
  while (step > 1e-9) {
    bool moved = false;
    const double du[4] = {step, -step, 0.0, 0.0}, dv[4] = {0.0, 0.0, step, -step};
    for (int i = 0; i < 4; ++i) {
      Vec3 cand = w.project(x0 + (u + du[i]) * ea + (v + dv[i]) * eb);
      double val = sign * f(cand);
      if (val < best) {
        best = val;
        best_x = cand;
        u += du[i];
        v += dv[i];
        moved = true;
        break;
      }
    }
    if (!moved) step *= 0.5;
  }
  return {best_x, sign * best};
}

}  // namespace detail

/// Minimizers of x -> dist_g(z, x) over the boundary of W, clustered within tol.
inline NearestPoints nearest_boundary_points(const Scene& scene, const Vec3& z, double tol = 1e-6,
                                             int n_samples = 2000, int grid_n = 40) {
  if (!scene.region.contains(z)) throw PreconditionError("nearest_boundary_points: z must lie in U");
  const auto& m = scene.metric;
  const auto& w = scene.domain;
  std::optional<DistanceField> field;
  auto screen = [&](const Vec3& x) {
    if (m.is_homogeneous()) return m.norm_vector(z, x - z);
    if (!field) field = distance_field(scene, z, grid_n);
    return field->at(x);
  };

  NearestPoints out;
  // Degeneracy: a spread set of boundary points all at the same exact distance.
  {
    auto spread = w.sample_boundary(32);
    std::vector<double> sd;
    for (const auto& x : spread) sd.push_back(screen(x));
    auto [mn, mx] = std::minmax_element(sd.begin(), sd.end());
    if (*mx - *mn <= 0.02 * *mn) {
      std::vector<BoundaryHit> exact;
      double lo = kInf, hi = 0.0;
      for (const auto& x : spread) {
        double d = detail::geodesic_distance(m, z, x);
        exact.push_back({x, d});
        lo = std::min(lo, d);
        hi = std::max(hi, d);
      }
      if (hi - lo <= tol * std::max(1.0, lo)) {
        out.points = std::move(exact);
        out.degenerate = true;
        return out;
      }
    }
  }

  auto samples = w.sample_boundary(n_samples);
  std::vector<double> sd(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) sd[i] = screen(samples[i]);
  double spacing = std::sqrt(4.0 * kPi / n_samples) * 0.5 * w.diameter();
  // Local minima among samples (compared to samples within 2.5 spacings).
  std::vector<std::size_t> minima;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    bool is_min = true;
    for (std::size_t j = 0; j < samples.size() && is_min; ++j)
      if (j != i && (samples[j] - samples[i]).norm() < 2.5 * spacing &&
          (sd[j] < sd[i] || (sd[j] == sd[i] && j < i)))
        is_min = false;
    if (is_min) minima.push_back(i);
  }
  std::sort(minima.begin(), minima.end(), [&](auto a, auto b) { return sd[a] < sd[b]; });
  const double global = sd[minima.front()];
  std::vector<BoundaryHit> refined;
  for (std::size_t r = 0; r < minima.size() && r < 4; ++r) {
    if (sd[minima[r]] > global * 1.05) break;
    std::optional<Vec3> warm;
    auto [x, d] = detail::boundary_search(
        w, samples[minima[r]], spacing, 1.0,
        [&](const Vec3& p) { return detail::geodesic_distance(m, z, p, &warm); });
    refined.push_back({x, d});
  }
  std::sort(refined.begin(), refined.end(), [](const auto& a, const auto& b) { return a.dist < b.dist; });
  const double best = refined.front().dist;
  for (const auto& h : refined) {
    if (h.dist > best + std::max(tol, 1e-9) * std::max(1.0, best)) continue;
    bool dup = false;
    for (const auto& p : out.points)
      if ((p.x - h.x).norm() < std::max(tol, 1e-4) * std::max(1.0, w.diameter())) dup = true;
    if (!dup) out.points.push_back(h);
  }
  return out;
}

struct StableReport {
  bool ok = true;
  std::vector<Vec3> witnesses;
};

/// Checks that every sampled z in U has a nearest boundary point inside the observed patch.
inline StableReport stable_part_check(const Scene& scene, int n_samples = 9) {
  StableReport rep;
  if (scene.observed.is_full()) return rep;
  for (const auto& z : scene.region.sample(n_samples)) {
    auto near = nearest_boundary_points(scene, z);
    bool seen = std::any_of(near.points.begin(), near.points.end(),
                            [&](const auto& h) { return scene.observed_at(h.x); });
    if (!seen) {
      rep.ok = false;
      rep.witnesses.push_back(z);
    }
  }
  return rep;
}

// --- speed threshold ---------------------------------------------------------------------------

struct ThresholdReport {
  /// J_z = (jz_lo, 1): source speeds that exceed the slowest phase speed at z.
  double jz_lo = 0.0;
  double jz_hi = 1.0;
  double beta_threshold = 0.0;
  /// Boundary point attaining sup |x - z| / dist_g(z, x).
  Vec3 argmax = Vec3::Zero();
  double ratio_max = 0.0;
};

/// max(inf J_z, sup over boundary of |x - z| / dist_g(z, x)).
inline ThresholdReport beta_threshold(const Scene& scene, const Vec3& z, int n_boundary_samples = 400,
                                      int grid_n = 40) {
  const auto& m = scene.metric;
  Eigen::SelfAdjointEigenSolver<Mat3> es(m.g(z));
  double lam = es.eigenvalues()[0];
  if (!(lam > 1.0)) throw Error("condition (ii) fails at z = " + format_vec(z));
  ThresholdReport rep;
  rep.jz_lo = 1.0 / std::sqrt(lam);

  const auto& w = scene.domain;
  std::optional<DistanceField> field;
  auto screen = [&](const Vec3& x) {
    if (m.is_homogeneous()) return m.norm_vector(z, x - z);
    if (!field) field = distance_field(scene, z, grid_n);
    return field->at(x);
  };
  auto samples = w.sample_boundary(n_boundary_samples);
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < samples.size(); ++i)
    ranked.emplace_back((samples[i] - z).norm() / screen(samples[i]), i);
  std::sort(ranked.begin(), ranked.end(), std::greater<>());

  double spacing = std::sqrt(4.0 * kPi / n_boundary_samples) * 0.5 * w.diameter();
  auto ratio = [&](const Vec3& x, std::optional<Vec3>* warm) {
    double d;
    try {
      d = detail::geodesic_distance(m, z, x, warm);
    } catch (const ShootingError&) {
      d = screen(x);
    }
    return (x - z).norm() / d;
  };
  std::vector<Vec3> seeds;
  for (const auto& [r, i] : ranked) {
    if (seeds.size() >= 3) break;
    bool near = std::any_of(seeds.begin(), seeds.end(),
                            [&](const Vec3& s) { return (s - samples[i]).norm() < 3.0 * spacing; });
    if (!near) seeds.push_back(samples[i]);
  }
  rep.ratio_max = -kInf;
  for (const auto& s : seeds) {
    std::optional<Vec3> warm;
    auto [x, r] = detail::boundary_search(w, s, spacing, -1.0,
                                          [&](const Vec3& p) { return ratio(p, &warm); });
    if (r > rep.ratio_max) {
      rep.ratio_max = r;
      rep.argmax = x;
    }
  }
  rep.beta_threshold = std::max(rep.jz_lo, rep.ratio_max);
  if (!(rep.beta_threshold < 1.0))
    throw Error("beta threshold reached 1 at z = " + format_vec(z) + "; metric is not admissible");
  return rep;
}

}  // namespace cherenkov
