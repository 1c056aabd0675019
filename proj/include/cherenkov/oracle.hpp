#pragma once

// Brute-force reference solutions used to validate the ray tracer, fast marching and the
// forward model.

#include "cherenkov/forward.hpp"
#include "cherenkov/geometry.hpp"
#include "cherenkov/metric.hpp"

#include <algorithm>
#include <cstdint>
#include <queue>
#include <vector>

namespace cherenkov::oracle {

/// Regular n^3 lattice over a box with 26-neighbor edges weighted by the g-length of the segment
/// (metric taken at the segment midpoint).
class GridGraph {
 public:
  GridGraph(MetricField m, const Box& box, int n) : m_(std::move(m)), box_(box), n_(n) {
    if (n < 2) throw PreconditionError("GridGraph: need at least 2 nodes per axis");
    h_ = (box.hi - box.lo) / double(n - 1);
  }

  int n() const { return n_; }
  const Box& box() const { return box_; }
  std::int64_t index(int i, int j, int k) const { return (std::int64_t(i) * n_ + j) * n_ + k; }
  Vec3 node(std::int64_t idx) const {
    int k = int(idx % n_), j = int((idx / n_) % n_), i = int(idx / (std::int64_t(n_) * n_));
    return box_.lo + h_.cwiseProduct(Vec3(i, j, k));
  }
  std::int64_t nearest(const Vec3& x) const {
    Vec3 s = (x - box_.lo).cwiseQuotient(h_);
    auto c = [&](int a) { return int(std::clamp<long>(std::lround(s[a]), 0, n_ - 1)); };
    return index(c(0), c(1), c(2));
  }
  double weight(const Vec3& a, const Vec3& b) const { return m_.norm_vector(0.5 * (a + b), b - a); }

  /// Single-source shortest paths. Stops early once `target` (if >= 0) is settled.
  std::pair<std::vector<double>, std::vector<std::int64_t>> dijkstra(std::int64_t source,
                                                                     std::int64_t target = -1) const {
    const std::int64_t total = std::int64_t(n_) * n_ * n_;
    std::vector<double> dist(static_cast<std::size_t>(total), kInf);
    std::vector<std::int64_t> prev(static_cast<std::size_t>(total), -1);
    std::vector<char> done(static_cast<std::size_t>(total), 0);
    using Item = std::pair<double, std::int64_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[source] = 0.0;
    pq.emplace(0.0, source);
    while (!pq.empty()) {
      auto [d, u] = pq.top();
      pq.pop();
      if (done[u]) continue;
      done[u] = 1;
      if (u == target) break;
      int k = int(u % n_), j = int((u / n_) % n_), i = int(u / (std::int64_t(n_) * n_));
      Vec3 pu = node(u);
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj)
          for (int dk = -1; dk <= 1; ++dk) {
            if (!di && !dj && !dk) continue;
            int a = i + di, b = j + dj, c = k + dk;
            if (a < 0 || b < 0 || c < 0 || a >= n_ || b >= n_ || c >= n_) continue;
            std::int64_t v = index(a, b, c);
            if (done[v]) continue;
            double nd = d + weight(pu, node(v));
            if (nd < dist[v]) {
              dist[v] = nd;
              prev[v] = u;
              pq.emplace(nd, v);
            }
          }
    }
    return {std::move(dist), std::move(prev)};
  }

  const MetricField& metric() const { return m_; }

 private:
  MetricField m_;
  Box box_;
  int n_;
  Vec3 h_;
};

struct GraphPath {
  /// Dijkstra distance between the lattice nodes nearest to z and x.
  double raw = 0.0;
  /// g-length of the relaxed polyline joining z and x exactly.
  double length = 0.0;
  std::vector<Vec3> polyline;
};

namespace detail {

inline std::vector<Vec3> resample(const std::vector<Vec3>& pts, int segments) {
  std::vector<double> acc{0.0};
  for (std::size_t i = 1; i < pts.size(); ++i) acc.push_back(acc.back() + (pts[i] - pts[i - 1]).norm());
  std::vector<Vec3> out;
  std::size_t seg = 0;
  for (int s = 0; s <= segments; ++s) {
    double target = acc.back() * s / segments;
    while (seg + 2 < acc.size() && acc[seg + 1] < target) ++seg;
    double len = acc[seg + 1] - acc[seg];
    double f = len > 0.0 ? std::clamp((target - acc[seg]) / len, 0.0, 1.0) : 0.0;
    out.push_back(pts[seg] + f * (pts[seg + 1] - pts[seg]));
  }
  out.front() = pts.front();
  out.back() = pts.back();
  return out;
}

inline double polyline_length(const MetricField& m, const std::vector<Vec3>& p) {
  double len = 0.0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) len += m.norm_vector(0.5 * (p[i] + p[i + 1]), p[i + 1] - p[i]);
  return len;
}

/// Minimizes the discrete energy sum s_i^T G(m_i) s_i over interior vertices with fixed ends.
/// G is lagged; each sweep solves the block-tridiagonal normal equations.
inline void relax_path(const MetricField& m, std::vector<Vec3>& p, int max_sweeps = 400) {
  const int n = static_cast<int>(p.size()) - 1;  // segments
  if (n < 2) return;
  std::vector<Mat3> g(n);
  std::vector<MatGrad> dg(n);
  std::vector<Mat3> diag(n - 1), upper(n - 1), cprime(n - 1);
  std::vector<Vec3> rhs(n - 1), dprime(n - 1);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (int i = 0; i < n; ++i) {
      Vec3 mid = 0.5 * (p[i] + p[i + 1]);
      g[i] = m.g(mid);
      dg[i] = m.dg(mid);
    }
    // Unknown j (1..n-1) sits at row j-1.
    for (int j = 1; j < n; ++j) {
      Vec3 sl = p[j] - p[j - 1], sr = p[j + 1] - p[j];
      Vec3 c;
      for (int k = 0; k < 3; ++k) c[k] = sl.dot(dg[j - 1][k] * sl) + sr.dot(dg[j][k] * sr);
      diag[j - 1] = g[j - 1] + g[j];
      upper[j - 1] = -g[j];
      rhs[j - 1] = -0.25 * c;
      if (j == 1) rhs[0] += g[0] * p[0];
      if (j == n - 1) rhs[j - 1] += g[n - 1] * p[n];
    }
    // Block Thomas; the sub-diagonal block of row r is -g[r] = upper[r-1].
    cprime[0] = diag[0].ldlt().solve(upper[0]);
    dprime[0] = diag[0].ldlt().solve(rhs[0]);
    for (int r = 1; r < n - 1; ++r) {
      Mat3 denom = diag[r] - upper[r - 1] * cprime[r - 1];
      Eigen::PartialPivLU<Mat3> lu(denom);
      cprime[r] = lu.solve(upper[r]);
      dprime[r] = lu.solve(rhs[r] - upper[r - 1] * dprime[r - 1]);
    }
    std::vector<Vec3> sol(n - 1);
    sol[n - 2] = dprime[n - 2];
    for (int r = n - 3; r >= 0; --r) sol[r] = dprime[r] - cprime[r] * sol[r + 1];
    double change = 0.0;
    for (int j = 1; j < n; ++j) {
      Vec3 next = p[j] + 0.5 * (sol[j - 1] - p[j]);
      change = std::max(change, (next - p[j]).norm());
      p[j] = next;
    }
    if (change < 1e-12) break;
  }
}

}  // namespace detail

/// Box used when none is given: a cube around the segment with generous margins.
inline Box default_box(const Vec3& z, const Vec3& x) {
  double half = 0.75 * (x - z).norm() + 0.25;
  Vec3 c = 0.5 * (z + x);
  return {c.array() - half, c.array() + half};
}

inline GraphPath graph_path(const GridGraph& graph, const Vec3& z, const Vec3& x, int segments = 64) {
  if (!graph.box().contains(z) || !graph.box().contains(x))
    throw PreconditionError("graph_distance: endpoints must lie inside the grid");
  auto s = graph.nearest(z), t = graph.nearest(x);
  auto [dist, prev] = graph.dijkstra(s, t);
  GraphPath out;
  out.raw = dist[t];
  std::vector<Vec3> nodes;
  for (auto v = t; v >= 0; v = prev[v]) nodes.push_back(graph.node(v));
  std::reverse(nodes.begin(), nodes.end());
  nodes.front() = z;
  nodes.back() = x;
  if (nodes.size() == 1) nodes.push_back(x);
  out.polyline = detail::resample(nodes, segments);
  detail::relax_path(graph.metric(), out.polyline);
  out.length = detail::polyline_length(graph.metric(), out.polyline);
  return out;
}

/// dist_g(z, x) from a 26-neighbor Dijkstra search on a grid_n^3 lattice, with the lattice path
/// relaxed to a discrete geodesic to remove the lattice anisotropy.
inline double graph_distance(const MetricField& m, int grid_n, const Vec3& z, const Vec3& x,
                             std::optional<Box> box = std::nullopt) {
  GridGraph graph(m, box.value_or(default_box(z, x)), grid_n);
  return graph_path(graph, z, x).length;
}

/// Closed-form arrivals for g = I / k^2 and a spherical W: from each emission point the rays
/// leave along directions at angle arccos(k / beta) to theta, straight at speed k.
inline std::vector<ArrivalEvent> flat_arrival_oracle(double k, const Shot& shot, const Vec3& center,
                                                     double radius, int n_t, int n_azimuth,
                                                     bool both_sheets = true) {
  std::vector<ArrivalEvent> out;
  if (!(shot.beta > k)) return out;
  const Domain w = Domain::sphere(radius, center);
  const double half = std::acos(k / shot.beta);
  auto [e1, e2] = orthonormal_complement(shot.theta);
  for (double t : emission_times(shot, n_t)) {
    Vec3 base = shot.position(t);
    if ((base - center).norm() >= radius) continue;
    for (int j = 0; j < n_azimuth; ++j) {
      double phi = 2.0 * kPi * j / n_azimuth;
      Vec3 dir = std::cos(half) * shot.theta + std::sin(half) * (std::cos(phi) * e1 + std::sin(phi) * e2);
      // |base + L dir - center| = radius.
      Vec3 p = base - center;
      double b = p.dot(dir), c = p.squaredNorm() - radius * radius;
      double len = -b + std::sqrt(b * b - c);
      Vec3 x = base + len * dir;
      for (Sheet s : {Sheet::plus, Sheet::minus}) {
        if (s == Sheet::minus && !both_sheets) continue;
        ArrivalEvent ev;
        ev.x = x;
        ev.t = t + len / k;
        ev.xi = -sign_of(s) * dir;
        ev.omega = sign_of(s) * k * ev.xi.norm();
        ev.zeta_tan = tangential_part(w, x, ev.xi);
        ev.t_emit = t;
        ev.azimuth = j;
        ev.sheet = s;
        out.push_back(ev);
      }
    }
  }
  std::sort(out.begin(), out.end(), event_order);
  return out;
}

}  // namespace cherenkov::oracle
