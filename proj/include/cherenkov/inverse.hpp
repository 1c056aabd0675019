#pragma once

// Reconstruction of the metric on U from arrival data: matched events of shot pairs give
// boundary distances, their z-gradients give unit covectors, and a quadric fit gives g^{-1}.

#include "cherenkov/forward.hpp"
#include "cherenkov/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <map>
#include <optional>
#include <vector>

namespace cherenkov {

struct MatchTolerance {
  double x = 1e-3;
  double t = 1e-3;
  /// 1 - cos of the angle between normalized (zeta_tan, omega) vectors.
  double zeta = 5e-3;

  MatchTolerance scaled(double f) const { return {x * f, t * f, zeta * f}; }
};

struct MatchedPair {
  std::size_t a;
  std::size_t b;
  /// max(|x_a - x_b|, |t_a - t_b|).
  double residual;
};

namespace detail {

inline double covector_cosine_distance(const ArrivalEvent& a, const ArrivalEvent& b) {
  Eigen::Vector3d va(a.zeta_tan[0], a.zeta_tan[1], a.omega), vb(b.zeta_tan[0], b.zeta_tan[1], b.omega);
  double na = va.norm(), nb = vb.norm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - va.dot(vb) / (na * nb);
}

}  // namespace detail

/// Events of A and B that agree in position, time and tangential covector. Each event of A is
/// paired with its closest admissible partner in B. Both lists must be sorted by t.
inline std::vector<MatchedPair> common_events(const std::vector<ArrivalEvent>& events_a,
                                              const std::vector<ArrivalEvent>& events_b,
                                              const MatchTolerance& tol = {}) {
  std::vector<MatchedPair> out;
  for (std::size_t i = 0; i < events_a.size(); ++i) {
    const auto& ea = events_a[i];
    auto lo = std::lower_bound(events_b.begin(), events_b.end(), ea.t - tol.t,
                               [](const ArrivalEvent& e, double t) { return e.t < t; });
    std::optional<MatchedPair> best;
    for (auto it = lo; it != events_b.end() && it->t <= ea.t + tol.t; ++it) {
      double dx = (it->x - ea.x).norm();
      if (dx > tol.x) continue;
      if (detail::covector_cosine_distance(ea, *it) > tol.zeta) continue;
      double res = std::max(dx, std::abs(it->t - ea.t));
      if (!best || res < best->residual)
        best = MatchedPair{i, static_cast<std::size_t>(it - events_b.begin()), res};
    }
    if (best) out.push_back(*best);
  }
  return out;
}

// --- boundary distances -------------------------------------------------------------------------

struct DistanceEntry {
  Vec3 x;
  double d_hat;
  Vec3 theta_a;
  Vec3 theta_b;
  double beta;
  double residual;
};

struct DistanceEstimate {
  Vec3 z = Vec3::Zero();
  std::vector<DistanceEntry> entries;
  int pairs_examined = 0;
  int pairs_matched = 0;

  double coverage() const { return pairs_examined ? double(pairs_matched) / pairs_examined : 0.0; }
};

struct DistanceOptions {
  MatchTolerance tol;
  /// Maximum number of shot pairs examined per beta (0 = all).
  int pair_budget = 0;
  /// Optional restriction of the boundary points (the patch Q).
  std::function<bool(const Vec3&)> patch;
};

/// d_hat(x) = smallest arrival time among events common to two shots from z with equal beta.
/// Those events were emitted at (z, 0), so their arrival time is the g-length of a ray from z.
inline DistanceEstimate recover_boundary_distance(const DataSet& data, const Vec3& z,
                                                  const DistanceOptions& opt = {}) {
  DistanceEstimate est;
  est.z = z;
  std::map<double, std::vector<const ShotRecord*>> by_beta;
  for (const auto& rec : data.shots)
    if (rec.error.empty() && (rec.shot.z - z).norm() <= 1e-9) by_beta[rec.shot.beta].push_back(&rec);

  std::vector<DistanceEntry> raw;
  for (const auto& [beta, recs] : by_beta) {
    int budget = 0;
    for (std::size_t i = 0; i < recs.size(); ++i)
      for (std::size_t j = i + 1; j < recs.size(); ++j) {
        if (opt.pair_budget > 0 && budget >= opt.pair_budget) break;
        if ((recs[i]->shot.theta - recs[j]->shot.theta).norm() < 1e-12) continue;
        ++budget;
        ++est.pairs_examined;
        auto matches = common_events(recs[i]->events, recs[j]->events, opt.tol);
        if (!matches.empty()) ++est.pairs_matched;
        for (const auto& mp : matches) {
          const auto& ea = recs[i]->events[mp.a];
          const auto& eb = recs[j]->events[mp.b];
          Vec3 x = 0.5 * (ea.x + eb.x);
          if (opt.patch && !opt.patch(x)) continue;
          raw.push_back({x, std::min(ea.t, eb.t), recs[i]->shot.theta, recs[j]->shot.theta, beta,
                         mp.residual});
        }
      }
  }
  // Keep the earliest arrival at each boundary point.
  std::sort(raw.begin(), raw.end(), [](const auto& a, const auto& b) {
    return std::make_tuple(a.d_hat, a.x[0], a.x[1], a.x[2]) < std::make_tuple(b.d_hat, b.x[0], b.x[1], b.x[2]);
  });
  for (const auto& e : raw) {
    bool seen = std::any_of(est.entries.begin(), est.entries.end(),
                            [&](const auto& k) { return (k.x - e.x).norm() <= opt.tol.x; });
    if (!seen) est.entries.push_back(e);
  }
  return est;
}

// --- unit covectors -----------------------------------------------------------------------------

struct CovectorSample {
  Vec3 x;
  Vec3 xi;
};

struct InterpolationOptions {
  int neighbours = 16;
  /// Largest allowed angular gap (radians) between neighbours around the query point.
  double max_gap = 0.75 * kPi;
  /// Neighbours farther than this (in scene units) are ignored; 0 = no limit.
  double radius = 0.0;
};

namespace detail {

/// Local quadratic least-squares fit of d_hat around x in the boundary tangent chart.
inline std::optional<double> interpolate_distance(const DistanceEstimate& est, const Domain& w,
                                                  const Vec3& x, const InterpolationOptions& opt) {
  std::vector<std::pair<double, std::size_t>> near;
  for (std::size_t i = 0; i < est.entries.size(); ++i) {
    double r = (est.entries[i].x - x).norm();
    if (opt.radius <= 0.0 || r <= opt.radius) near.emplace_back(r, i);
  }
  const std::size_t k = static_cast<std::size_t>(opt.neighbours);
  if (near.size() < 6) return std::nullopt;
  std::partial_sort(near.begin(), near.begin() + std::min(k, near.size()), near.end());
  near.resize(std::min(k, near.size()));
  auto [ea, eb] = orthonormal_complement(w.outward_normal(x));
  std::vector<double> angles;
  double scale = near.back().first;
  if (scale <= 0.0) return est.entries[near.front().second].d_hat;
  Eigen::MatrixXd a(near.size(), 6);
  Eigen::VectorXd rhs(near.size());
  for (std::size_t r = 0; r < near.size(); ++r) {
    const auto& e = est.entries[near[r].second];
    double u = (e.x - x).dot(ea) / scale, v = (e.x - x).dot(eb) / scale;
    if (u * u + v * v > 1e-24) angles.push_back(std::atan2(v, u));
    a.row(static_cast<Eigen::Index>(r)) << 1.0, u, v, u * u, u * v, v * v;
    rhs[static_cast<Eigen::Index>(r)] = e.d_hat;
  }
  if (angles.empty()) return std::nullopt;
  std::sort(angles.begin(), angles.end());
  double gap = angles.front() + 2.0 * kPi - angles.back();
  for (std::size_t i = 1; i < angles.size(); ++i) gap = std::max(gap, angles[i] - angles[i - 1]);
  if (gap > opt.max_gap) return std::nullopt;
  Eigen::VectorXd coef = a.colPivHouseholderQr().solve(rhs);
  if (!coef.allFinite()) return std::nullopt;
  return coef[0];
}

}  // namespace detail

/// xi(x) = -grad_z d_hat(z, x) by central differences over the six axis neighbours z +/- h e_i.
/// Neighbour distances are interpolated to the center's boundary points; points without
/// surrounding neighbour coverage are dropped.
inline std::vector<CovectorSample> recover_unit_covectors(const std::vector<DistanceEstimate>& table,
                                                          const Vec3& z, double h, const Domain& w,
                                                          const InterpolationOptions& opt = {}) {
  if (!(h > 0.0)) throw PreconditionError("recover_unit_covectors: h must be positive");
  auto find = [&](const Vec3& p) -> const DistanceEstimate* {
    for (const auto& e : table)
      if ((e.z - p).norm() <= 1e-9 * std::max(1.0, p.norm())) return &e;
    return nullptr;
  };
  const DistanceEstimate* centre = find(z);
  if (!centre) throw PreconditionError("recover_unit_covectors: no distance estimate at z");
  std::array<const DistanceEstimate*, 6> nb{};
  for (int i = 0; i < 3; ++i)
    for (int s = 0; s < 2; ++s) {
      Vec3 p = z;
      p[i] += (s == 0 ? h : -h);
      nb[2 * i + s] = find(p);
      if (!nb[2 * i + s])
        throw PreconditionError("recover_unit_covectors: missing neighbour at " + format_vec(p));
    }
  std::vector<CovectorSample> out;
  for (const auto& e : centre->entries) {
    Vec3 xi;
    bool ok = true;
    for (int i = 0; i < 3 && ok; ++i) {
      auto dp = detail::interpolate_distance(*nb[2 * i], w, e.x, opt);
      auto dm = detail::interpolate_distance(*nb[2 * i + 1], w, e.x, opt);
      if (!dp || !dm) {
        ok = false;
        break;
      }
      xi[i] = -(*dp - *dm) / (2.0 * h);
    }
    if (ok) out.push_back({e.x, xi});
  }
  return out;
}

// --- dual metric fit ----------------------------------------------------------------------------

using Vec6 = Eigen::Matrix<double, 6, 1>;

class UnderdeterminedError : public Error {
 public:
  UnderdeterminedError(const std::string& what, std::vector<Vec6> null_space)
      : Error(what), null_space_(std::move(null_space)) {}
  /// Basis of symmetric matrices (h11, h22, h33, h12, h13, h23) left undetermined.
  const std::vector<Vec6>& null_space() const { return null_space_; }

 private:
  std::vector<Vec6> null_space_;
};

struct FitOptions {
  double rank_tol = 1e-10;
  double spd_floor = 1e-8;  // relative to trace
  /// Minimum solid angle (sr) of the covector direction set.
  double cone_min = 0.0;
};

struct DualMetricFit {
  Mat3 h = Mat3::Identity();  // estimate of g^{-1}
  Mat3 g = Mat3::Identity();
  double condition = 1.0;
  double residual_rms = 0.0;
  bool floor_active = false;
  double cone_solid_angle = 0.0;
  int covector_count = 0;
  /// max |G(e_j, e_k) - (|e_j + e_k|^2 - |e_j|^2 - |e_k|^2) / 2| over three spread e_j = G xi_j.
  double polarization_error = 0.0;
};

namespace detail {

/// Solid angle covered by directions within 15 degrees of some +/- covector direction.
inline double cone_solid_angle(const std::vector<Vec3>& xis) {
  static const std::vector<Vec3> probe = fibonacci_sphere(4000);
  const double c = std::cos(15.0 * kPi / 180.0);
  std::vector<Vec3> dirs;
  for (const auto& x : xis) dirs.push_back(x.normalized());
  int hit = 0;
  for (const auto& p : probe)
    for (const auto& d : dirs)
      if (std::abs(p.dot(d)) >= c) {
        ++hit;
        break;
      }
  return 4.0 * kPi * hit / double(probe.size());
}

inline double polarization_check(const Mat3& g, const std::vector<Vec3>& xis) {
  std::vector<Vec3> e;
  const std::size_t n = std::min<std::size_t>(xis.size(), 60);
  for (std::size_t i = 0; i < n; ++i) e.push_back(g * xis[i]);
  // Three best-spread directions: maximal |det| of the normalized triple.
  std::array<std::size_t, 3> best{0, std::min<std::size_t>(1, n - 1), std::min<std::size_t>(2, n - 1)};
  double best_det = -1.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      for (std::size_t c = b + 1; c < n; ++c) {
        Mat3 m;
        m << e[a].normalized(), e[b].normalized(), e[c].normalized();
        double d = std::abs(m.determinant());
        if (d > best_det) {
          best_det = d;
          best = {a, b, c};
        }
      }
  double err = 0.0;
  auto sq = [&](const Vec3& v) { return v.dot(g * v); };
  for (std::size_t j : best)
    for (std::size_t k : best) {
      double direct = e[j].dot(g * e[k]);
      double polar = 0.5 * (sq(e[j] + e[k]) - sq(e[j]) - sq(e[k]));
      err = std::max(err, std::abs(direct - polar));
    }
  return err;
}

}  // namespace detail

/// Least-squares fit of the symmetric H with xi^T H xi = 1 over the given covectors, projected
/// to SPD by an eigenvalue floor.
inline DualMetricFit fit_dual_metric(const std::vector<Vec3>& xis, const FitOptions& opt = {}) {
  const Eigen::Index n = static_cast<Eigen::Index>(xis.size());
  auto basis_null = [](const Eigen::MatrixXd& v, Eigen::Index from) {
    std::vector<Vec6> ns;
    for (Eigen::Index c = from; c < 6; ++c) ns.push_back(v.col(c));
    return ns;
  };
  Eigen::MatrixXd a(std::max<Eigen::Index>(n, 1), 6);
  a.setZero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3& x = xis[static_cast<std::size_t>(i)];
    a.row(i) << x[0] * x[0], x[1] * x[1], x[2] * x[2], 2 * x[0] * x[1], 2 * x[0] * x[2], 2 * x[1] * x[2];
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (n < 6) {
    throw UnderdeterminedError("underdetermined: " + std::to_string(n) + " covectors for 6 unknowns",
                               basis_null(svd.matrixV(), n));
  }
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > opt.rank_tol * sv[0]) ++rank;
  if (rank < 6) throw UnderdeterminedError("underdetermined: rank-deficient normal equations", basis_null(svd.matrixV(), rank));

  DualMetricFit fit;
  fit.covector_count = static_cast<int>(n);
  fit.cone_solid_angle = detail::cone_solid_angle(xis);
  if (fit.cone_solid_angle < opt.cone_min)
    throw UnderdeterminedError("underdetermined: covector cone too narrow", {});
  Eigen::VectorXd rhs = Eigen::VectorXd::Ones(n);
  Vec6 c = svd.solve(rhs);
  fit.condition = sv[0] / sv[5];
  fit.residual_rms = std::sqrt((a * c - rhs).squaredNorm() / double(n));
  Mat3 h;
  h << c[0], c[3], c[4], c[3], c[1], c[5], c[4], c[5], c[2];
  Eigen::SelfAdjointEigenSolver<Mat3> es(h);
  Vec3 lam = es.eigenvalues();
  const double floor = opt.spd_floor * std::max(std::abs(h.trace()), 1e-300);
  for (int i = 0; i < 3; ++i)
    if (lam[i] < floor) {
      lam[i] = floor;
      fit.floor_active = true;
    }
  if (fit.floor_active) h = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  fit.h = h;
  fit.g = es.eigenvectors() * lam.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  fit.g = 0.5 * (fit.g + fit.g.transpose()).eval();
  fit.polarization_error = detail::polarization_check(fit.g, xis);
  return fit;
}

// --- end-to-end ---------------------------------------------------------------------------------

struct ReconstructionConfig {
  /// Finite-difference step in z; 0 selects 0.02 * diam(W).
  double h = 0.0;
  DistanceOptions distance;
  InterpolationOptions interpolation;
  FitOptions fit;
};

struct SiteEstimate {
  Vec3 z = Vec3::Zero();
  std::optional<DualMetricFit> fit;
  int boundary_points = 0;
  std::string failure;  // empty on success
  std::optional<double> relative_error;  // Frobenius, against the supplied truth
};

struct MetricEstimate {
  std::vector<SiteEstimate> sites;
  double h = 0.0;

  std::optional<double> median_error() const {
    std::vector<double> e;
    for (const auto& s : sites)
      if (s.relative_error) e.push_back(*s.relative_error);
    if (e.empty()) return std::nullopt;
    std::sort(e.begin(), e.end());
    std::size_t m = e.size() / 2;
    return e.size() % 2 ? e[m] : 0.5 * (e[m - 1] + e[m]);
  }
};

/// Finite-difference stencil points needed by reconstruct_region for the given sites.
inline std::vector<Vec3> stencil_points(const std::vector<Vec3>& sites, double h) {
  std::vector<Vec3> pts;
  for (const auto& z : sites) {
    pts.push_back(z);
    for (int i = 0; i < 3; ++i)
      for (double s : {1.0, -1.0}) {
        Vec3 p = z;
        p[i] += s * h;
        pts.push_back(p);
      }
  }
  return pts;
}

/// Runs the full pipeline at each site. The data are used only through event positions, times
/// and tangential covectors. `truth`, when supplied, is used only to attach error metrics.
inline MetricEstimate reconstruct_region(const DataSet& data, const Domain& w,
                                         const std::vector<Vec3>& sites,
                                         const ReconstructionConfig& cfg = {},
                                         const MetricField* truth = nullptr) {
  MetricEstimate out;
  out.h = cfg.h > 0.0 ? cfg.h : 0.02 * w.diameter();
  std::vector<DistanceEstimate> table;
  for (const auto& p : stencil_points(sites, out.h)) {
    bool have = std::any_of(table.begin(), table.end(), [&](const auto& e) { return (e.z - p).norm() <= 1e-12; });
    if (!have) table.push_back(recover_boundary_distance(data, p, cfg.distance));
  }
  for (const auto& z : sites) {
    SiteEstimate site;
    site.z = z;
    try {
      auto samples = recover_unit_covectors(table, z, out.h, w, cfg.interpolation);
      site.boundary_points = static_cast<int>(samples.size());
      std::vector<Vec3> xis;
      for (const auto& s : samples) xis.push_back(s.xi);
      site.fit = fit_dual_metric(xis, cfg.fit);
      if (truth) {
        Mat3 g = truth->g(z);
        site.relative_error = (site.fit->g - g).norm() / g.norm();
      }
    } catch (const std::exception& e) {
      site.failure = e.what();
    }
    out.sites.push_back(std::move(site));
  }
  return out;
}

}  // namespace cherenkov
