#pragma once

// Riemannian metric fields on R^3: evaluation, inverse, derivatives, Christoffel symbols,
// phase speeds, admissibility checks and the permittivity-to-metric map.

#include "cherenkov/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace cherenkov {

enum class MetricKind { constant, conformal_bump, diagonal_analytic, grid_sampled, from_permittivity };

inline const char* to_string(MetricKind k) {
  switch (k) {
    case MetricKind::constant: return "constant";
    case MetricKind::conformal_bump: return "conformal_bump";
    case MetricKind::diagonal_analytic: return "diagonal_analytic";
    case MetricKind::grid_sampled: return "grid_sampled";
    case MetricKind::from_permittivity: return "from_permittivity";
  }
  return "?";
}

class MetricError : public Error {
 public:
  using Error::Error;
};

namespace metric_kinds {

/// g(x) = G everywhere.
struct Constant {
  Mat3 g = Mat3::Identity();
};

/// g(x) = n(x)^2 I with n(x) = 1 + amplitude * exp(-|x - center|^2 / width^2).
struct ConformalBump {
  double amplitude = 1.0;
  double width = 1.0;
  Vec3 center = Vec3::Zero();

  double index(const Vec3& x) const {
    return 1.0 + amplitude * std::exp(-(x - center).squaredNorm() / (width * width));
  }
};

/// g_ii(x) = base_i + amplitude_i * exp(-|x - center|^2 / width^2), off-diagonals zero.
struct DiagonalAnalytic {
  Vec3 base = Vec3::Ones();
  Vec3 amplitude = Vec3::Zero();
  Vec3 center = Vec3::Zero();
  double width = 1.0;
};

/// Six independent components sampled on a regular grid, tricubic (Catmull-Rom) interpolation.
struct GridSampled {
  std::array<std::int64_t, 3> dims{0, 0, 0};
  Vec3 origin = Vec3::Zero();
  Vec3 spacing = Vec3::Ones();
  /// Layout [i][j][k][c] with c over (g11, g12, g13, g22, g23, g33), k fastest.
  std::vector<double> data;

  Box extent() const {
    Vec3 hi = origin;
    for (int a = 0; a < 3; ++a) hi[a] += spacing[a] * static_cast<double>(dims[a] - 1);
    return {origin, hi};
  }
};

/// g^{jk} = eps^{jk} / (alpha^2 det eps); eps and alpha supplied as callables.
struct FromPermittivity {
  std::function<Mat3(const Vec3&)> eps;
  std::function<double(const Vec3&)> alpha;
};

}  // namespace metric_kinds

/// A smooth SPD metric field g(x) on R^3, Euclidean outside an optional vacuum box.
///
/// Immutable after construction and safe to share across threads.
class MetricField {
 public:
  using Variant = std::variant<metric_kinds::Constant, metric_kinds::ConformalBump,
                               metric_kinds::DiagonalAnalytic, metric_kinds::GridSampled,
                               metric_kinds::FromPermittivity>;

  MetricField() : MetricField(metric_kinds::Constant{}) {}

  explicit MetricField(Variant kind, std::optional<Box> vacuum_outside = std::nullopt,
                       std::optional<double> h_deriv = std::nullopt)
      : kind_(std::make_shared<const Variant>(std::move(kind))), box_(vacuum_outside) {
    if (const auto* grid = std::get_if<metric_kinds::GridSampled>(kind_.get())) {
      validate_grid(*grid);
      if (!box_) box_ = grid->extent();
    }
    if (h_deriv) {
      h_deriv_ = *h_deriv;
    } else {
      h_deriv_ = box_ ? 1e-4 * box_->diameter() : 1e-4;
    }
    if (!(h_deriv_ > 0.0)) throw MetricError("h_deriv must be positive");
  }

  // --- factories ---------------------------------------------------------------------------

  static MetricField constant(const Mat3& g) {
    check_symmetric_spd(g, "constant metric");
    return MetricField(metric_kinds::Constant{g});
  }
  static MetricField vacuum() { return constant(Mat3::Identity()); }
  /// Homogeneous isotropic medium with phase speed k: g^{jk} = k^2 delta^{jk}.
  static MetricField isotropic_speed(double k) {
    if (!(k > 0.0)) throw MetricError("phase speed must be positive");
    return constant(Mat3::Identity() / (k * k));
  }

  /// Conformal bump; the vacuum box is where the bump falls below 1e-17.
  static MetricField conformal_bump(double amplitude = 1.0, double width = 1.0,
                                    const Vec3& center = Vec3::Zero()) {
    if (!(width > 0.0) || amplitude < 0.0) throw MetricError("invalid conformal bump parameters");
    return MetricField(metric_kinds::ConformalBump{amplitude, width, center},
                       gaussian_support(amplitude, width, center));
  }

  static MetricField diagonal_analytic(const Vec3& base, const Vec3& amplitude,
                                       const Vec3& center = Vec3::Zero(), double width = 1.0) {
    if (!(width > 0.0)) throw MetricError("invalid diagonal metric width");
    std::optional<Box> box;
    if ((base.array() == 1.0).all()) {
      box = gaussian_support(amplitude.cwiseAbs().maxCoeff(), width, center);
    }
    return MetricField(metric_kinds::DiagonalAnalytic{base, amplitude, center, width}, box);
  }

  /// Samples `g` on a grid (used for tests and for converting analytic fields to grid kind).
  static MetricField sample_to_grid(const MetricField& source, const Box& box,
                                    std::array<std::int64_t, 3> dims,
                                    std::optional<double> h_deriv = std::nullopt) {
    metric_kinds::GridSampled grid;
    grid.dims = dims;
    grid.origin = box.lo;
    for (int a = 0; a < 3; ++a)
      grid.spacing[a] = (box.hi[a] - box.lo[a]) / static_cast<double>(dims[a] - 1);
    grid.data.resize(static_cast<std::size_t>(dims[0] * dims[1] * dims[2] * 6));
    std::size_t idx = 0;
    for (std::int64_t i = 0; i < dims[0]; ++i)
      for (std::int64_t j = 0; j < dims[1]; ++j)
        for (std::int64_t k = 0; k < dims[2]; ++k) {
          Vec3 x = grid.origin + Vec3(grid.spacing[0] * i, grid.spacing[1] * j,
                                      grid.spacing[2] * k);
          Mat3 g = source.g(x);
          grid.data[idx++] = g(0, 0);
          grid.data[idx++] = g(0, 1);
          grid.data[idx++] = g(0, 2);
          grid.data[idx++] = g(1, 1);
          grid.data[idx++] = g(1, 2);
          grid.data[idx++] = g(2, 2);
        }
    return MetricField(std::move(grid), std::nullopt, h_deriv);
  }

  // --- accessors ---------------------------------------------------------------------------

  MetricKind kind() const { return static_cast<MetricKind>(kind_->index()); }
  const Variant& variant() const { return *kind_; }
  const std::optional<Box>& vacuum_box() const { return box_; }
  double h_deriv() const { return h_deriv_; }

  /// True if g is the same matrix at every point (no derivatives anywhere).
  bool is_homogeneous() const {
    return kind() == MetricKind::constant && !box_;
  }

  /// Radius of a ball around the origin outside of which g is the Euclidean metric, or
  /// +infinity when the field never reaches vacuum.
  double support_radius() const {
    if (!box_) return kInf;
    double r = 0.0;
    for (int c = 0; c < 8; ++c) {
      Vec3 corner((c & 1) ? box_->hi.x() : box_->lo.x(), (c & 2) ? box_->hi.y() : box_->lo.y(),
                  (c & 4) ? box_->hi.z() : box_->lo.z());
      r = std::max(r, corner.norm());
    }
    return r;
  }

  // --- evaluation --------------------------------------------------------------------------

  Mat3 g(const Vec3& x) const {
    if (outside(x)) return Mat3::Identity();
    return std::visit([&](const auto& k) { return eval_g(k, x); }, *kind_);
  }

  /// (g, g^{-1}) at x. Throws MetricError when g is not positive definite there.
  std::pair<Mat3, Mat3> eval_pair(const Vec3& x) const {
    if (!x.allFinite()) throw PreconditionError("eval_pair: non-finite point");
    Mat3 gx = g(x);
    Eigen::LLT<Mat3> llt(gx);
    if (llt.info() != Eigen::Success) {
      throw MetricError(std::string("metric is not positive definite at x = ") + format_vec(x) +
                        " (" + to_string(kind()) + ")");
    }
    Mat3 ginv = llt.solve(Mat3::Identity());
    ginv = 0.5 * (ginv + ginv.transpose());
    return {gx, ginv};
  }

  Mat3 g_inverse(const Vec3& x) const { return eval_pair(x).second; }

  /// Partial derivatives dg/dx^k.
  MatGrad dg(const Vec3& x) const {
    if (outside(x)) return zero_grad();
    return std::visit([&](const auto& k) { return eval_dg(k, x); }, *kind_);
  }

  struct Sample {
    Mat3 g;
    Mat3 g_inv;
    MatGrad dg;
  };

  Sample sample(const Vec3& x) const {
    auto [gx, ginv] = eval_pair(x);
    return {gx, ginv, dg(x)};
  }

  /// Gamma^l_{jk}, stored as gamma[l](j, k).
  std::array<Mat3, 3> christoffel(const Vec3& x) const {
    auto [gx, ginv] = eval_pair(x);
    MatGrad d = dg(x);
    // first-kind symbols c[m](j,k) = 1/2 (d_j g_mk + d_k g_mj - d_m g_jk)
    std::array<Mat3, 3> first;
    for (int m = 0; m < 3; ++m)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k)
          first[m](j, k) = 0.5 * (d[j](m, k) + d[k](m, j) - d[m](j, k));
    std::array<Mat3, 3> gamma;
    for (int l = 0; l < 3; ++l) {
      gamma[l].setZero();
      for (int m = 0; m < 3; ++m) gamma[l] += ginv(l, m) * first[m];
    }
    return gamma;
  }

  /// |v|_g for a tangent vector.
  double norm_vector(const Vec3& x, const Vec3& v) const {
    return std::sqrt(v.dot(g(x) * v));
  }

  /// |xi|_{g*} for a covector.
  double norm_covector(const Vec3& x, const Vec3& xi) const {
    return std::sqrt(xi.dot(g_inverse(x) * xi));
  }

  /// Phase speed 1/|theta|_g for a Euclidean unit direction.
  double phase_speed(const Vec3& x, const Vec3& theta) const {
    if (std::abs(theta.norm() - 1.0) > 1e-12)
      throw PreconditionError("phase_speed: direction must be a Euclidean unit vector");
    eval_pair(x);
    return 1.0 / norm_vector(x, theta);
  }

 private:
  static void check_symmetric_spd(const Mat3& g, const char* what) {
    if ((g - g.transpose()).cwiseAbs().maxCoeff() > 0.0)
      throw MetricError(std::string(what) + ": matrix is not symmetric");
    Eigen::LLT<Mat3> llt(g);
    if (llt.info() != Eigen::Success) throw MetricError(std::string(what) + ": matrix is not SPD");
  }

  static Box gaussian_support(double amplitude, double width, const Vec3& center) {
    double r = amplitude > 0.0 ? width * std::sqrt(std::max(0.0, std::log(amplitude * 1e17)))
                               : 0.0;
    r = std::max(r, width);
    Vec3 half = Vec3::Constant(r);
    return {center - half, center + half};
  }

  static void validate_grid(const metric_kinds::GridSampled& grid) {
    for (auto d : grid.dims)
      if (d < 4) throw MetricError("grid metric needs at least 4 nodes per axis");
    if (!(grid.spacing.array() > 0.0).all()) throw MetricError("grid spacing must be positive");
    auto expected = static_cast<std::size_t>(grid.dims[0] * grid.dims[1] * grid.dims[2] * 6);
    if (grid.data.size() != expected) throw MetricError("grid metric data has the wrong size");
  }

  static MatGrad zero_grad() { return {Mat3::Zero(), Mat3::Zero(), Mat3::Zero()}; }

  bool outside(const Vec3& x) const { return box_ && !box_->contains(x); }

  // constant
  static Mat3 eval_g(const metric_kinds::Constant& k, const Vec3&) { return k.g; }
  static MatGrad eval_dg(const metric_kinds::Constant&, const Vec3&) { return zero_grad(); }

  // conformal bump
  static Mat3 eval_g(const metric_kinds::ConformalBump& k, const Vec3& x) {
    double n = k.index(x);
    return n * n * Mat3::Identity();
  }
  static MatGrad eval_dg(const metric_kinds::ConformalBump& k, const Vec3& x) {
    Vec3 d = x - k.center;
    double w2 = k.width * k.width;
    double e = k.amplitude * std::exp(-d.squaredNorm() / w2);
    double n = 1.0 + e;
    MatGrad out;
    for (int c = 0; c < 3; ++c) out[c] = (2.0 * n * e * (-2.0 * d[c] / w2)) * Mat3::Identity();
    return out;
  }

  // diagonal analytic
  static Mat3 eval_g(const metric_kinds::DiagonalAnalytic& k, const Vec3& x) {
    double e = std::exp(-(x - k.center).squaredNorm() / (k.width * k.width));
    Mat3 g = Mat3::Zero();
    for (int i = 0; i < 3; ++i) g(i, i) = k.base[i] + k.amplitude[i] * e;
    return g;
  }
  static MatGrad eval_dg(const metric_kinds::DiagonalAnalytic& k, const Vec3& x) {
    Vec3 d = x - k.center;
    double w2 = k.width * k.width;
    double e = std::exp(-d.squaredNorm() / w2);
    MatGrad out;
    for (int c = 0; c < 3; ++c) {
      out[c].setZero();
      for (int i = 0; i < 3; ++i) out[c](i, i) = k.amplitude[i] * e * (-2.0 * d[c] / w2);
    }
    return out;
  }

  // grid sampled
  static double catmull_rom(double p0, double p1, double p2, double p3, double t) {
    return p1 + 0.5 * t * (p2 - p0 +
                           t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)));
  }

  static Mat3 eval_g(const metric_kinds::GridSampled& k, const Vec3& x) {
    std::array<std::int64_t, 3> base{};
    std::array<double, 3> frac{};
    for (int a = 0; a < 3; ++a) {
      double u = (x[a] - k.origin[a]) / k.spacing[a];
      auto i = static_cast<std::int64_t>(std::floor(u));
      i = std::clamp<std::int64_t>(i, 0, k.dims[a] - 2);
      base[a] = i;
      frac[a] = u - static_cast<double>(i);
    }
    auto node = [&](std::int64_t i, std::int64_t j, std::int64_t l, int c) {
      i = std::clamp<std::int64_t>(i, 0, k.dims[0] - 1);
      j = std::clamp<std::int64_t>(j, 0, k.dims[1] - 1);
      l = std::clamp<std::int64_t>(l, 0, k.dims[2] - 1);
      return k.data[static_cast<std::size_t>(((i * k.dims[1] + j) * k.dims[2] + l) * 6 + c)];
    };
    std::array<double, 6> comp{};
    for (int c = 0; c < 6; ++c) {
      std::array<double, 4> along_i{};
      for (int di = 0; di < 4; ++di) {
        std::array<double, 4> along_j{};
        for (int dj = 0; dj < 4; ++dj) {
          std::array<double, 4> p{};
          for (int dl = 0; dl < 4; ++dl)
            p[dl] = node(base[0] + di - 1, base[1] + dj - 1, base[2] + dl - 1, c);
          along_j[dj] = catmull_rom(p[0], p[1], p[2], p[3], frac[2]);
        }
        along_i[di] = catmull_rom(along_j[0], along_j[1], along_j[2], along_j[3], frac[1]);
      }
      comp[c] = catmull_rom(along_i[0], along_i[1], along_i[2], along_i[3], frac[0]);
    }
    Mat3 g;
    g << comp[0], comp[1], comp[2], comp[1], comp[3], comp[4], comp[2], comp[4], comp[5];
    return g;
  }

  // permittivity map
  static Mat3 eval_g(const metric_kinds::FromPermittivity& k, const Vec3& x) {
    Mat3 eps = k.eps(x);
    double alpha = k.alpha(x);
    double det = eps.determinant();
    if (!(det > 0.0)) throw MetricError("permittivity determinant must be positive at " + format_vec(x));
    if (!(alpha > 0.0)) throw MetricError("impedance factor alpha must be positive at " + format_vec(x));
    Mat3 ginv = eps / (alpha * alpha * det);
    Mat3 g = ginv.inverse();
    return 0.5 * (g + g.transpose());
  }

  template <class Kind>
  MatGrad eval_dg(const Kind& k, const Vec3& x) const {
    MatGrad out;
    for (int c = 0; c < 3; ++c) {
      Vec3 e = Vec3::Zero();
      e[c] = h_deriv_;
      out[c] = (eval_g(k, x + e) - eval_g(k, x - e)) / (2.0 * h_deriv_);
    }
    return out;
  }

  std::shared_ptr<const Variant> kind_;
  std::optional<Box> box_;
  double h_deriv_ = 1e-4;
};

/// Builds the metric g^{jk} = eps^{jk} / (alpha^2 det eps) from a permittivity tensor field and a
/// scalar impedance factor.
inline MetricField metric_from_permittivity(std::function<Mat3(const Vec3&)> eps,
                                            std::function<double(const Vec3&)> alpha,
                                            std::optional<Box> vacuum_outside = std::nullopt,
                                            std::optional<double> h_deriv = std::nullopt) {
  if (!eps || !alpha) throw PreconditionError("metric_from_permittivity: empty field");
  return MetricField(metric_kinds::FromPermittivity{std::move(eps), std::move(alpha)},
                     vacuum_outside, h_deriv);
}

/// Constant-coefficient convenience overload.
inline MetricField metric_from_permittivity(const Mat3& eps, double alpha) {
  if (!(eps.determinant() > 0.0)) throw MetricError("permittivity determinant must be positive");
  if (!(alpha > 0.0)) throw MetricError("impedance factor alpha must be positive");
  Eigen::SelfAdjointEigenSolver<Mat3> es(eps);
  if (!(es.eigenvalues().array() > 0.0).all()) throw MetricError("permittivity must be SPD");
  return metric_from_permittivity([eps](const Vec3&) { return eps; },
                                  [alpha](const Vec3&) { return alpha; });
}

// --- admissibility --------------------------------------------------------------------------

struct AdmissibilityReport {
  bool cond_i_ok = true;   // |theta|_g >= 1 at every global sample
  bool cond_ii_ok = true;  // |theta|_g > 1 at every sample of U
  /// min over U samples of |theta|_g - 1.
  double min_speed_margin = kInf;
  /// min over global samples of |theta|_g - 1.
  double global_margin = kInf;
  Vec3 witness_x = Vec3::Zero();
  Vec3 witness_theta = Vec3::UnitX();
};

namespace detail {

/// min over sampled unit directions (plus the exact minimizer) of |theta|_g at x.
inline std::pair<double, Vec3> min_direction_norm(const MetricField& m, const Vec3& x,
                                                  const std::vector<Vec3>& dirs) {
  Mat3 g = m.g(x);
  Eigen::SelfAdjointEigenSolver<Mat3> es(g);
  Vec3 best_dir = es.eigenvectors().col(0);
  double best = std::sqrt(std::max(0.0, best_dir.dot(g * best_dir)));
  for (const auto& d : dirs) {
    double v = std::sqrt(d.dot(g * d));
    if (v < best) {
      best = v;
      best_dir = d;
    }
  }
  return {best, best_dir};
}

}  // namespace detail

/// Checks |theta|_g >= 1 on global samples (vacuum box interior and faces, plus `global_pts`)
/// and |theta|_g > 1 strictly on `region_pts`.
inline AdmissibilityReport check_admissible(const MetricField& m,
                                            const std::vector<Vec3>& region_pts,
                                            const std::vector<Vec3>& global_pts, int n_dirs) {
  if (region_pts.empty()) throw PreconditionError("check_admissible: empty region sample");
  auto dirs = fibonacci_sphere(std::max(n_dirs, 1));
  AdmissibilityReport rep;
  double worst_global = kInf;

  auto visit_global = [&](const Vec3& x) {
    auto [v, d] = detail::min_direction_norm(m, x, dirs);
    if (v - 1.0 < worst_global) {
      worst_global = v - 1.0;
      if (v < 1.0 - 1e-14) {
        rep.cond_i_ok = false;
        rep.witness_x = x;
        rep.witness_theta = d;
      }
    }
  };

  std::vector<Vec3> pts = global_pts;
  if (const auto& box = m.vacuum_box()) {
    const int n = 9;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
          Vec3 t(i / double(n - 1), j / double(n - 1), k / double(n - 1));
          pts.push_back(box->lo + t.cwiseProduct(box->hi - box->lo));
        }
  }
  for (const auto& x : pts) visit_global(x);
  for (const auto& x : region_pts) visit_global(x);
  rep.global_margin = worst_global;

  for (const auto& x : region_pts) {
    auto [v, d] = detail::min_direction_norm(m, x, dirs);
    if (v - 1.0 < rep.min_speed_margin) {
      rep.min_speed_margin = v - 1.0;
      if (!(v > 1.0) && rep.cond_i_ok) {
        rep.witness_x = x;
        rep.witness_theta = d;
      }
    }
    if (!(v > 1.0)) rep.cond_ii_ok = false;
  }
  return rep;
}

}  // namespace cherenkov
