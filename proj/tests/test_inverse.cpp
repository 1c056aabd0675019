#include "cherenkov/geometry.hpp"
#include "cherenkov/inverse.hpp"
#include "cherenkov/io.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace cherenkov;
namespace ct = cherenkov::testing;

namespace {

SimConfig pair_config(int n_az = 8, bool both = false) {
  SimConfig cfg;
  cfg.n_t = 1;
  cfg.n_azimuth = n_az;
  cfg.both_sheets = both;
  return cfg;
}

const std::vector<double> kDiagBetas{0.7803300859, 0.8535533906, 0.9267766953};

DataSet diag234_survey() {
  auto grid = ct::pair_grid(stencil_points(ct::diag234_sites(), 0.08), ct::direction_fan(Vec3::UnitX()), kDiagBetas);
  return run_survey(ct::diag234_scene(), grid, pair_config(), 1);
}

/// Covectors on the unit sphere of the dual form h, in random directions.
std::vector<Vec3> unit_covectors(const Mat3& h, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vec3> out;
  while (static_cast<int>(out.size()) < n) {
    Vec3 u = ct::random_unit(rng);
    double q = u.dot(h * u);
    if (q > 1e-3) out.push_back(u / std::sqrt(q));
  }
  return out;
}

/// Distance estimate with exact values d(z', x) at Fibonacci points of the sphere of radius 2.
DistanceEstimate synthetic_estimate(const Vec3& z, const std::function<double(const Vec3&, const Vec3&)>& dist) {
  DistanceEstimate est;
  est.z = z;
  for (const auto& u : fibonacci_sphere(600)) {
    Vec3 x = 2.0 * u;
    est.entries.push_back({x, dist(z, x), Vec3::UnitX(), Vec3::UnitY(), 0.9, 0.0});
  }
  return est;
}

}  // namespace

TEST(CommonEvents, IdenticalListsSelfMatch) {
  auto scene = ct::bump_scene();
  auto ev = simulate_shot(scene, Shot{Vec3::Zero(), Vec3::UnitX(), 0.9, -0.2, 0.2, {}}, pair_config(12)).events;
  ASSERT_FALSE(ev.empty());
  auto m = common_events(ev, ev);
  ASSERT_EQ(m.size(), ev.size());
  for (const auto& p : m) {
    EXPECT_EQ(p.residual, 0.0);
    EXPECT_EQ(ev[p.a].x, ev[p.b].x);
  }
}

TEST(CommonEvents, TimeDisjointListsGiveNothing) {
  auto scene = ct::flat_scene();
  auto ev = simulate_shot(scene, Shot{Vec3::Zero(), Vec3::UnitX(), 0.8, 0.0, 0.0, {}}, pair_config(12)).events;
  auto later = ev;
  for (auto& e : later) e.t += 10.0;
  EXPECT_TRUE(common_events(ev, later).empty());
  EXPECT_TRUE(common_events(ev, {}).empty());
  EXPECT_TRUE(common_events({}, ev).empty());
}

TEST(CommonEvents, FlatMatchesAreRaysThroughTheSharedPoint) {
  const double k = ct::kFlatK, beta = 0.8;
  auto scene = ct::flat_scene();
  const Vec3 z(0.1, 0.2, -0.1), ta = Vec3::UnitX(), tb = Vec3(0.6, 0.8, 0);
  auto ds = run_survey(scene, {{z, ta, beta, 0.0, 0.0, {}}, {z, tb, beta, 0.0, 0.0, {}}}, pair_config(16, true));
  auto m = common_events(ds.shots[0].events, ds.shots[1].events);
  ASSERT_GE(m.size(), 4u);
  // Analytic set: straight rays from (z, 0) at angle arccos(k / beta) to both world lines.
  const double c = k / beta;
  for (const auto& p : m) {
    const auto& e = ds.shots[0].events[p.a];
    Vec3 d = (e.x - z).normalized();
    EXPECT_NEAR(e.x.norm(), 2.0, 1e-9);
    EXPECT_NEAR(e.t, (e.x - z).norm() / k, 1e-6);
    EXPECT_NEAR(d.dot(ta), c, 1e-6);
    EXPECT_NEAR(d.dot(tb), c, 1e-6);
  }
}

TEST(BoundaryDistance, ConstantConformalFromCenter) {
  auto scene = ct::flat_scene();
  auto grid = ct::pair_grid({Vec3::Zero()}, fibonacci_sphere(10), {0.7, 0.8, 0.9});
  auto ds = run_survey(scene, grid, pair_config());
  auto est = recover_boundary_distance(ds, Vec3::Zero());
  ASSERT_GE(est.entries.size(), 50u);
  EXPECT_EQ(est.pairs_examined, 3 * 45);
  EXPECT_GT(est.coverage(), 0.0);
  for (const auto& e : est.entries) {
    EXPECT_NEAR(e.d_hat, 4.0, 0.02 * 4.0);
    EXPECT_GE(e.d_hat, e.x.norm() - 1e-3);
    EXPECT_LE(e.residual, 1e-3);
  }
}

TEST(BoundaryDistance, PatchRestrictsEntries) {
  auto scene = ct::flat_scene();
  auto ds = run_survey(scene, ct::pair_grid({Vec3::Zero()}, fibonacci_sphere(10), {0.8}), pair_config());
  DistanceOptions opt;
  opt.patch = [](const Vec3& x) { return x[2] > 0.0; };
  auto est = recover_boundary_distance(ds, Vec3::Zero(), opt);
  ASSERT_FALSE(est.entries.empty());
  for (const auto& e : est.entries) EXPECT_GT(e.x[2], 0.0);
  EXPECT_TRUE(recover_boundary_distance(ds, Vec3(0.3, 0, 0)).entries.empty());
}

TEST(BoundaryDistance, VacuumSceneFailsTheSpeedGuard) {
  Scene vac{MetricField::vacuum(), Domain::sphere(2.0), BoundaryPatch::full(), Region::ball(Vec3::Zero(), 0.5)};
  EXPECT_THROW(beta_threshold(vac, Vec3::Zero()), Error);
  auto rep = check_admissible(vac.metric, vac.region.sample(16), {Vec3::Zero()}, 32);
  EXPECT_FALSE(rep.cond_ii_ok);
}

TEST(BoundaryDistance, BumpBoundedByTrueDistanceAndRefines) {
  auto scene = ct::bump_scene();
  const Vec3 z = Vec3::Zero();
  auto coarse_ds = run_survey(scene, ct::pair_grid({z}, fibonacci_sphere(8), {0.85}), pair_config(4));
  auto fine_ds = run_survey(scene, ct::pair_grid({z}, fibonacci_sphere(8), {0.85}), pair_config(16, true));
  auto coarse = recover_boundary_distance(coarse_ds, z);
  auto fine = recover_boundary_distance(fine_ds, z);
  ASSERT_GE(coarse.entries.size(), 20u);
  auto field = distance_field(scene, z, 48);
  const double tol = 1e-3 * (1.0 + 0.85);
  for (const auto& e : coarse.entries) {
    EXPECT_GE(e.d_hat, 0.98 * field.at(e.x));
    // Radial bump: the distance to any point of the sphere is the same.
    double exact = 3.0 + 0.5 * std::sqrt(kPi) * std::erf(3.0);
    EXPECT_GE(e.d_hat, exact - tol);
    EXPECT_NEAR(e.d_hat, exact, 1e-5);
  }
  for (const auto& e : coarse.entries) {
    auto it = std::find_if(fine.entries.begin(), fine.entries.end(),
                           [&](const DistanceEntry& f) { return (f.x - e.x).norm() <= 1e-3; });
    ASSERT_NE(it, fine.entries.end());
    EXPECT_LE(it->d_hat, e.d_hat + 1e-12);
  }
}

TEST(UnitCovectors, VacuumDistanceGivesUnitDirections) {
  const Vec3 z(0.1, -0.2, 0.05);
  const double h = 0.05;
  auto euclid = [](const Vec3& a, const Vec3& b) { return (b - a).norm(); };
  std::vector<DistanceEstimate> table;
  for (const auto& p : stencil_points({z}, h)) table.push_back(synthetic_estimate(p, euclid));
  auto samples = recover_unit_covectors(table, z, h, Domain::sphere(2.0));
  ASSERT_GE(samples.size(), 500u);
  for (const auto& s : samples) EXPECT_LE((s.xi - (s.x - z).normalized()).norm(), 1e-3);
}

TEST(UnitCovectors, ConstantConformalFromSurvey) {
  auto scene = ct::flat_scene();
  const Vec3 z = Vec3::Zero();
  const double h = 0.08;
  auto ds = run_survey(scene, ct::pair_grid(stencil_points({z}, h), fibonacci_sphere(14), {0.7, 0.8, 0.9}), pair_config());
  std::vector<DistanceEstimate> table;
  for (const auto& p : stencil_points({z}, h)) table.push_back(recover_boundary_distance(ds, p));
  auto samples = recover_unit_covectors(table, z, h, scene.domain);
  ASSERT_GE(samples.size(), 30u);
  for (const auto& s : samples) {
    EXPECT_LE((s.xi - 2.0 * (s.x - z).normalized()).norm(), 0.02);
    EXPECT_NEAR(scene.metric.norm_covector(z, s.xi), 1.0, 0.01);
  }
}

TEST(UnitCovectors, BumpDualNormNearOne) {
  auto scene = ct::bump_scene();
  const Vec3 z = Vec3::Zero();
  const double h = 0.02 * scene.domain.diameter();
  auto ds = run_survey(scene, ct::pair_grid(stencil_points({z}, h), fibonacci_sphere(14), {0.8, 0.875, 0.95}), pair_config());
  std::vector<DistanceEstimate> table;
  for (const auto& p : stencil_points({z}, h)) table.push_back(recover_boundary_distance(ds, p));
  auto samples = recover_unit_covectors(table, z, h, scene.domain);
  ASSERT_GE(samples.size(), 30u);
  double worst = 0.0;
  for (const auto& s : samples) worst = std::max(worst, std::abs(scene.metric.norm_covector(z, s.xi) - 1.0));
  EXPECT_LE(worst, 0.03);
}

TEST(UnitCovectors, Preconditions) {
  std::vector<DistanceEstimate> table{synthetic_estimate(Vec3::Zero(), [](const Vec3& a, const Vec3& b) { return (b - a).norm(); })};
  EXPECT_THROW(recover_unit_covectors(table, Vec3::Zero(), 0.0, Domain::sphere(2.0)), PreconditionError);
  EXPECT_THROW(recover_unit_covectors(table, Vec3::Zero(), 0.1, Domain::sphere(2.0)), PreconditionError);
  EXPECT_THROW(recover_unit_covectors(table, Vec3::UnitX(), 0.1, Domain::sphere(2.0)), PreconditionError);
}

TEST(DualMetricFit, ExactEllipsoidSamples) {
  Mat3 h = Vec3(1.0, 0.25, 1.0 / 9.0).asDiagonal();
  auto fit = fit_dual_metric(unit_covectors(h, 40, 1));
  EXPECT_LE((fit.h - h).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((fit.g - h.inverse()).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_FALSE(fit.floor_active);
  EXPECT_LE(fit.residual_rms, 1e-12);
  EXPECT_EQ(fit.covector_count, 40);
}

TEST(DualMetricFit, UnitSphereGivesIdentity) {
  auto fit = fit_dual_metric(fibonacci_sphere(30));
  EXPECT_LE((fit.h - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT(fit.cone_solid_angle, 2.0 * kPi);
  EXPECT_LE(fit.cone_solid_angle, 4.0 * kPi);
}

TEST(DualMetricFit, FiveCovectorsAreUnderdetermined) {
  auto xis = unit_covectors(Mat3::Identity(), 5, 2);
  try {
    fit_dual_metric(xis);
    FAIL() << "expected an underdetermined fit";
  } catch (const UnderdeterminedError& e) {
    EXPECT_NE(std::string(e.what()).find("underdetermined"), std::string::npos);
    EXPECT_EQ(e.null_space().size(), 1u);
  }
}

TEST(DualMetricFit, PlanarCovectorsAreRankDeficient) {
  std::vector<Vec3> xis;
  for (int i = 0; i < 20; ++i) xis.emplace_back(std::cos(0.3 * i), std::sin(0.3 * i), 0.0);
  try {
    fit_dual_metric(xis);
    FAIL() << "expected an underdetermined fit";
  } catch (const UnderdeterminedError& e) {
    ASSERT_EQ(e.null_space().size(), 3u);
    // The undetermined entries are exactly those involving the third axis.
    for (const auto& v : e.null_space()) EXPECT_LE(std::abs(v[0]) + std::abs(v[1]) + std::abs(v[3]), 1e-10);
  }
}

TEST(DualMetricFit, NarrowConeRejected) {
  std::mt19937_64 rng(9);
  std::vector<Vec3> xis;
  for (int i = 0; i < 30; ++i) xis.push_back((Vec3::UnitX() + 0.05 * ct::random_unit(rng)).normalized());
  FitOptions opt;
  opt.cone_min = 1.0;
  opt.rank_tol = 1e-14;
  EXPECT_THROW(fit_dual_metric(xis, opt), UnderdeterminedError);
}

TEST(DualMetricFit, IndefiniteDataHitsTheFloor) {
  Mat3 h = Vec3(1.0, 1.0, -0.5).asDiagonal();
  auto fit = fit_dual_metric(unit_covectors(h, 40, 3));
  EXPECT_TRUE(fit.floor_active);
  Eigen::SelfAdjointEigenSolver<Mat3> es(fit.h);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  EXPECT_NEAR(es.eigenvalues().minCoeff(), 1e-8 * 1.5, 1e-15);
}

TEST(DualMetricFit, EquivariantUnderRotation) {
  Mat3 h;
  h << 0.6, 0.1, -0.05, 0.1, 0.4, 0.02, -0.05, 0.02, 0.3;
  auto xis = unit_covectors(h, 30, 4);
  std::mt19937_64 rng(21);
  for (int i = 0; i < 5; ++i) {
    Mat3 r = Eigen::AngleAxisd(1.0 + i, ct::random_unit(rng)).toRotationMatrix();
    std::vector<Vec3> rotated;
    for (const auto& x : xis) rotated.push_back(r * x);
    auto a = fit_dual_metric(xis), b = fit_dual_metric(rotated);
    EXPECT_LE((b.h - r * a.h * r.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(DualMetricFit, PolarizationIdentityHolds) {
  std::mt19937_64 rng(30);
  for (int i = 0; i < 20; ++i) {
    Mat3 a = Mat3::Random();
    Mat3 h = a * a.transpose() + 0.2 * Mat3::Identity();
    auto fit = fit_dual_metric(unit_covectors(h, 12, 100 + i));
    EXPECT_LE(fit.polarization_error, 1e-12 * std::max(1.0, fit.g.norm() * fit.g.norm()));
  }
}

TEST(Reconstruct, ConstantDiagonalOnCap) {
  auto ds = diag234_survey();
  ds.strip_oracle_fields();
  ReconstructionConfig cfg;
  cfg.h = 0.08;
  auto truth = ct::diag234();
  auto est = reconstruct_region(ds, ct::diag234_scene().domain, ct::diag234_sites(), cfg, &truth);
  ASSERT_EQ(est.sites.size(), 5u);
  for (const auto& s : est.sites) {
    EXPECT_TRUE(s.failure.empty()) << s.failure;
    ASSERT_TRUE(s.fit);
    EXPECT_LE(s.fit->polarization_error, 1e-12 * std::max(1.0, s.fit->g.squaredNorm()));
  }
  ASSERT_TRUE(est.median_error());
  EXPECT_LE(*est.median_error(), 0.05);
}

TEST(Reconstruct, OracleFieldsDoNotLeak) {
  auto ds = diag234_survey();
  auto stripped = ds;
  stripped.strip_oracle_fields();
  ReconstructionConfig cfg;
  cfg.h = 0.08;
  auto w = ct::diag234_scene().domain;
  auto a = io::reconstruction_json(reconstruct_region(ds, w, ct::diag234_sites(), cfg)).dump();
  auto b = io::reconstruction_json(reconstruct_region(stripped, w, ct::diag234_sites(), cfg)).dump();
  EXPECT_EQ(a, b);
}

TEST(Reconstruct, BumpFullBoundaryImprovesWithSampling) {
  auto scene = ct::bump_scene();
  const std::vector<Vec3> sites{Vec3::Zero(), Vec3(0.3, 0, 0)};
  auto truth = scene.metric;
  // Refinement halves the finite-difference step and densifies the shot directions. More
  // directions alone stall at the O(h^2) difference error.
  auto error_with = [&](double h, int n_dirs) {
    auto grid = ct::pair_grid(stencil_points(sites, h), fibonacci_sphere(n_dirs), {0.8, 0.875, 0.95});
    auto ds = run_survey(scene, grid, pair_config(), 1);
    ds.strip_oracle_fields();
    ReconstructionConfig cfg;
    cfg.h = h;
    auto est = reconstruct_region(ds, scene.domain, sites, cfg, &truth);
    for (const auto& s : est.sites) EXPECT_TRUE(s.failure.empty()) << s.failure;
    return est.median_error().value_or(1.0);
  };
  const double h = 0.02 * scene.domain.diameter();
  double coarse = error_with(h, 10), fine = error_with(0.5 * h, 16);
  EXPECT_LE(coarse, 0.08);
  EXPECT_LT(fine, coarse);
}
