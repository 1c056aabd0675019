#include "cherenkov/geometry.hpp"
#include "cherenkov/oracle.hpp"
#include "cherenkov/raytrace.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace cherenkov;
namespace ct = cherenkov::testing;

namespace {

Scene constant_scene(const MetricField& m, BoundaryPatch patch = BoundaryPatch::full(),
                     Region region = Region::ball(Vec3::Zero(), 1.2)) {
  return Scene{m, Domain::sphere(2.0), std::move(patch), std::move(region)};
}

}  // namespace

TEST(SceneGeometry, RegionMustBeInside) {
  Scene bad{ct::bump(), Domain::sphere(1.0), BoundaryPatch::full(), Region::ball(Vec3(0.5, 0, 0), 0.6)};
  EXPECT_THROW(bad.validate(), PreconditionError);
  EXPECT_NO_THROW(ct::bump_scene().validate());
}

TEST(SceneGeometry, EllipsoidLevelSetAndNormals) {
  Domain w(surface_kinds::Ellipsoid{Vec3(0.1, 0, 0), Vec3(2, 1, 1.5)});
  for (const auto& x : w.sample_boundary(50)) {
    EXPECT_NEAR(w.level(x), 0.0, 1e-12);
    Vec3 n = w.outward_normal(x);
    EXPECT_NEAR(n.norm(), 1.0, 1e-12);
    EXPECT_GT(w.level(x + 1e-6 * n), 0.0);
  }
  EXPECT_TRUE(w.inside(Vec3(1.9, 0, 0)));
  EXPECT_FALSE(w.inside(Vec3(0, 1.1, 0)));
}

TEST(SceneGeometry, CapMembership) {
  auto cap = BoundaryPatch::cap(Vec3::UnitX(), kPi / 3.0);
  EXPECT_TRUE(cap.contains(Vec3(2, 0, 0), Vec3::Zero()));
  EXPECT_TRUE(cap.contains(Vec3(std::cos(1.0), std::sin(1.0), 0), Vec3::Zero()));
  EXPECT_FALSE(cap.contains(Vec3(std::cos(1.1), std::sin(1.1), 0), Vec3::Zero()));
  EXPECT_FALSE(cap.contains(Vec3(-2, 0, 0), Vec3::Zero()));
}

TEST(Nearest, ConstantMetricRadialLine) {
  auto scene = constant_scene(MetricField::constant(4.0 * Mat3::Identity()));
  auto near = nearest_boundary_points(scene, Vec3(1, 0, 0));
  ASSERT_FALSE(near.degenerate);
  ASSERT_EQ(near.points.size(), 1u);
  EXPECT_LE((near.points[0].x - Vec3(2, 0, 0)).norm(), 1e-6);
  EXPECT_NEAR(near.points[0].dist, 2.0, 1e-9);
}

TEST(Nearest, VacuumCenterIsDegenerate) {
  auto scene = constant_scene(MetricField::vacuum());
  auto near = nearest_boundary_points(scene, Vec3::Zero());
  EXPECT_TRUE(near.degenerate);
  EXPECT_GE(near.points.size(), 8u);
  for (const auto& h : near.points) EXPECT_NEAR(h.dist, 2.0, 1e-12);
}

TEST(Nearest, RequiresPointInRegion) {
  auto scene = constant_scene(MetricField::vacuum());
  EXPECT_THROW(nearest_boundary_points(scene, Vec3(1.9, 0, 0)), PreconditionError);
}

TEST(Nearest, RadialBumpMatchesGraphArgmin) {
  auto scene = Scene{ct::bump(), Domain::sphere(3.0), BoundaryPatch::full(), Region::ball(Vec3::Zero(), 1.5)};
  const Vec3 z(1, 0, 0);
  auto near = nearest_boundary_points(scene, z);
  ASSERT_FALSE(near.points.empty());
  // Dense sweep: one Dijkstra field over a lattice, evaluated at lattice nodes next to the sphere.
  const int n = 64;
  Box box{Vec3::Constant(-3.1), Vec3::Constant(3.1)};
  oracle::GridGraph graph(scene.metric, box, n);
  auto [dist, prev] = graph.dijkstra(graph.nearest(z));
  double best = kInf;
  Vec3 arg;
  for (const auto& x : scene.domain.sample_boundary(4000)) {
    double d = dist[graph.nearest(x)];
    if (d < best) {
      best = d;
      arg = scene.domain.project(x);
    }
  }
  double spacing = (box.hi[0] - box.lo[0]) / (n - 1);
  EXPECT_LE((near.points[0].x - arg).norm(), 2.0 * spacing) << format_vec(near.points[0].x) << " vs " << format_vec(arg);
  EXPECT_LE((near.points[0].x - Vec3(3, 0, 0)).norm(), 1e-4);
  EXPECT_NEAR(near.points[0].dist, 2.0 + 0.5 * std::sqrt(kPi) * (std::erf(3.0) - std::erf(1.0)), 1e-8);
}

TEST(StablePart, FullBoundaryAlwaysStable) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 3; ++i) {
    Vec3 c = ct::random_in_ball(rng, Vec3::Zero(), 0.8);
    Scene s{ct::bump(), Domain::sphere(2.0), BoundaryPatch::full(), Region::ball(c, 0.3)};
    EXPECT_TRUE(stable_part_check(s).ok);
  }
}

TEST(StablePart, CapNearRegionIsStable) {
  auto scene = constant_scene(ct::diag234(), BoundaryPatch::cap(Vec3::UnitX(), kPi / 3.0), Region::ball(Vec3(1, 0, 0), 0.2));
  auto rep = stable_part_check(scene);
  EXPECT_TRUE(rep.ok);
  EXPECT_TRUE(rep.witnesses.empty());
}

TEST(StablePart, CapOppositeRegionFails) {
  auto scene = constant_scene(ct::diag234(), BoundaryPatch::cap(Vec3::UnitX(), kPi / 3.0), Region::ball(Vec3(-1, 0, 0), 0.2));
  auto rep = stable_part_check(scene);
  EXPECT_FALSE(rep.ok);
  ASSERT_FALSE(rep.witnesses.empty());
  EXPECT_LE((rep.witnesses[0] - Vec3(-1, 0, 0)).norm(), 0.2 + 1e-12);
}

TEST(Threshold, ConstantConformal) {
  auto scene = constant_scene(MetricField::constant(4.0 * Mat3::Identity()));
  auto rep = beta_threshold(scene, Vec3(0.3, -0.2, 0.1));
  EXPECT_NEAR(rep.beta_threshold, 0.5, 1e-6);
  EXPECT_NEAR(rep.jz_lo, 0.5, 1e-12);
  EXPECT_EQ(rep.jz_hi, 1.0);
}

TEST(Threshold, VacuumAtSourceIsAnError) {
  auto scene = constant_scene(MetricField::vacuum());
  try {
    beta_threshold(scene, Vec3::Zero());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("condition (ii) fails at z"), std::string::npos);
  }
}

TEST(Threshold, BumpAgreesWithDenserSampling) {
  auto scene = ct::bump_scene(2.0);
  const Vec3 z(0.3, 0.1, 0);
  auto rep = beta_threshold(scene, z);
  EXPECT_GE(rep.beta_threshold, rep.jz_lo);
  EXPECT_LT(rep.beta_threshold, 1.0);
  // Brute force: 10x the samples, screened on a finer field, top candidates with exact distances.
  auto field = distance_field(scene, z, 64);
  auto samples = scene.domain.sample_boundary(4000);
  std::vector<std::pair<double, Vec3>> ranked;
  for (const auto& x : samples) ranked.emplace_back((x - z).norm() / field.at(x), x);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  double brute = rep.jz_lo;
  for (std::size_t i = 0; i < 40; ++i) {
    const Vec3& x = ranked[i].second;
    brute = std::max(brute, (x - z).norm() / connect_geodesic(scene.metric, z, x).length);
  }
  EXPECT_NEAR(rep.beta_threshold, brute, 1e-3);
  EXPECT_GE(rep.beta_threshold, brute - 1e-9);
}

TEST(Threshold, BelowOneAcrossRegion) {
  auto scene = ct::bump_scene(2.0);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 4; ++i) {
    auto rep = beta_threshold(scene, ct::random_in_ball(rng, Vec3::Zero(), 0.8), 200, 24);
    EXPECT_LT(rep.beta_threshold, 1.0);
    EXPECT_GE(rep.beta_threshold, rep.jz_lo);
  }
}

TEST(DistanceField, VacuumAndConstant) {
  const Vec3 z(0.2, -0.3, 0.1);
  for (double scale : {1.0, 2.0}) {
    auto scene = constant_scene(MetricField::constant(scale * scale * Mat3::Identity()));
    auto field = distance_field(scene, z, 48);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
      Vec3 x = ct::random_in_ball(rng, Vec3::Zero(), 2.0);
      if ((x - z).norm() < 0.3) continue;
      double exact = scale * (x - z).norm();
      EXPECT_NEAR(field.at(x), exact, 0.01 * exact);
    }
    for (std::int64_t i = 0; i < field.dims[0]; i += 5)
      for (std::int64_t j = 0; j < field.dims[1]; j += 5)
        for (std::int64_t k = 0; k < field.dims[2]; k += 5) {
          double exact = scale * (field.node(i, j, k) - z).norm();
          EXPECT_NEAR(field.data[field.index(i, j, k)], exact, 0.01 * exact + 1e-12);
        }
  }
}

TEST(DistanceField, BumpMatchesFineGraph) {
  auto scene = ct::bump_scene(2.0);
  const Vec3 z(-0.4, 0.2, 0.1);
  auto field = distance_field(scene, z, 64);
  std::mt19937_64 rng(12);
  for (int i = 0; i < 3; ++i) {
    Vec3 x = 1.7 * ct::random_unit(rng);
    double ref = oracle::graph_distance(scene.metric, 128, z, x);
    EXPECT_NEAR(field.at(x), ref, 0.01 * ref);
  }
}

TEST(DistanceField, LowerBoundAndGeodesicConsistency) {
  auto scene = ct::bump_scene(2.0);
  const Vec3 z(0.1, 0.3, -0.2);
  auto field = distance_field(scene, z, 48);
  std::mt19937_64 rng(77);
  for (int i = 0; i < 8; ++i) {
    Vec3 x = ct::random_in_ball(rng, Vec3::Zero(), 1.9);
    if ((x - z).norm() < 0.3) continue;
    double fmm = field.at(x);
    double geo = connect_geodesic(scene.metric, z, x).length;
    EXPECT_GE(geo, (x - z).norm());
    EXPECT_GE(fmm, (x - z).norm());
    EXPECT_LE(geo, 1.01 * fmm);
  }
  for (std::int64_t i = 0; i < field.dims[0]; i += 3)
    for (std::int64_t j = 0; j < field.dims[1]; j += 3)
      for (std::int64_t k = 0; k < field.dims[2]; k += 3) {
        Vec3 x = field.node(i, j, k);
        EXPECT_GE(field.data[field.index(i, j, k)], (x - z).norm() * (1.0 - 1e-12));
      }
}
