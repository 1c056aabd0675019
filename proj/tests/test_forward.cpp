#include "cherenkov/forward.hpp"
#include "cherenkov/io.hpp"
#include "cherenkov/oracle.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

using namespace cherenkov;
namespace ct = cherenkov::testing;

namespace {

SimConfig small_config(int n_t, int n_az) {
  SimConfig cfg;
  cfg.n_t = n_t;
  cfg.n_azimuth = n_az;
  cfg.pair_samples = false;
  return cfg;
}

std::string event_bytes(const DataSet& ds) {
  std::ostringstream os;
  io::write_events(os, ds, io::EventFormat::csv, true);
  return os.str();
}

}  // namespace

TEST(SimulateShot, FlatMatchesMachConeOracle) {
  auto scene = ct::flat_scene();
  for (const Vec3& theta : {Vec3(0, 0, 1), Vec3(1, 1, 0).normalized()}) {
    Shot shot{Vec3(0.1, -0.1, 0.0), theta, ct::kFlatBeta, -0.5, 0.5, {}};
    auto res = simulate_shot(scene, shot, small_config(9, 16));
    auto expected = oracle::flat_arrival_oracle(ct::kFlatK, shot, Vec3::Zero(), 2.0, 9, 16);
    ASSERT_EQ(res.events.size(), expected.size());
    ASSERT_FALSE(expected.empty());
    for (const auto& e : expected) {
      const ArrivalEvent* got = ct::find_same_sample(res.events, e);
      ASSERT_NE(got, nullptr);
      EXPECT_LE((got->x - e.x).norm(), 1e-6);
      EXPECT_NEAR(got->t, e.t, 1e-6);
      EXPECT_LE((got->zeta_tan - e.zeta_tan).norm(), 1e-6);
    }
  }
}

TEST(SimulateShot, SubluminalFlatIsSilent) {
  auto scene = ct::flat_scene();
  Shot shot{Vec3::Zero(), Vec3::UnitZ(), 0.4, -0.5, 0.5, {}};
  auto res = simulate_shot(scene, shot, small_config(11, 16));
  EXPECT_TRUE(res.events.empty());
  EXPECT_EQ(res.diag.skipped_margin, 11);
  EXPECT_EQ(res.diag.rays, 0);
}

TEST(SimulateShot, BumpTimeEqualsRayLength) {
  auto scene = ct::bump_scene();
  Shot shot{Vec3(0.1, 0.0, 0.0), Vec3(1, 0.3, 0).normalized(), 0.9, -0.3, 0.3, {}};
  auto res = simulate_shot(scene, shot, small_config(3, 8));
  ASSERT_GE(res.events.size(), 24u);
  for (const auto& e : res.events) {
    double travel = e.t - e.t_emit;
    ASSERT_GT(travel, 0.0);
    auto back = trace_backward(scene.metric, PhasePoint{e.x, e.t, e.xi, e.omega}, e.sheet, travel);
    EXPECT_NEAR(ct::path_length(scene.metric, back), travel, 1e-6);
    EXPECT_LE((back.back().x - shot.position(e.t_emit)).norm(), 1e-6);
  }
}

TEST(SimulateShot, EventInvariants) {
  auto scene = ct::bump_scene();
  Shot shot{Vec3(0, 0.2, 0), Vec3::UnitY(), 0.85, -0.4, 0.4, {}};
  auto res = simulate_shot(scene, shot, small_config(5, 12));
  ASSERT_FALSE(res.events.empty());
  EXPECT_TRUE(std::is_sorted(res.events.begin(), res.events.end(), event_order));
  for (const auto& e : res.events) {
    EXPECT_NEAR(e.x.norm(), 3.0, 1e-9);
    EXPECT_GT(e.t, e.t_emit);
    // The stored tangential covector is exactly the pullback in the surface frame.
    Eigen::Vector2d again = tangential_part(scene.domain, e.x, e.xi);
    EXPECT_EQ(again[0], e.zeta_tan[0]);
    EXPECT_EQ(again[1], e.zeta_tan[1]);
    EXPECT_LE(cone_residual(scene.metric, PhasePoint{e.x, e.t, e.xi, e.omega}), 1e-9);
  }
}

TEST(SimulateShot, SubluminalInBumpIsSilent) {
  auto scene = ct::bump_scene();
  Shot shot{Vec3::Zero(), Vec3::UnitX(), 0.45, -1.0, 1.0, {}};
  for (double t : emission_times(shot, 21))
    ASSERT_LT(superluminal_margin(scene.metric, shot.position(t), shot.theta, shot.beta), 0.0);
  auto res = simulate_shot(scene, shot, small_config(21, 16));
  EXPECT_TRUE(res.events.empty());
  EXPECT_EQ(res.diag.rays, 0);
}

TEST(SimulateShot, RefinementOnlyAddsEvents) {
  auto scene = ct::bump_scene();
  Shot shot{Vec3(0, 0, 0.1), Vec3(1, 0, 1).normalized(), 0.9, -0.4, 0.4, {}};
  auto coarse = simulate_shot(scene, shot, small_config(3, 8)).events;
  auto fine = simulate_shot(scene, shot, small_config(5, 16)).events;
  ASSERT_FALSE(coarse.empty());
  EXPECT_GT(fine.size(), coarse.size());
  for (const auto& c : coarse) {
    auto it = std::find_if(fine.begin(), fine.end(), [&](const ArrivalEvent& f) {
      return f.azimuth == 2 * c.azimuth && f.sheet == c.sheet && std::abs(f.t_emit - c.t_emit) < 1e-12;
    });
    ASSERT_NE(it, fine.end());
    EXPECT_LE((it->x - c.x).norm(), 1e-9);
    EXPECT_NEAR(it->t, c.t, 1e-9);
  }
}

TEST(SimulateShot, CapDiscardsUnobservedExits) {
  auto scene = ct::diag234_scene();
  Shot shot{Vec3(0.8, 0, 0), Vec3::UnitY(), 0.9, 0.0, 0.0, {}};
  auto res = simulate_shot(scene, shot, small_config(1, 32));
  EXPECT_GT(res.diag.discarded_unobserved, 0);
  EXPECT_EQ(res.events.size() + res.diag.discarded_unobserved, static_cast<std::size_t>(res.diag.rays));
  for (const auto& e : res.events) EXPECT_TRUE(scene.observed_at(e.x));
}

TEST(SimulateShot, SeedRotatesAzimuthsDeterministically) {
  auto scene = ct::flat_scene();
  Shot shot{Vec3::Zero(), Vec3::UnitZ(), 0.8, 0.0, 0.0, {}};
  auto cfg = small_config(1, 8);
  auto plain = simulate_shot(scene, shot, cfg).events;
  cfg.seed = 7;
  auto a = simulate_shot(scene, shot, cfg).events;
  auto b = simulate_shot(scene, shot, cfg).events;
  ASSERT_EQ(a.size(), plain.size());
  ASSERT_EQ(a.size(), b.size());
  bool moved = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].x, b[i].x);
    EXPECT_EQ(a[i].t, b[i].t);
    moved |= (a[i].x - plain[i].x).norm() > 1e-6;
    // The arrival time from the axis is unchanged by rotating about it.
    EXPECT_NEAR(a[i].t, plain[i].t, 1e-9);
  }
  EXPECT_TRUE(moved);
}

TEST(SimulateShot, RejectsBadShots) {
  auto scene = ct::flat_scene();
  EXPECT_THROW(simulate_shot(scene, Shot{Vec3::Zero(), Vec3(2, 0, 0), 0.8, 0, 0, {}}), PreconditionError);
  EXPECT_THROW(simulate_shot(scene, Shot{Vec3::Zero(), Vec3::UnitX(), 1.0, 0, 0, {}}), PreconditionError);
  EXPECT_THROW(simulate_shot(scene, Shot{Vec3::Zero(), Vec3::UnitX(), 0.8, 1, 0, {}}), PreconditionError);
}

TEST(RunSurvey, SingleShotMatchesSimulateShot) {
  auto scene = ct::bump_scene();
  Shot shot{Vec3::Zero(), Vec3::UnitX(), 0.9, -0.2, 0.2, {}};
  auto cfg = small_config(3, 8);
  auto ds = run_survey(scene, {shot}, cfg);
  auto direct = simulate_shot(scene, shot, cfg);
  ASSERT_EQ(ds.shots.size(), 1u);
  ASSERT_EQ(ds.shots[0].events.size(), direct.events.size());
  for (std::size_t i = 0; i < direct.events.size(); ++i) {
    EXPECT_EQ(ds.shots[0].events[i].x, direct.events[i].x);
    EXPECT_EQ(ds.shots[0].events[i].t, direct.events[i].t);
  }
  EXPECT_EQ(ds.scene_hash, scene_hash(scene));
}

TEST(RunSurvey, WorkerCountDoesNotChangeOutput) {
  auto scene = ct::bump_scene();
  auto grid = ct::pair_grid({Vec3::Zero(), Vec3(0.2, 0, 0)}, ct::direction_fan(Vec3::UnitX(), 3), {0.85, 0.95}, 0.1);
  SimConfig cfg = small_config(3, 6);
  cfg.pair_samples = true;
  auto one = run_survey(scene, grid, cfg, 1);
  auto eight = run_survey(scene, grid, cfg, 8);
  EXPECT_EQ(one.scene_hash, eight.scene_hash);
  EXPECT_EQ(event_bytes(one), event_bytes(eight));
  EXPECT_GT(one.event_count(), 0u);
}

TEST(RunSurvey, EventCountIsSumOfShots) {
  auto scene = ct::flat_scene();
  std::mt19937_64 rng(4);
  std::vector<Vec3> zs, dirs;
  for (int i = 0; i < 10; ++i) zs.push_back(ct::random_in_ball(rng, Vec3::Zero(), 0.5));
  for (int i = 0; i < 6; ++i) dirs.push_back(ct::random_unit(rng));
  auto grid = ct::pair_grid(zs, dirs, {0.6, 0.75, 0.9}, 0.2);
  ASSERT_EQ(grid.size(), 180u);
  SimConfig cfg = small_config(2, 4);
  cfg.both_sheets = false;
  cfg.pair_samples = true;
  auto ds = run_survey(scene, grid, cfg, 2);
  ASSERT_EQ(ds.shots.size(), grid.size());
  assign_companions(grid);
  std::size_t recount = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    EXPECT_EQ(ds.shots[i].id, static_cast<int>(i));
    EXPECT_TRUE(ds.shots[i].error.empty());
    recount += simulate_shot(scene, grid[i], cfg).events.size();
  }
  EXPECT_EQ(ds.event_count(), recount);
}

TEST(RunSurvey, CompanionShotsShareConormalArrivals) {
  auto scene = ct::bump_scene();
  std::vector<Shot> grid{{Vec3::Zero(), Vec3::UnitX(), 0.9, 0.0, 0.0, {}},
                         {Vec3::Zero(), Vec3::UnitY(), 0.9, 0.0, 0.0, {}}};
  SimConfig cfg = small_config(1, 4);
  cfg.pair_samples = true;
  auto ds = run_survey(scene, grid, cfg);
  int shared = 0;
  for (const auto& a : ds.shots[0].events)
    for (const auto& b : ds.shots[1].events)
      if ((a.x - b.x).norm() < 1e-9 && std::abs(a.t - b.t) < 1e-9) ++shared;
  EXPECT_GE(shared, 2);
}

TEST(RunSurvey, CollectsPerShotErrors) {
  auto scene = ct::flat_scene();
  std::vector<Shot> grid{{Vec3::Zero(), Vec3::UnitX(), 0.8, 0.0, 0.0, {}},
                         {Vec3::Zero(), Vec3(0, 2, 0), 0.8, 0.0, 0.0, {}}};
  auto ds = run_survey(scene, grid, small_config(1, 4));
  EXPECT_TRUE(ds.shots[0].error.empty());
  EXPECT_FALSE(ds.shots[0].events.empty());
  EXPECT_NE(ds.shots[1].error.find("theta"), std::string::npos);
  EXPECT_THROW(run_survey(scene, {}, small_config(1, 4)), PreconditionError);
}

TEST(RunSurvey, StripRemovesOracleFields) {
  auto scene = ct::flat_scene();
  auto ds = run_survey(scene, {Shot{Vec3::Zero(), Vec3::UnitX(), 0.8, 0.0, 0.0, {}}}, small_config(1, 4));
  auto stripped = ds;
  stripped.strip_oracle_fields();
  EXPECT_FALSE(stripped.has_oracle_fields);
  for (std::size_t i = 0; i < ds.shots[0].events.size(); ++i) {
    const auto& e = stripped.shots[0].events[i];
    EXPECT_EQ(e.xi, Vec3::Zero());
    EXPECT_EQ(e.azimuth, -1);
    EXPECT_EQ(e.x, ds.shots[0].events[i].x);
    EXPECT_EQ(e.zeta_tan, ds.shots[0].events[i].zeta_tan);
  }
}
