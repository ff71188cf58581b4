#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "gazegrasp/robot_sim.hpp"
#include "support/demo.hpp"

using namespace gazegrasp;
using Catch::Matchers::WithinAbs;

namespace {

auto code_is(Errc c) {
  return Catch::Matchers::Predicate<Error>([c](const Error& e) { return e.code() == c; });
}

SimParams params(double clearance = 0.02, double fail = 0.0, std::uint64_t seed = 1) {
  SimParams p;
  p.clearance_m = clearance;
  p.fail_rate = fail;
  p.seed = seed;
  p.bounds = demo::bounds();
  return p;
}

std::vector<RobotEventKind> kinds(const std::vector<RobotEvent>& ev) {
  std::vector<RobotEventKind> out;
  for (const auto& e : ev) out.push_back(e.kind);
  return out;
}

double seg(const WorkspacePoint& a, const WorkspacePoint& b) {
  return std::sqrt((a.X - b.X) * (a.X - b.X) + (a.Y - b.Y) * (a.Y - b.Y) + (a.Z - b.Z) * (a.Z - b.Z));
}

using K = RobotEventKind;

}  // namespace

TEST_CASE("pick at the home pose takes only the gripper time", "[robot]") {
  Scene scene = demo::scene();
  scene.home = {0.45, 0.15, 0.0};
  SimRobot robot(scene.home, params(0.0));
  auto ev = execute_pick(robot, scene, scene.home, 1);
  const auto rest = run_to_completion(robot, scene, 10.0);
  ev.insert(ev.end(), rest.begin(), rest.end());
  CHECK(kinds(ev) == std::vector<K>{K::MoveStarted, K::ArrivedAbove, K::Descended, K::GripperClosed, K::Ascended,
                                    K::ArrivedHome, K::PickDone});
  CHECK(ev[1].t_ms == 0.0);
  CHECK(ev[2].t_ms == 0.0);
  CHECK_THAT(ev[3].t_ms, WithinAbs(300.0, 1e-9));
  CHECK_THAT(ev.back().t_ms, WithinAbs(300.0, 1e-9));
  CHECK(robot.held == 1u);
}

TEST_CASE("pick timing equals path length over speed", "[robot]") {
  Scene scene = demo::scene();
  SimRobot robot(scene.home, params(0.02));
  // Half a metre from home at the home height.
  const WorkspacePoint target{scene.home.X + 0.3, scene.home.Y + 0.4, scene.home.Z};
  scene.objects[0].pose = target;
  const WorkspacePoint above{target.X, target.Y, target.Z + 0.02};
  CHECK_THAT(seg(scene.home, target), WithinAbs(0.5, 1e-12));

  execute_pick(robot, scene, target, 1);
  const auto ev = run_to_completion(robot, scene, 7.0);
  const double path = seg(scene.home, above) + 0.02 + 0.02 + seg(above, scene.home);
  REQUIRE(ev.back().kind == K::PickDone);
  CHECK_THAT(ev.back().t_ms, WithinAbs(path / 0.25 * 1000.0 + 300.0, 1e-6));
  CHECK_THAT(ev[0].t_ms, WithinAbs(seg(scene.home, above) / 0.25 * 1000.0, 1e-6));  // ArrivedAbove
  CHECK_THAT(ev[1].t_ms, WithinAbs((seg(scene.home, above) + 0.02) / 0.25 * 1000.0, 1e-6));
  CHECK(robot.status() == RobotStatus::Idle);
  CHECK(robot.tcp == scene.home);
}

TEST_CASE("command preconditions", "[robot]") {
  Scene scene = demo::scene();
  SimRobot robot(scene.home, params());
  REQUIRE_THROWS_MATCHES(execute_pick(robot, scene, {5, 0, 0}, 1), Error, code_is(Errc::TargetOutOfBounds));
  REQUIRE_THROWS_MATCHES(execute_pick(robot, scene, scene.objects[0].pose, 42), Error, code_is(Errc::ObjectMissing));
  REQUIRE_THROWS_MATCHES(execute_place(robot, {0.5, 0, 0}), Error, code_is(Errc::NothingHeld));

  execute_pick(robot, scene, scene.objects[0].pose, 1);
  REQUIRE_THROWS_MATCHES(execute_pick(robot, scene, scene.objects[1].pose, 2), Error, code_is(Errc::RobotBusy));
  run_to_completion(robot, scene);
  REQUIRE(robot.held == 1u);
  REQUIRE_THROWS_MATCHES(execute_pick(robot, scene, scene.objects[1].pose, 2), Error, code_is(Errc::RobotBusy));
  REQUIRE_THROWS_MATCHES(execute_place(robot, {0.5, 0.9, 0}), Error, code_is(Errc::TargetOutOfBounds));
  CHECK(robot.held == 1u);
  CHECK(scene.objects[0].attached);
  REQUIRE_THROWS_AS(sim_tick(robot, scene, 0.0), Error);
}

TEST_CASE("pick then place at the same spot restores the object", "[robot]") {
  Scene scene = demo::scene();
  const auto original = scene.objects[2].pose;
  SimRobot robot(scene.home, params());
  execute_pick(robot, scene, original, 3);
  run_to_completion(robot, scene, 16.0);
  CHECK(scene.objects[2].pose == robot.tcp);
  execute_place(robot, original);
  const auto ev = run_to_completion(robot, scene, 16.0);
  CHECK(ev.back().kind == K::PlaceDone);
  CHECK(seg(scene.objects[2].pose, original) < 1e-9);
  CHECK_FALSE(scene.objects[2].attached);
  CHECK(robot.status() == RobotStatus::Idle);
  CHECK(robot.gripper == Gripper::Open);
  CHECK(robot.tcp == scene.home);
  CHECK_FALSE(robot.held);
}

TEST_CASE("place event order on random targets", "[robot]") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> x(0.2, 0.9), y(-0.5, 0.5);
  for (int rep = 0; rep < 50; ++rep) {
    Scene scene = demo::scene();
    SimRobot robot(scene.home, params());
    execute_pick(robot, scene, scene.objects[0].pose, 1);
    run_to_completion(robot, scene, 20.0);
    auto ev = execute_place(robot, {x(rng), y(rng), 0});
    const auto rest = run_to_completion(robot, scene, 1.0 + rep);
    ev.insert(ev.end(), rest.begin(), rest.end());
    CHECK(kinds(ev) == std::vector<K>{K::MoveStarted, K::ArrivedAbove, K::Descended, K::GripperOpened, K::Ascended,
                                      K::ArrivedHome, K::PlaceDone});
    for (std::size_t k = 1; k < ev.size(); ++k) CHECK(ev[k].t_ms >= ev[k - 1].t_ms);
  }
}

TEST_CASE("motion is continuous and never overshoots", "[robot]") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dt(0.5, 80.0);
  Scene scene = demo::scene();
  SimRobot robot(scene.home, params());
  execute_pick(robot, scene, scene.objects[1].pose, 2);
  double worst_step = -1, worst_off = 0;
  while (robot.status() != RobotStatus::Idle) {
    const auto before = robot.tcp;
    const double d = dt(rng);
    sim_tick(robot, scene, d);
    worst_step = std::max(worst_step, seg(before, robot.tcp) - 0.25 * d / 1000.0);
    if (!robot.plan.empty() && robot.plan.front().kind == MotionSegment::Kind::Move) {
      // Still on the current move: tcp lies between its endpoints.
      const auto& s = robot.plan.front();
      worst_off = std::max(worst_off, seg(s.from, robot.tcp) + seg(robot.tcp, s.to) - seg(s.from, s.to));
    }
  }
  CHECK(worst_step <= 1e-12);
  CHECK(worst_off < 1e-12);
}

TEST_CASE("same schedule, same timeline", "[robot]") {
  auto run = [] {
    Scene scene = demo::scene();
    SimRobot robot(scene.home, params(0.02, 0.3, 9));
    std::vector<std::pair<int, double>> out;
    for (int cycle = 0; cycle < 10; ++cycle) {
      if (robot.held) execute_place(robot, {0.6, 0.3 - 0.05 * cycle, 0});
      else execute_pick(robot, scene, scene.objects[static_cast<std::size_t>(cycle) % 5].pose,
                        scene.objects[static_cast<std::size_t>(cycle) % 5].id);
      for (const auto& e : run_to_completion(robot, scene, 13.0)) out.emplace_back(static_cast<int>(e.kind), e.t_ms);
    }
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("invariants under fuzzed commands and failures", "[robot]") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dt(1, 120), x(0.0, 1.1), y(-0.7, 0.7), u(0, 1);
  std::uniform_int_distribution<int> obj(1, 6);
  Scene scene = demo::scene();
  SimRobot robot(scene.home, params(0.02, 0.2, 3));
  int violations = 0, done = 0, failed = 0;
  for (int k = 0; k < 20'000; ++k) {
    if (robot.status() == RobotStatus::Idle && u(rng) < 0.2) {
      try {
        if (u(rng) < 0.5) {
          const auto id = static_cast<ObjectId>(obj(rng));
          const auto* o = scene.find(id);
          execute_pick(robot, scene, o && u(rng) < 0.8 ? o->pose : WorkspacePoint{x(rng), y(rng), 0}, id);
        } else {
          execute_place(robot, {x(rng), y(rng), 0});
        }
      } catch (const Error&) {
      }
    }
    for (const auto& e : sim_tick(robot, scene, dt(rng))) {
      done += e.kind == K::PickDone || e.kind == K::PlaceDone;
      failed += e.kind == K::Failed;
    }
    int attached = 0;
    for (const auto& o : scene.objects) {
      attached += o.attached;
      if (o.attached && (!robot.held || *robot.held != o.id || !(o.pose == robot.tcp))) ++violations;
    }
    if (robot.held && robot.gripper != Gripper::Closed) ++violations;
    if (attached != (robot.held ? 1 : 0)) ++violations;
    if (scene.objects.size() != 5) ++violations;
    if (robot.status() == RobotStatus::Idle && !(robot.tcp == robot.home)) ++violations;
  }
  CHECK(violations == 0);
  CHECK(done > 100);
  CHECK(failed > 10);
}

TEST_CASE("detector view of the scene", "[robot]") {
  Scene scene = demo::scene();
  const auto g = demo::geometry();
  const auto f = detection_frame_from_scene(scene, g.homography, 77);
  REQUIRE(f.boxes.size() == 5);
  CHECK(f.t == 77);
  const auto back = pixel_to_workspace(g.homography, f.boxes[0].center());
  CHECK(seg(back, scene.objects[0].pose) < 1e-9);
  for (const auto& b : f.boxes) {
    CHECK(b.x_c > 0);
    CHECK(b.x_c < 640);
    CHECK(b.y_c > 0);
    CHECK(b.y_c < 480);
  }
  scene.objects[3].attached = true;
  CHECK(detection_frame_from_scene(scene, g.homography, 78).boxes.size() == 4);
}

TEST_CASE("scene file round trip", "[robot]") {
  const Scene s = demo::scene();
  const Scene back = scene_from_json(nlohmann::json::parse(to_json(s).dump()));
  REQUIRE(back.objects.size() == s.objects.size());
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    CHECK(back.objects[i].id == s.objects[i].id);
    CHECK(back.objects[i].label == s.objects[i].label);
    CHECK(back.objects[i].pose == s.objects[i].pose);
    CHECK(back.objects[i].bbox_w_px == s.objects[i].bbox_w_px);
  }
  CHECK(back.home == s.home);
  auto dup = to_json(s);
  dup["objects"][1]["id"] = 1;
  REQUIRE_THROWS_AS(scene_from_json(dup), Error);
  REQUIRE_NOTHROW(load_scene(GAZEGRASP_DATA_DIR "/scene.json"));
}
