#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include "gazegrasp/geometry.hpp"
#include "support/demo.hpp"

using namespace gazegrasp;
using Catch::Matchers::WithinAbs;

namespace {

auto code_is(Errc c) {
  return Catch::Matchers::Predicate<Error>([c](const Error& e) { return e.code() == c; });
}

ScreenPoint apply(const Eigen::Matrix3d& H, PixelPoint p) {
  const double w = H(2, 0) * p.x + H(2, 1) * p.y + H(2, 2);
  return {(H(0, 0) * p.x + H(0, 1) * p.y + H(0, 2)) / w, (H(1, 0) * p.x + H(1, 1) * p.y + H(1, 2)) / w};
}

// Pixel -> table map of a camera 1-1.5 m above the table, in metres.
Eigen::Matrix3d random_h(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1, 1);
  Eigen::Matrix3d H;
  H << 0.0015 + 2e-4 * d(rng), 1e-4 * d(rng), 0.3 * d(rng), 1e-4 * d(rng), 0.0015 + 2e-4 * d(rng), 0.3 * d(rng),
      2e-5 * d(rng), 2e-5 * d(rng), 1.0;
  return H;
}

std::vector<PixelPoint> spread_pixels(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> x(0, 640), y(0, 480);
  std::vector<PixelPoint> out;
  for (int i = 0; i < n; ++i) out.push_back({x(rng), y(rng)});
  return out;
}

CameraModel nadir_camera() {
  CameraModel cam;
  cam.fx = cam.fy = 1000;
  cam.cx = cam.cy = 500;
  cam.T_base_camera.setIdentity();
  // x_cam = +X, z_cam = -Z, y_cam = z x x = -Y.
  cam.T_base_camera.block<3, 3>(0, 0) << 1, 0, 0, 0, -1, 0, 0, 0, -1;
  cam.T_base_camera(2, 3) = 1.0;
  return cam;
}

}  // namespace

TEST_CASE("identity homography from four pairs", "[geometry]") {
  std::vector<CorrespondencePair> pairs{{{0, 0}, {0, 0}}, {{100, 0}, {100, 0}}, {{0, 100}, {0, 100}}, {{100, 100}, {100, 100}}};
  const auto h = estimate_homography(pairs);
  CHECK((h.H - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(h.reprojection_rms_px < 1e-9);
}

TEST_CASE("noiseless pairs recover a known homography", "[geometry]") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::Matrix3d H = random_h(rng);
    std::vector<CorrespondencePair> pairs;
    for (const auto& p : spread_pixels(rng, 8)) pairs.push_back({p, apply(H, p)});
    const auto est = estimate_homography(pairs, 0.0);
    CHECK((est.H - H).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(est.H(2, 2) == 1.0);
    CHECK(est.reprojection_rms_px < 1e-8);
  }
}

TEST_CASE("homography estimation errors", "[geometry]") {
  std::vector<CorrespondencePair> three{{{0, 0}, {0, 0}}, {{1, 0}, {1, 0}}, {{0, 1}, {0, 1}}};
  REQUIRE_THROWS_MATCHES(estimate_homography(three), Error, code_is(Errc::InsufficientPairs));
  std::vector<CorrespondencePair> collinear{{{0, 0}, {0, 0}}, {{10, 10}, {1, 1}}, {{20, 20}, {2, 2}}, {{0, 30}, {0, 3}}};
  REQUIRE_THROWS_MATCHES(estimate_homography(collinear), Error, code_is(Errc::DegenerateConfiguration));
  std::vector<CorrespondencePair> line;
  for (int i = 0; i < 8; ++i) line.push_back({{i * 10.0, i * 5.0}, {i * 1.0, i * 0.5}});
  REQUIRE_THROWS_MATCHES(estimate_homography(line), Error, code_is(Errc::DegenerateConfiguration));
}

TEST_CASE("pixel_to_workspace examples", "[geometry]") {
  Homography id;
  CHECK(pixel_to_workspace(id, {3, 4}) == WorkspacePoint{3, 4, 0});

  Homography s;
  s.H = Eigen::Vector3d(0.001, 0.001, 1).asDiagonal();
  s.z_table = 0.05;
  const auto w = pixel_to_workspace(s, {500, 200});
  CHECK_THAT(w.X, WithinAbs(0.5, 1e-15));
  CHECK_THAT(w.Y, WithinAbs(0.2, 1e-15));
  CHECK(w.Z == 0.05);

  Homography inf;
  inf.H << 1, 0, 0, 0, 1, 0, 1, 0, 1;
  REQUIRE_THROWS_MATCHES(pixel_to_workspace(inf, {-1, 5}), Error, code_is(Errc::PointAtInfinity));
}

TEST_CASE("pixel -> workspace -> pixel round trip", "[geometry]") {
  std::mt19937_64 rng(23);
  double worst = 0;
  for (int rep = 0; rep < 200; ++rep) {
    Homography h;
    h.H = random_h(rng);
    for (const auto& p : spread_pixels(rng, 5)) {
      const auto back = workspace_to_pixel(h, pixel_to_workspace(h, p));
      worst = std::max(worst, std::hypot(back.x - p.x, back.y - p.y));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("back-projection examples", "[geometry]") {
  const auto cam = nadir_camera();
  REQUIRE_NOTHROW(cam.validate());
  const auto c = backproject_to_plane(cam, {500, 500}, 0.0);
  CHECK_THAT(c.X, WithinAbs(0, 1e-12));
  CHECK_THAT(c.Y, WithinAbs(0, 1e-12));
  CHECK(c.Z == 0.0);
  const auto r = backproject_to_plane(cam, {600, 500}, 0.0);
  CHECK_THAT(r.X, WithinAbs(0.1, 1e-12));
  CHECK_THAT(r.Y, WithinAbs(0.0, 1e-12));

  // Camera looking along +X: the principal ray never meets a horizontal plane.
  CameraModel side = nadir_camera();
  side.T_base_camera.block<3, 3>(0, 0) << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  REQUIRE_NOTHROW(side.validate());
  REQUIRE_THROWS_MATCHES(backproject_to_plane(side, {500, 500}, 0.0), Error,
                         code_is(Errc::RayParallelToPlane));
}

TEST_CASE("ray-plane and induced homography agree", "[geometry]") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> tilt(-0.35, 0.35), yaw(-std::numbers::pi, std::numbers::pi), height(0.6, 1.5),
      z_plane(-0.1, 0.2), shift(-0.5, 0.5);
  double worst = 0;
  for (int rep = 0; rep < 100; ++rep) {
    CameraModel cam = rep == 0 ? demo::camera() : nadir_camera();
    if (rep > 0) {
      const Eigen::Matrix3d R = (Eigen::AngleAxisd(yaw(rng), Eigen::Vector3d::UnitZ()) *
                                 Eigen::AngleAxisd(tilt(rng), Eigen::Vector3d::UnitX()) *
                                 Eigen::AngleAxisd(tilt(rng), Eigen::Vector3d::UnitY()))
                                    .toRotationMatrix() *
                                cam.rotation();
      cam.T_base_camera.block<3, 3>(0, 0) = R;
      cam.T_base_camera.block<3, 1>(0, 3) = Eigen::Vector3d(shift(rng), shift(rng), height(rng));
    }
    const double z = rep == 0 ? 0.0 : z_plane(rng);
    const auto h = induced_homography(cam, z);
    for (const auto& p : spread_pixels(rng, 20)) {
      const auto a = backproject_to_plane(cam, p, z);
      const auto b = pixel_to_workspace(h, p);
      worst = std::max(worst, distance(a, b));
      CHECK(b.Z == z);
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("bounds check is closed", "[geometry]") {
  const WorkspaceBounds b{{0, -0.5, 0}, {1, 0.5, 0.5}};
  CHECK(workspace_bounds_check({0.5, 0, 0.1}, b));
  CHECK(workspace_bounds_check({1, 0.5, 0}, b));
  CHECK_FALSE(workspace_bounds_check({1.001, 0, 0.1}, b));
  CHECK_FALSE(workspace_bounds_check({0.5, -0.501, 0.1}, b));
  CHECK_FALSE(workspace_bounds_check({0.5, 0, -0.001}, b));
}

TEST_CASE("scaling the workspace scales the estimated map", "[geometry]") {
  std::mt19937_64 rng(41);
  for (double s : {0.001, 3.0, 1000.0}) {
    const Eigen::Matrix3d H = random_h(rng);
    std::vector<CorrespondencePair> pairs, scaled;
    for (const auto& p : spread_pixels(rng, 10)) {
      const auto w = apply(H, p);
      pairs.push_back({p, w});
      scaled.push_back({p, {s * w.x, s * w.y}});
    }
    const auto h1 = estimate_homography(pairs), h2 = estimate_homography(scaled);
    for (const auto& p : spread_pixels(rng, 10)) {
      const auto a = pixel_to_workspace(h1, p), b = pixel_to_workspace(h2, p);
      CHECK_THAT(b.X, WithinAbs(s * a.X, 1e-6 * std::max(1.0, s)));
      CHECK_THAT(b.Y, WithinAbs(s * a.Y, 1e-6 * std::max(1.0, s)));
    }
  }
}

TEST_CASE("reprojection error with pixel noise", "[geometry]") {
  std::mt19937_64 rng(51);
  std::normal_distribution<double> noise(0, 0.5);
  const Eigen::Matrix3d H = random_h(rng);
  std::vector<CorrespondencePair> pairs;
  for (const auto& p : spread_pixels(rng, 12)) pairs.push_back({{p.x + noise(rng), p.y + noise(rng)}, apply(H, p)});
  const auto est = estimate_homography(pairs);
  CHECK(est.reprojection_rms_px < 1.5);
  CHECK(est.reprojection_rms_px > 0.0);
}

TEST_CASE("geometry file round trip", "[geometry]") {
  const auto g = demo::geometry();
  const std::string text = to_json(g).dump(2);
  const auto back = geometry_from_json(nlohmann::json::parse(text));
  CHECK(back.homography.H == g.homography.H);
  CHECK(back.homography.z_table == g.homography.z_table);
  REQUIRE(back.camera);
  CHECK(back.camera->T_base_camera == g.camera->T_base_camera);
  const Eigen::Matrix3d R = back.camera->rotation();
  CHECK((R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(to_json(back).dump(2) == text);

  auto bad = to_json(g);
  bad["H"] = {1, 2, 3};
  REQUIRE_THROWS_AS(geometry_from_json(bad), Error);
  bad = to_json(g);
  bad["camera"]["T_base_camera"][0] = 2.0;
  REQUIRE_THROWS_AS(geometry_from_json(bad), Error);
}

TEST_CASE("correspondence file parsing", "[geometry]") {
  std::istringstream in("# px py X Y\n10 20 0.1 0.2\n\n30 40 0.3 0.4  # trailing\n");
  const auto pairs = parse_pairs(in);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[1].pixel == PixelPoint{30, 40});
  CHECK(pairs[1].plane == ScreenPoint{0.3, 0.4});
  std::istringstream bad("1 2 3\n");
  REQUIRE_THROWS_AS(parse_pairs(bad), Error);
}

TEST_CASE("checked-in geometry and correspondence files agree with the desk scene", "[geometry]") {
  const auto g = load_geometry(GAZEGRASP_DATA_DIR "/geometry.json");
  const auto want = demo::geometry();
  CHECK((g.homography.H - want.homography.H).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(g.camera);
  std::ifstream in(GAZEGRASP_DATA_DIR "/pairs.txt");
  REQUIRE(in);
  const auto pairs = parse_pairs(in);
  CHECK(pairs.size() == 9);
  const auto est = estimate_homography(pairs);
  CHECK((est.H - want.homography.H).cwiseAbs().maxCoeff() < 1e-6);
}
