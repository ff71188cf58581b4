#pragma once

// Camera pixel -> robot workspace mapping.
//
// Two routes: a planar homography with perspective division (Z pinned to the
// table height), and back-projection of a pixel ray through a pinhole camera
// intersected with a horizontal plane in the robot base frame.

#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gazegrasp/error.hpp"
#include "gazegrasp/types.hpp"

namespace gazegrasp {

struct WorkspacePoint {
  double X = 0.0;
  double Y = 0.0;
  double Z = 0.0;

  friend bool operator==(const WorkspacePoint&, const WorkspacePoint&) = default;
};

inline double distance(const WorkspacePoint& a, const WorkspacePoint& b) {
  const double dx = a.X - b.X, dy = a.Y - b.Y, dz = a.Z - b.Z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

struct Homography {
  Eigen::Matrix3d H = Eigen::Matrix3d::Identity();
  double z_table = 0.0;
  double reprojection_rms_px = 0.0;  // only meaningful for estimated homographies
};

/// Scales H so h33 = 1, or to unit Frobenius norm when h33 vanishes.
inline Eigen::Matrix3d normalize_homography(const Eigen::Matrix3d& H) {
  if (std::abs(H(2, 2)) > 1e-12) return H / H(2, 2);
  return H / H.norm();
}

struct CorrespondencePair {
  PixelPoint pixel;
  ScreenPoint plane;  // workspace (X, Y) in meters
};

namespace detail {

// Similarity transform moving the centroid to the origin with mean distance sqrt(2).
inline Eigen::Matrix3d hartley_transform(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - c).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Eigen::Matrix3d T;
  T << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return T;
}

inline bool any_three_collinear(const std::vector<Eigen::Vector2d>& pts, double tol) {
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j)
      for (std::size_t k = j + 1; k < pts.size(); ++k) {
        const Eigen::Vector2d a = pts[j] - pts[i], b = pts[k] - pts[i];
        if (std::abs(a.x() * b.y() - a.y() * b.x()) <= tol) return true;
      }
  return false;
}

inline Eigen::Vector2d apply_h(const Eigen::Matrix3d& H, const Eigen::Vector2d& p) {
  const Eigen::Vector3d q = H * Eigen::Vector3d(p.x(), p.y(), 1.0);
  return q.head<2>() / q.z();
}

}  // namespace detail

/// Direct linear transform with Hartley normalization on both point sets.
inline Homography estimate_homography(std::span<const CorrespondencePair> pairs, double z_table = 0.0) {
  if (pairs.size() < 4) {
    throw Error(Errc::InsufficientPairs, std::to_string(pairs.size()) + " pairs, need at least 4");
  }
  std::vector<Eigen::Vector2d> src, dst;
  for (const auto& p : pairs) {
    if (!is_finite(p.pixel) || !is_finite(p.plane)) {
      throw Error(Errc::InvalidArgument, "non-finite correspondence");
    }
    src.emplace_back(p.pixel.x, p.pixel.y);
    dst.emplace_back(p.plane.x, p.plane.y);
  }
  const Eigen::Matrix3d Ts = detail::hartley_transform(src);
  const Eigen::Matrix3d Td = detail::hartley_transform(dst);
  std::vector<Eigen::Vector2d> ns, nd;
  for (std::size_t i = 0; i < src.size(); ++i) {
    ns.push_back(detail::apply_h(Ts, src[i]));
    nd.push_back(detail::apply_h(Td, dst[i]));
  }
  // With exactly four pairs any collinear triple leaves the map undetermined.
  if (pairs.size() == 4 && (detail::any_three_collinear(ns, 1e-9) || detail::any_three_collinear(nd, 1e-9))) {
    throw Error(Errc::DegenerateConfiguration, "three of the four points are collinear");
  }

  const auto n = static_cast<Eigen::Index>(pairs.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(std::max<Eigen::Index>(2 * n, 9), 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = ns[static_cast<std::size_t>(i)].x(), y = ns[static_cast<std::size_t>(i)].y();
    const double X = nd[static_cast<std::size_t>(i)].x(), Y = nd[static_cast<std::size_t>(i)].y();
    A.row(2 * i) << -x, -y, -1, 0, 0, 0, X * x, X * y, X;
    A.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, Y * x, Y * y, Y;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A one-dimensional null space needs the second-smallest singular value
  // well away from zero.
  if (sv(7) <= 1e-10 * sv(0)) {
    throw Error(Errc::DegenerateConfiguration, "correspondences do not determine a homography");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);

  Homography out;
  out.H = normalize_homography(Td.inverse() * Hn * Ts);
  out.z_table = z_table;
  if (!(std::abs(out.H.determinant()) > 1e-12)) {
    throw Error(Errc::DegenerateConfiguration, "estimated homography is singular");
  }

  // Reprojection error is measured in pixels: workspace points are mapped
  // back through the inverse homography.
  const Eigen::Matrix3d Hinv = out.H.inverse();
  double sq = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    sq += (detail::apply_h(Hinv, dst[i]) - src[i]).squaredNorm();
  }
  out.reprojection_rms_px = std::sqrt(sq / static_cast<double>(src.size()));
  return out;
}

inline WorkspacePoint pixel_to_workspace(const Homography& h, PixelPoint p) {
  const Eigen::Vector3d q = h.H * Eigen::Vector3d(p.x, p.y, 1.0);
  if (std::abs(q.z()) <= 1e-9) throw Error(Errc::PointAtInfinity, "pixel maps to the line at infinity");
  return {q.x() / q.z(), q.y() / q.z(), h.z_table};
}

inline PixelPoint workspace_to_pixel(const Homography& h, const WorkspacePoint& w) {
  const Eigen::Vector3d q = h.H.inverse() * Eigen::Vector3d(w.X, w.Y, 1.0);
  if (std::abs(q.z()) <= 1e-9) throw Error(Errc::PointAtInfinity, "workspace point maps to infinity");
  return {q.x() / q.z(), q.y() / q.z()};
}

/// Pinhole intrinsics plus the rigid transform taking camera-frame points to
/// the robot base frame.
struct CameraModel {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Eigen::Matrix4d T_base_camera = Eigen::Matrix4d::Identity();

  Eigen::Matrix3d rotation() const { return T_base_camera.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return T_base_camera.topRightCorner<3, 1>(); }
  Eigen::Matrix3d intrinsics() const {
    Eigen::Matrix3d K;
    K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return K;
  }

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw Error(Errc::InvalidArgument, "focal lengths must be positive");
    const Eigen::Matrix3d R = rotation();
    if ((R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
        std::abs(R.determinant() - 1.0) > 1e-9) {
      throw Error(Errc::InvalidArgument, "T_base_camera rotation is not a proper rotation");
    }
    const Eigen::RowVector4d bottom = T_base_camera.row(3);
    if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12) {
      throw Error(Errc::InvalidArgument, "T_base_camera bottom row must be [0 0 0 1]");
    }
  }
};

/// Intersects the viewing ray of pixel `p` with the plane Z = z_plane in the base frame.
inline WorkspacePoint backproject_to_plane(const CameraModel& cam, PixelPoint p, double z_plane) {
  const Eigen::Vector3d ray_cam((p.x - cam.cx) / cam.fx, (p.y - cam.cy) / cam.fy, 1.0);
  const Eigen::Vector3d dir = cam.rotation() * ray_cam;
  const Eigen::Vector3d origin = cam.translation();
  if (std::abs(dir.normalized().z()) <= 1e-9) {
    throw Error(Errc::RayParallelToPlane, "viewing ray is parallel to the table plane");
  }
  const double s = (z_plane - origin.z()) / dir.z();
  const Eigen::Vector3d hit = origin + s * dir;
  return {hit.x(), hit.y(), z_plane};
}

/// Homography from pixels to (X, Y) on the plane Z = z_plane induced by a
/// calibrated camera.
inline Homography induced_homography(const CameraModel& cam, double z_plane) {
  // Base -> camera: x_c = R^T (x_b - t).
  const Eigen::Matrix3d Rcb = cam.rotation().transpose();
  const Eigen::Vector3d tcb = -Rcb * cam.translation();
  Eigen::Matrix3d plane_to_pixel;
  plane_to_pixel.col(0) = Rcb.col(0);
  plane_to_pixel.col(1) = Rcb.col(1);
  plane_to_pixel.col(2) = Rcb.col(2) * z_plane + tcb;
  plane_to_pixel = cam.intrinsics() * plane_to_pixel;
  if (!(std::abs(plane_to_pixel.determinant()) > 1e-12)) {
    throw Error(Errc::DegenerateConfiguration, "camera center lies on the plane");
  }
  Homography h;
  h.H = normalize_homography(plane_to_pixel.inverse());
  h.z_table = z_plane;
  return h;
}

struct WorkspaceBounds {
  WorkspacePoint min{-1e9, -1e9, -1e9};
  WorkspacePoint max{1e9, 1e9, 1e9};
};

inline bool workspace_bounds_check(const WorkspacePoint& p, const WorkspaceBounds& b) {
  return p.X >= b.min.X && p.X <= b.max.X && p.Y >= b.min.Y && p.Y <= b.max.Y && p.Z >= b.min.Z &&
         p.Z <= b.max.Z;
}

// Geometry file: JSON with H (9 numbers, row-major), z_table, and an optional
// camera block holding intrinsics and T_base_camera (16 numbers, row-major).

struct GeometryConfig {
  Homography homography;
  std::optional<CameraModel> camera;
};

inline nlohmann::json to_json(const GeometryConfig& g) {
  std::vector<double> H;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) H.push_back(g.homography.H(r, c));
  nlohmann::json j{{"format", "gazegrasp.geometry.v1"},
                   {"H", H},
                   {"z_table", g.homography.z_table},
                   {"reprojection_rms_px", g.homography.reprojection_rms_px}};
  if (g.camera) {
    std::vector<double> T;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) T.push_back(g.camera->T_base_camera(r, c));
    j["camera"] = {{"fx", g.camera->fx}, {"fy", g.camera->fy}, {"cx", g.camera->cx},
                   {"cy", g.camera->cy}, {"T_base_camera", T}};
  }
  return j;
}

inline GeometryConfig geometry_from_json(const nlohmann::json& j) {
  try {
    GeometryConfig g;
    const auto H = j.at("H").get<std::vector<double>>();
    if (H.size() != 9) throw Error(Errc::ParseError, "H needs 9 numbers");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) g.homography.H(r, c) = H[static_cast<std::size_t>(3 * r + c)];
    if (!(std::abs(g.homography.H.determinant()) > 1e-12)) {
      throw Error(Errc::ParseError, "H is not invertible");
    }
    g.homography.z_table = j.at("z_table").get<double>();
    g.homography.reprojection_rms_px = j.value("reprojection_rms_px", 0.0);
    if (j.contains("camera")) {
      const auto& c = j.at("camera");
      CameraModel cam;
      cam.fx = c.at("fx").get<double>();
      cam.fy = c.at("fy").get<double>();
      cam.cx = c.at("cx").get<double>();
      cam.cy = c.at("cy").get<double>();
      const auto T = c.at("T_base_camera").get<std::vector<double>>();
      if (T.size() != 16) throw Error(Errc::ParseError, "T_base_camera needs 16 numbers");
      for (int r = 0; r < 4; ++r)
        for (int k = 0; k < 4; ++k) cam.T_base_camera(r, k) = T[static_cast<std::size_t>(4 * r + k)];
      cam.validate();
      g.camera = cam;
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
}

inline void save_geometry(const GeometryConfig& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  out << to_json(g).dump(2) << '\n';
}

inline GeometryConfig load_geometry(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
  return geometry_from_json(j);
}

/// Correspondence file: one pair per line, "px py X Y", '#' starts a comment.
inline std::vector<CorrespondencePair> parse_pairs(std::istream& in) {
  std::vector<CorrespondencePair> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    CorrespondencePair p;
    if (!(ls >> p.pixel.x)) continue;
    if (!(ls >> p.pixel.y >> p.plane.x >> p.plane.y)) {
      throw Error(Errc::ParseError, "line " + std::to_string(lineno) + ": expected 'px py X Y'");
    }
    pairs.push_back(p);
  }
  return pairs;
}

}  // namespace gazegrasp
