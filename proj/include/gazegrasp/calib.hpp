#pragma once

// Bivariate polynomial mapping from iris coordinates (u, v) to screen pixels.
//
// Basis order is lexicographic in the exponent pair (i, j) of u^i v^j:
//   (0,0), (0,1), ..., (0,d), (1,0), ..., (1,d-1), ..., (d,0)
// Fitting happens on inputs rescaled to [-1, 1]; the stored coefficients are
// in that normalized basis and `raw_coeffs_*` expands them back to the
// original (u, v) basis.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <istream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gazegrasp/error.hpp"
#include "gazegrasp/types.hpp"

namespace gazegrasp {

struct IrisPoint {
  double u = 0.0;
  double v = 0.0;

  friend bool operator==(const IrisPoint&, const IrisPoint&) = default;
};

struct CalibrationSample {
  IrisPoint iris;
  ScreenPoint target;
};

/// Affine rescale x -> (x - center) / half_range.
struct AxisScaling {
  double center = 0.0;
  double half_range = 1.0;

  double apply(double x) const { return (x - center) / half_range; }

  friend bool operator==(const AxisScaling&, const AxisScaling&) = default;
};

inline constexpr double kDesignConditionLimit = 1e10;

inline std::size_t basis_size(int degree) {
  return static_cast<std::size_t>((degree + 1) * (degree + 2) / 2);
}

inline std::vector<double> monomial_basis(IrisPoint p, int degree) {
  if (degree < 1) throw Error(Errc::InvalidArgument, "degree must be >= 1");
  std::vector<double> terms;
  terms.reserve(basis_size(degree));
  double u_pow = 1.0;
  for (int i = 0; i <= degree; ++i) {
    double term = u_pow;
    for (int j = 0; j <= degree - i; ++j) {
      terms.push_back(term);
      term *= p.v;
    }
    u_pow *= p.u;
  }
  return terms;
}

namespace detail {

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

inline std::size_t basis_index(int i, int j, int degree) {
  // Offset of row i is sum_{a<i} (degree - a + 1).
  std::size_t offset = 0;
  for (int a = 0; a < i; ++a) offset += static_cast<std::size_t>(degree - a + 1);
  return offset + static_cast<std::size_t>(j);
}

// Expands coefficients of the normalized basis back into the raw (u, v) basis.
inline std::vector<double> expand_to_raw(std::span<const double> coeffs, int degree,
                                         const AxisScaling& su, const AxisScaling& sv) {
  std::vector<double> raw(basis_size(degree), 0.0);
  const double a_u = 1.0 / su.half_range, b_u = -su.center / su.half_range;
  const double a_v = 1.0 / sv.half_range, b_v = -sv.center / sv.half_range;
  for (int i = 0; i <= degree; ++i) {
    for (int j = 0; j <= degree - i; ++j) {
      const double c = coeffs[basis_index(i, j, degree)];
      if (c == 0.0) continue;
      // (a_u u + b_u)^i (a_v v + b_v)^j
      for (int k = 0; k <= i; ++k) {
        const double wu = binomial(i, k) * std::pow(a_u, k) * std::pow(b_u, i - k);
        for (int l = 0; l <= j; ++l) {
          const double wv = binomial(j, l) * std::pow(a_v, l) * std::pow(b_v, j - l);
          raw[basis_index(k, l, degree)] += c * wu * wv;
        }
      }
    }
  }
  return raw;
}

inline AxisScaling scaling_for(double lo, double hi) {
  AxisScaling s;
  s.center = 0.5 * (lo + hi);
  s.half_range = 0.5 * (hi - lo);
  // A flat axis cannot be rescaled; the design matrix check reports it.
  if (!(s.half_range > 0.0)) s.half_range = 1.0;
  return s;
}

}  // namespace detail

struct CalibrationModel {
  int degree = 3;
  AxisScaling u_scale;
  AxisScaling v_scale;
  std::vector<double> coeffs_x;  // normalized basis
  std::vector<double> coeffs_y;
  double residual_rms = 0.0;
  TimestampMs fitted_at = 0;

  IrisPoint normalize(IrisPoint p) const { return {u_scale.apply(p.u), v_scale.apply(p.v)}; }

  std::vector<double> raw_coeffs_x() const {
    return detail::expand_to_raw(coeffs_x, degree, u_scale, v_scale);
  }
  std::vector<double> raw_coeffs_y() const {
    return detail::expand_to_raw(coeffs_y, degree, u_scale, v_scale);
  }
};

inline ScreenPoint map_gaze(const CalibrationModel& model, IrisPoint p) {
  const auto basis = monomial_basis(model.normalize(p), model.degree);
  ScreenPoint out;
  for (std::size_t k = 0; k < basis.size(); ++k) {
    out.x += model.coeffs_x[k] * basis[k];
    out.y += model.coeffs_y[k] * basis[k];
  }
  return out;
}

/// Least-squares fit of both axes. Each axis is solved independently against
/// the same SVD of the normalized design matrix.
inline CalibrationModel fit_calibration(std::span<const CalibrationSample> samples, int degree = 3,
                                        TimestampMs fitted_at = 0) {
  if (degree < 1) throw Error(Errc::InvalidArgument, "degree must be >= 1");
  const std::size_t cols = basis_size(degree);
  if (samples.size() < cols) {
    throw Error(Errc::InsufficientSamples, std::to_string(samples.size()) + " samples for " +
                                               std::to_string(cols) + " coefficients");
  }

  double u_lo = samples[0].iris.u, u_hi = u_lo, v_lo = samples[0].iris.v, v_hi = v_lo;
  for (const auto& s : samples) {
    if (!std::isfinite(s.iris.u) || !std::isfinite(s.iris.v) || !is_finite(s.target)) {
      throw Error(Errc::InvalidArgument, "non-finite calibration sample");
    }
    u_lo = std::min(u_lo, s.iris.u);
    u_hi = std::max(u_hi, s.iris.u);
    v_lo = std::min(v_lo, s.iris.v);
    v_hi = std::max(v_hi, s.iris.v);
  }

  CalibrationModel model;
  model.degree = degree;
  model.u_scale = detail::scaling_for(u_lo, u_hi);
  model.v_scale = detail::scaling_for(v_lo, v_hi);
  model.fitted_at = fitted_at;

  const auto rows = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd design(rows, static_cast<Eigen::Index>(cols));
  Eigen::VectorXd tx(rows), ty(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& s = samples[static_cast<std::size_t>(r)];
    const auto basis = monomial_basis(model.normalize(s.iris), degree);
    for (std::size_t c = 0; c < cols; ++c) design(r, static_cast<Eigen::Index>(c)) = basis[c];
    tx(r) = s.target.x;
    ty(r) = s.target.y;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (!(smin > 0.0) || smax / smin > kDesignConditionLimit) {
    throw Error(Errc::DegenerateDesign, "design matrix condition number exceeds 1e10");
  }

  const Eigen::VectorXd ax = svd.solve(tx);
  const Eigen::VectorXd ay = svd.solve(ty);
  model.coeffs_x.assign(ax.data(), ax.data() + ax.size());
  model.coeffs_y.assign(ay.data(), ay.data() + ay.size());

  double sq = 0.0;
  for (const auto& s : samples) {
    const auto p = map_gaze(model, s.iris);
    sq += (p.x - s.target.x) * (p.x - s.target.x) + (p.y - s.target.y) * (p.y - s.target.y);
  }
  model.residual_rms = std::sqrt(sq / (2.0 * static_cast<double>(samples.size())));
  return model;
}

/// Uniform rows x cols grid of calibration targets in row-major order, inset
/// by `margin` of each screen dimension.
inline std::vector<ScreenPoint> calibration_point_layout(int n, double screen_w, double screen_h,
                                                         double margin = 0.05) {
  if (n < 1 || screen_w <= 0.0 || screen_h <= 0.0) {
    throw Error(Errc::InvalidArgument, "layout needs n >= 1 and a positive screen size");
  }
  if (n == 1) return {ScreenPoint{screen_w / 2.0, screen_h / 2.0}};

  // Pick the factorization whose cols/rows ratio is closest to the screen's
  // aspect ratio; reject anything more than 3x off.
  const double aspect = screen_w / screen_h;
  int best_cols = 0;
  double best_err = std::log(3.0) + 1e-12;
  for (int cols = 1; cols <= n; ++cols) {
    if (n % cols != 0) continue;
    const int rows = n / cols;
    const double err = std::abs(std::log(static_cast<double>(cols) / rows / aspect));
    if (err < best_err) {
      best_cols = cols;
      best_err = err;
    }
  }
  if (best_cols == 0) {
    throw Error(Errc::NotAGrid, std::to_string(n) + " points do not fit a grid for this screen");
  }
  const int cols = best_cols, rows = n / best_cols;

  const double mx = margin * screen_w, my = margin * screen_h;
  auto coord = [](int k, int count, double lo, double extent) {
    if (count == 1) return lo + extent / 2.0;
    return lo + extent * k / (count - 1);
  };
  std::vector<ScreenPoint> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      out.push_back({coord(c, cols, mx, screen_w - 2 * mx), coord(r, rows, my, screen_h - 2 * my)});
    }
  }
  return out;
}

/// Collects iris samples while the user fixates one calibration target.
/// Samples inside the settling window after the target appears are
/// discarded; the estimate is the mean of the most recent `keep` samples.
class FixationAverager {
 public:
  FixationAverager(TimestampMs shown_at, TimestampMs settle_ms = 500, std::size_t keep = 10)
      : shown_at_(shown_at), settle_ms_(settle_ms), keep_(keep) {}

  void add(TimestampMs t, IrisPoint p) {
    if (t - shown_at_ < settle_ms_) return;
    window_.push_back(p);
    if (window_.size() > keep_) window_.pop_front();
  }

  bool ready() const { return !window_.empty(); }
  std::size_t count() const { return window_.size(); }

  IrisPoint mean() const {
    if (window_.empty()) throw Error(Errc::InsufficientSamples, "no settled samples for this point");
    IrisPoint m;
    for (const auto& p : window_) {
      m.u += p.u;
      m.v += p.v;
    }
    m.u /= static_cast<double>(window_.size());
    m.v /= static_cast<double>(window_.size());
    return m;
  }

 private:
  TimestampMs shown_at_;
  TimestampMs settle_ms_;
  std::size_t keep_;
  std::deque<IrisPoint> window_;
};

// Model file: JSON document. Coefficients are listed in the basis order
// documented at the top of this header.

inline nlohmann::json to_json(const CalibrationModel& m) {
  return nlohmann::json{
      {"format", "gazegrasp.calibration.v1"},
      {"degree", m.degree},
      {"basis_order", "lexicographic (i,j) over u^i v^j on normalized inputs"},
      {"normalization",
       {{"u_center", m.u_scale.center},
        {"u_half_range", m.u_scale.half_range},
        {"v_center", m.v_scale.center},
        {"v_half_range", m.v_scale.half_range}}},
      {"coeffs_x", m.coeffs_x},
      {"coeffs_y", m.coeffs_y},
      {"residual_rms", m.residual_rms},
      {"fitted_at", m.fitted_at},
  };
}

inline CalibrationModel calibration_from_json(const nlohmann::json& j) {
  try {
    CalibrationModel m;
    m.degree = j.at("degree").get<int>();
    const auto& n = j.at("normalization");
    m.u_scale = {n.at("u_center").get<double>(), n.at("u_half_range").get<double>()};
    m.v_scale = {n.at("v_center").get<double>(), n.at("v_half_range").get<double>()};
    m.coeffs_x = j.at("coeffs_x").get<std::vector<double>>();
    m.coeffs_y = j.at("coeffs_y").get<std::vector<double>>();
    m.residual_rms = j.at("residual_rms").get<double>();
    m.fitted_at = j.value("fitted_at", TimestampMs{0});
    if (m.degree < 1 || m.coeffs_x.size() != basis_size(m.degree) ||
        m.coeffs_y.size() != basis_size(m.degree)) {
      throw Error(Errc::ParseError, "coefficient count does not match degree");
    }
    if (!(m.residual_rms >= 0.0) || !(m.u_scale.half_range > 0.0) || !(m.v_scale.half_range > 0.0)) {
      throw Error(Errc::ParseError, "invalid calibration model values");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
}

inline void save_calibration(const CalibrationModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  out << to_json(m).dump(2) << '\n';
}

inline CalibrationModel load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
  return calibration_from_json(j);
}

/// Samples file: one fixation per line, "u v x y", '#' starts a comment.
inline std::vector<CalibrationSample> parse_calibration_samples(std::istream& in) {
  std::vector<CalibrationSample> samples;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    CalibrationSample s;
    if (!(ls >> s.iris.u)) continue;
    std::string extra;
    if (!(ls >> s.iris.v >> s.target.x >> s.target.y) || (ls >> extra)) {
      throw Error(Errc::ParseError, "line " + std::to_string(lineno) + ": expected 'u v x y'");
    }
    samples.push_back(s);
  }
  return samples;
}

}  // namespace gazegrasp
