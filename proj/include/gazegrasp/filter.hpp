#pragma once

// Constant-velocity Kalman filter for the on-screen gaze cursor.
//
// State [x, y, vx, vy] in px and px/s. Measurements observe position only.
// Process noise is the discretized white-noise-acceleration model with
// intensity q (px^2/s^3); measurement noise is r*I (px^2).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "gazegrasp/error.hpp"
#include "gazegrasp/types.hpp"

namespace gazegrasp {

struct FilterParams {
  double q = 50.0;
  double r = 25.0;
  double p0 = 1e3;
  double saccade_px = 200.0;  // innovation norm that triggers a velocity reset
  double min_dt_s = 1e-4;
  double max_dt_s = 0.5;

  void validate() const {
    // q = 0 is allowed: it is the static-position limit used in diagnostics.
    if (!(q >= 0.0) || !(r > 0.0) || !(p0 > 0.0) || !(saccade_px > 0.0) || !(min_dt_s > 0.0) ||
        !(max_dt_s >= min_dt_s)) {
      throw Error(Errc::InvalidArgument, "filter parameters out of range");
    }
  }
};

struct FilterState {
  Eigen::Vector4d x_hat = Eigen::Vector4d::Zero();
  Eigen::Matrix4d P = Eigen::Matrix4d::Identity();
  TimestampMs last_t = 0;
  FilterParams params;

  ScreenPoint position() const { return {x_hat(0), x_hat(1)}; }
};

struct FilterStep {
  FilterState state;
  ScreenPoint smoothed;
  bool saccade_reset = false;
};

inline FilterState filter_init(ScreenPoint z0, TimestampMs t0, const FilterParams& params = {}) {
  params.validate();
  FilterState s;
  s.x_hat << z0.x, z0.y, 0.0, 0.0;
  s.P = params.p0 * Eigen::Matrix4d::Identity();
  s.last_t = t0;
  s.params = params;
  return s;
}

inline double min_symmetric_eigenvalue(const Eigen::Matrix4d& P) {
  const Eigen::Matrix4d sym = 0.5 * (P + P.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline FilterStep filter_step(const FilterState& s, ScreenPoint z, TimestampMs t) {
  if (t < s.last_t) throw Error(Errc::NonMonotonicTime, "measurement older than filter state");
  const auto& prm = s.params;
  const double dt = std::clamp(static_cast<double>(t - s.last_t) / 1000.0, prm.min_dt_s, prm.max_dt_s);

  Eigen::Matrix4d A = Eigen::Matrix4d::Identity();
  A(0, 2) = dt;
  A(1, 3) = dt;

  const double dt2 = dt * dt, dt3 = dt2 * dt;
  Eigen::Matrix4d Q = Eigen::Matrix4d::Zero();
  for (int axis = 0; axis < 2; ++axis) {
    Q(axis, axis) = prm.q * dt3 / 3.0;
    Q(axis, axis + 2) = prm.q * dt2 / 2.0;
    Q(axis + 2, axis) = prm.q * dt2 / 2.0;
    Q(axis + 2, axis + 2) = prm.q * dt;
  }

  FilterStep out;
  out.state = s;
  out.state.last_t = t;
  Eigen::Vector4d x = A * s.x_hat;
  Eigen::Matrix4d P = A * s.P * A.transpose() + Q;

  Eigen::Matrix<double, 2, 4> H = Eigen::Matrix<double, 2, 4>::Zero();
  H(0, 0) = 1.0;
  H(1, 1) = 1.0;
  const Eigen::Vector2d meas(z.x, z.y);

  Eigen::Vector2d innovation = meas - H * x;
  if (innovation.norm() > prm.saccade_px) {
    // Saccade: drop the momentum and loosen the position prior so the
    // estimate jumps instead of overshooting.
    x(2) = 0.0;
    x(3) = 0.0;
    const double pvx = P(2, 2), pvy = P(3, 3);
    P.row(2).setZero();
    P.row(3).setZero();
    P.col(2).setZero();
    P.col(3).setZero();
    P(2, 2) = pvx;
    P(3, 3) = pvy;
    P(0, 0) *= 10.0;
    P(1, 1) *= 10.0;
    P(0, 1) *= 10.0;
    P(1, 0) *= 10.0;
    out.saccade_reset = true;
  }

  const Eigen::Matrix2d R = prm.r * Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d S = H * P * H.transpose() + R;
  const Eigen::Matrix<double, 4, 2> K = P * H.transpose() * S.inverse();
  x += K * innovation;

  // Joseph form keeps P symmetric PSD under rounding.
  const Eigen::Matrix4d IKH = Eigen::Matrix4d::Identity() - K * H;
  P = IKH * P * IKH.transpose() + K * R * K.transpose();
  P = (0.5 * (P + P.transpose())).eval();

  out.state.x_hat = x;
  out.state.P = P;
  out.smoothed = out.state.position();
  return out;
}

/// Empirical var(smoothed) / var(raw) for a stationary point observed with
/// white noise of sigma `noise_px` at `rate_hz`, over 10,000 steps.
inline double filter_variance_gain(const FilterParams& params, double rate_hz,
                                   std::uint64_t seed = 7, double noise_px = 10.0) {
  if (!(rate_hz > 0.0)) throw Error(Errc::InvalidArgument, "rate must be positive");
  constexpr int kSteps = 10'000;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_px);
  const ScreenPoint truth{500.0, 500.0};
  const double period_ms = 1000.0 / rate_hz;

  auto sample = [&] { return ScreenPoint{truth.x + noise(rng), truth.y + noise(rng)}; };

  ScreenPoint z = sample();
  FilterState s = filter_init(z, 0, params);
  // Accumulate deviations from the true point to keep the sums well scaled.
  double dr = z.x - truth.x;
  double sum_raw = dr, sum_raw2 = dr * dr, sum_out = dr, sum_out2 = dr * dr;
  for (int k = 1; k < kSteps; ++k) {
    z = sample();
    const auto t = static_cast<TimestampMs>(std::llround(k * period_ms));
    auto step = filter_step(s, z, t);
    s = step.state;
    dr = z.x - truth.x;
    const double dout = step.smoothed.x - truth.x;
    sum_raw += dr;
    sum_raw2 += dr * dr;
    sum_out += dout;
    sum_out2 += dout * dout;
  }
  const double n = kSteps;
  const double var_raw = sum_raw2 / n - (sum_raw / n) * (sum_raw / n);
  const double var_out = sum_out2 / n - (sum_out / n) * (sum_out / n);
  return var_out / var_raw;
}

}  // namespace gazegrasp
