#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "gazegrasp/filter.hpp"

using namespace gazegrasp;
using Catch::Matchers::WithinAbs;

TEST_CASE("filter_init", "[filter]") {
  FilterParams prm;
  const auto s = filter_init({100, 200}, 5, prm);
  CHECK(s.x_hat == Eigen::Vector4d(100, 200, 0, 0));
  CHECK(s.P == 1e3 * Eigen::Matrix4d::Identity());
  CHECK(s.last_t == 5);
  CHECK(min_symmetric_eigenvalue(s.P) > 0);

  prm.r = 0;
  REQUIRE_THROWS_AS(filter_init({0, 0}, 0, prm), Error);
}

TEST_CASE("two-step scalar hand oracle", "[filter]") {
  FilterParams prm;
  prm.q = 0;
  prm.r = 1;
  prm.p0 = 1;
  prm.max_dt_s = 1.0;

  // One axis of the constant-velocity model: state (x, v), P0 = I, first
  // measurement 0 at t = 0, second measurement 1 at t = 1 s.
  const double dt = 1.0;
  double x = 0, v = 0, p11 = 1, p12 = 0, p22 = 1;
  // predict: A P A^T with A = [[1, dt], [0, 1]]
  const double a11 = p11 + 2 * dt * p12 + dt * dt * p22, a12 = p12 + dt * p22, a22 = p22;
  x += dt * v;
  const double s = a11 + prm.r;
  const double k1 = a11 / s, k2 = a12 / s;
  const double innov = 1.0 - x;
  const double x_hand = x + k1 * innov;
  const double v_hand = v + k2 * innov;
  (void)a22;
  CHECK_THAT(x_hand, WithinAbs(2.0 / 3.0, 1e-15));

  auto st = filter_init({0, 0}, 0, prm);
  const auto step = filter_step(st, {1, 0}, 1000);
  CHECK_THAT(step.smoothed.x, WithinAbs(x_hand, 1e-9));
  CHECK_THAT(step.state.x_hat(2), WithinAbs(v_hand, 1e-9));
  CHECK_THAT(step.smoothed.y, WithinAbs(0.0, 1e-12));
}

TEST_CASE("constant input converges", "[filter]") {
  auto s = filter_init({50, 50}, 0);
  std::vector<double> err;
  for (int k = 1; k <= 60; ++k) {
    const auto step = filter_step(s, {50, 50}, k * 1000 / 30);
    s = step.state;
    err.push_back(std::hypot(step.smoothed.x - 50, step.smoothed.y - 50));
  }
  CHECK(err.back() < 0.5);
  for (std::size_t k = 5; k + 1 < err.size(); ++k) CHECK(err[k + 1] <= err[k]);

  // Starting away from the signal.
  s = filter_init({80, 20}, 0);
  ScreenPoint out;
  for (int k = 1; k <= 60; ++k) {
    const auto step = filter_step(s, {50, 50}, k * 1000 / 30);
    s = step.state;
    out = step.smoothed;
  }
  CHECK(std::hypot(out.x - 50, out.y - 50) < 0.5);
}

TEST_CASE("tiny measurement noise passes measurements through", "[filter]") {
  FilterParams prm;
  prm.r = 1e-9;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(0, 1000);
  auto s = filter_init({pos(rng), pos(rng)}, 0, prm);
  for (int k = 1; k <= 200; ++k) {
    const ScreenPoint z{pos(rng), pos(rng)};
    const auto step = filter_step(s, z, k * 33);
    s = step.state;
    CHECK_THAT(step.smoothed.x, WithinAbs(z.x, 1e-3));
    CHECK_THAT(step.smoothed.y, WithinAbs(z.y, 1e-3));
  }
}

TEST_CASE("covariance stays symmetric PSD over 1e5 random steps", "[filter]") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pos(-500, 2500);
  std::uniform_int_distribution<int> gap(0, 700);
  std::uniform_real_distribution<double> small(0, 5);
  FilterParams prm;
  auto s = filter_init({960, 540}, 0, prm);
  TimestampMs t = 0;
  double worst = 1e300, asym = 0;
  for (int k = 0; k < 100'000; ++k) {
    t += gap(rng);
    // Mix fixations and jumps so both the filtering and the saccade branch run.
    const ScreenPoint z = (k % 50 == 0) ? ScreenPoint{pos(rng), pos(rng)}
                                        : ScreenPoint{s.x_hat(0) + small(rng), s.x_hat(1) + small(rng)};
    s = filter_step(s, z, t).state;
    worst = std::min(worst, min_symmetric_eigenvalue(s.P));
    asym = std::max(asym, (s.P - s.P.transpose()).cwiseAbs().maxCoeff());
    if (k % 10'000 == 9'999) s.params.q = 1.0 + k / 1000.0;
  }
  CHECK(worst >= -1e-9);
  CHECK(asym == 0.0);
}

TEST_CASE("time must not go backwards", "[filter]") {
  const auto s = filter_init({0, 0}, 1000);
  REQUIRE_THROWS_MATCHES(filter_step(s, {1, 1}, 999), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return e.code() == Errc::NonMonotonicTime;
                         }));
  // Equal timestamps are allowed; dt is clamped to the minimum.
  REQUIRE_NOTHROW(filter_step(s, {1, 1}, 1000));
}

TEST_CASE("saccade resets velocity", "[filter]") {
  auto s = filter_init({100, 100}, 0);
  for (int k = 1; k <= 30; ++k) s = filter_step(s, {100 + k * 2.0, 100}, k * 33).state;
  const auto step = filter_step(s, {700, 400}, 31 * 33);
  CHECK(step.saccade_reset);
  const double before = std::hypot(700 - s.x_hat(0), 400 - s.x_hat(1));
  const double after = std::hypot(700 - step.smoothed.x, 400 - step.smoothed.y);
  CHECK(after < 0.5 * before);
  CHECK_FALSE(filter_step(s, {162, 100}, 31 * 33).saccade_reset);
}

TEST_CASE("variance gain", "[filter]") {
  const double def = filter_variance_gain({}, 30.0);
  CHECK(def < 0.5);
  CHECK(def > 0.0);

  FilterParams pass;
  pass.r = 1e-9;
  CHECK_THAT(filter_variance_gain(pass, 30.0), WithinAbs(1.0, 0.05));

  FilterParams still;
  still.q = 0;
  CHECK(filter_variance_gain(still, 30.0) < 0.05);

  REQUIRE_THROWS_AS(filter_variance_gain({}, 0.0), Error);
}

TEST_CASE("filter is deterministic", "[filter]") {
  auto run = [] {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0, 20);
    auto s = filter_init({500, 500}, 0);
    std::vector<double> out;
    for (int k = 1; k < 2000; ++k) {
      const auto step = filter_step(s, {500 + n(rng), 500 + n(rng)}, k * 33);
      s = step.state;
      out.push_back(step.smoothed.x);
      out.push_back(step.smoothed.y);
    }
    return out;
  };
  CHECK(run() == run());
}
