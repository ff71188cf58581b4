#pragma once

// One-way and single-factor repeated-measures ANOVA, with p-values from the
// F distribution via the regularized incomplete beta function.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string_view>
#include <vector>

#include "gazegrasp/error.hpp"

namespace gazegrasp::stats {

/// Regularized incomplete beta I_x(a, b), continued fraction (modified Lentz).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw Error(Errc::InvalidArgument, "beta parameters must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;

  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);

  // The continued fraction converges fast for x < (a+1)/(a+b+2); use the
  // symmetry I_x(a,b) = 1 - I_{1-x}(b,a) otherwise.
  auto cf = [](double a_, double b_, double x_) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    const double qab = a_ + b_, qap = a_ + 1.0, qam = a_ - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x_ / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 10'000; ++m) {
      const double m2 = 2.0 * m;
      double aa = m * (b_ - m) * x_ / ((qam + m2) * (a_ + m2));
      d = 1.0 + aa * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + aa / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      h *= d * c;
      aa = -(a_ + m) * (qab + m) * x_ / ((a_ + m2) * (qap + m2));
      d = 1.0 + aa * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + aa / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      const double del = d * c;
      h *= del;
      if (std::abs(del - 1.0) < eps) break;
    }
    return h;
  };

  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(log_front) * cf(a, b, x) / a;
  return 1.0 - std::exp(log_front) * cf(b, a, 1.0 - x) / b;
}

/// P(F > f) for F ~ F(d1, d2).
inline double f_survival(double f, double d1, double d2) {
  if (!(d1 > 0.0) || !(d2 > 0.0)) throw Error(Errc::InvalidArgument, "degrees of freedom must be positive");
  if (std::isnan(f)) return std::numeric_limits<double>::quiet_NaN();
  if (f <= 0.0) return 1.0;
  if (std::isinf(f)) return 0.0;
  return incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f));
}

enum class AnovaKind { OneWay, RepeatedMeasures };

inline std::string_view to_string(AnovaKind k) {
  return k == AnovaKind::OneWay ? "one_way" : "repeated_measures";
}

struct AnovaResult {
  AnovaKind kind = AnovaKind::OneWay;
  double F = 0.0;
  int df1 = 0;
  int df2 = 0;
  double p = 1.0;
  double ss_effect = 0.0;
  double ss_error = 0.0;
  std::vector<double> group_means;
};

namespace detail {

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// F with the zero-error-variance convention: equal means -> F = 0, p = 1;
// otherwise F = +inf, p = 0.
inline void finish(AnovaResult& r, double ms_effect, double ms_error) {
  if (ms_error > 0.0) {
    r.F = ms_effect / ms_error;
    r.p = f_survival(r.F, r.df1, r.df2);
    return;
  }
  const bool means_differ = r.ss_effect > 0.0;
  r.F = means_differ ? std::numeric_limits<double>::infinity() : 0.0;
  r.p = means_differ ? 0.0 : 1.0;
}

}  // namespace detail

inline AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw Error(Errc::InvalidArgument, "one-way ANOVA needs at least 2 groups");
  std::size_t n_total = 0;
  double grand_sum = 0.0;
  for (const auto& g : groups) {
    if (g.size() < 2) throw Error(Errc::InvalidArgument, "each group needs at least 2 values");
    n_total += g.size();
    grand_sum += std::accumulate(g.begin(), g.end(), 0.0);
  }
  const double grand_mean = grand_sum / static_cast<double>(n_total);

  AnovaResult r;
  r.kind = AnovaKind::OneWay;
  for (const auto& g : groups) {
    const double m = detail::mean(g);
    r.group_means.push_back(m);
    r.ss_effect += static_cast<double>(g.size()) * (m - grand_mean) * (m - grand_mean);
    for (double x : g) r.ss_error += (x - m) * (x - m);
  }
  const auto k = static_cast<int>(groups.size());
  r.df1 = k - 1;
  r.df2 = static_cast<int>(n_total) - k;
  detail::finish(r, r.ss_effect / r.df1, r.ss_error / r.df2);
  return r;
}

/// `table[subject][condition]`. The error term is the condition x subject
/// interaction.
inline AnovaResult repeated_measures_anova(const std::vector<std::vector<double>>& table) {
  if (table.size() < 2) throw Error(Errc::InvalidArgument, "need at least 2 subjects");
  const std::size_t k = table.front().size();
  if (k < 2) throw Error(Errc::InvalidArgument, "need at least 2 conditions");
  for (const auto& row : table) {
    if (row.size() != k) throw Error(Errc::IncompleteMatrix, "every subject needs every condition");
    for (double x : row)
      if (!std::isfinite(x)) throw Error(Errc::IncompleteMatrix, "missing or non-finite cell");
  }
  const std::size_t n = table.size();

  double grand = 0.0;
  for (const auto& row : table) grand += std::accumulate(row.begin(), row.end(), 0.0);
  grand /= static_cast<double>(n * k);

  std::vector<double> cond_means(k, 0.0);
  for (const auto& row : table)
    for (std::size_t j = 0; j < k; ++j) cond_means[j] += row[j];
  for (auto& m : cond_means) m /= static_cast<double>(n);

  double ss_total = 0.0, ss_subject = 0.0, ss_condition = 0.0;
  for (const auto& row : table) {
    const double sm = detail::mean(row);
    ss_subject += static_cast<double>(k) * (sm - grand) * (sm - grand);
    for (double x : row) ss_total += (x - grand) * (x - grand);
  }
  for (double m : cond_means) ss_condition += static_cast<double>(n) * (m - grand) * (m - grand);

  AnovaResult r;
  r.kind = AnovaKind::RepeatedMeasures;
  r.group_means = cond_means;
  r.ss_effect = ss_condition;
  r.ss_error = std::max(0.0, ss_total - ss_subject - ss_condition);
  r.df1 = static_cast<int>(k) - 1;
  r.df2 = static_cast<int>((k - 1) * (n - 1));
  detail::finish(r, r.ss_effect / r.df1, r.ss_error / r.df2);
  return r;
}

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double median = 0.0;
  double sd = 0.0;  // sample standard deviation
  double q1 = 0.0;
  double q3 = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Linear-interpolation quantile of sorted data (type 7).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline Summary summarize(std::vector<double> values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.mean = detail::mean(values);
  s.median = quantile_sorted(values, 0.5);
  s.q1 = quantile_sorted(values, 0.25);
  s.q3 = quantile_sorted(values, 0.75);
  s.min = values.front();
  s.max = values.back();
  if (values.size() > 1) {
    double sq = 0.0;
    for (double x : values) sq += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

/// Exact two-sided sign test p-value for `positives` successes out of `n`.
inline double sign_test_p(int positives, int n) {
  if (n <= 0) return 1.0;
  const int k = std::min(positives, n - positives);
  double tail = 0.0;
  for (int i = 0; i <= k; ++i) {
    tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
  }
  return std::min(1.0, 2.0 * tail);
}

}  // namespace gazegrasp::stats
