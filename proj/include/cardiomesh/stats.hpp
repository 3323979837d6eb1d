#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "cardiomesh/core.hpp"

namespace cardio {

namespace stats_detail {

// Regularized incomplete beta I_x(a, b) by Lentz continued fraction.
inline double betacf(double a, double b, double x) {
  const double tiny = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-14) break;
  }
  return h;
}

inline double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                    a * std::log(x) + b * std::log(1.0 - x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(b) - std::lgamma(a) +
                        b * std::log(1.0 - x) + a * std::log(x)) *
                   betacf(b, a, 1.0 - x) / b;
}

// Two-sided p for a t statistic with nu degrees of freedom.
inline double t_pvalue(double t, double nu) {
  double x = nu / (nu + t * t);
  return reg_inc_beta(nu / 2.0, 0.5, x);
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

inline std::vector<double> midranks(const std::vector<double>& pooled_sorted) {
  // Ranks (1-based) with ties sharing the average rank.
  std::vector<double> r(pooled_sorted.size());
  size_t i = 0;
  while (i < pooled_sorted.size()) {
    size_t j = i;
    while (j + 1 < pooled_sorted.size() && pooled_sorted[j + 1] == pooled_sorted[i]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) r[k] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace stats_detail

struct OlsResult {
  double slope = 0, intercept = 0, t_statistic = 0, p_value = 1;
};

inline OlsResult ols_regression(const std::vector<double>& x, const std::vector<double>& y) {
  size_t n = x.size();
  require(n == y.size(), "ols_regression: length mismatch");
  require(n >= 3, "ols_regression: need at least 3 points");
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  require(sxx > 0, "ols_regression: constant x");
  OlsResult r;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double sse = 0;
  for (size_t i = 0; i < n; ++i) {
    double e = y[i] - (r.intercept + r.slope * x[i]);
    sse += e * e;
  }
  double nu = static_cast<double>(n) - 2.0;
  double se2 = sse / nu / sxx;
  if (se2 <= 0) {
    // Perfect fit: slope is exactly determined.
    r.t_statistic = r.slope == 0 ? 0 : std::numeric_limits<double>::infinity();
    r.p_value = r.slope == 0 ? 1.0 : 0.0;
    return r;
  }
  r.t_statistic = r.slope / std::sqrt(se2);
  r.p_value = stats_detail::t_pvalue(r.t_statistic, nu);
  return r;
}

struct MannWhitneyResult {
  double u = 0;  // U of the first sample, midrank ties
  double p_value = 1;
  bool exact = false;
};

namespace stats_detail {

inline double u_statistic(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<size_t> order(pooled.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t p, size_t q) { return pooled[p] < pooled[q]; });
  std::vector<double> sorted(pooled.size());
  for (size_t i = 0; i < order.size(); ++i) sorted[i] = pooled[order[i]];
  std::vector<double> rank = midranks(sorted);
  double ra = 0;
  for (size_t i = 0; i < order.size(); ++i)
    if (order[i] < a.size()) ra += rank[i];
  double n = static_cast<double>(a.size());
  return ra - n * (n + 1.0) / 2.0;
}

}  // namespace stats_detail

inline MannWhitneyResult mann_whitney_u(const std::vector<double>& a,
                                        const std::vector<double>& b) {
  require(!a.empty() && !b.empty(), "mann_whitney_u: empty sample");
  size_t n = a.size(), m = b.size(), nm = n + m;
  MannWhitneyResult r;
  r.u = stats_detail::u_statistic(a, b);
  double mean_u = static_cast<double>(n) * static_cast<double>(m) / 2.0;

  if (nm <= 20) {
    // Exact permutation distribution: enumerate all C(n+m, n) labelings of
    // the pooled values; two-sided p = P(|U' - nm/2| >= |U - nm/2|).
    r.exact = true;
    std::vector<double> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    std::vector<int> pick(nm, 0);
    std::fill(pick.begin(), pick.begin() + n, 1);
    std::sort(pick.begin(), pick.end());  // start from lowest permutation
    long total = 0, extreme = 0;
    double dev = std::abs(r.u - mean_u);
    do {
      std::vector<double> aa, bb;
      for (size_t i = 0; i < nm; ++i) (pick[i] ? aa : bb).push_back(pooled[i]);
      double u = stats_detail::u_statistic(aa, bb);
      ++total;
      if (std::abs(u - mean_u) >= dev - 1e-12) ++extreme;
    } while (std::next_permutation(pick.begin(), pick.end()));
    r.p_value = static_cast<double>(extreme) / static_cast<double>(total);
    return r;
  }

  // Normal approximation with tie correction.
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  double tie_sum = 0;
  size_t i = 0;
  while (i < pooled.size()) {
    size_t j = i;
    while (j + 1 < pooled.size() && pooled[j + 1] == pooled[i]) ++j;
    double t = static_cast<double>(j - i + 1);
    tie_sum += t * t * t - t;
    i = j + 1;
  }
  double nn = static_cast<double>(nm);
  double var = static_cast<double>(n) * static_cast<double>(m) / 12.0 *
               ((nn * nn * nn - nn - tie_sum) / (nn * (nn - 1.0)));
  if (var <= 0) {
    r.p_value = 1.0;  // all values tied
    return r;
  }
  double z = (r.u - mean_u) / std::sqrt(var);
  r.p_value = 2.0 * stats_detail::normal_sf(std::abs(z));
  if (r.p_value > 1.0) r.p_value = 1.0;
  return r;
}

struct BlandAltmanResult {
  double bias = 0, lower_loa = 0, upper_loa = 0;
};

inline BlandAltmanResult bland_altman(const std::vector<double>& a,
                                      const std::vector<double>& b) {
  require(a.size() == b.size(), "bland_altman: length mismatch");
  require(a.size() >= 2, "bland_altman: need at least 2 pairs");
  size_t n = a.size();
  double mean = 0;
  for (size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0;
  for (size_t i = 0; i < n; ++i) {
    double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  double sd = std::sqrt(ss / (static_cast<double>(n) - 1.0));
  return {mean, mean - 1.96 * sd, mean + 1.96 * sd};
}

}  // namespace cardio
