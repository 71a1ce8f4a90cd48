#include "ead/stats.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ead::stats {

double Accumulator::stddev() const { return std::sqrt(variance()); }

double Accumulator::std_error() const {
  return n_ > 0 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
}

double chi_square_pvalue(double statistic, int dof) {
  if (dof <= 0) return 1.0;
  if (statistic <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * statistic);
}

namespace {

// Pool low-expectation bins: sort bin ids by expected count and merge from the
// smallest upward until every pooled bin reaches the floor.
struct PooledBins {
  std::vector<double> expected;
  std::vector<std::vector<int>> members;
};

PooledBins pool_bins(const std::vector<double>& expected, double min_expected) {
  std::vector<int> order(expected.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return expected[a] < expected[b]; });

  PooledBins out;
  std::vector<int> pending;
  double pending_mass = 0.0;
  for (int id : order) {
    pending.push_back(id);
    pending_mass += expected[id];
    if (pending_mass >= min_expected) {
      out.expected.push_back(pending_mass);
      out.members.push_back(pending);
      pending.clear();
      pending_mass = 0.0;
    }
  }
  if (!pending.empty()) {
    if (out.expected.empty()) {
      out.expected.push_back(pending_mass);
      out.members.push_back(pending);
    } else {
      // Fold the leftovers into the last (largest) pooled bin.
      out.expected.back() += pending_mass;
      auto& last = out.members.back();
      last.insert(last.end(), pending.begin(), pending.end());
    }
  }
  return out;
}

}  // namespace

GofResult chi_square_gof(const std::vector<long long>& observed,
                         const std::vector<double>& expected,
                         double min_expected) {
  if (observed.size() != expected.size() || observed.empty()) {
    throw std::invalid_argument("chi_square_gof: size mismatch");
  }
  PooledBins pooled = pool_bins(expected, min_expected);
  GofResult res;
  res.dof = static_cast<int>(pooled.expected.size()) - 1;
  for (std::size_t b = 0; b < pooled.expected.size(); ++b) {
    long long obs = 0;
    for (int id : pooled.members[b]) obs += observed[id];
    double diff = static_cast<double>(obs) - pooled.expected[b];
    res.statistic += diff * diff / pooled.expected[b];
  }
  res.p_value = chi_square_pvalue(res.statistic, res.dof);
  return res;
}

GofResult chi_square_two_sample(const std::vector<long long>& a,
                                const std::vector<long long>& b,
                                double min_expected) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("chi_square_two_sample: size mismatch");
  }
  double na = static_cast<double>(std::accumulate(a.begin(), a.end(), 0LL));
  double nb = static_cast<double>(std::accumulate(b.begin(), b.end(), 0LL));
  double n = na + nb;

  std::vector<double> col_mass(a.size());
  for (std::size_t c = 0; c < a.size(); ++c) {
    col_mass[c] = static_cast<double>(a[c] + b[c]);
  }
  // Pool on the smaller row's expectation.
  std::vector<double> pool_on(a.size());
  double min_row = std::min(na, nb);
  for (std::size_t c = 0; c < a.size(); ++c) {
    pool_on[c] = col_mass[c] * min_row / n;
  }
  PooledBins pooled = pool_bins(pool_on, min_expected);

  GofResult res;
  res.dof = static_cast<int>(pooled.expected.size()) - 1;
  for (std::size_t bin = 0; bin < pooled.members.size(); ++bin) {
    long long oa = 0, ob = 0;
    for (int id : pooled.members[bin]) {
      oa += a[id];
      ob += b[id];
    }
    double mass = static_cast<double>(oa + ob);
    if (mass <= 0.0) continue;
    double ea = mass * na / n;
    double eb = mass * nb / n;
    res.statistic += (oa - ea) * (oa - ea) / ea;
    res.statistic += (ob - eb) * (ob - eb) / eb;
  }
  res.p_value = chi_square_pvalue(res.statistic, res.dof);
  return res;
}

KsResult ks_test(std::vector<double> samples,
                 const std::function<double(double)>& cdf) {
  if (samples.empty()) throw std::invalid_argument("ks_test: empty sample");
  std::sort(samples.begin(), samples.end());
  double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double f = cdf(samples[i]);
    double lo = static_cast<double>(i) / n;
    double hi = static_cast<double>(i + 1) / n;
    d = std::max(d, std::max(std::abs(f - lo), std::abs(hi - f)));
  }
  // Asymptotic Kolmogorov distribution with the usual finite-n correction.
  double en = std::sqrt(n);
  double lambda = (en + 0.12 + 0.11 / en) * d;
  double p = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    double term = std::exp(-2.0 * j * j * lambda * lambda);
    p += 2.0 * sign * term;
    sign = -sign;
    if (term < 1e-12) break;
  }
  p = std::clamp(p, 0.0, 1.0);
  return KsResult{d, p};
}

}  // namespace ead::stats
