#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace ead::stats {

/// Streaming mean/variance (Welford).
class Accumulator {
 public:
  void add(double x) {
    ++n_;
    double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }

  long long count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double stddev() const;
  double std_error() const;

 private:
  long long n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct GofResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

/// Upper-tail chi-square probability P(X >= stat) for `dof` degrees of freedom.
double chi_square_pvalue(double statistic, int dof);

/// Pearson GOF against expected counts. Bins with expected count below
/// `min_expected` are pooled into their smallest neighbor by expected mass so
/// the asymptotic chi-square approximation stays honest.
GofResult chi_square_gof(const std::vector<long long>& observed,
                         const std::vector<double>& expected,
                         double min_expected = 5.0);

/// Two-sample homogeneity test: were the two count vectors drawn from the
/// same categorical distribution?
GofResult chi_square_two_sample(const std::vector<long long>& a,
                                const std::vector<long long>& b,
                                double min_expected = 5.0);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against a CDF (asymptotic p-value).
KsResult ks_test(std::vector<double> samples,
                 const std::function<double(double)>& cdf);

}  // namespace ead::stats
