#pragma once

// Independent oracles used by the test suites: quadrature, brute-force
// reference computations, and empirical-distribution statistics. Nothing in
// here may call the implementation paths it is used to check.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

namespace oracles {

// Adaptive Simpson quadrature.
inline double adaptive_simpson_rec(const std::function<double(double)>& f, double a, double b,
                                   double fa, double fm, double fb, double whole, double tol,
                                   int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-12, int depth = 40) {
  double m = 0.5 * (a + b);
  double fa = f(a), fm = f(m), fb = f(b);
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth);
}

// One-sample Kolmogorov-Smirnov statistic against a CDF.
inline double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    double c = cdf(sample[i]);
    d = std::max(d, std::abs(c - i / n));
    d = std::max(d, std::abs(c - (i + 1) / n));
  }
  return d;
}

// Two-sample KS statistic.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j])
      ++i;
    else
      ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

// Asymptotic KS critical value at significance level alpha.
inline double ks_critical(double alpha, double n) {
  return std::sqrt(-0.5 * std::log(alpha / 2.0)) / std::sqrt(n);
}

inline double ks_two_sample_critical(double alpha, double n1, double n2) {
  return std::sqrt(-0.5 * std::log(alpha / 2.0)) * std::sqrt((n1 + n2) / (n1 * n2));
}

// Regularized incomplete beta function (continued fraction), for Beta CDFs.
inline double incbeta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incbeta(b, a, 1.0 - x);
  double lbeta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  double front = std::exp(std::log(x) * a + std::log1p(-x) * b - lbeta) / a;
  // Lentz's continued fraction
  double f = 1.0, c = 1.0, d = 0.0;
  for (int i = 0; i <= 400; ++i) {
    int m = i / 2;
    double numerator;
    if (i == 0)
      numerator = 1.0;
    else if (i % 2 == 0)
      numerator = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
    else
      numerator = -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
    d = 1.0 + numerator * d;
    if (std::abs(d) < 1e-30) d = 1e-30;
    d = 1.0 / d;
    c = 1.0 + numerator / c;
    if (std::abs(c) < 1e-30) c = 1e-30;
    f *= c * d;
    if (std::abs(1.0 - c * d) < 1e-14) break;
  }
  return front * (f - 1.0);
}

inline double beta_cdf(double x, double a, double b) { return incbeta(a, b, x); }

// Empirical density on a uniform bin grid.
inline std::vector<double> histogram_density(const std::vector<double>& sample, double lo,
                                             double hi, int bins) {
  std::vector<double> dens(bins, 0.0);
  double width = (hi - lo) / bins;
  for (double v : sample) {
    int b = static_cast<int>((v - lo) / width);
    if (b >= 0 && b < bins) dens[b] += 1.0;
  }
  for (auto& d : dens) d /= sample.size() * width;
  return dens;
}

// Average of f over each bin of a uniform grid (Simpson on each bin), for
// bias-free comparison against histogram densities.
inline std::vector<double> bin_averaged(const std::function<double(double)>& f, double lo,
                                        double hi, int bins) {
  std::vector<double> avg(bins);
  double w = (hi - lo) / bins;
  for (int k = 0; k < bins; ++k) {
    double a = lo + k * w;
    avg[k] = integrate(f, a, a + w, 1e-12) / w;
  }
  return avg;
}

// Numeric density of the Polya(a, b) distribution (the infinite convolution
// of exponentials scaled by c_k = 2/((a+k)(b+k))) via characteristic-function
// inversion: phi(s) = prod_k (1 - i s c_k)^{-1}, tabulated on a uniform
// s-grid once, then p(x) = (1/pi) Int_0^inf Re[e^{-isx} phi(s)] ds by
// composite Simpson. Entirely independent of the library's mixture sampler.
class PolyaDensityTable {
 public:
  PolyaDensityTable(double a, double b, double s_max = 250.0, int n = 40000)
      : a_(a), b_(b), s_max_(s_max), n_(n) {
    // tail power sums of c_k beyond the exactly-handled prefix
    const int k0 = 256;
    double s1;
    if (std::abs(a - b) < 1e-9)
      s1 = 2.0 * boost::math::trigamma(a + k0);
    else
      s1 = 2.0 * (boost::math::digamma(a + k0) - boost::math::digamma(b + k0)) / (a - b);
    double s2 = 0.0, s3 = 0.0, s4 = 0.0;
    for (int k = k0; k < 1000000; ++k) {
      double c = 2.0 / ((a + k) * (b + k));
      double c2 = c * c;
      s2 += c2;
      s3 += c2 * c;
      s4 += c2 * c2;
    }
    phi_.resize(n_ + 1);
    double ds = s_max_ / n_;
    for (int j = 0; j <= n_; ++j) {
      double s = j * ds;
      std::complex<double> logphi(0.0, 0.0);
      for (int k = 0; k < k0; ++k) {
        double c = 2.0 / ((a + k) * (b + k));
        logphi -= std::log(std::complex<double>(1.0, -s * c));
      }
      // -log(1 - i s c) = i s c - (s c)^2/2 - i (s c)^3/3 + (s c)^4/4 + ...
      logphi += std::complex<double>(-0.5 * s * s * s2 + 0.25 * s * s * s * s * s4,
                                     s * s1 - s * s * s * s3 / 3.0);
      phi_[j] = std::exp(logphi);
    }
    // truncate the integration where |phi| is negligible
    eff_n_ = n_;
    while (eff_n_ > 2 && std::abs(phi_[eff_n_ - 1]) < 1e-18) --eff_n_;
    if (eff_n_ % 2 == 1) ++eff_n_;
  }

  double density(double x) const {
    double ds = s_max_ / n_;
    // incremental rotation e^{-i s x}
    std::complex<double> rot(1.0, 0.0);
    std::complex<double> step = std::exp(std::complex<double>(0.0, -ds * x));
    double acc = 0.0;
    for (int j = 0; j <= eff_n_; ++j) {
      double w = (j == 0 || j == eff_n_) ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0);
      acc += w * (phi_[j] * rot).real();
      rot *= step;
    }
    return acc * ds / 3.0 / M_PI;
  }

  double log_density(double x) const { return std::log(std::max(density(x), 1e-300)); }

 private:
  double a_, b_, s_max_;
  int n_, eff_n_;
  std::vector<std::complex<double>> phi_;
};

}  // namespace oracles
