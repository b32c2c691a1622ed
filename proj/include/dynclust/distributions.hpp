#pragma once

// Samplers and (log-)densities for the special distributions the Gibbs
// sampler consumes: logistic-beta, Polya, Polya-gamma, Stirling-gamma,
// and multivariate normals with tridiagonal AR(1) precision structure.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "dynclust/common.hpp"

namespace dynclust {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Parameter types

struct AR1Kernel {
  double psi = 0.0;  // in (-1, 1)
  int dim = 1;

  AR1Kernel() = default;
  AR1Kernel(double psi_, int dim_) : psi(psi_), dim(dim_) {
    if (!(std::abs(psi) < 1.0)) throw invalid_parameter("AR1Kernel: |psi| must be < 1");
    if (dim < 1) throw invalid_parameter("AR1Kernel: dim must be >= 1");
  }

  MatrixXd correlation() const {
    MatrixXd R(dim, dim);
    for (int s = 0; s < dim; ++s)
      for (int t = 0; t < dim; ++t) R(s, t) = std::pow(psi, std::abs(s - t));
    return R;
  }
};

struct LogisticBetaParams {
  double a_eps;
  double b_eps;
  AR1Kernel correlation;

  LogisticBetaParams(double a, double b, AR1Kernel corr)
      : a_eps(a), b_eps(b), correlation(corr) {
    if (a_eps <= 0.0 || b_eps <= 0.0)
      throw invalid_parameter("LogisticBetaParams: shapes must be positive");
  }
};

struct StirlingGammaParams {
  double a;
  double b;
  long m;

  StirlingGammaParams(double a_, double b_, long m_) : a(a_), b(b_), m(m_) {
    if (a <= 0.0 || b <= 0.0 || m < 1)
      throw invalid_parameter("StirlingGammaParams: a, b, m must be positive");
    double ratio = a / b;
    if (!(ratio > 1.0 && ratio < static_cast<double>(m)))
      throw invalid_parameter("StirlingGammaParams: need 1 < a/b < m");
  }
};

// ---------------------------------------------------------------------------
// Logistic-beta

inline double logistic_beta_log_density(double eps, double a, double b) {
  if (a <= 0.0 || b <= 0.0)
    throw invalid_parameter("logistic_beta_log_density: shapes must be positive");
  double log_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  return -log_beta - a * log1pexp(-eps) - b * log1pexp(eps);
}

inline double logistic_beta_density(double eps, double a, double b) {
  return std::exp(logistic_beta_log_density(eps, a, b));
}

// ---------------------------------------------------------------------------
// Polya(a, b)
//
// Realized through the weighted infinite sum of unit exponentials
//   lambda = 2 * sum_{k>=0} E_k / ((a+k)(b+k)),
// whose mean 2*(digamma(a)-digamma(b))/(a-b) reproduces the logistic-beta
// mean identity E[eps] = 0.5*(a-b)*E[lambda] = digamma(a) - digamma(b).
// The sum is truncated once the tail's standard deviation drops below
// kPolyaTailSd and the tail's expected value is added back.

inline double polya_weight_tail_sum(double a, double b, long k_from) {
  double aa = a + static_cast<double>(k_from);
  double bb = b + static_cast<double>(k_from);
  if (std::abs(a - b) < 1e-12) return boost::math::trigamma(0.5 * (aa + bb));
  return (boost::math::digamma(aa) - boost::math::digamma(bb)) / (a - b);
}

inline double polya_mean(double a, double b) { return 2.0 * polya_weight_tail_sum(a, b, 0); }

inline double sample_polya(double a, double b, Rng& rng) {
  if (a <= 0.0 || b <= 0.0) throw invalid_parameter("sample_polya: shapes must be positive");
  constexpr double kPolyaTailSd = 1e-5;
  std::exponential_distribution<double> exp1(1.0);
  double sum = 0.0;
  double tail_var = 0.0;
  long k = 0;
  // Tail variance of sum_{j>=K} w_j E_j is sum w_j^2 ~ 4/(3 K^3); check
  // the closed bound every chunk instead of term by term.
  while (true) {
    for (int j = 0; j < 64; ++j, ++k) {
      double w = 2.0 / ((a + k) * (b + k));
      sum += w * exp1(rng);
    }
    double kk = static_cast<double>(k);
    tail_var = 4.0 / (3.0 * kk * kk * kk);
    if (tail_var < kPolyaTailSd * kPolyaTailSd && k >= 256) break;
  }
  double tail_mean = 2.0 * polya_weight_tail_sum(a, b, k);
  return sum + tail_mean;
}

// ---------------------------------------------------------------------------
// Polya-gamma PG(count, tilt)
//
// PG(1, c) uses the exact alternating-series rejection method on the tilted
// Jacobi law; PG(count, c) for integer count is the sum of count independent
// PG(1, c) draws up to pg_exact_threshold, then a moment-matched normal.

namespace detail {

constexpr double kPgTrunc = 0.64;  // exponential/inverse-Gaussian switch point

inline double pg_series_coef(double x, int n) {
  double h = n + 0.5;
  if (x <= kPgTrunc) {
    double pix = 2.0 / (M_PI * x);
    return M_PI * h * pix * std::sqrt(pix) * std::exp(-2.0 * h * h / x);
  }
  return M_PI * h * std::exp(-h * h * M_PI * M_PI * x / 2.0);
}

// Inverse-Gaussian(mu, 1) truncated to (0, t]
inline double sample_trunc_invgauss(double z, double t, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::exponential_distribution<double> exp1(1.0);
  std::normal_distribution<double> norm(0.0, 1.0);
  double mu = (z > 0.0) ? 1.0 / z : std::numeric_limits<double>::infinity();
  double x = t + 1.0;
  if (mu > t) {
    while (true) {
      double e1, e2;
      do {
        e1 = exp1(rng);
        e2 = exp1(rng);
      } while (e1 * e1 > 2.0 * e2 / t);
      x = t / ((1.0 + t * e1) * (1.0 + t * e1));
      if (unif(rng) <= std::exp(-0.5 * z * z * x)) return x;
    }
  }
  while (x > t) {
    double y = norm(rng);
    y = y * y;
    double muy = mu * y;
    x = mu + 0.5 * mu * muy - 0.5 * mu * std::sqrt(4.0 * muy + muy * muy);
    if (unif(rng) > mu / (mu + x)) x = mu * mu / x;
  }
  return x;
}

inline double sample_pg1(double c, Rng& rng) {
  double z = 0.5 * std::abs(c);
  double fz = M_PI * M_PI / 8.0 + z * z / 2.0;
  const double t = kPgTrunc;

  // mass of the exponential tail relative to the inverse-Gaussian body
  double b_ = std::sqrt(1.0 / t) * (t * z - 1.0);
  double a_ = -std::sqrt(1.0 / t) * (t * z + 1.0);
  double x0 = std::log(fz) + fz * t;
  double xb = x0 - z + std::log(std_normal_cdf(b_));
  double xa = x0 + z + std::log(std_normal_cdf(a_));
  double qdivp = 4.0 / M_PI * (std::exp(xb) + std::exp(xa));
  double p_exp = 1.0 / (1.0 + qdivp);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::exponential_distribution<double> exp1(1.0);
  while (true) {
    double x;
    if (unif(rng) < p_exp) {
      x = t + exp1(rng) / fz;
    } else {
      x = sample_trunc_invgauss(z, t, rng);
    }
    double s = pg_series_coef(x, 0);
    double y = unif(rng) * s;
    int n = 0;
    while (true) {
      ++n;
      if (n % 2 == 1) {
        s -= pg_series_coef(x, n);
        if (y <= s) return x / 4.0;
      } else {
        s += pg_series_coef(x, n);
        if (y > s) break;
      }
    }
  }
}

}  // namespace detail

inline double polya_gamma_mean(int count, double tilt) {
  double b = static_cast<double>(count);
  if (std::abs(tilt) < 1e-6) {
    // tanh(c/2)/(2c) = 1/4 - c^2/48 + O(c^4)
    return b * (0.25 - tilt * tilt / 48.0);
  }
  return b * std::tanh(tilt / 2.0) / (2.0 * tilt);
}

inline double polya_gamma_var(int count, double tilt) {
  double b = static_cast<double>(count);
  double c = std::abs(tilt);
  if (c < 1e-4) return b / 24.0;
  double ch = std::cosh(c / 2.0);
  return b * (std::sinh(c) - c) / (4.0 * c * c * c * ch * ch);
}

inline double sample_polya_gamma(int count, double tilt, Rng& rng, int exact_threshold = 170) {
  if (count < 1) throw invalid_parameter("sample_polya_gamma: count must be >= 1");
  if (count <= exact_threshold) {
    double s = 0.0;
    for (int i = 0; i < count; ++i) s += detail::sample_pg1(tilt, rng);
    return s;
  }
  double m = polya_gamma_mean(count, tilt);
  double sd = std::sqrt(polya_gamma_var(count, tilt));
  std::normal_distribution<double> norm(m, sd);
  double x;
  do {
    x = norm(rng);
  } while (x <= 0.0);
  return x;
}

// ---------------------------------------------------------------------------
// Stirling-gamma SG(a, b, m)

// (a-1)*log(alpha) - b*sum_{r<m} log(alpha+r), via log-gamma differences.
// digamma(alpha + m) - digamma(alpha), stable against the catastrophic
// cancellation of the naive difference when alpha >> m.
inline double digamma_diff(double alpha, long m) {
  if (m <= 100000) {
    double s = 0.0;
    for (long r = m - 1; r >= 0; --r) s += 1.0 / (alpha + static_cast<double>(r));
    return s;
  }
  if (alpha > 50.0 * static_cast<double>(m))
    return std::log1p(static_cast<double>(m) / (alpha - 0.5));
  return boost::math::digamma(alpha + static_cast<double>(m)) - boost::math::digamma(alpha);
}

// Valid for any positive a, b; the 1 < a/b < m constraint only gates the
// prior itself (StirlingGammaParams), not density evaluation.
// log of the rising factorial alpha (alpha+1) ... (alpha+m-1), stable
// against the lgamma-difference cancellation when alpha >> m.
inline double log_rising_factorial(double alpha, long m) {
  double dm = static_cast<double>(m);
  if (alpha < 1e4 * dm) return std::lgamma(alpha + dm) - std::lgamma(alpha);
  // midpoint Euler-Maclaurin approximation of the log sum, written in
  // difference form so it stays stable when alpha >> m:
  // hi log(hi) - lo log(lo) - m = lo log1p(m/lo) + m (log(hi) - 1)
  double lo = alpha - 0.5, hi = alpha + dm - 0.5;
  return lo * std::log1p(dm / lo) + dm * (std::log(hi) - 1.0);
}

inline double stirling_gamma_log_density_unnorm(double alpha, double a, double b, long m) {
  if (alpha <= 0.0)
    throw invalid_parameter("stirling_gamma_log_density_unnorm: alpha must be positive");
  return (a - 1.0) * std::log(alpha) - b * log_rising_factorial(alpha, m);
}

inline double stirling_gamma_log_density_unnorm(double alpha, const StirlingGammaParams& p) {
  return stirling_gamma_log_density_unnorm(alpha, p.a, p.b, p.m);
}

// Grid inverse-CDF sampler on log(alpha). The grid spans the density mode
// plus 45 log-units of drop-off on each side, leaving < 1e-10 of the mass
// outside; build once per parameter set and reuse across draws.
class StirlingGammaSampler {
 public:
  explicit StirlingGammaSampler(const StirlingGammaParams& p, int grid_size = 2048)
      : params_(p) {
    build_grid(grid_size);
  }

  double sample(Rng& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng);
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    std::size_t hi = std::min<std::size_t>(it - cdf_.begin(), cdf_.size() - 1);
    if (hi == 0) hi = 1;
    std::size_t lo = hi - 1;
    double c0 = cdf_[lo], c1 = cdf_[hi];
    double frac = (c1 > c0) ? (u - c0) / (c1 - c0) : 0.5;
    double x = x_[lo] + frac * (x_[hi] - x_[lo]);
    return std::exp(x);
  }

  // log-normalizing constant of the unnormalized density over alpha
  double log_normalizer() const { return log_norm_; }

  const std::vector<double>& grid_log_alpha() const { return x_; }

 private:
  // density of x = log(alpha), log scale, unnormalized
  double log_fx(double x) const {
    double alpha = std::exp(x);
    return stirling_gamma_log_density_unnorm(alpha, params_) + x;
  }

  void build_grid(int n) {
    // d/dx log f_x = a - b * alpha * (digamma(alpha+m) - digamma(alpha)),
    // strictly decreasing, so the mode is the unique root.
    auto deriv = [&](double x) {
      double alpha = std::exp(x);
      return params_.a - params_.b * alpha * digamma_diff(alpha, params_.m);
    };
    double lo = -40.0, hi = 40.0;
    while (deriv(lo) < 0.0) lo -= 20.0;
    while (deriv(hi) > 0.0) hi += 20.0;
    for (int i = 0; i < 200; ++i) {
      double mid = 0.5 * (lo + hi);
      (deriv(mid) > 0.0 ? lo : hi) = mid;
    }
    double mode = 0.5 * (lo + hi);
    double peak = log_fx(mode);
    const double drop = 45.0;  // exp(-45) ~ 3e-20 relative density
    auto expand = [&](double dir) {
      double x = mode;
      double step = 0.5;
      while (peak - log_fx(x + dir * step) < drop) step *= 2.0;
      return x + dir * step;
    };
    double x_lo = expand(-1.0), x_hi = expand(+1.0);

    x_.resize(n);
    std::vector<double> f(n);
    for (int i = 0; i < n; ++i) {
      x_[i] = x_lo + (x_hi - x_lo) * i / (n - 1.0);
      f[i] = std::exp(log_fx(x_[i]) - peak);
    }
    cdf_.resize(n);
    cdf_[0] = 0.0;
    for (int i = 1; i < n; ++i)
      cdf_[i] = cdf_[i - 1] + 0.5 * (f[i] + f[i - 1]) * (x_[i] - x_[i - 1]);
    double total = cdf_.back();
    for (auto& c : cdf_) c /= total;
    log_norm_ = std::log(total) + peak;
  }

  StirlingGammaParams params_;
  std::vector<double> x_;
  std::vector<double> cdf_;
  double log_norm_ = 0.0;
};

inline double sample_stirling_gamma(const StirlingGammaParams& p, Rng& rng) {
  return StirlingGammaSampler(p).sample(rng);
}

// ---------------------------------------------------------------------------
// Tridiagonal SPD systems (AR(1) precision)

struct Tridiag {
  VectorXd diag;  // length d
  VectorXd off;   // length d-1, sub/super diagonal

  int dim() const { return static_cast<int>(diag.size()); }

  MatrixXd dense() const {
    int d = dim();
    MatrixXd m = MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i) m(i, i) = diag[i];
    for (int i = 0; i + 1 < d; ++i) m(i, i + 1) = m(i + 1, i) = off[i];
    return m;
  }

  VectorXd multiply(const VectorXd& v) const {
    int d = dim();
    VectorXd r(d);
    for (int i = 0; i < d; ++i) {
      double s = diag[i] * v[i];
      if (i > 0) s += off[i - 1] * v[i - 1];
      if (i + 1 < d) s += off[i] * v[i + 1];
      r[i] = s;
    }
    return r;
  }
};

// Closed-form inverse of the AR(1) correlation matrix psi^{|t-t'|}:
// tridiagonal with diag (1, 1+psi^2, ..., 1+psi^2, 1)/(1-psi^2) and
// off-diagonal -psi/(1-psi^2).
inline Tridiag ar1_precision(const AR1Kernel& kernel) {
  double psi = kernel.psi;
  int d = kernel.dim;
  double denom = 1.0 - psi * psi;
  Tridiag q;
  q.diag = VectorXd::Constant(d, (1.0 + psi * psi) / denom);
  if (d >= 1) {
    q.diag[0] = 1.0 / denom;
    q.diag[d - 1] = 1.0 / denom;
  }
  if (d == 1) q.diag[0] = 1.0;
  q.off = VectorXd::Constant(std::max(d - 1, 0), -psi / denom);
  return q;
}

inline double ar1_log_det_correlation(double psi, int dim) {
  // det(Psi) = (1 - psi^2)^{dim-1}
  return (dim - 1) * std::log1p(-psi * psi);
}

// LDL^T factorization of a symmetric positive definite tridiagonal matrix.
class TridiagFactor {
 public:
  explicit TridiagFactor(const Tridiag& q) {
    int d = q.dim();
    dvec_.resize(d);
    lvec_.resize(std::max(d - 1, 0));
    dvec_[0] = q.diag[0];
    for (int i = 1; i < d; ++i) {
      if (dvec_[i - 1] <= 0.0)
        throw numerical_error("TridiagFactor: matrix not positive definite");
      lvec_[i - 1] = q.off[i - 1] / dvec_[i - 1];
      dvec_[i] = q.diag[i] - lvec_[i - 1] * lvec_[i - 1] * dvec_[i - 1];
    }
    if (dvec_[d - 1] <= 0.0)
      throw numerical_error("TridiagFactor: matrix not positive definite");
  }

  int dim() const { return static_cast<int>(dvec_.size()); }

  VectorXd solve(const VectorXd& b) const {
    int d = dim();
    VectorXd y = b;
    for (int i = 1; i < d; ++i) y[i] -= lvec_[i - 1] * y[i - 1];
    for (int i = 0; i < d; ++i) y[i] /= dvec_[i];
    for (int i = d - 2; i >= 0; --i) y[i] -= lvec_[i] * y[i + 1];
    return y;
  }

  double log_det() const {
    double s = 0.0;
    for (int i = 0; i < dim(); ++i) s += std::log(dvec_[i]);
    return s;
  }

  double quad_form(const Tridiag& q, const VectorXd& v) const {
    return v.dot(q.multiply(v));
  }

  // Draw from N(mean, Q^{-1}) where this factors Q: x = mean + L^{-T} D^{-1/2} z
  VectorXd sample(const VectorXd& mean, Rng& rng) const {
    int d = dim();
    std::normal_distribution<double> norm(0.0, 1.0);
    VectorXd z(d);
    for (int i = 0; i < d; ++i) z[i] = norm(rng) / std::sqrt(dvec_[i]);
    for (int i = d - 2; i >= 0; --i) z[i] -= lvec_[i] * z[i + 1];
    return mean + z;
  }

 private:
  VectorXd dvec_;
  std::vector<double> lvec_;
};

// ---------------------------------------------------------------------------
// Dense multivariate normal with precision parameterization

inline Eigen::LLT<MatrixXd> cholesky_with_jitter(const MatrixXd& spd) {
  Eigen::LLT<MatrixXd> llt(spd);
  if (llt.info() == Eigen::Success) return llt;
  double jitter = 1e-10 * spd.trace() / spd.rows();
  MatrixXd bumped = spd + jitter * MatrixXd::Identity(spd.rows(), spd.cols());
  llt.compute(bumped);
  if (llt.info() != Eigen::Success) {
    throw numerical_error("cholesky_with_jitter: factorization failed after jitter (trace=" +
                          std::to_string(spd.trace()) + ", dim=" + std::to_string(spd.rows()) +
                          ")");
  }
  return llt;
}

inline VectorXd sample_mvn_precision(const VectorXd& mean, const MatrixXd& precision, Rng& rng) {
  auto llt = cholesky_with_jitter(precision);
  int d = static_cast<int>(mean.size());
  std::normal_distribution<double> norm(0.0, 1.0);
  VectorXd z(d);
  for (int i = 0; i < d; ++i) z[i] = norm(rng);
  // x = mean + L^{-T} z has covariance (L L^T)^{-1} = precision^{-1}
  VectorXd perturb = llt.matrixU().solve(z);
  return mean + perturb;
}

// log N(x; mean, cov) via dense Cholesky
inline double mvn_log_density(const VectorXd& x, const VectorXd& mean, const MatrixXd& cov) {
  auto llt = cholesky_with_jitter(cov);
  VectorXd r = x - mean;
  VectorXd half = llt.matrixL().solve(r);
  double log_det = 0.0;
  for (int i = 0; i < cov.rows(); ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * (cov.rows() * std::log(2.0 * M_PI) + log_det + half.squaredNorm());
}

// ---------------------------------------------------------------------------
// Multivariate logistic-beta path draw (mixture construction)

inline std::pair<VectorXd, double> sample_logistic_beta_path(const LogisticBetaParams& p,
                                                             Rng& rng) {
  double lambda = sample_polya(p.a_eps, p.b_eps, rng);
  int d = p.correlation.dim;
  Tridiag prec = ar1_precision(p.correlation);
  // precision of lambda*Psi is Psi^{-1}/lambda
  Tridiag q{prec.diag / lambda, prec.off / lambda};
  TridiagFactor fac(q);
  VectorXd mean = VectorXd::Constant(d, 0.5 * lambda * (p.a_eps - p.b_eps));
  return {fac.sample(mean, rng), lambda};
}

// ---------------------------------------------------------------------------
// Chinese restaurant process cluster-count simulator (prior checks)

inline int crp_cluster_count(double alpha, long m, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int k = 0;
  for (long i = 1; i <= m; ++i) {
    if (unif(rng) < alpha / (alpha + static_cast<double>(i - 1))) ++k;
  }
  return k;
}

}  // namespace dynclust
