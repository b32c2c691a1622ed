#pragma once

// Label-invariant posterior summaries and model-comparison diagnostics.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "dynclust/partition.hpp"
#include "dynclust/sampler.hpp"

namespace dynclust {

// Per-time n x n posterior co-clustering probability matrices.
struct CoclusterStack {
  std::vector<MatrixXd> mats;  // one n x n symmetric matrix per time

  int T() const { return static_cast<int>(mats.size()); }
  int n() const { return mats.empty() ? 0 : static_cast<int>(mats.front().rows()); }
};

struct PartitionSeries {
  std::vector<Partition> parts;  // one canonical partition per time

  int T() const { return static_cast<int>(parts.size()); }
};

inline CoclusterStack cocluster_probs(const PosteriorDraws& draws) {
  if (draws.draws.empty()) throw invalid_parameter("cocluster_probs: no retained draws");
  int n = draws.n, T = draws.T;
  CoclusterStack out;
  out.mats.assign(T, MatrixXd::Zero(n, n));
  for (const auto& d : draws.draws) {
    for (int t = 0; t < T; ++t) {
      auto& m = out.mats[t];
      for (int i = 0; i < n; ++i) {
        m(i, i) += 1.0;
        for (int j = i + 1; j < n; ++j)
          if (d.s(i, t) == d.s(j, t)) {
            m(i, j) += 1.0;
            m(j, i) += 1.0;
          }
      }
    }
  }
  double denom = static_cast<double>(draws.draws.size());
  for (auto& m : out.mats) m /= denom;
  return out;
}

inline CoclusterStack cocluster_from_partitions(const PartitionSeries& series) {
  CoclusterStack out;
  for (const auto& p : series.parts) {
    int n = static_cast<int>(p.size());
    MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = (p[i] == p[j]) ? 1.0 : 0.0;
    out.mats.push_back(std::move(m));
  }
  return out;
}

// Expected-VI lower-bound objective for a candidate partition given the
// co-clustering matrix (the draw-dependent constant is dropped; smaller is
// better and the ordering is unchanged).
inline double vi_lower_bound_objective(const Partition& cand, const MatrixXd& cocluster) {
  int n = static_cast<int>(cand.size());
  std::vector<double> cluster_size(n, 0.0);
  for (int i = 0; i < n; ++i) cluster_size[cand[i]] += 1.0;
  double obj = 0.0;
  for (int i = 0; i < n; ++i) {
    double same = 0.0;
    for (int j = 0; j < n; ++j)
      if (cand[i] == cand[j]) same += cocluster(i, j);
    obj += std::log2(cluster_size[cand[i]]) - 2.0 * std::log2(std::max(same, 1e-300));
  }
  return obj / n;
}

// Greedy expected-VI minimization: best retained-draw partition at time t,
// refined by single-unit reallocation hill climbing.
inline Partition vi_point_estimate(const PosteriorDraws& draws, int t) {
  if (draws.draws.empty()) throw invalid_parameter("vi_point_estimate: no retained draws");
  CoclusterStack stack = cocluster_probs(draws);
  const MatrixXd& c = stack.mats[t];
  int n = draws.n;

  Partition best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (const auto& d : draws.draws) {
    Partition cand(n);
    for (int i = 0; i < n; ++i) cand[i] = d.s(i, t);
    cand = canonicalize(cand);
    double obj = vi_lower_bound_objective(cand, c);
    if (obj < best_obj - 1e-12) {
      best_obj = obj;
      best = cand;
    }
  }

  // hill climbing: move one unit to any existing cluster or a new singleton
  bool improved = true;
  while (improved) {
    improved = false;
    int k = num_clusters(best);
    for (int i = 0; i < n; ++i) {
      int orig = best[i];
      for (int target = 0; target <= k; ++target) {
        if (target == orig) continue;
        Partition cand = best;
        cand[i] = target;
        cand = canonicalize(cand);
        double obj = vi_lower_bound_objective(cand, c);
        if (obj < best_obj - 1e-12) {
          best_obj = obj;
          best = cand;
          k = num_clusters(best);
          improved = true;
        }
      }
    }
  }
  return canonicalize(best);
}

inline PartitionSeries vi_partition_series(const PosteriorDraws& draws) {
  PartitionSeries out;
  for (int t = 0; t < draws.T; ++t) out.parts.push_back(vi_point_estimate(draws, t));
  return out;
}

// ARI(P_t, P_{t+lag}) table; rows indexed by lag 1..max_lag, columns by t.
inline MatrixXd lagged_ari(const PartitionSeries& series, int max_lag) {
  int T = series.T();
  if (max_lag < 1 || max_lag >= T)
    throw invalid_parameter("lagged_ari: need 1 <= max_lag < T");
  MatrixXd table = MatrixXd::Constant(max_lag, T, std::numeric_limits<double>::quiet_NaN());
  for (int lag = 1; lag <= max_lag; ++lag)
    for (int t = 0; t + lag < T; ++t)
      table(lag - 1, t) = adjusted_rand_index(series.parts[t], series.parts[t + lag]);
  return table;
}

// Time-averaged Frobenius distance between co-clustering stacks.
inline double cocluster_error(const CoclusterStack& truth, const CoclusterStack& estimate) {
  if (truth.T() != estimate.T() || truth.n() != estimate.n())
    throw invalid_parameter("cocluster_error: dimension mismatch");
  double total = 0.0;
  for (int t = 0; t < truth.T(); ++t) total += (truth.mats[t] - estimate.mats[t]).norm();
  return total / truth.T();
}

// ---------------------------------------------------------------------------
// WAIC

struct WaicResult {
  double waic = 0.0;       // -2 * (lppd - penalty), lower is better
  double lppd = 0.0;
  double penalty = 0.0;
  VectorXd pointwise;      // per-cell -2*(lppd_i - p_i)
};

inline WaicResult waic(const MatrixXd& loglik) {
  int draws = static_cast<int>(loglik.rows());
  int cells = static_cast<int>(loglik.cols());
  if (draws < 1 || cells < 1) throw invalid_parameter("waic: empty log-likelihood matrix");
  WaicResult out;
  out.pointwise.resize(cells);
  for (int c = 0; c < cells; ++c) {
    if (!loglik.col(c).allFinite())
      throw numerical_error("waic: nonfinite log-likelihood in cell " + std::to_string(c));
    double mx = loglik.col(c).maxCoeff();
    double sum_exp = (loglik.col(c).array() - mx).exp().sum();
    double lppd_c = mx + std::log(sum_exp / draws);
    double mean = loglik.col(c).mean();
    double var = (draws > 1) ? (loglik.col(c).array() - mean).square().sum() / (draws - 1) : 0.0;
    out.lppd += lppd_c;
    out.penalty += var;
    out.pointwise[c] = -2.0 * (lppd_c - var);
  }
  out.waic = -2.0 * (out.lppd - out.penalty);
  return out;
}

// ---------------------------------------------------------------------------
// PSIS-LOO

struct GpdFit {
  double k = 0.0;      // shape
  double sigma = 1.0;  // scale
};

// Probability-weighted-moment fit of the generalized Pareto distribution to
// exceedances (assumed already threshold-shifted, all >= 0).
inline GpdFit fit_gpd_pwm(std::vector<double> exceedances) {
  std::sort(exceedances.begin(), exceedances.end());
  int n = static_cast<int>(exceedances.size());
  if (n < 5) return {0.0, std::max(1e-12, exceedances.empty() ? 1.0 : exceedances.back())};
  double b0 = 0.0, b1 = 0.0;
  for (int i = 0; i < n; ++i) {
    b0 += exceedances[i];
    b1 += exceedances[i] * (n - 1.0 - i) / (n - 1.0);
  }
  b0 /= n;
  b1 /= n;
  double denom = b0 - 2.0 * b1;
  if (std::abs(denom) < 1e-300) return {0.5, b0};
  GpdFit fit;
  fit.k = 2.0 - b0 / denom;         // shape (Vehtari et al. sign convention)
  fit.sigma = 2.0 * b0 * b1 / denom;
  if (fit.sigma <= 0.0) fit.sigma = std::max(b0, 1e-12);
  return fit;
}

inline double gpd_quantile(const GpdFit& fit, double p) {
  if (std::abs(fit.k) < 1e-9) return -fit.sigma * std::log1p(-p);
  return fit.sigma / fit.k * (std::pow(1.0 - p, -fit.k) - 1.0);
}

struct PsisLooResult {
  double loo = 0.0;        // -2 * elpd_loo, lower is better
  double elpd = 0.0;
  VectorXd pareto_k;       // per-cell shape diagnostic
  VectorXd pointwise;      // per-cell -2*elpd_i
  int n_high_k = 0;        // cells with k > 0.7
  bool fallback_plain_is = false;  // degenerate ratios, no smoothing applied
};

inline PsisLooResult psis_loo(const MatrixXd& loglik) {
  int draws = static_cast<int>(loglik.rows());
  int cells = static_cast<int>(loglik.cols());
  if (draws < 1 || cells < 1) throw invalid_parameter("psis_loo: empty log-likelihood matrix");
  PsisLooResult out;
  out.pareto_k.resize(cells);
  out.pointwise.resize(cells);
  int tail = std::max(25, static_cast<int>(std::round(0.2 * draws)));
  tail = std::min(tail, draws - 1);

  std::vector<double> logw(draws);
  std::vector<int> order(draws);
  for (int c = 0; c < cells; ++c) {
    // importance ratios r_d = exp(-ll_d), worked with in log space
    for (int d = 0; d < draws; ++d) logw[d] = -loglik(d, c);
    double mx = *std::max_element(logw.begin(), logw.end());
    double mn = *std::min_element(logw.begin(), logw.end());
    if (mx - mn < 1e-12 || tail < 5) {
      out.pareto_k[c] = 0.0;
      out.fallback_plain_is = true;
    } else {
      for (int d = 0; d < draws; ++d) order[d] = d;
      std::sort(order.begin(), order.end(),
                [&](int a, int b) { return logw[a] < logw[b]; });
      double cutoff = std::exp(logw[order[draws - tail - 1]] - mx);
      std::vector<double> exc(tail);
      for (int j = 0; j < tail; ++j)
        exc[j] = std::exp(logw[order[draws - tail + j]] - mx) - cutoff;
      GpdFit fit = fit_gpd_pwm(exc);
      out.pareto_k[c] = fit.k;
      // replace tail weights by expected order statistics of the fitted GPD
      for (int j = 0; j < tail; ++j) {
        double q = gpd_quantile(fit, (j + 0.5) / tail);
        logw[order[draws - tail + j]] =
            std::min(std::log(cutoff + q) + mx, mx);  // truncate at raw max
      }
    }
    // elpd_i = logsumexp(logw + ll) - logsumexp(logw)
    auto logsumexp = [&](auto&& term) {
      double m = -std::numeric_limits<double>::infinity();
      for (int d = 0; d < draws; ++d) m = std::max(m, term(d));
      double s = 0.0;
      for (int d = 0; d < draws; ++d) s += std::exp(term(d) - m);
      return m + std::log(s);
    };
    double elpd_c = logsumexp([&](int d) { return logw[d] + loglik(d, c); }) -
                    logsumexp([&](int d) { return logw[d]; });
    out.elpd += elpd_c;
    out.pointwise[c] = -2.0 * elpd_c;
    if (out.pareto_k[c] > 0.7) out.n_high_k += 1;
  }
  out.loo = -2.0 * out.elpd;
  return out;
}

}  // namespace dynclust
