#pragma once

// Full latent chain state and the observation-model likelihood.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dynclust/data.hpp"
#include "dynclust/distributions.hpp"

namespace dynclust {

using Eigen::MatrixXi;

struct ChainState {
  MatrixXi s;          // n x T memberships in {0..H-1}
  VectorXd theta;      // H atom means
  VectorXd sigma_sq;   // H atom variances
  MatrixXd eps;        // H x T latent logistic-beta paths (row H-1 unused, stick forced)
  VectorXd lambda;     // H Polya mixing variables
  MatrixXd xi;         // H x T PG augmentation, zero where m_k(t) == 0
  double alpha = 1.0;
  double psi = 0.0;
  VectorXd beta;       // p regression coefficients
  VectorXd gamma;      // n spatial effects
  double tau_sq = 1.0;
  double phi = 1.0;
  double rho_sq = 1.0;
  MatrixXd weights;    // H x T derived stick-breaking weights

  int H() const { return static_cast<int>(theta.size()); }
  int n() const { return static_cast<int>(s.rows()); }
  int T() const { return static_cast<int>(s.cols()); }

  double cell_mean(const PanelDataset& data, int i, int t) const {
    double mu = theta[s(i, t)] + gamma[i];
    if (beta.size() > 0) mu += data.x[t].row(i).dot(beta);
    return mu;
  }
};

// w_tk = logit^{-1}(eps_k(t)) * prod_{l<k} [1 - logit^{-1}(eps_l(t))],
// with the last stick forced to 1 so each column sums to 1 exactly.
inline void compute_weights(ChainState& state) {
  int H = state.H(), T = state.T();
  for (int t = 0; t < T; ++t) {
    double remaining = 1.0;
    for (int k = 0; k < H - 1; ++k) {
      double nu = logit_inv(state.eps(k, t));
      state.weights(k, t) = nu * remaining;
      remaining *= (1.0 - nu);
    }
    state.weights(H - 1, t) = remaining;
  }
}

inline ChainState init_state(const ModelConfig& cfg, const PanelDataset& data, Rng& rng) {
  int n = data.n(), T = data.T(), H = cfg.H, p = data.p();
  ChainState st;
  st.s.setZero(n, T);
  st.theta.resize(H);
  st.sigma_sq.resize(H);
  st.eps.setZero(H, T);
  st.lambda.resize(H);
  st.xi.setZero(H, T);
  st.beta = VectorXd::Zero(p);
  st.gamma = VectorXd::Zero(n);
  st.weights.resize(H, T);

  double theta0 = cfg.base_theta0;
  double sigma0_sq = cfg.base_sigma0_sq;
  if (cfg.base_from_data) {
    double sum = 0.0;
    int cnt = 0;
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < T; ++t)
        if (data.observed(i, t)) {
          sum += data.y(i, t);
          ++cnt;
        }
    double ybar = (cnt > 0) ? sum / cnt : 0.0;
    double ss = 0.0;
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < T; ++t)
        if (data.observed(i, t)) ss += (data.y(i, t) - ybar) * (data.y(i, t) - ybar);
    theta0 = ybar;
    sigma0_sq = (cnt > 1) ? 2.0 * ss / (cnt - 1) : 1.0;
    if (sigma0_sq <= 0.0) sigma0_sq = 1.0;
  }

  // memberships: quantile-bin the responses at each time into min(5, H) groups
  int bins = cfg.single_cluster ? 1 : std::min(5, H);
  for (int t = 0; t < T; ++t) {
    std::vector<double> vals;
    for (int i = 0; i < n; ++i)
      if (data.observed(i, t)) vals.push_back(data.y(i, t));
    std::sort(vals.begin(), vals.end());
    for (int i = 0; i < n; ++i) {
      if (!data.observed(i, t) || vals.empty()) {
        st.s(i, t) = 0;
        continue;
      }
      auto pos = std::lower_bound(vals.begin(), vals.end(), data.y(i, t)) - vals.begin();
      int b = static_cast<int>(pos * bins / vals.size());
      st.s(i, t) = std::min(b, bins - 1);
    }
  }

  // atoms from G0
  std::normal_distribution<double> norm(0.0, 1.0);
  std::gamma_distribution<double> gam_a0(cfg.base_a0, 1.0);
  for (int k = 0; k < H; ++k) {
    st.theta[k] = theta0 + std::sqrt(2.0 * sigma0_sq) * norm(rng);
    st.sigma_sq[k] = cfg.base_b0 / gam_a0(rng);
  }

  st.alpha = sample_stirling_gamma(StirlingGammaParams(cfg.sg_a, cfg.sg_b, n), rng);
  st.psi = 0.0;
  st.tau_sq = cfg.b_tau / std::max(cfg.a_tau - 1.0, 0.5);
  st.phi = cfg.a_phi / cfg.b_phi;
  st.rho_sq = cfg.rho_sq_estimated ? cfg.b_rho / std::max(cfg.a_rho - 1.0, 0.5)
                                   : cfg.rho_sq_fixed;

  // latent paths from the prior given lambda ~ Polya(1, alpha)
  AR1Kernel kernel(st.psi, T);
  for (int k = 0; k < H; ++k) {
    st.lambda[k] = sample_polya(1.0, st.alpha, rng);
    Tridiag prec = ar1_precision(kernel);
    Tridiag q{prec.diag / st.lambda[k], prec.off / st.lambda[k]};
    TridiagFactor fac(q);
    VectorXd mean = VectorXd::Constant(T, 0.5 * st.lambda[k] * (1.0 - st.alpha));
    st.eps.row(k) = fac.sample(mean, rng).transpose();
  }
  compute_weights(st);
  return st;
}

// Gaussian log-likelihood over observed cells; missing cells contribute zero.
inline double log_likelihood(const ChainState& state, const PanelDataset& data,
                             MatrixXd* per_cell = nullptr) {
  int n = data.n(), T = data.T();
  if (per_cell) per_cell->setZero(n, T);
  double total = 0.0;
  constexpr double kLog2Pi = 1.8378770664093453;
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) {
      if (!data.observed(i, t)) continue;
      double mu = state.cell_mean(data, i, t);
      double v = state.sigma_sq[state.s(i, t)];
      double r = data.y(i, t) - mu;
      double ll = -0.5 * (kLog2Pi + std::log(v) + r * r / v);
      if (!std::isfinite(ll))
        throw numerical_error("log_likelihood: nonfinite at cell (" + std::to_string(i) + "," +
                              std::to_string(t) + ")");
      if (per_cell) (*per_cell)(i, t) = ll;
      total += ll;
    }
  }
  return total;
}

}  // namespace dynclust
