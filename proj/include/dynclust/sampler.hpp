#pragma once

// Metropolis-within-Gibbs kernel for the dynamic clustering model and the
// seeded chain runner.

#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "dynclust/data.hpp"
#include "dynclust/distributions.hpp"
#include "dynclust/state.hpp"

namespace dynclust {

constexpr double kGpNugget = 1e-8;  // diagonal nugget on the spatial kernel

inline MatrixXd spatial_correlation(const MatrixXd& dist, double phi) {
  MatrixXd r = (-dist.array().square() / (2.0 * phi * phi)).exp();
  r.diagonal().array() += kGpNugget;
  return r;
}

struct DrawSnapshot {
  Eigen::MatrixXi s;
  VectorXd theta;
  VectorXd sigma_sq;
  double alpha = 0.0, psi = 0.0, tau_sq = 0.0, phi = 0.0, rho_sq = 0.0;
  VectorXd beta;
  VectorXd gamma;
  // optional latents (store_latents)
  MatrixXd eps;
  VectorXd lambda;
};

struct PosteriorDraws {
  std::vector<DrawSnapshot> draws;
  std::vector<std::pair<int, int>> cells;  // observed (station, time) pairs
  MatrixXd loglik;                         // draws x cells
  double accept_lambda = 0.0;
  double accept_psi = 0.0;
  double accept_phi = 0.0;
  double sampling_seconds = 0.0;
  int n = 0, T = 0;
  bool truncation_warning = false;  // posterior ever occupied cluster H-1

  int num_draws() const { return static_cast<int>(draws.size()); }
};

// Per-sweep stick bookkeeping: m_k(t) = #{observed i : s_it >= k} and
// r_k(t) = #{observed i : s_it = k} (0-based cluster labels).
struct StickUpdateWorkspace {
  Eigen::MatrixXi m;  // H x T
  Eigen::MatrixXi r;  // H x T

  void recompute(const ChainState& st, const PanelDataset& data) {
    int H = st.H(), n = st.n(), T = st.T();
    m.setZero(H, T);
    r.setZero(H, T);
    for (int t = 0; t < T; ++t) {
      for (int i = 0; i < n; ++i) {
        if (!data.observed(i, t)) continue;
        r(st.s(i, t), t) += 1;
      }
      int above = 0;
      for (int k = H - 1; k >= 0; --k) {
        above += r(k, t);
        m(k, t) = above;
      }
    }
  }
};

using ProgressCallback = std::function<void(int iter, const std::string& block)>;

class GibbsSampler {
 public:
  GibbsSampler(const ModelConfig& cfg, const PanelDataset& data)
      : cfg_(cfg), data_(data), master_rng_(make_rng(cfg.seed, 0)) {
    auto rep = validate_config(cfg, data);
    if (!rep.ok) {
      std::string msg = "GibbsSampler: invalid configuration:";
      for (const auto& v : rep.violations) msg += " [" + v + "]";
      throw invalid_parameter(msg);
    }
    resolve_base_measure();
    state_ = init_state(cfg_, data_, master_rng_);
    ws_.recompute(state_, data_);
    lambda_window_avg_ = polya_mean(1.0, state_.alpha);
    lambda_avg_count_ = 0;
  }

  ChainState& state() { return state_; }
  PanelDataset& data() { return data_; }
  const ChainState& state() const { return state_; }
  StickUpdateWorkspace& workspace() { return ws_; }
  double resolved_theta0() const { return resolved_theta0_; }
  double resolved_sigma0_sq() const { return resolved_sigma0_sq_; }

  // --- individual blocks (exposed for unit tests) ---

  void update_memberships(Rng& rng) {
    if (cfg_.single_cluster) {
      state_.s.setZero();
      return;
    }
    int n = data_.n(), T = data_.T(), H = cfg_.H;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> logp(H);
    constexpr double kLog2Pi = 1.8378770664093453;
    for (int t = 0; t < T; ++t) {
      for (int i = 0; i < n; ++i) {
        bool obs = data_.observed(i, t);
        double base = 0.0;
        if (obs) {
          base = data_.y(i, t) - state_.gamma[i];
          if (state_.beta.size() > 0) base -= data_.x[t].row(i).dot(state_.beta);
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < H; ++k) {
          double lp = std::log(state_.weights(k, t));
          if (obs) {
            double r = base - state_.theta[k];
            lp += -0.5 * (kLog2Pi + std::log(state_.sigma_sq[k]) +
                          r * r / state_.sigma_sq[k]);
          }
          logp[k] = lp;
          mx = std::max(mx, lp);
        }
        if (!std::isfinite(mx))
          throw numerical_error("update_memberships: all cluster log-probabilities are -inf at (" +
                                std::to_string(i) + "," + std::to_string(t) + ")");
        double total = 0.0;
        for (int k = 0; k < H; ++k) {
          logp[k] = std::exp(logp[k] - mx);
          total += logp[k];
        }
        double u = unif(rng) * total;
        int pick = H - 1;
        double acc = 0.0;
        for (int k = 0; k < H; ++k) {
          acc += logp[k];
          if (u <= acc) {
            pick = k;
            break;
          }
        }
        state_.s(i, t) = pick;
      }
    }
  }

  void refresh_counts() { ws_.recompute(state_, data_); }

  void update_pg_augmentation(int iter) {
    int H = cfg_.H, T = data_.T();
    parallel_over_k(H - 1, [&](int k, Rng& rng) {
      for (int t = 0; t < T; ++t) {
        int mk = ws_.m(k, t);
        state_.xi(k, t) =
            (mk > 0) ? sample_polya_gamma(mk, state_.eps(k, t), rng, cfg_.pg_exact_threshold)
                     : 0.0;
      }
    }, iter, 1);
  }

  void update_lambda(int iter) {
    int H = cfg_.H;
    auto [a_prop, b_prop] = lambda_proposal_params();
    std::vector<int> accepted(H - 1, 0);
    parallel_over_k(H - 1, [&](int k, Rng& rng) {
      double cur = state_.lambda[k];
      double prop = sample_polya(a_prop, b_prop, rng);
      double log_ratio = 0.5 * (cur - prop) * (state_.alpha - a_prop * b_prop) +
                         lambda_marginal_loglik(k, prop) - lambda_marginal_loglik(k, cur);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      if (std::log(unif(rng)) < log_ratio) {
        state_.lambda[k] = prop;
        accepted[k] = 1;
      }
    }, iter, 2);
    for (int k = 0; k < H - 1; ++k) {
      lambda_accepts_ += accepted[k];
      lambda_proposals_ += 1;
    }
    // running average over a trailing window; adaptation frozen after burn-in
    if (cfg_.adapt_lambda_proposal && iter < cfg_.burn_in) {
      double mean_lambda = state_.lambda.head(H - 1).mean();
      int w = std::min(lambda_avg_count_ + 1, 50);
      lambda_window_avg_ = lambda_window_avg_ + (mean_lambda - lambda_window_avg_) / w;
      lambda_avg_count_ += 1;
    }
  }

  // Posterior precision and right-hand side of the path update for cluster
  // k: precision = Xi_k + (lambda_k Psi)^{-1}, rhs = (r - 0.5 m) +
  // 0.5 (1 - alpha) Psi^{-1} 1 (inactive times keep prior-only terms).
  std::pair<Tridiag, VectorXd> epsilon_system(int k) const {
    int T = data_.T();
    Tridiag psi_prec = ar1_precision(AR1Kernel(state_.psi, T));
    VectorXd prec_ones = psi_prec.multiply(VectorXd::Ones(T));
    double lam = state_.lambda[k];
    Tridiag q{psi_prec.diag / lam, psi_prec.off / lam};
    VectorXd e(T);
    for (int t = 0; t < T; ++t) {
      q.diag[t] += state_.xi(k, t);  // zero at inactive times
      double data_term = (ws_.m(k, t) > 0) ? (ws_.r(k, t) - 0.5 * ws_.m(k, t)) : 0.0;
      e[t] = data_term + 0.5 * (1.0 - state_.alpha) * prec_ones[t];
    }
    return {std::move(q), std::move(e)};
  }

  void update_epsilon(int iter) {
    int H = cfg_.H;
    parallel_over_k(H - 1, [&](int k, Rng& rng) {
      auto [q, e] = epsilon_system(k);
      TridiagFactor fac(q);
      VectorXd mean = fac.solve(e);
      state_.eps.row(k) = fac.sample(mean, rng).transpose();
    }, iter, 3);
  }

  void update_weights() { compute_weights(state_); }

  void update_alpha(Rng& rng) {
    int T = data_.T(), n = data_.n();
    int sum_k = 0, t_eff = 0;
    for (int t = 0; t < T; ++t) {
      int k = occupied_clusters_at(t);
      if (k > 0) {
        sum_k += k;
        ++t_eff;
      }
    }
    StirlingGammaParams post(cfg_.sg_a + sum_k, cfg_.sg_b + t_eff, n);
    state_.alpha = sample_stirling_gamma(post, rng);
  }

  void update_atoms(Rng& rng) {
    int H = cfg_.H, n = data_.n(), T = data_.T();
    std::vector<int> nk(H, 0);
    std::vector<double> sum_resid(H, 0.0);
    std::vector<std::vector<double>> resids(H);
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < n; ++i) {
        if (!data_.observed(i, t)) continue;
        int k = state_.s(i, t);
        double r = data_.y(i, t) - state_.gamma[i];
        if (state_.beta.size() > 0) r -= data_.x[t].row(i).dot(state_.beta);
        nk[k] += 1;
        sum_resid[k] += r;
        resids[k].push_back(r);
      }
    std::normal_distribution<double> norm(0.0, 1.0);
    double prior_prec = 1.0 / (2.0 * resolved_sigma0_sq_);
    for (int k = 0; k < H; ++k) {
      if (nk[k] == 0) {
        state_.theta[k] = resolved_theta0_ + std::sqrt(2.0 * resolved_sigma0_sq_) * norm(rng);
        std::gamma_distribution<double> g(cfg_.base_a0, 1.0);
        state_.sigma_sq[k] = cfg_.base_b0 / g(rng);
        continue;
      }
      double prec = prior_prec + nk[k] / state_.sigma_sq[k];
      double mean = (resolved_theta0_ * prior_prec + sum_resid[k] / state_.sigma_sq[k]) / prec;
      state_.theta[k] = mean + norm(rng) / std::sqrt(prec);
      double ss = 0.0;
      for (double r : resids[k]) ss += (r - state_.theta[k]) * (r - state_.theta[k]);
      std::gamma_distribution<double> g(cfg_.base_a0 + 0.5 * nk[k], 1.0);
      state_.sigma_sq[k] = (cfg_.base_b0 + 0.5 * ss) / g(rng);
    }
  }

  void update_regression(Rng& rng) {
    int p = data_.p();
    if (p == 0) return;
    int n = data_.n(), T = data_.T();
    MatrixXd prec = MatrixXd::Identity(p, p) / state_.rho_sq;
    VectorXd rhs = VectorXd::Zero(p);
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < n; ++i) {
        if (!data_.observed(i, t)) continue;
        double v = state_.sigma_sq[state_.s(i, t)];
        VectorXd xv = data_.x[t].row(i).transpose();
        double r = data_.y(i, t) - state_.theta[state_.s(i, t)] - state_.gamma[i];
        prec.noalias() += xv * xv.transpose() / v;
        rhs.noalias() += xv * (r / v);
      }
    auto llt = cholesky_with_jitter(prec);
    VectorXd mean = llt.solve(rhs);
    state_.beta = sample_mvn_precision(mean, prec, rng);
    if (cfg_.rho_sq_estimated) state_.rho_sq = sample_rho_sq(state_.beta, rng);
  }

  double sample_rho_sq(const VectorXd& beta, Rng& rng) const {
    std::gamma_distribution<double> g(cfg_.a_rho + 0.5 * beta.size(), 1.0);
    return (cfg_.b_rho + 0.5 * beta.squaredNorm()) / g(rng);
  }

  double sample_tau_sq(const VectorXd& gamma, const MatrixXd& corr_inv, Rng& rng) const {
    double quad = gamma.dot(corr_inv * gamma);
    std::gamma_distribution<double> g(cfg_.a_tau + 0.5 * gamma.size(), 1.0);
    return (cfg_.b_tau + 0.5 * quad) / g(rng);
  }

  // Full-conditional precision and right-hand side for the spatial effects.
  MatrixXd spatial_posterior_precision(const MatrixXd& corr_inv, VectorXd* rhs_out) const {
    int n = data_.n(), T = data_.T();
    MatrixXd prec = corr_inv / state_.tau_sq;
    VectorXd rhs = VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
      double d = 0.0, e = 0.0;
      for (int t = 0; t < T; ++t) {
        if (!data_.observed(i, t)) continue;
        double v = state_.sigma_sq[state_.s(i, t)];
        double r = data_.y(i, t) - state_.theta[state_.s(i, t)];
        if (state_.beta.size() > 0) r -= data_.x[t].row(i).dot(state_.beta);
        d += 1.0 / v;
        e += r / v;
      }
      prec(i, i) += d;
      rhs[i] = e;
    }
    if (rhs_out) *rhs_out = rhs;
    return prec;
  }

  bool update_spatial(Rng& rng) {
    int n = data_.n();
    MatrixXd corr = spatial_correlation(data_.dist, state_.phi);
    auto corr_llt = cholesky_with_jitter(corr);
    MatrixXd corr_inv = corr_llt.solve(MatrixXd::Identity(n, n));

    // gamma | rest: GP prior x Gaussian likelihood
    VectorXd rhs;
    MatrixXd prec = spatial_posterior_precision(corr_inv, &rhs);
    auto llt = cholesky_with_jitter(prec);
    VectorXd mean = llt.solve(rhs);
    state_.gamma = sample_mvn_precision(mean, prec, rng);

    state_.tau_sq = sample_tau_sq(state_.gamma, corr_inv, rng);

    // phi: random-walk MH on log(phi) with Ga(a_phi, b_phi) prior
    std::normal_distribution<double> step(0.0, cfg_.log_phi_step);
    double log_phi = std::log(state_.phi);
    double prop_log_phi = log_phi + step(rng);
    double prop_phi = std::exp(prop_log_phi);
    auto gp_logpdf = [&](double phi, const Eigen::LLT<MatrixXd>& llt_r,
                         const MatrixXd& r_inv) {
      double log_det = 0.0;
      for (int i = 0; i < n; ++i) log_det += 2.0 * std::log(llt_r.matrixL()(i, i));
      double q = state_.gamma.dot(r_inv * state_.gamma) / state_.tau_sq;
      double gp = -0.5 * (n * std::log(state_.tau_sq) + log_det + q);
      // Ga(a,b) prior on phi plus log-scale Jacobian
      double prior = (cfg_.a_phi - 1.0) * std::log(phi) - cfg_.b_phi * phi;
      return gp + prior + std::log(phi);
    };
    double cur_target = gp_logpdf(state_.phi, corr_llt, corr_inv);
    MatrixXd prop_corr = spatial_correlation(data_.dist, prop_phi);
    bool accepted = false;
    try {
      auto prop_llt = cholesky_with_jitter(prop_corr);
      MatrixXd prop_inv = prop_llt.solve(MatrixXd::Identity(n, n));
      double prop_target = gp_logpdf(prop_phi, prop_llt, prop_inv);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      if (std::log(unif(rng)) < prop_target - cur_target) {
        state_.phi = prop_phi;
        accepted = true;
      }
    } catch (const numerical_error&) {
      // unfactorizable proposal kernel: reject
    }
    phi_accepts_ += accepted ? 1 : 0;
    phi_proposals_ += 1;
    return accepted;
  }

  // Log target of the atanh-scale random walk on psi: sum over sticks of
  // the centered-path Gaussian log density plus the transform Jacobian.
  double psi_log_target(double psi) const {
    int H = cfg_.H, T = data_.T();
    double one_m = 1.0 - psi * psi;
    double total = 0.0;
    for (int k = 0; k < H - 1; ++k) {
      VectorXd v = state_.eps.row(k).transpose().array() -
                   0.5 * state_.lambda[k] * (1.0 - state_.alpha);
      double a0 = v.squaredNorm();
      double a1 = 0.0;
      for (int t = 0; t + 1 < T; ++t) a1 += v[t] * v[t + 1];
      double am = a0 - v[0] * v[0] - v[T - 1] * v[T - 1];
      double quad = (a0 + psi * psi * am - 2.0 * psi * a1) / one_m;
      total += -0.5 * ((T - 1) * std::log(one_m) + quad / state_.lambda[k]);
    }
    // uniform prior on (-1,1); atanh-scale Jacobian
    return total + std::log(one_m);
  }

  bool update_psi(Rng& rng) {
    int T = data_.T();
    if (T < 2) return true;  // psi unidentified with a single time point
    std::normal_distribution<double> step(0.0, cfg_.psi_step);
    double eta = std::atanh(state_.psi);
    double prop_eta = eta + step(rng);
    double prop_psi = std::tanh(prop_eta);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    bool accepted = std::log(unif(rng)) < psi_log_target(prop_psi) - psi_log_target(state_.psi);
    if (accepted) state_.psi = prop_psi;
    psi_accepts_ += accepted ? 1 : 0;
    psi_proposals_ += 1;
    return accepted;
  }

  // One full sweep in the fixed block order.
  void sweep(int iter) {
    const char* block = "memberships";
    try {
      update_memberships(master_rng_);
      block = "counts";
      refresh_counts();
      block = "alpha";
      update_alpha(master_rng_);
      block = "pg_augmentation";
      update_pg_augmentation(iter);
      block = "lambda";
      update_lambda(iter);
      block = "epsilon";
      update_epsilon(iter);
      block = "weights";
      update_weights();
      block = "atoms";
      update_atoms(master_rng_);
      block = "regression";
      update_regression(master_rng_);
      block = "spatial";
      update_spatial(master_rng_);
      block = "psi";
      update_psi(master_rng_);
    } catch (const std::exception& e) {
      throw numerical_error("sweep failed at iteration " + std::to_string(iter) + ", block " +
                            block + ": " + e.what());
    }
  }

  PosteriorDraws run(ProgressCallback progress = {}, std::function<bool()> abort = {}) {
    auto t0 = std::chrono::steady_clock::now();
    PosteriorDraws out;
    out.n = data_.n();
    out.T = data_.T();
    for (int i = 0; i < data_.n(); ++i)
      for (int t = 0; t < data_.T(); ++t)
        if (data_.observed(i, t)) out.cells.emplace_back(i, t);
    int retained = (cfg_.n_iter - cfg_.burn_in) / cfg_.thin;
    out.loglik.resize(retained, static_cast<int>(out.cells.size()));
    out.draws.reserve(retained);

    MatrixXd per_cell;
    int stored = 0;
    for (int iter = 0; iter < cfg_.n_iter; ++iter) {
      if (abort && abort()) break;
      sweep(iter);
      if (progress && (iter % 500 == 0)) progress(iter, "sweep");
      if (iter >= cfg_.burn_in && (iter - cfg_.burn_in) % cfg_.thin == cfg_.thin - 1 &&
          stored < retained) {
        log_likelihood(state_, data_, &per_cell);
        for (std::size_t c = 0; c < out.cells.size(); ++c)
          out.loglik(stored, static_cast<int>(c)) =
              per_cell(out.cells[c].first, out.cells[c].second);
        DrawSnapshot snap;
        snap.s = state_.s;
        snap.theta = state_.theta;
        snap.sigma_sq = state_.sigma_sq;
        snap.alpha = state_.alpha;
        snap.psi = state_.psi;
        snap.tau_sq = state_.tau_sq;
        snap.phi = state_.phi;
        snap.rho_sq = state_.rho_sq;
        snap.beta = state_.beta;
        snap.gamma = state_.gamma;
        if (cfg_.store_latents) {
          snap.eps = state_.eps;
          snap.lambda = state_.lambda;
        }
        if ((state_.s.array() >= cfg_.H - 2).any()) out.truncation_warning = true;
        out.draws.push_back(std::move(snap));
        ++stored;
      }
    }
    out.loglik.conservativeResize(stored, Eigen::NoChange);
    out.accept_lambda = lambda_proposals_ ? double(lambda_accepts_) / lambda_proposals_ : 0.0;
    out.accept_psi = psi_proposals_ ? double(psi_accepts_) / psi_proposals_ : 0.0;
    out.accept_phi = phi_proposals_ ? double(phi_accepts_) / phi_proposals_ : 0.0;
    out.sampling_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

  // Marginal likelihood of the transformed stick data for cluster k at a
  // candidate lambda, over active times only.
  double lambda_marginal_loglik(int k, double lam) const {
    int T = data_.T();
    std::vector<int> active;
    for (int t = 0; t < T; ++t)
      if (ws_.m(k, t) > 0) active.push_back(t);
    int d = static_cast<int>(active.size());
    if (d == 0) return 0.0;
    VectorXd obs(d);
    MatrixXd cov(d, d);
    for (int a = 0; a < d; ++a) {
      int t = active[a];
      obs[a] = (ws_.r(k, t) - 0.5 * ws_.m(k, t)) / state_.xi(k, t);
      for (int b = 0; b < d; ++b)
        cov(a, b) = lam * std::pow(state_.psi, std::abs(active[a] - active[b]));
      cov(a, a) += 1.0 / state_.xi(k, t);
    }
    VectorXd mean = VectorXd::Constant(d, 0.5 * lam * (1.0 - state_.alpha));
    return mvn_log_density(obs, mean, cov);
  }

  std::pair<double, double> lambda_proposal_params() const {
    double alpha = state_.alpha;
    if (!cfg_.adapt_lambda_proposal || lambda_avg_count_ == 0) return {1.0, alpha};
    // Match the Polya first moment to the running average of lambda under
    // a' + b' = 1 + alpha. The mean is symmetric in (a', b') and minimized
    // at the midpoint, so search one branch by bisection.
    double total = 1.0 + alpha;
    double target = lambda_window_avg_;
    double mid = 0.5 * total;
    if (polya_mean(mid, mid) >= target) return {mid, mid};
    double lo = 1e-8, hi = mid;
    for (int it = 0; it < 80; ++it) {
      double a = 0.5 * (lo + hi);
      (polya_mean(a, total - a) > target ? lo : hi) = a;
    }
    double a = 0.5 * (lo + hi);
    return {a, total - a};
  }

  int occupied_clusters_at(int t) const {
    int k = 0;
    for (int c = 0; c < cfg_.H; ++c)
      if (ws_.r(c, t) > 0) ++k;
    return k;
  }

 private:
  void resolve_base_measure() {
    resolved_theta0_ = cfg_.base_theta0;
    resolved_sigma0_sq_ = cfg_.base_sigma0_sq;
    if (cfg_.base_from_data) {
      double sum = 0.0;
      int cnt = 0;
      for (int i = 0; i < data_.n(); ++i)
        for (int t = 0; t < data_.T(); ++t)
          if (data_.observed(i, t)) {
            sum += data_.y(i, t);
            ++cnt;
          }
      double ybar = (cnt > 0) ? sum / cnt : 0.0;
      double ss = 0.0;
      for (int i = 0; i < data_.n(); ++i)
        for (int t = 0; t < data_.T(); ++t)
          if (data_.observed(i, t)) ss += (data_.y(i, t) - ybar) * (data_.y(i, t) - ybar);
      resolved_theta0_ = ybar;
      resolved_sigma0_sq_ = (cnt > 1 && ss > 0.0) ? 2.0 * ss / (cnt - 1) : 1.0;
    }
  }

  // Runs fn(k, rng) for k in [0, count) with a per-(iteration, block, k)
  // substream, so results are identical for any worker count.
  void parallel_over_k(int count, const std::function<void(int, Rng&)>& fn, int iter,
                       int block_id) {
    auto stream_id = [&](int k) {
      return (static_cast<std::uint64_t>(iter) << 20) |
             (static_cast<std::uint64_t>(block_id) << 16) | static_cast<std::uint64_t>(k + 1);
    };
    int workers = std::max(1, cfg_.workers);
    if (workers == 1 || count < 2) {
      for (int k = 0; k < count; ++k) {
        Rng rng = make_rng(cfg_.seed, stream_id(k));
        fn(k, rng);
      }
      return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex err_mu;
    for (int w = 0; w < std::min(workers, count); ++w) {
      pool.emplace_back([&]() {
        int k;
        while ((k = next.fetch_add(1)) < count) {
          try {
            Rng rng = make_rng(cfg_.seed, stream_id(k));
            fn(k, rng);
          } catch (...) {
            std::lock_guard<std::mutex> lk(err_mu);
            if (!err) err = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
  }

  ModelConfig cfg_;
  PanelDataset data_;
  Rng master_rng_;
  ChainState state_;
  StickUpdateWorkspace ws_;
  double resolved_theta0_ = 0.0;
  double resolved_sigma0_sq_ = 1.0;

  double lambda_window_avg_ = 0.0;
  int lambda_avg_count_ = 0;
  long lambda_accepts_ = 0, lambda_proposals_ = 0;
  long psi_accepts_ = 0, psi_proposals_ = 0;
  long phi_accepts_ = 0, phi_proposals_ = 0;
};

// ---------------------------------------------------------------------------
// Prior simulation of the full latent state and data regeneration
// (used by joint-distribution checks and the scenario generators).

inline ChainState prior_draw_state(const ModelConfig& cfg, const PanelDataset& data, Rng& rng) {
  int n = data.n(), T = data.T(), H = cfg.H, p = data.p();
  ChainState st;
  st.s.setZero(n, T);
  st.theta.resize(H);
  st.sigma_sq.resize(H);
  st.eps.setZero(H, T);
  st.lambda.resize(H);
  st.xi.setZero(H, T);
  st.weights.resize(H, T);

  st.alpha = sample_stirling_gamma(StirlingGammaParams(cfg.sg_a, cfg.sg_b, n), rng);
  std::uniform_real_distribution<double> upsi(-1.0, 1.0);
  st.psi = upsi(rng);
  std::gamma_distribution<double> gphi(cfg.a_phi, 1.0);
  st.phi = gphi(rng) / cfg.b_phi;
  std::gamma_distribution<double> gtau(cfg.a_tau, 1.0);
  st.tau_sq = cfg.b_tau / gtau(rng);
  if (cfg.rho_sq_estimated) {
    std::gamma_distribution<double> grho(cfg.a_rho, 1.0);
    st.rho_sq = cfg.b_rho / grho(rng);
  } else {
    st.rho_sq = cfg.rho_sq_fixed;
  }

  std::normal_distribution<double> norm(0.0, 1.0);
  st.beta.resize(p);
  for (int j = 0; j < p; ++j) st.beta[j] = std::sqrt(st.rho_sq) * norm(rng);

  MatrixXd corr = spatial_correlation(data.dist, st.phi);
  auto llt = cholesky_with_jitter(corr);
  VectorXd z(n);
  for (int i = 0; i < n; ++i) z[i] = norm(rng);
  VectorXd lz = llt.matrixL() * z;
  st.gamma = std::sqrt(st.tau_sq) * lz;

  std::gamma_distribution<double> ga0(cfg.base_a0, 1.0);
  for (int k = 0; k < H; ++k) {
    st.theta[k] = cfg.base_theta0 + std::sqrt(2.0 * cfg.base_sigma0_sq) * norm(rng);
    st.sigma_sq[k] = cfg.base_b0 / ga0(rng);
  }

  AR1Kernel kernel(st.psi, T);
  Tridiag prec = ar1_precision(kernel);
  for (int k = 0; k < H; ++k) {
    st.lambda[k] = sample_polya(1.0, st.alpha, rng);
    Tridiag q{prec.diag / st.lambda[k], prec.off / st.lambda[k]};
    TridiagFactor fac(q);
    VectorXd mean = VectorXd::Constant(T, 0.5 * st.lambda[k] * (1.0 - st.alpha));
    st.eps.row(k) = fac.sample(mean, rng).transpose();
  }
  compute_weights(st);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < n; ++i) {
      double u = unif(rng);
      double acc = 0.0;
      int pick = H - 1;
      for (int k = 0; k < H; ++k) {
        acc += st.weights(k, t);
        if (u <= acc) {
          pick = k;
          break;
        }
      }
      st.s(i, t) = pick;
    }
  return st;
}

inline void regenerate_data(const ChainState& st, PanelDataset& data, Rng& rng) {
  std::normal_distribution<double> norm(0.0, 1.0);
  for (int t = 0; t < data.T(); ++t)
    for (int i = 0; i < data.n(); ++i) {
      if (!data.observed(i, t)) continue;
      double mu = st.cell_mean(data, i, t);
      data.y(i, t) = mu + std::sqrt(st.sigma_sq[st.s(i, t)]) * norm(rng);
    }
}

}  // namespace dynclust
