#pragma once

// Panel data model and hyperparameter configuration.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dynclust/common.hpp"

namespace dynclust {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kEarthRadiusKm = 6371.0;

inline double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  double phi1 = lat1 * M_PI / 180.0, phi2 = lat2 * M_PI / 180.0;
  double dphi = phi2 - phi1;
  double dlam = (lon2 - lon1) * M_PI / 180.0;
  double s = std::sin(dphi / 2.0), c = std::sin(dlam / 2.0);
  double h = s * s + std::cos(phi1) * std::cos(phi2) * c * c;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

struct PanelDataset {
  MatrixXd y;                          // n x T response
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> observed;  // n x T
  std::vector<MatrixXd> x;             // per-time n x p covariates (T entries); empty if p == 0
  MatrixXd coords;                     // n x 2 (lat, lon)
  MatrixXd dist;                       // n x n great-circle distances, km
  std::vector<std::string> station_ids;
  std::vector<std::string> time_labels;

  int n() const { return static_cast<int>(y.rows()); }
  int T() const { return static_cast<int>(y.cols()); }
  int p() const { return x.empty() ? 0 : static_cast<int>(x.front().cols()); }

  int observed_count() const {
    int c = 0;
    for (int i = 0; i < n(); ++i)
      for (int t = 0; t < T(); ++t)
        if (observed(i, t)) ++c;
    return c;
  }

  void compute_distances() {
    int nn = n();
    dist.resize(nn, nn);
    for (int i = 0; i < nn; ++i) {
      dist(i, i) = 0.0;
      for (int j = i + 1; j < nn; ++j) {
        double d = haversine_km(coords(i, 0), coords(i, 1), coords(j, 0), coords(j, 1));
        dist(i, j) = dist(j, i) = d;
      }
    }
  }
};

struct ModelConfig {
  // Stirling-gamma prior on the concentration parameter (m is fixed to n)
  double sg_a = 1.0;
  double sg_b = 0.25;

  // truncation level of the stick-breaking representation
  int H = 25;

  // base measure: theta ~ N(theta0, 2*sigma0_sq), sigma^2 ~ IG(a0, b0)
  double base_theta0 = 0.0;
  double base_sigma0_sq = 1.0;
  double base_a0 = 0.1;
  double base_b0 = 0.1;
  bool base_from_data = true;  // set theta0 = ybar, sigma0_sq = 2*s^2 at init

  // spatial GP and variance hyperpriors
  double a_phi = 0.1;
  double b_phi = 0.1;
  double a_rho = 0.1;
  double b_rho = 0.1;
  double a_tau = 0.1;
  double b_tau = 0.1;
  bool rho_sq_estimated = true;
  double rho_sq_fixed = 1.0;

  // MCMC controls
  int n_iter = 20000;
  int burn_in = 10000;
  int thin = 5;
  std::uint64_t seed = 0;
  double psi_step = 0.3;      // random-walk step on atanh(psi)
  double log_phi_step = 0.5;  // random-walk step on log(phi)
  int pg_exact_threshold = 170;
  bool adapt_lambda_proposal = true;  // frozen at burn-in end either way
  bool store_latents = false;
  bool single_cluster = false;  // ablation: pin every membership to cluster 1
  int workers = 1;              // per-k parallel workers in the stick updates
};

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> violations;

  void fail(const std::string& msg) {
    ok = false;
    violations.push_back(msg);
  }
};

inline ValidationReport validate_config(const ModelConfig& cfg, const PanelDataset& data) {
  ValidationReport rep;
  int n = data.n();
  double ratio = cfg.sg_a / cfg.sg_b;
  if (cfg.sg_a <= 0.0 || cfg.sg_b <= 0.0)
    rep.fail("Stirling-gamma parameters a, b must be positive");
  else if (!(ratio > 1.0 && ratio < static_cast<double>(n)))
    rep.fail("Stirling-gamma constraint violated: need 1 < a/b < n (a/b = " +
             std::to_string(ratio) + ", n = " + std::to_string(n) + ")");
  if (cfg.H < 2) rep.fail("truncation level H must be >= 2 (last stick is forced to 1)");
  if (cfg.n_iter <= 0) rep.fail("n_iter must be positive");
  if (cfg.burn_in < 0 || cfg.burn_in >= cfg.n_iter) rep.fail("need 0 <= burn_in < n_iter");
  if (cfg.thin < 1) rep.fail("thin must be >= 1");
  if (cfg.base_sigma0_sq <= 0.0 && !cfg.base_from_data) rep.fail("base_sigma0_sq must be positive");
  if (cfg.base_a0 <= 0.0 || cfg.base_b0 <= 0.0) rep.fail("base a0, b0 must be positive");
  for (auto [v, name] : {std::pair<double, const char*>{cfg.a_phi, "a_phi"},
                         {cfg.b_phi, "b_phi"},
                         {cfg.a_rho, "a_rho"},
                         {cfg.b_rho, "b_rho"},
                         {cfg.a_tau, "a_tau"},
                         {cfg.b_tau, "b_tau"}}) {
    if (v <= 0.0) rep.fail(std::string(name) + " must be positive");
  }
  if (cfg.psi_step <= 0.0 || cfg.log_phi_step <= 0.0) rep.fail("MH step sizes must be positive");
  if (data.n() < 1 || data.T() < 1) rep.fail("dataset must have at least one station and time");
  if (data.dist.rows() != n || data.dist.cols() != n)
    rep.fail("distance matrix must be n x n");
  else {
    for (int i = 0; i < n; ++i) {
      if (std::abs(data.dist(i, i)) > 1e-9) {
        rep.fail("distance matrix must have zero diagonal");
        break;
      }
      bool bad = false;
      for (int j = 0; j < n; ++j)
        if (std::abs(data.dist(i, j) - data.dist(j, i)) > 1e-6 || data.dist(i, j) < 0.0) {
          rep.fail("distance matrix must be symmetric and nonnegative");
          bad = true;
          break;
        }
      if (bad) break;
    }
  }
  for (int i = 0; i < data.n(); ++i)
    for (int t = 0; t < data.T(); ++t)
      if (data.observed(i, t) && !std::isfinite(data.y(i, t))) {
        rep.fail("observed cell (" + std::to_string(i) + "," + std::to_string(t) +
                 ") has nonfinite response");
      }
  return rep;
}

}  // namespace dynclust
