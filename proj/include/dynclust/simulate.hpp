#pragma once

// Synthetic panel generators with known dynamic ground-truth partitions:
// balanced (random 10% jumps per step) and imbalanced (70-15-15 shares with
// two jumpers per cluster per step) scenarios.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dynclust/data.hpp"
#include "dynclust/sampler.hpp"
#include "dynclust/summary.hpp"

namespace dynclust {

enum class ScenarioMode { kBalanced, kImbalanced };

struct ScenarioSpec {
  int n = 64;
  int T = 60;
  std::vector<double> cluster_means = {5.0, 32.0, 60.0};
  double cluster_var = 1.0;
  ScenarioMode mode = ScenarioMode::kBalanced;
  double jump_rate = 0.10;                               // balanced mode
  std::vector<double> imbalanced_ratio = {0.70, 0.15, 0.15};
  double beta_mean = 3.0;
  double beta_sd = 1.0;
  double gamma_mean = 3.0;
  double tau_sq = 2.0;
  double phi_km = 100.0;
  int p = 5;
  std::uint64_t seed = 0;
  // bounding box roughly covering continental Chile (lat, lon)
  double lat_min = -56.0, lat_max = -17.0;
  double lon_min = -76.0, lon_max = -66.0;
};

struct ScenarioTruth {
  PartitionSeries partitions;
  CoclusterStack cocluster;
  VectorXd beta;
  VectorXd gamma;
};

inline void generate_locations(int n, double lat_min, double lat_max, double lon_min,
                               double lon_max, Rng& rng, MatrixXd* coords, MatrixXd* dist) {
  if (n < 1) throw invalid_parameter("generate_locations: n must be >= 1");
  if (!(lat_max > lat_min) || !(lon_max > lon_min))
    throw invalid_parameter("generate_locations: degenerate bounding box");
  std::uniform_real_distribution<double> ulat(lat_min, lat_max), ulon(lon_min, lon_max);
  coords->resize(n, 2);
  for (int i = 0; i < n; ++i) {
    (*coords)(i, 0) = ulat(rng);
    (*coords)(i, 1) = ulon(rng);
  }
  dist->resize(n, n);
  for (int i = 0; i < n; ++i) {
    (*dist)(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) {
      double d = haversine_km((*coords)(i, 0), (*coords)(i, 1), (*coords)(j, 0), (*coords)(j, 1));
      (*dist)(i, j) = (*dist)(j, i) = d;
    }
  }
}

namespace detail {

inline std::vector<int> initial_memberships(const ScenarioSpec& spec, Rng& rng) {
  int k = static_cast<int>(spec.cluster_means.size());
  std::vector<int> s(spec.n);
  if (spec.mode == ScenarioMode::kBalanced) {
    std::uniform_int_distribution<int> pick(0, k - 1);
    for (int i = 0; i < spec.n; ++i) s[i] = pick(rng);
  } else {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < spec.n; ++i) {
      double u = unif(rng), acc = 0.0;
      s[i] = k - 1;
      for (int c = 0; c < k; ++c) {
        acc += spec.imbalanced_ratio[c];
        if (u <= acc) {
          s[i] = c;
          break;
        }
      }
    }
  }
  return s;
}

inline void evolve_memberships(const ScenarioSpec& spec, std::vector<int>& s, Rng& rng) {
  int k = static_cast<int>(spec.cluster_means.size());
  std::uniform_int_distribution<int> other(0, k - 2);
  auto jump = [&](int i) {
    int off = other(rng);
    s[i] = (off >= s[i]) ? off + 1 : off;  // either other cluster, equal probability
  };
  if (spec.mode == ScenarioMode::kBalanced) {
    int jumpers = std::max(1, static_cast<int>(std::lround(spec.jump_rate * spec.n)));
    std::vector<int> idx(spec.n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int j = 0; j < jumpers; ++j) {
      std::uniform_int_distribution<int> pick(j, spec.n - 1);
      std::swap(idx[j], idx[pick(rng)]);
      jump(idx[j]);
    }
  } else {
    // two members of each cluster jump, keeping the shares roughly stable
    std::vector<int> snapshot = s;
    for (int c = 0; c < k; ++c) {
      std::vector<int> members;
      for (int i = 0; i < spec.n; ++i)
        if (snapshot[i] == c) members.push_back(i);
      int jumpers = std::min<int>(2, static_cast<int>(members.size()));
      for (int j = 0; j < jumpers; ++j) {
        std::uniform_int_distribution<int> pick(j, static_cast<int>(members.size()) - 1);
        std::swap(members[j], members[pick(rng)]);
        jump(members[j]);
      }
    }
  }
}

}  // namespace detail

inline std::pair<PanelDataset, ScenarioTruth> generate(const ScenarioSpec& spec) {
  int k = static_cast<int>(spec.cluster_means.size());
  if (k < 2) throw invalid_parameter("generate: need at least two cluster means");
  for (int a = 0; a < k; ++a)
    for (int b = a + 1; b < k; ++b)
      if (spec.cluster_means[a] == spec.cluster_means[b])
        throw invalid_parameter("generate: cluster means must be distinct");
  if (spec.mode == ScenarioMode::kImbalanced) {
    double total = std::accumulate(spec.imbalanced_ratio.begin(), spec.imbalanced_ratio.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9)
      throw invalid_parameter("generate: imbalanced ratios must sum to 1");
  }
  if (spec.jump_rate < 0.0 || spec.jump_rate > 1.0)
    throw invalid_parameter("generate: jump_rate must be in [0,1]");

  Rng rng = make_rng(spec.seed, 0x5157);
  PanelDataset data;
  data.y.resize(spec.n, spec.T);
  data.observed.setConstant(spec.n, spec.T, true);
  generate_locations(spec.n, spec.lat_min, spec.lat_max, spec.lon_min, spec.lon_max, rng,
                     &data.coords, &data.dist);
  data.station_ids.resize(spec.n);
  data.time_labels.resize(spec.T);
  for (int i = 0; i < spec.n; ++i) data.station_ids[i] = "S" + std::to_string(i + 1);
  for (int t = 0; t < spec.T; ++t) data.time_labels[t] = std::to_string(t + 1);

  std::uniform_real_distribution<double> unif01(0.0, 1.0);
  data.x.clear();
  for (int t = 0; t < spec.T; ++t) {
    MatrixXd xt(spec.n, spec.p);
    for (int i = 0; i < spec.n; ++i)
      for (int j = 0; j < spec.p; ++j) xt(i, j) = unif01(rng);
    data.x.push_back(std::move(xt));
  }

  ScenarioTruth truth;
  std::normal_distribution<double> norm(0.0, 1.0);
  truth.beta.resize(spec.p);
  for (int j = 0; j < spec.p; ++j) truth.beta[j] = spec.beta_mean + spec.beta_sd * norm(rng);

  MatrixXd kernel =
      spec.tau_sq * (-data.dist.array().square() / (2.0 * spec.phi_km * spec.phi_km)).exp();
  kernel.diagonal().array() += 1e-8 * spec.tau_sq;
  auto llt = cholesky_with_jitter(kernel);
  VectorXd z(spec.n);
  for (int i = 0; i < spec.n; ++i) z[i] = norm(rng);
  truth.gamma = VectorXd::Constant(spec.n, spec.gamma_mean) + llt.matrixL() * z;

  std::vector<int> s = detail::initial_memberships(spec, rng);
  double sd = std::sqrt(spec.cluster_var);
  for (int t = 0; t < spec.T; ++t) {
    if (t > 0 && spec.jump_rate > 0.0) detail::evolve_memberships(spec, s, rng);
    truth.partitions.parts.push_back(canonicalize(s));
    for (int i = 0; i < spec.n; ++i) {
      double mu = spec.cluster_means[s[i]] + data.x[t].row(i).dot(truth.beta) + truth.gamma[i];
      data.y(i, t) = mu + sd * norm(rng);
    }
  }
  truth.cocluster = cocluster_from_partitions(truth.partitions);
  return {std::move(data), std::move(truth)};
}

}  // namespace dynclust
