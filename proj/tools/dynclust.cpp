// Command-line front end: scenario simulation, chain fitting, posterior
// summaries, predictive diagnostics, and config/data validation.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "dynclust/io.hpp"
#include "dynclust/simulate.hpp"

namespace fs = std::filesystem;
using namespace dynclust;

namespace {

int fail(const std::string& type, const std::string& message) {
  nlohmann::json j = {{"error", {{"type", type}, {"message", message}}}};
  std::cerr << j.dump() << "\n";
  return 1;
}

int env_workers() {
  const char* v = std::getenv("DYNCLUST_WORKERS");
  if (!v) return 0;
  int w = std::atoi(v);
  return w > 0 ? w : 0;
}

std::string cocluster_path(const fs::path& dir, const std::string& stem,
                           const std::string& label) {
  return (dir / (stem + "_t" + label + ".csv")).string();
}

void write_cocluster_stack(const fs::path& dir, const std::string& stem,
                           const CoclusterStack& stack,
                           const std::vector<std::string>& station_ids,
                           const std::vector<std::string>& time_labels) {
  for (int t = 0; t < stack.T(); ++t)
    write_matrix_csv(cocluster_path(dir, stem, time_labels[t]), stack.mats[t], station_ids,
                     station_ids, "station_id");
}

struct FitFlags {
  std::string config_path, data_path, out_dir = ".";
  std::uint64_t seed = 0;
  int chains = 1;
  int iters = -1, burnin = -1, thin = -1;
  bool store_latents = false;
  bool single_cluster = false;
  std::string preset;
};

ModelConfig resolve_config(const FitFlags& f, const CLI::App* sub) {
  ModelConfig cfg;
  if (!f.config_path.empty()) cfg = load_config(f.config_path);
  if (!f.preset.empty()) {
    if (f.preset == "default") {
      cfg.n_iter = 20000;
      cfg.burn_in = 10000;
      cfg.thin = 5;
    } else if (f.preset == "large") {
      cfg.n_iter = 200000;
      cfg.burn_in = 20000;
      cfg.thin = 25;
    } else {
      throw invalid_parameter("unknown preset '" + f.preset + "' (default, large)");
    }
  }
  if (sub->count("--seed")) cfg.seed = f.seed;
  if (f.iters > 0) cfg.n_iter = f.iters;
  if (f.burnin >= 0) cfg.burn_in = f.burnin;
  if (f.thin > 0) cfg.thin = f.thin;
  if (f.store_latents) cfg.store_latents = true;
  if (f.single_cluster) cfg.single_cluster = true;
  if (int w = env_workers(); w > 0) cfg.workers = w;
  return cfg;
}

int cmd_simulate(const std::string& mode, int n, int T, int p, double jump_rate,
                 std::uint64_t seed, const std::string& out_dir) {
  ScenarioSpec spec;
  spec.n = n;
  spec.T = T;
  spec.p = p;
  spec.jump_rate = jump_rate;
  spec.seed = seed;
  if (mode == "balanced")
    spec.mode = ScenarioMode::kBalanced;
  else if (mode == "imbalanced")
    spec.mode = ScenarioMode::kImbalanced;
  else
    throw invalid_parameter("unknown scenario '" + mode + "' (balanced, imbalanced)");
  auto [data, truth] = generate(spec);
  fs::path dir(out_dir);
  fs::create_directories(dir);
  write_panel_csv((dir / "panel.csv").string(), data);
  write_partition_series_csv((dir / "truth_partitions.csv").string(), truth.partitions,
                             data.station_ids, data.time_labels);
  write_cocluster_stack(dir, "truth_cocluster", truth.cocluster, data.station_ids,
                        data.time_labels);
  std::cout << "wrote " << (dir / "panel.csv").string() << " (" << n << " stations, " << T
            << " times) plus truth files\n";
  return 0;
}

int cmd_fit(const FitFlags& f, const CLI::App* sub) {
  ModelConfig cfg = resolve_config(f, sub);
  PanelDataset data = load_panel_csv(f.data_path);
  fs::path dir(f.out_dir);
  fs::create_directories(dir);

  auto t0 = std::chrono::steady_clock::now();
  std::vector<PosteriorDraws> results(f.chains);
  std::vector<std::string> errors(f.chains);
  auto run_chain = [&](int c) {
    try {
      ModelConfig chain_cfg = cfg;
      chain_cfg.seed = cfg.seed + c;
      GibbsSampler sampler(chain_cfg, data);
      results[c] = sampler.run();
    } catch (const std::exception& e) {
      errors[c] = e.what();
    }
  };
  if (f.chains == 1) {
    run_chain(0);
  } else {
    std::vector<std::thread> threads;
    for (int c = 0; c < f.chains; ++c) threads.emplace_back(run_chain, c);
    for (auto& th : threads) th.join();
  }
  for (int c = 0; c < f.chains; ++c)
    if (!errors[c].empty()) throw numerical_error("chain " + std::to_string(c + 1) + ": " + errors[c]);

  double sampling_seconds = 0.0;
  for (const auto& r : results) sampling_seconds += r.sampling_seconds;
  auto t1 = std::chrono::steady_clock::now();
  for (int c = 0; c < f.chains; ++c) {
    std::string stem = "chain_" + std::to_string(c + 1);
    save_draws((dir / (stem + ".draws")).string(), results[c]);
    export_draws_csv((dir / (stem + "_params.csv")).string(), results[c]);
  }
  write_config((dir / "config_used.txt").string(), cfg);

  RunManifest manifest;
  manifest.config = cfg;
  manifest.dataset_path = f.data_path;
  manifest.dataset_hash = hash_file(f.data_path);
  manifest.seed = cfg.seed;
  manifest.chains = f.chains;
  manifest.accept_lambda = results[0].accept_lambda;
  manifest.accept_psi = results[0].accept_psi;
  manifest.accept_phi = results[0].accept_phi;
  manifest.sampling_minutes = sampling_seconds / 60.0;
  manifest.post_minutes =
      std::chrono::duration<double>(t1 - t0).count() / 60.0 - sampling_seconds / 60.0;
  if (manifest.post_minutes < 0.0) manifest.post_minutes = 0.0;
  manifest.truncation_warning = results[0].truncation_warning;
  write_manifest((dir / "manifest.json").string(), manifest);

  std::cout << f.chains << " chain(s), " << results[0].num_draws()
            << " retained draws each; acceptance lambda=" << results[0].accept_lambda
            << " psi=" << results[0].accept_psi << " phi=" << results[0].accept_phi << "\n";
  if (results[0].truncation_warning)
    std::cout << "warning: the last stick-breaking cluster was occupied; consider a larger H\n";
  return 0;
}

int cmd_summarize(const std::string& draws_path, const std::string& data_path,
                  const std::string& out_dir, int max_lag) {
  PosteriorDraws draws = load_draws(draws_path);
  PanelDataset data = load_panel_csv(data_path);
  if (data.n() != draws.n || data.T() != draws.T)
    throw invalid_parameter("summarize: draw file and dataset dimensions disagree");
  fs::path dir(out_dir);
  fs::create_directories(dir);

  auto stack = cocluster_probs(draws);
  write_cocluster_stack(dir, "cocluster", stack, data.station_ids, data.time_labels);
  auto series = vi_partition_series(draws);
  write_partition_series_csv((dir / "partitions.csv").string(), series, data.station_ids,
                             data.time_labels);
  if (max_lag >= draws.T) max_lag = draws.T - 1;
  if (max_lag >= 1) {
    auto table = lagged_ari(series, max_lag);
    std::vector<std::string> lag_names;
    for (int lag = 1; lag <= max_lag; ++lag) lag_names.push_back("lag_" + std::to_string(lag));
    write_matrix_csv((dir / "lagged_ari.csv").string(), table, data.time_labels, lag_names,
                     "lag");
  }
  std::cout << "wrote co-clustering matrices, VI partitions, and lagged-ARI table to " << out_dir
            << "\n";
  return 0;
}

int cmd_diagnose(const std::string& draws_path, const std::string& out_dir) {
  PosteriorDraws draws = load_draws(draws_path);
  fs::path dir(out_dir);
  fs::create_directories(dir);
  auto w = waic(draws.loglik);
  auto loo = psis_loo(draws.loglik);

  nlohmann::json j;
  j["waic"] = {{"waic", w.waic}, {"lppd", w.lppd}, {"penalty", w.penalty}};
  j["psis_loo"] = {{"loo", loo.loo},
                   {"elpd", loo.elpd},
                   {"n_high_pareto_k", loo.n_high_k},
                   {"fallback_plain_is", loo.fallback_plain_is}};
  j["acceptance"] = {{"lambda", draws.accept_lambda},
                     {"psi", draws.accept_psi},
                     {"phi", draws.accept_phi}};
  j["num_draws"] = draws.num_draws();
  j["truncation_warning"] = draws.truncation_warning;
  {
    std::ofstream out((dir / "diagnostics.json").string());
    out << j.dump(2) << "\n";
  }

  std::ofstream cell((dir / "pointwise.csv").string());
  cell << "station,time,waic_pointwise,loo_pointwise,pareto_k\n";
  for (std::size_t c = 0; c < draws.cells.size(); ++c)
    cell << draws.cells[c].first << "," << draws.cells[c].second << "," << w.pointwise[c] << ","
         << loo.pointwise[c] << "," << loo.pareto_k[c] << "\n";

  // Pareto-k histogram on the standard diagnostic bands
  std::vector<std::pair<std::string, int>> bands = {
      {"k<=0.5", 0}, {"0.5<k<=0.7", 0}, {"0.7<k<=1", 0}, {"k>1", 0}};
  for (int c = 0; c < loo.pareto_k.size(); ++c) {
    double k = loo.pareto_k[c];
    if (k <= 0.5)
      bands[0].second += 1;
    else if (k <= 0.7)
      bands[1].second += 1;
    else if (k <= 1.0)
      bands[2].second += 1;
    else
      bands[3].second += 1;
  }
  std::ofstream hist((dir / "pareto_k_hist.csv").string());
  hist << "band,cells\n";
  for (const auto& [name, count] : bands) hist << name << "," << count << "\n";

  std::cout << "WAIC " << w.waic << " (lppd " << w.lppd << ", penalty " << w.penalty << "); LOO "
            << loo.loo << " (" << loo.n_high_k << " cells with Pareto k > 0.7)\n";
  return 0;
}

int cmd_validate(const std::string& data_path, const std::string& config_path) {
  ModelConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  PanelDataset data = load_panel_csv(data_path);
  auto rep = validate_config(cfg, data);
  if (!rep.ok) {
    nlohmann::json j;
    j["error"] = {{"type", "validation"}, {"message", "configuration or data invalid"}};
    j["violations"] = rep.violations;
    std::cerr << j.dump() << "\n";
    return 1;
  }
  std::cout << "ok: " << data.n() << " stations, " << data.T() << " times, " << data.p()
            << " covariates, " << data.observed_count() << " observed cells\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynclust: Bayesian dynamic clustering of panel data"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic scenario with known truth");
  std::string sim_mode = "balanced", sim_out = ".";
  int sim_n = 64, sim_T = 60, sim_p = 5;
  double sim_jump = 0.10;
  std::uint64_t sim_seed = 0;
  sim->add_option("--scenario", sim_mode, "balanced or imbalanced")->capture_default_str();
  sim->add_option("--n", sim_n, "number of stations")->capture_default_str();
  sim->add_option("--T", sim_T, "number of time points")->capture_default_str();
  sim->add_option("--p", sim_p, "number of covariates")->capture_default_str();
  sim->add_option("--jump-rate", sim_jump, "per-step jump fraction (balanced mode)")
      ->capture_default_str();
  sim->add_option("--seed", sim_seed, "rng seed")->capture_default_str();
  sim->add_option("--out-dir", sim_out, "output directory")->capture_default_str();

  // fit
  auto* fit = app.add_subcommand("fit", "run the blocked Gibbs sampler");
  FitFlags ff;
  fit->add_option("--data", ff.data_path, "panel CSV")->required();
  fit->add_option("--config", ff.config_path, "config file (key = value per line)");
  fit->add_option("--seed", ff.seed, "rng seed (overrides config)");
  fit->add_option("--chains", ff.chains, "number of chains")->capture_default_str();
  fit->add_option("--iters", ff.iters, "total iterations");
  fit->add_option("--burnin", ff.burnin, "burn-in iterations");
  fit->add_option("--thin", ff.thin, "thinning interval");
  fit->add_option("--out-dir", ff.out_dir, "output directory")->capture_default_str();
  fit->add_option("--preset", ff.preset, "MCMC control preset: default (20000/10000/5) or large (200000/20000/25)");
  fit->add_flag("--store-latents", ff.store_latents, "store stick paths and Polya scales");
  fit->add_flag("--single-cluster", ff.single_cluster, "ablation: one shared cluster");

  // summarize
  auto* summ = app.add_subcommand("summarize", "co-clustering, VI partitions, lagged ARI");
  std::string su_draws, su_data, su_out = ".";
  int su_max_lag = 5;
  summ->add_option("--draws", su_draws, "draw file from fit")->required();
  summ->add_option("--data", su_data, "panel CSV the chain was fitted to")->required();
  summ->add_option("--out-dir", su_out, "output directory")->capture_default_str();
  summ->add_option("--max-lag", su_max_lag, "largest ARI lag")->capture_default_str();

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "WAIC, PSIS-LOO, acceptance and Pareto-k report");
  std::string di_draws, di_out = ".";
  diag->add_option("--draws", di_draws, "draw file from fit")->required();
  diag->add_option("--out-dir", di_out, "output directory")->capture_default_str();

  // validate
  auto* val = app.add_subcommand("validate", "check config and data without sampling");
  std::string va_data, va_config;
  val->add_option("--data", va_data, "panel CSV")->required();
  val->add_option("--config", va_config, "config file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed())
      return cmd_simulate(sim_mode, sim_n, sim_T, sim_p, sim_jump, sim_seed, sim_out);
    if (fit->parsed()) return cmd_fit(ff, fit);
    if (summ->parsed()) return cmd_summarize(su_draws, su_data, su_out, su_max_lag);
    if (diag->parsed()) return cmd_diagnose(di_draws, di_out);
    if (val->parsed()) return cmd_validate(va_data, va_config);
  } catch (const ingestion_error& e) {
    return fail("ingestion", e.what());
  } catch (const invalid_parameter& e) {
    return fail("invalid_parameter", e.what());
  } catch (const numerical_error& e) {
    return fail("numerical", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
