#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "dynclust/io.hpp"
#include "dynclust/simulate.hpp"

using namespace dynclust;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("dynclust_io_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool message_contains(const std::exception& e, const std::string& needle) {
  return std::string(e.what()).find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("load_panel_csv: basic long-format ingestion") {
  TempDir dir;
  auto path = dir.file("panel.csv");
  write_text(path,
             "station_id,time,y,lat,lon,temp\n"
             "A,2010-01,1.5,-33.4,-70.6,20.0\n"
             "A,2010-02,2.5,-33.4,-70.6,21.0\n"
             "B,2010-01,3.5,-36.8,-73.0,18.0\n"
             "B,2010-02,NA,-36.8,-73.0,17.0\n");
  std::vector<std::string> names;
  auto data = load_panel_csv(path, {}, &names);
  REQUIRE(data.n() == 2);
  REQUIRE(data.T() == 2);
  REQUIRE(data.p() == 1);
  CHECK(names == std::vector<std::string>{"temp"});
  CHECK(data.station_ids == std::vector<std::string>{"A", "B"});
  CHECK(data.time_labels == std::vector<std::string>{"2010-01", "2010-02"});
  CHECK(data.y(0, 0) == 1.5);
  CHECK(data.y(0, 1) == 2.5);
  CHECK(data.y(1, 0) == 3.5);
  CHECK(data.observed(1, 1) == false);
  CHECK(data.x[1](0, 0) == 21.0);
  CHECK(data.dist(0, 1) == doctest::Approx(haversine_km(-33.4, -70.6, -36.8, -73.0)));
}

TEST_CASE("load_panel_csv: quarter-turn wind direction encodes to sin 1, cos 0") {
  TempDir dir;
  auto path = dir.file("panel.csv");
  write_text(path,
             "station_id,time,y,lat,lon,windDir\n"
             "A,1,1.0,-33.0,-70.0,90\n");
  CsvOptions opts;
  opts.angle_columns = {"windDir"};
  std::vector<std::string> names;
  auto data = load_panel_csv(path, opts, &names);
  REQUIRE(names == std::vector<std::string>{"windDir_sin", "windDir_cos"});
  CHECK(data.x[0](0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(data.x[0](0, 1)) < 1e-12);
}

TEST_CASE("load_panel_csv: wind directions 0 and 360 encode identically") {
  TempDir dir;
  auto path0 = dir.file("panel0.csv");
  auto path360 = dir.file("panel360.csv");
  write_text(path0, "station_id,time,y,lat,lon,windDir\nA,1,1.0,-33.0,-70.0,0\n");
  write_text(path360, "station_id,time,y,lat,lon,windDir\nA,1,1.0,-33.0,-70.0,360\n");
  CsvOptions opts;
  opts.angle_columns = {"windDir"};
  auto d0 = load_panel_csv(path0, opts);
  auto d360 = load_panel_csv(path360, opts);
  CHECK(d0.x[0](0, 0) == doctest::Approx(d360.x[0](0, 0)).epsilon(1e-12));
  CHECK(d0.x[0](0, 1) == doctest::Approx(d360.x[0](0, 1)).epsilon(1e-12));
}

TEST_CASE("load_panel_csv: squares and pairwise interactions") {
  TempDir dir;
  auto path = dir.file("panel.csv");
  write_text(path,
             "station_id,time,y,lat,lon,temp,hum\n"
             "A,1,1.0,-33.0,-70.0,3.0,0.5\n");
  CsvOptions opts;
  opts.square_columns = {"temp", "hum"};
  opts.interaction_columns = {{"temp", "hum"}};
  std::vector<std::string> names;
  auto data = load_panel_csv(path, opts, &names);
  REQUIRE(names ==
          std::vector<std::string>{"temp", "hum", "temp_sq", "hum_sq", "temp_x_hum"});
  CHECK(data.x[0](0, 2) == 9.0);
  CHECK(data.x[0](0, 3) == 0.25);
  CHECK(data.x[0](0, 4) == 1.5);
}

TEST_CASE("load_panel_csv: named errors carry row numbers") {
  TempDir dir;
  auto dup = dir.file("dup.csv");
  write_text(dup,
             "station_id,time,y,lat,lon\n"
             "A,1,1.0,-33.0,-70.0\n"
             "A,1,2.0,-33.0,-70.0\n");
  CHECK_THROWS_WITH_AS(load_panel_csv(dup), doctest::Contains("rows 2 and 3"), ingestion_error);

  auto bad = dir.file("bad.csv");
  write_text(bad,
             "station_id,time,y,lat,lon\n"
             "A,1,oops,-33.0,-70.0\n");
  try {
    load_panel_csv(bad);
    FAIL("expected ingestion_error");
  } catch (const ingestion_error& e) {
    CHECK(message_contains(e, "row 2"));
    CHECK(message_contains(e, "oops"));
  }

  auto empty_station = dir.file("empty.csv");
  write_text(empty_station,
             "station_id,time,y,lat,lon\n"
             "A,1,1.0,-33.0,-70.0\n"
             "B,1,NA,-34.0,-71.0\n");
  CHECK_THROWS_WITH_AS(load_panel_csv(empty_station),
                       doctest::Contains("station B has zero observed responses"),
                       ingestion_error);
}

TEST_CASE("load_panel_csv: month labels sort chronologically, gaps are rejected") {
  TempDir dir;
  auto path = dir.file("panel.csv");
  write_text(path,
             "station_id,time,y,lat,lon\n"
             "A,2010-02,2.0,-33.0,-70.0\n"
             "A,2009-12,1.0,-33.0,-70.0\n"
             "A,2010-01,1.5,-33.0,-70.0\n");
  auto data = load_panel_csv(path);
  CHECK(data.time_labels == std::vector<std::string>{"2009-12", "2010-01", "2010-02"});
  CHECK(data.y(0, 0) == 1.0);
  CHECK(data.y(0, 2) == 2.0);

  auto gap = dir.file("gap.csv");
  write_text(gap,
             "station_id,time,y,lat,lon\n"
             "A,2010-01,1.0,-33.0,-70.0\n"
             "A,2010-02,1.5,-33.0,-70.0\n"
             "A,2010-05,2.0,-33.0,-70.0\n");
  CHECK_THROWS_WITH_AS(load_panel_csv(gap), doctest::Contains("not equally spaced"),
                       ingestion_error);
}

TEST_CASE("panel CSV round trip: load, write, load yields identical tensors") {
  TempDir dir;
  auto path = dir.file("panel.csv");
  write_text(path,
             "station_id,time,y,lat,lon,windDir,temp\n"
             "A,2010-01,1.25,-33.437,-70.65,45,20.125\n"
             "A,2010-02,NA,-33.437,-70.65,135,21.0625\n"
             "B,2010-01,3.5,-36.82,-73.05,270,18.5\n"
             "B,2010-02,2.75,-36.82,-73.05,300,17.25\n"
             "C,2010-01,0.5,-29.9,-71.25,10,25.0\n"
             "C,2010-02,0.75,-29.9,-71.25,200,24.5\n");
  CsvOptions opts;
  opts.angle_columns = {"windDir"};
  opts.square_columns = {"temp"};
  std::vector<std::string> names;
  auto first = load_panel_csv(path, opts, &names);

  auto rewritten = dir.file("rewritten.csv");
  write_panel_csv(rewritten, first, names);
  auto second = load_panel_csv(rewritten);

  CHECK(first.y == second.y);
  CHECK(first.observed == second.observed);
  CHECK(first.coords == second.coords);
  CHECK(first.dist == second.dist);
  CHECK(first.station_ids == second.station_ids);
  CHECK(first.time_labels == second.time_labels);
  REQUIRE(first.x.size() == second.x.size());
  for (std::size_t t = 0; t < first.x.size(); ++t) CHECK(first.x[t] == second.x[t]);
}

TEST_CASE("draw container round trips through the binary format") {
  ScenarioSpec spec;
  spec.n = 8;
  spec.T = 5;
  spec.seed = 11;
  auto [data, truth] = generate(spec);
  ModelConfig cfg;
  cfg.n_iter = 60;
  cfg.burn_in = 30;
  cfg.thin = 3;
  cfg.H = 6;
  cfg.seed = 5;
  for (bool latents : {false, true}) {
    CAPTURE(latents);
    cfg.store_latents = latents;
    GibbsSampler sampler(cfg, data);
    auto draws = sampler.run();
    REQUIRE(draws.num_draws() == 10);

    TempDir dir;
    auto path = dir.file("chain.draws");
    save_draws(path, draws);
    auto back = load_draws(path);

    CHECK(back.n == draws.n);
    CHECK(back.T == draws.T);
    CHECK(back.cells == draws.cells);
    CHECK(back.loglik == draws.loglik);
    CHECK(back.accept_lambda == draws.accept_lambda);
    CHECK(back.accept_psi == draws.accept_psi);
    CHECK(back.accept_phi == draws.accept_phi);
    CHECK(back.truncation_warning == draws.truncation_warning);
    REQUIRE(back.num_draws() == draws.num_draws());
    for (int d = 0; d < draws.num_draws(); ++d) {
      CHECK(back.draws[d].s == draws.draws[d].s);
      CHECK(back.draws[d].theta == draws.draws[d].theta);
      CHECK(back.draws[d].sigma_sq == draws.draws[d].sigma_sq);
      CHECK(back.draws[d].alpha == draws.draws[d].alpha);
      CHECK(back.draws[d].psi == draws.draws[d].psi);
      CHECK(back.draws[d].tau_sq == draws.draws[d].tau_sq);
      CHECK(back.draws[d].phi == draws.draws[d].phi);
      CHECK(back.draws[d].rho_sq == draws.draws[d].rho_sq);
      CHECK(back.draws[d].beta == draws.draws[d].beta);
      CHECK(back.draws[d].gamma == draws.draws[d].gamma);
      if (latents) {
        CHECK(back.draws[d].eps == draws.draws[d].eps);
        CHECK(back.draws[d].lambda == draws.draws[d].lambda);
      }
    }
  }
}

TEST_CASE("draw files are byte-identical across reruns with the same seed") {
  ScenarioSpec spec;
  spec.n = 8;
  spec.T = 5;
  spec.seed = 13;
  auto [data, truth] = generate(spec);
  ModelConfig cfg;
  cfg.n_iter = 40;
  cfg.burn_in = 20;
  cfg.thin = 2;
  cfg.H = 6;
  cfg.seed = 7;

  TempDir dir;
  std::string bytes_first;
  for (int rep = 0; rep < 2; ++rep) {
    GibbsSampler sampler(cfg, data);
    auto draws = sampler.run();
    auto path = dir.file("rep" + std::to_string(rep) + ".draws");
    save_draws(path, draws);
    if (rep == 0)
      bytes_first = read_bytes(path);
    else
      CHECK(read_bytes(path) == bytes_first);
  }
}

TEST_CASE("draw loader rejects garbage files") {
  TempDir dir;
  auto path = dir.file("bad.draws");
  write_text(path, "this is not a draw file");
  CHECK_THROWS_WITH_AS(load_draws(path), doctest::Contains("bad magic"), ingestion_error);
}

TEST_CASE("config files round trip every field and reject unknown keys") {
  ModelConfig cfg;
  cfg.sg_a = 2.5;
  cfg.sg_b = 0.75;
  cfg.H = 17;
  cfg.base_theta0 = -1.25;
  cfg.base_from_data = false;
  cfg.rho_sq_estimated = false;
  cfg.rho_sq_fixed = 3.5;
  cfg.n_iter = 12345;
  cfg.burn_in = 234;
  cfg.thin = 7;
  cfg.seed = 99;
  cfg.psi_step = 0.125;
  cfg.adapt_lambda_proposal = false;
  cfg.store_latents = true;
  cfg.single_cluster = true;
  cfg.workers = 3;

  TempDir dir;
  auto path = dir.file("config.txt");
  write_config(path, cfg);
  auto back = load_config(path);
  CHECK(back.sg_a == cfg.sg_a);
  CHECK(back.sg_b == cfg.sg_b);
  CHECK(back.H == cfg.H);
  CHECK(back.base_theta0 == cfg.base_theta0);
  CHECK(back.base_from_data == cfg.base_from_data);
  CHECK(back.rho_sq_estimated == cfg.rho_sq_estimated);
  CHECK(back.rho_sq_fixed == cfg.rho_sq_fixed);
  CHECK(back.n_iter == cfg.n_iter);
  CHECK(back.burn_in == cfg.burn_in);
  CHECK(back.thin == cfg.thin);
  CHECK(back.seed == cfg.seed);
  CHECK(back.psi_step == cfg.psi_step);
  CHECK(back.adapt_lambda_proposal == cfg.adapt_lambda_proposal);
  CHECK(back.store_latents == cfg.store_latents);
  CHECK(back.single_cluster == cfg.single_cluster);
  CHECK(back.workers == cfg.workers);

  auto bad = dir.file("bad.txt");
  write_text(bad, "sg_a = 1.0\nnot_a_key = 2\n");
  CHECK_THROWS_WITH_AS(load_config(bad), doctest::Contains("unknown config key"),
                       invalid_parameter);
  auto partial = dir.file("partial.txt");
  write_text(partial, "# comment\nH = 9\n\nthin = 2  # trailing comment\n");
  auto merged = load_config(partial);
  CHECK(merged.H == 9);
  CHECK(merged.thin == 2);
  CHECK(merged.sg_a == ModelConfig{}.sg_a);
}

TEST_CASE("run manifest round trips and dataset hashing is content-stable") {
  TempDir dir;
  auto data_path = dir.file("data.csv");
  write_text(data_path, "station_id,time,y,lat,lon\nA,1,1.0,-33.0,-70.0\n");
  auto copy_path = dir.file("copy.csv");
  write_text(copy_path, "station_id,time,y,lat,lon\nA,1,1.0,-33.0,-70.0\n");
  CHECK(hash_file(data_path) == hash_file(copy_path));

  RunManifest m;
  m.config.H = 13;
  m.config.seed = 21;
  m.dataset_path = data_path;
  m.dataset_hash = hash_file(data_path);
  m.seed = 21;
  m.chains = 3;
  m.accept_lambda = 0.45;
  m.accept_psi = 0.3;
  m.accept_phi = 0.9;
  m.sampling_minutes = 1.5;
  m.post_minutes = 0.25;
  m.truncation_warning = true;
  auto path = dir.file("manifest.json");
  write_manifest(path, m);
  CHECK_FALSE(fs::exists(path + ".tmp"));
  auto back = load_manifest(path);
  CHECK(back.config.H == 13);
  CHECK(back.config.seed == 21);
  CHECK(back.dataset_hash == m.dataset_hash);
  CHECK(back.seed == 21);
  CHECK(back.chains == 3);
  CHECK(back.version == kVersion);
  CHECK(back.accept_lambda == 0.45);
  CHECK(back.sampling_minutes == 1.5);
  CHECK(back.post_minutes == 0.25);
  CHECK(back.truncation_warning == true);
}

TEST_CASE("partition series CSV round trips") {
  PartitionSeries series;
  series.parts.push_back({0, 0, 1, 2});
  series.parts.push_back({0, 1, 1, 0});
  std::vector<std::string> stations = {"A", "B", "C", "D"};
  std::vector<std::string> times = {"2010-01", "2010-02"};
  TempDir dir;
  auto path = dir.file("partitions.csv");
  write_partition_series_csv(path, series, stations, times);
  auto back = load_partition_series_csv(path, stations, times);
  REQUIRE(back.T() == 2);
  CHECK(back.parts[0] == series.parts[0]);
  CHECK(back.parts[1] == series.parts[1]);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "time,station_id,cluster");
}

TEST_CASE("matrix CSV writer emits a header row") {
  TempDir dir;
  auto path = dir.file("mat.csv");
  MatrixXd m(2, 2);
  m << 1.0, 0.5, 0.5, 1.0;
  write_matrix_csv(path, m, {"A", "B"}, {"A", "B"}, "station_id");
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "station_id,A,B");
  std::getline(in, line);
  CHECK(line == "A,1,0.5");
}
