#pragma once

// File formats: long-format panel CSV ingestion with declared covariate
// transforms, a versioned little-endian draw container with CSV export,
// key = value config files, and the JSON run manifest.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynclust/data.hpp"
#include "dynclust/sampler.hpp"
#include "dynclust/summary.hpp"

namespace dynclust {

constexpr const char* kVersion = "0.1.0";

struct ingestion_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Panel CSV
//
// Long format, one row per (station, time): columns station_id, time, y,
// lat, lon, then raw covariates. Time labels are either YYYY-MM or plain
// integers; either way they must be equally spaced once sorted. An empty or
// missing-token y marks an unobserved cell.

struct CsvOptions {
  std::vector<std::string> angle_columns;    // degrees; expand to _sin/_cos
  std::vector<std::string> square_columns;   // append column_sq = v^2
  std::vector<std::pair<std::string, std::string>> interaction_columns;  // v1*v2
  std::string missing_token = "NA";
};

namespace io_detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, int row, const std::string& col) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ingestion_error("unparseable numeric value '" + s + "' in column " + col + " at row " +
                          std::to_string(row));
  }
}

// monthly index for YYYY-MM labels, or the integer itself
inline long time_key(const std::string& label, int row) {
  if (label.size() == 7 && label[4] == '-') {
    try {
      int year = std::stoi(label.substr(0, 4));
      int month = std::stoi(label.substr(5, 2));
      if (month < 1 || month > 12) throw std::invalid_argument(label);
      return 12L * year + (month - 1);
    } catch (const std::exception&) {
      throw ingestion_error("unparseable time label '" + label + "' at row " +
                            std::to_string(row));
    }
  }
  try {
    std::size_t pos = 0;
    long v = std::stol(label, &pos);
    if (pos != label.size()) throw std::invalid_argument(label);
    return v;
  } catch (const std::exception&) {
    throw ingestion_error("unparseable time label '" + label + "' at row " + std::to_string(row) +
                          " (expected YYYY-MM or integer)");
  }
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace io_detail

inline PanelDataset load_panel_csv(const std::string& path, const CsvOptions& opts = {},
                                   std::vector<std::string>* covariate_names_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw ingestion_error("cannot open panel CSV: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ingestion_error("empty panel CSV: " + path);
  auto header = io_detail::split_csv_line(line);
  const std::vector<std::string> fixed = {"station_id", "time", "y", "lat", "lon"};
  if (header.size() < fixed.size())
    throw ingestion_error("panel CSV header must start with station_id,time,y,lat,lon");
  for (std::size_t c = 0; c < fixed.size(); ++c)
    if (header[c] != fixed[c])
      throw ingestion_error("panel CSV header column " + std::to_string(c + 1) + " must be '" +
                            fixed[c] + "', got '" + header[c] + "'");
  std::vector<std::string> raw_cols(header.begin() + fixed.size(), header.end());

  auto col_index = [&](const std::string& name) {
    for (std::size_t j = 0; j < raw_cols.size(); ++j)
      if (raw_cols[j] == name) return static_cast<int>(j);
    throw ingestion_error("transform refers to unknown covariate column '" + name + "'");
  };
  std::vector<bool> is_angle(raw_cols.size(), false);
  for (const auto& name : opts.angle_columns) is_angle[col_index(name)] = true;

  struct Row {
    int row_number;
    std::string station, time;
    double lat, lon;
    bool has_y;
    double y;
    std::vector<double> cov;
  };
  std::vector<Row> rows;
  int row_number = 1;
  while (std::getline(in, line)) {
    ++row_number;
    if (line.empty() || line == "\r") continue;
    auto fields = io_detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw ingestion_error("row " + std::to_string(row_number) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(header.size()));
    Row r;
    r.row_number = row_number;
    r.station = fields[0];
    r.time = fields[1];
    r.has_y = !(fields[2].empty() || fields[2] == opts.missing_token);
    r.y = r.has_y ? io_detail::parse_double(fields[2], row_number, "y") : 0.0;
    r.lat = io_detail::parse_double(fields[3], row_number, "lat");
    r.lon = io_detail::parse_double(fields[4], row_number, "lon");
    for (std::size_t j = 0; j < raw_cols.size(); ++j)
      r.cov.push_back(io_detail::parse_double(fields[5 + j], row_number, raw_cols[j]));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ingestion_error("panel CSV has no data rows: " + path);

  // station and time indexing
  std::map<std::string, int> station_of;
  std::vector<std::string> station_ids;
  for (const auto& r : rows)
    if (!station_of.count(r.station)) {
      station_of[r.station] = static_cast<int>(station_ids.size());
      station_ids.push_back(r.station);
    }
  std::map<long, std::string> time_by_key;
  for (const auto& r : rows) {
    long key = io_detail::time_key(r.time, r.row_number);
    auto it = time_by_key.find(key);
    if (it == time_by_key.end())
      time_by_key[key] = r.time;
    else if (it->second != r.time)
      throw ingestion_error("time labels '" + it->second + "' and '" + r.time +
                            "' collide at row " + std::to_string(r.row_number));
  }
  std::vector<long> keys;
  std::vector<std::string> time_labels;
  for (const auto& [k, lab] : time_by_key) {
    keys.push_back(k);
    time_labels.push_back(lab);
  }
  if (keys.size() > 2) {
    long step = keys[1] - keys[0];
    for (std::size_t t = 2; t < keys.size(); ++t)
      if (keys[t] - keys[t - 1] != step)
        throw ingestion_error("time labels are not equally spaced: gap before '" +
                              time_labels[t] + "'");
  }
  std::map<long, int> t_of;
  for (std::size_t t = 0; t < keys.size(); ++t) t_of[keys[t]] = static_cast<int>(t);

  // transformed covariate layout
  std::vector<std::string> cov_names;
  for (std::size_t j = 0; j < raw_cols.size(); ++j) {
    if (is_angle[j]) {
      cov_names.push_back(raw_cols[j] + "_sin");
      cov_names.push_back(raw_cols[j] + "_cos");
    } else {
      cov_names.push_back(raw_cols[j]);
    }
  }
  for (const auto& name : opts.square_columns) {
    col_index(name);
    cov_names.push_back(name + "_sq");
  }
  for (const auto& [u, v] : opts.interaction_columns) {
    col_index(u);
    col_index(v);
    cov_names.push_back(u + "_x_" + v);
  }
  int p = static_cast<int>(cov_names.size());
  auto transform = [&](const std::vector<double>& raw) {
    std::vector<double> out;
    out.reserve(p);
    for (std::size_t j = 0; j < raw_cols.size(); ++j) {
      if (is_angle[j]) {
        double rad = raw[j] * M_PI / 180.0;
        out.push_back(std::sin(rad));
        out.push_back(std::cos(rad));
      } else {
        out.push_back(raw[j]);
      }
    }
    for (const auto& name : opts.square_columns) {
      double v = raw[col_index(name)];
      out.push_back(v * v);
    }
    for (const auto& [a, b] : opts.interaction_columns)
      out.push_back(raw[col_index(a)] * raw[col_index(b)]);
    return out;
  };

  int n = static_cast<int>(station_ids.size());
  int T = static_cast<int>(time_labels.size());
  PanelDataset data;
  data.y.setZero(n, T);
  data.observed.setConstant(n, T, false);
  data.coords.setZero(n, 2);
  data.station_ids = station_ids;
  data.time_labels = time_labels;
  data.x.clear();
  if (p > 0)
    for (int t = 0; t < T; ++t) data.x.push_back(MatrixXd::Zero(n, p));

  std::vector<bool> coords_set(n, false);
  Eigen::MatrixXi seen_row = Eigen::MatrixXi::Zero(n, T);
  for (const auto& r : rows) {
    int i = station_of[r.station];
    int t = t_of[io_detail::time_key(r.time, r.row_number)];
    if (seen_row(i, t) != 0)
      throw ingestion_error("duplicate (station, time) pair (" + r.station + ", " + r.time +
                            ") at rows " + std::to_string(seen_row(i, t)) + " and " +
                            std::to_string(r.row_number));
    seen_row(i, t) = r.row_number;
    if (coords_set[i]) {
      if (std::abs(data.coords(i, 0) - r.lat) > 1e-9 || std::abs(data.coords(i, 1) - r.lon) > 1e-9)
        throw ingestion_error("station " + r.station + " has inconsistent coordinates at row " +
                              std::to_string(r.row_number));
    } else {
      data.coords(i, 0) = r.lat;
      data.coords(i, 1) = r.lon;
      coords_set[i] = true;
    }
    data.observed(i, t) = r.has_y;
    data.y(i, t) = r.y;
    if (p > 0) {
      auto tc = transform(r.cov);
      for (int j = 0; j < p; ++j) data.x[t](i, j) = tc[j];
    }
  }
  for (int i = 0; i < n; ++i) {
    bool any = false;
    for (int t = 0; t < T; ++t) any = any || data.observed(i, t);
    if (!any)
      throw ingestion_error("station " + station_ids[i] + " has zero observed responses");
  }
  data.compute_distances();
  if (covariate_names_out) *covariate_names_out = cov_names;
  return data;
}

inline void write_panel_csv(const std::string& path, const PanelDataset& data,
                            const std::vector<std::string>& covariate_names = {},
                            const std::string& missing_token = "NA") {
  int n = data.n(), T = data.T();
  int p = data.x.empty() ? 0 : static_cast<int>(data.x.front().cols());
  std::vector<std::string> names = covariate_names;
  if (static_cast<int>(names.size()) != p) {
    names.clear();
    for (int j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  }
  std::ofstream out(path);
  if (!out) throw ingestion_error("cannot write panel CSV: " + path);
  out << "station_id,time,y,lat,lon";
  for (const auto& nm : names) out << "," << nm;
  out << "\n";
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < T; ++t) {
      out << data.station_ids[i] << "," << data.time_labels[t] << ",";
      if (data.observed(i, t))
        out << io_detail::format_double(data.y(i, t));
      else
        out << missing_token;
      out << "," << io_detail::format_double(data.coords(i, 0)) << ","
          << io_detail::format_double(data.coords(i, 1));
      for (int j = 0; j < p; ++j) out << "," << io_detail::format_double(data.x[t](i, j));
      out << "\n";
    }
}

// ---------------------------------------------------------------------------
// Draw container: magic "DYNCDRAW", u32 version, little-endian throughout.
// Layout after the header: u32 n, T, H, p, num_draws, num_cells, flags
// (bit 0 latents stored, bit 1 truncation warning); f64 accept_lambda,
// accept_psi, accept_phi; cells as u32 (station, time)
// pairs; loglik row-major f64; then per draw s (row-major i32), theta,
// sigma_sq, alpha, psi, tau_sq, phi, rho_sq, beta, gamma, and when latents
// are stored eps (row-major) and lambda.

constexpr char kDrawMagic[8] = {'D', 'Y', 'N', 'C', 'D', 'R', 'A', 'W'};
constexpr std::uint32_t kDrawVersion = 1;

namespace io_detail {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ingestion_error("truncated draw file");
  return v;
}

inline void put_vec(std::ostream& out, const VectorXd& v) {
  out.write(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

inline VectorXd get_vec(std::istream& in, int size) {
  VectorXd v(size);
  in.read(reinterpret_cast<char*>(v.data()), size * sizeof(double));
  if (!in) throw ingestion_error("truncated draw file");
  return v;
}

}  // namespace io_detail

inline void save_draws(const std::string& path, const PosteriorDraws& draws) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ingestion_error("cannot write draw file: " + path);
  out.write(kDrawMagic, sizeof(kDrawMagic));
  io_detail::put<std::uint32_t>(out, kDrawVersion);
  int H = draws.draws.empty() ? 0 : static_cast<int>(draws.draws.front().theta.size());
  int p = draws.draws.empty() ? 0 : static_cast<int>(draws.draws.front().beta.size());
  bool latents = !draws.draws.empty() && draws.draws.front().lambda.size() > 0;
  std::uint32_t flags = (latents ? 1u : 0u) | (draws.truncation_warning ? 2u : 0u);
  io_detail::put<std::uint32_t>(out, draws.n);
  io_detail::put<std::uint32_t>(out, draws.T);
  io_detail::put<std::uint32_t>(out, H);
  io_detail::put<std::uint32_t>(out, p);
  io_detail::put<std::uint32_t>(out, draws.num_draws());
  io_detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(draws.cells.size()));
  io_detail::put<std::uint32_t>(out, flags);
  io_detail::put<double>(out, draws.accept_lambda);
  io_detail::put<double>(out, draws.accept_psi);
  io_detail::put<double>(out, draws.accept_phi);
  for (auto [i, t] : draws.cells) {
    io_detail::put<std::uint32_t>(out, i);
    io_detail::put<std::uint32_t>(out, t);
  }
  for (int d = 0; d < draws.num_draws(); ++d)
    for (int c = 0; c < draws.loglik.cols(); ++c) io_detail::put<double>(out, draws.loglik(d, c));
  for (const auto& snap : draws.draws) {
    for (int i = 0; i < draws.n; ++i)
      for (int t = 0; t < draws.T; ++t) io_detail::put<std::int32_t>(out, snap.s(i, t));
    io_detail::put_vec(out, snap.theta);
    io_detail::put_vec(out, snap.sigma_sq);
    io_detail::put<double>(out, snap.alpha);
    io_detail::put<double>(out, snap.psi);
    io_detail::put<double>(out, snap.tau_sq);
    io_detail::put<double>(out, snap.phi);
    io_detail::put<double>(out, snap.rho_sq);
    io_detail::put_vec(out, snap.beta);
    io_detail::put_vec(out, snap.gamma);
    if (latents) {
      for (int k = 0; k < H; ++k)
        for (int t = 0; t < draws.T; ++t) io_detail::put<double>(out, snap.eps(k, t));
      io_detail::put_vec(out, snap.lambda);
    }
  }
  if (!out) throw ingestion_error("write failure on draw file: " + path);
}

inline PosteriorDraws load_draws(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ingestion_error("cannot open draw file: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kDrawMagic, sizeof(magic)) != 0)
    throw ingestion_error("not a draw file (bad magic): " + path);
  auto version = io_detail::get<std::uint32_t>(in);
  if (version != kDrawVersion)
    throw ingestion_error("unsupported draw file version " + std::to_string(version));
  PosteriorDraws out;
  out.n = io_detail::get<std::uint32_t>(in);
  out.T = io_detail::get<std::uint32_t>(in);
  int H = io_detail::get<std::uint32_t>(in);
  int p = io_detail::get<std::uint32_t>(in);
  int num_draws = io_detail::get<std::uint32_t>(in);
  int num_cells = io_detail::get<std::uint32_t>(in);
  std::uint32_t flags = io_detail::get<std::uint32_t>(in);
  bool latents = flags & 1u;
  out.truncation_warning = flags & 2u;
  out.accept_lambda = io_detail::get<double>(in);
  out.accept_psi = io_detail::get<double>(in);
  out.accept_phi = io_detail::get<double>(in);
  for (int c = 0; c < num_cells; ++c) {
    int i = io_detail::get<std::uint32_t>(in);
    int t = io_detail::get<std::uint32_t>(in);
    out.cells.emplace_back(i, t);
  }
  out.loglik.resize(num_draws, num_cells);
  for (int d = 0; d < num_draws; ++d)
    for (int c = 0; c < num_cells; ++c) out.loglik(d, c) = io_detail::get<double>(in);
  for (int d = 0; d < num_draws; ++d) {
    DrawSnapshot snap;
    snap.s.resize(out.n, out.T);
    for (int i = 0; i < out.n; ++i)
      for (int t = 0; t < out.T; ++t) snap.s(i, t) = io_detail::get<std::int32_t>(in);
    snap.theta = io_detail::get_vec(in, H);
    snap.sigma_sq = io_detail::get_vec(in, H);
    snap.alpha = io_detail::get<double>(in);
    snap.psi = io_detail::get<double>(in);
    snap.tau_sq = io_detail::get<double>(in);
    snap.phi = io_detail::get<double>(in);
    snap.rho_sq = io_detail::get<double>(in);
    snap.beta = io_detail::get_vec(in, p);
    snap.gamma = io_detail::get_vec(in, out.n);
    if (latents) {
      snap.eps.resize(H, out.T);
      for (int k = 0; k < H; ++k)
        for (int t = 0; t < out.T; ++t) snap.eps(k, t) = io_detail::get<double>(in);
      snap.lambda = io_detail::get_vec(in, H);
    }
    out.draws.push_back(std::move(snap));
  }
  return out;
}

// Scalar-parameter CSV export of a draw container.
inline void export_draws_csv(const std::string& path, const PosteriorDraws& draws) {
  std::ofstream out(path);
  if (!out) throw ingestion_error("cannot write draw CSV: " + path);
  int p = draws.draws.empty() ? 0 : static_cast<int>(draws.draws.front().beta.size());
  out << "draw,alpha,psi,tau_sq,phi,rho_sq";
  for (int j = 0; j < p; ++j) out << ",beta_" << (j + 1);
  out << ",mean_loglik\n";
  for (int d = 0; d < draws.num_draws(); ++d) {
    const auto& snap = draws.draws[d];
    out << (d + 1) << "," << io_detail::format_double(snap.alpha) << ","
        << io_detail::format_double(snap.psi) << "," << io_detail::format_double(snap.tau_sq)
        << "," << io_detail::format_double(snap.phi) << ","
        << io_detail::format_double(snap.rho_sq);
    for (int j = 0; j < p; ++j) out << "," << io_detail::format_double(snap.beta[j]);
    out << "," << io_detail::format_double(draws.loglik.row(d).mean()) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Config files: one "key = value" per line, '#' comments, every ModelConfig
// field has a key.

namespace io_detail {

struct ConfigField {
  const char* key;
  std::function<std::string(const ModelConfig&)> get;
  std::function<void(ModelConfig&, const std::string&)> set;
};

inline double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw invalid_parameter("config key " + key + " has non-numeric value '" + v + "'");
  }
}

inline long to_long(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw invalid_parameter("config key " + key + " has non-integer value '" + v + "'");
  }
}

inline bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw invalid_parameter("config key " + key + " has non-boolean value '" + v + "'");
}

inline const std::vector<ConfigField>& config_fields() {
  auto dbl = [](const char* key, double ModelConfig::* member) {
    return ConfigField{
        key, [member](const ModelConfig& c) { return format_double(c.*member); },
        [member, key](ModelConfig& c, const std::string& v) { c.*member = to_double(v, key); }};
  };
  auto integer = [](const char* key, int ModelConfig::* member) {
    return ConfigField{
        key, [member](const ModelConfig& c) { return std::to_string(c.*member); },
        [member, key](ModelConfig& c, const std::string& v) {
          c.*member = static_cast<int>(to_long(v, key));
        }};
  };
  auto boolean = [](const char* key, bool ModelConfig::* member) {
    return ConfigField{
        key, [member](const ModelConfig& c) { return (c.*member) ? "true" : "false"; },
        [member, key](ModelConfig& c, const std::string& v) { c.*member = to_bool(v, key); }};
  };
  static const std::vector<ConfigField> fields = {
      dbl("sg_a", &ModelConfig::sg_a),
      dbl("sg_b", &ModelConfig::sg_b),
      integer("H", &ModelConfig::H),
      dbl("base_theta0", &ModelConfig::base_theta0),
      dbl("base_sigma0_sq", &ModelConfig::base_sigma0_sq),
      dbl("base_a0", &ModelConfig::base_a0),
      dbl("base_b0", &ModelConfig::base_b0),
      boolean("base_from_data", &ModelConfig::base_from_data),
      dbl("a_phi", &ModelConfig::a_phi),
      dbl("b_phi", &ModelConfig::b_phi),
      dbl("a_rho", &ModelConfig::a_rho),
      dbl("b_rho", &ModelConfig::b_rho),
      dbl("a_tau", &ModelConfig::a_tau),
      dbl("b_tau", &ModelConfig::b_tau),
      boolean("rho_sq_estimated", &ModelConfig::rho_sq_estimated),
      dbl("rho_sq_fixed", &ModelConfig::rho_sq_fixed),
      integer("n_iter", &ModelConfig::n_iter),
      integer("burn_in", &ModelConfig::burn_in),
      integer("thin", &ModelConfig::thin),
      ConfigField{"seed", [](const ModelConfig& c) { return std::to_string(c.seed); },
                  [](ModelConfig& c, const std::string& v) {
                    c.seed = static_cast<std::uint64_t>(to_long(v, "seed"));
                  }},
      dbl("psi_step", &ModelConfig::psi_step),
      dbl("log_phi_step", &ModelConfig::log_phi_step),
      integer("pg_exact_threshold", &ModelConfig::pg_exact_threshold),
      boolean("adapt_lambda_proposal", &ModelConfig::adapt_lambda_proposal),
      boolean("store_latents", &ModelConfig::store_latents),
      boolean("single_cluster", &ModelConfig::single_cluster),
      integer("workers", &ModelConfig::workers),
  };
  return fields;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace io_detail

inline void write_config(const std::string& path, const ModelConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw invalid_parameter("cannot write config file: " + path);
  for (const auto& f : io_detail::config_fields()) out << f.key << " = " << f.get(cfg) << "\n";
}

inline ModelConfig load_config(const std::string& path, ModelConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw invalid_parameter("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = io_detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw invalid_parameter("config line " + std::to_string(line_no) +
                              " is not 'key = value': " + line);
    std::string key = io_detail::trim(line.substr(0, eq));
    std::string value = io_detail::trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& f : io_detail::config_fields())
      if (key == f.key) {
        f.set(base, value);
        found = true;
        break;
      }
    if (!found)
      throw invalid_parameter("unknown config key '" + key + "' at line " +
                              std::to_string(line_no));
  }
  return base;
}

// ---------------------------------------------------------------------------
// Run manifest (JSON, written atomically via rename).

inline std::string fnv1a_hex(const char* bytes, std::size_t len) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ingestion_error("cannot open file for hashing: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string s = buf.str();
  return fnv1a_hex(s.data(), s.size());
}

struct RunManifest {
  ModelConfig config;
  std::string dataset_hash;
  std::string dataset_path;
  std::uint64_t seed = 0;
  std::string version = kVersion;
  int chains = 1;
  double accept_lambda = 0.0, accept_psi = 0.0, accept_phi = 0.0;
  double sampling_minutes = 0.0, post_minutes = 0.0;
  bool truncation_warning = false;
};

inline void write_manifest(const std::string& path, const RunManifest& m) {
  nlohmann::json j;
  for (const auto& f : io_detail::config_fields()) j["config"][f.key] = f.get(m.config);
  j["dataset_hash"] = m.dataset_hash;
  j["dataset_path"] = m.dataset_path;
  j["seed"] = m.seed;
  j["version"] = m.version;
  j["chains"] = m.chains;
  j["acceptance"] = {{"lambda", m.accept_lambda}, {"psi", m.accept_psi}, {"phi", m.accept_phi}};
  j["timing_minutes"] = {{"sampling", m.sampling_minutes}, {"post_processing", m.post_minutes}};
  j["truncation_warning"] = m.truncation_warning;
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ingestion_error("cannot write manifest: " + tmp);
    out << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

inline RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ingestion_error("cannot open manifest: " + path);
  nlohmann::json j;
  in >> j;
  RunManifest m;
  for (const auto& f : io_detail::config_fields())
    f.set(m.config, j.at("config").at(f.key).get<std::string>());
  m.dataset_hash = j.at("dataset_hash").get<std::string>();
  m.dataset_path = j.value("dataset_path", "");
  m.seed = j.at("seed").get<std::uint64_t>();
  m.version = j.at("version").get<std::string>();
  m.chains = j.value("chains", 1);
  m.accept_lambda = j.at("acceptance").at("lambda").get<double>();
  m.accept_psi = j.at("acceptance").at("psi").get<double>();
  m.accept_phi = j.at("acceptance").at("phi").get<double>();
  m.sampling_minutes = j.at("timing_minutes").at("sampling").get<double>();
  m.post_minutes = j.at("timing_minutes").at("post_processing").get<double>();
  m.truncation_warning = j.value("truncation_warning", false);
  return m;
}

// ---------------------------------------------------------------------------
// Plot-ready CSV matrices for the summary artifacts.

inline void write_matrix_csv(const std::string& path, const MatrixXd& mat,
                             const std::vector<std::string>& col_names,
                             const std::vector<std::string>& row_names = {},
                             const std::string& row_header = "row") {
  std::ofstream out(path);
  if (!out) throw ingestion_error("cannot write CSV: " + path);
  bool rows_named = static_cast<int>(row_names.size()) == mat.rows();
  if (rows_named) out << row_header;
  for (std::size_t c = 0; c < col_names.size(); ++c)
    out << (rows_named || c > 0 ? "," : "") << col_names[c];
  out << "\n";
  for (int r = 0; r < mat.rows(); ++r) {
    if (rows_named) out << row_names[r];
    for (int c = 0; c < mat.cols(); ++c)
      out << (rows_named || c > 0 ? "," : "") << io_detail::format_double(mat(r, c));
    out << "\n";
  }
}

inline void write_partition_series_csv(const std::string& path, const PartitionSeries& series,
                                       const std::vector<std::string>& station_ids,
                                       const std::vector<std::string>& time_labels) {
  std::ofstream out(path);
  if (!out) throw ingestion_error("cannot write CSV: " + path);
  out << "time,station_id,cluster\n";
  for (int t = 0; t < series.T(); ++t)
    for (std::size_t i = 0; i < series.parts[t].size(); ++i)
      out << time_labels[t] << "," << station_ids[i] << "," << (series.parts[t][i] + 1) << "\n";
}

inline PartitionSeries load_partition_series_csv(const std::string& path,
                                                 const std::vector<std::string>& station_ids,
                                                 const std::vector<std::string>& time_labels) {
  std::ifstream in(path);
  if (!in) throw ingestion_error("cannot open CSV: " + path);
  std::string line;
  if (!std::getline(in, line) || io_detail::trim(line) != "time,station_id,cluster")
    throw ingestion_error("bad partition-series header in " + path);
  std::map<std::string, int> i_of, t_of;
  for (std::size_t i = 0; i < station_ids.size(); ++i) i_of[station_ids[i]] = static_cast<int>(i);
  for (std::size_t t = 0; t < time_labels.size(); ++t) t_of[time_labels[t]] = static_cast<int>(t);
  PartitionSeries series;
  series.parts.assign(time_labels.size(), Partition(station_ids.size(), -1));
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = io_detail::trim(line);
    if (line.empty()) continue;
    auto fields = io_detail::split_csv_line(line);
    if (fields.size() != 3)
      throw ingestion_error("bad partition-series row " + std::to_string(row) + " in " + path);
    auto ti = t_of.find(fields[0]);
    auto si = i_of.find(fields[1]);
    if (ti == t_of.end() || si == i_of.end())
      throw ingestion_error("unknown time or station at row " + std::to_string(row) + " in " +
                            path);
    series.parts[ti->second][si->second] =
        static_cast<int>(io_detail::to_long(fields[2], "cluster")) - 1;
  }
  for (auto& p : series.parts)
    for (int c : p)
      if (c < 0) throw ingestion_error("incomplete partition series in " + path);
  return series;
}

}  // namespace dynclust
