#pragma once

// CSV and JSON emission. Numbers are written with std::to_chars (shortest
// round-trip form, '.' decimal point, no locale), so identical inputs give
// byte-identical files.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "igssm/concentration.hpp"
#include "igssm/hierarchical.hpp"
#include "igssm/posterior.hpp"
#include "igssm/selection.hpp"

namespace igssm {

inline constexpr const char* kVersion = "igssm 0.3.0";

inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
  return std::string(buf, end);
}

inline std::string format_number(std::size_t x) { return std::to_string(x); }

/// JSON value for a double; non-finite values become the strings "inf",
/// "-inf" or "nan" instead of null.
inline nlohmann::json json_number(double x) {
  if (std::isfinite(x)) return x;
  return format_number(x);
}

/// FNV-1a, 64 bit, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  static constexpr char digits[] = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = digits[h & 0xF];
    h >>= 4;
  }
  buf[16] = '\0';
  return buf;
}

/// RFC 4180 field quoting.
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc), width_(columns.size()) {
    if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
    row(columns);
  }

  void row(const std::vector<std::string>& fields) {
    if (fields.size() != width_) throw std::logic_error("CSV row width mismatch in " + path_.string());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << csv_field(fields[i]);
    }
    out_ << "\r\n";
  }

  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("failed writing " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t width_;
};

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

/// CSV reader for files written by CsvWriter. Quoted fields may not span lines.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::invalid_argument("CSV is missing column '" + std::string(name) + "'");
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (first) {
      t.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != t.header.size()) {
        throw std::invalid_argument(path.string() + ": row width does not match header");
      }
      t.rows.push_back(std::move(fields));
    }
  }
  if (first) throw std::invalid_argument(path.string() + ": empty CSV");
  return t;
}

inline double parse_number(const std::string& s) {
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

/// Single-column sequence file: header "value", one real per line.
inline std::vector<double> read_sequence_csv(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  if (t.header.size() != 1 || t.header[0] != "value") {
    throw std::invalid_argument(path.string() + ": sequence files need the single header 'value'");
  }
  std::vector<double> v;
  v.reserve(t.rows.size());
  for (const auto& r : t.rows) v.push_back(parse_number(r[0]));
  if (v.empty()) throw std::invalid_argument(path.string() + ": sequence file has no values");
  return v;
}

// ---------------------------------------------------------------------------
// Serialisers

inline void write_observation_csv(const std::filesystem::path& path, const Observation& obs) {
  CsvWriter w(path, {"j", "y"});
  for (std::size_t j = 1; j <= obs.size(); ++j) w.row({format_number(j), format_number(obs.y[j - 1])});
  w.close();
}

inline std::vector<double> read_observation_csv(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  const auto cy = t.column("y");
  std::vector<double> y;
  for (const auto& r : t.rows) y.push_back(parse_number(r[cy]));
  return y;
}

inline void write_posterior_csv(const std::filesystem::path& path, const PosteriorSummary& s) {
  CsvWriter w(path, {"j", "sigma", "post_mean"});
  for (std::size_t j = 1; j <= s.size(); ++j) {
    w.row({format_number(j), format_number(s.sigma[j - 1]), format_number(s.post_mean[j - 1])});
  }
  w.close();
}

inline PosteriorSummary read_posterior_csv(const std::filesystem::path& path, double eps) {
  const auto t = read_csv(path);
  const auto cs = t.column("sigma");
  const auto cm = t.column("post_mean");
  PosteriorSummary s;
  s.eps = eps;
  for (const auto& r : t.rows) {
    s.sigma.push_back(parse_number(r[cs]));
    s.post_mean.push_back(parse_number(r[cm]));
  }
  return s;
}

inline void write_dimension_csv(const std::filesystem::path& path, const DimensionDistribution& d) {
  CsvWriter w(path, {"m", "log_weight", "prob"});
  for (std::size_t m = 1; m <= d.support(); ++m) {
    w.row({format_number(m), format_number(d.log_weights[m - 1]), format_number(d.prob[m - 1])});
  }
  w.close();
}

inline void write_adaptive_csv(const std::filesystem::path& path, const AdaptiveEstimate& e) {
  CsvWriter w(path, {"j", "omega", "theta_hat"});
  for (std::size_t j = 1; j <= e.values.size(); ++j) {
    const double omega = j <= e.omega.size() ? e.omega[j - 1] : 0.0;
    w.row({format_number(j), format_number(omega), format_number(e.values[j - 1])});
  }
  w.close();
}

inline nlohmann::json to_json(const SelectionResult& s) {
  return {{"kind", to_string(s.kind)}, {"dimension", s.dimension}, {"rate", json_number(s.rate)}};
}

inline nlohmann::json to_json(const OperatorConstants& c) {
  nlohmann::json j;
  j["C_lambda"] = json_number(c.C_lambda);
  j["C_lambda_witness_k"] = c.C_lambda_witness;
  j["L_lambda"] = json_number(c.L_lambda);
  j["L_lambda_argmax_k"] = c.L_lambda_argmax;
  j["submultiplicative"] = c.submultiplicative;
  j["submultiplicative_verified_up_to"] = c.verified_up_to;
  if (!c.submultiplicative) {
    j["submultiplicative_witness"] = {c.submultiplicative_witness.first, c.submultiplicative_witness.second};
  } else {
    j["submultiplicative_witness"] = nullptr;
  }
  j["sup_lambda"] = json_number(c.sup_lambda);
  return j;
}

inline nlohmann::json to_json(const NoiseLevelReport& l) {
  nlohmann::json j;
  j["eps"] = l.eps;
  j["M_eps"] = l.max_dimension;
  j["d"] = json_number(l.d);
  j["oracle"] = to_json(l.oracle);
  j["kappa_oracle"] = json_number(l.kappa_oracle);
  j["L_oracle"] = json_number(l.L_oracle);
  j["oracle_feasible"] = l.oracle_feasible;
  if (l.minimax) {
    j["minimax"] = to_json(*l.minimax);
    j["kappa_minimax"] = json_number(l.kappa_minimax);
    j["L_minimax"] = json_number(l.L_minimax);
    j["minimax_feasible"] = l.minimax_feasible;
  }
  return j;
}

inline nlohmann::json to_json(const AssumptionReport& r) {
  nlohmann::json j;
  j["d"] = json_number(r.d);
  j["variance_condition"] = r.variance_condition();
  j["operator"] = to_json(r.op);
  j["kappa_oracle"] = json_number(r.kappa_oracle);
  j["oracle_condition"] = r.oracle_condition();
  j["L_oracle"] = json_number(r.L_oracle);
  if (r.has_class) {
    j["kappa_minimax"] = json_number(r.kappa_minimax);
    j["minimax_condition"] = r.minimax_condition();
    j["L_minimax"] = json_number(r.L_minimax);
  }
  j["levels"] = nlohmann::json::array();
  for (const auto& l : r.levels) j["levels"].push_back(to_json(l));
  return j;
}

inline nlohmann::json to_json(const CompositeConstants& c) {
  return {{"oracle_mise_upper_factor", json_number(c.oracle_mise_upper)},
          {"oracle_mise_lower_factor", json_number(c.oracle_mise_lower)},
          {"minimax_mise_upper_factor", json_number(c.minimax_mise_upper)},
          {"K_oracle", json_number(c.K_oracle)},
          {"K_minimax", json_number(c.K_minimax)},
          {"K_hierarchical_oracle", json_number(c.K_hierarchical_oracle)},
          {"K_hierarchical_minimax", json_number(c.K_hierarchical_minimax)},
          {"D_oracle", c.D_oracle},
          {"D_minimax", c.D_minimax}};
}

inline nlohmann::json to_json(const RegressionFit& f) {
  nlohmann::json res = nlohmann::json::array();
  for (double r : f.residuals) res.push_back(r);
  return {{"slope", f.slope},
          {"intercept", f.intercept},
          {"r_squared", f.r_squared},
          {"max_abs_residual", f.max_abs_residual},
          {"residuals", res}};
}

}  // namespace igssm
