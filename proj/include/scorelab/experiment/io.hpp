#pragma once

// Run-directory plumbing: digests, base64 float arrays, tables in CSV or
// JSON, JSONL traces and model checkpoints.

#include "scorelab/experiment/config.hpp"
#include "scorelab/score_net.hpp"
#include "scorelab/training.hpp"

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace scorelab::experiment {

namespace fs = std::filesystem;

class MissingInput : public Error {
 public:
  using Error::Error;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingInput("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << content;
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

// ---------------------------------------------------------------------------
// base64 of little-endian float64 arrays

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

inline std::string base64_encode(const std::string& raw) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<std::string::const_iterator, 6, 8>>;
  std::string out(It(raw.begin()), It(raw.end()));
  out.append((3 - raw.size() % 3) % 3, '=');
  return out;
}

inline std::string base64_decode(std::string text) {
  using namespace boost::archive::iterators;
  using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  std::size_t pad = 0;
  while (!text.empty() && text.back() == '=') {
    text.pop_back();
    ++pad;
  }
  if (pad > 2) throw ConfigError("base64: bad padding");
  try {
    std::string out(It(text.begin()), It(text.end()));
    // trailing bits of the last sextet do not form a byte
    const std::size_t bytes = text.size() * 6 / 8;
    out.resize(bytes);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("base64: invalid character");
  }
}

inline std::string encode_doubles(const double* p, std::size_t n) {
  std::string raw(n * sizeof(double), '\0');
  std::memcpy(raw.data(), p, raw.size());
  return base64_encode(raw);
}

inline Eigen::VectorXd decode_doubles(const std::string& text) {
  const std::string raw = base64_decode(text);
  if (raw.size() % sizeof(double) != 0) throw ConfigError("checkpoint: parameter blob is not a float64 array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(raw.size() / sizeof(double)));
  std::memcpy(v.data(), raw.data(), raw.size());
  return v;
}

// ---------------------------------------------------------------------------
// Numbers

/// Shortest round-trip decimal form; NaN and infinities as JSON-friendly text.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("table: not a number: '" + s + "'");
  return v;
}

/// JSON has no NaN or infinity; they become null / signed strings.
inline Json json_number(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

// ---------------------------------------------------------------------------
// Tables

/// Column-named table of doubles and strings written as CSV or a JSON array
/// of row objects.
struct Table {
  using Cell = std::variant<double, std::string>;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    if (row.size() != columns.size()) throw ContractError("Table::add: row width differs from header");
    rows.push_back(std::move(row));
  }

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw MissingInput("table: no column '" + name + "'");
  }

  double number(std::size_t r, const std::string& name) const {
    const auto& c = rows.at(r).at(column(name));
    if (const auto* d = std::get_if<double>(&c)) return *d;
    return parse_double(std::get<std::string>(c));
  }
  std::string text(std::size_t r, const std::string& name) const {
    const auto& c = rows.at(r).at(column(name));
    if (const auto* s = std::get_if<std::string>(&c)) return *s;
    return format_double(std::get<double>(c));
  }
};

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

inline std::string to_csv(const Table& t) {
  std::string out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + t.columns[i];
  out += "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      if (const auto* d = std::get_if<double>(&row[i]))
        out += format_double(*d);
      else
        out += csv_field(std::get<std::string>(row[i]));
    }
    out += "\n";
  }
  return out;
}

inline Json to_json(const Table& t) {
  Json arr = Json::array();
  for (const auto& row : t.rows) {
    Json o;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (const auto* d = std::get_if<double>(&row[i]))
        o[t.columns[i]] = json_number(*d);
      else
        o[t.columns[i]] = std::get<std::string>(row[i]);
    }
    arr.push_back(std::move(o));
  }
  return arr;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch != '"') cur += ch;
      else if (i + 1 < line.size() && line[i + 1] == '"') cur += line[++i];
      else quoted = false;
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline Table parse_csv(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw MissingInput("csv: empty file");
  t.columns = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != t.columns.size()) throw MissingInput("csv: ragged row");
    std::vector<Table::Cell> row;
    for (auto& s : f) {
      double v = 0.0;
      const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (s == "nan" || s == "inf" || s == "-inf")
        row.emplace_back(parse_double(s));
      else if (r.ec == std::errc() && r.ptr == s.data() + s.size() && !s.empty())
        row.emplace_back(v);
      else
        row.emplace_back(std::move(s));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Table parse_json_table(const std::string& text) {
  Table t;
  Json arr;
  try {
    arr = Json::parse(text);
  } catch (const Json::exception& e) {
    throw MissingInput(std::string("json table: ") + e.what());
  }
  if (!arr.is_array()) throw MissingInput("json table: expected an array");
  for (const auto& o : arr) {
    if (t.columns.empty())
      for (auto it = o.begin(); it != o.end(); ++it) t.columns.push_back(it.key());
    std::vector<Table::Cell> row;
    for (const auto& c : t.columns) {
      const auto& v = o.at(c);
      if (v.is_null())
        row.emplace_back(std::numeric_limits<double>::quiet_NaN());
      else if (v.is_number())
        row.emplace_back(v.get<double>());
      else if (v.is_string() && (v == "inf" || v == "-inf"))
        row.emplace_back(parse_double(v.get<std::string>()));
      else
        row.emplace_back(v.get<std::string>());
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::string table_filename(const std::string& stem, OutputFormat f) {
  return stem + (f == OutputFormat::csv ? ".csv" : ".json");
}

inline void write_table(const fs::path& dir, const std::string& stem, OutputFormat f, const Table& t) {
  write_file(dir / table_filename(stem, f), f == OutputFormat::csv ? to_csv(t) : to_json(t).dump(1) + "\n");
}

/// Reads <stem>.csv or <stem>.json, whichever exists; nullopt when neither.
inline std::optional<Table> read_table(const fs::path& dir, const std::string& stem) {
  if (fs::exists(dir / (stem + ".csv"))) return parse_csv(read_file(dir / (stem + ".csv")));
  if (fs::exists(dir / (stem + ".json"))) return parse_json_table(read_file(dir / (stem + ".json")));
  return std::nullopt;
}

inline void write_json(const fs::path& p, const Json& j) { write_file(p, j.dump(2) + "\n"); }

inline Json read_json(const fs::path& p) {
  try {
    return Json::parse(read_file(p));
  } catch (const Json::exception& e) {
    throw MissingInput("'" + p.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Traces

inline Json to_json(const SgdRecord& r) {
  return {{"iteration", r.iteration}, {"batch", r.batch},
          {"loss", json_number(r.loss)}, {"population_loss", json_number(r.population_loss)},
          {"delta", json_number(r.delta)}, {"grad_norm", json_number(r.grad_norm)},
          {"cumulative", r.cumulative}};
}

/// One JSON object per line; `stage` tags which model the record belongs to.
inline std::string to_jsonl(const SgdTrace& trace, const std::string& stage) {
  std::string out;
  for (const auto& r : trace.records) {
    Json j = to_json(r);
    j["stage"] = stage;
    j["lstar_source"] = trace.lstar_source;
    out += j.dump() + "\n";
  }
  return out;
}

inline std::vector<Json> parse_jsonl(const std::string& text) {
  std::vector<Json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) {
      try {
        out.push_back(Json::parse(line));
      } catch (const Json::exception& e) {
        throw MissingInput(std::string("jsonl: ") + e.what());
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline Json architecture_json(const MlpArchitecture& a) {
  return {{"dim", a.dim}, {"depth", a.depth}, {"width", a.width}, {"activation", to_string(a.activation)}};
}

inline MlpArchitecture architecture_from_json(const Json& j) {
  return {j.at("dim").get<int>(), j.at("depth").get<int>(), j.at("width").get<int>(),
          parse_activation(j.at("activation").get<std::string>())};
}

/// A trained score in one of three shapes: the exact oracle (no parameters),
/// one network shared over time, or one model per grid time.
struct Checkpoint {
  ScoreMode mode = ScoreMode::oracle;
  std::uint64_t seed = 0;                       // training seed; decompose replays linear fits from it
  std::vector<double> times;                    // per-step models only
  std::vector<MlpScoreModel> networks;          // one shared, or one per time
  std::vector<LinearScoreModel> linear_models;  // one per time

  bool per_step() const { return !times.empty(); }
};

inline Json to_json(const Checkpoint& c) {
  Json j;
  j["mode"] = to_string(c.mode);
  j["seed"] = c.seed;
  j["float_encoding"] = "base64 little-endian float64";
  if (!c.networks.empty()) j["architecture"] = architecture_json(c.networks.front().architecture());
  j["times"] = Json::array();
  for (double t : c.times) j["times"].push_back(encode_doubles(&t, 1));
  Json models = Json::array();
  for (const auto& n : c.networks)
    models.push_back({{"params", encode_doubles(n.params().data(), static_cast<std::size_t>(n.params().size()))}});
  for (const auto& l : c.linear_models) {
    const Eigen::VectorXd f = l.flat();
    models.push_back({{"dim", l.dim()}, {"params", encode_doubles(f.data(), static_cast<std::size_t>(f.size()))}});
  }
  j["models"] = models;
  return j;
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  Checkpoint c;
  try {
    c.mode = parse_score_mode(j.at("mode").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& t : j.at("times")) c.times.push_back(decode_doubles(t.get<std::string>())[0]);
    for (const auto& m : j.at("models")) {
      const Eigen::VectorXd p = decode_doubles(m.at("params").get<std::string>());
      if (c.mode == ScoreMode::mlp)
        c.networks.emplace_back(architecture_from_json(j.at("architecture")), p);
      else if (c.mode == ScoreMode::linear)
        c.linear_models.push_back(LinearScoreModel::from_flat(p, m.at("dim").get<int>()));
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
  return c;
}

}  // namespace scorelab::experiment
