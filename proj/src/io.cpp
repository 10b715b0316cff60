#include "calign/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "calign/error.hpp"

namespace calign {
namespace {

[[noreturn]] void parse_fail(std::string_view field, std::string_view what) {
  throw Error(ErrorKind::Parse, std::string(kParamsFormat) + ": field '" + std::string(field) + "' " + std::string(what));
}

const Json& require_field(const Json& obj, const char* key, std::string_view path) {
  if (!obj.is_object()) parse_fail(path, "must be an object");
  const auto it = obj.find(key);
  if (it == obj.end()) parse_fail(std::string(path.empty() ? "" : std::string(path) + ".") + key, "is missing");
  return *it;
}

double require_number(const Json& v, std::string_view path) {
  if (!v.is_number()) parse_fail(path, "must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) parse_fail(path, "must be finite");
  return x;
}

Vector number_array(const Json& v, std::string_view path) {
  if (!v.is_array()) parse_fail(path, "must be an array of numbers");
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = require_number(v[i], std::string(path) + "[" + std::to_string(i) + "]");
  return out;
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

std::string format_number(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string format_matrix(const Matrix& m) {
  std::string out = std::to_string(m.rows()) + "," + std::to_string(m.cols()) + "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ',';
      out += format_number(m(i, j));
    }
    out += '\n';
  }
  return out;
}

Matrix parse_matrix(std::string_view text, std::string_view source) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto fail = [&](std::size_t lineno, const std::string& what) -> void {
    throw Error(ErrorKind::Parse, std::string(source) + ":" + std::to_string(lineno) + ": " + what);
  };
  if (!std::getline(in, line)) fail(1, "missing rows,cols header");
  long rows = -1, cols = -1;
  char tail = 0;
  if (std::sscanf(line.c_str(), "%ld,%ld%c", &rows, &cols, &tail) != 2 || rows < 0 || cols < 0)
    fail(1, "header must be 'rows,cols'");
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    const std::size_t lineno = static_cast<std::size_t>(i) + 2;
    if (!std::getline(in, line)) fail(lineno, "expected " + std::to_string(rows) + " rows");
    const char* p = line.c_str();
    for (long j = 0; j < cols; ++j) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) fail(lineno, "bad number in column " + std::to_string(j + 1));
      m(i, j) = v;
      p = end;
      if (j + 1 < cols) {
        if (*p != ',') fail(lineno, "expected " + std::to_string(cols) + " values");
        ++p;
      }
    }
    if (*p != '\0' && *p != '\r') fail(lineno, "trailing characters after " + std::to_string(cols) + " values");
  }
  while (std::getline(in, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) fail(static_cast<std::size_t>(rows) + 2, "unexpected extra rows");
  return m;
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) { write_text(path, format_matrix(m)); }

Matrix read_matrix(const std::filesystem::path& path) { return parse_matrix(read_text(path), path.string()); }

std::string params_to_json(const GenerativeParams& params) {
  std::string out = "{\n  \"format\": \"" + std::string(kParamsFormat) + "\",\n  \"latent_dim\": " +
                    std::to_string(params.latent_dim()) + ",\n  \"modalities\": [";
  for (int s = 0; s < params.modality_count(); ++s) {
    const auto& mp = params.modality(s);
    out += s == 0 ? "\n" : ",\n";
    out += "    {\n      \"id\": " + Json(mp.id).dump() + ",\n      \"W\": [";
    for (Eigen::Index i = 0; i < mp.loading.rows(); ++i) {
      out += i == 0 ? "[" : ", [";
      for (Eigen::Index j = 0; j < mp.loading.cols(); ++j) out += (j ? ", " : "") + format_number(mp.loading(i, j));
      out += "]";
    }
    out += "],\n      \"mu\": [";
    for (Eigen::Index i = 0; i < mp.offset.size(); ++i) out += (i ? ", " : "") + format_number(mp.offset(i));
    out += "],\n      \"sigma\": " + format_number(mp.noise_std) + "\n    }";
  }
  out += "\n  ]\n}\n";
  return out;
}

GenerativeParams params_from_json(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::Parse, std::string(kParamsFormat) + ": malformed JSON (" + e.what() + ")");
  }
  if (!doc.is_object()) parse_fail("<root>", "must be an object");
  if (const auto it = doc.find("format"); it != doc.end() && *it != Json(kParamsFormat))
    parse_fail("format", "must be \"" + std::string(kParamsFormat) + "\"");
  const Json& r_field = require_field(doc, "latent_dim", "");
  if (!r_field.is_number_integer() || r_field.get<long long>() < 1) parse_fail("latent_dim", "must be a positive integer");
  const int r = r_field.get<int>();
  const Json& mods = require_field(doc, "modalities", "");
  if (!mods.is_array() || mods.empty()) parse_fail("modalities", "must be a non-empty array");

  std::vector<ModalityParams> blocks;
  for (std::size_t s = 0; s < mods.size(); ++s) {
    const std::string base = "modalities[" + std::to_string(s) + "]";
    const Json& entry = mods[s];
    if (!entry.is_object()) parse_fail(base, "must be an object");
    ModalityParams mp;
    const Json& id = require_field(entry, "id", base);
    if (!id.is_string()) parse_fail(base + ".id", "must be a string");
    mp.id = id.get<std::string>();
    const Json& w = require_field(entry, "W", base);
    if (!w.is_array() || w.empty()) parse_fail(base + ".W", "must be a non-empty array of rows");
    mp.loading.resize(static_cast<Eigen::Index>(w.size()), r);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const std::string row_path = base + ".W[" + std::to_string(i) + "]";
      const Vector row = number_array(w[i], row_path);
      if (row.size() != r) parse_fail(row_path, "must have latent_dim = " + std::to_string(r) + " entries");
      mp.loading.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    mp.offset = number_array(require_field(entry, "mu", base), base + ".mu");
    if (mp.offset.size() != mp.loading.rows()) parse_fail(base + ".mu", "length must match the rows of W");
    mp.noise_std = require_number(require_field(entry, "sigma", base), base + ".sigma");
    if (!(mp.noise_std > 0.0))
      throw Error(ErrorKind::InvariantViolation, std::string(kParamsFormat) + ": field '" + base +
                                                     ".sigma' must be positive, got " + format_number(mp.noise_std));
    blocks.push_back(std::move(mp));
  }
  try {
    return GenerativeParams(r, std::move(blocks));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvariantViolation) throw;
    throw Error(ErrorKind::Parse, std::string(kParamsFormat) + ": " + e.what());
  }
}

void save_params(const std::filesystem::path& path, const GenerativeParams& params) {
  write_text(path, params_to_json(params));
}

GenerativeParams load_params(const std::filesystem::path& path) { return params_from_json(read_text(path)); }

Json to_json(const AnchorReport& r) {
  Json j;
  j["delta"] = r.delta;
  j["delta_calibrated"] = optional_number(r.delta_calibrated);
  j["sigma1"] = r.sigma1;
  j["sigma2"] = r.sigma2;
  j["sigma1_omega"] = r.sigma1_omega;
  j["eta"] = r.eta;
  j["missing_norm"] = r.missing_norm;
  j["missing_count"] = r.missing_count;
  j["lower_bound"] = r.lower_bound;
  j["upper_bound"] = finite_or_null(r.upper_bound);
  j["epsilon_threshold"] = r.epsilon_threshold;
  j["lower_bound_linear_ratio"] = r.lower_bound_linear_ratio;
  j["lower_bound_squared_ratio"] = r.lower_bound_squared_ratio;
  j["near_degenerate"] = r.near_degenerate;
  j["upper_infinite"] = r.upper_infinite;
  j["bound_violated"] = r.bound_violated;
  return j;
}

Json to_json(const LossBreakdown& l) {
  Json j;
  j["total"] = l.total;
  j["align_term"] = l.align_term;
  j["uniformity_term"] = l.uniformity_term;
  j["matching_term"] = optional_number(l.matching_term);
  j["tau"] = l.tau;
  j["tau_prime"] = l.tau_prime;
  j["alpha"] = l.alpha;
  return j;
}

Json to_json(const ImputationMse& mse) {
  Json j;
  Json rows = Json::array();
  for (const auto& m : mse.per_modality) {
    Json row;
    row["id"] = m.id;
    row["occurrences"] = m.occurrences;
    row["absent"] = !m.mse.has_value();
    row["mse"] = optional_number(m.mse);
    row["random_mse"] = optional_number(m.random_mse);
    rows.push_back(std::move(row));
  }
  j["per_modality"] = std::move(rows);
  j["random_baseline_mse"] = optional_number(mse.random_baseline_mse);
  return j;
}

Json to_json(const ShiftSummary& s) {
  Json j;
  j["requested"] = s.requested;
  j["evaluated"] = s.evaluated;
  j["skipped_degenerate"] = s.skipped_degenerate;
  j["skipped_complete"] = s.skipped_complete;
  j["mean_delta_missing"] = s.mean_delta_missing;
  j["mean_delta_calibrated"] = s.mean_delta_calibrated;
  j["improved_fraction"] = s.improved_fraction;
  return j;
}

Json to_json(const SynthSpec& s) {
  Json j;
  j["latent_dim"] = s.latent_dim;
  j["embed_dim"] = s.embed_dim;
  j["modalities"] = s.modalities;
  j["instances"] = s.instances;
  j["raw_dim"] = s.raw_dim;
  j["signal"] = s.signal;
  j["spread"] = s.spread;
  j["offset_scale"] = s.offset_scale;
  j["noise"] = s.noise;
  j["raw_noise"] = s.raw_noise;
  j["train_fraction"] = s.train_fraction;
  return j;
}

SynthSpec spec_from_json(const Json& j) {
  SynthSpec s;
  try {
    s.latent_dim = j.at("latent_dim").get<int>();
    s.embed_dim = j.at("embed_dim").get<int>();
    s.modalities = j.at("modalities").get<int>();
    s.instances = j.at("instances").get<int>();
    s.raw_dim = j.at("raw_dim").get<int>();
    s.signal = j.at("signal").get<double>();
    s.spread = j.at("spread").get<double>();
    s.offset_scale = j.at("offset_scale").get<double>();
    s.noise = j.at("noise").get<double>();
    s.raw_noise = j.at("raw_noise").get<double>();
    s.train_fraction = j.at("train_fraction").get<double>();
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("world spec: ") + e.what());
  }
  return s;
}

Json to_json(const TrainReport& r) {
  Json j;
  j["epochs"] = r.loss.size();
  j["steps"] = r.steps;
  j["skipped_instances"] = r.skipped_instances;
  j["loss"] = r.loss;
  j["loglik"] = r.loglik;
  j["recall_at_1"] = r.recall1;
  j["recall_at_5"] = r.recall5;
  j["recall_at_10"] = r.recall10;
  if (r.head) {
    j["matching_head"] = {{"weight", std::vector<double>(r.head->weight.data(), r.head->weight.data() + r.head->weight.size())},
                          {"bias", r.head->bias}};
  }
  j["warnings"] = r.warnings;
  return j;
}

MatchingHead head_from_json(std::string_view text) {
  try {
    const Json j = Json::parse(text);
    const auto w = j.at("weight").get<std::vector<double>>();
    MatchingHead head{Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size())), j.at("bias").get<double>()};
    if (!head.weight.allFinite() || !std::isfinite(head.bias))
      throw Error(ErrorKind::InvalidInput, "matching head parameters must be finite");
    return head;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("matching head: ") + e.what());
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(ErrorKind::Io, "failed writing '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::string dump_line(const Json& j) { return j.dump() + "\n"; }

std::string dump_pretty(const Json& j) { return j.dump(2) + "\n"; }

CsvWriter::CsvWriter(std::vector<std::string> header) : width_(header.size()) {
  for (std::size_t i = 0; i < header.size(); ++i) text_ += (i ? "," : "") + header[i];
  text_ += '\n';
}

CsvWriter& CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != width_) throw Error(ErrorKind::InvalidInput, "CSV row width does not match the header");
  for (std::size_t i = 0; i < cells.size(); ++i) text_ += (i ? "," : "") + cells[i];
  text_ += '\n';
  return *this;
}

}  // namespace calign
