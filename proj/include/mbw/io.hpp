#pragma once

// File formats: washout cohorts (long CSV or JSON), informative prior files,
// agreement outcome tables and cohort simulation specs.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mbw/agreement.hpp"
#include "mbw/core.hpp"
#include "mbw/error.hpp"
#include "mbw/model.hpp"
#include "mbw/synthgen.hpp"

namespace mbw::io {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kSchemaLine = "# mbw-schema: 1";
inline constexpr std::string_view kCohortHeader =
    "test_id,participant_id,replicate_id,k,gas,cevgm,cevtg";

struct TestRecord {
  std::string test_id;
  std::string participant_id;
  std::string replicate_id;
  BreathSeries series;
  std::optional<Vector6> mu;
  std::optional<Matrix6> sigma;
};

using Cohort = std::vector<TestRecord>;

enum class Format { Csv, Json };

/// ".json" selects JSON; anything else is CSV.
inline Format format_for(const std::string& path) {
  const auto dot = path.rfind('.');
  if (dot != std::string::npos) {
    std::string ext = path.substr(dot + 1);
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == "json") return Format::Json;
  }
  return Format::Csv;
}

/// Shortest form that reads back to the same double ("%.17g").
inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrorKind::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrorKind::Io, "cannot write " + path);
  out << content;
  if (!out) throw DataError(DataErrorKind::Io, "write failed for " + path);
}

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& s : out) {
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.pop_back();
    while (!s.empty() && s.front() == ' ') s.erase(s.begin());
  }
  return out;
}

inline double parse_double(const std::string& s, const std::string& test_id, long line) {
  double v = 0;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end)
    throw DataError(DataErrorKind::MalformedNumeric, "not a number: '" + s + "'", test_id, -1,
                    line);
  return v;
}

inline long parse_long(const std::string& s, const std::string& test_id, long line) {
  long v = 0;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end)
    throw DataError(DataErrorKind::MalformedNumeric, "not an integer: '" + s + "'", test_id, -1,
                    line);
  return v;
}

/// Lines with their 1-based numbers, skipping blanks and '#' comments.
inline std::vector<std::pair<long, std::string>> content_lines(const std::string& text) {
  std::vector<std::pair<long, std::string>> out;
  std::istringstream in(text);
  std::string line;
  long n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    out.emplace_back(n, line);
  }
  return out;
}

/// Column positions of `names` in a header row; throws MissingField.
inline std::vector<std::size_t> locate_columns(const std::vector<std::string>& header,
                                               const std::vector<std::string>& names, long line) {
  std::vector<std::size_t> idx;
  for (const auto& n : names) {
    const auto it = std::find(header.begin(), header.end(), n);
    if (it == header.end())
      throw DataError(DataErrorKind::MissingField, "missing column '" + n + "'", {}, -1, line);
    idx.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  return idx;
}

inline Cohort parse_cohort_csv(const std::string& text) {
  Cohort cohort;
  const auto lines = content_lines(text);
  if (lines.empty()) return cohort;
  const auto col = locate_columns(split(lines[0].second),
                                  {"test_id", "participant_id", "replicate_id", "k", "gas",
                                   "cevgm", "cevtg"},
                                  lines[0].first);
  struct Pending {
    std::string participant, replicate;
    std::vector<double> gas, cevgm, cevtg;
    long first_line = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Pending> tests;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& [ln, text_line] = lines[i];
    const auto f = split(text_line);
    std::size_t need = 0;
    for (auto c : col) need = std::max(need, c + 1);
    if (f.size() < need)
      throw DataError(DataErrorKind::MissingField, "expected at least " + std::to_string(need) +
                                                       " fields",
                      {}, -1, ln);
    const std::string& id = f[col[0]];
    if (id.empty()) throw DataError(DataErrorKind::MissingField, "empty test_id", {}, -1, ln);
    auto [it, inserted] = tests.try_emplace(id);
    Pending& p = it->second;
    if (inserted) {
      order.push_back(id);
      p.participant = f[col[1]];
      p.replicate = f[col[2]];
      p.first_line = ln;
    }
    const long k = parse_long(f[col[3]], id, ln);
    if (k != static_cast<long>(p.gas.size()))
      throw DataError(DataErrorKind::NonContiguousIndex,
                      "expected k = " + std::to_string(p.gas.size()) + ", found " +
                          std::to_string(k),
                      id, k, ln);
    p.gas.push_back(parse_double(f[col[4]], id, ln));
    p.cevgm.push_back(parse_double(f[col[5]], id, ln));
    p.cevtg.push_back(parse_double(f[col[6]], id, ln));
  }
  for (const auto& id : order) {
    Pending& p = tests.at(id);
    TestRecord r;
    r.test_id = id;
    r.participant_id = p.participant.empty() ? id : p.participant;
    r.replicate_id = p.replicate.empty() ? "1" : p.replicate;
    r.series = BreathSeries(std::move(p.gas), std::move(p.cevgm), std::move(p.cevtg), id);
    cohort.push_back(std::move(r));
  }
  return cohort;
}

inline std::vector<double> json_numbers(const nlohmann::json& j, const char* field,
                                        const std::string& id) {
  if (!j.contains(field))
    throw DataError(DataErrorKind::MissingField, std::string("missing field '") + field + "'",
                    id);
  const auto& a = j.at(field);
  if (!a.is_array())
    throw DataError(DataErrorKind::MalformedNumeric, std::string("'") + field +
                                                         "' must be an array",
                    id);
  std::vector<double> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number())
      throw DataError(DataErrorKind::MalformedNumeric,
                      std::string("non-numeric entry in '") + field + "'", id,
                      static_cast<long>(i));
    out.push_back(a[i].get<double>());
  }
  return out;
}

inline std::string json_id(const nlohmann::json& j, const char* field, std::string fallback) {
  if (!j.contains(field)) return fallback;
  const auto& v = j.at(field);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw DataError(DataErrorKind::BadSchema, std::string("'") + field + "' must be a string");
}

inline Cohort parse_cohort_json(const std::string& text) {
  Cohort cohort;
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return cohort;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(DataErrorKind::BadSchema, std::string("invalid JSON: ") + e.what());
  }
  if (doc.is_object() && doc.contains("tests")) doc = doc.at("tests");
  if (!doc.is_array()) throw DataError(DataErrorKind::BadSchema, "expected an array of tests");
  for (std::size_t t = 0; t < doc.size(); ++t) {
    const auto& j = doc[t];
    if (!j.is_object()) throw DataError(DataErrorKind::BadSchema, "test record must be an object");
    TestRecord r;
    r.test_id = json_id(j, "test_id", std::to_string(t + 1));
    r.participant_id = json_id(j, "participant_id", r.test_id);
    r.replicate_id = json_id(j, "replicate_id", "1");
    auto gas = json_numbers(j, "gas", r.test_id);
    auto v = json_numbers(j, "cevgm", r.test_id);
    auto c = json_numbers(j, "cevtg", r.test_id);
    if (j.contains("M")) {
      if (!j.at("M").is_number_integer())
        throw DataError(DataErrorKind::MalformedNumeric, "'M' must be an integer", r.test_id);
      const auto m = j.at("M").get<long long>();
      if (m != static_cast<long long>(gas.size()) || m != static_cast<long long>(v.size()) ||
          m != static_cast<long long>(c.size()))
        throw DataError(DataErrorKind::LengthMismatch, "array lengths disagree with M",
                        r.test_id);
    }
    if (j.contains("k")) {
      const auto k = json_numbers(j, "k", r.test_id);
      if (k.size() != gas.size())
        throw DataError(DataErrorKind::LengthMismatch, "k has the wrong length", r.test_id);
      for (std::size_t i = 0; i < k.size(); ++i)
        if (k[i] != static_cast<double>(i))
          throw DataError(DataErrorKind::NonContiguousIndex,
                          "k must run 0, 1, ..., M-1", r.test_id, static_cast<long>(i));
    }
    r.series = BreathSeries(std::move(gas), std::move(v), std::move(c), r.test_id);
    if (j.contains("mu")) {
      const auto mu = json_numbers(j, "mu", r.test_id);
      if (mu.size() != 6) throw DataError(DataErrorKind::LengthMismatch, "mu needs 6 entries", r.test_id);
      r.mu = Eigen::Map<const Vector6>(mu.data());
    }
    if (j.contains("Sigma")) {
      std::vector<double> flat;
      const auto& s = j.at("Sigma");
      if (s.is_array() && !s.empty() && s[0].is_array()) {
        for (const auto& row : s)
          for (const auto& x : row) {
            if (!x.is_number())
              throw DataError(DataErrorKind::MalformedNumeric, "non-numeric Sigma entry", r.test_id);
            flat.push_back(x.get<double>());
          }
      } else {
        flat = json_numbers(j, "Sigma", r.test_id);
      }
      if (flat.size() != 36)
        throw DataError(DataErrorKind::LengthMismatch, "Sigma needs 6x6 entries", r.test_id);
      Matrix6 m;
      for (int a = 0; a < 6; ++a)
        for (int b = 0; b < 6; ++b) m(a, b) = flat[a * 6 + b];
      r.sigma = m;
    }
    cohort.push_back(std::move(r));
  }
  return cohort;
}

}  // namespace detail

inline Cohort read_tests(const std::string& path, std::optional<Format> format = std::nullopt) {
  const std::string text = detail::read_file(path);
  return format.value_or(format_for(path)) == Format::Json ? detail::parse_cohort_json(text)
                                                           : detail::parse_cohort_csv(text);
}

inline std::string cohort_csv(const Cohort& cohort) {
  std::string out(kSchemaLine);
  out += "\n";
  out += kCohortHeader;
  out += "\n";
  for (const auto& r : cohort) {
    const auto& s = r.series;
    for (std::size_t i = 0; i < s.size(); ++i) {
      out += r.test_id + "," + r.participant_id + "," + r.replicate_id + "," +
             std::to_string(i) + "," + format_double(s.gas()[i]) + "," +
             format_double(s.cevgm()[i]) + "," + format_double(s.cevtg()[i]) + "\n";
    }
  }
  return out;
}

inline nlohmann::json cohort_json(const Cohort& cohort) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : cohort) {
    nlohmann::json j;
    j["test_id"] = r.test_id;
    j["participant_id"] = r.participant_id;
    j["replicate_id"] = r.replicate_id;
    j["M"] = r.series.size();
    std::vector<long> k(r.series.size());
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = static_cast<long>(i);
    j["k"] = k;
    j["gas"] = std::vector<double>(r.series.gas().begin(), r.series.gas().end());
    j["cevgm"] = std::vector<double>(r.series.cevgm().begin(), r.series.cevgm().end());
    j["cevtg"] = std::vector<double>(r.series.cevtg().begin(), r.series.cevtg().end());
    if (r.mu) j["mu"] = std::vector<double>(r.mu->data(), r.mu->data() + 6);
    if (r.sigma) {
      nlohmann::json rows = nlohmann::json::array();
      for (int a = 0; a < 6; ++a) {
        std::vector<double> row(6);
        for (int b = 0; b < 6; ++b) row[b] = (*r.sigma)(a, b);
        rows.push_back(row);
      }
      j["Sigma"] = rows;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

inline void write_tests(const std::string& path, const Cohort& cohort,
                        std::optional<Format> format = std::nullopt) {
  if (format.value_or(format_for(path)) == Format::Json)
    detail::write_file(path, cohort_json(cohort).dump(1) + "\n");
  else
    detail::write_file(path, cohort_csv(cohort));
}

// Informative prior files: {"schema_version": 1, "mu": [6], "sigma": [36, row-major]}.

inline nlohmann::json prior_json(const PriorSpec& prior) {
  if (!prior.is_informative())
    throw ParameterDomainError("only informative priors are written to file");
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["mu"] = std::vector<double>(prior.mu().data(), prior.mu().data() + 6);
  std::vector<double> flat(36);
  for (int a = 0; a < 6; ++a)
    for (int b = 0; b < 6; ++b) flat[a * 6 + b] = prior.sigma()(a, b);
  j["sigma"] = flat;
  return j;
}

inline void write_prior(const std::string& path, const PriorSpec& prior) {
  detail::write_file(path, prior_json(prior).dump(1) + "\n");
}

inline PriorSpec parse_prior(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(DataErrorKind::BadSchema, std::string("invalid prior JSON: ") + e.what());
  }
  const auto mu = detail::json_numbers(j, "mu", "prior");
  const auto sigma = detail::json_numbers(j, "sigma", "prior");
  if (mu.size() != 6 || sigma.size() != 36)
    throw DataError(DataErrorKind::LengthMismatch, "prior needs 6 means and 36 covariances",
                    "prior");
  Matrix6 s;
  for (int a = 0; a < 6; ++a)
    for (int b = 0; b < 6; ++b) s(a, b) = sigma[a * 6 + b];
  return PriorSpec::informative(Eigen::Map<const Vector6>(mu.data()), s);
}

inline PriorSpec read_prior(const std::string& path) {
  return parse_prior(detail::read_file(path));
}

// Agreement tables: columns method,participant,replicate,value.

inline std::vector<AgreementRow> read_agreement(const std::string& path) {
  const auto lines = detail::content_lines(detail::read_file(path));
  std::vector<AgreementRow> rows;
  if (lines.empty()) return rows;
  const auto col = detail::locate_columns(detail::split(lines[0].second),
                                          {"method", "participant", "replicate", "value"},
                                          lines[0].first);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& [ln, text] = lines[i];
    const auto f = detail::split(text);
    std::size_t need = 0;
    for (auto c : col) need = std::max(need, c + 1);
    if (f.size() < need)
      throw DataError(DataErrorKind::MissingField, "too few fields", {}, -1, ln);
    AgreementRow r;
    r.method = static_cast<int>(detail::parse_long(f[col[0]], {}, ln));
    r.participant = f[col[1]];
    r.replicate = f[col[2]];
    r.y = detail::parse_double(f[col[3]], {}, ln);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::string agreement_csv(const std::vector<AgreementRow>& rows) {
  std::string out(kSchemaLine);
  out += "\nmethod,participant,replicate,value\n";
  for (const auto& r : rows)
    out += std::to_string(r.method) + "," + r.participant + "," + r.replicate + "," +
           format_double(r.y) + "\n";
  return out;
}

// Cohort simulation specs (JSON). Every field is optional; defaults follow
// CohortSpec.

inline CohortSpec parse_cohort_spec(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(DataErrorKind::BadSchema, std::string("invalid spec JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError(DataErrorKind::BadSchema, "spec must be a JSON object");
  CohortSpec s;
  try {
    if (j.contains("n_tests")) s.n_tests = j.at("n_tests").get<std::size_t>();
    if (j.contains("replicates")) s.replicates = j.at("replicates").get<std::size_t>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("stop_threshold")) s.stop_threshold = j.at("stop_threshold").get<double>();
    if (j.contains("max_breath")) s.max_breath = j.at("max_breath").get<std::size_t>();
    if (j.contains("fixed_length") && !j.at("fixed_length").is_null())
      s.fixed_length = j.at("fixed_length").get<std::size_t>();
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      if (n.contains("sigma_c")) s.noise.sigma_c = n.at("sigma_c").get<double>();
      if (n.contains("sigma_v")) s.noise.sigma_v = n.at("sigma_v").get<double>();
      if (n.contains("sigma_r")) s.noise.sigma_r = n.at("sigma_r").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataErrorKind::BadSchema, std::string("bad spec field: ") + e.what());
  }
  if (j.contains("hyper_mu")) {
    const auto mu = detail::json_numbers(j, "hyper_mu", "spec");
    if (mu.size() != 6) throw DataError(DataErrorKind::LengthMismatch, "hyper_mu needs 6 entries");
    s.hyper_mu = Eigen::Map<const Vector6>(mu.data());
  }
  if (j.contains("hyper_sigma")) {
    const auto sg = detail::json_numbers(j, "hyper_sigma", "spec");
    if (sg.size() != 36)
      throw DataError(DataErrorKind::LengthMismatch, "hyper_sigma needs 36 entries");
    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < 6; ++b) s.hyper_sigma(a, b) = sg[a * 6 + b];
  }
  return s;
}

inline CohortSpec read_cohort_spec(const std::string& path) {
  return parse_cohort_spec(detail::read_file(path));
}

inline Cohort to_cohort(const std::vector<SyntheticTest>& tests) {
  Cohort c;
  for (const auto& t : tests)
    c.push_back({t.test_id, t.participant_id, t.replicate_id, t.series, std::nullopt, std::nullopt});
  return c;
}

/// One row per synthetic test: true parameters and outcomes.
inline std::string truth_csv(const std::vector<SyntheticTest>& tests) {
  std::string out(kSchemaLine);
  out += "\ntest_id,participant_id,replicate_id";
  for (const auto* n : MbwParams::kNames) out += std::string(",") + n;
  out += ",theta,cev,frc_star,frc_m,lci_star,lci_m,lci_standard\n";
  for (const auto& t : tests) {
    out += t.test_id + "," + t.participant_id + "," + t.replicate_id;
    for (double v : t.truth.to_array()) out += "," + format_double(v);
    const auto& o = t.true_outcomes;
    for (double v : {o.asymptotic.theta, o.asymptotic.cev, o.asymptotic.frc, o.theta_based.frc,
                     o.asymptotic.lci, o.theta_based.lci})
      out += "," + format_double(v);
    const auto std_out = outcomes_standard(t.series);
    out += "," + (std_out ? format_double(std_out->lci) : std::string("NA")) + "\n";
  }
  return out;
}

}  // namespace mbw::io
