#include "lode/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_map>

#include "lode/error.hpp"

namespace lode::data {

using nlohmann::json;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string padded(const std::string& prefix, std::size_t i) {
  std::string n = std::to_string(i);
  return prefix + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n;
}

template <class Rng>
std::vector<bool> exact_split_flags(std::size_t n, double ratio, Rng& rng) {
  const auto positives = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  std::vector<bool> flags(n, false);
  std::fill(flags.begin(), flags.begin() + static_cast<std::ptrdiff_t>(std::min(positives, n)), true);
  std::shuffle(flags.begin(), flags.end(), rng);
  return flags;
}

}  // namespace

// ---------------------------------------------------------------------------
// Spirals

double SpiralShape::angle(double t) const {
  return phase + (clockwise ? -1.0 : 1.0) * kTwoPi * turns * t;
}

std::pair<double, double> SpiralShape::point(double t) const {
  const double r = radius(t), a = angle(t);
  return {r * std::cos(a), r * std::sin(a)};
}

std::vector<SpiralSample> gen_spiral_samples(const SpiralConfig& c) {
  if (c.n_series == 0 || c.points_per_series == 0 || c.grid_points < 2)
    throw ContractViolation("spiral counts must be positive");
  if (c.points_per_series > c.grid_points)
    throw ContractViolation("points_per_series exceeds the parametric grid");
  if (c.clockwise_ratio < 0.0 || c.clockwise_ratio > 1.0)
    throw ContractViolation("clockwise_ratio must lie in [0, 1]");
  if (c.noise_std < 0.0) throw ContractViolation("noise_std must be non-negative");

  std::mt19937_64 rng(c.seed);
  const std::vector<bool> clockwise = exact_split_flags(c.n_series, c.clockwise_ratio, rng);
  std::uniform_real_distribution<double> radius(1.0, 2.0), phase(0.0, kTwoPi);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<std::size_t> grid(c.grid_points);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = i;

  std::vector<SpiralSample> out;
  for (std::size_t n = 0; n < c.n_series; ++n) {
    SpiralSample s;
    s.shape.clockwise = clockwise[n];
    s.shape.r0 = radius(rng);
    s.shape.phase = phase(rng);
    s.shape.turns = c.turns;

    std::vector<std::size_t> picked;
    std::sample(grid.begin(), grid.end(), std::back_inserter(picked), c.points_per_series, rng);

    IrregularSeries& x = s.series;
    x.id = padded("spiral-", n);
    x.feature_names = {"x", "y"};
    x.label = clockwise[n] ? 1 : 0;
    for (std::size_t i : picked) {
      const double t = static_cast<double>(i) / static_cast<double>(c.grid_points - 1);
      auto [px, py] = s.shape.point(t);
      if (c.noise_std > 0.0) {
        px += c.noise_std * noise(rng);
        py += c.noise_std * noise(rng);
      }
      x.times.push_back(t);
      x.values.push_back({px, py});
      x.mask.push_back({1, 1});
    }
    out.push_back(std::move(s));
  }
  return out;
}

Collection gen_spirals(const SpiralConfig& config) {
  Collection c;
  for (auto& s : gen_spiral_samples(config)) c.push_back(std::move(s.series));
  return c;
}

// ---------------------------------------------------------------------------
// Synthetic ICU cohort

double PatientProfile::health(double t) const {
  double h = baseline + drift * t;
  if (deteriorating) h -= rate * std::max(0.0, t - onset);
  return h;
}

IrregularSeries simulate_patient(const PatientProfile& p, const IcuGenConfig& c,
                                 std::uint64_t seed, const std::string& id) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  IrregularSeries s;
  s.id = id;
  s.feature_names = kIcuFeatures;
  s.label = p.deteriorating ? 1 : 0;
  s.window = c.window_hours;
  const auto slots = static_cast<std::size_t>(std::llround(c.window_hours));
  for (std::size_t k = 0; k < slots; ++k) {
    const double t = (static_cast<double>(k) + 0.1 + 0.8 * unif(rng)) / static_cast<double>(slots);
    std::vector<std::uint8_t> m(4, 0);
    for (std::size_t f = 0; f < 4; ++f) m[f] = unif(rng) < c.observation_rate[f] ? 1 : 0;
    const double h = p.health(t);
    const double hours = t * c.window_hours;
    std::vector<double> v(4, 0.0);
    v[0] = std::clamp(0.35 - 0.12 * h + 0.04 * normal(rng), 0.21, 1.0);
    v[1] = std::clamp(std::round(12.0 + 2.5 * h + 0.8 * normal(rng)), 3.0, 15.0);
    v[2] = 85.0 - 10.0 * h + 4.0 * std::sin(kTwoPi * hours / 24.0 + p.hr_phase) + 5.0 * normal(rng);
    v[3] = std::max(40.0, 95.0 + 20.0 * h + 10.0 * normal(rng));
    if (std::find(m.begin(), m.end(), 1) == m.end()) continue;
    for (std::size_t f = 0; f < 4; ++f)
      if (!m[f]) v[f] = 0.0;
    s.times.push_back(t);
    s.values.push_back(std::move(v));
    s.mask.push_back(std::move(m));
  }
  if (s.times.empty()) {
    const double t = 0.5 / static_cast<double>(std::max<std::size_t>(slots, 1));
    s.times.push_back(t);
    s.values.push_back({0.0, 0.0, 85.0 - 10.0 * p.health(t), 0.0});
    s.mask.push_back({0, 0, 1, 0});
  }
  return s;
}

Collection gen_icu(const IcuGenConfig& c) {
  if (c.n_patients == 0) throw ContractViolation("n_patients must be positive");
  if (!(c.window_hours > 0.0)) throw ContractViolation("window_hours must be positive");
  if (c.observation_rate.size() != kIcuFeatures.size())
    throw ContractViolation("observation_rate needs one entry per feature");
  for (double r : c.observation_rate)
    if (!(r > 0.0) || r > 1.0) throw ContractViolation("observation rates must lie in (0, 1]");
  if (c.death_ratio < 0.0 || c.death_ratio >= 1.0)
    throw ContractViolation("death_ratio must lie in [0, 1)");

  std::mt19937_64 rng(c.seed);
  const std::vector<bool> dies = exact_split_flags(c.n_patients, c.death_ratio, rng);
  std::normal_distribution<double> baseline(0.2, 0.4);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Collection out;
  for (std::size_t n = 0; n < c.n_patients; ++n) {
    PatientProfile p;
    p.deteriorating = dies[n];
    p.baseline = baseline(rng);
    p.onset = 0.15 + 0.45 * unif(rng);
    p.rate = c.separation * (0.7 + 0.6 * unif(rng));
    p.drift = -0.3 + 0.6 * unif(rng);
    p.hr_phase = kTwoPi * unif(rng);
    if (p.deteriorating) p.drift = 0.0;
    const std::uint64_t seed = rng();
    out.push_back(simulate_patient(p, c, seed, padded("icu-", n)));
  }
  return out;
}

IrregularSeries demo_patient_a(const IcuGenConfig& c) {
  PatientProfile p;
  p.deteriorating = true;
  p.baseline = 0.3;
  p.onset = 0.45;
  p.rate = 2.5;
  return simulate_patient(p, c, 0xA11CE, "demo-A");
}

IrregularSeries demo_patient_b(const IcuGenConfig& c) {
  PatientProfile p;
  p.baseline = 0.4;
  p.drift = 0.1;
  p.hr_phase = 1.0;
  return simulate_patient(p, c, 0xB0B, "demo-B");
}

// ---------------------------------------------------------------------------
// Normalization

NormStats fit_norm(const Collection& raw) {
  if (raw.empty()) throw ContractViolation("cannot fit normalization on an empty collection");
  const std::size_t f = raw.front().feature_count();
  std::vector<double> sum(f, 0.0), count(f, 0.0);
  for (const auto& s : raw) {
    if (s.feature_count() != f) throw ContractViolation("series disagree on feature count");
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t k = 0; k < f; ++k)
        if (s.mask[i][k]) {
          sum[k] += s.values[i][k];
          count[k] += 1.0;
        }
  }
  NormStats st;
  st.mean.resize(f);
  st.std.resize(f);
  for (std::size_t k = 0; k < f; ++k) st.mean[k] = count[k] > 0 ? sum[k] / count[k] : 0.0;
  std::vector<double> sq(f, 0.0);
  for (const auto& s : raw)
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t k = 0; k < f; ++k)
        if (s.mask[i][k]) sq[k] += (s.values[i][k] - st.mean[k]) * (s.values[i][k] - st.mean[k]);
  for (std::size_t k = 0; k < f; ++k) {
    const double sd = count[k] > 0 ? std::sqrt(sq[k] / count[k]) : 0.0;
    st.std[k] = sd > 0.0 ? sd : 1.0;
  }
  return st;
}

IrregularSeries normalize(IrregularSeries s, const NormStats& stats) {
  if (!s.norm.empty()) throw ContractViolation("series " + s.id + " is already normalized");
  if (stats.mean.size() != s.feature_count())
    throw ContractViolation("normalization statistics do not match the feature count");
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t k = 0; k < s.feature_count(); ++k)
      s.values[i][k] = s.mask[i][k] ? stats.to_normalized(k, s.values[i][k]) : 0.0;
  s.norm = stats;
  return s;
}

Collection normalize(Collection raw, const NormStats& stats) {
  for (auto& s : raw) s = normalize(std::move(s), stats);
  return raw;
}

IrregularSeries denormalize(IrregularSeries s) {
  if (s.norm.empty()) throw ContractViolation("series " + s.id + " carries no statistics");
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t k = 0; k < s.feature_count(); ++k)
      s.values[i][k] = s.mask[i][k] ? s.norm.to_raw(k, s.values[i][k]) : 0.0;
  s.norm = {};
  return s;
}

IrregularSeries renormalize(IrregularSeries s, const NormStats& target) {
  if (s.norm == target) return s;
  return normalize(denormalize(std::move(s)), target);
}

Split split(const Collection& all, double train_fraction, std::uint64_t seed) {
  if (train_fraction < 0.0 || train_fraction > 1.0)
    throw ContractViolation("train_fraction must lie in [0, 1]");
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train =
      static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(all.size())));
  Split out;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_train ? out.train : out.test).push_back(all[order[i]]);
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

struct CsvRecord {
  std::size_t line;
  std::vector<std::string> fields;
};

std::vector<CsvRecord> parse_csv(const std::string& text) {
  std::vector<CsvRecord> records;
  CsvRecord cur{1, {}};
  std::string field;
  bool in_quotes = false, field_quoted = false;
  std::size_t line = 1, quote_line = 1;
  auto end_record = [&] {
    cur.fields.push_back(std::move(field));
    field.clear();
    const bool blank = cur.fields.size() == 1 && cur.fields[0].empty() && !field_quoted;
    if (!blank) records.push_back(std::move(cur));
    cur = CsvRecord{line, {}};
    field_quoted = false;
  };
  std::size_t i = 0;
  if (text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
  for (; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++line;
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"') {
      if (!field.empty()) throw ParseError(line, "quote inside an unquoted field");
      in_quotes = true;
      field_quoted = true;
      quote_line = line;
    } else if (ch == ',') {
      cur.fields.push_back(std::move(field));
      field.clear();
    } else if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      continue;
    } else if (ch == '\n') {
      ++line;
      end_record();
    } else {
      field.push_back(ch);
    }
  }
  if (in_quotes) throw ParseError(quote_line, "unterminated quoted field");
  if (!field.empty() || !cur.fields.empty() || field_quoted) end_record();
  return records;
}

double parse_number(const std::string& s, std::size_t line, const char* what) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin < end && *begin == ' ') ++begin;
  while (end > begin && end[-1] == ' ') --end;
  const auto res = std::from_chars(begin, end, v);
  if (begin == end || res.ec != std::errc() || res.ptr != end || !std::isfinite(v))
    throw ParseError(line, std::string(what) + " is not a finite number: '" + s + "'");
  return v;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

IngestResult ingest_csv(const std::string& text, const IngestOptions& opt) {
  if (!(opt.window > 0.0)) throw ContractViolation("window must be positive");
  IngestResult result;
  const auto records = parse_csv(text);
  if (records.empty()) return result;

  const auto& header = records.front();
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.fields.size(); ++i) {
    const std::string& name = header.fields[i];
    if (name != "series_id" && name != "time" && name != "feature" && name != "value" &&
        name != "label")
      throw ParseError(header.line, "unknown column '" + name + "'");
    if (!col.emplace(name, i).second) throw ParseError(header.line, "duplicate column '" + name + "'");
  }
  for (const char* required : {"series_id", "time", "feature", "value"})
    if (!col.count(required))
      throw ParseError(header.line, std::string("missing column '") + required + "'");

  struct Cell {
    double sum = 0.0;
    int count = 0;
    std::size_t first_line = 0;
  };
  struct Pending {
    std::string id;
    std::map<double, std::map<std::string, Cell>> rows;  // time -> feature -> cell
    std::optional<int> label;
  };
  std::vector<Pending> pending;
  std::unordered_map<std::string, std::size_t> index_of;
  std::vector<std::string> seen_features;

  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.fields.size() != header.fields.size())
      throw ParseError(rec.line, "expected " + std::to_string(header.fields.size()) +
                                     " fields, found " + std::to_string(rec.fields.size()));
    const std::string& id = rec.fields[col["series_id"]];
    if (id.empty()) throw ParseError(rec.line, "empty series_id");
    const double time = parse_number(rec.fields[col["time"]], rec.line, "time");
    if (time < 0.0) throw ParseError(rec.line, "time must be non-negative");
    const std::string& feature = rec.fields[col["feature"]];
    if (feature.empty()) throw ParseError(rec.line, "empty feature name");
    if (!opt.feature_names.empty() &&
        std::find(opt.feature_names.begin(), opt.feature_names.end(), feature) ==
            opt.feature_names.end())
      throw ParseError(rec.line, "unknown feature '" + feature + "'");
    const double value = parse_number(rec.fields[col["value"]], rec.line, "value");

    auto [it, inserted] = index_of.emplace(id, pending.size());
    if (inserted) pending.push_back(Pending{id, {}, std::nullopt});
    Pending& p = pending[it->second];
    if (col.count("label")) {
      const std::string& l = rec.fields[col["label"]];
      if (!l.empty()) {
        if (l != "0" && l != "1") throw ParseError(rec.line, "label must be 0, 1 or empty");
        const int lv = l == "1" ? 1 : 0;
        if (p.label && *p.label != lv) throw ParseError(rec.line, "conflicting label for " + id);
        p.label = lv;
      }
    }
    if (std::find(seen_features.begin(), seen_features.end(), feature) == seen_features.end())
      seen_features.push_back(feature);
    Cell& cell = p.rows[time][feature];
    if (cell.count == 0) cell.first_line = rec.line;
    else
      result.warnings.push_back({rec.line, "duplicate " + feature + " at time " + format_double(time) +
                                               " for " + id + " (first on line " +
                                               std::to_string(cell.first_line) + "); averaged"});
    cell.sum += value;
    cell.count += 1;
  }

  std::vector<std::string> features = opt.feature_names;
  if (features.empty()) {
    features = seen_features;
    std::sort(features.begin(), features.end());
  }

  Collection raw;
  for (const Pending& p : pending) {
    IrregularSeries s;
    s.id = p.id;
    s.feature_names = features;
    s.label = p.label;
    s.window = opt.window;
    for (const auto& [time, cells] : p.rows) {
      std::vector<double> v(features.size(), 0.0);
      std::vector<std::uint8_t> m(features.size(), 0);
      for (const auto& [name, cell] : cells) {
        const auto k = static_cast<std::size_t>(
            std::find(features.begin(), features.end(), name) - features.begin());
        v[k] = cell.sum / cell.count;
        m[k] = 1;
      }
      s.times.push_back(time / opt.window);
      s.values.push_back(std::move(v));
      s.mask.push_back(std::move(m));
    }
    raw.push_back(std::move(s));
  }
  if (raw.empty()) return result;
  const NormStats stats = opt.norm.empty() ? fit_norm(raw) : opt.norm;
  result.series = normalize(std::move(raw), stats);
  for (const auto& s : result.series) validate(s);
  return result;
}

std::string export_csv(const Collection& series) {
  std::ostringstream out;
  out << "series_id,time,feature,value,label\n";
  for (const auto& s : series) {
    if (s.norm.empty()) throw ContractViolation("export_csv needs normalization statistics");
    const std::string label = s.label ? std::to_string(*s.label) : "";
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t k = 0; k < s.feature_count(); ++k)
        if (s.mask[i][k])
          out << csv_quote(s.id) << ',' << format_double(s.times[i] * s.window) << ','
              << csv_quote(s.feature_names[k]) << ',' << format_double(s.norm.to_raw(k, s.values[i][k]))
              << ',' << label << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// JSON documents

json to_json(const IrregularSeries& s) {
  json values = json::array(), mask = json::array();
  for (std::size_t i = 0; i < s.size(); ++i) {
    json row = json::array(), mrow = json::array();
    for (std::size_t k = 0; k < s.feature_count(); ++k) {
      row.push_back(s.mask[i][k] ? json(s.values[i][k]) : json(nullptr));
      mrow.push_back(s.mask[i][k]);
    }
    values.push_back(std::move(row));
    mask.push_back(std::move(mrow));
  }
  json doc = {{"id", s.id},
              {"units", s.norm.empty() ? "raw" : "normalized"},
              {"feature_names", s.feature_names},
              {"times", s.times},
              {"values", std::move(values)},
              {"mask", std::move(mask)},
              {"label", s.label ? json(*s.label) : json(nullptr)},
              {"window", s.window}};
  doc["norm_stats"] =
      s.norm.empty() ? json(nullptr) : json{{"mean", s.norm.mean}, {"std", s.norm.std}};
  return doc;
}

json to_json(const Collection& c) {
  json arr = json::array();
  for (const auto& s : c) arr.push_back(to_json(s));
  return {{"series", std::move(arr)}};
}

namespace {

const json& require(const json& doc, const char* field) {
  auto it = doc.find(field);
  if (it == doc.end()) throw ValidationError(field, std::string("missing field '") + field + "'");
  return *it;
}

std::vector<double> number_array(const json& j, const std::string& field) {
  if (!j.is_array()) throw ValidationError(field, field + " must be an array of numbers");
  std::vector<double> out;
  for (const auto& x : j) {
    if (!x.is_number()) throw ValidationError(field, field + " must be an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace

IrregularSeries series_from_json(const json& doc, const NormStats& target) {
  if (!doc.is_object()) throw ValidationError("body", "series document must be an object");
  IrregularSeries s;
  if (auto it = doc.find("id"); it != doc.end() && !it->is_null()) {
    if (!it->is_string()) throw ValidationError("id", "id must be a string");
    s.id = it->get<std::string>();
  }
  std::string units = "raw";
  if (auto it = doc.find("units"); it != doc.end()) {
    if (!it->is_string() || (*it != "raw" && *it != "normalized"))
      throw ValidationError("units", "units must be 'raw' or 'normalized'");
    units = it->get<std::string>();
  }
  const json& names = require(doc, "feature_names");
  if (!names.is_array() || names.empty())
    throw ValidationError("feature_names", "feature_names must be a non-empty array of strings");
  for (const auto& n : names) {
    if (!n.is_string()) throw ValidationError("feature_names", "feature_names must be strings");
    s.feature_names.push_back(n.get<std::string>());
  }
  const std::size_t f = s.feature_names.size();
  if (auto it = doc.find("window"); it != doc.end()) {
    if (!it->is_number() || !(it->get<double>() > 0.0))
      throw ValidationError("window", "window must be a positive number");
    s.window = it->get<double>();
  }
  s.times = number_array(require(doc, "times"), "times");

  const json& values = require(doc, "values");
  if (!values.is_array() || values.size() != s.times.size())
    throw ValidationError("values", "values must have one row per timestamp");
  const json* mask = nullptr;
  if (auto it = doc.find("mask"); it != doc.end() && !it->is_null()) {
    if (!it->is_array() || it->size() != s.times.size())
      throw ValidationError("mask", "mask must have one row per timestamp");
    mask = &*it;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const json& row = values[i];
    if (!row.is_array() || row.size() != f)
      throw ValidationError("values", "row " + std::to_string(i) + " must have " +
                                          std::to_string(f) + " entries");
    std::vector<double> v(f, 0.0);
    std::vector<std::uint8_t> m(f, 0);
    for (std::size_t k = 0; k < f; ++k) {
      bool observed = !row[k].is_null();
      if (mask) {
        const json& mrow = (*mask)[i];
        if (!mrow.is_array() || mrow.size() != f)
          throw ValidationError("mask", "mask row " + std::to_string(i) + " has the wrong width");
        const json& mv = mrow[k];
        if (!(mv.is_number_integer() || mv.is_boolean()))
          throw ValidationError("mask", "mask entries must be 0 or 1");
        const int bit = mv.is_boolean() ? int(mv.get<bool>()) : mv.get<int>();
        if (bit != 0 && bit != 1) throw ValidationError("mask", "mask entries must be 0 or 1");
        if (bit == 1 && !observed)
          throw ValidationError("values", "observed entry at row " + std::to_string(i) + " is null");
        observed = bit == 1;
      }
      if (observed) {
        if (!row[k].is_number())
          throw ValidationError("values", "value at row " + std::to_string(i) + " is not a number");
        v[k] = row[k].get<double>();
        m[k] = 1;
      }
    }
    s.values.push_back(std::move(v));
    s.mask.push_back(std::move(m));
  }
  if (auto it = doc.find("label"); it != doc.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw ValidationError("label", "label must be 0, 1 or null");
    s.label = it->get<int>();
  }

  NormStats own;
  if (auto it = doc.find("norm_stats"); it != doc.end() && !it->is_null()) {
    if (!it->is_object()) throw ValidationError("norm_stats", "norm_stats must be an object");
    own.mean = number_array(require(*it, "mean"), "norm_stats");
    own.std = number_array(require(*it, "std"), "norm_stats");
  }
  if (!target.empty() && target.mean.size() != f)
    throw ValidationError("feature_names", "series has " + std::to_string(f) +
                                               " features, the model expects " +
                                               std::to_string(target.mean.size()));

  if (units == "raw") {
    for (double& t : s.times) t /= s.window;
    const NormStats& stats = target.empty() ? own : target;
    if (stats.empty())
      throw ValidationError("norm_stats", "raw series need normalization statistics");
    s.norm = {};
    // Validate the raw document first so errors name the original field.
    IrregularSeries probe = s;
    probe.norm = stats;
    validate(probe);
    return normalize(std::move(s), stats);
  }
  s.norm = own.empty() ? target : own;
  if (s.norm.empty())
    throw ValidationError("norm_stats", "normalized series need normalization statistics");
  validate(s);
  if (!target.empty() && !(s.norm == target)) s = renormalize(std::move(s), target);
  return s;
}

Collection collection_from_json(const json& doc, const NormStats& target) {
  const json* arr = &doc;
  if (doc.is_object()) arr = &require(doc, "series");
  if (!arr->is_array()) throw ValidationError("series", "series must be an array");
  Collection out;
  for (const auto& item : *arr) out.push_back(series_from_json(item, target));
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

IngestResult ingest_file(const std::filesystem::path& path, const IngestOptions& options) {
  const std::string text = read_text(path);
  if (path.extension() == ".json") {
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      const auto upto = std::min<std::size_t>(e.byte, text.size());
      const auto line = 1 + static_cast<std::size_t>(
                                std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n'));
      throw ParseError(line, "malformed JSON document");
    }
    return {collection_from_json(doc, options.norm), {}};
  }
  return ingest_csv(text, options);
}

}  // namespace lode::data
