#include "lode/service.hpp"

#include <charconv>
#include <cmath>
#include <mutex>
#include <set>

#include "httplib.h"
#include "json.hpp"
#include "lode/data.hpp"
#include "lode/error.hpp"
#include "lode/trajectory.hpp"
#include "lode/version.hpp"

namespace lode::service {

using nlohmann::json;

namespace {

Response reply(int status, const json& doc) { return {status, doc.dump()}; }

Response error_reply(int status, std::string_view code, const std::string& message,
                     json extra = json::object()) {
  json err = {{"code", code}, {"message", message}};
  for (auto& [k, v] : extra.items()) err[k] = v;
  return reply(status, {{"error", err}});
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Validation:
    case ErrorCode::Parse: return 400;
    case ErrorCode::NotFound: return 404;
    case ErrorCode::EmptyWindow:
    case ErrorCode::EnsembleDegenerate:
    case ErrorCode::QueryInfeasible:
    case ErrorCode::Divergence:
    case ErrorCode::Stiffness: return 422;
    default: return 500;
  }
}

/// Rejects query parameters the endpoint does not know.
void allow_only(const Request& r, std::initializer_list<std::string_view> names) {
  for (const auto& [k, v] : r.query) {
    bool known = false;
    for (auto n : names) known = known || k == n;
    if (!known) throw ValidationError(k, "unknown query parameter '" + k + "'");
  }
}

double parse_double(const std::string& field, const std::string& text) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || !std::isfinite(v))
    throw ValidationError(field, field + " must be a finite number");
  return v;
}

std::uint64_t parse_uint(const std::string& field, const std::string& text) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty())
    throw ValidationError(field, field + " must be a non-negative integer");
  return v;
}

double query_double(const Request& r, const std::string& name, double fallback) {
  const auto it = r.query.find(name);
  return it == r.query.end() ? fallback : parse_double(name, it->second);
}

std::uint64_t query_uint(const Request& r, const std::string& name, std::uint64_t fallback) {
  const auto it = r.query.find(name);
  return it == r.query.end() ? fallback : parse_uint(name, it->second);
}

engine::Units parse_units(const std::string& text) {
  if (text == "normalized") return engine::Units::Normalized;
  if (text == "raw") return engine::Units::Raw;
  throw ValidationError("units", "units must be 'raw' or 'normalized'");
}

engine::Units query_units(const Request& r) {
  const auto it = r.query.find("units");
  return it == r.query.end() ? engine::Units::Normalized : parse_units(it->second);
}

const json& body_field(const json& body, const char* name) {
  const auto it = body.find(name);
  if (it == body.end()) throw ValidationError(name, std::string("missing field '") + name + "'");
  return *it;
}

double body_double(const json& body, const char* name, std::optional<double> fallback = {}) {
  const auto it = body.find(name);
  if (it == body.end() || it->is_null()) {
    if (fallback) return *fallback;
    throw ValidationError(name, std::string("missing field '") + name + "'");
  }
  if (!it->is_number() || !std::isfinite(it->get<double>()))
    throw ValidationError(name, std::string(name) + " must be a finite number");
  return it->get<double>();
}

std::uint64_t body_uint(const json& body, const char* name, std::uint64_t fallback) {
  const auto it = body.find(name);
  if (it == body.end() || it->is_null()) return fallback;
  if (!it->is_number_unsigned())
    throw ValidationError(name, std::string(name) + " must be a non-negative integer");
  return it->get<std::uint64_t>();
}

json parse_body(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("body", std::string("malformed JSON: ") + e.what());
  }
}

/// Splits "/series/abc/ensemble" into {"series", "abc", "ensemble"}.
std::vector<std::string> segments(const std::string& path) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    const std::size_t j = path.find('/', i);
    const std::size_t end = j == std::string::npos ? path.size() : j;
    if (end > i) out.push_back(path.substr(i, end - i));
    i = end;
  }
  return out;
}

engine::EnsembleOptions ensemble_options(const Request& r, const ServiceConfig& c) {
  engine::EnsembleOptions o;
  o.fraction = query_double(r, "fraction", 1.0);
  o.members = query_uint(r, "K", c.default_members);
  o.horizon_mult = query_double(r, "horizon_mult", c.default_horizon);
  o.seed = query_uint(r, "seed", 0);
  o.hop_threshold = query_double(r, "theta_hop", c.hop_threshold);
  o.risk_threshold = query_double(r, "threshold", c.risk_threshold);
  o.threads = c.threads;
  if (o.members > c.max_members)
    throw ValidationError("K", "K exceeds the server limit of " + std::to_string(c.max_members));
  o.validate();
  return o;
}

json reconstruction_json(const model::Reconstruction& rec, const model::ModelParams& p,
                         engine::Units units) {
  json values = json::array();
  for (const auto& row : rec.means) {
    json r = json::array();
    for (std::size_t f = 0; f < row.size(); ++f)
      r.push_back(units == engine::Units::Raw ? p.norm.to_raw(f, row[f]) : row[f]);
    values.push_back(std::move(r));
  }
  return {{"times", rec.times}, {"values", std::move(values)}};
}

}  // namespace

Service::Service(model::ModelParams params, std::string checkpoint_sha256, ServiceConfig config)
    : params_(std::move(params)),
      checkpoint_sha256_(std::move(checkpoint_sha256)),
      config_(std::move(config)),
      started_(std::chrono::steady_clock::now()) {
  params_.validate();
}

std::size_t Service::series_count() const {
  std::shared_lock lock(registry_mutex_);
  return registry_.size();
}

IrregularSeries Service::lookup(const std::string& id) const {
  std::shared_lock lock(registry_mutex_);
  const auto it = registry_.find(id);
  if (it == registry_.end()) throw NotFoundError("no series with id '" + id + "'");
  return it->second;
}

Response Service::handle(const Request& r) {
  try {
    const auto seg = segments(r.path);
    if (seg.size() == 1 && seg[0] == "health") {
      if (r.method != "GET") return error_reply(405, "method_not_allowed", "use GET");
      return health();
    }
    if (!seg.empty() && seg[0] == "series") {
      if (seg.size() == 1) {
        if (r.method != "PUT" && r.method != "POST")
          return error_reply(405, "method_not_allowed", "use PUT");
        return put_series(r);
      }
      const std::string& id = seg[1];
      const std::string action = seg.size() == 3 ? seg[2] : seg.size() == 2 ? "" : "?";
      if (action.empty() && r.method == "GET") return get_series(id, r);
      if (action == "ensemble" && r.method == "GET") return get_ensemble(id, r);
      if (action == "query" && r.method == "POST") return post_query(id, r);
      if (action == "risk" && r.method == "GET") return get_risk(id, r);
      if (action.empty() || action == "ensemble" || action == "query" || action == "risk")
        return error_reply(405, "method_not_allowed", "method not allowed on " + r.path);
    }
    return error_reply(404, "not_found", "no route for " + r.method + " " + r.path);
  } catch (const ValidationError& e) {
    return error_reply(400, to_string(e.code()), e.what(), {{"field", e.field()}});
  } catch (const EnsembleDegenerateError& e) {
    return error_reply(422, to_string(e.code()), e.what(), {{"dropped", e.dropped()}});
  } catch (const QueryInfeasibleError& e) {
    return error_reply(422, to_string(e.code()), e.what(),
                       {{"best_distance", e.best_distance()},
                        {"effective_sample_size", e.effective_sample_size()}});
  } catch (const Error& e) {
    return error_reply(status_for(e.code()), to_string(e.code()), e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "internal", e.what());
  }
}

Response Service::health() const {
  const double uptime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  return reply(200, {{"status", "ready"},
                     {"version", kVersion},
                     {"checkpoint_sha256", checkpoint_sha256_},
                     {"feature_names", params_.feature_names},
                     {"series_count", series_count()},
                     {"uptime_seconds", uptime}});
}

Response Service::put_series(const Request& r) {
  allow_only(r, {});
  const json body = parse_body(r.body);
  IrregularSeries s = data::series_from_json(body, params_.norm);
  if (s.feature_names != params_.feature_names)
    throw ValidationError("feature_names", "feature_names must match the model's features");
  std::string id;
  {
    std::unique_lock lock(registry_mutex_);
    id = "s" + std::to_string(next_id_++);
    registry_.emplace(id, s);
  }
  return reply(200, {{"id", id}, {"rows", s.size()}, {"observed", s.observed_entries()}});
}

Response Service::get_series(const std::string& id, const Request& r) const {
  allow_only(r, {});
  json doc = data::to_json(lookup(id));
  doc["id"] = id;
  return reply(200, doc);
}

Response Service::get_ensemble(const std::string& id, const Request& r) const {
  allow_only(r, {"fraction", "K", "horizon_mult", "seed", "theta_hop", "threshold", "units"});
  const engine::EnsembleOptions o = ensemble_options(r, config_);
  const engine::Units units = query_units(r);
  const IrregularSeries s = lookup(id);
  json doc = engine::to_json(engine::sample_ensemble(s, params_, o), params_, units);
  doc["series_id"] = id;
  return reply(200, doc);
}

Response Service::post_query(const std::string& id, const Request& r) const {
  allow_only(r, {});
  const json body = parse_body(r.body);
  if (!body.is_object()) throw ValidationError("body", "query body must be an object");
  static const std::set<std::string> known = {"time", "feature", "value", "tolerance", "K", "M",
                                              "seed", "fraction", "horizon_mult", "theta_hop",
                                              "threshold", "units", "backward"};
  for (const auto& [k, v] : body.items())
    if (!known.contains(k)) throw ValidationError(k, "unknown field '" + k + "'");

  engine::Units units = engine::Units::Normalized;
  if (const auto it = body.find("units"); it != body.end()) {
    if (!it->is_string()) throw ValidationError("units", "units must be 'raw' or 'normalized'");
    units = parse_units(it->get<std::string>());
  }
  const bool raw = units == engine::Units::Raw;
  if (raw && params_.norm.empty())
    throw ValidationError("units", "checkpoint carries no normalization statistics");

  engine::HypotheticalPoint q;
  const json& feature = body_field(body, "feature");
  if (feature.is_string()) {
    const auto& names = params_.feature_names;
    const auto it = std::find(names.begin(), names.end(), feature.get<std::string>());
    if (it == names.end()) throw ValidationError("feature", "unknown feature name");
    q.feature = static_cast<std::size_t>(it - names.begin());
  } else if (feature.is_number_unsigned()) {
    q.feature = feature.get<std::size_t>();
  } else {
    throw ValidationError("feature", "feature must be an index or a feature name");
  }
  if (q.feature >= params_.arch.feature_count)
    throw ValidationError("feature", "feature index out of range");
  q.time = body_double(body, "time");
  q.value = body_double(body, "value");
  q.tolerance = body_double(body, "tolerance");
  if (raw) {
    q.time /= params_.window;
    q.value = params_.norm.to_normalized(q.feature, q.value);
    q.tolerance /= params_.norm.std[q.feature];
  }
  q.validate(params_.arch.feature_count);

  engine::EnsembleOptions o;
  o.fraction = body_double(body, "fraction", 1.0);
  o.members = body_uint(body, "K", config_.default_members);
  o.horizon_mult = body_double(body, "horizon_mult", config_.default_horizon);
  o.seed = body_uint(body, "seed", 0);
  o.hop_threshold = body_double(body, "theta_hop", config_.hop_threshold);
  o.risk_threshold = body_double(body, "threshold", config_.risk_threshold);
  o.threads = config_.threads;
  if (o.members > config_.max_members)
    throw ValidationError("K", "K exceeds the server limit of " + std::to_string(config_.max_members));
  o.validate();
  const std::size_t proposals = body_uint(body, "M", 50 * o.members);
  if (proposals < o.members) throw ValidationError("M", "M must be at least K");
  if (proposals > config_.max_proposals)
    throw ValidationError("M", "M exceeds the server limit of " + std::to_string(config_.max_proposals));
  const std::size_t backward = body_uint(body, "backward", 5);

  const IrregularSeries s = lookup(id);
  const engine::TrajectoryEnsemble e = engine::condition_on_point(s, params_, q, o, proposals);
  json doc = engine::to_json(e, params_, units);
  json paths = json::array();
  for (const auto& rec : engine::backward_paths(e, params_, q, backward))
    paths.push_back(reconstruction_json(rec, params_, units));
  doc["backward_paths"] = std::move(paths);
  doc["series_id"] = id;
  return reply(200, doc);
}

Response Service::get_risk(const std::string& id, const Request& r) const {
  allow_only(r, {"fractions", "threshold"});
  std::vector<double> fractions = {0.2, 0.4, 0.6, 0.8, 1.0};
  if (const auto it = r.query.find("fractions"); it != r.query.end()) {
    fractions.clear();
    std::size_t i = 0;
    const std::string& text = it->second;
    while (i <= text.size()) {
      const std::size_t j = std::min(text.find(',', i), text.size());
      fractions.push_back(parse_double("fractions", text.substr(i, j - i)));
      i = j + 1;
    }
  }
  const double threshold = query_double(r, "threshold", config_.risk_threshold);
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ValidationError("threshold", "threshold must lie in (0, 1)");
  const IrregularSeries s = lookup(id);
  const engine::RiskCurve curve = engine::risk_curve(s, params_, fractions, threshold);
  json points = json::array();
  for (const auto& p : curve.points)
    points.push_back({{"duration", p.duration}, {"probability", p.probability}});
  return reply(200, {{"series_id", id},
                     {"window", params_.window},
                     {"threshold", curve.threshold},
                     {"points", std::move(points)},
                     {"crossing", curve.crossing ? json(*curve.crossing) : json(nullptr)}});
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  explicit Impl(Service& s) : service(s) {}
  Service& service;
  httplib::Server server;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto route = [this](const httplib::Request& in, httplib::Response& out) {
    Request r;
    r.method = in.method;
    r.path = in.path;
    for (const auto& [k, v] : in.params) r.query[k] = v;
    r.body = in.body;
    const Response resp = impl_->service.handle(r);
    out.status = resp.status;
    out.set_content(resp.body, "application/json");
  };
  auto& s = impl_->server;
  s.Get(".*", route);
  s.Put(".*", route);
  s.Post(".*", route);
  s.Delete(".*", route);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port))
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace lode::service
