#include "lode/cli.hpp"

#include <atomic>
#include <charconv>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "lode/checkpoint.hpp"
#include "lode/data.hpp"
#include "lode/error.hpp"
#include "lode/service.hpp"
#include "lode/training.hpp"
#include "lode/trajectory.hpp"
#include "lode/version.hpp"

namespace lode::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Key/value settings from a config file section plus --set overrides. Every
/// key must be consumed; leftovers are reported as unknown.
class Settings {
 public:
  Settings(const std::string& config_path, const std::string& section,
           const std::vector<std::string>& overrides) {
    if (!config_path.empty()) {
      std::vector<CLI::ConfigItem> items;
      try {
        items = CLI::ConfigINI().from_file(config_path);
      } catch (const CLI::FileError&) {
        throw IoError("cannot read config file " + config_path);
      } catch (const CLI::ParseError& e) {
        throw ValidationError("config", std::string("malformed config file: ") + e.what());
      }
      for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;
        if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == section))
          continue;
        std::string value;
        for (std::size_t i = 0; i < item.inputs.size(); ++i)
          value += (i ? "," : "") + item.inputs[i];
        values_[item.name] = value;
      }
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ValidationError("set", "override '" + kv + "' must look like key=value");
      values_[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
  }

  double real(const std::string& key, double fallback) {
    const auto v = take(key);
    if (!v) return record(key, fallback);
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(*v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v->size() || !std::isfinite(x))
      throw ValidationError(key, key + " must be a number, got '" + *v + "'");
    return record(key, x);
  }

  std::uint64_t integer(const std::string& key, std::uint64_t fallback) {
    const auto v = take(key);
    if (!v) return record(key, fallback);
    std::uint64_t x = 0;
    const auto [end, ec] = std::from_chars(v->data(), v->data() + v->size(), x);
    if (ec != std::errc() || end != v->data() + v->size() || v->empty())
      throw ValidationError(key, key + " must be a non-negative integer, got '" + *v + "'");
    return record(key, x);
  }

  std::string text(const std::string& key, const std::string& fallback) {
    const auto v = take(key);
    return record(key, v ? *v : fallback);
  }

  std::vector<double> reals(const std::string& key, const std::vector<double>& fallback) {
    const auto v = take(key);
    if (!v) return record(key, fallback);
    std::vector<double> out;
    std::stringstream ss(*v);
    std::string part;
    while (std::getline(ss, part, ',')) {
      std::size_t used = 0;
      double x = 0.0;
      try {
        x = std::stod(part, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != part.size())
        throw ValidationError(key, key + " must be a comma-separated list of numbers");
      out.push_back(x);
    }
    return record(key, out);
  }

  bool has(const std::string& key) const { return values_.contains(key); }

  void finish() const {
    for (const auto& [k, v] : values_)
      if (!consumed_.contains(k)) throw ValidationError(k, "unknown config key '" + k + "'");
  }

  const json& resolved() const { return resolved_; }

 private:
  std::optional<std::string> take(const std::string& key) {
    consumed_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }
  template <class T>
  T record(const std::string& key, T v) {
    resolved_[key] = v;
    return v;
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
  json resolved_ = json::object();
};

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("-c,--config", c.config, "key=value config file; [section] named after the subcommand");
  cmd->add_option("-s,--set", c.overrides, "override a config key (key=value), repeatable");
  auto* o = cmd->add_option("-o,--out", c.out_dir, "output directory");
  if (out_required) o->required();
}

json file_entry(const fs::path& p) {
  return {{"path", p.filename().string()}, {"sha256", checkpoint::file_sha256(p)}};
}

void write_manifest(const fs::path& dir, const std::string& command, const Settings& s,
                    std::uint64_t seed, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& artifacts) {
  json in = json::array(), outs = json::array();
  for (const auto& p : inputs) {
    json e = file_entry(p);
    e["path"] = p.string();
    in.push_back(e);
  }
  for (const auto& p : artifacts) outs.push_back(file_entry(p));
  const json doc = {{"command", command},
                    {"version", kVersion},
                    {"seed", seed},
                    {"config", s.resolved()},
                    {"config_sha256", checkpoint::sha256_hex(s.resolved().dump())},
                    {"inputs", in},
                    {"artifacts", outs}};
  data::write_text(dir / "manifest.json", doc.dump(2) + "\n");
}

data::Collection load_collection(const fs::path& path, const NormStats& target, std::ostream& err) {
  if (path.extension() == ".json") {
    const json doc = json::parse(data::read_text(path), nullptr, false);
    if (doc.is_discarded()) throw ParseError(1, "malformed JSON document in " + path.string());
    if (doc.is_object() && !doc.contains("series")) return {data::series_from_json(doc, target)};
    return data::collection_from_json(doc, target);
  }
  data::IngestOptions o;
  o.norm = target;
  const data::IngestResult r = data::ingest_file(path, o);
  for (const auto& w : r.warnings) err << "warning: line " << w.line << ": " << w.message << "\n";
  return r.series;
}

void emit(const json& doc, const std::string& out_dir, const std::string& name, std::ostream& out,
          std::vector<fs::path>& artifacts) {
  if (out_dir.empty()) {
    out << doc.dump(2) << "\n";
    return;
  }
  const fs::path p = fs::path(out_dir) / name;
  data::write_text(p, doc.dump(2) + "\n");
  artifacts.push_back(p);
}

// ---------------------------------------------------------------------------

int gen_data(const Common& c, std::ostream& out) {
  Settings s(c.config, "gen-data", c.overrides);
  const std::string kind = s.text("dataset", "spirals");
  const std::uint64_t seed = s.integer("seed", 0);
  const double train_fraction = s.real("train_fraction", 0.8);
  const std::string format = s.text("format", "json");
  if (format != "json" && format != "csv") throw ValidationError("format", "format must be json or csv");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("train_fraction", "train_fraction must lie in (0, 1)");

  data::Collection all, extra;
  if (kind == "spirals") {
    data::SpiralConfig g;
    g.seed = seed;
    g.n_series = s.integer("n_series", g.n_series);
    g.points_per_series = s.integer("points_per_series", g.points_per_series);
    g.grid_points = s.integer("grid_points", g.grid_points);
    g.clockwise_ratio = s.real("clockwise_ratio", g.clockwise_ratio);
    g.noise_std = s.real("noise_std", g.noise_std);
    g.turns = s.real("turns", g.turns);
    s.finish();
    try {
      all = data::gen_spirals(g);
    } catch (const ContractViolation& e) {
      throw ValidationError("dataset", e.what());
    }
  } else if (kind == "icu") {
    data::IcuGenConfig g;
    g.seed = seed;
    g.n_patients = s.integer("n_patients", g.n_patients);
    g.window_hours = s.real("window_hours", g.window_hours);
    g.observation_rate = s.reals("observation_rate", g.observation_rate);
    g.death_ratio = s.real("death_ratio", g.death_ratio);
    g.separation = s.real("separation", g.separation);
    s.finish();
    try {
      all = data::gen_icu(g);
      extra = {data::demo_patient_a(g), data::demo_patient_b(g)};
    } catch (const ContractViolation& e) {
      throw ValidationError("dataset", e.what());
    }
  } else {
    throw ValidationError("dataset", "dataset must be 'spirals' or 'icu'");
  }

  const data::Split sp = data::split(all, train_fraction, seed ^ 0x5b11u);
  const NormStats norm = data::fit_norm(sp.train);
  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  std::vector<fs::path> artifacts;
  auto write = [&](const std::string& stem, const data::Collection& raw) {
    const data::Collection n = data::normalize(raw, norm);
    const fs::path p = dir / (stem + "." + format);
    data::write_text(p, format == "json" ? data::to_json(n).dump() + "\n" : data::export_csv(n));
    artifacts.push_back(p);
  };
  write("train", sp.train);
  write("test", sp.test);
  if (!extra.empty()) write("demo_patients", extra);
  write_manifest(dir, "gen-data", s, seed, {}, artifacts);
  out << "wrote " << artifacts.size() << " files to " << dir.string() << "\n";
  return kExitOk;
}

training::TrainConfig train_config(Settings& s) {
  training::TrainConfig c;
  c.epochs = s.integer("epochs", c.epochs);
  c.batch_size = s.integer("batch_size", c.batch_size);
  c.learning_rate = s.real("learning_rate", c.learning_rate);
  c.lr_decay = s.real("lr_decay", c.lr_decay);
  c.kl_warmup_epochs = s.integer("kl_warmup_epochs", c.kl_warmup_epochs);
  c.classifier_loss_weight = s.real("classifier_loss_weight", c.classifier_loss_weight);
  c.obs_noise = s.real("obs_noise", c.obs_noise);
  c.seed = s.integer("seed", c.seed);
  c.rtol = s.real("rtol", c.rtol);
  c.atol = s.real("atol", c.atol);
  c.patience = s.integer("patience", c.patience);
  c.validation_fraction = s.real("validation_fraction", c.validation_fraction);
  c.grad_clip = s.real("grad_clip", c.grad_clip);
  const std::string path = s.text("gradient_path", "adjoint");
  if (path == "adjoint") c.gradient_path = training::GradientPath::Adjoint;
  else if (path == "direct_rk4") c.gradient_path = training::GradientPath::DirectRk4;
  else throw ValidationError("gradient_path", "gradient_path must be 'adjoint' or 'direct_rk4'");
  c.rk4_step = s.real("rk4_step", c.rk4_step);
  c.arch.latent_dim = s.integer("latent_dim", c.arch.latent_dim);
  c.arch.encoder_hidden = s.integer("encoder_hidden", c.arch.encoder_hidden);
  c.arch.dynamics_hidden = s.integer("dynamics_hidden", c.arch.dynamics_hidden);
  c.arch.decoder_hidden = s.integer("decoder_hidden", c.arch.decoder_hidden);
  c.arch.classifier_hidden = s.integer("classifier_hidden", c.arch.classifier_hidden);
  c.arch.noise_dim = s.integer("noise_dim", c.arch.noise_dim);
  return c;
}

int train(const Common& c, const std::string& data_path, std::ostream& out, std::ostream& err) {
  Settings s(c.config, "train", c.overrides);
  const training::TrainConfig cfg = train_config(s);
  s.finish();
  cfg.validate();
  const data::Collection dataset = load_collection(data_path, {}, err);
  if (dataset.empty()) throw ValidationError("data", "no series in " + data_path);
  for (const auto& x : dataset)
    if (!(x.norm == dataset[0].norm))
      throw ValidationError("data", "all series must share normalization statistics");

  const training::TrainResult r = training::train(dataset, cfg, [&](const training::EpochRecord& e) {
    err << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.validation_loss
        << " mse " << e.validation_mse << " auc " << e.validation_auc << "\n";
  });
  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  const fs::path ckpt = dir / "model.ckpt", report = dir / "train_report.jsonl";
  checkpoint::save(r.params, ckpt);
  data::write_text(report, r.report.to_jsonl(true));
  write_manifest(dir, "train", s, cfg.seed, {data_path}, {ckpt, report});
  out << "best epoch " << r.report.best_epoch << ", checkpoint " << ckpt.string() << "\n";
  return kExitOk;
}

int eval(const Common& c, const std::string& ckpt_path, const std::string& data_path,
         std::ostream& out, std::ostream& err) {
  Settings s(c.config, "eval", c.overrides);
  training::EvalOptions o;
  o.fractions = s.reals("fractions", o.fractions);
  o.threshold = s.real("threshold", o.threshold);
  s.finish();
  const model::ModelParams params = checkpoint::load(ckpt_path);
  const data::Collection test = load_collection(data_path, params.norm, err);
  json doc = training::evaluate(test, params, o).to_json();
  doc["checkpoint_sha256"] = checkpoint::file_sha256(ckpt_path);
  std::vector<fs::path> artifacts;
  if (!c.out_dir.empty()) fs::create_directories(c.out_dir);
  emit(doc, c.out_dir, "metrics.json", out, artifacts);
  if (!c.out_dir.empty()) write_manifest(c.out_dir, "eval", s, 0, {ckpt_path, data_path}, artifacts);
  return kExitOk;
}

int predict(const Common& c, const std::string& ckpt_path, const std::string& data_path,
            const std::string& series_id, std::ostream& out, std::ostream& err) {
  Settings s(c.config, "predict", c.overrides);
  engine::EnsembleOptions o;
  o.fraction = s.real("fraction", o.fraction);
  o.members = s.integer("K", o.members);
  o.horizon_mult = s.real("horizon_mult", o.horizon_mult);
  o.seed = s.integer("seed", o.seed);
  o.hop_threshold = s.real("theta_hop", o.hop_threshold);
  o.risk_threshold = s.real("threshold", o.risk_threshold);
  const std::string units_text = s.text("units", "normalized");
  if (units_text != "raw" && units_text != "normalized")
    throw ValidationError("units", "units must be 'raw' or 'normalized'");
  const bool conditioned = s.has("query_time");
  engine::HypotheticalPoint q;
  std::size_t proposals = 0;
  if (conditioned) {
    q.time = s.real("query_time", q.time);
    q.feature = s.integer("query_feature", q.feature);
    q.value = s.real("query_value", q.value);
    q.tolerance = s.real("query_tolerance", q.tolerance);
    proposals = s.integer("M", 0);
  }
  s.finish();
  o.validate();

  const model::ModelParams params = checkpoint::load(ckpt_path);
  const data::Collection all = load_collection(data_path, params.norm, err);
  if (all.empty()) throw ValidationError("data", "no series in " + data_path);
  const IrregularSeries* target = &all.front();
  if (!series_id.empty()) {
    target = nullptr;
    for (const auto& x : all)
      if (x.id == series_id) target = &x;
    if (!target) throw ValidationError("series", "no series with id '" + series_id + "'");
  }
  const auto units = units_text == "raw" ? engine::Units::Raw : engine::Units::Normalized;
  const engine::TrajectoryEnsemble e = conditioned
                                           ? engine::condition_on_point(*target, params, q, o, proposals)
                                           : engine::sample_ensemble(*target, params, o);
  json doc = engine::to_json(e, params, units);
  doc["series_id"] = target->id;
  std::vector<fs::path> artifacts;
  if (!c.out_dir.empty()) fs::create_directories(c.out_dir);
  emit(doc, c.out_dir, "ensemble.json", out, artifacts);
  if (!c.out_dir.empty())
    write_manifest(c.out_dir, "predict", s, o.seed, {ckpt_path, data_path}, artifacts);
  return kExitOk;
}

std::atomic<bool> g_stop{false};

int serve(const Common& c, const std::string& ckpt_path, const std::string& host, int port,
          std::ostream& out) {
  Settings s(c.config, "serve", c.overrides);
  service::ServiceConfig cfg;
  cfg.host = host;
  cfg.port = port;
  cfg.default_members = s.integer("K", cfg.default_members);
  cfg.default_horizon = s.real("horizon_mult", cfg.default_horizon);
  cfg.hop_threshold = s.real("theta_hop", cfg.hop_threshold);
  cfg.risk_threshold = s.real("threshold", cfg.risk_threshold);
  cfg.max_members = s.integer("max_members", cfg.max_members);
  cfg.max_proposals = s.integer("max_proposals", cfg.max_proposals);
  cfg.threads = s.integer("threads", cfg.threads);
  s.finish();

  service::Service svc(checkpoint::load(ckpt_path), checkpoint::file_sha256(ckpt_path), cfg);
  service::HttpServer server(svc);
  const int bound = server.bind(cfg.host, cfg.port);
  out << "listening on http://" << cfg.host << ":" << bound << std::endl;
  g_stop = false;
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  std::thread watcher([&] {
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  });
  server.listen();
  g_stop = true;
  watcher.join();
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent ODE trajectory engine", "lode"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common common;
  std::string data_path, ckpt_path, series_id, host = "127.0.0.1";
  int port = 8080;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset (spirals or icu)");
  add_common(gen, common, true);

  auto* tr = app.add_subcommand("train", "fit a model and write a checkpoint");
  add_common(tr, common, true);
  tr->add_option("-d,--data", data_path, "training collection (.json or .csv)")->required();

  auto* ev = app.add_subcommand("eval", "reconstruction and outcome metrics per fraction");
  add_common(ev, common, false);
  ev->add_option("-m,--checkpoint", ckpt_path, "model checkpoint")->required();
  ev->add_option("-d,--data", data_path, "held-out collection")->required();

  auto* pr = app.add_subcommand("predict", "trajectory ensemble for one series");
  add_common(pr, common, false);
  pr->add_option("-m,--checkpoint", ckpt_path, "model checkpoint")->required();
  pr->add_option("-d,--data", data_path, "series or collection document")->required();
  pr->add_option("--series", series_id, "series id (default: first)");

  auto* sv = app.add_subcommand("serve", "HTTP API");
  add_common(sv, common, false);
  sv->add_option("-m,--checkpoint", ckpt_path, "model checkpoint")->required()->envname("LODE_CHECKPOINT");
  sv->add_option("--host", host, "bind address")->envname("LODE_HOST");
  sv->add_option("-p,--port", port, "port (0 picks a free one)")->envname("LODE_PORT");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (*gen) return gen_data(common, out);
    if (*tr) return train(common, data_path, out, err);
    if (*ev) return eval(common, ckpt_path, data_path, out, err);
    if (*pr) return predict(common, ckpt_path, data_path, series_id, out, err);
    if (*sv) return serve(common, ckpt_path, host, port, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.field() << ": " << e.what() << "\n";
    return kExitValidation;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace lode::cli
