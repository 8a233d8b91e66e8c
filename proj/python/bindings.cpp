// Python bindings. Documents cross the boundary as JSON text; the `lode`
// package decodes them into dicts.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "json.hpp"
#include "lode/checkpoint.hpp"
#include "lode/data.hpp"
#include "lode/error.hpp"
#include "lode/odeint.hpp"
#include "lode/training.hpp"
#include "lode/trajectory.hpp"
#include "lode/version.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace lode;

namespace {

data::Collection collection(const std::string& text, const NormStats& target = {}) {
  const json doc = json::parse(text);
  if (doc.is_object() && !doc.contains("series")) return {data::series_from_json(doc, target)};
  return data::collection_from_json(doc, target);
}

IrregularSeries one_series(const std::string& text, const NormStats& target) {
  data::Collection c = collection(text, target);
  if (c.size() != 1) throw ValidationError("series", "expected exactly one series");
  return std::move(c.front());
}

engine::Units units_of(const std::string& u) {
  if (u == "raw") return engine::Units::Raw;
  if (u == "normalized") return engine::Units::Normalized;
  throw ValidationError("units", "units must be 'raw' or 'normalized'");
}

py::dict arch_dict(const model::Architecture& a) {
  py::dict d;
  d["feature_count"] = a.feature_count;
  d["latent_dim"] = a.latent_dim;
  d["encoder_hidden"] = a.encoder_hidden;
  d["dynamics_hidden"] = a.dynamics_hidden;
  d["decoder_hidden"] = a.decoder_hidden;
  d["classifier_hidden"] = a.classifier_hidden;
  d["noise_dim"] = a.noise_dim;
  return d;
}

}  // namespace

PYBIND11_MODULE(_lode, m) {
  m.doc() = "Latent ODE core";
  m.attr("__version__") = kVersion;

  auto& base = py::register_exception<Error>(m, "LodeError");
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<QueryInfeasibleError>(m, "QueryInfeasibleError", base.ptr());
  py::register_exception<EnsembleDegenerateError>(m, "EnsembleDegenerateError", base.ptr());
  py::register_exception<EmptyWindowError>(m, "EmptyWindowError", base.ptr());
  // Prefix validation messages with the offending field; malformed JSON maps
  // to ValidationError too.
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValidationError& e) {
      const py::object cls = py::module_::import("lode._lode").attr("ValidationError");
      py::set_error(cls, (e.field() + ": " + e.what()).c_str());
    } catch (const json::exception& e) {
      const py::object cls = py::module_::import("lode._lode").attr("ValidationError");
      py::set_error(cls, e.what());
    }
  });

  py::class_<model::ModelParams>(m, "Model")
      .def_static("load", [](const std::filesystem::path& p) { return checkpoint::load(p); })
      .def_static("from_bytes",
                  [](const py::bytes& b) {
                    const std::string s = b;
                    return checkpoint::deserialize({s.begin(), s.end()});
                  })
      .def_static(
          "initialize",
          [](std::size_t features, std::size_t latent_dim, std::size_t hidden, std::uint64_t seed,
             double obs_noise) {
            model::Architecture a;
            a.feature_count = features;
            a.latent_dim = latent_dim;
            a.encoder_hidden = hidden;
            a.dynamics_hidden = hidden;
            a.decoder_hidden = hidden;
            a.classifier_hidden = hidden;
            return model::ModelParams::initialize(a, seed, obs_noise);
          },
          py::arg("features"), py::arg("latent_dim") = 16, py::arg("hidden") = 32, py::arg("seed") = 0,
          py::arg("obs_noise") = 0.3)
      .def("save", [](const model::ModelParams& p, const std::filesystem::path& path) { checkpoint::save(p, path); })
      .def("to_bytes",
           [](const model::ModelParams& p) {
             const auto b = checkpoint::serialize(p);
             return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
           })
      .def("sha256", [](const model::ModelParams& p) { return checkpoint::sha256_hex(checkpoint::serialize(p)); })
      .def_property_readonly("arch", [](const model::ModelParams& p) { return arch_dict(p.arch); })
      .def_readonly("feature_names", &model::ModelParams::feature_names)
      .def_readonly("obs_noise", &model::ModelParams::obs_noise)
      .def_readonly("window", &model::ModelParams::window)
      .def_property_readonly("norm_mean", [](const model::ModelParams& p) { return p.norm.mean; })
      .def_property_readonly("norm_std", [](const model::ModelParams& p) { return p.norm.std; })
      .def_property_readonly("parameter_count", &model::ModelParams::parameter_count);

  m.def("file_sha256", [](const std::filesystem::path& p) { return checkpoint::file_sha256(p); });

  // Data
  m.def(
      "gen_spirals",
      [](std::size_t n, std::size_t points, double noise, double cw_ratio, std::uint64_t seed, bool norm) {
        data::SpiralConfig c;
        c.n_series = n;
        c.points_per_series = points;
        c.noise_std = noise;
        c.clockwise_ratio = cw_ratio;
        c.seed = seed;
        data::Collection d = data::gen_spirals(c);
        if (norm) d = data::normalize(d, data::fit_norm(d));
        return data::to_json(d).dump();
      },
      py::arg("n_series") = 100, py::arg("points_per_series") = 30, py::arg("noise_std") = 0.03,
      py::arg("clockwise_ratio") = 0.5, py::arg("seed") = 0, py::arg("normalize") = true);
  m.def(
      "gen_icu",
      [](std::size_t n, double death_ratio, double separation, std::uint64_t seed, bool norm) {
        data::IcuGenConfig c;
        c.n_patients = n;
        c.death_ratio = death_ratio;
        c.separation = separation;
        c.seed = seed;
        data::Collection d = data::gen_icu(c);
        if (norm) d = data::normalize(d, data::fit_norm(d));
        return data::to_json(d).dump();
      },
      py::arg("n_patients") = 1000, py::arg("death_ratio") = 0.25, py::arg("separation") = 2.5,
      py::arg("seed") = 0, py::arg("normalize") = true);
  m.def("ingest_csv", [](const std::string& text, double window) {
    data::IngestOptions o;
    o.window = window;
    return data::to_json(data::ingest_csv(text, o).series).dump();
  }, py::arg("text"), py::arg("window") = 1.0);

  // Solver
  m.def(
      "dopri5",
      [](const std::function<std::vector<double>(double, std::vector<double>)>& f, std::vector<double> y0,
         double t0, std::vector<double> times, double rtol, double atol) {
        ode::OdeProblem p;
        p.dynamics = [&](double t, std::span<const double> y, std::span<double> dy) {
          const auto out = f(t, {y.begin(), y.end()});
          if (out.size() != dy.size()) throw ContractViolation("dynamics returned the wrong size");
          std::copy(out.begin(), out.end(), dy.begin());
        };
        p.y0 = std::move(y0);
        p.t_start = t0;
        p.t_end = times.empty() ? t0 : times.back();
        p.eval_times = std::move(times);
        return ode::dopri5_integrate(p, ode::Tolerances{rtol, atol}).states;
      },
      py::arg("f"), py::arg("y0"), py::arg("t0"), py::arg("times"), py::arg("rtol") = 1e-7,
      py::arg("atol") = 1e-9);

  // Model operations
  m.def("encode", [](const model::ModelParams& p, const std::string& series, double fraction) {
    const auto post = model::encode(one_series(series, p.norm), p, fraction);
    return std::make_pair(post.mean, post.std);
  }, py::arg("model"), py::arg("series"), py::arg("fraction") = 1.0);
  m.def(
      "evolve",
      [](const model::ModelParams& p, std::vector<double> z0, std::vector<double> times,
         std::vector<double> noise) {
        if (noise.empty()) noise.assign(p.arch.noise_dim, 0.0);
        return model::evolve(z0, noise, times, p).states;
      },
      py::arg("model"), py::arg("z0"), py::arg("times"), py::arg("noise") = std::vector<double>{});
  m.def("decode", [](const model::ModelParams& p, std::vector<double> z) { return model::decode_latent(z, p); });
  m.def(
      "reconstruct_past",
      [](const model::ModelParams& p, std::vector<double> z, double from_time, std::vector<double> to_times,
         std::vector<double> noise) { return engine::reconstruct_past(z, from_time, to_times, p, noise).states; },
      py::arg("model"), py::arg("z_at"), py::arg("from_time"), py::arg("to_times"),
      py::arg("noise") = std::vector<double>{});

  // Training and evaluation
  m.def(
      "train",
      [](const std::string& dataset, const std::string& config) {
        const training::TrainConfig c = training::train_config_from_json(json::parse(config));
        const data::Collection d = collection(dataset);
        training::TrainResult r;
        {
          py::gil_scoped_release release;
          r = training::train(d, c);
        }
        return std::make_pair(r.params, r.report.to_jsonl(false));
      },
      py::arg("dataset"), py::arg("config") = "{}");
  m.def(
      "evaluate",
      [](const model::ModelParams& p, const std::string& dataset, std::vector<double> fractions) {
        training::EvalOptions o;
        if (!fractions.empty()) o.fractions = fractions;
        return training::evaluate(collection(dataset, p.norm), p, o).to_json().dump();
      },
      py::arg("model"), py::arg("dataset"), py::arg("fractions") = std::vector<double>{});

  // Trajectory engine
  m.def(
      "sample_ensemble",
      [](const model::ModelParams& p, const std::string& series, double fraction, std::size_t K,
         double horizon_mult, std::uint64_t seed, const std::string& units) {
        engine::EnsembleOptions o;
        o.fraction = fraction;
        o.members = K;
        o.horizon_mult = horizon_mult;
        o.seed = seed;
        const IrregularSeries s = one_series(series, p.norm);
        return engine::to_json(engine::sample_ensemble(s, p, o), p, units_of(units)).dump();
      },
      py::arg("model"), py::arg("series"), py::arg("fraction") = 1.0, py::arg("K") = 30,
      py::arg("horizon_mult") = 1.5, py::arg("seed") = 0, py::arg("units") = "normalized");
  m.def(
      "condition_on_point",
      [](const model::ModelParams& p, const std::string& series, double time, std::size_t feature, double value,
         double tolerance, double fraction, std::size_t K, std::size_t M, double horizon_mult,
         std::uint64_t seed, const std::string& units) {
        engine::EnsembleOptions o;
        o.fraction = fraction;
        o.members = K;
        o.horizon_mult = horizon_mult;
        o.seed = seed;
        const engine::HypotheticalPoint q{time, feature, value, tolerance};
        const IrregularSeries s = one_series(series, p.norm);
        return engine::to_json(engine::condition_on_point(s, p, q, o, M), p, units_of(units)).dump();
      },
      py::arg("model"), py::arg("series"), py::arg("time"), py::arg("feature"), py::arg("value"),
      py::arg("tolerance"), py::arg("fraction") = 1.0, py::arg("K") = 30, py::arg("M") = 0,
      py::arg("horizon_mult") = 1.5, py::arg("seed") = 0, py::arg("units") = "normalized");
  m.def(
      "risk_curve",
      [](const model::ModelParams& p, const std::string& series, std::vector<double> fractions, double threshold) {
        const auto r = engine::risk_curve(one_series(series, p.norm), p, fractions, threshold);
        std::vector<std::pair<double, double>> pts;
        for (const auto& x : r.points) pts.emplace_back(x.duration, x.probability);
        return std::make_pair(pts, r.crossing);
      },
      py::arg("model"), py::arg("series"),
      py::arg("fractions") = std::vector<double>{0.2, 0.4, 0.6, 0.8, 1.0}, py::arg("threshold") = 0.5);
}
