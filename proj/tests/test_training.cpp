#include <cmath>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "lode/checkpoint.hpp"
#include "lode/error.hpp"
#include "lode/training.hpp"

using namespace lode;
using namespace lode::training;
using model::Param;

namespace {

data::Collection spirals(std::size_t n, std::uint64_t seed) {
  data::SpiralConfig c;
  c.n_series = n;
  c.points_per_series = 12;
  c.seed = seed;
  const auto raw = data::gen_spirals(c);
  return data::normalize(raw, data::fit_norm(raw));
}

model::Architecture small_arch() {
  model::Architecture a;
  a.feature_count = 2;
  a.latent_dim = 4;
  a.encoder_hidden = 8;
  a.dynamics_hidden = 12;
  a.decoder_hidden = 8;
  a.classifier_hidden = 6;
  return a;
}

double norm(const std::vector<std::vector<double>>& g) {
  double s = 0;
  for (const auto& v : g)
    for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("elbo: KL vanishes when the posterior equals the prior") {
  const auto data = spirals(2, 1);
  model::Architecture a = small_arch();
  const auto p = model::ModelParams::initialize(a, 3, 0.3);
  const model::LatentPosterior prior{std::vector<double>(4, 0.0), std::vector<double>(4, 1.0)};
  const ElboParts parts = elbo_with_posterior(data[0], p, prior, ElboOptions{});
  CHECK(parts.kl == 0.0);
}

TEST_CASE("elbo: zero KL weight and no label leaves the reconstruction term") {
  auto data = spirals(2, 2);
  data[0].label.reset();
  const auto p = model::ModelParams::initialize(small_arch(), 4, 0.3);
  ElboOptions o;
  o.kl_weight = 0.0;
  const ElboParts parts = elbo(data[0], p, o);
  CHECK(parts.kl > 0.0);
  CHECK(parts.class_loss == 0.0);
  CHECK(parts.loss == parts.recon_nll);
  CHECK(parts.observed == 24);
  // Gaussian NLL: 0.5 Σ r²/σ² + n (log σ + 0.5 log 2π).
  const double expected = 0.5 * parts.squared_error / (0.3 * 0.3) +
                          24 * (std::log(0.3) + 0.5 * std::log(2 * M_PI));
  CHECK(parts.recon_nll == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("elbo: finite loss and gradients at initialization, value path matches gradient path") {
  const auto data = spirals(3, 5);
  model::Architecture a;
  a.feature_count = 2;
  const auto p = model::ModelParams::initialize(a, 6, 0.3);
  for (const auto& s : data) {
    for (double f : {0.4, 1.0}) {
      ElboOptions o;
      o.fraction = f;
      o.seed = 11;
      const ElboGradient g = elbo_gradient(s, p, o);
      CHECK(std::isfinite(g.parts.loss));
      REQUIRE(g.grads.size() == model::kParamCount);
      for (std::size_t i = 0; i < model::kParamCount; ++i) {
        CHECK(g.grads[i].size() == p.weights[i].size());
        for (double x : g.grads[i]) REQUIRE(std::isfinite(x));
      }
      CHECK(elbo(s, p, o).loss == g.parts.loss);
    }
  }
}

TEST_CASE("elbo gradient agrees with finite differences") {
  const auto data = spirals(1, 7);
  auto p = model::ModelParams::initialize(small_arch(), 8, 0.3);
  ElboOptions o;
  o.fraction = 0.6;
  o.seed = 3;
  o.kl_weight = 0.7;
  o.tolerances.rtol = 1e-11;
  o.tolerances.atol = 1e-11;
  const ElboGradient g = elbo_gradient(data[0], p, o);
  for (Param which : {Param::EncWh, Param::PostB, Param::DynW1, Param::DynB3, Param::DecW2,
                      Param::ClsW1, Param::ClsB2}) {
    const std::size_t n = p[which].size();
    for (std::size_t j : {std::size_t{0}, n / 2, n - 1}) {
      auto f = [&](const std::vector<double>& w) {
        auto q = p;
        q[which] = ad::Tensor(p[which].shape(), w);
        return elbo(data[0], q, o).loss;
      };
      const double fd = lode::testing::central_difference(f, p[which].to_vector(), j, 1e-5);
      const double an = g.grads[model::index(which)][j];
      CHECK_MESSAGE(lode::testing::gradient_close(an, fd, 1e-4, 1e-6),
                    "param ", int(which), "[", j, "] adjoint ", an, " fd ", fd);
    }
  }
}

TEST_CASE("gradient-path equivalence: adjoint vs direct RK4 on a fixed batch") {
  const auto data = spirals(3, 9);
  model::Architecture a;
  a.feature_count = 2;
  const auto p = model::ModelParams::initialize(a, 10, 0.3);
  std::vector<std::vector<double>> ga, gd;
  for (std::size_t n = 0; n < data.size(); ++n) {
    ElboOptions o;
    o.fraction = 0.2 * static_cast<double>(2 + n);
    o.seed = 100 + n;
    o.kl_weight = 0.5;
    o.tolerances.rtol = 1e-10;
    o.tolerances.atol = 1e-10;
    const ElboGradient adj = elbo_gradient(data[n], p, o);
    o.gradient_path = GradientPath::DirectRk4;
    o.rk4_step = 2e-3;
    const ElboGradient dir = elbo_gradient(data[n], p, o);
    CHECK(adj.parts.loss == doctest::Approx(dir.parts.loss).epsilon(1e-8));
    if (ga.empty()) {
      ga = adj.grads;
      gd = dir.grads;
    } else {
      for (std::size_t i = 0; i < ga.size(); ++i)
        for (std::size_t j = 0; j < ga[i].size(); ++j) {
          ga[i][j] += adj.grads[i][j];
          gd[i][j] += dir.grads[i][j];
        }
    }
  }
  std::vector<std::vector<double>> diff = ga;
  for (std::size_t i = 0; i < ga.size(); ++i) {
    for (std::size_t j = 0; j < ga[i].size(); ++j) diff[i][j] -= gd[i][j];
    const double ref = norm({gd[i]});
    if (ref > 1e-8) CHECK_MESSAGE(norm({diff[i]}) / ref <= 1e-3, "param group ", i);
  }
  CHECK(norm(diff) / norm(gd) <= 1e-3);
}

TEST_CASE("kl weight schedule") {
  TrainConfig c;
  c.kl_warmup_epochs = 4;
  CHECK(kl_weight(c, 0) == 0.0);
  CHECK(kl_weight(c, 1) == 0.25);
  CHECK(kl_weight(c, 3) == 0.75);
  CHECK(kl_weight(c, 4) == 1.0);
  CHECK(kl_weight(c, 40) == 1.0);
  c.kl_warmup_epochs = 0;
  CHECK(kl_weight(c, 0) == 1.0);
}

TEST_CASE("train: zero learning rate leaves parameters bit-identical") {
  const auto data = spirals(8, 12);
  TrainConfig c;
  c.arch = small_arch();
  c.epochs = 2;
  c.batch_size = 4;
  c.learning_rate = 0.0;
  auto arch = c.arch;
  const auto init = model::ModelParams::initialize(arch, 77, 0.3);
  const TrainResult r = train_from(data, c, init);
  for (std::size_t i = 0; i < model::kParamCount; ++i)
    CHECK(r.params.weights[i].to_vector() == init.weights[i].to_vector());
  CHECK(r.params.norm == data[0].norm);
}

TEST_CASE("train: seeded determinism and reported schedule") {
  const auto data = spirals(10, 13);
  TrainConfig c;
  c.arch = small_arch();
  c.epochs = 3;
  c.batch_size = 4;
  c.kl_warmup_epochs = 2;
  c.seed = 5;
  const TrainResult a = train(data, c), b = train(data, c);
  CHECK(a.report.to_jsonl(false) == b.report.to_jsonl(false));
  CHECK(checkpoint::serialize(a.params) == checkpoint::serialize(b.params));
  REQUIRE(a.report.epochs.size() == 3);
  for (const auto& e : a.report.epochs) CHECK(e.kl_weight == kl_weight(c, e.epoch));
  c.seed = 6;
  const TrainResult d = train(data, c);
  CHECK(checkpoint::serialize(a.params) != checkpoint::serialize(d.params));
}

TEST_CASE("train: two epochs on eight spirals improve validation ELBO for most seeds") {
  const auto data = spirals(8, 14);
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig c;
    c.epochs = 2;
    c.batch_size = 2;
    c.learning_rate = 1e-2;
    c.seed = seed;
    const TrainResult r = train(data, c);
    REQUIRE(r.report.epochs.size() == 2);
    if (r.report.epochs[1].validation_loss <= r.report.epochs[0].validation_loss) ++improved;
  }
  CHECK(improved >= 4);
}

TEST_CASE("train: solver blow-up in every batch raises training instability") {
  const auto data = spirals(6, 15);
  TrainConfig c;
  c.arch = small_arch();
  c.epochs = 1;
  c.batch_size = 2;
  auto arch = c.arch;
  auto init = model::ModelParams::initialize(arch, 1, 0.3);
  init[Param::DynW3] = ad::Tensor(init[Param::DynW3].shape(),
                                  std::vector<double>(init[Param::DynW3].size(), 1e307));
  CHECK_THROWS_AS(train_from(data, c, init), TrainingInstabilityError);
}

TEST_CASE("train config validation and report format") {
  TrainConfig c;
  c.obs_noise = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.validation_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  TrainReport r;
  r.epochs.push_back(EpochRecord{.epoch = 0, .wall_seconds = 1.5});
  const std::string with = r.to_jsonl(true), without = r.to_jsonl(false);
  CHECK(with.find("wall_seconds") != std::string::npos);
  CHECK(without.find("wall_seconds") == std::string::npos);
  CHECK(std::count(with.begin(), with.end(), '\n') == 2);
}
