#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "batvision/config.hpp"
#include "batvision/metrics.hpp"
#include "oracles.hpp"

using namespace bv;

namespace {

std::array<double, 7> values(const DepthMetrics& m) {
  return {m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3};
}

struct Instance {
  Tensor pred;
  Tensor gt;
  std::vector<std::uint8_t> mask;
};

Instance random_instance(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> depth(0.2, 10.0);
  std::normal_distribution<double> log_err(0.0, 0.35);
  std::bernoulli_distribution keep(0.8);
  Instance in{Tensor(shape), Tensor(shape), std::vector<std::uint8_t>(static_cast<std::size_t>(shape_numel(shape)))};
  for (std::size_t i = 0; i < in.gt.size(); ++i) {
    in.gt[i] = depth(rng);
    in.pred[i] = in.gt[i] * std::exp(log_err(rng));
    in.mask[i] = keep(rng);
  }
  in.mask[0] = 1;
  return in;
}

ModelEvaluation evaluate_constant(const Dataset& data, double value) {
  return evaluate_predictor(data, Split::test, BatchOptions{}, 4, [&](const Tensor& inputs) {
    return Tensor({inputs.dim(0), 1, 32, 32}, value);
  });
}

// Trimmed '|'-separated cells of line `line` (0-based).
std::vector<std::string> cells(const std::string& text, int line) {
  std::istringstream in(text);
  std::string row;
  for (int i = 0; i <= line; ++i) std::getline(in, row);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t bar = row.find('|', start);
    std::string cell = row.substr(start, bar == std::string::npos ? std::string::npos : bar - start);
    cell.erase(0, cell.find_first_not_of(' ') == std::string::npos ? cell.size() : cell.find_first_not_of(' '));
    while (!cell.empty() && cell.back() == ' ') cell.pop_back();
    out.push_back(cell);
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  return out;
}

Dataset small_dataset(std::size_t n) {
  SamplerConfig cfg;
  cfg.image_size = 32;
  return Dataset::from_samples(generate_dataset(n, cfg, 5), ChirpParams{}, std::vector<Split>(n, Split::test));
}

}  // namespace

TEST_CASE("identical maps") {
  std::mt19937_64 rng(1);
  Instance in = random_instance(rng, {2, 1, 16, 16});
  const MetricReport r = evaluate_depth(in.gt, in.gt, in.mask);
  CHECK(r.abs_rel == 0.0);
  CHECK(r.sq_rel == 0.0);
  CHECK(r.rmse == 0.0);
  CHECK(r.rmse_log == 0.0);
  CHECK(r.delta1 == 1.0);
  CHECK(r.delta2 == 1.0);
  CHECK(r.delta3 == 1.0);
}

TEST_CASE("closed form: gt 1, pred 2") {
  const MetricReport r = evaluate_depth(Tensor({1, 16, 16}, 2.0), Tensor({1, 16, 16}, 1.0),
                                        std::vector<std::uint8_t>(256, 1));
  CHECK(r.abs_rel == 1.0);
  CHECK(r.sq_rel == 1.0);
  CHECK(r.rmse == 1.0);
  CHECK(r.rmse_log == std::log(2.0));
  CHECK(r.delta1 == 0.0);
  CHECK(r.delta2 == 0.0);
  CHECK(r.delta3 == 0.0);
  CHECK(r.n_pixels == 256);
}

TEST_CASE("matches the pixel-loop oracle on random maps") {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Instance in = random_instance(rng, {1, 16, 16});
    const auto expected = oracle::depth_metrics(in.pred.to_vector(), in.gt.to_vector(), in.mask);
    const auto got = values(evaluate_depth(in.pred, in.gt, in.mask));
    for (int k = 0; k < 7; ++k) worst = std::max(worst, std::abs(got[k] - expected[k]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("pooling over samples and per-sample breakdown") {
  std::mt19937_64 rng(3);
  Instance in = random_instance(rng, {3, 1, 8, 8});
  const MetricReport r = evaluate_depth(in.pred, in.gt, in.mask);
  const auto pooled = oracle::depth_metrics(in.pred.to_vector(), in.gt.to_vector(), in.mask);
  REQUIRE(r.per_sample.size() == 3);
  std::int64_t total = 0;
  for (int s = 0; s < 3; ++s) {
    const std::vector<double> p(in.pred.sample(s), in.pred.sample(s) + 64);
    const std::vector<double> g(in.gt.sample(s), in.gt.sample(s) + 64);
    const std::vector<std::uint8_t> m(in.mask.begin() + s * 64, in.mask.begin() + (s + 1) * 64);
    const auto expected = oracle::depth_metrics(p, g, m);
    const auto got = values(r.per_sample[s]);
    for (int k = 0; k < 7; ++k) CHECK(got[k] == doctest::Approx(expected[k]).epsilon(1e-12));
    total += r.per_sample[s].n_pixels;
  }
  CHECK(total == r.n_pixels);
  const auto got = values(r);
  for (int k = 0; k < 7; ++k) CHECK(got[k] == doctest::Approx(pooled[k]).epsilon(1e-12));
}

TEST_CASE("delta thresholds are strict") {
  const MetricReport r = evaluate_depth(Tensor({1, 2}, 1.25), Tensor({1, 2}, 1.0), {1, 1});
  CHECK(r.delta1 == 0.0);
  CHECK(r.delta2 == 1.0);
}

TEST_CASE("scale consistency") {
  std::mt19937_64 rng(4);
  Instance in = random_instance(rng, {2, 1, 16, 16});
  const double alpha = 3.7;
  Tensor ps = in.pred, gs = in.gt;
  for (double& v : ps.storage()) v *= alpha;
  for (double& v : gs.storage()) v *= alpha;
  const MetricReport a = evaluate_depth(in.pred, in.gt, in.mask);
  const MetricReport b = evaluate_depth(ps, gs, in.mask);
  CHECK(b.abs_rel == doctest::Approx(a.abs_rel).epsilon(1e-12));
  CHECK(b.rmse_log == doctest::Approx(a.rmse_log).epsilon(1e-9));
  CHECK(b.rmse == doctest::Approx(alpha * a.rmse).epsilon(1e-12));
  CHECK(b.sq_rel == doctest::Approx(alpha * a.sq_rel).epsilon(1e-12));
  CHECK(b.delta1 == a.delta1);
  CHECK(b.delta2 == a.delta2);
  CHECK(b.delta3 == a.delta3);
}

TEST_CASE("swapping predictions and ground truth keeps the accuracies") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Instance in = random_instance(rng, {1, 16, 16});
    const MetricReport a = evaluate_depth(in.pred, in.gt, in.mask);
    const MetricReport b = evaluate_depth(in.gt, in.pred, in.mask);
    CHECK(a.delta1 == b.delta1);
    CHECK(a.delta2 == b.delta2);
    CHECK(a.delta3 == b.delta3);
  }
}

TEST_CASE("moving one prediction away from the truth never lowers the errors") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    Instance in = random_instance(rng, {1, 16, 16});
    std::uniform_int_distribution<std::size_t> pick(0, 255);
    std::size_t i = pick(rng);
    in.mask[i] = 1;
    const MetricReport before = evaluate_depth(in.pred, in.gt, in.mask);
    Tensor worse = in.pred;
    worse[i] = in.pred[i] >= in.gt[i] ? in.pred[i] * 1.3 : in.pred[i] / 1.3;
    const MetricReport after = evaluate_depth(worse, in.gt, in.mask);
    CHECK(after.abs_rel >= before.abs_rel);
    CHECK(after.sq_rel >= before.sq_rel);
    CHECK(after.rmse >= before.rmse);
    CHECK(after.rmse_log >= before.rmse_log);
  }
}

TEST_CASE("invariants of the accuracies") {
  std::mt19937_64 rng(7);
  Instance in = random_instance(rng, {4, 1, 16, 16});
  const MetricReport r = evaluate_depth(in.pred, in.gt, in.mask);
  CHECK(0.0 <= r.delta1);
  CHECK(r.delta1 <= r.delta2);
  CHECK(r.delta2 <= r.delta3);
  CHECK(r.delta3 <= 1.0);
  CHECK(r.n_pixels > 0);
}

TEST_CASE("errors") {
  const Tensor one({1, 4}, 1.0);
  CHECK_THROWS_AS(evaluate_depth(one, one, {0, 0, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_depth(one, Tensor({1, 2, 2}, 1.0), {1, 1, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_depth(one, one, {1, 1}), std::invalid_argument);
  Tensor bad = one;
  bad[2] = 0.0;
  CHECK_THROWS_WITH_AS(evaluate_depth(bad, one, {1, 1, 1, 1}), doctest::Contains("pixel 2"), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_depth(one, bad, {1, 1, 1, 1}), std::invalid_argument);
  bad[2] = -1.0;
  CHECK_NOTHROW(evaluate_depth(bad, one, {1, 1, 0, 1}));
}

TEST_CASE("constant predictor end to end") {
  const Dataset data = small_dataset(6);
  const ModelEvaluation e = evaluate_constant(data, 0.5);
  REQUIRE(e.depth_m.has_value());
  REQUIRE(e.sample_ids.size() == 6);

  Tensor gt({6, 1, 32, 32});
  std::vector<std::uint8_t> mask;
  double l1 = 0.0;
  std::int64_t n = 0;
  for (std::size_t s = 0; s < 6; ++s) {
    const SceneSample& sample = data.samples()[s];
    for (std::size_t k = 0; k < 1024; ++k) {
      gt[s * 1024 + k] = sample.valid_mask[k] ? sample.depth[k] : 10.0;
      mask.push_back(sample.valid_mask[k]);
      if (sample.valid_mask[k]) {
        l1 += std::abs(0.5 - sample.depth[k] / kMaxDepth);
        ++n;
      }
    }
    CHECK(e.sample_ids[s] == data.manifest().entries[s].id);
  }
  const auto expected = values(evaluate_depth(Tensor(gt.shape(), 5.0), gt, mask));
  const auto got = values(*e.depth_m);
  for (int k = 0; k < 7; ++k) CHECK(got[k] == doctest::Approx(expected[k]).epsilon(1e-12));
  CHECK(e.depth_m->n_pixels == n);
  CHECK(e.l1 == doctest::Approx(l1 / static_cast<double>(n)).epsilon(1e-12));
  CHECK(e.depth_normalized->abs_rel == doctest::Approx(e.depth_m->abs_rel).epsilon(1e-12));
  CHECK(e.depth_normalized->rmse == doctest::Approx(e.depth_m->rmse / kMaxDepth).epsilon(1e-12));
}

TEST_CASE("predictions are floored at one millimeter") {
  const Dataset data = small_dataset(2);
  const ModelEvaluation zero = evaluate_constant(data, 0.0);
  const ModelEvaluation floor = evaluate_constant(data, kMinPredictedDepth / kMaxDepth);
  CHECK(zero.depth_m->abs_rel == floor.depth_m->abs_rel);
  CHECK(zero.depth_m->rmse_log == floor.depth_m->rmse_log);
}

TEST_CASE("model evaluation is deterministic and serializes") {
  RunConfig cfg = parse_run_config(R"(
simulator: {image_size: 32}
model:
  encoder: {channels: [4, 4, 4, 4], latent_dim: 16}
  generator: {n_rrdb: 1, base_channels: 4, growth_channels: 2, dense_layers: 2}
  discriminator: {base_channels: 4}
)");
  const Dataset data = small_dataset(5);
  BatVisionModel model(cfg.model(), 9);
  const ModelEvaluation a = evaluate_model(model, data, Split::test, cfg.batch_options(false), 2);
  const ModelEvaluation b = evaluate_model(model, data, Split::test, cfg.batch_options(false), 3);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(to_json(a)["depth_m"]["per_sample"].size() == 5);
  CHECK_THROWS_AS(evaluate_model(model, data, Split::train, cfg.batch_options(false), 2), std::invalid_argument);
}

TEST_CASE("report tables") {
  const Dataset data = small_dataset(3);
  std::vector<EvaluatedModel> models{{"a", Encoding::gcc, true, evaluate_constant(data, 0.5)},
                                     {"b", Encoding::gcc, false, evaluate_constant(data, 0.4)},
                                     {"c", Encoding::waveform, false, evaluate_constant(data, 0.3)}};
  const std::string t1 = depth_table(models);
  const std::vector<std::string> columns{"",        "Abs Rel",  "Sq Rel",  "RMSE",
                                         "RMSE Log", "δ<1.25¹", "δ<1.25²", "δ<1.25³"};
  CHECK(cells(t1, 1) == columns);
  CHECK(cells(t1, 2).size() == 8);
  CHECK(t1.find("Ours + GCC (Gen. Only)") != std::string::npos);
  CHECK(t1.find("Ours + Waveforms") != std::string::npos);

  const std::string t2 = l1_table(models);
  CHECK(cells(t2, 1) == std::vector<std::string>{"Arch. + Input", "L1 Loss"});
  CHECK(cells(t2, 2) == std::vector<std::string>{"Depth Map", "Gen. Only", "GAN"});
  CHECK(cells(t2, 5) == std::vector<std::string>{"Grayscale", "GAN"});
  const std::size_t wave = t2.find("Ours + Waveforms");
  const std::size_t gcc = t2.find("Ours + GCC");
  REQUIRE(wave != std::string::npos);
  REQUIRE(gcc != std::string::npos);
  CHECK(wave < gcc);
  CHECK(t2.substr(wave, t2.find('\n', wave) - wave).find(" - ") != std::string::npos);

  models.push_back(models[0]);
  CHECK_THROWS_AS(l1_table(models), std::invalid_argument);
}
