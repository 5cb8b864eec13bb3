#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "batvision/losses.hpp"
#include "batvision/training.hpp"
#include "gradcheck.hpp"

using namespace bv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("bv_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

constexpr const char* kTinyConfig = R"(
seed: 11
simulator: {image_size: 32}
model:
  encoder: {channels: [4, 4, 4, 4], latent_dim: 16}
  generator: {n_rrdb: 1, base_channels: 4, growth_channels: 2, dense_layers: 2}
  discriminator: {base_channels: 4}
training: {batch_size: 2, lr_g: 0.001, lr_d: 0.001, checkpoint_every: 0, sample_dump_every: 0}
)";

RunConfig tiny(const std::vector<std::string>& overrides = {}) { return parse_run_config(kTinyConfig, overrides); }

const Dataset& tiny_data() {
  static const Dataset data = [] {
    const RunConfig cfg = tiny();
    return Dataset::from_samples(generate_dataset(6, cfg.sampler(), 4), cfg.chirp, std::vector<Split>(6, Split::train));
  }();
  return data;
}

Batch tiny_batch(const RunConfig& cfg, std::uint64_t seed = 0) {
  const std::vector<std::size_t> idx{0, 3};
  return load_batch(tiny_data(), Split::train, idx, cfg.batch_options(true), seed);
}

std::vector<double> flatten(const std::vector<Parameter*>& params) {
  std::vector<double> out;
  for (const auto* p : params) out.insert(out.end(), p->value.storage().begin(), p->value.storage().end());
  return out;
}

std::vector<double> everything(TrainState& s) {
  std::vector<double> out = flatten(s.model->generator_parameters());
  const auto d = flatten(s.model->discriminator_parameters());
  out.insert(out.end(), d.begin(), d.end());
  for (const auto& b : s.model->buffers()) out.insert(out.end(), b.tensor->storage().begin(), b.tensor->storage().end());
  for (Adam* opt : {&s.opt_g, &s.opt_d}) {
    for (auto* moments : {&opt->first_moments(), &opt->second_moments()}) {
      for (const Tensor& t : *moments) out.insert(out.end(), t.storage().begin(), t.storage().end());
    }
  }
  return out;
}

bool same_history(const std::vector<HistoryRow>& a, const std::vector<HistoryRow>& b) {
  if (a.size() != b.size()) return false;
  auto eq = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].step != b[i].step || !eq(a[i].d_loss, b[i].d_loss) || !eq(a[i].g_adv, b[i].g_adv) ||
        !eq(a[i].l1, b[i].l1)) {
      return false;
    }
  }
  return true;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Central-difference check of a scalar loss gradient.
double loss_fd_error(const std::function<double(const Tensor&)>& f, const Tensor& x, const Tensor& grad) {
  double num = 0.0, den = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (f(xp) - f(xm)) / (2 * h);
    num += (fd - grad[i]) * (fd - grad[i]);
    den += fd * fd + grad[i] * grad[i];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

}  // namespace

TEST_CASE("LSGAN losses at their optimum and worst case") {
  const Tensor ones({2, 1, 3, 3}, 1.0), zeros({2, 1, 3, 3}, 0.0);
  CHECK(lsgan_d_loss(ones, zeros).value == 0.0);
  CHECK(lsgan_d_loss(zeros, ones).value == 1.0);
  CHECK(lsgan_g_loss(ones).value == 0.0);
  CHECK(lsgan_g_loss(zeros).value == 0.5);
  CHECK_THROWS_AS(lsgan_d_loss(ones, Tensor({1, 1, 3, 3})), std::invalid_argument);
}

TEST_CASE("masked L1 values") {
  const Tensor pred({1, 1, 2, 2}, std::vector<double>{0.0, 0.5, 1.0, 0.25});
  const Tensor target({1, 1, 2, 2}, 0.5);
  CHECK(masked_l1(pred, target, {1, 1, 1, 1}).value == doctest::Approx(1.25 / 4).epsilon(1e-15));
  CHECK(masked_l1(pred, target, {1, 0, 0, 0}).value == 0.5);
  CHECK_THROWS_AS(masked_l1(pred, target, {0, 0, 0, 0}), std::invalid_argument);
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(3);
  const Tensor real = bv::testing::random_tensor({3, 1, 4, 4}, rng);
  const Tensor fake = bv::testing::random_tensor({3, 1, 4, 4}, rng);
  const DLoss d = lsgan_d_loss(real, fake);
  CHECK(loss_fd_error([&](const Tensor& r) { return lsgan_d_loss(r, fake).value; }, real, d.grad_real) < 1e-4);
  CHECK(loss_fd_error([&](const Tensor& f) { return lsgan_d_loss(real, f).value; }, fake, d.grad_fake) < 1e-4);
  CHECK(loss_fd_error([](const Tensor& f) { return lsgan_g_loss(f).value; }, fake, lsgan_g_loss(fake).grad) < 1e-4);

  Tensor target = bv::testing::random_tensor({3, 1, 4, 4}, rng);
  std::vector<std::uint8_t> mask(target.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = i % 3 != 0;
    if (std::abs(fake[i] - target[i]) < 1e-3) target[i] += 0.01;
  }
  CHECK(loss_fd_error([&](const Tensor& p) { return masked_l1(p, target, mask).value; }, fake,
                      masked_l1(fake, target, mask).grad) < 1e-4);
}

TEST_CASE("Adam matches a hand-computed update") {
  Parameter p{"w", Tensor({1}, 1.0), Tensor({1}, 0.0)};
  Adam opt({&p}, {0.1, 0.5, 0.999, 1e-8});
  p.grad[0] = 0.5;
  opt.step();
  // m = 0.25, v = 0.00025, bias corrections 0.5 and 0.001: denominator 0.5 + 1e-8.
  const double first = 1.0 - (0.1 / 0.5) * 0.25 / (0.5 + 1e-8);
  CHECK(std::abs(p.value[0] - first) < 1e-12);
  p.grad[0] = -0.2;
  opt.step();
  // m = 0.025, v = 0.00028975, bias corrections 0.75 and 0.001999.
  const double second = first - (0.1 / 0.75) * 0.025 / (std::sqrt(0.00028975) / std::sqrt(0.001999) + 1e-8);
  CHECK(std::abs(p.value[0] - second) < 1e-12);
  CHECK(opt.steps() == 2);
}

TEST_CASE("batch order is a deterministic sequence of permutations") {
  const std::vector<std::size_t> train{2, 5, 7, 9, 11};
  std::vector<std::size_t> seen;
  for (std::int64_t step = 0; step < 5; ++step) {
    const auto a = batch_indices(train, step, 2, 42);
    CHECK(a == batch_indices(train, step, 2, 42));
    seen.insert(seen.end(), a.begin(), a.end());
  }
  // Ten draws cover two epochs of five: each epoch is a permutation.
  CHECK(std::multiset<std::size_t>(seen.begin(), seen.begin() + 5) ==
        std::multiset<std::size_t>(train.begin(), train.end()));
  CHECK(std::multiset<std::size_t>(seen.begin() + 5, seen.end()) ==
        std::multiset<std::size_t>(train.begin(), train.end()));
  CHECK(batch_indices(train, 0, 5, 42) != batch_indices(train, 0, 5, 43));
  CHECK_THROWS_AS(batch_indices({}, 0, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(batch_indices(train, 0, 0, 1), std::invalid_argument);
}

TEST_CASE("lambda zero reduces the generator update to L1 alone") {
  TrainState gan(tiny({"training.lambda=0"}));
  TrainState l1_only(tiny({"training.lambda=0", "training.gen_only=true"}));
  REQUIRE(flatten(gan.model->generator_parameters()) == flatten(l1_only.model->generator_parameters()));
  const auto d_before = flatten(gan.model->discriminator_parameters());
  for (int i = 0; i < 3; ++i) {
    const Batch batch = tiny_batch(gan.config, i);
    const HistoryRow a = train_step(gan, batch);
    const HistoryRow b = train_step(l1_only, batch);
    CHECK(a.l1 == b.l1);
    CHECK(std::isfinite(a.d_loss));
    CHECK(std::isnan(b.d_loss));
  }
  CHECK(flatten(gan.model->generator_parameters()) == flatten(l1_only.model->generator_parameters()));
  CHECK(flatten(gan.model->discriminator_parameters()) != d_before);
}

TEST_CASE("updates touch only their own network") {
  SUBCASE("generator-only training leaves D untouched") {
    TrainState s(tiny({"training.gen_only=true"}));
    const auto d = flatten(s.model->discriminator_parameters());
    const auto g = flatten(s.model->generator_parameters());
    train_step(s, tiny_batch(s.config));
    CHECK(flatten(s.model->discriminator_parameters()) == d);
    CHECK(flatten(s.model->generator_parameters()) != g);
  }
  SUBCASE("the discriminator update does not move G") {
    TrainState s(tiny({"training.lr_g=0"}));
    const auto d = flatten(s.model->discriminator_parameters());
    const auto g = flatten(s.model->generator_parameters());
    train_step(s, tiny_batch(s.config));
    CHECK(flatten(s.model->generator_parameters()) == g);
    CHECK(flatten(s.model->discriminator_parameters()) != d);
  }
  SUBCASE("the generator update does not move D") {
    TrainState s(tiny({"training.lr_d=0"}));
    const auto d = flatten(s.model->discriminator_parameters());
    const auto g = flatten(s.model->generator_parameters());
    train_step(s, tiny_batch(s.config));
    CHECK(flatten(s.model->discriminator_parameters()) == d);
    CHECK(flatten(s.model->generator_parameters()) != g);
  }
}

TEST_CASE("training is deterministic") {
  TrainState a(tiny()), b(tiny());
  TrainLoopOptions opts;
  opts.until_step = 10;
  train_loop(a, tiny_data(), opts);
  train_loop(b, tiny_data(), opts);
  CHECK(a.step == 10);
  CHECK(a.history.size() == 10);
  CHECK(same_history(a.history, b.history));
  CHECK(everything(a) == everything(b));
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  TempDir dir("resume");
  TrainState straight(tiny());
  TrainLoopOptions opts;
  opts.until_step = 8;
  train_loop(straight, tiny_data(), opts);

  TrainState first(tiny());
  opts.until_step = 3;
  train_loop(first, tiny_data(), opts);
  save_checkpoint(first, dir.path / kCheckpointName);
  auto resumed = load_checkpoint(dir.path / kCheckpointName);
  CHECK(resumed->step == 3);
  opts.until_step = 8;
  train_loop(*resumed, tiny_data(), opts);

  CHECK(same_history(resumed->history, straight.history));
  CHECK(everything(*resumed) == everything(straight));
}

TEST_CASE("checkpoint round trip and corruption") {
  TempDir dir("ckpt");
  TrainState s(tiny());
  TrainLoopOptions opts;
  opts.until_step = 2;
  train_loop(s, tiny_data(), opts);
  const fs::path path = dir.path / kCheckpointName;
  save_checkpoint(s, path);
  auto loaded = load_checkpoint(path);
  CHECK(loaded->config_hash == s.config_hash);
  CHECK(loaded->step == s.step);
  CHECK(same_history(loaded->history, s.history));
  CHECK(everything(*loaded) == everything(s));
  CHECK(!fs::exists(path.string() + ".tmp"));

  const std::string bytes = read_file(path);
  auto write = [&](const std::string& b) {
    std::ofstream(path, std::ios::binary | std::ios::trunc) << b;
  };
  write("XXXX" + bytes.substr(4));
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), std::runtime_error);
  write(bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"), std::runtime_error);
  write(bytes + "junk");
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("trailing"), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.bvck"), std::runtime_error);
}

TEST_CASE("training loop outputs") {
  TempDir dir("loop");
  TrainState s(tiny({"training.gen_only=true", "training.sample_dump_every=2", "training.checkpoint_every=2"}));
  TrainLoopOptions opts;
  opts.out_dir = dir.path;
  opts.until_step = 4;
  int calls = 0;
  opts.on_step = [&](const HistoryRow&) { ++calls; };
  train_loop(s, tiny_data(), opts);
  CHECK(calls == 4);
  CHECK(fs::exists(dir.path / "samples" / "step_000002.png"));
  CHECK(fs::exists(dir.path / "samples" / "step_000004.png"));
  CHECK(fs::exists(dir.path / kCheckpointName));

  const std::string csv = read_file(dir.path / "history.csv");
  CHECK(csv.rfind("# config_hash " + s.config_hash + "\nstep,d_loss,g_adv,l1\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  CHECK(csv.find("\n1,,,") != std::string::npos);
}

TEST_CASE("non-finite losses name the offending term") {
  SUBCASE("generator only") {
    TrainState s(tiny({"training.gen_only=true"}));
    s.model->generator_parameters().back()->value[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH(train_step(s, tiny_batch(s.config)), doctest::Contains("L1"));
  }
  SUBCASE("GAN") {
    TrainState s(tiny());
    s.model->generator_parameters().back()->value[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH(train_step(s, tiny_batch(s.config)), doctest::Contains("discriminator"));
  }
}

TEST_CASE("batches must match the configuration") {
  TrainState s(tiny());
  BatchOptions opts = s.config.batch_options(false);
  opts.encoding = Encoding::waveform;
  const std::vector<std::size_t> idx{0, 1};
  CHECK_THROWS_AS(train_step(s, load_batch(tiny_data(), Split::train, idx, opts, 0)), std::invalid_argument);
}
