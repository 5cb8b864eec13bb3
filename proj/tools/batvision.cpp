#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "batvision/config.hpp"
#include "batvision/features.hpp"
#include "batvision/file_util.hpp"
#include "batvision/image_io.hpp"
#include "batvision/metrics.hpp"
#include "batvision/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bv;

namespace {

std::atomic<bool> g_stop{false};

const CLI::Validator kAtLeastOne(
    [](const std::string& s) {
      try {
        return std::stoll(s) >= 1 ? std::string() : std::string("must be at least 1");
      } catch (const std::exception&) {
        return std::string("must be an integer");
      }
    },
    "INT>=1");

extern "C" void on_signal(int) { g_stop = true; }

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& sets) {
  return path.empty() ? parse_run_config("", sets) : load_run_config(path, sets);
}

void write_config_json(const RunConfig& cfg, const fs::path& path) {
  const json j{{"config_hash", config_hash(cfg)}, {"config", to_json(cfg)}};
  atomic_write(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::size_t n = 0;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string config;
  std::vector<std::string> sets;
  bool force = false;
};

int cmd_simulate(const SimulateArgs& a) {
  RunConfig cfg = resolve_config(a.config, a.sets);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const std::string hash = config_hash(cfg);
  const fs::path out(a.out);
  if (fs::exists(out / kManifestName)) {
    if (!a.force) throw std::runtime_error(out.string() + " already holds a dataset (use --force to replace it)");
    for (const char* sub : {"audio", "depth", "gray"}) fs::remove_all(out / sub);
    fs::remove(out / kManifestName);
  }
  fs::create_directories(out);

  const auto samples = generate_dataset(a.n, cfg.sampler(), cfg.seed);
  DatasetManifest manifest = save_samples(samples, out, cfg.chirp, hash);
  manifest = split(std::move(manifest), cfg.dataset.splits, cfg.seed);
  write_manifest(manifest);
  write_config_json(cfg, out / "config.json");
  std::cout << "wrote " << manifest.entries.size() << " samples to " << out.string() << " (train "
            << manifest.indices(Split::train).size() << ", val " << manifest.indices(Split::val).size() << ", test "
            << manifest.indices(Split::test).size() << "), config_hash " << hash << "\n";
  return 0;
}

// ---------------------------------------------------------------- featurize

struct FeaturizeArgs {
  std::string manifest;
  std::string encoding = "gcc";
  std::string out;
  std::string config;
  std::vector<std::string> sets;
  std::size_t plot_count = 4;
  bool force = false;
};

int cmd_featurize(const FeaturizeArgs& a) {
  std::vector<std::string> sets = a.sets;
  sets.push_back("features.encoding=" + a.encoding);
  const RunConfig cfg = resolve_config(a.config, sets);
  cfg.validate();
  const fs::path out(a.out);
  const fs::path archive_path = out / ("features_" + a.encoding + ".bvft");
  const fs::path plot_path = out / ("features_" + a.encoding + ".png");
  if (!a.force && (fs::exists(archive_path) || fs::exists(plot_path))) {
    throw std::runtime_error(archive_path.string() + " already exists (use --force to overwrite)");
  }
  fs::create_directories(out);

  const Dataset data = Dataset::open(a.manifest);
  FeatureArchive archive = featurize(data, cfg.batch_options(false));
  archive.config_hash = config_hash(cfg);
  save_feature_archive(archive, archive_path);
  write_png(plot_path, waveform_gcc_mosaic(data, a.plot_count),
            {{"config_hash", archive.config_hash}, {"dataset_config_hash", archive.dataset_config_hash}});
  std::cout << "wrote " << archive.ids.size() << " records of shape "
            << shape_string(Shape(archive.features.shape().begin() + 1, archive.features.shape().end())) << " to "
            << archive_path.string() << ", config_hash " << archive.config_hash << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  bool resume = false;
};

void check_dataset_matches(const Dataset& data, const RunConfig& cfg) {
  const SceneSample& first = data.samples().front();
  if (first.meta.window_len != cfg.simulator.window_len) {
    throw std::runtime_error("dataset window length " + std::to_string(first.meta.window_len) +
                             " differs from simulator.window_len " + std::to_string(cfg.simulator.window_len));
  }
  if (first.depth.dim(0) != cfg.simulator.image_size) {
    throw std::runtime_error("dataset image size " + std::to_string(first.depth.dim(0)) +
                             " differs from simulator.image_size " + std::to_string(cfg.simulator.image_size));
  }
}

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = load_run_config(a.config, a.sets);
  cfg.validate();
  const fs::path out(cfg.training.out_dir);
  const fs::path ckpt = out / kCheckpointName;

  std::unique_ptr<TrainState> state;
  if (a.resume) {
    state = load_checkpoint(ckpt);
    RunConfig stored = state->config;
    stored.training.max_steps = cfg.training.max_steps;
    if (to_json(stored) != to_json(cfg)) {
      throw std::runtime_error("configuration differs from the checkpoint in " + ckpt.string() +
                               " beyond training.max_steps");
    }
    state->config = stored;
    state->config_hash = config_hash(stored);
  } else {
    if (fs::exists(ckpt)) {
      throw std::runtime_error(ckpt.string() + " exists (use --resume, or choose another training.out_dir)");
    }
    state = std::make_unique<TrainState>(cfg);
  }

  const Dataset data = Dataset::open(cfg.dataset.root);
  check_dataset_matches(data, cfg);
  fs::create_directories(out);
  write_config_json(state->config, out / "config.json");

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  TrainLoopOptions opts;
  opts.out_dir = out;
  opts.stop = &g_stop;
  const std::int64_t report_every = std::max<std::int64_t>(1, cfg.training.max_steps / 20);
  opts.on_step = [&](const HistoryRow& r) {
    if (r.step % report_every != 0 && r.step != cfg.training.max_steps) return;
    std::printf("step %lld  d_loss %.5f  g_adv %.5f  l1 %.5f\n", static_cast<long long>(r.step), r.d_loss, r.g_adv,
                r.l1);
    std::fflush(stdout);
  };
  std::cout << "training " << (cfg.training.gen_only ? "generator only" : "GAN") << " on "
            << data.indices(Split::train).size() << " samples from step " << state->step << " to "
            << cfg.training.max_steps << ", config_hash " << state->config_hash << "\n";
  train_loop(*state, data, opts);
  if (g_stop) {
    std::cout << "interrupted at step " << state->step << "; checkpoint saved to " << ckpt.string() << "\n";
    return 130;
  }
  std::cout << "finished at step " << state->step << "; checkpoint " << ckpt.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::vector<std::string> checkpoints;
  std::string manifest;
  std::string split;
  std::string out;
  std::size_t mosaic_count = 8;
};

struct Loaded {
  std::string path;
  std::unique_ptr<TrainState> state;
};

// Columns: ground truth depth, depth predictions, ground truth grayscale,
// grayscale predictions; one row per sample.
GrayImage prediction_mosaic(std::vector<Loaded>& models, const Dataset& data, Split split, std::size_t count,
                            int* columns) {
  auto idx = data.indices(split);
  idx.resize(std::min(count, idx.size()));
  const std::size_t n = idx.size();
  std::vector<std::vector<GrayImage>> cols;
  for (Target target : {Target::depth, Target::grayscale}) {
    bool truth_added = false;
    for (auto& m : models) {
      if (m.state->config.training.target != target) continue;
      const Batch batch = load_batch(data, split, idx, m.state->config.batch_options(false), 0);
      const Tensor pred = m.state->model->predict(batch.inputs);
      const int H = static_cast<int>(batch.targets.dim(2)), W = static_cast<int>(batch.targets.dim(3));
      const auto plane = static_cast<std::size_t>(H * W);
      if (!truth_added) {
        std::vector<GrayImage> truth;
        for (std::size_t b = 0; b < n; ++b) truth.push_back(to_gray8({batch.targets.sample(b), plane}, W, H));
        cols.push_back(std::move(truth));
        truth_added = true;
      }
      std::vector<GrayImage> p;
      for (std::size_t b = 0; b < n; ++b) p.push_back(to_gray8({pred.sample(b), plane}, W, H));
      cols.push_back(std::move(p));
    }
  }
  std::vector<GrayImage> tiles;
  for (std::size_t r = 0; r < n; ++r) {
    for (const auto& c : cols) tiles.push_back(c[r]);
  }
  *columns = static_cast<int>(cols.size());
  return mosaic(tiles, *columns);
}

int cmd_evaluate(const EvaluateArgs& a) {
  std::vector<Loaded> models;
  for (const auto& path : a.checkpoints) models.push_back({path, load_checkpoint(path)});
  const RunConfig& first = models.front().state->config;
  const std::string manifest = a.manifest.empty() ? first.dataset.root : a.manifest;
  const Split split = a.split.empty() ? first.evaluation.split : parse_split(a.split);
  const Dataset data = Dataset::open(manifest);
  if (data.indices(split).empty()) throw std::runtime_error("split '" + to_string(split) + "' is empty");

  std::vector<EvaluatedModel> results;
  json report{{"manifest", manifest}, {"split", to_string(split)}, {"models", json::array()}};
  std::string header = "# split " + to_string(split) + "\n";
  for (auto& m : models) {
    const RunConfig& c = m.state->config;
    check_dataset_matches(data, c);
    ModelEvaluation ev =
        evaluate_model(*m.state->model, data, split, c.batch_options(false), c.evaluation.batch_size);
    report["models"].push_back({{"checkpoint", m.path},
                                {"config_hash", m.state->config_hash},
                                {"step", m.state->step},
                                {"encoding", to_string(c.features.encoding)},
                                {"target", to_string(c.training.target)},
                                {"gen_only", c.training.gen_only},
                                {"evaluation", to_json(ev)}});
    header += "# " + m.path + " config_hash " + m.state->config_hash + " step " + std::to_string(m.state->step) + "\n";
    results.push_back({m.path, c.features.encoding, c.training.gen_only, std::move(ev)});
  }

  const fs::path out(a.out);
  fs::create_directories(out);
  const std::string tables = header + "\n" + depth_table(results) + "\n" + l1_table(results);
  atomic_write(out / "report.json", report.dump(2) + "\n");
  atomic_write(out / "tables.txt", tables);
  int columns = 0;
  const GrayImage grid = prediction_mosaic(models, data, split, a.mosaic_count, &columns);
  PngText text;
  for (const auto& m : models) text.push_back({"config_hash", m.state->config_hash});
  write_png(out / "predictions.png", grid, text);
  std::cout << tables;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth and grayscale images from binaural echoes."};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic echo dataset with a train/val/test split");
  simulate->add_option("--n", sim.n, "Number of samples")->required()->check(kAtLeastOne);
  simulate->add_option("--out", sim.out, "Output directory")->required();
  simulate->add_option("--seed", sim.seed, "Seed (overrides the config)");
  simulate->add_option("--config", sim.config, "YAML run configuration")->check(CLI::ExistingFile);
  simulate->add_option("--set", sim.sets, "Override as dotted.key=value");
  simulate->add_flag("--force", sim.force, "Replace an existing dataset");

  FeaturizeArgs feat;
  auto* featurize_cmd = app.add_subcommand("featurize", "Precompute encoder inputs and plot waveforms/GCC");
  featurize_cmd->add_option("--manifest", feat.manifest, "Manifest file or dataset directory")->required();
  featurize_cmd->add_option("--encoding", feat.encoding, "waveform, spectrogram or gcc")
      ->check(CLI::IsMember({"waveform", "spectrogram", "gcc"}));
  featurize_cmd->add_option("--out", feat.out, "Output directory")->required();
  featurize_cmd->add_option("--config", feat.config, "YAML run configuration")->check(CLI::ExistingFile);
  featurize_cmd->add_option("--set", feat.sets, "Override as dotted.key=value");
  featurize_cmd->add_option("--plot-count", feat.plot_count, "Samples in the mosaic")->check(kAtLeastOne);
  featurize_cmd->add_flag("--force", feat.force, "Overwrite existing outputs");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train encoder, generator and discriminator");
  train->add_option("--config", tr.config, "YAML run configuration")->required()->check(CLI::ExistingFile);
  train->add_option("--set", tr.sets, "Override as dotted.key=value");
  train->add_flag("--resume", tr.resume, "Continue from the checkpoint in training.out_dir");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Depth metrics, L1 tables and prediction mosaics");
  evaluate->add_option("--checkpoint", ev.checkpoints, "Checkpoint file (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--manifest", ev.manifest, "Manifest file or dataset directory (default: from the config)");
  evaluate->add_option("--split", ev.split, "train, val or test (default: from the config)")
      ->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--out", ev.out, "Output directory")->required();
  evaluate->add_option("--mosaic-count", ev.mosaic_count, "Samples in the mosaic")->check(kAtLeastOne);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*featurize_cmd) return cmd_featurize(feat);
    if (*train) return cmd_train(tr);
    if (*evaluate) return cmd_evaluate(ev);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
