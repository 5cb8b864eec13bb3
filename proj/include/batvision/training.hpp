#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "batvision/adam.hpp"
#include "batvision/config.hpp"
#include "batvision/dataset.hpp"
#include "batvision/model.hpp"

namespace bv {

// Losses of one step. d_loss and g_adv are NaN in generator-only mode.
struct HistoryRow {
  std::int64_t step = 0;
  double d_loss = 0.0;
  double g_adv = 0.0;
  double l1 = 0.0;
};

class TrainState {
 public:
  explicit TrainState(const RunConfig& config);
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  RunConfig config;
  std::string config_hash;
  std::unique_ptr<BatVisionModel> model;
  Adam opt_g;  // encoder and generator
  Adam opt_d;  // discriminator
  std::int64_t step = 0;
  std::vector<HistoryRow> history;
};

// One discriminator update on the LSGAN loss (G frozen), then one joint
// encoder+generator update on lambda * adversarial + masked L1 (D frozen).
// Generator-only mode skips the discriminator entirely.
HistoryRow train_step(TrainState& state, const Batch& batch);

// Dataset positions for training step `step`: consecutive slices of an endless
// sequence of per-epoch permutations of `train`, each seeded by (seed, epoch).
std::vector<std::size_t> batch_indices(const std::vector<std::size_t>& train, std::int64_t step, int batch_size,
                                       std::uint64_t seed);

struct TrainLoopOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::int64_t until_step = -1;   // -1: config.training.max_steps
  std::function<void(const HistoryRow&)> on_step;
  const std::atomic<bool>* stop = nullptr;  // checked between steps
};

// Runs train_step until the target step (or until *stop), writing
// history.csv, prediction grids (samples/step_XXXXXX.png) and checkpoint.bvck
// under out_dir. The final checkpoint is written on either exit.
void train_loop(TrainState& state, const Dataset& data, const TrainLoopOptions& options);

void write_history_csv(const TrainState& state, const std::filesystem::path& path);
// Ground truth | prediction rows for up to `count` samples of a split.
void write_prediction_grid(TrainState& state, const Dataset& data, Split split, std::size_t count,
                           const std::filesystem::path& path);

inline constexpr const char* kCheckpointName = "checkpoint.bvck";

// Binary archive: "BVCK", format version, JSON header (config, step, history,
// tensor names and shapes), then the raw tensor data. Written atomically.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
std::unique_ptr<TrainState> load_checkpoint(const std::filesystem::path& path);

}  // namespace bv
