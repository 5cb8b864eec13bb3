#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "batvision/acoustic_sim.hpp"
#include "batvision/signal.hpp"
#include "batvision/tensor.hpp"

namespace bv {

enum class Split { train, val, test };
enum class Target { depth, grayscale };

Split parse_split(const std::string& name);
std::string to_string(Split s);
Target parse_target(const std::string& name);
std::string to_string(Target t);

// Fixed normalization range for depth targets, in meters.
inline constexpr double kMaxDepth = 10.0;

struct ManifestEntry {
  std::string id;
  std::string wav;        // relative to the manifest root
  std::string depth_png;  // unsigned 16-bit millimeters, 0 = no depth
  std::string gray_png;   // 8-bit
  Split split = Split::train;
  nlohmann::json meta;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  ChirpParams chirp;
  double sample_rate = 0.0;

  std::vector<std::size_t> indices(Split s) const;
};

inline constexpr const char* kManifestName = "manifest.jsonl";

// Writes audio/<id>.wav, depth/<id>.png, gray/<id>.png and manifest.jsonl
// under `root`. Every sample lands in the train split until split() is run.
DatasetManifest save_samples(const std::vector<SceneSample>& samples, const std::filesystem::path& root,
                             const ChirpParams& chirp, const std::string& config_hash = {});

void write_manifest(const DatasetManifest& manifest);

// Accepts the manifest file or the directory containing it. Checks that all
// referenced files exist and that the chirp parameterization is unique.
DatasetManifest load_manifest(const std::filesystem::path& path);

// Reads one entry back into memory; errors name the sample id.
SceneSample load_sample(const DatasetManifest& manifest, std::size_t entry);

// Deterministic disjoint train/val/test assignment. Sizes are
// round(f_train * n), round(f_val * n) and the remainder.
DatasetManifest split(DatasetManifest manifest, std::array<double, 3> fractions, std::uint64_t seed);

// In-memory dataset: manifest plus every sample, loaded once.
class Dataset {
 public:
  static Dataset open(const std::filesystem::path& manifest_path);
  static Dataset from_samples(std::vector<SceneSample> samples, const ChirpParams& chirp,
                              std::vector<Split> splits);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::vector<SceneSample>& samples() const { return samples_; }
  const ChirpSource& chirp() const { return chirp_; }
  std::vector<std::size_t> indices(Split s) const { return manifest_.indices(s); }

 private:
  DatasetManifest manifest_;
  std::vector<SceneSample> samples_;
  ChirpSource chirp_;
};

struct BatchOptions {
  Encoding encoding = Encoding::gcc;
  Target target = Target::depth;
  bool augment = false;
  double jitter_frac = 0.3;
  double noise_sigma2_max = 0.1;
  int spectrogram_window = 256;
  int spectrogram_hop = 128;
};

struct Batch {
  Tensor inputs;   // (B, 2, L) or (B, 2, bins, frames) for spectrograms
  Tensor targets;  // (B, 1, H, W) in [0, 1]
  std::vector<std::uint8_t> masks;  // same layout as targets
  Encoding encoding = Encoding::gcc;
  Target target = Target::depth;
  std::vector<std::size_t> sample_indices;

  std::int64_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }
};

// Input length per channel produced by an encoding for a given window.
std::int64_t encoded_length(Encoding encoding, std::size_t window_len, const BatchOptions& options);
Shape encoded_shape(Encoding encoding, std::size_t window_len, const BatchOptions& options);

// Builds a batch from samples `indices` (dataset positions, all from `split`).
// Training batches apply the jittered window and additive noise to waveform
// and GCC inputs; depth targets are normalized by kMaxDepth.
Batch load_batch(const Dataset& data, Split split, std::span<const std::size_t> indices,
                 const BatchOptions& options, std::uint64_t seed);

}  // namespace bv
