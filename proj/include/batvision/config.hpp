#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "batvision/acoustic_sim.hpp"
#include "batvision/dataset.hpp"
#include "batvision/model.hpp"

namespace bv {

struct DatasetSection {
  std::string root = "data";
  std::array<double, 3> splits{0.8, 0.1, 0.1};
};

struct FeatureSection {
  Encoding encoding = Encoding::gcc;
  bool augment = true;
  double noise_sigma2_max = 0.1;
  int spectrogram_window = 256;
  int spectrogram_hop = 128;
};

// Encoder geometry; empty lists select the defaults of the configured encoding.
struct EncoderSection {
  std::vector<int> channels;
  std::vector<int> kernels;
  std::vector<int> strides;
  std::vector<int> paddings;
  int latent_dim = 128;
};

struct GeneratorSection {
  int n_rrdb = 8;
  int base_channels = 64;
  int growth_channels = 32;
  int dense_layers = 5;
  int kernel_size = 3;
  double beta = 0.2;
  int start_resolution = 8;
};

struct DiscriminatorSection {
  int n_layers = 3;
  int base_channels = 64;
  bool spectral_norm = true;
  int power_iterations = 1;
};

struct TrainConfig {
  double lambda = 0.1;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 16;
  std::int64_t max_steps = 1000;
  std::int64_t checkpoint_every = 500;
  std::int64_t sample_dump_every = 100;
  Target target = Target::depth;
  bool gen_only = false;
  std::string out_dir = "runs/default";
};

struct EvaluationSection {
  Split split = Split::test;
  int batch_size = 16;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ChirpParams chirp;
  SamplerConfig simulator;
  DatasetSection dataset;
  FeatureSection features;
  EncoderSection encoder;
  GeneratorSection generator;
  DiscriminatorSection discriminator;
  TrainConfig training;
  EvaluationSection evaluation;

  // Throws std::invalid_argument listing every invalid key.
  void validate() const;

  SamplerConfig sampler() const;
  BatchOptions batch_options(bool augment) const;
  ModelConfig model() const;
};

nlohmann::json to_json(const RunConfig& config);
// Rejects unknown keys and wrong types, naming the offending key paths.
RunConfig run_config_from_json(const nlohmann::json& j);

// YAML document (may be empty) plus "dotted.key=value" overrides whose values
// are parsed as YAML.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
RunConfig parse_run_config(const std::string& yaml_text, const std::vector<std::string>& overrides = {});

// 16 hex digits of FNV-1a 64 over the canonical JSON of the resolved config.
std::string config_hash(const RunConfig& config);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace bv
