#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "batvision/layers.hpp"
#include "batvision/signal.hpp"

namespace bv {

struct EncoderConfig {
  Encoding encoding = Encoding::gcc;
  // Per-ear input: length L, or (bins, frames) for spectrograms.
  Shape input_shape{8192};
  std::vector<int> channels{16, 32, 64, 64};
  std::vector<int> kernels{8, 8, 8, 8};
  std::vector<int> strides{4, 4, 4, 4};
  std::vector<int> paddings{2, 2, 2, 2};
  int latent_dim = 128;

  // Stage-wise temporal lengths, starting with the input length.
  std::vector<std::int64_t> stage_lengths() const;
  void validate() const;
};

// Defaults per encoding for a given window and spectrogram geometry.
EncoderConfig default_encoder_config(Encoding encoding, std::size_t window_len = 4410, int spec_window = 256,
                                     int spec_hop = 128);

struct GeneratorConfig {
  int n_rrdb = 8;
  int base_channels = 64;
  int growth_channels = 32;
  int dense_layers = 5;
  int kernel_size = 3;
  double beta = 0.2;
  int start_resolution = 8;
  int output_resolution = 128;

  int upsample_stages() const;
  void validate() const;
};

struct DiscriminatorConfig {
  int n_layers = 3;
  int base_channels = 64;
  bool spectral_norm = true;
  int power_iterations = 1;
  int image_size = 128;

  void validate() const;
};

// Residual dense block: dense_layers convolutions over the running
// concatenation of the input and all previous outputs.
class DenseBlock {
 public:
  DenseBlock() = default;
  DenseBlock(const std::string& name, int channels, int growth, int layers, int kernel, double beta);

  void init(std::mt19937_64& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);

  std::vector<Conv2d> convs;
  double beta = 0.2;

 private:
  int channels_ = 0, growth_ = 0;
  std::vector<Tensor> acts_;
};

class RRDB {
 public:
  RRDB() = default;
  RRDB(const std::string& name, int channels, int growth, int layers, int kernel, double beta);

  void init(std::mt19937_64& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);

  std::vector<DenseBlock> blocks;
  double beta = 0.2;

 private:
  int channels_ = 0;
};

class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(const EncoderConfig& config);

  void init(std::mt19937_64& rng);
  // (B, 2, L) or (B, 2, bins, frames) -> (B, latent_dim)
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_latent);
  void collect(std::vector<Parameter*>& out);

  const EncoderConfig& config() const { return config_; }
  std::vector<Conv2d> convs;
  Linear fc;

 private:
  EncoderConfig config_;
  std::vector<Tensor> acts_;
  Shape input_shape_;
};

class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorConfig& config, int latent_dim);

  void init(std::mt19937_64& rng);
  // (B, latent_dim) -> (B, 1, out, out) in [0, 1]
  Tensor forward(const Tensor& latent);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);

  // The trunk alone: RRDB chain on a (B, nf, s, s) feature map.
  Tensor trunk_forward(const Tensor& features);

  const GeneratorConfig& config() const { return config_; }
  Linear fc;
  std::vector<RRDB> trunk;
  Conv2d trunk_conv;
  std::vector<Conv2d> up_convs;
  Conv2d hr_conv;
  Conv2d last_conv;

 private:
  GeneratorConfig config_;
  std::vector<Tensor> up_acts_;
  Tensor hr_act_;
  Tensor output_;
};

class Discriminator {
 public:
  Discriminator() = default;
  explicit Discriminator(const DiscriminatorConfig& config);

  void init(std::mt19937_64& rng);
  // (B, 1, S, S) -> (B, 1, P, P)
  Tensor forward(const Tensor& image);
  Tensor backward(const Tensor& grad_out, bool need_input_grad = true);
  void power_iteration(int n_iter);
  void collect(std::vector<Parameter*>& out);
  void collect_buffers(std::vector<Buffer>& out);

  std::int64_t output_size() const;
  int receptive_field() const;

  const DiscriminatorConfig& config() const { return config_; }
  std::vector<Conv2d> convs;

 private:
  DiscriminatorConfig config_;
  std::vector<Tensor> acts_;
};

struct ModelConfig {
  EncoderConfig encoder;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
};

// Audio encoder A, generator G and discriminator D.
class BatVisionModel {
 public:
  explicit BatVisionModel(const ModelConfig& config, std::uint64_t seed = 0);
  BatVisionModel(const BatVisionModel&) = delete;
  BatVisionModel& operator=(const BatVisionModel&) = delete;

  Tensor predict(const Tensor& inputs);

  std::vector<Parameter*> generator_parameters();      // A and G
  std::vector<Parameter*> discriminator_parameters();  // D
  std::vector<Buffer> buffers();

  const ModelConfig& config() const { return config_; }
  Encoder encoder;
  Generator generator;
  Discriminator discriminator;

 private:
  ModelConfig config_;
};

}  // namespace bv
