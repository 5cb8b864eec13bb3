#include "batvision/model.hpp"

#include <algorithm>

#include "batvision/random.hpp"

namespace bv {

namespace {

std::int64_t encoder_in_channels(const EncoderConfig& c) {
  return c.input_shape.size() == 2 ? 2 * c.input_shape[0] : 2;
}

ConvGeom conv1d_geom(int k, int s, int p) { return {1, k, 1, s, 0, p}; }

Tensor scaled(Tensor t, double s) {
  for (auto& v : t.storage()) v *= s;
  return t;
}

}  // namespace

std::vector<std::int64_t> EncoderConfig::stage_lengths() const {
  std::vector<std::int64_t> lengths{input_shape.back()};
  for (std::size_t i = 0; i < channels.size(); ++i) {
    lengths.push_back((lengths.back() + 2 * paddings[i] - kernels[i]) / strides[i] + 1);
  }
  return lengths;
}

void EncoderConfig::validate() const {
  if (input_shape.empty() || input_shape.size() > 2) throw std::invalid_argument("encoder: input shape must be (L) or (bins, frames)");
  if ((encoding == Encoding::spectrogram) != (input_shape.size() == 2)) {
    throw std::invalid_argument("encoder: input shape " + shape_string(input_shape) + " does not fit encoding " +
                                to_string(encoding));
  }
  if (channels.empty()) throw std::invalid_argument("encoder: at least one stage required");
  if (kernels.size() != channels.size() || strides.size() != channels.size() || paddings.size() != channels.size()) {
    throw std::invalid_argument("encoder: channels, kernels, strides and paddings must have equal lengths");
  }
  if (latent_dim < 1) throw std::invalid_argument("encoder: latent_dim must be positive");
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] < 1 || kernels[i] < 1 || strides[i] < 1 || paddings[i] < 0) {
      throw std::invalid_argument("encoder: invalid geometry at stage " + std::to_string(i));
    }
  }
  std::int64_t length = input_shape.back();
  bool too_short = length < 1;
  for (std::size_t i = 0; i < channels.size() && !too_short; ++i) {
    too_short = length + 2 * paddings[i] < kernels[i];
    length = (length + 2 * paddings[i] - kernels[i]) / strides[i] + 1;
  }
  if (too_short) {
    throw std::invalid_argument("encoder: input length " + std::to_string(input_shape.back()) +
                                " too short for the configured stages");
  }
}

EncoderConfig default_encoder_config(Encoding encoding, std::size_t window_len, int spec_window, int spec_hop) {
  EncoderConfig c;
  c.encoding = encoding;
  switch (encoding) {
    case Encoding::gcc:
      c.input_shape = {static_cast<std::int64_t>(next_pow2(window_len))};
      break;
    case Encoding::waveform:
      c.input_shape = {static_cast<std::int64_t>(window_len)};
      break;
    case Encoding::spectrogram:
      c.input_shape = {spec_window / 2 + 1, static_cast<std::int64_t>((window_len - spec_window) / spec_hop + 1)};
      c.channels = {128, 128, 128, 128};
      c.kernels = {3, 3, 3, 3};
      c.strides = {2, 2, 2, 2};
      c.paddings = {1, 1, 1, 1};
      break;
  }
  return c;
}

int GeneratorConfig::upsample_stages() const {
  int stages = 0;
  int r = start_resolution;
  while (r < output_resolution) {
    r *= 2;
    ++stages;
  }
  return stages;
}

void GeneratorConfig::validate() const {
  if (n_rrdb < 1) throw std::invalid_argument("generator: n_rrdb must be at least 1");
  if (base_channels < 1 || growth_channels < 1) throw std::invalid_argument("generator: channel counts must be positive");
  if (dense_layers < 1) throw std::invalid_argument("generator: dense_layers must be at least 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw std::invalid_argument("generator: kernel_size must be odd");
  if (start_resolution < 1 || output_resolution < 1 ||
      (start_resolution << upsample_stages()) != output_resolution) {
    throw std::invalid_argument("generator: output resolution " + std::to_string(output_resolution) +
                                " is not start resolution " + std::to_string(start_resolution) +
                                " times a power of two");
  }
}

void DiscriminatorConfig::validate() const {
  if (n_layers < 1) throw std::invalid_argument("discriminator: n_layers must be at least 1");
  if (base_channels < 1) throw std::invalid_argument("discriminator: base_channels must be positive");
  if (power_iterations < 1) throw std::invalid_argument("discriminator: power_iterations must be at least 1");
  std::int64_t s = image_size;
  for (int i = 0; i < n_layers; ++i) s = (s + 2 - 4) / 2 + 1;
  if (s - 2 < 1) throw std::invalid_argument("discriminator: image too small for " + std::to_string(n_layers) + " layers");
}

DenseBlock::DenseBlock(const std::string& name, int channels, int growth, int layers, int kernel, double beta_)
    : beta(beta_), channels_(channels), growth_(growth) {
  const ConvGeom g{kernel, kernel, 1, 1, kernel / 2, kernel / 2};
  for (int i = 0; i < layers; ++i) {
    const int out = i + 1 < layers ? growth : channels;
    convs.emplace_back(name + ".conv" + std::to_string(i), channels + i * growth, out, g);
  }
}

void DenseBlock::init(std::mt19937_64& rng) {
  for (auto& c : convs) c.init(rng, 0.1);
}

Tensor DenseBlock::forward(const Tensor& x) {
  acts_.clear();
  Tensor cat = x;
  const std::size_t L = convs.size();
  for (std::size_t i = 0; i + 1 < L; ++i) {
    acts_.push_back(leaky_relu(convs[i].forward(cat)));
    cat = concat_channels(cat, acts_.back());
  }
  Tensor out = x;
  add_inplace(out, convs[L - 1].forward(cat), beta);
  return out;
}

Tensor DenseBlock::backward(const Tensor& grad_out) {
  const std::size_t L = convs.size();
  Tensor gcat = convs[L - 1].backward(scaled(grad_out, beta));
  for (std::size_t i = L - 1; i-- > 0;) {
    const std::int64_t in_ch = channels_ + static_cast<std::int64_t>(i) * growth_;
    const Tensor g_act = leaky_relu_backward(acts_[i], slice_channels(gcat, in_ch, growth_));
    Tensor g_in = slice_channels(gcat, 0, in_ch);
    add_inplace(g_in, convs[i].backward(g_act));
    gcat = std::move(g_in);
  }
  add_inplace(gcat, grad_out);
  return gcat;
}

void DenseBlock::collect(std::vector<Parameter*>& out) {
  for (auto& c : convs) c.collect(out);
}

RRDB::RRDB(const std::string& name, int channels, int growth, int layers, int kernel, double beta_)
    : beta(beta_), channels_(channels) {
  for (int i = 0; i < 3; ++i) blocks.emplace_back(name + ".rdb" + std::to_string(i), channels, growth, layers, kernel, beta_);
}

void RRDB::init(std::mt19937_64& rng) {
  for (auto& b : blocks) b.init(rng);
}

Tensor RRDB::forward(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != channels_) {
    throw std::invalid_argument("rrdb: expected " + std::to_string(channels_) + " channels, got " + shape_string(x.shape()));
  }
  Tensor h = x;
  for (auto& b : blocks) h = b.forward(h);
  Tensor out = x;
  add_inplace(out, h, beta);
  return out;
}

Tensor RRDB::backward(const Tensor& grad_out) {
  Tensor g = scaled(grad_out, beta);
  for (std::size_t i = blocks.size(); i-- > 0;) g = blocks[i].backward(g);
  add_inplace(g, grad_out);
  return g;
}

void RRDB::collect(std::vector<Parameter*>& out) {
  for (auto& b : blocks) b.collect(out);
}

Encoder::Encoder(const EncoderConfig& config) : config_(config) {
  config.validate();
  std::int64_t in = encoder_in_channels(config);
  for (std::size_t i = 0; i < config.channels.size(); ++i) {
    convs.emplace_back("encoder.conv" + std::to_string(i), in, config.channels[i],
                       conv1d_geom(config.kernels[i], config.strides[i], config.paddings[i]));
    in = config.channels[i];
  }
  fc = Linear("encoder.fc", in * config.stage_lengths().back(), config.latent_dim);
}

void Encoder::init(std::mt19937_64& rng) {
  for (auto& c : convs) c.init(rng);
  fc.init(rng);
}

Tensor Encoder::forward(const Tensor& x) {
  if (x.rank() < 2) throw std::invalid_argument("encoder: expected batched input, got " + shape_string(x.shape()));
  const std::int64_t B = x.dim(0);
  Shape expected{B, 2};
  expected.insert(expected.end(), config_.input_shape.begin(), config_.input_shape.end());
  expect_shape(x, expected, "encoder input");
  input_shape_ = x.shape();
  acts_.clear();
  Tensor h = x.reshaped({B, encoder_in_channels(config_), 1, config_.input_shape.back()});
  for (auto& c : convs) {
    h = leaky_relu(c.forward(h));
    acts_.push_back(h);
  }
  return fc.forward(h.reshaped({B, static_cast<std::int64_t>(h.size()) / B}));
}

Tensor Encoder::backward(const Tensor& grad_latent) {
  Tensor g = fc.backward(grad_latent).reshaped(acts_.back().shape());
  for (std::size_t i = convs.size(); i-- > 0;) {
    g = convs[i].backward(leaky_relu_backward(acts_[i], g));
  }
  return g.reshaped(input_shape_);
}

void Encoder::collect(std::vector<Parameter*>& out) {
  for (auto& c : convs) c.collect(out);
  fc.collect(out);
}

Generator::Generator(const GeneratorConfig& config, int latent_dim) : config_(config) {
  config.validate();
  if (latent_dim < 1) throw std::invalid_argument("generator: latent_dim must be positive");
  const int nf = config.base_channels, s = config.start_resolution;
  const ConvGeom g3{3, 3, 1, 1, 1, 1};
  fc = Linear("generator.fc", latent_dim, static_cast<std::int64_t>(nf) * s * s);
  for (int i = 0; i < config.n_rrdb; ++i) {
    trunk.emplace_back("generator.rrdb" + std::to_string(i), nf, config.growth_channels, config.dense_layers,
                       config.kernel_size, config.beta);
  }
  trunk_conv = Conv2d("generator.trunk_conv", nf, nf, g3);
  for (int i = 0; i < config.upsample_stages(); ++i) {
    up_convs.emplace_back("generator.up" + std::to_string(i), nf, nf, g3);
  }
  hr_conv = Conv2d("generator.hr_conv", nf, nf, g3);
  last_conv = Conv2d("generator.last_conv", nf, 1, g3);
}

void Generator::init(std::mt19937_64& rng) {
  fc.init(rng);
  for (auto& b : trunk) b.init(rng);
  trunk_conv.init(rng);
  for (auto& c : up_convs) c.init(rng);
  hr_conv.init(rng);
  last_conv.init(rng);
}

Tensor Generator::trunk_forward(const Tensor& features) {
  Tensor h = features;
  for (auto& b : trunk) h = b.forward(h);
  return h;
}

Tensor Generator::forward(const Tensor& latent) {
  const std::int64_t B = latent.dim(0);
  const int nf = config_.base_channels, s = config_.start_resolution;
  Tensor fea = fc.forward(latent).reshaped({B, nf, s, s});
  Tensor h = fea;
  add_inplace(h, trunk_conv.forward(trunk_forward(fea)));
  up_acts_.clear();
  for (auto& c : up_convs) {
    h = leaky_relu(c.forward(kernels::upsample_nearest2x(h)));
    up_acts_.push_back(h);
  }
  hr_act_ = leaky_relu(hr_conv.forward(h));
  output_ = sigmoid(last_conv.forward(hr_act_));
  return output_;
}

Tensor Generator::backward(const Tensor& grad_out) {
  expect_shape(grad_out, output_.shape(), "generator output gradient");
  Tensor g = last_conv.backward(sigmoid_backward(output_, grad_out));
  g = hr_conv.backward(leaky_relu_backward(hr_act_, g));
  for (std::size_t i = up_convs.size(); i-- > 0;) {
    g = kernels::upsample_nearest2x_backward(up_convs[i].backward(leaky_relu_backward(up_acts_[i], g)));
  }
  Tensor gt = trunk_conv.backward(g);
  for (std::size_t i = trunk.size(); i-- > 0;) gt = trunk[i].backward(gt);
  add_inplace(g, gt);
  const std::int64_t B = g.dim(0);
  return fc.backward(g.reshaped({B, static_cast<std::int64_t>(g.size()) / B}));
}

void Generator::collect(std::vector<Parameter*>& out) {
  fc.collect(out);
  for (auto& b : trunk) b.collect(out);
  trunk_conv.collect(out);
  for (auto& c : up_convs) c.collect(out);
  hr_conv.collect(out);
  last_conv.collect(out);
}

Discriminator::Discriminator(const DiscriminatorConfig& config) : config_(config) {
  config.validate();
  const bool sn = config.spectral_norm;
  const int nf = config.base_channels;
  const ConvGeom down{4, 4, 2, 2, 1, 1}, flat{4, 4, 1, 1, 1, 1};
  int mult = 1;
  convs.emplace_back("discriminator.conv0", 1, nf, down, sn);
  for (int n = 1; n < config.n_layers; ++n) {
    const int prev = mult;
    mult = std::min(1 << n, 8);
    convs.emplace_back("discriminator.conv" + std::to_string(n), nf * prev, nf * mult, down, sn);
  }
  const int prev = mult;
  mult = std::min(1 << config.n_layers, 8);
  convs.emplace_back("discriminator.conv" + std::to_string(config.n_layers), nf * prev, nf * mult, flat, sn);
  convs.emplace_back("discriminator.conv" + std::to_string(config.n_layers + 1), nf * mult, 1, flat, sn);
}

void Discriminator::init(std::mt19937_64& rng) {
  for (auto& c : convs) c.init(rng);
}

Tensor Discriminator::forward(const Tensor& image) {
  if (image.rank() != 4) throw std::invalid_argument("discriminator: expected (B, 1, S, S), got " + shape_string(image.shape()));
  expect_shape(image, {image.dim(0), 1, config_.image_size, config_.image_size}, "discriminator input");
  acts_.clear();
  Tensor h = image;
  for (std::size_t i = 0; i + 1 < convs.size(); ++i) {
    h = leaky_relu(convs[i].forward(h));
    acts_.push_back(h);
  }
  return convs.back().forward(h);
}

Tensor Discriminator::backward(const Tensor& grad_out, bool need_input_grad) {
  Tensor g = convs.back().backward(grad_out);
  for (std::size_t i = convs.size() - 1; i-- > 0;) {
    g = convs[i].backward(leaky_relu_backward(acts_[i], g), need_input_grad || i > 0);
  }
  return g;
}

void Discriminator::power_iteration(int n_iter) {
  for (auto& c : convs) c.power_iteration(n_iter);
}

void Discriminator::collect(std::vector<Parameter*>& out) {
  for (auto& c : convs) c.collect(out);
}

void Discriminator::collect_buffers(std::vector<Buffer>& out) {
  for (auto& c : convs) c.collect_buffers(out);
}

std::int64_t Discriminator::output_size() const {
  std::int64_t s = config_.image_size;
  for (const auto& c : convs) s = c.geom().out_h(s);
  return s;
}

int Discriminator::receptive_field() const {
  int rf = 1;
  for (std::size_t i = convs.size(); i-- > 0;) rf = (rf - 1) * convs[i].geom().sh + convs[i].geom().kh;
  return rf;
}

BatVisionModel::BatVisionModel(const ModelConfig& config, std::uint64_t seed)
    : encoder(config.encoder),
      generator(config.generator, config.encoder.latent_dim),
      discriminator(config.discriminator),
      config_(config) {
  if (config.discriminator.image_size != config.generator.output_resolution) {
    throw std::invalid_argument("discriminator image size must equal the generator output resolution");
  }
  std::mt19937_64 rng_a(derive_seed(seed, 1)), rng_g(derive_seed(seed, 2)), rng_d(derive_seed(seed, 3));
  encoder.init(rng_a);
  generator.init(rng_g);
  discriminator.init(rng_d);
}

Tensor BatVisionModel::predict(const Tensor& inputs) { return generator.forward(encoder.forward(inputs)); }

std::vector<Parameter*> BatVisionModel::generator_parameters() {
  std::vector<Parameter*> out;
  encoder.collect(out);
  generator.collect(out);
  return out;
}

std::vector<Parameter*> BatVisionModel::discriminator_parameters() {
  std::vector<Parameter*> out;
  discriminator.collect(out);
  return out;
}

std::vector<Buffer> BatVisionModel::buffers() {
  std::vector<Buffer> out;
  discriminator.collect_buffers(out);
  return out;
}

}  // namespace bv
