#include "batvision/config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bv {

using nlohmann::json;

namespace {

template <typename T, std::size_t N>
json arr(const std::array<T, N>& a) {
  return json(std::vector<T>(a.begin(), a.end()));
}

template <typename T, std::size_t N>
void get_arr(const json& j, std::array<T, N>& out) {
  const auto v = j.get<std::vector<T>>();
  if (v.size() != N) throw std::invalid_argument("expected " + std::to_string(N) + " values");
  std::copy(v.begin(), v.end(), out.begin());
}

json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Sequence: {
      json out = json::array();
      for (const auto& item : node) out.push_back(yaml_to_json(item));
      return out;
    }
    case YAML::NodeType::Map: {
      json out = json::object();
      for (const auto& kv : node) out[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return out;
    }
    case YAML::NodeType::Scalar:
      break;
  }
  const std::string s = node.Scalar();
  if (node.Tag() == "!") return s;  // quoted
  std::int64_t i = 0;
  if (auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), i); ec == std::errc() && p == s.data() + s.size()) {
    return i;
  }
  double d = 0.0;
  if (auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d); ec == std::errc() && p == s.data() + s.size()) {
    return d;
  }
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  if (s == "null" || s == "~") return nullptr;
  return s;
}

// Collects key paths present in `given` but absent from `schema`.
void find_unknown(const json& given, const json& schema, const std::string& prefix, std::vector<std::string>& out) {
  if (!given.is_object() || !schema.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) {
      out.push_back(path);
    } else {
      find_unknown(value, schema.at(key), path, out);
    }
  }
}

void merge_into(json& base, const json& overlay) {
  for (const auto& [key, value] : overlay.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) {
      merge_into(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

}  // namespace

json to_json(const RunConfig& c) {
  const auto& s = c.simulator;
  json j;
  j["seed"] = c.seed;
  j["chirp"] = {{"f_start", c.chirp.f_start},
                {"f_end", c.chirp.f_end},
                {"duration", c.chirp.duration},
                {"sample_rate", c.chirp.sample_rate}};
  j["simulator"] = {{"room_width", arr(s.room_width)},
                    {"room_depth", arr(s.room_depth)},
                    {"room_height", arr(s.room_height)},
                    {"absorption", arr(s.absorption)},
                    {"obstacle_count", arr(s.obstacle_count)},
                    {"obstacle_extent", arr(s.obstacle_extent)},
                    {"obstacle_height", arr(s.obstacle_height)},
                    {"rig_height", arr(s.rig_height)},
                    {"min_clearance", s.min_clearance},
                    {"max_yaw_deg", s.max_yaw_deg},
                    {"ear_offset", s.ear_offset},
                    {"fov_deg", s.fov_deg},
                    {"image_size", s.image_size},
                    {"max_order", s.max_order},
                    {"window_len", s.window_len},
                    {"jitter_frac", s.jitter_frac},
                    {"max_range", s.max_range},
                    {"max_retries", s.max_retries}};
  j["dataset"] = {{"root", c.dataset.root}, {"splits", arr(c.dataset.splits)}};
  j["features"] = {{"encoding", to_string(c.features.encoding)},
                   {"augment", c.features.augment},
                   {"noise_sigma2_max", c.features.noise_sigma2_max},
                   {"spectrogram_window", c.features.spectrogram_window},
                   {"spectrogram_hop", c.features.spectrogram_hop}};
  j["model"]["encoder"] = {{"channels", c.encoder.channels},
                           {"kernels", c.encoder.kernels},
                           {"strides", c.encoder.strides},
                           {"paddings", c.encoder.paddings},
                           {"latent_dim", c.encoder.latent_dim}};
  j["model"]["generator"] = {{"n_rrdb", c.generator.n_rrdb},
                             {"base_channels", c.generator.base_channels},
                             {"growth_channels", c.generator.growth_channels},
                             {"dense_layers", c.generator.dense_layers},
                             {"kernel_size", c.generator.kernel_size},
                             {"beta", c.generator.beta},
                             {"start_resolution", c.generator.start_resolution}};
  j["model"]["discriminator"] = {{"n_layers", c.discriminator.n_layers},
                                 {"base_channels", c.discriminator.base_channels},
                                 {"spectral_norm", c.discriminator.spectral_norm},
                                 {"power_iterations", c.discriminator.power_iterations}};
  const auto& t = c.training;
  j["training"] = {{"lambda", t.lambda},
                   {"lr_g", t.lr_g},
                   {"lr_d", t.lr_d},
                   {"beta1", t.beta1},
                   {"beta2", t.beta2},
                   {"batch_size", t.batch_size},
                   {"max_steps", t.max_steps},
                   {"checkpoint_every", t.checkpoint_every},
                   {"sample_dump_every", t.sample_dump_every},
                   {"target", to_string(t.target)},
                   {"gen_only", t.gen_only},
                   {"out_dir", t.out_dir}};
  j["evaluation"] = {{"split", to_string(c.evaluation.split)}, {"batch_size", c.evaluation.batch_size}};
  return j;
}

RunConfig run_config_from_json(const json& given) {
  if (!given.is_null() && !given.is_object()) throw std::invalid_argument("config: top level must be a mapping");
  json full = to_json(RunConfig{});
  std::vector<std::string> unknown;
  find_unknown(given, full, "", unknown);
  if (!unknown.empty()) throw std::invalid_argument("config: unknown keys: " + join(unknown, ", "));
  if (given.is_object()) merge_into(full, given);

  RunConfig c;
  std::vector<std::string> errors;
  auto field = [&](const std::string& path, auto&& assign) {
    try {
      const json* node = &full;
      std::stringstream ss(path);
      std::string part;
      while (std::getline(ss, part, '.')) node = &node->at(part);
      assign(*node);
    } catch (const std::exception& e) {
      errors.push_back(path + " (" + e.what() + ")");
    }
  };
  field("seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); });
  field("chirp.f_start", [&](const json& v) { c.chirp.f_start = v.get<double>(); });
  field("chirp.f_end", [&](const json& v) { c.chirp.f_end = v.get<double>(); });
  field("chirp.duration", [&](const json& v) { c.chirp.duration = v.get<double>(); });
  field("chirp.sample_rate", [&](const json& v) { c.chirp.sample_rate = v.get<double>(); });
  auto& s = c.simulator;
  field("simulator.room_width", [&](const json& v) { get_arr(v, s.room_width); });
  field("simulator.room_depth", [&](const json& v) { get_arr(v, s.room_depth); });
  field("simulator.room_height", [&](const json& v) { get_arr(v, s.room_height); });
  field("simulator.absorption", [&](const json& v) { get_arr(v, s.absorption); });
  field("simulator.obstacle_count", [&](const json& v) { get_arr(v, s.obstacle_count); });
  field("simulator.obstacle_extent", [&](const json& v) { get_arr(v, s.obstacle_extent); });
  field("simulator.obstacle_height", [&](const json& v) { get_arr(v, s.obstacle_height); });
  field("simulator.rig_height", [&](const json& v) { get_arr(v, s.rig_height); });
  field("simulator.min_clearance", [&](const json& v) { s.min_clearance = v.get<double>(); });
  field("simulator.max_yaw_deg", [&](const json& v) { s.max_yaw_deg = v.get<double>(); });
  field("simulator.ear_offset", [&](const json& v) { s.ear_offset = v.get<double>(); });
  field("simulator.fov_deg", [&](const json& v) { s.fov_deg = v.get<double>(); });
  field("simulator.image_size", [&](const json& v) { s.image_size = v.get<int>(); });
  field("simulator.max_order", [&](const json& v) { s.max_order = v.get<int>(); });
  field("simulator.window_len", [&](const json& v) { s.window_len = v.get<std::size_t>(); });
  field("simulator.jitter_frac", [&](const json& v) { s.jitter_frac = v.get<double>(); });
  field("simulator.max_range", [&](const json& v) { s.max_range = v.get<double>(); });
  field("simulator.max_retries", [&](const json& v) { s.max_retries = v.get<int>(); });
  field("dataset.root", [&](const json& v) { c.dataset.root = v.get<std::string>(); });
  field("dataset.splits", [&](const json& v) { get_arr(v, c.dataset.splits); });
  field("features.encoding", [&](const json& v) { c.features.encoding = parse_encoding(v.get<std::string>()); });
  field("features.augment", [&](const json& v) { c.features.augment = v.get<bool>(); });
  field("features.noise_sigma2_max", [&](const json& v) { c.features.noise_sigma2_max = v.get<double>(); });
  field("features.spectrogram_window", [&](const json& v) { c.features.spectrogram_window = v.get<int>(); });
  field("features.spectrogram_hop", [&](const json& v) { c.features.spectrogram_hop = v.get<int>(); });
  field("model.encoder.channels", [&](const json& v) { c.encoder.channels = v.get<std::vector<int>>(); });
  field("model.encoder.kernels", [&](const json& v) { c.encoder.kernels = v.get<std::vector<int>>(); });
  field("model.encoder.strides", [&](const json& v) { c.encoder.strides = v.get<std::vector<int>>(); });
  field("model.encoder.paddings", [&](const json& v) { c.encoder.paddings = v.get<std::vector<int>>(); });
  field("model.encoder.latent_dim", [&](const json& v) { c.encoder.latent_dim = v.get<int>(); });
  auto& g = c.generator;
  field("model.generator.n_rrdb", [&](const json& v) { g.n_rrdb = v.get<int>(); });
  field("model.generator.base_channels", [&](const json& v) { g.base_channels = v.get<int>(); });
  field("model.generator.growth_channels", [&](const json& v) { g.growth_channels = v.get<int>(); });
  field("model.generator.dense_layers", [&](const json& v) { g.dense_layers = v.get<int>(); });
  field("model.generator.kernel_size", [&](const json& v) { g.kernel_size = v.get<int>(); });
  field("model.generator.beta", [&](const json& v) { g.beta = v.get<double>(); });
  field("model.generator.start_resolution", [&](const json& v) { g.start_resolution = v.get<int>(); });
  auto& d = c.discriminator;
  field("model.discriminator.n_layers", [&](const json& v) { d.n_layers = v.get<int>(); });
  field("model.discriminator.base_channels", [&](const json& v) { d.base_channels = v.get<int>(); });
  field("model.discriminator.spectral_norm", [&](const json& v) { d.spectral_norm = v.get<bool>(); });
  field("model.discriminator.power_iterations", [&](const json& v) { d.power_iterations = v.get<int>(); });
  auto& t = c.training;
  field("training.lambda", [&](const json& v) { t.lambda = v.get<double>(); });
  field("training.lr_g", [&](const json& v) { t.lr_g = v.get<double>(); });
  field("training.lr_d", [&](const json& v) { t.lr_d = v.get<double>(); });
  field("training.beta1", [&](const json& v) { t.beta1 = v.get<double>(); });
  field("training.beta2", [&](const json& v) { t.beta2 = v.get<double>(); });
  field("training.batch_size", [&](const json& v) { t.batch_size = v.get<int>(); });
  field("training.max_steps", [&](const json& v) { t.max_steps = v.get<std::int64_t>(); });
  field("training.checkpoint_every", [&](const json& v) { t.checkpoint_every = v.get<std::int64_t>(); });
  field("training.sample_dump_every", [&](const json& v) { t.sample_dump_every = v.get<std::int64_t>(); });
  field("training.target", [&](const json& v) { t.target = parse_target(v.get<std::string>()); });
  field("training.gen_only", [&](const json& v) { t.gen_only = v.get<bool>(); });
  field("training.out_dir", [&](const json& v) { t.out_dir = v.get<std::string>(); });
  field("evaluation.split", [&](const json& v) { c.evaluation.split = parse_split(v.get<std::string>()); });
  field("evaluation.batch_size", [&](const json& v) { c.evaluation.batch_size = v.get<int>(); });
  if (!errors.empty()) throw std::invalid_argument("config: invalid values: " + join(errors, "; "));
  c.validate();
  return c;
}

void RunConfig::validate() const {
  std::vector<std::string> bad;
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  require(chirp.duration > 0 && chirp.f_start > 0 && chirp.f_start <= chirp.f_end &&
              chirp.f_end <= chirp.sample_rate / 2,
          "chirp (need 0 < f_start <= f_end <= sample_rate/2 and duration > 0)");
  const auto& s = simulator;
  for (const auto& [name, r] : {std::pair{"room_width", s.room_width}, {"room_depth", s.room_depth},
                                {"room_height", s.room_height}, {"absorption", s.absorption},
                                {"obstacle_extent", s.obstacle_extent}, {"obstacle_height", s.obstacle_height},
                                {"rig_height", s.rig_height}}) {
    require(r[0] <= r[1], std::string("simulator.") + name + " (range reversed)");
  }
  require(s.absorption[0] >= 0 && s.absorption[1] < 1, "simulator.absorption (must lie in [0, 1))");
  require(s.obstacle_count[0] >= 0 && s.obstacle_count[0] <= s.obstacle_count[1], "simulator.obstacle_count");
  require(s.image_size > 0, "simulator.image_size");
  require(s.window_len > 0, "simulator.window_len");
  require(s.jitter_frac >= 0 && s.jitter_frac < 1, "simulator.jitter_frac");
  require(s.max_order >= 0, "simulator.max_order");
  require(s.max_retries > 0, "simulator.max_retries");
  double split_sum = 0.0;
  for (double f : dataset.splits) {
    require(f >= 0, "dataset.splits (negative fraction)");
    split_sum += f;
  }
  require(std::abs(split_sum - 1.0) < 1e-9, "dataset.splits (must sum to 1)");
  require(features.noise_sigma2_max >= 0, "features.noise_sigma2_max");
  require(features.spectrogram_window > 0 && features.spectrogram_hop > 0 &&
              static_cast<std::size_t>(features.spectrogram_window) <= s.window_len,
          "features.spectrogram_window/hop");
  require(training.lambda >= 0, "training.lambda (must be >= 0)");
  require(training.lr_g >= 0, "training.lr_g (must be >= 0)");
  require(training.lr_d >= 0, "training.lr_d (must be >= 0)");
  require(training.beta1 >= 0 && training.beta1 < 1, "training.beta1");
  require(training.beta2 >= 0 && training.beta2 < 1, "training.beta2");
  require(training.batch_size >= 1, "training.batch_size (must be >= 1)");
  require(training.max_steps >= 0, "training.max_steps");
  require(training.checkpoint_every >= 0, "training.checkpoint_every");
  require(training.sample_dump_every >= 0, "training.sample_dump_every");
  require(!(training.gen_only && training.target == Target::grayscale),
          "training.gen_only (grayscale targets are trained with the GAN objective)");
  require(evaluation.batch_size >= 1, "evaluation.batch_size");
  if (!bad.empty()) throw std::invalid_argument("config: invalid values: " + join(bad, "; "));
  try {
    const ModelConfig m = model();
    m.encoder.validate();
    m.generator.validate();
    m.discriminator.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("config: model: ") + e.what());
  }
}

SamplerConfig RunConfig::sampler() const {
  SamplerConfig s = simulator;
  s.chirp = chirp;
  return s;
}

BatchOptions RunConfig::batch_options(bool augment) const {
  BatchOptions o;
  o.encoding = features.encoding;
  o.target = training.target;
  o.augment = augment && features.augment;
  o.jitter_frac = simulator.jitter_frac;
  o.noise_sigma2_max = features.noise_sigma2_max;
  o.spectrogram_window = features.spectrogram_window;
  o.spectrogram_hop = features.spectrogram_hop;
  return o;
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.encoder = default_encoder_config(features.encoding, simulator.window_len, features.spectrogram_window,
                                     features.spectrogram_hop);
  if (!encoder.channels.empty()) m.encoder.channels = encoder.channels;
  if (!encoder.kernels.empty()) m.encoder.kernels = encoder.kernels;
  if (!encoder.strides.empty()) m.encoder.strides = encoder.strides;
  if (!encoder.paddings.empty()) m.encoder.paddings = encoder.paddings;
  const std::size_t stages = m.encoder.channels.size();
  auto fit = [stages](std::vector<int>& v) {
    if (v.size() != stages && !v.empty()) v.resize(stages, v.back());
  };
  if (encoder.kernels.empty()) fit(m.encoder.kernels);
  if (encoder.strides.empty()) fit(m.encoder.strides);
  if (encoder.paddings.empty()) fit(m.encoder.paddings);
  m.encoder.latent_dim = encoder.latent_dim;
  m.generator.n_rrdb = generator.n_rrdb;
  m.generator.base_channels = generator.base_channels;
  m.generator.growth_channels = generator.growth_channels;
  m.generator.dense_layers = generator.dense_layers;
  m.generator.kernel_size = generator.kernel_size;
  m.generator.beta = generator.beta;
  m.generator.start_resolution = generator.start_resolution;
  m.generator.output_resolution = simulator.image_size;
  m.discriminator.n_layers = discriminator.n_layers;
  m.discriminator.base_channels = discriminator.base_channels;
  m.discriminator.spectral_norm = discriminator.spectral_norm;
  m.discriminator.power_iterations = discriminator.power_iterations;
  m.discriminator.image_size = simulator.image_size;
  return m;
}

RunConfig parse_run_config(const std::string& yaml_text, const std::vector<std::string>& overrides) {
  json given;
  try {
    given = yaml_to_json(YAML::Load(yaml_text));
  } catch (const YAML::Exception& e) {
    throw std::invalid_argument(std::string("config: YAML parse error: ") + e.what());
  }
  if (given.is_null()) given = json::object();
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("config: override '" + item + "' is not key=value");
    json* node = &given;
    std::stringstream ss(item.substr(0, eq));
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object()) (*node)[parts[i]] = json::object();
      node = &(*node)[parts[i]];
    }
    try {
      (*node)[parts.back()] = yaml_to_json(YAML::Load(item.substr(eq + 1)));
    } catch (const YAML::Exception& e) {
      throw std::invalid_argument("config: override '" + item + "': " + e.what());
    }
  }
  return run_config_from_json(given);
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), overrides);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const RunConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(config).dump())));
  return buf;
}

}  // namespace bv
