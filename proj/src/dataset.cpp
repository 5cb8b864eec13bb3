#include "batvision/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "batvision/image_io.hpp"
#include "batvision/random.hpp"
#include "batvision/wav.hpp"

namespace bv {

namespace fs = std::filesystem;
using nlohmann::json;

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + name + "' (expected train, val or test)");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Target parse_target(const std::string& name) {
  if (name == "depth") return Target::depth;
  if (name == "grayscale") return Target::grayscale;
  throw std::invalid_argument("unknown target '" + name + "' (expected depth or grayscale)");
}

std::string to_string(Target t) { return t == Target::depth ? "depth" : "grayscale"; }

std::vector<std::size_t> DatasetManifest::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].split == s) out.push_back(i);
  }
  return out;
}

namespace {

json vec_json(Vec3 v) { return json::array({v.x, v.y, v.z}); }
Vec3 vec_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

json chirp_json(const ChirpParams& c) {
  return {{"f_start", c.f_start}, {"f_end", c.f_end}, {"duration", c.duration}, {"sample_rate", c.sample_rate}};
}
ChirpParams chirp_from(const json& j) {
  return {j.at("f_start").get<double>(), j.at("f_end").get<double>(), j.at("duration").get<double>(),
          j.at("sample_rate").get<double>()};
}

json meta_json(const SampleMeta& m, const ChirpParams& chirp, const std::string& config_hash) {
  json obstacles = json::array();
  for (const auto& b : m.scene.obstacles) {
    obstacles.push_back({{"lo", vec_json(b.lo)}, {"hi", vec_json(b.hi)}, {"albedo", b.albedo}});
  }
  json j = {
      {"scene_id", m.scene_id},
      {"seed", m.seed},
      {"index", m.index},
      {"nominal_start", m.nominal_start},
      {"window_len", m.window_len},
      {"depth_scale_m", 0.001},
      {"sample_rate", chirp.sample_rate},
      {"chirp", chirp_json(chirp)},
      {"scene",
       {{"size", vec_json(m.scene.size)},
        {"wall_absorption", m.scene.wall_absorption},
        {"speed_of_sound", m.scene.speed_of_sound},
        {"obstacles", obstacles}}},
      {"rig",
       {{"source_pos", vec_json(m.rig.source_pos)},
        {"mic_left_pos", vec_json(m.rig.mic_left_pos)},
        {"mic_right_pos", vec_json(m.rig.mic_right_pos)},
        {"camera_pos", vec_json(m.rig.camera_pos)},
        {"camera_forward", vec_json(m.rig.camera_forward)},
        {"fov_deg", m.rig.fov_deg},
        {"image_size", m.rig.image_size}}},
  };
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  return j;
}

SampleMeta meta_from(const json& j) {
  SampleMeta m;
  m.scene_id = j.at("scene_id").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.index = j.at("index").get<std::size_t>();
  m.nominal_start = j.at("nominal_start").get<std::size_t>();
  m.window_len = j.at("window_len").get<std::size_t>();
  const auto& s = j.at("scene");
  m.scene.size = vec_from(s.at("size"));
  m.scene.wall_absorption = s.at("wall_absorption").get<double>();
  m.scene.speed_of_sound = s.at("speed_of_sound").get<double>();
  for (const auto& b : s.at("obstacles")) {
    m.scene.obstacles.push_back({vec_from(b.at("lo")), vec_from(b.at("hi")), b.at("albedo").get<double>()});
  }
  const auto& r = j.at("rig");
  m.rig.source_pos = vec_from(r.at("source_pos"));
  m.rig.mic_left_pos = vec_from(r.at("mic_left_pos"));
  m.rig.mic_right_pos = vec_from(r.at("mic_right_pos"));
  m.rig.camera_pos = vec_from(r.at("camera_pos"));
  m.rig.camera_forward = vec_from(r.at("camera_forward"));
  m.rig.fov_deg = r.at("fov_deg").get<double>();
  m.rig.image_size = r.at("image_size").get<int>();
  return m;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

DatasetManifest save_samples(const std::vector<SceneSample>& samples, const fs::path& root,
                             const ChirpParams& chirp, const std::string& config_hash) {
  ensure_dir(root / "audio");
  ensure_dir(root / "depth");
  ensure_dir(root / "gray");

  DatasetManifest manifest;
  manifest.root = root;
  manifest.chirp = chirp;
  manifest.sample_rate = chirp.sample_rate;
  PngText text;
  if (!config_hash.empty()) text.push_back({"config_hash", config_hash});

  for (const auto& s : samples) {
    ManifestEntry e;
    e.id = s.meta.scene_id;
    e.wav = "audio/" + e.id + ".wav";
    e.depth_png = "depth/" + e.id + ".png";
    e.gray_png = "gray/" + e.id + ".png";
    e.meta = meta_json(s.meta, chirp, config_hash);

    write_wav(root / e.wav, s.recording, config_hash.empty() ? "" : "config_hash=" + config_hash);

    const int h = static_cast<int>(s.depth.dim(0)), w = static_cast<int>(s.depth.dim(1));
    GrayImage depth{w, h, 16, std::vector<std::uint16_t>(s.depth.size(), 0)};
    for (std::size_t k = 0; k < s.depth.size(); ++k) {
      if (!s.valid_mask[k]) continue;
      const double mm = std::round(s.depth[k] * 1000.0);
      if (mm < 1.0 || mm > 65535.0) {
        throw std::runtime_error("sample " + e.id + ": depth " + std::to_string(s.depth[k]) +
                                 " m not representable in 16-bit millimeters");
      }
      depth.pixels[k] = static_cast<std::uint16_t>(mm);
    }
    write_png(root / e.depth_png, depth, text);
    write_png(root / e.gray_png, to_gray8(s.grayscale.values(), w, h), text);
    manifest.entries.push_back(std::move(e));
  }
  write_manifest(manifest);
  return manifest;
}

void write_manifest(const DatasetManifest& manifest) {
  const fs::path path = manifest.root / kManifestName;
  const fs::path tmp = manifest.root / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    for (const auto& e : manifest.entries) {
      const json line = {{"id", e.id},       {"wav", e.wav},   {"depth_png", e.depth_png},
                         {"gray_png", e.gray_png}, {"split", to_string(e.split)}, {"meta", e.meta}};
      out << line.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

DatasetManifest load_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / kManifestName : path;
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open manifest " + file.string());
  DatasetManifest manifest;
  manifest.root = file.parent_path();
  std::string line;
  std::size_t lineno = 0;
  bool have_chirp = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ManifestEntry e;
    try {
      const json j = json::parse(line);
      e.id = j.at("id").get<std::string>();
      e.wav = j.at("wav").get<std::string>();
      e.depth_png = j.at("depth_png").get<std::string>();
      e.gray_png = j.at("gray_png").get<std::string>();
      e.split = parse_split(j.at("split").get<std::string>());
      e.meta = j.at("meta");
    } catch (const std::exception& ex) {
      throw std::runtime_error(file.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
    const ChirpParams chirp = chirp_from(e.meta.at("chirp"));
    if (!have_chirp) {
      manifest.chirp = chirp;
      manifest.sample_rate = chirp.sample_rate;
      have_chirp = true;
    } else if (chirp.f_start != manifest.chirp.f_start || chirp.f_end != manifest.chirp.f_end ||
               chirp.duration != manifest.chirp.duration || chirp.sample_rate != manifest.chirp.sample_rate) {
      throw std::runtime_error("sample " + e.id + ": chirp parameters differ from the rest of the manifest");
    }
    for (const auto& rel : {e.wav, e.depth_png, e.gray_png}) {
      if (!fs::exists(manifest.root / rel)) {
        throw std::runtime_error("sample " + e.id + ": missing file " + (manifest.root / rel).string());
      }
    }
    manifest.entries.push_back(std::move(e));
  }
  if (manifest.entries.empty()) throw std::runtime_error("manifest " + file.string() + " has no entries");
  return manifest;
}

SceneSample load_sample(const DatasetManifest& manifest, std::size_t entry) {
  const auto& e = manifest.entries.at(entry);
  try {
    SceneSample s;
    s.meta = meta_from(e.meta);
    s.recording = read_wav(manifest.root / e.wav);
    if (s.recording.sample_rate != manifest.sample_rate) throw std::runtime_error("WAV sample rate differs from manifest");
    const auto depth = read_png(manifest.root / e.depth_png);
    const auto gray = read_png(manifest.root / e.gray_png);
    if (depth.bit_depth != 16 || gray.bit_depth != 8) throw std::runtime_error("unexpected PNG bit depth");
    if (depth.width != gray.width || depth.height != gray.height) throw std::runtime_error("depth and grayscale sizes differ");
    const std::int64_t h = depth.height, w = depth.width;
    s.depth = Tensor({h, w});
    s.grayscale = Tensor({h, w});
    s.valid_mask.assign(depth.pixels.size(), 0);
    for (std::size_t k = 0; k < depth.pixels.size(); ++k) {
      s.depth[k] = depth.pixels[k] * 0.001;
      s.valid_mask[k] = depth.pixels[k] > 0 ? 1 : 0;
      s.grayscale[k] = gray.pixels[k] / 255.0;
    }
    return s;
  } catch (const std::exception& ex) {
    throw std::runtime_error("sample " + e.id + ": " + ex.what());
  }
}

DatasetManifest split(DatasetManifest manifest, std::array<double, 3> fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw std::invalid_argument("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split fractions must sum to 1");
  const std::size_t n = manifest.entries.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
  const auto n_val = std::min(n - std::min(n, n_train), static_cast<std::size_t>(std::llround(fractions[1] * n)));
  const std::size_t n_test = n - std::min(n, n_train) - n_val;
  const std::array<std::size_t, 3> sizes{std::min(n, n_train), n_val, n_test};
  for (int k = 0; k < 3; ++k) {
    if (fractions[k] > 0.0 && sizes[k] == 0) {
      throw std::invalid_argument("split " + to_string(static_cast<Split>(k)) + " would be empty with " +
                                  std::to_string(n) + " samples");
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t r = 0; r < n; ++r) {
    const Split s = r < sizes[0] ? Split::train : (r < sizes[0] + sizes[1] ? Split::val : Split::test);
    manifest.entries[order[r]].split = s;
  }
  return manifest;
}

Dataset Dataset::open(const fs::path& manifest_path) {
  Dataset d;
  d.manifest_ = load_manifest(manifest_path);
  d.samples_.resize(d.manifest_.entries.size());
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(d.samples_.size()); ++i) {
    try {
      d.samples_[i] = load_sample(d.manifest_, static_cast<std::size_t>(i));
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw std::runtime_error(error);
  d.chirp_ = synthesize_chirp(d.manifest_.chirp);
  return d;
}

Dataset Dataset::from_samples(std::vector<SceneSample> samples, const ChirpParams& chirp,
                              std::vector<Split> splits) {
  if (splits.size() != samples.size()) throw std::invalid_argument("one split label per sample required");
  Dataset d;
  d.manifest_.chirp = chirp;
  d.manifest_.sample_rate = chirp.sample_rate;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ManifestEntry e;
    e.id = samples[i].meta.scene_id;
    e.split = splits[i];
    d.manifest_.entries.push_back(std::move(e));
  }
  d.samples_ = std::move(samples);
  d.chirp_ = synthesize_chirp(chirp);
  return d;
}

std::int64_t encoded_length(Encoding encoding, std::size_t window_len, const BatchOptions& options) {
  switch (encoding) {
    case Encoding::waveform: return static_cast<std::int64_t>(window_len);
    case Encoding::gcc: return static_cast<std::int64_t>(next_pow2(window_len));
    case Encoding::spectrogram:
      return static_cast<std::int64_t>((window_len - options.spectrogram_window) / options.spectrogram_hop + 1);
  }
  return 0;
}

Shape encoded_shape(Encoding encoding, std::size_t window_len, const BatchOptions& options) {
  if (encoding == Encoding::spectrogram) {
    return {2, options.spectrogram_window / 2 + 1, encoded_length(encoding, window_len, options)};
  }
  return {2, encoded_length(encoding, window_len, options)};
}

Batch load_batch(const Dataset& data, Split split, std::span<const std::size_t> indices,
                 const BatchOptions& options, std::uint64_t seed) {
  if (indices.empty()) throw std::invalid_argument("load_batch: empty index list");
  const auto& samples = data.samples();
  const auto& entries = data.manifest().entries;
  for (std::size_t idx : indices) {
    if (idx >= samples.size()) throw std::out_of_range("load_batch: index " + std::to_string(idx) + " out of range");
    if (entries[idx].split != split) {
      throw std::invalid_argument("load_batch: sample " + entries[idx].id + " is not in split " + to_string(split));
    }
  }
  const auto& first = samples[indices[0]];
  const std::size_t window_len = first.meta.window_len;
  if (options.target == Target::grayscale && first.grayscale.empty()) {
    throw std::invalid_argument("load_batch: dataset has no grayscale targets");
  }
  if (options.target == Target::depth && first.depth.empty()) {
    throw std::invalid_argument("load_batch: dataset has no depth targets");
  }

  const auto B = static_cast<std::int64_t>(indices.size());
  const std::int64_t H = first.depth.dim(0), W = first.depth.dim(1);
  Shape in_shape = encoded_shape(options.encoding, window_len, options);
  in_shape.insert(in_shape.begin(), B);

  Batch batch;
  batch.encoding = options.encoding;
  batch.target = options.target;
  batch.sample_indices.assign(indices.begin(), indices.end());
  batch.inputs = Tensor(in_shape);
  batch.targets = Tensor({B, 1, H, W});
  batch.masks.assign(static_cast<std::size_t>(B * H * W), 0);
  const std::int64_t per_input = shape_numel(in_shape) / B;

  const bool augment = options.augment && options.encoding != Encoding::spectrogram;
  std::string error;
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    try {
      const auto& s = samples[indices[b]];
      if (s.meta.window_len != window_len) throw std::invalid_argument("samples disagree on window length");
      if (s.depth.dim(0) != H || s.depth.dim(1) != W) throw std::invalid_argument("samples disagree on image size");
      const std::uint64_t sample_seed = derive_seed(seed, static_cast<std::uint64_t>(b));
      BinauralRecording window =
          augment_window(s.recording, window_len, s.meta.nominal_start, augment ? options.jitter_frac : 0.0,
                         derive_seed(sample_seed, 0));
      if (augment) window = add_noise(window, options.noise_sigma2_max, derive_seed(sample_seed, 1));

      double* dst = batch.inputs.sample(b);
      switch (options.encoding) {
        case Encoding::waveform:
          std::copy(window.left.begin(), window.left.end(), dst);
          std::copy(window.right.begin(), window.right.end(), dst + window_len);
          break;
        case Encoding::gcc: {
          const auto f = encode_gcc(window, data.chirp());
          std::copy(f.left_corr.begin(), f.left_corr.end(), dst);
          std::copy(f.right_corr.begin(), f.right_corr.end(), dst + f.left_corr.size());
          break;
        }
        case Encoding::spectrogram: {
          const auto f = encode_spectrogram(window, options.spectrogram_window, options.spectrogram_hop);
          std::copy(f.left_mag.storage().begin(), f.left_mag.storage().end(), dst);
          std::copy(f.right_mag.storage().begin(), f.right_mag.storage().end(), dst + f.left_mag.size());
          break;
        }
      }
      (void)per_input;

      double* tgt = batch.targets.sample(b);
      std::uint8_t* mask = batch.masks.data() + b * H * W;
      for (std::int64_t k = 0; k < H * W; ++k) {
        if (options.target == Target::depth) {
          mask[k] = s.valid_mask[k];
          tgt[k] = s.valid_mask[k] ? std::clamp(s.depth[k] / kMaxDepth, 0.0, 1.0) : 1.0;
        } else {
          mask[k] = 1;
          tgt[k] = s.grayscale[k];
        }
      }
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = "sample " + entries[indices[b]].id + ": " + e.what();
    }
  }
  if (!error.empty()) throw std::runtime_error(error);
  return batch;
}

}  // namespace bv
