#include "batvision/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include <json.hpp>

#include "batvision/file_util.hpp"
#include "batvision/signal.hpp"

namespace bv {

namespace {

constexpr std::uint32_t kFeatureVersion = 1;
using nlohmann::json;

}  // namespace

FeatureArchive featurize(const Dataset& data, const BatchOptions& options) {
  const auto& entries = data.manifest().entries;
  if (entries.empty()) throw std::invalid_argument("featurize: dataset is empty");
  BatchOptions opts = options;
  opts.augment = false;
  const std::size_t window_len = data.samples().front().meta.window_len;
  Shape shape = encoded_shape(opts.encoding, window_len, opts);
  const std::int64_t per = shape_numel(shape);
  shape.insert(shape.begin(), static_cast<std::int64_t>(entries.size()));

  FeatureArchive out;
  out.encoding = opts.encoding;
  out.features = Tensor(shape);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::vector<std::size_t> one{i};
    const Batch b = load_batch(data, entries[i].split, one, opts, 0);
    std::copy(b.inputs.storage().begin(), b.inputs.storage().end(), out.features.data() + i * per);
    out.ids.push_back(entries[i].id);
    out.splits.push_back(entries[i].split);
  }
  if (entries.front().meta.contains("config_hash")) {
    out.dataset_config_hash = entries.front().meta["config_hash"].get<std::string>();
  }
  return out;
}

void save_feature_archive(const FeatureArchive& archive, const std::filesystem::path& path) {
  json header{{"format", "batvision-features"},
              {"encoding", to_string(archive.encoding)},
              {"config_hash", archive.config_hash},
              {"dataset_config_hash", archive.dataset_config_hash},
              {"shape", archive.features.shape()},
              {"ids", archive.ids}};
  json splits = json::array();
  for (Split s : archive.splits) splits.push_back(to_string(s));
  header["splits"] = splits;
  const std::string head = header.dump();
  std::string bytes = "BVFT";
  auto put = [&](const void* p, std::size_t n) { bytes.append(static_cast<const char*>(p), n); };
  put(&kFeatureVersion, 4);
  const std::uint64_t head_len = head.size();
  put(&head_len, 8);
  bytes += head;
  put(archive.features.data(), archive.features.size() * sizeof(double));
  atomic_write(path, bytes);
}

FeatureArchive load_feature_archive(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  auto fail = [&](const std::string& why) {
    return std::runtime_error("invalid feature archive " + path.string() + ": " + why);
  };
  if (bytes.size() < 16 || bytes.compare(0, 4, "BVFT") != 0) throw fail("bad magic");
  std::uint32_t version = 0;
  std::uint64_t head_len = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&head_len, bytes.data() + 8, 8);
  if (version != kFeatureVersion) throw fail("unsupported version " + std::to_string(version));
  if (16 + head_len > bytes.size()) throw fail("truncated header");
  FeatureArchive out;
  try {
    const json header = json::parse(bytes.substr(16, head_len));
    out.encoding = parse_encoding(header.at("encoding").get<std::string>());
    out.config_hash = header.at("config_hash").get<std::string>();
    out.dataset_config_hash = header.at("dataset_config_hash").get<std::string>();
    out.ids = header.at("ids").get<std::vector<std::string>>();
    for (const auto& s : header.at("splits")) out.splits.push_back(parse_split(s.get<std::string>()));
    out.features = Tensor(header.at("shape").get<Shape>());
  } catch (const std::exception& e) {
    throw fail(std::string("header: ") + e.what());
  }
  const std::size_t n = out.features.size() * sizeof(double);
  if (16 + head_len + n != bytes.size()) throw fail("data size does not match the header shape");
  if (out.ids.size() != static_cast<std::size_t>(out.features.dim(0)) || out.splits.size() != out.ids.size()) {
    throw fail("record count does not match the header shape");
  }
  std::memcpy(out.features.data(), bytes.data() + 16 + head_len, n);
  return out;
}

GrayImage waveform_gcc_mosaic(const Dataset& data, std::size_t count) {
  const auto& samples = data.samples();
  count = std::min(count, samples.size());
  if (count == 0) throw std::invalid_argument("mosaic: dataset is empty");
  constexpr int kWidth = 256, kHeight = 96;
  std::vector<GrayImage> waves, corrs;
  for (std::size_t i = 0; i < count; ++i) {
    const SceneSample& s = samples[i];
    const BinauralRecording window = augment_window(s.recording, s.meta.window_len, s.meta.nominal_start, 0.0, 0);
    const GccFeature g = encode_gcc(window, data.chirp());
    waves.push_back(plot_signal(window.left, kWidth, kHeight));
    waves.push_back(plot_signal(window.right, kWidth, kHeight));
    // Lags up to the round trip of kMaxDepth, with the direct-path peak clipped
    // to the largest value after it.
    const auto max_lag = static_cast<std::size_t>(2.0 * kMaxDepth / s.meta.scene.speed_of_sound * g.sample_rate);
    for (const auto* corr : {&g.left_corr, &g.right_corr}) {
      std::vector<double> c(corr->begin(), corr->begin() + std::min(max_lag, corr->size() / 2));
      double peak = 0.0;
      for (std::size_t k = std::min<std::size_t>(20, c.size()); k < c.size(); ++k) peak = std::max(peak, std::abs(c[k]));
      if (peak > 0.0) {
        for (double& v : c) v = std::clamp(v, -peak, peak);
      }
      corrs.push_back(plot_signal(c, kWidth, kHeight));
    }
  }
  waves.insert(waves.end(), corrs.begin(), corrs.end());
  return mosaic(waves, static_cast<int>(2 * count), 4);
}

}  // namespace bv
