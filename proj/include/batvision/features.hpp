#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "batvision/dataset.hpp"
#include "batvision/image_io.hpp"

namespace bv {

// Precomputed encoder inputs for every sample of a dataset, in manifest order.
struct FeatureArchive {
  Encoding encoding = Encoding::gcc;
  std::string config_hash;
  std::string dataset_config_hash;
  std::vector<std::string> ids;
  std::vector<Split> splits;
  Tensor features;  // (n, 2, L) or (n, 2, bins, frames)
};

// Nominal windows, no augmentation.
FeatureArchive featurize(const Dataset& data, const BatchOptions& options);

// "BVFT", format version, JSON header, raw doubles. Written atomically.
void save_feature_archive(const FeatureArchive& archive, const std::filesystem::path& path);
FeatureArchive load_feature_archive(const std::filesystem::path& path);

// Left/right waveform plots in the first row and left/right GCC-PHAT plots in
// the second, one column pair per sample, for up to `count` samples.
GrayImage waveform_gcc_mosaic(const Dataset& data, std::size_t count);

}  // namespace bv
