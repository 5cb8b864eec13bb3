#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "batvision/dataset.hpp"
#include "batvision/model.hpp"
#include "batvision/tensor.hpp"

namespace bv {

inline constexpr std::array<double, 3> kDeltaThresholds{1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25};

// Predicted depths are clamped to at least 1 mm before the log and ratio terms.
inline constexpr double kMinPredictedDepth = 1e-3;

struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::int64_t n_pixels = 0;
};

// Pooled over every valid pixel of every sample. per_sample entries without
// valid pixels have n_pixels = 0 and NaN values.
struct MetricReport : DepthMetrics {
  std::vector<DepthMetrics> per_sample;
};

// preds and gts share a shape whose leading axis indexes samples; masks has
// one entry per element. Throws std::invalid_argument on mismatched shapes,
// on non-positive or non-finite depth under the mask, and when no pixel is valid.
MetricReport evaluate_depth(const Tensor& preds, const Tensor& gts, const std::vector<std::uint8_t>& masks,
                            const std::array<double, 3>& thresholds = kDeltaThresholds);

struct ModelEvaluation {
  Split split = Split::test;
  Target target = Target::depth;
  std::vector<std::string> sample_ids;
  double l1 = 0.0;  // masked L1 in normalized units, pooled over pixels
  std::optional<MetricReport> depth_m;           // meters
  std::optional<MetricReport> depth_normalized;  // depth / kMaxDepth
};

using Predictor = std::function<Tensor(const Tensor& inputs)>;

// Runs `predict` over a whole split without augmentation, in order.
ModelEvaluation evaluate_predictor(const Dataset& data, Split split, const BatchOptions& options, int batch_size,
                                   const Predictor& predict);
ModelEvaluation evaluate_model(BatVisionModel& model, const Dataset& data, Split split, const BatchOptions& options,
                               int batch_size);

nlohmann::json to_json(const DepthMetrics& m);
nlohmann::json to_json(const MetricReport& r);
nlohmann::json to_json(const ModelEvaluation& e);

struct EvaluatedModel {
  std::string name;
  Encoding encoding = Encoding::gcc;
  bool gen_only = false;
  ModelEvaluation result;
};

// "Ours + GCC", "Ours + Waveforms", "Ours + Spectrograms".
std::string model_label(Encoding encoding);

// Seven-column depth table (meters), one row per depth model.
std::string depth_table(const std::vector<EvaluatedModel>& models);
// L1 table with Depth Map and Grayscale sections and Gen. Only / GAN columns.
std::string l1_table(const std::vector<EvaluatedModel>& models);

}  // namespace bv
