#include "batvision/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace bv {
namespace {

// Compensated sum: the running error term keeps sums of equal values exact.
struct Accumulator {
  double hi = 0.0;
  double lo = 0.0;

  void add(double x) {
    const double s = hi + x;
    const double bp = s - hi;
    lo += (hi - (s - bp)) + (x - bp);
    hi = s;
  }
  void add(const Accumulator& o) {
    add(o.hi);
    lo += o.lo;
  }
  double mean(double n) const { return (hi + lo) / n; }
};

struct Sums {
  Accumulator abs_rel;
  Accumulator sq_rel;
  Accumulator sq;
  Accumulator sq_log;
  std::array<std::int64_t, 3> within{0, 0, 0};
  std::int64_t n = 0;

  void add(const Sums& o) {
    abs_rel.add(o.abs_rel);
    sq_rel.add(o.sq_rel);
    sq.add(o.sq);
    sq_log.add(o.sq_log);
    for (int k = 0; k < 3; ++k) within[k] += o.within[k];
    n += o.n;
  }

  DepthMetrics finish() const {
    DepthMetrics m;
    m.n_pixels = n;
    if (n == 0) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      m.abs_rel = m.sq_rel = m.rmse = m.rmse_log = m.delta1 = m.delta2 = m.delta3 = nan;
      return m;
    }
    const double count = static_cast<double>(n);
    m.abs_rel = abs_rel.mean(count);
    m.sq_rel = sq_rel.mean(count);
    m.rmse = std::sqrt(sq.mean(count));
    m.rmse_log = std::sqrt(sq_log.mean(count));
    m.delta1 = static_cast<double>(within[0]) / count;
    m.delta2 = static_cast<double>(within[1]) / count;
    m.delta3 = static_cast<double>(within[2]) / count;
    return m;
  }
};

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  // Widths count code points.
  std::size_t points = 0;
  for (unsigned char c : s) points += (c & 0xC0) != 0x80;
  return points >= width ? s : s + std::string(width - points, ' ');
}

std::string join_row(const std::vector<std::string>& cells, const std::vector<std::size_t>& widths) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) line += " | ";
    line += i + 1 < cells.size() ? pad(cells[i], widths[i]) : cells[i];
  }
  while (!line.empty() && line.back() == ' ') line.pop_back();
  return line + "\n";
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

}  // namespace

MetricReport evaluate_depth(const Tensor& preds, const Tensor& gts, const std::vector<std::uint8_t>& masks,
                            const std::array<double, 3>& thresholds) {
  if (preds.shape() != gts.shape()) {
    throw std::invalid_argument("prediction shape " + shape_string(preds.shape()) + " does not match ground truth " +
                                shape_string(gts.shape()));
  }
  if (masks.size() != gts.size()) {
    throw std::invalid_argument("mask has " + std::to_string(masks.size()) + " entries, expected " +
                                std::to_string(gts.size()));
  }
  if (gts.rank() == 0 || gts.empty()) throw std::invalid_argument("empty depth maps");
  const std::int64_t n_samples = gts.dim(0);
  const std::int64_t per = static_cast<std::int64_t>(gts.size()) / n_samples;

  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (!masks[i]) continue;
    const double d = preds[i];
    const double g = gts[i];
    if (!(d > 0.0) || !(g > 0.0) || !std::isfinite(d) || !std::isfinite(g)) {
      throw std::invalid_argument("non-positive depth under mask at sample " + std::to_string(i / per) + ", pixel " +
                                  std::to_string(i % per) + " (pred " + std::to_string(d) + ", gt " +
                                  std::to_string(g) + ")");
    }
  }

  std::vector<Sums> sums(static_cast<std::size_t>(n_samples));
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < n_samples; ++s) {
    Sums acc;
    for (std::int64_t p = s * per; p < (s + 1) * per; ++p) {
      if (!masks[p]) continue;
      const double d = preds[p];
      const double g = gts[p];
      const double diff = d - g;
      const double log_diff = std::log(d) - std::log(g);
      const double ratio = std::max(d / g, g / d);
      acc.abs_rel.add(std::abs(diff) / g);
      acc.sq_rel.add(diff * diff / g);
      acc.sq.add(diff * diff);
      acc.sq_log.add(log_diff * log_diff);
      for (int k = 0; k < 3; ++k) acc.within[k] += ratio < thresholds[k];
      ++acc.n;
    }
    sums[s] = acc;
  }

  MetricReport report;
  Sums total;
  for (const Sums& s : sums) {
    total.add(s);
    report.per_sample.push_back(s.finish());
  }
  if (total.n == 0) throw std::invalid_argument("no valid pixels: every mask is false");
  static_cast<DepthMetrics&>(report) = total.finish();
  return report;
}

ModelEvaluation evaluate_predictor(const Dataset& data, Split split, const BatchOptions& options, int batch_size,
                                   const Predictor& predict) {
  if (batch_size <= 0) throw std::invalid_argument("evaluation batch size must be positive");
  const std::vector<std::size_t> indices = data.indices(split);
  if (indices.empty()) throw std::invalid_argument("split '" + to_string(split) + "' is empty");
  BatchOptions opts = options;
  opts.augment = false;

  ModelEvaluation out;
  out.split = split;
  out.target = opts.target;
  Tensor preds, gts;
  std::vector<std::uint8_t> masks;
  double l1_sum = 0.0;
  std::int64_t l1_count = 0;

  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
    const std::span<const std::size_t> chunk(indices.data() + start, stop - start);
    const Batch batch = load_batch(data, split, chunk, opts, 0);
    const Tensor pred = predict(batch.inputs);
    expect_shape(pred, batch.targets.shape(), "prediction");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (!batch.masks[i]) continue;
      l1_sum += std::abs(pred[i] - batch.targets[i]);
      ++l1_count;
    }
    if (preds.empty()) {
      Shape shape = pred.shape();
      shape[0] = static_cast<std::int64_t>(indices.size());
      preds = Tensor(shape);
      gts = Tensor(shape);
      masks.assign(preds.size(), 0);
    }
    const std::size_t offset = start * (pred.size() / chunk.size());
    std::copy(pred.storage().begin(), pred.storage().end(), preds.storage().begin() + offset);
    std::copy(batch.targets.storage().begin(), batch.targets.storage().end(), gts.storage().begin() + offset);
    std::copy(batch.masks.begin(), batch.masks.end(), masks.begin() + offset);
    for (std::size_t idx : chunk) out.sample_ids.push_back(data.manifest().entries[idx].id);
  }
  if (l1_count == 0) throw std::invalid_argument("no valid pixels in split '" + to_string(split) + "'");
  out.l1 = l1_sum / static_cast<double>(l1_count);

  if (opts.target == Target::depth) {
    const double floor_normalized = kMinPredictedDepth / kMaxDepth;
    Tensor pred_n = preds;
    for (double& v : pred_n.storage()) v = std::max(v, floor_normalized);
    out.depth_normalized = evaluate_depth(pred_n, gts, masks);
    Tensor pred_m = pred_n;
    Tensor gt_m = gts;
    for (double& v : pred_m.storage()) v *= kMaxDepth;
    for (double& v : gt_m.storage()) v *= kMaxDepth;
    out.depth_m = evaluate_depth(pred_m, gt_m, masks);
  }
  return out;
}

ModelEvaluation evaluate_model(BatVisionModel& model, const Dataset& data, Split split, const BatchOptions& options,
                               int batch_size) {
  return evaluate_predictor(data, split, options, batch_size,
                            [&](const Tensor& inputs) { return model.predict(inputs); });
}

nlohmann::json to_json(const DepthMetrics& m) {
  return {{"abs_rel", number_or_null(m.abs_rel)}, {"sq_rel", number_or_null(m.sq_rel)},
          {"rmse", number_or_null(m.rmse)},       {"rmse_log", number_or_null(m.rmse_log)},
          {"delta1", number_or_null(m.delta1)},   {"delta2", number_or_null(m.delta2)},
          {"delta3", number_or_null(m.delta3)},   {"n_pixels", m.n_pixels}};
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j = to_json(static_cast<const DepthMetrics&>(r));
  j["per_sample"] = nlohmann::json::array();
  for (const DepthMetrics& m : r.per_sample) j["per_sample"].push_back(to_json(m));
  return j;
}

nlohmann::json to_json(const ModelEvaluation& e) {
  nlohmann::json j{{"split", to_string(e.split)},
                   {"target", to_string(e.target)},
                   {"n_samples", e.sample_ids.size()},
                   {"sample_ids", e.sample_ids},
                   {"l1", e.l1}};
  j["depth_m"] = e.depth_m ? to_json(*e.depth_m) : nlohmann::json();
  j["depth_normalized"] = e.depth_normalized ? to_json(*e.depth_normalized) : nlohmann::json();
  return j;
}

std::string model_label(Encoding encoding) {
  switch (encoding) {
    case Encoding::waveform:
      return "Ours + Waveforms";
    case Encoding::spectrogram:
      return "Ours + Spectrograms";
    case Encoding::gcc:
      return "Ours + GCC";
  }
  throw std::invalid_argument("unknown encoding");
}

std::string depth_table(const std::vector<EvaluatedModel>& models) {
  const std::vector<std::string> header{"",        "Abs Rel",  "Sq Rel",  "RMSE",
                                        "RMSE Log", "δ<1.25¹", "δ<1.25²", "δ<1.25³"};
  std::vector<std::vector<std::string>> rows;
  for (const EvaluatedModel& m : models) {
    if (!m.result.depth_m) continue;
    const MetricReport& r = *m.result.depth_m;
    rows.push_back({model_label(m.encoding) + (m.gen_only ? " (Gen. Only)" : ""), fmt("%.3f", r.abs_rel),
                    fmt("%.3f", r.sq_rel), fmt("%.3f", r.rmse), fmt("%.3f", r.rmse_log), fmt("%.3f", r.delta1),
                    fmt("%.3f", r.delta2), fmt("%.3f", r.delta3)});
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) {
    for (unsigned char ch : header[c]) widths[c] += (ch & 0xC0) != 0x80;
    for (const auto& row : rows) widths[c] = std::max(widths[c], row[c].size());
  }
  std::string out = "Depth results (meters)\n";
  out += join_row(header, widths);
  for (const auto& row : rows) out += join_row(row, widths);
  return out;
}

std::string l1_table(const std::vector<EvaluatedModel>& models) {
  const std::vector<Encoding> order{Encoding::waveform, Encoding::spectrogram, Encoding::gcc};
  std::map<std::pair<Target, Encoding>, std::array<std::optional<double>, 2>> cells;
  for (const EvaluatedModel& m : models) {
    auto& slot = cells[{m.result.target, m.encoding}][m.gen_only ? 0 : 1];
    if (slot) {
      throw std::invalid_argument("two evaluated models share the L1 table cell of " + model_label(m.encoding) +
                                  (m.gen_only ? " (Gen. Only)" : " (GAN)"));
    }
    slot = m.result.l1;
  }
  auto cell = [](const std::optional<double>& v) { return v ? fmt("%.4f", *v) : std::string("-"); };

  std::size_t label_w = std::string("Arch. + Input").size();
  for (Encoding e : order) label_w = std::max(label_w, model_label(e).size());
  const std::vector<std::size_t> widths{label_w, std::string("Gen. Only").size(), 0};

  std::string out = "L1 loss (normalized units)\n";
  out += join_row({"Arch. + Input", "L1 Loss"}, widths);
  out += join_row({"Depth Map", "Gen. Only", "GAN"}, widths);
  for (Encoding e : order) {
    auto it = cells.find({Target::depth, e});
    if (it != cells.end()) out += join_row({model_label(e), cell(it->second[0]), cell(it->second[1])}, widths);
  }
  out += join_row({"Grayscale", "GAN"}, widths);
  for (Encoding e : order) {
    auto it = cells.find({Target::grayscale, e});
    if (it != cells.end()) out += join_row({model_label(e), cell(it->second[1])}, widths);
  }
  return out;
}

}  // namespace bv
