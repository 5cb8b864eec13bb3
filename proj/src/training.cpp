#include "batvision/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <random>

#include "batvision/file_util.hpp"
#include "batvision/image_io.hpp"
#include "batvision/losses.hpp"
#include "batvision/random.hpp"

namespace bv {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kInitStream = 101;
constexpr std::uint64_t kOrderStream = 102;
constexpr std::uint64_t kAugmentStream = 103;
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_finite(double v, const char* term, std::int64_t step) {
  if (!std::isfinite(v)) {
    throw std::runtime_error(std::string("non-finite ") + term + " loss at step " + std::to_string(step));
  }
}

Tensor concat_batch(const Tensor& a, const Tensor& b) {
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  Tensor out(shape);
  std::copy(a.storage().begin(), a.storage().end(), out.data());
  std::copy(b.storage().begin(), b.storage().end(), out.data() + a.size());
  return out;
}

Tensor batch_slice(const Tensor& t, std::int64_t begin, std::int64_t count) {
  Shape shape = t.shape();
  shape[0] = count;
  return Tensor(shape, std::vector<double>(t.sample(begin), t.sample(begin) + shape_numel(shape)));
}

std::vector<std::pair<std::string, Tensor*>> checkpoint_tensors(TrainState& s) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto* p : s.model->generator_parameters()) out.emplace_back(p->name, &p->value);
  for (auto* p : s.model->discriminator_parameters()) out.emplace_back(p->name, &p->value);
  for (const auto& b : s.model->buffers()) out.emplace_back(b.name, b.tensor);
  for (auto [prefix, opt] : {std::pair{"adam_g", &s.opt_g}, {"adam_d", &s.opt_d}}) {
    const auto& params = opt->parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      out.emplace_back(std::string(prefix) + ".m." + params[k]->name, &opt->first_moments()[k]);
      out.emplace_back(std::string(prefix) + ".v." + params[k]->name, &opt->second_moments()[k]);
    }
  }
  return out;
}

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double null_to_nan(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

}  // namespace

TrainState::TrainState(const RunConfig& cfg)
    : config(cfg),
      config_hash(bv::config_hash(cfg)),
      model(std::make_unique<BatVisionModel>(cfg.model(), derive_seed(cfg.seed, kInitStream))),
      opt_g(model->generator_parameters(), {cfg.training.lr_g, cfg.training.beta1, cfg.training.beta2, 1e-8}),
      opt_d(model->discriminator_parameters(), {cfg.training.lr_d, cfg.training.beta1, cfg.training.beta2, 1e-8}) {}

HistoryRow train_step(TrainState& state, const Batch& batch) {
  const auto& cfg = state.config.training;
  if (batch.encoding != state.config.features.encoding) {
    throw std::invalid_argument("train_step: batch encoding " + to_string(batch.encoding) +
                                " does not match configured " + to_string(state.config.features.encoding));
  }
  if (batch.target != cfg.target) throw std::invalid_argument("train_step: batch target does not match configuration");
  auto& m = *state.model;
  const std::int64_t B = batch.size();
  HistoryRow row{state.step + 1, kNaN, kNaN, 0.0};

  const Tensor fake = m.generator.forward(m.encoder.forward(batch.inputs));

  if (!cfg.gen_only) {
    m.discriminator.power_iteration(m.config().discriminator.power_iterations);
    state.opt_d.zero_grad();
    // D has no cross-sample coupling, so real and fake are scored in one pass.
    const Tensor scores = m.discriminator.forward(concat_batch(batch.targets, fake));
    const DLoss d = lsgan_d_loss(batch_slice(scores, 0, B), batch_slice(scores, B, B));
    require_finite(d.value, "discriminator", row.step);
    m.discriminator.backward(concat_batch(d.grad_real, d.grad_fake), false);
    state.opt_d.step();
    row.d_loss = d.value;
  }

  state.opt_g.zero_grad();
  const LossValue l1 = masked_l1(fake, batch.targets, batch.masks);
  require_finite(l1.value, "L1", row.step);
  row.l1 = l1.value;
  Tensor grad_fake = l1.grad;
  if (!cfg.gen_only) {
    const LossValue adv = lsgan_g_loss(m.discriminator.forward(fake));
    require_finite(adv.value, "generator adversarial", row.step);
    row.g_adv = adv.value;
    if (cfg.lambda != 0.0) add_inplace(grad_fake, m.discriminator.backward(adv.grad), cfg.lambda);
  }
  m.encoder.backward(m.generator.backward(grad_fake));
  state.opt_g.step();

  state.step = row.step;
  state.history.push_back(row);
  return row;
}

std::vector<std::size_t> batch_indices(const std::vector<std::size_t>& train, std::int64_t step, int batch_size,
                                       std::uint64_t seed) {
  if (train.empty()) throw std::invalid_argument("batch_indices: empty training split");
  if (batch_size < 1 || step < 0) throw std::invalid_argument("batch_indices: invalid step or batch size");
  const auto n = static_cast<std::int64_t>(train.size());
  std::vector<std::size_t> out;
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> perm;
  for (std::int64_t k = 0; k < batch_size; ++k) {
    const std::int64_t pos = step * batch_size + k;
    const std::int64_t epoch = pos / n;
    if (epoch != cached_epoch) {
      perm = train;
      std::mt19937_64 rng(derive_seed(seed, kOrderStream, static_cast<std::uint64_t>(epoch)));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

void write_history_csv(const TrainState& state, const fs::path& path) {
  std::string text = "# config_hash " + state.config_hash + "\nstep,d_loss,g_adv,l1\n";
  char buf[128];
  auto fmt = [&](double v) -> std::string {
    if (!std::isfinite(v)) return "";
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  for (const auto& r : state.history) {
    text += std::to_string(r.step) + "," + fmt(r.d_loss) + "," + fmt(r.g_adv) + "," + fmt(r.l1) + "\n";
  }
  atomic_write(path, text);
}

void write_prediction_grid(TrainState& state, const Dataset& data, Split split, std::size_t count,
                           const fs::path& path) {
  auto idx = data.indices(split);
  if (idx.empty()) throw std::invalid_argument("prediction grid: split " + to_string(split) + " is empty");
  idx.resize(std::min(count, idx.size()));
  const Batch batch = load_batch(data, split, idx, state.config.batch_options(false), 0);
  const Tensor pred = state.model->predict(batch.inputs);
  const int H = static_cast<int>(batch.targets.dim(2)), W = static_cast<int>(batch.targets.dim(3));
  std::vector<GrayImage> tiles;
  for (std::int64_t b = 0; b < batch.size(); ++b) {
    tiles.push_back(to_gray8({batch.targets.sample(b), static_cast<std::size_t>(H * W)}, W, H));
    tiles.push_back(to_gray8({pred.sample(b), static_cast<std::size_t>(H * W)}, W, H));
  }
  write_png(path, mosaic(tiles, 2), {{"config_hash", state.config_hash}, {"step", std::to_string(state.step)}});
}

void train_loop(TrainState& state, const Dataset& data, const TrainLoopOptions& options) {
  const auto& cfg = state.config.training;
  const auto train = data.indices(Split::train);
  if (train.empty()) throw std::invalid_argument("train_loop: training split is empty");
  const std::int64_t until = options.until_step >= 0 ? options.until_step : cfg.max_steps;
  const bool write = !options.out_dir.empty();
  if (write) fs::create_directories(options.out_dir / "samples");
  const BatchOptions batch_opts = state.config.batch_options(true);

  auto checkpoint = [&] {
    if (!write) return;
    save_checkpoint(state, options.out_dir / kCheckpointName);
    write_history_csv(state, options.out_dir / "history.csv");
  };
  while (state.step < until && !(options.stop && options.stop->load())) {
    const auto idx = batch_indices(train, state.step, cfg.batch_size, state.config.seed);
    const Batch batch = load_batch(data, Split::train, idx, batch_opts,
                                   derive_seed(state.config.seed, kAugmentStream, static_cast<std::uint64_t>(state.step)));
    const HistoryRow row = train_step(state, batch);
    if (options.on_step) options.on_step(row);
    if (write && cfg.sample_dump_every > 0 && state.step % cfg.sample_dump_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "step_%06lld.png", static_cast<long long>(state.step));
      write_prediction_grid(state, data, Split::train, 4, options.out_dir / "samples" / name);
    }
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0) checkpoint();
  }
  checkpoint();
}

void save_checkpoint(const TrainState& const_state, const fs::path& path) {
  auto& state = const_cast<TrainState&>(const_state);
  const auto tensors = checkpoint_tensors(state);
  json header;
  header["format"] = "batvision-checkpoint";
  header["config"] = to_json(state.config);
  header["config_hash"] = state.config_hash;
  header["step"] = state.step;
  header["adam_g_steps"] = state.opt_g.steps();
  header["adam_d_steps"] = state.opt_d.steps();
  json history = json::array();
  for (const auto& r : state.history) {
    history.push_back({r.step, nan_to_null(r.d_loss), nan_to_null(r.g_adv), nan_to_null(r.l1)});
  }
  header["history"] = history;
  json entries = json::array();
  for (const auto& [name, t] : tensors) entries.push_back({{"name", name}, {"shape", t->shape()}});
  header["tensors"] = entries;

  const std::string head = header.dump();
  std::string bytes = "BVCK";
  auto put = [&](const void* p, std::size_t n) { bytes.append(static_cast<const char*>(p), n); };
  put(&kCheckpointVersion, 4);
  const std::uint64_t head_len = head.size();
  put(&head_len, 8);
  bytes += head;
  for (const auto& [name, t] : tensors) put(t->data(), t->size() * sizeof(double));
  atomic_write(path, bytes);
}

std::unique_ptr<TrainState> load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) { return std::runtime_error("invalid checkpoint " + path.string() + ": " + why); };
  if (bytes.size() < 16 || bytes.compare(0, 4, "BVCK") != 0) throw fail("bad magic");
  std::uint32_t version = 0;
  std::uint64_t head_len = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&head_len, bytes.data() + 8, 8);
  if (version != kCheckpointVersion) throw fail("unsupported version " + std::to_string(version));
  if (16 + head_len > bytes.size()) throw fail("truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(16, head_len));
  } catch (const std::exception& e) {
    throw fail(std::string("header: ") + e.what());
  }
  auto state = std::make_unique<TrainState>(run_config_from_json(header.at("config")));
  if (state->config_hash != header.at("config_hash").get<std::string>()) throw fail("config hash mismatch");
  state->step = header.at("step").get<std::int64_t>();
  state->opt_g.set_steps(header.at("adam_g_steps").get<std::int64_t>());
  state->opt_d.set_steps(header.at("adam_d_steps").get<std::int64_t>());
  for (const auto& r : header.at("history")) {
    state->history.push_back({r.at(0).get<std::int64_t>(), null_to_nan(r.at(1)), null_to_nan(r.at(2)), null_to_nan(r.at(3))});
  }

  std::map<std::string, Tensor*> targets;
  for (const auto& [name, t] : checkpoint_tensors(*state)) targets[name] = t;
  std::size_t offset = 16 + head_len;
  std::size_t loaded = 0;
  for (const auto& e : header.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const auto it = targets.find(name);
    if (it == targets.end()) throw fail("unexpected tensor " + name);
    if (it->second->shape() != shape) {
      throw fail("tensor " + name + " has shape " + shape_string(shape) + ", model expects " +
                 shape_string(it->second->shape()));
    }
    const std::size_t n = it->second->size() * sizeof(double);
    if (offset + n > bytes.size()) throw fail("truncated data for " + name);
    std::memcpy(it->second->data(), bytes.data() + offset, n);
    offset += n;
    ++loaded;
  }
  if (loaded != targets.size()) throw fail("missing tensors");
  if (offset != bytes.size()) throw fail("trailing bytes");
  return state;
}

}  // namespace bv
