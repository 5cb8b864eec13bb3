#include "batvision/acoustic_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "batvision/random.hpp"

namespace bv {

double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
Vec3 normalized(Vec3 a) {
  const double n = norm(a);
  if (n == 0.0) throw std::invalid_argument("cannot normalize a zero vector");
  return (1.0 / n) * a;
}

bool Scene::contains(Vec3 p) const {
  for (int a = 0; a < 3; ++a) {
    if (!(p[a] > 0.0 && p[a] < size[a])) return false;
  }
  return true;
}

SensorRig make_rig(Vec3 center, double yaw_rad, double ear_offset, double fov_deg, int image_size) {
  SensorRig rig;
  rig.source_pos = center;
  rig.camera_pos = center;
  rig.camera_forward = {-std::sin(yaw_rad), std::cos(yaw_rad), 0.0};
  const Vec3 right{std::cos(yaw_rad), std::sin(yaw_rad), 0.0};
  rig.mic_left_pos = center - ear_offset * right;
  rig.mic_right_pos = center + ear_offset * right;
  rig.fov_deg = fov_deg;
  rig.image_size = image_size;
  return rig;
}

std::size_t SamplerConfig::pre_roll() const {
  return static_cast<std::size_t>(std::floor(jitter_frac * static_cast<double>(window_len)));
}

std::size_t SamplerConfig::recording_length() const { return 2 * pre_roll() + window_len; }

namespace {

struct Tap {
  std::int64_t delay;
  double amplitude;
};

double path_length(double dx, double dy, double dz) { return std::sqrt(dx * dx + dy * dy + dz * dz); }

void push_tap(std::vector<Tap>& taps, double distance, int order, const Scene& scene,
              double sample_rate) {
  const double gain = std::pow(1.0 - scene.wall_absorption, order);
  taps.push_back({std::llround(distance / scene.speed_of_sound * sample_rate),
                  gain / (4.0 * std::numbers::pi * distance)});
}

// Offsets along one axis for every image index n in [-k, k] and parity q. The
// expressions are written so that exchanging src and mic maps the set onto
// itself exactly (n -> -n for q = 0, unchanged for q = 1).
struct AxisImage {
  double offset;
  int reflections;
};

std::vector<AxisImage> axis_images(double src, double mic, double length, int max_order) {
  std::vector<AxisImage> out;
  for (int n = -max_order; n <= max_order; ++n) {
    const double shift = 2.0 * n * length;
    const int direct_refl = 2 * std::abs(n);
    if (direct_refl <= max_order) out.push_back({(src - mic) + shift, direct_refl});
    const int mirror_refl = std::abs(n - 1) + std::abs(n);
    if (mirror_refl <= max_order) out.push_back({shift - (src + mic), mirror_refl});
  }
  return out;
}

// Face of `box` seen from point p: the axis with the largest positive
// separation. Returns -1 if p is inside every slab.
int facing_axis(const Box& box, Vec3 p, double& plane) {
  int best = -1;
  double best_sep = 0.0;
  for (int a = 0; a < 3; ++a) {
    double sep = 0.0, face = 0.0;
    if (p[a] < box.lo[a]) {
      sep = box.lo[a] - p[a];
      face = box.lo[a];
    } else if (p[a] > box.hi[a]) {
      sep = p[a] - box.hi[a];
      face = box.hi[a];
    } else {
      continue;
    }
    if (sep > best_sep) {
      best_sep = sep;
      best = a;
      plane = face;
    }
  }
  return best;
}

}  // namespace

std::vector<double> impulse_response(const Scene& scene, Vec3 src, Vec3 mic, int max_order,
                                     std::size_t length, double sample_rate) {
  if (max_order < 0) throw std::invalid_argument("max_order must be non-negative");
  if (!scene.contains(src)) throw std::invalid_argument("source outside the room");
  if (!scene.contains(mic)) throw std::invalid_argument("microphone outside the room");
  if (src == mic) throw std::invalid_argument("source and microphone coincide (zero distance)");
  if (!(scene.wall_absorption >= 0.0 && scene.wall_absorption < 1.0)) {
    throw std::invalid_argument("wall absorption must lie in [0, 1)");
  }

  std::vector<Tap> taps;
  const auto xs = axis_images(src.x, mic.x, scene.size.x, max_order);
  const auto ys = axis_images(src.y, mic.y, scene.size.y, max_order);
  const auto zs = axis_images(src.z, mic.z, scene.size.z, max_order);
  for (const auto& ix : xs) {
    for (const auto& iy : ys) {
      if (ix.reflections + iy.reflections > max_order) continue;
      for (const auto& iz : zs) {
        const int order = ix.reflections + iy.reflections + iz.reflections;
        if (order > max_order) continue;
        push_tap(taps, path_length(ix.offset, iy.offset, iz.offset), order, scene, sample_rate);
      }
    }
  }

  if (max_order >= 1) {
    const Vec3 mid = 0.5 * (src + mic);
    for (const auto& box : scene.obstacles) {
      double plane = 0.0;
      const int a = facing_axis(box, mid, plane);
      if (a < 0) continue;
      // Both endpoints must see the same face from outside.
      if ((src[a] - plane) * (mic[a] - plane) <= 0.0) continue;
      double d[3];
      for (int k = 0; k < 3; ++k) d[k] = src[k] - mic[k];
      d[a] = 2.0 * plane - (src[a] + mic[a]);
      push_tap(taps, path_length(d[0], d[1], d[2]), 1, scene, sample_rate);
    }
  }

  // Canonical accumulation order makes the result independent of enumeration order.
  std::sort(taps.begin(), taps.end(), [](const Tap& a, const Tap& b) {
    return a.delay != b.delay ? a.delay < b.delay : a.amplitude < b.amplitude;
  });
  std::vector<double> h(length, 0.0);
  for (const auto& t : taps) {
    if (t.delay >= 0 && static_cast<std::size_t>(t.delay) < length) h[t.delay] += t.amplitude;
  }
  return h;
}

namespace {

std::vector<double> convolve_truncated(const std::vector<double>& h, const std::vector<double>& s,
                                       std::size_t length) {
  std::vector<double> out(length, 0.0);
  for (std::size_t k = 0; k < h.size(); ++k) {
    if (h[k] == 0.0) continue;
    for (std::size_t j = 0; j < s.size() && k + j < length; ++j) out[k + j] += h[k] * s[j];
  }
  return out;
}

}  // namespace

BinauralRecording render_echo(const Scene& scene, const SensorRig& rig, const ChirpSource& chirp,
                              int max_order, std::size_t length) {
  BinauralRecording rec;
  rec.sample_rate = chirp.sample_rate;
  const auto hl =
      impulse_response(scene, rig.source_pos, rig.mic_left_pos, max_order, length, chirp.sample_rate);
  const auto hr = impulse_response(scene, rig.source_pos, rig.mic_right_pos, max_order, length,
                                   chirp.sample_rate);
  rec.left = convolve_truncated(hl, chirp.samples, length);
  rec.right = convolve_truncated(hr, chirp.samples, length);
  return rec;
}

namespace {

constexpr double kWallAlbedo = 0.75;
constexpr double kFloorAlbedo = 0.55;
constexpr double kCeilingAlbedo = 0.9;
constexpr double kFalloffDistance = 3.0;

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int axis = 0;
  double albedo = kWallAlbedo;
};

Hit intersect_room(const Scene& scene, Vec3 p, Vec3 d) {
  Hit hit;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) continue;
    const double bound = d[a] > 0.0 ? scene.size[a] : 0.0;
    const double t = (bound - p[a]) / d[a];
    if (t < hit.t) {
      hit.t = t;
      hit.axis = a;
      hit.albedo = a < 2 ? kWallAlbedo : (d[a] > 0.0 ? kCeilingAlbedo : kFloorAlbedo);
    }
  }
  return hit;
}

void intersect_box(const Box& box, Vec3 p, Vec3 d, Hit& hit) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int axis = 0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (p[a] < box.lo[a] || p[a] > box.hi[a]) return;
      continue;
    }
    double t0 = (box.lo[a] - p[a]) / d[a];
    double t1 = (box.hi[a] - p[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) {
      t_near = t0;
      axis = a;
    }
    t_far = std::min(t_far, t1);
  }
  if (t_near <= t_far && t_near > 0.0 && t_near < hit.t) {
    hit.t = t_near;
    hit.axis = axis;
    hit.albedo = box.albedo;
  }
}

}  // namespace

ViewImages render_views(const Scene& scene, const SensorRig& rig, double max_range) {
  if (!scene.contains(rig.camera_pos)) throw std::invalid_argument("camera outside the room");
  const int n = rig.image_size;
  const Vec3 forward = normalized(rig.camera_forward);
  const Vec3 right = normalized(cross(forward, Vec3{0.0, 0.0, 1.0}));
  const Vec3 up = cross(right, forward);
  const double half = std::tan(0.5 * rig.fov_deg * std::numbers::pi / 180.0);

  ViewImages out;
  out.depth = Tensor({n, n});
  out.grayscale = Tensor({n, n});
  out.valid.assign(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    const double v = (1.0 - 2.0 * (i + 0.5) / n) * half;
    for (int j = 0; j < n; ++j) {
      const double u = (2.0 * (j + 0.5) / n - 1.0) * half;
      // Unit component along the optical axis, so the ray parameter is z-depth.
      const Vec3 d = forward + u * right + v * up;
      Hit hit = intersect_room(scene, rig.camera_pos, d);
      for (const auto& box : scene.obstacles) intersect_box(box, rig.camera_pos, d, hit);

      const double range = hit.t * norm(d);
      const double cos_incidence = std::abs(d[hit.axis]) / norm(d);
      const double falloff = 1.0 / (1.0 + (range / kFalloffDistance) * (range / kFalloffDistance));
      const std::size_t k = static_cast<std::size_t>(i) * n + j;
      out.depth[k] = hit.t;
      out.grayscale[k] = std::clamp(hit.albedo * cos_incidence * falloff, 0.0, 1.0);
      out.valid[k] = hit.t <= max_range ? 1 : 0;
    }
  }
  return out;
}

namespace {

double uniform(std::mt19937_64& rng, const std::array<double, 2>& range) {
  if (range[0] == range[1]) return range[0];
  return std::uniform_real_distribution<double>(range[0], range[1])(rng);
}

bool boxes_overlap(const Box& a, const Box& b) {
  for (int k = 0; k < 3; ++k) {
    if (a.hi[k] <= b.lo[k] || b.hi[k] <= a.lo[k]) return false;
  }
  return true;
}

// Rooms and rig poses are drawn so that every surface nearer than the front
// wall lies inside the field of view: the rig sits in the back half of the
// room facing +y (small yaw), and obstacles stand in front of it with their
// near face toward the rig.
bool try_sample_scene(const SamplerConfig& cfg, std::mt19937_64& rng, Scene& scene, Vec3& center,
                      double& yaw) {
  scene = Scene{};
  scene.size = {uniform(rng, cfg.room_width), uniform(rng, cfg.room_depth),
                uniform(rng, cfg.room_height)};
  scene.wall_absorption = uniform(rng, cfg.absorption);

  const double clear = cfg.min_clearance;
  if (scene.size.x < 2 * clear || scene.size.y < 2 * clear) return false;
  center.x = uniform(rng, {clear, scene.size.x - clear});
  const double front = uniform(rng, {clear, 0.5 * scene.size.y});
  center.y = scene.size.y - front;
  center.z = uniform(rng, cfg.rig_height);
  if (center.z >= scene.size.z - clear) return false;
  yaw = uniform(rng, {-cfg.max_yaw_deg, cfg.max_yaw_deg}) * std::numbers::pi / 180.0;

  const int count = cfg.obstacle_count[0] == cfg.obstacle_count[1]
                        ? cfg.obstacle_count[0]
                        : std::uniform_int_distribution<int>(cfg.obstacle_count[0],
                                                             cfg.obstacle_count[1])(rng);
  for (int k = 0; k < count; ++k) {
    Box box;
    const double sx = uniform(rng, cfg.obstacle_extent);
    const double sy = uniform(rng, cfg.obstacle_extent);
    const double sz = std::min(uniform(rng, cfg.obstacle_height), scene.size.z - 0.1);
    const double y_lo = center.y + clear;
    const double y_hi = scene.size.y - sy;
    if (y_hi <= y_lo || scene.size.x <= sx) return false;
    box.lo = {uniform(rng, {0.0, scene.size.x - sx}), uniform(rng, {y_lo, y_hi}), 0.0};
    box.hi = {box.lo.x + sx, box.lo.y + sy, sz};
    box.albedo = uniform(rng, {0.4, 1.0});

    double plane = 0.0;
    if (facing_axis(box, center, plane) != 1) return false;
    for (const auto& other : scene.obstacles) {
      if (boxes_overlap(box, other)) return false;
    }
    scene.obstacles.push_back(box);
  }
  return true;
}

}  // namespace

SceneSample generate_sample(const SamplerConfig& cfg, std::uint64_t seed, std::size_t index) {
  const std::uint64_t sample_seed = derive_seed(seed, index);
  std::mt19937_64 rng(sample_seed);
  Scene scene;
  Vec3 center;
  double yaw = 0.0;
  int attempt = 0;
  while (!try_sample_scene(cfg, rng, scene, center, yaw)) {
    if (++attempt >= cfg.max_retries) {
      throw std::runtime_error("scene sampler: no valid placement for sample " +
                               std::to_string(index) + " after " + std::to_string(attempt) +
                               " attempts");
    }
  }

  SceneSample sample;
  sample.meta.seed = sample_seed;
  sample.meta.index = index;
  char id[48];
  std::snprintf(id, sizeof id, "s%05zu-%08llx", index,
                static_cast<unsigned long long>(sample_seed & 0xffffffffULL));
  sample.meta.scene_id = id;
  sample.meta.scene = scene;
  sample.meta.rig = make_rig(center, yaw, cfg.ear_offset, cfg.fov_deg, cfg.image_size);
  sample.meta.nominal_start = cfg.pre_roll();
  sample.meta.window_len = cfg.window_len;

  const ChirpSource chirp = synthesize_chirp(cfg.chirp);
  const std::size_t pre = cfg.pre_roll();
  const std::size_t total = cfg.recording_length();
  const auto echo = render_echo(scene, sample.meta.rig, chirp, cfg.max_order, total - pre);
  sample.recording.sample_rate = chirp.sample_rate;
  sample.recording.left.assign(total, 0.0);
  sample.recording.right.assign(total, 0.0);
  // Stored at float precision so that WAV persistence is lossless.
  for (std::size_t i = 0; i < echo.left.size(); ++i) {
    sample.recording.left[pre + i] = static_cast<float>(echo.left[i]);
    sample.recording.right[pre + i] = static_cast<float>(echo.right[i]);
  }

  auto views = render_views(scene, sample.meta.rig, cfg.max_range);
  sample.depth = std::move(views.depth);
  sample.grayscale = std::move(views.grayscale);
  sample.valid_mask = std::move(views.valid);
  return sample;
}

std::vector<SceneSample> generate_dataset(std::size_t n, const SamplerConfig& config,
                                          std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("generate_dataset: n must be positive");
  std::vector<SceneSample> out(n);
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    try {
      out[i] = generate_sample(config, seed, static_cast<std::size_t>(i));
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw std::runtime_error(error);
  return out;
}

std::array<std::int64_t, 2> first_echo_lags(const SceneSample& sample, const ChirpSource& chirp) {
  const auto window =
      augment_window(sample.recording, sample.meta.window_len, sample.meta.nominal_start, 0.0, 0);
  const auto gcc = encode_gcc(window, chirp);
  constexpr std::int64_t guard = 20;
  return {first_echo_lag(gcc.left_corr, guard), first_echo_lag(gcc.right_corr, guard)};
}

double min_valid_depth(const SceneSample& sample) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < sample.valid_mask.size(); ++k) {
    if (sample.valid_mask[k]) best = std::min(best, sample.depth[k]);
  }
  return best;
}

}  // namespace bv
