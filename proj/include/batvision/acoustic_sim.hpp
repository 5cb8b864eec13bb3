#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "batvision/signal.hpp"
#include "batvision/tensor.hpp"

namespace bv {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

double dot(Vec3 a, Vec3 b);
Vec3 cross(Vec3 a, Vec3 b);
double norm(Vec3 a);
Vec3 normalized(Vec3 a);

// Axis-aligned box in room coordinates.
struct Box {
  Vec3 lo;
  Vec3 hi;
  double albedo = 0.7;
};

// Shoebox room spanning [0, size.x] x [0, size.y] x [0, size.z]; z is up.
struct Scene {
  Vec3 size{4.0, 5.0, 3.0};
  std::vector<Box> obstacles;
  double wall_absorption = 0.3;
  double speed_of_sound = 343.0;

  bool contains(Vec3 p) const;
};

struct SensorRig {
  Vec3 source_pos;
  Vec3 mic_left_pos;
  Vec3 mic_right_pos;
  Vec3 camera_pos;
  Vec3 camera_forward{0.0, 1.0, 0.0};
  double fov_deg = 100.0;
  int image_size = 128;
};

// Speaker and camera at `center`, ears offset by +-ear_offset along the camera's
// right axis; yaw rotates the forward axis (+y) about z, positive to the left.
SensorRig make_rig(Vec3 center, double yaw_rad, double ear_offset = 0.07, double fov_deg = 100.0,
                   int image_size = 128);

struct ViewImages {
  Tensor depth;      // (size, size), meters along the camera axis
  Tensor grayscale;  // (size, size), in [0, 1]
  std::vector<std::uint8_t> valid;
};

struct SamplerConfig {
  ChirpParams chirp;
  std::array<double, 2> room_width{3.0, 7.0};
  std::array<double, 2> room_depth{3.0, 8.0};
  std::array<double, 2> room_height{2.4, 3.2};
  std::array<double, 2> absorption{0.2, 0.6};
  std::array<int, 2> obstacle_count{0, 3};
  std::array<double, 2> obstacle_extent{0.3, 1.2};
  std::array<double, 2> obstacle_height{0.4, 1.6};
  std::array<double, 2> rig_height{0.9, 1.4};
  double min_clearance = 0.5;  // rig to front wall, side walls and obstacles
  double max_yaw_deg = 0.0;
  double ear_offset = 0.07;
  double fov_deg = 100.0;
  int image_size = 128;
  int max_order = 3;
  std::size_t window_len = 4410;
  double jitter_frac = 0.3;
  double max_range = 10.0;
  int max_retries = 200;

  // Silence before the chirp; equal to the jitter span so every jittered
  // window stays inside the recording.
  std::size_t pre_roll() const;
  std::size_t recording_length() const;
};

struct SampleMeta {
  std::string scene_id;
  std::uint64_t seed = 0;
  std::size_t index = 0;
  std::size_t nominal_start = 0;
  std::size_t window_len = 0;
  Scene scene;
  SensorRig rig;
};

struct SceneSample {
  BinauralRecording recording;
  Tensor depth;
  Tensor grayscale;
  std::vector<std::uint8_t> valid_mask;
  SampleMeta meta;
};

// Image-source impulse response. Taps land on the nearest sample; each image
// of reflection order k contributes (1 - absorption)^k / (4 pi distance).
// Obstacles add one first-order specular image each, mirrored about the box
// face that faces the source/microphone midpoint.
std::vector<double> impulse_response(const Scene& scene, Vec3 src, Vec3 mic, int max_order,
                                     std::size_t length, double sample_rate);

BinauralRecording render_echo(const Scene& scene, const SensorRig& rig, const ChirpSource& chirp,
                              int max_order, std::size_t length);

ViewImages render_views(const Scene& scene, const SensorRig& rig, double max_range = 10.0);

// Sample i is a pure function of (config, derive_seed(seed, i)).
SceneSample generate_sample(const SamplerConfig& config, std::uint64_t seed, std::size_t index);
std::vector<SceneSample> generate_dataset(std::size_t n, const SamplerConfig& config,
                                          std::uint64_t seed);

// Earliest echo lag (samples) in the unaugmented GCC window of each ear.
std::array<std::int64_t, 2> first_echo_lags(const SceneSample& sample, const ChirpSource& chirp);
// Smallest valid depth in meters.
double min_valid_depth(const SceneSample& sample);

}  // namespace bv
