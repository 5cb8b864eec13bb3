#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "batvision/tensor.hpp"

namespace bv {

struct ChirpParams {
  double f_start = 20.0;
  double f_end = 20000.0;
  double duration = 0.003;
  double sample_rate = 44100.0;
};

// The emitted probe signal S. A linear sweep with unit envelope.
struct ChirpSource {
  std::vector<double> samples;
  double sample_rate = 0.0;
  double f_start = 0.0;
  double f_end = 0.0;
  double duration = 0.0;
};

struct BinauralRecording {
  std::vector<double> left;
  std::vector<double> right;
  double sample_rate = 0.0;

  std::size_t length() const { return left.size(); }
};

// Per-ear PHAT-whitened correlation against the chirp, one value per lag.
struct GccFeature {
  std::vector<double> left_corr;
  std::vector<double> right_corr;
  double sample_rate = 0.0;
};

// Magnitude STFT per ear, shape (bins, frames).
struct SpectrogramFeature {
  Tensor left_mag;
  Tensor right_mag;
  int hop = 0;
  int window = 0;
};

enum class Encoding { waveform, spectrogram, gcc };

Encoding parse_encoding(const std::string& name);
std::string to_string(Encoding e);

std::size_t next_pow2(std::size_t n);

// Real FFT of `x` zero-padded to `n` points (n/2 + 1 bins).
std::vector<std::complex<double>> rfft(std::span<const double> x, std::size_t n);
// Inverse of rfft, scaled by 1/n.
std::vector<double> irfft(std::span<const std::complex<double>> spectrum, std::size_t n);

ChirpSource synthesize_chirp(const ChirpParams& params);

// Generalized cross-correlation with phase transform of `x` against `reference`.
// Both are zero-padded to next_pow2(x.size()); the cross-spectrum is divided by
// max(|X S*|, 1e-12 * max|X S*|) before the inverse transform. Index k of the
// result is lag k (circular; lags >= n/2 wrap to negative delays).
std::vector<double> gcc_phat(std::span<const double> x, std::span<const double> reference);
std::vector<double> gcc_phat(std::span<const double> x, const ChirpSource& source);

GccFeature encode_gcc(const BinauralRecording& rec, const ChirpSource& source);

SpectrogramFeature encode_spectrogram(const BinauralRecording& rec, int window, int hop);

// Window of `window_len` samples starting at nominal_start + U with U uniform on
// [-floor(jitter_frac * window_len), +floor(jitter_frac * window_len)].
BinauralRecording augment_window(const BinauralRecording& rec, std::size_t window_len,
                                 std::size_t nominal_start, double jitter_frac,
                                 std::uint64_t seed);

// Adds N(0, variance) noise with variance drawn uniformly from [0, sigma2_max).
std::vector<double> add_noise(std::span<const double> x, double sigma2_max, std::uint64_t seed);
std::vector<double> add_gaussian_noise(std::span<const double> x, double variance,
                                       std::uint64_t seed);
BinauralRecording add_noise(const BinauralRecording& rec, double sigma2_max, std::uint64_t seed);

// Earliest echo in a correlation sequence. The direct path is taken to be the
// global maximum over non-negative lags [0, n/2); the echo is the first local
// maximum past direct + guard whose value reaches rel_threshold times the
// largest value in that search region. Returns -1 when there is none.
std::int64_t first_echo_lag(std::span<const double> corr, std::int64_t guard,
                            double rel_threshold = 0.3);

}  // namespace bv
