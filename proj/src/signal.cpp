#include "batvision/signal.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <stdexcept>

#include "batvision/random.hpp"

namespace bv {

namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
struct RealPlans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [n, p] : plans_) {
      fftw_destroy_plan(p.forward);
      fftw_destroy_plan(p.inverse);
    }
  }

  RealPlans get(std::size_t n) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    const int len = static_cast<int>(n);
    std::vector<double> real(n);
    std::vector<fftw_complex> cplx(n / 2 + 1);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    RealPlans p;
    p.forward = fftw_plan_dft_r2c_1d(len, real.data(), cplx.data(), flags);
    p.inverse = fftw_plan_dft_c2r_1d(len, cplx.data(), real.data(), flags);
    if (!p.forward || !p.inverse) throw std::runtime_error("fftw planning failed");
    plans_.emplace(n, p);
    return p;
  }

 private:
  std::mutex mutex_;
  std::map<std::size_t, RealPlans> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

}  // namespace

Encoding parse_encoding(const std::string& name) {
  if (name == "waveform") return Encoding::waveform;
  if (name == "spectrogram") return Encoding::spectrogram;
  if (name == "gcc") return Encoding::gcc;
  throw std::invalid_argument("unknown encoding '" + name +
                              "' (expected waveform, spectrogram or gcc)");
}

std::string to_string(Encoding e) {
  switch (e) {
    case Encoding::waveform: return "waveform";
    case Encoding::spectrogram: return "spectrogram";
    case Encoding::gcc: return "gcc";
  }
  return "?";
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::vector<std::complex<double>> rfft(std::span<const double> x, std::size_t n) {
  if (x.size() > n) throw std::invalid_argument("rfft: input longer than transform length");
  std::vector<double> in(n, 0.0);
  std::copy(x.begin(), x.end(), in.begin());
  std::vector<std::complex<double>> out(n / 2 + 1);
  const auto plans = plan_cache().get(n);
  fftw_execute_dft_r2c(plans.forward, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

std::vector<double> irfft(std::span<const std::complex<double>> spectrum, std::size_t n) {
  if (spectrum.size() != n / 2 + 1) throw std::invalid_argument("irfft: spectrum size mismatch");
  // c2r destroys its input.
  std::vector<std::complex<double>> in(spectrum.begin(), spectrum.end());
  std::vector<double> out(n);
  const auto plans = plan_cache().get(n);
  fftw_execute_dft_c2r(plans.inverse, reinterpret_cast<fftw_complex*>(in.data()), out.data());
  const double scale = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= scale;
  return out;
}

ChirpSource synthesize_chirp(const ChirpParams& p) {
  if (!(p.duration > 0.0)) throw std::invalid_argument("chirp duration must be positive");
  if (!(p.sample_rate > 0.0)) throw std::invalid_argument("chirp sample rate must be positive");
  if (p.f_start < 0.0 || p.f_start > p.f_end) {
    throw std::invalid_argument("chirp requires 0 <= f_start <= f_end");
  }
  if (p.f_end > p.sample_rate / 2.0) {
    throw std::invalid_argument("chirp f_end exceeds the Nyquist frequency");
  }
  const auto n = static_cast<std::size_t>(std::llround(p.duration * p.sample_rate));
  if (n == 0) throw std::invalid_argument("chirp shorter than one sample");

  ChirpSource s;
  s.sample_rate = p.sample_rate;
  s.f_start = p.f_start;
  s.f_end = p.f_end;
  s.duration = p.duration;
  s.samples.resize(n);
  const double rate = (p.f_end - p.f_start) / p.duration;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / p.sample_rate;
    const double phase = 2.0 * std::numbers::pi * (p.f_start * t + 0.5 * rate * t * t);
    s.samples[i] = std::sin(phase);
  }
  return s;
}

std::vector<double> gcc_phat(std::span<const double> x, std::span<const double> reference) {
  if (x.size() < reference.size()) {
    throw std::invalid_argument("gcc_phat: signal shorter than the reference");
  }
  const std::size_t n = next_pow2(x.size());
  const auto X = rfft(x, n);
  const auto S = rfft(reference, n);

  std::vector<std::complex<double>> cross(X.size());
  double peak = 0.0;
  for (std::size_t k = 0; k < X.size(); ++k) {
    cross[k] = X[k] * std::conj(S[k]);
    peak = std::max(peak, std::abs(cross[k]));
  }
  if (!(peak > 0.0)) throw std::invalid_argument("gcc_phat: all-zero input, whitening undefined");
  if (!std::isfinite(peak)) throw std::invalid_argument("gcc_phat: non-finite input");

  const double floor = 1e-12 * peak;
  for (auto& c : cross) c /= std::max(std::abs(c), floor);
  return irfft(cross, n);
}

std::vector<double> gcc_phat(std::span<const double> x, const ChirpSource& source) {
  return gcc_phat(x, std::span<const double>(source.samples));
}

GccFeature encode_gcc(const BinauralRecording& rec, const ChirpSource& source) {
  if (rec.sample_rate != source.sample_rate) {
    throw std::invalid_argument("encode_gcc: recording and chirp sample rates differ");
  }
  if (rec.left.size() != rec.right.size()) {
    throw std::invalid_argument("encode_gcc: channel lengths differ");
  }
  GccFeature f;
  f.sample_rate = rec.sample_rate;
  try {
    f.left_corr = gcc_phat(rec.left, source);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("left channel: ") + e.what());
  }
  try {
    f.right_corr = gcc_phat(rec.right, source);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("right channel: ") + e.what());
  }
  return f;
}

namespace {

Tensor stft_magnitude(std::span<const double> x, int window, int hop,
                      std::span<const double> taper) {
  const std::size_t frames = (x.size() - static_cast<std::size_t>(window)) / hop + 1;
  const std::size_t bins = static_cast<std::size_t>(window) / 2 + 1;
  Tensor mag({static_cast<std::int64_t>(bins), static_cast<std::int64_t>(frames)});
  std::vector<double> frame(window);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t start = f * hop;
    for (int i = 0; i < window; ++i) frame[i] = x[start + i] * taper[i];
    const auto spec = rfft(frame, window);
    for (std::size_t b = 0; b < bins; ++b) mag[b * frames + f] = std::abs(spec[b]);
  }
  return mag;
}

}  // namespace

SpectrogramFeature encode_spectrogram(const BinauralRecording& rec, int window, int hop) {
  if (hop <= 0 || window < hop) throw std::invalid_argument("spectrogram requires 0 < hop <= window");
  if (rec.left.size() != rec.right.size()) {
    throw std::invalid_argument("encode_spectrogram: channel lengths differ");
  }
  if (static_cast<std::size_t>(window) > rec.left.size()) {
    throw std::invalid_argument("spectrogram window longer than the signal");
  }
  // Periodic Hann.
  std::vector<double> taper(window);
  for (int i = 0; i < window; ++i) {
    taper[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / window);
  }
  SpectrogramFeature out;
  out.window = window;
  out.hop = hop;
  out.left_mag = stft_magnitude(rec.left, window, hop, taper);
  out.right_mag = stft_magnitude(rec.right, window, hop, taper);
  return out;
}

BinauralRecording augment_window(const BinauralRecording& rec, std::size_t window_len,
                                 std::size_t nominal_start, double jitter_frac,
                                 std::uint64_t seed) {
  if (!(jitter_frac >= 0.0 && jitter_frac < 1.0)) {
    throw std::invalid_argument("jitter fraction must lie in [0, 1)");
  }
  if (window_len == 0) throw std::invalid_argument("window length must be positive");
  const auto span = static_cast<std::int64_t>(std::floor(jitter_frac * window_len));
  const auto nominal = static_cast<std::int64_t>(nominal_start);
  const auto length = static_cast<std::int64_t>(rec.length());
  if (nominal - span < 0 || nominal + span + static_cast<std::int64_t>(window_len) > length) {
    throw std::out_of_range("augment_window: window [" + std::to_string(nominal - span) + ", " +
                            std::to_string(nominal + span + window_len) +
                            ") exceeds recording of " + std::to_string(length) + " samples");
  }
  std::int64_t offset = 0;
  if (span > 0) {
    std::mt19937_64 rng(seed);
    offset = std::uniform_int_distribution<std::int64_t>(-span, span)(rng);
  }
  const auto start = static_cast<std::size_t>(nominal + offset);
  BinauralRecording out;
  out.sample_rate = rec.sample_rate;
  out.left.assign(rec.left.begin() + start, rec.left.begin() + start + window_len);
  out.right.assign(rec.right.begin() + start, rec.right.begin() + start + window_len);
  return out;
}

std::vector<double> add_gaussian_noise(std::span<const double> x, double variance,
                                       std::uint64_t seed) {
  if (!(variance >= 0.0)) throw std::invalid_argument("noise variance must be non-negative");
  std::vector<double> out(x.begin(), x.end());
  if (variance == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, std::sqrt(variance));
  for (double& v : out) v += noise(rng);
  return out;
}

std::vector<double> add_noise(std::span<const double> x, double sigma2_max, std::uint64_t seed) {
  if (!(sigma2_max >= 0.0)) throw std::invalid_argument("sigma2_max must be non-negative");
  if (sigma2_max == 0.0) return {x.begin(), x.end()};
  std::mt19937_64 rng(seed);
  const double variance = std::uniform_real_distribution<double>(0.0, sigma2_max)(rng);
  return add_gaussian_noise(x, variance, derive_seed(seed, 1));
}

BinauralRecording add_noise(const BinauralRecording& rec, double sigma2_max, std::uint64_t seed) {
  BinauralRecording out;
  out.sample_rate = rec.sample_rate;
  out.left = add_noise(rec.left, sigma2_max, derive_seed(seed, 0));
  out.right = add_noise(rec.right, sigma2_max, derive_seed(seed, 1));
  return out;
}

std::int64_t first_echo_lag(std::span<const double> corr, std::int64_t guard,
                            double rel_threshold) {
  const auto half = static_cast<std::int64_t>(corr.size() / 2);
  if (half < 3) return -1;
  std::int64_t direct = 0;
  for (std::int64_t k = 1; k < half; ++k) {
    if (corr[k] > corr[direct]) direct = k;
  }
  const std::int64_t begin = direct + guard + 1;
  if (begin >= half - 1) return -1;
  double best = 0.0;
  for (std::int64_t k = begin; k < half; ++k) best = std::max(best, corr[k]);
  if (!(best > 0.0)) return -1;
  const double level = rel_threshold * best;
  for (std::int64_t k = std::max<std::int64_t>(begin, 1); k + 1 < half; ++k) {
    if (corr[k] >= level && corr[k] >= corr[k - 1] && corr[k] >= corr[k + 1]) return k;
  }
  return -1;
}

}  // namespace bv
