#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "batvision/signal.hpp"
#include "oracles.hpp"

using namespace bv;

namespace {

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<double> random_signal(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = g(rng);
  return x;
}

std::vector<double> circular_shift(const std::vector<double>& x, std::size_t d) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[(i + d) % x.size()] = x[i];
  return out;
}

bool is_local_max(const std::vector<double>& c, std::size_t k) {
  return c[k] >= c[k - 1] && c[k] >= c[k + 1];
}

}  // namespace

TEST_CASE("chirp length and bounds") {
  const auto s = synthesize_chirp({20.0, 20000.0, 0.003, 44100.0});
  CHECK(s.samples.size() == 132);
  for (double v : s.samples) CHECK(std::abs(v) <= 1.0);
  CHECK(s.samples[0] == 0.0);
}

TEST_CASE("degenerate chirp is a pure tone") {
  const auto s = synthesize_chirp({100.0, 100.0, 1.0, 1000.0});
  REQUIRE(s.samples.size() == 1000);
  // sin(2 pi 100 t) crosses zero every 5 ms, i.e. every 5 samples at 1 kHz.
  for (std::size_t i = 0; i < s.samples.size(); i += 5) CHECK(std::abs(s.samples[i]) < 1e-9);
  CHECK(std::abs(s.samples[2]) > 0.5);
}

TEST_CASE("chirp rejects invalid configurations") {
  CHECK_THROWS_AS(synthesize_chirp({20.0, 20000.0, 0.0, 44100.0}), std::invalid_argument);
  CHECK_THROWS_AS(synthesize_chirp({20.0, 20000.0, -1.0, 44100.0}), std::invalid_argument);
  CHECK_THROWS_AS(synthesize_chirp({20.0, 30000.0, 0.003, 44100.0}), std::invalid_argument);
  CHECK_THROWS_AS(synthesize_chirp({500.0, 100.0, 0.003, 44100.0}), std::invalid_argument);
}

TEST_CASE("chirp instantaneous frequency follows the linear ramp") {
  const ChirpParams p{1000.0, 5000.0, 0.05, 44100.0};
  const auto s = synthesize_chirp(p);
  const std::size_t n = s.samples.size();
  // Analytic signal by direct DFT: keep DC, double positive bins, drop negative.
  const auto X = oracle::dft(s.samples, n);
  std::vector<std::complex<double>> A(n, 0.0);
  A[0] = X[0];
  for (std::size_t k = 1; k < (n + 1) / 2; ++k) A[k] = 2.0 * X[k];
  if (n % 2 == 0) A[n / 2] = X[n / 2];
  std::vector<double> phase(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::complex<double> acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / n;
      acc += A[k] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    phase[t] = std::arg(acc);
  }
  const double rate = (p.f_end - p.f_start) / p.duration;
  for (std::size_t t = n / 10; t + n / 10 < n; ++t) {
    double dphi = phase[t + 1] - phase[t];
    while (dphi < 0) dphi += 2.0 * std::numbers::pi;
    while (dphi >= 2.0 * std::numbers::pi) dphi -= 2.0 * std::numbers::pi;
    const double measured = dphi * p.sample_rate / (2.0 * std::numbers::pi);
    const double expected = p.f_start + rate * (t + 0.5) / p.sample_rate;
    CHECK(std::abs(measured - expected) <= 0.01 * expected);
  }
}

TEST_CASE("gcc_phat of the chirp with itself is a unit impulse") {
  const auto s = synthesize_chirp({});
  const auto corr = gcc_phat(s.samples, s);
  CHECK(corr.size() == next_pow2(s.samples.size()));
  CHECK(argmax(corr) == 0);
  double mass = 0.0;
  for (double v : corr) mass += std::abs(v);
  CHECK(std::abs(corr[0]) >= 0.99 * mass);
  for (std::size_t k = 1; k < corr.size(); ++k) CHECK(std::abs(corr[k]) <= 1e-3 * corr[0]);
}

TEST_CASE("gcc_phat circular shift moves the peak") {
  std::mt19937_64 rng(11);
  const auto s = random_signal(rng, 256);
  const auto corr = gcc_phat(circular_shift(s, 5), s);
  CHECK(argmax(corr) == 5);
}

TEST_CASE("gcc_phat resolves two delayed copies against the direct oracle") {
  std::mt19937_64 rng(3);
  const auto s = random_signal(rng, 64);
  const std::size_t d1 = 17, d2 = 90;
  std::vector<double> x(200, 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    x[i + d1] += s[i];
    x[i + d2] += 0.5 * s[i];
  }
  const auto corr = gcc_phat(x, s);
  const auto ref = oracle::whitened_xcorr(x, s, corr.size());
  double err = 0.0;
  for (std::size_t k = 0; k < corr.size(); ++k) err = std::max(err, std::abs(corr[k] - ref[k]));
  CHECK(err < 1e-9);

  // The two largest local maxima over non-negative lags sit at d1 and d2.
  std::vector<std::pair<double, std::size_t>> peaks;
  for (std::size_t k = 1; k + 1 < corr.size() / 2; ++k) {
    if (is_local_max(corr, k)) peaks.push_back({corr[k], k});
  }
  std::sort(peaks.rbegin(), peaks.rend());
  REQUIRE(peaks.size() >= 2);
  CHECK(std::set<std::size_t>{peaks[0].second, peaks[1].second} == std::set<std::size_t>{d1, d2});
}

TEST_CASE("gcc_phat error paths") {
  const auto s = synthesize_chirp({});
  std::vector<double> zeros(256, 0.0);
  CHECK_THROWS_AS(gcc_phat(zeros, s), std::invalid_argument);
  CHECK_THROWS_AS(gcc_phat(std::vector<double>(10, 1.0), s), std::invalid_argument);
}

TEST_CASE("gcc_phat properties") {
  std::mt19937_64 rng(2024);
  SUBCASE("lag equivariance for random signals") {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 64u << (trial % 4);
      const auto s = random_signal(rng, n);
      const std::size_t d = std::uniform_int_distribution<std::size_t>(0, n / 4 - 1)(rng);
      CHECK(argmax(gcc_phat(circular_shift(s, d), s)) == d);
    }
  }
  SUBCASE("argmax invariant to positive scaling") {
    const auto s = random_signal(rng, 128);
    std::vector<double> x(300, 0.0);
    const auto noise = random_signal(rng, 300);
    for (std::size_t i = 0; i < s.size(); ++i) x[i + 40] = s[i];
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += 0.1 * noise[i];
    const auto base = argmax(gcc_phat(x, s));
    for (double alpha : {1e-3, 0.5, 2.0, 1e4}) {
      std::vector<double> scaled(x);
      for (double& v : scaled) v *= alpha;
      CHECK(argmax(gcc_phat(scaled, s)) == base);
    }
  }
}

TEST_CASE("encode_gcc channels") {
  const auto s = synthesize_chirp({});
  std::mt19937_64 rng(5);
  BinauralRecording rec;
  rec.sample_rate = s.sample_rate;
  rec.left.assign(1000, 0.0);
  for (std::size_t i = 0; i < s.samples.size(); ++i) rec.left[i + 100] = s.samples[i];

  SUBCASE("identical ears give identical features") {
    rec.right = rec.left;
    const auto f = encode_gcc(rec, s);
    CHECK(f.left_corr == f.right_corr);
  }
  SUBCASE("interaural delay carries through") {
    rec.right.assign(1000, 0.0);
    for (std::size_t i = 0; i < s.samples.size(); ++i) rec.right[i + 110] = s.samples[i];
    const auto f = encode_gcc(rec, s);
    CHECK(static_cast<long>(argmax(f.right_corr)) - static_cast<long>(argmax(f.left_corr)) == 10);
  }
  SUBCASE("perturbing the right ear leaves the left feature unchanged") {
    rec.right = rec.left;
    const auto before = encode_gcc(rec, s);
    const auto noise = random_signal(rng, 1000);
    for (std::size_t i = 0; i < 1000; ++i) rec.right[i] += noise[i];
    const auto after = encode_gcc(rec, s);
    CHECK(after.left_corr == before.left_corr);
    CHECK(after.right_corr != before.right_corr);
  }
  SUBCASE("sample-rate mismatch") {
    rec.right = rec.left;
    rec.sample_rate = 48000.0;
    CHECK_THROWS_AS(encode_gcc(rec, s), std::invalid_argument);
  }
}

TEST_CASE("spectrogram shape and content") {
  BinauralRecording rec;
  rec.sample_rate = 44100.0;
  rec.left.assign(4410, 0.0);
  rec.right.assign(4410, 0.0);

  SUBCASE("zeros in, zeros out; frame count") {
    const auto f = encode_spectrogram(rec, 256, 128);
    CHECK(f.left_mag.dim(0) == 129);
    CHECK(f.left_mag.dim(1) == (4410 - 256) / 128 + 1);
    for (double v : f.left_mag.values()) CHECK(v == 0.0);
  }
  SUBCASE("bin-centred tone") {
    const int window = 256, bin = 20;
    for (std::size_t t = 0; t < rec.left.size(); ++t) {
      rec.left[t] = std::cos(2.0 * std::numbers::pi * bin * static_cast<double>(t) / window);
    }
    rec.right = rec.left;
    const auto f = encode_spectrogram(rec, window, 128);
    const auto frames = f.left_mag.dim(1);
    const auto bins = f.left_mag.dim(0);
    // Direct-DFT oracle on one Hann-tapered frame.
    std::vector<double> frame(window);
    for (int i = 0; i < window; ++i) {
      frame[i] = rec.left[i] * (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / window));
    }
    const auto ref = oracle::dft(frame, window);
    for (int b = 0; b < bins; ++b) CHECK(f.left_mag[b * frames] == doctest::Approx(std::abs(ref[b])).epsilon(1e-9));

    for (std::int64_t fr = 0; fr < frames; ++fr) {
      double total = 0.0, lobe = 0.0, row = 0.0;
      for (std::int64_t b = 0; b < bins; ++b) {
        const double e = f.left_mag[b * frames + fr] * f.left_mag[b * frames + fr];
        total += e;
        if (std::abs(b - bin) <= 1) lobe += e;
        if (b == bin) row += e;
      }
      // A Hann main lobe spans three bins: 1 : 1/4 : 1/4 in energy.
      CHECK(lobe >= 0.9 * total);
      CHECK(row == doctest::Approx(total * 2.0 / 3.0).epsilon(1e-6));
    }
  }
  SUBCASE("invalid windows") {
    CHECK_THROWS(encode_spectrogram(rec, 8192, 128));
    CHECK_THROWS(encode_spectrogram(rec, 128, 256));
    CHECK_THROWS(encode_spectrogram(rec, 128, 0));
  }
}

TEST_CASE("augment_window") {
  BinauralRecording rec;
  rec.sample_rate = 1000.0;
  for (int i = 0; i < 400; ++i) {
    rec.left.push_back(i);
    rec.right.push_back(-i);
  }
  SUBCASE("no jitter starts at the nominal position") {
    const auto w = augment_window(rec, 100, 50, 0.0, 99);
    CHECK(w.left.size() == 100);
    CHECK(w.left.front() == 50.0);
    CHECK(w.right.front() == -50.0);
  }
  SUBCASE("jittered starts cover the allowed range") {
    const std::size_t W = 100, nominal = 150;
    std::set<long> starts;
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
      const auto w = augment_window(rec, W, nominal, 0.3, seed);
      const long start = static_cast<long>(w.left.front());
      CHECK(start >= 120);
      CHECK(start <= 180);
      starts.insert(start);
    }
    CHECK(starts.size() >= static_cast<std::size_t>(std::ceil(0.95 * 61)));
  }
  SUBCASE("deterministic under seed") {
    CHECK(augment_window(rec, 100, 150, 0.3, 7).left == augment_window(rec, 100, 150, 0.3, 7).left);
  }
  SUBCASE("bounds") {
    CHECK_THROWS_AS(augment_window(rec, 100, 10, 0.3, 1), std::out_of_range);
    CHECK_THROWS_AS(augment_window(rec, 100, 280, 0.3, 1), std::out_of_range);
    CHECK_THROWS_AS(augment_window(rec, 100, 150, 1.0, 1), std::invalid_argument);
  }
}

TEST_CASE("add_noise") {
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.01 * i);
  SUBCASE("zero variance is the identity") { CHECK(add_noise(x, 0.0, 4) == x); }
  SUBCASE("deterministic under seed") {
    CHECK(add_noise(x, 0.1, 4) == add_noise(x, 0.1, 4));
    CHECK(add_noise(x, 0.1, 4) != add_noise(x, 0.1, 5));
  }
  SUBCASE("moments of injected noise") {
    const std::vector<double> zeros(1000000, 0.0);
    const auto y = add_gaussian_noise(zeros, 0.1, 77);
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= y.size();
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= y.size() - 1;
    CHECK(mean >= -0.001);
    CHECK(mean <= 0.001);
    CHECK(var >= 0.097);
    CHECK(var <= 0.103);
  }
  SUBCASE("drawn variance stays below the cap") {
    const std::vector<double> zeros(20000, 0.0);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto y = add_noise(zeros, 0.1, seed);
      double var = 0.0;
      for (double v : y) var += v * v;
      CHECK(var / y.size() < 0.1 * 1.05);
    }
  }
  SUBCASE("invalid cap") { CHECK_THROWS(add_noise(x, -0.1, 1)); }
}
