// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include <doctest.h>

#include <random>

#include "ltag/channelizer.hpp"
#include "ltag/fft.hpp"

using namespace ltag;
using namespace ltag::dsp;

namespace {

constexpr double kRate = 1.024e6;

std::vector<cf64> tone(std::size_t n, double f, double rate, double amp = 1.0) {
  std::vector<cf64> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::polar(amp, 2.0 * kPi * f * static_cast<double>(i) / rate);
  return x;
}

// Direct DTFT of real taps at frequency f.
double response_db(const std::vector<double>& h, double f, double rate) {
  cf64 acc{};
  for (std::size_t m = 0; m < h.size(); ++m) acc += h[m] * std::polar(1.0, -2.0 * kPi * f * static_cast<double>(m) / rate);
  return 20.0 * std::log10(std::abs(acc));
}

double mean_power(const std::vector<cf64>& x, std::size_t skip) {
  double acc = 0;
  for (std::size_t i = skip; i < x.size(); ++i) acc += std::norm(x[i]);
  return acc / static_cast<double>(x.size() - skip);
}

}  // namespace

TEST_CASE("prototype filter meets ripple and stopband on a frequency sweep") {
  const double bw = 128e3;
  auto h = kaiser_lowpass(kRate, bw / 2, 0.1 * bw, 66.0);
  CHECK(h.size() % 2 == 1);
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == doctest::Approx(h[h.size() - 1 - i]));
  double worst_pass = 0, worst_stop = -1e9;
  for (double f = 0; f <= 0.45 * bw; f += 100) worst_pass = std::max(worst_pass, std::abs(response_db(h, f, kRate)));
  for (double f = 0.55 * bw; f <= kRate / 2; f += 137) worst_stop = std::max(worst_stop, response_db(h, f, kRate));
  CHECK(worst_pass < 0.5);
  CHECK(worst_stop <= -60.0);
}

TEST_CASE("full-band channel passes the input unchanged") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0, 1);
  IqStream in;
  in.sample_rate = kRate;
  in.samples.resize(50000);
  for (auto& v : in.samples) v = {g(rng), g(rng)};
  auto out = channelize(in, {{0.0, kRate}});
  REQUIRE(out.size() == 1);
  REQUIRE(out[0].size() == in.size());
  CHECK(out[0].sample_rate == kRate);
  double err = 0;
  for (std::size_t i = 0; i < in.size(); ++i) err = std::max(err, std::abs(out[0].samples[i] - in.samples[i]));
  CHECK(err < 1e-6);
}

TEST_CASE("tone lands at its baseband offset in its own channel only") {
  const std::vector<ChannelSpec> chans{{-300e3, 128e3}, {0.0, 128e3}, {256e3, 128e3}};
  const double f0 = 20000.0;
  for (std::size_t k = 0; k < chans.size(); ++k) {
    IqStream in;
    in.sample_rate = kRate;
    in.samples = tone(static_cast<std::size_t>(kRate), chans[k].center_offset_hz + f0, kRate);
    auto out = channelize(in, chans);
    for (std::size_t c = 0; c < chans.size(); ++c) {
      CHECK(out[c].sample_rate == doctest::Approx(128e3));
      const double p = mean_power(out[c].samples, 200);
      if (c != k) {
        CHECK(10 * std::log10(p) <= -60.0);
        continue;
      }
      CHECK(std::abs(10 * std::log10(p)) < 0.5);
      // Frequency of the output: FFT peak refined by parabolic interpolation.
      const auto& y = out[c].samples;
      auto spec = fft(y);
      std::size_t best = 0;
      for (std::size_t i = 0; i < spec.size(); ++i) {
        if (std::abs(spec[i]) > std::abs(spec[best])) best = i;
      }
      const double a = std::abs(spec[(best + spec.size() - 1) % spec.size()]);
      const double b = std::abs(spec[best]);
      const double cc = std::abs(spec[(best + 1) % spec.size()]);
      const double delta = 0.5 * (a - cc) / (a - 2 * b + cc);
      double bin = static_cast<double>(best) + delta;
      if (bin > static_cast<double>(spec.size()) / 2) bin -= static_cast<double>(spec.size());
      const double f_est = bin * out[c].sample_rate / static_cast<double>(spec.size());
      CHECK(std::abs(f_est - f0) < 0.1);
    }
  }
}

TEST_CASE("out-of-band tones are rejected by at least 60 dB") {
  const ChannelSpec ch{100e3, 64e3};
  for (double df = 0.55 * 64e3; df < 400e3; df += 7919.0) {
    for (double sign : {-1.0, 1.0}) {
      const double f = ch.center_offset_hz + sign * df;
      if (std::abs(f) >= kRate / 2) continue;
      IqStream in;
      in.sample_rate = kRate;
      in.samples = tone(40000, f, kRate);
      auto out = channelize(in, {ch});
      CAPTURE(f);
      CHECK(10 * std::log10(mean_power(out[0].samples, 100) + 1e-300) <= -60.0);
    }
  }
}

TEST_CASE("output phase follows the mixed-down input delayed by the group delay") {
  const ChannelSpec ch{-150e3, 128e3};
  const double f0 = -31000.0;
  IqStream in;
  in.sample_rate = kRate;
  in.start_sample = 12345;
  in.samples.resize(60000);
  for (std::size_t i = 0; i < in.size(); ++i) {
    in.samples[i] = phasor(ch.center_offset_hz + f0, kRate, in.start_sample + static_cast<std::int64_t>(i));
  }
  Channelizer c(kRate, {ch}, {}, in.start_sample);
  const double gd = c.group_delay(0);
  const int d = c.decimation(0);
  auto out = channelize(in, {ch});
  for (std::size_t j = 100; j < out[0].size() - 10; j += 101) {
    const double n = static_cast<double>((out[0].start_sample + static_cast<std::int64_t>(j)) * d) - gd;
    const cf64 expect = std::polar(1.0, 2.0 * kPi * f0 * n / kRate);
    const cf64 got = out[0].samples[j];
    CHECK(std::abs(std::arg(got / expect)) < 1e-6);
  }
}

TEST_CASE("block streaming equals one-shot processing") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0, 1);
  std::vector<cf64> x(static_cast<std::size_t>(kRate));
  for (auto& v : x) v = {g(rng), g(rng)};
  const std::vector<ChannelSpec> chans{{-200e3, 100e3}, {50e3, 200e3}, {300e3, 20e3}};

  Channelizer one(kRate, chans);
  std::vector<std::vector<cf64>> ref;
  one.push(x, ref);
  one.flush(ref);

  Channelizer streamed(kRate, chans);
  std::vector<std::vector<cf64>> got;
  std::uniform_int_distribution<std::size_t> chunk(1, 30000);
  std::size_t pos = 0;
  while (pos < x.size()) {
    const std::size_t n = std::min(chunk(rng), x.size() - pos);
    streamed.push(std::span<const cf64>(x).subspan(pos, n), got);
    pos += n;
  }
  streamed.flush(got);

  for (std::size_t c = 0; c < chans.size(); ++c) {
    REQUIRE(got[c].size() == ref[c].size());
    CHECK(got[c].size() == (x.size() + static_cast<std::size_t>(one.decimation(c)) - 1) / static_cast<std::size_t>(one.decimation(c)));
    double err = 0;
    for (std::size_t i = 0; i < ref[c].size(); ++i) err = std::max(err, std::abs(got[c][i] - ref[c][i]));
    CHECK(err < 1e-9);
  }
}

TEST_CASE("channelizer parameter checks") {
  CHECK_THROWS_AS(Channelizer(kRate, {{450e3, 128e3}}), InvalidParameter);
  CHECK_THROWS_AS(Channelizer(kRate, {{0, 128e3}}, ChannelizerOptions{6000, 66.0, 0.1}), InvalidParameter);
  CHECK_THROWS_AS(Channelizer(kRate, {}), InvalidParameter);
  Channelizer c(kRate, {{0, 128e3}});
  CHECK(c.decimation(0) == 8);
  CHECK(c.fft_size() >= 8192);
  CHECK(c.fft_size() >= 4 * (c.taps(0) - 1));
}
