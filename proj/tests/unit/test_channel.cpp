// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include <doctest.h>

#include <random>

#include "ltag/channel.hpp"
#include "ltag/fft.hpp"

using namespace ltag;
using namespace ltag::chan;

namespace {

DeploymentScenario open_field() {
  DeploymentScenario s;
  s.boundary = {{0, 0}, {100, 0}, {100, 100}, {0, 100}};
  ReceiverSite r;
  r.id = 1;
  r.position = {50, 50};
  r.azimuth_rad = 0.0;
  s.receivers = {r};
  phy::CellConfig c;
  c.earfcn = 1300;
  c.pci = 7;
  s.cells = {c};
  s.bands = {BandConfig{3, 30.72e6}};
  return s;
}

double energy(const std::vector<cf64>& x) {
  double e = 0;
  for (auto v : x) e += std::norm(v);
  return e;
}

IqStream tone_burst(std::size_t n, double rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  IqStream s;
  s.sample_rate = rate;
  s.samples.resize(n);
  for (auto& v : s.samples) v = {g(rng), g(rng)};
  return s;
}

phy::CellConfig cell25() {
  phy::CellConfig c;
  c.earfcn = 1300;
  c.pci = 11;
  c.n_prb_ul = 25;
  return c;
}

}  // namespace

TEST_CASE("geometry primitives") {
  std::vector<Vec2> square{{0, 0}, {10, 0}, {10, 10}, {0, 10}};
  CHECK(point_in_polygon({5, 5}, square));
  CHECK_FALSE(point_in_polygon({15, 5}, square));
  CHECK(polygon_is_simple(square));
  std::vector<Vec2> bowtie{{0, 0}, {10, 10}, {10, 0}, {0, 10}};
  CHECK_FALSE(polygon_is_simple(bowtie));
  CHECK(segments_intersect({0, 0}, {2, 2}, {0, 2}, {2, 0}));
  CHECK_FALSE(segments_intersect({0, 0}, {1, 1}, {2, 0}, {3, 1}));
  CHECK(distance_to_boundary({5, 2}, square) == doctest::Approx(2.0));
  CHECK(wrap_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
}

TEST_CASE("antenna pattern is a clamped cardioid") {
  AntennaPattern p;
  CHECK(p.gain_db(0.0) == doctest::Approx(0.0));
  CHECK(p.gain_db(kPi / 2) == doctest::Approx(20 * std::log10(0.5)));
  CHECK(p.gain_db(kPi) == doctest::Approx(-25.0));
  double prev = p.gain_db(0.0);
  for (int deg = 1; deg <= 180; ++deg) {
    const double g = p.gain_db(deg * kPi / 180.0);
    CHECK(g <= prev);
    prev = g;
  }
}

TEST_CASE("boresight UE sees the front-to-back ratio between ports") {
  auto s = open_field();
  const auto& site = s.receivers[0];
  auto ue = s.ue_at({80, 50});
  auto w = tone_burst(4096, 30.72e6, 1);
  auto y0 = propagate(w, ue, site, 0, s);
  auto y1 = propagate(w, ue, site, 1, s);
  CHECK(linear_to_db(energy(y0.samples) / energy(y1.samples)) == doctest::Approx(25.0).epsilon(1e-9));
  CHECK(path_gain_db(s, ue.position, site, 0) - path_gain_db(s, ue.position, site, 1) == doctest::Approx(25.0));
}

TEST_CASE("perpendicular UE sees equal port powers") {
  auto s = open_field();
  const auto& site = s.receivers[0];
  const Vec2 ue{50, 90};
  CHECK(std::abs(path_gain_db(s, ue, site, 0) - path_gain_db(s, ue, site, 1)) < 1e-9);
}

TEST_CASE("a wall attenuates by exactly its rating and more never helps") {
  auto s = open_field();
  const auto& site = s.receivers[0];
  const Vec2 ue{90, 50};
  const double clear = path_gain_db(s, ue, site, 0);
  s.walls.push_back({{70, 0}, {70, 100}, 10.0});
  CHECK(path_gain_db(s, ue, site, 0) == doctest::Approx(clear - 10.0).epsilon(1e-12));

  double prev = path_gain_db(s, ue, site, 0);
  for (double att : {12.0, 20.0, 35.0}) {
    s.walls[0].attenuation_db = att;
    const double g = path_gain_db(s, ue, site, 0);
    CHECK(g <= prev);
    prev = g;
  }
  // A wall off the path changes nothing.
  s.walls[0] = {{0, 0}, {0, 100}, 50.0};
  CHECK(path_gain_db(s, ue, site, 0) == doctest::Approx(clear));
}

TEST_CASE("log-distance path loss") {
  auto s = open_field();
  s.receivers[0].pattern.max_gain_db = 0.0;
  const auto& site = s.receivers[0];
  const double g10 = path_gain_db(s, {60, 50}, site, 0);
  const double g100 = path_gain_db(s, {150, 50}, site, 0);
  CHECK(g10 == doctest::Approx(-40.0 - 30.0));
  CHECK(g10 - g100 == doctest::Approx(30.0));
}

TEST_CASE("UE on top of the receiver is degenerate") {
  auto s = open_field();
  auto w = tone_burst(16, 30.72e6, 1);
  CHECK_THROWS_AS(propagate(w, s.ue_at({50, 50}), s.receivers[0], 0, s), DegenerateGeometry);
  IqStream empty;
  CHECK_THROWS_AS(propagate(empty, s.ue_at({60, 50}), s.receivers[0], 0, s), InvalidParameter);
}

TEST_CASE("labels flip across the boundary") {
  auto s = open_field();
  for (double y : {1.0, 33.0, 99.0}) {
    CHECK(s.ue_at({1.0, y}).inside_label);
    CHECK_FALSE(s.ue_at({-1.0, y}).inside_label);
    CHECK(s.ue_at({99.0, y}).inside_label);
    CHECK_FALSE(s.ue_at({101.0, y}).inside_label);
  }
}

TEST_CASE("propagation delay is recovered by upsampled cross-correlation") {
  auto s = open_field();
  const double rate = 30.72e6;
  // Band-limited probe so the correlation peak is smooth.
  auto grid = phy::build_uplink_message(phy::UplinkMessageSpec::pusch(0, 25), 3, cell25());
  auto w = phy::modulate(grid, 2048);
  w.start_sample = 0;
  for (double dist : {37.3, 151.9, 410.0}) {
    auto ue = s.ue_at({50 + dist, 50});
    auto y = propagate(w, ue, s.receivers[0], 0, s);
    const double expected = dist / kSpeedOfLight * rate;

    // Cross-correlate through the frequency domain, upsampled 16x.
    const std::size_t n = dsp::good_fft_size(y.size() + static_cast<std::size_t>(y.start_sample) + 64);
    std::vector<cf64> a(n), b(n);
    std::copy(w.samples.begin(), w.samples.end(), a.begin());
    std::copy(y.samples.begin(), y.samples.end(), b.begin() + y.start_sample);
    auto fa = dsp::fft(a);
    auto fb = dsp::fft(b);
    const std::size_t up = 16;
    std::vector<cf64> big(n * up);
    for (std::size_t k = 0; k < n; ++k) {
      const long kk = k < n / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
      big[dsp::bin_of(kk, n * up)] = fb[k] * std::conj(fa[k]);
    }
    auto xc = dsp::ifft(big);
    std::size_t best = 0;
    for (std::size_t i = 0; i < xc.size() / 2; ++i) {
      if (std::abs(xc[i]) > std::abs(xc[best])) best = i;
    }
    CHECK(std::abs(static_cast<double>(best) / up - expected) < 0.5);
  }
}

TEST_CASE("fractional delay of a whole number shifts exactly") {
  auto w = tone_burst(100, 1.0, 2);
  auto y = fractional_delay(w.samples, 3.0);
  REQUIRE(y.size() == 103);
  for (std::size_t i = 0; i < 100; ++i) CHECK(y[i + 3] == w.samples[i]);
  CHECK_THROWS_AS(fractional_delay(w.samples, -1.0), InvalidParameter);
}

TEST_CASE("AWGN at 0 dB on a unit-power signal has unit variance") {
  IqStream s;
  s.sample_rate = 1e6;
  s.samples.assign(100000, cf64(1.0, 0.0));
  std::mt19937_64 rng(42);
  auto y = add_awgn(s, 0.0, rng);
  double var = 0;
  for (std::size_t i = 0; i < y.size(); ++i) var += std::norm(y.samples[i] - s.samples[i]);
  var /= static_cast<double>(y.size());
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("AWGN disabled is the identity and seeded noise is reproducible") {
  auto s = tone_burst(1000, 1e6, 9);
  std::mt19937_64 rng(1);
  auto y = add_awgn(s, std::numeric_limits<double>::infinity(), rng);
  CHECK(y.samples == s.samples);

  std::mt19937_64 r1(77), r2(77);
  auto a = add_awgn(s, 3.0, r1);
  auto b = add_awgn(s, 3.0, r2);
  CHECK(a.samples == b.samples);

  IqStream silent;
  silent.sample_rate = 1e6;
  silent.samples.assign(10, cf64{});
  CHECK_THROWS_AS(add_awgn(silent, 0.0, r1), InvalidParameter);
}

TEST_CASE("AWGN power is referenced to occupied samples only") {
  IqStream s;
  s.sample_rate = 1e6;
  s.samples.assign(200000, cf64{});
  for (std::size_t i = 0; i < 100000; ++i) s.samples[i] = {2.0, 0.0};
  std::mt19937_64 rng(5);
  auto y = add_awgn(s, 6.0, rng);
  double var = 0;
  for (std::size_t i = 100000; i < 200000; ++i) var += std::norm(y.samples[i]);
  var /= 100000.0;
  CHECK(var == doctest::Approx(4.0 / db_to_linear(6.0)).epsilon(0.05));
}

TEST_CASE("mix_band of one transmission is the identity") {
  auto s = tone_burst(500, 1e6, 3);
  s.start_sample = 40;
  std::vector<Transmission> tx{{s, 0, 0.0}};
  auto y = mix_band(tx);
  CHECK(y.start_sample == 40);
  CHECK(y.samples == s.samples);
}

TEST_CASE("mix_band rejects mismatched rates") {
  auto a = tone_burst(10, 1e6, 1);
  auto b = tone_burst(10, 2e6, 2);
  std::vector<Transmission> tx{{a, 0, 0.0}, {b, 0, 0.0}};
  CHECK_THROWS_AS(mix_band(tx), InvalidParameter);
}

TEST_CASE("orthogonal PRB transmissions keep their per-PRB energies") {
  const auto cell = cell25();
  auto spec_a = phy::UplinkMessageSpec::pusch(2, 4, 1);
  auto spec_b = phy::UplinkMessageSpec::pusch(12, 6, 2);
  auto ga = phy::build_uplink_message(spec_a, 10, cell);
  auto gb = phy::build_uplink_message(spec_b, 11, cell);
  std::vector<Transmission> tx{{phy::modulate(ga, 2048), 0, 0.0}, {phy::modulate(gb, 2048), 0, 0.0}};
  auto mixed = mix_band(tx);
  auto rx = phy::ofdm_demodulate(mixed.samples, cell.n_prb_ul, 2048);
  phy::MessageGrid rxg = rx;
  const double ea_in = energy(phy::allocated_elements(ga, spec_a));
  const double eb_in = energy(phy::allocated_elements(gb, spec_b));
  CHECK(std::abs(energy(phy::allocated_elements(rxg, spec_a)) - ea_in) / ea_in < 1e-6);
  CHECK(std::abs(energy(phy::allocated_elements(rxg, spec_b)) - eb_in) / eb_in < 1e-6);
}

TEST_CASE("overlapping transmissions add energy in expectation") {
  const auto cell = cell25();
  auto spec = phy::UplinkMessageSpec::pusch(5, 6, 1);
  double mean_ratio = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    auto a = phy::modulate(phy::build_uplink_message(spec, 100 + t, cell), 2048);
    auto b = phy::modulate(phy::build_uplink_message(spec, 500 + t, cell), 2048);
    // Random relative phase decorrelates the shared reference symbols.
    const cf64 rot = std::polar(1.0, 0.7 * t + 0.3);
    for (auto& v : b.samples) v *= rot;
    std::vector<Transmission> tx{{a, 0, 0.0}, {b, 0, 0.0}};
    auto sum = mix_band(tx);
    mean_ratio += energy(sum.samples) / std::max(energy(a.samples), energy(b.samples));
  }
  CHECK(mean_ratio / trials > 1.0);
}

TEST_CASE("frequency offsets are continuous in absolute sample time") {
  IqStream s;
  s.sample_rate = 1e6;
  s.samples.assign(3000, cf64(1.0, 0.0));
  s.start_sample = 1'000'000'000LL;
  std::vector<Transmission> whole{{s, 0, 123456.0}};
  auto y = mix_band(whole);
  IqStream first = s, second = s;
  first.samples.resize(1000);
  second.samples.assign(2000, cf64(1.0, 0.0));
  second.start_sample = s.start_sample + 1000;
  std::vector<Transmission> split{{first, 0, 123456.0}, {second, 0, 123456.0}};
  auto z = mix_band(split);
  REQUIRE(z.size() == y.size());
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y.samples[i] - z.samples[i]) < 1e-9);
  for (std::size_t i = 0; i < y.size(); i += 97) {
    CHECK(std::abs(y.samples[i] - mixer_phasor(123456.0, 1e6, s.start_sample + static_cast<std::int64_t>(i))) < 1e-9);
  }
}

TEST_CASE("path realizations are seeded per transmission and share shadowing across ports") {
  ChannelParams p;
  p.port_fading_db = 0.0;
  auto a0 = draw_path(p, 1234, 3, 0);
  auto a1 = draw_path(p, 1234, 3, 1);
  CHECK(a0.shadow_db == a1.shadow_db);
  CHECK(a0.phase_rad != a1.phase_rad);
  auto again = draw_path(p, 1234, 3, 0);
  CHECK(again.shadow_db == a0.shadow_db);
  CHECK(again.phase_rad == a0.phase_rad);
  CHECK(draw_path(p, 1235, 3, 0).shadow_db != a0.shadow_db);

  double m = 0, v = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = draw_path(p, static_cast<std::uint64_t>(i), 1, 0).shadow_db;
    m += x;
    v += x * x;
  }
  m /= n;
  v = v / n - m * m;
  CHECK(std::abs(m) < 0.15);
  CHECK(std::sqrt(v) == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("resource-element channel matches the time-domain path") {
  auto s = open_field();
  s.channel.shadowing_db = 0;
  const auto cell = cell25();
  const int fft = 2048;
  for (auto spec : {phy::UplinkMessageSpec::pusch(3, 6, 9), phy::UplinkMessageSpec::pucch(1, true, 9),
                    phy::UplinkMessageSpec::prach(2, 17)}) {
    auto grid = phy::build_uplink_message(spec, 21, cell);
    auto w = phy::modulate(grid, fft);
    auto ue = s.ue_at({50 + 300, 50 + 100});
    const PathRealization r{0.0, 0.4};
    auto y = propagate(w, ue, s.receivers[0], 0, s, r);

    // Receiver window at the nominal subframe start.
    std::vector<cf64> win(static_cast<std::size_t>(phy::samples_per_subframe(fft)));
    for (std::size_t i = 0; i < win.size(); ++i) {
      const std::int64_t abs_idx = w.start_sample + static_cast<std::int64_t>(i) - y.start_sample;
      if (abs_idx >= 0 && abs_idx < static_cast<std::int64_t>(y.size())) win[i] = y.samples[static_cast<std::size_t>(abs_idx)];
    }
    phy::MessageGrid td;
    if (spec.type == MsgType::Prach) {
      td = phy::prach_demodulate(win, spec.prb_offset, cell.n_prb_ul, fft);
    } else {
      td = phy::ofdm_demodulate(win, cell.n_prb_ul, fft);
    }
    std::mt19937_64 rng(0);
    const cf64 g = path_coefficient(s, ue.position, s.receivers[0], 0, r);
    auto re = apply_re_channel(grid, g, path_delay_s(ue.position, s.receivers[0], 0), 0.0, 0.0, rng);
    auto a = phy::allocated_elements(td, spec);
    auto b = phy::allocated_elements(re, spec);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      num += std::norm(a[i] - b[i]);
      den += std::norm(b[i]);
    }
    CAPTURE(spec.type);
    CHECK(std::sqrt(num / den) < 2e-2);
  }
}

TEST_CASE("per-RE noise maps to the time-domain variance") {
  const double rate = 7.68e6;
  const int fft = 512;
  const double per_re = 0.01;
  IqStream s;
  s.sample_rate = rate;
  s.samples.assign(static_cast<std::size_t>(phy::samples_per_subframe(fft)) * 20, cf64{});
  std::mt19937_64 rng(8);
  add_noise(s.samples, time_noise_variance(per_re, rate), rng);
  double acc = 0;
  std::size_t cnt = 0;
  for (int sf = 0; sf < 20; ++sf) {
    auto g = phy::ofdm_demodulate(std::span<const cf64>(s.samples).subspan(static_cast<std::size_t>(sf * 15 * fft), static_cast<std::size_t>(15 * fft)), 25, fft);
    for (auto v : g.cells) {
      acc += std::norm(v);
      ++cnt;
    }
  }
  CHECK(acc / static_cast<double>(cnt) == doctest::Approx(per_re).epsilon(0.03));
}

TEST_CASE("scenario validation") {
  auto s = open_field();
  CHECK_NOTHROW(s.validate());
  auto dup = s;
  dup.cells.push_back(dup.cells[0]);
  CHECK_THROWS_AS(dup.validate(), ConfigError);
  auto bow = s;
  bow.boundary = {{0, 0}, {10, 10}, {10, 0}, {0, 10}};
  CHECK_THROWS_AS(bow.validate(), ConfigError);
  auto noband = s;
  noband.bands.clear();
  CHECK_THROWS_AS(noband.validate(), ConfigError);
}

TEST_CASE("allocation-only channel matches the full-grid channel") {
  phy::CellConfig cell;
  cell.n_prb_ul = 25;
  cell.pci = 3;
  const cf64 g = std::polar(0.3, 1.1);
  const double tau = 180e-9;
  for (const auto& spec : {phy::UplinkMessageSpec::pusch(5, 4), phy::UplinkMessageSpec::pucch(1, true),
                           phy::UplinkMessageSpec::prach(2, 7)}) {
    const auto tx = phy::build_uplink_message(spec, 9, cell);
    std::mt19937_64 r1(0), r2(0);
    const auto full = apply_re_channel(tx, g, tau, 2.5e6, 0.0, r1);
    phy::MessageGrid part = tx;
    apply_re_channel_allocated(tx, spec, g, tau, 2.5e6, 0.0, r2, part);
    const auto a = phy::allocated_elements(full, spec);
    const auto b = phy::allocated_elements(part, spec);
    double err = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(a[i] - b[i]));
    CAPTURE(spec.type);
    CHECK(err < 1e-12);
  }

  // Noise lands only on the allocation, with the requested variance.
  const auto spec = phy::UplinkMessageSpec::pusch(0, 25);
  const auto tx = phy::build_uplink_message(spec, 1, cell);
  phy::MessageGrid rx = tx;
  std::mt19937_64 rng(5);
  double acc = 0.0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    apply_re_channel_allocated(tx, spec, 0.0, 0.0, 0.0, 0.5, rng, rx);
    for (auto v : std::get<phy::SubframeGrid>(rx).cells) acc += std::norm(v);
  }
  CHECK(acc / (trials * 4200.0) == doctest::Approx(0.5).epsilon(0.03));
}
