// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include <doctest.h>

#include <atomic>
#include <cmath>
#include <random>
#include <thread>

#include "ltag/channel.hpp"
#include "ltag/ul_receiver.hpp"

using namespace ltag;
using namespace ltag::ul;

namespace {

constexpr double kRate = 15.36e6;  // fft 1024

phy::CellConfig cell_a() {
  phy::CellConfig c;
  c.earfcn = 1300;
  c.pci = 1;
  c.n_prb_ul = 25;
  c.ul_offset_hz = -168 * 15000.0;
  return c;
}

phy::CellConfig cell_b() {
  phy::CellConfig c;
  c.earfcn = 1400;
  c.pci = 2;
  c.n_prb_ul = 25;
  c.prach_root = 22;
  c.ul_offset_hz = 168 * 15000.0;
  return c;
}

BandContext band() { return {3, kRate, {cell_a(), cell_b()}}; }

UplinkAllocation alloc_of(const phy::CellConfig& c, MsgType t, std::uint32_t sf, std::uint16_t rnti, int offset,
                          int n_prb = 1, int preamble = 0) {
  UplinkAllocation a;
  a.id = {c.earfcn, c.pci, rnti, t, sf};
  a.prb_offset = offset;
  a.n_prb = n_prb;
  a.hopping = t == MsgType::Pucch;
  if (t == MsgType::Prach) a.preamble_index = preamble;
  return a;
}

// Renders the message and places it in the band at the cell's offset.
chan::Transmission render(const phy::CellConfig& c, const UplinkAllocation& a, std::uint64_t payload) {
  const auto grid = phy::build_uplink_message(a.spec(), payload, c, a.id.subframe);
  return {phy::modulate(grid, phy::fft_size_for_rate(kRate)), 0, c.ul_offset_hz};
}

void write_band(BandReceiver& rx, int port, const IqStream& s, std::int64_t end) {
  std::vector<cf64> buf(static_cast<std::size_t>(end), cf64{});
  for (std::size_t i = 0; i < s.size(); ++i) buf[static_cast<std::size_t>(s.start_sample) + i] = s.samples[i];
  rx.port(port).write(buf);
}

double max_error(const phy::MessageGrid& a, const phy::MessageGrid& b) {
  double e = 0.0;
  if (auto* ga = std::get_if<phy::SubframeGrid>(&a)) {
    const auto& gb = std::get<phy::SubframeGrid>(b);
    for (std::size_t i = 0; i < ga->cells.size(); ++i) e = std::max(e, std::abs(ga->cells[i] - gb.cells[i]));
  } else {
    const auto& pa = std::get<phy::PrachGrid>(a);
    const auto& pb = std::get<phy::PrachGrid>(b);
    for (std::size_t i = 0; i < pa.bins.size(); ++i) e = std::max(e, std::abs(pa.bins[i] - pb.bins[i]));
  }
  return e;
}

double energy(const phy::MessageGrid& g) {
  double e = 0.0;
  if (auto* s = std::get_if<phy::SubframeGrid>(&g)) {
    for (auto v : s->cells) e += std::norm(v);
  } else {
    for (auto v : std::get<phy::PrachGrid>(g).bins) e += std::norm(v);
  }
  return e;
}

phy::MessageGrid channel(const phy::UplinkMessageSpec& spec, const phy::CellConfig& c, cf64 gain, double delay,
                         double noise, std::mt19937_64& rng, std::uint64_t payload = 1) {
  return chan::apply_re_channel(phy::build_uplink_message(spec, payload, c), gain, delay, 0.0, noise, rng);
}

}  // namespace

TEST_CASE("ring buffer addresses samples by absolute index") {
  CircularIqBuffer b(100, 1e6, 5000);
  CHECK(b.write_head() == 0);
  CHECK(b.oldest() == 0);
  std::vector<cf64> x(70);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = cf64(static_cast<double>(i), 0.0);
  b.write(std::span<const cf64>(x));
  b.write(std::span<const cf64>(x));  // wraps: indices 70..139 hold 0..69
  CHECK(b.write_head() == 140);
  CHECK(b.oldest() == 40);

  std::vector<cf64> out(30);
  b.read(85, out);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].real() == static_cast<double>(15 + i));
  b.read(60, out);  // straddles the wrap
  CHECK(out[0].real() == 60.0);
  CHECK(out[9].real() == 69.0);
  CHECK(out[10].real() == 0.0);

  CHECK_THROWS_AS(b.read(39, out), StaleRange);
  CHECK_NOTHROW(b.read(40, out));
  CHECK_THROWS_AS(b.read(111, out), RetryLater);
  CHECK_NOTHROW(b.read(110, out));

  CHECK(b.timestamp_of(0) == 5000);
  CHECK(b.timestamp_of(1000) == 5000 + 1'000'000);
  CHECK(b.head_timestamp() == 5000 + 140'000);
}

TEST_CASE("ring buffer keeps only the tail of an oversized write") {
  CircularIqBuffer b(10, 1.0);
  std::vector<cf32> x(25);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = cf32(static_cast<float>(i), 0.0f);
  b.write(x);
  CHECK(b.write_head() == 25);
  std::vector<cf64> out(10);
  b.read(15, out);
  for (std::size_t i = 0; i < 10; ++i) CHECK(out[i].real() == static_cast<double>(15 + i));
  CHECK_THROWS_AS(CircularIqBuffer(0, 1.0), InvalidParameter);
}

TEST_CASE("ring buffer survives a concurrent writer") {
  // Each sample carries its own index, so any torn read shows up as a mismatch.
  CircularIqBuffer b(4096, 1e6);
  std::atomic<bool> stop{false};
  std::thread writer([&] {
    std::vector<cf32> chunk(256);
    std::int64_t n = 0;
    while (!stop) {
      for (auto& v : chunk) v = cf32(static_cast<float>(n++ % 1000000), 0.0f);
      b.write(chunk);
    }
  });
  int ok = 0, stale = 0, bad = 0;
  std::vector<cf64> out(512);
  while (ok < 2000) {
    const std::int64_t head = b.write_head();
    if (head < 4096) continue;
    const std::int64_t start = head - 4000;
    try {
      b.read(start, out);
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i].real() != static_cast<double>((start + static_cast<std::int64_t>(i)) % 1000000)) ++bad;
      }
      ++ok;
    } catch (const StaleRange&) {
      ++stale;
    }
  }
  stop = true;
  writer.join();
  CHECK(bad == 0);
  MESSAGE("stale reads: " << stale);
}

TEST_CASE("event queue orders, deduplicates and counts lost allocations") {
  AllocationEventQueue q;
  const auto a = alloc_of(cell_a(), MsgType::Pusch, 5, 10, 3);
  auto b = a;
  b.id.subframe = 2;
  auto c = a;
  c.id.subframe = 9;
  CHECK(q.push(a));
  CHECK_FALSE(q.push(a));
  CHECK(q.push(b));
  CHECK(q.push(c));
  CHECK(q.pending() == 3);
  CHECK(q.accepted() == 3);

  // Subframe length 10: head 60 covers subframes up to 5, oldest 30 has lost 2.
  const auto ready = q.pop_ready(30, 60, 10);
  REQUIRE(ready.size() == 1);
  CHECK(ready[0].id.subframe == 5);
  CHECK(q.lost() == 1);
  CHECK(q.pending() == 1);
  CHECK(q.pop_ready(30, 99, 10).empty());
  CHECK(q.pop_ready(30, 100, 10).size() == 1);
  CHECK_FALSE(q.push(a));
}

TEST_CASE("extraction recovers every channel of a two-cell capture exactly") {
  BandReceiver rx(7, band());
  REQUIRE(rx.fft_size() == 1024);
  const std::vector<UplinkAllocation> allocs{
      alloc_of(cell_a(), MsgType::Pusch, 2, 100, 5, 4),
      alloc_of(cell_b(), MsgType::Pucch, 2, 101, 0),
      alloc_of(cell_a(), MsgType::Prach, 3, 102, cell_a().prach_prb_offset, 6, 17),
      alloc_of(cell_b(), MsgType::Pusch, 4, 103, 10, 2),
  };
  // The preamble has a subframe to itself: its 1.25 kHz bins are not
  // orthogonal to the 15 kHz grid, so other traffic would leak in slightly.
  std::vector<chan::Transmission> tx;
  for (std::size_t i = 0; i < allocs.size(); ++i) {
    const auto& c = i % 2 == 0 ? cell_a() : cell_b();
    tx.push_back(render(c, allocs[i], 40 + i));
  }
  const auto mix = chan::mix_band(tx);
  write_band(rx, 0, mix, 6 * rx.samples_per_subframe());

  for (std::size_t i = 0; i < allocs.size(); ++i) {
    const auto& c = i % 2 == 0 ? cell_a() : cell_b();
    const auto want = phy::build_uplink_message(allocs[i].spec(), 40 + i, c, allocs[i].id.subframe);
    const auto got = rx.extract_allocation(allocs[i], 0);
    CHECK(max_error(got, want) < 1e-6);
  }

  // A PUSCH that nobody sent, overlapping in time with both cells' traffic.
  const auto absent = rx.extract_allocation(alloc_of(cell_a(), MsgType::Pusch, 2, 200, 12, 4), 0);
  CHECK(energy(absent) < 1e-9);
  CHECK_THROWS_AS(rx.extract_allocation(alloc_of(cell_a(), MsgType::Pusch, 9, 1, 0), 0), RetryLater);
  phy::CellConfig other = cell_a();
  other.pci = 99;
  CHECK_THROWS_AS(rx.extract_allocation(alloc_of(other, MsgType::Pusch, 2, 1, 0), 0), InvalidAllocation);
  CHECK_FALSE(rx.accept(alloc_of(other, MsgType::Pusch, 2, 1, 0)));
}

TEST_CASE("port workers measure queued allocations once their subframe is captured") {
  BandReceiver rx(7, band(), 3 * 15 * 1024);
  const auto a = alloc_of(cell_a(), MsgType::Pusch, 1, 100, 5, 4);
  CHECK(rx.accept(a));
  const auto mix = chan::mix_band(std::vector{render(cell_a(), a, 3)});
  std::vector<cf64> buf(static_cast<std::size_t>(3 * rx.samples_per_subframe()));
  std::copy(mix.samples.begin(), mix.samples.end(), buf.begin() + mix.start_sample);
  rx.port(0).write(std::span<const cf64>(buf).first(static_cast<std::size_t>(rx.samples_per_subframe()) + 10));
  CHECK(rx.process_port(0).empty());  // subframe 1 incomplete
  rx.port(0).write(std::span<const cf64>(buf).subspan(static_cast<std::size_t>(rx.samples_per_subframe()) + 10));
  const auto r = rx.process_port(0);
  REQUIRE(r.size() == 1);
  CHECK(r[0].features.detected);
  CHECK(r[0].features.corr_peak_power_db == doctest::Approx(0.0).epsilon(0.01));
  CHECK(rx.queue(1).pending() == 1);

  // Port 1 falls behind until the ring has moved past subframe 1.
  std::vector<cf64> zeros(static_cast<std::size_t>(5 * rx.samples_per_subframe()));
  rx.port(1).write(zeros);
  CHECK(rx.process_port(1).empty());
  CHECK(rx.queue(1).lost() == 1);
}

TEST_CASE("correlation peak power tracks the received amplitude") {
  std::mt19937_64 rng(1);
  const auto c = cell_a();
  const std::vector<phy::UplinkMessageSpec> specs{phy::UplinkMessageSpec::pusch(3, 6), phy::UplinkMessageSpec::pucch(0, true),
                                                  phy::UplinkMessageSpec::prach(c.prach_prb_offset, 9)};
  for (const auto& spec : specs) {
    for (double gain_db : {0.0, -12.5, 7.0}) {
      const cf64 g = std::polar(std::pow(10.0, gain_db / 20.0), 0.7);
      for (double delay : {0.0, 0.37e-6, 2.1e-6}) {
        const auto f = measure_features(channel(spec, c, g, delay, 0.0, rng), spec, c);
        CHECK(f.detected);
        CHECK(std::abs(f.corr_peak_power_db - gain_db) <= 0.3);
        CHECK(std::abs(f.rms2_power_db - gain_db) <= 1e-6);
      }
    }
  }
}

TEST_CASE("time-of-arrival offset follows the path delay") {
  std::mt19937_64 rng(2);
  const auto c = cell_a();
  struct Case {
    phy::UplinkMessageSpec spec;
    double tol;
  };
  const std::vector<Case> cases{{phy::UplinkMessageSpec::pusch(2, 8), 50e-9},
                                {phy::UplinkMessageSpec::pucch(1, true), 300e-9},
                                {phy::UplinkMessageSpec::prach(c.prach_prb_offset, 30), 50e-9}};
  for (const auto& k : cases) {
    for (double delay : {-0.8e-6, 0.0, 0.25e-6, 1.3e-6, 4.9e-6}) {
      const auto f = measure_features(channel(k.spec, c, 1.0, delay, 0.0, rng), k.spec, c);
      CHECK(std::abs(f.toa_offset_s - delay) < k.tol);
    }
  }
}

TEST_CASE("features do not depend on the payload") {
  std::mt19937_64 rng(3);
  const auto c = cell_b();
  for (const auto& spec : {phy::UplinkMessageSpec::pusch(4, 3), phy::UplinkMessageSpec::pucch(0, true)}) {
    double mean1 = 0.0, mean2 = 0.0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
      // Same noise realization, different data symbols.
      const auto seed = rng();
      std::mt19937_64 r1(seed), r2(seed);
      const auto f1 = measure_features(channel(spec, c, 0.5, 1e-6, 0.05, r1, 11), spec, c);
      const auto f2 = measure_features(channel(spec, c, 0.5, 1e-6, 0.05, r2, 12 + static_cast<std::uint64_t>(t)), spec, c);
      CHECK(f1.corr_peak_power_db == doctest::Approx(f2.corr_peak_power_db));
      CHECK(f1.peak_to_avg_snr_db == doctest::Approx(f2.peak_to_avg_snr_db));
      CHECK(f1.smoothed_snr_db == doctest::Approx(f2.smoothed_snr_db));
      CHECK(f1.toa_offset_s == doctest::Approx(f2.toa_offset_s));
      mean1 += f1.rms2_power_db / trials;
      mean2 += f2.rms2_power_db / trials;
    }
    // The baseline sees data symbols too, but only through the noise cross term.
    CHECK(std::abs(mean1 - mean2) < 0.1);
  }
}

TEST_CASE("peak-to-average formula inverts the ideal ratio") {
  // Noise-free correlation of length L averaged over S blocks at per-element
  // SNR rho has R = L (1 + s / L) / (1 + s) with s = 1 / (S rho).
  for (int L : {12, 72, 839}) {
    for (int S : {1, 2, 4}) {
      for (double rho_db : {-10.0, 0.0, 13.0}) {
        const double rho = db_to_linear(rho_db);
        const double s = 1.0 / (S * rho);
        const double R = L * (1.0 + s / L) / (1.0 + s);
        CHECK(10.0 * std::log10(peak_to_average_snr(R, L, S)) == doctest::Approx(rho_db).epsilon(1e-9));
      }
    }
  }
  CHECK(peak_to_average_snr(1.0, 12, 2) == 0.0);
  CHECK(std::isinf(peak_to_average_snr(12.0, 12, 2)));
}

TEST_CASE("SNR estimators recover the per-element SNR on average") {
  std::mt19937_64 rng(4);
  const auto c = cell_a();
  const auto spec = phy::UplinkMessageSpec::pusch(2, 10);
  for (double snr_db : {-5.0, 0.0, 10.0}) {
    double p2a = 0.0, sm = 0.0;
    const int trials = 60;
    for (int t = 0; t < trials; ++t) {
      const auto f = measure_features(channel(spec, c, 1.0, 0.0, db_to_linear(-snr_db), rng), spec, c);
      p2a += f.peak_to_avg_snr_db / trials;
      sm += f.smoothed_snr_db / trials;
    }
    CHECK(std::abs(p2a - snr_db) < 1.5);
    CHECK(std::abs(sm - snr_db) < 2.5);
  }
}

TEST_CASE("detection threshold declares weak peaks absent") {
  std::mt19937_64 rng(5);
  const auto c = cell_a();
  const auto spec = phy::UplinkMessageSpec::pusch(2, 4);
  const auto silent = chan::apply_re_channel(phy::build_uplink_message(spec, 1, c), 0.0, 0.0, 0.0, 0.0, rng);
  const auto d0 = measure_features_detailed(silent, spec, c);
  CHECK_FALSE(d0.features.detected);
  CHECK(std::isfinite(d0.features.rms2_power_db));

  const auto strong = measure_features_detailed(channel(spec, c, 1.0, 0.0, 0.01, rng), spec, c);
  CHECK(strong.features.detected);
  CHECK(strong.peak_to_average_ratio > 10.0);
  FeatureOptions strict;
  strict.detection_threshold_db = 10.0 * std::log10(strong.peak_to_average_ratio) + 0.1;
  CHECK_FALSE(measure_features(channel(spec, c, 1.0, 0.0, 0.01, rng), spec, c, strict).detected);
}

TEST_CASE("report joiner pairs the two ports") {
  ReportJoiner j(4);
  const MessageId id{1, 2, 3, MsgType::Pucch, 50};
  PortFeatures p0, p1;
  p0.corr_peak_power_db = -10;
  p1.corr_peak_power_db = -20;
  CHECK_FALSE(j.add(1, id, p1, 111, 900).has_value());
  const auto r = j.add(0, id, p0, 111, 1000);
  REQUIRE(r.has_value());
  CHECK(r->receiver_id == 4);
  CHECK(r->measured_at == 1000);
  CHECK(r->reference_ns == 111);
  CHECK(r->ports[0].corr_peak_power_db == -10);
  CHECK(r->ports[1].corr_peak_power_db == -20);
  CHECK(j.partial_count() == 0);

  MessageId old = id;
  old.subframe = 10;
  j.add(0, old, p0, 0, 0);
  j.add(0, id, p0, 0, 0);
  CHECK(j.prune(40) == 1);
  CHECK(j.partial_count() == 1);

  bus::InProcBus b;
  std::vector<MeasurementReport> got;
  b.subscribe(bus::topic::kReport,
              [&](std::string_view, std::span<const std::uint8_t> p) { got.push_back(std::get<MeasurementReport>(decode(p))); });
  publish_report(b, *r);
  b.pump();
  REQUIRE(got.size() == 1);
  CHECK(got[0].id == id);
}
