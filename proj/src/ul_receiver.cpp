// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/ul_receiver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "ltag/fft.hpp"

namespace ltag::ul {

// ---------------------------------------------------------------------------
// CircularIqBuffer

CircularIqBuffer::CircularIqBuffer(std::size_t capacity, double sample_rate, TimeNs base_timestamp)
    : data_(capacity), rate_(sample_rate), base_(base_timestamp) {
  if (capacity == 0) throw InvalidParameter("ring capacity must be positive");
  if (!(sample_rate > 0.0)) throw InvalidParameter("sample rate must be positive");
}

void CircularIqBuffer::write(std::span<const cf32> samples) {
  const std::size_t cap = data_.size();
  std::int64_t head = head_.load(std::memory_order_relaxed);
  if (samples.size() > cap) {
    head += static_cast<std::int64_t>(samples.size() - cap);
    samples = samples.subspan(samples.size() - cap);
  }
  const auto n = samples.size();
  reserved_.store(head + static_cast<std::int64_t>(n), std::memory_order_seq_cst);
  std::atomic_thread_fence(std::memory_order_seq_cst);
  const std::size_t pos = static_cast<std::size_t>(head % static_cast<std::int64_t>(cap));
  const std::size_t first = std::min(n, cap - pos);
  std::copy_n(samples.begin(), first, data_.begin() + static_cast<std::ptrdiff_t>(pos));
  std::copy_n(samples.begin() + static_cast<std::ptrdiff_t>(first), n - first, data_.begin());
  head_.store(head + static_cast<std::int64_t>(n), std::memory_order_release);
}

void CircularIqBuffer::write(std::span<const cf64> samples) {
  std::vector<cf32> tmp(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) tmp[i] = cf32(samples[i]);
  write(tmp);
}

std::int64_t CircularIqBuffer::oldest() const {
  return std::max<std::int64_t>(0, write_head() - static_cast<std::int64_t>(data_.size()));
}

void CircularIqBuffer::read(std::int64_t start, std::span<cf64> out) const {
  const auto cap = static_cast<std::int64_t>(data_.size());
  const auto n = static_cast<std::int64_t>(out.size());
  const std::int64_t head = write_head();
  if (start < 0 || start < head - cap) {
    throw StaleRange(fmt::format("samples [{}, {}) already overwritten (oldest {})", start, start + n, head - cap));
  }
  if (start + n > head) {
    throw RetryLater(fmt::format("samples [{}, {}) not yet written (head {})", start, start + n, head));
  }
  for (std::int64_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = cf64(data_[static_cast<std::size_t>((start + i) % cap)]);
  }
  std::atomic_thread_fence(std::memory_order_acquire);
  if (start < reserved_.load(std::memory_order_acquire) - cap) {
    throw StaleRange(fmt::format("samples [{}, {}) overwritten during read", start, start + n));
  }
}

TimeNs CircularIqBuffer::timestamp_of(std::int64_t index) const {
  return base_ + static_cast<TimeNs>(std::llround(static_cast<double>(index) / rate_ * 1e9));
}

// ---------------------------------------------------------------------------
// AllocationEventQueue

bool AllocationEventQueue::push(const UplinkAllocation& alloc) {
  std::lock_guard lock(mutex_);
  if (!seen_.insert(alloc.id).second) return false;
  pending_.emplace(alloc.id.subframe, alloc);
  ++accepted_;
  return true;
}

std::vector<UplinkAllocation> AllocationEventQueue::pop_ready(std::int64_t oldest, std::int64_t write_head,
                                                              int samples_per_subframe) {
  std::vector<UplinkAllocation> ready;
  std::lock_guard lock(mutex_);
  for (auto it = pending_.begin(); it != pending_.end();) {
    const std::int64_t start = static_cast<std::int64_t>(it->first) * samples_per_subframe;
    if (start + samples_per_subframe > write_head) break;
    if (start < oldest) {
      ++lost_;
    } else {
      ready.push_back(it->second);
    }
    it = pending_.erase(it);
  }
  // Keep the duplicate filter bounded: ids older than the ring can never
  // be measured again.
  if (seen_.size() > 65536) {
    for (auto it = seen_.begin(); it != seen_.end();) {
      if (static_cast<std::int64_t>(it->subframe) * samples_per_subframe < oldest) {
        it = seen_.erase(it);
      } else {
        ++it;
      }
    }
  }
  return ready;
}

std::size_t AllocationEventQueue::pending() const {
  std::lock_guard lock(mutex_);
  return pending_.size();
}

// ---------------------------------------------------------------------------
// Features

double peak_to_average_snr(double ratio, int length, int blocks) {
  const double num = ratio - 1.0;
  const double den = static_cast<double>(length) - ratio;
  if (num <= 0.0) return 0.0;
  if (den <= 0.0) return std::numeric_limits<double>::infinity();
  return num / den / static_cast<double>(std::max(blocks, 1));
}

namespace {

double to_db_clamped(double lin) {
  if (!(lin > 0.0)) return -60.0;
  return std::clamp(10.0 * std::log10(lin), -60.0, 80.0);
}

}  // namespace

FeatureDetail measure_features_detailed(const phy::MessageGrid& grid, const phy::UplinkMessageSpec& spec,
                                        const phy::CellConfig& cell, const FeatureOptions& opt) {
  if (opt.upsample < 1) throw InvalidParameter("upsampling factor must be >= 1");
  const auto ref = phy::reference_sequence(spec, cell);
  const auto blocks = phy::reference_blocks(grid, spec);
  const int L = static_cast<int>(ref.size());

  // Coherent average of Y * conj(R) over RS symbols that share a frequency position.
  std::map<int, std::vector<const phy::RsBlock*>> by_freq;
  for (const auto& b : blocks) {
    if (static_cast<int>(b.received.size()) != L) throw InvalidParameter("RS block length mismatch");
    by_freq[b.first_subcarrier].push_back(&b);
  }
  int S = static_cast<int>(blocks.size());
  std::vector<std::vector<cf64>> z;
  for (const auto& [first, group] : by_freq) {
    std::vector<cf64> zg(static_cast<std::size_t>(L));
    for (const auto* b : group) {
      for (int k = 0; k < L; ++k) zg[static_cast<std::size_t>(k)] += b->received[static_cast<std::size_t>(k)] * std::conj(ref[static_cast<std::size_t>(k)]);
    }
    for (auto& v : zg) v /= static_cast<double>(group.size());
    S = std::min(S, static_cast<int>(group.size()));
    z.push_back(std::move(zg));
  }
  const int G = static_cast<int>(z.size());

  // Coarse profile at a quarter-lag resolution, then direct evaluation on
  // the fine grid around the best coarse point. Same answer as a full
  // zero-padded transform at a fraction of the cost for long sequences.
  const int coarse = std::min(4, opt.upsample);
  // Padded to a fast transform length; bin t sits at lag t * L / M.
  const int M = static_cast<int>(dsp::good_fft_size(static_cast<std::size_t>(coarse * L)));
  const double bin = static_cast<double>(L) / M;
  std::vector<double> profile(static_cast<std::size_t>(M));
  std::vector<cf64> padded(static_cast<std::size_t>(M));
  std::vector<cf64> corr(static_cast<std::size_t>(M));
  double avg = 0.0;
  for (const auto& zg : z) {
    std::fill(padded.begin(), padded.end(), cf64{});
    double e = 0.0;
    for (int k = 0; k < L; ++k) {
      padded[static_cast<std::size_t>(k)] = zg[static_cast<std::size_t>(k)] / static_cast<double>(L);
      e += std::norm(zg[static_cast<std::size_t>(k)]);
    }
    dsp::ifft(padded, corr);
    for (int t = 0; t < M; ++t) profile[static_cast<std::size_t>(t)] += std::norm(corr[static_cast<std::size_t>(t)]) / G;
    avg += e / (static_cast<double>(L) * L) / G;
  }

  // PRACH: other preambles of the same root sit 13 lags apart, so only look
  // near the expected arrival.
  double lo = 0.0, hi = L;
  if (spec.type == MsgType::Prach) {
    lo = -2.0;
    hi = phy::kPrachCyclicShiftStep;
  }
  double peak = -1.0;
  double best_lag = 0.0;
  for (int t = static_cast<int>(std::ceil(lo / bin)); t < static_cast<int>(std::ceil(hi / bin)); ++t) {
    const double v = profile[static_cast<std::size_t>(((t % M) + M) % M)];
    if (v > peak) {
      peak = v;
      best_lag = t * bin;
    }
  }
  auto power_at = [&](double lag) {
    double pw = 0.0;
    const cf64 step = std::polar(1.0, 2.0 * kPi * lag / L);
    for (const auto& zg : z) {
      cf64 acc{}, ph{1.0, 0.0};
      for (int k = 0; k < L; ++k) {
        acc += zg[static_cast<std::size_t>(k)] * ph;
        ph *= step;
      }
      pw += std::norm(acc / static_cast<double>(L)) / G;
    }
    return pw;
  };
  if (opt.upsample > coarse) {
    const double centre = best_lag;
    const int reach = (opt.upsample + coarse - 1) / coarse;
    for (int i = -reach; i <= reach; ++i) {
      const double lag = centre + static_cast<double>(i) / opt.upsample;
      if (spec.type == MsgType::Prach && (lag < lo || lag >= hi)) continue;
      const double v = power_at(lag);
      if (v > peak) {
        peak = v;
        best_lag = lag;
      }
    }
  }
  double lag = std::fmod(best_lag, static_cast<double>(L));
  if (lag < 0) lag += L;
  if (lag > L / 2.0) lag -= L;

  FeatureDetail d;
  d.length = L;
  d.blocks_per_group = S;
  d.groups = G;
  d.peak_lag = lag;
  d.peak_to_average_ratio = avg > 0.0 ? peak / avg : 0.0;

  auto& f = d.features;
  f.corr_peak_power_db = to_db_clamped(peak);
  f.detected = avg > 0.0 && 10.0 * std::log10(d.peak_to_average_ratio) >= opt.detection_threshold_db;
  f.peak_to_avg_snr_db = to_db_clamped(peak_to_average_snr(d.peak_to_average_ratio, L, S));
  const double df = spec.type == MsgType::Prach ? phy::kPrachSpacingHz : phy::kSubcarrierSpacingHz;
  f.toa_offset_s = lag / (L * df);

  // Smoothed-correlation baseline: circular moving average across frequency.
  const int half = std::max(1, static_cast<int>(std::floor(L * opt.smoothing_fraction / 2.0)));
  const int w = 2 * half + 1;
  double sig = 0.0, noise = 0.0;
  for (const auto& zg : z) {
    auto at = [&](int k) { return zg[static_cast<std::size_t>(((k % L) + L) % L)]; };
    cf64 run{};
    for (int j = -half; j <= half; ++j) run += at(j);
    for (int k = 0; k < L; ++k) {
      const cf64 acc = run / static_cast<double>(w);
      sig += std::norm(acc);
      noise += std::norm(zg[static_cast<std::size_t>(k)] - acc);
      run += at(k + half + 1) - at(k - half);
    }
  }
  f.smoothed_snr_db = noise > 0.0 ? to_db_clamped(sig / noise / S) : 80.0;

  const auto all = phy::allocated_elements(grid, spec);
  double p = 0.0;
  for (auto v : all) p += std::norm(v);
  f.rms2_power_db = to_db_clamped(all.empty() ? 0.0 : p / static_cast<double>(all.size()));
  return d;
}

// ---------------------------------------------------------------------------
// BandReceiver

const phy::CellConfig* BandContext::find(std::uint32_t earfcn, std::uint16_t pci) const {
  for (const auto& c : cells) {
    if (c.earfcn == earfcn && c.pci == pci) return &c;
  }
  return nullptr;
}

std::size_t default_capacity(double sample_rate) {
  return static_cast<std::size_t>(std::llround(sample_rate * 0.064));
}

BandReceiver::BandReceiver(std::uint16_t receiver_id, BandContext band, std::size_t capacity, TimeNs base_timestamp)
    : receiver_id_(receiver_id), band_(std::move(band)), fft_(phy::fft_size_for_rate(band_.sample_rate)) {
  if (capacity == 0) capacity = default_capacity(band_.sample_rate);
  if (capacity < static_cast<std::size_t>(samples_per_subframe())) {
    throw InvalidParameter("ring must hold at least one subframe");
  }
  for (int p = 0; p < 2; ++p) {
    buffers_.push_back(std::make_unique<CircularIqBuffer>(capacity, band_.sample_rate, base_timestamp));
  }
}

bool BandReceiver::accept(const UplinkAllocation& alloc) {
  if (!band_.find(alloc.id.earfcn, alloc.id.pci)) return false;
  queues_[0].push(alloc);
  queues_[1].push(alloc);
  return true;
}

phy::MessageGrid BandReceiver::extract_allocation(const UplinkAllocation& alloc, int p) const {
  const phy::CellConfig* cell = band_.find(alloc.id.earfcn, alloc.id.pci);
  if (!cell) {
    throw InvalidAllocation(fmt::format("cell earfcn={} pci={} not in band {}", alloc.id.earfcn, alloc.id.pci,
                                        band_.band_id));
  }
  const auto spec = alloc.spec();
  phy::validate(spec, *cell);
  const int sps = samples_per_subframe();
  const std::int64_t start = static_cast<std::int64_t>(alloc.id.subframe) * sps;
  std::vector<cf64> x(static_cast<std::size_t>(sps));
  port(p).read(start, x);
  if (cell->ul_offset_hz != 0.0) {
    const double f = -cell->ul_offset_hz;
    const double rate = band_.sample_rate;
    const cf64 step = std::polar(1.0, 2.0 * kPi * f / rate);
    cf64 ph;
    for (std::size_t i = 0; i < x.size(); ++i) {
      ph = (i % 1024 == 0) ? dsp::phasor(f, rate, start + static_cast<std::int64_t>(i)) : ph * step;
      x[i] *= ph;
    }
  }
  if (spec.type == MsgType::Prach) {
    auto g = phy::prach_demodulate(x, spec.prb_offset, cell->n_prb_ul, fft_);
    g.subframe_index = alloc.id.subframe;
    return g;
  }
  auto full = phy::ofdm_demodulate(x, cell->n_prb_ul, fft_);
  phy::SubframeGrid g(cell->n_prb_ul, alloc.id.subframe, band_.sample_rate);
  const int width = spec.n_prb * phy::kSubcarriersPerPrb;
  for (int sym = 0; sym < phy::kSymbolsPerSubframe; ++sym) {
    const int first = phy::prb_for_symbol(spec, cell->n_prb_ul, sym) * phy::kSubcarriersPerPrb;
    for (int k = first; k < first + width; ++k) g.at(sym, k) = full.at(sym, k);
  }
  return g;
}

std::vector<BandReceiver::PortResult> BandReceiver::process_port(int p, const FeatureOptions& options) {
  auto& buf = port(p);
  auto& q = queue(p);
  std::vector<PortResult> out;
  for (const auto& alloc : q.pop_ready(buf.oldest(), buf.write_head(), samples_per_subframe())) {
    try {
      auto grid = extract_allocation(alloc, p);
      out.push_back({alloc, measure_features(grid, alloc.spec(), *band_.find(alloc.id.earfcn, alloc.id.pci), options)});
    } catch (const StaleRange&) {
      q.count_lost();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

std::optional<MeasurementReport> ReportJoiner::add(int port, const MessageId& id, const PortFeatures& f,
                                                   TimeNs reference_ns, TimeNs now) {
  std::lock_guard lock(mutex_);
  auto& part = partial_[id];
  part.ports[static_cast<std::size_t>(port)] = f;
  if (port == 0 || part.reference_ns == 0) part.reference_ns = reference_ns;
  if (!part.ports[0] || !part.ports[1]) return std::nullopt;
  MeasurementReport r;
  r.id = id;
  r.receiver_id = receiver_id_;
  r.measured_at = now;
  r.reference_ns = part.reference_ns;
  r.ports = {*part.ports[0], *part.ports[1]};
  partial_.erase(id);
  return r;
}

std::size_t ReportJoiner::prune(std::uint32_t before_subframe) {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (auto it = partial_.begin(); it != partial_.end();) {
    if (it->first.subframe < before_subframe) {
      it = partial_.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  return n;
}

void publish_report(bus::Bus& bus, const MeasurementReport& report) {
  bus.publish(bus::topic::kReport, encode(report));
}

}  // namespace ltag::ul
