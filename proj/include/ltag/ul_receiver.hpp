// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "ltag/bus.hpp"
#include "ltag/lte_phy.hpp"
#include "ltag/messages.hpp"

namespace ltag::ul {

// ---------------------------------------------------------------------------
// Sample storage

/// Single-writer/single-reader ring of IQ samples addressed by absolute
/// sample index. Index 0 was captured at `base_timestamp`.
class CircularIqBuffer {
public:
  CircularIqBuffer(std::size_t capacity, double sample_rate, TimeNs base_timestamp = 0);

  void write(std::span<const cf32> samples);
  void write(std::span<const cf64> samples);

  /// Copies [start, start + out.size()). Throws StaleRange if any of it has
  /// been overwritten (checked again after the copy) and RetryLater if it has
  /// not been written yet.
  void read(std::int64_t start, std::span<cf64> out) const;

  std::size_t capacity() const { return data_.size(); }
  double sample_rate() const { return rate_; }
  /// Absolute index of the next sample to be written.
  std::int64_t write_head() const { return head_.load(std::memory_order_acquire); }
  /// Oldest index still readable.
  std::int64_t oldest() const;
  TimeNs timestamp_of(std::int64_t index) const;
  /// base_timestamp + write_head / sample_rate.
  TimeNs head_timestamp() const { return timestamp_of(write_head()); }

private:
  std::vector<cf32> data_;
  double rate_;
  TimeNs base_;
  std::atomic<std::int64_t> head_{0};
  // End of the range the writer is about to fill; published before the copy.
  std::atomic<std::int64_t> reserved_{0};
};

/// Allocations waiting for their subframe to be fully captured. Safe for one
/// producer (bus listener) and one consumer (port worker).
class AllocationEventQueue {
public:
  /// Returns false if this message id was already queued or processed.
  bool push(const UplinkAllocation& alloc);

  /// Allocations whose subframe [start, end) satisfies end <= write_head.
  /// Those with start < oldest are dropped and counted as lost.
  std::vector<UplinkAllocation> pop_ready(std::int64_t oldest, std::int64_t write_head, int samples_per_subframe);

  std::size_t pending() const;
  std::uint64_t lost() const { return lost_.load(); }
  std::uint64_t accepted() const { return accepted_.load(); }
  /// For allocations that were popped but overwritten before the read finished.
  void count_lost() { ++lost_; }

private:
  mutable std::mutex mutex_;
  std::multimap<std::uint32_t, UplinkAllocation> pending_;
  std::set<MessageId> seen_;
  std::atomic<std::uint64_t> lost_{0};
  std::atomic<std::uint64_t> accepted_{0};
};

// ---------------------------------------------------------------------------
// Features

struct FeatureOptions {
  int upsample = 32;
  /// Peak-to-average ratio below this declares the port absent.
  double detection_threshold_db = 3.0;
  /// Moving-average width for the smoothed baseline, as a fraction of the
  /// correlation length (rounded to an odd count, at least 3).
  double smoothing_fraction = 1.0 / 16.0;
};

struct FeatureDetail {
  PortFeatures features;
  double peak_to_average_ratio = 0.0;  // linear, of the combined power profile
  double peak_lag = 0.0;               // correlation lags (fractional)
  int length = 0;                      // RS length per block
  int blocks_per_group = 0;            // coherently averaged RS symbols
  int groups = 0;                      // distinct frequency positions
};

FeatureDetail measure_features_detailed(const phy::MessageGrid& grid, const phy::UplinkMessageSpec& spec,
                                        const phy::CellConfig& cell, const FeatureOptions& options = {});

inline PortFeatures measure_features(const phy::MessageGrid& grid, const phy::UplinkMessageSpec& spec,
                                     const phy::CellConfig& cell, const FeatureOptions& options = {}) {
  return measure_features_detailed(grid, spec, cell, options).features;
}

/// Converts a peak-to-average ratio R of an L-point correlation into the
/// per-element SNR of S coherently averaged blocks: (R - 1) / (L - R) / S.
double peak_to_average_snr(double ratio, int length, int blocks);

// ---------------------------------------------------------------------------
// Receiver

struct BandContext {
  int band_id = 3;
  double sample_rate = 30.72e6;
  std::vector<phy::CellConfig> cells;

  const phy::CellConfig* find(std::uint32_t earfcn, std::uint16_t pci) const;
};

/// Default ring capacity: 64 ms.
std::size_t default_capacity(double sample_rate);

/// One uplink receiver's processing for one band: two port rings and two
/// allocation queues (the port workers never share state).
class BandReceiver {
public:
  BandReceiver(std::uint16_t receiver_id, BandContext band, std::size_t capacity = 0, TimeNs base_timestamp = 0);

  std::uint16_t receiver_id() const { return receiver_id_; }
  const BandContext& band() const { return band_; }
  int fft_size() const { return fft_; }
  int samples_per_subframe() const { return phy::samples_per_subframe(fft_); }

  CircularIqBuffer& port(int p) { return *buffers_[static_cast<std::size_t>(p)]; }
  const CircularIqBuffer& port(int p) const { return *buffers_[static_cast<std::size_t>(p)]; }
  AllocationEventQueue& queue(int p) { return queues_[static_cast<std::size_t>(p)]; }

  /// Hands an allocation to both port queues if it belongs to this band.
  bool accept(const UplinkAllocation& alloc);

  /// Copies the allocation's subframe from the port ring, shifts the cell to
  /// baseband, demodulates, and zeroes everything outside the allocation.
  phy::MessageGrid extract_allocation(const UplinkAllocation& alloc, int port) const;

  struct PortResult {
    UplinkAllocation alloc;
    PortFeatures features;
  };
  /// Measures every ready allocation on one port.
  std::vector<PortResult> process_port(int port, const FeatureOptions& options = {});

private:
  std::uint16_t receiver_id_;
  BandContext band_;
  int fft_;
  std::vector<std::unique_ptr<CircularIqBuffer>> buffers_;
  std::array<AllocationEventQueue, 2> queues_;
};

/// Merges per-port results into reports once both ports have finished.
class ReportJoiner {
public:
  explicit ReportJoiner(std::uint16_t receiver_id) : receiver_id_(receiver_id) {}

  /// Returns the report when this completes the pair.
  std::optional<MeasurementReport> add(int port, const MessageId& id, const PortFeatures& f, TimeNs reference_ns,
                                       TimeNs now);
  /// Drops half-finished pairs older than `before_subframe`.
  std::size_t prune(std::uint32_t before_subframe);
  std::size_t partial_count() const {
    std::lock_guard lock(mutex_);
    return partial_.size();
  }

private:
  struct Partial {
    std::array<std::optional<PortFeatures>, 2> ports;
    TimeNs reference_ns = 0;
  };
  std::uint16_t receiver_id_;
  mutable std::mutex mutex_;
  std::map<MessageId, Partial> partial_;
};

void publish_report(bus::Bus& bus, const MeasurementReport& report);

}  // namespace ltag::ul
