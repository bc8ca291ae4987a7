// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "ltag/common.hpp"
#include "ltag/lte_phy.hpp"

namespace ltag {

/// Where an uplink message will appear. For PUCCH `prb_offset` is the edge
/// index; for PRACH it is the cell's PRACH frequency offset.
struct UplinkAllocation {
  MessageId id;
  int prb_offset = 0;
  int n_prb = 1;
  bool hopping = false;
  std::optional<int> preamble_index;
  /// Not on the wire: set on decode from the frame that carried it.
  TimeNs published_at = 0;

  phy::UplinkMessageSpec spec() const;
};

/// One publication from the downlink side: the RAR carries the past PRACH
/// and the Msg3 grant together, later grants carry one allocation each.
struct AllocationMsg {
  TimeNs published_at = 0;
  std::vector<UplinkAllocation> allocations;
};

/// A downlink shared-channel transmission that will be acknowledged on PUCCH.
/// The last one of a connection has `final` set and carries the number of
/// PUCCH messages the connection produced in total.
struct PdschNotice {
  ConnectionKey connection;
  std::uint32_t subframe = 0;
  bool final = false;
  std::uint8_t expected_pucch = 0;
  TimeNs published_at = 0;
};

struct PortFeatures {
  /// False when the correlation peak failed detection; rms2 is still valid.
  bool detected = false;
  double corr_peak_power_db = 0.0;
  double rms2_power_db = 0.0;
  double peak_to_avg_snr_db = 0.0;
  double smoothed_snr_db = 0.0;
  double toa_offset_s = 0.0;
};

struct MeasurementReport {
  MessageId id;
  std::uint16_t receiver_id = 0;
  TimeNs measured_at = 0;
  /// Time the allocation that triggered this measurement was published.
  TimeNs reference_ns = 0;
  std::array<PortFeatures, 2> ports{};
};

struct Decision {
  MessageId id;
  double score = 0.5;
  bool has_final = false;
  double fused = 0.5;
  bool inside = false;
  TimeNs decided_at = 0;
  TimeNs latency_ns = 0;
};

// ---------------------------------------------------------------------------
// Wire format
//
//   [u8 version][u8 kind][u32 payload length][payload]
//
// All integers little-endian, doubles as IEEE-754 binary64 little-endian,
// timestamps as u64 nanoseconds since the scenario epoch. MessageId is
// earfcn u32, pci u16, rnti u16, type u8, subframe u32 (13 bytes).
//
//   Allocation (1):   published_at u64, count u16, count x
//                     {MessageId, prb_offset u16, n_prb u16, hopping u8,
//                      preamble u8 (0xFF = none)}
//   PdschNotice (2):  earfcn u32, pci u16, rnti u16, subframe u32, flags u8
//                     (bit0 final), expected_pucch u8, published_at u64
//   Report (3):       MessageId, receiver_id u16, measured_at u64,
//                     reference_ns u64, 2 x {detected u8, corr f64, rms2 f64,
//                     p2a f64, smoothed f64, toa f64}
//   Decision (4):     MessageId, flags u8 (bit0 final, bit1 inside), score
//                     f64, fused f64, decided_at u64, latency_ns u64

inline constexpr std::uint8_t kWireVersion = 1;

enum class MsgKind : std::uint8_t { Allocation = 1, PdschNotice = 2, MeasurementReport = 3, Decision = 4 };

using Frame = std::vector<std::uint8_t>;
using WireMessage = std::variant<AllocationMsg, PdschNotice, MeasurementReport, Decision>;

Frame encode(const AllocationMsg& m);
Frame encode(const PdschNotice& m);
Frame encode(const MeasurementReport& m);
Frame encode(const Decision& m);
Frame encode(const WireMessage& m);

/// Throws FormatError on a bad version, unknown kind, or length mismatch.
WireMessage decode(std::span<const std::uint8_t> frame);
MsgKind peek_kind(std::span<const std::uint8_t> frame);

inline constexpr std::size_t kReportFrameSize = 6 + 13 + 2 + 8 + 8 + 2 * (1 + 5 * 8);

}  // namespace ltag
