// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "ltag/bus.hpp"
#include "ltag/lte_phy.hpp"
#include "ltag/messages.hpp"

namespace ltag::dl {

enum class ConnState : std::uint8_t { Idle, PrachSent, RarSent, Msg3Sent, SetupSent, Complete };

enum class EventKind : std::uint8_t {
  PrachTx,       // UE sends the preamble
  RarBroadcast,  // downlink: random access response, published with both allocations
  Msg3Tx,        // UE sends the connection request on PUSCH
  PdschTx,       // downlink: (part of) the connection setup, published as a notice
  PucchTx,       // UE acknowledges on PUCCH
};

const char* to_string(ConnState s);
const char* to_string(EventKind k);

struct TimelineEvent {
  std::uint32_t subframe = 0;
  EventKind kind = EventKind::PrachTx;
  /// Uplink transmissions carry their allocation. RAR carries the PRACH
  /// allocation and the Msg3 grant; PDSCH carries the PUCCH it triggers.
  std::vector<UplinkAllocation> allocations;
  /// PDSCH only: last downlink part of the setup.
  bool final = false;
  std::uint8_t expected_pucch = 0;
};

struct SchedulerOptions {
  double split_probability = 0.3;
  int rar_delay_min = 3;  // subframes after the PRACH
  int rar_delay_max = 13;
  int setup_delay_min = 4;  // PDSCH subframes after Msg3
  int setup_delay_max = 8;
  int backoff_min = 1;
  int backoff_max = 10;
  std::vector<int> msg3_prb_choices{1, 2, 3, 4, 6};
  int pucch_edge_max = 1;  // edge index drawn from [0, pucch_edge_max]
};

inline constexpr int kMsg3Delay = 6;
inline constexpr int kAckDelay = 4;

/// One UE's connection establishment. Events must be applied in order; any
/// event that would skip a state throws InvalidParameter.
class ConnectionStateMachine {
public:
  ConnectionStateMachine() = default;
  ConnectionStateMachine(ConnectionKey key, std::uint64_t ue_tag) : key_(key), ue_tag_(ue_tag) {}

  void apply(const TimelineEvent& e);

  ConnectionKey key() const { return key_; }
  std::uint64_t ue_tag() const { return ue_tag_; }
  ConnState state() const { return state_; }
  const std::vector<TimelineEvent>& timeline() const { return timeline_; }
  int pucch_count() const { return pucch_sent_; }

private:
  ConnectionKey key_;
  std::uint64_t ue_tag_ = 0;
  ConnState state_ = ConnState::Idle;
  std::vector<TimelineEvent> timeline_;
  int pdsch_sent_ = 0;
  int pdsch_expected_ = 0;
  int pucch_sent_ = 0;
};

/// Builds the complete event list of one connection whose PRACH goes out at
/// `prach_subframe` with `preamble`, and runs it through a state machine.
ConnectionStateMachine run_connection(const phy::CellConfig& cell, std::uint16_t rnti, std::uint64_t ue_tag,
                                      std::uint32_t prach_subframe, int preamble, std::mt19937_64& rng,
                                      const SchedulerOptions& options = {});

/// Smallest PRACH-capable subframe >= s.
std::uint32_t next_prach_subframe(const phy::CellConfig& cell, std::uint32_t s);

struct ScheduledEvent {
  ConnectionKey connection;
  std::uint64_t ue_tag = 0;
  TimelineEvent event;
};

/// Per-cell scheduler: assigns RNTIs, picks PRACH occasions and preambles,
/// resolves same-preamble collisions by backing off the later UE, and emits
/// the merged, time-ordered event stream.
class CellScheduler {
public:
  CellScheduler(phy::CellConfig cell, std::uint64_t seed, SchedulerOptions options = {});

  /// A UE wants to connect at or after `subframe`. Returns its RNTI.
  std::uint16_t request(std::uint32_t subframe, std::uint64_t ue_tag);

  /// All events of every requested connection ordered by (subframe, request).
  std::vector<ScheduledEvent> events() const;
  const std::vector<ConnectionStateMachine>& connections() const { return connections_; }
  const phy::CellConfig& cell() const { return cell_; }
  std::size_t collisions() const { return collisions_; }

private:
  phy::CellConfig cell_;
  SchedulerOptions options_;
  std::mt19937_64 rng_;
  std::uint16_t next_rnti_ = 0x003D;
  std::set<std::pair<std::uint32_t, int>> used_preambles_;
  std::vector<ConnectionStateMachine> connections_;
  std::size_t collisions_ = 0;
};

/// The downlink-receiver role: turns scheduler events into bus publications.
/// RAR -> one Allocation frame with the PRACH and Msg3 allocations.
/// PDSCH -> a PdschNotice frame and an Allocation frame for the PUCCH.
/// Uplink transmission events publish nothing.
class DlPublisher {
public:
  explicit DlPublisher(bus::Bus& bus) : bus_(bus) {}

  /// Returns the number of frames published.
  int on_event(const ScheduledEvent& e, TimeNs now);
  void broadcast_rar(const AllocationMsg& msg);

private:
  bus::Bus& bus_;
};

}  // namespace ltag::dl
