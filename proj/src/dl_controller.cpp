// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/dl_controller.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace ltag::dl {

const char* to_string(ConnState s) {
  switch (s) {
    case ConnState::Idle: return "Idle";
    case ConnState::PrachSent: return "PrachSent";
    case ConnState::RarSent: return "RarSent";
    case ConnState::Msg3Sent: return "Msg3Sent";
    case ConnState::SetupSent: return "SetupSent";
    case ConnState::Complete: return "Complete";
  }
  return "?";
}

const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::PrachTx: return "PrachTx";
    case EventKind::RarBroadcast: return "RarBroadcast";
    case EventKind::Msg3Tx: return "Msg3Tx";
    case EventKind::PdschTx: return "PdschTx";
    case EventKind::PucchTx: return "PucchTx";
  }
  return "?";
}

namespace {

[[noreturn]] void illegal(ConnState s, const TimelineEvent& e, const char* why) {
  throw InvalidParameter(
      fmt::format("illegal {} at subframe {} in state {}: {}", to_string(e.kind), e.subframe, to_string(s), why));
}

std::uint32_t subframe_of(const std::vector<TimelineEvent>& tl, EventKind k, int nth = 0) {
  for (const auto& e : tl) {
    if (e.kind == k && nth-- == 0) return e.subframe;
  }
  throw InvalidParameter("event missing from timeline");
}

}  // namespace

void ConnectionStateMachine::apply(const TimelineEvent& e) {
  if (!timeline_.empty() && e.subframe < timeline_.back().subframe) illegal(state_, e, "time went backwards");
  switch (e.kind) {
    case EventKind::PrachTx:
      if (state_ != ConnState::Idle) illegal(state_, e, "preamble already sent");
      state_ = ConnState::PrachSent;
      break;
    case EventKind::RarBroadcast:
      if (state_ != ConnState::PrachSent) illegal(state_, e, "no preamble to answer");
      state_ = ConnState::RarSent;
      break;
    case EventKind::Msg3Tx:
      if (state_ != ConnState::RarSent) illegal(state_, e, "no grant");
      if (e.subframe != subframe_of(timeline_, EventKind::RarBroadcast) + kMsg3Delay) {
        illegal(state_, e, "Msg3 must follow the RAR by 6 subframes");
      }
      state_ = ConnState::Msg3Sent;
      break;
    case EventKind::PdschTx:
      if (state_ == ConnState::Msg3Sent) {
        state_ = ConnState::SetupSent;
      } else if (state_ != ConnState::SetupSent || pdsch_expected_ != 0) {
        illegal(state_, e, "setup already complete");
      }
      ++pdsch_sent_;
      if (e.final) pdsch_expected_ = pdsch_sent_;
      if (e.final && e.expected_pucch != pdsch_sent_) illegal(state_, e, "PUCCH count does not match PDSCH count");
      break;
    case EventKind::PucchTx:
      if (state_ != ConnState::SetupSent) illegal(state_, e, "nothing to acknowledge");
      if (pucch_sent_ >= pdsch_sent_) illegal(state_, e, "more acknowledgements than downlink messages");
      if (e.subframe != subframe_of(timeline_, EventKind::PdschTx, pucch_sent_) + kAckDelay) {
        illegal(state_, e, "PUCCH must follow its PDSCH by 4 subframes");
      }
      ++pucch_sent_;
      if (pdsch_expected_ != 0 && pucch_sent_ == pdsch_expected_) state_ = ConnState::Complete;
      break;
  }
  timeline_.push_back(e);
}

std::uint32_t next_prach_subframe(const phy::CellConfig& cell, std::uint32_t s) {
  if (cell.prach_subframes.empty()) throw ConfigError("cell has no PRACH subframes");
  for (std::uint32_t t = s;; ++t) {
    if (cell.is_prach_subframe(t)) return t;
  }
}

ConnectionStateMachine run_connection(const phy::CellConfig& cell, std::uint16_t rnti, std::uint64_t ue_tag,
                                      std::uint32_t prach_subframe, int preamble, std::mt19937_64& rng,
                                      const SchedulerOptions& o) {
  if (!cell.is_prach_subframe(prach_subframe)) {
    throw InvalidParameter(fmt::format("subframe {} is not a PRACH occasion", prach_subframe));
  }
  const ConnectionKey key{cell.earfcn, cell.pci, rnti};
  auto id = [&](MsgType t, std::uint32_t sf) { return MessageId{cell.earfcn, cell.pci, rnti, t, sf}; };
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  UplinkAllocation prach;
  prach.id = id(MsgType::Prach, prach_subframe);
  prach.prb_offset = cell.prach_prb_offset;
  prach.n_prb = phy::kPrachPrbs;
  prach.preamble_index = preamble;

  const std::uint32_t rar_sf = prach_subframe + static_cast<std::uint32_t>(uni(o.rar_delay_min, o.rar_delay_max));
  const std::uint32_t msg3_sf = rar_sf + kMsg3Delay;
  UplinkAllocation msg3;
  msg3.id = id(MsgType::Pusch, msg3_sf);
  msg3.n_prb = std::min(o.msg3_prb_choices[static_cast<std::size_t>(uni(0, static_cast<int>(o.msg3_prb_choices.size()) - 1))],
                        cell.n_prb_ul);
  int lo = 2;
  int hi = cell.n_prb_ul - 2 - msg3.n_prb;
  if (hi < lo) {
    lo = 0;
    hi = cell.n_prb_ul - msg3.n_prb;
  }
  msg3.prb_offset = uni(lo, hi);

  const std::uint32_t pdsch1 = msg3_sf + static_cast<std::uint32_t>(uni(o.setup_delay_min, o.setup_delay_max));
  std::vector<std::uint32_t> pdsch{pdsch1};
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < o.split_probability) {
    pdsch.push_back(pdsch1 + static_cast<std::uint32_t>(uni(1, 2)));
  }
  const int edge_max = std::min(o.pucch_edge_max, cell.n_prb_ul / 2 - 1);

  std::vector<TimelineEvent> ev;
  ev.push_back({prach_subframe, EventKind::PrachTx, {prach}});
  ev.push_back({rar_sf, EventKind::RarBroadcast, {prach, msg3}});
  ev.push_back({msg3_sf, EventKind::Msg3Tx, {msg3}});
  for (std::size_t i = 0; i < pdsch.size(); ++i) {
    UplinkAllocation ack;
    ack.id = id(MsgType::Pucch, pdsch[i] + kAckDelay);
    ack.prb_offset = uni(0, std::max(0, edge_max));
    ack.n_prb = 1;
    ack.hopping = true;
    const bool last = i + 1 == pdsch.size();
    ev.push_back({pdsch[i], EventKind::PdschTx, {ack}, last, static_cast<std::uint8_t>(last ? pdsch.size() : 0)});
  }
  for (std::size_t i = 0; i < pdsch.size(); ++i) {
    // PdschTx events are at indices 3.. in order; their PUCCH allocation is reused.
    ev.push_back({pdsch[i] + kAckDelay, EventKind::PucchTx, {ev[3 + i].allocations[0]}});
  }
  std::stable_sort(ev.begin(), ev.end(), [](const auto& a, const auto& b) { return a.subframe < b.subframe; });

  ConnectionStateMachine sm(key, ue_tag);
  for (const auto& e : ev) sm.apply(e);
  return sm;
}

CellScheduler::CellScheduler(phy::CellConfig cell, std::uint64_t seed, SchedulerOptions options)
    : cell_(std::move(cell)), options_(std::move(options)), rng_(seed) {
  if (cell_.prach_subframes.empty()) throw ConfigError("cell has no PRACH subframes");
}

std::uint16_t CellScheduler::request(std::uint32_t subframe, std::uint64_t ue_tag) {
  std::uniform_int_distribution<int> pre(0, phy::kPrachPreambles - 1);
  std::uniform_int_distribution<int> backoff(options_.backoff_min, options_.backoff_max);
  std::uint32_t s = subframe;
  std::uint32_t occasion = 0;
  int preamble = 0;
  for (;;) {
    occasion = next_prach_subframe(cell_, s);
    preamble = pre(rng_);
    if (used_preambles_.insert({occasion, preamble}).second) break;
    ++collisions_;
    s = occasion + static_cast<std::uint32_t>(backoff(rng_));
  }
  const std::uint16_t rnti = next_rnti_;
  next_rnti_ = next_rnti_ >= 0xFFF3 ? 0x003D : static_cast<std::uint16_t>(next_rnti_ + 1);
  connections_.push_back(run_connection(cell_, rnti, ue_tag, occasion, preamble, rng_, options_));
  return rnti;
}

std::vector<ScheduledEvent> CellScheduler::events() const {
  std::vector<ScheduledEvent> out;
  for (const auto& c : connections_) {
    for (const auto& e : c.timeline()) out.push_back({c.key(), c.ue_tag(), e});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.event.subframe < b.event.subframe; });
  return out;
}

void DlPublisher::broadcast_rar(const AllocationMsg& msg) {
  bus_.publish(bus::topic::kAllocation, encode(msg));
}

int DlPublisher::on_event(const ScheduledEvent& e, TimeNs now) {
  switch (e.event.kind) {
    case EventKind::RarBroadcast:
      broadcast_rar(AllocationMsg{now, e.event.allocations});
      return 1;
    case EventKind::PdschTx: {
      PdschNotice n{e.connection, e.event.subframe, e.event.final, e.event.expected_pucch, now};
      bus_.publish(bus::topic::kPdsch, encode(n));
      bus_.publish(bus::topic::kAllocation, encode(AllocationMsg{now, e.event.allocations}));
      return 2;
    }
    default:
      return 0;
  }
}

}  // namespace ltag::dl
