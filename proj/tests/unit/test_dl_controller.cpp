// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include <doctest.h>

#include <map>
#include <set>

#include "ltag/dl_controller.hpp"

using namespace ltag;
using namespace ltag::dl;

namespace {

phy::CellConfig cell() {
  phy::CellConfig c;
  c.earfcn = 1575;
  c.pci = 42;
  c.n_prb_ul = 25;
  c.prach_subframes = {1, 6};
  return c;
}

std::uint32_t first(const ConnectionStateMachine& sm, EventKind k, int nth = 0) {
  for (const auto& e : sm.timeline()) {
    if (e.kind == k && nth-- == 0) return e.subframe;
  }
  FAIL("missing event");
  return 0;
}

int count(const ConnectionStateMachine& sm, EventKind k) {
  int n = 0;
  for (const auto& e : sm.timeline()) n += e.kind == k;
  return n;
}

}  // namespace

TEST_CASE("connection timeline follows the fixed uplink delays") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::uint32_t start = next_prach_subframe(cell(), static_cast<std::uint32_t>(rng() % 100000));
    auto sm = run_connection(cell(), 100, 0, start, static_cast<int>(rng() % 64), rng);
    CHECK(sm.state() == ConnState::Complete);
    CHECK(count(sm, EventKind::PrachTx) == 1);
    CHECK(count(sm, EventKind::RarBroadcast) == 1);
    CHECK(count(sm, EventKind::Msg3Tx) == 1);
    const int n_pdsch = count(sm, EventKind::PdschTx);
    CHECK((n_pdsch == 1 || n_pdsch == 2));
    CHECK(count(sm, EventKind::PucchTx) == n_pdsch);

    const auto prach = first(sm, EventKind::PrachTx);
    const auto rar = first(sm, EventKind::RarBroadcast);
    CHECK(rar - prach >= 3);
    CHECK(rar - prach <= 13);
    CHECK(first(sm, EventKind::Msg3Tx) == rar + 6);
    for (int i = 0; i < n_pdsch; ++i) CHECK(first(sm, EventKind::PucchTx, i) == first(sm, EventKind::PdschTx, i) + 4);
    CHECK(sm.timeline().back().kind == EventKind::PucchTx);
  }
}

TEST_CASE("split probability controls the PUCCH count") {
  std::mt19937_64 rng(2);
  int two = 0;
  const int n = 5000;
  for (int i = 0; i < n; ++i) {
    auto sm = run_connection(cell(), 7, 0, 1, 3, rng);
    two += sm.pucch_count() == 2;
  }
  CHECK(static_cast<double>(two) / n == doctest::Approx(0.3).epsilon(0.1));
  SchedulerOptions never;
  never.split_probability = 0.0;
  for (int i = 0; i < 100; ++i) CHECK(run_connection(cell(), 7, 0, 1, 3, rng, never).pucch_count() == 1);
}

TEST_CASE("state machine rejects skipped or reordered events") {
  ConnectionStateMachine sm({1, 2, 3}, 0);
  CHECK_THROWS_AS(sm.apply({10, EventKind::RarBroadcast, {}}), InvalidParameter);
  sm.apply({10, EventKind::PrachTx, {}});
  CHECK_THROWS_AS(sm.apply({12, EventKind::Msg3Tx, {}}), InvalidParameter);
  sm.apply({15, EventKind::RarBroadcast, {}});
  CHECK_THROWS_AS(sm.apply({20, EventKind::Msg3Tx, {}}), InvalidParameter);
  sm.apply({21, EventKind::Msg3Tx, {}});
  CHECK_THROWS_AS(sm.apply({25, EventKind::PucchTx, {}}), InvalidParameter);
  sm.apply({26, EventKind::PdschTx, {}, true, 1});
  CHECK_THROWS_AS(sm.apply({27, EventKind::PdschTx, {}, true, 2}), InvalidParameter);
  CHECK_THROWS_AS(sm.apply({31, EventKind::PucchTx, {}}), InvalidParameter);
  sm.apply({30, EventKind::PucchTx, {}});
  CHECK(sm.state() == ConnState::Complete);
  CHECK_THROWS_AS(sm.apply({40, EventKind::PucchTx, {}}), InvalidParameter);
  CHECK_THROWS_AS(sm.apply({40, EventKind::PrachTx, {}}), InvalidParameter);
}

TEST_CASE("allocations carry correct identities") {
  std::mt19937_64 rng(3);
  auto sm = run_connection(cell(), 0x4242, 9, 11, 37, rng);
  for (const auto& e : sm.timeline()) {
    if (e.kind == EventKind::RarBroadcast) {
      REQUIRE(e.allocations.size() == 2);
      const auto& p = e.allocations[0];
      CHECK(p.id.type == MsgType::Prach);
      CHECK(p.preamble_index == 37);
      CHECK(p.id.subframe == 11);
      CHECK(e.subframe - p.id.subframe >= 3);
      CHECK(e.allocations[1].id.type == MsgType::Pusch);
      CHECK(e.allocations[1].id.subframe == e.subframe + 6);
      CHECK_NOTHROW(phy::validate(e.allocations[1].spec(), cell()));
      CHECK_NOTHROW(phy::validate(p.spec(), cell()));
    }
    if (e.kind == EventKind::PdschTx) {
      REQUIRE(e.allocations.size() == 1);
      CHECK(e.allocations[0].id.type == MsgType::Pucch);
      CHECK(e.allocations[0].id.subframe == e.subframe + 4);
      CHECK_NOTHROW(phy::validate(e.allocations[0].spec(), cell()));
    }
    for (const auto& a : e.allocations) {
      CHECK(a.id.rnti == 0x4242);
      CHECK(a.id.earfcn == 1575);
      CHECK(a.id.pci == 42);
    }
  }
  CHECK_THROWS_AS(run_connection(cell(), 1, 0, 2, 0, rng), InvalidParameter);
}

TEST_CASE("scheduler assigns unique identities and resolves preamble collisions") {
  CellScheduler s(cell(), 99);
  std::set<std::uint16_t> rntis;
  // Many UEs asking at the same instant force collisions on the same occasion.
  for (int i = 0; i < 300; ++i) rntis.insert(s.request(1000, static_cast<std::uint64_t>(i)));
  CHECK(rntis.size() == 300);
  CHECK(s.collisions() > 0);

  std::set<std::pair<std::uint32_t, int>> occasions;
  std::set<MessageId> ids;
  for (const auto& c : s.connections()) {
    CHECK(c.state() == ConnState::Complete);
    const auto& pr = c.timeline().front();
    REQUIRE(pr.kind == EventKind::PrachTx);
    CHECK(occasions.insert({pr.subframe, *pr.allocations[0].preamble_index}).second);
    for (const auto& e : c.timeline()) {
      if (e.kind == EventKind::PrachTx || e.kind == EventKind::Msg3Tx || e.kind == EventKind::PucchTx) {
        CHECK(ids.insert(e.allocations[0].id).second);
      }
    }
  }
  auto ev = s.events();
  for (std::size_t i = 1; i < ev.size(); ++i) CHECK(ev[i - 1].event.subframe <= ev[i].event.subframe);
}

TEST_CASE("nothing follows the last acknowledgement") {
  CellScheduler s(cell(), 5);
  for (int i = 0; i < 200; ++i) s.request(static_cast<std::uint32_t>(i * 3), static_cast<std::uint64_t>(i));
  std::map<ConnectionKey, std::uint32_t> last_ack;
  for (const auto& c : s.connections()) {
    const auto& tl = c.timeline();
    CHECK(tl.back().kind == EventKind::PucchTx);
    // exactly one PRACH, one PUSCH, one or two PUCCH measurement opportunities
    int uplink = 0;
    for (const auto& e : tl) uplink += e.kind == EventKind::PrachTx || e.kind == EventKind::Msg3Tx || e.kind == EventKind::PucchTx;
    CHECK((uplink == 3 || uplink == 4));
  }
}

TEST_CASE("publisher maps events to frames") {
  bus::InProcBus b;
  std::vector<WireMessage> got;
  b.subscribe(bus::topic::kAllocation, [&](std::string_view, std::span<const std::uint8_t> p) { got.push_back(decode(p)); });
  b.subscribe(bus::topic::kPdsch, [&](std::string_view, std::span<const std::uint8_t> p) { got.push_back(decode(p)); });
  DlPublisher pub(b);
  std::mt19937_64 rng(4);
  auto sm = run_connection(cell(), 55, 0, 1, 12, rng);
  int frames = 0;
  for (const auto& e : sm.timeline()) frames += pub.on_event({sm.key(), 0, e}, 1000);
  b.pump();
  REQUIRE(got.size() == static_cast<std::size_t>(frames));
  const auto& rar = std::get<AllocationMsg>(got[0]);
  REQUIRE(rar.allocations.size() == 2);
  CHECK(rar.allocations[0].preamble_index == 12);
  bool saw_final = false;
  for (const auto& m : got) {
    if (auto* n = std::get_if<PdschNotice>(&m)) {
      if (n->final) {
        saw_final = true;
        CHECK(n->expected_pucch == sm.pucch_count());
      }
    }
  }
  CHECK(saw_final);
}

TEST_CASE("publishing with no subscriber is counted, not fatal") {
  bus::InProcBus b;
  DlPublisher pub(b);
  AllocationMsg m;
  pub.broadcast_rar(m);
  CHECK(b.stats().dropped == 1);
}
