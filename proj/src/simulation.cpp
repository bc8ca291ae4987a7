// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/simulation.hpp"

#include <algorithm>
#include <random>

#include <fmt/format.h>

#include "ltag/scenario.hpp"

namespace ltag::sim {

double ue_re_power_dbm(const chan::DeploymentScenario& s) {
  return s.ue_tx_power_dbm - 10.0 * std::log10(static_cast<double>(phy::kPrachPrbs * phy::kSubcarriersPerPrb));
}

const Transmitter* Air::find(const MessageId& id) const {
  auto it = tx_.find(id);
  return it == tx_.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// SiteMeasurer

SiteMeasurer::SiteMeasurer(const chan::DeploymentScenario& s, chan::ReceiverSite site, ul::FeatureOptions options)
    : s_(s),
      site_(site),
      options_(options),
      amplitude_(std::sqrt(db_to_linear(ue_re_power_dbm(s) - s.channel.full_scale_dbm))),
      noise_(chan::noise_variance_per_re(s.channel)) {}

std::array<PortFeatures, 2> SiteMeasurer::measure(const phy::CellConfig& cell, const phy::UplinkMessageSpec& spec,
                                                  const phy::MessageGrid& tx_grid, const Transmitter* tx) {
  const bool prach = spec.type == MsgType::Prach;
  auto& rx = grids_[prach ? -cell.n_prb_ul : cell.n_prb_ul];
  if (rx.index() != tx_grid.index() || (prach && std::get<phy::PrachGrid>(rx).bins.size() != std::get<phy::PrachGrid>(tx_grid).bins.size())) {
    rx = tx_grid;
  } else if (!prach && std::get<phy::SubframeGrid>(rx).cells.size() != std::get<phy::SubframeGrid>(tx_grid).cells.size()) {
    rx = tx_grid;
  }
  if (prach) {
    // The PRACH grid's frequency position is part of the grid itself.
    auto& p = std::get<phy::PrachGrid>(rx);
    const auto& t = std::get<phy::PrachGrid>(tx_grid);
    p.prb_offset = t.prb_offset;
    p.n_prb_ul = t.n_prb_ul;
  }

  std::array<PortFeatures, 2> out{};
  for (int port = 0; port < 2; ++port) {
    cf64 gain = 0.0;
    double delay = 0.0;
    std::uint64_t noise_seed = derive_seed(0x6e6f6973ULL, site_.id, port, spec.rnti, static_cast<int>(spec.type));
    if (tx) {
      const auto real = chan::draw_path(s_.channel, tx->seed, site_.id, port);
      gain = amplitude_ * chan::path_coefficient(s_, tx->position, site_, port, real);
      delay = chan::path_delay_s(tx->position, site_, port);
      noise_seed = derive_seed(tx->seed, site_.id, port, 0x6e);
    }
    std::mt19937_64 rng(noise_seed);
    chan::apply_re_channel_allocated(tx_grid, spec, gain, delay, cell.ul_offset_hz, noise_, rng, rx);
    out[static_cast<std::size_t>(port)] = ul::measure_features(rx, spec, cell, options_);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SimUplinkReceivers

SimUplinkReceivers::SimUplinkReceivers(bus::Bus& bus, const chan::DeploymentScenario& s, const Air& air,
                                       std::vector<std::uint16_t> sites, ul::FeatureOptions options)
    : bus_(bus), s_(s), air_(air) {
  for (auto id : sites) sites_.emplace_back(s, s.receiver(id), options);
  sub_ = bus_.subscribe(bus::topic::kAllocation, [this](std::string_view, std::span<const std::uint8_t> p) {
    const auto msg = std::get<AllocationMsg>(decode(p));
    for (auto a : msg.allocations) {
      a.published_at = msg.published_at;
      pending_.emplace(a.id.subframe, a);
      ++allocations_;
    }
  });
}

SimUplinkReceivers::~SimUplinkReceivers() { bus_.unsubscribe(sub_); }

std::size_t SimUplinkReceivers::advance(std::uint32_t current, TimeNs now) {
  std::size_t n = 0;
  while (!pending_.empty() && pending_.begin()->first < current) {
    const UplinkAllocation a = pending_.begin()->second;
    pending_.erase(pending_.begin());
    const auto& cell = s_.cell(a.id.earfcn, a.id.pci);
    const auto spec = a.spec();
    const Transmitter* tx = air_.find(a.id);
    const auto grid = phy::build_uplink_message(spec, tx ? derive_seed(tx->seed, 1) : 0, cell, a.id.subframe);
    for (auto& site : sites_) {
      MeasurementReport r;
      r.id = a.id;
      r.receiver_id = site.site().id;
      r.reference_ns = a.published_at;
      r.measured_at = now;
      r.ports = site.measure(cell, spec, grid, tx);
      ul::publish_report(bus_, r);
      ++reports_;
    }
    ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// PortAir

PortAir::PortAir(const chan::DeploymentScenario& s, chan::BandConfig band, chan::ReceiverSite site, int port,
                 std::uint64_t noise_seed)
    : s_(s),
      band_(band),
      site_(site),
      port_(port),
      fft_(phy::fft_size_for_rate(band.sample_rate)),
      spf_(phy::samples_per_subframe(fft_)),
      amplitude_(std::sqrt(db_to_linear(ue_re_power_dbm(s) - s.channel.full_scale_dbm))),
      acc_(static_cast<std::size_t>(2 * spf_)),
      rng_(noise_seed) {
  // 64 subframes of noise; a fresh random offset per subframe keeps
  // consecutive measurements independent at a fraction of the cost.
  noise_.assign(static_cast<std::size_t>(64 * spf_), cf64{});
  chan::add_noise(noise_, chan::time_noise_variance(chan::noise_variance_per_re(s.channel), band.sample_rate), rng_);
}

std::vector<cf64> PortAir::subframe(std::uint32_t sf, std::span<const AirTransmission> txs) {
  const auto spf = static_cast<std::size_t>(spf_);
  for (const auto& t : txs) {
    if (t.alloc.id.subframe != sf) continue;
    const auto& cell = s_.cell(t.alloc.id.earfcn, t.alloc.id.pci);
    if (s_.band_of(cell).id != band_.id) continue;
    const auto grid = phy::build_uplink_message(t.alloc.spec(), derive_seed(t.tx.seed, 1), cell, sf);
    auto x = phy::modulate(grid, fft_).samples;
    const auto path = chan::draw_path(s_.channel, t.tx.seed, site_.id, port_);
    const cf64 g = amplitude_ * chan::path_coefficient(s_, t.tx.position, site_, port_, path);
    const std::int64_t first = static_cast<std::int64_t>(sf) * spf_;
    if (cell.ul_offset_hz == 0.0) {
      for (auto& v : x) v *= g;
    } else {
      const cf64 step = chan::mixer_phasor(cell.ul_offset_hz, band_.sample_rate, 1);
      cf64 rot;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (i % 64 == 0) {
          rot = g * chan::mixer_phasor(cell.ul_offset_hz, band_.sample_rate, first + static_cast<std::int64_t>(i));
        }
        x[i] *= rot;
        rot *= step;
      }
    }
    const auto y = chan::fractional_delay(x, chan::path_delay_s(t.tx.position, site_, port_) * band_.sample_rate);
    for (std::size_t i = 0; i < std::min(y.size(), acc_.size()); ++i) acc_[i] += y[i];
  }
  std::vector<cf64> out(acc_.begin(), acc_.begin() + static_cast<long>(spf));
  std::copy(acc_.begin() + static_cast<long>(spf), acc_.end(), acc_.begin());
  std::fill(acc_.begin() + static_cast<long>(spf), acc_.end(), cf64{});
  const auto off = std::uniform_int_distribution<std::size_t>(0, noise_.size() - 1)(rng_);
  for (std::size_t i = 0; i < spf; ++i) out[i] += noise_[(off + i) % noise_.size()];
  return out;
}

// ---------------------------------------------------------------------------
// Dataset generation

TrafficPlan plan_traffic(const chan::DeploymentScenario& s, std::size_t n_connections, std::uint64_t seed,
                         int request_interval, std::uint32_t first_subframe) {
  if (request_interval < 1) throw InvalidParameter("request_interval must be >= 1");
  TrafficPlan plan;
  plan.routes = scenario::build_routes(s, seed);
  if (plan.routes.empty()) throw ConfigError("scenario has no routes (add routes.explicit or routes.generator)");

  std::vector<dl::CellScheduler> sched;
  for (std::size_t c = 0; c < s.cells.size(); ++c) sched.emplace_back(s.cells[c], derive_seed(seed, 0x73636864, c));
  struct Ue {
    chan::Vec2 position;
    bool inside;
  };
  std::vector<Ue> ues(n_connections);
  for (std::size_t i = 0; i < n_connections; ++i) {
    std::mt19937_64 rng(derive_seed(seed, 0x7565, i));
    const auto& route = plan.routes[i % plan.routes.size()];
    const auto p = scenario::point_on_route(route, std::uniform_real_distribution<double>(0.0, 1.0)(rng));
    ues[i] = {p, s.inside(p)};
    plan.inside_connections += ues[i].inside;
    const auto c = std::uniform_int_distribution<std::size_t>(0, s.cells.size() - 1)(rng);
    const auto sf = static_cast<std::uint32_t>(first_subframe + i * static_cast<std::size_t>(request_interval));
    const auto rnti = sched[c].request(sf, i);
    plan.connection_of[{s.cells[c].earfcn, s.cells[c].pci, rnti}] = i;
  }

  for (auto& sc : sched) {
    plan.collisions += sc.collisions();
    for (auto& e : sc.events()) {
      const auto conn = plan.connection_of.at(e.connection);
      if (e.event.kind == dl::EventKind::PrachTx || e.event.kind == dl::EventKind::Msg3Tx ||
          e.event.kind == dl::EventKind::PucchTx) {
        const auto& a = e.event.allocations.at(0);
        const Transmitter tx{ues[conn].position, ues[conn].inside, conn,
                             derive_seed(seed, 0x7478, conn, static_cast<int>(a.id.type), a.id.subframe)};
        plan.air.add(a.id, tx);
        plan.transmissions.push_back({a, tx});
      }
      plan.events.push_back(std::move(e));
    }
  }
  std::stable_sort(plan.events.begin(), plan.events.end(),
                   [](const auto& a, const auto& b) { return a.event.subframe < b.event.subframe; });
  std::stable_sort(plan.transmissions.begin(), plan.transmissions.end(),
                   [](const auto& a, const auto& b) { return a.alloc.id.subframe < b.alloc.id.subframe; });
  plan.last_subframe = plan.events.empty() ? 0 : plan.events.back().event.subframe;
  return plan;
}

GeneratedData generate_dataset(const chan::DeploymentScenario& s, const GenerateOptions& o) {
  s.validate();
  if (o.n_connections == 0) throw InvalidParameter("n_connections must be > 0");

  GeneratedData out;
  auto plan = plan_traffic(s, o.n_connections, o.seed, o.request_interval);
  out.routes = plan.routes;
  out.summary.collisions = plan.collisions;
  const auto& conn_of = plan.connection_of;
  const auto& air = plan.air;
  const auto& events = plan.events;

  std::vector<std::uint16_t> ids;
  for (const auto& r : s.receivers) ids.push_back(r.id);
  out.layout = cu::FeatureLayout(ids);
  out.dataset = gf::Dataset(out.layout.size());
  out.dataset.reserve(o.n_connections * 5);

  bus::InProcBus bus;
  dl::DlPublisher dl(bus);
  SimUplinkReceivers rx(bus, s, air, ids, o.features);
  TimeNs now = 0;
  cu::CentralUnitOptions cuo;
  cuo.receivers = ids;
  cuo.publish_decisions = false;
  cu::CentralUnit unit(bus, std::nullopt, cuo, [&] { return now; });

  std::set<std::uint64_t> decided;
  unit.on_message([&](const cu::MessageDecision& d) {
    ++out.summary.messages;
    const Transmitter* tx = air.find(d.slot.id);
    if (!tx) return;
    if (!d.features.usable()) {
      ++out.summary.unusable;
      return;
    }
    out.dataset.push_back(d.features.values, d.features.mask, d.slot.id, tx->connection, tx->inside ? 1 : 0);
  });
  unit.on_connection([&](const cu::FusedDecision& d) {
    if (auto it = conn_of.find(d.key); it != conn_of.end()) decided.insert(it->second);
    if (o.progress && decided.size() % 1000 == 0) o.progress(decided.size(), o.n_connections);
  });

  const std::uint32_t last = plan.last_subframe;
  std::size_t next = 0;
  for (std::uint32_t sf = 0; sf <= last + 2; ++sf) {
    now = subframe_time(sf);
    while (next < events.size() && events[next].event.subframe == sf) dl.on_event(events[next++], now);
    bus.pump();
    // Everything published so far belongs to subframes that are now captured.
    rx.advance(sf, now + 500'000);
    now += 500'000;
    bus.pump();
    unit.tick();
    bus.pump();
  }
  now = subframe_time(last + 100);
  unit.flush();
  bus.pump();

  out.dataset.shrink_to_fit();
  out.summary.connections = o.n_connections;
  out.summary.rows = out.dataset.size();
  out.summary.reports_published = rx.reports();
  out.summary.reports_aggregated = unit.aggregator_stats().accepted;
  out.summary.aggregator = unit.aggregator_stats();
  out.summary.inside_fraction = static_cast<double>(plan.inside_connections) / static_cast<double>(o.n_connections);
  return out;
}

}  // namespace ltag::sim
