// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "ltag/bus.hpp"
#include "ltag/central_unit.hpp"
#include "ltag/channel.hpp"
#include "ltag/dl_controller.hpp"
#include "ltag/geofence_model.hpp"
#include "ltag/ul_receiver.hpp"

namespace ltag::sim {

/// Per resource element transmit power. UEs run at constant spectral density:
/// the configured power spread over six PRBs, for every message type.
double ue_re_power_dbm(const chan::DeploymentScenario& s);

inline TimeNs subframe_time(std::uint32_t subframe) { return static_cast<TimeNs>(subframe) * 1'000'000; }

struct Transmitter {
  chan::Vec2 position;
  bool inside = false;
  std::uint64_t connection = 0;
  std::uint64_t seed = 0;
};

/// Ground truth of everything sent over the air, keyed by message id.
class Air {
public:
  void add(const MessageId& id, const Transmitter& tx) { tx_[id] = tx; }
  const Transmitter* find(const MessageId& id) const;
  std::size_t size() const { return tx_.size(); }

private:
  std::unordered_map<MessageId, Transmitter> tx_;
};

/// Measures messages at one receiver site through the resource-element
/// channel. Reuses its receive grids between calls.
class SiteMeasurer {
public:
  SiteMeasurer(const chan::DeploymentScenario& s, chan::ReceiverSite site, ul::FeatureOptions options = {});

  /// `tx` null means nothing was sent on the allocation (noise only).
  std::array<PortFeatures, 2> measure(const phy::CellConfig& cell, const phy::UplinkMessageSpec& spec,
                                      const phy::MessageGrid& tx_grid, const Transmitter* tx);
  const chan::ReceiverSite& site() const { return site_; }

private:
  const chan::DeploymentScenario& s_;
  chan::ReceiverSite site_;
  ul::FeatureOptions options_;
  double amplitude_;
  double noise_;
  std::map<int, phy::MessageGrid> grids_;  // by n_prb; PRACH under -n_prb
};

/// In-process stand-in for the uplink receivers of a scenario. It listens to
/// allocations, measures each allocation at every active site once its
/// subframe has been captured, and publishes one report per site.
class SimUplinkReceivers {
public:
  SimUplinkReceivers(bus::Bus& bus, const chan::DeploymentScenario& s, const Air& air,
                     std::vector<std::uint16_t> sites, ul::FeatureOptions options = {});
  ~SimUplinkReceivers();
  SimUplinkReceivers(const SimUplinkReceivers&) = delete;
  SimUplinkReceivers& operator=(const SimUplinkReceivers&) = delete;

  /// Measures every pending allocation whose subframe ended before
  /// `current_subframe` began.
  std::size_t advance(std::uint32_t current_subframe, TimeNs now);

  std::uint64_t allocations() const { return allocations_; }
  std::uint64_t reports() const { return reports_; }
  std::size_t pending() const { return pending_.size(); }

private:
  bus::Bus& bus_;
  const chan::DeploymentScenario& s_;
  const Air& air_;
  std::vector<SiteMeasurer> sites_;
  bus::SubscriptionId sub_ = 0;
  std::multimap<std::uint32_t, UplinkAllocation> pending_;
  std::uint64_t allocations_ = 0;
  std::uint64_t reports_ = 0;
};

// ---------------------------------------------------------------------------
// Traffic

struct AirTransmission {
  UplinkAllocation alloc;
  Transmitter tx;
};

/// Everything that happens over the air and on the downlink for a batch of
/// connections: scheduler events and the ground truth of each transmission.
struct TrafficPlan {
  std::vector<dl::ScheduledEvent> events;         // by subframe
  std::vector<AirTransmission> transmissions;     // by subframe
  Air air;
  std::map<ConnectionKey, std::uint64_t> connection_of;
  std::vector<chan::Route> routes;
  std::size_t inside_connections = 0;
  std::uint64_t collisions = 0;
  std::uint32_t last_subframe = 0;
};

/// Connection i starts at subframe first_subframe + i * request_interval from
/// a random point of route i mod #routes, on a random cell.
TrafficPlan plan_traffic(const chan::DeploymentScenario& s, std::size_t n_connections, std::uint64_t seed,
                         int request_interval, std::uint32_t first_subframe = 10);

/// Time-domain signal at one antenna port of a site, for one capture band:
/// the band's transmissions through the same path model as SiteMeasurer,
/// frequency-shifted to their cell, plus receiver noise. Call subframe() for
/// consecutive subframes; delayed tails carry over to the next one.
class PortAir {
public:
  PortAir(const chan::DeploymentScenario& s, chan::BandConfig band, chan::ReceiverSite site, int port,
          std::uint64_t noise_seed);

  /// `txs` may contain transmissions of other bands or subframes; only those
  /// of this band in `subframe` are rendered.
  std::vector<cf64> subframe(std::uint32_t subframe, std::span<const AirTransmission> txs);
  int samples_per_subframe() const { return spf_; }

private:
  const chan::DeploymentScenario& s_;
  chan::BandConfig band_;
  chan::ReceiverSite site_;
  int port_;
  int fft_;
  int spf_;
  double amplitude_;
  std::vector<cf64> acc_;    // current subframe and spill-over
  std::vector<cf64> noise_;  // pre-drawn pool, read at random offsets
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Dataset generation

struct GenerateOptions {
  std::size_t n_connections = 1000;
  std::uint64_t seed = 1;
  /// Subframes between consecutive connection requests (over all cells).
  int request_interval = 2;
  ul::FeatureOptions features;
  /// Called with (connections decided, total) now and then.
  std::function<void(std::size_t, std::size_t)> progress;
};

struct GenerateSummary {
  std::size_t connections = 0;
  std::size_t messages = 0;
  std::size_t rows = 0;
  /// Messages dropped from the dataset because fewer than two ports detected.
  std::size_t unusable = 0;
  std::uint64_t reports_published = 0;
  std::uint64_t reports_aggregated = 0;
  std::uint64_t collisions = 0;
  double inside_fraction = 0.0;  // of connections
  cu::AggregatorStats aggregator;

  double report_loss() const {
    return reports_published ? 1.0 - static_cast<double>(reports_aggregated) / static_cast<double>(reports_published)
                             : 0.0;
  }
};

struct GeneratedData {
  gf::Dataset dataset;
  cu::FeatureLayout layout;
  GenerateSummary summary;
  std::vector<chan::Route> routes;
};

/// Simulates UEs connecting from positions along the scenario's routes and
/// runs scheduler, downlink publisher, uplink receivers and central unit over
/// an in-process bus. Deterministic for a given scenario and options.
GeneratedData generate_dataset(const chan::DeploymentScenario& s, const GenerateOptions& options);

}  // namespace ltag::sim
