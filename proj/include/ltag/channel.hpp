// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ltag/common.hpp"
#include "ltag/lte_phy.hpp"

namespace ltag::chan {

// ---------------------------------------------------------------------------
// Planar geometry (meters)

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double norm() const { return std::hypot(x, y); }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }
double cross(Vec2 a, Vec2 b);

bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2);
bool point_in_polygon(Vec2 p, std::span<const Vec2> polygon);
bool polygon_is_simple(std::span<const Vec2> polygon);
/// Distance from p to the closest polygon edge.
double distance_to_boundary(Vec2 p, std::span<const Vec2> polygon);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double rad);

// ---------------------------------------------------------------------------
// Deployment description

struct WallSegment {
  Vec2 a;
  Vec2 b;
  double attenuation_db = 10.0;
};

/// Directional antenna: gain(theta) = max_gain + 20 log10((1 + cos theta) / 2),
/// floored at max_gain - front_to_back.
struct AntennaPattern {
  double max_gain_db = 0.0;
  double front_to_back_db = 25.0;

  double gain_db(double off_axis_rad) const;
};

struct ReceiverSite {
  std::uint16_t id = 0;
  Vec2 position;
  /// Port 0 boresight; port 1 always points the opposite way.
  double azimuth_rad = 0.0;
  /// Each port's antenna sits this far from `position` along its boresight.
  /// Non-zero values model antennas mounted on either side of a wall.
  double port_offset_m = 0.0;
  AntennaPattern pattern;
  double clock_offset_s = 0.0;

  double port_azimuth(int port) const;
  Vec2 port_position(int port) const;
};

struct UePosition {
  Vec2 position;
  bool inside_label = false;
  double tx_power_dbm = 23.0;
};

struct ChannelParams {
  double path_loss_exponent = 3.0;
  double reference_loss_db = 40.0;  // at 1 m
  double shadowing_db = 4.0;        // per transmission and receiver site
  double port_fading_db = 1.0;      // per transmission and antenna port
  double noise_figure_db = 5.0;
  double full_scale_dbm = -50.0;    // per-RE power that maps to digital 1.0
};

struct BandConfig {
  int id = 3;
  double sample_rate = 30.72e6;
};

struct Route {
  std::vector<Vec2> waypoints;
};

/// Random walking routes drawn inside the area (at least `margin_m` from the
/// boundary) or outside it (between `margin_m` and `outer_extent_m`).
struct RouteGenerator {
  int inside_routes = 0;
  int outside_routes = 0;
  double margin_m = 5.0;
  double outer_extent_m = 100.0;
  int waypoints_per_route = 6;
};

struct DeploymentScenario {
  std::string name = "scenario";
  std::vector<Vec2> boundary;
  std::vector<WallSegment> walls;
  std::vector<ReceiverSite> receivers;
  std::vector<phy::CellConfig> cells;
  std::vector<BandConfig> bands;
  ChannelParams channel;
  std::vector<Route> routes;
  RouteGenerator route_generator;
  double ue_tx_power_dbm = 23.0;
  std::uint64_t rng_seed = 1;

  bool inside(Vec2 p) const { return point_in_polygon(p, boundary); }
  UePosition ue_at(Vec2 p) const { return {p, inside(p), ue_tx_power_dbm}; }
  const BandConfig& band_of(const phy::CellConfig& cell) const;
  const phy::CellConfig& cell(std::uint32_t earfcn, std::uint16_t pci) const;
  const ReceiverSite& receiver(std::uint16_t id) const;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Propagation

/// Random part of one path: log-normal shadowing plus carrier phase.
struct PathRealization {
  double shadow_db = 0.0;
  double phase_rad = 0.0;
};

/// Draws the realization for (transmission, site, port) from a generator
/// seeded for that transmission. Both ports of a site share the shadowing
/// term; each port adds its own fading term and phase.
PathRealization draw_path(const ChannelParams& params, std::uint64_t transmission_seed, std::uint16_t site, int port);

/// Sum of wall attenuations crossed by the straight segment a-b.
double wall_loss_db(std::span<const WallSegment> walls, Vec2 a, Vec2 b);

/// Deterministic channel gain in dB: path loss, antenna pattern at the UE
/// bearing, and walls. Throws DegenerateGeometry when the UE sits on the port.
double path_gain_db(const DeploymentScenario& scenario, Vec2 ue, const ReceiverSite& site, int port);

/// Propagation delay to one port including the site's clock error.
double path_delay_s(Vec2 ue, const ReceiverSite& site, int port);

/// Complex baseband coefficient for the path (amplitude and carrier phase).
cf64 path_coefficient(const DeploymentScenario& scenario, Vec2 ue, const ReceiverSite& site, int port,
                      const PathRealization& r);

/// Delays a stream by a (possibly fractional) number of samples using a
/// frequency-domain phase ramp. The output grows by ceil(delay) samples.
std::vector<cf64> fractional_delay(std::span<const cf64> x, double delay_samples);

/// Output = input scaled by the path coefficient and delayed by the
/// propagation time. The UE's transmit power is already in `waveform`.
IqStream propagate(const IqStream& waveform, const UePosition& ue, const ReceiverSite& site, int port,
                   const DeploymentScenario& scenario, const PathRealization& realization = {});

/// Adds complex white Gaussian noise so that the mean power of the non-zero
/// input samples over the noise power equals snr_db. +inf leaves the input.
IqStream add_awgn(const IqStream& waveform, double snr_db, std::mt19937_64& rng);

/// Adds complex white Gaussian noise of the given per-sample variance.
void add_noise(std::span<cf64> samples, double variance, std::mt19937_64& rng);

struct Transmission {
  IqStream stream;
  std::int64_t time_offset = 0;  // samples
  double freq_offset_hz = 0.0;
};

/// Sample-wise sum after shifting each stream in time and frequency. The
/// frequency shift is phase-continuous in absolute sample time.
IqStream mix_band(std::span<const Transmission> transmissions);

/// exp(j 2 pi f n / fs) for absolute sample index n.
cf64 mixer_phasor(double freq_hz, double sample_rate, std::int64_t n);

// ---------------------------------------------------------------------------
// Resource-element channel
//
// Within the cyclic prefix a flat path acts on each resource element as a
// complex gain times exp(-j 2 pi f tau). This is the time-domain path
// evaluated directly on the grid, which the dataset generator uses.

/// Per-RE noise variance (digital units) for the receiver noise floor.
double noise_variance_per_re(const ChannelParams& params);

/// Time-domain noise variance that yields `per_re` after demodulation at
/// `sample_rate`.
inline double time_noise_variance(double per_re, double sample_rate) {
  return per_re * sample_rate / phy::kSubcarrierSpacingHz;
}

/// Applies gain and delay ramp to every resource element, then adds noise.
/// `center_offset_hz` is the cell's position in the band (adds a common phase).
phy::MessageGrid apply_re_channel(const phy::MessageGrid& tx, cf64 gain, double delay_s, double center_offset_hz,
                                  double noise_var_per_re, std::mt19937_64& rng);

/// Same channel, but only the resource elements allocated to `spec` are
/// written into `rx`, which must have the shape of `tx`. Elements outside the
/// allocation keep whatever `rx` held, so a zeroed grid can be reused across
/// ports and messages of the same shape.
void apply_re_channel_allocated(const phy::MessageGrid& tx, const phy::UplinkMessageSpec& spec, cf64 gain,
                                double delay_s, double center_offset_hz, double noise_var_per_re,
                                std::mt19937_64& rng, phy::MessageGrid& rx);

}  // namespace ltag::chan
