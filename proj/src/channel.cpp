// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/channel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <fmt/format.h>

#include "ltag/fft.hpp"

namespace ltag::chan {

double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

namespace {

int orientation(Vec2 a, Vec2 b, Vec2 c) {
  const double v = cross(b - a, c - a);
  const double scale = std::max({1.0, (b - a).norm() * (c - a).norm()});
  if (std::abs(v) <= 1e-12 * scale) return 0;
  return v > 0 ? 1 : -1;
}

bool on_segment(Vec2 a, Vec2 b, Vec2 p) {
  return std::min(a.x, b.x) - 1e-12 <= p.x && p.x <= std::max(a.x, b.x) + 1e-12 &&
         std::min(a.y, b.y) - 1e-12 <= p.y && p.y <= std::max(a.y, b.y) + 1e-12;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = ab.x * ab.x + ab.y * ab.y;
  if (len2 == 0.0) return distance(p, a);
  const double t = std::clamp(((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2, 0.0, 1.0);
  return distance(p, a + ab * t);
}

}  // namespace

bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
  const int o1 = orientation(p1, p2, q1);
  const int o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1);
  const int o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

bool point_in_polygon(Vec2 p, std::span<const Vec2> polygon) {
  bool in = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = polygon[i];
    const Vec2 b = polygon[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) in = !in;
    }
  }
  return in;
}

bool polygon_is_simple(std::span<const Vec2> polygon) {
  const std::size_t n = polygon.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if (distance(polygon[i], polygon[(i + 1) % n]) == 0.0) return false;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(polygon[i], polygon[(i + 1) % n], polygon[j], polygon[(j + 1) % n])) return false;
    }
  }
  // Adjacent edges may only share their common vertex.
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = polygon[i];
    const Vec2 b = polygon[(i + 1) % n];
    const Vec2 c = polygon[(i + 2) % n];
    if (orientation(a, b, c) == 0 && ((c - b).x * (a - b).x + (c - b).y * (a - b).y) > 0) return false;
  }
  return true;
}

double distance_to_boundary(Vec2 p, std::span<const Vec2> polygon) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < polygon.size(); ++i) {
    best = std::min(best, point_segment_distance(p, polygon[i], polygon[(i + 1) % polygon.size()]));
  }
  return best;
}

double wrap_angle(double rad) {
  double a = std::fmod(rad, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

double AntennaPattern::gain_db(double off_axis_rad) const {
  const double c = (1.0 + std::cos(off_axis_rad)) / 2.0;
  const double rel = c > 0.0 ? 20.0 * std::log10(c) : -std::numeric_limits<double>::infinity();
  return max_gain_db + std::max(rel, -front_to_back_db);
}

double ReceiverSite::port_azimuth(int port) const {
  if (port != 0 && port != 1) throw InvalidParameter(fmt::format("port {} out of range", port));
  return wrap_angle(azimuth_rad + (port == 0 ? 0.0 : kPi));
}

Vec2 ReceiverSite::port_position(int port) const {
  const double az = port_azimuth(port);
  return position + Vec2{std::cos(az), std::sin(az)} * port_offset_m;
}

const BandConfig& DeploymentScenario::band_of(const phy::CellConfig& c) const {
  for (const auto& b : bands) {
    if (b.id == static_cast<int>(c.band)) return b;
  }
  throw ConfigError(fmt::format("no band {} configured for cell earfcn={} pci={}", static_cast<int>(c.band),
                                c.earfcn, c.pci));
}

const phy::CellConfig& DeploymentScenario::cell(std::uint32_t earfcn, std::uint16_t pci) const {
  for (const auto& c : cells) {
    if (c.earfcn == earfcn && c.pci == pci) return c;
  }
  throw ConfigError(fmt::format("unknown cell earfcn={} pci={}", earfcn, pci));
}

const ReceiverSite& DeploymentScenario::receiver(std::uint16_t id) const {
  for (const auto& r : receivers) {
    if (r.id == id) return r;
  }
  throw ConfigError(fmt::format("unknown receiver {}", id));
}

void DeploymentScenario::validate() const {
  if (!polygon_is_simple(boundary)) throw ConfigError("area boundary is not a simple polygon");
  for (const auto& w : walls) {
    if (!(w.attenuation_db >= 0.0)) throw ConfigError("wall attenuation must be >= 0 dB");
    if (distance(w.a, w.b) == 0.0) throw ConfigError("wall has zero length");
  }
  if (receivers.empty()) throw ConfigError("scenario has no receivers");
  std::set<std::uint16_t> ids;
  for (const auto& r : receivers) {
    if (!ids.insert(r.id).second) throw ConfigError(fmt::format("duplicate receiver id {}", r.id));
    if (!std::isfinite(r.azimuth_rad)) throw ConfigError("receiver azimuth must be finite");
    if (!(r.port_offset_m >= 0.0)) throw ConfigError("receiver port offset must be >= 0");
    if (!(r.pattern.front_to_back_db > 0.0)) throw ConfigError("antenna front-to-back ratio must be > 0 dB");
  }
  std::set<int> band_ids;
  for (const auto& b : bands) {
    if (!band_ids.insert(b.id).second) throw ConfigError(fmt::format("duplicate band {}", b.id));
    phy::band_from_int(b.id);
    phy::fft_size_for_rate(b.sample_rate);
  }
  if (cells.empty()) throw ConfigError("scenario has no cells");
  std::set<std::pair<std::uint32_t, std::uint16_t>> cell_ids;
  for (const auto& c : cells) {
    if (!cell_ids.insert({c.earfcn, c.pci}).second) {
      throw ConfigError(fmt::format("duplicate cell earfcn={} pci={}", c.earfcn, c.pci));
    }
    const BandConfig& b = band_of(c);
    const double half_cell = c.n_subcarriers() * phy::kSubcarrierSpacingHz / 2.0;
    if (std::abs(c.ul_offset_hz) + half_cell > b.sample_rate / 2.0) {
      throw ConfigError(fmt::format("cell earfcn={} pci={} does not fit in band {}", c.earfcn, c.pci, b.id));
    }
  }
  if (!(channel.path_loss_exponent > 0.0)) throw ConfigError("path loss exponent must be > 0");
  if (!(channel.shadowing_db >= 0.0) || !(channel.port_fading_db >= 0.0)) {
    throw ConfigError("shadowing and fading must be >= 0 dB");
  }
}

PathRealization draw_path(const ChannelParams& params, std::uint64_t transmission_seed, std::uint16_t site, int port) {
  std::mt19937_64 site_rng(derive_seed(transmission_seed, site));
  std::normal_distribution<double> n01(0.0, 1.0);
  const double shadow = params.shadowing_db * n01(site_rng);
  std::mt19937_64 port_rng(derive_seed(transmission_seed, site, port + 1));
  std::normal_distribution<double> port_n01(0.0, 1.0);
  const double fading = params.port_fading_db * port_n01(port_rng);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  return {shadow + fading, phase(port_rng)};
}

double wall_loss_db(std::span<const WallSegment> walls, Vec2 a, Vec2 b) {
  double loss = 0.0;
  for (const auto& w : walls) {
    if (segments_intersect(a, b, w.a, w.b)) loss += w.attenuation_db;
  }
  return loss;
}

double path_gain_db(const DeploymentScenario& scenario, Vec2 ue, const ReceiverSite& site, int port) {
  const Vec2 ant = site.port_position(port);
  const Vec2 d = ue - ant;
  const double dist = d.norm();
  if (dist < 1e-9) {
    throw DegenerateGeometry(fmt::format("UE coincides with receiver {} port {}", site.id, port));
  }
  const auto& ch = scenario.channel;
  const double pl = ch.reference_loss_db + 10.0 * ch.path_loss_exponent * std::log10(std::max(dist, 1.0));
  const double bearing = std::atan2(d.y, d.x);
  const double off_axis = wrap_angle(bearing - site.port_azimuth(port));
  return site.pattern.gain_db(off_axis) - pl - wall_loss_db(scenario.walls, ue, ant);
}

double path_delay_s(Vec2 ue, const ReceiverSite& site, int port) {
  return distance(ue, site.port_position(port)) / kSpeedOfLight + site.clock_offset_s;
}

cf64 path_coefficient(const DeploymentScenario& scenario, Vec2 ue, const ReceiverSite& site, int port,
                      const PathRealization& r) {
  const double amp = std::pow(10.0, (path_gain_db(scenario, ue, site, port) + r.shadow_db) / 20.0);
  return std::polar(amp, r.phase_rad);
}

std::vector<cf64> fractional_delay(std::span<const cf64> x, double delay_samples) {
  if (!(delay_samples >= 0.0) || !std::isfinite(delay_samples)) {
    throw InvalidParameter("delay must be finite and >= 0");
  }
  const auto extra = static_cast<std::size_t>(std::ceil(delay_samples));
  const std::size_t out_len = x.size() + extra;
  if (x.empty()) return std::vector<cf64>(out_len);
  if (delay_samples == std::floor(delay_samples)) {
    std::vector<cf64> out(out_len);
    std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(extra));
    return out;
  }
  const std::size_t m = dsp::good_fft_size(out_len + 32);
  std::vector<cf64> buf(m);
  std::copy(x.begin(), x.end(), buf.begin());
  std::vector<cf64> spec = dsp::fft(buf);
  // Phase ramp by rotation, re-anchored every 64 bins to keep rounding down.
  const double w = -2.0 * kPi * delay_samples / static_cast<double>(m);
  const cf64 step = std::polar(1.0, w);
  cf64 rot;
  for (std::size_t k = 0; k < m; ++k) {
    if (k % 64 == 0 || k == (m + 1) / 2) {
      const double f = k < (m + 1) / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(m);
      rot = std::polar(1.0 / static_cast<double>(m), w * f);
    }
    spec[k] *= rot;
    rot *= step;
  }
  dsp::ifft(spec, buf);
  buf.resize(out_len);
  return buf;
}

IqStream propagate(const IqStream& waveform, const UePosition& ue, const ReceiverSite& site, int port,
                   const DeploymentScenario& scenario, const PathRealization& realization) {
  if (waveform.empty()) throw InvalidParameter("propagate: empty waveform");
  const cf64 g = path_coefficient(scenario, ue.position, site, port, realization);
  const double delay = path_delay_s(ue.position, site, port) * waveform.sample_rate;
  const double whole = std::floor(delay);
  IqStream out;
  out.sample_rate = waveform.sample_rate;
  out.start_sample = waveform.start_sample + static_cast<std::int64_t>(whole);
  out.samples = fractional_delay(waveform.samples, delay - whole);
  for (auto& s : out.samples) s *= g;
  return out;
}

void add_noise(std::span<cf64> samples, double variance, std::mt19937_64& rng) {
  if (!(variance >= 0.0)) throw InvalidParameter("noise variance must be >= 0");
  if (variance == 0.0) return;
  std::normal_distribution<double> n(0.0, std::sqrt(variance / 2.0));
  for (auto& s : samples) {
    const double re = n(rng);
    const double im = n(rng);
    s += cf64(re, im);
  }
}

IqStream add_awgn(const IqStream& waveform, double snr_db, std::mt19937_64& rng) {
  IqStream out = waveform;
  if (std::isinf(snr_db) && snr_db > 0) return out;
  double energy = 0.0;
  std::size_t occupied = 0;
  for (const auto& s : waveform.samples) {
    const double p = std::norm(s);
    if (p > 0.0) {
      energy += p;
      ++occupied;
    }
  }
  if (occupied == 0) throw InvalidParameter("add_awgn: waveform has no energy");
  add_noise(out.samples, energy / static_cast<double>(occupied) / db_to_linear(snr_db), rng);
  return out;
}

cf64 mixer_phasor(double freq_hz, double sample_rate, std::int64_t n) {
  return dsp::phasor(freq_hz, sample_rate, n);
}

IqStream mix_band(std::span<const Transmission> transmissions) {
  if (transmissions.empty()) throw InvalidParameter("mix_band: no transmissions");
  const double rate = transmissions.front().stream.sample_rate;
  std::int64_t first = std::numeric_limits<std::int64_t>::max();
  std::int64_t last = std::numeric_limits<std::int64_t>::min();
  for (const auto& t : transmissions) {
    if (t.stream.sample_rate != rate) throw InvalidParameter("mix_band: mismatched sample rates");
    const std::int64_t s = t.stream.start_sample + t.time_offset;
    first = std::min(first, s);
    last = std::max(last, s + static_cast<std::int64_t>(t.stream.size()));
  }
  IqStream out;
  out.sample_rate = rate;
  out.start_sample = first;
  out.samples.assign(static_cast<std::size_t>(last - first), cf64{});
  for (const auto& t : transmissions) {
    const std::int64_t s = t.stream.start_sample + t.time_offset;
    cf64* dst = out.samples.data() + (s - first);
    if (t.freq_offset_hz == 0.0) {
      for (std::size_t i = 0; i < t.stream.size(); ++i) dst[i] += t.stream.samples[i];
      continue;
    }
    // Re-anchor the recursion every 1024 samples to keep rounding bounded.
    const cf64 step = std::polar(1.0, 2.0 * kPi * t.freq_offset_hz / rate);
    cf64 ph;
    for (std::size_t i = 0; i < t.stream.size(); ++i) {
      if (i % 1024 == 0) {
        ph = mixer_phasor(t.freq_offset_hz, rate, s + static_cast<std::int64_t>(i));
      } else {
        ph *= step;
      }
      dst[i] += t.stream.samples[i] * ph;
    }
  }
  return out;
}

double noise_variance_per_re(const ChannelParams& params) {
  const double n0_dbm = -174.0 + params.noise_figure_db + 10.0 * std::log10(phy::kSubcarrierSpacingHz);
  return db_to_linear(n0_dbm - params.full_scale_dbm);
}

phy::MessageGrid apply_re_channel(const phy::MessageGrid& tx, cf64 gain, double delay_s, double center_offset_hz,
                                  double noise_var_per_re, std::mt19937_64& rng) {
  phy::MessageGrid rx = tx;
  auto ramp = [&](double f) { return gain * std::polar(1.0, -2.0 * kPi * f * delay_s); };
  if (auto* g = std::get_if<phy::SubframeGrid>(&rx)) {
    const int n_sc = g->n_subcarriers();
    std::vector<cf64> h(static_cast<std::size_t>(n_sc));
    for (int k = 0; k < n_sc; ++k) h[static_cast<std::size_t>(k)] = ramp(phy::subcarrier_frequency(k, n_sc) + center_offset_hz);
    for (int l = 0; l < g->n_symbols(); ++l) {
      for (int k = 0; k < n_sc; ++k) g->at(l, k) *= h[static_cast<std::size_t>(k)];
    }
    add_noise(g->cells, noise_var_per_re, rng);
  } else {
    auto& p = std::get<phy::PrachGrid>(rx);
    for (std::size_t j = 0; j < p.bins.size(); ++j) {
      p.bins[j] *= ramp(phy::prach_bin_frequency(static_cast<int>(j), p.prb_offset, p.n_prb_ul) + center_offset_hz);
    }
    add_noise(p.bins, noise_var_per_re, rng);
  }
  return rx;
}

void apply_re_channel_allocated(const phy::MessageGrid& tx, const phy::UplinkMessageSpec& spec, cf64 gain,
                                double delay_s, double center_offset_hz, double noise_var_per_re,
                                std::mt19937_64& rng, phy::MessageGrid& rx) {
  if (tx.index() != rx.index()) throw InvalidParameter("apply_re_channel_allocated: grid kinds differ");
  std::normal_distribution<double> n(0.0, std::sqrt(std::max(noise_var_per_re, 0.0) / 2.0));
  const bool noisy = noise_var_per_re > 0.0;
  // The ramp across subcarriers is a geometric sequence.
  auto write = [&](const cf64* src, cf64* dst, int count, double f0, double df) {
    cf64 h = gain * std::polar(1.0, -2.0 * kPi * f0 * delay_s);
    const cf64 step = std::polar(1.0, -2.0 * kPi * df * delay_s);
    for (int k = 0; k < count; ++k) {
      dst[k] = src[k] * h;
      if (noisy) {
        const double re = n(rng);
        dst[k] += cf64(re, n(rng));
      }
      h *= step;
    }
  };
  if (const auto* g = std::get_if<phy::SubframeGrid>(&tx)) {
    auto& out = std::get<phy::SubframeGrid>(rx);
    if (out.cells.size() != g->cells.size()) throw InvalidParameter("apply_re_channel_allocated: grid sizes differ");
    const int n_sc = g->n_subcarriers();
    const int width = spec.n_prb * phy::kSubcarriersPerPrb;
    for (int l = 0; l < g->n_symbols(); ++l) {
      const int first = phy::prb_for_symbol(spec, g->n_prb, l) * phy::kSubcarriersPerPrb;
      if (first < 0 || first + width > n_sc) throw InvalidAllocation("allocation outside the grid");
      write(&g->at(l, first), &out.at(l, first), width, phy::subcarrier_frequency(first, n_sc) + center_offset_hz,
            phy::kSubcarrierSpacingHz);
    }
  } else {
    const auto& p = std::get<phy::PrachGrid>(tx);
    auto& out = std::get<phy::PrachGrid>(rx);
    out.bins.resize(p.bins.size());
    write(p.bins.data(), out.bins.data(), static_cast<int>(p.bins.size()),
          phy::prach_bin_frequency(0, p.prb_offset, p.n_prb_ul) + center_offset_hz, phy::kPrachSpacingHz);
  }
}

}  // namespace ltag::chan
