// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/sweeps.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "ltag/central_unit.hpp"
#include "ltag/channel.hpp"
#include "ltag/simulation.hpp"

namespace ltag::sweep {

namespace {

struct Stats {
  double sum = 0.0;
  double sum2 = 0.0;
  double abs_sum = 0.0;
  int n = 0;

  void add(double err) {
    sum += err;
    sum2 += err * err;
    abs_sum += std::abs(err);
    ++n;
  }
  double mean() const { return n ? sum / n : 0.0; }
  double mean_abs() const { return n ? abs_sum / n : 0.0; }
  double stddev() const {
    if (n < 2) return 0.0;
    const double m = mean();
    return std::sqrt(std::max(0.0, (sum2 - n * m * m) / (n - 1)));
  }
};

cf64 random_phase(std::mt19937_64& rng) {
  return std::polar(1.0, std::uniform_real_distribution<double>(-kPi, kPi)(rng));
}

// One message through modulation, gain and delay, truncated to a subframe.
std::vector<cf64> render(const phy::UplinkMessageSpec& spec, const phy::CellConfig& cell, std::uint64_t payload,
                         int fft, cf64 gain, double delay_s) {
  const auto grid = phy::build_uplink_message(spec, payload, cell, 0);
  const auto x = phy::modulate(grid, fft);
  auto y = delay_s > 0.0 ? chan::fractional_delay(x.samples, delay_s * x.sample_rate) : x.samples;
  y.resize(static_cast<std::size_t>(phy::samples_per_subframe(fft)));
  for (auto& v : y) v *= gain;
  return y;
}

std::uint64_t trial_seed(std::uint64_t seed, int tag, std::size_t point, int trial) {
  return derive_seed(seed, tag, point, trial);
}

double draw_delay(const LinkOptions& o, std::mt19937_64& rng) {
  return o.max_delay_s > 0.0 ? std::uniform_real_distribution<double>(0.0, o.max_delay_s)(rng) : 0.0;
}

phy::UplinkMessageSpec link_prach() { return phy::UplinkMessageSpec::prach(link_cell().prach_prb_offset, 0); }

std::string label_of(const phy::UplinkMessageSpec& s) {
  switch (s.type) {
    case MsgType::Prach:
      return "PRACH";
    case MsgType::Pucch:
      return "PUCCH";
    case MsgType::Pusch:
      return fmt::format("PUSCH{}", s.n_prb);
  }
  return "?";
}

}  // namespace

phy::CellConfig link_cell() {
  phy::CellConfig c;
  c.earfcn = 1300;
  c.pci = 1;
  c.n_prb_ul = 25;
  c.prach_prb_offset = 2;
  c.prach_root = 129;
  return c;
}

PortFeatures link_trial(const phy::UplinkMessageSpec& spec, const phy::CellConfig& cell, double snr_db,
                        double delay_s, const Interferer& interferer, std::uint64_t seed, const LinkOptions& o) {
  std::mt19937_64 rng(seed);
  auto y = render(spec, cell, derive_seed(seed, 1), o.fft_size, random_phase(rng), delay_s);
  if (interferer.enabled) {
    const auto ispec = phy::UplinkMessageSpec::pusch(interferer.prb_offset, interferer.n_prb);
    const double amp = std::sqrt(db_to_linear(-interferer.sir_db));
    const auto z = render(ispec, cell, derive_seed(seed, 2), o.fft_size, amp * random_phase(rng), draw_delay(o, rng));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += z[i];
  }
  const double rate = phy::sample_rate_for_fft(o.fft_size);
  chan::add_noise(y, chan::time_noise_variance(db_to_linear(-snr_db), rate), rng);

  phy::MessageGrid rx;
  if (spec.type == MsgType::Prach) {
    rx = phy::prach_demodulate(y, spec.prb_offset, cell.n_prb_ul, o.fft_size);
  } else {
    rx = phy::ofdm_demodulate(y, cell.n_prb_ul, o.fft_size);
  }
  return ul::measure_features(rx, spec, cell, o.features);
}

// ---------------------------------------------------------------------------

std::vector<PowerPoint> power_sweep(const LinkOptions& o, const std::vector<double>& snrs_db,
                                    const Interferer& interferer) {
  const auto cell = link_cell();
  const auto spec = link_prach();
  std::vector<PowerPoint> out;
  for (int with = 0; with < 2; ++with) {
    Interferer itf = interferer;
    itf.enabled = with == 1;
    for (std::size_t i = 0; i < snrs_db.size(); ++i) {
      Stats corr, rms2;
      for (int t = 0; t < o.trials; ++t) {
        const auto seed = trial_seed(o.seed, 0x5a, i, t);
        std::mt19937_64 rng(derive_seed(seed, 3));
        const auto f = link_trial(spec, cell, snrs_db[i], draw_delay(o, rng), itf, seed, o);
        // The transmitted power per resource element is 0 dB.
        corr.add(f.corr_peak_power_db);
        rms2.add(f.rms2_power_db);
      }
      PowerPoint p;
      p.snr_db = snrs_db[i];
      p.interferer = itf.enabled;
      p.corr_mean_err = corr.mean();
      p.corr_mean_abs_err = corr.mean_abs();
      p.corr_std = corr.stddev();
      p.rms2_mean_err = rms2.mean();
      p.rms2_mean_abs_err = rms2.mean_abs();
      p.trials = o.trials;
      out.push_back(p);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<phy::UplinkMessageSpec> msgtype_specs() {
  const auto cell = link_cell();
  return {phy::UplinkMessageSpec::prach(cell.prach_prb_offset, 0), phy::UplinkMessageSpec::pusch(10, 6),
          phy::UplinkMessageSpec::pucch(0, true), phy::UplinkMessageSpec::pusch(10, 1)};
}

std::vector<MsgTypePoint> msgtype_sweep(const LinkOptions& o, double snr_db) {
  const auto cell = link_cell();
  std::vector<MsgTypePoint> out;
  const auto specs = msgtype_specs();
  for (std::size_t k = 0; k < specs.size(); ++k) {
    Stats s;
    for (int t = 0; t < o.trials; ++t) {
      const auto seed = trial_seed(o.seed, 0x5b, k, t);
      std::mt19937_64 rng(derive_seed(seed, 3));
      s.add(link_trial(specs[k], cell, snr_db, draw_delay(o, rng), {}, seed, o).corr_peak_power_db);
    }
    out.push_back({label_of(specs[k]), specs[k], s.mean(), s.stddev(), o.trials});
  }
  return out;
}

double msgtype_ordering_fraction(const LinkOptions& o, double snr_db, int seeds) {
  if (seeds <= 0) throw InvalidParameter("seeds must be > 0");
  int ordered = 0;
  for (int k = 0; k < seeds; ++k) {
    LinkOptions ok = o;
    ok.seed = derive_seed(o.seed, 0x6f, k);
    const auto v = msgtype_sweep(ok, snr_db);
    bool inc = true;
    for (std::size_t i = 1; i < v.size(); ++i) inc = inc && v[i].std_err > v[i - 1].std_err;
    ordered += inc;
  }
  return static_cast<double>(ordered) / seeds;
}

// ---------------------------------------------------------------------------

std::vector<SnrPoint> snr_sweep(const LinkOptions& o, const std::vector<double>& snrs_db) {
  const auto cell = link_cell();
  const auto spec = link_prach();
  std::vector<SnrPoint> out;
  for (std::size_t i = 0; i < snrs_db.size(); ++i) {
    Stats p2a, sm;
    for (int t = 0; t < o.trials; ++t) {
      const auto seed = trial_seed(o.seed, 0x5c, i, t);
      std::mt19937_64 rng(derive_seed(seed, 3));
      const auto f = link_trial(spec, cell, snrs_db[i], draw_delay(o, rng), {}, seed, o);
      p2a.add(f.peak_to_avg_snr_db - snrs_db[i]);
      sm.add(f.smoothed_snr_db - snrs_db[i]);
    }
    SnrPoint p;
    p.snr_db = snrs_db[i];
    p.p2a_mean = snrs_db[i] + p2a.mean();
    p.p2a_mean_abs_err = p2a.mean_abs();
    p.smoothed_mean = snrs_db[i] + sm.mean();
    p.smoothed_mean_abs_err = sm.mean_abs();
    p.trials = o.trials;
    out.push_back(p);
  }
  return out;
}

namespace {
std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}
}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidParameter("spearman needs two equal series of length >= 2");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------

std::vector<DelayPoint> delay_test(const LinkOptions& o, double delay_s, double snr_db) {
  const auto cell = link_cell();
  std::vector<DelayPoint> out;
  const auto specs = msgtype_specs();
  for (std::size_t k = 0; k < specs.size(); ++k) {
    Stats ref, del;
    for (int t = 0; t < o.trials; ++t) {
      // Same payload, phase and noise with and without the delay.
      const auto seed = trial_seed(o.seed, 0x5d, k, t);
      ref.add(link_trial(specs[k], cell, snr_db, 0.0, {}, seed, o).corr_peak_power_db);
      del.add(link_trial(specs[k], cell, snr_db, delay_s, {}, seed, o).corr_peak_power_db);
    }
    DelayPoint p;
    p.label = label_of(specs[k]);
    p.delay_s = delay_s;
    p.mean_reference = ref.mean();
    p.mean_delayed = del.mean();
    p.change_db = std::abs(del.mean() - ref.mean());
    p.trials = o.trials;
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

chan::DeploymentScenario single_site(const AoaOptions& o) {
  chan::DeploymentScenario s;
  s.name = "aoa";
  s.cells = {link_cell()};
  s.bands = {{3, 7.68e6}};
  chan::ReceiverSite site;
  site.id = 1;
  site.pattern.front_to_back_db = o.front_to_back_db;
  s.receivers = {site};
  return s;
}

double port_diff(sim::SiteMeasurer& m, const phy::CellConfig& cell, const phy::UplinkMessageSpec& spec,
                 const sim::Transmitter& tx) {
  const auto grid = phy::build_uplink_message(spec, derive_seed(tx.seed, 1), cell, 0);
  const auto f = m.measure(cell, spec, grid, &tx);
  return f[0].corr_peak_power_db - f[1].corr_peak_power_db;
}

}  // namespace

std::vector<AoaPoint> aoa_sweep(const AoaOptions& o, const std::vector<double>& angles_deg) {
  auto s = single_site(o);
  s.channel.shadowing_db = 0.0;
  s.channel.port_fading_db = 0.0;
  const auto cell = s.cells[0];
  const auto spec = link_prach();
  sim::SiteMeasurer m(s, s.receivers[0], o.features);
  std::vector<AoaPoint> out;
  for (std::size_t i = 0; i < angles_deg.size(); ++i) {
    const double a = angles_deg[i] * kPi / 180.0;
    Stats d;
    for (int t = 0; t < o.trials; ++t) {
      sim::Transmitter tx{{o.distance_m * std::cos(a), o.distance_m * std::sin(a)}, true, 0,
                          trial_seed(o.seed, 0x5e, i, t)};
      d.add(port_diff(m, cell, spec, tx));
    }
    out.push_back({angles_deg[i], d.mean(), d.stddev(), o.trials});
  }
  return out;
}

AoaSeparation aoa_separation(const AoaOptions& o, double wall_db, double port_offset_m) {
  auto s = single_site(o);
  s.walls = {{{-1000.0, 0.0}, {1000.0, 0.0}, wall_db}};
  s.boundary = {{-1000.0, 0.0}, {1000.0, 0.0}, {1000.0, 1000.0}, {-1000.0, 1000.0}};
  s.receivers[0].azimuth_rad = kPi / 2;  // port 0 faces the inside (+y)
  s.receivers[0].port_offset_m = port_offset_m;
  const auto cell = s.cells[0];
  const auto spec = link_prach();
  sim::SiteMeasurer m(s, s.receivers[0], o.features);
  AoaSeparation out;
  std::mt19937_64 rng(derive_seed(o.seed, 0x5f));
  std::uniform_real_distribution<double> ux(-50.0, 50.0), uy(1.0, 50.0);
  std::size_t wrong = 0;
  for (int side = 0; side < 2; ++side) {
    for (int t = 0; t < o.trials; ++t) {
      const double sign = side == 0 ? 1.0 : -1.0;
      sim::Transmitter tx{{ux(rng), sign * uy(rng)}, side == 0, 0, trial_seed(o.seed, 0x60 + side, 0, t)};
      const double d = port_diff(m, cell, spec, tx);
      (side == 0 ? out.inside : out.outside).push_back(d);
      wrong += side == 0 ? d <= out.threshold_db : d > out.threshold_db;
    }
  }
  const auto total = out.inside.size() + out.outside.size();
  out.overlap = total ? static_cast<double>(wrong) / static_cast<double>(total) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------

int receivers_for_features(int n_features) {
  for (int r = 1; 4 * r * r - r <= n_features; ++r) {
    if (4 * r * r - r == n_features) return r;
  }
  throw InvalidParameter(fmt::format("{} is not a relative-feature width", n_features));
}

std::vector<DropoutPoint> dropout_sweep(const gf::Model& model, const gf::Dataset& test, int max_subsets,
                                        std::uint64_t seed) {
  const int r = receivers_for_features(test.n_features);
  std::vector<std::uint16_t> ids(static_cast<std::size_t>(r));
  std::iota(ids.begin(), ids.end(), std::uint16_t{1});
  const cu::FeatureLayout layout(ids);
  const auto groups = layout.receiver_groups();
  const auto n = static_cast<Eigen::Index>(test.size());

  // Ports still taking part in at least one valid pair, per row.
  auto usable = [&](const Eigen::MatrixXd& mask, Eigen::Index col) {
    int ports = 0;
    for (int p = 0; p < layout.ports(); ++p) {
      for (int q = 0; q < layout.ports(); ++q) {
        if (p == q) continue;
        const int a = std::min(p, q), b = std::max(p, q);
        if (mask(layout.pair_index(cu::PortFeature::CorrPeak, a, b), col) > 0.5) {
          ++ports;
          break;
        }
      }
    }
    return ports >= 2;
  };

  std::mt19937_64 rng(seed);
  std::vector<DropoutPoint> out;
  for (int k = 0; k < r; ++k) {
    // All k-subsets in lexicographic order, sampled down to max_subsets.
    std::vector<std::vector<int>> subsets;
    std::vector<int> pick(static_cast<std::size_t>(k));
    std::iota(pick.begin(), pick.end(), 0);
    while (true) {
      subsets.push_back(pick);
      int i = k - 1;
      while (i >= 0 && pick[static_cast<std::size_t>(i)] == r - k + i) --i;
      if (i < 0) break;
      ++pick[static_cast<std::size_t>(i)];
      for (int j = i + 1; j < k; ++j) pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
    }
    if (static_cast<int>(subsets.size()) > max_subsets) {
      std::shuffle(subsets.begin(), subsets.end(), rng);
      subsets.resize(static_cast<std::size_t>(max_subsets));
    }

    DropoutPoint pt;
    pt.removed = k;
    for (const auto& sub : subsets) {
      Eigen::MatrixXd values = test.values.leftCols(n);
      Eigen::MatrixXd mask = test.mask.leftCols(n);
      for (int rank : sub) {
        for (int idx : groups[static_cast<std::size_t>(rank)]) {
          values.row(idx).setZero();
          mask.row(idx).setZero();
        }
      }
      Eigen::VectorXd scores = model.mlp.predict_batch(values, mask, test.types);
      gf::Confusion msgs, conns;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!usable(mask, i)) scores(i) = 0.5;
        msgs.add(test.label[static_cast<std::size_t>(i)], scores(i) > 0.5);
      }
      for (auto& c : gf::group_connections(test, scores)) conns.add(c.label, model.ensemble.fuse(c.scores) > 0.5);
      pt.message_accuracy += msgs.accuracy();
      pt.connection_accuracy += conns.accuracy();
      ++pt.subsets;
    }
    pt.message_accuracy /= pt.subsets;
    pt.connection_accuracy /= pt.subsets;
    out.push_back(pt);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_csv(const std::vector<PowerPoint>& v) {
  std::string s = "snr_db,interferer,corr_mean_err_db,corr_mean_abs_err_db,corr_std_db,rms2_mean_err_db,"
                  "rms2_mean_abs_err_db,trials\n";
  for (const auto& p : v) {
    s += fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{}\n", p.snr_db, p.interferer ? 1 : 0, p.corr_mean_err,
                     p.corr_mean_abs_err, p.corr_std, p.rms2_mean_err, p.rms2_mean_abs_err, p.trials);
  }
  return s;
}

std::string to_csv(const std::vector<MsgTypePoint>& v) {
  std::string s = "message,n_prb,mean_err_db,std_err_db,trials\n";
  for (const auto& p : v) s += fmt::format("{},{},{:.6f},{:.6f},{}\n", p.label, p.spec.n_prb, p.mean_err, p.std_err, p.trials);
  return s;
}

std::string to_csv(const std::vector<SnrPoint>& v) {
  std::string s = "snr_db,p2a_mean_db,p2a_mean_abs_err_db,smoothed_mean_db,smoothed_mean_abs_err_db,trials\n";
  for (const auto& p : v) {
    s += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{}\n", p.snr_db, p.p2a_mean, p.p2a_mean_abs_err, p.smoothed_mean,
                     p.smoothed_mean_abs_err, p.trials);
  }
  return s;
}

std::string to_csv(const std::vector<DelayPoint>& v) {
  std::string s = "message,delay_us,mean_reference_db,mean_delayed_db,change_db,trials\n";
  for (const auto& p : v) {
    s += fmt::format("{},{:.3f},{:.6f},{:.6f},{:.6f},{}\n", p.label, p.delay_s * 1e6, p.mean_reference, p.mean_delayed,
                     p.change_db, p.trials);
  }
  return s;
}

std::string to_csv(const std::vector<AoaPoint>& v) {
  std::string s = "angle_deg,mean_diff_db,std_diff_db,trials\n";
  for (const auto& p : v) s += fmt::format("{},{:.6f},{:.6f},{}\n", p.angle_deg, p.mean_diff_db, p.std_diff_db, p.trials);
  return s;
}

std::string to_csv(const AoaSeparation& v) {
  std::string s = "side,diff_db\n";
  for (double d : v.inside) s += fmt::format("inside,{:.6f}\n", d);
  for (double d : v.outside) s += fmt::format("outside,{:.6f}\n", d);
  return s;
}

std::string to_csv(const std::vector<DropoutPoint>& v) {
  std::string s = "removed,subsets,message_accuracy,connection_accuracy\n";
  for (const auto& p : v) {
    s += fmt::format("{},{},{:.6f},{:.6f}\n", p.removed, p.subsets, p.message_accuracy, p.connection_accuracy);
  }
  return s;
}

}  // namespace ltag::sweep
