// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any failed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <unistd.h>

#include "ltag/bus.hpp"
#include "ltag/central_unit.hpp"
#include "ltag/channelizer.hpp"
#include "ltag/geofence_model.hpp"
#include "ltag/live.hpp"
#include "ltag/scenario.hpp"
#include "ltag/simulation.hpp"
#include "ltag/sweeps.hpp"
#include "ltag/ul_receiver.hpp"

using namespace ltag;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> range(double lo, double hi, double step) {
  std::vector<double> v;
  for (double x = lo; x <= hi + 1e-9; x += step) v.push_back(x);
  return v;
}

std::vector<std::uint16_t> ids_for(int r) {
  std::vector<std::uint16_t> ids(static_cast<std::size_t>(r));
  std::iota(ids.begin(), ids.end(), std::uint16_t{1});
  return ids;
}

// ---------------------------------------------------------------------------
// 1-5: link-level sweeps

Outcome estimator_quality(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  sweep::LinkOptions o;
  o.seed = seed;
  const auto pts = sweep::power_sweep(o, range(-20, 10, 1));
  const double secs = seconds_since(t0);
  bool ordered = true;
  double worst_gap = -1e9;  // corr |err| - rms2 |err|, should stay <= 0
  double worst_bias = 0.0;
  for (const auto& p : pts) {
    if (p.interferer && p.snr_db <= -5.0) {
      worst_gap = std::max(worst_gap, p.corr_mean_abs_err - p.rms2_mean_abs_err);
      ordered = ordered && p.corr_mean_abs_err <= p.rms2_mean_abs_err;
    }
    if (!p.interferer && p.snr_db >= 0.0) worst_bias = std::max(worst_bias, std::abs(p.corr_mean_err));
  }
  const bool pass = ordered && worst_bias < 0.5 && secs < 120.0;
  return {pass, fmt::format("interferer, SNR<=-5 dB: max(corr|err| - rms2|err|) = {:+.3f} dB (<= 0); "
                            "AWGN, SNR>=0 dB: max |mean err| = {:.3f} dB (< 0.5); {:.1f} s (< 120 s)",
                            worst_gap, worst_bias, secs)};
}

Outcome message_type_ordering(std::uint64_t seed) {
  sweep::LinkOptions o;
  o.seed = seed;
  const int seeds = 20;
  const double frac = sweep::msgtype_ordering_fraction(o, -5.0, seeds);
  const auto pts = sweep::msgtype_sweep(o, -5.0);
  std::string stds;
  for (const auto& p : pts) stds += fmt::format("{} {:.2f}  ", p.label, p.std_err);
  return {frac >= 0.95, fmt::format("std [dB]: {}; ordering held for {:.0f}% of {} seeds (>= 95%)", stds,
                                    100.0 * frac, seeds)};
}

Outcome snr_estimator(std::uint64_t seed) {
  sweep::LinkOptions o;
  o.seed = seed;
  const auto pts = sweep::snr_sweep(o, range(-10, 20, 1));
  bool better = true;
  double worst = -1e9;
  std::vector<double> truth, est;
  for (const auto& p : pts) {
    better = better && p.p2a_mean_abs_err <= p.smoothed_mean_abs_err;
    worst = std::max(worst, p.p2a_mean_abs_err - p.smoothed_mean_abs_err);
    truth.push_back(p.snr_db);
    est.push_back(p.p2a_mean);
  }
  const double rho = sweep::spearman(truth, est);
  return {better && rho > 0.99,
          fmt::format("max(peak-to-average |err| - smoothed |err|) = {:+.3f} dB (<= 0); rank correlation {:.4f} (> 0.99)",
                      worst, rho)};
}

Outcome delay_robustness(std::uint64_t seed) {
  sweep::LinkOptions o;
  o.seed = seed;
  const auto pts = sweep::delay_test(o, 5e-6);
  double worst = 0.0;
  std::string per;
  for (const auto& p : pts) {
    worst = std::max(worst, std::abs(p.change_db));
    per += fmt::format("{} {:+.3f}  ", p.label, p.change_db);
  }
  return {worst <= 0.7, fmt::format("5 us delay changes the estimate by {}(max {:.3f} dB <= 0.7)", per, worst)};
}

Outcome aoa(std::uint64_t seed) {
  sweep::AoaOptions o;
  o.seed = seed;
  const auto pts = sweep::aoa_sweep(o, range(0, 180, 5));
  // Monotone up to measurement noise, antisymmetric about broadside.
  constexpr double kNoise = 0.05;
  bool monotone = true;
  for (std::size_t i = 1; i < pts.size(); ++i) monotone = monotone && pts[i].mean_diff_db <= pts[i - 1].mean_diff_db + kNoise;
  double asym = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    asym = std::max(asym, std::abs(pts[i].mean_diff_db + pts[pts.size() - 1 - i].mean_diff_db));
  }
  const auto sep = sweep::aoa_separation(o);
  const bool pass = monotone && asym <= 0.5 && sep.overlap < 0.02;
  return {pass, fmt::format("diff {:.1f} dB at 0 deg to {:.1f} dB at 180 deg, monotone {} (tolerance {} dB); "
                            "max |d(a) + d(180-a)| = {:.3f} dB (<= 0.5); wall overlap {:.2f}% (< 2%)",
                            pts.front().mean_diff_db, pts.back().mean_diff_db, monotone ? "yes" : "no", kNoise, asym,
                            100.0 * sep.overlap)};
}

// ---------------------------------------------------------------------------
// 6-7: benchmark and receiver dropout

struct Benchmark {
  gf::Dataset train, test;
  gf::Model model;
  gf::Metrics metrics;
  double seconds = 0.0;
};

Benchmark run_benchmark(const fs::path& scenario, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = scenario::load_scenario(scenario);
  sim::GenerateOptions g;
  g.n_connections = n_train;
  g.seed = seed;
  auto train = sim::generate_dataset(s, g).dataset;
  g.n_connections = n_test;
  g.seed = seed + 1000;  // a different day
  auto test = sim::generate_dataset(s, g).dataset;

  gf::MlpConfig cfg{train.n_features, 64, 32, 0.2};
  gf::TrainOptions to;
  to.seed = seed;
  to.receiver_groups = cu::FeatureLayout(ids_for(sweep::receivers_for_features(train.n_features))).receiver_groups();
  to.receiver_drop_probability = 0.3;
  to.max_dropped_receivers = 3;
  auto model = gf::train_model(train, cfg, to);
  auto metrics = gf::evaluate(model, test);
  return {std::move(train), std::move(test), std::move(model), std::move(metrics), seconds_since(t0)};
}

Outcome benchmark_accuracy(const Benchmark& b, std::size_t n_train, std::size_t n_test) {
  const double msg = b.metrics.messages.accuracy();
  const double conn = b.metrics.connections.accuracy();
  const bool pass = msg >= 0.97 && conn >= 0.99 && conn >= msg && b.seconds < 900.0;
  return {pass, fmt::format("{} train / {} test connections (test on another seed): per-message {:.4f} (>= 0.97), "
                            "fused {:.4f} (>= 0.99, >= per-message); {:.0f} s (< 900 s)",
                            n_train, n_test, msg, conn, b.seconds)};
}

Outcome dropout(const Benchmark& b) {
  const auto pts = sweep::dropout_sweep(b.model, b.test, 100, 1);
  bool non_increasing = true;
  std::string curve;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    curve += fmt::format("{}:{:.4f} ", pts[i].removed, pts[i].connection_accuracy);
    if (i > 0) {
      non_increasing = non_increasing && pts[i].connection_accuracy <= pts[i - 1].connection_accuracy &&
                       pts[i].message_accuracy <= pts[i - 1].message_accuracy;
    }
  }
  const double drop = pts.size() > 1 ? pts[0].connection_accuracy - pts[1].connection_accuracy : 1.0;
  return {non_increasing && drop <= 0.02,
          fmt::format("fused accuracy by receivers removed {}; non-increasing {}; one removed costs {:.2f} pp (<= 2)",
                      curve, non_increasing ? "yes" : "no", 100.0 * drop)};
}

// ---------------------------------------------------------------------------
// 8: live socket run

std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> read_latency(const fs::path& p) {
  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> out;
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  while (std::getline(f, line)) {
    std::vector<std::string> c;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) c.push_back(x);
    if (c.size() >= 5) out[{c[0], c[1]}] = {std::stod(c[2]), std::stoul(c[4])};
  }
  return out;
}

Outcome live_latency(const fs::path& scenario, const fs::path& model, const fs::path& work) {
  live::LiveOptions o;
  o.scenario = scenario::load_scenario(scenario);
  o.model_path = model;
  o.n_connections = 200;
  o.out_dir = work / "live";
  const auto res = live::supervise(o);
  if (res.exit_code != 0) return {false, fmt::format("live run exited with {}", res.exit_code)};
  const auto lat = read_latency(o.out_dir / "latency.csv");
  auto get = [&](const char* stage, const char* type) {
    auto it = lat.find({stage, type});
    return it == lat.end() ? std::pair<double, std::size_t>{1e12, 0} : it->second;
  };
  const auto prach = get("e2e", "PRACH");
  const auto pusch = get("measure_to_decision", "PUSCH");
  const auto pucch = get("measure_to_decision", "PUCCH");
  const std::size_t messages = prach.second + pusch.second + pucch.second;
  const bool pass = prach.first < 5000.0 && pusch.first < 2000.0 && pucch.first < 2000.0 && messages >= 500;
  return {pass, fmt::format("{} messages (>= 500): PRACH RAR-to-decision {:.2f} ms (< 5); measurement-to-decision "
                            "PUSCH {:.2f} ms, PUCCH {:.2f} ms (< 2)",
                            messages, prach.first / 1e3, pusch.first / 1e3, pucch.first / 1e3)};
}

// ---------------------------------------------------------------------------
// 9: exactly-once decisions on the in-process bus

Outcome exactly_once(std::uint64_t seed) {
  const int n = 100000;
  const auto rx = ids_for(6);
  bus::InProcBus bus;
  TimeNs now = 0;
  cu::CentralUnitOptions co;
  co.receivers = rx;
  co.publish_decisions = false;
  cu::CentralUnit unit(bus, std::nullopt, co, [&now] { return now; });
  std::map<MessageId, int> decided;
  std::uint64_t aggregated = 0;
  unit.on_message([&](const cu::MessageDecision& d) {
    ++decided[d.slot.id];
    aggregated += d.slot.reports.size();
  });

  struct Arrival {
    TimeNs t;
    MeasurementReport r;
  };
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TimeNs> delay(0, 2'000'000 - 1);
  std::vector<Arrival> arrivals;
  arrivals.reserve(static_cast<std::size_t>(n) * rx.size());
  for (int m = 0; m < n; ++m) {
    const auto type = static_cast<MsgType>(m % 3);
    const MessageId id{1300, 21, static_cast<std::uint16_t>(100 + m % 40), type, static_cast<std::uint32_t>(m / 40)};
    const TimeNs base = static_cast<TimeNs>(m) * 25'000;
    for (auto r : rx) {
      MeasurementReport rep;
      rep.id = id;
      rep.receiver_id = r;
      rep.ports[0] = {true, -60.0 - r, 10.0, 5.0, 5.0, 0.0};
      rep.ports[1] = {true, -62.0 - r, 10.0, 5.0, 5.0, 0.0};
      const TimeNs t = base + delay(rng);
      rep.measured_at = t;
      rep.reference_ns = base;
      arrivals.push_back({t, rep});
    }
  }
  std::stable_sort(arrivals.begin(), arrivals.end(), [](const Arrival& a, const Arrival& b) { return a.t < b.t; });
  TimeNs next_tick = 0;
  for (const auto& a : arrivals) {
    while (next_tick < a.t) {
      now = next_tick;
      unit.tick();
      next_tick += 100'000;
    }
    now = a.t;
    ul::publish_report(bus, a.r);
    bus.pump();
  }
  now += 1'000'000'000;
  unit.tick();
  unit.flush();

  std::size_t dupes = 0;
  for (const auto& [id, c] : decided) dupes += c != 1;
  const std::uint64_t published = arrivals.size();
  const double loss = 1.0 - static_cast<double>(aggregated) / static_cast<double>(published);
  const auto bs = bus.stats();
  const bool pass = decided.size() == static_cast<std::size_t>(n) && dupes == 0 && loss < 1e-4 && bs.dropped == 0;
  return {pass, fmt::format("{} of {} message ids decided, {} more than once; {} of {} reports aggregated, loss {:.4f}% "
                            "(< 0.01%), bus drops {}",
                            decided.size(), n, dupes, aggregated, published, 100.0 * loss, bs.dropped)};
}

// ---------------------------------------------------------------------------
// 10: model mechanics

double max_relative_gradient_error(const gf::Mlp& net, const gf::Dataset& b, std::uint64_t dropout_seed) {
  auto eval = [&](const gf::Mlp& m, Eigen::VectorXd* g) {
    std::mt19937_64 rng(dropout_seed);
    return m.loss(b.values, b.mask, b.types, b.label, true, &rng, g);
  };
  Eigen::VectorXd g;
  eval(net, &g);
  const double eps = 1e-5;
  double worst = 0.0;
  gf::Mlp probe = net;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double orig = probe.parameters()(i);
    probe.parameters()(i) = orig + eps;
    const double lp = eval(probe, nullptr);
    probe.parameters()(i) = orig - eps;
    const double lm = eval(probe, nullptr);
    probe.parameters()(i) = orig;
    const double num = (lp - lm) / (2 * eps);
    worst = std::max(worst, std::abs(num - g(i)) / std::max(std::abs(num) + std::abs(g(i)), 1e-7));
  }
  return worst;
}

Outcome model_mechanics(const Benchmark& b, const fs::path& work) {
  // Gradient check on real feature rows at the deployed network size.
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < 6 && i < b.train.size(); ++i) rows.push_back(i * 97 % b.train.size());
  const auto batch = b.train.subset(rows);
  gf::Mlp net(b.model.mlp.config(), 3);
  std::mt19937_64 jit(4);
  std::normal_distribution<double> n01;
  for (Eigen::Index j = 0; j < net.parameters().size(); ++j) net.parameters()(j) += 0.1 * n01(jit);
  const double grad_err = max_relative_gradient_error(net, batch, 5);

  // Save/load.
  const auto path = work / "model.ltgf";
  gf::save_model(b.model, path);
  const auto back = gf::load_model(path, b.train.n_features);
  const Eigen::VectorXd s1 = b.model.mlp.predict_batch(b.test.values, b.test.mask, b.test.types);
  const Eigen::VectorXd s2 = back.mlp.predict_batch(b.test.values, b.test.mask, b.test.types);
  const bool exact = (s1.array() == s2.array()).all() && back.ensemble.weights == b.model.ensemble.weights &&
                     back.ensemble.intercept == b.model.ensemble.intercept;

  // Label-shuffle control: the same features with random labels carry no
  // information, so held-out accuracy must sit at chance.
  std::vector<std::size_t> sub(std::min<std::size_t>(b.train.size(), 8000));
  std::iota(sub.begin(), sub.end(), std::size_t{0});
  auto shuffled = b.train.subset(sub);
  auto test = b.test;
  std::mt19937_64 rng(6);
  for (auto& y : shuffled.label) y = static_cast<int>(rng() & 1);
  for (auto& y : test.label) y = static_cast<int>(rng() & 1);
  gf::TrainOptions to;
  to.max_epochs = 60;
  const auto control = gf::train_mlp(shuffled, b.model.mlp.config(), to);
  const Eigen::VectorXd s = control.predict_batch(test.values, test.mask, test.types);
  gf::Confusion c;
  for (std::size_t i = 0; i < test.size(); ++i) c.add(test.label[i], s(static_cast<Eigen::Index>(i)) > 0.5);
  const double chance = c.accuracy();

  const bool pass = grad_err < 1e-4 && exact && std::abs(chance - 0.5) <= 0.03;
  return {pass, fmt::format("gradient max relative error {:.2e} (< 1e-4) over {} parameters; save/load bit-exact {}; "
                            "shuffled-label accuracy {:.2f}% (50 +- 3)",
                            grad_err, net.parameters().size(), exact ? "yes" : "no", 100.0 * chance)};
}

// ---------------------------------------------------------------------------
// 11: channelizer

Outcome channelizer(std::uint64_t seed) {
  constexpr double rate = 1.92e6;
  const std::vector<dsp::ChannelSpec> chans{{-500e3, 180e3}, {0.0, 360e3}, {450e3, 90e3}};

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<cf64> x(static_cast<std::size_t>(rate / 2));
  for (auto& v : x) v = {g(rng), g(rng)};
  dsp::Channelizer one(rate, chans);
  std::vector<std::vector<cf64>> ref;
  one.push(x, ref);
  one.flush(ref);
  dsp::Channelizer streamed(rate, chans);
  std::vector<std::vector<cf64>> got;
  std::uniform_int_distribution<std::size_t> chunk(1, 20000);
  for (std::size_t pos = 0; pos < x.size();) {
    const std::size_t n = std::min(chunk(rng), x.size() - pos);
    streamed.push(std::span<const cf64>(x).subspan(pos, n), got);
    pos += n;
  }
  streamed.flush(got);
  double stream_err = 0.0;
  for (std::size_t c = 0; c < chans.size(); ++c) {
    if (got[c].size() != ref[c].size()) return {false, "streamed output length differs"};
    for (std::size_t i = 0; i < ref[c].size(); ++i) stream_err = std::max(stream_err, std::abs(got[c][i] - ref[c][i]));
  }

  // Tone sweep: every tone outside a channel's transition band must come out
  // at least 60 dB below a unit tone.
  auto out_power = [&](double f, std::size_t c) {
    IqStream in;
    in.sample_rate = rate;
    in.samples.resize(24000);
    for (std::size_t i = 0; i < in.size(); ++i) in.samples[i] = std::polar(1.0, 2.0 * kPi * f * static_cast<double>(i) / rate);
    const auto out = dsp::channelize(in, {chans[c]});
    const auto& y = out[0].samples;
    double acc = 0.0;
    const std::size_t skip = 200;
    for (std::size_t i = skip; i + skip < y.size(); ++i) acc += std::norm(y[i]);
    return 10.0 * std::log10(acc / static_cast<double>(y.size() - 2 * skip) + 1e-300);
  };
  double worst = -1e9;
  int tones = 0;
  for (std::size_t c = 0; c < chans.size(); ++c) {
    for (double f = -rate / 2 + 1000.0; f < rate / 2; f += 4999.0) {
      if (std::abs(f - chans[c].center_offset_hz) < 0.55 * chans[c].bandwidth_hz) continue;
      worst = std::max(worst, out_power(f, c));
      ++tones;
    }
  }
  return {stream_err < 1e-9 && worst <= -60.0,
          fmt::format("streaming vs one-shot max |diff| {:.2e} (< 1e-9); worst stopband tone {:.1f} dB over {} tones "
                      "(<= -60 dB)",
                      stream_err, worst, tones)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ltag acceptance run"};
  std::string source_dir = LTAG_SOURCE_DIR;
  std::string work_dir;
  std::size_t n_train = 20000, n_test = 5000;
  std::uint64_t seed = 1;
  std::vector<int> only;
  app.add_option("--source-dir", source_dir, "Repository root (scenarios/)");
  app.add_option("--work-dir", work_dir, "Scratch directory (default: a temporary one)");
  app.add_option("--train", n_train, "Training connections");
  app.add_option("--test", n_test, "Test connections");
  app.add_option("--seed", seed, "Base seed");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path work = work_dir.empty() ? fs::temp_directory_path() / fmt::format("ltag_accept_{}", ::getpid())
                                         : fs::path(work_dir);
  fs::create_directories(work);
  const fs::path bench = fs::path(source_dir) / "scenarios" / "benchmark.yaml";
  const fs::path live_s = fs::path(source_dir) / "scenarios" / "live.yaml";

  auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };
  std::optional<Benchmark> b;
  auto need_benchmark = [&]() -> const Benchmark& {
    if (!b) b = run_benchmark(bench, n_train, n_test, seed);
    return *b;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"power estimator quality", [&] { return estimator_quality(seed); }},
      {"message-type spread ordering", [&] { return message_type_ordering(seed); }},
      {"SNR estimator", [&] { return snr_estimator(seed); }},
      {"timing-offset robustness", [&] { return delay_robustness(seed); }},
      {"two-port direction finding", [&] { return aoa(seed); }},
      {"benchmark accuracy", [&] { return benchmark_accuracy(need_benchmark(), n_train, n_test); }},
      {"receiver dropout", [&] { return dropout(need_benchmark()); }},
      {"socket-mode latency",
       [&] {
         const auto& bm = need_benchmark();
         gf::save_model(bm.model, work / "live_model.ltgf");
         return live_latency(live_s, work / "live_model.ltgf", work);
       }},
      {"exactly-once decisions", [&] { return exactly_once(seed); }},
      {"model mechanics", [&] { return model_mechanics(need_benchmark(), work); }},
      {"channelizer", [&] { return channelizer(seed); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    if (!wanted(k)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, fmt::format("error: {}", e.what())};
    }
    failed += !r.pass;
    fmt::print("[{}] {:>2} {}: {} [{:.1f} s]\n", r.pass ? "PASS" : "FAIL", k, criteria[i].first, r.detail,
               seconds_since(t0));
    std::fflush(stdout);
  }
  if (work_dir.empty()) fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}
