// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

// ltag: dataset generation, training, evaluation, figure sweeps, live runs.
// Exit codes: 0 ok, 1 usage, 2 configuration, 3 runtime.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ltag/bus.hpp"
#include "ltag/central_unit.hpp"
#include "ltag/geofence_model.hpp"
#include "ltag/live.hpp"
#include "ltag/scenario.hpp"
#include "ltag/simulation.hpp"
#include "ltag/sweeps.hpp"

using namespace ltag;
namespace fs = std::filesystem;

namespace {

constexpr int kUsage = 1;
constexpr int kConfig = 2;
constexpr int kRuntime = 3;

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::trunc | std::ios::binary);
  if (!f) throw ConfigError(fmt::format("cannot write {}", p.string()));
  f << text;
}

std::vector<double> range(double lo, double hi, double step) {
  std::vector<double> v;
  for (double x = lo; x <= hi + 1e-9; x += step) v.push_back(x);
  return v;
}

std::string confusion_table(const gf::Confusion& c, const std::string& title) {
  return fmt::format(
      "{}\n"
      "                 predicted inside  predicted outside\n"
      "  inside         {:>16}  {:>17}\n"
      "  outside        {:>16}  {:>17}\n"
      "  accuracy {:.4f}  false-positive rate {:.4f}  false-negative rate {:.4f}\n",
      title, c.tp, c.fn, c.fp, c.tn, c.accuracy(), c.fpr(), c.fnr());
}

std::string metrics_csv(const gf::Metrics& m) {
  std::string s = "scope,count,accuracy,fpr,fnr,tp,fn,fp,tn\n";
  auto row = [&](const std::string& scope, const gf::Confusion& c) {
    s += fmt::format("{},{},{:.6f},{:.6f},{:.6f},{},{},{},{}\n", scope, c.total(), c.accuracy(), c.fpr(), c.fnr(),
                     c.tp, c.fn, c.fp, c.tn);
  };
  row("message", m.messages);
  for (int t = 0; t < kNumMsgTypes; ++t) row(to_string(static_cast<MsgType>(t)), m.per_type[static_cast<std::size_t>(t)]);
  row("connection", m.connections);
  return s;
}

/// Masks receivers given by 1-based position in the layout.
void mask_dataset(gf::Dataset& d, const std::vector<int>& positions) {
  const int r = sweep::receivers_for_features(d.n_features);
  std::vector<std::uint16_t> ids(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) ids[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(i + 1);
  const auto groups = cu::FeatureLayout(ids).receiver_groups();
  for (int pos : positions) {
    if (pos < 1 || pos > r) throw InvalidParameter(fmt::format("receiver position {} outside 1..{}", pos, r));
    for (int idx : groups[static_cast<std::size_t>(pos - 1)]) {
      d.values.row(idx).setZero();
      d.mask.row(idx).setZero();
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("ltag");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* lv = std::getenv("LTAG_LOG")) spdlog::set_level(spdlog::level::from_str(lv));

  CLI::App app{"ltag: uplink-measurement geofencing toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ltag 0.1.0");

  // generate -------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "Simulate connections and write a labelled dataset");
  std::string gen_scenario, gen_out = "dataset.csv";
  std::size_t gen_n = 1000;
  std::uint64_t gen_seed = 1;
  int gen_interval = 2;
  gen->add_option("--scenario", gen_scenario, "Scenario YAML")->required();
  gen->add_option("-n,--connections", gen_n, "Connections to simulate")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Random seed");
  gen->add_option("--interval", gen_interval, "Subframes between connection requests")->check(CLI::PositiveNumber);
  gen->add_option("-o,--out", gen_out, "Output dataset CSV");

  // train ----------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train the per-message network and the connection ensemble");
  std::string tr_data, tr_out = "model.bin", tr_curve;
  gf::MlpConfig tr_cfg;
  gf::TrainOptions tr_opt;
  bool tr_grid = false;
  double tr_drop = 0.3;
  int tr_max_drop = 3;
  train->add_option("--dataset", tr_data, "Training dataset CSV")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--out", tr_out, "Output model file");
  train->add_option("--seed", tr_opt.seed, "Random seed");
  train->add_option("--h1", tr_cfg.h1, "First hidden layer width")->check(CLI::PositiveNumber);
  train->add_option("--h2", tr_cfg.h2, "Second hidden layer width")->check(CLI::PositiveNumber);
  train->add_option("--dropout", tr_cfg.dropout, "Dropout probability")->check(CLI::Range(0.0, 0.9));
  train->add_option("--lr", tr_opt.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  train->add_option("--epochs", tr_opt.max_epochs, "Maximum epochs")->check(CLI::PositiveNumber);
  train->add_option("--batch", tr_opt.batch, "Mini-batch size")->check(CLI::PositiveNumber);
  train->add_option("--patience", tr_opt.patience, "Early-stopping patience")->check(CLI::PositiveNumber);
  train->add_option("--receiver-dropout", tr_drop, "Probability a training row loses receivers")
      ->check(CLI::Range(0.0, 1.0));
  train->add_option("--max-dropped", tr_max_drop, "Most receivers a row may lose")->check(CLI::PositiveNumber);
  train->add_flag("--grid", tr_grid, "Grid-search h1/h2/dropout/lr first and train the best point");
  train->add_option("--curve", tr_curve, "Write the loss curve CSV here");

  // eval -----------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Score a dataset: metrics CSV and confusion tables");
  std::string ev_model, ev_data, ev_out;
  std::vector<int> ev_mask;
  eval->add_option("--model", ev_model, "Model file")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", ev_data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("-o,--out", ev_out, "Metrics CSV");
  eval->add_option("--mask-receivers", ev_mask, "Receivers to silence (1-based positions)")->delimiter(',');

  // sweep ----------------------------------------------------------------
  auto* sw = app.add_subcommand("sweep", "Figure data: power_fig5a msgtypes_fig5b snr_fig5c delay aoa_fig6 "
                                          "aoa_sep dropout_fig_lru");
  std::string sw_kind, sw_out, sw_model, sw_data;
  int sw_trials = 100, sw_seeds = 20, sw_subsets = 20;
  std::uint64_t sw_seed = 1;
  sw->add_option("kind", sw_kind, "Sweep kind")
      ->required()
      ->check(CLI::IsMember({"power_fig5a", "msgtypes_fig5b", "snr_fig5c", "delay", "aoa_fig6", "aoa_sep",
                             "dropout_fig_lru"}));
  sw->add_option("--trials", sw_trials, "Trials per point")->check(CLI::PositiveNumber);
  sw->add_option("--seed", sw_seed, "Random seed");
  sw->add_option("--seeds", sw_seeds, "msgtypes_fig5b: seeds for the ordering check")->check(CLI::PositiveNumber);
  sw->add_option("--model", sw_model, "dropout_fig_lru: model file");
  sw->add_option("--dataset", sw_data, "dropout_fig_lru: test dataset");
  sw->add_option("--max-subsets", sw_subsets, "dropout_fig_lru: receiver subsets per count")
      ->check(CLI::PositiveNumber);
  sw->add_option("-o,--out", sw_out, "Output CSV (default: stdout)");

  // run ------------------------------------------------------------------
  auto* run = app.add_subcommand("run", "Live multi-process run over the socket bus");
  std::string run_scenario, run_model, run_out = "run";
  live::LiveOptions run_opt;
  int run_kill = 0;
  run->add_option("--scenario", run_scenario, "Scenario YAML")->required();
  run->add_option("--model", run_model, "Model file (messages score 0.5 without one)");
  run->add_option("-o,--out", run_out, "Output directory");
  run->add_option("--seed", run_opt.seed, "Random seed");
  run->add_option("-n,--connections", run_opt.n_connections, "Connections")->check(CLI::PositiveNumber);
  run->add_option("--interval", run_opt.request_interval, "Subframes between connection requests")
      ->check(CLI::PositiveNumber);
  run->add_option("--start-delay", run_opt.start_delay_s, "Seconds between all nodes being ready and subframe 0");
  run->add_option("--kill-receiver", run_kill, "Kill this receiver id mid-run");
  run->add_option("--kill-at", run_opt.kill_at_s, "Seconds after start to kill it");

  // bench ----------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "Socket round-trip latency between two processes");
  std::size_t bench_n = 1000;
  std::vector<std::size_t> bench_sizes{64, 4096};
  std::string bench_out;
  bench->add_option("-n", bench_n, "Round trips per payload size");
  bench->add_option("--payload", bench_sizes, "Payload sizes in bytes")->delimiter(',');
  bench->add_option("-o,--out", bench_out, "CSV output");

  // node -----------------------------------------------------------------
  auto* node = app.add_subcommand("node", "Run a single live node (advanced; normally started by run)");
  std::string node_role, node_scenario, node_model, node_out = "run";
  live::LiveOptions node_opt;
  long long node_epoch = 0;
  int node_listen = 0, node_dl = 0, node_rx = 0;
  std::vector<int> node_ul;
  node->add_option("role", node_role, "dl, ul or cu")->required()->check(CLI::IsMember({"dl", "ul", "cu"}));
  node->add_option("--scenario", node_scenario, "Scenario YAML")->required();
  node->add_option("--epoch-ns", node_epoch, "CLOCK_MONOTONIC time of subframe 0")->required();
  node->add_option("--listen", node_listen, "Listening port (0 = any)");
  node->add_option("--dl-port", node_dl, "Port of the downlink node");
  node->add_option("--ul-ports", node_ul, "Ports of the uplink nodes")->delimiter(',');
  node->add_option("--receiver", node_rx, "ul: receiver id");
  node->add_option("--model", node_model, "cu: model file");
  node->add_option("-o,--out", node_out, "cu: output directory");
  node->add_option("--seed", node_opt.seed, "Random seed (must match the other nodes)");
  node->add_option("-n,--connections", node_opt.n_connections, "Connections (must match)");
  node->add_option("--interval", node_opt.request_interval, "Request interval (must match)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (*gen) {
      const auto s = scenario::load_scenario(gen_scenario);
      sim::GenerateOptions o;
      o.n_connections = gen_n;
      o.seed = gen_seed;
      o.request_interval = gen_interval;
      o.progress = [](std::size_t done, std::size_t total) { spdlog::debug("{}/{} connections", done, total); };
      const auto t0 = std::chrono::steady_clock::now();
      const auto g = sim::generate_dataset(s, o);
      gf::save_dataset_csv(g.dataset, gen_out);
      const double inside = g.dataset.inside_fraction();
      fmt::print("connections {}  messages {}  rows {}  undetected {}\n", g.summary.connections, g.summary.messages,
                 g.summary.rows, g.summary.unusable);
      fmt::print("class balance: inside {:.1f}% / outside {:.1f}%\n", 100.0 * inside, 100.0 * (1.0 - inside));
      fmt::print("reports {}  aggregated {}  loss {:.4f}%  preamble collisions {}\n", g.summary.reports_published,
                 g.summary.reports_aggregated, 100.0 * g.summary.report_loss(), g.summary.collisions);
      fmt::print("wrote {} in {:.1f} s\n", gen_out,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      return 0;
    }

    if (*train) {
      const auto data = gf::load_dataset_csv(tr_data);
      const int r = sweep::receivers_for_features(data.n_features);
      std::vector<std::uint16_t> ids(static_cast<std::size_t>(r));
      for (int i = 0; i < r; ++i) ids[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(i + 1);
      tr_cfg.n_features = data.n_features;
      tr_opt.receiver_groups = cu::FeatureLayout(ids).receiver_groups();
      tr_opt.receiver_drop_probability = tr_drop;
      tr_opt.max_dropped_receivers = std::min(tr_max_drop, r - 1);
      if (tr_grid) {
        const std::vector<int> h1s{32, 64, 128}, h2s{16, 32};
        const std::vector<double> drops{0.1, 0.2, 0.3}, lrs{1e-3, 3e-3};
        const auto pts = gf::grid_search(data, h1s, h2s, drops, lrs, tr_opt);
        const auto best = std::min_element(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
          return a.validation_loss < b.validation_loss;
        });
        fmt::print("h1,h2,dropout,lr,validation_loss,validation_accuracy\n");
        for (const auto& p : pts) {
          fmt::print("{},{},{},{},{:.6f},{:.6f}\n", p.config.h1, p.config.h2, p.config.dropout, p.learning_rate,
                     p.validation_loss, p.validation_accuracy);
        }
        tr_cfg = best->config;
        tr_opt.learning_rate = best->learning_rate;
      }
      gf::TrainReport rep;
      const auto t0 = std::chrono::steady_clock::now();
      const auto model = gf::train_model(data, tr_cfg, tr_opt, {}, &rep);
      gf::save_model(model, tr_out);
      fmt::print("trained h1={} h2={} dropout={} lr={} epochs={} best_epoch={} val_loss={:.5f} in {:.1f} s\n",
                 tr_cfg.h1, tr_cfg.h2, tr_cfg.dropout, tr_opt.learning_rate, rep.epochs, rep.best_epoch,
                 rep.best_validation_loss,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      fmt::print("ensemble weights PRACH {:.3f} PUSCH {:.3f} PUCCH {:.3f} intercept {:.3f}\n",
                 model.ensemble.weights[0], model.ensemble.weights[1], model.ensemble.weights[2],
                 model.ensemble.intercept);
      if (!tr_curve.empty()) {
        std::string c = "epoch,train_loss,validation_loss\n";
        for (std::size_t i = 0; i < rep.train_loss.size(); ++i) {
          c += fmt::format("{},{:.6f},{:.6f}\n", i + 1, rep.train_loss[i],
                           i < rep.validation_loss.size() ? rep.validation_loss[i] : 0.0);
        }
        write_file(tr_curve, c);
      }
      fmt::print("wrote {}\n", tr_out);
      return 0;
    }

    if (*eval) {
      auto data = gf::load_dataset_csv(ev_data);
      const auto model = gf::load_model(ev_model, data.n_features);
      if (!ev_mask.empty()) mask_dataset(data, ev_mask);
      const auto m = gf::evaluate(model, data);
      fmt::print("{}", confusion_table(m.messages, "Per message"));
      for (int t = 0; t < kNumMsgTypes; ++t) {
        const auto& c = m.per_type[static_cast<std::size_t>(t)];
        fmt::print("  {:<6} accuracy {:.4f} over {}\n", to_string(static_cast<MsgType>(t)), c.accuracy(), c.total());
      }
      fmt::print("{}", confusion_table(m.connections, "Per connection (fused)"));
      if (!ev_out.empty()) write_file(ev_out, metrics_csv(m));
      return 0;
    }

    if (*sw) {
      std::string csv;
      sweep::LinkOptions lo;
      lo.trials = sw_trials;
      lo.seed = sw_seed;
      sweep::AoaOptions ao;
      ao.trials = sw_trials;
      ao.seed = sw_seed;
      if (sw_kind == "power_fig5a") {
        csv = sweep::to_csv(sweep::power_sweep(lo, range(-20, 10, 1)));
      } else if (sw_kind == "msgtypes_fig5b") {
        csv = sweep::to_csv(sweep::msgtype_sweep(lo, -5.0));
        spdlog::info("ordering held for {:.1f}% of {} seeds", 100.0 * sweep::msgtype_ordering_fraction(lo, -5.0, sw_seeds),
                     sw_seeds);
      } else if (sw_kind == "snr_fig5c") {
        const auto v = sweep::snr_sweep(lo, range(-10, 20, 1));
        std::vector<double> x, y;
        for (const auto& p : v) {
          x.push_back(p.snr_db);
          y.push_back(p.p2a_mean);
        }
        csv = sweep::to_csv(v);
        spdlog::info("spearman(true, peak-to-average) = {:.4f}", sweep::spearman(x, y));
      } else if (sw_kind == "delay") {
        csv = sweep::to_csv(sweep::delay_test(lo, 5e-6));
      } else if (sw_kind == "aoa_fig6") {
        csv = sweep::to_csv(sweep::aoa_sweep(ao, range(0, 180, 15)));
      } else if (sw_kind == "aoa_sep") {
        const auto sep = sweep::aoa_separation(ao);
        spdlog::info("overlap at {} dB: {:.2f}%", sep.threshold_db, 100.0 * sep.overlap);
        csv = sweep::to_csv(sep);
      } else {
        if (sw_model.empty() || sw_data.empty()) {
          spdlog::error("dropout_fig_lru needs --model and --dataset");
          return kUsage;
        }
        const auto data = gf::load_dataset_csv(sw_data);
        const auto model = gf::load_model(sw_model, data.n_features);
        csv = sweep::to_csv(sweep::dropout_sweep(model, data, sw_subsets, sw_seed));
      }
      if (sw_out.empty()) {
        fmt::print("{}", csv);
      } else {
        write_file(sw_out, csv);
      }
      return 0;
    }

    if (*run) {
      run_opt.scenario = scenario::load_scenario(run_scenario);
      if (!run_model.empty()) run_opt.model_path = run_model;
      run_opt.out_dir = run_out;
      run_opt.kill_receiver = static_cast<std::uint16_t>(run_kill);
      const auto res = live::supervise(run_opt);
      for (const auto& e : res.events) spdlog::info("supervisor: {}", e);
      const auto lat = run_opt.out_dir / "latency.csv";
      if (fs::exists(lat)) {
        std::ifstream f(lat);
        std::string line;
        std::getline(f, line);
        std::vector<live::StageRow> rows;
        while (std::getline(f, line)) {
          std::vector<std::string> c;
          std::stringstream ss(line);
          for (std::string x; std::getline(ss, x, ',');) c.push_back(x);
          if (c.size() < 7) continue;
          live::StageRow r{c[0], c[1], {}};
          r.stats.mean_us = std::stod(c[2]);
          r.stats.stddev_us = std::stod(c[3]);
          r.stats.count = std::stoul(c[4]);
          rows.push_back(r);
        }
        fmt::print("{}", live::stages_table(rows));
      }
      return res.exit_code;
    }

    if (*bench) {
      if (bench_n == 0) throw InvalidParameter("bench: n must be positive");
      std::string csv = "payload_bytes,mean_us,stddev_us,count,p50_us,p99_us\n";
      fmt::print("{:<18} {:>12} {:>12} {:>8}\n", "Round trip", "Mean [us]", "StdDev [us]", "Count");
      for (auto size : bench_sizes) {
        const auto st = bus::round_trip_bench(bench_n, size);
        fmt::print("{:<18} {:>12.1f} {:>12.1f} {:>8}\n", fmt::format("{} B", size), st.mean_us, st.stddev_us,
                   st.count);
        csv += fmt::format("{},{:.3f},{:.3f},{},{:.3f},{:.3f}\n", size, st.mean_us, st.stddev_us, st.count, st.p50_us,
                           st.p99_us);
      }
      if (!bench_out.empty()) write_file(bench_out, csv);
      return 0;
    }

    if (*node) {
      node_opt.scenario = scenario::load_scenario(node_scenario);
      if (!node_model.empty()) node_opt.model_path = node_model;
      node_opt.out_dir = node_out;
      bus::SocketNode n(node_listen);
      spdlog::info("{} listening on {}", node_role, n.port());
      const live::StartFn start = [node_epoch] { return static_cast<TimeNs>(node_epoch); };
      if (node_role == "dl") return live::run_dl_node(node_opt, n, start);
      if (node_role == "ul") {
        return live::run_ul_node(node_opt, n, static_cast<std::uint16_t>(node_rx), node_dl, start);
      }
      return live::run_cu_node(node_opt, n, node_dl, node_ul, start);
    }
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kConfig;
  } catch (const FormatError& e) {
    spdlog::error("{}", e.what());
    return kConfig;
  } catch (const InvalidParameter& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntime;
  }
  return kUsage;
}
