// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/live.hpp"

#include <array>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <csignal>
#include <cstring>
#include <fstream>
#include <mutex>
#include <poll.h>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <sys/wait.h>
#include <unistd.h>

#include "ltag/central_unit.hpp"
#include "ltag/dl_controller.hpp"
#include "ltag/geofence_model.hpp"
#include "ltag/lte_phy.hpp"
#include "ltag/simulation.hpp"
#include "ltag/ul_receiver.hpp"

namespace ltag::live {

namespace {

TimeNs since(TimeNs epoch) { return bus::monotonic_ns() - epoch; }

void sleep_until_rel(TimeNs epoch, TimeNs t) {
  const auto target = std::chrono::steady_clock::time_point(std::chrono::nanoseconds(epoch + t));
  std::this_thread::sleep_until(target);
}

sim::TrafficPlan make_plan(const LiveOptions& o) {
  return sim::plan_traffic(o.scenario, o.n_connections, o.seed, o.request_interval, kFirstSubframe);
}

std::uint32_t last_of(const sim::TrafficPlan& p) { return p.last_subframe; }

}  // namespace

std::uint32_t end_subframe(const LiveOptions& o) {
  // The last PUCCH is measured a subframe after it ends; the connection
  // grace period of the central unit is 50 ms.
  return static_cast<std::uint32_t>(kFirstSubframe + o.n_connections * static_cast<std::size_t>(o.request_interval)) +
         200;
}

// ---------------------------------------------------------------------------
// Downlink node

int run_dl_node(const LiveOptions& o, bus::SocketNode& node, const StartFn& start) {
  const auto plan = make_plan(o);
  const TimeNs epoch = start();
  const std::size_t want = o.scenario.receivers.size() + 1;
  const double wait_s = std::max(0.1, static_cast<double>(epoch - bus::monotonic_ns()) / 1e9);
  if (!node.wait_for_subscribers(want, wait_s)) {
    spdlog::warn("dl: {} of {} subscribers connected at start", node.subscriber_count(), want);
  }
  dl::DlPublisher pub(node);
  std::size_t frames = 0;
  for (const auto& e : plan.events) {
    // A downlink grant is known once its subframe has been received.
    const TimeNs at = sim::subframe_time(e.event.subframe + 1);
    sleep_until_rel(epoch, at);
    frames += static_cast<std::size_t>(pub.on_event(e, since(epoch)));
  }
  sleep_until_rel(epoch, sim::subframe_time(end_subframe(o)));
  spdlog::info("dl: published {} frames for {} connections (last subframe {})", frames, o.n_connections,
               last_of(plan));
  node.close();
  return 0;
}

// ---------------------------------------------------------------------------
// Uplink node

int run_ul_node(const LiveOptions& o, bus::SocketNode& node, std::uint16_t id, int dl_port, const StartFn& start) {
  const auto& s = o.scenario;
  TimeNs epoch = 0;
  const auto& site = s.receiver(id);
  const auto plan = make_plan(o);
  // This receiver's notion of time is off by its configured clock error.
  const auto clock_offset = static_cast<TimeNs>(std::llround(site.clock_offset_s * 1e9));

  struct Band {
    chan::BandConfig config;
    std::unique_ptr<ul::BandReceiver> rx;
    std::vector<sim::PortAir> air;
  };
  std::vector<Band> bands;
  for (const auto& b : s.bands) {
    ul::BandContext ctx{b.id, b.sample_rate, {}};
    for (const auto& c : s.cells) {
      if (s.band_of(c).id == b.id) ctx.cells.push_back(c);
    }
    if (ctx.cells.empty()) continue;
    Band band;
    band.config = b;
    band.rx = std::make_unique<ul::BandReceiver>(id, ctx);
    for (int p = 0; p < 2; ++p) band.air.emplace_back(s, b, site, p, derive_seed(o.seed, 0x6169, id, b.id, p));
    bands.push_back(std::move(band));
  }

  // Warm-up before the epoch: reference sequences, transform plans and
  // buffers would otherwise be built during the first live subframes.
  for (const auto& c : s.cells) {
    for (int i = 0; i < phy::kPrachPreambles; ++i) {
      phy::reference_sequence(phy::UplinkMessageSpec::prach(c.prach_prb_offset, i), c);
    }
  }
  {
    const std::size_t n = std::min<std::size_t>(plan.transmissions.size(), 16);
    for (const auto& b : s.bands) {
      ul::BandContext ctx{b.id, b.sample_rate, {}};
      for (const auto& c : s.cells) {
        if (s.band_of(c).id == b.id) ctx.cells.push_back(c);
      }
      if (ctx.cells.empty() || n == 0) continue;
      ul::BandReceiver rx(id, ctx);
      sim::PortAir air(s, b, site, 0, 1);
      const std::span<const sim::AirTransmission> txs(plan.transmissions.data(), n);
      for (const auto& t : txs) rx.accept(t.alloc);
      for (std::uint32_t sf = 0; sf <= txs.back().alloc.id.subframe + 1; ++sf) {
        const auto x = air.subframe(sf, txs);
        rx.port(0).write(x);
        rx.port(1).write(x);
        rx.process_port(0);
        rx.process_port(1);
      }
    }
  }

  std::mutex m;
  std::condition_variable cv;
  bool pending = false;
  node.connect("127.0.0.1", dl_port);
  node.subscribe(bus::topic::kAllocation, [&](std::string_view, std::span<const std::uint8_t> p) {
    AllocationMsg msg;
    try {
      msg = std::get<AllocationMsg>(decode(p));
    } catch (const std::exception& e) {
      spdlog::warn("ul{}: bad allocation frame: {}", id, e.what());
      return;
    }
    for (auto a : msg.allocations) {
      a.published_at = msg.published_at;
      for (auto& b : bands) b.rx->accept(a);
    }
    {
      std::lock_guard lock(m);
      pending = true;
    }
    cv.notify_one();
  });

  ul::ReportJoiner joiner(id);
  std::uint64_t reports = 0;
  auto process = [&] {
    for (auto& b : bands) {
      for (int p = 0; p < 2; ++p) {
        for (const auto& r : b.rx->process_port(p)) {
          if (auto rep = joiner.add(p, r.alloc.id, r.features, r.alloc.published_at, since(epoch) + clock_offset)) {
            ul::publish_report(node, *rep);
            ++reports;
          }
        }
      }
    }
  };

  // Subframes that carry a transmission (or its spill-over) are rendered
  // before the epoch: simulating the air is not part of the receiver's
  // latency. Noise-only subframes come from a second renderer on the fly.
  std::vector<std::map<std::uint32_t, std::array<std::vector<cf64>, 2>>> rendered(bands.size());
  std::vector<std::array<std::unique_ptr<sim::PortAir>, 2>> quiet(bands.size());
  {
    std::size_t next = 0;
    const std::uint32_t last = plan.transmissions.empty() ? 0 : plan.transmissions.back().alloc.id.subframe + 1;
    std::uint32_t busy_until = 0;
    for (std::uint32_t sf = 0; sf <= last && !plan.transmissions.empty(); ++sf) {
      const std::size_t first = next;
      while (next < plan.transmissions.size() && plan.transmissions[next].alloc.id.subframe <= sf) ++next;
      const std::span<const sim::AirTransmission> txs(plan.transmissions.data() + first, next - first);
      if (!txs.empty()) busy_until = sf + 1;
      for (std::size_t b = 0; b < bands.size(); ++b) {
        std::array<std::vector<cf64>, 2> x;
        for (int p = 0; p < 2; ++p) x[static_cast<std::size_t>(p)] = bands[b].air[static_cast<std::size_t>(p)].subframe(sf, txs);
        if (sf <= busy_until) rendered[b].emplace(sf, std::move(x));
      }
    }
    for (std::size_t b = 0; b < bands.size(); ++b) {
      for (int p = 0; p < 2; ++p) {
        quiet[b][static_cast<std::size_t>(p)] = std::make_unique<sim::PortAir>(
            s, bands[b].config, site, p, derive_seed(o.seed, 0x71756965, id, b, p));
      }
    }
  }

  epoch = start();
  const std::uint32_t end = end_subframe(o);
  TimeNs worst = 0;
  for (std::uint32_t sf = 0; sf < end; ++sf) {
    const TimeNs deadline = sim::subframe_time(sf + 1);
    for (;;) {
      std::unique_lock lock(m);
      const auto until = std::chrono::steady_clock::time_point(std::chrono::nanoseconds(epoch + deadline));
      cv.wait_until(lock, until, [&] { return pending; });
      const bool woke = pending;
      pending = false;
      lock.unlock();
      if (!woke) break;
      process();
    }
    // Subframe sf has now been captured.
    for (std::size_t b = 0; b < bands.size(); ++b) {
      auto it = rendered[b].find(sf);
      for (int p = 0; p < 2; ++p) {
        const auto pp = static_cast<std::size_t>(p);
        if (it != rendered[b].end()) {
          bands[b].rx->port(p).write(it->second[pp]);
        } else {
          bands[b].rx->port(p).write(quiet[b][pp]->subframe(sf, {}));
        }
      }
      if (it != rendered[b].end()) rendered[b].erase(it);
    }
    process();
    worst = std::max(worst, since(epoch) - deadline);
    if (sf % 100 == 0) spdlog::debug("ul{}: sf {} worst lag {:.3f} ms", id, sf, static_cast<double>(worst) / 1e6);
    if (sf % 100 == 0 && sf > 100) joiner.prune(sf - 100);
  }
  std::uint64_t lost = 0;
  for (auto& b : bands) lost += b.rx->queue(0).lost() + b.rx->queue(1).lost();
  spdlog::info("ul{}: {} reports, {} allocations lost, worst lag {:.2f} ms", id, reports, lost,
               static_cast<double>(worst) / 1e6);
  node.close();
  return 0;
}

// ---------------------------------------------------------------------------
// Central unit node

int run_cu_node(const LiveOptions& o, bus::SocketNode& node, int dl_port, const std::vector<int>& ul_ports,
                const StartFn& start) {
  const auto& s = o.scenario;
  TimeNs epoch = 0;
  const auto plan = make_plan(o);
  std::optional<gf::Model> model;
  std::vector<std::uint16_t> ids;
  for (const auto& r : s.receivers) ids.push_back(r.id);
  if (o.model_path) model = gf::load_model(*o.model_path, cu::FeatureLayout(ids).size());

  std::filesystem::create_directories(o.out_dir);
  cu::CentralUnitOptions cuo;
  cuo.receivers = ids;
  cuo.slot_timeout = o.slot_timeout;
  cuo.log_path = o.out_dir / "decisions.csv";

  std::mutex m;
  StageSamples samples;
  std::uint64_t correct = 0, scored = 0, conn_correct = 0, conn_total = 0;
  auto add = [&](const char* stage, MsgType t, TimeNs ns) {
    samples[{stage, to_string(t)}].push_back(static_cast<double>(ns) / 1e3);
  };

  cu::CentralUnit unit(node, std::move(model), cuo, [&epoch] { return since(epoch); });
  // Extra listener on reports for the per-stage timing.
  node.subscribe(bus::topic::kReport, [&](std::string_view, std::span<const std::uint8_t> p) {
    const TimeNs now = since(epoch);
    MeasurementReport r;
    try {
      r = std::get<MeasurementReport>(decode(p));
    } catch (const std::exception&) {
      return;
    }
    std::lock_guard lock(m);
    const TimeNs captured = std::max(r.reference_ns, sim::subframe_time(r.id.subframe + 1));
    add("measurement", r.id.type, r.measured_at - captured);
    add("transport", r.id.type, now - r.measured_at);
  });
  unit.on_message([&](const cu::MessageDecision& d) {
    std::lock_guard lock(m);
    const auto t = d.slot.id.type;
    if (const TimeNs ref = d.slot.reference_ns()) add("e2e", t, d.decided_at - ref);
    if (const TimeNs first = d.slot.first_measured_ns()) add("measure_to_decision", t, d.decided_at - first);
    add("inference", t, d.inference_ns);
    if (const auto* tx = plan.air.find(d.slot.id); tx && d.features.usable()) {
      ++scored;
      correct += (d.score > 0.5) == tx->inside;
    }
  });
  unit.on_connection([&](const cu::FusedDecision& d) {
    std::lock_guard lock(m);
    if (auto it = plan.connection_of.find(d.key); it != plan.connection_of.end()) {
      const auto* tx = plan.air.find(d.last_message);
      ++conn_total;
      conn_correct += tx && d.inside == tx->inside;
    }
  });

  node.connect("127.0.0.1", dl_port);
  for (int p : ul_ports) node.connect("127.0.0.1", p);
  epoch = start();

  const TimeNs end = sim::subframe_time(end_subframe(o) + 20);
  while (since(epoch) < end) {
    std::this_thread::sleep_for(std::chrono::microseconds(200));
    unit.tick();
  }
  unit.flush();
  node.close();

  const auto rows = summarize_stages(samples);
  {
    std::ofstream f(o.out_dir / "latency.csv", std::ios::trunc);
    f << stages_csv(rows);
  }
  const auto st = unit.stats();
  const auto ag = unit.aggregator_stats();
  std::ofstream f(o.out_dir / "summary.csv", std::ios::trunc);
  f << "metric,value\n";
  f << fmt::format("connections_planned,{}\n", o.n_connections);
  f << fmt::format("messages_planned,{}\n", plan.transmissions.size());
  f << fmt::format("reports,{}\n", st.reports);
  f << fmt::format("malformed,{}\n", st.malformed);
  f << fmt::format("messages_decided,{}\n", st.messages_decided);
  f << fmt::format("connections_decided,{}\n", st.connections_decided);
  f << fmt::format("slots_complete,{}\n", ag.closed_complete);
  f << fmt::format("slots_timed_out,{}\n", ag.closed_timeout);
  f << fmt::format("reports_late,{}\n", ag.late);
  f << fmt::format("reports_duplicate,{}\n", ag.duplicates);
  if (o.model_path) {
    f << fmt::format("message_accuracy,{:.6f}\n", scored ? static_cast<double>(correct) / scored : 0.0);
    f << fmt::format("connection_accuracy,{:.6f}\n", conn_total ? static_cast<double>(conn_correct) / conn_total : 0.0);
  }
  spdlog::info("cu: {} messages, {} connections decided ({} slots timed out)", st.messages_decided,
               st.connections_decided, ag.closed_timeout);
  return 0;
}

// ---------------------------------------------------------------------------
// Latency table

std::vector<StageRow> summarize_stages(const StageSamples& samples) {
  std::vector<StageRow> rows;
  for (const auto& [key, v] : samples) {
    if (v.empty()) continue;
    rows.push_back({key.first, key.second, bus::summarize_us(v)});
  }
  return rows;
}

std::string stages_csv(const std::vector<StageRow>& rows) {
  std::string s = "stage,type,mean_us,stddev_us,count,p50_us,p99_us\n";
  for (const auto& r : rows) {
    s += fmt::format("{},{},{:.3f},{:.3f},{},{:.3f},{:.3f}\n", r.stage, r.type, r.stats.mean_us, r.stats.stddev_us,
                     r.stats.count, r.stats.p50_us, r.stats.p99_us);
  }
  return s;
}

std::string stages_table(const std::vector<StageRow>& rows) {
  std::string s = fmt::format("{:<22} {:<6} {:>12} {:>12} {:>8}\n", "Stage", "Type", "Mean [us]", "StdDev [us]",
                              "Count");
  for (const auto& r : rows) {
    s += fmt::format("{:<22} {:<6} {:>12.1f} {:>12.1f} {:>8}\n", r.stage, r.type, r.stats.mean_us,
                     r.stats.stddev_us, r.stats.count);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Supervisor

namespace {

struct Child {
  pid_t pid = -1;
  std::string name;
  bool essential = false;
  bool running = false;
  int port = -1;
  int up = -1;    // child -> supervisor
  int down = -1;  // supervisor -> child
};

/// Forks a node. The child binds its SocketNode and reports the port; once
/// prepared it reports ready and waits for the epoch. Both go over pipes.
template <typename Body>
Child spawn(const std::string& name, bool essential, Body body) {
  int up[2], down[2];
  std::fflush(nullptr);
  if (::pipe(up) != 0 || ::pipe(down) != 0) throw Error(fmt::format("pipe: {}", std::strerror(errno)));
  const pid_t pid = ::fork();
  if (pid < 0) throw Error(fmt::format("fork: {}", std::strerror(errno)));
  if (pid == 0) {
    ::close(up[0]);
    ::close(down[1]);
    int rc = 3;
    try {
      bus::SocketNode node(0);
      const int port = node.port();
      if (::write(up[1], &port, sizeof port) != sizeof port) ::_exit(3);
      const StartFn start = [&] {
        const char ready = 'r';
        if (::write(up[1], &ready, 1) != 1) throw Error("supervisor went away");
        TimeNs epoch = 0;
        if (::read(down[0], &epoch, sizeof epoch) != sizeof epoch) throw Error("no epoch from supervisor");
        ::close(up[1]);
        ::close(down[0]);
        return epoch;
      };
      rc = body(node, start);
    } catch (const std::exception& e) {
      spdlog::error("{}: {}", name, e.what());
      rc = 3;
    }
    std::fflush(nullptr);
    ::_exit(rc);
  }
  ::close(up[1]);
  ::close(down[0]);
  Child c{pid, name, essential, true, -1, up[0], down[1]};
  int port = -1;
  if (::read(c.up, &port, sizeof port) != sizeof port) throw Error(fmt::format("{} failed to start", name));
  c.port = port;
  return c;
}

/// Waits until `c` reports ready; false on timeout or if it died.
bool wait_ready(const Child& c, int timeout_ms) {
  pollfd pfd{c.up, POLLIN, 0};
  if (::poll(&pfd, 1, timeout_ms) <= 0) return false;
  char ready = 0;
  return ::read(c.up, &ready, 1) == 1 && ready == 'r';
}

}  // namespace

RunResult supervise(const LiveOptions& o) {
  o.scenario.validate();
  RunResult res;
  std::vector<Child> kids;
  auto kill_all = [&] {
    for (auto& k : kids) {
      if (k.running) ::kill(k.pid, SIGKILL);
    }
    for (auto& k : kids) {
      if (k.running) {
        ::waitpid(k.pid, nullptr, 0);
        k.running = false;
      }
    }
  };

  TimeNs epoch = 0;
  try {
    kids.push_back(spawn("dl", true, [&](bus::SocketNode& n, const StartFn& st) { return run_dl_node(o, n, st); }));
    const int dl_port = kids[0].port;
    std::vector<int> ul_ports;
    for (const auto& r : o.scenario.receivers) {
      const auto id = r.id;
      kids.push_back(spawn(fmt::format("ul{}", id), false, [&, id](bus::SocketNode& n, const StartFn& st) {
        return run_ul_node(o, n, id, dl_port, st);
      }));
      ul_ports.push_back(kids.back().port);
    }
    kids.push_back(spawn("cu", true, [&](bus::SocketNode& n, const StartFn& st) {
      return run_cu_node(o, n, dl_port, ul_ports, st);
    }));
    // Every node prepares (traffic plan, warm-up, rendering) before the clock starts.
    for (const auto& k : kids) {
      if (!wait_ready(k, 300'000)) throw Error(fmt::format("{} did not become ready", k.name));
    }
    epoch = bus::monotonic_ns() + static_cast<TimeNs>(o.start_delay_s * 1e9);
    for (auto& k : kids) {
      if (::write(k.down, &epoch, sizeof epoch) != sizeof epoch) throw Error(fmt::format("{} went away", k.name));
      ::close(k.down);
      ::close(k.up);
    }
  } catch (const std::exception& e) {
    res.events.push_back(fmt::format("startup failed: {}", e.what()));
    spdlog::error("startup failed: {}", e.what());
    kill_all();
    res.exit_code = 3;
    return res;
  }

  const TimeNs hard_stop = sim::subframe_time(end_subframe(o) + 20) + 30'000'000'000LL;
  bool killed = o.kill_receiver == 0;
  for (;;) {
    int status = 0;
    const pid_t pid = ::waitpid(-1, &status, WNOHANG);
    if (pid > 0) {
      for (auto& k : kids) {
        if (k.pid != pid) continue;
        k.running = false;
        const bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
        const std::string how = WIFEXITED(status) ? fmt::format("exit {}", WEXITSTATUS(status))
                                                  : fmt::format("signal {}", WTERMSIG(status));
        res.events.push_back(fmt::format("{} ended ({})", k.name, how));
        if (!ok && k.essential) {
          spdlog::error("{} failed ({}); shutting the run down", k.name, how);
          kill_all();
          res.exit_code = 3;
          return res;
        }
        if (!ok) spdlog::warn("{} ended ({}); continuing without it", k.name, how);
        if (k.name == "cu") {
          // Done; everyone else is finished or about to be.
          kill_all();
          return res;
        }
      }
      continue;
    }
    const TimeNs now = since(epoch);
    if (!killed && now >= static_cast<TimeNs>(o.kill_at_s * 1e9)) {
      killed = true;
      for (auto& k : kids) {
        if (k.running && k.name == fmt::format("ul{}", o.kill_receiver)) {
          ::kill(k.pid, SIGKILL);
          res.events.push_back(fmt::format("killed {} at {:.3f} s", k.name, static_cast<double>(now) / 1e9));
        }
      }
    }
    if (now > hard_stop) {
      res.events.push_back("run did not finish in time");
      kill_all();
      res.exit_code = 3;
      return res;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

}  // namespace ltag::live
