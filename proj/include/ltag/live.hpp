// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ltag/bus.hpp"
#include "ltag/channel.hpp"
#include "ltag/messages.hpp"

namespace ltag::live {

/// A live run: one downlink node, one process per uplink receiver and a
/// central unit, talking over SocketNode on localhost in real time. Every
/// node derives the same traffic plan from scenario and seed; the uplink
/// nodes render their own antenna signals from it, the downlink node
/// publishes the scheduler's grants, the central unit decides.
///
/// Time is CLOCK_MONOTONIC nanoseconds since an epoch the supervisor picks
/// once every node is ready; all nodes on a host share the clock. Subframe k
/// occupies [k ms, k+1 ms).
struct LiveOptions {
  chan::DeploymentScenario scenario;
  std::optional<std::filesystem::path> model_path;
  std::uint64_t seed = 1;
  std::size_t n_connections = 200;
  int request_interval = 10;  // subframes between connection requests
  std::filesystem::path out_dir = "run";
  /// Margin between the last node becoming ready and subframe 0.
  double start_delay_s = 0.2;
  TimeNs slot_timeout = 2'000'000;
  /// Receiver to kill (SIGKILL) `kill_at_s` after the epoch; 0 disables.
  std::uint16_t kill_receiver = 0;
  double kill_at_s = 0.0;
};

inline constexpr std::uint32_t kFirstSubframe = 10;

/// Last subframe any node works on.
std::uint32_t end_subframe(const LiveOptions& o);

/// Called by a node once it has finished preparing (plans, warm-up,
/// connections); blocks until the run starts and returns the epoch.
using StartFn = std::function<TimeNs()>;

// Node bodies. Each takes a bound SocketNode and returns a process exit code.
int run_dl_node(const LiveOptions& o, bus::SocketNode& node, const StartFn& start);
int run_ul_node(const LiveOptions& o, bus::SocketNode& node, std::uint16_t receiver_id, int dl_port,
                const StartFn& start);
int run_cu_node(const LiveOptions& o, bus::SocketNode& node, int dl_port, const std::vector<int>& ul_ports,
                const StartFn& start);

// ---------------------------------------------------------------------------
// Latency table

struct StageRow {
  std::string stage;
  std::string type;
  bus::LatencyStats stats;
};

/// Samples in microseconds keyed by (stage, message type).
using StageSamples = std::map<std::pair<std::string, std::string>, std::vector<double>>;

std::vector<StageRow> summarize_stages(const StageSamples& samples);
/// stage,type,mean_us,stddev_us,count,p50_us,p99_us
std::string stages_csv(const std::vector<StageRow>& rows);
/// Aligned text table with Mean/StdDev/Count columns.
std::string stages_table(const std::vector<StageRow>& rows);

// ---------------------------------------------------------------------------
// Supervisor

struct RunResult {
  int exit_code = 0;
  std::vector<std::string> events;  // node exits, kills
};

/// Forks every node, waits for the central unit to finish, and shuts the run
/// down. A dying receiver is tolerated; a dying downlink node or central unit
/// ends the run with exit code 3.
RunResult supervise(const LiveOptions& o);

}  // namespace ltag::live
