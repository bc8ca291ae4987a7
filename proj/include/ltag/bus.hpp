// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ltag/common.hpp"

namespace ltag::bus {

namespace topic {
inline constexpr std::string_view kAllocation = "alloc";
inline constexpr std::string_view kPdsch = "pdsch";
inline constexpr std::string_view kReport = "report";
inline constexpr std::string_view kDecision = "decision";
}  // namespace topic

using Payload = std::vector<std::uint8_t>;
using Handler = std::function<void(std::string_view topic, std::span<const std::uint8_t> payload)>;
using SubscriptionId = std::uint64_t;

struct BusStats {
  std::uint64_t published = 0;
  std::uint64_t delivered = 0;
  /// Publications that reached no subscriber (none connected, or injected loss).
  std::uint64_t dropped = 0;
};

/// Fire-and-forget publish/subscribe. Publishers never learn whether anyone
/// received a message.
class Bus {
public:
  virtual ~Bus() = default;
  virtual void publish(std::string_view topic, Payload payload) = 0;
  virtual SubscriptionId subscribe(std::string_view topic, Handler handler) = 0;
  virtual void unsubscribe(SubscriptionId id) = 0;
  virtual BusStats stats() const = 0;
};

/// Deterministic single-process bus. Publications are queued and delivered
/// in FIFO order by pump(); a publication goes to the subscribers present at
/// publish time. Optional seeded loss injection for robustness tests.
class InProcBus final : public Bus {
public:
  explicit InProcBus(double loss_probability = 0.0, std::uint64_t seed = 1);

  void publish(std::string_view topic, Payload payload) override;
  SubscriptionId subscribe(std::string_view topic, Handler handler) override;
  void unsubscribe(SubscriptionId id) override;
  BusStats stats() const override;

  /// Delivers queued publications (including ones published by handlers
  /// during the pump). Returns the number delivered.
  std::size_t pump();
  std::size_t pending() const;

private:
  struct Sub {
    std::string topic;
    Handler handler;
  };
  struct Item {
    std::string topic;
    Payload payload;
    std::vector<SubscriptionId> targets;
  };

  mutable std::mutex mutex_;
  std::map<SubscriptionId, Sub> subs_;
  std::deque<Item> queue_;
  SubscriptionId next_id_ = 1;
  BusStats stats_;
  double loss_;
  std::mt19937_64 rng_;
};

/// TCP publish/subscribe endpoint. Each node listens for subscribers and
/// fans its own publications out to every connected peer from a sender
/// thread; it can also connect to other nodes and receive their
/// publications on per-connection receiver threads, filtered by topic.
///
/// Stream framing: [u16 topic length][topic][u32 payload length][payload].
class SocketNode final : public Bus {
public:
  /// `listen_port` 0 picks an ephemeral port; -1 disables listening.
  explicit SocketNode(int listen_port = 0, std::string bind_address = "127.0.0.1");
  ~SocketNode() override;
  SocketNode(const SocketNode&) = delete;
  SocketNode& operator=(const SocketNode&) = delete;

  int port() const { return port_; }
  /// Connects to another node's listening port (retrying until timeout).
  void connect(const std::string& host, int port, double timeout_s = 5.0);
  /// Waits until at least n subscribers are connected to this node.
  bool wait_for_subscribers(std::size_t n, double timeout_s) const;
  std::size_t subscriber_count() const;

  void publish(std::string_view topic, Payload payload) override;
  SubscriptionId subscribe(std::string_view topic, Handler handler) override;
  void unsubscribe(SubscriptionId id) override;
  BusStats stats() const override;

  void close();

private:
  void accept_loop();
  void send_loop();
  void receive_loop(int fd);
  void dispatch(std::string_view topic, std::span<const std::uint8_t> payload);

  int listen_fd_ = -1;
  int port_ = -1;
  std::atomic<bool> closing_{false};

  mutable std::mutex peers_mutex_;
  mutable std::condition_variable peers_cv_;
  std::vector<int> peers_;  // subscribers connected to us

  std::mutex out_mutex_;
  std::condition_variable out_cv_;
  std::deque<std::pair<std::string, Payload>> out_;

  std::mutex subs_mutex_;
  std::map<SubscriptionId, std::pair<std::string, Handler>> subs_;
  SubscriptionId next_id_ = 1;

  std::mutex upstream_mutex_;
  std::vector<int> upstream_;  // nodes we subscribed to
  std::vector<std::thread> receivers_;

  std::thread acceptor_;
  std::thread sender_;

  std::atomic<std::uint64_t> published_{0};
  std::atomic<std::uint64_t> delivered_{0};
  std::atomic<std::uint64_t> dropped_{0};
};

struct LatencyStats {
  std::size_t count = 0;
  double mean_us = 0.0;
  double stddev_us = 0.0;
  double min_us = 0.0;
  double max_us = 0.0;
  double p50_us = 0.0;
  double p99_us = 0.0;
};

/// Mean, sample standard deviation and percentiles. Throws InvalidParameter
/// for an empty sample.
LatencyStats summarize_us(std::span<const double> samples_us);

/// Ping-pong over two SocketNodes in two processes (the echo side is a
/// forked child). Each exchange carries `payload_bytes` bytes each way.
LatencyStats round_trip_bench(std::size_t n, std::size_t payload_bytes);

/// Monotonic nanoseconds.
TimeNs monotonic_ns();

}  // namespace ltag::bus
