// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/bus.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

#include <arpa/inet.h>
#include <csignal>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>

namespace ltag::bus {

TimeNs monotonic_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---------------------------------------------------------------------------
// InProcBus

InProcBus::InProcBus(double loss_probability, std::uint64_t seed) : loss_(loss_probability), rng_(seed) {
  if (!(loss_ >= 0.0 && loss_ <= 1.0)) throw InvalidParameter("loss probability must be in [0, 1]");
}

void InProcBus::publish(std::string_view topic, Payload payload) {
  std::lock_guard lock(mutex_);
  ++stats_.published;
  Item item{std::string(topic), std::move(payload), {}};
  for (const auto& [id, sub] : subs_) {
    if (sub.topic == topic) item.targets.push_back(id);
  }
  if (item.targets.empty()) {
    ++stats_.dropped;
    return;
  }
  if (loss_ > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < loss_) {
    ++stats_.dropped;
    return;
  }
  queue_.push_back(std::move(item));
}

SubscriptionId InProcBus::subscribe(std::string_view topic, Handler handler) {
  std::lock_guard lock(mutex_);
  const SubscriptionId id = next_id_++;
  subs_.emplace(id, Sub{std::string(topic), std::move(handler)});
  return id;
}

void InProcBus::unsubscribe(SubscriptionId id) {
  std::lock_guard lock(mutex_);
  subs_.erase(id);
}

BusStats InProcBus::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

std::size_t InProcBus::pending() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

std::size_t InProcBus::pump() {
  std::size_t n = 0;
  for (;;) {
    Item item;
    std::vector<Handler> handlers;
    {
      std::lock_guard lock(mutex_);
      if (queue_.empty()) break;
      item = std::move(queue_.front());
      queue_.pop_front();
      for (auto id : item.targets) {
        auto it = subs_.find(id);
        if (it != subs_.end()) handlers.push_back(it->second.handler);
      }
      if (!handlers.empty()) ++stats_.delivered;
    }
    for (auto& h : handlers) h(item.topic, item.payload);
    ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// SocketNode

namespace {

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

bool write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
  return true;
}

bool read_exact(int fd, std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t r = ::recv(fd, data, n, 0);
    if (r == 0) return false;
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

}  // namespace

SocketNode::SocketNode(int listen_port, std::string bind_address) {
  if (listen_port >= 0) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd_ < 0) throw Error(fmt::format("socket: {}", std::strerror(errno)));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(listen_port));
    if (::inet_pton(AF_INET, bind_address.c_str(), &addr.sin_addr) != 1) {
      ::close(listen_fd_);
      throw InvalidParameter(fmt::format("bad bind address {}", bind_address));
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 || ::listen(listen_fd_, 64) < 0) {
      const int e = errno;
      ::close(listen_fd_);
      throw Error(fmt::format("bind/listen on {}:{}: {}", bind_address, listen_port, std::strerror(e)));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
  }
  sender_ = std::thread([this] { send_loop(); });
}

SocketNode::~SocketNode() { close(); }

void SocketNode::close() {
  if (closing_.exchange(true)) return;
  if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
  {
    std::lock_guard lock(out_mutex_);
  }
  out_cv_.notify_all();
  if (sender_.joinable()) sender_.join();
  if (acceptor_.joinable()) acceptor_.join();
  if (listen_fd_ >= 0) ::close(listen_fd_);
  {
    std::lock_guard lock(peers_mutex_);
    for (int fd : peers_) {
      ::shutdown(fd, SHUT_RDWR);
      ::close(fd);
    }
    peers_.clear();
  }
  {
    std::lock_guard lock(upstream_mutex_);
    for (int fd : upstream_) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& t : receivers_) {
    if (t.joinable()) t.join();
  }
  std::lock_guard lock(upstream_mutex_);
  for (int fd : upstream_) ::close(fd);
  upstream_.clear();
}

void SocketNode::accept_loop() {
  while (!closing_) {
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (closing_) break;
      if (errno == EINTR || errno == ECONNABORTED) continue;
      break;
    }
    set_nodelay(fd);
    {
      std::lock_guard lock(peers_mutex_);
      peers_.push_back(fd);
    }
    peers_cv_.notify_all();
  }
}

void SocketNode::send_loop() {
  for (;;) {
    std::pair<std::string, Payload> item;
    {
      std::unique_lock lock(out_mutex_);
      out_cv_.wait(lock, [&] { return closing_ || !out_.empty(); });
      if (out_.empty()) return;
      item = std::move(out_.front());
      out_.pop_front();
    }
    const auto& [topic, payload] = item;
    std::vector<std::uint8_t> frame;
    frame.reserve(6 + topic.size() + payload.size());
    const auto tl = static_cast<std::uint16_t>(topic.size());
    frame.push_back(static_cast<std::uint8_t>(tl));
    frame.push_back(static_cast<std::uint8_t>(tl >> 8));
    frame.insert(frame.end(), topic.begin(), topic.end());
    const auto pl = static_cast<std::uint32_t>(payload.size());
    for (int i = 0; i < 4; ++i) frame.push_back(static_cast<std::uint8_t>(pl >> (8 * i)));
    frame.insert(frame.end(), payload.begin(), payload.end());

    std::lock_guard lock(peers_mutex_);
    if (peers_.empty()) {
      ++dropped_;
      continue;
    }
    for (auto it = peers_.begin(); it != peers_.end();) {
      if (write_all(*it, frame.data(), frame.size())) {
        ++it;
      } else {
        ::close(*it);
        it = peers_.erase(it);
      }
    }
  }
}

void SocketNode::connect(const std::string& host, int port, double timeout_s) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw InvalidParameter(fmt::format("bad host address {}", host));
  }
  const TimeNs deadline = monotonic_ns() + static_cast<TimeNs>(timeout_s * 1e9);
  for (;;) {
    const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) throw Error(fmt::format("socket: {}", std::strerror(errno)));
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
      set_nodelay(fd);
      std::lock_guard lock(upstream_mutex_);
      upstream_.push_back(fd);
      receivers_.emplace_back([this, fd] { receive_loop(fd); });
      return;
    }
    ::close(fd);
    if (monotonic_ns() > deadline) throw Error(fmt::format("connect to {}:{} timed out", host, port));
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

void SocketNode::receive_loop(int fd) {
  std::string topic;
  Payload payload;
  for (;;) {
    std::uint8_t hdr[4];
    if (!read_exact(fd, hdr, 2)) return;
    topic.resize(static_cast<std::size_t>(hdr[0] | (hdr[1] << 8)));
    if (!read_exact(fd, reinterpret_cast<std::uint8_t*>(topic.data()), topic.size())) return;
    if (!read_exact(fd, hdr, 4)) return;
    const std::uint32_t len = static_cast<std::uint32_t>(hdr[0]) | (static_cast<std::uint32_t>(hdr[1]) << 8) |
                              (static_cast<std::uint32_t>(hdr[2]) << 16) | (static_cast<std::uint32_t>(hdr[3]) << 24);
    payload.resize(len);
    if (!read_exact(fd, payload.data(), len)) return;
    dispatch(topic, payload);
  }
}

void SocketNode::dispatch(std::string_view topic, std::span<const std::uint8_t> payload) {
  std::vector<Handler> handlers;
  {
    std::lock_guard lock(subs_mutex_);
    for (const auto& [id, sub] : subs_) {
      if (sub.first == topic) handlers.push_back(sub.second);
    }
  }
  if (handlers.empty()) return;
  ++delivered_;
  for (auto& h : handlers) h(topic, payload);
}

bool SocketNode::wait_for_subscribers(std::size_t n, double timeout_s) const {
  std::unique_lock lock(peers_mutex_);
  return peers_cv_.wait_for(lock, std::chrono::duration<double>(timeout_s), [&] { return peers_.size() >= n; });
}

std::size_t SocketNode::subscriber_count() const {
  std::lock_guard lock(peers_mutex_);
  return peers_.size();
}

void SocketNode::publish(std::string_view topic, Payload payload) {
  if (topic.size() > 0xFFFF) throw InvalidParameter("topic too long");
  ++published_;
  {
    std::lock_guard lock(out_mutex_);
    if (closing_) return;
    out_.emplace_back(std::string(topic), std::move(payload));
  }
  out_cv_.notify_one();
}

SubscriptionId SocketNode::subscribe(std::string_view topic, Handler handler) {
  std::lock_guard lock(subs_mutex_);
  const SubscriptionId id = next_id_++;
  subs_.emplace(id, std::make_pair(std::string(topic), std::move(handler)));
  return id;
}

void SocketNode::unsubscribe(SubscriptionId id) {
  std::lock_guard lock(subs_mutex_);
  subs_.erase(id);
}

BusStats SocketNode::stats() const { return {published_.load(), delivered_.load(), dropped_.load()}; }

// ---------------------------------------------------------------------------
// Benchmarks

LatencyStats summarize_us(std::span<const double> samples_us) {
  if (samples_us.empty()) throw InvalidParameter("latency statistics need at least one sample");
  LatencyStats s;
  s.count = samples_us.size();
  s.mean_us = std::accumulate(samples_us.begin(), samples_us.end(), 0.0) / static_cast<double>(s.count);
  double var = 0.0;
  for (double v : samples_us) var += (v - s.mean_us) * (v - s.mean_us);
  s.stddev_us = s.count > 1 ? std::sqrt(var / static_cast<double>(s.count - 1)) : 0.0;
  std::vector<double> sorted(samples_us.begin(), samples_us.end());
  std::sort(sorted.begin(), sorted.end());
  s.min_us = sorted.front();
  s.max_us = sorted.back();
  auto pct = [&](double p) {
    const auto i = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size()))) - 1;
    return sorted[std::min(i, sorted.size() - 1)];
  };
  s.p50_us = pct(0.5);
  s.p99_us = pct(0.99);
  return s;
}

namespace {

void write_int(int fd, int v) {
  if (::write(fd, &v, sizeof(v)) != sizeof(v)) throw Error("pipe write failed");
}

int read_int(int fd) {
  int v = 0;
  if (::read(fd, &v, sizeof(v)) != sizeof(v)) throw Error("pipe read failed");
  return v;
}

[[noreturn]] void echo_child(int to_parent, int from_parent) {
  int code = 0;
  try {
    SocketNode node(0);
    std::mutex m;
    std::condition_variable cv;
    bool stop = false;
    node.subscribe("ping", [&](std::string_view, std::span<const std::uint8_t> p) {
      node.publish("pong", Payload(p.begin(), p.end()));
    });
    node.subscribe("stop", [&](std::string_view, std::span<const std::uint8_t>) {
      std::lock_guard lock(m);
      stop = true;
      cv.notify_all();
    });
    write_int(to_parent, node.port());
    const int parent_port = read_int(from_parent);
    node.connect("127.0.0.1", parent_port);
    if (!node.wait_for_subscribers(1, 10.0)) throw Error("parent never subscribed");
    write_int(to_parent, 1);
    std::unique_lock lock(m);
    if (!cv.wait_for(lock, std::chrono::seconds(120), [&] { return stop; })) code = 2;
    lock.unlock();
    node.close();
  } catch (...) {
    code = 1;
  }
  ::_exit(code);
}

}  // namespace

LatencyStats round_trip_bench(std::size_t n, std::size_t payload_bytes) {
  if (n == 0) throw InvalidParameter("round_trip_bench: n must be positive");
  int c2p[2], p2c[2];
  if (::pipe(c2p) != 0 || ::pipe(p2c) != 0) throw Error("pipe failed");
  const pid_t pid = ::fork();
  if (pid < 0) throw Error("fork failed");
  if (pid == 0) {
    ::close(c2p[0]);
    ::close(p2c[1]);
    echo_child(c2p[1], p2c[0]);
  }
  ::close(c2p[1]);
  ::close(p2c[0]);

  std::vector<double> rtts;
  std::exception_ptr failure;
  {
    SocketNode node(0);
    std::mutex m;
    std::condition_variable cv;
    std::uint64_t pongs = 0;
    node.subscribe("pong", [&](std::string_view, std::span<const std::uint8_t>) {
      std::lock_guard lock(m);
      ++pongs;
      cv.notify_all();
    });
    try {
      const int child_port = read_int(c2p[0]);
      write_int(p2c[1], node.port());
      node.connect("127.0.0.1", child_port);
      if (!node.wait_for_subscribers(1, 10.0)) throw Error("echo process never subscribed");
      read_int(c2p[0]);

      Payload payload(payload_bytes);
      for (std::size_t i = 0; i < payload_bytes; ++i) payload[i] = static_cast<std::uint8_t>(i * 31 + 7);
      rtts.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        const TimeNs t0 = monotonic_ns();
        node.publish("ping", payload);
        std::unique_lock lock(m);
        if (!cv.wait_for(lock, std::chrono::seconds(5), [&] { return pongs == i + 1; })) {
          throw Error("round trip timed out");
        }
        rtts.push_back(static_cast<double>(monotonic_ns() - t0) / 1e3);
      }
    } catch (...) {
      failure = std::current_exception();
    }
    node.publish("stop", {});
    if (failure) ::kill(pid, SIGTERM);
    int status = 0;
    ::waitpid(pid, &status, 0);
  }
  ::close(c2p[0]);
  ::close(p2c[1]);
  if (failure) std::rethrow_exception(failure);
  return summarize_us(rtts);
}

}  // namespace ltag::bus
