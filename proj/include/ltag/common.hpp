// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ltag {

using cf64 = std::complex<double>;
using cf32 = std::complex<float>;

/// Nanoseconds since the scenario epoch.
using TimeNs = std::int64_t;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSpeedOfLight = 299792458.0;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
public:
  using Error::Error;
};

class InvalidAllocation : public Error {
public:
  using Error::Error;
};

class DegenerateGeometry : public Error {
public:
  using Error::Error;
};

/// Requested samples have already been overwritten in a ring buffer.
class StaleRange : public Error {
public:
  using Error::Error;
};

/// Requested samples are not yet fully written; try again later.
class RetryLater : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class FormatError : public Error {
public:
  using Error::Error;
};

class TrainingError : public Error {
public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Message identity

enum class MsgType : std::uint8_t { Prach = 0, Pusch = 1, Pucch = 2 };

inline constexpr int kNumMsgTypes = 3;

const char* to_string(MsgType t);
MsgType msg_type_from_string(const std::string& s);

/// Receiver-independent identity of one uplink transmission.
struct MessageId {
  std::uint32_t earfcn = 0;
  std::uint16_t pci = 0;
  std::uint16_t rnti = 0;
  MsgType type = MsgType::Prach;
  std::uint32_t subframe = 0;

  friend auto operator<=>(const MessageId&, const MessageId&) = default;
  friend bool operator==(const MessageId&, const MessageId&) = default;
};

/// (cell, rnti) names a connection.
struct ConnectionKey {
  std::uint32_t earfcn = 0;
  std::uint16_t pci = 0;
  std::uint16_t rnti = 0;

  friend auto operator<=>(const ConnectionKey&, const ConnectionKey&) = default;
  friend bool operator==(const ConnectionKey&, const ConnectionKey&) = default;
};

inline ConnectionKey connection_of(const MessageId& id) { return {id.earfcn, id.pci, id.rnti}; }

std::string to_string(const MessageId& id);

/// Timestamped complex baseband samples. `start_sample` counts samples at
/// `sample_rate` since the scenario epoch.
struct IqStream {
  double sample_rate = 0.0;
  std::int64_t start_sample = 0;
  std::vector<cf64> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  // splitmix64 finalizer over the xor-combined state
  std::uint64_t z = seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives a child seed from a parent seed and a path of indices. Used so
/// that independent transmissions draw from independent generators no matter
/// which order they are processed in.
template <typename... Ts>
std::uint64_t derive_seed(std::uint64_t parent, Ts... path) {
  std::uint64_t s = hash_combine(0x6c746167ULL, parent);
  ((s = hash_combine(s, static_cast<std::uint64_t>(path))), ...);
  return s;
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
double linear_to_db(double lin);

}  // namespace ltag

template <>
struct std::hash<ltag::MessageId> {
  std::size_t operator()(const ltag::MessageId& id) const noexcept {
    std::uint64_t h = ltag::hash_combine(id.earfcn, id.pci);
    h = ltag::hash_combine(h, id.rnti);
    h = ltag::hash_combine(h, static_cast<std::uint64_t>(id.type));
    return ltag::hash_combine(h, id.subframe);
  }
};

template <>
struct std::hash<ltag::ConnectionKey> {
  std::size_t operator()(const ltag::ConnectionKey& k) const noexcept {
    return ltag::hash_combine(ltag::hash_combine(k.earfcn, k.pci), k.rnti);
  }
};
