// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "ltag/bus.hpp"
#include "ltag/geofence_model.hpp"
#include "ltag/messages.hpp"

namespace ltag::cu {

inline constexpr TimeNs kSlotTimeoutNs = 2'000'000;

// ---------------------------------------------------------------------------
// Aggregation

struct AggregationSlot {
  MessageId id;
  std::map<std::uint16_t, MeasurementReport> reports;
  TimeNs opened_at = 0;
  TimeNs deadline = 0;
  TimeNs closed_at = 0;
  bool timed_out = false;

  /// Earliest allocation publication time carried by the reports (0 if none).
  TimeNs reference_ns() const;
  TimeNs first_measured_ns() const;
};

struct AggregatorStats {
  std::uint64_t accepted = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t late = 0;
  std::uint64_t unknown_receiver = 0;
  std::uint64_t closed_complete = 0;
  std::uint64_t closed_timeout = 0;
};

/// Collects reports per message id. A slot opens on its first report and
/// closes when every configured receiver has reported or `timeout` after it
/// opened, whichever comes first. Time is passed in by the caller.
class Aggregator {
public:
  explicit Aggregator(std::vector<std::uint16_t> receivers, TimeNs timeout = kSlotTimeoutNs,
                      std::size_t remember_closed = std::size_t{1} << 21);

  /// Returns every slot closed by this call: expired ones first, then this
  /// report's slot if it is now complete.
  std::vector<AggregationSlot> on_report(const MeasurementReport& report, TimeNs now);
  std::vector<AggregationSlot> expire(TimeNs now);
  /// Closes every open slot (end of run).
  std::vector<AggregationSlot> flush(TimeNs now);

  std::size_t open_slots() const { return open_.size(); }
  std::optional<TimeNs> next_deadline() const;
  const AggregatorStats& stats() const { return stats_; }
  std::size_t expected_receivers() const { return receivers_.size(); }

private:
  AggregationSlot close(std::map<MessageId, AggregationSlot>::iterator it, TimeNs now, bool timed_out);

  std::set<std::uint16_t> receivers_;
  TimeNs timeout_;
  std::size_t remember_;
  std::map<MessageId, AggregationSlot> open_;
  std::multimap<TimeNs, MessageId> deadlines_;
  std::unordered_set<MessageId> closed_;
  std::deque<MessageId> closed_order_;
  AggregatorStats stats_;
};

// ---------------------------------------------------------------------------
// Relative features

enum class PortFeature { CorrPeak = 0, PeakToAvgSnr = 1 };

/// Fixed ordering of relative features for a receiver set. Ports are numbered
/// 2 * rank(receiver) + port. For each per-port feature there is one entry per
/// unordered port pair p < q holding f(p) - f(q); after both pair blocks comes
/// one two-port correlation-peak ratio per receiver.
class FeatureLayout {
public:
  FeatureLayout() = default;
  explicit FeatureLayout(std::vector<std::uint16_t> receivers);

  const std::vector<std::uint16_t>& receiver_ids() const { return receivers_; }
  int receivers() const { return static_cast<int>(receivers_.size()); }
  int ports() const { return 2 * receivers(); }
  int pairs() const { return ports() * (ports() - 1) / 2; }
  int size() const { return 2 * pairs() + receivers(); }

  /// Index of f(p) - f(q) for p < q.
  int pair_index(PortFeature f, int p, int q) const;
  int ratio_index(int receiver_rank) const { return 2 * pairs() + receiver_rank; }
  std::optional<int> rank_of(std::uint16_t receiver_id) const;

  /// Every feature index that involves one of the receiver's ports.
  std::vector<std::vector<int>> receiver_groups() const;
  std::vector<std::string> names() const;

private:
  std::vector<std::uint16_t> receivers_;
};

struct RelativeFeatureVector {
  std::vector<double> values;
  std::vector<std::uint8_t> mask;
  int valid_ports = 0;

  bool usable() const { return valid_ports >= 2; }
  /// f(p) - f(q) for any p != q, using antisymmetry for p > q. Throws
  /// InvalidParameter if the pair is masked.
  double diff(const FeatureLayout& layout, PortFeature f, int p, int q) const;
};

/// Per-port measurements in layout order; absent ports are nullopt.
std::vector<std::optional<PortFeatures>> port_table(const FeatureLayout& layout,
                                                    std::span<const MeasurementReport> reports);

RelativeFeatureVector build_features(const FeatureLayout& layout, std::span<const std::optional<PortFeatures>> ports);
RelativeFeatureVector build_features(const FeatureLayout& layout, const AggregationSlot& slot);

/// Masks every feature touching the given receivers (dropout experiments).
void mask_receivers(const FeatureLayout& layout, RelativeFeatureVector& v, std::span<const int> receiver_ranks);

/// Inside-probability of one message; 0.5 when fewer than two ports are valid.
/// Throws ConfigError when the model was trained for another layout.
double score_message(const gf::Model& model, const RelativeFeatureVector& v, MsgType type);

// ---------------------------------------------------------------------------
// Connection fusion

struct FusedDecision {
  ConnectionKey key;
  MessageId last_message;
  gf::ConnectionScores scores;
  double fused = 0.5;
  bool inside = false;
  bool complete = false;  // false when finalized by timeout
  TimeNs decided_at = 0;
};

/// Per-connection score bookkeeping. A connection is decided once the
/// downlink side has announced its last PDSCH and the announced number of
/// PUCCH scores has arrived, or `grace` after that announcement.
class ConnectionTracker {
public:
  explicit ConnectionTracker(gf::Ensemble ensemble, TimeNs grace = 50'000'000);

  std::optional<FusedDecision> on_score(const MessageId& id, double score, TimeNs now);
  std::optional<FusedDecision> on_final_notice(const PdschNotice& notice, TimeNs now);
  std::vector<FusedDecision> expire(TimeNs now);
  /// Decides everything still open (end of run).
  std::vector<FusedDecision> flush(TimeNs now);

  std::size_t open_connections() const { return open_.size(); }
  const gf::Ensemble& ensemble() const { return ensemble_; }

private:
  struct Record {
    gf::ConnectionScores scores;
    MessageId last;
    std::optional<int> expected_pucch;
    TimeNs deadline = 0;
  };
  FusedDecision decide(const ConnectionKey& key, Record& r, TimeNs now, bool complete);
  std::optional<FusedDecision> maybe_complete(const ConnectionKey& key, TimeNs now);

  gf::Ensemble ensemble_;
  TimeNs grace_;
  std::map<ConnectionKey, Record> open_;
  std::set<ConnectionKey> decided_;
};

// ---------------------------------------------------------------------------
// Bus-facing unit

struct MessageDecision {
  AggregationSlot slot;
  RelativeFeatureVector features;
  double score = 0.5;
  TimeNs decided_at = 0;
  /// Slot close to score (feature assembly plus inference).
  TimeNs inference_ns = 0;
};

struct CentralUnitOptions {
  std::vector<std::uint16_t> receivers;
  TimeNs slot_timeout = kSlotTimeoutNs;
  TimeNs connection_grace = 50'000'000;
  /// CSV decision log; empty disables it.
  std::filesystem::path log_path;
  bool publish_decisions = true;
};

struct CentralUnitStats {
  std::uint64_t reports = 0;
  std::uint64_t malformed = 0;
  std::uint64_t messages_decided = 0;
  std::uint64_t connections_decided = 0;
};

/// Subscribes to reports and PDSCH notices, aggregates, scores, fuses, and
/// publishes Decision frames. All entry points are serialized internally so
/// the bus may deliver from several threads.
class CentralUnit {
public:
  using Clock = std::function<TimeNs()>;
  using MessageObserver = std::function<void(const MessageDecision&)>;
  using ConnectionObserver = std::function<void(const FusedDecision&)>;

  /// Without a model every message scores 0.5 (dataset generation).
  CentralUnit(bus::Bus& bus, std::optional<gf::Model> model, CentralUnitOptions options, Clock clock);
  ~CentralUnit();
  CentralUnit(const CentralUnit&) = delete;
  CentralUnit& operator=(const CentralUnit&) = delete;

  void on_message(MessageObserver f) { on_message_ = std::move(f); }
  void on_connection(ConnectionObserver f) { on_connection_ = std::move(f); }

  void handle_report(const MeasurementReport& r);
  void handle_notice(const PdschNotice& n);
  /// Housekeeping: closes expired slots and connections.
  void tick();
  void flush();

  const FeatureLayout& layout() const { return layout_; }
  CentralUnitStats stats() const;
  AggregatorStats aggregator_stats() const;

private:
  void finish_slots(std::vector<AggregationSlot> slots, TimeNs now);
  void finish_connection(const FusedDecision& d);
  void log_message(const MessageDecision& d);

  bus::Bus& bus_;
  std::optional<gf::Model> model_;
  CentralUnitOptions opt_;
  Clock clock_;
  FeatureLayout layout_;
  Aggregator agg_;
  ConnectionTracker tracker_;
  std::vector<bus::SubscriptionId> subs_;
  std::ofstream log_;
  MessageObserver on_message_;
  ConnectionObserver on_connection_;
  CentralUnitStats stats_;
  mutable std::recursive_mutex mutex_;
};

/// Column header of the decision log.
std::string decision_log_header();

}  // namespace ltag::cu
