// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/central_unit.hpp"

#include <algorithm>
#include <limits>

#include <fmt/format.h>

namespace ltag::cu {

// ---------------------------------------------------------------------------
// Aggregator

TimeNs AggregationSlot::reference_ns() const {
  TimeNs best = 0;
  for (const auto& [rx, r] : reports) {
    if (r.reference_ns != 0 && (best == 0 || r.reference_ns < best)) best = r.reference_ns;
  }
  return best;
}

TimeNs AggregationSlot::first_measured_ns() const {
  TimeNs best = std::numeric_limits<TimeNs>::max();
  for (const auto& [rx, r] : reports) best = std::min(best, r.measured_at);
  return reports.empty() ? 0 : best;
}

Aggregator::Aggregator(std::vector<std::uint16_t> receivers, TimeNs timeout, std::size_t remember_closed)
    : receivers_(receivers.begin(), receivers.end()), timeout_(timeout), remember_(remember_closed) {
  if (receivers_.empty()) throw ConfigError("aggregator needs at least one receiver");
  if (timeout <= 0) throw InvalidParameter("slot timeout must be positive");
}

AggregationSlot Aggregator::close(std::map<MessageId, AggregationSlot>::iterator it, TimeNs now, bool timed_out) {
  AggregationSlot s = std::move(it->second);
  open_.erase(it);
  auto range = deadlines_.equal_range(s.deadline);
  for (auto d = range.first; d != range.second; ++d) {
    if (d->second == s.id) {
      deadlines_.erase(d);
      break;
    }
  }
  s.closed_at = now;
  s.timed_out = timed_out;
  ++(timed_out ? stats_.closed_timeout : stats_.closed_complete);
  closed_.insert(s.id);
  closed_order_.push_back(s.id);
  while (closed_order_.size() > remember_) {
    closed_.erase(closed_order_.front());
    closed_order_.pop_front();
  }
  return s;
}

std::vector<AggregationSlot> Aggregator::expire(TimeNs now) {
  std::vector<AggregationSlot> out;
  while (!deadlines_.empty() && deadlines_.begin()->first <= now) {
    const MessageId id = deadlines_.begin()->second;
    auto it = open_.find(id);
    if (it == open_.end()) {
      deadlines_.erase(deadlines_.begin());
      continue;
    }
    out.push_back(close(it, it->second.deadline, true));
  }
  return out;
}

std::vector<AggregationSlot> Aggregator::on_report(const MeasurementReport& r, TimeNs now) {
  auto out = expire(now);
  if (!receivers_.count(r.receiver_id)) {
    ++stats_.unknown_receiver;
    return out;
  }
  if (closed_.count(r.id)) {
    ++stats_.late;
    return out;
  }
  auto it = open_.find(r.id);
  if (it == open_.end()) {
    AggregationSlot s;
    s.id = r.id;
    s.opened_at = now;
    s.deadline = now + timeout_;
    deadlines_.emplace(s.deadline, s.id);
    it = open_.emplace(r.id, std::move(s)).first;
  }
  if (!it->second.reports.emplace(r.receiver_id, r).second) {
    ++stats_.duplicates;
    return out;
  }
  ++stats_.accepted;
  if (it->second.reports.size() == receivers_.size()) out.push_back(close(it, now, false));
  return out;
}

std::vector<AggregationSlot> Aggregator::flush(TimeNs now) {
  std::vector<AggregationSlot> out;
  while (!open_.empty()) out.push_back(close(open_.begin(), now, true));
  return out;
}

std::optional<TimeNs> Aggregator::next_deadline() const {
  if (deadlines_.empty()) return std::nullopt;
  return deadlines_.begin()->first;
}

// ---------------------------------------------------------------------------
// Features

FeatureLayout::FeatureLayout(std::vector<std::uint16_t> receivers) : receivers_(std::move(receivers)) {
  std::set<std::uint16_t> uniq(receivers_.begin(), receivers_.end());
  if (uniq.size() != receivers_.size()) throw ConfigError("duplicate receiver id in layout");
  if (receivers_.empty()) throw ConfigError("feature layout needs at least one receiver");
}

int FeatureLayout::pair_index(PortFeature f, int p, int q) const {
  const int P = ports();
  if (p < 0 || q >= P || p >= q) throw InvalidParameter(fmt::format("bad port pair ({}, {})", p, q));
  // Row-major upper triangle without the diagonal.
  const int before = p * P - p * (p + 1) / 2;
  return static_cast<int>(f) * pairs() + before + (q - p - 1);
}

std::optional<int> FeatureLayout::rank_of(std::uint16_t id) const {
  for (std::size_t i = 0; i < receivers_.size(); ++i) {
    if (receivers_[i] == id) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::vector<std::vector<int>> FeatureLayout::receiver_groups() const {
  std::vector<std::vector<int>> g(static_cast<std::size_t>(receivers()));
  for (int p = 0; p < ports(); ++p) {
    for (int q = p + 1; q < ports(); ++q) {
      for (auto f : {PortFeature::CorrPeak, PortFeature::PeakToAvgSnr}) {
        const int idx = pair_index(f, p, q);
        g[static_cast<std::size_t>(p / 2)].push_back(idx);
        if (q / 2 != p / 2) g[static_cast<std::size_t>(q / 2)].push_back(idx);
      }
    }
  }
  for (int r = 0; r < receivers(); ++r) g[static_cast<std::size_t>(r)].push_back(ratio_index(r));
  for (auto& v : g) std::sort(v.begin(), v.end());
  return g;
}

std::vector<std::string> FeatureLayout::names() const {
  std::vector<std::string> n(static_cast<std::size_t>(size()));
  auto port_name = [&](int p) { return fmt::format("r{}p{}", receivers_[static_cast<std::size_t>(p / 2)], p % 2); };
  for (int p = 0; p < ports(); ++p) {
    for (int q = p + 1; q < ports(); ++q) {
      n[static_cast<std::size_t>(pair_index(PortFeature::CorrPeak, p, q))] =
          fmt::format("corr_{}_{}", port_name(p), port_name(q));
      n[static_cast<std::size_t>(pair_index(PortFeature::PeakToAvgSnr, p, q))] =
          fmt::format("p2a_{}_{}", port_name(p), port_name(q));
    }
  }
  for (int r = 0; r < receivers(); ++r) n[static_cast<std::size_t>(ratio_index(r))] = fmt::format("ratio_r{}", receivers_[static_cast<std::size_t>(r)]);
  return n;
}

double RelativeFeatureVector::diff(const FeatureLayout& layout, PortFeature f, int p, int q) const {
  if (p == q) return 0.0;
  const int idx = layout.pair_index(f, std::min(p, q), std::max(p, q));
  if (!mask[static_cast<std::size_t>(idx)]) throw InvalidParameter(fmt::format("pair ({}, {}) is masked", p, q));
  const double v = values[static_cast<std::size_t>(idx)];
  return p < q ? v : -v;
}

std::vector<std::optional<PortFeatures>> port_table(const FeatureLayout& layout,
                                                    std::span<const MeasurementReport> reports) {
  std::vector<std::optional<PortFeatures>> t(static_cast<std::size_t>(layout.ports()));
  for (const auto& r : reports) {
    const auto rank = layout.rank_of(r.receiver_id);
    if (!rank) continue;
    for (int p = 0; p < 2; ++p) t[static_cast<std::size_t>(2 * *rank + p)] = r.ports[static_cast<std::size_t>(p)];
  }
  return t;
}

namespace {

double port_value(const PortFeatures& f, PortFeature k) {
  return k == PortFeature::CorrPeak ? f.corr_peak_power_db : f.peak_to_avg_snr_db;
}

bool valid(const std::optional<PortFeatures>& f) {
  return f && f->detected && std::isfinite(f->corr_peak_power_db) && std::isfinite(f->peak_to_avg_snr_db);
}

}  // namespace

RelativeFeatureVector build_features(const FeatureLayout& layout, std::span<const std::optional<PortFeatures>> ports) {
  if (static_cast<int>(ports.size()) != layout.ports()) throw InvalidParameter("port table does not match layout");
  RelativeFeatureVector v;
  v.values.assign(static_cast<std::size_t>(layout.size()), 0.0);
  v.mask.assign(static_cast<std::size_t>(layout.size()), 0);
  for (const auto& p : ports) v.valid_ports += valid(p);
  for (int p = 0; p < layout.ports(); ++p) {
    if (!valid(ports[static_cast<std::size_t>(p)])) continue;
    for (int q = p + 1; q < layout.ports(); ++q) {
      if (!valid(ports[static_cast<std::size_t>(q)])) continue;
      for (auto f : {PortFeature::CorrPeak, PortFeature::PeakToAvgSnr}) {
        const auto idx = static_cast<std::size_t>(layout.pair_index(f, p, q));
        v.values[idx] = port_value(*ports[static_cast<std::size_t>(p)], f) - port_value(*ports[static_cast<std::size_t>(q)], f);
        v.mask[idx] = 1;
      }
    }
  }
  for (int r = 0; r < layout.receivers(); ++r) {
    const auto& a = ports[static_cast<std::size_t>(2 * r)];
    const auto& b = ports[static_cast<std::size_t>(2 * r + 1)];
    if (!valid(a) || !valid(b)) continue;
    const auto idx = static_cast<std::size_t>(layout.ratio_index(r));
    v.values[idx] = a->corr_peak_power_db - b->corr_peak_power_db;
    v.mask[idx] = 1;
  }
  return v;
}

RelativeFeatureVector build_features(const FeatureLayout& layout, const AggregationSlot& slot) {
  std::vector<MeasurementReport> reports;
  reports.reserve(slot.reports.size());
  for (const auto& [rx, r] : slot.reports) reports.push_back(r);
  const auto t = port_table(layout, reports);
  return build_features(layout, t);
}

void mask_receivers(const FeatureLayout& layout, RelativeFeatureVector& v, std::span<const int> ranks) {
  const auto groups = layout.receiver_groups();
  for (int r : ranks) {
    for (int idx : groups.at(static_cast<std::size_t>(r))) {
      v.values[static_cast<std::size_t>(idx)] = 0.0;
      v.mask[static_cast<std::size_t>(idx)] = 0;
    }
  }
  // Recount ports that still take part in some valid pair.
  std::vector<bool> used(static_cast<std::size_t>(layout.ports()), false);
  for (int p = 0; p < layout.ports(); ++p) {
    for (int q = p + 1; q < layout.ports(); ++q) {
      if (v.mask[static_cast<std::size_t>(layout.pair_index(PortFeature::CorrPeak, p, q))]) {
        used[static_cast<std::size_t>(p)] = used[static_cast<std::size_t>(q)] = true;
      }
    }
  }
  v.valid_ports = static_cast<int>(std::count(used.begin(), used.end(), true));
}

double score_message(const gf::Model& model, const RelativeFeatureVector& v, MsgType type) {
  if (model.mlp.n_features() != static_cast<int>(v.values.size())) {
    throw ConfigError(fmt::format("model expects {} features, layout produces {}", model.mlp.n_features(),
                                  v.values.size()));
  }
  if (!v.usable()) return 0.5;
  std::vector<double> m(v.mask.begin(), v.mask.end());
  return model.mlp.predict(v.values, m, type);
}

// ---------------------------------------------------------------------------
// Connections

ConnectionTracker::ConnectionTracker(gf::Ensemble ensemble, TimeNs grace) : ensemble_(ensemble), grace_(grace) {}

FusedDecision ConnectionTracker::decide(const ConnectionKey& key, Record& r, TimeNs now, bool complete) {
  FusedDecision d;
  d.key = key;
  d.last_message = r.last;
  d.scores = r.scores;
  d.fused = ensemble_.fuse(r.scores);
  d.inside = d.fused > 0.5;
  d.complete = complete;
  d.decided_at = now;
  return d;
}

std::optional<FusedDecision> ConnectionTracker::maybe_complete(const ConnectionKey& key, TimeNs now) {
  auto it = open_.find(key);
  if (it == open_.end() || !it->second.expected_pucch) return std::nullopt;
  if (static_cast<int>(it->second.scores.pucch.size()) < *it->second.expected_pucch) return std::nullopt;
  auto d = decide(key, it->second, now, true);
  open_.erase(it);
  decided_.insert(key);
  return d;
}

std::optional<FusedDecision> ConnectionTracker::on_score(const MessageId& id, double score, TimeNs now) {
  const auto key = connection_of(id);
  if (decided_.count(key)) return std::nullopt;
  auto& r = open_[key];
  r.scores.add(id.type, score);
  if (r.last.subframe <= id.subframe || r.last.earfcn == 0) r.last = id;
  return maybe_complete(key, now);
}

std::optional<FusedDecision> ConnectionTracker::on_final_notice(const PdschNotice& n, TimeNs now) {
  if (!n.final || decided_.count(n.connection)) return std::nullopt;
  auto& r = open_[n.connection];
  r.expected_pucch = n.expected_pucch;
  r.deadline = now + grace_;
  if (r.last.earfcn == 0) r.last = {n.connection.earfcn, n.connection.pci, n.connection.rnti, MsgType::Pucch, n.subframe + 4};
  return maybe_complete(n.connection, now);
}

std::vector<FusedDecision> ConnectionTracker::expire(TimeNs now) {
  std::vector<FusedDecision> out;
  for (auto it = open_.begin(); it != open_.end();) {
    if (it->second.expected_pucch && it->second.deadline <= now) {
      if (!it->second.scores.empty()) out.push_back(decide(it->first, it->second, now, false));
      decided_.insert(it->first);
      it = open_.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

std::vector<FusedDecision> ConnectionTracker::flush(TimeNs now) {
  std::vector<FusedDecision> out;
  for (auto& [k, r] : open_) {
    if (!r.scores.empty()) out.push_back(decide(k, r, now, false));
    decided_.insert(k);
  }
  open_.clear();
  return out;
}

// ---------------------------------------------------------------------------
// CentralUnit

std::string decision_log_header() {
  return "kind,earfcn,pci,rnti,type,subframe,reports,timed_out,score,fused,inside,reference_ns,first_measured_ns,"
         "decided_at_ns,latency_ns,measure_to_decision_ns";
}

CentralUnit::CentralUnit(bus::Bus& bus, std::optional<gf::Model> model, CentralUnitOptions options, Clock clock)
    : bus_(bus),
      model_(std::move(model)),
      opt_(std::move(options)),
      clock_(std::move(clock)),
      layout_(opt_.receivers),
      agg_(opt_.receivers, opt_.slot_timeout),
      tracker_(model_ ? model_->ensemble : gf::Ensemble{}, opt_.connection_grace) {
  if (model_ && model_->mlp.n_features() != layout_.size()) {
    throw ConfigError(fmt::format("model expects {} features, {} receivers produce {}", model_->mlp.n_features(),
                                  layout_.receivers(), layout_.size()));
  }
  if (!opt_.log_path.empty()) {
    log_.open(opt_.log_path, std::ios::trunc);
    if (!log_) throw ConfigError(fmt::format("cannot write {}", opt_.log_path.string()));
    log_ << decision_log_header() << '\n';
  }
  subs_.push_back(bus_.subscribe(bus::topic::kReport, [this](std::string_view, std::span<const std::uint8_t> p) {
    try {
      handle_report(std::get<MeasurementReport>(decode(p)));
    } catch (const std::exception&) {
      std::lock_guard lock(mutex_);
      ++stats_.malformed;
    }
  }));
  subs_.push_back(bus_.subscribe(bus::topic::kPdsch, [this](std::string_view, std::span<const std::uint8_t> p) {
    try {
      handle_notice(std::get<PdschNotice>(decode(p)));
    } catch (const std::exception&) {
      std::lock_guard lock(mutex_);
      ++stats_.malformed;
    }
  }));
}

CentralUnit::~CentralUnit() {
  for (auto s : subs_) bus_.unsubscribe(s);
}

void CentralUnit::handle_report(const MeasurementReport& r) {
  std::lock_guard lock(mutex_);
  const TimeNs now = clock_();
  ++stats_.reports;
  finish_slots(agg_.on_report(r, now), now);
}

void CentralUnit::handle_notice(const PdschNotice& n) {
  std::lock_guard lock(mutex_);
  const TimeNs now = clock_();
  finish_slots(agg_.expire(now), now);
  if (auto d = tracker_.on_final_notice(n, now)) finish_connection(*d);
}

void CentralUnit::tick() {
  std::lock_guard lock(mutex_);
  const TimeNs now = clock_();
  finish_slots(agg_.expire(now), now);
  for (const auto& d : tracker_.expire(now)) finish_connection(d);
}

void CentralUnit::flush() {
  std::lock_guard lock(mutex_);
  const TimeNs now = clock_();
  finish_slots(agg_.flush(now), now);
  for (const auto& d : tracker_.flush(now)) finish_connection(d);
  if (log_.is_open()) log_.flush();
}

void CentralUnit::finish_slots(std::vector<AggregationSlot> slots, TimeNs now) {
  for (auto& s : slots) {
    MessageDecision d;
    const TimeNs start = clock_();
    d.features = build_features(layout_, s);
    d.score = model_ ? score_message(*model_, d.features, s.id.type) : 0.5;
    d.decided_at = std::max(now, clock_());
    d.inference_ns = d.decided_at - std::max(now, start);
    d.slot = std::move(s);
    ++stats_.messages_decided;
    if (opt_.publish_decisions) {
      Decision out;
      out.id = d.slot.id;
      out.score = d.score;
      out.decided_at = d.decided_at;
      const TimeNs ref = d.slot.reference_ns();
      out.latency_ns = ref ? d.decided_at - ref : 0;
      bus_.publish(bus::topic::kDecision, encode(out));
    }
    log_message(d);
    if (on_message_) on_message_(d);
    if (auto f = tracker_.on_score(d.slot.id, d.score, d.decided_at)) finish_connection(*f);
  }
}

void CentralUnit::finish_connection(const FusedDecision& f) {
  ++stats_.connections_decided;
  if (opt_.publish_decisions) {
    Decision out;
    out.id = f.last_message;
    out.has_final = true;
    out.fused = f.fused;
    out.inside = f.inside;
    out.score = f.fused;
    out.decided_at = f.decided_at;
    bus_.publish(bus::topic::kDecision, encode(out));
  }
  if (log_.is_open()) {
    const auto& id = f.last_message;
    log_ << fmt::format("connection,{},{},{},{},{},0,{},{:.6f},{:.6f},{},0,0,{},0,0\n", id.earfcn, id.pci, id.rnti,
                        to_string(id.type), id.subframe, f.complete ? 0 : 1, f.fused, f.fused, f.inside ? 1 : 0,
                        f.decided_at);
  }
  if (on_connection_) on_connection_(f);
}

void CentralUnit::log_message(const MessageDecision& d) {
  if (!log_.is_open()) return;
  const auto& id = d.slot.id;
  const TimeNs ref = d.slot.reference_ns();
  const TimeNs meas = d.slot.first_measured_ns();
  log_ << fmt::format("message,{},{},{},{},{},{},{},{:.6f},,{},{},{},{},{},{}\n", id.earfcn, id.pci, id.rnti,
                      to_string(id.type), id.subframe, d.slot.reports.size(), d.slot.timed_out ? 1 : 0, d.score,
                      d.score > 0.5 ? 1 : 0, ref, meas, d.decided_at, ref ? d.decided_at - ref : 0,
                      meas ? d.decided_at - meas : 0);
}

CentralUnitStats CentralUnit::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

AggregatorStats CentralUnit::aggregator_stats() const {
  std::lock_guard lock(mutex_);
  return agg_.stats();
}

}  // namespace ltag::cu
