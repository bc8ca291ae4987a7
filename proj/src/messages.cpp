// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/messages.hpp"

#include <bit>
#include <cstring>

#include <fmt/format.h>

namespace ltag {

phy::UplinkMessageSpec UplinkAllocation::spec() const {
  switch (id.type) {
    case MsgType::Prach:
      return phy::UplinkMessageSpec::prach(prb_offset, preamble_index.value_or(0), id.rnti);
    case MsgType::Pusch:
      return phy::UplinkMessageSpec::pusch(prb_offset, n_prb, id.rnti);
    case MsgType::Pucch:
      return phy::UplinkMessageSpec::pucch(prb_offset, hopping, id.rnti);
  }
  throw InvalidParameter("unknown message type");
}

namespace {

class Writer {
public:
  explicit Writer(MsgKind kind) {
    buf_.push_back(kWireVersion);
    buf_.push_back(static_cast<std::uint8_t>(kind));
    u32(0);
  }

  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void id(const MessageId& m) {
    u32(m.earfcn);
    u16(m.pci);
    u16(m.rnti);
    u8(static_cast<std::uint8_t>(m.type));
    u32(m.subframe);
  }

  Frame finish() {
    const auto len = static_cast<std::uint32_t>(buf_.size() - 6);
    for (int i = 0; i < 4; ++i) buf_[2 + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(len >> (8 * i));
    return std::move(buf_);
  }

private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Frame buf_;
};

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> p) : p_(p) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(get(8)); }
  double f64() { return std::bit_cast<double>(get(8)); }
  MessageId id() {
    MessageId m;
    m.earfcn = u32();
    m.pci = u16();
    m.rnti = u16();
    const std::uint8_t t = u8();
    if (t >= kNumMsgTypes) throw FormatError(fmt::format("bad message type {}", t));
    m.type = static_cast<MsgType>(t);
    m.subframe = u32();
    return m;
  }
  void done() const {
    if (pos_ != p_.size()) throw FormatError("trailing bytes in payload");
  }

private:
  std::uint64_t get(int n) {
    if (pos_ + static_cast<std::size_t>(n) > p_.size()) throw FormatError("truncated payload");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> p_;
  std::size_t pos_ = 0;
};

void put_features(Writer& w, const PortFeatures& f) {
  w.u8(f.detected ? 1 : 0);
  w.f64(f.corr_peak_power_db);
  w.f64(f.rms2_power_db);
  w.f64(f.peak_to_avg_snr_db);
  w.f64(f.smoothed_snr_db);
  w.f64(f.toa_offset_s);
}

PortFeatures get_features(Reader& r) {
  PortFeatures f;
  f.detected = r.u8() != 0;
  f.corr_peak_power_db = r.f64();
  f.rms2_power_db = r.f64();
  f.peak_to_avg_snr_db = r.f64();
  f.smoothed_snr_db = r.f64();
  f.toa_offset_s = r.f64();
  return f;
}

}  // namespace

Frame encode(const AllocationMsg& m) {
  if (m.allocations.size() > 0xFFFF) throw InvalidParameter("too many allocations in one message");
  Writer w(MsgKind::Allocation);
  w.i64(m.published_at);
  w.u16(static_cast<std::uint16_t>(m.allocations.size()));
  for (const auto& a : m.allocations) {
    w.id(a.id);
    w.u16(static_cast<std::uint16_t>(a.prb_offset));
    w.u16(static_cast<std::uint16_t>(a.n_prb));
    w.u8(a.hopping ? 1 : 0);
    w.u8(a.preamble_index ? static_cast<std::uint8_t>(*a.preamble_index) : 0xFF);
  }
  return w.finish();
}

Frame encode(const PdschNotice& m) {
  Writer w(MsgKind::PdschNotice);
  w.u32(m.connection.earfcn);
  w.u16(m.connection.pci);
  w.u16(m.connection.rnti);
  w.u32(m.subframe);
  w.u8(m.final ? 1 : 0);
  w.u8(m.expected_pucch);
  w.i64(m.published_at);
  return w.finish();
}

Frame encode(const MeasurementReport& m) {
  Writer w(MsgKind::MeasurementReport);
  w.id(m.id);
  w.u16(m.receiver_id);
  w.i64(m.measured_at);
  w.i64(m.reference_ns);
  put_features(w, m.ports[0]);
  put_features(w, m.ports[1]);
  return w.finish();
}

Frame encode(const Decision& m) {
  Writer w(MsgKind::Decision);
  w.id(m.id);
  w.u8(static_cast<std::uint8_t>((m.has_final ? 1 : 0) | (m.inside ? 2 : 0)));
  w.f64(m.score);
  w.f64(m.fused);
  w.i64(m.decided_at);
  w.i64(m.latency_ns);
  return w.finish();
}

Frame encode(const WireMessage& m) {
  return std::visit([](const auto& v) { return encode(v); }, m);
}

MsgKind peek_kind(std::span<const std::uint8_t> frame) {
  if (frame.size() < 6) throw FormatError("frame shorter than header");
  if (frame[0] != kWireVersion) throw FormatError(fmt::format("unsupported wire version {}", frame[0]));
  const std::uint8_t k = frame[1];
  if (k < 1 || k > 4) throw FormatError(fmt::format("unknown message kind {}", k));
  return static_cast<MsgKind>(k);
}

WireMessage decode(std::span<const std::uint8_t> frame) {
  const MsgKind kind = peek_kind(frame);
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(frame[2 + static_cast<std::size_t>(i)]) << (8 * i);
  if (frame.size() != 6 + static_cast<std::size_t>(len)) throw FormatError("frame length mismatch");
  Reader r(frame.subspan(6));
  switch (kind) {
    case MsgKind::Allocation: {
      AllocationMsg m;
      m.published_at = r.i64();
      const std::uint16_t n = r.u16();
      for (std::uint16_t i = 0; i < n; ++i) {
        UplinkAllocation a;
        a.id = r.id();
        a.prb_offset = r.u16();
        a.n_prb = r.u16();
        a.hopping = r.u8() != 0;
        const std::uint8_t p = r.u8();
        if (p != 0xFF) a.preamble_index = p;
        a.published_at = m.published_at;
        m.allocations.push_back(a);
      }
      r.done();
      return m;
    }
    case MsgKind::PdschNotice: {
      PdschNotice m;
      m.connection.earfcn = r.u32();
      m.connection.pci = r.u16();
      m.connection.rnti = r.u16();
      m.subframe = r.u32();
      m.final = (r.u8() & 1) != 0;
      m.expected_pucch = r.u8();
      m.published_at = r.i64();
      r.done();
      return m;
    }
    case MsgKind::MeasurementReport: {
      MeasurementReport m;
      m.id = r.id();
      m.receiver_id = r.u16();
      m.measured_at = r.i64();
      m.reference_ns = r.i64();
      m.ports[0] = get_features(r);
      m.ports[1] = get_features(r);
      r.done();
      return m;
    }
    case MsgKind::Decision: {
      Decision m;
      m.id = r.id();
      const std::uint8_t flags = r.u8();
      m.has_final = (flags & 1) != 0;
      m.inside = (flags & 2) != 0;
      m.score = r.f64();
      m.fused = r.f64();
      m.decided_at = r.i64();
      m.latency_ns = r.i64();
      r.done();
      return m;
    }
  }
  throw FormatError("unreachable");
}

}  // namespace ltag
