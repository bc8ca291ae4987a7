// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/lte_phy.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include <fmt/format.h>

#include "ltag/fft.hpp"

namespace ltag::phy {

// ---------------------------------------------------------------------------
// Zadoff-Chu

ZadoffChuSeq gen_zadoff_chu(int length, int root, int cyclic_shift) {
  if (length <= 0 || length % 2 == 0)
    throw InvalidParameter(fmt::format("zadoff-chu: length {} must be odd and positive", length));
  if (std::gcd(root, length) != 1)
    throw InvalidParameter(fmt::format("zadoff-chu: root {} is not coprime with length {}", root, length));
  if (cyclic_shift < 0 || cyclic_shift >= length)
    throw InvalidParameter(fmt::format("zadoff-chu: cyclic shift {} outside [0, {})", cyclic_shift, length));

  const std::int64_t n2 = 2LL * length;
  const std::int64_t u = ((root % length) + length) % length;
  std::vector<cf64> base(static_cast<std::size_t>(length));
  for (std::int64_t n = 0; n < length; ++n) {
    // exact phase index modulo 2*length keeps |x[n]| == 1 to rounding
    std::int64_t m = (u * ((n * (n + 1)) % n2)) % n2;
    base[static_cast<std::size_t>(n)] = std::polar(1.0, -kPi * static_cast<double>(m) / length);
  }
  ZadoffChuSeq seq{length, root, cyclic_shift, std::vector<cf64>(base.size())};
  for (int n = 0; n < length; ++n) seq.samples[static_cast<std::size_t>(n)] = base[static_cast<std::size_t>((n + cyclic_shift) % length)];
  return seq;
}

int largest_prime_below(int n) {
  auto is_prime = [](int v) {
    if (v < 2) return false;
    for (int d = 2; d * d <= v; ++d)
      if (v % d == 0) return false;
    return true;
  };
  for (int v = n - 1; v >= 2; --v)
    if (is_prime(v)) return v;
  throw InvalidParameter(fmt::format("no prime below {}", n));
}

// ---------------------------------------------------------------------------
// Cells and specs

FddBand band_from_int(int b) {
  switch (b) {
    case 1: return FddBand::B1;
    case 3: return FddBand::B3;
    case 7: return FddBand::B7;
    case 8: return FddBand::B8;
    case 20: return FddBand::B20;
    default: throw InvalidParameter(fmt::format("unsupported FDD band {}", b));
  }
}

bool CellConfig::is_prach_subframe(std::uint32_t subframe) const {
  int sf = static_cast<int>(subframe % 10);
  return std::find(prach_subframes.begin(), prach_subframes.end(), sf) != prach_subframes.end();
}

UplinkMessageSpec UplinkMessageSpec::prach(int prb_offset, int preamble_index, std::uint16_t rnti) {
  UplinkMessageSpec s;
  s.type = MsgType::Prach;
  s.n_prb = kPrachPrbs;
  s.prb_offset = prb_offset;
  s.preamble_index = preamble_index;
  s.rnti = rnti;
  return s;
}

UplinkMessageSpec UplinkMessageSpec::pusch(int prb_offset, int n_prb, std::uint16_t rnti) {
  UplinkMessageSpec s;
  s.type = MsgType::Pusch;
  s.n_prb = n_prb;
  s.prb_offset = prb_offset;
  s.rs_symbols = {4, 11};
  s.rnti = rnti;
  return s;
}

UplinkMessageSpec UplinkMessageSpec::pucch(int edge_index, bool hopping, std::uint16_t rnti) {
  UplinkMessageSpec s;
  s.type = MsgType::Pucch;
  s.n_prb = 1;
  s.prb_offset = edge_index;
  s.rs_symbols = {3, 4, 5, 10, 11, 12};
  s.hopping = hopping;
  s.rnti = rnti;
  return s;
}

void validate(const UplinkMessageSpec& spec, const CellConfig& cell) {
  if (cell.n_prb_ul < kPrachPrbs) throw InvalidParameter(fmt::format("cell with {} PRBs is too narrow", cell.n_prb_ul));
  if (spec.duration_subframes != 1)
    throw InvalidParameter(fmt::format("{} lasting {} subframes is not supported; only 1-subframe messages are",
                                       to_string(spec.type), spec.duration_subframes));
  auto require_fit = [&](int first, int count) {
    if (first < 0 || count <= 0 || first + count > cell.n_prb_ul)
      throw InvalidAllocation(fmt::format("{} PRBs [{}, {}) exceed cell bandwidth of {} PRBs", to_string(spec.type),
                                          first, first + count, cell.n_prb_ul));
  };
  switch (spec.type) {
    case MsgType::Prach:
      if (spec.n_prb != kPrachPrbs) throw InvalidParameter("PRACH must span 6 PRBs");
      if (spec.preamble_index < 0 || spec.preamble_index >= kPrachPreambles)
        throw InvalidParameter(fmt::format("preamble index {} outside [0, 64)", spec.preamble_index));
      require_fit(spec.prb_offset, kPrachPrbs);
      break;
    case MsgType::Pusch:
      if (spec.rs_symbols != std::vector<int>{4, 11}) throw InvalidParameter("PUSCH reference symbols must be {4, 11}");
      if (spec.hopping) throw InvalidParameter("PUSCH hopping is not supported");
      require_fit(spec.prb_offset, spec.n_prb);
      break;
    case MsgType::Pucch:
      if (spec.n_prb != 1) throw InvalidParameter("PUCCH occupies exactly one PRB");
      if (spec.rs_symbols != std::vector<int>{3, 4, 5, 10, 11, 12})
        throw InvalidParameter("PUCCH reference symbols must be {3, 4, 5, 10, 11, 12}");
      if (spec.prb_offset >= cell.n_prb_ul / 2)
        throw InvalidAllocation(fmt::format("PUCCH edge index {} is not at the band edge", spec.prb_offset));
      require_fit(spec.prb_offset, 1);
      break;
  }
}

int prb_for_symbol(const UplinkMessageSpec& spec, int n_prb_ul, int symbol) {
  if (spec.type == MsgType::Pucch && spec.hopping && symbol >= kSymbolsPerSlot) return n_prb_ul - 1 - spec.prb_offset;
  return spec.prb_offset;
}

// ---------------------------------------------------------------------------
// Grids

SubframeGrid::SubframeGrid(int n_prb_ul, std::uint32_t subframe, double rate)
    : n_prb(n_prb_ul),
      subframe_index(subframe),
      sample_rate(rate),
      cells(static_cast<std::size_t>(kSymbolsPerSubframe * n_prb_ul * kSubcarriersPerPrb)) {}

namespace {

std::vector<cf64> prach_reference(const CellConfig& cell, int preamble_index) {
  auto zc = gen_zadoff_chu(kPrachLength, cell.prach_root, preamble_index * kPrachCyclicShiftStep);
  auto spectrum = dsp::fft(zc.samples);
  const double scale = 1.0 / std::sqrt(static_cast<double>(kPrachLength));
  for (auto& v : spectrum) v *= scale;
  return spectrum;
}

std::vector<cf64> dmrs_reference(const CellConfig& cell, int n_prb) {
  const int m = n_prb * kSubcarriersPerPrb;
  const int n_zc = largest_prime_below(m);
  const int root = static_cast<int>(cell.pci % static_cast<unsigned>(n_zc - 1)) + 1;
  auto zc = gen_zadoff_chu(n_zc, root, 0);
  std::vector<cf64> r(static_cast<std::size_t>(m));
  for (int n = 0; n < m; ++n) r[static_cast<std::size_t>(n)] = zc.samples[static_cast<std::size_t>(n % n_zc)];
  return r;
}

bool is_rs_symbol(const UplinkMessageSpec& spec, int symbol) {
  return std::find(spec.rs_symbols.begin(), spec.rs_symbols.end(), symbol) != spec.rs_symbols.end();
}

}  // namespace

std::vector<cf64> reference_sequence(const UplinkMessageSpec& spec, const CellConfig& cell) {
  // Sequences are recomputed for every message and port otherwise.
  thread_local std::map<std::tuple<int, int, int>, std::vector<cf64>> cache;
  const bool prach = spec.type == MsgType::Prach;
  const auto key = prach ? std::tuple{0, cell.prach_root, spec.preamble_index}
                         : std::tuple{1, static_cast<int>(cell.pci), spec.n_prb};
  auto it = cache.find(key);
  if (it == cache.end()) {
    if (cache.size() > 4096) cache.clear();
    it = cache.emplace(key, prach ? prach_reference(cell, spec.preamble_index) : dmrs_reference(cell, spec.n_prb)).first;
  }
  return it->second;
}

MessageGrid build_uplink_message(const UplinkMessageSpec& spec, std::uint64_t payload_seed, const CellConfig& cell,
                                 std::uint32_t subframe) {
  validate(spec, cell);
  auto ref = reference_sequence(spec, cell);
  if (spec.type == MsgType::Prach) {
    PrachGrid g;
    g.n_prb_ul = cell.n_prb_ul;
    g.prb_offset = spec.prb_offset;
    g.subframe_index = subframe;
    g.bins = std::move(ref);
    return g;
  }

  std::mt19937_64 rng(payload_seed);
  const double a = 1.0 / std::sqrt(2.0);
  auto qpsk = [&]() {
    auto bits = rng();
    return cf64((bits & 1) ? -a : a, (bits & 2) ? -a : a);
  };

  SubframeGrid g(cell.n_prb_ul, subframe);
  const int width = spec.n_prb * kSubcarriersPerPrb;
  for (int sym = 0; sym < kSymbolsPerSubframe; ++sym) {
    const int first = prb_for_symbol(spec, cell.n_prb_ul, sym) * kSubcarriersPerPrb;
    const bool rs = is_rs_symbol(spec, sym);
    for (int k = 0; k < width; ++k) g.at(sym, first + k) = rs ? ref[static_cast<std::size_t>(k)] : qpsk();
  }
  return g;
}

std::vector<RsBlock> reference_blocks(const MessageGrid& received, const UplinkMessageSpec& spec) {
  std::vector<RsBlock> blocks;
  if (const auto* p = std::get_if<PrachGrid>(&received)) {
    blocks.push_back({0, spec.prb_offset * kSubcarriersPerPrb, p->bins});
    return blocks;
  }
  const auto& g = std::get<SubframeGrid>(received);
  const int width = spec.n_prb * kSubcarriersPerPrb;
  for (int sym : spec.rs_symbols) {
    const int first = prb_for_symbol(spec, g.n_prb, sym) * kSubcarriersPerPrb;
    RsBlock b{sym, first, std::vector<cf64>(static_cast<std::size_t>(width))};
    for (int k = 0; k < width; ++k) b.received[static_cast<std::size_t>(k)] = g.at(sym, first + k);
    blocks.push_back(std::move(b));
  }
  return blocks;
}

std::vector<cf64> extract_reference(const MessageGrid& received, const UplinkMessageSpec& spec) {
  std::vector<cf64> out;
  for (auto& b : reference_blocks(received, spec)) out.insert(out.end(), b.received.begin(), b.received.end());
  return out;
}

std::vector<cf64> allocated_elements(const MessageGrid& received, const UplinkMessageSpec& spec) {
  if (const auto* p = std::get_if<PrachGrid>(&received)) return p->bins;
  const auto& g = std::get<SubframeGrid>(received);
  const int width = spec.n_prb * kSubcarriersPerPrb;
  std::vector<cf64> out;
  out.reserve(static_cast<std::size_t>(width * kSymbolsPerSubframe));
  for (int sym = 0; sym < kSymbolsPerSubframe; ++sym) {
    const int first = prb_for_symbol(spec, g.n_prb, sym) * kSubcarriersPerPrb;
    for (int k = 0; k < width; ++k) out.push_back(g.at(sym, first + k));
  }
  return out;
}

// ---------------------------------------------------------------------------
// OFDM

void check_fft_size(int fft_size) {
  static constexpr int kSizes[] = {128, 256, 512, 1024, 1536, 2048, 4096, 8192};
  if (std::find(std::begin(kSizes), std::end(kSizes), fft_size) == std::end(kSizes))
    throw InvalidParameter(fmt::format("unsupported FFT size {}", fft_size));
}

int fft_size_for_rate(double sample_rate) {
  const double n = sample_rate / kSubcarrierSpacingHz;
  const int fft = static_cast<int>(std::lround(n));
  if (std::abs(n - fft) > 1e-9) throw InvalidParameter(fmt::format("sample rate {} is not a multiple of 15 kHz", sample_rate));
  check_fft_size(fft);
  return fft;
}

int cp_length(int symbol, int fft_size) {
  return (symbol % kSymbolsPerSlot == 0 ? 160 : 144) * fft_size / 2048;
}

int symbol_start(int symbol, int fft_size) {
  int start = 0;
  for (int s = 0; s < symbol; ++s) start += cp_length(s, fft_size) + fft_size;
  return start;
}

int prach_cp_length(int fft_size) { return 3168 * fft_size / 2048; }

double prach_bin_frequency(int bin, int prb_offset, int n_prb_ul) {
  const int n_sc = n_prb_ul * kSubcarriersPerPrb;
  const int k = kPrachBinsPerSubcarrier * (prb_offset * kSubcarriersPerPrb - n_sc / 2) + kPrachFirstBin + bin;
  return k * kPrachSpacingHz;
}

namespace {

long prach_first_bin_index(int prb_offset, int n_prb_ul) {
  const int n_sc = n_prb_ul * kSubcarriersPerPrb;
  return static_cast<long>(kPrachBinsPerSubcarrier) * (prb_offset * kSubcarriersPerPrb - n_sc / 2) + kPrachFirstBin;
}

void require_bandwidth(int n_subcarriers, int fft_size) {
  check_fft_size(fft_size);
  if (n_subcarriers > fft_size)
    throw InvalidParameter(fmt::format("FFT size {} is smaller than the {} occupied subcarriers", fft_size, n_subcarriers));
}

}  // namespace

std::vector<cf64> ofdm_modulate(const SubframeGrid& grid, int fft_size) {
  const int n_sc = grid.n_subcarriers();
  require_bandwidth(n_sc, fft_size);
  for (const auto& c : grid.cells)
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) throw InvalidParameter("grid contains non-finite values");

  std::vector<cf64> out;
  out.reserve(static_cast<std::size_t>(samples_per_subframe(fft_size)));
  std::vector<cf64> freq(static_cast<std::size_t>(fft_size)), time(static_cast<std::size_t>(fft_size));
  for (int sym = 0; sym < kSymbolsPerSubframe; ++sym) {
    std::fill(freq.begin(), freq.end(), cf64{});
    for (int k = 0; k < n_sc; ++k) freq[dsp::bin_of(k - n_sc / 2, static_cast<std::size_t>(fft_size))] = grid.at(sym, k);
    dsp::ifft(freq, time);
    const int cp = cp_length(sym, fft_size);
    out.insert(out.end(), time.end() - cp, time.end());
    out.insert(out.end(), time.begin(), time.end());
  }
  return out;
}

std::vector<cf64> ofdm_modulate(const PrachGrid& grid, int fft_size) {
  require_bandwidth(grid.n_prb_ul * kSubcarriersPerPrb, fft_size);
  const auto m = static_cast<std::size_t>(prach_sequence_length(fft_size));
  std::vector<cf64> freq(m), seq(m);
  const long first = prach_first_bin_index(grid.prb_offset, grid.n_prb_ul);
  const double scale = 1.0 / std::sqrt(static_cast<double>(kPrachBinsPerSubcarrier));
  for (std::size_t j = 0; j < grid.bins.size(); ++j) freq[dsp::bin_of(first + static_cast<long>(j), m)] = grid.bins[j] * scale;
  dsp::ifft(freq, seq);

  const int cp = prach_cp_length(fft_size);
  std::vector<cf64> out(static_cast<std::size_t>(samples_per_subframe(fft_size)));
  std::copy(seq.end() - cp, seq.end(), out.begin());
  std::copy(seq.begin(), seq.end(), out.begin() + cp);
  return out;
}

IqStream modulate(const MessageGrid& grid, int fft_size) {
  IqStream s;
  s.sample_rate = sample_rate_for_fft(fft_size);
  std::visit(
      [&](const auto& g) {
        s.start_sample = static_cast<std::int64_t>(g.subframe_index) * samples_per_subframe(fft_size);
        s.samples = ofdm_modulate(g, fft_size);
      },
      grid);
  return s;
}

SubframeGrid ofdm_demodulate(std::span<const cf64> subframe, int n_prb, int fft_size) {
  const int n_sc = n_prb * kSubcarriersPerPrb;
  require_bandwidth(n_sc, fft_size);
  if (subframe.size() < static_cast<std::size_t>(samples_per_subframe(fft_size)))
    throw InvalidParameter("ofdm_demodulate: fewer samples than one subframe");
  SubframeGrid g(n_prb, 0, sample_rate_for_fft(fft_size));
  std::vector<cf64> freq(static_cast<std::size_t>(fft_size));
  const double inv = 1.0 / fft_size;
  for (int sym = 0; sym < kSymbolsPerSubframe; ++sym) {
    const auto start = static_cast<std::size_t>(symbol_start(sym, fft_size) + cp_length(sym, fft_size));
    dsp::fft(subframe.subspan(start, static_cast<std::size_t>(fft_size)), freq);
    for (int k = 0; k < n_sc; ++k) g.at(sym, k) = freq[dsp::bin_of(k - n_sc / 2, static_cast<std::size_t>(fft_size))] * inv;
  }
  return g;
}

PrachGrid prach_demodulate(std::span<const cf64> subframe, int prb_offset, int n_prb_ul, int fft_size) {
  require_bandwidth(n_prb_ul * kSubcarriersPerPrb, fft_size);
  if (subframe.size() < static_cast<std::size_t>(samples_per_subframe(fft_size)))
    throw InvalidParameter("prach_demodulate: fewer samples than one subframe");
  const auto m = static_cast<std::size_t>(prach_sequence_length(fft_size));
  std::vector<cf64> freq(m);
  dsp::fft(subframe.subspan(static_cast<std::size_t>(prach_cp_length(fft_size)), m), freq);

  PrachGrid g;
  g.n_prb_ul = n_prb_ul;
  g.prb_offset = prb_offset;
  g.sample_rate = sample_rate_for_fft(fft_size);
  g.bins.resize(kPrachLength);
  const long first = prach_first_bin_index(prb_offset, n_prb_ul);
  const double scale = std::sqrt(static_cast<double>(kPrachBinsPerSubcarrier)) / static_cast<double>(m);
  for (std::size_t j = 0; j < g.bins.size(); ++j) g.bins[j] = freq[dsp::bin_of(first + static_cast<long>(j), m)] * scale;
  return g;
}

}  // namespace ltag::phy
