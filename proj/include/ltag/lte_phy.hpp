// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "ltag/common.hpp"

namespace ltag::phy {

inline constexpr int kSymbolsPerSubframe = 14;
inline constexpr int kSymbolsPerSlot = 7;
inline constexpr int kSubcarriersPerPrb = 12;
inline constexpr double kSubcarrierSpacingHz = 15000.0;

inline constexpr int kPrachLength = 839;
inline constexpr int kPrachPreambles = 64;
inline constexpr int kPrachCyclicShiftStep = 13;  // 64 * 13 <= 839
inline constexpr int kPrachPrbs = 6;
inline constexpr int kPrachBinsPerSubcarrier = 12;  // 15 kHz / 1.25 kHz
inline constexpr int kPrachFirstBin = 7;             // guard bins below the sequence
inline constexpr double kPrachSpacingHz = 1250.0;

// ---------------------------------------------------------------------------
// Zadoff-Chu sequences

struct ZadoffChuSeq {
  int length = 0;
  int root = 0;
  int cyclic_shift = 0;
  std::vector<cf64> samples;
};

/// x[n] = exp(-j pi root n (n+1) / length), cyclically advanced by
/// `cyclic_shift`. Requires odd length and gcd(root, length) == 1.
ZadoffChuSeq gen_zadoff_chu(int length, int root, int cyclic_shift = 0);

/// Largest prime strictly below n (n >= 3).
int largest_prime_below(int n);

// ---------------------------------------------------------------------------
// Cells and allocations

enum class FddBand : std::uint8_t { B1 = 1, B3 = 3, B7 = 7, B8 = 8, B20 = 20 };

FddBand band_from_int(int b);

struct CellConfig {
  std::uint32_t earfcn = 0;
  std::uint16_t pci = 0;
  int n_prb_ul = 25;
  std::vector<int> prach_subframes{1, 6};  // subframe index modulo 10
  int prach_root = 1;
  int prach_prb_offset = 2;
  FddBand band = FddBand::B3;
  /// Center of this cell's uplink relative to the center of the capture band.
  double ul_offset_hz = 0.0;

  int n_subcarriers() const { return n_prb_ul * kSubcarriersPerPrb; }
  bool is_prach_subframe(std::uint32_t subframe) const;
};

struct UplinkMessageSpec {
  MsgType type = MsgType::Pusch;
  int n_prb = 1;
  int prb_offset = 0;
  std::vector<int> rs_symbols;
  int preamble_index = 0;
  bool hopping = false;
  std::uint16_t rnti = 0;
  int duration_subframes = 1;

  static UplinkMessageSpec prach(int prb_offset, int preamble_index, std::uint16_t rnti = 0);
  static UplinkMessageSpec pusch(int prb_offset, int n_prb, std::uint16_t rnti = 0);
  /// `edge_index` counts PRBs inward from the lower edge (and, when hopping,
  /// from the upper edge for the second slot).
  static UplinkMessageSpec pucch(int edge_index, bool hopping, std::uint16_t rnti = 0);
};

/// Throws InvalidParameter for malformed specs and InvalidAllocation when the
/// allocation does not fit the cell.
void validate(const UplinkMessageSpec& spec, const CellConfig& cell);

/// First PRB occupied by `spec` in OFDM symbol `symbol` (PUCCH hops slots).
int prb_for_symbol(const UplinkMessageSpec& spec, int n_prb_ul, int symbol);

// ---------------------------------------------------------------------------
// Grids

/// One subframe of the cell's uplink resource grid, 14 symbols by
/// 12 * n_prb subcarriers, stored symbol-major.
struct SubframeGrid {
  int n_prb = 0;
  std::uint32_t subframe_index = 0;
  double sample_rate = 30.72e6;
  std::vector<cf64> cells;

  SubframeGrid() = default;
  SubframeGrid(int n_prb_ul, std::uint32_t subframe, double rate = 30.72e6);

  int n_symbols() const { return kSymbolsPerSubframe; }
  int n_subcarriers() const { return n_prb * kSubcarriersPerPrb; }
  cf64& at(int symbol, int subcarrier) { return cells[static_cast<std::size_t>(symbol * n_subcarriers() + subcarrier)]; }
  const cf64& at(int symbol, int subcarrier) const {
    return cells[static_cast<std::size_t>(symbol * n_subcarriers() + subcarrier)];
  }
};

/// PRACH preamble in the frequency domain: 839 bins at 1.25 kHz. Bin
/// amplitudes are expressed per 15 kHz of bandwidth, so a preamble and a PUSCH
/// at the same power spectral density carry the same per-bin magnitude.
struct PrachGrid {
  int n_prb_ul = 0;
  int prb_offset = 0;
  std::uint32_t subframe_index = 0;
  double sample_rate = 30.72e6;
  std::vector<cf64> bins;
};

using MessageGrid = std::variant<SubframeGrid, PrachGrid>;

/// Reference signals at the spec's symbols, seeded QPSK elsewhere in the
/// allocation, zero outside it. Unit power per resource element.
MessageGrid build_uplink_message(const UplinkMessageSpec& spec, std::uint64_t payload_seed,
                                 const CellConfig& cell, std::uint32_t subframe = 0);

/// Known reference sequence for one RS symbol (or the whole preamble).
std::vector<cf64> reference_sequence(const UplinkMessageSpec& spec, const CellConfig& cell);

/// Received RS resource elements, concatenated in symbol order.
std::vector<cf64> extract_reference(const MessageGrid& received, const UplinkMessageSpec& spec);

/// RS resource elements of one OFDM symbol (or the whole preamble) together
/// with the frequency position they were taken from.
struct RsBlock {
  int symbol = 0;
  int first_subcarrier = 0;
  std::vector<cf64> received;
};

std::vector<RsBlock> reference_blocks(const MessageGrid& received, const UplinkMessageSpec& spec);

/// Every allocated resource element (reference and data).
std::vector<cf64> allocated_elements(const MessageGrid& received, const UplinkMessageSpec& spec);

// ---------------------------------------------------------------------------
// OFDM

/// Throws unless fft_size is an LTE sampling configuration.
void check_fft_size(int fft_size);
inline double sample_rate_for_fft(int fft_size) { return kSubcarrierSpacingHz * fft_size; }
inline int samples_per_subframe(int fft_size) { return 15 * fft_size; }
int fft_size_for_rate(double sample_rate);
int cp_length(int symbol, int fft_size);
/// Offset of the first sample of `symbol` (including its CP) in the subframe.
int symbol_start(int symbol, int fft_size);

int prach_cp_length(int fft_size);
inline int prach_sequence_length(int fft_size) { return kPrachBinsPerSubcarrier * fft_size; }

/// Frequency of subcarrier k of an n_subcarriers grid relative to the cell
/// center. There is no DC gap and no half-subcarrier shift.
inline double subcarrier_frequency(int k, int n_subcarriers) {
  return (k - n_subcarriers / 2) * kSubcarrierSpacingHz;
}
double prach_bin_frequency(int bin, int prb_offset, int n_prb_ul);

/// Per-symbol inverse transform with cyclic prefix. Output has exactly one
/// subframe of samples at 15 kHz * fft_size.
std::vector<cf64> ofdm_modulate(const SubframeGrid& grid, int fft_size);
std::vector<cf64> ofdm_modulate(const PrachGrid& grid, int fft_size);
IqStream modulate(const MessageGrid& grid, int fft_size);

/// Inverse of ofdm_modulate. `subframe` holds one subframe starting at the
/// first CP sample.
SubframeGrid ofdm_demodulate(std::span<const cf64> subframe, int n_prb, int fft_size);
PrachGrid prach_demodulate(std::span<const cf64> subframe, int prb_offset, int n_prb_ul, int fft_size);

}  // namespace ltag::phy
