// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ltag/common.hpp"

namespace ltag::dsp {

struct ChannelSpec {
  double center_offset_hz = 0.0;
  double bandwidth_hz = 0.0;
};

struct ChannelizerOptions {
  /// Minimum overlap-save FFT length (power of two). Grown automatically so
  /// the filter overlap never exceeds a quarter of the block.
  std::size_t fft_size = 8192;
  double stopband_db = 66.0;
  double transition_fraction = 0.1;
};

/// Kaiser-windowed sinc low-pass, odd length, unit DC gain. `cutoff_hz` is the
/// -6 dB point, `transition_hz` the full transition width.
std::vector<double> kaiser_lowpass(double sample_rate, double cutoff_hz, double transition_hz, double stopband_db);

/// Overlap-save channelizer: one forward FFT per block is shared by all
/// channels; each channel multiplies by its frequency-shifted prototype,
/// transforms back, mixes to baseband and decimates by floor(fs / bandwidth).
///
/// Output sample j of channel c corresponds to the absolute input index
/// j * D_c (filters are causal, so the group delay is (taps - 1) / 2 input
/// samples). Any split of the input into push() calls yields identical output.
class Channelizer {
public:
  Channelizer(double sample_rate, std::vector<ChannelSpec> channels, ChannelizerOptions options = {},
              std::int64_t start_sample = 0);

  /// Appends newly available output samples to out[c].
  void push(std::span<const cf64> in, std::vector<std::vector<cf64>>& out);
  /// Drains the filter so every input sample has its output. No further
  /// pushes are accepted afterwards.
  void flush(std::vector<std::vector<cf64>>& out);

  std::size_t n_channels() const { return channels_.size(); }
  int decimation(std::size_t c) const { return chans_[c].decim; }
  double output_rate(std::size_t c) const { return rate_ / chans_[c].decim; }
  std::size_t taps(std::size_t c) const { return chans_[c].n_taps; }
  double group_delay(std::size_t c) const { return (static_cast<double>(chans_[c].n_taps) - 1.0) / 2.0; }
  std::size_t fft_size() const { return fft_; }
  /// First absolute output index (in units of the decimated rate).
  std::int64_t first_output_index(std::size_t c) const;

private:
  struct Chan {
    ChannelSpec spec;
    int decim = 1;
    std::size_t n_taps = 1;
    std::vector<cf64> response;  // FFT of the shifted taps
  };

  void process_block(std::vector<std::vector<cf64>>& out, std::int64_t limit);

  double rate_;
  std::vector<ChannelSpec> channels_;
  std::vector<Chan> chans_;
  std::size_t fft_ = 0;
  std::size_t overlap_ = 0;  // longest filter - 1
  std::size_t step_ = 0;
  std::vector<cf64> block_;
  std::size_t fill_ = 0;
  std::int64_t block_start_ = 0;  // absolute index of block_[overlap_]
  std::int64_t next_in_ = 0;
  bool flushed_ = false;
  std::vector<cf64> spec_buf_;
  std::vector<cf64> time_buf_;
};

/// One-shot convenience wrapper around Channelizer.
std::vector<IqStream> channelize(const IqStream& wideband, const std::vector<ChannelSpec>& channels,
                                 const ChannelizerOptions& options = {});

}  // namespace ltag::dsp
