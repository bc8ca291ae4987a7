// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/channelizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include <fmt/format.h>

#include "ltag/fft.hpp"

namespace ltag::dsp {

std::vector<double> kaiser_lowpass(double sample_rate, double cutoff_hz, double transition_hz, double stopband_db) {
  if (!(cutoff_hz > 0.0) || !(transition_hz > 0.0) || !(sample_rate > 0.0)) {
    throw InvalidParameter("kaiser_lowpass: frequencies must be positive");
  }
  const double a = stopband_db;
  double beta = 0.0;
  if (a > 50.0) {
    beta = 0.1102 * (a - 8.7);
  } else if (a >= 21.0) {
    beta = 0.5842 * std::pow(a - 21.0, 0.4) + 0.07886 * (a - 21.0);
  }
  const double dw = 2.0 * kPi * transition_hz / sample_rate;
  auto n = static_cast<std::size_t>(std::ceil((a - 8.0) / (2.285 * dw))) + 1;
  if (n % 2 == 0) ++n;
  const double fc = cutoff_hz / sample_rate;
  const double mid = (static_cast<double>(n) - 1.0) / 2.0;
  const double i0b = std::cyl_bessel_i(0.0, beta);
  std::vector<double> h(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) - mid;
    const double sinc = t == 0.0 ? 2.0 * fc : std::sin(2.0 * kPi * fc * t) / (kPi * t);
    const double r = mid > 0 ? t / mid : 0.0;
    const double w = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
    h[i] = sinc * w;
    sum += h[i];
  }
  for (auto& v : h) v /= sum;
  return h;
}

Channelizer::Channelizer(double sample_rate, std::vector<ChannelSpec> channels, ChannelizerOptions options,
                         std::int64_t start_sample)
    : rate_(sample_rate), channels_(std::move(channels)), block_start_(start_sample), next_in_(start_sample) {
  if (!(rate_ > 0.0)) throw InvalidParameter("channelizer: sample rate must be positive");
  if (channels_.empty()) throw InvalidParameter("channelizer: no channels");
  if (!std::has_single_bit(options.fft_size)) throw InvalidParameter("channelizer: FFT size must be a power of two");

  std::vector<std::vector<double>> protos;
  for (const auto& c : channels_) {
    if (!(c.bandwidth_hz > 0.0)) throw InvalidParameter("channelizer: bandwidth must be positive");
    const double half = std::min(c.bandwidth_hz, rate_) / 2.0;
    if (std::abs(c.center_offset_hz) + half > rate_ / 2.0 + 1e-9) {
      throw InvalidParameter(fmt::format("channel at {} Hz with {} Hz bandwidth leaves the Nyquist zone",
                                         c.center_offset_hz, c.bandwidth_hz));
    }
    Chan ch;
    ch.spec = c;
    ch.decim = std::max(1, static_cast<int>(std::floor(rate_ / c.bandwidth_hz + 1e-9)));
    if (c.bandwidth_hz >= rate_) {
      protos.push_back({1.0});
    } else {
      protos.push_back(kaiser_lowpass(rate_, c.bandwidth_hz / 2.0, options.transition_fraction * c.bandwidth_hz,
                                      options.stopband_db));
    }
    ch.n_taps = protos.back().size();
    chans_.push_back(std::move(ch));
  }

  std::size_t longest = 1;
  for (const auto& p : protos) longest = std::max(longest, p.size());
  overlap_ = longest - 1;
  fft_ = options.fft_size;
  while (fft_ < 4 * overlap_) fft_ *= 2;
  step_ = fft_ - overlap_;

  for (std::size_t c = 0; c < chans_.size(); ++c) {
    std::vector<cf64> taps(fft_);
    const double f = chans_[c].spec.center_offset_hz;
    for (std::size_t m = 0; m < protos[c].size(); ++m) {
      taps[m] = protos[c][m] * std::polar(1.0, 2.0 * kPi * f * static_cast<double>(m) / rate_);
    }
    chans_[c].response = fft(taps);
    for (auto& v : chans_[c].response) v /= static_cast<double>(fft_);
  }
  block_.assign(fft_, cf64{});
  fill_ = overlap_;
  spec_buf_.resize(fft_);
  time_buf_.resize(fft_);
}

std::int64_t Channelizer::first_output_index(std::size_t c) const {
  const std::int64_t d = chans_[c].decim;
  const std::int64_t s = block_start_ - static_cast<std::int64_t>(fill_ - overlap_);
  // ceil(s / d) for any sign
  return s >= 0 ? (s + d - 1) / d : -((-s) / d);
}

void Channelizer::process_block(std::vector<std::vector<cf64>>& out, std::int64_t limit) {
  fft(block_, spec_buf_);
  for (std::size_t c = 0; c < chans_.size(); ++c) {
    const auto& ch = chans_[c];
    std::vector<cf64> prod(fft_);
    for (std::size_t k = 0; k < fft_; ++k) prod[k] = spec_buf_[k] * ch.response[k];
    ifft(prod, time_buf_);
    const std::int64_t d = ch.decim;
    std::int64_t n = block_start_;
    const std::int64_t r = ((n % d) + d) % d;
    if (r != 0) n += d - r;
    const std::int64_t end = std::min(limit, block_start_ + static_cast<std::int64_t>(step_));
    for (; n < end; n += d) {
      const auto i = static_cast<std::size_t>(n - block_start_) + overlap_;
      out[c].push_back(time_buf_[i] * phasor(-ch.spec.center_offset_hz, rate_, n));
    }
  }
  std::copy(block_.end() - static_cast<std::ptrdiff_t>(overlap_), block_.end(), block_.begin());
  block_start_ += static_cast<std::int64_t>(step_);
  fill_ = overlap_;
}

void Channelizer::push(std::span<const cf64> in, std::vector<std::vector<cf64>>& out) {
  if (flushed_) throw InvalidParameter("channelizer: push after flush");
  out.resize(chans_.size());
  std::size_t pos = 0;
  while (pos < in.size()) {
    const std::size_t take = std::min(in.size() - pos, fft_ - fill_);
    std::copy(in.begin() + static_cast<std::ptrdiff_t>(pos), in.begin() + static_cast<std::ptrdiff_t>(pos + take),
              block_.begin() + static_cast<std::ptrdiff_t>(fill_));
    fill_ += take;
    pos += take;
    next_in_ += static_cast<std::int64_t>(take);
    if (fill_ == fft_) process_block(out, next_in_);
  }
}

void Channelizer::flush(std::vector<std::vector<cf64>>& out) {
  if (flushed_) return;
  out.resize(chans_.size());
  if (fill_ > overlap_) {
    std::fill(block_.begin() + static_cast<std::ptrdiff_t>(fill_), block_.end(), cf64{});
    process_block(out, next_in_);
  }
  flushed_ = true;
}

std::vector<IqStream> channelize(const IqStream& wideband, const std::vector<ChannelSpec>& channels,
                                 const ChannelizerOptions& options) {
  Channelizer ch(wideband.sample_rate, channels, options, wideband.start_sample);
  std::vector<IqStream> res(channels.size());
  for (std::size_t c = 0; c < channels.size(); ++c) {
    res[c].sample_rate = ch.output_rate(c);
    res[c].start_sample = ch.first_output_index(c);
  }
  std::vector<std::vector<cf64>> out(channels.size());
  ch.push(wideband.samples, out);
  ch.flush(out);
  for (std::size_t c = 0; c < channels.size(); ++c) res[c].samples = std::move(out[c]);
  return res;
}

}  // namespace ltag::dsp
