// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ltag/common.hpp"

namespace ltag::dsp {

// Thin wrappers over FFTW. Transforms are unnormalized in both directions:
//   forward:  X[k] = sum_n x[n] exp(-j 2 pi k n / N)
//   backward: x[n] = sum_k X[k] exp(+j 2 pi k n / N)
// Plans are cached per (size, direction, in-place) and are safe to execute
// from several threads at once.

void fft(std::span<const cf64> in, std::span<cf64> out);
void ifft(std::span<const cf64> in, std::span<cf64> out);

std::vector<cf64> fft(std::span<const cf64> in);
std::vector<cf64> ifft(std::span<const cf64> in);

/// Maps a signed frequency index to an FFT bin in [0, n).
inline std::size_t bin_of(long k, std::size_t n) {
  long m = k % static_cast<long>(n);
  return static_cast<std::size_t>(m < 0 ? m + static_cast<long>(n) : m);
}

/// Smallest size >= n whose only prime factors are 2, 3 and 5.
std::size_t good_fft_size(std::size_t n);

/// exp(j 2 pi f n / fs) for an absolute sample index n. The phase is reduced
/// modulo one cycle in extended precision so it stays exact for long runs.
cf64 phasor(double freq_hz, double sample_rate, std::int64_t n);

}  // namespace ltag::dsp
