// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/fft.hpp"

#include <cmath>

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

namespace ltag::dsp {
namespace {

struct PlanCache {
  std::mutex mutex;
  std::map<std::tuple<std::size_t, int, bool>, fftw_plan> plans;

  ~PlanCache() {
    for (auto& [key, plan] : plans) fftw_destroy_plan(plan);
  }

  fftw_plan get(std::size_t n, int sign, bool in_place) {
    std::lock_guard lock(mutex);
    auto key = std::make_tuple(n, sign, in_place);
    if (auto it = plans.find(key); it != plans.end()) return it->second;
    auto* a = fftw_alloc_complex(n);
    auto* b = in_place ? a : fftw_alloc_complex(n);
    fftw_plan p = fftw_plan_dft_1d(static_cast<int>(n), a, b, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(a);
    if (!in_place) fftw_free(b);
    if (p == nullptr) throw Error("fftw: failed to create plan");
    plans.emplace(key, p);
    return p;
  }
};

PlanCache& cache() {
  static PlanCache c;
  return c;
}

void run(std::span<const cf64> in, std::span<cf64> out, int sign) {
  if (in.size() != out.size()) throw InvalidParameter("fft: input and output sizes differ");
  if (in.empty()) return;
  bool in_place = static_cast<const void*>(in.data()) == static_cast<const void*>(out.data());
  fftw_plan p = cache().get(in.size(), sign, in_place);
  // FFTW never writes to the input of an out-of-place complex DFT.
  auto* src = reinterpret_cast<fftw_complex*>(const_cast<cf64*>(in.data()));
  fftw_execute_dft(p, src, reinterpret_cast<fftw_complex*>(out.data()));
}

}  // namespace

void fft(std::span<const cf64> in, std::span<cf64> out) { run(in, out, FFTW_FORWARD); }
void ifft(std::span<const cf64> in, std::span<cf64> out) { run(in, out, FFTW_BACKWARD); }

std::vector<cf64> fft(std::span<const cf64> in) {
  std::vector<cf64> out(in.size());
  fft(in, out);
  return out;
}

std::vector<cf64> ifft(std::span<const cf64> in) {
  std::vector<cf64> out(in.size());
  ifft(in, out);
  return out;
}

std::size_t good_fft_size(std::size_t n) {
  for (std::size_t m = std::max<std::size_t>(n, 1);; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2, 3, 5})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

cf64 phasor(double freq_hz, double sample_rate, std::int64_t n) {
  const long double cycles = static_cast<long double>(n) * static_cast<long double>(freq_hz) /
                             static_cast<long double>(sample_rate);
  const long double frac = cycles - std::floor(cycles);
  const double ang = static_cast<double>(2.0L * static_cast<long double>(kPi) * frac);
  return {std::cos(ang), std::sin(ang)};
}

}  // namespace ltag::dsp
