// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltag/geofence_model.hpp"
#include "ltag/lte_phy.hpp"
#include "ltag/ul_receiver.hpp"

namespace ltag::sweep {

/// Link-level experiments run one message through the time-domain path:
/// OFDM modulation at `fft_size`, gain, fractional delay, optional co-channel
/// interferer, AWGN, demodulation, feature extraction. SNR is per resource
/// element and the transmitted power per resource element is 0 dB.
struct LinkOptions {
  int trials = 100;
  std::uint64_t seed = 1;
  int fft_size = 512;
  /// Propagation delay drawn uniformly from [0, max_delay_s] per trial.
  double max_delay_s = 1e-6;
  ul::FeatureOptions features;
};

/// Default cell of the link experiments (25 PRB).
phy::CellConfig link_cell();

struct Interferer {
  bool enabled = false;
  /// Signal-to-interference ratio per resource element.
  double sir_db = 0.0;
  int prb_offset = 3;
  int n_prb = 3;
};

/// Features of one received message (one trial).
PortFeatures link_trial(const phy::UplinkMessageSpec& spec, const phy::CellConfig& cell, double snr_db,
                        double delay_s, const Interferer& interferer, std::uint64_t seed, const LinkOptions& o);

// ---------------------------------------------------------------------------
// Power estimate error vs SNR

struct PowerPoint {
  double snr_db = 0.0;
  bool interferer = false;
  double corr_mean_err = 0.0;
  double corr_mean_abs_err = 0.0;
  double corr_std = 0.0;
  double rms2_mean_err = 0.0;
  double rms2_mean_abs_err = 0.0;
  int trials = 0;
};

/// PRACH, every SNR point with and without an interferer.
std::vector<PowerPoint> power_sweep(const LinkOptions& o, const std::vector<double>& snrs_db,
                                    const Interferer& interferer = {true, 0.0, 3, 3});

// ---------------------------------------------------------------------------
// Estimate spread per message type at equal transmit power

struct MsgTypePoint {
  std::string label;
  phy::UplinkMessageSpec spec;
  double mean_err = 0.0;
  double std_err = 0.0;
  int trials = 0;
};

/// PRACH, PUSCH with 6 PRB, PUCCH, PUSCH with 1 PRB, in that order.
std::vector<phy::UplinkMessageSpec> msgtype_specs();
std::vector<MsgTypePoint> msgtype_sweep(const LinkOptions& o, double snr_db);
/// Fraction of `seeds` seeds for which the standard deviations are strictly
/// increasing in msgtype_specs() order.
double msgtype_ordering_fraction(const LinkOptions& o, double snr_db, int seeds);

// ---------------------------------------------------------------------------
// SNR estimators

struct SnrPoint {
  double snr_db = 0.0;
  double p2a_mean = 0.0;
  double p2a_mean_abs_err = 0.0;
  double smoothed_mean = 0.0;
  double smoothed_mean_abs_err = 0.0;
  int trials = 0;
};

std::vector<SnrPoint> snr_sweep(const LinkOptions& o, const std::vector<double>& snrs_db);

/// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// ---------------------------------------------------------------------------
// Timing offset

struct DelayPoint {
  std::string label;
  double delay_s = 0.0;
  double mean_reference = 0.0;  // corr-peak power without delay
  double mean_delayed = 0.0;
  double change_db = 0.0;
  int trials = 0;
};

/// Corr-peak power with and without `delay_s` for every message type, at a
/// high SNR so the change reflects the delay rather than noise.
std::vector<DelayPoint> delay_test(const LinkOptions& o, double delay_s, double snr_db = 20.0);

// ---------------------------------------------------------------------------
// Two-port direction finding

struct AoaPoint {
  double angle_deg = 0.0;  // UE bearing relative to port 0 boresight
  double mean_diff_db = 0.0;
  double std_diff_db = 0.0;
  int trials = 0;
};

struct AoaOptions {
  int trials = 100;
  std::uint64_t seed = 1;
  double distance_m = 30.0;
  double front_to_back_db = 25.0;
  ul::FeatureOptions features;
};

/// Line of sight, no walls or shadowing: corr-peak port 0 minus port 1.
std::vector<AoaPoint> aoa_sweep(const AoaOptions& o, const std::vector<double>& angles_deg);

struct AoaSeparation {
  std::vector<double> inside;   // port 0 (inside-facing) minus port 1, dB
  std::vector<double> outside;
  double threshold_db = 0.0;
  /// Fraction of all samples on the wrong side of the threshold.
  double overlap = 0.0;
};

/// Receiver mounted in a wall with one port on each side; UEs on either side
/// at random positions. Shadowing and per-port fading stay on.
AoaSeparation aoa_separation(const AoaOptions& o, double wall_db = 10.0, double port_offset_m = 0.5);

// ---------------------------------------------------------------------------
// Receiver dropout

struct DropoutPoint {
  int removed = 0;
  int subsets = 0;
  double message_accuracy = 0.0;
  double connection_accuracy = 0.0;
};

/// Receiver count implied by a relative-feature width (4R^2 - R).
int receivers_for_features(int n_features);

/// Masks every subset of `removed` receivers (up to `max_subsets` of them,
/// chosen with `seed`) and averages the accuracies.
std::vector<DropoutPoint> dropout_sweep(const gf::Model& model, const gf::Dataset& test, int max_subsets = 20,
                                        std::uint64_t seed = 1);

// ---------------------------------------------------------------------------
// CSV

std::string to_csv(const std::vector<PowerPoint>& v);
std::string to_csv(const std::vector<MsgTypePoint>& v);
std::string to_csv(const std::vector<SnrPoint>& v);
std::string to_csv(const std::vector<DelayPoint>& v);
std::string to_csv(const std::vector<AoaPoint>& v);
std::string to_csv(const AoaSeparation& v);
std::string to_csv(const std::vector<DropoutPoint>& v);

}  // namespace ltag::sweep
