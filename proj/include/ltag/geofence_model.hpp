// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ltag/common.hpp"

namespace ltag::gf {

// ---------------------------------------------------------------------------
// Dataset

/// One row per measured message. Columns of `values`/`mask` are samples.
/// push_back grows the matrices geometrically; call shrink_to_fit() before
/// using them directly.
struct Dataset {
  int n_features = 0;
  Eigen::MatrixXd values;  // n_features x N
  Eigen::MatrixXd mask;    // n_features x N, 1 = valid
  std::vector<MessageId> ids;
  std::vector<MsgType> types;
  std::vector<std::uint64_t> connection;
  std::vector<int> label;  // 1 = inside

  explicit Dataset(int features = 0) : n_features(features), values(features, 0), mask(features, 0) {}

  std::size_t size() const { return label.size(); }
  void reserve(std::size_t n);
  void push_back(std::span<const double> v, std::span<const std::uint8_t> m, const MessageId& id,
                 std::uint64_t connection_id, int inside);
  void shrink_to_fit();
  Dataset subset(std::span<const std::size_t> rows) const;
  /// Fraction of rows labelled inside.
  double inside_fraction() const;
};

/// CSV with a header line. Values are written with 17 significant digits so
/// a round trip is exact and reruns are byte-identical.
void save_dataset_csv(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset_csv(const std::filesystem::path& path);

/// Splits rows by connection id: about `fraction` of the connections go to
/// the second set. A connection is never split.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_connection(const Dataset& d, double fraction,
                                                                                  std::uint64_t seed);

// ---------------------------------------------------------------------------
// Per-message network

struct MlpConfig {
  int n_features = 0;
  int h1 = 64;
  int h2 = 32;
  double dropout = 0.2;
};

/// Network input width: normalized values, validity mask, one-hot type.
inline int input_dim(int n_features) { return 2 * n_features + kNumMsgTypes; }

/// Input normalization, dropout, two rectified dense layers and one sigmoid
/// output. Normalization statistics are computed over valid entries only and
/// masked entries are zeroed after normalization.
class Mlp {
public:
  Mlp() = default;
  Mlp(const MlpConfig& cfg, std::uint64_t seed);

  const MlpConfig& config() const { return cfg_; }
  int n_features() const { return cfg_.n_features; }

  /// Inference (running statistics, no dropout). Reentrant.
  double predict(std::span<const double> values, std::span<const double> mask, MsgType type) const;
  Eigen::VectorXd predict_batch(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask,
                                std::span<const MsgType> types) const;

  /// Mean binary cross-entropy of a batch. In training mode the batch's own
  /// statistics are used and, if `rng` is given, dropout is applied. When
  /// `grad` is non-null it receives d(loss)/d(parameters).
  double loss(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask, std::span<const MsgType> types,
              std::span<const int> labels, bool training, std::mt19937_64* rng, Eigen::VectorXd* grad) const;

  /// Flat parameter vector: gamma, beta, W1, b1, W2, b2, w3, b3.
  Eigen::VectorXd& parameters() { return theta_; }
  const Eigen::VectorXd& parameters() const { return theta_; }
  Eigen::VectorXd& running_mean() { return mean_; }
  Eigen::VectorXd& running_var() { return var_; }
  const Eigen::VectorXd& running_mean() const { return mean_; }
  const Eigen::VectorXd& running_var() const { return var_; }

  /// Sets the inference statistics to the masked mean/variance of `values`.
  void set_statistics(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask);

  bool all_finite() const;

private:
  struct View;
  View view() const;
  Eigen::MatrixXd build_input(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask,
                              std::span<const MsgType> types, const Eigen::VectorXd& mu, const Eigen::VectorXd& sd,
                              Eigen::MatrixXd* xhat) const;

  MlpConfig cfg_;
  Eigen::VectorXd theta_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd var_;
};

struct TrainOptions {
  int max_epochs = 200;
  int batch = 256;
  double learning_rate = 1e-3;
  int patience = 10;
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;
  /// Feature indices that belong to each receiver. With a non-zero drop
  /// probability, training rows randomly lose one receiver's features so the
  /// net learns to cope with silent receivers.
  std::vector<std::vector<int>> receiver_groups;
  double receiver_drop_probability = 0.0;
  /// A dropped row loses between 1 and this many receivers.
  int max_dropped_receivers = 1;
  bool verbose = false;
};

struct TrainReport {
  int epochs = 0;
  int best_epoch = 0;
  double best_validation_loss = 0.0;
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
};

/// Adam on binary cross-entropy with early stopping on validation loss; the
/// best parameters are restored at the end. Throws TrainingError when the
/// data has a single class.
Mlp train_mlp(const Dataset& data, const MlpConfig& cfg, const TrainOptions& opt, TrainReport* report = nullptr);

// ---------------------------------------------------------------------------
// Per-connection ensemble

/// Per-message scores of one connection.
struct ConnectionScores {
  std::optional<double> prach;
  std::optional<double> pusch;
  std::vector<double> pucch;

  void add(MsgType type, double score);
  /// Mean score per type with 0.5 for missing types.
  std::array<double, 3> inputs() const;
  bool empty() const { return !prach && !pusch && pucch.empty(); }
};

/// Logistic regression on type scores centred at 0.5, so a connection with
/// no information fuses to exactly sigmoid(intercept).
struct Ensemble {
  std::array<double, 3> weights{1.0, 1.0, 1.0};  // PRACH, PUSCH, PUCCH
  double intercept = 0.0;

  double fuse(const ConnectionScores& s) const;
  double fuse(const std::array<double, 3>& inputs) const;
};

struct EnsembleOptions {
  int iterations = 5000;
  double learning_rate = 0.5;
  double l2 = 1e-4;
};

/// Gradient descent on the logistic loss, weights constrained >= 0 so the
/// fused probability is monotone in every score. Throws TrainingError for a
/// single class or inputs that are all identical.
Ensemble train_ensemble(std::span<const ConnectionScores> scores, std::span<const int> labels,
                        const EnsembleOptions& opt = {});

// ---------------------------------------------------------------------------
// Model file

struct Model {
  Mlp mlp;
  Ensemble ensemble;
};

/// Network plus ensemble. The ensemble is fitted on the network's scores for
/// the validation connections held out from network training.
Model train_model(const Dataset& data, const MlpConfig& cfg, const TrainOptions& opt, const EnsembleOptions& eopt = {},
                  TrainReport* report = nullptr);

inline constexpr std::array<char, 4> kModelMagic{'L', 'T', 'G', 'F'};
inline constexpr std::uint16_t kModelVersion = 1;

/// Layout: magic "LTGF", u16 version, u32 n_features, u32 input dim, u32 h1,
/// u32 h2, f64 dropout, f64 x (parameters, running mean, running variance),
/// f64 x 3 ensemble weights, f64 intercept. Little-endian throughout.
void save_model(const Model& m, const std::filesystem::path& path);
/// Throws FormatError for bad magic, version or a truncated file, and
/// ConfigError when `expected_features` is given and does not match.
Model load_model(const std::filesystem::path& path, std::optional<int> expected_features = std::nullopt);

// ---------------------------------------------------------------------------
// Metrics

struct Confusion {
  std::uint64_t tp = 0;  // inside classified inside
  std::uint64_t fn = 0;  // inside classified outside
  std::uint64_t fp = 0;  // outside classified inside
  std::uint64_t tn = 0;

  void add(int label, bool predicted_inside);
  std::uint64_t total() const { return tp + fn + fp + tn; }
  double accuracy() const;
  /// Outside transmissions classified inside, over all outside ones.
  double fpr() const;
  /// Inside transmissions classified outside, over all inside ones.
  double fnr() const;
};

struct ConnectionDecision {
  std::uint64_t connection = 0;
  int label = 0;
  ConnectionScores scores;
  double fused = 0.5;
};

struct Metrics {
  Confusion messages;
  std::array<Confusion, 3> per_type;
  Confusion connections;
  std::vector<ConnectionDecision> decisions;
};

/// Scores every row, groups rows by connection, fuses, and counts.
Metrics evaluate(const Model& model, const Dataset& data);
std::vector<ConnectionDecision> group_connections(const Dataset& data, const Eigen::VectorXd& scores);

// ---------------------------------------------------------------------------
// Hyperparameter search

struct GridPoint {
  MlpConfig config;
  double learning_rate = 1e-3;
  double validation_loss = 0.0;
  double validation_accuracy = 0.0;
};

/// Trains one net per grid point on a connection-level split and reports
/// validation loss/accuracy. The best point has the lowest loss.
std::vector<GridPoint> grid_search(const Dataset& data, std::span<const int> h1s, std::span<const int> h2s,
                                   std::span<const double> dropouts, std::span<const double> learning_rates,
                                   const TrainOptions& base);

}  // namespace ltag::gf
