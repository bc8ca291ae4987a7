// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/geofence_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace ltag::gf {

namespace {

constexpr double kNormEps = 1e-5;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Numerically stable binary cross-entropy on a logit.
double bce_logit(double logit, int y) {
  return std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit)));
}

void masked_stats(const Eigen::MatrixXd& v, const Eigen::MatrixXd& m, Eigen::VectorXd& mu, Eigen::VectorXd& sd) {
  const auto F = v.rows();
  mu.setZero(F);
  sd.setOnes(F);
  const Eigen::VectorXd n = m.rowwise().sum();
  const Eigen::VectorXd s1 = v.cwiseProduct(m).rowwise().sum();
  for (Eigen::Index j = 0; j < F; ++j) {
    if (n(j) <= 0) continue;
    mu(j) = s1(j) / n(j);
  }
  const Eigen::MatrixXd c = (v.colwise() - mu).cwiseProduct(m);
  const Eigen::VectorXd s2 = c.cwiseProduct(c).rowwise().sum();
  for (Eigen::Index j = 0; j < F; ++j) {
    const double var = n(j) > 0 ? s2(j) / n(j) : 1.0;
    sd(j) = std::sqrt(var + kNormEps);
  }
}

std::vector<MsgType> gather(std::span<const MsgType> t, std::span<const std::size_t> idx) {
  std::vector<MsgType> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = t[idx[i]];
  return out;
}

std::vector<int> gather(std::span<const int> t, std::span<const std::size_t> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = t[idx[i]];
  return out;
}

Eigen::MatrixXd gather_cols(const Eigen::MatrixXd& a, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(a.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = a.col(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset

void Dataset::reserve(std::size_t n) {
  ids.reserve(n);
  types.reserve(n);
  connection.reserve(n);
  label.reserve(n);
}

void Dataset::push_back(std::span<const double> v, std::span<const std::uint8_t> m, const MessageId& id,
                        std::uint64_t connection_id, int inside) {
  if (static_cast<int>(v.size()) != n_features || static_cast<int>(m.size()) != n_features) {
    throw InvalidParameter(fmt::format("row has {} values / {} mask bits, dataset has {} features", v.size(),
                                       m.size(), n_features));
  }
  const auto n = static_cast<Eigen::Index>(size());
  if (values.cols() <= n) {
    const Eigen::Index cap = std::max<Eigen::Index>(64, 2 * values.cols());
    values.conservativeResize(n_features, cap);
    mask.conservativeResize(n_features, cap);
  }
  for (int j = 0; j < n_features; ++j) {
    values(j, n) = v[static_cast<std::size_t>(j)];
    mask(j, n) = m[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
  }
  ids.push_back(id);
  types.push_back(id.type);
  connection.push_back(connection_id);
  label.push_back(inside ? 1 : 0);
}

void Dataset::shrink_to_fit() {
  values.conservativeResize(n_features, static_cast<Eigen::Index>(size()));
  mask.conservativeResize(n_features, static_cast<Eigen::Index>(size()));
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset d(n_features);
  d.values = gather_cols(values, rows);
  d.mask = gather_cols(mask, rows);
  d.reserve(rows.size());
  for (auto r : rows) {
    d.ids.push_back(ids[r]);
    d.types.push_back(types[r]);
    d.connection.push_back(connection[r]);
    d.label.push_back(label[r]);
  }
  return d;
}

double Dataset::inside_fraction() const {
  if (label.empty()) return 0.0;
  return static_cast<double>(std::accumulate(label.begin(), label.end(), 0)) / static_cast<double>(label.size());
}

void save_dataset_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError(fmt::format("cannot write {}", path.string()));
  std::string line = "earfcn,pci,rnti,type,subframe,connection,label";
  for (int j = 0; j < d.n_features; ++j) line += fmt::format(",v{}", j);
  for (int j = 0; j < d.n_features; ++j) line += fmt::format(",m{}", j);
  f << line << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& id = d.ids[i];
    const auto c = static_cast<Eigen::Index>(i);
    line = fmt::format("{},{},{},{},{},{},{}", id.earfcn, id.pci, id.rnti, to_string(id.type), id.subframe,
                       d.connection[i], d.label[i]);
    for (int j = 0; j < d.n_features; ++j) line += fmt::format(",{:.17g}", d.values(j, c));
    for (int j = 0; j < d.n_features; ++j) line += d.mask(j, c) != 0.0 ? ",1" : ",0";
    f << line << '\n';
  }
  if (!f) throw ConfigError(fmt::format("write failed for {}", path.string()));
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(fmt::format("cannot read {}", path.string()));
  std::string header;
  std::getline(f, header);
  const auto cols = std::count(header.begin(), header.end(), ',') + 1;
  if (cols < 7 || (cols - 7) % 2 != 0 || header.rfind("earfcn,", 0) != 0) {
    throw FormatError(fmt::format("{}: unexpected dataset header", path.string()));
  }
  const int F = static_cast<int>((cols - 7) / 2);
  Dataset d(F);
  std::string line;
  std::vector<double> v(static_cast<std::size_t>(F));
  std::vector<std::uint8_t> m(static_cast<std::size_t>(F));
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string_view> tok;
    std::string_view sv(line);
    std::size_t pos = 0;
    while (true) {
      const auto next = sv.find(',', pos);
      tok.push_back(sv.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
      if (next == std::string_view::npos) break;
      pos = next + 1;
    }
    if (static_cast<long>(tok.size()) != cols) {
      throw FormatError(fmt::format("{}:{}: expected {} fields, got {}", path.string(), lineno, cols, tok.size()));
    }
    auto num = [&](std::string_view s) {
      const std::string tmp(s);
      char* end = nullptr;
      const double x = std::strtod(tmp.c_str(), &end);
      if (end == tmp.c_str() || *end != '\0') throw FormatError(fmt::format("{}:{}: bad number '{}'", path.string(), lineno, tmp));
      return x;
    };
    MessageId id;
    id.earfcn = static_cast<std::uint32_t>(num(tok[0]));
    id.pci = static_cast<std::uint16_t>(num(tok[1]));
    id.rnti = static_cast<std::uint16_t>(num(tok[2]));
    id.type = msg_type_from_string(std::string(tok[3]));
    id.subframe = static_cast<std::uint32_t>(num(tok[4]));
    const auto conn = std::stoull(std::string(tok[5]));
    const int lab = static_cast<int>(num(tok[6]));
    for (int j = 0; j < F; ++j) {
      v[static_cast<std::size_t>(j)] = num(tok[7 + static_cast<std::size_t>(j)]);
      m[static_cast<std::size_t>(j)] = num(tok[7 + static_cast<std::size_t>(F + j)]) != 0.0;
    }
    d.push_back(v, m, id, conn, lab);
  }
  d.shrink_to_fit();
  return d;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_connection(const Dataset& d, double fraction,
                                                                                  std::uint64_t seed) {
  std::vector<std::uint64_t> conns(d.connection.begin(), d.connection.end());
  std::sort(conns.begin(), conns.end());
  conns.erase(std::unique(conns.begin(), conns.end()), conns.end());
  std::mt19937_64 rng(seed);
  std::shuffle(conns.begin(), conns.end(), rng);
  const auto n_second = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(conns.size())));
  std::set<std::uint64_t> second(conns.begin(), conns.begin() + static_cast<std::ptrdiff_t>(n_second));
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    (second.count(d.connection[i]) ? out.second : out.first).push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mlp

struct Mlp::View {
  Eigen::Index F, D, H1, H2;
  Eigen::Index gamma, beta, w1, b1, w2, b2, w3, b3, total;
};

Mlp::View Mlp::view() const {
  View v{};
  v.F = cfg_.n_features;
  v.D = input_dim(cfg_.n_features);
  v.H1 = cfg_.h1;
  v.H2 = cfg_.h2;
  v.gamma = 0;
  v.beta = v.gamma + v.F;
  v.w1 = v.beta + v.F;
  v.b1 = v.w1 + v.H1 * v.D;
  v.w2 = v.b1 + v.H1;
  v.b2 = v.w2 + v.H2 * v.H1;
  v.w3 = v.b2 + v.H2;
  v.b3 = v.w3 + v.H2;
  v.total = v.b3 + 1;
  return v;
}

Mlp::Mlp(const MlpConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.n_features <= 0 || cfg.h1 <= 0 || cfg.h2 <= 0) throw InvalidParameter("network dimensions must be positive");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw InvalidParameter("dropout must be in [0, 1)");
  const View v = view();
  theta_.setZero(v.total);
  theta_.segment(v.gamma, v.F).setOnes();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  auto init = [&](Eigen::Index off, Eigen::Index count, double fan_in) {
    const double sd = std::sqrt(2.0 / fan_in);
    for (Eigen::Index i = 0; i < count; ++i) theta_(off + i) = sd * n01(rng);
  };
  init(v.w1, v.H1 * v.D, static_cast<double>(v.D));
  init(v.w2, v.H2 * v.H1, static_cast<double>(v.H1));
  init(v.w3, v.H2, static_cast<double>(v.H2) * 2.0);
  mean_.setZero(v.F);
  var_.setOnes(v.F);
}

Eigen::MatrixXd Mlp::build_input(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask,
                                 std::span<const MsgType> types, const Eigen::VectorXd& mu, const Eigen::VectorXd& sd,
                                 Eigen::MatrixXd* xhat_out) const {
  const View v = view();
  const Eigen::Index B = values.cols();
  if (values.rows() != v.F || mask.rows() != v.F || mask.cols() != B || static_cast<Eigen::Index>(types.size()) != B) {
    throw ConfigError(fmt::format("feature dimension {} does not match the model ({})", values.rows(), v.F));
  }
  const auto gamma = theta_.segment(v.gamma, v.F);
  const auto beta = theta_.segment(v.beta, v.F);
  Eigen::MatrixXd xhat = (values.colwise() - mu).array().colwise() / sd.array();
  Eigen::MatrixXd z(v.D, B);
  z.topRows(v.F) = ((xhat.array().colwise() * gamma.array()).colwise() + beta.array()) * mask.array();
  z.middleRows(v.F, v.F) = mask;
  z.bottomRows(kNumMsgTypes).setZero();
  for (Eigen::Index b = 0; b < B; ++b) z(2 * v.F + static_cast<int>(types[static_cast<std::size_t>(b)]), b) = 1.0;
  if (xhat_out) *xhat_out = std::move(xhat);
  return z;
}

Eigen::VectorXd Mlp::predict_batch(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask,
                                   std::span<const MsgType> types) const {
  const View v = view();
  const Eigen::VectorXd sd = (var_.array() + kNormEps).sqrt();
  const Eigen::MatrixXd z = build_input(values, mask, types, mean_, sd, nullptr);
  const Eigen::Map<const Eigen::MatrixXd> W1(theta_.data() + v.w1, v.H1, v.D);
  const Eigen::Map<const Eigen::MatrixXd> W2(theta_.data() + v.w2, v.H2, v.H1);
  const Eigen::MatrixXd h1 = ((W1 * z).colwise() + theta_.segment(v.b1, v.H1)).cwiseMax(0.0);
  const Eigen::MatrixXd h2 = ((W2 * h1).colwise() + theta_.segment(v.b2, v.H2)).cwiseMax(0.0);
  const Eigen::RowVectorXd logit = (theta_.segment(v.w3, v.H2).transpose() * h2).array() + theta_(v.b3);
  Eigen::VectorXd out(values.cols());
  for (Eigen::Index b = 0; b < out.size(); ++b) out(b) = sigmoid(logit(b));
  return out;
}

double Mlp::predict(std::span<const double> values, std::span<const double> mask, MsgType type) const {
  const auto F = static_cast<Eigen::Index>(values.size());
  const Eigen::MatrixXd v = Eigen::Map<const Eigen::MatrixXd>(values.data(), F, 1);
  const Eigen::MatrixXd m = Eigen::Map<const Eigen::MatrixXd>(mask.data(), static_cast<Eigen::Index>(mask.size()), 1);
  const MsgType t[1] = {type};
  return predict_batch(v, m, t)(0);
}

double Mlp::loss(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask, std::span<const MsgType> types,
                 std::span<const int> labels, bool training, std::mt19937_64* rng, Eigen::VectorXd* grad) const {
  const View v = view();
  const Eigen::Index B = values.cols();
  if (B == 0) throw InvalidParameter("empty batch");
  Eigen::VectorXd mu, sd;
  if (training) {
    masked_stats(values, mask, mu, sd);
  } else {
    mu = mean_;
    sd = (var_.array() + kNormEps).sqrt();
  }
  Eigen::MatrixXd xhat;
  Eigen::MatrixXd z = build_input(values, mask, types, mu, sd, &xhat);

  Eigen::MatrixXd keep;
  if (training && rng && cfg_.dropout > 0.0) {
    std::bernoulli_distribution drop(cfg_.dropout);
    keep.resize(v.D, B);
    const double scale = 1.0 / (1.0 - cfg_.dropout);
    for (Eigen::Index i = 0; i < keep.size(); ++i) keep.data()[i] = drop(*rng) ? 0.0 : scale;
    z.array() *= keep.array();
  }

  const Eigen::Map<const Eigen::MatrixXd> W1(theta_.data() + v.w1, v.H1, v.D);
  const Eigen::Map<const Eigen::MatrixXd> W2(theta_.data() + v.w2, v.H2, v.H1);
  const Eigen::MatrixXd a1 = (W1 * z).colwise() + theta_.segment(v.b1, v.H1);
  const Eigen::MatrixXd h1 = a1.cwiseMax(0.0);
  const Eigen::MatrixXd a2 = (W2 * h1).colwise() + theta_.segment(v.b2, v.H2);
  const Eigen::MatrixXd h2 = a2.cwiseMax(0.0);
  const Eigen::RowVectorXd logit = (theta_.segment(v.w3, v.H2).transpose() * h2).array() + theta_(v.b3);

  double total = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) total += bce_logit(logit(b), labels[static_cast<std::size_t>(b)]);
  const double loss = total / static_cast<double>(B);
  if (!grad) return loss;

  grad->setZero(v.total);
  Eigen::RowVectorXd dlogit(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    dlogit(b) = (sigmoid(logit(b)) - labels[static_cast<std::size_t>(b)]) / static_cast<double>(B);
  }
  grad->segment(v.w3, v.H2) = h2 * dlogit.transpose();
  (*grad)(v.b3) = dlogit.sum();
  const Eigen::MatrixXd da2 = ((theta_.segment(v.w3, v.H2) * dlogit).array() * (a2.array() > 0.0).cast<double>()).matrix();
  Eigen::Map<Eigen::MatrixXd>(grad->data() + v.w2, v.H2, v.H1) = da2 * h1.transpose();
  grad->segment(v.b2, v.H2) = da2.rowwise().sum();
  const Eigen::MatrixXd da1 = ((W2.transpose() * da2).array() * (a1.array() > 0.0).cast<double>()).matrix();
  Eigen::Map<Eigen::MatrixXd>(grad->data() + v.w1, v.H1, v.D) = da1 * z.transpose();
  grad->segment(v.b1, v.H1) = da1.rowwise().sum();

  // Only the normalized-value rows carry parameters (gamma, beta).
  Eigen::MatrixXd du = W1.leftCols(v.F).transpose() * da1;
  if (keep.size()) du.array() *= keep.topRows(v.F).array();
  du.array() *= mask.array();
  grad->segment(v.gamma, v.F) = du.cwiseProduct(xhat).rowwise().sum();
  grad->segment(v.beta, v.F) = du.rowwise().sum();
  return loss;
}

void Mlp::set_statistics(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask) {
  Eigen::VectorXd sd;
  masked_stats(values, mask, mean_, sd);
  var_ = sd.array().square() - kNormEps;
}

bool Mlp::all_finite() const {
  return theta_.allFinite() && mean_.allFinite() && var_.allFinite();
}

// ---------------------------------------------------------------------------
// Training

Mlp train_mlp(const Dataset& data, const MlpConfig& cfg_in, const TrainOptions& opt, TrainReport* report) {
  if (data.size() == 0) throw TrainingError("empty dataset");
  const int pos = std::accumulate(data.label.begin(), data.label.end(), 0);
  if (pos == 0 || pos == static_cast<int>(data.size())) throw TrainingError("dataset has a single class");
  MlpConfig cfg = cfg_in;
  cfg.n_features = data.n_features;
  Mlp net(cfg, opt.seed);

  auto [train_idx, val_idx] = split_by_connection(data, opt.validation_fraction, derive_seed(opt.seed, 1));
  if (train_idx.empty()) throw TrainingError("no training rows after the validation split");
  if (val_idx.empty()) val_idx = train_idx;

  const Eigen::MatrixXd train_v = gather_cols(data.values, train_idx);
  const Eigen::MatrixXd train_m = gather_cols(data.mask, train_idx);
  const auto train_t = gather(data.types, train_idx);
  const auto train_y = gather(data.label, train_idx);
  const Eigen::MatrixXd val_v = gather_cols(data.values, val_idx);
  const Eigen::MatrixXd val_m = gather_cols(data.mask, val_idx);
  const auto val_t = gather(data.types, val_idx);
  const auto val_y = gather(data.label, val_idx);

  std::mt19937_64 rng(derive_seed(opt.seed, 2));
  const auto P = net.parameters().size();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(P), m2 = Eigen::VectorXd::Zero(P), g(P);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long step = 0;

  Mlp best = net;
  best.set_statistics(train_v, train_m);
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0, since_best = 0;
  TrainReport rep;

  std::vector<std::size_t> order(train_idx.size());
  std::iota(order.begin(), order.end(), 0);
  std::bernoulli_distribution drop_receiver(opt.receiver_drop_probability);
  const bool augment = opt.receiver_drop_probability > 0.0 && !opt.receiver_groups.empty();
  const int max_drop = augment ? std::clamp(opt.max_dropped_receivers, 1, static_cast<int>(opt.receiver_groups.size()))
                               : 1;
  std::uniform_int_distribution<int> how_many(1, max_drop);
  std::vector<std::size_t> groups(opt.receiver_groups.size());

  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch)) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(opt.batch));
      const std::span<const std::size_t> idx(order.data() + start, n);
      Eigen::MatrixXd bv = gather_cols(train_v, idx);
      Eigen::MatrixXd bm = gather_cols(train_m, idx);
      if (augment) {
        for (Eigen::Index c = 0; c < bv.cols(); ++c) {
          if (!drop_receiver(rng)) continue;
          // Partial shuffle picks k distinct receivers.
          std::iota(groups.begin(), groups.end(), 0);
          const int k = how_many(rng);
          for (int i = 0; i < k; ++i) {
            std::swap(groups[static_cast<std::size_t>(i)],
                      groups[std::uniform_int_distribution<std::size_t>(static_cast<std::size_t>(i), groups.size() - 1)(rng)]);
            for (int j : opt.receiver_groups[groups[static_cast<std::size_t>(i)]]) {
              bv(j, c) = 0.0;
              bm(j, c) = 0.0;
            }
          }
        }
      }
      const auto bt = gather(train_t, idx);
      const auto by = gather(train_y, idx);
      epoch_loss += net.loss(bv, bm, bt, by, true, &rng, &g) * static_cast<double>(n);
      seen += n;
      ++step;
      m1 = b1 * m1 + (1 - b1) * g;
      m2 = b2 * m2 + (1 - b2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
      net.parameters().array() -= opt.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
    }
    if (!net.all_finite()) throw TrainingError(fmt::format("non-finite parameters at epoch {}", epoch));
    net.set_statistics(train_v, train_m);
    const double vl = net.loss(val_v, val_m, val_t, val_y, false, nullptr, nullptr);
    rep.train_loss.push_back(epoch_loss / static_cast<double>(seen));
    rep.validation_loss.push_back(vl);
    rep.epochs = epoch;
    if (opt.verbose) fmt::print(stderr, "epoch {:3d} train {:.5f} val {:.5f}\n", epoch, rep.train_loss.back(), vl);
    if (vl < best_loss - 1e-7) {
      best_loss = vl;
      best = net;
      best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= opt.patience) {
      break;
    }
  }
  rep.best_epoch = best_epoch;
  rep.best_validation_loss = best_loss;
  if (report) *report = std::move(rep);
  return best;
}

Model train_model(const Dataset& data, const MlpConfig& cfg, const TrainOptions& opt, const EnsembleOptions& eopt,
                  TrainReport* report) {
  Model m{train_mlp(data, cfg, opt, report), {}};
  // Same split as train_mlp: the ensemble sees scores of connections the
  // network was not fitted on.
  auto [train_idx, val_idx] = split_by_connection(data, opt.validation_fraction, derive_seed(opt.seed, 1));
  Dataset held = data.subset(val_idx.empty() ? train_idx : val_idx);
  const auto scores = m.mlp.predict_batch(held.values, held.mask, held.types);
  const auto decisions = group_connections(held, scores);
  std::vector<ConnectionScores> s;
  std::vector<int> y;
  for (const auto& d : decisions) {
    s.push_back(d.scores);
    y.push_back(d.label);
  }
  try {
    m.ensemble = train_ensemble(s, y, eopt);
  } catch (const TrainingError&) {
    // Held-out part too small or one-sided: fall back to the unit weights.
    m.ensemble = Ensemble{};
  }
  return m;
}

// ---------------------------------------------------------------------------
// Ensemble

void ConnectionScores::add(MsgType type, double score) {
  switch (type) {
    case MsgType::Prach: prach = score; break;
    case MsgType::Pusch: pusch = score; break;
    case MsgType::Pucch: pucch.push_back(score); break;
  }
}

std::array<double, 3> ConnectionScores::inputs() const {
  std::array<double, 3> x{prach.value_or(0.5), pusch.value_or(0.5), 0.5};
  if (!pucch.empty()) x[2] = std::accumulate(pucch.begin(), pucch.end(), 0.0) / static_cast<double>(pucch.size());
  return x;
}

double Ensemble::fuse(const std::array<double, 3>& x) const {
  double z = intercept;
  for (int i = 0; i < 3; ++i) z += weights[static_cast<std::size_t>(i)] * (x[static_cast<std::size_t>(i)] - 0.5);
  return sigmoid(z);
}

double Ensemble::fuse(const ConnectionScores& s) const { return fuse(s.inputs()); }

Ensemble train_ensemble(std::span<const ConnectionScores> scores, std::span<const int> labels,
                        const EnsembleOptions& opt) {
  if (scores.size() != labels.size() || scores.empty()) throw TrainingError("ensemble needs one label per connection");
  const int pos = std::accumulate(labels.begin(), labels.end(), 0);
  if (pos == 0 || pos == static_cast<int>(labels.size())) throw TrainingError("ensemble data has a single class");
  const auto N = static_cast<Eigen::Index>(scores.size());
  Eigen::MatrixXd X(N, 3);
  Eigen::VectorXd y(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto x = scores[static_cast<std::size_t>(i)].inputs();
    for (int j = 0; j < 3; ++j) X(i, j) = x[static_cast<std::size_t>(j)] - 0.5;
    y(i) = labels[static_cast<std::size_t>(i)];
  }
  if (((X.rowwise() - X.row(0)).cwiseAbs().maxCoeff()) < 1e-12) throw TrainingError("ensemble inputs are all identical");

  Eigen::Vector3d w = Eigen::Vector3d::Ones();
  double b = 0.0;
  for (int it = 0; it < opt.iterations; ++it) {
    Eigen::VectorXd z = (X * w).array() + b;
    Eigen::VectorXd r(N);
    for (Eigen::Index i = 0; i < N; ++i) r(i) = sigmoid(z(i)) - y(i);
    const Eigen::Vector3d gw = X.transpose() * r / static_cast<double>(N) + opt.l2 * w;
    const double gb = r.mean();
    w -= opt.learning_rate * gw;
    b -= opt.learning_rate * gb;
    w = w.cwiseMax(0.0);
  }
  Ensemble e;
  for (int j = 0; j < 3; ++j) e.weights[static_cast<std::size_t>(j)] = w(j);
  e.intercept = b;
  if (!std::isfinite(b) || !w.allFinite()) throw TrainingError("ensemble fit diverged");
  return e;
}

// ---------------------------------------------------------------------------
// Model file

namespace {

class ByteWriter {
public:
  explicit ByteWriter(std::ostream& o) : o_(o) {}
  void raw(const char* p, std::size_t n) { o_.write(p, static_cast<std::streamsize>(n)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void vec(const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v(i));
  }

private:
  void put(std::uint64_t v, int n) {
    char b[8];
    for (int i = 0; i < n; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    raw(b, static_cast<std::size_t>(n));
  }
  std::ostream& o_;
};

class ByteReader {
public:
  ByteReader(std::istream& i, std::string name) : i_(i), name_(std::move(name)) {}
  void raw(char* p, std::size_t n) {
    i_.read(p, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(i_.gcount()) != n) throw FormatError(fmt::format("{}: truncated model file", name_));
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  double f64() { return std::bit_cast<double>(get(8)); }
  void vec(Eigen::VectorXd& v) {
    for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = f64();
  }
  bool at_end() { return i_.peek() == std::char_traits<char>::eof(); }

private:
  std::uint64_t get(int n) {
    unsigned char b[8];
    raw(reinterpret_cast<char*>(b), static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int k = 0; k < n; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    return v;
  }
  std::istream& i_;
  std::string name_;
};

}  // namespace

void save_model(const Model& m, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError(fmt::format("cannot write {}", path.string()));
  ByteWriter w(f);
  w.raw(kModelMagic.data(), kModelMagic.size());
  w.u16(kModelVersion);
  const auto& c = m.mlp.config();
  w.u32(static_cast<std::uint32_t>(c.n_features));
  w.u32(static_cast<std::uint32_t>(input_dim(c.n_features)));
  w.u32(static_cast<std::uint32_t>(c.h1));
  w.u32(static_cast<std::uint32_t>(c.h2));
  w.f64(c.dropout);
  w.vec(m.mlp.parameters());
  w.vec(m.mlp.running_mean());
  w.vec(m.mlp.running_var());
  for (double x : m.ensemble.weights) w.f64(x);
  w.f64(m.ensemble.intercept);
  if (!f) throw ConfigError(fmt::format("write failed for {}", path.string()));
}

Model load_model(const std::filesystem::path& path, std::optional<int> expected_features) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError(fmt::format("cannot read {}", path.string()));
  ByteReader r(f, path.string());
  std::array<char, 4> magic{};
  r.raw(magic.data(), magic.size());
  if (magic != kModelMagic) throw FormatError(fmt::format("{}: not a model file (bad magic)", path.string()));
  const auto version = r.u16();
  if (version != kModelVersion) {
    throw FormatError(fmt::format("{}: model version {} unsupported (expected {})", path.string(), version, kModelVersion));
  }
  MlpConfig c;
  c.n_features = static_cast<int>(r.u32());
  const auto d = r.u32();
  c.h1 = static_cast<int>(r.u32());
  c.h2 = static_cast<int>(r.u32());
  c.dropout = r.f64();
  if (c.n_features <= 0 || c.n_features > (1 << 20) || c.h1 <= 0 || c.h1 > (1 << 16) || c.h2 <= 0 || c.h2 > (1 << 16) ||
      static_cast<int>(d) != input_dim(c.n_features) || !(c.dropout >= 0.0 && c.dropout < 1.0)) {
    throw FormatError(fmt::format("{}: inconsistent model dimensions", path.string()));
  }
  if (expected_features && *expected_features != c.n_features) {
    throw ConfigError(fmt::format("{}: model expects {} features, pipeline produces {}", path.string(), c.n_features,
                                  *expected_features));
  }
  Model m;
  m.mlp = Mlp(c, 0);
  r.vec(m.mlp.parameters());
  r.vec(m.mlp.running_mean());
  r.vec(m.mlp.running_var());
  for (double& x : m.ensemble.weights) x = r.f64();
  m.ensemble.intercept = r.f64();
  if (!r.at_end()) throw FormatError(fmt::format("{}: trailing bytes after model", path.string()));
  return m;
}

// ---------------------------------------------------------------------------
// Metrics

void Confusion::add(int label, bool inside) {
  if (label) {
    ++(inside ? tp : fn);
  } else {
    ++(inside ? fp : tn);
  }
}

double Confusion::accuracy() const {
  return total() ? static_cast<double>(tp + tn) / static_cast<double>(total()) : 0.0;
}

double Confusion::fpr() const { return fp + tn ? static_cast<double>(fp) / static_cast<double>(fp + tn) : 0.0; }

double Confusion::fnr() const { return tp + fn ? static_cast<double>(fn) / static_cast<double>(tp + fn) : 0.0; }

std::vector<ConnectionDecision> group_connections(const Dataset& data, const Eigen::VectorXd& scores) {
  std::map<std::uint64_t, ConnectionDecision> by;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& c = by[data.connection[i]];
    c.connection = data.connection[i];
    c.label = data.label[i];
    c.scores.add(data.types[i], scores(static_cast<Eigen::Index>(i)));
  }
  std::vector<ConnectionDecision> out;
  out.reserve(by.size());
  for (auto& [k, c] : by) out.push_back(std::move(c));
  return out;
}

Metrics evaluate(const Model& model, const Dataset& data) {
  Metrics m;
  if (data.size() == 0) return m;
  const auto n = static_cast<Eigen::Index>(data.size());
  const Eigen::VectorXd s = model.mlp.predict_batch(data.values.leftCols(n), data.mask.leftCols(n), data.types);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool inside = s(static_cast<Eigen::Index>(i)) > 0.5;
    m.messages.add(data.label[i], inside);
    m.per_type[static_cast<std::size_t>(data.types[i])].add(data.label[i], inside);
  }
  m.decisions = group_connections(data, s);
  for (auto& c : m.decisions) {
    c.fused = model.ensemble.fuse(c.scores);
    m.connections.add(c.label, c.fused > 0.5);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Grid search

std::vector<GridPoint> grid_search(const Dataset& data, std::span<const int> h1s, std::span<const int> h2s,
                                   std::span<const double> dropouts, std::span<const double> learning_rates,
                                   const TrainOptions& base) {
  auto [tr, va] = split_by_connection(data, 0.2, derive_seed(base.seed, 7));
  const Dataset train = data.subset(tr);
  const Dataset val = data.subset(va);
  std::vector<GridPoint> out;
  for (int h1 : h1s) {
    for (int h2 : h2s) {
      for (double dr : dropouts) {
        for (double lr : learning_rates) {
          GridPoint g;
          g.config = {data.n_features, h1, h2, dr};
          g.learning_rate = lr;
          TrainOptions o = base;
          o.learning_rate = lr;
          const Mlp net = train_mlp(train, g.config, o);
          g.validation_loss = net.loss(val.values, val.mask, val.types, val.label, false, nullptr, nullptr);
          const Eigen::VectorXd s = net.predict_batch(val.values, val.mask, val.types);
          Confusion c;
          for (std::size_t i = 0; i < val.size(); ++i) c.add(val.label[i], s(static_cast<Eigen::Index>(i)) > 0.5);
          g.validation_accuracy = c.accuracy();
          out.push_back(g);
        }
      }
    }
  }
  return out;
}

}  // namespace ltag::gf
