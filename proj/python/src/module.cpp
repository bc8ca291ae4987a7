// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

// Python bindings: scenarios, dataset generation, training and scoring,
// link-level sweeps, the channelizer and the bus benchmark.

#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ltag/bus.hpp"
#include "ltag/central_unit.hpp"
#include "ltag/channelizer.hpp"
#include "ltag/geofence_model.hpp"
#include "ltag/scenario.hpp"
#include "ltag/simulation.hpp"
#include "ltag/sweeps.hpp"

namespace py = pybind11;
using namespace ltag;

namespace {

py::dict confusion(const gf::Confusion& c) {
  py::dict d;
  d["tp"] = c.tp;
  d["fn"] = c.fn;
  d["fp"] = c.fp;
  d["tn"] = c.tn;
  d["accuracy"] = c.accuracy();
  d["fpr"] = c.fpr();
  d["fnr"] = c.fnr();
  return d;
}

std::vector<MsgType> to_types(const std::vector<int>& t) {
  std::vector<MsgType> out;
  out.reserve(t.size());
  for (int v : t) {
    if (v < 0 || v >= kNumMsgTypes) throw InvalidParameter("message type must be 0 (PRACH), 1 (PUSCH) or 2 (PUCCH)");
    out.push_back(static_cast<MsgType>(v));
  }
  return out;
}

sweep::LinkOptions link_options(int trials, std::uint64_t seed) {
  sweep::LinkOptions o;
  o.trials = trials;
  o.seed = seed;
  return o;
}

}  // namespace

PYBIND11_MODULE(_ltag, m) {
  m.doc() = "Geofencing from passively measured LTE uplink transmissions";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<InvalidParameter>(m, "InvalidParameter", PyExc_ValueError);

  // Scenario -------------------------------------------------------------
  py::class_<chan::DeploymentScenario>(m, "Scenario")
      .def_static("load", &scenario::load_scenario, py::arg("path"))
      .def_static("parse", &scenario::parse_scenario, py::arg("yaml_text"))
      .def("dump", &scenario::dump_scenario)
      .def_property_readonly("receiver_ids",
                             [](const chan::DeploymentScenario& s) {
                               std::vector<std::uint16_t> ids;
                               for (const auto& r : s.receivers) ids.push_back(r.id);
                               return ids;
                             })
      .def_property_readonly("n_cells", [](const chan::DeploymentScenario& s) { return s.cells.size(); })
      .def("inside", [](const chan::DeploymentScenario& s, double x, double y) { return s.inside({x, y}); });

  // Dataset --------------------------------------------------------------
  py::class_<gf::Dataset>(m, "Dataset")
      .def_static("load_csv", &gf::load_dataset_csv, py::arg("path"))
      .def("save_csv", [](const gf::Dataset& d, const std::filesystem::path& p) { gf::save_dataset_csv(d, p); })
      .def("__len__", &gf::Dataset::size)
      .def_readonly("n_features", &gf::Dataset::n_features)
      // Row-major views: one row per message.
      .def_property_readonly("values", [](const gf::Dataset& d) { return Eigen::MatrixXd(d.values.transpose()); })
      .def_property_readonly("mask", [](const gf::Dataset& d) { return Eigen::MatrixXd(d.mask.transpose()); })
      .def_property_readonly("labels", [](const gf::Dataset& d) { return d.label; })
      .def_property_readonly("connections", [](const gf::Dataset& d) { return d.connection; })
      .def_property_readonly("types",
                             [](const gf::Dataset& d) {
                               std::vector<int> t;
                               for (auto v : d.types) t.push_back(static_cast<int>(v));
                               return t;
                             })
      .def("inside_fraction", &gf::Dataset::inside_fraction);

  m.def(
      "generate",
      [](const chan::DeploymentScenario& s, std::size_t n, std::uint64_t seed, int interval) {
        sim::GenerateOptions o;
        o.n_connections = n;
        o.seed = seed;
        o.request_interval = interval;
        auto g = sim::generate_dataset(s, o);
        py::dict summary;
        summary["connections"] = g.summary.connections;
        summary["messages"] = g.summary.messages;
        summary["rows"] = g.summary.rows;
        summary["unusable"] = g.summary.unusable;
        summary["report_loss"] = g.summary.report_loss();
        summary["inside_fraction"] = g.summary.inside_fraction;
        return py::make_tuple(std::move(g.dataset), summary);
      },
      py::arg("scenario"), py::arg("n_connections") = 1000, py::arg("seed") = 1, py::arg("request_interval") = 2,
      "Simulate connections; returns (Dataset, summary dict).");

  // Model ----------------------------------------------------------------
  py::class_<gf::Model>(m, "Model")
      .def_static(
          "load", [](const std::filesystem::path& p) { return gf::load_model(p); }, py::arg("path"))
      .def("save", [](const gf::Model& mdl, const std::filesystem::path& p) { gf::save_model(mdl, p); })
      .def_property_readonly("n_features", [](const gf::Model& mdl) { return mdl.mlp.n_features(); })
      .def_property_readonly("ensemble_weights", [](const gf::Model& mdl) { return mdl.ensemble.weights; })
      .def_property_readonly("ensemble_intercept", [](const gf::Model& mdl) { return mdl.ensemble.intercept; })
      .def(
          "predict",
          [](const gf::Model& mdl, const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask,
             const std::vector<int>& types) {
            if (values.rows() != mask.rows() || values.cols() != mask.cols() ||
                static_cast<std::size_t>(values.rows()) != types.size()) {
              throw InvalidParameter("values, mask and types must describe the same rows");
            }
            const auto t = to_types(types);
            return Eigen::VectorXd(mdl.mlp.predict_batch(values.transpose(), mask.transpose(), t));
          },
          py::arg("values"), py::arg("mask"), py::arg("types"), "Per-message inside probability, one per row.");

  m.def(
      "train",
      [](const gf::Dataset& d, int h1, int h2, double dropout, double learning_rate, int max_epochs,
         std::uint64_t seed, double receiver_drop) {
        gf::MlpConfig cfg{d.n_features, h1, h2, dropout};
        gf::TrainOptions o;
        o.learning_rate = learning_rate;
        o.max_epochs = max_epochs;
        o.seed = seed;
        const int r = sweep::receivers_for_features(d.n_features);
        std::vector<std::uint16_t> ids(static_cast<std::size_t>(r));
        for (int i = 0; i < r; ++i) ids[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(i + 1);
        o.receiver_groups = cu::FeatureLayout(ids).receiver_groups();
        o.receiver_drop_probability = receiver_drop;
        o.max_dropped_receivers = std::max(1, std::min(3, r - 1));
        py::gil_scoped_release release;
        return gf::train_model(d, cfg, o);
      },
      py::arg("dataset"), py::arg("h1") = 64, py::arg("h2") = 32, py::arg("dropout") = 0.2,
      py::arg("learning_rate") = 1e-3, py::arg("max_epochs") = 200, py::arg("seed") = 1,
      py::arg("receiver_drop") = 0.3);

  m.def(
      "evaluate",
      [](const gf::Model& mdl, const gf::Dataset& d) {
        const auto r = gf::evaluate(mdl, d);
        py::dict out;
        out["messages"] = confusion(r.messages);
        out["connections"] = confusion(r.connections);
        py::dict per;
        for (int t = 0; t < kNumMsgTypes; ++t) {
          per[py::str(to_string(static_cast<MsgType>(t)))] = confusion(r.per_type[static_cast<std::size_t>(t)]);
        }
        out["per_type"] = per;
        return out;
      },
      py::arg("model"), py::arg("dataset"));

  // Sweeps ---------------------------------------------------------------
  m.def(
      "power_sweep",
      [](const std::vector<double>& snrs, int trials, std::uint64_t seed) {
        py::list out;
        for (const auto& p : sweep::power_sweep(link_options(trials, seed), snrs)) {
          py::dict d;
          d["snr_db"] = p.snr_db;
          d["interferer"] = p.interferer;
          d["corr_mean_err"] = p.corr_mean_err;
          d["corr_mean_abs_err"] = p.corr_mean_abs_err;
          d["rms2_mean_err"] = p.rms2_mean_err;
          d["rms2_mean_abs_err"] = p.rms2_mean_abs_err;
          out.append(d);
        }
        return out;
      },
      py::arg("snrs_db"), py::arg("trials") = 100, py::arg("seed") = 1);

  m.def(
      "msgtype_sweep",
      [](double snr_db, int trials, std::uint64_t seed) {
        py::list out;
        for (const auto& p : sweep::msgtype_sweep(link_options(trials, seed), snr_db)) {
          py::dict d;
          d["label"] = p.label;
          d["mean_err"] = p.mean_err;
          d["std_err"] = p.std_err;
          out.append(d);
        }
        return out;
      },
      py::arg("snr_db") = -5.0, py::arg("trials") = 100, py::arg("seed") = 1);

  m.def(
      "snr_sweep",
      [](const std::vector<double>& snrs, int trials, std::uint64_t seed) {
        py::list out;
        for (const auto& p : sweep::snr_sweep(link_options(trials, seed), snrs)) {
          py::dict d;
          d["snr_db"] = p.snr_db;
          d["p2a_mean"] = p.p2a_mean;
          d["p2a_mean_abs_err"] = p.p2a_mean_abs_err;
          d["smoothed_mean"] = p.smoothed_mean;
          d["smoothed_mean_abs_err"] = p.smoothed_mean_abs_err;
          out.append(d);
        }
        return out;
      },
      py::arg("snrs_db"), py::arg("trials") = 100, py::arg("seed") = 1);

  m.def(
      "aoa_sweep",
      [](const std::vector<double>& angles, int trials, std::uint64_t seed) {
        sweep::AoaOptions o;
        o.trials = trials;
        o.seed = seed;
        std::vector<std::pair<double, double>> out;
        for (const auto& p : sweep::aoa_sweep(o, angles)) out.emplace_back(p.angle_deg, p.mean_diff_db);
        return out;
      },
      py::arg("angles_deg"), py::arg("trials") = 100, py::arg("seed") = 1,
      "List of (angle, mean port-0 minus port-1 power in dB).");

  m.def("spearman", &sweep::spearman, py::arg("x"), py::arg("y"));

  // Channelizer ----------------------------------------------------------
  m.def(
      "channelize",
      [](const std::vector<cf64>& samples, double sample_rate, const std::vector<std::pair<double, double>>& channels) {
        IqStream in;
        in.sample_rate = sample_rate;
        in.samples = samples;
        std::vector<dsp::ChannelSpec> specs;
        for (const auto& [off, bw] : channels) specs.push_back({off, bw});
        std::vector<std::pair<double, std::vector<cf64>>> out;
        for (auto& s : dsp::channelize(in, specs)) out.emplace_back(s.sample_rate, std::move(s.samples));
        return out;
      },
      py::arg("samples"), py::arg("sample_rate"), py::arg("channels"),
      "Split a wideband capture; channels are (centre offset Hz, bandwidth Hz). Returns (rate, samples) per channel.");

  // Bus ------------------------------------------------------------------
  m.def(
      "bus_round_trip",
      [](std::size_t n, std::size_t payload_bytes) {
        const auto s = bus::round_trip_bench(n, payload_bytes);
        py::dict d;
        d["count"] = s.count;
        d["mean_us"] = s.mean_us;
        d["stddev_us"] = s.stddev_us;
        d["p50_us"] = s.p50_us;
        d["p99_us"] = s.p99_us;
        return d;
      },
      py::arg("n") = 1000, py::arg("payload_bytes") = 64);
}
