// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/scenario.hpp"

#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

namespace ltag::scenario {

namespace {

using chan::Vec2;

constexpr double kDeg = kPi / 180.0;

[[noreturn]] void fail(const YAML::Node& n, const std::string& field, const std::string& what) {
  const auto m = n.Mark();
  if (m.line >= 0) throw ConfigError(fmt::format("line {}: {}: {}", m.line + 1, field, what));
  throw ConfigError(fmt::format("{}: {}", field, what));
}

template <typename T>
T as(const YAML::Node& n, const std::string& field) {
  if (!n.IsScalar()) fail(n, field, "expected a scalar");
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    if constexpr (std::is_floating_point_v<T>) fail(n, field, "expected a number");
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) fail(n, field, "expected an integer");
    fail(n, field, "bad value");
  }
}

template <typename T>
T get(const YAML::Node& map, const std::string& key, const std::string& path, T fallback) {
  const auto n = map[key];
  if (!n) return fallback;
  return as<T>(n, path + "." + key);
}

template <typename T>
T require(const YAML::Node& map, const std::string& key, const std::string& path) {
  const auto n = map[key];
  if (!n) fail(map, path + "." + key, "missing");
  return as<T>(n, path + "." + key);
}

void check_keys(const YAML::Node& map, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!map.IsMap()) fail(map, path, "expected a mapping");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    if (!ok.count(key)) fail(kv.first, path.empty() ? key : path + "." + key, "unknown field");
  }
}

Vec2 point(const YAML::Node& n, const std::string& field) {
  if (!n.IsSequence() || n.size() != 2) fail(n, field, "expected [x, y]");
  return {as<double>(n[0], field + "[0]"), as<double>(n[1], field + "[1]")};
}

std::vector<Vec2> points(const YAML::Node& n, const std::string& field) {
  if (!n.IsSequence()) fail(n, field, "expected a list of [x, y]");
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < n.size(); ++i) out.push_back(point(n[i], fmt::format("{}[{}]", field, i)));
  return out;
}

std::vector<int> ints(const YAML::Node& n, const std::string& field) {
  if (!n.IsSequence()) fail(n, field, "expected a list of integers");
  std::vector<int> out;
  for (std::size_t i = 0; i < n.size(); ++i) out.push_back(as<int>(n[i], fmt::format("{}[{}]", field, i)));
  return out;
}

const YAML::Node& sequence(const YAML::Node& n, const std::string& field) {
  if (!n.IsSequence()) fail(n, field, "expected a list");
  return n;
}

}  // namespace

chan::DeploymentScenario parse_scenario(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(fmt::format("line {}: syntax error: {}", e.mark.line + 1, e.msg));
  }
  if (!root.IsMap()) throw ConfigError("scenario: top level must be a mapping");
  check_keys(root, "", {"name", "seed", "area", "walls", "receivers", "bands", "cells", "channel", "ue", "routes"});

  chan::DeploymentScenario s;
  s.name = get<std::string>(root, "name", "", "scenario");
  s.rng_seed = get<std::uint64_t>(root, "seed", "", 1);

  const auto area = root["area"];
  if (!area) fail(root, "area", "missing");
  check_keys(area, "area", {"boundary"});
  if (!area["boundary"]) fail(area, "area.boundary", "missing");
  s.boundary = points(area["boundary"], "area.boundary");
  if (s.boundary.size() < 3) fail(area["boundary"], "area.boundary", "needs at least 3 vertices");

  if (const auto walls = root["walls"]) {
    sequence(walls, "walls");
    for (std::size_t i = 0; i < walls.size(); ++i) {
      const auto w = walls[i];
      const auto path = fmt::format("walls[{}]", i);
      check_keys(w, path, {"a", "b", "attenuation_db"});
      if (!w["a"] || !w["b"]) fail(w, path, "needs a and b");
      s.walls.push_back({point(w["a"], path + ".a"), point(w["b"], path + ".b"), get(w, "attenuation_db", path, 10.0)});
    }
  }

  const auto rx = root["receivers"];
  if (!rx) fail(root, "receivers", "missing");
  sequence(rx, "receivers");
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const auto r = rx[i];
    const auto path = fmt::format("receivers[{}]", i);
    check_keys(r, path, {"id", "position", "azimuth_deg", "port_offset_m", "max_gain_db", "front_to_back_db",
                         "clock_offset_ns"});
    chan::ReceiverSite site;
    site.id = require<std::uint16_t>(r, "id", path);
    if (!r["position"]) fail(r, path + ".position", "missing");
    site.position = point(r["position"], path + ".position");
    site.azimuth_rad = require<double>(r, "azimuth_deg", path) * kDeg;
    site.port_offset_m = get(r, "port_offset_m", path, 0.0);
    site.pattern.max_gain_db = get(r, "max_gain_db", path, 0.0);
    site.pattern.front_to_back_db = get(r, "front_to_back_db", path, 25.0);
    site.clock_offset_s = get(r, "clock_offset_ns", path, 0.0) * 1e-9;
    s.receivers.push_back(site);
  }

  const auto bands = root["bands"];
  if (!bands) fail(root, "bands", "missing");
  sequence(bands, "bands");
  for (std::size_t i = 0; i < bands.size(); ++i) {
    const auto b = bands[i];
    const auto path = fmt::format("bands[{}]", i);
    check_keys(b, path, {"id", "sample_rate"});
    chan::BandConfig bc;
    bc.id = require<int>(b, "id", path);
    bc.sample_rate = get(b, "sample_rate", path, 30.72e6);
    s.bands.push_back(bc);
  }

  const auto cells = root["cells"];
  if (!cells) fail(root, "cells", "missing");
  sequence(cells, "cells");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto c = cells[i];
    const auto path = fmt::format("cells[{}]", i);
    check_keys(c, path, {"earfcn", "pci", "band", "n_prb", "ul_offset_hz", "prach_subframes", "prach_root",
                         "prach_prb_offset"});
    phy::CellConfig cc;
    cc.earfcn = require<std::uint32_t>(c, "earfcn", path);
    cc.pci = require<std::uint16_t>(c, "pci", path);
    try {
      cc.band = phy::band_from_int(require<int>(c, "band", path));
    } catch (const InvalidParameter& e) {
      fail(c["band"], path + ".band", e.what());
    }
    cc.n_prb_ul = get(c, "n_prb", path, 25);
    cc.ul_offset_hz = get(c, "ul_offset_hz", path, 0.0);
    if (c["prach_subframes"]) cc.prach_subframes = ints(c["prach_subframes"], path + ".prach_subframes");
    cc.prach_root = get(c, "prach_root", path, 1);
    cc.prach_prb_offset = get(c, "prach_prb_offset", path, 2);
    if (cc.n_prb_ul < phy::kPrachPrbs) fail(c, path + ".n_prb", "must be >= 6");
    if (cc.prach_prb_offset < 0 || cc.prach_prb_offset + phy::kPrachPrbs > cc.n_prb_ul)
      fail(c, path + ".prach_prb_offset", "PRACH does not fit the cell");
    if (cc.prach_root < 1 || cc.prach_root >= phy::kPrachLength) fail(c, path + ".prach_root", "must be in [1, 838]");
    for (int sf : cc.prach_subframes)
      if (sf < 0 || sf > 9) fail(c, path + ".prach_subframes", "entries must be in [0, 9]");
    s.cells.push_back(cc);
  }

  if (const auto ch = root["channel"]) {
    check_keys(ch, "channel", {"path_loss_exponent", "reference_loss_db", "shadowing_db", "port_fading_db",
                               "noise_figure_db", "full_scale_dbm"});
    auto& p = s.channel;
    p.path_loss_exponent = get(ch, "path_loss_exponent", "channel", p.path_loss_exponent);
    p.reference_loss_db = get(ch, "reference_loss_db", "channel", p.reference_loss_db);
    p.shadowing_db = get(ch, "shadowing_db", "channel", p.shadowing_db);
    p.port_fading_db = get(ch, "port_fading_db", "channel", p.port_fading_db);
    p.noise_figure_db = get(ch, "noise_figure_db", "channel", p.noise_figure_db);
    p.full_scale_dbm = get(ch, "full_scale_dbm", "channel", p.full_scale_dbm);
  }

  if (const auto ue = root["ue"]) {
    check_keys(ue, "ue", {"tx_power_dbm"});
    s.ue_tx_power_dbm = get(ue, "tx_power_dbm", "ue", s.ue_tx_power_dbm);
  }

  if (const auto routes = root["routes"]) {
    check_keys(routes, "routes", {"explicit", "generator"});
    if (const auto ex = routes["explicit"]) {
      sequence(ex, "routes.explicit");
      for (std::size_t i = 0; i < ex.size(); ++i) {
        chan::Route r;
        r.waypoints = points(ex[i], fmt::format("routes.explicit[{}]", i));
        if (r.waypoints.empty()) fail(ex[i], fmt::format("routes.explicit[{}]", i), "route has no waypoints");
        s.routes.push_back(std::move(r));
      }
    }
    if (const auto g = routes["generator"]) {
      check_keys(g, "routes.generator", {"inside", "outside", "margin_m", "outer_extent_m", "waypoints"});
      auto& rg = s.route_generator;
      rg.inside_routes = get(g, "inside", "routes.generator", rg.inside_routes);
      rg.outside_routes = get(g, "outside", "routes.generator", rg.outside_routes);
      rg.margin_m = get(g, "margin_m", "routes.generator", rg.margin_m);
      rg.outer_extent_m = get(g, "outer_extent_m", "routes.generator", rg.outer_extent_m);
      rg.waypoints_per_route = get(g, "waypoints", "routes.generator", rg.waypoints_per_route);
      if (rg.inside_routes < 0 || rg.outside_routes < 0) fail(g, "routes.generator", "route counts must be >= 0");
      if (rg.waypoints_per_route < 1) fail(g, "routes.generator.waypoints", "must be >= 1");
      if (!(rg.margin_m >= 0.0) || !(rg.outer_extent_m > rg.margin_m))
        fail(g, "routes.generator", "need 0 <= margin_m < outer_extent_m");
    }
  }

  s.validate();
  return s;
}

chan::DeploymentScenario load_scenario(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(fmt::format("cannot open scenario file {}", path.string()));
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_scenario(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string dump_scenario(const chan::DeploymentScenario& s) {
  YAML::Emitter out;
  auto pt = [&](Vec2 p) { out << YAML::Flow << YAML::BeginSeq << p.x << p.y << YAML::EndSeq; };
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << s.name;
  out << YAML::Key << "seed" << YAML::Value << s.rng_seed;
  out << YAML::Key << "area" << YAML::Value << YAML::BeginMap << YAML::Key << "boundary" << YAML::Value
      << YAML::BeginSeq;
  for (auto p : s.boundary) pt(p);
  out << YAML::EndSeq << YAML::EndMap;
  out << YAML::Key << "walls" << YAML::Value << YAML::BeginSeq;
  for (const auto& w : s.walls) {
    out << YAML::BeginMap << YAML::Key << "a" << YAML::Value;
    pt(w.a);
    out << YAML::Key << "b" << YAML::Value;
    pt(w.b);
    out << YAML::Key << "attenuation_db" << YAML::Value << w.attenuation_db << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "receivers" << YAML::Value << YAML::BeginSeq;
  for (const auto& r : s.receivers) {
    out << YAML::BeginMap << YAML::Key << "id" << YAML::Value << r.id << YAML::Key << "position" << YAML::Value;
    pt(r.position);
    out << YAML::Key << "azimuth_deg" << YAML::Value << r.azimuth_rad / kDeg;
    out << YAML::Key << "port_offset_m" << YAML::Value << r.port_offset_m;
    out << YAML::Key << "max_gain_db" << YAML::Value << r.pattern.max_gain_db;
    out << YAML::Key << "front_to_back_db" << YAML::Value << r.pattern.front_to_back_db;
    out << YAML::Key << "clock_offset_ns" << YAML::Value << r.clock_offset_s * 1e9 << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "bands" << YAML::Value << YAML::BeginSeq;
  for (const auto& b : s.bands)
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "id" << YAML::Value << b.id << YAML::Key << "sample_rate"
        << YAML::Value << b.sample_rate << YAML::EndMap;
  out << YAML::EndSeq;
  out << YAML::Key << "cells" << YAML::Value << YAML::BeginSeq;
  for (const auto& c : s.cells) {
    out << YAML::BeginMap;
    out << YAML::Key << "earfcn" << YAML::Value << c.earfcn << YAML::Key << "pci" << YAML::Value << c.pci;
    out << YAML::Key << "band" << YAML::Value << static_cast<int>(c.band);
    out << YAML::Key << "n_prb" << YAML::Value << c.n_prb_ul;
    out << YAML::Key << "ul_offset_hz" << YAML::Value << c.ul_offset_hz;
    out << YAML::Key << "prach_subframes" << YAML::Value << YAML::Flow << c.prach_subframes;
    out << YAML::Key << "prach_root" << YAML::Value << c.prach_root;
    out << YAML::Key << "prach_prb_offset" << YAML::Value << c.prach_prb_offset << YAML::EndMap;
  }
  out << YAML::EndSeq;
  const auto& p = s.channel;
  out << YAML::Key << "channel" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "path_loss_exponent" << YAML::Value << p.path_loss_exponent;
  out << YAML::Key << "reference_loss_db" << YAML::Value << p.reference_loss_db;
  out << YAML::Key << "shadowing_db" << YAML::Value << p.shadowing_db;
  out << YAML::Key << "port_fading_db" << YAML::Value << p.port_fading_db;
  out << YAML::Key << "noise_figure_db" << YAML::Value << p.noise_figure_db;
  out << YAML::Key << "full_scale_dbm" << YAML::Value << p.full_scale_dbm << YAML::EndMap;
  out << YAML::Key << "ue" << YAML::Value << YAML::BeginMap << YAML::Key << "tx_power_dbm" << YAML::Value
      << s.ue_tx_power_dbm << YAML::EndMap;
  const auto& g = s.route_generator;
  out << YAML::Key << "routes" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "explicit" << YAML::Value << YAML::BeginSeq;
  for (const auto& r : s.routes) {
    out << YAML::Flow << YAML::BeginSeq;
    for (auto w : r.waypoints) pt(w);
    out << YAML::EndSeq;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "generator" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "inside" << YAML::Value << g.inside_routes;
  out << YAML::Key << "outside" << YAML::Value << g.outside_routes;
  out << YAML::Key << "margin_m" << YAML::Value << g.margin_m;
  out << YAML::Key << "outer_extent_m" << YAML::Value << g.outer_extent_m;
  out << YAML::Key << "waypoints" << YAML::Value << g.waypoints_per_route << YAML::EndMap;
  out << YAML::EndMap << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

// ---------------------------------------------------------------------------
// Routes

double route_length(const chan::Route& r) {
  double len = 0.0;
  for (std::size_t i = 1; i < r.waypoints.size(); ++i) len += distance(r.waypoints[i - 1], r.waypoints[i]);
  return len;
}

Vec2 point_on_route(const chan::Route& r, double fraction) {
  if (r.waypoints.empty()) throw InvalidParameter("route has no waypoints");
  const double total = route_length(r);
  if (r.waypoints.size() == 1 || total == 0.0) return r.waypoints.front();
  double left = std::clamp(fraction, 0.0, 1.0) * total;
  for (std::size_t i = 1; i < r.waypoints.size(); ++i) {
    const double seg = distance(r.waypoints[i - 1], r.waypoints[i]);
    if (left <= seg || i + 1 == r.waypoints.size()) {
      const double t = seg > 0.0 ? std::min(left / seg, 1.0) : 0.0;
      return r.waypoints[i - 1] + (r.waypoints[i] - r.waypoints[i - 1]) * t;
    }
    left -= seg;
  }
  return r.waypoints.back();
}

namespace {

struct Region {
  const chan::DeploymentScenario& s;
  bool inside;
  double margin;
  double min_x, max_x, min_y, max_y;

  bool ok(Vec2 p) const {
    if (p.x < min_x || p.x > max_x || p.y < min_y || p.y > max_y) return false;
    return s.inside(p) == inside && chan::distance_to_boundary(p, s.boundary) >= margin;
  }
  bool segment_ok(Vec2 a, Vec2 b) const {
    const int steps = std::max(1, static_cast<int>(std::ceil(distance(a, b) / 1.0)));
    for (int i = 0; i <= steps; ++i) {
      if (!ok(a + (b - a) * (static_cast<double>(i) / steps))) return false;
    }
    return true;
  }
};

chan::Route random_route(const Region& reg, int waypoints, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(reg.min_x, reg.max_x), uy(reg.min_y, reg.max_y);
  std::uniform_real_distribution<double> ang(0.0, 2.0 * kPi), step(10.0, 40.0);
  chan::Route r;
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const Vec2 p{ux(rng), uy(rng)};
    if (reg.ok(p)) {
      r.waypoints.push_back(p);
      break;
    }
  }
  if (r.waypoints.empty()) throw ConfigError("route generator: region is empty (check margin_m and outer_extent_m)");
  while (static_cast<int>(r.waypoints.size()) < waypoints) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      const double a = ang(rng);
      const Vec2 next = r.waypoints.back() + Vec2{std::cos(a), std::sin(a)} * step(rng);
      if (reg.segment_ok(r.waypoints.back(), next)) {
        r.waypoints.push_back(next);
        placed = true;
      }
    }
    if (!placed) break;  // boxed in: keep the shorter route
  }
  return r;
}

}  // namespace

std::vector<chan::Route> build_routes(const chan::DeploymentScenario& s, std::uint64_t seed) {
  std::vector<chan::Route> out = s.routes;
  const auto& g = s.route_generator;
  if (g.inside_routes == 0 && g.outside_routes == 0) return out;
  double min_x = s.boundary[0].x, max_x = min_x, min_y = s.boundary[0].y, max_y = min_y;
  for (auto p : s.boundary) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const Region in{s, true, g.margin_m, min_x, max_x, min_y, max_y};
  const Region outside{s,
                       false,
                       g.margin_m,
                       min_x - g.outer_extent_m,
                       max_x + g.outer_extent_m,
                       min_y - g.outer_extent_m,
                       max_y + g.outer_extent_m};
  for (int i = 0; i < g.inside_routes; ++i) {
    std::mt19937_64 rng(derive_seed(seed, 0x726f75, 0, i));
    out.push_back(random_route(in, g.waypoints_per_route, rng));
  }
  for (int i = 0; i < g.outside_routes; ++i) {
    std::mt19937_64 rng(derive_seed(seed, 0x726f75, 1, i));
    out.push_back(random_route(outside, g.waypoints_per_route, rng));
  }
  return out;
}

}  // namespace ltag::scenario
