// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ltag/channel.hpp"

namespace ltag::scenario {

/// Parses a YAML scenario. Errors carry the offending field and line:
///   ConfigError("line 12: receivers[3].azimuth_deg: expected a number")
chan::DeploymentScenario parse_scenario(const std::string& yaml_text);
chan::DeploymentScenario load_scenario(const std::filesystem::path& path);
/// Writes a scenario back in the same schema (generated routes are not
/// expanded; the generator section is kept).
std::string dump_scenario(const chan::DeploymentScenario& s);

// ---------------------------------------------------------------------------
// UE routes

/// Explicit routes from the file followed by `route_generator` routes drawn
/// with `seed`. Inside routes come first within the generated block.
std::vector<chan::Route> build_routes(const chan::DeploymentScenario& s, std::uint64_t seed);

/// Point at `fraction` (0..1) of the route's arc length.
chan::Vec2 point_on_route(const chan::Route& r, double fraction);
double route_length(const chan::Route& r);

}  // namespace ltag::scenario
