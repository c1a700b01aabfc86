#pragma once

// Small network builders shared by the unit and acceptance suites.

#include <cmath>
#include <numbers>
#include <string>

#include "mswq/dynamics.hpp"

namespace fixtures {

inline mswq::NetworkGraph three_node(double length = 1000.0, double radius = 0.3, double tank_volume = 200.0) {
  using namespace mswq;
  return NetworkGraph({{"R1", NodeKind::Reservoir, 0.0}, {"J1", NodeKind::Junction, 0.0}, {"TK1", NodeKind::Tank, tank_volume}},
                      {{"Pump1", LinkKind::Pump, "R1", "J1"}, {"Pipe1", LinkKind::Pipe, "J1", "TK1", length, radius}});
}

/// Static profile: same flow through pump and pipe, tank drained at the same
/// rate so its volume stays constant.
inline mswq::HydraulicProfile static_profile(const mswq::NetworkGraph& g, double velocity, double radius,
                                             double step_seconds = 3600.0, int steps = 1) {
  using namespace mswq;
  const double q = std::numbers::pi * radius * radius * velocity;
  HydraulicProfile p;
  p.step_seconds = step_seconds;
  for (int k = 0; k < steps; ++k) {
    HydraulicStep s;
    s.velocity.assign(g.links().size(), velocity);
    s.flow.assign(g.links().size(), q);
    s.demand.assign(g.nodes().size(), 0.0);
    s.booster_flow.assign(g.nodes().size(), 0.0);
    s.volume.assign(g.nodes().size(), 0.0);
    for (std::size_t i = 0; i < g.nodes().size(); ++i) {
      if (g.nodes()[i].kind == NodeKind::Tank) {
        s.demand[i] = q;
        s.volume[i] = g.nodes()[i].initial_volume;
      }
    }
    p.steps.push_back(s);
  }
  return p;
}

struct ThreeNodeOptions {
  double length = 1000.0;
  double radius = 0.3;
  double velocity = 1.0;
  double tank_volume = 200.0;
  double dt = 5.0;
  double horizon = 7200.0;
  double kb = 1e-5;
  double kr = 2e-4;
  mswq::Scheme scheme = mswq::Scheme::ImplicitUpwind;
  mswq::ReactionKind kind = mswq::ReactionKind::M7;
};

inline mswq::ScenarioConfig three_node_scenario(const ThreeNodeOptions& o) {
  mswq::ScenarioConfig sc;
  sc.horizon_s = o.horizon;
  sc.dt = o.dt;
  sc.hydraulic_step_s = o.horizon;
  sc.scheme = o.scheme;
  sc.reaction.kind = o.kind;
  sc.reaction.kb = o.kb;
  sc.reaction.kr = o.kr;
  sc.devices.boosters = {"J1"};
  sc.devices.intrusion_points = {"J1"};
  sc.devices.chlorine_sensors = {"J1", "TK1"};
  sc.devices.reactant_sensors = {"TK1"};
  return sc;
}

inline mswq::FullOrderModel three_node_model(const ThreeNodeOptions& o, mswq::ScenarioConfig* out = nullptr) {
  auto g = three_node(o.length, o.radius, o.tank_volume);
  auto sc = three_node_scenario(o);
  auto prof = static_profile(g, o.velocity, o.radius, sc.hydraulic_step_s);
  if (out) *out = sc;
  return mswq::build_model(g, prof, sc);
}

}  // namespace fixtures
