#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "mswq/errors.hpp"
#include "mswq/network.hpp"

using namespace mswq;

namespace {

const char* kThreeNode = R"(
[nodes]
R1 = { kind = "reservoir" }
J1 = { kind = "junction" }
TK1 = { kind = "tank" }

[links]
Pump1 = { kind = "pump", from = "R1", to = "J1" }
Pipe1 = { kind = "pipe", from = "J1", to = "TK1", length = 1000.0, radius = 0.3 }

[tanks]
TK1 = { initial_volume = 200.0 }
)";

HydraulicProfile uniform_profile(const NetworkGraph& g, double v) {
  HydraulicProfile p;
  p.step_seconds = 3600.0;
  HydraulicStep s;
  s.velocity.assign(g.links().size(), v);
  s.flow.assign(g.links().size(), v);
  s.demand.assign(g.nodes().size(), 0.0);
  s.booster_flow.assign(g.nodes().size(), 0.0);
  s.volume.assign(g.nodes().size(), 100.0);
  p.steps.push_back(s);
  return p;
}

}  // namespace

TEST_CASE("three-node file parses to 3 nodes and 2 links") {
  auto g = parse_network(kThreeNode);
  CHECK(g.nodes().size() == 3);
  CHECK(g.links().size() == 2);
  CHECK(g.count(NodeKind::Tank) == 1);
  CHECK(g.nodes()[2].initial_volume == 200.0);
}

TEST_CASE("dangling reference is reported") {
  std::string text = R"(
[nodes]
R1 = { kind = "reservoir" }
[links]
P = { kind = "pipe", from = "R1", to = "J9", length = 10.0, radius = 0.1 }
)";
  CHECK_THROWS_WITH_AS(parse_network(text), doctest::Contains("J9"), ValidationError);
}

TEST_CASE("empty node list has no source node") {
  CHECK_THROWS_WITH_AS(parse_network("[nodes]\n"), doctest::Contains("no source node"), ValidationError);
}

TEST_CASE("syntax errors carry the line number") {
  CHECK_THROWS_WITH_AS(parse_network("[nodes]\nR1 = { kind = \n"), doctest::Contains("line 2"), ValidationError);
}

TEST_CASE("duplicate ids and bad geometry are rejected") {
  CHECK_THROWS_AS(NetworkGraph({{"R", NodeKind::Reservoir, 0}, {"R", NodeKind::Junction, 0}}, {}), ValidationError);
  CHECK_THROWS_AS(NetworkGraph({{"R", NodeKind::Reservoir, 0}, {"J", NodeKind::Junction, 0}},
                               {{"P", LinkKind::Pipe, "R", "J", 0.0, 0.1}}),
                  ValidationError);
}

TEST_CASE("round trip through the writer is lossless") {
  auto g = parse_network(kThreeNode);
  auto again = parse_network(format_network(g));
  CHECK(again == g);
}

TEST_CASE("segmentize floor formula") {
  NetworkGraph g({{"R", NodeKind::Reservoir, 0}, {"J", NodeKind::Junction, 0}, {"K", NodeKind::Junction, 0}},
                 {{"A", LinkKind::Pipe, "R", "J", 600.0, 0.2}, {"B", LinkKind::Pipe, "J", "K", 100.0, 0.2}});
  auto p = uniform_profile(g, 1.0);
  p.steps[0].velocity = {1.0, 0.3};
  auto plan = segmentize(g, p, 5.0);
  CHECK(plan.segments[0] == 120);
  CHECK(plan.segment_length[0] == doctest::Approx(5.0));
  CHECK(plan.segments[1] == 66);
  CHECK(plan.segment_length[1] == doctest::Approx(100.0 / 66.0));

  p.steps[0].velocity = {1.0, 0.0};
  auto stagnant = segmentize(g, p, 5.0);
  CHECK(stagnant.segments[1] == 1);
  CHECK(stagnant.warnings.size() == 1);
}

TEST_CASE("segmentize is monotone in dt") {
  auto g = parse_network(kThreeNode);
  auto p = uniform_profile(g, 0.7);
  int prev = 0;
  for (double dt : {20.0, 10.0, 7.0, 5.0, 3.0, 1.0}) {
    int s = segmentize(g, p, dt).segments[1];
    CHECK(s >= prev);
    prev = s;
  }
}

TEST_CASE("state counts for the three-node network") {
  auto g = parse_network(kThreeNode);
  for (auto [v, expected] : {std::pair{4.0 / 3.0, 154}, std::pair{1.0, 204}}) {
    auto plan = segmentize(g, uniform_profile(g, v), 5.0);
    StateIndexMap map(g, plan);
    CHECK(map.n_x() == expected);
  }
}

TEST_CASE("no pipes gives node plus pump count") {
  NetworkGraph g({{"R", NodeKind::Reservoir, 0}, {"J", NodeKind::Junction, 0}}, {{"M", LinkKind::Pump, "R", "J"}});
  StateIndexMap map(g, segmentize(g, uniform_profile(g, 1.0), 5.0));
  CHECK(map.n_x() == 3);
  CHECK(map.bilinear_states().empty());
}

TEST_CASE("state index map is a bijection with documented ordering") {
  auto g = parse_network(kThreeNode);
  auto plan = segmentize(g, uniform_profile(g, 1.0), 5.0);
  StateIndexMap map(g, plan);
  std::set<std::string> labels;
  for (int i = 0; i < map.n_x(); ++i) {
    CHECK(map.index_of(map.ref(i)) == i);
    labels.insert(map.label(g, i));
  }
  CHECK(labels.size() == static_cast<std::size_t>(map.n_x()));
  CHECK(map.node_state(0) == 0);  // reservoir
  CHECK(map.node_state(1) == 1);  // junction
  CHECK(map.node_state(2) == 2);  // tank
  CHECK(map.link_state(0) == 3);  // pump
  CHECK(map.pipe_segment(1, 0) == 4);
  CHECK(map.bilinear_states().size() == 201);
}

TEST_CASE("hydraulic diagnostics") {
  auto g = parse_network(kThreeNode);
  auto p = uniform_profile(g, 1.0);
  p.steps[0].demand[2] = 1.0;  // tank outflow balances inflow
  p.steps[0].volume[2] = 200.0;
  CHECK(validate_hydraulics(g, p).empty());

  auto bad = p;
  bad.steps[0].flow = {1.0, 0.5};
  bad.steps[0].demand[1] = 0.2;
  auto diags = validate_hydraulics(g, bad);
  REQUIRE(!diags.empty());
  CHECK(diags[0].kind == HydraulicDiagnostic::Kind::FlowBalance);
  CHECK(diags[0].element == "J1");
  CHECK(diags[0].residual == doctest::Approx(0.3));

  auto shrink = p;
  shrink.steps[0].demand[2] = 0.0;  // net inflow 1 m3/s
  shrink.steps.push_back(shrink.steps[0]);
  shrink.steps[1].volume[2] = 150.0;
  auto vd = validate_hydraulics(g, shrink);
  REQUIRE(vd.size() == 1);
  CHECK(vd[0].kind == HydraulicDiagnostic::Kind::VolumeConsistency);
}

TEST_CASE("hydraulics csv parse and round trip") {
  auto g = parse_network(kThreeNode);
  std::string csv =
      "step,element_id,velocity,flow,demand,volume\n"
      "0,Pump1,1,0.2,0,0\n0,Pipe1,1,0.2,0,0\n0,J1,0,0,0,0\n0,TK1,0,0,0.2,200\n";
  auto p = parse_hydraulics(csv, g, 3600.0);
  CHECK(p.steps.size() == 1);
  CHECK(p.steps[0].volume[2] == 200.0);
  auto again = parse_hydraulics(format_hydraulics(p, g), g, 3600.0);
  CHECK(again.steps[0].flow == p.steps[0].flow);
  CHECK(again.steps[0].demand == p.steps[0].demand);
  CHECK_THROWS_AS(parse_hydraulics("step,element_id,velocity,flow,demand,volume\n0,X,1,1,0,0\n", g, 3600.0),
                  ValidationError);
}

TEST_CASE("scenario validation") {
  auto g = parse_network(kThreeNode);
  auto sc = parse_scenario(R"(
[simulation]
horizon_s = 7200.0
dt_s = 5.0
hydraulic_step_s = 3600.0
[devices]
boosters = ["J1"]
intrusion_points = ["J1"]
chlorine_sensors = ["TK1"]
[intrusions]
a = { node = "J1", concentration = 0.1, start = 0.0, end = 3600.0 }
)");
  CHECK_NOTHROW(sc.validate(g));
  CHECK(sc.n_steps() == 1440);

  auto bad = sc;
  bad.hydraulic_step_s = 3601.0;
  CHECK_THROWS_AS(bad.validate(g), ValidationError);
  bad = sc;
  bad.intrusions[0].end = 9000.0;
  CHECK_THROWS_AS(bad.validate(g), ValidationError);
  bad = sc;
  bad.devices.boosters = {"R1"};
  CHECK_THROWS_AS(bad.validate(g), ValidationError);
  bad = sc;
  bad.reaction.kr = -1.0;
  CHECK_THROWS_AS(bad.validate(g), ValidationError);
}
