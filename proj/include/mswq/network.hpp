#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mswq/config.hpp"

namespace mswq {

enum class NodeKind { Reservoir, Junction, Tank };
enum class LinkKind { Pipe, Pump, Valve };

std::string to_string(NodeKind k);
std::string to_string(LinkKind k);

struct Node {
  std::string id;
  NodeKind kind = NodeKind::Junction;
  double initial_volume = 0.0;  // m3, tanks only

  bool operator==(const Node&) const = default;
};

struct Link {
  std::string id;
  LinkKind kind = LinkKind::Pipe;
  std::string from;
  std::string to;
  double length = 0.0;  // m, pipes only
  double radius = 0.0;  // m, pipes only

  bool operator==(const Link&) const = default;
};

/// Directed graph of a distribution network. Immutable once built; all
/// invariants (unique ids, existing distinct endpoints, positive pipe geometry,
/// at least one source) are checked by the constructor.
class NetworkGraph {
 public:
  NetworkGraph() = default;
  NetworkGraph(std::vector<Node> nodes, std::vector<Link> links);

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Link>& links() const { return links_; }

  std::optional<std::size_t> node_index(const std::string& id) const;
  std::optional<std::size_t> link_index(const std::string& id) const;
  std::size_t from_node(std::size_t link) const { return from_[link]; }
  std::size_t to_node(std::size_t link) const { return to_[link]; }

  std::size_t count(NodeKind k) const;
  std::size_t count(LinkKind k) const;

  bool operator==(const NetworkGraph& o) const { return nodes_ == o.nodes_ && links_ == o.links_; }

 private:
  std::vector<Node> nodes_;
  std::vector<Link> links_;
  std::map<std::string, std::size_t> node_ids_;
  std::map<std::string, std::size_t> link_ids_;
  std::vector<std::size_t> from_;
  std::vector<std::size_t> to_;
};

NetworkGraph parse_network(const std::string& text);
std::string format_network(const NetworkGraph& graph);

struct HydraulicStep {
  std::vector<double> velocity;      // per link, m/s, signed
  std::vector<double> flow;          // per link, m3/s, signed
  std::vector<double> demand;        // per node, m3/s
  std::vector<double> booster_flow;  // per node, m3/s
  std::vector<double> volume;        // per node, m3 (tanks)
};

struct HydraulicProfile {
  double step_seconds = 3600.0;
  std::vector<HydraulicStep> steps;

  std::size_t step_at(double t) const;
};

/// CSV with header `step,element_id,velocity,flow,demand,volume` and an
/// optional trailing `booster_flow` column.
HydraulicProfile parse_hydraulics(const std::string& csv, const NetworkGraph& graph, double step_seconds);
std::string format_hydraulics(const HydraulicProfile& profile, const NetworkGraph& graph);

struct DeviceLayout {
  std::vector<std::string> boosters;          // chlorine inputs u1
  std::vector<std::string> intrusion_points;  // reactant inputs u2
  std::vector<std::string> chlorine_sensors;  // y1
  std::vector<std::string> reactant_sensors;  // y2, evaluation-only

  std::size_t n_u1() const { return boosters.size(); }
  std::size_t n_u2() const { return intrusion_points.size(); }
  std::size_t n_y1() const { return chlorine_sensors.size(); }
  std::size_t n_y2() const { return reactant_sensors.size(); }

  void validate(const NetworkGraph& graph, bool controlled) const;
};

struct SegmentationPlan {
  double dt = 5.0;
  std::vector<int> segments;          // per link; 0 for pumps and valves
  std::vector<double> segment_length; // per link, m
  std::vector<double> reference_velocity;
  std::vector<std::string> warnings;
};

SegmentationPlan segmentize(const NetworkGraph& graph, const HydraulicProfile& profile, double dt);

/// Where a state lives: a node, a pump/valve, or one segment of a pipe.
struct StateRef {
  enum class Kind { Node, Link } kind = Kind::Node;
  std::size_t element = 0;
  int segment = -1;  // pipe segment counted from the link's `from` end; -1 otherwise

  bool operator==(const StateRef&) const = default;
};

/// Per-species state ordering: reservoirs, junctions, tanks, pumps, valves,
/// then pipe segments, each group in file order.
class StateIndexMap {
 public:
  StateIndexMap() = default;
  StateIndexMap(const NetworkGraph& graph, const SegmentationPlan& plan);

  int n_x() const { return static_cast<int>(refs_.size()); }
  int node_state(std::size_t node) const { return node_state_[node]; }
  int link_state(std::size_t link) const { return link_state_[link]; }  // pumps and valves
  int pipe_segment(std::size_t link, int segment) const { return link_state_[link] + segment; }
  int segments(std::size_t link) const { return segments_[link]; }
  const StateRef& ref(int index) const { return refs_[index]; }
  int index_of(const StateRef& r) const;

  /// State that represents an element's concentration as seen by a sensor or
  /// booster (nodes, pumps, valves).
  int element_state(const NetworkGraph& graph, const std::string& id) const;

  /// Tank and pipe-segment states, ascending: the support of the mutual reaction.
  const std::vector<int>& bilinear_states() const { return bilinear_; }

  std::string label(const NetworkGraph& graph, int index) const;

 private:
  std::vector<StateRef> refs_;
  std::vector<int> node_state_;
  std::vector<int> link_state_;
  std::vector<int> segments_;
  std::vector<int> bilinear_;
};

struct HydraulicDiagnostic {
  enum class Kind { FlowBalance, VolumeConsistency, NonPositiveVolume, SignMismatch } kind;
  std::string element;
  std::size_t step = 0;
  double residual = 0.0;
};

std::vector<HydraulicDiagnostic> validate_hydraulics(const NetworkGraph& graph, const HydraulicProfile& profile);

struct IntrusionEvent {
  std::string node;
  double concentration = 0.0;  // mg/L of reactant added at the node
  double start = 0.0;
  double end = 0.0;
};

struct Disturbance {
  std::string node;
  double time = 0.0;
  double chlorine = 0.0;  // plant chlorine at the node is overwritten with this value
};

struct ElementConcentration {
  double chlorine = 0.0;
  double reactant = 0.0;
};

struct ScenarioConfig {
  double horizon_s = 7200.0;
  double dt = 5.0;
  double hydraulic_step_s = 3600.0;
  Scheme scheme = Scheme::ImplicitUpwind;
  ReactionParams reaction;
  ElementConcentration initial_default;
  std::map<std::string, ElementConcentration> initial;  // per element id
  std::map<std::string, ElementConcentration> sources;  // reservoirs
  std::vector<IntrusionEvent> intrusions;
  std::vector<Disturbance> disturbances;
  DeviceLayout devices;
  ControlConfig control;
  OperatingPolicy linearization;
  MorSettings mor;
  bool relaxed = false;

  int n_steps() const;
  void validate(const NetworkGraph& graph) const;
};

ScenarioConfig parse_scenario(const std::string& text);

}  // namespace mswq
