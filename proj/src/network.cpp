#include "mswq/network.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "mswq/errors.hpp"
#include "mswq/toml_lite.hpp"

namespace mswq {

std::string to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Reservoir: return "reservoir";
    case NodeKind::Junction: return "junction";
    case NodeKind::Tank: return "tank";
  }
  return "?";
}

std::string to_string(LinkKind k) {
  switch (k) {
    case LinkKind::Pipe: return "pipe";
    case LinkKind::Pump: return "pump";
    case LinkKind::Valve: return "valve";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// NetworkGraph

NetworkGraph::NetworkGraph(std::vector<Node> nodes, std::vector<Link> links)
    : nodes_(std::move(nodes)), links_(std::move(links)) {
  bool has_source = false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (n.id.empty()) throw ValidationError("node with empty id");
    if (!node_ids_.emplace(n.id, i).second) throw ValidationError("duplicate node id '" + n.id + "'");
    if (n.kind == NodeKind::Tank && !(n.initial_volume > 0.0))
      throw ValidationError("tank '" + n.id + "' needs a positive initial volume");
    has_source = has_source || n.kind != NodeKind::Junction;
  }
  if (!has_source) throw ValidationError("no source node (a reservoir or tank is required)");
  for (std::size_t i = 0; i < links_.size(); ++i) {
    const auto& l = links_[i];
    if (l.id.empty()) throw ValidationError("link with empty id");
    if (!link_ids_.emplace(l.id, i).second || node_ids_.count(l.id))
      throw ValidationError("duplicate id '" + l.id + "'");
    auto f = node_ids_.find(l.from);
    auto t = node_ids_.find(l.to);
    if (f == node_ids_.end())
      throw ValidationError("link '" + l.id + "' references missing node '" + l.from + "'");
    if (t == node_ids_.end()) throw ValidationError("link '" + l.id + "' references missing node '" + l.to + "'");
    if (f->second == t->second) throw ValidationError("link '" + l.id + "' connects node '" + l.from + "' to itself");
    if (l.kind == LinkKind::Pipe && !(l.length > 0.0 && l.radius > 0.0))
      throw ValidationError("pipe '" + l.id + "' needs positive length and radius");
    from_.push_back(f->second);
    to_.push_back(t->second);
  }
}

std::optional<std::size_t> NetworkGraph::node_index(const std::string& id) const {
  auto it = node_ids_.find(id);
  if (it == node_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> NetworkGraph::link_index(const std::string& id) const {
  auto it = link_ids_.find(id);
  if (it == link_ids_.end()) return std::nullopt;
  return it->second;
}

std::size_t NetworkGraph::count(NodeKind k) const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [k](const Node& n) { return n.kind == k; }));
}

std::size_t NetworkGraph::count(LinkKind k) const {
  return static_cast<std::size_t>(std::count_if(links_.begin(), links_.end(), [k](const Link& l) { return l.kind == k; }));
}

namespace {

void check_units(const toml::Document& doc) {
  const auto* units = doc.section("units");
  if (!units) return;
  const std::map<std::string, std::string> expected = {
      {"length", "m"}, {"volume", "m3"}, {"time", "s"}, {"flow", "m3/s"}, {"concentration", "mg/L"}};
  for (const auto& [k, v] : units->table.entries) {
    auto it = expected.find(k);
    if (it == expected.end()) throw ValidationError("line " + std::to_string(v.line) + ": unknown unit key '" + k + "'");
    if (v.as_string() != it->second)
      throw ValidationError("line " + std::to_string(v.line) + ": unit for " + k + " must be " + it->second);
  }
}

double number_or(const toml::Table& t, const std::string& key, double fallback) {
  const auto* v = t.find(key);
  return v ? v->as_number() : fallback;
}

std::string string_field(const toml::Table& t, const std::string& key, int line) {
  const auto* v = t.find(key);
  if (!v) throw ValidationError("line " + std::to_string(line) + ": missing field '" + key + "'");
  return v->as_string();
}

}  // namespace

NetworkGraph parse_network(const std::string& text) {
  auto doc = toml::parse(text);
  check_units(doc);
  for (const auto& s : doc.sections)
    if (s.name != "nodes" && s.name != "links" && s.name != "tanks" && s.name != "units")
      throw ValidationError("line " + std::to_string(s.line) + ": unknown section [" + s.name + "]");

  std::vector<Node> nodes;
  if (const auto* sec = doc.section("nodes")) {
    for (const auto& [id, v] : sec->table.entries) {
      Node n;
      n.id = id;
      std::string kind = v.is_string() ? v.as_string() : string_field(v.as_table(), "kind", v.line);
      if (kind == "reservoir") n.kind = NodeKind::Reservoir;
      else if (kind == "junction") n.kind = NodeKind::Junction;
      else if (kind == "tank") n.kind = NodeKind::Tank;
      else throw ValidationError("line " + std::to_string(v.line) + ": unknown node kind '" + kind + "'");
      if (v.is_table()) n.initial_volume = number_or(v.as_table(), "initial_volume", 0.0);
      nodes.push_back(std::move(n));
    }
  }
  if (const auto* sec = doc.section("tanks")) {
    for (const auto& [id, v] : sec->table.entries) {
      auto it = std::find_if(nodes.begin(), nodes.end(), [&](const Node& n) { return n.id == id; });
      if (it == nodes.end() || it->kind != NodeKind::Tank)
        throw ValidationError("line " + std::to_string(v.line) + ": [tanks] entry '" + id + "' is not a tank node");
      it->initial_volume = v.is_number() ? v.as_number() : number_or(v.as_table(), "initial_volume", 0.0);
    }
  }
  std::vector<Link> links;
  if (const auto* sec = doc.section("links")) {
    for (const auto& [id, v] : sec->table.entries) {
      const auto& t = v.as_table();
      Link l;
      l.id = id;
      std::string kind = string_field(t, "kind", v.line);
      if (kind == "pipe") l.kind = LinkKind::Pipe;
      else if (kind == "pump") l.kind = LinkKind::Pump;
      else if (kind == "valve") l.kind = LinkKind::Valve;
      else throw ValidationError("line " + std::to_string(v.line) + ": unknown link kind '" + kind + "'");
      l.from = string_field(t, "from", v.line);
      l.to = string_field(t, "to", v.line);
      l.length = number_or(t, "length", 0.0);
      l.radius = number_or(t, "radius", 0.0);
      links.push_back(std::move(l));
    }
  }
  return NetworkGraph(std::move(nodes), std::move(links));
}

std::string format_network(const NetworkGraph& graph) {
  toml::Document doc;
  toml::Table units;
  units.set("length", toml::string("m"));
  units.set("volume", toml::string("m3"));
  doc.sections.push_back({"units", 0, units});
  toml::Table nodes, tanks, links;
  for (const auto& n : graph.nodes()) {
    toml::Table t;
    t.set("kind", toml::string(to_string(n.kind)));
    nodes.set(n.id, toml::table(t));
    if (n.kind == NodeKind::Tank) {
      toml::Table tk;
      tk.set("initial_volume", toml::number(n.initial_volume));
      tanks.set(n.id, toml::table(tk));
    }
  }
  for (const auto& l : graph.links()) {
    toml::Table t;
    t.set("kind", toml::string(to_string(l.kind)));
    t.set("from", toml::string(l.from));
    t.set("to", toml::string(l.to));
    if (l.kind == LinkKind::Pipe) {
      t.set("length", toml::number(l.length));
      t.set("radius", toml::number(l.radius));
    }
    links.set(l.id, toml::table(t));
  }
  doc.sections.push_back({"nodes", 0, nodes});
  doc.sections.push_back({"links", 0, links});
  if (!tanks.entries.empty()) doc.sections.push_back({"tanks", 0, tanks});
  return toml::format(doc);
}

// ---------------------------------------------------------------------------
// Hydraulics

std::size_t HydraulicProfile::step_at(double t) const {
  if (steps.empty()) throw ValidationError("hydraulic profile has no steps");
  double k = std::floor(t / step_seconds + 1e-9);
  if (k < 0) return 0;
  return std::min(static_cast<std::size_t>(k), steps.size() - 1);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ' && c != '\t' && c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_field(const std::string& s, int line) {
  if (s.empty()) return 0.0;
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("line " + std::to_string(line) + ": invalid number '" + s + "'");
  }
}

}  // namespace

HydraulicProfile parse_hydraulics(const std::string& csv, const NetworkGraph& graph, double step_seconds) {
  if (!(step_seconds > 0.0)) throw ValidationError("hydraulic step duration must be positive");
  HydraulicProfile profile;
  profile.step_seconds = step_seconds;
  std::istringstream in(csv);
  std::string raw;
  int line = 0;
  bool header = false;
  bool has_booster = false;
  std::vector<std::set<std::string>> seen;
  auto ensure_step = [&](std::size_t k) {
    while (profile.steps.size() <= k) {
      HydraulicStep s;
      s.velocity.assign(graph.links().size(), 0.0);
      s.flow.assign(graph.links().size(), 0.0);
      s.demand.assign(graph.nodes().size(), 0.0);
      s.booster_flow.assign(graph.nodes().size(), 0.0);
      s.volume.assign(graph.nodes().size(), 0.0);
      for (std::size_t i = 0; i < graph.nodes().size(); ++i) s.volume[i] = graph.nodes()[i].initial_volume;
      profile.steps.push_back(std::move(s));
      seen.emplace_back();
    }
  };
  while (std::getline(in, raw)) {
    ++line;
    auto first = raw.find_first_not_of(" \t\r");
    if (first == std::string::npos || raw[first] == '#') continue;
    auto cols = split_csv(raw);
    if (!header) {
      const std::vector<std::string> expected = {"step", "element_id", "velocity", "flow", "demand", "volume"};
      if (cols.size() < expected.size() || !std::equal(expected.begin(), expected.end(), cols.begin()))
        throw ValidationError("line " + std::to_string(line) +
                              ": expected header step,element_id,velocity,flow,demand,volume");
      if (cols.size() == 7 && cols[6] == "booster_flow") has_booster = true;
      else if (cols.size() != 6) throw ValidationError("line " + std::to_string(line) + ": unexpected header columns");
      header = true;
      continue;
    }
    if (cols.size() != (has_booster ? 7u : 6u))
      throw ValidationError("line " + std::to_string(line) + ": wrong number of columns");
    double kd = parse_field(cols[0], line);
    if (kd < 0 || kd != std::floor(kd)) throw ValidationError("line " + std::to_string(line) + ": step must be a nonnegative integer");
    auto k = static_cast<std::size_t>(kd);
    ensure_step(k);
    auto& s = profile.steps[k];
    const std::string& id = cols[1];
    if (!seen[k].insert(id).second)
      throw ValidationError("line " + std::to_string(line) + ": duplicate row for '" + id + "' at step " + cols[0]);
    if (auto li = graph.link_index(id)) {
      s.velocity[*li] = parse_field(cols[2], line);
      s.flow[*li] = parse_field(cols[3], line);
    } else if (auto ni = graph.node_index(id)) {
      s.demand[*ni] = parse_field(cols[4], line);
      if (graph.nodes()[*ni].kind == NodeKind::Tank) s.volume[*ni] = parse_field(cols[5], line);
      if (has_booster) s.booster_flow[*ni] = parse_field(cols[6], line);
    } else {
      throw ValidationError("line " + std::to_string(line) + ": unknown element '" + id + "'");
    }
  }
  if (!header) throw ValidationError("hydraulics file is empty");
  if (profile.steps.empty()) throw ValidationError("hydraulics file has no data rows");
  for (std::size_t k = 0; k < profile.steps.size(); ++k) {
    for (const auto& l : graph.links())
      if (!seen[k].count(l.id))
        throw ValidationError("hydraulic step " + std::to_string(k) + " has no row for link '" + l.id + "'");
    for (const auto& n : graph.nodes())
      if (n.kind != NodeKind::Reservoir && !seen[k].count(n.id))
        throw ValidationError("hydraulic step " + std::to_string(k) + " has no row for node '" + n.id + "'");
  }
  return profile;
}

std::string format_hydraulics(const HydraulicProfile& profile, const NetworkGraph& graph) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "step,element_id,velocity,flow,demand,volume,booster_flow\n";
  for (std::size_t k = 0; k < profile.steps.size(); ++k) {
    const auto& s = profile.steps[k];
    for (std::size_t i = 0; i < graph.links().size(); ++i)
      os << k << ',' << graph.links()[i].id << ',' << s.velocity[i] << ',' << s.flow[i] << ",0,0,0\n";
    for (std::size_t i = 0; i < graph.nodes().size(); ++i)
      os << k << ',' << graph.nodes()[i].id << ",0,0," << s.demand[i] << ',' << s.volume[i] << ','
         << s.booster_flow[i] << '\n';
  }
  return os.str();
}

std::vector<HydraulicDiagnostic> validate_hydraulics(const NetworkGraph& graph, const HydraulicProfile& profile) {
  std::vector<HydraulicDiagnostic> out;
  const auto& nodes = graph.nodes();
  for (std::size_t k = 0; k < profile.steps.size(); ++k) {
    const auto& s = profile.steps[k];
    std::vector<double> in(nodes.size(), 0.0), outflow(nodes.size(), 0.0);
    for (std::size_t l = 0; l < graph.links().size(); ++l) {
      double q = s.flow[l];
      std::size_t up = q >= 0 ? graph.from_node(l) : graph.to_node(l);
      std::size_t dn = q >= 0 ? graph.to_node(l) : graph.from_node(l);
      outflow[up] += std::fabs(q);
      in[dn] += std::fabs(q);
      if (graph.links()[l].kind == LinkKind::Pipe && s.velocity[l] * q < 0.0)
        out.push_back({HydraulicDiagnostic::Kind::SignMismatch, graph.links()[l].id, k, s.velocity[l]});
    }
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      if (nodes[n].kind == NodeKind::Junction) {
        double supply = in[n] + s.booster_flow[n];
        double draw = s.demand[n] + outflow[n];
        double residual = supply - draw;
        double scale = std::max({supply, draw, 1e-12});
        if (std::fabs(residual) > 1e-6 * scale)
          out.push_back({HydraulicDiagnostic::Kind::FlowBalance, nodes[n].id, k, residual});
      } else if (nodes[n].kind == NodeKind::Tank) {
        if (!(s.volume[n] > 0.0)) {
          out.push_back({HydraulicDiagnostic::Kind::NonPositiveVolume, nodes[n].id, k, s.volume[n]});
          continue;
        }
        if (k + 1 < profile.steps.size()) {
          double net = in[n] + s.booster_flow[n] - outflow[n] - s.demand[n];
          double expected = s.volume[n] + net * profile.step_seconds;
          double residual = profile.steps[k + 1].volume[n] - expected;
          if (std::fabs(residual) > 1e-6 * std::max(s.volume[n], 1e-12))
            out.push_back({HydraulicDiagnostic::Kind::VolumeConsistency, nodes[n].id, k, residual});
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Devices and segmentation

void DeviceLayout::validate(const NetworkGraph& graph, bool controlled) const {
  auto check_input_node = [&](const std::string& id, const char* what) {
    auto n = graph.node_index(id);
    if (!n) throw ValidationError(std::string(what) + " '" + id + "' is not a node of the network");
    if (graph.nodes()[*n].kind == NodeKind::Reservoir)
      throw ValidationError(std::string(what) + " '" + id + "' sits at a reservoir; set reservoir quality in [sources]");
  };
  auto check_sensor = [&](const std::string& id) {
    if (graph.node_index(id)) return;
    auto l = graph.link_index(id);
    if (l && graph.links()[*l].kind != LinkKind::Pipe) return;
    throw ValidationError("sensor '" + id + "' must be a node, pump or valve");
  };
  for (const auto& b : boosters) check_input_node(b, "booster");
  for (const auto& p : intrusion_points) check_input_node(p, "intrusion point");
  for (const auto& s : chlorine_sensors) check_sensor(s);
  for (const auto& s : reactant_sensors) check_sensor(s);
  if (controlled && (boosters.empty() || chlorine_sensors.empty()))
    throw ValidationError("controlled scenarios need at least one booster and one chlorine sensor");
}

SegmentationPlan segmentize(const NetworkGraph& graph, const HydraulicProfile& profile, double dt) {
  if (!(dt > 0.0)) throw ValidationError("water-quality time step must be positive");
  SegmentationPlan plan;
  plan.dt = dt;
  const auto& links = graph.links();
  plan.segments.assign(links.size(), 0);
  plan.segment_length.assign(links.size(), 0.0);
  plan.reference_velocity.assign(links.size(), 0.0);
  for (std::size_t i = 0; i < links.size(); ++i) {
    if (links[i].kind != LinkKind::Pipe) continue;
    double vref = 0.0;
    for (const auto& s : profile.steps) vref = std::max(vref, std::fabs(s.velocity[i]));
    plan.reference_velocity[i] = vref;
    int segs = 1;
    if (vref > 0.0) {
      double ratio = links[i].length / (vref * dt);
      segs = std::max(1, static_cast<int>(std::floor(ratio * (1.0 + 1e-12))));
    } else {
      std::string msg = "pipe '" + links[i].id + "' is stagnant over the whole profile; using a single segment";
      spdlog::warn(msg);
      plan.warnings.push_back(std::move(msg));
    }
    plan.segments[i] = segs;
    plan.segment_length[i] = links[i].length / segs;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// StateIndexMap

StateIndexMap::StateIndexMap(const NetworkGraph& graph, const SegmentationPlan& plan) {
  const auto& nodes = graph.nodes();
  const auto& links = graph.links();
  node_state_.assign(nodes.size(), -1);
  link_state_.assign(links.size(), -1);
  segments_.assign(links.size(), 0);
  for (NodeKind kind : {NodeKind::Reservoir, NodeKind::Junction, NodeKind::Tank}) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].kind != kind) continue;
      node_state_[i] = static_cast<int>(refs_.size());
      refs_.push_back({StateRef::Kind::Node, i, -1});
      if (kind == NodeKind::Tank) bilinear_.push_back(node_state_[i]);
    }
  }
  for (LinkKind kind : {LinkKind::Pump, LinkKind::Valve}) {
    for (std::size_t i = 0; i < links.size(); ++i) {
      if (links[i].kind != kind) continue;
      link_state_[i] = static_cast<int>(refs_.size());
      refs_.push_back({StateRef::Kind::Link, i, -1});
    }
  }
  for (std::size_t i = 0; i < links.size(); ++i) {
    if (links[i].kind != LinkKind::Pipe) continue;
    int s = plan.segments.at(i);
    if (s < 1) throw ValidationError("pipe '" + links[i].id + "' has no segments in the plan");
    segments_[i] = s;
    link_state_[i] = static_cast<int>(refs_.size());
    for (int k = 0; k < s; ++k) {
      bilinear_.push_back(static_cast<int>(refs_.size()));
      refs_.push_back({StateRef::Kind::Link, i, k});
    }
  }
}

int StateIndexMap::index_of(const StateRef& r) const {
  if (r.kind == StateRef::Kind::Node) return node_state_.at(r.element);
  if (r.segment < 0) return link_state_.at(r.element);
  return link_state_.at(r.element) + r.segment;
}

int StateIndexMap::element_state(const NetworkGraph& graph, const std::string& id) const {
  if (auto n = graph.node_index(id)) return node_state_[*n];
  if (auto l = graph.link_index(id)) {
    if (graph.links()[*l].kind != LinkKind::Pipe) return link_state_[*l];
  }
  throw ValidationError("element '" + id + "' has no single representative state");
}

std::string StateIndexMap::label(const NetworkGraph& graph, int index) const {
  const auto& r = refs_.at(index);
  if (r.kind == StateRef::Kind::Node) return graph.nodes()[r.element].id;
  const auto& id = graph.links()[r.element].id;
  if (r.segment < 0) return id;
  return id + "[" + std::to_string(r.segment + 1) + "]";
}

// ---------------------------------------------------------------------------
// Scenario

int ScenarioConfig::n_steps() const { return static_cast<int>(std::llround(horizon_s / dt)); }

namespace {

bool is_multiple(double a, double b) {
  double r = a / b;
  return std::fabs(r - std::round(r)) < 1e-9 * std::max(1.0, r);
}

ElementConcentration concentration_of(const toml::Value& v) {
  const auto& t = v.as_table();
  ElementConcentration c;
  c.chlorine = number_or(t, "chlorine", 0.0);
  c.reactant = number_or(t, "reactant", 0.0);
  return c;
}

std::vector<std::string> string_list(const toml::Table& t, const std::string& key) {
  std::vector<std::string> out;
  if (const auto* v = t.find(key))
    for (const auto& e : v->as_array()) out.push_back(e.as_string());
  return out;
}

}  // namespace

void ScenarioConfig::validate(const NetworkGraph& graph) const {
  if (!(dt > 0.0) || !(horizon_s > 0.0)) throw ValidationError("simulation: dt and horizon must be positive");
  if (!is_multiple(horizon_s, dt)) throw ValidationError("simulation: horizon must be a multiple of dt");
  if (!is_multiple(hydraulic_step_s, dt)) throw ValidationError("simulation: hydraulic step must be an integer multiple of dt");
  if (reaction.kr < 0.0) throw ValidationError("reaction: kr must be nonnegative");
  if (reaction.kb < 0.0 || reaction.kw < 0.0 || reaction.kf < 0.0 || reaction.cl < 0.0)
    throw ValidationError("reaction: rate constants must be nonnegative");
  auto nonneg = [](const ElementConcentration& c, const std::string& where) {
    if (c.chlorine < 0.0 || c.reactant < 0.0) throw ValidationError(where + ": concentrations must be nonnegative");
  };
  nonneg(initial_default, "initial");
  for (const auto& [id, c] : initial) {
    if (!graph.node_index(id) && !graph.link_index(id)) throw ValidationError("initial: unknown element '" + id + "'");
    nonneg(c, "initial." + id);
  }
  for (const auto& [id, c] : sources) {
    auto n = graph.node_index(id);
    if (!n || graph.nodes()[*n].kind != NodeKind::Reservoir)
      throw ValidationError("sources: '" + id + "' is not a reservoir");
    nonneg(c, "sources." + id);
  }
  devices.validate(graph, false);
  for (const auto& ev : intrusions) {
    if (std::find(devices.intrusion_points.begin(), devices.intrusion_points.end(), ev.node) ==
        devices.intrusion_points.end())
      throw ValidationError("intrusion at '" + ev.node + "' is not listed in devices.intrusion_points");
    if (ev.concentration < 0.0) throw ValidationError("intrusion concentration must be nonnegative");
    if (!(ev.start < ev.end && ev.end <= horizon_s + 1e-9))
      throw ValidationError("intrusion window must satisfy start < end <= horizon");
  }
  for (const auto& d : disturbances) {
    if (!graph.node_index(d.node)) throw ValidationError("disturbance at unknown node '" + d.node + "'");
    if (d.chlorine < 0.0) throw ValidationError("disturbance concentration must be nonnegative");
  }
  control.validate();
}

ScenarioConfig parse_scenario(const std::string& text) {
  auto doc = toml::parse(text);
  const std::set<std::string> known = {"simulation", "reaction",  "initial",       "sources",       "intrusions",
                                       "devices",    "control",   "linearization", "disturbances",  "mor"};
  for (const auto& s : doc.sections)
    if (!known.count(s.name))
      throw ValidationError("line " + std::to_string(s.line) + ": unknown section [" + s.name + "]");
  ScenarioConfig sc;
  if (const auto* s = doc.section("simulation")) {
    const auto& t = s->table;
    sc.horizon_s = number_or(t, "horizon_s", sc.horizon_s);
    sc.dt = number_or(t, "dt_s", sc.dt);
    sc.hydraulic_step_s = number_or(t, "hydraulic_step_s", sc.hydraulic_step_s);
    if (const auto* v = t.find("scheme")) sc.scheme = parse_scheme(v->as_string());
    if (const auto* v = t.find("relaxed")) sc.relaxed = v->as_bool();
  }
  if (const auto* s = doc.section("reaction")) {
    const auto& t = s->table;
    if (const auto* v = t.find("model")) sc.reaction.kind = parse_reaction_kind(v->as_string());
    sc.reaction.kb = number_or(t, "kb", 0.0);
    sc.reaction.kw = number_or(t, "kw", 0.0);
    sc.reaction.kf = number_or(t, "kf", 0.0);
    sc.reaction.kr = number_or(t, "kr", 0.0);
    sc.reaction.cl = number_or(t, "cl", 0.0);
  }
  if (const auto* s = doc.section("initial")) {
    for (const auto& [k, v] : s->table.entries) {
      if (k == "chlorine") sc.initial_default.chlorine = v.as_number();
      else if (k == "reactant") sc.initial_default.reactant = v.as_number();
      else sc.initial[k] = concentration_of(v);
    }
  }
  if (const auto* s = doc.section("sources"))
    for (const auto& [k, v] : s->table.entries) sc.sources[k] = concentration_of(v);
  if (const auto* s = doc.section("devices")) {
    const auto& t = s->table;
    sc.devices.boosters = string_list(t, "boosters");
    sc.devices.intrusion_points = string_list(t, "intrusion_points");
    sc.devices.chlorine_sensors = string_list(t, "chlorine_sensors");
    sc.devices.reactant_sensors = string_list(t, "reactant_sensors");
  }
  if (const auto* s = doc.section("intrusions")) {
    for (const auto& [k, v] : s->table.entries) {
      const auto& t = v.as_table();
      IntrusionEvent ev;
      ev.node = string_field(t, "node", v.line);
      ev.concentration = number_or(t, "concentration", 0.0);
      ev.start = number_or(t, "start", 0.0);
      ev.end = number_or(t, "end", 0.0);
      sc.intrusions.push_back(ev);
    }
  }
  if (const auto* s = doc.section("disturbances")) {
    for (const auto& [k, v] : s->table.entries) {
      const auto& t = v.as_table();
      Disturbance d;
      d.node = string_field(t, "node", v.line);
      d.time = number_or(t, "time", 0.0);
      d.chlorine = number_or(t, "chlorine", 0.0);
      sc.disturbances.push_back(d);
    }
  }
  if (const auto* s = doc.section("control")) {
    const auto& t = s->table;
    auto& c = sc.control;
    c.x1_min = number_or(t, "x1_min", c.x1_min);
    c.x1_max = number_or(t, "x1_max", c.x1_max);
    if (const auto* v = t.find("x1_cap")) c.x1_cap = v->as_number();
    if (const auto* v = t.find("x2_max")) c.x2_max = v->as_number();
    c.u1_min = number_or(t, "u1_min", c.u1_min);
    if (const auto* v = t.find("u1_max")) {
      c.u1_max.clear();
      if (v->is_number()) c.u1_max.push_back(v->as_number());
      else
        for (const auto& e : v->as_array()) c.u1_max.push_back(e.as_number());
    }
    c.unit_cost = number_or(t, "unit_cost", c.unit_cost);
    c.n_ctl = static_cast<int>(number_or(t, "n_ctl", c.n_ctl));
    c.n_pred = static_cast<int>(number_or(t, "n_pred", 2.0 * c.n_ctl));
    c.control_interval_s = number_or(t, "control_interval_s", c.control_interval_s);
    c.regularization = number_or(t, "regularization", c.regularization);
    c.slack_penalty_factor = number_or(t, "slack_penalty_factor", c.slack_penalty_factor);
    c.output_margin = number_or(t, "output_margin", c.output_margin);
    c.envelope_margin = number_or(t, "envelope_margin", c.envelope_margin);
    c.qp_max_iter = static_cast<int>(number_or(t, "qp_max_iter", c.qp_max_iter));
  }
  if (const auto* s = doc.section("linearization")) {
    const auto& t = s->table;
    sc.linearization.window_s = number_or(t, "window_s", sc.linearization.window_s);
    sc.linearization.early_update_s = number_or(t, "early_update_s", sc.linearization.early_update_s);
    sc.linearization.threshold = number_or(t, "threshold", sc.linearization.threshold);
  }
  if (const auto* s = doc.section("mor")) {
    const auto& t = s->table;
    sc.mor.impulse_ratio = number_or(t, "impulse_ratio", sc.mor.impulse_ratio);
    sc.mor.snapshot_factor = static_cast<int>(number_or(t, "snapshot_factor", sc.mor.snapshot_factor));
  }
  return sc;
}

}  // namespace mswq
