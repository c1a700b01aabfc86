#include "mswq/dynamics.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <iomanip>
#include <sstream>

#include "mswq/errors.hpp"

namespace mswq {

using Triplet = Eigen::Triplet<double>;

void NonlinearTerm::add_to(const Vec& x, Vec& out) const {
  for (std::size_t j = 0; j < index.size(); ++j) {
    const int i1 = index[j];
    const double v = alpha[j] * x[i1] * x[n_x + i1];
    out[i1] += v;
    out[n_x + i1] += v;
  }
}

Vec eval_nonlinear(const NonlinearTerm& term, const Vec& x) {
  Vec f = Vec::Zero(x.size());
  term.add_to(x, f);
  return f;
}

void ModelSlice::factorize() {
  if (identity_E) {
    lu.reset();
    return;
  }
  auto solver = std::make_shared<Eigen::SparseLU<SpMat>>();
  solver->compute(E);
  if (solver->info() != Eigen::Success) throw NumericalError("singular E matrix in assembled model");
  lu = std::move(solver);
}

Vec ModelSlice::solve_E(const Vec& rhs) const {
  if (identity_E) return rhs;
  return lu->solve(rhs);
}

Mat ModelSlice::solve_E(const Mat& rhs) const {
  if (identity_E) return rhs;
  return lu->solve(rhs);
}

Vec ModelSlice::solve_E_transpose(const Vec& rhs) const {
  if (identity_E) return rhs;
  return lu->transpose().solve(rhs);
}

int FullOrderModel::steps_per_slice() const { return static_cast<int>(std::llround(hydraulic_step_s / dt)); }

std::size_t FullOrderModel::slice_index(int k) const {
  std::size_t s = static_cast<std::size_t>(k / steps_per_slice());
  return std::min(s, slices.size() - 1);
}

const ModelSlice& FullOrderModel::slice_for_step(int k) const { return slices[slice_index(k)]; }

Vec FullOrderModel::full_input(const Vec& u) const {
  Vec full(n_inputs() + n_const);
  if (u.size() == 0) {
    full.head(n_inputs()).setZero();
  } else {
    if (u.size() != n_inputs()) throw ValidationError("input vector has wrong dimension");
    full.head(n_inputs()) = u;
  }
  full.tail(n_const).setOnes();
  return full;
}

std::vector<std::string> FullOrderModel::output_labels() const {
  std::vector<std::string> out;
  for (const auto& s : devices.chlorine_sensors) out.push_back(s);
  for (const auto& s : devices.reactant_sensors) out.push_back(s);
  return out;
}

double pipe_decay(const ReactionParams& r, double radius) {
  double wall = (r.kw + r.kf > 0.0) ? 2.0 * r.kw * r.kf / (radius * (r.kw + r.kf)) : 0.0;
  return r.kb + wall;
}

namespace {

struct LinkFlow {
  bool forward = true;
  double q = 0.0;  // magnitude
  int outlet = -1; // state whose concentration leaves the link
  std::size_t downstream = 0;
  std::size_t upstream = 0;
};

}  // namespace

ModelSlice assemble(const NetworkGraph& graph, const SegmentationPlan& plan, const StateIndexMap& map,
                    const DeviceLayout& devices, const ReactionParams& reaction, Scheme scheme, double dt,
                    const HydraulicStep& hyd) {
  const int nx = map.n_x();
  const auto& nodes = graph.nodes();
  const auto& links = graph.links();
  const bool implicit = scheme == Scheme::ImplicitUpwind;
  const bool reactive = reaction.kind == ReactionKind::M7;
  const double kr = reactive ? reaction.kr : 0.0;

  std::vector<Triplet> et, at;
  std::vector<Triplet> bt;
  Vec g = Vec::Zero(2 * nx);
  ModelSlice slice;
  slice.courant.assign(links.size(), 0.0);
  slice.direction.assign(links.size(), 0);
  slice.nonlinear.n_x = nx;
  std::vector<double> alpha(nx, 0.0);

  // Both species share transport; decay applies only to chlorine.
  auto put_a = [&](int row, int col, double v1, double v2) {
    if (v1 != 0.0) at.emplace_back(row, col, v1);
    if (v2 != 0.0) at.emplace_back(nx + row, nx + col, v2);
  };
  auto put_e = [&](int row, int col, double v) {
    et.emplace_back(row, col, v);
    et.emplace_back(nx + row, nx + col, v);
  };

  std::vector<LinkFlow> flows(links.size());
  for (std::size_t l = 0; l < links.size(); ++l) {
    auto& f = flows[l];
    double sign = links[l].kind == LinkKind::Pipe ? hyd.velocity[l] : hyd.flow[l];
    if (sign == 0.0) sign = hyd.flow[l];
    f.forward = sign >= 0.0;
    f.q = std::fabs(hyd.flow[l]);
    slice.direction[l] = f.q == 0.0 ? 0 : (f.forward ? 1 : -1);
    f.upstream = f.forward ? graph.from_node(l) : graph.to_node(l);
    f.downstream = f.forward ? graph.to_node(l) : graph.from_node(l);
    if (links[l].kind == LinkKind::Pipe) {
      int s = map.segments(l);
      f.outlet = map.pipe_segment(l, f.forward ? s - 1 : 0);
    } else {
      f.outlet = map.link_state(l);
    }
  }

  std::vector<int> booster_col(nodes.size(), -1), intrusion_col(nodes.size(), -1);
  for (std::size_t b = 0; b < devices.boosters.size(); ++b) booster_col[*graph.node_index(devices.boosters[b])] = static_cast<int>(b);
  for (std::size_t b = 0; b < devices.intrusion_points.size(); ++b)
    intrusion_col[*graph.node_index(devices.intrusion_points[b])] = static_cast<int>(devices.n_u1() + b);

  for (std::size_t n = 0; n < nodes.size(); ++n) {
    const int row = map.node_state(n);
    double qin = 0.0, qout = 0.0;
    for (std::size_t l = 0; l < links.size(); ++l) {
      if (flows[l].q == 0.0) continue;
      if (flows[l].downstream == n) qin += flows[l].q;
      if (flows[l].upstream == n) qout += flows[l].q;
    }
    switch (nodes[n].kind) {
      case NodeKind::Reservoir:
        put_e(row, row, 1.0);
        put_a(row, row, 1.0, 1.0);
        break;
      case NodeKind::Junction: {
        const double den = hyd.demand[n] + qout;
        if (!(den > 0.0))
          throw ValidationError("degenerate junction '" + nodes[n].id + "': zero outflow plus demand");
        put_e(row, row, 1.0);
        for (std::size_t l = 0; l < links.size(); ++l) {
          if (flows[l].q == 0.0 || flows[l].downstream != n) continue;
          const double w = flows[l].q / den;
          if (implicit) put_e(row, flows[l].outlet, -w);
          else put_a(row, flows[l].outlet, w, w);
        }
        if (booster_col[n] >= 0) bt.emplace_back(row, booster_col[n], 1.0 / (60000.0 * den));
        if (intrusion_col[n] >= 0) bt.emplace_back(nx + row, intrusion_col[n], 1.0);
        break;
      }
      case NodeKind::Tank: {
        const double vol = hyd.volume[n];
        const double drain = qout + hyd.demand[n];
        const double vnext = vol + (qin + hyd.booster_flow[n] - drain) * dt;
        if (!(vol > 0.0) || !(vnext > 0.0))
          throw NumericalError("tank '" + nodes[n].id + "' volume is not positive over the step");
        const double kb = reaction.kb;
        put_e(row, row, 1.0);
        put_a(row, row, (vol - drain * dt - kb * vol * dt) / vnext, (vol - drain * dt) / vnext);
        for (std::size_t l = 0; l < links.size(); ++l) {
          if (flows[l].q == 0.0 || flows[l].downstream != n) continue;
          const double w = flows[l].q * dt / vnext;
          put_a(row, flows[l].outlet, w, w);
        }
        if (booster_col[n] >= 0) bt.emplace_back(row, booster_col[n], dt / (60000.0 * vnext));
        if (intrusion_col[n] >= 0) bt.emplace_back(nx + row, intrusion_col[n], qin * dt / vnext);
        alpha[row] = -kr * dt * vol / vnext;
        if (reaction.kind == ReactionKind::M2) g[row] = kb * dt * reaction.cl * vol / vnext;
        break;
      }
    }
  }

  for (std::size_t l = 0; l < links.size(); ++l) {
    const auto& f = flows[l];
    if (links[l].kind != LinkKind::Pipe) {
      const int row = map.link_state(l);
      put_e(row, row, 1.0);
      const int up = map.node_state(f.upstream);
      if (f.q == 0.0) put_a(row, row, 1.0, 1.0);
      else if (implicit) put_e(row, up, -1.0);
      else put_a(row, up, 1.0, 1.0);
      continue;
    }
    const int s = map.segments(l);
    const double dx = plan.segment_length[l];
    double lambda = std::fabs(hyd.velocity[l]) * dt / dx;
    if (!implicit && lambda > 1.0) {
      if (lambda > 1.0 + 1e-9) {
        std::ostringstream msg;
        msg << "CFL violation in pipe '" << links[l].id << "': Courant number " << lambda << " > 1";
        throw ValidationError(msg.str());
      }
      lambda = 1.0;
    }
    slice.courant[l] = lambda;
    const double k = pipe_decay(reaction, links[l].radius);
    for (int seg = 0; seg < s; ++seg) {
      const int row = map.pipe_segment(l, seg);
      int up;
      if (f.forward) up = seg == 0 ? map.node_state(f.upstream) : row - 1;
      else up = seg == s - 1 ? map.node_state(f.upstream) : row + 1;
      if (implicit) {
        put_e(row, row, 1.0 + lambda);
        if (lambda > 0.0) put_e(row, up, -lambda);
        put_a(row, row, 1.0 - k * dt, 1.0);
      } else {
        put_a(row, row, 1.0 - lambda - k * dt, 1.0 - lambda);
        if (lambda > 0.0) put_a(row, up, lambda, lambda);
      }
      alpha[row] = -kr * dt;
      if (reaction.kind == ReactionKind::M2) g[row] = k * dt * reaction.cl;
    }
  }

  const int n = 2 * nx;
  slice.A.resize(n, n);
  slice.A.setFromTriplets(at.begin(), at.end());
  slice.identity_E = !implicit;
  if (implicit) {
    slice.E.resize(n, n);
    slice.E.setFromTriplets(et.begin(), et.end());
  } else {
    slice.E.resize(n, n);
    slice.E.setIdentity();
  }
  slice.B.resize(n, static_cast<int>(devices.n_u1() + devices.n_u2()));
  slice.B.setFromTriplets(bt.begin(), bt.end());

  std::vector<Triplet> ct;
  int r = 0;
  for (const auto& id : devices.chlorine_sensors) ct.emplace_back(r++, map.element_state(graph, id), 1.0);
  for (const auto& id : devices.reactant_sensors) ct.emplace_back(r++, nx + map.element_state(graph, id), 1.0);
  slice.C.resize(r, n);
  slice.C.setFromTriplets(ct.begin(), ct.end());
  slice.D = Mat::Zero(r, slice.B.cols());
  slice.g = g;
  slice.h = Vec::Zero(r);

  for (int i : map.bilinear_states()) slice.nonlinear.index.push_back(i);
  slice.nonlinear.alpha.resize(static_cast<Eigen::Index>(slice.nonlinear.index.size()));
  for (std::size_t j = 0; j < slice.nonlinear.index.size(); ++j)
    slice.nonlinear.alpha[static_cast<Eigen::Index>(j)] = alpha[slice.nonlinear.index[j]];
  slice.factorize();
  return slice;
}

FullOrderModel build_model(const NetworkGraph& graph, const HydraulicProfile& profile, const ScenarioConfig& scenario) {
  scenario.validate(graph);
  switch (scenario.reaction.kind) {
    case ReactionKind::M1:
    case ReactionKind::M2:
    case ReactionKind::M7:
      break;
    default:
      throw OutOfScopeError("reaction model " + to_string(scenario.reaction.kind) +
                            " is not assembled; only M1, M2 and M7 are available");
  }
  if (std::fabs(profile.step_seconds - scenario.hydraulic_step_s) > 1e-9)
    throw ValidationError("hydraulic profile step does not match the scenario hydraulic step");
  FullOrderModel m;
  m.graph = graph;
  m.plan = segmentize(graph, profile, scenario.dt);
  m.map = StateIndexMap(graph, m.plan);
  m.devices = scenario.devices;
  m.scheme = scenario.scheme;
  m.reaction = scenario.reaction;
  m.dt = scenario.dt;
  m.hydraulic_step_s = scenario.hydraulic_step_s;
  m.n_x = m.map.n_x();
  const std::size_t needed = static_cast<std::size_t>(std::ceil(scenario.horizon_s / scenario.hydraulic_step_s - 1e-9));
  const std::size_t count = std::max<std::size_t>(1, std::min(needed, profile.steps.size()));
  for (std::size_t k = 0; k < count; ++k)
    m.slices.push_back(assemble(graph, m.plan, m.map, m.devices, m.reaction, m.scheme, m.dt, profile.steps[k]));
  m.x_offset = Vec::Zero(m.n_state());
  bool affine = false;
  for (const auto& s : m.slices) affine = affine || s.g.cwiseAbs().maxCoeff() > 0.0;
  if (affine) {
    // Fold the stable-component constant into an always-one channel.
    m.n_const = 1;
    for (auto& s : m.slices) {
      SpMat gcol = s.g.sparseView();
      SpMat b(s.B.rows(), s.B.cols() + 1);
      std::vector<Triplet> t;
      for (int c = 0; c < s.B.outerSize(); ++c)
        for (SpMat::InnerIterator it(s.B, c); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
      for (SpMat::InnerIterator it(gcol, 0); it; ++it) t.emplace_back(it.row(), s.B.cols(), it.value());
      b.setFromTriplets(t.begin(), t.end());
      s.B = std::move(b);
      s.D.conservativeResize(Eigen::NoChange, s.D.cols() + 1);
      s.D.col(s.D.cols() - 1).setZero();
      s.g.setZero();
    }
  }
  return m;
}

Vec initial_state(const FullOrderModel& model, const ScenarioConfig& scenario) {
  const int nx = model.n_x;
  Vec x(2 * nx);
  x.head(nx).setConstant(scenario.initial_default.chlorine);
  x.tail(nx).setConstant(scenario.initial_default.reactant);
  const auto& g = model.graph;
  auto set_element = [&](const std::string& id, const ElementConcentration& c) {
    if (auto n = g.node_index(id)) {
      int i = model.map.node_state(*n);
      x[i] = c.chlorine;
      x[nx + i] = c.reactant;
      return;
    }
    auto l = g.link_index(id);
    if (!l) throw ValidationError("initial: unknown element '" + id + "'");
    if (g.links()[*l].kind != LinkKind::Pipe) {
      int i = model.map.link_state(*l);
      x[i] = c.chlorine;
      x[nx + i] = c.reactant;
      return;
    }
    for (int s = 0; s < model.map.segments(*l); ++s) {
      int i = model.map.pipe_segment(*l, s);
      x[i] = c.chlorine;
      x[nx + i] = c.reactant;
    }
  };
  for (const auto& [id, c] : scenario.initial) set_element(id, c);
  for (const auto& [id, c] : scenario.sources) set_element(id, c);
  return x - model.x_offset;
}

Mat scenario_inputs(const FullOrderModel& model, const ScenarioConfig& scenario) {
  const int n = scenario.n_steps();
  Mat U = Mat::Zero(model.n_inputs(), n);
  for (const auto& ev : scenario.intrusions) {
    auto it = std::find(model.devices.intrusion_points.begin(), model.devices.intrusion_points.end(), ev.node);
    const int row = model.n_u1() + static_cast<int>(it - model.devices.intrusion_points.begin());
    for (int k = 0; k < n; ++k) {
      const double t = k * model.dt;
      if (t + 1e-9 >= ev.start && t + 1e-9 < ev.end) U(row, k) += ev.concentration;
    }
  }
  return U;
}

Vec step(const FullOrderModel& model, const Vec& x, const Vec& u, int k) {
  const auto& s = model.slice_for_step(k);
  Vec rhs = s.A * x + s.B * model.full_input(u);
  s.nonlinear.add_to(x, rhs);
  return s.solve_E(rhs);
}

Vec output(const FullOrderModel& model, const Vec& x, const Vec& u, int k) {
  const auto& s = model.slice_for_step(k);
  return s.C * x + s.D * model.full_input(u) + s.h;
}

Trajectory simulate(const FullOrderModel& model, const Vec& x0, const Mat& U, int n_steps, int stride,
                    bool keep_nonlinear) {
  if (x0.size() != model.n_state()) throw ValidationError("initial state has wrong dimension");
  if (U.cols() != 0 && (U.cols() < n_steps || U.rows() != model.n_inputs()))
    throw ValidationError("input schedule does not cover the horizon");
  stride = std::max(stride, 1);
  Trajectory tr;
  tr.dt = model.dt;
  tr.stride = stride;
  tr.states.resize(model.n_state(), n_steps / stride + 1);
  tr.outputs.resize(model.n_y(), n_steps + 1);
  if (keep_nonlinear) tr.nonlinear.resize(model.n_state(), n_steps);
  Vec empty;
  auto input_at = [&](int k) -> Vec { return U.cols() == 0 ? empty : Vec(U.col(std::min<Eigen::Index>(k, U.cols() - 1))); };
  Vec x = x0;
  for (int k = 0; k <= n_steps; ++k) {
    Vec u = input_at(k);
    if (k % stride == 0) tr.states.col(k / stride) = x;
    tr.outputs.col(k) = output(model, x, u, k);
    if (k == n_steps) break;
    const auto& s = model.slice_for_step(k);
    if (keep_nonlinear) tr.nonlinear.col(k) = eval_nonlinear(s.nonlinear, x);
    x = step(model, x, u, k);
    if (!x.allFinite()) throw NumericalError("non-finite state at step " + std::to_string(k + 1));
  }
  return tr;
}

FullOrderModel shift_initial_conditions(const FullOrderModel& model, const Vec& x0) {
  if (x0.size() != model.n_state()) throw ValidationError("shift: x0 has wrong dimension");
  FullOrderModel out = model;
  const int nx = model.n_x;
  const bool had_const = model.n_const > 0;
  out.n_const = 1;
  for (auto& s : out.slices) {
    const auto& nl = s.nonlinear;
    std::vector<Triplet> extra;
    Vec fx0 = eval_nonlinear(nl, x0);
    for (std::size_t j = 0; j < nl.size(); ++j) {
      const int i1 = nl.index[j], i2 = nx + i1;
      const double a = nl.alpha[static_cast<Eigen::Index>(j)];
      if (a == 0.0) continue;
      for (int row : {i1, i2}) {
        extra.emplace_back(row, i1, a * x0[i2]);
        extra.emplace_back(row, i2, a * x0[i1]);
      }
    }
    SpMat delta(s.A.rows(), s.A.cols());
    delta.setFromTriplets(extra.begin(), extra.end());
    Vec constant = s.A * x0 - s.E * x0 + s.g + fx0;
    s.A = s.A + delta;
    s.g.setZero();
    Vec hcol = s.C * x0 + s.h;
    s.h.setZero();
    if (had_const) {
      // Existing constant channel is the last column: add onto it.
      Vec last = Vec(s.B.col(s.B.cols() - 1)) + constant;
      SpMat b = s.B;
      for (SpMat::InnerIterator it(b, b.cols() - 1); it; ++it) it.valueRef() = 0.0;
      b.prune(0.0);
      std::vector<Triplet> t;
      for (int c = 0; c < b.outerSize(); ++c)
        for (SpMat::InnerIterator it(b, c); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
      for (Eigen::Index i = 0; i < last.size(); ++i)
        if (last[i] != 0.0) t.emplace_back(static_cast<int>(i), static_cast<int>(b.cols() - 1), last[i]);
      s.B.setFromTriplets(t.begin(), t.end());
      s.D.col(s.D.cols() - 1) += hcol;
    } else {
      std::vector<Triplet> t;
      for (int c = 0; c < s.B.outerSize(); ++c)
        for (SpMat::InnerIterator it(s.B, c); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
      const int col = static_cast<int>(s.B.cols());
      for (Eigen::Index i = 0; i < constant.size(); ++i)
        if (constant[i] != 0.0) t.emplace_back(static_cast<int>(i), col, constant[i]);
      SpMat b(s.B.rows(), col + 1);
      b.setFromTriplets(t.begin(), t.end());
      s.B = std::move(b);
      s.D.conservativeResize(Eigen::NoChange, s.D.cols() + 1);
      s.D.col(s.D.cols() - 1) = hcol;
    }
  }
  out.x_offset = model.x_offset + x0;
  return out;
}

std::string format_trajectory_csv(const FullOrderModel& model, const Trajectory& traj, bool include_states) {
  std::ostringstream os;
  os << std::setprecision(12);
  os << "time_s,state_or_sensor_id,species,value_mg_per_L\n";
  const auto labels = model.output_labels();
  const std::size_t n1 = model.devices.n_y1();
  for (Eigen::Index k = 0; k < traj.outputs.cols(); ++k) {
    const double t = static_cast<double>(k) * traj.dt;
    for (std::size_t r = 0; r < labels.size(); ++r)
      os << t << ',' << labels[r] << ',' << (r < n1 ? "chlorine" : "reactant") << ','
         << traj.outputs(static_cast<Eigen::Index>(r), k) << '\n';
  }
  if (include_states) {
    for (Eigen::Index c = 0; c < traj.states.cols(); ++c) {
      const double t = static_cast<double>(c * traj.stride) * traj.dt;
      for (int i = 0; i < model.n_state(); ++i) {
        const int base = i % model.n_x;
        os << t << ",state:" << model.map.label(model.graph, base) << ',' << (i < model.n_x ? "chlorine" : "reactant")
           << ',' << traj.states(i, c) + model.x_offset[i] << '\n';
      }
    }
  }
  return os.str();
}

}  // namespace mswq
