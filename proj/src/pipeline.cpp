#include "mswq/pipeline.hpp"

#include <chrono>

#include <spdlog/spdlog.h>

#include "mswq/errors.hpp"

namespace mswq {

std::string to_string(MorMethod m) {
  switch (m) {
    case MorMethod::Lpod: return "lpod";
    case MorMethod::Bpod: return "bpod";
    case MorMethod::Nlpod: return "nlpod";
  }
  return "unknown";
}

MorMethod parse_method(const std::string& s) {
  if (s == "lpod") return MorMethod::Lpod;
  if (s == "bpod") return MorMethod::Bpod;
  if (s == "nlpod") return MorMethod::Nlpod;
  throw ValidationError("unknown reduction method '" + s + "' (expected lpod, bpod or nlpod)");
}

RomBuild build_rom(const FullOrderModel& fom, const Vec& x0_physical, const RomOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  if (x0_physical.size() != fom.n_state()) throw ValidationError("initial state has wrong dimension");
  RomBuild b;
  b.method = o.method;
  auto model = std::make_shared<FullOrderModel>(shift_initial_conditions(fom, x0_physical - fom.x_offset));
  b.model = model;
  for (const auto& s : model->slices) b.nonlinear = b.nonlinear || !s.nonlinear.is_zero();
  b.snapshot_length = std::max(1, o.mor.snapshot_factor) * min_snapshot_length(*model);
  const int m = b.snapshot_length;
  spdlog::info("{}: snapshot length {} steps, {} states", to_string(o.method), m, model->n_state());

  if (o.snapshots) {
    const auto& c = *o.snapshots;
    if (c.X.rows() != model->n_state()) throw ValidationError("cached snapshots do not match the model's state size");
    if (o.method == MorMethod::Bpod && c.P.rows() != model->n_state())
      throw ValidationError("cached snapshots carry no adjoint snapshots for BPOD");
    if (o.method == MorMethod::Nlpod && b.nonlinear && c.F.rows() != model->n_state())
      throw ValidationError("cached snapshots carry no nonlinear snapshots for NLPOD");
  }

  if (o.method == MorMethod::Nlpod) {
    const Excitation ex = b.nonlinear ? nonlinear_excitation(*model, o.mor.impulse_ratio)
                                      : default_excitation(*model, o.mor.impulse_ratio, false);
    b.snapshots = o.snapshots ? *o.snapshots : collect_state_snapshots(*model, ex, m, b.nonlinear);
    b.rank = pod_rank(b.snapshots.X);
    const int nr = o.n_r < 0 ? b.rank : o.n_r;
    b.pair = pod_transform(b.snapshots.X, nr);
    const int nd = b.nonlinear ? std::min(nr, deim_rank(b.snapshots.F)) : 0;
    if (nd > 0) {
      if (nd < nr) spdlog::info("nlpod: DEIM size limited to the nonlinear snapshot rank {}", nd);
      b.deim = greedy_deim(b.snapshots.F, nd);
      b.rom = std::make_shared<ReducedModel>(reduce_model(*model, b.pair, &b.deim));
    } else {
      if (b.nonlinear) throw NumericalError("nonlinear snapshots carry no information for DEIM");
      b.rom = std::make_shared<ReducedModel>(reduce_model(*model, b.pair));
    }
  } else {
    b.lm = build_ldes(model, OperatingSchedule::from_state(*model, x0_physical, o.policy), o.horizon_s);
    const Excitation ex = default_excitation(*model, o.mor.impulse_ratio, true);
    b.snapshots = o.snapshots ? *o.snapshots : collect_state_snapshots(b.lm, ex, m);
    if (o.method == MorMethod::Lpod) {
      b.rank = pod_rank(b.snapshots.X);
      b.pair = pod_transform(b.snapshots.X, o.n_r < 0 ? b.rank : o.n_r);
    } else {
      Mat extra = Mat::Zero(static_cast<Eigen::Index>(o.adjoint_reactant_nodes.size()), model->n_state());
      for (std::size_t r = 0; r < o.adjoint_reactant_nodes.size(); ++r) {
        const auto n = model->graph.node_index(o.adjoint_reactant_nodes[r]);
        if (!n) throw ValidationError("unknown adjoint node '" + o.adjoint_reactant_nodes[r] + "'");
        extra(static_cast<Eigen::Index>(r), model->n_x + model->map.node_state(*n)) = 1.0;
      }
      if (!o.snapshots) b.snapshots.P = collect_adjoint_snapshots(b.lm, m, extra);
      b.rank = hankel_rank(b.snapshots.X, b.snapshots.P);
      b.pair = bpod_transform(b.snapshots.X, b.snapshots.P, o.n_r < 0 ? b.rank : o.n_r);
    }
    b.rom = std::make_shared<ReducedModel>(b.nonlinear ? reduce_model(b.lm, b.pair) : reduce_model(*model, b.pair));
  }
  b.offline_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  spdlog::info("{}: rank {} -> n_r {} in {:.2f}s", to_string(o.method), b.rank, b.pair.n_r, b.offline_s);
  return b;
}

Mat simulate_rom(const RomBuild& b, const Mat& U, int n_steps) {
  const Vec xr0 = Vec::Zero(b.rom->n_r);
  if (b.rom->kind == ReducedModel::Kind::Linearized) {
    LinearizedModel lm = b.lm;
    return simulate_reduced(*b.rom, xr0, U, n_steps, &lm);
  }
  return simulate_reduced(*b.rom, xr0, U, n_steps);
}

Mat simulate_reference(const RomBuild& b, const Mat& U, int n_steps) {
  const Vec x0 = Vec::Zero(b.model->n_state());
  if (b.method != MorMethod::Nlpod && b.nonlinear) {
    LinearizedModel lm = b.lm;
    return simulate_linear(lm, x0, U, n_steps).outputs;
  }
  return simulate(*b.model, x0, U, n_steps).outputs;
}

PipelinePlan route(ReactionKind kind, bool relaxed) {
  PipelinePlan p;
  switch (kind) {
    case ReactionKind::M1:
    case ReactionKind::M2:
      p.stages = {"assemble", "bpod", "mpc-linear"};
      p.method = MorMethod::Bpod;
      p.controller = ControllerKind::Linear;
      return p;
    case ReactionKind::M7:
      if (relaxed) {
        p.stages = {"assemble", "nlpod-deim", "mpc-mccormick"};
        p.method = MorMethod::Nlpod;
        p.controller = ControllerKind::Relaxed;
      } else {
        p.stages = {"assemble", "linearize", "bpod", "mpc-linear"};
        p.method = MorMethod::Bpod;
        p.controller = ControllerKind::Linearized;
      }
      return p;
    case ReactionKind::M3:
      throw OutOfScopeError(
          "M3 (parallel first-order) is an extension point: its dynamics are linear and map onto the M1/M2 "
          "path (BPOD with linear MPC) once its parallel decay terms are assembled");
    case ReactionKind::M4:
      throw OutOfScopeError(
          "M4 (parallel second-order) is an extension point: it is a special case of the M7 two-species "
          "machinery (linearization or NLPOD with McCormick relaxation) once its rate terms are assembled");
    case ReactionKind::M8:
      throw OutOfScopeError(
          "M8 (second-order, multiple components) is an extension point: it reuses the M7 machinery with one "
          "reactant block per component");
    case ReactionKind::M5:
    case ReactionKind::M6:
      throw OutOfScopeError("reaction model " + to_string(kind) +
                            " (n-th order) is out of scope: the framework's reaction table lists it as requiring "
                            "nonlinear reduction with piecewise relaxation, which is not implemented");
  }
  throw OutOfScopeError("unknown reaction model");
}

ScenarioConfig single_species(ScenarioConfig scenario) {
  scenario.reaction.kr = 0.0;
  return scenario;
}

}  // namespace mswq
