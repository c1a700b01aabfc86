#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mswq/control.hpp"
#include "mswq/linearize.hpp"
#include "mswq/mor.hpp"

namespace mswq {

enum class MorMethod { Lpod, Bpod, Nlpod };
std::string to_string(MorMethod m);
MorMethod parse_method(const std::string& s);

struct RomOptions {
  MorMethod method = MorMethod::Bpod;
  int n_r = -1;  // -1 selects the numerical rank of the snapshots
  MorSettings mor;
  OperatingPolicy policy;
  double horizon_s = 7200.0;
  /// Reactant rows added to the adjoint output map for snapshot collection only
  /// (intrusion nodes assumed known).
  std::vector<std::string> adjoint_reactant_nodes;
  /// Previously collected snapshots (for example from a cache file) used
  /// instead of running the excitation again.
  const SnapshotSet* snapshots = nullptr;
};

struct RomBuild {
  std::shared_ptr<const FullOrderModel> model;  // IC-shifted model the reduction was built from
  std::shared_ptr<const ReducedModel> rom;
  LinearizedModel lm;  // linearized source for LPOD/BPOD
  TransformPair pair;
  DeimData deim;
  SnapshotSet snapshots;
  MorMethod method = MorMethod::Bpod;
  int rank = 0;  // numerical rank the transform was truncated from
  int snapshot_length = 0;
  bool nonlinear = false;
  double offline_s = 0.0;
};

/// Snapshots, transform and projection for one method. The model is shifted
/// to start from x0 (physical) first. Linear sources (no mutual reaction)
/// yield a linear reduced model for every method; nonlinear sources yield a
/// linearized model for LPOD/BPOD and a DEIM model for NLPOD.
RomBuild build_rom(const FullOrderModel& fom, const Vec& x0_physical, const RomOptions& options);

/// Reduced outputs along U from zero reduced state, n_y x (n_steps + 1).
Mat simulate_rom(const RomBuild& b, const Mat& U, int n_steps);
/// Matching full-order reference: nonlinear FOM for NLPOD, the linearized (or
/// linear) FOM for LPOD/BPOD, in the same shifted coordinates.
Mat simulate_reference(const RomBuild& b, const Mat& U, int n_steps);

// Framework routing over the reaction-model table.
struct PipelinePlan {
  std::vector<std::string> stages;
  MorMethod method = MorMethod::Bpod;
  ControllerKind controller = ControllerKind::Linear;
};

/// M1/M2: BPOD with linear MPC. M7: NLPOD with McCormick MPC when relaxed,
/// otherwise linearization, BPOD and linear MPC. M5/M6 are rejected as out of
/// scope, M3/M4/M8 as extension points.
PipelinePlan route(ReactionKind kind, bool relaxed);

/// Single-species counterpart of a scenario: the mutual reaction removed.
ScenarioConfig single_species(ScenarioConfig scenario);

}  // namespace mswq
