#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mswq/linearize.hpp"
#include "mswq/mor.hpp"
#include "mswq/qp.hpp"

namespace mswq {

/// Four affine bounds on z = x1 * x2 over a box, stored as G [x1; x2; z] <= h:
///   z >= x1_lo x2 + x1 x2_lo - x1_lo x2_lo
///   z >= x1_hi x2 + x1 x2_hi - x1_hi x2_hi
///   z <= x1_hi x2 + x1 x2_lo - x1_hi x2_lo
///   z <= x1 x2_hi + x1_lo x2 - x1_lo x2_hi
struct McCormickEnvelope {
  double x1_lo = 0.0, x1_hi = 0.0, x2_lo = 0.0, x2_hi = 0.0;
  double beta = 0.0;  // -kr: scaling of the relaxed product in the chlorine balance
  Eigen::Matrix<double, 4, 3> G;
  Eigen::Vector4d h;

  double lower(double x1, double x2) const;
  double upper(double x1, double x2) const;
  bool contains(double x1, double x2, double tol = 0.0) const;
  bool admits(double x1, double x2, double z, double tol = 0.0) const;
};

McCormickEnvelope make_envelope(double x1_lo, double x1_hi, double x2_lo, double x2_hi, double kr);

/// Envelopes for every tank and pipe-segment element from the physical state.
/// The chlorine box is [min(x1_min, current min), max(x1_max, current max)];
/// the reactant box starts at min(0, current min) and its ceiling is the
/// regulatory x2_max when configured, otherwise the larger of the detected
/// intrusion concentration and the current network-wide reactant maximum.
/// `margin` moves each bound outward by margin * |bound| + 1e-3 (zero keeps the exact box).
std::vector<McCormickEnvelope> build_envelopes(const FullOrderModel& model, const Vec& x_physical,
                                               const ControlConfig& config, double kr, double detected_intrusion,
                                               double margin = 0.0);

/// Velocity-form model with state [dx; y]:
///   Phi = [[A, 0], [C A, I]],  Gamma = [[B, beta Gz], [C B, beta C Gz]],  beta = -kr.
struct AugmentedSystem {
  Mat Phi;
  Mat Gamma;
  int n_x = 0, n_u = 0, n_z = 0, n_y = 0;

  Vec step(const Vec& xa, const Vec& du, const Vec& dz) const;
};

AugmentedSystem augment_system(const Mat& A, const Mat& B, const Mat& C, const Mat& Gz, double kr);

/// Reduced dynamics lumped over each control interval of the prediction
/// window, inputs held within an interval:
///   x(i+1) = A_i x(i) + Bu_i u(i) + Bz_i z(i) + w_i,
///   y(i)   = C x(i) + Du u(i) + yc_i            (chlorine sensors only)
struct IntervalModel {
  std::vector<Mat> A, Bu, Bz;
  std::vector<Vec> w;
  Mat C, Du;
  std::vector<Vec> yc;  // n_pred + 1 entries, at each interval boundary
  Mat V1, V2;           // element rows of the lift (relaxed only)
  Vec off1, off2;
  int steps = 0;
  int n_pred() const { return static_cast<int>(A.size()); }
};

enum class ControllerKind { Linear, Linearized, Relaxed };
std::string to_string(ControllerKind k);

struct MpcProblem {
  QpProblem qp;
  // Decision vector: normalized input moves, relaxed products, envelope
  // slacks (one per element), then lower and upper output slacks.
  int n_v = 0, n_z = 0, n_e = 0, n_s = 0;
  int rows_input = 0, rows_output = 0, rows_slack = 0, rows_envelope = 0;
  Vec u_prev;
  Vec u_scale;
  double cost_per_unit = 0.0;  // $ per (mg/min) per interval
  int n_u() const { return static_cast<int>(u_prev.size()); }
  /// Absolute inputs u(0..n_ctl-1) of a decision vector, one column per move.
  Mat inputs(const Vec& decision, int n_ctl) const;
};

/// Dosing-cost QP over the interval model. With envelopes, relaxed products
/// z(i) for i < n_ctl join the decision vector and each element contributes
/// four rows per control move. The two upper planes of an element share one
/// cheaply priced slack across all moves, so predictions below the box floor
/// stay feasible with z on the lower planes.
MpcProblem build_qp(const IntervalModel& m, const ControlConfig& config, const Vec& x0, const Vec& y_offset,
                    const Vec& u_prev, const std::vector<McCormickEnvelope>* envelopes);

struct ControlAction {
  double time_s = 0.0;
  Vec u1;
  double objective = 0.0;  // dosing cost of the plan over the prediction window, $
  QpStatus status = QpStatus::MaxIterations;
  bool held = false;       // solver failed and the previous action was kept
  double solve_ms = 0.0;
  int iterations = 0;
  KktResiduals kkt;
  int qp_variables = 0;
  int qp_rows = 0;
  int envelope_rows = 0;
  double max_slack = 0.0;
  double max_envelope_slack = 0.0;
};

/// Receding-horizon controller running on a reduced model. Between control
/// instants the reduced state is propagated open loop with the applied inputs;
/// at each instant the measured chlorine channels are reset to the sensor
/// readings by a minimum-norm correction.
class MpcController {
 public:
  /// `model` is the full-order model the reduced model was projected from,
  /// `known_inputs` the reactant inputs (n_u2 x steps) the controller is told about.
  MpcController(std::shared_ptr<const FullOrderModel> model, std::shared_ptr<const ReducedModel> rom,
                ControllerKind kind, ControlConfig config, Mat known_inputs, OperatingPolicy policy = {});

  void reset(const Vec& x_physical, const Vec& u_prev);
  ControlAction act(int k, const Vec& y1_measured);
  void advance(int k, const Vec& u1_applied);

  int steps_per_interval() const { return steps_; }
  const ControlConfig& config() const { return config_; }
  ControllerKind kind() const { return kind_; }
  const Vec& reduced_state() const { return xr_; }
  Vec estimated_state() const;  // physical
  const std::vector<McCormickEnvelope>& envelopes() const { return envelopes_; }
  IntervalModel interval_model(int k) const;
  const MpcProblem& last_problem() const { return last_; }
  double kr() const { return kr_; }

 private:
  Vec known_at(int k) const;
  Vec full_known(int k) const;
  double detected_intrusion(int k) const;

  std::shared_ptr<const FullOrderModel> model_;
  std::shared_ptr<const ReducedModel> rom_;
  ControllerKind kind_;
  ControlConfig config_;
  Mat known_;
  int steps_ = 1;
  int n_u1_ = 0, n_y1_ = 0;
  double kr_ = 0.0;
  Vec xr_;
  Vec u_prev_;
  LinearizedModel lm_;
  std::unique_ptr<LinearizedRomStepper> stepper_;
  std::vector<McCormickEnvelope> envelopes_;
  MpcProblem last_;
  Vec warm_;
  bool have_warm_ = false;
};

struct ClosedLoopOptions {
  int n_steps = 0;
  std::vector<Disturbance> disturbances;
  bool check_envelopes = true;
};

struct ClosedLoopLog {
  std::vector<std::string> booster_ids;
  std::vector<ControlAction> actions;
  Mat outputs;  // plant outputs, n_y x (n_steps + 1)
  Mat inputs;   // applied booster inputs, n_u1 x n_steps
  double dt = 5.0;
  int envelope_checks = 0;
  int envelope_violations = 0;
  double worst_envelope_excess = 0.0;
  double wall_s = 0.0;

  std::string to_csv() const;  // time_s,booster_id,u_mg_per_min,objective,solve_ms
};

/// Runs the plant (a full-order model in its own coordinates) under the
/// controller. `plant_inputs` holds the physical plant inputs (n_u1 + n_u2 rows);
/// booster rows are overwritten by the controller. Disturbances overwrite the
/// plant chlorine at their node at the first step at or after their time.
ClosedLoopLog closed_loop_run(const FullOrderModel& plant, const Vec& x0_model, MpcController& controller,
                              const Mat& plant_inputs, const ClosedLoopOptions& options);

}  // namespace mswq
