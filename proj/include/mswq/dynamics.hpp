#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <memory>
#include <string>
#include <vector>

#include "mswq/network.hpp"

namespace mswq {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Mutual-reaction term f(x). Every registered element j has a chlorine state
/// index[j] and a reactant state n_x + index[j]; both rows receive
/// alpha[j] * x1 * x2.
struct NonlinearTerm {
  int n_x = 0;
  std::vector<int> index;
  Vec alpha;

  std::size_t size() const { return index.size(); }
  bool is_zero() const { return alpha.size() == 0 || alpha.cwiseAbs().maxCoeff() == 0.0; }
  void add_to(const Vec& x, Vec& out) const;
};

Vec eval_nonlinear(const NonlinearTerm& term, const Vec& x);

/// Matrices valid over one hydraulic step:
///   E x(t+dt) = A x(t) + B [u; 1] + g + f(x(t)),   y = C x + D [u; 1] + h
struct ModelSlice {
  SpMat E, A, B, C;
  Mat D;
  Vec g, h;
  NonlinearTerm nonlinear;
  std::vector<double> courant;  // per link; zero for pumps and valves
  std::vector<int> direction;   // per link: +1 from->to, -1 reversed, 0 idle
  bool identity_E = true;
  std::shared_ptr<Eigen::SparseLU<SpMat>> lu;  // shared read-only between copies

  void factorize();
  Vec solve_E(const Vec& rhs) const;
  Mat solve_E(const Mat& rhs) const;
  Vec solve_E_transpose(const Vec& rhs) const;
};

struct FullOrderModel {
  NetworkGraph graph;
  SegmentationPlan plan;
  StateIndexMap map;
  DeviceLayout devices;
  Scheme scheme = Scheme::ImplicitUpwind;
  ReactionParams reaction;
  double dt = 5.0;
  double hydraulic_step_s = 3600.0;
  int n_x = 0;
  int n_const = 0;  // trailing input channels that are always 1
  std::vector<ModelSlice> slices;
  Vec x_offset;  // physical state = model state + x_offset

  int n_state() const { return 2 * n_x; }
  int n_u1() const { return static_cast<int>(devices.n_u1()); }
  int n_u2() const { return static_cast<int>(devices.n_u2()); }
  int n_inputs() const { return n_u1() + n_u2(); }
  int n_y() const { return static_cast<int>(devices.n_y1() + devices.n_y2()); }
  int steps_per_slice() const;
  const ModelSlice& slice_for_step(int k) const;
  std::size_t slice_index(int k) const;
  Vec full_input(const Vec& u) const;
  std::vector<std::string> output_labels() const;
};

/// Decay constant of a pipe for the chlorine species.
double pipe_decay(const ReactionParams& r, double radius);

ModelSlice assemble(const NetworkGraph& graph, const SegmentationPlan& plan, const StateIndexMap& map,
                    const DeviceLayout& devices, const ReactionParams& reaction, Scheme scheme, double dt,
                    const HydraulicStep& hyd);

/// Assembles every hydraulic step the horizon touches; the last profile step
/// is held if the horizon runs past the profile.
FullOrderModel build_model(const NetworkGraph& graph, const HydraulicProfile& profile, const ScenarioConfig& scenario);

Vec initial_state(const FullOrderModel& model, const ScenarioConfig& scenario);

/// Physical input schedule (n_u1 + n_u2) x n_steps; boosters off, intrusions on
/// during their windows.
Mat scenario_inputs(const FullOrderModel& model, const ScenarioConfig& scenario);

Vec step(const FullOrderModel& model, const Vec& x, const Vec& u, int k);
Vec output(const FullOrderModel& model, const Vec& x, const Vec& u, int k);

struct Trajectory {
  double dt = 0.0;
  int stride = 1;
  Mat states;   // columns at steps 0, stride, 2 stride, ...
  Mat outputs;  // n_y x (n_steps + 1)
  Mat nonlinear;  // f(x(k)) per step when requested
};

/// Runs n_steps from x0 (model coordinates). U may have zero columns, meaning
/// all physical inputs are zero.
Trajectory simulate(const FullOrderModel& model, const Vec& x0, const Mat& U, int n_steps, int stride = 1,
                    bool keep_nonlinear = false);

/// Re-expresses the model in x_hat = x - x0 so the run starts from zero. The
/// constant offset terms move to an always-one input channel.
FullOrderModel shift_initial_conditions(const FullOrderModel& model, const Vec& x0);

std::string format_trajectory_csv(const FullOrderModel& model, const Trajectory& traj, bool include_states);

}  // namespace mswq
