#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mswq/dynamics.hpp"

namespace mswq {

/// First-order expansion of the mutual reaction -kr * c * ct around (c_o, ct_o):
///   -kr c ct ~ self * c + other * ct + constant   (chlorine row)
struct LinearizationTerms {
  double self = 0.0;
  double other = 0.0;
  double constant = 0.0;
};

LinearizationTerms linearize_reaction(double c_o, double ct_o, double kr);

struct OperatingPoint {
  double start = 0.0;
  double c = 0.0;
  double ct = 0.0;
};

/// Per-element operating points over time. Elements are the bilinear states
/// (tanks and pipe segments) of the model, in ascending state order.
class OperatingSchedule {
 public:
  OperatingSchedule() = default;
  OperatingSchedule(std::vector<int> element_states, OperatingPolicy policy);

  /// One window at t = 0 holding the given per-state physical concentrations.
  static OperatingSchedule from_state(const FullOrderModel& model, const Vec& x_physical, OperatingPolicy policy = {});
  static OperatingSchedule constant(const FullOrderModel& model, double c, double ct, OperatingPolicy policy = {});

  std::size_t size() const { return states_.size(); }
  const std::vector<int>& element_states() const { return states_; }
  const std::vector<OperatingPoint>& points(std::size_t element) const { return points_[element]; }
  const OperatingPolicy& policy() const { return policy_; }

  void append(std::size_t element, OperatingPoint p);
  /// Fills c/ct (size()) with the points active at time t.
  void values_at(double t, Vec& c, Vec& ct) const;
  /// Throws naming the element and uncovered interval when [0, horizon) is not covered.
  void check_coverage(double horizon) const;

  double last_full_refresh() const { return last_full_; }
  bool early_refresh_done() const { return early_done_; }
  double next_scheduled_refresh() const;
  void mark_full_refresh(double t);

  std::string to_csv(const FullOrderModel& model) const;

 private:
  std::vector<int> states_;
  std::vector<std::vector<OperatingPoint>> points_;
  OperatingPolicy policy_;
  double last_full_ = 0.0;
  bool early_done_ = false;
};

enum class RefreshReason { None, Scheduled, HydraulicChange, ControlAction };

/// Applies the refresh policy at t_now given the current physical state.
/// Returns the number of elements whose operating point changed.
std::size_t update_operating_points(OperatingSchedule& schedule, const FullOrderModel& model, const Vec& x_physical,
                                    double t_now, RefreshReason forced = RefreshReason::None);

/// Diagonal coefficients of the linearized reaction in model coordinates, one
/// entry per bilinear element: chlorine row gets d_self*x1 + d_other*x2 + phi,
/// reactant row gets d_self*x1 + d_other*x2 + phi as well (the reaction is
/// symmetric), where d_self = alpha*ct_o, d_other = alpha*c_o, phi = -alpha*c_o*ct_o.
struct LinearCoefficients {
  Vec d_self;
  Vec d_other;
  Vec phi;
};

LinearCoefficients linear_coefficients(const ModelSlice& slice, const Vec& x_offset, const Vec& c_o, const Vec& ct_o);

/// Linear model with the reaction replaced by its tangent plane.
struct LinearizedModel {
  std::shared_ptr<const FullOrderModel> base;
  OperatingSchedule schedule;

  const FullOrderModel& model() const { return *base; }
  LinearCoefficients coefficients(int k) const;
  /// Full block matrix [[A11, A12], [A21, A22]] for step k.
  SpMat block_matrix(int k) const;
  /// Constant vector Phi of size 2 n_x for step k.
  Vec phi(int k) const;
};

LinearizedModel build_ldes(std::shared_ptr<const FullOrderModel> model, OperatingSchedule schedule, double horizon);

Vec step_linear(const FullOrderModel& model, const LinearCoefficients& coef, const Vec& x, const Vec& u, int k);

/// Simulates the linearized model. With refresh enabled the schedule is
/// updated from the linear trajectory itself as the policy dictates.
Trajectory simulate_linear(LinearizedModel& lm, const Vec& x0, const Mat& U, int n_steps, int stride = 1,
                           bool refresh = false);

}  // namespace mswq
