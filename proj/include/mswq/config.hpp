#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace mswq {

enum class Scheme { ExplicitUpwind, ImplicitUpwind };

/// Decay and reaction models of the generalized framework. Only M1, M2 and M7
/// are assembled; the others are recognised so they can be routed or rejected.
enum class ReactionKind { M1, M2, M3, M4, M5, M6, M7, M8 };

std::string to_string(Scheme s);
std::string to_string(ReactionKind k);
Scheme parse_scheme(const std::string& s);
ReactionKind parse_reaction_kind(const std::string& s);

struct ReactionParams {
  ReactionKind kind = ReactionKind::M7;
  double kb = 0.0;  // bulk decay, 1/s
  double kw = 0.0;  // wall reaction, m/s
  double kf = 0.0;  // mass transfer, m/s
  double kr = 0.0;  // mutual reaction, L/(mg s)
  double cl = 0.0;  // stable-component floor for M2, mg/L
};

/// Operating-point refresh policy for the linearized model.
struct OperatingPolicy {
  double window_s = 3600.0;
  double early_update_s = 300.0;
  double threshold = 0.05;  // mg/L
};

struct ControlConfig {
  double x1_min = 0.2;
  double x1_max = 4.0;
  std::optional<double> x1_cap;  // tighter cost-driven ceiling on sensed chlorine
  std::optional<double> x2_max;  // regulatory ceiling on the reactant, if any
  double u1_min = 0.0;
  std::vector<double> u1_max;  // per booster, mg/min; a single entry applies to all
  double unit_cost = 1e-6;     // $/mg
  int n_ctl = 3;
  int n_pred = 6;
  double control_interval_s = 600.0;
  double regularization = 1e-6;
  double slack_penalty_factor = 1e4;
  double output_margin = 0.0;     // back-off added to the lower output bound inside the QP, mg/L
  double envelope_margin = 0.05;  // McCormick bounds move outward by this fraction of their magnitude, plus 1e-3 mg/L
  int qp_max_iter = 300;          // splitting iterations before the interior-point finish

  double upper_output_bound() const { return x1_cap ? std::min(*x1_cap, x1_max) : x1_max; }
  double u1_max_for(std::size_t booster) const;
  void validate() const;
};

struct MorSettings {
  double impulse_ratio = 10.0;  // booster impulse amplitude relative to the constant channel
  int snapshot_factor = 2;      // POD snapshot length as a multiple of the a-priori bound
};

}  // namespace mswq
