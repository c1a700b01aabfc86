#include "mswq/config.hpp"

#include <algorithm>

#include "mswq/errors.hpp"

namespace mswq {

std::string to_string(Scheme s) { return s == Scheme::ExplicitUpwind ? "explicit" : "implicit"; }

std::string to_string(ReactionKind k) { return "M" + std::to_string(static_cast<int>(k) + 1); }

Scheme parse_scheme(const std::string& s) {
  if (s == "explicit" || s == "ExplicitUpwind") return Scheme::ExplicitUpwind;
  if (s == "implicit" || s == "ImplicitUpwind") return Scheme::ImplicitUpwind;
  throw ValidationError("unknown scheme '" + s + "' (expected explicit or implicit)");
}

ReactionKind parse_reaction_kind(const std::string& s) {
  std::string t = s;
  if (t.size() == 3 && t[1] == '-') t.erase(1, 1);
  if (t.size() == 2 && (t[0] == 'M' || t[0] == 'm') && t[1] >= '1' && t[1] <= '8')
    return static_cast<ReactionKind>(t[1] - '1');
  throw ValidationError("unknown reaction model '" + s + "' (expected M1..M8)");
}

double ControlConfig::u1_max_for(std::size_t booster) const {
  if (u1_max.empty()) return 1e5;
  if (u1_max.size() == 1) return u1_max.front();
  return u1_max.at(booster);
}

void ControlConfig::validate() const {
  if (!(x1_min >= 0.0 && x1_min < x1_max)) throw ValidationError("control: require 0 <= x1_min < x1_max");
  if (x1_cap && *x1_cap <= x1_min) throw ValidationError("control: x1_cap must exceed x1_min");
  for (double m : u1_max)
    if (m < u1_min) throw ValidationError("control: u1_max below u1_min");
  if (n_ctl < 1 || n_pred < n_ctl) throw ValidationError("control: require 1 <= n_ctl <= n_pred");
  if (control_interval_s <= 0.0) throw ValidationError("control: control_interval_s must be positive");
  if (output_margin < 0.0 || envelope_margin < 0.0) throw ValidationError("control: margins must be nonnegative");
  if (qp_max_iter < 1) throw ValidationError("control: qp_max_iter must be positive");
  if (regularization <= 0.0) throw ValidationError("control: regularization must be positive");
  if (unit_cost < 0.0) throw ValidationError("control: unit_cost must be nonnegative");
}

}  // namespace mswq
