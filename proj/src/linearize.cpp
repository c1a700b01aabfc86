#include "mswq/linearize.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "mswq/errors.hpp"

namespace mswq {

namespace {
constexpr double kTimeEps = 1e-9;
}

LinearizationTerms linearize_reaction(double c_o, double ct_o, double kr) {
  if (kr < 0.0) throw ValidationError("reaction rate kr must be nonnegative");
  return {-kr * ct_o, -kr * c_o, kr * c_o * ct_o};
}

OperatingSchedule::OperatingSchedule(std::vector<int> element_states, OperatingPolicy policy)
    : states_(std::move(element_states)), points_(states_.size()), policy_(policy) {}

OperatingSchedule OperatingSchedule::from_state(const FullOrderModel& model, const Vec& x_physical,
                                                OperatingPolicy policy) {
  OperatingSchedule s(model.map.bilinear_states(), policy);
  for (std::size_t j = 0; j < s.size(); ++j) {
    const int i = s.states_[j];
    s.points_[j].push_back({0.0, std::max(0.0, x_physical[i]), std::max(0.0, x_physical[model.n_x + i])});
  }
  return s;
}

OperatingSchedule OperatingSchedule::constant(const FullOrderModel& model, double c, double ct, OperatingPolicy policy) {
  OperatingSchedule s(model.map.bilinear_states(), policy);
  for (auto& p : s.points_) p.push_back({0.0, c, ct});
  return s;
}

void OperatingSchedule::append(std::size_t element, OperatingPoint p) {
  auto& list = points_.at(element);
  if (p.c < 0.0 || p.ct < 0.0) throw ValidationError("operating points must be nonnegative");
  if (!list.empty() && p.start < list.back().start - kTimeEps)
    throw ValidationError("operating points must be appended in time order");
  if (!list.empty() && std::fabs(p.start - list.back().start) <= kTimeEps) list.back() = p;
  else list.push_back(p);
}

void OperatingSchedule::values_at(double t, Vec& c, Vec& ct) const {
  c.resize(static_cast<Eigen::Index>(size()));
  ct.resize(static_cast<Eigen::Index>(size()));
  for (std::size_t j = 0; j < size(); ++j) {
    const auto& list = points_[j];
    auto it = std::upper_bound(list.begin(), list.end(), t + kTimeEps,
                               [](double v, const OperatingPoint& p) { return v < p.start; });
    if (it == list.begin()) {
      std::ostringstream msg;
      msg << "operating schedule gap: element state " << states_[j] << " has no operating point at t = " << t;
      throw ValidationError(msg.str());
    }
    --it;
    c[static_cast<Eigen::Index>(j)] = it->c;
    ct[static_cast<Eigen::Index>(j)] = it->ct;
  }
}

void OperatingSchedule::check_coverage(double horizon) const {
  for (std::size_t j = 0; j < size(); ++j) {
    const auto& list = points_[j];
    if (list.empty() || list.front().start > kTimeEps) {
      std::ostringstream msg;
      msg << "operating schedule gap: element state " << states_[j] << " uncovered on [0, "
          << (list.empty() ? horizon : list.front().start) << ")";
      throw ValidationError(msg.str());
    }
  }
}

double OperatingSchedule::next_scheduled_refresh() const {
  if (!early_done_) return policy_.early_update_s;
  return last_full_ + policy_.window_s;
}

void OperatingSchedule::mark_full_refresh(double t) {
  last_full_ = t;
  if (t + kTimeEps >= policy_.early_update_s) early_done_ = true;
}

std::string OperatingSchedule::to_csv(const FullOrderModel& model) const {
  std::multimap<double, std::pair<std::size_t, OperatingPoint>> rows;
  for (std::size_t j = 0; j < size(); ++j)
    for (const auto& p : points_[j]) rows.emplace(p.start, std::make_pair(j, p));
  std::ostringstream os;
  os << std::setprecision(12) << "window_start_s,element_id,c_op,ctilde_op\n";
  for (const auto& [t, v] : rows)
    os << t << ',' << model.map.label(model.graph, states_[v.first]) << ',' << v.second.c << ',' << v.second.ct << '\n';
  return os.str();
}

std::size_t update_operating_points(OperatingSchedule& schedule, const FullOrderModel& model, const Vec& x_physical,
                                    double t_now, RefreshReason forced) {
  const auto& pol = schedule.policy();
  bool full = forced != RefreshReason::None;
  if (!full && !schedule.early_refresh_done() && t_now + kTimeEps >= pol.early_update_s) full = true;
  if (!full && schedule.early_refresh_done() && t_now - schedule.last_full_refresh() + kTimeEps >= pol.window_s)
    full = true;

  Vec c_o, ct_o;
  schedule.values_at(t_now, c_o, ct_o);
  std::size_t changed = 0;
  for (std::size_t j = 0; j < schedule.size(); ++j) {
    const int i = schedule.element_states()[j];
    const double c = std::max(0.0, x_physical[i]);
    const double ct = std::max(0.0, x_physical[model.n_x + i]);
    const auto e = static_cast<Eigen::Index>(j);
    const double dc = std::fabs(c - c_o[e]), dct = std::fabs(ct - ct_o[e]);
    const bool differs = dc > 0.0 || dct > 0.0;
    const bool breach = dc > pol.threshold || dct > pol.threshold;
    if (differs && (full || breach)) {
      schedule.append(j, {t_now, c, ct});
      ++changed;
    }
  }
  if (full) schedule.mark_full_refresh(t_now);
  return changed;
}

LinearCoefficients linear_coefficients(const ModelSlice& slice, const Vec& x_offset, const Vec& c_o, const Vec& ct_o) {
  const auto& nl = slice.nonlinear;
  const auto n = static_cast<Eigen::Index>(nl.size());
  LinearCoefficients lc;
  lc.d_self.resize(n);
  lc.d_other.resize(n);
  lc.phi.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int i1 = nl.index[static_cast<std::size_t>(j)];
    const double a = nl.alpha[j];
    // Operating point expressed in the model's own (possibly shifted) coordinates.
    const double c = c_o[j] - x_offset[i1];
    const double ct = ct_o[j] - x_offset[nl.n_x + i1];
    lc.d_self[j] = a * ct;
    lc.d_other[j] = a * c;
    lc.phi[j] = -a * c * ct;
  }
  return lc;
}

LinearCoefficients LinearizedModel::coefficients(int k) const {
  Vec c, ct;
  schedule.values_at(k * base->dt, c, ct);
  return linear_coefficients(base->slice_for_step(k), base->x_offset, c, ct);
}

SpMat LinearizedModel::block_matrix(int k) const {
  const auto& s = base->slice_for_step(k);
  const auto lc = coefficients(k);
  std::vector<Eigen::Triplet<double>> t;
  const int nx = base->n_x;
  for (std::size_t j = 0; j < s.nonlinear.size(); ++j) {
    const int i1 = s.nonlinear.index[j], i2 = nx + i1;
    const auto e = static_cast<Eigen::Index>(j);
    for (int row : {i1, i2}) {
      t.emplace_back(row, i1, lc.d_self[e]);
      t.emplace_back(row, i2, lc.d_other[e]);
    }
  }
  SpMat corr(s.A.rows(), s.A.cols());
  corr.setFromTriplets(t.begin(), t.end());
  SpMat out = s.A + corr;
  out.prune(0.0);
  return out;
}

Vec LinearizedModel::phi(int k) const {
  const auto& s = base->slice_for_step(k);
  const auto lc = coefficients(k);
  Vec p = Vec::Zero(base->n_state());
  for (std::size_t j = 0; j < s.nonlinear.size(); ++j) {
    const int i1 = s.nonlinear.index[j];
    p[i1] += lc.phi[static_cast<Eigen::Index>(j)];
    p[base->n_x + i1] += lc.phi[static_cast<Eigen::Index>(j)];
  }
  return p;
}

LinearizedModel build_ldes(std::shared_ptr<const FullOrderModel> model, OperatingSchedule schedule, double horizon) {
  if (schedule.element_states() != model->map.bilinear_states())
    throw ValidationError("operating schedule elements do not match the model's bilinear states");
  schedule.check_coverage(horizon);
  return LinearizedModel{std::move(model), std::move(schedule)};
}

Vec step_linear(const FullOrderModel& model, const LinearCoefficients& coef, const Vec& x, const Vec& u, int k) {
  const auto& s = model.slice_for_step(k);
  Vec rhs = s.A * x + s.B * model.full_input(u);
  const int nx = model.n_x;
  for (std::size_t j = 0; j < s.nonlinear.size(); ++j) {
    const int i1 = s.nonlinear.index[j];
    const auto e = static_cast<Eigen::Index>(j);
    const double v = coef.d_self[e] * x[i1] + coef.d_other[e] * x[nx + i1] + coef.phi[e];
    rhs[i1] += v;
    rhs[nx + i1] += v;
  }
  return s.solve_E(rhs);
}

Trajectory simulate_linear(LinearizedModel& lm, const Vec& x0, const Mat& U, int n_steps, int stride, bool refresh) {
  const auto& model = lm.model();
  if (x0.size() != model.n_state()) throw ValidationError("initial state has wrong dimension");
  stride = std::max(stride, 1);
  Trajectory tr;
  tr.dt = model.dt;
  tr.stride = stride;
  tr.states.resize(model.n_state(), n_steps / stride + 1);
  tr.outputs.resize(model.n_y(), n_steps + 1);
  Vec empty;
  auto input_at = [&](int k) -> Vec { return U.cols() == 0 ? empty : Vec(U.col(std::min<Eigen::Index>(k, U.cols() - 1))); };
  const int sps = model.steps_per_slice();
  Vec x = x0;
  for (int k = 0; k <= n_steps; ++k) {
    Vec u = input_at(k);
    if (k % stride == 0) tr.states.col(k / stride) = x;
    tr.outputs.col(k) = output(model, x, u, k);
    if (k == n_steps) break;
    if (refresh && k > 0) {
      const auto reason = (k % sps == 0) ? RefreshReason::HydraulicChange : RefreshReason::None;
      update_operating_points(lm.schedule, model, x + model.x_offset, k * model.dt, reason);
    }
    x = step_linear(model, lm.coefficients(k), x, u, k);
    if (!x.allFinite()) throw NumericalError("non-finite linearized state at step " + std::to_string(k + 1));
  }
  return tr;
}

}  // namespace mswq
