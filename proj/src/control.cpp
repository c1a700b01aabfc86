#include "mswq/control.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mswq/errors.hpp"

namespace mswq {

// ---------------------------------------------------------------------------
// McCormick envelopes

double McCormickEnvelope::lower(double x1, double x2) const {
  return std::max(x1_lo * x2 + x1 * x2_lo - x1_lo * x2_lo, x1_hi * x2 + x1 * x2_hi - x1_hi * x2_hi);
}

double McCormickEnvelope::upper(double x1, double x2) const {
  return std::min(x1_hi * x2 + x1 * x2_lo - x1_hi * x2_lo, x1 * x2_hi + x1_lo * x2 - x1_lo * x2_hi);
}

bool McCormickEnvelope::contains(double x1, double x2, double tol) const {
  return x1 >= x1_lo - tol && x1 <= x1_hi + tol && x2 >= x2_lo - tol && x2 <= x2_hi + tol;
}

bool McCormickEnvelope::admits(double x1, double x2, double z, double tol) const {
  const Eigen::Vector4d r = G * Eigen::Vector3d(x1, x2, z) - h;
  return r.maxCoeff() <= tol;
}

McCormickEnvelope make_envelope(double x1_lo, double x1_hi, double x2_lo, double x2_hi, double kr) {
  if (!(x1_lo <= x1_hi) || !(x2_lo <= x2_hi))
    throw ValidationError(fmt::format("inverted McCormick box [{}, {}] x [{}, {}]", x1_lo, x1_hi, x2_lo, x2_hi));
  McCormickEnvelope e;
  e.x1_lo = x1_lo;
  e.x1_hi = x1_hi;
  e.x2_lo = x2_lo;
  e.x2_hi = x2_hi;
  e.beta = -kr;
  e.G << x2_lo, x1_lo, -1.0,  //
      x2_hi, x1_hi, -1.0,     //
      -x2_lo, -x1_hi, 1.0,    //
      -x2_hi, -x1_lo, 1.0;
  e.h << x1_lo * x2_lo, x1_hi * x2_hi, -x1_hi * x2_lo, -x1_lo * x2_hi;
  return e;
}

std::vector<McCormickEnvelope> build_envelopes(const FullOrderModel& model, const Vec& x_physical,
                                               const ControlConfig& config, double kr, double detected_intrusion,
                                               double margin) {
  if (x_physical.size() != model.n_state()) throw ValidationError("envelope state has wrong dimension");
  const auto& elems = model.map.bilinear_states();
  const int nx = model.n_x;
  double x1_min = config.x1_min, x1_max = 0.0, x2_min = 0.0, x2_max = 0.0;
  for (int i : elems) {
    x1_min = std::min(x1_min, x_physical[i]);
    x1_max = std::max(x1_max, x_physical[i]);
    x2_min = std::min(x2_min, x_physical[nx + i]);
    x2_max = std::max(x2_max, x_physical[nx + i]);
  }
  double a_lo = x1_min, a_hi = std::max(config.x1_max, x1_max);
  double b_lo = x2_min;
  double b_hi;
  if (config.x2_max) {
    if (*config.x2_max < 0.0) throw ValidationError("inverted McCormick box: reactant ceiling below zero");
    b_hi = std::max(*config.x2_max, x2_max);
  } else {
    b_hi = std::max(detected_intrusion, x2_max);
  }
  if (margin > 0.0) {
    // Each bound moves outward in proportion to its own magnitude, so the
    // chlorine floor stays close to x1_min and keeps z away from zero.
    auto widen = [margin](double v) { return margin * std::fabs(v) + 1e-3; };
    a_lo -= widen(a_lo), a_hi += widen(a_hi), b_lo -= widen(b_lo), b_hi += widen(b_hi);
  }
  std::vector<McCormickEnvelope> out(elems.size(), make_envelope(a_lo, a_hi, b_lo, b_hi, kr));
  return out;
}

// ---------------------------------------------------------------------------
// Velocity form

AugmentedSystem augment_system(const Mat& A, const Mat& B, const Mat& C, const Mat& Gz, double kr) {
  const auto n = A.rows();
  if (A.cols() != n || B.rows() != n || C.cols() != n || (Gz.size() > 0 && Gz.rows() != n))
    throw ValidationError("augment_system: dimension mismatch");
  const auto nu = B.cols(), ny = C.rows(), nz = Gz.size() > 0 ? Gz.cols() : 0;
  const double beta = -kr;
  AugmentedSystem s;
  s.n_x = static_cast<int>(n);
  s.n_u = static_cast<int>(nu);
  s.n_z = static_cast<int>(nz);
  s.n_y = static_cast<int>(ny);
  s.Phi = Mat::Zero(n + ny, n + ny);
  s.Phi.topLeftCorner(n, n) = A;
  s.Phi.bottomLeftCorner(ny, n) = C * A;
  s.Phi.bottomRightCorner(ny, ny).setIdentity();
  s.Gamma = Mat::Zero(n + ny, nu + nz);
  s.Gamma.topLeftCorner(n, nu) = B;
  s.Gamma.bottomLeftCorner(ny, nu) = C * B;
  if (nz > 0) {
    s.Gamma.topRightCorner(n, nz) = beta * Gz;
    s.Gamma.bottomRightCorner(ny, nz) = beta * (C * Gz);
  }
  return s;
}

Vec AugmentedSystem::step(const Vec& xa, const Vec& du, const Vec& dz) const {
  if (xa.size() != n_x + n_y || du.size() != n_u || dz.size() != n_z)
    throw ValidationError("augmented step: dimension mismatch");
  Vec in(n_u + n_z);
  in << du, dz;
  return Phi * xa + Gamma * in;
}

std::string to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::Linear: return "linear";
    case ControllerKind::Linearized: return "linearized";
    case ControllerKind::Relaxed: return "relaxed";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// QP assembly

Mat MpcProblem::inputs(const Vec& decision, int n_ctl) const {
  const int nu = n_u();
  Mat U(nu, n_ctl);
  Vec u = u_prev;
  for (int j = 0; j < n_ctl; ++j) {
    u += u_scale.cwiseProduct(decision.segment(j * nu, nu));
    U.col(j) = u;
  }
  return U;
}

// Past the box edges the lower planes overtake the upper ones, and elements
// the boosters can no longer reach may be predicted below the chlorine floor.
// The upper planes therefore get a slack, one per element shared by all
// moves, that lets z follow the lower planes there, which overstates
// consumption. The price only has to break ties: at
// the output-slack price the optimizer overdoses to drag unreachable elements
// back into the box.
constexpr double kEnvelopeSlackPrice = 1e-3;

MpcProblem build_qp(const IntervalModel& m, const ControlConfig& cfg, const Vec& x0, const Vec& y_offset,
                    const Vec& u_prev, const std::vector<McCormickEnvelope>* envelopes) {
  cfg.validate();
  const int Np = m.n_pred(), Nc = cfg.n_ctl;
  if (Np != cfg.n_pred) throw ValidationError("interval model does not cover the prediction horizon");
  const auto nr = x0.size();
  const int nu = static_cast<int>(u_prev.size());
  const int ny = static_cast<int>(m.C.rows());
  if (m.C.cols() != nr || m.Du.rows() != ny || m.Du.cols() != nu || y_offset.size() != ny ||
      static_cast<int>(m.yc.size()) != Np + 1)
    throw ValidationError("build_qp: interval model dimensions are inconsistent");
  const bool relaxed = envelopes != nullptr;
  const int nb = relaxed ? static_cast<int>(envelopes->size()) : 0;
  if (relaxed && (m.V1.rows() != nb || m.Bz.empty() || m.Bz.front().cols() != nb))
    throw ValidationError("build_qp: envelopes do not match the model's bilinear elements");

  MpcProblem p;
  p.u_prev = u_prev;
  p.u_scale.resize(nu);
  for (int b = 0; b < nu; ++b) {
    const double s = cfg.u1_max_for(static_cast<std::size_t>(b)) - cfg.u1_min;
    p.u_scale[b] = s > 0.0 ? s : 1.0;
  }
  const double s_mean = nu > 0 ? p.u_scale.mean() : 1.0;
  p.cost_per_unit = cfg.unit_cost * cfg.control_interval_s / 60.0;
  p.n_v = Nc * nu;
  p.n_z = Nc * nb;
  p.n_e = nb;
  p.n_s = 2 * Np * ny;
  const int N = p.n_v + p.n_z + p.n_e + p.n_s;
  const int iz = p.n_v, ie = iz + p.n_z, is_lo = ie + p.n_e, is_hi = is_lo + Np * ny;
  p.rows_input = Nc * nu;
  p.rows_output = 2 * Np * ny;
  p.rows_slack = p.n_e + p.n_s;
  p.rows_envelope = 4 * nb * Nc;
  const int M = p.rows_input + p.rows_output + p.rows_slack + p.rows_envelope;

  QpProblem& qp = p.qp;
  qp.P = Mat::Zero(N, N);
  qp.q = Vec::Zero(N);
  qp.A = Mat::Zero(M, N);
  qp.l = Vec::Constant(M, -kQpInf);
  qp.u = Vec::Constant(M, kQpInf);
  for (int i = 0; i < p.n_v; ++i) qp.P(i, i) = 2.0 * cfg.regularization;
  if (cfg.unit_cost > 0.0)
    for (int j = 0; j < Nc; ++j)
      for (int b = 0; b < nu; ++b) qp.q[j * nu + b] = (Np - j) * p.u_scale[b] / s_mean;
  qp.q.segment(ie, p.n_e).setConstant(kEnvelopeSlackPrice);
  qp.q.segment(is_lo, p.n_s).setConstant(cfg.slack_penalty_factor);

  // u(i) = u_prev + T_i v
  auto T = [&](int i) {
    Mat t = Mat::Zero(nu, p.n_v);
    const int jmax = std::min(i, Nc - 1);
    for (int j = 0; j <= jmax; ++j)
      for (int b = 0; b < nu; ++b) t(b, j * nu + b) = p.u_scale[b];
    return t;
  };

  int row = 0;
  for (int j = 0; j < Nc; ++j) {
    const Mat t = T(j);
    for (int b = 0; b < nu; ++b, ++row) {
      // kept in normalized units; physical rows carry coefficients near 1e5
      // and stall the splitting iterations
      qp.A.row(row).head(p.n_v) = t.row(b) / p.u_scale[b];
      qp.l[row] = (cfg.u1_min - u_prev[b]) / p.u_scale[b];
      qp.u[row] = (cfg.u1_max_for(static_cast<std::size_t>(b)) - u_prev[b]) / p.u_scale[b];
    }
  }
  const int row_out = row;
  const int row_slack = row_out + p.rows_output;
  const int row_env = row_slack + p.rows_slack;
  for (int s = 0; s < p.n_e + p.n_s; ++s) {
    qp.A(row_slack + s, ie + s) = 1.0;
    qp.l[row_slack + s] = 0.0;
  }

  const double y_lo = cfg.x1_min + cfg.output_margin, y_hi = cfg.upper_output_bound();
  Vec cx = x0;
  Mat Xv = Mat::Zero(nr, p.n_v), Xz = Mat::Zero(nr, p.n_z);
  for (int i = 0; i <= Np; ++i) {
    if (i >= 1) {
      const Mat t = T(i);
      const Vec yconst = m.C * cx + m.Du * u_prev + m.yc[static_cast<std::size_t>(i)] + y_offset;
      const Mat yv = m.C * Xv + m.Du * t;
      const Mat yz = m.C * Xz;
      for (int c = 0; c < ny; ++c) {
        const int s = (i - 1) * ny + c;
        const int rl = row_out + 2 * s, ru = rl + 1;
        qp.A.row(rl).head(p.n_v) = yv.row(c);
        qp.A.row(ru).head(p.n_v) = yv.row(c);
        if (p.n_z > 0) {
          qp.A.row(rl).segment(iz, p.n_z) = yz.row(c);
          qp.A.row(ru).segment(iz, p.n_z) = yz.row(c);
        }
        qp.A(rl, is_lo + s) = 1.0;
        qp.A(ru, is_hi + s) = -1.0;
        qp.l[rl] = y_lo - yconst[c];
        qp.u[ru] = y_hi - yconst[c];
      }
    }
    if (relaxed && i < Nc) {
      const Vec a1 = m.V1 * cx + m.off1, a2 = m.V2 * cx + m.off2;
      const Mat P1v = m.V1 * Xv, P2v = m.V2 * Xv;
      const Mat P1z = m.V1 * Xz, P2z = m.V2 * Xz;
      for (int e = 0; e < nb; ++e) {
        const auto& env = (*envelopes)[static_cast<std::size_t>(e)];
        for (int r = 0; r < 4; ++r) {
          const int rr = row_env + (i * nb + e) * 4 + r;
          const double g1 = env.G(r, 0), g2 = env.G(r, 1), g3 = env.G(r, 2);
          qp.A.row(rr).head(p.n_v) = g1 * P1v.row(e) + g2 * P2v.row(e);
          qp.A.row(rr).segment(iz, p.n_z) = g1 * P1z.row(e) + g2 * P2z.row(e);
          qp.A(rr, iz + i * nb + e) += g3;
          if (r >= 2) qp.A(rr, ie + e) = -1.0;
          qp.u[rr] = env.h[r] - g1 * a1[e] - g2 * a2[e];
        }
      }
    }
    if (i == Np) break;
    const auto si = static_cast<std::size_t>(i);
    const Mat t = T(i);
    cx = m.A[si] * cx + m.Bu[si] * u_prev + m.w[si];
    Xv = m.A[si] * Xv + m.Bu[si] * t;
    if (p.n_z > 0) {
      Xz = m.A[si] * Xz;
      const int j = std::min(i, Nc - 1);
      Xz.middleCols(j * nb, nb) += m.Bz[si];
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Controller

MpcController::MpcController(std::shared_ptr<const FullOrderModel> model, std::shared_ptr<const ReducedModel> rom,
                             ControllerKind kind, ControlConfig config, Mat known_inputs, OperatingPolicy policy)
    : model_(std::move(model)), rom_(std::move(rom)), kind_(kind), config_(std::move(config)),
      known_(std::move(known_inputs)) {
  if (!model_ || !rom_) throw ValidationError("controller needs a model and a reduced model");
  config_.validate();
  const auto rk = rom_->kind;
  // A linear reduced model is its own linearization.
  if (kind_ == ControllerKind::Linearized && rk == ReducedModel::Kind::Nonlinear)
    throw ValidationError("linearized control needs a linearized or linear reduced model");
  if (kind_ == ControllerKind::Linear && rk != ReducedModel::Kind::Linear)
    throw ValidationError("linear control needs a linear reduced model");
  if (kind_ == ControllerKind::Relaxed && rk == ReducedModel::Kind::Linearized)
    throw ValidationError("relaxed control needs a linear or nonlinear reduced model");
  const double ratio = config_.control_interval_s / model_->dt;
  steps_ = static_cast<int>(std::lround(ratio));
  if (steps_ < 1 || std::fabs(ratio - steps_) > 1e-9)
    throw ValidationError("control interval must be a whole number of water-quality steps");
  n_u1_ = model_->n_u1();
  n_y1_ = static_cast<int>(model_->devices.n_y1());
  if (n_u1_ == 0 || n_y1_ == 0) throw ValidationError("control needs at least one booster and one chlorine sensor");
  if (known_.rows() != model_->n_u2() && known_.size() > 0)
    throw ValidationError("known reactant inputs must have one row per intrusion point");
  kr_ = model_->reaction.kr;
  lm_.base = model_;
  lm_.schedule = OperatingSchedule::constant(*model_, 0.0, 0.0, policy);
  xr_ = Vec::Zero(rom_->n_r);
  u_prev_ = Vec::Constant(n_u1_, config_.u1_min);
}

Vec MpcController::known_at(int k) const {
  if (known_.cols() == 0) return Vec::Zero(model_->n_u2());
  return known_.col(std::min<Eigen::Index>(k, known_.cols() - 1));
}

Vec MpcController::full_known(int k) const {
  Vec u = Vec::Zero(n_u1_ + model_->n_u2());
  u.tail(model_->n_u2()) = known_at(k);
  return rom_->full_input(u);
}

double MpcController::detected_intrusion(int k) const {
  double d = 0.0;
  if (model_->n_u2() == 0) return d;
  const int end = k + config_.n_pred * steps_;
  for (int s = k; s < end; ++s) {
    d = std::max(d, known_at(s).maxCoeff());
    if (known_.cols() > 0 && s >= known_.cols() - 1) break;
  }
  return d;
}

Vec MpcController::estimated_state() const { return rom_->lift_state(xr_) + rom_->x_offset; }

void MpcController::reset(const Vec& x_physical, const Vec& u_prev) {
  if (x_physical.size() != model_->n_state() || u_prev.size() != n_u1_)
    throw ValidationError("controller reset: dimension mismatch");
  xr_ = rom_->project_state(x_physical - rom_->x_offset);
  u_prev_ = u_prev;
  have_warm_ = false;
  if (kind_ == ControllerKind::Linearized) {
    lm_.schedule = OperatingSchedule::from_state(*model_, x_physical, lm_.schedule.policy());
    stepper_ = std::make_unique<LinearizedRomStepper>(*rom_);
  }
}

IntervalModel MpcController::interval_model(int k) const {
  const int Np = config_.n_pred;
  const auto nr = rom_->n_r;
  IntervalModel im;
  im.steps = steps_;
  const auto& r0 = rom_->slice_for_step(k);
  const bool relaxed = kind_ == ControllerKind::Relaxed;
  LinearCoefficients coef;
  if (kind_ == ControllerKind::Linearized) coef = lm_.coefficients(k);

  struct StepMats {
    Mat Ms, Nu, Gz;
    Vec extra;
  };
  std::map<std::size_t, StepMats> cache;
  auto mats = [&](int s) -> const StepMats& {
    const std::size_t si = rom_->slice_index(s);
    auto it = cache.find(si);
    if (it != cache.end()) return it->second;
    const auto& r = rom_->slices[si];
    StepMats sm;
    sm.Ms = r.M;
    sm.Nu = r.N.leftCols(n_u1_);
    sm.extra = Vec::Zero(nr);
    if (kind_ == ControllerKind::Linearized && r.alpha.size() > 0) {
      sm.Ms.noalias() += r.Gs * (coef.d_self.asDiagonal() * r.V1 + coef.d_other.asDiagonal() * r.V2);
      sm.extra = r.Gs * coef.phi;
    }
    if (relaxed) {
      // Physical products replace the model-coordinate ones: remove the
      // cross terms the coordinate shift placed in the linear part.
      const auto nb = r.alpha.size();
      if (nb > 0) {
        const Vec a2 = r.alpha.cwiseProduct(r.off2), a1 = r.alpha.cwiseProduct(r.off1);
        sm.Ms.noalias() -= r.Gs * (a2.asDiagonal() * r.V1 + a1.asDiagonal() * r.V2);
        sm.extra = -(r.Gs * a1.cwiseProduct(r.off2));
        sm.Gz = r.Gs * r.alpha.asDiagonal();
      } else {
        sm.Gz = Mat::Zero(nr, 0);
      }
    }
    return cache.emplace(si, std::move(sm)).first->second;
  };

  for (int i = 0; i < Np; ++i) {
    Mat A = Mat::Identity(nr, nr), Bu = Mat::Zero(nr, n_u1_), Bz;
    Vec w = Vec::Zero(nr);
    const int k0 = k + i * steps_;
    if (relaxed) Bz = Mat::Zero(nr, mats(k0).Gz.cols());
    for (int s = k0; s < k0 + steps_; ++s) {
      const auto& sm = mats(s);
      const auto& r = rom_->slice_for_step(s);
      A = sm.Ms * A;
      Bu = sm.Ms * Bu + sm.Nu;
      if (relaxed) Bz = sm.Ms * Bz + sm.Gz;
      w = sm.Ms * w + r.N * full_known(s) + sm.extra;
    }
    im.A.push_back(std::move(A));
    im.Bu.push_back(std::move(Bu));
    if (relaxed) im.Bz.push_back(std::move(Bz));
    im.w.push_back(std::move(w));
  }
  im.C = r0.Cr.topRows(n_y1_);
  im.Du = r0.D.size() > 0 ? Mat(r0.D.topLeftCorner(n_y1_, n_u1_)) : Mat::Zero(n_y1_, n_u1_);
  for (int i = 0; i <= Np; ++i) {
    const int ki = k + i * steps_;
    const auto& r = rom_->slice_for_step(ki);
    Vec yc = Vec::Zero(n_y1_);
    if (r.D.size() > 0) {
      Vec known = full_known(ki);
      known.head(n_u1_).setZero();
      yc += r.D.topRows(n_y1_) * known;
    }
    if (r.h.size() > 0) yc += r.h.head(n_y1_);
    im.yc.push_back(yc);
  }
  if (relaxed) {
    im.V1 = r0.V1;
    im.V2 = r0.V2;
    im.off1 = r0.off1;
    im.off2 = r0.off2;
  }
  return im;
}

ControlAction MpcController::act(int k, const Vec& y1_measured) {
  if (y1_measured.size() != n_y1_) throw ValidationError("measurement has wrong dimension");
  const auto t_start = std::chrono::steady_clock::now();
  const double t = k * model_->dt;
  ControlAction action;
  action.time_s = t;

  // Reset the sensed channels to the measurements.
  const auto& r = rom_->slice_for_step(k);
  const Mat C = r.Cr.topRows(n_y1_);
  auto predicted = [&]() {
    Vec known = full_known(k);
    known.head(n_u1_) = u_prev_;
    Vec y = C * xr_;
    if (r.D.size() > 0) y += r.D.topRows(n_y1_) * known;
    if (r.h.size() > 0) y += r.h.head(n_y1_);
    return y;
  };
  // The correction is the smallest change of the full-order state that moves
  // the sensed states onto the readings, carried into reduced coordinates by
  // the left basis. Whatever the basis cannot represent stays in y_offset.
  const Vec innovation = y1_measured - predicted();
  const Mat C_full = Mat(model_->slice_for_step(k).C).topRows(n_y1_);
  const Vec dx = C_full.transpose() * (C_full * C_full.transpose()).ldlt().solve(innovation);
  xr_ += rom_->project_state(dx);
  const Vec y_offset = y1_measured - predicted();

  const Vec x_est = estimated_state();
  if (kind_ == ControllerKind::Linearized)
    update_operating_points(lm_.schedule, *model_, x_est, t, RefreshReason::ControlAction);
  const bool relaxed = kind_ == ControllerKind::Relaxed;
  if (relaxed)
    envelopes_ = build_envelopes(*model_, x_est, config_, kr_, detected_intrusion(k), config_.envelope_margin);

  const IntervalModel im = interval_model(k);
  last_ = build_qp(im, config_, xr_, y_offset, u_prev_, relaxed ? &envelopes_ : nullptr);
  QpProblem& qp = last_.qp;
  if (have_warm_ && warm_.size() == qp.q.size()) qp.warm_x = warm_;

  QpSettings st;
  st.max_iter = config_.qp_max_iter;
  const QpResult res = solve_qp(qp, st);
  action.status = res.status;
  action.iterations = res.iterations;
  action.kkt = kkt_residuals(qp, res.x, res.y);
  action.qp_variables = static_cast<int>(qp.q.size());
  action.qp_rows = static_cast<int>(qp.A.rows());
  action.envelope_rows = last_.rows_envelope;

  const int Nc = config_.n_ctl, nu = n_u1_;
  if (res.status == QpStatus::Solved) {
    const Mat U = last_.inputs(res.x, Nc);
    Vec u = U.col(0);
    for (int b = 0; b < nu; ++b)
      u[b] = std::clamp(u[b], config_.u1_min, config_.u1_max_for(static_cast<std::size_t>(b)));
    action.u1 = u;
    double total = 0.0;
    for (int i = 0; i < config_.n_pred; ++i) total += U.col(std::min(i, Nc - 1)).sum();
    action.objective = last_.cost_per_unit * total;
    if (last_.n_s > 0) action.max_slack = res.x.tail(last_.n_s).maxCoeff();
    if (last_.n_e > 0) action.max_envelope_slack = res.x.segment(last_.n_v + last_.n_z, last_.n_e).maxCoeff();
    // Shift the plan for the next warm start.
    warm_ = Vec::Zero(res.x.size());
    if (Nc > 1) warm_.head((Nc - 1) * nu) = res.x.segment(nu, (Nc - 1) * nu);
    const int nb = Nc > 0 ? last_.n_z / Nc : 0;
    if (nb > 0) {
      warm_.segment(last_.n_v, (Nc - 1) * nb) = res.x.segment(last_.n_v + nb, (Nc - 1) * nb);
      warm_.segment(last_.n_v + (Nc - 1) * nb, nb) = res.x.segment(last_.n_v + (Nc - 1) * nb, nb);
    }
    have_warm_ = true;
  } else {
    spdlog::warn("MPC at t={}s: solver returned {}, holding the previous action", t, to_string(res.status));
    action.u1 = u_prev_;
    action.held = true;
    have_warm_ = false;
  }
  u_prev_ = action.u1;
  action.solve_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
  spdlog::debug("MPC t={}s kind={} u={} obj={} iters={} kkt={:.2e}", t, to_string(kind_), action.u1[0],
                action.objective, action.iterations, action.kkt.worst());
  return action;
}

void MpcController::advance(int k, const Vec& u1_applied) {
  Vec u(n_u1_ + model_->n_u2());
  u.head(n_u1_) = u1_applied;
  u.tail(model_->n_u2()) = known_at(k);
  if (kind_ == ControllerKind::Linearized && rom_->kind == ReducedModel::Kind::Linearized) {
    if (!stepper_) stepper_ = std::make_unique<LinearizedRomStepper>(*rom_);
    stepper_->set_coefficients(lm_.coefficients(k), k);
    xr_ = stepper_->step(xr_, u, k);
  } else {
    xr_ = reduced_step(*rom_, xr_, u, k);
  }
  if (!xr_.allFinite()) throw NumericalError("controller state became non-finite at step " + std::to_string(k + 1));
}

// ---------------------------------------------------------------------------
// Closed loop

std::string ClosedLoopLog::to_csv() const {
  std::string out = "time_s,booster_id,u_mg_per_min,objective,solve_ms\n";
  for (const auto& a : actions)
    for (std::size_t b = 0; b < booster_ids.size(); ++b)
      out += fmt::format("{},{},{:.10g},{:.10g},{:.3f}\n", a.time_s, booster_ids[b], a.u1[static_cast<Eigen::Index>(b)],
                         a.objective, a.solve_ms);
  return out;
}

ClosedLoopLog closed_loop_run(const FullOrderModel& plant, const Vec& x0_model, MpcController& controller,
                              const Mat& plant_inputs, const ClosedLoopOptions& options) {
  const auto t_start = std::chrono::steady_clock::now();
  const int N = options.n_steps;
  const int nu1 = plant.n_u1(), ny1 = static_cast<int>(plant.devices.n_y1());
  if (N < 1) throw ValidationError("closed loop needs at least one step");
  if (x0_model.size() != plant.n_state()) throw ValidationError("plant initial state has wrong dimension");
  if (plant_inputs.size() > 0 && plant_inputs.rows() != plant.n_inputs())
    throw ValidationError("plant inputs must have one row per booster and intrusion point");
  const int n_int = controller.steps_per_interval();

  ClosedLoopLog log;
  log.booster_ids = plant.devices.boosters;
  log.dt = plant.dt;
  log.outputs.resize(plant.n_y(), N + 1);
  log.inputs.resize(nu1, N);

  struct Pending {
    int state;
    double time, value;
    bool done = false;
  };
  std::vector<Pending> pending;
  for (const auto& d : options.disturbances) {
    const auto node = plant.graph.node_index(d.node);
    if (!node) throw ValidationError("disturbance at unknown node '" + d.node + "'");
    pending.push_back({plant.map.node_state(*node), d.time, d.chlorine});
  }

  auto inputs_at = [&](int k) {
    Vec u = Vec::Zero(plant.n_inputs());
    if (plant_inputs.cols() > 0) u = plant_inputs.col(std::min<Eigen::Index>(k, plant_inputs.cols() - 1));
    return u;
  };
  const auto& elems = plant.map.bilinear_states();
  const int nx = plant.n_x;
  const bool check = options.check_envelopes && controller.kind() == ControllerKind::Relaxed;
  auto check_envelopes = [&](const Vec& x) {
    const auto& env = controller.envelopes();
    if (env.size() != elems.size()) return;
    for (std::size_t j = 0; j < elems.size(); ++j) {
      const int i = elems[j];
      const double x1 = x[i] + plant.x_offset[i], x2 = x[nx + i] + plant.x_offset[nx + i];
      const double excess = (env[j].G * Eigen::Vector3d(x1, x2, x1 * x2) - env[j].h).maxCoeff();
      ++log.envelope_checks;
      if (excess > 1e-12) {
        ++log.envelope_violations;
        log.worst_envelope_excess = std::max(log.worst_envelope_excess, excess);
      }
    }
  };

  Vec x = x0_model;
  Vec u1 = Vec::Constant(nu1, controller.config().u1_min);
  controller.reset(x0_model + plant.x_offset, u1);
  for (int k = 0; k <= N; ++k) {
    for (auto& p : pending) {
      if (!p.done && p.time <= k * plant.dt + 1e-9) {
        x[p.state] = p.value - plant.x_offset[p.state];
        p.done = true;
      }
    }
    Vec u = inputs_at(k);
    u.head(nu1) = u1;
    if (k < N && k % n_int == 0) {
      const Vec y = output(plant, x, u, k);
      ControlAction a = controller.act(k, y.head(ny1));
      u1 = a.u1;
      u.head(nu1) = u1;
      log.actions.push_back(std::move(a));
      if (check) check_envelopes(x);
    }
    log.outputs.col(k) = output(plant, x, u, k);
    if (k == N) break;
    log.inputs.col(k) = u1;
    x = step(plant, x, u, k);
    controller.advance(k, u1);
    if (!x.allFinite()) throw NumericalError(fmt::format("plant state became non-finite at t={}s", (k + 1) * plant.dt));
    if (check) check_envelopes(x);
  }
  log.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return log;
}

}  // namespace mswq
