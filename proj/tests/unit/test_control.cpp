#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include <spdlog/spdlog.h>

#include "../common/fixtures.hpp"
#include "mswq/control.hpp"
#include "mswq/errors.hpp"
#include "mswq/pipeline.hpp"

using namespace mswq;

namespace {

struct Quiet {
  Quiet() { spdlog::set_level(spdlog::level::warn); }
} quiet;

// Time-invariant interval model with one sample per interval and no offsets.
IntervalModel lti(const Mat& A, const Mat& B, const Mat& C, int n_pred) {
  IntervalModel m;
  for (int i = 0; i < n_pred; ++i) {
    m.A.push_back(A);
    m.Bu.push_back(B);
    m.w.push_back(Vec::Zero(A.rows()));
  }
  m.C = C;
  m.Du = Mat::Zero(C.rows(), B.cols());
  m.yc.assign(static_cast<std::size_t>(n_pred + 1), Vec::Zero(C.rows()));
  m.steps = 1;
  return m;
}

ControlConfig toy_config(int n_ctl, int n_pred, double u_max) {
  ControlConfig c;
  c.n_ctl = n_ctl;
  c.n_pred = n_pred;
  c.u1_max = {u_max};
  c.control_interval_s = 60.0;
  return c;
}

QpResult solve(const MpcProblem& p) { return solve_qp(p.qp); }

// Outputs y(1..Np) of the toy model for a held-input plan.
std::vector<Vec> predict(const IntervalModel& m, const Vec& x0, const Mat& U) {
  std::vector<Vec> ys;
  Vec x = x0;
  for (int i = 0; i < m.n_pred(); ++i) {
    const Vec u = U.col(std::min<Eigen::Index>(i, U.cols() - 1));
    x = m.A[static_cast<std::size_t>(i)] * x + m.Bu[static_cast<std::size_t>(i)] * u;
    ys.push_back(m.C * x);
  }
  return ys;
}

struct Loop {
  FullOrderModel fom;
  ScenarioConfig sc;
  Vec x0;
  Mat U;
};

// Short-pipe three-node network with the reference scenario's control settings.
Loop short_network(double kr, double length = 200.0) {
  fixtures::ThreeNodeOptions o;
  o.length = length;
  o.kr = kr;
  o.horizon = 3600.0;
  Loop l;
  l.fom = fixtures::three_node_model(o, &l.sc);
  l.sc.initial_default.chlorine = 0.5;
  l.sc.initial["TK1"] = {0.5, 0.05};
  l.sc.sources["R1"] = {0.0, 0.0};
  l.sc.intrusions.push_back({"J1", 0.1, 0.0, 1800.0});
  l.sc.control.u1_max = {200000.0};
  l.sc.control.output_margin = 0.01;
  l.x0 = initial_state(l.fom, l.sc);
  l.U = scenario_inputs(l.fom, l.sc);
  return l;
}

RomBuild rom_for(const Loop& l, MorMethod method) {
  RomOptions ro;
  ro.method = method;
  ro.mor = l.sc.mor;
  ro.horizon_s = l.sc.horizon_s;
  if (method == MorMethod::Bpod) ro.adjoint_reactant_nodes = l.sc.devices.intrusion_points;
  return build_rom(l.fom, l.x0, ro);
}

}  // namespace

TEST_CASE("envelope over the unit-by-half box brackets the product") {
  const auto e = make_envelope(0.0, 1.0, 0.0, 0.5, 2e-4);
  CHECK(e.beta == doctest::Approx(-2e-4));
  for (int i = 0; i <= 20; ++i) {
    for (int j = 0; j <= 20; ++j) {
      const double x1 = i / 20.0, x2 = 0.5 * j / 20.0;
      CHECK(e.lower(x1, x2) <= x1 * x2 + 1e-15);
      CHECK(e.upper(x1, x2) >= x1 * x2 - 1e-15);
      CHECK(e.lower(x1, x2) >= 0.0 - 1e-15);
      CHECK(e.upper(x1, x2) <= 0.5 + 1e-15);
      CHECK(e.admits(x1, x2, x1 * x2, 1e-15));
    }
  }
  // corners are exact
  for (double x1 : {0.0, 1.0})
    for (double x2 : {0.0, 0.5}) {
      CHECK(e.lower(x1, x2) == doctest::Approx(x1 * x2).epsilon(1e-15));
      CHECK(e.upper(x1, x2) == doctest::Approx(x1 * x2).epsilon(1e-15));
    }
  CHECK_FALSE(e.admits(1.0, 0.5, 0.4, 1e-12));
  CHECK_FALSE(e.admits(0.5, 0.25, 0.26, 1e-12));
}

TEST_CASE("random boxes never exclude the true product") {
  std::mt19937 rng(21);
  std::uniform_real_distribution<double> ud(-3.0, 3.0), t01(0.0, 1.0);
  for (int n = 0; n < 20000; ++n) {
    double a = ud(rng), b = ud(rng), c = ud(rng), d = ud(rng);
    const auto e = make_envelope(std::min(a, b), std::max(a, b), std::min(c, d), std::max(c, d), 1.0);
    const double x1 = e.x1_lo + t01(rng) * (e.x1_hi - e.x1_lo), x2 = e.x2_lo + t01(rng) * (e.x2_hi - e.x2_lo);
    const double scale = 1.0 + std::fabs(x1 * x2);
    REQUIRE(e.admits(x1, x2, x1 * x2, 1e-12 * scale));
  }
}

TEST_CASE("a flat reactant box pins z to the product") {
  const auto e = make_envelope(0.0, 4.0, 0.0, 0.0, 1.0);
  for (double x1 : {0.0, 0.7, 4.0}) {
    CHECK(e.lower(x1, 0.0) == 0.0);
    CHECK(e.upper(x1, 0.0) == 0.0);
  }
  const auto f = make_envelope(0.1, 2.0, 0.3, 0.3, 1.0);
  for (double x1 : {0.1, 1.3, 2.0}) {
    CHECK(e.admits(x1, 0.0, 0.0));
    CHECK(f.lower(x1, 0.3) == doctest::Approx(0.3 * x1).epsilon(1e-14));
    CHECK(f.upper(x1, 0.3) == doctest::Approx(0.3 * x1).epsilon(1e-14));
  }
}

TEST_CASE("inverted boxes are rejected") {
  CHECK_THROWS_AS(make_envelope(1.0, 0.0, 0.0, 1.0, 1.0), ValidationError);
  CHECK_THROWS_AS(make_envelope(0.0, 1.0, 0.2, 0.1, 1.0), ValidationError);
}

TEST_CASE("scalar velocity form matches the hand construction") {
  const double a = 0.9, b = 0.5, g = 2.0, kr = 0.3;
  const Mat A = Mat::Constant(1, 1, a), B = Mat::Constant(1, 1, b), C = Mat::Constant(1, 1, 1.0),
            Gz = Mat::Constant(1, 1, g);
  const auto s = augment_system(A, B, C, Gz, kr);
  Mat Phi(2, 2), Gamma(2, 2);
  Phi << a, 0.0, a, 1.0;
  Gamma << b, -kr * g, b, -kr * g;
  CHECK((s.Phi - Phi).norm() < 1e-15);
  CHECK((s.Gamma - Gamma).norm() < 1e-15);
  CHECK_THROWS_AS(augment_system(A, Mat::Zero(2, 1), C, Gz, kr), ValidationError);
}

TEST_CASE("without mutual reaction the product channel has no effect") {
  std::mt19937 rng(4);
  std::normal_distribution<double> nd;
  Mat A(3, 3), B(3, 1), C(2, 3), Gz(3, 2);
  for (auto* M : {&A, &B, &C, &Gz})
    for (auto& v : M->reshaped()) v = nd(rng);
  const auto s = augment_system(A, B, C, Gz, 0.0);
  CHECK(s.Gamma.rightCols(2).cwiseAbs().maxCoeff() == 0.0);
  const Vec xa = Vec::LinSpaced(5, -1.0, 1.0), du = Vec::Constant(1, 0.4);
  CHECK((s.step(xa, du, Vec::Constant(2, 10.0)) - s.step(xa, du, Vec::Zero(2))).norm() == 0.0);
}

TEST_CASE("true product increments from a bilinear run reproduce its outputs") {
  // x+ = A x + B u - kr Gz (x1 .* x2) with x1, x2 two entries of x.
  std::mt19937 rng(8);
  std::normal_distribution<double> nd;
  const int n = 5;
  Mat A = Mat::Identity(n, n) * 0.7;
  for (int i = 0; i + 1 < n; ++i) A(i + 1, i) = 0.2;
  Mat B = Mat::Zero(n, 1), C = Mat::Zero(2, n), Gz = Mat::Zero(n, 1);
  B(0, 0) = 1.0;
  C(0, 2) = 1.0;
  C(1, 4) = 1.0;
  Gz(1, 0) = 1.0;
  Gz(3, 0) = 1.0;
  const double kr = 0.8;
  auto product = [](const Vec& x) { return Vec::Constant(1, x[1] * x[3]); };

  Vec x = Vec::Constant(n, 0.5), x_prev = x;
  Vec u_prev = Vec::Zero(1), z_prev = product(x);
  const auto s = augment_system(A, B, C, Gz, kr);
  Vec xa(n + 2);
  // Start the velocity form from a first true step.
  Vec u = Vec::Constant(1, 0.3);
  x = A * x_prev + B * u - kr * Gz * z_prev;
  xa << x - x_prev, C * x;
  u_prev = u;
  z_prev = product(x_prev);
  for (int k = 0; k < 40; ++k) {
    u = Vec::Constant(1, 0.3 + 0.2 * std::sin(0.3 * k));
    const Vec z = product(x);
    const Vec x_next = A * x + B * u - kr * Gz * z;
    xa = s.step(xa, u - u_prev, z - z_prev);
    CHECK((xa.tail(2) - C * x_next).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((xa.head(n) - (x_next - x)).cwiseAbs().maxCoeff() < 1e-12);
    x = x_next;
    u_prev = u;
    z_prev = z;
  }
}

TEST_CASE("zero dosing cost keeps the previous action") {
  Mat A(2, 2), B(2, 1), C(1, 2);
  A << 0.8, 0.0, 0.1, 0.9;
  B << 0.05, 0.0;
  C << 0.0, 1.0;
  const auto m = lti(A, B, C, 6);
  auto cfg = toy_config(3, 6, 10.0);
  cfg.unit_cost = 0.0;
  const Vec u_prev = Vec::Constant(1, 4.0);
  const Vec x0 = Vec::Constant(2, 2.0);  // well above the lower bound throughout
  const auto p = build_qp(m, cfg, x0, Vec::Zero(1), u_prev, nullptr);
  const auto r = solve(p);
  REQUIRE(r.status == QpStatus::Solved);
  CHECK(r.x.head(p.n_v).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(kkt_residuals(p.qp, r.x, r.y).worst() < 1e-6);
}

TEST_CASE("chlorine below the bound makes the upstream booster dose, as a grid search confirms") {
  // booster -> x1 -> x2 -> x3 (sensed)
  Mat A = Mat::Zero(3, 3), B = Mat::Zero(3, 1), C = Mat::Zero(1, 3);
  A << 0.5, 0.0, 0.0, 0.4, 0.5, 0.0, 0.0, 0.4, 0.6;
  B(0, 0) = 0.01;
  C(0, 2) = 1.0;
  const int Np = 4;
  const auto m = lti(A, B, C, Np);
  const double u_max = 200.0;
  const auto cfg = toy_config(1, Np, u_max);
  const Vec x0 = (Vec(3) << 0.3, 0.3, 0.1).finished();
  const auto p = build_qp(m, cfg, x0, Vec::Zero(1), Vec::Zero(1), nullptr);
  const auto r = solve(p);
  REQUIRE(r.status == QpStatus::Solved);
  const double u_qp = p.inputs(r.x, 1)(0, 0);
  CHECK(u_qp > 0.0);
  CHECK(kkt_residuals(p.qp, r.x, r.y).worst() < 1e-6);

  // Oracle: the same objective with the slacks eliminated, scanned on a 1e-4 grid.
  const double s_mean = u_max, w = p.qp.q[0];
  double best = INFINITY, u_best = 0.0;
  for (int g = 0; g <= 10000; ++g) {
    const double v = g * 1e-4;
    const auto ys = predict(m, x0, Mat::Constant(1, 1, v * s_mean));
    double f = w * v + cfg.regularization * v * v;
    for (const auto& y : ys) f += cfg.slack_penalty_factor * std::max(0.0, cfg.x1_min - y[0]);
    if (f < best) best = f, u_best = v * s_mean;
  }
  CHECK(std::fabs(u_qp - u_best) <= 1e-4 * s_mean);
}

TEST_CASE("re-solving one interval later returns the shifted tail of the plan") {
  const Mat A = Mat::Constant(1, 1, 0.5), B = Mat::Constant(1, 1, 0.1), C = Mat::Constant(1, 1, 1.0);
  const int Nc = 3, Np = 6;
  const auto m = lti(A, B, C, Np);
  const auto cfg = toy_config(Nc, Np, 10.0);
  const Vec x0 = Vec::Constant(1, 0.5);
  const auto p0 = build_qp(m, cfg, x0, Vec::Zero(1), Vec::Zero(1), nullptr);
  const auto r0 = solve(p0);
  REQUIRE(r0.status == QpStatus::Solved);
  const Mat plan0 = p0.inputs(r0.x, Nc);
  // Delay dosing one interval, then ramp to the equilibrium input that holds y at the bound.
  CHECK(plan0(0, 0) == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(plan0(0, 1) == doctest::Approx(0.75).epsilon(1e-6));
  CHECK(plan0(0, 2) == doctest::Approx(1.0).epsilon(1e-6));

  const Vec x1 = A * x0 + B * plan0.col(0);
  const auto p1 = build_qp(m, cfg, x1, Vec::Zero(1), plan0.col(0), nullptr);
  const auto r1 = solve(p1);
  REQUIRE(r1.status == QpStatus::Solved);
  const Mat plan1 = p1.inputs(r1.x, Nc);
  CHECK(std::fabs(plan1(0, 0) - plan0(0, 1)) < 1e-6);
  CHECK(std::fabs(plan1(0, 1) - plan0(0, 2)) < 1e-6);
}

TEST_CASE("relaxed problem on the reference network has four rows per element per move") {
  auto l = short_network(2e-4, 1000.0);
  const auto rb = rom_for(l, MorMethod::Nlpod);
  MpcController ctl(rb.model, rb.rom, ControllerKind::Relaxed, l.sc.control, l.U.bottomRows(l.fom.n_u2()));
  ctl.reset(l.x0, Vec::Zero(1));
  const auto im = ctl.interval_model(0);
  const auto env = build_envelopes(*rb.model, l.x0, l.sc.control, l.sc.reaction.kr, 0.1, 0.0);
  const auto p = build_qp(im, l.sc.control, ctl.reduced_state(), Vec::Zero(2), Vec::Zero(1), &env);
  const int segments = l.fom.map.segments(*l.fom.graph.link_index("Pipe1"));
  CHECK(segments == 200);
  CHECK(p.rows_envelope == 4 * (1 + segments) * l.sc.control.n_ctl);
  CHECK(p.n_z == (1 + segments) * l.sc.control.n_ctl);
  CHECK(p.n_e == 1 + segments);
}

TEST_CASE("network boxes start at the regulatory chlorine floor") {
  auto l = short_network(2e-4);
  const auto env = build_envelopes(l.fom, l.x0, l.sc.control, l.sc.reaction.kr, 0.1, 0.0);
  REQUIRE(env.size() == l.fom.map.bilinear_states().size());
  CHECK(env[0].x1_lo == 0.2);
  CHECK(env[0].x1_hi == 4.0);
  CHECK(env[0].x2_lo == 0.0);
  CHECK(env[0].x2_hi == 0.1);
  // With chlorine at the floor the lower faces charge at least 0.2 * x2.
  CHECK(env[0].lower(0.2, 0.05) == doctest::Approx(0.01).epsilon(1e-14));

  Vec low = l.x0;
  low[l.fom.map.bilinear_states()[3]] = 0.15;
  CHECK(build_envelopes(l.fom, low, l.sc.control, l.sc.reaction.kr, 0.1, 0.0)[0].x1_lo == 0.15);

  const auto widened = build_envelopes(l.fom, l.x0, l.sc.control, l.sc.reaction.kr, 0.1, 0.05)[0];
  CHECK(widened.x1_lo == doctest::Approx(0.2 - 0.01 - 1e-3));
  CHECK(widened.x1_hi == doctest::Approx(4.0 + 0.2 + 1e-3));

  // No reactant anywhere and a zero ceiling: z is pinned to zero.
  Vec clean = l.x0;
  clean.tail(l.fom.n_x).setZero();
  auto cfg = l.sc.control;
  cfg.x2_max = 0.0;
  const auto flat = build_envelopes(l.fom, clean, cfg, l.sc.reaction.kr, 0.0, 0.0)[0];
  CHECK(flat.lower(1.0, 0.0) == 0.0);
  CHECK(flat.upper(1.0, 0.0) == 0.0);
}

TEST_CASE("without mutual reaction the three controllers act identically") {
  auto l = short_network(0.0);
  const auto rb = rom_for(l, MorMethod::Bpod);
  REQUIRE(rb.rom->kind == ReducedModel::Kind::Linear);
  const Mat known = l.U.bottomRows(l.fom.n_u2());
  std::vector<ClosedLoopLog> logs;
  for (auto kind : {ControllerKind::Linear, ControllerKind::Linearized, ControllerKind::Relaxed}) {
    MpcController ctl(rb.model, rb.rom, kind, l.sc.control, known);
    ClosedLoopOptions opt;
    opt.n_steps = 3 * ctl.steps_per_interval();
    logs.push_back(closed_loop_run(l.fom, l.x0, ctl, l.U, opt));
  }
  const double range = l.sc.control.u1_max_for(0) - l.sc.control.u1_min;
  for (std::size_t c = 1; c < logs.size(); ++c) {
    REQUIRE(logs[c].actions.size() == logs[0].actions.size());
    for (std::size_t a = 0; a < logs[0].actions.size(); ++a) {
      CAPTURE(c);
      CAPTURE(a);
      CHECK(logs[c].actions[a].status == QpStatus::Solved);
      CHECK(std::fabs(logs[c].actions[a].u1[0] - logs[0].actions[a].u1[0]) / range < 1e-8);
    }
  }
}

TEST_CASE("linearized control keeps sensed chlorine in bounds and settles") {
  auto l = short_network(2e-4);
  l.sc.horizon_s = 7200.0;
  l.U = scenario_inputs(l.fom, l.sc);
  const auto rb = rom_for(l, MorMethod::Bpod);
  MpcController ctl(rb.model, rb.rom, ControllerKind::Linearized, l.sc.control, l.U.bottomRows(l.fom.n_u2()));
  ClosedLoopOptions opt;
  opt.n_steps = l.sc.n_steps();
  const auto log = closed_loop_run(l.fom, l.x0, ctl, l.U, opt);
  const int ny1 = 2, warm = ctl.steps_per_interval();
  for (Eigen::Index k = warm; k < log.outputs.cols(); ++k) {
    CHECK(log.outputs.col(k).head(ny1).minCoeff() >= l.sc.control.x1_min - 1e-9);
    CHECK(log.outputs.col(k).head(ny1).maxCoeff() <= l.sc.control.x1_max + 1e-9);
  }
  for (const auto& a : log.actions) {
    CHECK(a.status == QpStatus::Solved);
    CHECK(a.kkt.worst() < 1e-6);
    CHECK(a.u1[0] >= l.sc.control.u1_min);
    CHECK(a.u1[0] <= l.sc.control.u1_max_for(0));
  }
  // after the intrusion has left the network the action is steady
  const auto n = log.actions.size();
  REQUIRE(n >= 3);
  const double u_last = log.actions[n - 1].u1[0], u_prev = log.actions[n - 2].u1[0];
  CHECK(std::fabs(u_last - u_prev) <= 1e-3 * u_last);
  CHECK(log.to_csv().rfind("time_s,booster_id,u_mg_per_min,objective,solve_ms\n", 0) == 0);
}

TEST_CASE("relaxed control on a short pipe keeps every plant product inside its envelope") {
  auto l = short_network(2e-4);
  const auto rb = rom_for(l, MorMethod::Nlpod);
  MpcController ctl(rb.model, rb.rom, ControllerKind::Relaxed, l.sc.control, l.U.bottomRows(l.fom.n_u2()));
  ClosedLoopOptions opt;
  opt.n_steps = 2 * ctl.steps_per_interval();
  const auto log = closed_loop_run(l.fom, l.x0, ctl, l.U, opt);
  CHECK(log.envelope_checks > 0);
  CHECK(log.envelope_violations == 0);
  for (const auto& a : log.actions) {
    CHECK(a.status == QpStatus::Solved);
    CHECK(a.kkt.worst() < 1e-6);
  }
}

TEST_CASE("a sensed chlorine drop raises the dose at the next control instant") {
  auto l = short_network(0.0);
  const auto rb = rom_for(l, MorMethod::Bpod);
  MpcController ctl(rb.model, rb.rom, ControllerKind::Linear, l.sc.control, l.U.bottomRows(l.fom.n_u2()));
  ClosedLoopOptions opt;
  opt.n_steps = l.sc.n_steps();
  opt.disturbances.push_back({"TK1", 1500.0, 0.15});
  const auto log = closed_loop_run(l.fom, l.x0, ctl, l.U, opt);
  // actions at 1200 s (before) and 1800 s (first instant after the drop)
  REQUIRE(log.actions.size() >= 4);
  CHECK(log.actions[3].u1[0] > log.actions[2].u1[0]);
}

TEST_CASE("controller input validation") {
  auto l = short_network(2e-4);
  const auto rb = rom_for(l, MorMethod::Nlpod);
  CHECK_THROWS_AS(MpcController(rb.model, rb.rom, ControllerKind::Linear, l.sc.control, Mat()), ValidationError);
  auto bad = l.sc.control;
  bad.control_interval_s = 7.0;
  CHECK_THROWS_AS(MpcController(rb.model, rb.rom, ControllerKind::Relaxed, bad, Mat()), ValidationError);
  MpcController ctl(rb.model, rb.rom, ControllerKind::Relaxed, l.sc.control, Mat());
  CHECK_THROWS_AS(ctl.reset(Vec::Zero(3), Vec::Zero(1)), ValidationError);
}
