#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "../common/fixtures.hpp"
#include "mswq/errors.hpp"
#include "mswq/linearize.hpp"

using namespace mswq;

namespace {

std::shared_ptr<const FullOrderModel> shared(FullOrderModel m) { return std::make_shared<const FullOrderModel>(std::move(m)); }

// Reservoir, pump, junction, one-segment pipe, tank: five states per species.
FullOrderModel five_state(ScenarioConfig* out) {
  NetworkGraph g({{"R1", NodeKind::Reservoir, 0}, {"J1", NodeKind::Junction, 0}, {"TK1", NodeKind::Tank, 5.0}},
                 {{"M", LinkKind::Pump, "R1", "J1"}, {"P", LinkKind::Pipe, "J1", "TK1", 5.0, 0.1}});
  auto prof = fixtures::static_profile(g, 1.0, 0.1);
  ScenarioConfig sc;
  sc.horizon_s = 300.0;
  sc.dt = 5.0;
  sc.hydraulic_step_s = 3600.0;
  sc.reaction.kr = 0.02;
  sc.reaction.kb = 1e-4;
  sc.devices.chlorine_sensors = {"TK1"};
  sc.devices.reactant_sensors = {"TK1"};
  sc.sources["R1"] = {1.5, 0.6};
  sc.initial_default = {0.4, 0.1};
  auto m = build_model(g, prof, sc);
  *out = sc;
  return m;
}

}  // namespace

TEST_CASE("zero operating point drops the reaction") {
  auto t = linearize_reaction(0.0, 0.0, 3e-4);
  CHECK(t.self == 0.0);
  CHECK(t.other == 0.0);
  CHECK(t.constant == 0.0);
}

TEST_CASE("tangency at the operating point") {
  const double kr = 3e-4;
  auto t = linearize_reaction(0.2, 0.05, kr);
  CHECK(t.self * 0.2 + t.other * 0.05 + t.constant == doctest::Approx(-kr * 0.2 * 0.05).epsilon(1e-15));
}

TEST_CASE("linearization error equals the product of deviations") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  const double kr = 2e-4;
  for (int i = 0; i < 2000; ++i) {
    double co = u(rng), cto = u(rng), c = u(rng), ct = u(rng);
    auto t = linearize_reaction(co, cto, kr);
    double err = (-kr * c * ct) - (t.self * c + t.other * ct + t.constant);
    const double scale = kr * (c * ct + co * ct + c * cto + co * cto);
    CHECK(std::fabs(err - (-kr * (c - co) * (ct - cto))) <= 8.0 * 2.2e-16 * scale);
  }
  CHECK_THROWS_AS(linearize_reaction(0, 0, -1), ValidationError);
}

TEST_CASE("zero schedule decouples the species") {
  fixtures::ThreeNodeOptions o;
  ScenarioConfig sc;
  auto base = shared(fixtures::three_node_model(o, &sc));
  auto lm = build_ldes(base, OperatingSchedule::constant(*base, 0.0, 0.0), sc.horizon_s);
  SpMat A = lm.block_matrix(0);
  const int nx = base->n_x;
  Mat dense(A);
  CHECK(dense.block(0, nx, nx, nx).isZero(0.0));
  CHECK(dense.block(nx, 0, nx, nx).isZero(0.0));
  CHECK(lm.phi(0).isZero(0.0));
  CHECK((dense - Mat(base->slices[0].A)).isZero(0.0));

  auto o2 = o;
  o2.kr = 0.0;
  auto decoupled = fixtures::three_node_model(o2);
  sc.sources["R1"] = {1.0, 0.3};
  Vec x0 = initial_state(*base, sc);
  auto a = simulate_linear(lm, x0, Mat(), 300);
  auto b = simulate(decoupled, x0, Mat(), 300);
  CHECK((a.outputs - b.outputs).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("cross blocks live only on bilinear rows") {
  fixtures::ThreeNodeOptions o;
  ScenarioConfig sc;
  auto base = shared(fixtures::three_node_model(o, &sc));
  auto lm = build_ldes(base, OperatingSchedule::constant(*base, 0.3, 0.1), sc.horizon_s);
  Mat dense(lm.block_matrix(0));
  const int nx = base->n_x;
  const auto& bil = base->map.bilinear_states();
  for (int i = 0; i < nx; ++i) {
    bool on = std::binary_search(bil.begin(), bil.end(), i);
    CHECK((dense.block(i, nx, 1, nx).cwiseAbs().sum() > 0.0) == on);
    CHECK((dense.block(nx + i, 0, 1, nx).cwiseAbs().sum() > 0.0) == on);
  }
}

TEST_CASE("schedule gaps are reported") {
  fixtures::ThreeNodeOptions o;
  auto base = shared(fixtures::three_node_model(o));
  OperatingSchedule s(base->map.bilinear_states(), {});
  for (std::size_t j = 0; j < s.size(); ++j) s.append(j, {j == 3 ? 60.0 : 0.0, 0.1, 0.1});
  CHECK_THROWS_WITH_AS(build_ldes(base, s, 7200.0), doctest::Contains("gap"), ValidationError);
}

TEST_CASE("fixed operating point tracks chlorine more closely than the reactant") {
  fixtures::ThreeNodeOptions o;
  ScenarioConfig sc;
  auto base = shared(fixtures::three_node_model(o, &sc));
  sc.sources["R1"] = {2.0, 0.5};
  Mat U = scenario_inputs(*base, sc);
  Vec x0 = initial_state(*base, sc);
  auto truth = simulate(*base, x0, U, sc.n_steps());
  auto zero = build_ldes(base, OperatingSchedule::constant(*base, 0.0, 0.0), sc.horizon_s);
  auto near = build_ldes(base, OperatingSchedule::constant(*base, 0.2, 0.05), sc.horizon_s);
  auto tz = simulate_linear(zero, x0, U, sc.n_steps());
  auto tn = simulate_linear(near, x0, U, sc.n_steps());
  auto err = [&](const Trajectory& t, int row) { return (t.outputs.row(row) - truth.outputs.row(row)).cwiseAbs().maxCoeff(); };
  CHECK(err(tn, 1) < err(tz, 1));
  // Dropping the reaction overestimates both species.
  CHECK(((tz.outputs.row(1) - truth.outputs.row(1)).array() >= -1e-12).all());
  CHECK(((tz.outputs.row(2) - truth.outputs.row(2)).array() >= -1e-12).all());
  // Relative to each species' own level the reactant tracks worse than chlorine.
  const double rel_cl = err(tn, 1) / truth.outputs.row(1).cwiseAbs().maxCoeff();
  const double rel_re = err(tn, 2) / truth.outputs.row(2).cwiseAbs().maxCoeff();
  CHECK(rel_re > rel_cl);
}

TEST_CASE("schedule equal to the exact trajectory reproduces the nonlinear run") {
  ScenarioConfig sc;
  auto base = shared(five_state(&sc));
  REQUIRE(base->n_x == 5);
  Vec x0 = initial_state(*base, sc);
  const int n = sc.n_steps();
  auto truth = simulate(*base, x0, Mat(), n);
  OperatingSchedule s(base->map.bilinear_states(), {});
  for (int k = 0; k < n; ++k)
    for (std::size_t j = 0; j < s.size(); ++j) {
      int i = s.element_states()[j];
      s.append(j, {k * sc.dt, truth.states(i, k), truth.states(base->n_x + i, k)});
    }
  auto lm = build_ldes(base, s, sc.horizon_s);
  auto lin = simulate_linear(lm, x0, Mat(), n);
  double bound = 0.0;
  for (int k = 0; k + 1 < n; ++k) {
    Vec d = truth.states.col(k + 1) - truth.states.col(k);
    bound = std::max(bound, sc.reaction.kr * (d.head(5).cwiseProduct(d.tail(5))).cwiseAbs().maxCoeff());
  }
  CHECK((lin.states - truth.states).cwiseAbs().maxCoeff() <= std::max(bound, 1e-14));
}

TEST_CASE("refresh to the current state leaves only the second-order term") {
  ScenarioConfig sc;
  auto base = shared(five_state(&sc));
  Vec x = initial_state(*base, sc);
  Vec nl_next = step(*base, x, Vec(), 0);
  auto sched = OperatingSchedule::from_state(*base, x);
  auto lm = build_ldes(base, sched, sc.horizon_s);
  Vec lin_next = step_linear(*base, lm.coefficients(0), x, Vec(), 0);
  CHECK((lin_next - nl_next).cwiseAbs().maxCoeff() < 1e-15);

  // Offsetting the operating point by (dc, dct) produces exactly alpha*dc*dct per element.
  Vec moved = x;
  const double dc = 0.07, dct = -0.03;
  for (int i : base->map.bilinear_states()) {
    moved[i] += dc;
    moved[base->n_x + i] += dct;
  }
  auto lm2 = build_ldes(base, OperatingSchedule::from_state(*base, moved), sc.horizon_s);
  Vec rhs_diff = Vec::Zero(base->n_state());
  const auto& nl = base->slices[0].nonlinear;
  for (std::size_t j = 0; j < nl.size(); ++j) {
    rhs_diff[nl.index[j]] = nl.alpha[j] * dc * dct;
    rhs_diff[base->n_x + nl.index[j]] = nl.alpha[j] * dc * dct;
  }
  Vec expected = nl_next - base->slices[0].solve_E(rhs_diff);
  Vec got = step_linear(*base, lm2.coefficients(0), x, Vec(), 0);
  CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("refresh policy timing") {
  ScenarioConfig sc;
  auto base = five_state(&sc);
  Vec x = initial_state(base, sc) + base.x_offset;
  auto s = OperatingSchedule::from_state(base, x);
  CHECK(s.next_scheduled_refresh() == doctest::Approx(300.0));

  Vec drift = x;
  drift[base.map.bilinear_states()[0]] += 0.01;
  CHECK(update_operating_points(s, base, drift, 100.0) == 0);  // below threshold, not yet due
  CHECK(update_operating_points(s, base, drift, 300.0) == 1);  // early refresh catches the drift
  CHECK(s.early_refresh_done());
  CHECK(s.next_scheduled_refresh() == doctest::Approx(3900.0));

  // Steady state: a due refresh changes nothing.
  CHECK(update_operating_points(s, base, drift, 3900.0) == 0);
  CHECK(s.points(0).size() == 2);

  // Event: threshold breach refreshes immediately, only where breached.
  Vec event = drift;
  event[base.n_x + base.map.bilinear_states()[1]] += 0.2;
  CHECK(update_operating_points(s, base, event, 3905.0) == 1);
  CHECK(s.points(1).back().start == doctest::Approx(3905.0));

  // Forced refresh on a control action takes every element.
  Vec all = event.array() + 0.001;
  CHECK(update_operating_points(s, base, all, 3910.0, RefreshReason::ControlAction) == s.size());
}

TEST_CASE("schedule csv dump") {
  ScenarioConfig sc;
  auto base = five_state(&sc);
  auto s = OperatingSchedule::constant(base, 0.2, 0.05);
  auto csv = s.to_csv(base);
  CHECK(csv.rfind("window_start_s,element_id,c_op,ctilde_op\n", 0) == 0);
  CHECK(csv.find("0,TK1,0.2,0.05") != std::string::npos);
}

TEST_CASE("linearizing a shifted model matches linearizing the original") {
  ScenarioConfig sc;
  auto m = five_state(&sc);
  Vec x0 = initial_state(m, sc);
  auto base = shared(m);
  auto shifted = shared(shift_initial_conditions(m, x0));
  auto sched = OperatingSchedule::constant(m, 0.3, 0.2);
  auto a = build_ldes(base, sched, sc.horizon_s);
  auto b = build_ldes(shifted, sched, sc.horizon_s);
  auto ta = simulate_linear(a, x0, Mat(), sc.n_steps());
  auto tb = simulate_linear(b, Vec::Zero(m.n_state()), Mat(), sc.n_steps());
  CHECK(((tb.states.colwise() + x0) - ta.states).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((tb.outputs - ta.outputs).cwiseAbs().maxCoeff() < 1e-12);
}
