#include <fstream>
#include <memory>
#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mswq/control.hpp"
#include "mswq/dynamics.hpp"
#include "mswq/errors.hpp"
#include "mswq/linearize.hpp"
#include "mswq/mor.hpp"
#include "mswq/network.hpp"
#include "mswq/pipeline.hpp"
#include "mswq/qp.hpp"

namespace py = pybind11;
using namespace mswq;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// One network, hydraulic profile and scenario, assembled once.
class Case {
 public:
  Case(const std::string& network, const std::string& hydraulics, const std::string& scenario,
       const std::string& scheme, bool single) {
    graph_ = parse_network(slurp(network));
    scenario_ = parse_scenario(slurp(scenario));
    if (!scheme.empty()) scenario_.scheme = parse_scheme(scheme);
    if (single) scenario_ = single_species(scenario_);
    profile_ = parse_hydraulics(slurp(hydraulics), graph_, scenario_.hydraulic_step_s);
    scenario_.validate(graph_);
    fom_ = std::make_shared<FullOrderModel>(build_model(graph_, profile_, scenario_));
    x0_ = initial_state(*fom_, scenario_);
  }

  int n_x() const { return fom_->n_x; }
  int n_state() const { return static_cast<int>(fom_->n_state()); }
  int n_steps() const { return scenario_.n_steps(); }
  double dt() const { return fom_->dt; }
  std::vector<std::string> output_labels() const { return fom_->output_labels(); }
  std::string reaction() const { return to_string(scenario_.reaction.kind); }

  Mat simulate_outputs(double dose, bool linearized) const {
    const Mat U = inputs(dose);
    const Vec x0 = x0_ - fom_->x_offset;
    if (!linearized) return simulate(*fom_, x0, U, n_steps()).outputs;
    LinearizedModel lm =
        build_ldes(fom_, OperatingSchedule::from_state(*fom_, x0_, scenario_.linearization), scenario_.horizon_s);
    return simulate_linear(lm, x0, U, n_steps()).outputs;
  }

  py::dict reduce(const std::string& method, int n_r, double dose) const {
    RomOptions ro = rom_options(parse_method(method), n_r);
    const RomBuild b = build_rom(*fom_, x0_, ro);
    const Mat U = inputs(dose);
    const Mat y_ref = simulate_reference(b, U, n_steps());
    const Mat y_rom = simulate_rom(b, U, n_steps());
    py::dict d;
    d["method"] = method;
    d["rank"] = b.rank;
    d["n_r"] = b.pair.n_r;
    d["rmse"] = rmse(y_ref, y_rom);
    d["max_abs_error"] = (y_ref - y_rom).cwiseAbs().maxCoeff();
    d["reference"] = y_ref;
    d["reduced"] = y_rom;
    d["offline_s"] = b.offline_s;
    return d;
  }

  py::dict control(bool relaxed, int n_r) const {
    const PipelinePlan plan = route(scenario_.reaction.kind, relaxed || scenario_.relaxed);
    const bool single = scenario_.reaction.kr == 0.0;
    if (single && plan.controller == ControllerKind::Relaxed)
      throw ValidationError("a single-species case has no mutual reaction to relax");
    const ControllerKind kind = single ? ControllerKind::Linear : plan.controller;
    const RomBuild b = build_rom(*fom_, x0_, rom_options(plan.method, n_r));
    const Mat U = scenario_inputs(*fom_, scenario_);
    MpcController ctl(b.model, b.rom, kind, scenario_.control, U.bottomRows(fom_->n_u2()), scenario_.linearization);
    ClosedLoopOptions opt;
    opt.n_steps = n_steps();
    opt.disturbances = scenario_.disturbances;
    ClosedLoopLog log;
    {
      py::gil_scoped_release release;
      log = closed_loop_run(*fom_, x0_ - fom_->x_offset, ctl, U, opt);
    }
    const auto na = static_cast<Eigen::Index>(log.actions.size());
    Vec times(na);
    Mat doses(na, fom_->n_u1());
    int held = 0;
    double worst_kkt = 0.0;
    for (Eigen::Index i = 0; i < na; ++i) {
      const auto& a = log.actions[static_cast<std::size_t>(i)];
      times[i] = a.time_s;
      doses.row(i) = a.u1.transpose();
      held += a.held ? 1 : 0;
      worst_kkt = std::max(worst_kkt, a.kkt.worst());
    }
    py::dict d;
    d["controller"] = to_string(kind);
    d["stages"] = plan.stages;
    d["booster_ids"] = log.booster_ids;
    d["action_times_s"] = times;
    d["doses_mg_per_min"] = doses;
    d["outputs"] = log.outputs;
    d["held"] = held;
    d["worst_kkt"] = worst_kkt;
    d["envelope_violations"] = log.envelope_violations;
    d["wall_s"] = log.wall_s;
    return d;
  }

 private:
  Mat inputs(double dose) const {
    Mat U = scenario_inputs(*fom_, scenario_);
    if (fom_->n_u1() > 0) U.topRows(fom_->n_u1()).setConstant(dose);
    return U;
  }

  RomOptions rom_options(MorMethod method, int n_r) const {
    RomOptions ro;
    ro.method = method;
    ro.n_r = n_r;
    ro.mor = scenario_.mor;
    ro.policy = scenario_.linearization;
    ro.horizon_s = scenario_.horizon_s;
    if (method == MorMethod::Bpod) ro.adjoint_reactant_nodes = scenario_.devices.intrusion_points;
    return ro;
  }

  NetworkGraph graph_;
  ScenarioConfig scenario_;
  HydraulicProfile profile_;
  std::shared_ptr<FullOrderModel> fom_;
  Vec x0_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-species water-quality simulation, model reduction and booster control";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<OutOfScopeError>(m, "OutOfScopeError", PyExc_NotImplementedError);

  py::class_<Case>(m, "Case")
      .def(py::init<const std::string&, const std::string&, const std::string&, const std::string&, bool>(),
           py::arg("network"), py::arg("hydraulics"), py::arg("scenario"), py::arg("scheme") = "",
           py::arg("single_species") = false)
      .def_property_readonly("n_x", &Case::n_x, "states per species")
      .def_property_readonly("n_state", &Case::n_state)
      .def_property_readonly("n_steps", &Case::n_steps)
      .def_property_readonly("dt", &Case::dt)
      .def_property_readonly("reaction", &Case::reaction)
      .def_property_readonly("output_labels", &Case::output_labels)
      .def("simulate", &Case::simulate_outputs, py::arg("dose") = 0.0, py::arg("linearized") = false,
           "Sensor outputs (n_y x n_steps+1) under a constant booster dose in mg/min.")
      .def("reduce", &Case::reduce, py::arg("method") = "lpod", py::arg("n_r") = -1, py::arg("dose") = 0.0,
           "Build a reduced model and compare it with its full-order reference.")
      .def("control", &Case::control, py::arg("relaxed") = false, py::arg("n_r") = -1,
           "Closed-loop booster control over the scenario horizon.");

  py::class_<McCormickEnvelope>(m, "McCormickEnvelope")
      .def_readonly("x1_lo", &McCormickEnvelope::x1_lo)
      .def_readonly("x1_hi", &McCormickEnvelope::x1_hi)
      .def_readonly("x2_lo", &McCormickEnvelope::x2_lo)
      .def_readonly("x2_hi", &McCormickEnvelope::x2_hi)
      .def_readonly("G", &McCormickEnvelope::G)
      .def_readonly("h", &McCormickEnvelope::h)
      .def("lower", &McCormickEnvelope::lower)
      .def("upper", &McCormickEnvelope::upper)
      .def("admits", &McCormickEnvelope::admits, py::arg("x1"), py::arg("x2"), py::arg("z"), py::arg("tol") = 0.0);
  m.def("mccormick", &make_envelope, py::arg("x1_lo"), py::arg("x1_hi"), py::arg("x2_lo"), py::arg("x2_hi"),
        py::arg("kr") = 0.0);

  m.def(
      "solve_qp",
      [](const Mat& P, const Vec& q, const Mat& A, const Vec& l, const Vec& u) {
        QpProblem qp{P, q, A, l, u, {}, {}};
        qp.validate();
        const QpResult r = solve_qp(qp);
        py::dict d;
        d["x"] = r.x;
        d["y"] = r.y;
        d["objective"] = r.objective;
        d["status"] = to_string(r.status);
        d["kkt"] = kkt_residuals(qp, r.x, r.y).worst();
        return d;
      },
      py::arg("P"), py::arg("q"), py::arg("A"), py::arg("l"), py::arg("u"),
      "minimize 1/2 x'Px + q'x subject to l <= Ax <= u");

  m.def(
      "route",
      [](const std::string& reaction, bool relaxed) { return route(parse_reaction_kind(reaction), relaxed).stages; },
      py::arg("reaction"), py::arg("relaxed") = false);
}
