// mswqm: command-line front end for simulation, reduction, control and run comparison.

#include <CLI11.hpp>
#include <json.hpp>

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mswq/errors.hpp"
#include "mswq/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mswq;

namespace {

constexpr const char* kToolVersion = "1.0.0";

// Columns that carry wall-clock measurements. They are dropped before output
// files are fingerprinted, so reruns can be checked byte for byte.
const std::set<std::string> kTimingColumns = {"solve_ms", "offline_s", "online_s", "wall_s", "run_a_s", "run_b_s"};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot read '" + path + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string strip_timing_columns(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line)) return csv;
  const auto header = split(line, ',');
  std::vector<bool> keep(header.size(), true);
  bool any = false;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (kTimingColumns.count(header[i])) keep[i] = false, any = true;
  if (!any) return csv;
  std::string out;
  auto emit = [&](const std::vector<std::string>& cells) {
    bool first = true;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i < keep.size() && !keep[i]) continue;
      if (!first) out += ',';
      out += cells[i];
      first = false;
    }
    out += '\n';
  };
  emit(header);
  while (std::getline(is, line)) emit(split(line, ','));
  return out;
}

std::string fingerprint_output(const fs::path& p) {
  const std::string body = slurp(p.string());
  return hex64(fnv1a(p.extension() == ".csv" ? strip_timing_columns(body) : body));
}

// One run's record. Written as manifest.json into the output directory; the
// canonical argument list is enough to run the same command again.
struct RunRecord {
  std::string subcommand;
  fs::path out;
  std::vector<std::string> args;
  json inputs = json::object();
  json options = json::object();
  json timing = json::object();
  json summary = json::object();
  std::vector<std::string> outputs;

  void add_input(const std::string& name, const std::string& path) {
    const std::string abs = fs::absolute(path).lexically_normal().string();
    inputs[name] = {{"path", abs}, {"fnv1a", hex64(fnv1a(slurp(path)))}};
  }

  void write_text(const std::string& name, const std::string& content) {
    std::ofstream f(out / name, std::ios::binary);
    if (!f) throw ValidationError("cannot write '" + (out / name).string() + "'");
    f << content;
    if (std::find(outputs.begin(), outputs.end(), name) == outputs.end()) outputs.push_back(name);
  }

  void register_output(const std::string& name) {
    if (std::find(outputs.begin(), outputs.end(), name) == outputs.end()) outputs.push_back(name);
  }

  void write_manifest() const {
    json m;
    m["tool"] = "mswqm";
    m["version"] = kToolVersion;
    m["subcommand"] = subcommand;
    m["args"] = args;
    m["inputs"] = inputs;
    m["options"] = options;
    m["seed"] = nullptr;  // core numerics are seed-free
    m["out"] = fs::absolute(out).lexically_normal().string();
    m["timing"] = timing;
    m["summary"] = summary;
    json outs = json::object();
    for (const auto& o : outputs) outs[o] = fingerprint_output(out / o);
    m["outputs"] = outs;
    std::ofstream f(out / "manifest.json");
    if (!f) throw ValidationError("cannot write manifest in '" + out.string() + "'");
    f << m.dump(2) << '\n';
  }
};

struct InputFlags {
  std::string network, hydraulics, scenario, scheme;
  bool single_species = false;
};

struct Loaded {
  NetworkGraph graph;
  HydraulicProfile profile;
  ScenarioConfig scenario;
};

void add_input_flags(CLI::App* cmd, InputFlags& f) {
  cmd->add_option("--network", f.network, "network description (TOML)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--hydraulics", f.hydraulics, "hydraulic profile (CSV)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--scenario", f.scenario, "scenario description (TOML)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--scheme", f.scheme, "override the scenario's transport scheme")
      ->check(CLI::IsMember({"explicit", "implicit"}));
  cmd->add_flag("--single-species", f.single_species, "drop the mutual reaction (chlorine decay only)");
}

Loaded load_inputs(const InputFlags& f, RunRecord& rec) {
  Loaded l;
  l.graph = parse_network(slurp(f.network));
  l.scenario = parse_scenario(slurp(f.scenario));
  if (!f.scheme.empty()) l.scenario.scheme = parse_scheme(f.scheme);
  if (f.single_species) l.scenario = single_species(l.scenario);
  l.profile = parse_hydraulics(slurp(f.hydraulics), l.graph, l.scenario.hydraulic_step_s);
  l.scenario.validate(l.graph);
  rec.add_input("network", f.network);
  rec.add_input("hydraulics", f.hydraulics);
  rec.add_input("scenario", f.scenario);
  rec.options["scheme"] = to_string(l.scenario.scheme);
  rec.options["single_species"] = f.single_species;
  rec.options["reaction"] = to_string(l.scenario.reaction.kind);
  return l;
}

std::vector<std::string> input_args(const RunRecord& rec, const InputFlags& f) {
  std::vector<std::string> a = {"--network", rec.inputs["network"]["path"].get<std::string>(), "--hydraulics",
                                rec.inputs["hydraulics"]["path"].get<std::string>(), "--scenario",
                                rec.inputs["scenario"]["path"].get<std::string>()};
  if (!f.scheme.empty()) a.insert(a.end(), {"--scheme", f.scheme});
  if (f.single_species) a.push_back("--single-species");
  return a;
}

void prepare_out(RunRecord& rec, const std::string& out) {
  rec.out = out;
  std::error_code ec;
  fs::create_directories(rec.out, ec);
  if (ec) throw ValidationError("cannot create output directory '" + out + "': " + ec.message());
}

std::string outputs_csv(const FullOrderModel& model, const Mat& outputs, double dt) {
  Trajectory t;
  t.dt = dt;
  t.outputs = outputs;
  return format_trajectory_csv(model, t, false);
}

Mat booster_schedule(const FullOrderModel& fom, const ScenarioConfig& s, double dose) {
  Mat U = scenario_inputs(fom, s);
  if (fom.n_u1() > 0) U.topRows(fom.n_u1()).setConstant(dose);
  return U;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
  InputFlags in;
  std::string model = "fom";
  double dose = 0.0;
  bool states = false;
  std::string out = "out";
};

void run_simulate(const SimulateOpts& o) {
  RunRecord rec;
  rec.subcommand = "simulate";
  prepare_out(rec, o.out);
  const Loaded l = load_inputs(o.in, rec);
  rec.options["model"] = o.model;
  rec.options["booster_dose"] = o.dose;

  auto t0 = Clock::now();
  auto fom = std::make_shared<FullOrderModel>(build_model(l.graph, l.profile, l.scenario));
  rec.timing["assemble_s"] = seconds_since(t0);
  const Vec x0 = initial_state(*fom, l.scenario) - fom->x_offset;
  const Mat U = booster_schedule(*fom, l.scenario, o.dose);
  const int n = l.scenario.n_steps();

  t0 = Clock::now();
  Trajectory tr;
  if (o.model == "fom") {
    tr = simulate(*fom, x0, U, n);
  } else {
    LinearizedModel lm = build_ldes(fom, OperatingSchedule::from_state(*fom, x0 + fom->x_offset, l.scenario.linearization),
                                    l.scenario.horizon_s);
    tr = simulate_linear(lm, x0, U, n, 1, true);
    rec.write_text("operating_schedule.csv", lm.schedule.to_csv(*fom));
  }
  rec.timing["simulate_s"] = seconds_since(t0);
  if (!tr.outputs.allFinite()) throw NumericalError("simulation produced non-finite outputs");

  rec.write_text("outputs.csv", outputs_csv(*fom, tr.outputs, tr.dt));
  if (o.states) rec.write_text("trajectory.csv", format_trajectory_csv(*fom, tr, true));
  rec.summary = {{"n_x", fom->n_x}, {"n_state", fom->n_state()}, {"n_steps", n}};

  rec.args = {"simulate"};
  auto in = input_args(rec, o.in);
  rec.args.insert(rec.args.end(), in.begin(), in.end());
  rec.args.insert(rec.args.end(), {"--model", o.model, "--dose", fmt::format("{}", o.dose)});
  if (o.states) rec.args.push_back("--states");
  rec.write_manifest();
  std::cout << fmt::format("simulated {} steps of a {}-state model ({}) in {:.2f} s -> {}\n", n, fom->n_state(),
                           o.model, rec.timing["simulate_s"].get<double>(), rec.out.string());
}

// ---------------------------------------------------------------------------
// reduce

struct ReduceOpts {
  InputFlags in;
  std::string method = "lpod";
  std::vector<int> nr;
  std::string snapshots;
  double dose = 0.0;
  int threads = 1;
  std::string out = "out";
};

struct SweepRow {
  int n_r = 0;
  double rmse = 0.0, max_err = 0.0, offline_s = 0.0, online_s = 0.0;
  Mat y;
  RomBuild build;
};

bool non_increasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[i - 1]) return false;
  return true;
}

void run_reduce(const ReduceOpts& o) {
  RunRecord rec;
  rec.subcommand = "reduce";
  prepare_out(rec, o.out);
  const Loaded l = load_inputs(o.in, rec);
  const MorMethod method = parse_method(o.method);
  rec.options["method"] = o.method;
  rec.options["n_r"] = o.nr;
  rec.options["booster_dose"] = o.dose;
  rec.options["threads"] = o.threads;

  const FullOrderModel fom = build_model(l.graph, l.profile, l.scenario);
  const Vec x0 = initial_state(fom, l.scenario);
  const Mat U = booster_schedule(fom, l.scenario, o.dose);
  const int n = l.scenario.n_steps();

  RomOptions ro;
  ro.method = method;
  ro.mor = l.scenario.mor;
  ro.policy = l.scenario.linearization;
  ro.horizon_s = l.scenario.horizon_s;
  SnapshotSet cached;
  if (!o.snapshots.empty()) {
    cached = read_snapshot_cache(o.snapshots);
    ro.snapshots = &cached;
    rec.add_input("snapshots", o.snapshots);
  }

  // The rank-level build fixes the snapshot set every sweep entry reuses.
  auto t0 = Clock::now();
  const RomBuild base = build_rom(fom, x0, ro);
  rec.timing["snapshots_and_transform_s"] = seconds_since(t0);
  if (o.snapshots.empty()) {
    write_snapshot_cache((rec.out / "snapshots.bin").string(), base.snapshots);
    rec.register_output("snapshots.bin");
  }
  t0 = Clock::now();
  const Mat y_ref = simulate_reference(base, U, n);
  rec.timing["reference_s"] = seconds_since(t0);

  std::vector<int> sizes = o.nr;
  if (sizes.empty()) sizes.push_back(base.pair.n_r);
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());

  std::vector<SweepRow> rows(sizes.size());
  std::vector<std::string> errors(sizes.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < sizes.size(); i = next++) {
      try {
        SweepRow& r = rows[i];
        r.n_r = sizes[i];
        RomOptions ri = ro;
        ri.n_r = sizes[i];
        ri.snapshots = &base.snapshots;
        const auto s0 = Clock::now();
        r.build = build_rom(fom, x0, ri);
        r.offline_s = seconds_since(s0);
        const auto s1 = Clock::now();
        r.y = simulate_rom(r.build, U, n);
        r.online_s = seconds_since(s1);
        r.rmse = rmse(y_ref, r.y);
        r.max_err = (y_ref - r.y).cwiseAbs().maxCoeff();
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int n_workers = std::clamp<int>(o.threads, 1, static_cast<int>(sizes.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < sizes.size(); ++i)
    if (!errors[i].empty()) throw ValidationError("n_r = " + std::to_string(sizes[i]) + ": " + errors[i]);

  std::string sweep = "method,n_r,rank,rmse,max_abs_error,offline_s,online_s\n";
  std::vector<double> rmses;
  for (const auto& r : rows) {
    sweep += fmt::format("{},{},{},{:.6e},{:.6e},{:.4f},{:.4f}\n", o.method, r.n_r, base.rank, r.rmse, r.max_err,
                         r.offline_s, r.online_s);
    rmses.push_back(r.rmse);
    const std::string tag = fmt::format("{}_nr{}", o.method, r.n_r);
    write_transform_cache((rec.out / ("transform_" + tag + ".bin")).string(), r.build.pair,
                          r.build.deim.indices.empty() ? nullptr : &r.build.deim, fom.n_x);
    rec.register_output("transform_" + tag + ".bin");
    rec.write_text("rom_" + tag + ".csv", outputs_csv(*r.build.model, r.y, fom.dt));
  }
  rec.write_text("sweep.csv", sweep);
  rec.write_text("reference.csv", outputs_csv(*base.model, y_ref, fom.dt));
  rec.write_text("outputs.csv", outputs_csv(*base.model, rows.back().y, fom.dt));
  rec.summary = {{"rank", base.rank},
                 {"snapshot_length", base.snapshot_length},
                 {"rmse_non_increasing", non_increasing(rmses)}};

  rec.args = {"reduce"};
  auto in = input_args(rec, o.in);
  rec.args.insert(rec.args.end(), in.begin(), in.end());
  rec.args.insert(rec.args.end(), {"--method", o.method, "--dose", fmt::format("{}", o.dose)});
  if (!o.nr.empty()) {
    std::string list;
    for (int v : sizes) list += (list.empty() ? "" : ",") + std::to_string(v);
    rec.args.insert(rec.args.end(), {"--nr", list});
  }
  if (!o.snapshots.empty()) rec.args.insert(rec.args.end(), {"--snapshots", rec.inputs["snapshots"]["path"].get<std::string>()});
  rec.write_manifest();

  std::cout << fmt::format("{} on {} states, numerical rank {}\n", o.method, fom.n_state(), base.rank);
  std::cout << fmt::format("{:>6} {:>14} {:>14} {:>10}\n", "n_r", "rmse", "max_abs_err", "online_s");
  for (const auto& r : rows)
    std::cout << fmt::format("{:>6} {:>14.6e} {:>14.6e} {:>10.3f}\n", r.n_r, r.rmse, r.max_err, r.online_s);
  if (rows.size() > 1)
    std::cout << "rmse non-increasing in n_r: " << (non_increasing(rmses) ? "yes" : "no") << '\n';
}

// ---------------------------------------------------------------------------
// control

struct ControlOpts {
  InputFlags in;
  bool relaxed = false;
  std::string method;
  int nr = -1;
  std::vector<std::string> disturbances;  // NODE:TIME_S:CHLORINE
  std::string out = "out";
};

Disturbance parse_disturbance(const std::string& s) {
  const auto parts = split(s, ':');
  if (parts.size() != 3) throw ValidationError("disturbance '" + s + "' must look like NODE:TIME_S:CHLORINE");
  try {
    return Disturbance{parts[0], std::stod(parts[1]), std::stod(parts[2])};
  } catch (const std::exception&) {
    throw ValidationError("disturbance '" + s + "' has a non-numeric time or value");
  }
}

void run_control(const ControlOpts& o) {
  RunRecord rec;
  rec.subcommand = "control";
  prepare_out(rec, o.out);
  Loaded l = load_inputs(o.in, rec);
  for (const auto& d : o.disturbances) l.scenario.disturbances.push_back(parse_disturbance(d));
  l.scenario.validate(l.graph);
  if (o.in.single_species && o.relaxed)
    throw ValidationError("--single-species has no mutual reaction to relax; drop --relaxed");

  const PipelinePlan plan = route(l.scenario.reaction.kind, o.relaxed || l.scenario.relaxed);
  const bool relaxed = plan.controller == ControllerKind::Relaxed;
  MorMethod method = plan.method;
  if (!o.method.empty()) {
    method = parse_method(o.method);
    if (relaxed != (method == MorMethod::Nlpod))
      throw ValidationError(relaxed ? "the relaxed controller needs an nlpod model"
                                    : "nlpod models drive the relaxed controller; pass --relaxed");
  }
  const ControllerKind kind = o.in.single_species ? ControllerKind::Linear : plan.controller;
  rec.options["relaxed"] = relaxed;
  rec.options["method"] = to_string(method);
  rec.options["n_r"] = o.nr;
  rec.options["controller"] = to_string(kind);
  rec.options["stages"] = plan.stages;
  rec.options["disturbances"] = o.disturbances;

  const auto t_all = Clock::now();
  const FullOrderModel fom = build_model(l.graph, l.profile, l.scenario);
  const Vec x0 = initial_state(fom, l.scenario);
  RomOptions ro;
  ro.method = method;
  ro.n_r = o.nr;
  ro.mor = l.scenario.mor;
  ro.policy = l.scenario.linearization;
  ro.horizon_s = l.scenario.horizon_s;
  if (method == MorMethod::Bpod) ro.adjoint_reactant_nodes = l.scenario.devices.intrusion_points;
  const RomBuild rb = build_rom(fom, x0, ro);
  rec.timing["offline_s"] = seconds_since(t_all);

  const Mat U = scenario_inputs(fom, l.scenario);
  MpcController ctl(rb.model, rb.rom, kind, l.scenario.control, U.bottomRows(fom.n_u2()), l.scenario.linearization);
  ClosedLoopOptions opt;
  opt.n_steps = l.scenario.n_steps();
  opt.disturbances = l.scenario.disturbances;
  const ClosedLoopLog log = closed_loop_run(fom, x0 - fom.x_offset, ctl, U, opt);
  rec.timing["online_s"] = log.wall_s;
  rec.timing["wall_s"] = seconds_since(t_all);

  rec.write_text("control.csv", log.to_csv());
  rec.write_text("outputs.csv", outputs_csv(fom, log.outputs, log.dt));
  std::string qp = "time_s,status,held,iterations,kkt_primal,kkt_dual,kkt_complementarity,max_slack,"
                   "max_envelope_slack,variables,rows,"
                   "envelope_rows,solve_ms\n";
  double worst_kkt = 0.0;
  int held = 0;
  for (const auto& a : log.actions) {
    qp += fmt::format("{},{},{},{},{:.3e},{:.3e},{:.3e},{:.3e},{:.3e},{},{},{},{:.3f}\n", a.time_s, to_string(a.status),
                      a.held ? 1 : 0, a.iterations, a.kkt.primal, a.kkt.dual, a.kkt.complementarity, a.max_slack,
                      a.max_envelope_slack, a.qp_variables, a.qp_rows, a.envelope_rows, a.solve_ms);
    worst_kkt = std::max(worst_kkt, a.kkt.worst());
    held += a.held ? 1 : 0;
  }
  rec.write_text("qp.csv", qp);

  const int ny1 = static_cast<int>(fom.devices.n_y1());
  const int settle = static_cast<int>(std::lround(l.scenario.control.control_interval_s / fom.dt));
  double ymin = 0.0, ymax = 0.0;
  if (ny1 > 0 && settle < log.outputs.cols()) {
    const auto tail = log.outputs.topRows(ny1).rightCols(log.outputs.cols() - settle);
    ymin = tail.minCoeff();
    ymax = tail.maxCoeff();
  }
  rec.summary = {{"n_r", rb.pair.n_r},
                 {"rank", rb.rank},
                 {"actions", log.actions.size()},
                 {"held_actions", held},
                 {"worst_kkt", worst_kkt},
                 {"sensed_chlorine_min_after_startup", ymin},
                 {"sensed_chlorine_max_after_startup", ymax},
                 {"envelope_checks", log.envelope_checks},
                 {"envelope_violations", log.envelope_violations}};

  rec.args = {"control"};
  auto in = input_args(rec, o.in);
  rec.args.insert(rec.args.end(), in.begin(), in.end());
  if (o.relaxed) rec.args.push_back("--relaxed");
  if (!o.method.empty()) rec.args.insert(rec.args.end(), {"--method", o.method});
  if (o.nr > 0) rec.args.insert(rec.args.end(), {"--nr", std::to_string(o.nr)});
  for (const auto& d : o.disturbances) rec.args.insert(rec.args.end(), {"--disturbance", d});
  rec.write_manifest();

  std::cout << fmt::format("{} controller on a {} model (n_r {}), {} actions, offline {:.1f} s, online {:.1f} s\n",
                           to_string(kind), to_string(method), rb.pair.n_r, log.actions.size(),
                           rec.timing["offline_s"].get<double>(), log.wall_s);
  std::cout << fmt::format("sensed chlorine after start-up: {:.4f} .. {:.4f} mg/L, worst KKT {:.2e}, held {}\n", ymin,
                           ymax, worst_kkt, held);
}

// ---------------------------------------------------------------------------
// compare

struct CompareOpts {
  std::string run_a, run_b;
  std::string out = "compare";
};

json read_manifest(const std::string& dir) {
  const fs::path p = fs::path(dir) / "manifest.json";
  try {
    return json::parse(slurp(p.string()));
  } catch (const json::exception& e) {
    throw ValidationError("manifest '" + p.string() + "' is not valid JSON: " + e.what());
  }
}

struct ChannelSeries {
  std::vector<double> t, v;
};

std::map<std::pair<std::string, std::string>, ChannelSeries> read_outputs(const fs::path& p) {
  std::istringstream is(slurp(p.string()));
  std::string line;
  std::getline(is, line);
  if (line.rfind("time_s,state_or_sensor_id,species,value_mg_per_L", 0) != 0)
    throw ValidationError("'" + p.string() + "' is not a trajectory CSV");
  std::map<std::pair<std::string, std::string>, ChannelSeries> out;
  while (std::getline(is, line)) {
    const auto c = split(line, ',');
    if (c.size() != 4) throw ValidationError("malformed row in '" + p.string() + "': " + line);
    if (c[1].rfind("state:", 0) == 0) continue;
    auto& s = out[{c[1], c[2]}];
    s.t.push_back(std::stod(c[0]));
    s.v.push_back(std::stod(c[3]));
  }
  return out;
}

void run_compare(const CompareOpts& o) {
  RunRecord rec;
  rec.subcommand = "compare";
  prepare_out(rec, o.out);
  const json a = read_manifest(o.run_a), b = read_manifest(o.run_b);
  rec.add_input("run_a", (fs::path(o.run_a) / "manifest.json").string());
  rec.add_input("run_b", (fs::path(o.run_b) / "manifest.json").string());

  // Same input files are a precondition; options (scheme, method, n_r) may differ.
  std::vector<std::string> diff;
  std::set<std::string> names;
  for (const auto& [k, v] : a.at("inputs").items()) names.insert(k);
  for (const auto& [k, v] : b.at("inputs").items()) names.insert(k);
  for (const auto& k : names) {
    if (k == "snapshots") continue;
    const json va = a["inputs"].value(k, json()), vb = b["inputs"].value(k, json());
    if (va.is_null() || vb.is_null() || va["fnv1a"] != vb["fnv1a"])
      diff.push_back(fmt::format("  {}: A {} | B {}", k, va.is_null() ? "<missing>" : va.dump(),
                                 vb.is_null() ? "<missing>" : vb.dump()));
  }
  if (!diff.empty()) {
    std::string msg = "runs used different inputs:\n";
    for (const auto& d : diff) msg += d + '\n';
    throw ValidationError(msg);
  }

  const auto ya = read_outputs(fs::path(o.run_a) / "outputs.csv");
  const auto yb = read_outputs(fs::path(o.run_b) / "outputs.csv");
  std::string table = "channel,species,samples,rmse,max_abs_error\n";
  std::ostringstream human;
  human << fmt::format("A: {} {}\nB: {} {}\n\n", a.value("subcommand", "?"), a["options"].dump(),
                       b.value("subcommand", "?"), b["options"].dump());
  human << fmt::format("{:<12} {:<9} {:>14} {:>14}\n", "channel", "species", "rmse", "max_abs_err");
  for (const auto& [key, sa] : ya) {
    auto it = yb.find(key);
    if (it == yb.end()) throw ValidationError("channel " + key.first + " missing from run B");
    const auto& sb = it->second;
    if (sa.t != sb.t) throw ValidationError("runs sample channel " + key.first + " on different time grids");
    double ss = 0.0, mx = 0.0;
    for (std::size_t i = 0; i < sa.v.size(); ++i) {
      const double e = sa.v[i] - sb.v[i];
      ss += e * e;
      mx = std::max(mx, std::fabs(e));
    }
    const double r = std::sqrt(ss / static_cast<double>(std::max<std::size_t>(sa.v.size(), 1)));
    table += fmt::format("{},{},{},{:.6e},{:.6e}\n", key.first, key.second, sa.v.size(), r, mx);
    human << fmt::format("{:<12} {:<9} {:>14.6e} {:>14.6e}\n", key.first, key.second, r, mx);
  }
  if (yb.size() != ya.size()) throw ValidationError("runs report different sensor channels");

  // Booster schedules of two control runs, relative to run A's mean dose.
  const fs::path ca = fs::path(o.run_a) / "control.csv", cb = fs::path(o.run_b) / "control.csv";
  if (fs::exists(ca) && fs::exists(cb)) {
    auto read_doses = [](const fs::path& p) {
      std::map<std::string, ChannelSeries> d;
      std::istringstream is(slurp(p.string()));
      std::string line;
      std::getline(is, line);
      while (std::getline(is, line)) {
        const auto c = split(line, ',');
        if (c.size() < 3) throw ValidationError("malformed row in '" + p.string() + "': " + line);
        d[c[1]].t.push_back(std::stod(c[0]));
        d[c[1]].v.push_back(std::stod(c[2]));
      }
      return d;
    };
    const auto da = read_doses(ca), db = read_doses(cb);
    for (const auto& [id, sa] : da) {
      auto it = db.find(id);
      if (it == db.end() || it->second.t != sa.t) throw ValidationError("runs have different control schedules");
      double ss = 0.0, mx = 0.0, mean = 0.0;
      for (std::size_t i = 0; i < sa.v.size(); ++i) {
        const double e = sa.v[i] - it->second.v[i];
        ss += e * e;
        mx = std::max(mx, std::fabs(e));
        mean += sa.v[i] / static_cast<double>(sa.v.size());
      }
      const double r = std::sqrt(ss / static_cast<double>(std::max<std::size_t>(sa.v.size(), 1)));
      table += fmt::format("{},dose_mg_per_min,{},{:.6e},{:.6e}\n", id, sa.v.size(), r, mx);
      human << fmt::format("{:<12} {:<9} {:>14.6e} {:>14.6e}  (max {:.3f} % of A's mean dose)\n", id, "dose", r, mx,
                           mean > 0.0 ? 100.0 * mx / mean : 0.0);
    }
  }
  rec.write_text("compare.csv", table);

  std::set<std::string> phases;
  for (const auto& [k, v] : a.at("timing").items()) phases.insert(k);
  for (const auto& [k, v] : b.at("timing").items()) phases.insert(k);
  std::string timing = "phase,run_a_s,run_b_s\n";
  human << fmt::format("\n{:<28} {:>10} {:>10}\n", "phase", "A [s]", "B [s]");
  for (const auto& ph : phases) {
    auto cell = [&](const json& m) { return m["timing"].contains(ph) ? fmt::format("{:.3f}", m["timing"][ph].get<double>()) : std::string(); };
    timing += fmt::format("{},{},{}\n", ph, cell(a), cell(b));
    human << fmt::format("{:<28} {:>10} {:>10}\n", ph, cell(a), cell(b));
  }
  rec.write_text("timing.csv", timing);

  // n_r sweep tables of reduce runs, with the ordering checked rather than assumed.
  std::string sweep;
  for (const auto& [label, dir] : {std::pair{"A", o.run_a}, std::pair{"B", o.run_b}}) {
    const fs::path p = fs::path(dir) / "sweep.csv";
    if (!fs::exists(p)) continue;
    std::istringstream is(slurp(p.string()));
    std::string line;
    std::getline(is, line);
    std::vector<double> rm;
    std::vector<std::vector<std::string>> cells;
    while (std::getline(is, line)) {
      cells.push_back(split(line, ','));
      rm.push_back(std::stod(cells.back().at(3)));
    }
    const bool ok = non_increasing(rm);
    if (sweep.empty()) sweep = "run,method,n_r,rmse,max_abs_error,non_increasing\n";
    human << fmt::format("\nrun {} n_r sweep ({}):\n", label, ok ? "rmse non-increasing" : "rmse NOT non-increasing");
    for (const auto& c : cells) {
      sweep += fmt::format("{},{},{},{},{},{}\n", label, c[0], c[1], c[3], c[4], ok ? 1 : 0);
      human << fmt::format("  n_r {:>4}  rmse {}  max {}\n", c[1], c[3], c[4]);
    }
  }
  if (!sweep.empty()) rec.write_text("sweep_compare.csv", sweep);
  rec.write_text("report.txt", human.str());

  rec.args = {"compare", fs::absolute(o.run_a).string(), fs::absolute(o.run_b).string()};
  rec.write_manifest();
  std::cout << human.str();
}

// ---------------------------------------------------------------------------
// replay

int dispatch(std::vector<std::string> args);

void run_replay(const std::string& manifest_path, const std::string& out) {
  const json m = json::parse(slurp(manifest_path));
  auto args = m.at("args").get<std::vector<std::string>>();
  const fs::path target = out.empty() ? fs::path(manifest_path).parent_path() / "replay" : fs::path(out);
  args.insert(args.end(), {"--out", target.string()});
  const int rc = dispatch(args);
  if (rc != 0) throw NumericalError("replayed run exited with code " + std::to_string(rc));
  const json r = json::parse(slurp((target / "manifest.json").string()));
  std::vector<std::string> mismatched;
  for (const auto& [name, hash] : m.at("outputs").items())
    if (!r["outputs"].contains(name) || r["outputs"][name] != hash) mismatched.push_back(name);
  if (!mismatched.empty()) {
    std::string msg = "replay differs from the recorded run in:";
    for (const auto& n : mismatched) msg += " " + n;
    throw NumericalError(msg);
  }
  std::cout << "replay reproduced " << m["outputs"].size() << " outputs identically\n";
}

int dispatch(std::vector<std::string> args) {
  CLI::App app{"Multi-species water quality simulation, reduction and control"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  int threads = 1;
  app.add_option("--threads", threads, "cap on worker threads (parallel n_r sweeps)")->check(CLI::PositiveNumber);

  SimulateOpts so;
  auto* sim = app.add_subcommand("simulate", "run the full-order or linearized model open loop");
  add_input_flags(sim, so.in);
  sim->add_option("--model", so.model)->check(CLI::IsMember({"fom", "linearized"}));
  sim->add_option("--dose", so.dose, "constant booster dose, mg/min")->check(CLI::NonNegativeNumber);
  sim->add_flag("--states", so.states, "also write the full state trajectory");
  sim->add_option("--out", so.out, "output directory");
  sim->add_option("--threads", threads, "cap on worker threads")->check(CLI::PositiveNumber);

  ReduceOpts ro;
  auto* red = app.add_subcommand("reduce", "build reduced models and sweep their size");
  add_input_flags(red, ro.in);
  red->add_option("--method", ro.method)->check(CLI::IsMember({"lpod", "bpod", "nlpod"}));
  red->add_option("--nr", ro.nr, "reduced sizes, comma separated (default: numerical rank)")->delimiter(',');
  red->add_option("--snapshots", ro.snapshots, "reuse a snapshot cache written by an earlier reduce run")
      ->check(CLI::ExistingFile);
  red->add_option("--dose", ro.dose, "constant booster dose used for the error run, mg/min")
      ->check(CLI::NonNegativeNumber);
  red->add_option("--out", ro.out, "output directory");
  red->add_option("--threads", threads, "cap on worker threads")->check(CLI::PositiveNumber);

  ControlOpts co;
  auto* ctl = app.add_subcommand("control", "closed-loop booster control");
  add_input_flags(ctl, co.in);
  ctl->add_flag("--relaxed", co.relaxed, "McCormick-relaxed controller on an nlpod model");
  ctl->add_option("--method", co.method)->check(CLI::IsMember({"lpod", "bpod", "nlpod"}));
  ctl->add_option("--nr", co.nr, "reduced size (default: numerical rank)");
  ctl->add_option("--disturbance", co.disturbances, "override plant chlorine, NODE:TIME_S:MG_PER_L");
  ctl->add_option("--out", co.out, "output directory");
  ctl->add_option("--threads", threads, "cap on worker threads")->check(CLI::PositiveNumber);

  CompareOpts cmp;
  auto* com = app.add_subcommand("compare", "error and timing tables between two runs");
  com->add_option("run_a", cmp.run_a)->required()->check(CLI::ExistingDirectory);
  com->add_option("run_b", cmp.run_b)->required()->check(CLI::ExistingDirectory);
  com->add_option("--out", cmp.out, "output directory");
  com->add_option("--threads", threads, "cap on worker threads")->check(CLI::PositiveNumber);

  std::string manifest, replay_out;
  auto* rep = app.add_subcommand("replay", "rerun a recorded manifest and check its outputs");
  rep->add_option("manifest", manifest)->required()->check(CLI::ExistingFile);
  rep->add_option("--out", replay_out, "output directory");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  ro.threads = threads;
  if (sim->parsed()) run_simulate(so);
  if (red->parsed()) run_reduce(ro);
  if (ctl->parsed()) run_control(co);
  if (com->parsed()) run_compare(cmp);
  if (rep->parsed()) run_replay(manifest, replay_out);
  return 0;
}

void configure_logging() {
  spdlog::set_level(spdlog::level::warn);
  const char* env = std::getenv("MSWQM_LOG");
  if (!env || !*env) return;
  const std::string v = env;
  const auto lvl = spdlog::level::from_str(v);
  if (lvl == spdlog::level::off && v != "off") {
    spdlog::warn("MSWQM_LOG='{}' is not a log level (trace, debug, info, warn, error, critical, off)", v);
    return;
  }
  spdlog::set_level(lvl);
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return dispatch(args);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const OutOfScopeError& e) {
    std::cerr << "out of scope: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
