#include "mswq/mor.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mswq/errors.hpp"

namespace mswq {

namespace {

constexpr double kPodRelTol = 1e-12;
constexpr double kHankelRelTol = 1e-12;
// Greedy argmax treats values this close (relatively) as tied; lowest index wins.
constexpr double kTieRelTol = 1e-10;

void normalize_signs(Mat& V) {
  for (Eigen::Index j = 0; j < V.cols(); ++j) {
    Eigen::Index best = 0;
    V.col(j).cwiseAbs().maxCoeff(&best);
    if (V(best, j) < 0.0) V.col(j) *= -1.0;
  }
}

Eigen::Index argmax_abs_lowest(const Vec& v) {
  const double top = v.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (std::fabs(v[i]) >= top * (1.0 - kTieRelTol)) return i;
  return 0;
}

void check_finite(const Vec& x, int k, const char* what) {
  if (!x.allFinite()) throw NumericalError(std::string("non-finite ") + what + " snapshot at step " + std::to_string(k));
}

std::string describe(const Excitation& ex, const Vec& amp) {
  std::ostringstream os;
  os << (ex.kind == Excitation::Kind::Impulse ? "impulse" : "step") << (ex.per_channel ? " per-channel" : " joint")
     << " amplitudes [";
  for (Eigen::Index i = 0; i < amp.size(); ++i) os << (i ? " " : "") << amp[i];
  os << "]" << (ex.per_channel && ex.add_joint ? " plus joint run" : "");
  return os.str();
}

// Runs the excitation plan; `advance(x, u_full, phi_scale, k)` returns x(k+1).
SnapshotSet run_snapshots(int n_state, int n_channels, const Excitation& ex, int m,
                          const std::function<Vec(const Vec&, const Vec&, int)>& advance,
                          const std::function<Vec(const Vec&)>& nonlinear) {
  if (m <= 0) throw ValidationError("snapshot length must be positive");
  Vec amp = ex.amplitude.size() == 0 ? Vec(Vec::Ones(n_channels)) : ex.amplitude;
  if (amp.size() != n_channels)
    throw ValidationError("excitation has " + std::to_string(amp.size()) + " amplitudes, model has " +
                          std::to_string(n_channels) + " input columns");
  std::vector<Vec> plans;
  if (ex.per_channel) {
    for (int c = 0; c < n_channels; ++c) {
      if (amp[c] == 0.0) continue;
      Vec e = Vec::Zero(n_channels);
      e[c] = amp[c];
      plans.push_back(e);
    }
    if (ex.add_joint && plans.size() > 1) plans.push_back(amp);
  } else {
    plans.push_back(amp);
  }
  SnapshotSet s;
  s.m = m;
  s.excitation = describe(ex, amp);
  const auto cols = static_cast<Eigen::Index>(std::max<std::size_t>(plans.size(), 1) * static_cast<std::size_t>(m));
  s.X = Mat::Zero(n_state, cols);
  if (nonlinear) s.F = Mat::Zero(n_state, cols);
  const Vec zero = Vec::Zero(n_channels);
  for (std::size_t p = 0; p < plans.size(); ++p) {
    Vec x = Vec::Zero(n_state);
    for (int k = 0; k < m; ++k) {
      const bool on = ex.kind == Excitation::Kind::Step || k == 0;
      x = advance(x, on ? plans[p] : zero, k);
      check_finite(x, k + 1, "state");
      const auto col = static_cast<Eigen::Index>(p * static_cast<std::size_t>(m)) + k;
      s.X.col(col) = x;
      if (nonlinear) s.F.col(col) = nonlinear(x);
    }
  }
  return s;
}

std::vector<std::size_t> bilinear_lookup(const NonlinearTerm& nl) {
  std::vector<std::size_t> where(static_cast<std::size_t>(nl.n_x), static_cast<std::size_t>(-1));
  for (std::size_t j = 0; j < nl.size(); ++j) where[static_cast<std::size_t>(nl.index[j])] = j;
  return where;
}

}  // namespace

void append_snapshots(SnapshotSet& s, const Mat& states, const Mat& nonlinear) {
  if (states.rows() != s.X.rows()) throw ValidationError("appended snapshots have the wrong state dimension");
  if (!states.allFinite()) throw NumericalError("non-finite appended snapshot");
  Mat X(s.X.rows(), s.X.cols() + states.cols());
  X << s.X, states;
  s.X = std::move(X);
  if (s.F.size() > 0 || nonlinear.size() > 0) {
    const Mat F0 = s.F.size() > 0 ? s.F : Mat::Zero(s.X.rows(), s.X.cols() - states.cols());
    const Mat F1 = nonlinear.size() > 0 ? nonlinear : Mat::Zero(s.X.rows(), states.cols());
    if (F1.cols() != states.cols()) throw ValidationError("appended nonlinear snapshots do not match the states");
    Mat F(s.X.rows(), s.X.cols());
    F << F0, F1;
    s.F = std::move(F);
  }
  s.excitation += " plus " + std::to_string(states.cols()) + " replayed states";
}

Excitation default_excitation(const FullOrderModel& model, double impulse_ratio, bool include_phi) {
  Excitation ex;
  const int nc = model.n_inputs() + model.n_const;
  ex.amplitude = Vec::Ones(nc + (include_phi ? 1 : 0));
  // Magnitudes are measured by the state perturbation they inject, so a
  // booster (gain ~1/(60000 q)) and an intrusion (gain 1) are comparable.
  const auto& s = model.slices.front();
  for (int c = 0; c < nc; ++c) {
    const double gain = s.B.col(c).norm();
    const double nominal = c < model.n_u1() ? impulse_ratio : 1.0;
    ex.amplitude[c] = gain > 0.0 ? nominal / gain : 0.0;
  }
  return ex;
}

Excitation nonlinear_excitation(const FullOrderModel& model, double impulse_ratio) {
  Excitation ex = default_excitation(model, impulse_ratio, false);
  // Separate impulses never meet, so products stay zero unless some run
  // carries both species: the constant channel does that from a non-zero
  // initial state, otherwise a joint run is added.
  bool const_excites = false;
  for (int c = model.n_inputs(); c < static_cast<int>(ex.amplitude.size()); ++c)
    const_excites = const_excites || ex.amplitude[c] != 0.0;
  ex.add_joint = !const_excites;
  return ex;
}

SnapshotSet collect_state_snapshots(const FullOrderModel& model, const Excitation& ex, int m, bool keep_nonlinear) {
  const int nc = model.n_inputs() + model.n_const;
  auto advance = [&](const Vec& x, const Vec& u, int k) -> Vec {
    const auto& s = model.slice_for_step(k);
    Vec rhs = s.A * x + s.B * u;
    s.nonlinear.add_to(x, rhs);
    return s.solve_E(rhs);
  };
  std::function<Vec(const Vec&)> nl;
  if (keep_nonlinear) nl = [&](const Vec& x) { return eval_nonlinear(model.slices.front().nonlinear, x); };
  return run_snapshots(model.n_state(), nc, ex, m, advance, nl);
}

SnapshotSet collect_state_snapshots(const LinearizedModel& lm, const Excitation& ex, int m) {
  const auto& model = lm.model();
  const int nc = model.n_inputs() + model.n_const;
  const int nx = model.n_x;
  auto advance = [&](const Vec& x, const Vec& u, int k) -> Vec {
    const auto& s = model.slice_for_step(k);
    const auto lc = lm.coefficients(k);
    Vec rhs = s.A * x + s.B * u.head(nc);
    const double phi_scale = u[nc];
    for (std::size_t j = 0; j < s.nonlinear.size(); ++j) {
      const int i1 = s.nonlinear.index[j];
      const auto e = static_cast<Eigen::Index>(j);
      const double v = lc.d_self[e] * x[i1] + lc.d_other[e] * x[nx + i1] + phi_scale * lc.phi[e];
      rhs[i1] += v;
      rhs[nx + i1] += v;
    }
    return s.solve_E(rhs);
  };
  return run_snapshots(model.n_state(), nc + 1, ex, m, advance, nullptr);
}

Mat collect_adjoint_snapshots(const LinearizedModel& lm, int m, const Mat& extra_rows) {
  if (m <= 0) throw ValidationError("snapshot length must be positive");
  const auto& model = lm.model();
  const auto& s = model.slice_for_step(0);
  const SpMat At = SpMat(lm.block_matrix(0).transpose());
  Mat C = Mat(s.C);
  if (extra_rows.size() > 0) {
    if (extra_rows.cols() != C.cols()) throw ValidationError("extra output rows have the wrong width");
    Mat stacked(C.rows() + extra_rows.rows(), C.cols());
    stacked << C, extra_rows;
    C = stacked;
  }
  const auto ny = C.rows();
  Mat P(model.n_state(), ny * m);
  for (Eigen::Index j = 0; j < ny; ++j) {
    Vec p = C.row(j).transpose();
    for (int k = 0; k < m; ++k) {
      P.col(j * m + k) = p;
      if (k + 1 < m) {
        p = At * s.solve_E_transpose(p);
        check_finite(p, k + 1, "adjoint");
      }
    }
  }
  return P;
}

int numerical_rank(const Vec& values, double rel_tol) {
  if (values.size() == 0) return 0;
  const double top = values.maxCoeff();
  if (!(top > 0.0)) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (values[i] > rel_tol * top) ++r;
  return r;
}

namespace {

struct Gramian {
  Vec lambda;  // descending
  Mat Q;
  bool small;
};

Gramian gramian_eigen(const Mat& X) {
  Gramian g;
  g.small = X.cols() < X.rows();
  const Mat G = g.small ? Mat(X.transpose() * X) : Mat(X * X.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(G);
  if (es.info() != Eigen::Success) throw NumericalError("snapshot Gramian eigendecomposition failed");
  g.lambda = es.eigenvalues().reverse();
  g.Q = es.eigenvectors().rowwise().reverse();
  return g;
}

}  // namespace

int pod_rank(const Mat& X) {
  if (X.size() == 0) return 0;
  return numerical_rank(gramian_eigen(X).lambda, kPodRelTol);
}

TransformPair pod_transform(const Mat& X, int n_r) {
  if (X.size() == 0 || !X.allFinite()) throw ValidationError("snapshot matrix is empty or non-finite");
  const Gramian g = gramian_eigen(X);
  const int rank = numerical_rank(g.lambda, kPodRelTol);
  if (rank == 0) throw ValidationError("snapshot matrix has numerical rank 0; nothing to reduce");
  if (n_r <= 0 || n_r > rank)
    throw ValidationError("requested n_r = " + std::to_string(n_r) + " but snapshot numerical rank is " +
                          std::to_string(rank));
  TransformPair t;
  t.method = "pod";
  t.n_r = n_r;
  t.values = g.lambda.head(n_r);
  if (g.small) {
    const Vec inv_sqrt = t.values.cwiseSqrt().cwiseInverse();
    t.V = X * g.Q.leftCols(n_r) * inv_sqrt.asDiagonal();
  } else {
    t.V = g.Q.leftCols(n_r);
  }
  normalize_signs(t.V);
  // Orthonormal in exact arithmetic, so the pseudo-inverse rows are V_r^T
  // (equal to Lambda^{-1/2} Q^T X^T on the small branch).
  t.L = t.V.transpose();
  return t;
}

namespace {

// SVD of H = P^T X through thin QR factors of X^T and P^T, so the dense SVD
// runs on a core no larger than the state dimension.
struct HankelSvd {
  Vec sigma;
  Mat U, Q;
};

HankelSvd hankel_svd(const Mat& X, const Mat& P, bool vectors) {
  const Eigen::Index n = X.rows();
  const Eigen::Index kx = std::min(n, X.cols()), kp = std::min(n, P.cols());
  Eigen::HouseholderQR<Mat> qx(X.transpose()), qp(P.transpose());
  const Mat Rx = qx.matrixQR().topRows(kx).triangularView<Eigen::Upper>();
  const Mat Rp = qp.matrixQR().topRows(kp).triangularView<Eigen::Upper>();
  const Mat core = Rp * Rx.transpose();
  HankelSvd h;
  if (!vectors) {
    h.sigma = Eigen::BDCSVD<Mat>(core).singularValues();
    return h;
  }
  Eigen::BDCSVD<Mat> svd(core, Eigen::ComputeThinU | Eigen::ComputeThinV);
  h.sigma = svd.singularValues();
  h.U = qp.householderQ() * (Mat(P.cols(), svd.matrixU().cols()) << svd.matrixU(), Mat::Zero(P.cols() - kp, svd.matrixU().cols())).finished();
  h.Q = qx.householderQ() * (Mat(X.cols(), svd.matrixV().cols()) << svd.matrixV(), Mat::Zero(X.cols() - kx, svd.matrixV().cols())).finished();
  return h;
}

}  // namespace

int hankel_rank(const Mat& X, const Mat& P) {
  if (X.rows() != P.rows()) throw ValidationError("state and adjoint snapshots differ in dimension");
  return numerical_rank(hankel_svd(X, P, false).sigma, kHankelRelTol);
}

TransformPair bpod_transform(const Mat& X, const Mat& P, int n_r) {
  if (X.rows() != P.rows()) throw ValidationError("state and adjoint snapshots differ in dimension");
  const HankelSvd svd = hankel_svd(X, P, true);
  const Vec& sig = svd.sigma;
  const int rank = numerical_rank(sig, kHankelRelTol);
  if (rank == 0) throw ValidationError("Hankel matrix has numerical rank 0; nothing to reduce");
  if (n_r <= 0) throw ValidationError("n_r must be positive");
  if (n_r > rank) {
    spdlog::warn("Hankel singular values below 1e-12 of the largest: truncating n_r from {} to {}", n_r, rank);
    n_r = rank;
  }
  TransformPair t;
  t.method = "bpod";
  t.n_r = n_r;
  t.values = sig.head(n_r);
  const Vec inv_sqrt = t.values.cwiseSqrt().cwiseInverse();
  Mat U = svd.U.leftCols(n_r);
  Mat Q = svd.Q.leftCols(n_r);
  // Flip the (U, Q) pair together so H stays factored.
  for (int j = 0; j < n_r; ++j) {
    Eigen::Index best = 0;
    Q.col(j).cwiseAbs().maxCoeff(&best);
    if (Q(best, j) < 0.0) {
      Q.col(j) *= -1.0;
      U.col(j) *= -1.0;
    }
  }
  t.V = X * Q * inv_sqrt.asDiagonal();
  t.L = inv_sqrt.asDiagonal() * U.transpose() * P.transpose();
  // Rounding in the smallest retained singular values spoils L V = I; one
  // oblique re-normalization restores it without changing the spanned spaces.
  const Mat LV = t.L * t.V;
  t.L = LV.partialPivLu().solve(t.L);
  t.left_through_E = true;
  return t;
}

int min_snapshot_length(const FullOrderModel& model) {
  const auto& g = model.graph;
  const auto& s = model.slices.front();
  const auto& links = g.links();
  const std::size_t nn = g.nodes().size();
  // Travel time in steps for each flowing link, as an edge upstream -> downstream.
  std::vector<std::vector<std::pair<std::size_t, double>>> out(nn);
  for (std::size_t l = 0; l < links.size(); ++l) {
    if (s.direction[l] == 0) continue;
    const std::size_t up = s.direction[l] > 0 ? g.from_node(l) : g.to_node(l);
    const std::size_t dn = s.direction[l] > 0 ? g.to_node(l) : g.from_node(l);
    double steps = 0.0;
    if (links[l].kind == LinkKind::Pipe && s.courant[l] > 0.0)
      steps = links[l].length / (s.courant[l] * model.plan.segment_length[l]);
    else if (links[l].kind == LinkKind::Pipe)
      continue;  // stagnant pipe carries nothing
    out[up].emplace_back(dn, steps);
  }
  auto sensor_node = [&](const std::string& id) -> std::size_t {
    if (auto n = g.node_index(id)) return *n;
    const auto l = *g.link_index(id);
    if (s.direction[l] == 0) return static_cast<std::size_t>(-1);
    return s.direction[l] > 0 ? g.from_node(l) : g.to_node(l);
  };
  double best = 0.0;
  for (const auto& b : model.devices.boosters) {
    const std::size_t src = *g.node_index(b);
    // Longest path from src to every node over the flow DAG.
    std::vector<double> memo(nn, -1.0);
    std::vector<int> state(nn, 0);
    std::function<double(std::size_t, std::size_t)> longest = [&](std::size_t v, std::size_t target) -> double {
      if (v == target) return 0.0;
      if (state[v] == 1) throw ValidationError("flow directions contain a cycle through node '" + g.nodes()[v].id + "'");
      if (state[v] == 2) return memo[v];
      state[v] = 1;
      double r = -1.0;
      for (const auto& [w, t] : out[v]) {
        const double sub = longest(w, target);
        if (sub >= 0.0) r = std::max(r, t + sub);
      }
      state[v] = 2;
      memo[v] = r;
      return r;
    };
    for (const auto& sid : model.devices.chlorine_sensors) {
      std::fill(memo.begin(), memo.end(), -1.0);
      std::fill(state.begin(), state.end(), 0);
      const std::size_t dst = sensor_node(sid);
      const double t = dst == static_cast<std::size_t>(-1) ? -1.0 : longest(src, dst);
      if (t < 0.0) throw ValidationError("sensor '" + sid + "' is unreachable from booster '" + b + "' under current flow");
      best = std::max(best, t);
    }
  }
  return std::max(1, static_cast<int>(std::ceil(best - 1e-9)));
}

int deim_rank(const Mat& F) {
  if (F.size() == 0) return 0;
  return numerical_rank(Eigen::BDCSVD<Mat>(F).singularValues(), kPodRelTol);
}

DeimData greedy_deim(const Mat& F, int n_d) {
  if (F.size() == 0) throw ValidationError("nonlinear snapshot matrix is empty");
  Eigen::BDCSVD<Mat> svd(F, Eigen::ComputeThinU);
  const int rank = numerical_rank(svd.singularValues(), kPodRelTol);
  if (n_d <= 0 || n_d > rank)
    throw ValidationError("requested DEIM size " + std::to_string(n_d) + " but nonlinear snapshot rank is " +
                          std::to_string(rank));
  Mat U = svd.matrixU().leftCols(n_d);
  normalize_signs(U);
  DeimData d;
  d.U = U;
  d.indices.push_back(static_cast<int>(argmax_abs_lowest(U.col(0))));
  for (int l = 1; l < n_d; ++l) {
    Mat KtU(l, l);
    Vec Ktu(l);
    for (int a = 0; a < l; ++a) {
      KtU.row(a) = U.row(d.indices[static_cast<std::size_t>(a)]).head(l);
      Ktu[a] = U(d.indices[static_cast<std::size_t>(a)], l);
    }
    const Vec b = KtU.partialPivLu().solve(Ktu);
    const Vec q = U.col(l) - U.leftCols(l) * b;
    if (!(q.cwiseAbs().maxCoeff() > 1e-12)) throw ValidationError("DEIM residual vanished: nonlinear basis is rank deficient");
    const int next = static_cast<int>(argmax_abs_lowest(q));
    if (std::find(d.indices.begin(), d.indices.end(), next) != d.indices.end())
      throw ValidationError("DEIM selected a repeated index");
    d.indices.push_back(next);
  }
  Mat KtU(n_d, n_d);
  for (int a = 0; a < n_d; ++a) KtU.row(a) = U.row(d.indices[static_cast<std::size_t>(a)]);
  d.KtU_inv = KtU.inverse();
  return d;
}

Vec deim_reconstruct(const DeimData& d, const Vec& f) {
  Vec sampled(static_cast<Eigen::Index>(d.indices.size()));
  for (std::size_t a = 0; a < d.indices.size(); ++a) sampled[static_cast<Eigen::Index>(a)] = f[d.indices[a]];
  return d.U * (d.KtU_inv * sampled);
}

const ReducedSlice& ReducedModel::slice_for_step(int k) const { return slices[slice_index(k)]; }

std::size_t ReducedModel::slice_index(int k) const {
  const auto s = static_cast<std::size_t>(std::max(k, 0) / std::max(steps_per_slice, 1));
  return std::min(s, slices.size() - 1);
}

Vec ReducedModel::full_input(const Vec& u) const {
  Vec full = Vec::Zero(n_inputs + n_const);
  if (u.size() > 0) {
    if (u.size() != n_inputs) throw ValidationError("input vector has wrong dimension");
    full.head(n_inputs) = u;
  }
  full.tail(n_const).setOnes();
  return full;
}

namespace {

ReducedModel project(const FullOrderModel& model, const TransformPair& pair, const DeimData* deim,
                     ReducedModel::Kind kind) {
  if (pair.V.rows() != model.n_state() || pair.L.cols() != model.n_state() || pair.V.cols() != pair.n_r ||
      pair.L.rows() != pair.n_r)
    throw ValidationError("transform pair dimensions do not match the model");
  ReducedModel rom;
  rom.kind = kind;
  rom.pair = pair;
  rom.n_r = pair.n_r;
  rom.n_inputs = model.n_inputs();
  rom.n_const = model.n_const;
  rom.steps_per_slice = model.steps_per_slice();
  rom.dt = model.dt;
  rom.x_offset = model.x_offset;
  if (deim) rom.deim = *deim;
  const int nx = model.n_x;
  const Mat& V = pair.V;
  for (const auto& s : model.slices) {
    ReducedSlice r;
    Mat W = pair.L;
    if (pair.left_through_E) {
      Mat Lt = pair.L.transpose();
      Mat Wt(Lt.rows(), Lt.cols());
      for (Eigen::Index j = 0; j < Lt.cols(); ++j) Wt.col(j) = s.solve_E_transpose(Vec(Lt.col(j)));
      W = Wt.transpose();
    }
    r.Er = W * (s.E * V);
    r.Ar = W * (s.A * V);
    r.Br = W * Mat(s.B);
    r.Cr = Mat(s.C) * V;
    r.D = s.D;
    r.h = s.h;
    const auto lu = r.Er.partialPivLu();
    r.M = lu.solve(r.Ar);
    r.N = lu.solve(r.Br);
    const Vec gr = W * s.g;
    if (gr.size() > 0 && gr.cwiseAbs().maxCoeff() > 0.0) {
      // Fold a leftover constant forcing into an extra column of N driven by the constant channel.
      if (rom.n_const == 0) throw ValidationError("constant forcing without a constant input channel");
      r.N.col(r.N.cols() - 1) += lu.solve(gr);
    }
    const auto& nl = s.nonlinear;
    const auto nb = static_cast<Eigen::Index>(nl.size());
    r.V1.resize(nb, pair.n_r);
    r.V2.resize(nb, pair.n_r);
    r.alpha = nb > 0 ? nl.alpha : Vec();
    r.off1.resize(nb);
    r.off2.resize(nb);
    Mat Ws(pair.n_r, nb);
    for (Eigen::Index j = 0; j < nb; ++j) {
      const int i1 = nl.index[static_cast<std::size_t>(j)];
      r.V1.row(j) = V.row(i1);
      r.V2.row(j) = V.row(nx + i1);
      r.off1[j] = model.x_offset[i1];
      r.off2[j] = model.x_offset[nx + i1];
      Ws.col(j) = W.col(i1) + W.col(nx + i1);
    }
    r.Gs = lu.solve(Ws);
    if (deim) {
      const auto where = bilinear_lookup(nl);
      r.Wf = lu.solve(W * deim->U * deim->KtU_inv);
      const auto nd = static_cast<Eigen::Index>(deim->indices.size());
      r.Vd1.resize(nd, pair.n_r);
      r.Vd2.resize(nd, pair.n_r);
      r.alpha_d.resize(nd);
      for (Eigen::Index a = 0; a < nd; ++a) {
        const int idx = deim->indices[static_cast<std::size_t>(a)];
        const int i1 = idx % nx;
        const std::size_t j = where[static_cast<std::size_t>(i1)];
        if (j == static_cast<std::size_t>(-1)) throw ValidationError("DEIM index outside the bilinear support");
        r.Vd1.row(a) = V.row(i1);
        r.Vd2.row(a) = V.row(nx + i1);
        r.alpha_d[a] = nl.alpha[static_cast<Eigen::Index>(j)];
      }
    }
    rom.slices.push_back(std::move(r));
  }
  return rom;
}

}  // namespace

ReducedModel reduce_model(const FullOrderModel& model, const TransformPair& pair, const DeimData* deim) {
  bool nonlinear = false;
  for (const auto& s : model.slices) nonlinear = nonlinear || !s.nonlinear.is_zero();
  if (nonlinear && !deim) throw ValidationError("nonlinear model requires DEIM data for reduction");
  if (deim && deim->U.rows() != model.n_state()) throw ValidationError("DEIM basis dimension does not match the model");
  return project(model, pair, deim, deim ? ReducedModel::Kind::Nonlinear : ReducedModel::Kind::Linear);
}

ReducedModel reduce_model(const LinearizedModel& lm, const TransformPair& pair) {
  return project(lm.model(), pair, nullptr, ReducedModel::Kind::Linearized);
}

void LinearizedRomStepper::set_coefficients(const LinearCoefficients& c, int k) {
  const std::size_t si = rom_->slice_index(k);
  const auto& r = rom_->slices[si];
  if (si != slice_) {
    slice_ = si;
    M_ = r.M;
    M_.noalias() += r.Gs * (c.d_self.asDiagonal() * r.V1 + c.d_other.asDiagonal() * r.V2);
    phi_r_ = r.Gs * c.phi;
    d_self_ = c.d_self;
    d_other_ = c.d_other;
    phi_ = c.phi;
    rewrites_ += static_cast<std::size_t>(c.phi.size());
    return;
  }
  for (Eigen::Index j = 0; j < c.phi.size(); ++j) {
    const double ds = c.d_self[j] - d_self_[j], dd = c.d_other[j] - d_other_[j], dp = c.phi[j] - phi_[j];
    if (ds == 0.0 && dd == 0.0 && dp == 0.0) continue;
    if (ds != 0.0 || dd != 0.0) M_.noalias() += r.Gs.col(j) * (ds * r.V1.row(j) + dd * r.V2.row(j));
    if (dp != 0.0) phi_r_ += dp * r.Gs.col(j);
    d_self_[j] = c.d_self[j];
    d_other_[j] = c.d_other[j];
    phi_[j] = c.phi[j];
    ++rewrites_;
  }
}

Vec LinearizedRomStepper::step(const Vec& xr, const Vec& u, int k) {
  const auto& r = rom_->slice_for_step(k);
  Vec next = M_ * xr;
  next.noalias() += r.N * rom_->full_input(u);
  next += phi_r_;
  return next;
}

Vec reduced_step(const ReducedModel& rom, const Vec& xr, const Vec& u, int k) {
  if (rom.kind == ReducedModel::Kind::Linearized)
    throw ValidationError("linearized reduced models step through LinearizedRomStepper");
  const auto& r = rom.slice_for_step(k);
  Vec next = r.M * xr;
  next.noalias() += r.N * rom.full_input(u);
  if (rom.kind == ReducedModel::Kind::Nonlinear && r.Wf.cols() > 0) {
    const Vec f = r.alpha_d.cwiseProduct((r.Vd1 * xr).cwiseProduct(r.Vd2 * xr));
    next.noalias() += r.Wf * f;
  }
  return next;
}

Vec reduced_output(const ReducedModel& rom, const Vec& xr, const Vec& u, int k) {
  const auto& r = rom.slice_for_step(k);
  Vec y = r.Cr * xr;
  if (r.D.size() > 0) y.noalias() += r.D * rom.full_input(u);
  if (r.h.size() > 0) y += r.h;
  return y;
}

Mat simulate_reduced(const ReducedModel& rom, const Vec& xr0, const Mat& U, int n_steps, const LinearizedModel* lm) {
  if (xr0.size() != rom.n_r) throw ValidationError("reduced initial state has wrong dimension");
  if (rom.kind == ReducedModel::Kind::Linearized && !lm)
    throw ValidationError("linearized reduced simulation needs its operating schedule");
  const auto ny = rom.slices.front().Cr.rows();
  Mat Y(ny, n_steps + 1);
  Vec empty;
  auto input_at = [&](int k) -> Vec { return U.cols() == 0 ? empty : Vec(U.col(std::min<Eigen::Index>(k, U.cols() - 1))); };
  LinearizedRomStepper stepper(rom);
  Vec x = xr0;
  for (int k = 0; k <= n_steps; ++k) {
    const Vec u = input_at(k);
    Y.col(k) = reduced_output(rom, x, u, k);
    if (k == n_steps) break;
    if (rom.kind == ReducedModel::Kind::Linearized) {
      stepper.set_coefficients(lm->coefficients(k), k);
      x = stepper.step(x, u, k);
    } else {
      x = reduced_step(rom, x, u, k);
    }
    if (!x.allFinite()) throw NumericalError("non-finite reduced state at step " + std::to_string(k + 1));
  }
  return Y;
}

double rmse(const Mat& y_fom, const Mat& y_rom) {
  if (y_fom.rows() != y_rom.rows() || y_fom.cols() != y_rom.cols())
    throw ValidationError("RMSE inputs differ in length or channel count");
  if (y_fom.cols() == 0) throw ValidationError("RMSE of an empty signal");
  return std::sqrt((y_fom - y_rom).colwise().squaredNorm().sum() / static_cast<double>(y_fom.cols()));
}

// ---------------------------------------------------------------------------
// Binary caches

namespace {

static_assert(std::endian::native == std::endian::little, "binary caches assume a little-endian host");

constexpr char kSnapMagic[8] = {'M', 'S', 'W', 'Q', 'S', 'N', 'A', 'P'};
constexpr char kXfrmMagic[8] = {'M', 'S', 'W', 'Q', 'X', 'F', 'R', 'M'};
constexpr std::uint32_t kCacheVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ValidationError("truncated cache file");
  return v;
}
void put_mat(std::ostream& os, const Mat& m) {
  put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
}
Mat get_mat(std::istream& is) {
  const auto r = get<std::uint64_t>(is), c = get<std::uint64_t>(is);
  if (r > (1u << 28) || c > (1u << 28)) throw ValidationError("corrupt cache matrix header");
  Mat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw ValidationError("truncated cache file");
  return m;
}
void put_str(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string get_str(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > (1u << 20)) throw ValidationError("corrupt cache string");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw ValidationError("truncated cache file");
  return s;
}
void expect_header(std::istream& is, const char* magic, const std::string& path) {
  char buf[8];
  is.read(buf, 8);
  if (!is || !std::equal(buf, buf + 8, magic)) throw ValidationError("'" + path + "' is not the expected cache type");
  const auto v = get<std::uint32_t>(is);
  if (v != kCacheVersion) throw ValidationError("unsupported cache version " + std::to_string(v));
}
std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot write '" + path + "'");
  return os;
}
std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read '" + path + "'");
  return is;
}

}  // namespace

void write_snapshot_cache(const std::string& path, const SnapshotSet& s) {
  auto os = open_out(path);
  os.write(kSnapMagic, 8);
  put(os, kCacheVersion);
  put<std::int32_t>(os, s.m);
  put_str(os, s.excitation);
  put_mat(os, s.X);
  put_mat(os, s.F);
  put_mat(os, s.P);
}

SnapshotSet read_snapshot_cache(const std::string& path) {
  auto is = open_in(path);
  expect_header(is, kSnapMagic, path);
  SnapshotSet s;
  s.m = get<std::int32_t>(is);
  s.excitation = get_str(is);
  s.X = get_mat(is);
  s.F = get_mat(is);
  s.P = get_mat(is);
  return s;
}

void write_transform_cache(const std::string& path, const TransformPair& pair, const DeimData* deim, int n_x) {
  auto os = open_out(path);
  os.write(kXfrmMagic, 8);
  put(os, kCacheVersion);
  put<std::int32_t>(os, n_x);
  put<std::int32_t>(os, pair.n_r);
  put_str(os, pair.method);
  put<std::uint8_t>(os, pair.left_through_E ? 1 : 0);
  put_mat(os, pair.V);
  put_mat(os, pair.L);
  put_mat(os, pair.values);
  const DeimData empty;
  const DeimData& d = deim ? *deim : empty;
  put_mat(os, d.U);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(d.indices.size()));
  for (int i : d.indices) put<std::int32_t>(os, i);
  put_mat(os, d.KtU_inv);
}

TransformPair read_transform_cache(const std::string& path, DeimData* deim, int* n_x) {
  auto is = open_in(path);
  expect_header(is, kXfrmMagic, path);
  const int nx = get<std::int32_t>(is);
  if (n_x) *n_x = nx;
  TransformPair t;
  t.n_r = get<std::int32_t>(is);
  t.method = get_str(is);
  t.left_through_E = get<std::uint8_t>(is) != 0;
  t.V = get_mat(is);
  t.L = get_mat(is);
  t.values = get_mat(is);
  DeimData d;
  d.U = get_mat(is);
  const auto n = get<std::uint32_t>(is);
  for (std::uint32_t a = 0; a < n; ++a) d.indices.push_back(get<std::int32_t>(is));
  d.KtU_inv = get_mat(is);
  if (t.V.rows() != 2 * nx || t.V.cols() != t.n_r || t.L.rows() != t.n_r) throw ValidationError("corrupt transform cache");
  if (deim) *deim = std::move(d);
  return t;
}

}  // namespace mswq
