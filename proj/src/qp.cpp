#include "mswq/qp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <spdlog/spdlog.h>

#include "mswq/errors.hpp"

namespace mswq {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

namespace {

constexpr double kMinScale = 1e-4;
constexpr double kMaxScale = 1e4;
constexpr double kEqualityRhoFactor = 1e3;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;

double inf_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

bool is_inf(double b) { return std::fabs(b) >= kQpInf; }

Vec clip(const Vec& v, const Vec& l, const Vec& u) { return v.cwiseMax(l).cwiseMin(u); }

double violation(const Vec& Ax, const Vec& l, const Vec& u) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < Ax.size(); ++i) {
    if (!is_inf(l[i])) worst = std::max(worst, l[i] - Ax[i]);
    if (!is_inf(u[i])) worst = std::max(worst, Ax[i] - u[i]);
  }
  return worst;
}

// Ruiz equilibration of the KKT matrix plus a cost scaling.
struct Scaling {
  Vec D, E;
  double c = 1.0;
};

Scaling equilibrate(Mat& P, Vec& q, Mat& A, Vec& l, Vec& u, int iters) {
  const auto n = P.rows(), m = A.rows();
  Scaling s{Vec::Ones(n), Vec::Ones(m), 1.0};
  for (int it = 0; it < iters; ++it) {
    Vec dcol(n), erow(m);
    for (Eigen::Index j = 0; j < n; ++j) {
      double v = P.col(j).cwiseAbs().maxCoeff();
      if (m > 0) v = std::max(v, A.col(j).cwiseAbs().maxCoeff());
      dcol[j] = v > 0.0 ? std::clamp(1.0 / std::sqrt(v), kMinScale, kMaxScale) : 1.0;
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      const double v = A.row(i).cwiseAbs().maxCoeff();
      erow[i] = v > 0.0 ? std::clamp(1.0 / std::sqrt(v), kMinScale, kMaxScale) : 1.0;
    }
    P = dcol.asDiagonal() * P * dcol.asDiagonal();
    q = dcol.cwiseProduct(q);
    A = erow.asDiagonal() * A * dcol.asDiagonal();
    s.D = s.D.cwiseProduct(dcol);
    s.E = s.E.cwiseProduct(erow);
  }
  double pmean = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) pmean += P.col(j).cwiseAbs().maxCoeff();
  pmean = n > 0 ? pmean / static_cast<double>(n) : 0.0;
  const double cs = std::max(pmean, inf_norm(q));
  s.c = cs > 0.0 ? std::clamp(1.0 / cs, kMinScale, kMaxScale) : 1.0;
  P *= s.c;
  q *= s.c;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!is_inf(l[i])) l[i] *= s.E[i];
    if (!is_inf(u[i])) u[i] *= s.E[i];
  }
  return s;
}

struct Admm {
  const Mat& P;
  const Vec& q;
  const Mat& A;
  const Vec& l;
  const Vec& u;
  const QpSettings& st;
  Vec rho_vec;
  double rho;
  Eigen::LLT<Mat> llt;
  // rho_vec only takes three values (free, equality and inequality rows), so
  // A' diag(rho_vec) A is a combination of three Gram matrices formed once.
  Mat gram_ineq, gram_eq, gram_free;

  Admm(const Mat& P_, const Vec& q_, const Mat& A_, const Vec& l_, const Vec& u_, const QpSettings& s)
      : P(P_), q(q_), A(A_), l(l_), u(u_), st(s), rho(s.rho) {
    const auto n = A.cols();
    gram_ineq = gram_eq = gram_free = Mat::Zero(n, n);
    std::vector<Eigen::Index> rows[3];
    for (Eigen::Index i = 0; i < A.rows(); ++i) rows[kind(i)].push_back(i);
    Mat* grams[3] = {&gram_ineq, &gram_eq, &gram_free};
    for (int g = 0; g < 3; ++g) {
      if (rows[g].empty()) continue;
      Mat sub(static_cast<Eigen::Index>(rows[g].size()), n);
      for (std::size_t r = 0; r < rows[g].size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = A.row(rows[g][r]);
      grams[g]->selfadjointView<Eigen::Lower>().rankUpdate(sub.transpose());
    }
    set_rho(rho);
  }

  int kind(Eigen::Index i) const {
    if (is_inf(l[i]) && is_inf(u[i])) return 2;
    return !is_inf(l[i]) && !is_inf(u[i]) && u[i] - l[i] < 1e-12 ? 1 : 0;
  }

  void set_rho(double r) {
    rho = std::clamp(r, kRhoMin, kRhoMax);
    const double values[3] = {rho, kEqualityRhoFactor * rho, kRhoMin};
    rho_vec.resize(A.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i) rho_vec[i] = values[kind(i)];
    Mat K = P;
    K.diagonal().array() += st.sigma;
    K += values[0] * gram_ineq + values[1] * gram_eq + values[2] * gram_free;
    llt.compute(K);  // reads the lower triangle only
    if (llt.info() != Eigen::Success) throw NumericalError("QP KKT factorization failed");
  }
};

struct Polished {
  Vec x, y;
  bool ok = false;
};

// Solves the equality-constrained problem on the guessed active set.
Polished polish(const Mat& P, const Vec& q, const Mat& A, const Vec& l, const Vec& u, const Vec& z, const Vec& y) {
  const auto n = P.rows(), m = A.rows();
  std::vector<Eigen::Index> rows;
  std::vector<double> rhs;
  std::vector<int> side;  // -1 lower, +1 upper, 0 equality
  for (Eigen::Index i = 0; i < m; ++i) {
    const bool eq = !is_inf(l[i]) && !is_inf(u[i]) && u[i] - l[i] < 1e-12;
    if (eq) {
      rows.push_back(i), rhs.push_back(l[i]), side.push_back(0);
    } else if (!is_inf(l[i]) && z[i] - l[i] < -y[i]) {
      rows.push_back(i), rhs.push_back(l[i]), side.push_back(-1);
    } else if (!is_inf(u[i]) && u[i] - z[i] < y[i]) {
      rows.push_back(i), rhs.push_back(u[i]), side.push_back(1);
    }
  }
  const auto k = static_cast<Eigen::Index>(rows.size());
  Mat Aact(k, n);
  Vec b(k);
  for (Eigen::Index r = 0; r < k; ++r) {
    Aact.row(r) = A.row(rows[static_cast<std::size_t>(r)]);
    b[r] = rhs[static_cast<std::size_t>(r)];
  }
  const double delta = 1e-9;
  Mat K = Mat::Zero(n + k, n + k);
  K.topLeftCorner(n, n) = P;
  K.topRightCorner(n, k) = Aact.transpose();
  K.bottomLeftCorner(k, n) = Aact;
  Mat Kreg = K;
  Kreg.topLeftCorner(n, n).diagonal().array() += delta;
  Kreg.bottomRightCorner(k, k).diagonal().array() -= delta;
  Vec g(n + k);
  g << -q, b;
  Eigen::PartialPivLU<Mat> lu(Kreg);
  Vec sol = lu.solve(g);
  for (int it = 0; it < 5; ++it) sol += lu.solve(g - K * sol);
  Polished p;
  if (!sol.allFinite()) return p;
  p.x = sol.head(n);
  p.y = Vec::Zero(m);
  for (Eigen::Index r = 0; r < k; ++r) {
    double v = sol[n + r];
    const int s = side[static_cast<std::size_t>(r)];
    if (s < 0) v = std::min(v, 0.0);
    if (s > 0) v = std::max(v, 0.0);
    p.y[rows[static_cast<std::size_t>(r)]] = v;
  }
  p.ok = true;
  return p;
}


struct IpmResult {
  Vec x, y;
  bool ok = false;
  int iterations = 0;
};

// Mehrotra predictor-corrector on G x + s = h, s >= 0, E x = b, where the
// finite upper bounds of l <= Ax <= u give rows of G, the finite lower bounds
// give negated rows and coincident bounds give E.
IpmResult interior_point(const Mat& P, const Vec& q, const Mat& A, const Vec& l, const Vec& u, int max_iter,
                         double tol) {
  const auto n = P.rows(), m = A.rows();
  std::vector<Eigen::Index> up, lo, eq;
  for (Eigen::Index i = 0; i < m; ++i) {
    const bool li = !is_inf(l[i]), ui = !is_inf(u[i]);
    if (li && ui && u[i] - l[i] < 1e-12) {
      eq.push_back(i);
      continue;
    }
    if (ui) up.push_back(i);
    if (li) lo.push_back(i);
  }
  const auto mg = static_cast<Eigen::Index>(up.size() + lo.size());
  const auto me = static_cast<Eigen::Index>(eq.size());
  Mat G(mg, n), E(me, n);
  Vec h(mg), b(me);
  Eigen::Index r = 0;
  for (auto i : up) G.row(r) = A.row(i), h[r++] = u[i];
  for (auto i : lo) G.row(r) = -A.row(i), h[r++] = -l[i];
  for (Eigen::Index j = 0; j < me; ++j) E.row(j) = A.row(eq[static_cast<std::size_t>(j)]), b[j] = l[eq[static_cast<std::size_t>(j)]];

  Vec x = Vec::Zero(n), nu = Vec::Zero(me);
  Vec s = (h - G * x).cwiseMax(1.0), lam = Vec::Ones(mg);
  const double qn = 1.0 + inf_norm(q), hn = 1.0 + std::max(inf_norm(h), inf_norm(b));
  const double reg = 1e-11 * std::max(1.0, P.cwiseAbs().maxCoeff());
  IpmResult out;

  Eigen::PartialPivLU<Mat> lu;
  Eigen::LLT<Mat> llt;
  bool use_llt = me == 0;
  auto solve = [&](const Vec& rd, const Vec& rp, const Vec& re, const Vec& rc, Vec& dx, Vec& ds, Vec& dl, Vec& dn) {
    // ds = -rp - G dx ; dl = (-rc - lam .* ds) ./ s
    const Vec t = (-rc + lam.cwiseProduct(rp)).cwiseQuotient(s);
    Vec rhs(n + me);
    rhs.head(n) = -rd - G.transpose() * t;
    rhs.tail(me) = -re;
    const Vec sol = use_llt ? Vec(llt.solve(rhs)) : Vec(lu.solve(rhs));
    dx = sol.head(n);
    dn = sol.tail(me);
    ds = -rp - G * dx;
    dl = (-rc - lam.cwiseProduct(ds)).cwiseQuotient(s);
  };
  auto max_step = [](const Vec& v, const Vec& dv) {
    double a = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
    return a;
  };

  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    const Vec rd = P * x + q + G.transpose() * lam + E.transpose() * nu;
    const Vec rp = G * x + s - h;
    const Vec re = E * x - b;
    const double mu = mg > 0 ? s.dot(lam) / static_cast<double>(mg) : 0.0;
    if (inf_norm(rd) <= tol * qn && std::max(inf_norm(rp), inf_norm(re)) <= tol * hn && mu <= tol * tol * qn) {
      out.ok = true;
      break;
    }
    Mat H = P;
    H.diagonal().array() += reg;
    const Mat Gw = lam.cwiseQuotient(s).cwiseSqrt().asDiagonal() * G;
    H.selfadjointView<Eigen::Lower>().rankUpdate(Gw.transpose());
    H.triangularView<Eigen::StrictlyUpper>() = H.transpose();
    use_llt = me == 0;
    if (use_llt) {
      llt.compute(H);
      use_llt = llt.info() == Eigen::Success;
    }
    if (!use_llt) {
      Mat K = Mat::Zero(n + me, n + me);
      K.topLeftCorner(n, n) = H;
      K.topRightCorner(n, me) = E.transpose();
      K.bottomLeftCorner(me, n) = E;
      K.bottomRightCorner(me, me).diagonal().array() -= reg;
      lu.compute(K);
    }

    Vec dx, ds, dl, dn;
    solve(rd, rp, re, s.cwiseProduct(lam), dx, ds, dl, dn);
    const double aa = std::min(max_step(s, ds), max_step(lam, dl));
    const double mu_aff = mg > 0 ? (s + aa * ds).dot(lam + aa * dl) / static_cast<double>(mg) : 0.0;
    const double sigma = mu > 0.0 ? std::pow(mu_aff / mu, 3) : 0.0;
    const Vec rc = s.cwiseProduct(lam) + ds.cwiseProduct(dl) - Vec::Constant(mg, sigma * mu);
    solve(rd, rp, re, rc, dx, ds, dl, dn);
    const double a = std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(lam, dl)));
    x += a * dx;
    s += a * ds;
    lam += a * dl;
    nu += a * dn;
    if (!x.allFinite() || !lam.allFinite()) return out;
  }
  out.x = x;
  out.y = Vec::Zero(m);
  r = 0;
  for (auto i : up) out.y[i] += lam[r++];
  for (auto i : lo) out.y[i] -= lam[r++];
  for (Eigen::Index j = 0; j < me; ++j) out.y[eq[static_cast<std::size_t>(j)]] = nu[j];
  return out;
}

}  // namespace

void QpProblem::validate() const {
  const auto n = P.rows();
  if (P.cols() != n || q.size() != n) throw ValidationError("QP Hessian and linear cost dimensions differ");
  if (A.cols() != n && A.rows() > 0) throw ValidationError("QP constraint matrix has the wrong width");
  if (l.size() != A.rows() || u.size() != A.rows()) throw ValidationError("QP bounds do not match the constraint rows");
  for (Eigen::Index i = 0; i < l.size(); ++i)
    if (l[i] > u[i]) throw ValidationError("QP lower bound exceeds upper bound in row " + std::to_string(i));
  if (!P.allFinite() || !q.allFinite() || !A.allFinite()) throw ValidationError("QP data is not finite");
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, P.cwiseAbs().maxCoeff()))
    throw ValidationError("QP Hessian is not symmetric");
  if (n > 0) {
    const double lmin = Eigen::SelfAdjointEigenSolver<Mat>(P, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    if (lmin < -1e-9 * std::max(1.0, P.cwiseAbs().maxCoeff())) throw ValidationError("QP Hessian is not positive semidefinite");
  }
}

std::string to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Solved: return "solved";
    case QpStatus::PrimalInfeasible: return "primal_infeasible";
    case QpStatus::DualInfeasible: return "dual_infeasible";
    case QpStatus::MaxIterations: return "max_iterations";
  }
  return "unknown";
}

KktResiduals kkt_residuals(const QpProblem& qp, const Vec& x, const Vec& y) {
  KktResiduals r;
  const Vec Ax = qp.A * x;
  r.primal = violation(Ax, qp.l, qp.u);
  r.dual = inf_norm(qp.P * x + qp.q + qp.A.transpose() * y);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double c = 0.0;
    if (y[i] > 0.0) c = is_inf(qp.u[i]) ? y[i] : std::min(y[i], std::fabs(qp.u[i] - Ax[i]));
    if (y[i] < 0.0) c = is_inf(qp.l[i]) ? -y[i] : std::min(-y[i], std::fabs(Ax[i] - qp.l[i]));
    r.complementarity = std::max(r.complementarity, c);
  }
  return r;
}

QpResult solve_qp(const QpProblem& qp, const QpSettings& st) {
  using Clock = std::chrono::steady_clock;
  const auto t_start = Clock::now();
  auto since = [](Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); };
  qp.validate();
  const auto n = qp.P.rows(), m = qp.A.rows();
  Mat P = qp.P, A = qp.A.rows() > 0 ? qp.A : Mat(0, n);
  Vec q = qp.q, l = qp.l.cwiseMax(-kQpInf), u = qp.u.cwiseMin(kQpInf);
  const Scaling sc = equilibrate(P, q, A, l, u, st.scaling_iter);

  Vec x = Vec::Zero(n), z = Vec::Zero(m), y = Vec::Zero(m);
  if (qp.warm_x.size() == n) x = sc.D.cwiseInverse().cwiseProduct(qp.warm_x);
  if (qp.warm_y.size() == m) y = sc.c * sc.E.cwiseInverse().cwiseProduct(qp.warm_y);
  z = clip(A * x, l, u);

  Admm admm(P, q, A, l, u, st);
  QpResult res;
  const Vec Dinv = sc.D.cwiseInverse(), Einv = sc.E.cwiseInverse();
  auto residuals = [&](const Vec& xs, const Vec& zs, const Vec& ys, double& rp, double& rd, double& ep, double& ed) {
    const Vec Ax = A * xs, Px = P * xs, Aty = A.transpose() * ys;
    rp = inf_norm(Einv.cwiseProduct(Ax - zs));
    rd = inf_norm(Dinv.cwiseProduct(Px + q + Aty)) / sc.c;
    ep = st.eps_abs + st.eps_rel * std::max(inf_norm(Einv.cwiseProduct(Ax)), inf_norm(Einv.cwiseProduct(zs)));
    ed = st.eps_abs + st.eps_rel / sc.c *
                          std::max({inf_norm(Dinv.cwiseProduct(Px)), inf_norm(Dinv.cwiseProduct(Aty)),
                                    inf_norm(Dinv.cwiseProduct(q))});
  };

  // Returns true when the polished point replaces (x, y, z).
  auto try_polish = [&](double accept_tol) {
    const Polished p = polish(P, q, A, l, u, z, y);
    if (!p.ok) return false;
    const Vec xu = sc.D.cwiseProduct(p.x), yu = sc.E.cwiseProduct(p.y) / sc.c;
    const double kp = kkt_residuals(qp, xu, yu).worst();
    if (accept_tol < 0.0) {
      const double ka = kkt_residuals(qp, sc.D.cwiseProduct(x), sc.E.cwiseProduct(y) / sc.c).worst();
      if (kp > ka) return false;
    } else if (kp > accept_tol) {
      return false;
    }
    x = p.x;
    y = p.y;
    z = clip(A * x, l, u);
    res.polished = true;
    if (kp <= std::max(st.kkt_tol, st.eps_abs * 1e3)) res.status = QpStatus::Solved;
    return true;
  };

  Vec x_prev, y_prev;
  int k = 0;
  int next_polish = 50;
  for (k = 1; k <= st.max_iter; ++k) {
    x_prev = x;
    y_prev = y;
    const Vec rhs = st.sigma * x - q + A.transpose() * (admm.rho_vec.cwiseProduct(z) - y);
    const Vec xt = admm.llt.solve(rhs);
    const Vec zt = A * xt;
    x = st.alpha * xt + (1.0 - st.alpha) * x_prev;
    const Vec zr = st.alpha * zt + (1.0 - st.alpha) * z;
    const Vec znew = clip(zr + admm.rho_vec.cwiseInverse().cwiseProduct(y), l, u);
    y += admm.rho_vec.cwiseProduct(zr - znew);
    z = znew;

    if (k % 5 != 0 && k != st.max_iter) continue;
    double rp, rd, ep, ed;
    residuals(x, z, y, rp, rd, ep, ed);
    res.primal_residual = rp;
    res.dual_residual = rd;
    if (rp <= ep && rd <= ed) {
      res.status = QpStatus::Solved;
      break;
    }
    // Primal infeasibility certificate: dy with A'dy ~ 0 and u'dy+ + l'dy- < 0.
    const Vec dy = y - y_prev;
    const double ndy = inf_norm(sc.E.cwiseProduct(dy));
    if (ndy > 1e-30) {
      double support = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (dy[i] > 0.0) support += is_inf(u[i]) ? kQpInf : u[i] * dy[i];
        if (dy[i] < 0.0) support += is_inf(l[i]) ? kQpInf : l[i] * dy[i];
      }
      if (inf_norm(Dinv.cwiseProduct(A.transpose() * dy)) <= st.eps_infeasible * ndy &&
          support <= -st.eps_infeasible * ndy) {
        res.status = QpStatus::PrimalInfeasible;
        break;
      }
    }
    // Dual infeasibility: dx with P dx ~ 0, q'dx < 0, A dx within the recession cone.
    const Vec dx = x - x_prev;
    const double ndx = inf_norm(sc.D.cwiseProduct(dx));
    if (ndx > 1e-30) {
      const double tol = st.eps_infeasible * ndx;
      bool cone = inf_norm(Dinv.cwiseProduct(P * dx)) <= tol * sc.c && q.dot(dx) <= -tol * sc.c;
      const Vec Adx = A * dx;
      for (Eigen::Index i = 0; cone && i < m; ++i) {
        const double v = Adx[i] * Einv[i];
        if (!is_inf(u[i]) && v > tol) cone = false;
        if (!is_inf(l[i]) && v < -tol) cone = false;
      }
      if (cone) {
        res.status = QpStatus::DualInfeasible;
        break;
      }
    }
    if (st.polish && st.early_polish && k >= next_polish) {
      next_polish *= 2;
      if (try_polish(st.kkt_tol)) break;
    }
    if (st.adaptive_rho && k % 25 == 0) {
      const Vec Ax = A * x, Px = P * x, Aty = A.transpose() * y;
      const double pn = std::max(inf_norm(Ax), inf_norm(z));
      const double dn = std::max({inf_norm(Px), inf_norm(Aty), inf_norm(q)});
      const double rp_s = inf_norm(Ax - z) / std::max(pn, 1e-30);
      const double rd_s = inf_norm(Px + q + Aty) / std::max(dn, 1e-30);
      const double ratio = std::sqrt(rp_s / std::max(rd_s, 1e-30));
      if (ratio > 5.0 || ratio < 0.2) admm.set_rho(admm.rho * ratio);
    }
  }
  res.iterations = std::min(k, st.max_iter);
  const double admm_s = since(t_start);
  const auto t_finish = Clock::now();

  if (st.polish && !res.polished && res.status != QpStatus::PrimalInfeasible &&
      res.status != QpStatus::DualInfeasible) {
    const QpStatus before = res.status;
    try_polish(-1.0);
    if (before == QpStatus::Solved) res.status = QpStatus::Solved;
  }

  if (st.interior_point_fallback && res.status != QpStatus::PrimalInfeasible &&
      res.status != QpStatus::DualInfeasible &&
      kkt_residuals(qp, sc.D.cwiseProduct(x), sc.E.cwiseProduct(y) / sc.c).worst() > st.kkt_tol) {
    const IpmResult ip = interior_point(P, q, A, l, u, st.interior_point_max_iter, 1e-10);
    if (ip.ok) {
      const Vec xs = x, ys = y, zs = z;
      const bool had_polish = res.polished;
      const QpStatus had_status = res.status;
      const double before = kkt_residuals(qp, sc.D.cwiseProduct(x), sc.E.cwiseProduct(y) / sc.c).worst();
      x = ip.x;
      y = ip.y;
      z = clip(A * x, l, u);
      res.polished = false;
      if (st.polish) try_polish(-1.0);
      const double after = kkt_residuals(qp, sc.D.cwiseProduct(x), sc.E.cwiseProduct(y) / sc.c).worst();
      if (after <= before) {
        res.interior_point = true;
        res.interior_point_iterations = ip.iterations;
        if (after <= std::max(st.kkt_tol, st.eps_abs * 1e3)) res.status = QpStatus::Solved;
      } else {
        x = xs, y = ys, z = zs;
        res.polished = had_polish;
        res.status = had_status;
      }
    }
  }

  spdlog::debug("qp {}x{}: {} after {} splitting iterations ({:.2f}s), interior point {} iterations, finish {:.2f}s", n,
                m, to_string(res.status), res.iterations, admm_s, res.interior_point_iterations, since(t_finish));
  res.x = sc.D.cwiseProduct(x);
  res.y = sc.E.cwiseProduct(y) / sc.c;
  res.objective = 0.5 * res.x.dot(qp.P * res.x) + qp.q.dot(res.x);
  res.max_violation = violation(qp.A * res.x, qp.l, qp.u);
  const auto kk = kkt_residuals(qp, res.x, res.y);
  res.primal_residual = kk.primal;
  res.dual_residual = kk.dual;
  return res;
}

}  // namespace mswq
