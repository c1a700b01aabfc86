#pragma once

#include <algorithm>
#include <string>

#include <Eigen/Dense>

namespace mswq {

/// minimize 1/2 x'Px + q'x subject to l <= Ax <= u. Infinite bounds are
/// written as +-kQpInf (or anything beyond it).
struct QpProblem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd A;
  Eigen::VectorXd l, u;
  Eigen::VectorXd warm_x;  // optional
  Eigen::VectorXd warm_y;  // optional

  void validate() const;
};

inline constexpr double kQpInf = 1e30;

struct QpSettings {
  double eps_abs = 1e-9;
  double eps_rel = 1e-9;
  double eps_infeasible = 1e-8;
  int max_iter = 20000;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  int scaling_iter = 15;
  bool adaptive_rho = true;
  bool polish = true;
  /// Polish is also tried during the iterations (after 50, 100, 200, ...
  /// iterations); a polished point whose unscaled KKT residual is at most
  /// kkt_tol ends the solve early.
  bool early_polish = true;
  double kkt_tol = 1e-8;
  /// When the splitting iterations end above kkt_tol, a dense primal-dual
  /// interior-point solve (followed by the same polish) finishes the problem.
  bool interior_point_fallback = true;
  int interior_point_max_iter = 100;
};

enum class QpStatus { Solved, PrimalInfeasible, DualInfeasible, MaxIterations };
std::string to_string(QpStatus s);

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // multipliers; positive on active upper bounds, negative on active lower bounds
  double objective = 0.0;
  QpStatus status = QpStatus::MaxIterations;
  int iterations = 0;  // splitting iterations
  int interior_point_iterations = 0;
  bool polished = false;
  bool interior_point = false;  // answer came from the interior-point fallback
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double max_violation = 0.0;  // certificate when infeasible or capped
};

QpResult solve_qp(const QpProblem& qp, const QpSettings& settings = {});

struct KktResiduals {
  double primal = 0.0;           // worst bound violation
  double dual = 0.0;             // |Px + q + A'y|_inf
  double complementarity = 0.0;  // worst min(|y_i|, slack on the bound its sign selects)
  double worst() const { return std::max(primal, std::max(dual, complementarity)); }
};

KktResiduals kkt_residuals(const QpProblem& qp, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

}  // namespace mswq
