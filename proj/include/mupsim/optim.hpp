#pragma once

#include <Eigen/Dense>
#include <functional>

namespace mupsim {

// Objective callback: returns f(x) and, when grad != nullptr, fills the gradient.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct BfgsConfig {
    int max_iterations = 400;
    double gradient_tol = 1e-6;  // max-norm
    double step_shrink = 0.5;
    double armijo = 1e-4;
    int max_line_search = 40;
};

struct BfgsResult {
    Eigen::VectorXd x;
    double value = 0.0;
    Eigen::VectorXd gradient;
    int iterations = 0;
    bool converged = false;
};

// Quasi-Newton minimizer with Armijo backtracking. Falls back to a plain
// gradient step when the line search stalls; the inverse-Hessian update is
// skipped when the curvature condition fails.
BfgsResult minimize_bfgs(const Objective& objective, const Eigen::VectorXd& x0,
                         const BfgsConfig& config = {});

}  // namespace mupsim
