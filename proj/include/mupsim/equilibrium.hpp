#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "mupsim/supply.hpp"

namespace mupsim {

// Demand callback: fills shares and the share Jacobian (jac(k,j) = ds_k/dp_j)
// at the given consumer prices.
using DemandEvaluator =
    std::function<void(const Eigen::VectorXd& prices, Eigen::VectorXd& shares,
                       Eigen::MatrixXd& jacobian)>;

struct SolverConfig {
    int max_iterations = 600;
    double price_tol = 1e-8;  // on the successive-price max-norm, relative to (1 + |p|)
    double foc_tol = 1e-6;    // on the fixed-point residual, consumer-price units
    double damping = 0.5;     // in (0, 1]
    bool record_trace = false;

    void validate() const;
};

struct SolveResult {
    Eigen::VectorXd prices;
    bool converged = false;
    int iterations = 0;
    double foc_residual = 0.0;
    double last_step = 0.0;
    double damping_used = 0.0;
    bool damping_halved = false;
    std::vector<int> binding_floor;          // indices priced at the floor
    std::vector<std::pair<int, double>> trace;  // (iteration, residual)
};

// Max-norm of p - (1+vat)(M(p) + C + T), the consumer-price fixed-point
// residual. With floors, each component is measured against the projected
// target max(floor, target) so a binding floor contributes zero.
double foc_residual(const Eigen::VectorXd& prices, const Eigen::VectorXd& margins,
                    const Eigen::VectorXd& costs, const Eigen::VectorXd& taxes, double vat,
                    const Eigen::VectorXd* floors = nullptr);

// Damped fixed-point iteration p <- (1-d) p + d (1+vat)(M(p) + C + T),
// started from `initial_prices`. Detects oscillation and halves the damping
// once before giving up.
SolveResult solve_tax_counterfactual(const DemandEvaluator& demand,
                                     const OwnershipStructure& ownership,
                                     const Eigen::VectorXd& costs, const Eigen::VectorXd& taxes,
                                     const Eigen::VectorXd& initial_prices,
                                     const SolverConfig& config);

// Same iteration with the update projected onto the floor set: binding
// products sit exactly at their floor, the rest satisfy the plain conditions.
SolveResult solve_mup_counterfactual(const DemandEvaluator& demand,
                                     const OwnershipStructure& ownership,
                                     const Eigen::VectorXd& floors, const Eigen::VectorXd& costs,
                                     const Eigen::VectorXd& taxes,
                                     const Eigen::VectorXd& initial_prices,
                                     const SolverConfig& config);

struct PassThrough {
    int product = 0;
    double consumer = 0.0;  // (p1 - p0) / (c1 - c0), costs in pre-tax €/L
    double pretax = 0.0;    // ((p1 - p0)/(1+vat)) / (c1 - c0)
};

// Per-product pass-through of a cost-plus-tax change. Products with no cost
// change are omitted.
std::vector<PassThrough> pass_through(const Eigen::VectorXd& prices_before,
                                      const Eigen::VectorXd& prices_after,
                                      const Eigen::VectorXd& unit_cost_before,
                                      const Eigen::VectorXd& unit_cost_after, double vat);

}  // namespace mupsim
