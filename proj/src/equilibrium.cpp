#include "mupsim/equilibrium.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mupsim {

void SolverConfig::validate() const {
    if (!(price_tol > 0.0) || !(foc_tol > 0.0))
        throw std::domain_error("solver config: tolerances must be positive");
    if (!(damping > 0.0 && damping <= 1.0))
        throw std::domain_error("solver config: damping must lie in (0,1]");
    if (max_iterations < 1) throw std::domain_error("solver config: max_iterations < 1");
}

double foc_residual(const Eigen::VectorXd& prices, const Eigen::VectorXd& margins,
                    const Eigen::VectorXd& costs, const Eigen::VectorXd& taxes, double vat,
                    const Eigen::VectorXd* floors) {
    Eigen::VectorXd target = (1.0 + vat) * (margins + costs + taxes);
    if (floors) target = target.cwiseMax(*floors);
    return (prices - target).cwiseAbs().maxCoeff();
}

namespace {

SolveResult solve_fixed_point(const DemandEvaluator& demand, const OwnershipStructure& ownership,
                              const Eigen::VectorXd* floors, const Eigen::VectorXd& costs,
                              const Eigen::VectorXd& taxes, const Eigen::VectorXd& initial_prices,
                              const SolverConfig& config) {
    config.validate();
    const int n = static_cast<int>(initial_prices.size());
    const double vat = ownership.vat;

    SolveResult result;
    result.prices = initial_prices;
    result.damping_used = config.damping;

    Eigen::VectorXd shares(n);
    Eigen::MatrixXd jac(n, n);
    double damping = config.damping;
    double prev_step = std::numeric_limits<double>::infinity();
    Eigen::VectorXd prev_direction = Eigen::VectorXd::Zero(n);

    for (int iter = 0; iter < config.max_iterations; ++iter) {
        demand(result.prices, shares, jac);
        const Eigen::VectorXd margins = margin_map(ownership, shares, jac);
        Eigen::VectorXd target = (1.0 + vat) * (margins + costs + taxes);
        if (floors) target = target.cwiseMax(*floors);

        const double residual = (result.prices - target).cwiseAbs().maxCoeff();
        Eigen::VectorXd next = (1.0 - damping) * result.prices + damping * target;
        if (floors) next = next.cwiseMax(*floors);

        const Eigen::VectorXd direction = next - result.prices;
        const double step = direction.cwiseAbs().maxCoeff();
        if (config.record_trace) result.trace.emplace_back(iter, residual);
        result.iterations = iter + 1;
        result.foc_residual = residual;
        result.last_step = step;

        const double scale = 1.0 + result.prices.cwiseAbs().maxCoeff();
        if (step <= config.price_tol * scale && residual <= config.foc_tol) {
            result.prices = next;
            result.converged = true;
            break;
        }

        // oscillation: successive directions flip while the step fails to shrink
        if (iter > 2 && step > 0.9 * prev_step && direction.dot(prev_direction) < 0.0) {
            if (!result.damping_halved) {
                damping *= 0.5;
                result.damping_halved = true;
                result.damping_used = damping;
            } else {
                result.converged = false;
                result.prices = next;
                break;
            }
        }
        prev_step = step;
        prev_direction = direction;
        result.prices = next;
    }

    if (floors)
        for (int j = 0; j < n; ++j)
            if (result.prices(j) <= (*floors)(j)) result.binding_floor.push_back(j);
    return result;
}

}  // namespace

SolveResult solve_tax_counterfactual(const DemandEvaluator& demand,
                                     const OwnershipStructure& ownership,
                                     const Eigen::VectorXd& costs, const Eigen::VectorXd& taxes,
                                     const Eigen::VectorXd& initial_prices,
                                     const SolverConfig& config) {
    return solve_fixed_point(demand, ownership, nullptr, costs, taxes, initial_prices, config);
}

SolveResult solve_mup_counterfactual(const DemandEvaluator& demand,
                                     const OwnershipStructure& ownership,
                                     const Eigen::VectorXd& floors, const Eigen::VectorXd& costs,
                                     const Eigen::VectorXd& taxes,
                                     const Eigen::VectorXd& initial_prices,
                                     const SolverConfig& config) {
    const Eigen::VectorXd start = initial_prices.cwiseMax(floors);
    return solve_fixed_point(demand, ownership, &floors, costs, taxes, start, config);
}

std::vector<PassThrough> pass_through(const Eigen::VectorXd& prices_before,
                                      const Eigen::VectorXd& prices_after,
                                      const Eigen::VectorXd& unit_cost_before,
                                      const Eigen::VectorXd& unit_cost_after, double vat) {
    const int n = static_cast<int>(prices_before.size());
    if (prices_after.size() != n || unit_cost_before.size() != n || unit_cost_after.size() != n)
        throw std::invalid_argument("pass_through: dimension mismatch");
    std::vector<PassThrough> out;
    for (int j = 0; j < n; ++j) {
        const double dc = unit_cost_after(j) - unit_cost_before(j);
        if (dc == 0.0) continue;  // undefined, omitted
        PassThrough pt;
        pt.product = j;
        const double dp = prices_after(j) - prices_before(j);
        pt.consumer = dp / dc;
        pt.pretax = dp / (1.0 + vat) / dc;
        out.push_back(pt);
    }
    return out;
}

}  // namespace mupsim
