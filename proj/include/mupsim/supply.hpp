#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "mupsim/market_data.hpp"

namespace mupsim {

// Pricing control for one category under two-part tariffs with resale price
// maintenance: each product belongs to exactly one control set — its
// manufacturer's national-brand portfolio or its retailer's private-label set.
struct OwnershipStructure {
    std::vector<int> control_group;  // per product: id of the pricing group
    std::vector<bool> is_private_label;
    std::vector<int> retailer_group;  // per product: id of the retailer's PL group, or -1
    int n_groups = 0;
    double vat = 0.20;

    static OwnershipStructure from_products(const std::vector<Product>& products, double vat);
};

// Channel margins m = p/(1+vat) - C - T solving the stacked first-order
// conditions at the given shares and share Jacobian (jac(k, j) = ds_k/dp_j).
// National-brand rows internalize the whole PL fringe; PL rows only their
// retailer's set. Throws on a singular system, reporting the condition number.
Eigen::VectorXd margin_map(const OwnershipStructure& ownership, const Eigen::VectorXd& shares,
                           const Eigen::MatrixXd& jacobian);

struct CostCalibration {
    Eigen::VectorXd marginal_costs;  // per product, €/L pre-tax
    Eigen::VectorXd margins;         // €/L pre-tax
    std::vector<int> negative_cost_products;  // flagged, kept in place
};

// Back out marginal costs from observed prices: C = p/(1+vat) - T - M(p).
CostCalibration calibrate_marginal_costs(const Eigen::VectorXd& prices,
                                         const Eigen::VectorXd& taxes,
                                         const OwnershipStructure& ownership,
                                         const Eigen::VectorXd& shares,
                                         const Eigen::MatrixXd& jacobian);

enum class ProfitGrouping { Category, FirmSize, Firm };

// Total marginal profit Q * sum_j m_j s_j by group; fixed fees excluded.
// Group keys: category name, "small"/"large", or the owning firm's id.
std::map<std::string, double> channel_profit(const std::vector<Product>& products,
                                             const Eigen::VectorXd& margins,
                                             const Eigen::VectorXd& shares, double market_size,
                                             ProfitGrouping grouping);

struct ProfitSide {
    double market_size = 0.0;        // total category liters
    Eigen::VectorXd quantity_share;  // per product, within-category
    Eigen::VectorXd margins;         // €/L pre-tax
};

// Relative profit change split into market-size, share-reshuffle and margin
// terms, each expressed as a fraction of baseline profit, next to the exact
// change and the approximation gap. Products with zero baseline share or
// margin are excluded and counted.
struct ProfitDecomposition {
    double quantity = 0.0;
    double quality = 0.0;
    double price = 0.0;
    double total_approx = 0.0;  // sum of the three terms
    double total_exact = 0.0;   // exact relative profit change
    double gap = 0.0;           // total_exact - total_approx
    int excluded_products = 0;
};

ProfitDecomposition profit_decomposition(const ProfitSide& before, const ProfitSide& after);

// Same decomposition restricted to a subset of products.
ProfitDecomposition profit_decomposition(const ProfitSide& before, const ProfitSide& after,
                                         const std::vector<int>& product_subset);

}  // namespace mupsim
