#include "mupsim/supply.hpp"

#include <cmath>
#include <stdexcept>

#include "mupsim/categories.hpp"

namespace mupsim {

OwnershipStructure OwnershipStructure::from_products(const std::vector<Product>& products,
                                                     double vat) {
    OwnershipStructure own;
    own.vat = vat;
    const int n = static_cast<int>(products.size());
    own.control_group.resize(n);
    own.is_private_label.resize(n);
    own.retailer_group.assign(n, -1);
    std::map<std::string, int> group_ids;        // owner id -> group
    std::map<std::string, int> retailer_groups;  // retailer id -> PL group
    for (int j = 0; j < n; ++j) {
        const Product& p = products[j];
        own.is_private_label[j] = p.private_label();
        const std::string owner =
            own.is_private_label[j] ? "retailer:" + p.retailer : "manufacturer:" + p.manufacturer;
        auto [it, inserted] = group_ids.emplace(owner, static_cast<int>(group_ids.size()));
        own.control_group[j] = it->second;
        if (own.is_private_label[j]) retailer_groups[p.retailer] = it->second;
    }
    for (int j = 0; j < n; ++j)
        if (own.is_private_label[j]) own.retailer_group[j] = own.control_group[j];
    own.n_groups = static_cast<int>(group_ids.size());
    return own;
}

Eigen::VectorXd margin_map(const OwnershipStructure& ownership, const Eigen::VectorXd& shares,
                           const Eigen::MatrixXd& jacobian) {
    const int n = static_cast<int>(shares.size());
    if (jacobian.rows() != n || jacobian.cols() != n ||
        static_cast<int>(ownership.control_group.size()) != n)
        throw std::invalid_argument("margin_map: dimension mismatch");

    // Row j is the first-order condition for the price of product j; the
    // unknowns are the margins m_k. A coefficient is live when product k is in
    // the set internalized by whoever controls p_j.
    Eigen::MatrixXd system = Eigen::MatrixXd::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        for (int k = 0; k < n; ++k) {
            bool internalized;
            if (!ownership.is_private_label[j]) {
                // manufacturer of j: own portfolio plus every retailer's PL set
                internalized = (ownership.control_group[k] == ownership.control_group[j]) ||
                               ownership.is_private_label[k];
            } else {
                // retailer of j: only its own PL set
                internalized = ownership.is_private_label[k] &&
                               ownership.retailer_group[k] == ownership.retailer_group[j];
            }
            if (internalized) system(j, k) = jacobian(k, j);
        }
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
    if (!lu.isInvertible()) {
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(system);
        const double cond = svd.singularValues()(0) /
                            std::max(svd.singularValues()(svd.singularValues().size() - 1), 1e-300);
        throw std::runtime_error("margin_map: singular first-order-condition matrix, condition "
                                 "number " +
                                 std::to_string(cond));
    }
    return lu.solve(-shares);
}

CostCalibration calibrate_marginal_costs(const Eigen::VectorXd& prices,
                                         const Eigen::VectorXd& taxes,
                                         const OwnershipStructure& ownership,
                                         const Eigen::VectorXd& shares,
                                         const Eigen::MatrixXd& jacobian) {
    CostCalibration out;
    out.margins = margin_map(ownership, shares, jacobian);
    out.marginal_costs =
        prices / (1.0 + ownership.vat) - taxes - out.margins;
    for (int j = 0; j < prices.size(); ++j)
        if (out.marginal_costs(j) < 0.0) out.negative_cost_products.push_back(j);
    return out;
}

std::map<std::string, double> channel_profit(const std::vector<Product>& products,
                                             const Eigen::VectorXd& margins,
                                             const Eigen::VectorXd& shares, double market_size,
                                             ProfitGrouping grouping) {
    if (static_cast<int>(products.size()) != margins.size() || margins.size() != shares.size())
        throw std::invalid_argument("channel_profit: dimension mismatch");
    std::map<std::string, double> out;
    for (std::size_t j = 0; j < products.size(); ++j) {
        const Product& p = products[j];
        std::string key;
        switch (grouping) {
            case ProfitGrouping::Category: key = category_name(p.category); break;
            case ProfitGrouping::FirmSize:
                key = p.size_class == FirmSize::Small ? "small" : "large";
                break;
            case ProfitGrouping::Firm:
                key = p.private_label() ? "retailer:" + p.retailer
                                        : "manufacturer:" + p.manufacturer;
                break;
        }
        out[key] += market_size * margins(j) * shares(j);
    }
    return out;
}

ProfitDecomposition profit_decomposition(const ProfitSide& before, const ProfitSide& after) {
    std::vector<int> all(before.quantity_share.size());
    for (std::size_t j = 0; j < all.size(); ++j) all[j] = static_cast<int>(j);
    return profit_decomposition(before, after, all);
}

ProfitDecomposition profit_decomposition(const ProfitSide& before, const ProfitSide& after,
                                         const std::vector<int>& product_subset) {
    if (before.quantity_share.size() != after.quantity_share.size() ||
        before.margins.size() != after.margins.size())
        throw std::invalid_argument("profit_decomposition: mismatched product sets");
    ProfitDecomposition out;
    double base_profit = 0.0, quantity = 0.0, quality = 0.0, price = 0.0, exact = 0.0;
    const double dq_rel = (after.market_size - before.market_size) / before.market_size;
    for (int j : product_subset) {
        const double s0 = before.quantity_share(j);
        const double m0 = before.margins(j);
        if (!(s0 > 0.0) || m0 == 0.0) {
            ++out.excluded_products;
            continue;
        }
        const double pj0 = before.market_size * s0 * m0;
        const double pj1 = after.market_size * after.quantity_share(j) * after.margins(j);
        base_profit += pj0;
        exact += pj1 - pj0;
        quantity += pj0 * dq_rel;
        quality += pj0 * (after.quantity_share(j) - s0) / s0;
        price += pj0 * (after.margins(j) - m0) / m0;
    }
    if (!(base_profit != 0.0))
        throw std::domain_error("profit_decomposition: zero baseline profit in subset");
    out.quantity = quantity / base_profit;
    out.quality = quality / base_profit;
    out.price = price / base_profit;
    out.total_approx = out.quantity + out.quality + out.price;
    out.total_exact = exact / base_profit;
    out.gap = out.total_exact - out.total_approx;
    return out;
}

}  // namespace mupsim
