#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mupsim/quality_demand.hpp"
#include "mupsim/supply.hpp"

using namespace mupsim;
using namespace testing_helpers;

namespace {

// deterministic logit shares for quick supply fixtures: utilities v_j - a p_j
Eigen::VectorXd logit_shares(const Eigen::VectorXd& v, const Eigen::VectorXd& p, double a) {
    Eigen::VectorXd e = (v - a * p).array().exp();
    return e / (1.0 + e.sum());
}

Eigen::MatrixXd logit_jacobian(const Eigen::VectorXd& s, double a) {
    Eigen::MatrixXd jac = a * (s * s.transpose());
    jac.diagonal() -= a * s;
    return jac;
}

std::vector<Product> two_firm_products() {
    auto products = make_products(2, Category::Beers, 2, 2, 1);
    products[0].manufacturer = "m0";
    products[1].manufacturer = "m1";
    return products;
}

}  // namespace

TEST_CASE("ownership structure partitions products into control sets") {
    auto products = make_products(4, Category::Beers, 2, 2, 1);
    products[2].manufacturer = products[2].retailer;  // private label of r0
    products[3].manufacturer = products[3].retailer;  // private label of r1
    const auto own = OwnershipStructure::from_products(products, 0.2);
    CHECK(own.is_private_label == std::vector<bool>{false, false, true, true});
    CHECK(own.control_group[0] != own.control_group[2]);
    CHECK(own.control_group[2] != own.control_group[3]);
    CHECK(own.retailer_group[2] >= 0);
    CHECK(own.retailer_group[0] == -1);
}

TEST_CASE("single-product monopolist margin is the logit markup") {
    auto products = make_products(1, Category::Spirits, 1, 1, 1);
    const double a = 0.4;
    Eigen::VectorXd v(1), p(1);
    v << 3.0;
    p << 16.0;
    const Eigen::VectorXd s = logit_shares(v, p, a);
    const Eigen::MatrixXd jac = logit_jacobian(s, a);
    const auto own = OwnershipStructure::from_products(products, 0.2);
    const Eigen::VectorXd m = margin_map(own, s, jac);
    CHECK(m(0) == doctest::Approx(1.0 / (a * (1.0 - s(0)))).epsilon(1e-12));

    // bisection cross-check on the scalar first-order condition m*ds/dp + s = 0
    double lo = 0.0, hi = 100.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double res = mid * jac(0, 0) + s(0);
        (res > 0.0 ? lo : hi) = mid;
    }
    CHECK(m(0) == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-9));
}

TEST_CASE("two symmetric single-product firms earn identical margins") {
    auto products = two_firm_products();
    const double a = 1.0;
    Eigen::VectorXd v(2), p(2);
    v << 1.0, 1.0;
    p << 2.0, 2.0;
    const Eigen::VectorXd s = logit_shares(v, p, a);
    const Eigen::MatrixXd jac = logit_jacobian(s, a);
    const auto own = OwnershipStructure::from_products(products, 0.2);
    const Eigen::VectorXd m = margin_map(own, s, jac);
    CHECK(m(0) == doctest::Approx(m(1)).epsilon(1e-14));
    CHECK(m(0) == doctest::Approx(1.0 / (a * (1.0 - s(0)))).epsilon(1e-12));
}

TEST_CASE("common ownership weakly raises margins") {
    auto separate = two_firm_products();
    auto merged = separate;
    merged[1].manufacturer = merged[0].manufacturer;
    const double a = 0.8;
    Eigen::VectorXd v(2), p(2);
    v << 1.0, 0.5;
    p << 2.0, 2.5;
    const Eigen::VectorXd s = logit_shares(v, p, a);
    const Eigen::MatrixXd jac = logit_jacobian(s, a);
    const Eigen::VectorXd m_sep =
        margin_map(OwnershipStructure::from_products(separate, 0.2), s, jac);
    const Eigen::VectorXd m_mrg =
        margin_map(OwnershipStructure::from_products(merged, 0.2), s, jac);
    CHECK(m_mrg(0) >= m_sep(0) - 1e-12);
    CHECK(m_mrg(1) >= m_sep(1) - 1e-12);
}

TEST_CASE("margin solution satisfies the stacked first-order conditions") {
    // mixed NB/PL market: substitute the margins back into both condition sets
    auto products = make_products(5, Category::Aperitifs, 2, 3, 2);
    products[3].manufacturer = products[3].retailer;
    products[4].manufacturer = products[4].retailer;
    const double a = 0.6;
    Eigen::VectorXd v(5), p(5);
    v << 1.0, 0.5, 0.2, 0.8, 0.1;
    p << 3.0, 3.5, 2.8, 2.5, 2.2;
    const Eigen::VectorXd s = logit_shares(v, p, a);
    const Eigen::MatrixXd jac = logit_jacobian(s, a);
    const auto own = OwnershipStructure::from_products(products, 0.2);
    const Eigen::VectorXd m = margin_map(own, s, jac);

    for (int j = 0; j < 5; ++j) {
        double res = s(j);
        for (int k = 0; k < 5; ++k) {
            bool counted;
            if (!own.is_private_label[j])
                counted = own.control_group[k] == own.control_group[j] || own.is_private_label[k];
            else
                counted = own.is_private_label[k] &&
                          own.retailer_group[k] == own.retailer_group[j];
            if (counted) res += m(k) * jac(k, j);
        }
        CHECK(std::abs(res) < 1e-10);
    }
}

TEST_CASE("competitive limit: huge price sensitivity drives margins to zero") {
    auto products = two_firm_products();
    const double a = 5000.0;
    Eigen::VectorXd v(2), p(2);
    v << 1.0, 1.0;
    p << 0.01, 0.01;
    const Eigen::VectorXd s = logit_shares(v, p, a);
    const Eigen::MatrixXd jac = logit_jacobian(s, a);
    const Eigen::VectorXd m = margin_map(OwnershipStructure::from_products(products, 0.2), s, jac);
    CHECK(std::abs(m(0)) < 1e-3);
}

TEST_CASE("cost calibration flags negative costs and inverts the margin identity") {
    auto products = two_firm_products();
    const double a = 1.0;
    Eigen::VectorXd v(2), p(2), taxes(2);
    v << 1.0, 0.5;
    p << 2.0, 0.3;  // second price low enough to force a negative implied cost
    taxes << 0.1, 0.1;
    const Eigen::VectorXd s = logit_shares(v, p, a);
    const Eigen::MatrixXd jac = logit_jacobian(s, a);
    const auto own = OwnershipStructure::from_products(products, 0.2);
    const auto cal = calibrate_marginal_costs(p, taxes, own, s, jac);
    for (int j = 0; j < 2; ++j)
        CHECK(cal.marginal_costs(j) ==
              doctest::Approx(p(j) / 1.2 - taxes(j) - cal.margins(j)).epsilon(1e-14));
    CHECK(cal.negative_cost_products == std::vector<int>{1});
}

TEST_CASE("channel profit aggregates by group and scales with market size") {
    auto products = make_products(3, Category::Ciders, 2, 2, 1);
    products[0].size_class = FirmSize::Small;
    Eigen::VectorXd m(3), s(3);
    m << 1.0, 0.5, 0.25;
    s << 0.5, 0.2, 0.1;
    auto by_cat = channel_profit(products, m, s, 100.0, ProfitGrouping::Category);
    CHECK(by_cat.at("ciders") == doctest::Approx(100.0 * (0.5 + 0.1 + 0.025)));
    auto doubled = channel_profit(products, m, s, 200.0, ProfitGrouping::Category);
    CHECK(doubled.at("ciders") == doctest::Approx(2 * by_cat.at("ciders")));

    auto by_size = channel_profit(products, m, s, 100.0, ProfitGrouping::FirmSize);
    auto by_firm = channel_profit(products, m, s, 100.0, ProfitGrouping::Firm);
    double size_total = 0.0, firm_total = 0.0;
    for (auto& [k, vv] : by_size) size_total += vv;
    for (auto& [k, vv] : by_firm) firm_total += vv;
    CHECK(size_total == doctest::Approx(by_cat.at("ciders")));
    CHECK(firm_total == doctest::Approx(by_cat.at("ciders")));
    // one product, simple numbers
    auto one = channel_profit({products[0]}, m.head(1), s.head(1), 100.0,
                              ProfitGrouping::Category);
    CHECK(one.at("ciders") == doctest::Approx(50.0));
}

TEST_CASE("profit decomposition isolates pure market-size and pure margin changes") {
    ProfitSide before;
    before.market_size = 100.0;
    before.quantity_share = Eigen::VectorXd::Zero(2);
    before.quantity_share << 0.6, 0.4;
    before.margins = Eigen::VectorXd::Zero(2);
    before.margins << 1.0, 2.0;

    ProfitSide after = before;
    after.market_size = 110.0;
    auto dec = profit_decomposition(before, after);
    CHECK(dec.quantity == doctest::Approx(0.10).epsilon(1e-12));
    CHECK(dec.quality == doctest::Approx(0.0));
    CHECK(dec.price == doctest::Approx(0.0));
    CHECK(dec.gap == doctest::Approx(0.0).epsilon(1e-12));

    ProfitSide priced = before;
    priced.margins << 1.2, 2.0;
    dec = profit_decomposition(before, priced);
    CHECK(dec.quantity == doctest::Approx(0.0));
    CHECK(dec.quality == doctest::Approx(0.0));
    // margin-only change is exact for the affected product
    CHECK(dec.total_exact == doctest::Approx(dec.total_approx).epsilon(1e-12));
}

TEST_CASE("decomposition gap is second order for small perturbations") {
    ProfitSide before;
    before.market_size = 50.0;
    before.quantity_share = Eigen::VectorXd::Zero(3);
    before.quantity_share << 0.5, 0.3, 0.2;
    before.margins = Eigen::VectorXd::Zero(3);
    before.margins << 1.0, 0.8, 1.4;
    ProfitSide after = before;
    after.market_size *= 1.01;
    after.quantity_share *= 0.99;
    after.quantity_share(0) += 0.5 * 0.01 * 3;  // reshuffle
    after.margins *= 1.01;
    const auto dec = profit_decomposition(before, after);
    CHECK(std::abs(dec.gap) < 1e-3);  // below 0.1% of baseline profit
}
