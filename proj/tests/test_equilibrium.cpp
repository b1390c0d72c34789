#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mupsim/equilibrium.hpp"
#include "mupsim/quality_demand.hpp"
#include "mupsim/rng.hpp"

using namespace mupsim;
using namespace testing_helpers;

namespace {

struct LogitMarket {
    Eigen::VectorXd v;  // base utilities
    double alpha = 1.0;

    DemandEvaluator evaluator() const {
        return [this](const Eigen::VectorXd& p, Eigen::VectorXd& s, Eigen::MatrixXd& jac) {
            Eigen::VectorXd e = (v - alpha * p).array().exp();
            s = e / (1.0 + e.sum());
            jac = alpha * (s * s.transpose());
            jac.diagonal() -= alpha * s;
        };
    }
};

// baseline: prices, calibrated costs so the baseline is an equilibrium
struct Fixture {
    std::vector<Product> products;
    OwnershipStructure own;
    LogitMarket market;
    Eigen::VectorXd p0, taxes, costs;

    Fixture(int n, double alpha, double vat = 0.2) {
        products = make_products(n, Category::StillWines, 2, 2, 1);
        for (int j = 0; j < n; ++j) products[j].manufacturer = "m" + std::to_string(j % 2);
        own = OwnershipStructure::from_products(products, vat);
        market.alpha = alpha;
        market.v = Eigen::VectorXd::LinSpaced(n, 1.0, 1.0 + 0.3 * (n - 1));
        p0 = Eigen::VectorXd::LinSpaced(n, 3.0, 3.0 + 0.5 * (n - 1));
        taxes = Eigen::VectorXd::Constant(n, 0.2);
        Eigen::VectorXd s;
        Eigen::MatrixXd jac;
        market.evaluator()(p0, s, jac);
        costs = calibrate_marginal_costs(p0, taxes, own, s, jac).marginal_costs;
    }
};

}  // namespace

TEST_CASE("unchanged taxes return the baseline prices") {
    Fixture f(3, 1.1);
    SolverConfig config;
    const auto res =
        solve_tax_counterfactual(f.market.evaluator(), f.own, f.costs, f.taxes, f.p0, config);
    CHECK(res.converged);
    for (int j = 0; j < 3; ++j)
        CHECK(res.prices(j) == doctest::Approx(f.p0(j)).epsilon(1e-8));
    CHECK(res.foc_residual <= 1e-6);
}

TEST_CASE("baseline fixed-point residual is at machine scale after calibration") {
    Fixture f(4, 0.9);
    Eigen::VectorXd s;
    Eigen::MatrixXd jac;
    f.market.evaluator()(f.p0, s, jac);
    const Eigen::VectorXd m = margin_map(f.own, s, jac);
    CHECK(foc_residual(f.p0, m, f.costs, f.taxes, 0.2) < 1e-10);
    // and a random price vector does not satisfy it
    CHECK(foc_residual(f.p0 * 1.3, m, f.costs, f.taxes, 0.2) > 1e-3);
}

TEST_CASE("single-product tax counterfactual matches a scalar bisection oracle") {
    Fixture f(1, 0.7);
    Eigen::VectorXd t1 = f.taxes;
    t1(0) += 1.0;  // +1 €/L pre-VAT
    SolverConfig config;
    config.price_tol = 1e-12;
    config.foc_tol = 1e-10;
    const auto res =
        solve_tax_counterfactual(f.market.evaluator(), f.own, f.costs, t1, f.p0, config);
    CHECK(res.converged);

    // bisection on p - (1+tau)(1/(alpha(1-s(p))) + C + T)
    auto g = [&](double p) {
        const double e = std::exp(f.market.v(0) - f.market.alpha * p);
        const double s = e / (1.0 + e);
        return p - 1.2 * (1.0 / (f.market.alpha * (1.0 - s)) + f.costs(0) + t1(0));
    };
    double lo = f.p0(0), hi = f.p0(0) + 10.0;
    REQUIRE(g(lo) < 0.0);
    REQUIRE(g(hi) > 0.0);
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) < 0.0 ? lo : hi) = mid;
    }
    CHECK(res.prices(0) == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-8));
}

TEST_CASE("raising one product's tax weakly raises its equilibrium price") {
    Fixture f(4, 1.2);
    SolverConfig config;
    for (int j = 0; j < 4; ++j) {
        Eigen::VectorXd t1 = f.taxes;
        t1(j) += 0.5;
        const auto res =
            solve_tax_counterfactual(f.market.evaluator(), f.own, f.costs, t1, f.p0, config);
        CHECK(res.converged);
        CHECK(res.prices(j) > f.p0(j));
    }
}

TEST_CASE("solver end point is insensitive to the damping factor") {
    Fixture f(3, 1.0);
    Eigen::VectorXd t1 = f.taxes * 2.0;
    SolverConfig a, b;
    a.damping = 0.3;
    b.damping = 0.9;
    const auto ra = solve_tax_counterfactual(f.market.evaluator(), f.own, f.costs, t1, f.p0, a);
    const auto rb = solve_tax_counterfactual(f.market.evaluator(), f.own, f.costs, t1, f.p0, b);
    CHECK(ra.converged);
    CHECK(rb.converged);
    for (int j = 0; j < 3; ++j) CHECK(ra.prices(j) == doctest::Approx(rb.prices(j)).epsilon(1e-7));
}

TEST_CASE("floors below baseline leave the tax solution unchanged") {
    Fixture f(3, 1.1);
    SolverConfig config;
    const Eigen::VectorXd floors = f.p0 * 0.5;
    const auto tax_only =
        solve_tax_counterfactual(f.market.evaluator(), f.own, f.costs, f.taxes, f.p0, config);
    const auto with_floors = solve_mup_counterfactual(f.market.evaluator(), f.own, floors, f.costs,
                                                      f.taxes, f.p0, config);
    CHECK(with_floors.converged);
    CHECK(with_floors.binding_floor.empty());
    for (int j = 0; j < 3; ++j)
        CHECK(with_floors.prices(j) == doctest::Approx(tax_only.prices(j)).epsilon(1e-8));
}

TEST_CASE("a floor above the monopoly price binds exactly") {
    Fixture f(1, 0.7);
    SolverConfig config;
    const auto unconstrained =
        solve_tax_counterfactual(f.market.evaluator(), f.own, f.costs, f.taxes, f.p0, config);
    Eigen::VectorXd floors(1);
    floors << unconstrained.prices(0) + 2.0;
    const auto res = solve_mup_counterfactual(f.market.evaluator(), f.own, floors, f.costs,
                                              f.taxes, f.p0, config);
    CHECK(res.converged);
    CHECK(res.prices(0) == floors(0));
    CHECK(res.binding_floor == std::vector<int>{1 - 1});
}

TEST_CASE("two products, one binding floor: grid-search oracle agreement") {
    Fixture f(2, 1.0);
    SolverConfig config;
    config.price_tol = 1e-12;
    config.foc_tol = 1e-10;
    // floor only binds product 0
    Eigen::VectorXd floors(2);
    floors << f.p0(0) + 1.5, 0.0;
    const auto res = solve_mup_counterfactual(f.market.evaluator(), f.own, floors, f.costs,
                                              f.taxes, f.p0, config);
    CHECK(res.converged);
    CHECK(res.prices(0) == floors(0));
    CHECK(res.binding_floor == std::vector<int>{0});

    // oracle: with the rival fixed at its floor, grid-scan the free product's
    // scalar equilibrium condition p = (1+tau)(1/(alpha(1-s)) + C + T) for a
    // sign change, then refine
    auto residual1 = [&](double p1) {
        Eigen::VectorXd p(2);
        p << floors(0), p1;
        Eigen::VectorXd e = (f.market.v - f.market.alpha * p).array().exp();
        const double s1 = e(1) / (1.0 + e.sum());
        return p1 - 1.2 * (1.0 / (f.market.alpha * (1.0 - s1)) + f.costs(1) + f.taxes(1));
    };
    double best = f.p0(1);
    double width = 3.0, step = width / 300.0;
    for (int refine = 0; refine < 5; ++refine) {
        double best_abs = std::abs(residual1(best));
        const double lo = best - width;
        for (int i = 0; i <= 600; ++i) {
            const double cand = lo + i * step;
            const double val = std::abs(residual1(cand));
            if (val < best_abs) {
                best_abs = val;
                best = cand;
            }
        }
        width = 2 * step;
        step = width / 300.0;
    }
    CHECK(res.prices(1) == doctest::Approx(best).epsilon(1e-4));

    // complementary slackness: the unconstrained target for the floored
    // product sits below its floor, and the free product satisfies its
    // first-order condition
    Eigen::VectorXd s;
    Eigen::MatrixXd jac;
    f.market.evaluator()(res.prices, s, jac);
    const Eigen::VectorXd m = margin_map(f.own, s, jac);
    const Eigen::VectorXd target = 1.2 * (m + f.costs + f.taxes);
    CHECK(target(0) < floors(0));
    CHECK(std::abs(res.prices(1) - target(1)) < 1e-6);
}

TEST_CASE("pass-through conventions") {
    Eigen::VectorXd p0(2), c0(2), c1(2);
    p0 << 3.0, 4.0;
    c0 << 1.0, 1.5;
    c1 << 1.5, 1.5;  // second product: no cost change
    // mechanical full transmission of the pre-tax cost change
    Eigen::VectorXd p1 = p0;
    p1(0) += 1.2 * (c1(0) - c0(0));
    const auto pts = pass_through(p0, p1, c0, c1, 0.2);
    REQUIRE(pts.size() == 1);  // zero cost change omitted
    CHECK(pts[0].product == 0);
    CHECK(pts[0].consumer == doctest::Approx(1.2));
    CHECK(pts[0].pretax == doctest::Approx(1.0));
}

TEST_CASE("interior single-product pass-through is below one pre-tax") {
    Fixture f(1, 0.7);
    Eigen::VectorXd t1 = f.taxes;
    t1(0) += 1.0;
    SolverConfig config;
    const auto res =
        solve_tax_counterfactual(f.market.evaluator(), f.own, f.costs, t1, f.p0, config);
    const auto pts = pass_through(f.p0, res.prices, f.costs + f.taxes, f.costs + t1, 0.2);
    REQUIRE(pts.size() == 1);
    CHECK(pts[0].pretax < 1.0);
    CHECK(pts[0].pretax > 0.0);
}

TEST_CASE("solver trace and failure modes") {
    Fixture f(2, 1.0);
    SolverConfig config;
    config.record_trace = true;
    config.max_iterations = 3;  // force non-convergence
    const auto res = solve_tax_counterfactual(f.market.evaluator(), f.own, f.costs,
                                              f.taxes * 3.0, f.p0, config);
    CHECK_FALSE(res.converged);
    CHECK(res.trace.size() == 3);
    CHECK_THROWS_AS([&] {
        SolverConfig bad;
        bad.damping = 1.5;
        bad.validate();
    }(), std::domain_error);
}
