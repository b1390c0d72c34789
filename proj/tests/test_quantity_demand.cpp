#include <doctest.h>

#include <cmath>

#include "mupsim/quantity_demand.hpp"
#include "mupsim/rng.hpp"

using namespace mupsim;

namespace {

// random model satisfying adding-up, homogeneity and symmetry exactly
QuaidsModel random_constrained_model(Rng& rng, int demo_dim = 3, double lambda_scale = 0.02) {
    const int n = 6;
    QuaidsModel m;
    m.intercept_loadings = Eigen::MatrixXd::Zero(n, demo_dim);
    Eigen::VectorXd base(n);
    for (int a = 0; a < n; ++a) base(a) = rng.uniform(0.5, 1.5);
    m.intercept_loadings.col(0) = base / base.sum();
    for (int c = 1; c < demo_dim; ++c) {
        Eigen::VectorXd col(n);
        for (int a = 0; a < n; ++a) col(a) = rng.normal(0, 0.02);
        m.intercept_loadings.col(c) = col.array() - col.mean();
    }
    Eigen::MatrixXd g(n, n);
    for (int a = 0; a < n; ++a)
        for (int k = a; k < n; ++k) g(a, k) = g(k, a) = rng.normal(0, 0.03);
    // double-center: keeps symmetry, zeroes row and column sums
    const Eigen::VectorXd rmean = g.rowwise().mean();
    g = g - rmean * Eigen::RowVectorXd::Ones(n) - Eigen::VectorXd::Ones(n) * rmean.transpose() +
        Eigen::MatrixXd::Constant(n, n, rmean.mean());
    m.price_coefs = g;
    Eigen::VectorXd chi(n), lam(n);
    for (int a = 0; a < n; ++a) chi(a) = rng.normal(0, 0.05);
    for (int a = 0; a < n; ++a) lam(a) = rng.normal(0, lambda_scale);
    m.expenditure_coefs = chi.array() - chi.mean();
    m.quadratic_coefs = lam.array() - lam.mean();
    m.budget_price_elasticity = Eigen::VectorXd::Zero(n);
    return m;
}

QuaidsState random_state(Rng& rng, int demo_dim = 3) {
    QuaidsState s;
    s.log_prices = Eigen::VectorXd::Zero(6);
    for (int a = 0; a < 6; ++a) s.log_prices(a) = rng.normal(0, 0.3);
    s.log_expenditure = rng.uniform(2.5, 4.0);
    s.demographics = Eigen::VectorXd::Zero(demo_dim);
    s.demographics(0) = 1.0;
    for (int c = 1; c < demo_dim; ++c) s.demographics(c) = rng.uniform();
    return s;
}

}  // namespace

TEST_CASE("price aggregators at the origin and without curvature") {
    Rng rng(3);
    QuaidsModel m = random_constrained_model(rng);
    m.kappa0 = 0.7;
    Eigen::VectorXd demo = Eigen::VectorXd::Zero(3);
    demo(0) = 1.0;
    const auto agg0 = price_aggregators(m, Eigen::VectorXd::Zero(6), demo);
    CHECK(agg0.log_price_index == doctest::Approx(0.7).epsilon(1e-14));
    CHECK(agg0.expenditure_scale == doctest::Approx(1.0).epsilon(1e-14));

    QuaidsModel flat = m;
    flat.price_coefs.setZero();
    flat.expenditure_coefs.setZero();
    Eigen::VectorXd lnp(6);
    for (int a = 0; a < 6; ++a) lnp(a) = 0.1 * (a + 1);
    const auto agg = price_aggregators(flat, lnp, demo);
    CHECK(agg.log_price_index ==
          doctest::Approx(0.7 + flat.intercepts(demo).dot(lnp)).epsilon(1e-14));
    CHECK(agg.expenditure_scale == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("log price index gradient matches finite differences") {
    Rng rng(4);
    const QuaidsModel m = random_constrained_model(rng);
    const QuaidsState s = random_state(rng);
    const Eigen::VectorXd kappa = m.intercepts(s.demographics);
    const Eigen::VectorXd analytic = kappa + m.price_coefs * s.log_prices;
    for (int k = 0; k < 6; ++k) {
        Eigen::VectorXd up = s.log_prices, dn = s.log_prices;
        up(k) += 1e-6;
        dn(k) -= 1e-6;
        const double fd = (price_aggregators(m, up, s.demographics).log_price_index -
                           price_aggregators(m, dn, s.demographics).log_price_index) /
                          2e-6;
        CHECK(analytic(k) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("cobb-douglas reduction returns the intercept shares") {
    Rng rng(5);
    QuaidsModel m = random_constrained_model(rng);
    m.price_coefs.setZero();
    m.expenditure_coefs.setZero();
    m.quadratic_coefs.setZero();
    const QuaidsState s = random_state(rng);
    const Eigen::VectorXd w = budget_shares(m, s);
    const Eigen::VectorXd kappa = m.intercepts(s.demographics);
    for (int a = 0; a < 6; ++a) CHECK(w(a) == doctest::Approx(kappa(a)).epsilon(1e-14));
}

TEST_CASE("adding-up holds identically under the constraints") {
    Rng rng(6);
    for (int rep = 0; rep < 30; ++rep) {
        const QuaidsModel m = random_constrained_model(rng);
        CHECK(m.constraint_violation() < 1e-12);
        const QuaidsState s = random_state(rng);
        CHECK(budget_shares(m, s).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("homogeneity: scaling all prices and expenditure leaves shares unchanged") {
    Rng rng(7);
    const QuaidsModel m = random_constrained_model(rng);
    QuaidsState s = random_state(rng);
    const Eigen::VectorXd w0 = budget_shares(m, s);
    QuaidsState scaled = s;
    scaled.log_prices.array() += 0.37;
    scaled.log_expenditure += 0.37;
    const Eigen::VectorXd w1 = budget_shares(m, scaled);
    for (int a = 0; a < 6; ++a) CHECK(w0(a) == doctest::Approx(w1(a)).epsilon(1e-11));
}

TEST_CASE("cobb-douglas elasticities have the closed form") {
    Rng rng(8);
    QuaidsModel m = random_constrained_model(rng);
    m.price_coefs.setZero();
    m.expenditure_coefs.setZero();
    m.quadratic_coefs.setZero();
    const QuaidsState s = random_state(rng);
    const auto el = elasticities(m, s);
    for (int a = 0; a < 6; ++a) {
        CHECK(el.budget(a) == doctest::Approx(1.0).epsilon(1e-12));
        for (int k = 0; k < 6; ++k) {
            CHECK(el.uncompensated(a, k) == doctest::Approx(a == k ? -1.0 : 0.0).epsilon(1e-12));
            CHECK(el.compensated(a, k) ==
                  doctest::Approx(el.shares(k) - (a == k ? 1.0 : 0.0)).epsilon(1e-12));
        }
    }
}

TEST_CASE("slutsky symmetry of compensated elasticities") {
    Rng rng(9);
    int checked = 0;
    for (int rep = 0; rep < 20; ++rep) {
        const QuaidsModel m = random_constrained_model(rng);
        const QuaidsState s = random_state(rng);
        const auto el = elasticities(m, s);
        for (int a = 0; a < 6; ++a)
            for (int k = 0; k < 6; ++k) {
                // elasticities are undefined (missing) at nonpositive shares
                if (!(el.shares(a) > 0.0) || !(el.shares(k) > 0.0)) continue;
                const double lhs = el.shares(a) * el.compensated(a, k);
                const double rhs = el.shares(k) * el.compensated(k, a);
                CHECK(std::abs(lhs - rhs) < 1e-8);
                ++checked;
            }
    }
    CHECK(checked > 400);
}

TEST_CASE("uncompensated elasticities match finite-difference quantities") {
    Rng rng(10);
    for (int rep = 0; rep < 10; ++rep) {
        const QuaidsModel m = random_constrained_model(rng);
        const QuaidsState s = random_state(rng);
        const auto el = elasticities(m, s);
        const double h = 1e-6;
        for (int k = 0; k < 6; ++k) {
            QuaidsState up = s, dn = s;
            up.log_prices(k) += h;
            dn.log_prices(k) -= h;
            const Eigen::VectorXd wu = budget_shares(m, up);
            const Eigen::VectorXd wd = budget_shares(m, dn);
            for (int a = 0; a < 6; ++a) {
                if (!(wu(a) > 0.0) || !(wd(a) > 0.0)) continue;
                // ln q_a = ln w_a + lnY - lnP_a
                const double fd =
                    (std::log(wu(a)) - std::log(wd(a))) / (2 * h) - (a == k ? 1.0 : 0.0);
                CHECK(std::abs(el.uncompensated(a, k) - fd) < 1e-4);
            }
        }
    }
}

TEST_CASE("indirect utility and cost function are mutual inverses") {
    Rng rng(11);
    for (int rep = 0; rep < 30; ++rep) {
        const QuaidsModel m = random_constrained_model(rng);
        const QuaidsState s = random_state(rng);
        const double v = indirect_utility(m, s.log_prices, s.log_expenditure, s.demographics);
        const double y = cost_function(m, s.log_prices, v, s.demographics);
        CHECK(y == doctest::Approx(s.log_expenditure).epsilon(1e-12));
    }
}

TEST_CASE("without the quadratic the utility map is affine") {
    Rng rng(12);
    QuaidsModel m = random_constrained_model(rng);
    m.quadratic_coefs.setZero();
    const QuaidsState s = random_state(rng);
    const auto agg = price_aggregators(m, s.log_prices, s.demographics);
    const double v = indirect_utility(m, s.log_prices, s.log_expenditure, s.demographics);
    CHECK(v == doctest::Approx((s.log_expenditure - agg.log_price_index) / agg.expenditure_scale)
                   .epsilon(1e-12));
    CHECK_THROWS_AS(indirect_utility(m, s.log_prices, agg.log_price_index - 0.1, s.demographics),
                    std::domain_error);
}

TEST_CASE("utility rises with expenditure and falls with any positively-shared price") {
    Rng rng(13);
    const QuaidsModel m = random_constrained_model(rng);
    const QuaidsState s = random_state(rng);
    const Eigen::VectorXd w = budget_shares(m, s);
    const double v0 = indirect_utility(m, s.log_prices, s.log_expenditure, s.demographics);
    CHECK(indirect_utility(m, s.log_prices, s.log_expenditure + 0.05, s.demographics) > v0);
    for (int a = 0; a < 6; ++a) {
        if (!(w(a) > 0.01)) continue;
        Eigen::VectorXd up = s.log_prices;
        up(a) += 0.01;
        CHECK(indirect_utility(m, up, s.log_expenditure, s.demographics) < v0);
    }
}

namespace {
std::vector<PseudoPanelRow> simulate_panel(const QuaidsModel& truth, Rng& rng, int n_rows,
                                           double noise_sd) {
    // expenditure is an exact linear function of demographics, prices and
    // income so the instrumenting first stage reproduces it without error
    std::vector<PseudoPanelRow> panel;
    for (int i = 0; i < n_rows; ++i) {
        PseudoPanelRow row;
        row.cluster = i % 40;
        row.period = i / 40;
        row.weight = rng.uniform(0.5, 2.0);
        row.demographics = Eigen::VectorXd::Zero(3);
        row.demographics(0) = 1.0;
        row.demographics(1) = rng.uniform();
        row.demographics(2) = rng.uniform();
        row.log_prices = Eigen::VectorXd::Zero(6);
        for (int a = 0; a < 6; ++a) row.log_prices(a) = rng.normal(0, 0.25);
        row.log_income = rng.uniform(7.0, 8.0);
        row.log_expenditure = 1.2 + 0.1 * row.demographics(1) + 0.05 * row.demographics(2) +
                              0.25 * row.log_income + 0.02 * row.log_prices.sum();
        QuaidsState s{row.log_prices, row.log_expenditure, row.demographics};
        row.shares = budget_shares(truth, s);
        if (noise_sd > 0.0) {
            Eigen::VectorXd eps(6);
            for (int a = 0; a < 6; ++a) eps(a) = rng.normal(0, noise_sd);
            eps.array() -= eps.mean();  // keep adding-up in the data
            row.shares += eps;
        }
        panel.push_back(std::move(row));
    }
    return panel;
}
}  // namespace

TEST_CASE("irls recovers a known constrained system from noiseless data") {
    Rng rng(14);
    const QuaidsModel truth = random_constrained_model(rng);
    const auto panel = simulate_panel(truth, rng, 1200, 0.0);
    const IrlsResult fit = estimate_irls(panel);
    CHECK(fit.converged);
    CHECK(fit.model.constraint_violation() < 1e-10);
    CHECK((fit.model.price_coefs - truth.price_coefs).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((fit.model.expenditure_coefs - truth.expenditure_coefs).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((fit.model.quadratic_coefs - truth.quadratic_coefs).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((fit.model.intercept_loadings - truth.intercept_loadings).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(fit.share_rss < 1e-12);
}

TEST_CASE("estimated models always satisfy the constraints") {
    Rng rng(15);
    const QuaidsModel truth = random_constrained_model(rng);
    const auto panel = simulate_panel(truth, rng, 600, 0.01);
    const IrlsResult fit = estimate_irls(panel);
    CHECK(fit.model.constraint_violation() < 1e-12);
}

TEST_CASE("dropping the quadratic on quadratic-free data changes the fit negligibly") {
    Rng rng(16);
    QuaidsModel truth = random_constrained_model(rng, 3, 0.0);  // lambda = 0
    const auto panel = simulate_panel(truth, rng, 800, 0.005);
    const IrlsResult full = estimate_irls(panel);
    CHECK(full.model.quadratic_coefs.cwiseAbs().maxCoeff() < 0.02);
    CHECK(full.share_rss / 800 < 1e-3);
}

TEST_CASE("expenditure first stage recovers the generating coefficients") {
    Rng rng(17);
    const QuaidsModel truth = random_constrained_model(rng);
    const auto panel = simulate_panel(truth, rng, 700, 0.0);
    const ExpenditureStage stage = expenditure_first_stage(panel);
    CHECK(stage.income_elasticity == doctest::Approx(0.25).epsilon(1e-8));
    for (int a = 0; a < 6; ++a)
        CHECK(stage.price_elasticities(a) == doctest::Approx(0.02).epsilon(1e-6));
    CHECK(stage.r_squared == doctest::Approx(1.0).epsilon(1e-10));
}
