#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mupsim/first_stage.hpp"
#include "mupsim/msl.hpp"
#include "mupsim/rng.hpp"

using namespace mupsim;
using namespace testing_helpers;

namespace {

// small synthetic price panel with brand/retailer cost shifters
struct PanelFixture {
    ProductPanel panel;
    Eigen::MatrixXd true_resid;

    PanelFixture(int n_products, int n_periods, double noise, unsigned seed) {
        Rng rng(seed);
        auto products = make_products(n_products, Category::Beers, 2, 3, 2);
        Eigen::MatrixXd prices(n_periods, n_products);
        true_resid.resize(n_periods, n_products);
        // product base level from its FE, brand-period cost shocks, residual
        std::vector<double> brand_level = {0.0, 0.4, 0.8};
        for (int t = 0; t < n_periods; ++t) {
            std::vector<double> brand_shock = {rng.normal(0, 0.3), rng.normal(0, 0.3),
                                               rng.normal(0, 0.3)};
            for (int j = 0; j < n_products; ++j) {
                const double base = 2.0 + 0.2 * (j % 2) + brand_level[j % 3];
                const double eta = noise > 0 ? rng.normal(0, noise) : 0.0;
                true_resid(t, j) = eta;
                prices(t, j) = base + brand_shock[j % 3] + eta;
            }
        }
        panel = with_standard_instruments(products, prices, {"hausman_brand", "tax"});
    }
};

}  // namespace

TEST_CASE("first stage recovers a noiseless price equation exactly") {
    PanelFixture fx(9, 12, 0.0, 21);
    UtilityDesignSpec spec;
    const auto fit = first_stage_price_regression(fx.panel, spec);
    // no residual variance left
    CHECK(fit.residuals.cwiseAbs().maxCoeff() < 1e-8);
    CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("first stage residuals are orthogonal to the regressors") {
    PanelFixture fx(9, 12, 0.15, 22);
    UtilityDesignSpec spec;
    const auto fit = first_stage_price_regression(fx.panel, spec);
    // orthogonality against the instruments (machine precision of the solve)
    const int q = static_cast<int>(fx.panel.instrument_names.size());
    for (int i = 0; i < q; ++i) {
        double dot = 0.0;
        for (int t = 0; t < fx.panel.n_periods; ++t)
            for (int j = 0; j < static_cast<int>(fx.panel.products.size()); ++j)
                dot += fit.residuals(t, j) * fx.panel.instrument(t, j, i);
        CHECK(std::abs(dot) < 1e-6);
    }
    CHECK(fit.f_statistic > 10.0);
    CHECK_FALSE(fit.weak_instruments);
}

TEST_CASE("instruments orthogonal to prices produce a weak-instrument warning") {
    PanelFixture fx(8, 10, 0.1, 23);
    // overwrite instruments with pure noise
    Rng rng(77);
    for (int t = 0; t < fx.panel.n_periods; ++t)
        for (int c = 0; c < fx.panel.instruments.cols(); ++c)
            fx.panel.instruments(t, c) = rng.normal();
    UtilityDesignSpec spec;
    const auto fit = first_stage_price_regression(fx.panel, spec);
    CHECK(fit.weak_instruments);
    CHECK(fit.f_statistic < 10.0);
}

TEST_CASE("collinear instrument columns are dropped with a warning") {
    PanelFixture fx(8, 10, 0.1, 24);
    // duplicate the first instrument into the second slot
    const int q = static_cast<int>(fx.panel.instrument_names.size());
    for (int t = 0; t < fx.panel.n_periods; ++t)
        for (int j = 0; j < static_cast<int>(fx.panel.products.size()); ++j)
            fx.panel.instruments(t, j * q + 1) = fx.panel.instrument(t, j, 0);
    UtilityDesignSpec spec;
    const auto fit = first_stage_price_regression(fx.panel, spec);
    CHECK_FALSE(fit.dropped_columns.empty());
}

namespace {

// compact choice-data generator for MSL tests: occasions fixed per household
struct MslFixture {
    ProductPanel panel;
    Eigen::MatrixXd cf;
    std::vector<Household> households;
    std::vector<ChoiceObservation> observations;
    MixedLogitModel truth;
    UtilityDesignSpec spec;

    MslFixture(int n_households, double sigma, unsigned seed, int occasions = 25,
               int n_products = 5, int n_periods = 4) {
        Rng rng(seed);
        spec.retailer_fe = true;
        spec.brand_fe = true;
        spec.subcategory_fe = false;
        auto products = make_products(n_products, Category::Beers, 2, 2, 1);
        Eigen::MatrixXd prices(n_periods, n_products);
        for (int t = 0; t < n_periods; ++t)
            for (int j = 0; j < n_products; ++j)
                prices(t, j) = 1.5 + 0.4 * (j % 3) + 0.3 * rng.uniform();
        panel.products = products;
        panel.prices = prices;
        panel.n_periods = n_periods;
        cf = Eigen::MatrixXd::Zero(n_periods, n_products);

        const UtilityDesign design(products, spec);
        truth.category = Category::Beers;
        truth.design = spec;
        truth.price_coef = 1.4;
        truth.price_demo = Eigen::VectorXd::Zero(kDemoDim);
        truth.price_demo(0) = 0.2;  // income shift
        truth.price_sd = sigma;
        truth.beta = Eigen::VectorXd::Zero(design.n_features());
        truth.beta(0) = 2.2;
        truth.beta(1) = 2.0;
        truth.beta(2) = 0.3;

        for (int i = 0; i < n_households; ++i) {
            Household h = random_household(rng, i);
            h.weight = 1.0;
            households.push_back(h);
        }
        for (int i = 0; i < n_households; ++i) {
            const Household& h = households[i];
            const double z = rng.normal();
            MarketSlice slice;
            slice.products = &panel.products;
            slice.cf_residual = Eigen::VectorXd::Zero(n_products);
            for (int t = 0; t < n_periods; ++t) {
                slice.prices = prices.row(t).transpose();
                Eigen::VectorXd d;
                double d0;
                conditional_probabilities(truth, design, slice, h, z, d, d0);
                ChoiceObservation obs;
                obs.household = i;
                obs.period = t;
                obs.occasions = occasions;
                std::vector<int> counts(n_products, 0);
                std::vector<double> w(n_products + 1);
                w[0] = d0;
                for (int j = 0; j < n_products; ++j) w[j + 1] = d(j);
                for (int o = 0; o < occasions; ++o) {
                    const int pick = rng.categorical(w.data(), n_products + 1);
                    if (pick > 0) ++counts[pick - 1];
                }
                for (int j = 0; j < n_products; ++j)
                    if (counts[j] > 0) obs.purchases.push_back({j, counts[j]});
                observations.push_back(std::move(obs));
            }
        }
    }
};

}  // namespace

TEST_CASE("analytic msl score matches finite differences") {
    MslFixture fx(30, 0.5, 31);
    const UtilityDesign design(fx.panel.products, fx.spec);
    MslConfig config;
    MixedLogitModel at = fx.truth;
    at.price_coef = 1.1;
    at.price_sd = 0.3;
    at.beta(0) = 1.5;
    at.cf_coef = 0.1;
    const DrawRule rule = DrawRule::gauss_hermite(7);

    Eigen::VectorXd score;
    long truncated = 0;
    simulated_loglik(at, design, fx.panel, fx.cf, fx.households, fx.observations, rule, config,
                     &score, &truncated);
    const Eigen::VectorXd theta = msl_pack(at, config);
    for (int k = 0; k < theta.size(); ++k) {
        Eigen::VectorXd up = theta, dn = theta;
        up(k) += 1e-6;
        dn(k) -= 1e-6;
        const double lu =
            simulated_loglik(msl_unpack(up, at, config), design, fx.panel, fx.cf, fx.households,
                             fx.observations, rule, config, nullptr, &truncated);
        const double ld =
            simulated_loglik(msl_unpack(dn, at, config), design, fx.panel, fx.cf, fx.households,
                             fx.observations, rule, config, nullptr, &truncated);
        const double fd = (lu - ld) / 2e-6;
        const double scale = std::max({std::abs(score(k)), std::abs(fd), 1.0});
        CHECK(std::abs(score(k) - fd) / scale < 1e-5);
    }
}

TEST_CASE("msl recovers the price coefficient on fixed-coefficient data") {
    MslFixture fx(400, 0.0, 32, 30);
    MslConfig config;
    config.estimate_sigma = false;
    config.estimate_cf = false;
    MixedLogitModel init = fx.truth;
    init.price_coef = 0.8;
    init.price_demo.setZero();
    init.price_sd = 0.0;
    init.beta.setZero();
    const auto fit = estimate_msl(fx.panel, fx.cf, fx.households, fx.observations,
                                  DrawRule::gauss_hermite(1), init, config);
    CHECK(fit.converged);
    CHECK(fit.gradient_norm < 1e-4);
    const double se = std::max(fit.std_errors(0), 1e-3);
    CHECK(std::abs(fit.model.price_coef - fx.truth.price_coef) < 3 * se + 0.05);
}

TEST_CASE("likelihood at the truth beats perturbed parameters on large samples") {
    MslFixture fx(300, 0.5, 33, 30);
    const UtilityDesign design(fx.panel.products, fx.spec);
    MslConfig config;
    const DrawRule rule = DrawRule::gauss_hermite(9);
    long trunc = 0;
    const double at_truth =
        simulated_loglik(fx.truth, design, fx.panel, fx.cf, fx.households, fx.observations, rule,
                         config, nullptr, &trunc);
    Rng rng(5);
    int wins = 0;
    const int trials = 10;
    for (int i = 0; i < trials; ++i) {
        MixedLogitModel perturbed = fx.truth;
        perturbed.price_coef += rng.normal(0, 0.3);
        perturbed.beta(0) += rng.normal(0, 0.3);
        perturbed.price_sd = std::abs(perturbed.price_sd + rng.normal(0, 0.3));
        const double ll =
            simulated_loglik(perturbed, design, fx.panel, fx.cf, fx.households, fx.observations,
                             rule, config, nullptr, &trunc);
        if (at_truth >= ll) ++wins;
    }
    CHECK(wins >= 8);  // truth should dominate on average
}

TEST_CASE("msl is deterministic given identical inputs") {
    MslFixture fx(60, 0.4, 34);
    MslConfig config;
    MixedLogitModel init = fx.truth;
    init.price_coef = 1.0;
    init.price_sd = 0.2;
    const DrawRule rule = DrawRule::gauss_hermite(5);
    const auto a = estimate_msl(fx.panel, fx.cf, fx.households, fx.observations, rule, init, config);
    const auto b = estimate_msl(fx.panel, fx.cf, fx.households, fx.observations, rule, init, config);
    CHECK(a.parameters == b.parameters);  // bit-identical
    CHECK(a.model.price_sd >= 0.0);
}
