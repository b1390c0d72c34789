#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mupsim/quality_demand.hpp"
#include "mupsim/rng.hpp"

using namespace mupsim;
using namespace testing_helpers;

namespace {

UtilityDesignSpec bare_spec() {
    UtilityDesignSpec s;
    s.retailer_fe = true;
    s.brand_fe = false;
    s.subcategory_fe = false;
    return s;
}

}  // namespace

TEST_CASE("symmetric two-product market splits evenly with the outside option") {
    auto products = make_products(2, Category::Beers, 1, 1, 1);
    UtilityDesign design(products, bare_spec());
    // offset the price disutility into the retailer effect so V1 = V2 = 0
    MixedLogitModel m = plain_model(Category::Beers, 1.0, 0.0, bare_spec(), design.n_features());
    MarketSlice slice = MarketSlice::baseline(products);
    slice.prices << 1.0, 1.0;
    m.beta(0) = 1.0;  // retailer:r0

    const Household h = reference_household();
    const auto probs = choice_probabilities(m, design, slice, h, DrawRule::gauss_hermite(5));
    CHECK(probs.inside(0) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(probs.inside(1) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(probs.outside == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("fixed-coefficient logit has the closed form") {
    auto products = make_products(2, Category::Beers, 1, 1, 1);
    UtilityDesign design(products, bare_spec());
    MixedLogitModel m = plain_model(Category::Beers, 1.0, 0.0, bare_spec(), design.n_features());
    MarketSlice slice = MarketSlice::baseline(products);
    slice.prices << 1.0, 2.0;
    m.beta(0) = 2.0;  // V1 = 1, V2 = 0

    const auto probs =
        choice_probabilities(m, design, slice, reference_household(), DrawRule::gauss_hermite(3));
    const double denom = 1.0 + std::exp(1.0) + 1.0;
    CHECK(probs.inside(0) == doctest::Approx(std::exp(1.0) / denom).epsilon(1e-12));
    CHECK(probs.inside(1) == doctest::Approx(1.0 / denom).epsilon(1e-12));
    CHECK(probs.outside == doctest::Approx(1.0 / denom).epsilon(1e-12));
}

TEST_CASE("probability simplex holds across random draws") {
    Rng rng(5);
    auto products = make_products(5);
    UtilityDesignSpec spec;  // full design
    UtilityDesign design(products, spec);
    for (int rep = 0; rep < 20; ++rep) {
        MixedLogitModel m =
            plain_model(Category::StillWines, rng.uniform(0.3, 2.0), rng.uniform(0.0, 2.0), spec,
                        design.n_features());
        for (int f = 0; f < m.beta.size(); ++f) m.beta(f) = rng.normal(0, 1);
        MarketSlice slice = MarketSlice::baseline(products);
        const Household h = random_household(rng, rep);
        const auto probs = choice_probabilities(m, design, slice, h, DrawRule::gauss_hermite(7));
        double total = probs.outside;
        for (int j = 0; j < probs.inside.size(); ++j) {
            CHECK(probs.inside(j) >= 0.0);
            CHECK(probs.inside(j) <= 1.0);
            total += probs.inside(j);
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("quadrature shares match a brute-force monte carlo integration") {
    auto products = make_products(3);
    UtilityDesignSpec spec = bare_spec();
    UtilityDesign design(products, spec);
    // wide taste spread, with the mean high enough that the positive-alpha
    // clamp only affects a negligible tail
    MixedLogitModel m = plain_model(Category::StillWines, 8.0, 2.0, spec, design.n_features());
    m.beta(0) = 17.0;
    m.beta(1) = 1.0;
    MarketSlice slice = MarketSlice::baseline(products);
    const Household h = reference_household();

    const auto quad = choice_probabilities(m, design, slice, h, DrawRule::gauss_hermite(31));

    // brute-force integration over 1e6 equal-probability strata of the normal
    Eigen::VectorXd mc = Eigen::VectorXd::Zero(3);
    double mc_out = 0.0;
    const int n_draws = 1000000;
    Eigen::VectorXd d;
    double d0;
    for (int i = 0; i < n_draws; ++i) {
        const double z = inverse_normal_cdf((i + 0.5) / n_draws);
        conditional_probabilities(m, design, slice, h, z, d, d0);
        mc += d;
        mc_out += d0;
    }
    mc /= n_draws;
    mc_out /= n_draws;
    for (int j = 0; j < 3; ++j) CHECK(std::abs(quad.inside(j) - mc(j)) < 1e-3);
    CHECK(std::abs(quad.outside - mc_out) < 1e-3);
}

TEST_CASE("single-product jacobian is the textbook logit derivative") {
    auto products = make_products(1, Category::Spirits, 1, 1, 1);
    UtilityDesign design(products, bare_spec());
    MixedLogitModel m = plain_model(Category::Spirits, 0.4, 0.0, bare_spec(), design.n_features());
    m.beta(0) = 5.0;
    MarketSlice slice = MarketSlice::baseline(products);
    std::vector<Household> pop = {reference_household()};
    const DrawRule rule = DrawRule::gauss_hermite(3);

    const Eigen::VectorXd s = market_shares(m, design, slice, pop, rule);
    const Eigen::MatrixXd jac = share_jacobian(m, design, slice, pop, rule);
    CHECK(jac(0, 0) == doctest::Approx(-0.4 * s(0) * (1 - s(0))).epsilon(1e-12));
}

namespace {
// central finite differences of the aggregated shares
Eigen::MatrixXd fd_jacobian(const MixedLogitModel& m, const UtilityDesign& design,
                            const MarketSlice& slice, const std::vector<Household>& pop,
                            const DrawRule& rule, double step = 1e-6) {
    const int n = static_cast<int>(slice.size());
    Eigen::MatrixXd jac(n, n);
    for (int j = 0; j < n; ++j) {
        MarketSlice up = slice, dn = slice;
        up.prices(j) += step;
        dn.prices(j) -= step;
        const Eigen::VectorXd su = market_shares(m, design, up, pop, rule);
        const Eigen::VectorXd sd = market_shares(m, design, dn, pop, rule);
        jac.col(j) = (su - sd) / (2 * step);
    }
    return jac;
}
}  // namespace

TEST_CASE("analytic jacobian matches finite differences on random instances") {
    Rng rng(17);
    for (int rep = 0; rep < 25; ++rep) {
        const int n = 1 + static_cast<int>(rng.uniform() * 6);
        auto products = make_products(n);
        UtilityDesignSpec spec;
        spec.interaction = UtilityDesignSpec::Interaction::Income;
        UtilityDesign design(products, spec);
        const double sigma = (rep % 3 == 0) ? 0.0 : (rep % 3 == 1 ? 0.5 : 2.0);
        MixedLogitModel m =
            plain_model(Category::StillWines, rng.uniform(0.3, 1.8), sigma, spec,
                        design.n_features());
        for (int f = 0; f < m.beta.size(); ++f) m.beta(f) = rng.normal(0.5, 1.0);
        m.cf_coef = 0.3;
        MarketSlice slice = MarketSlice::baseline(products);
        for (int j = 0; j < n; ++j) slice.cf_residual(j) = rng.normal(0, 0.2);
        std::vector<Household> pop;
        for (int i = 0; i < 4; ++i) pop.push_back(random_household(rng, i));
        const DrawRule rule = DrawRule::gauss_hermite(7);

        const Eigen::MatrixXd analytic = share_jacobian(m, design, slice, pop, rule);
        const Eigen::MatrixXd fd = fd_jacobian(m, design, slice, pop, rule);
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < n; ++j) {
                const double scale = std::max({std::abs(analytic(k, j)), std::abs(fd(k, j)), 1e-6});
                CHECK(std::abs(analytic(k, j) - fd(k, j)) / scale < 1e-5);
                if (k == j) CHECK(analytic(k, k) < 0.0);
                else CHECK(analytic(k, j) > 0.0);
            }
        // rows + outside-option column sum to zero: the outside derivative is
        // minus the sum of the inside ones
        const Eigen::VectorXd colsum = analytic.colwise().sum();
        Eigen::VectorXd outside_fd(n);
        for (int j = 0; j < n; ++j) {
            MarketSlice up = slice, dn = slice;
            up.prices(j) += 1e-6;
            dn.prices(j) -= 1e-6;
            double so_u = 0, so_d = 0;
            for (const auto& h : pop) {
                so_u += h.weight * choice_probabilities(m, design, up, h, rule).outside;
                so_d += h.weight * choice_probabilities(m, design, dn, h, rule).outside;
            }
            double wsum = 0;
            for (const auto& h : pop) wsum += h.weight;
            outside_fd(j) = (so_u - so_d) / (2e-6 * wsum);
        }
        for (int j = 0; j < n; ++j)
            CHECK(colsum(j) + outside_fd(j) == doctest::Approx(0.0).epsilon(1e-6));
    }
}

TEST_CASE("quality surplus: no differentiation surplus with one product") {
    auto products = make_products(1);
    UtilityDesign design(products, bare_spec());
    MixedLogitModel m = plain_model(Category::StillWines, 1.3, 0.0, bare_spec(), design.n_features());
    m.beta(0) = 1.0;
    MarketSlice slice = MarketSlice::baseline(products);
    const double b =
        quality_surplus(m, design, slice, reference_household(), 0.0, slice.prices(0));
    CHECK(b == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("quality surplus: two identical products earn ln 2 / alpha") {
    auto products = make_products(2, Category::Beers, 1, 1, 1);
    products[1].price = products[0].price;
    UtilityDesign design(products, bare_spec());
    const double alpha = 0.9;
    MixedLogitModel m = plain_model(Category::Beers, alpha, 0.0, bare_spec(), design.n_features());
    MarketSlice slice = MarketSlice::baseline(products);
    const double b =
        quality_surplus(m, design, slice, reference_household(), 0.0, slice.prices(0));
    CHECK(b == doctest::Approx(std::log(2.0) / alpha).epsilon(1e-12));
}

TEST_CASE("quality surplus is invariant to a constant utility shift") {
    auto products = make_products(4);
    UtilityDesignSpec spec = bare_spec();
    UtilityDesign design(products, spec);
    MixedLogitModel m = plain_model(Category::StillWines, 1.1, 0.0, spec, design.n_features());
    m.beta(0) = 0.7;
    m.beta(1) = -0.2;
    MarketSlice slice = MarketSlice::baseline(products);
    const Household h = reference_household();
    const double ref = 3.0;
    const double b0 = quality_surplus(m, design, slice, h, 0.0, ref);
    MixedLogitModel shifted = m;
    shifted.beta(0) += 5.0;  // same retailer on every product: adds a constant to all V
    shifted.beta(1) += 5.0;
    const double b1 = quality_surplus(shifted, design, slice, h, 0.0, ref);
    CHECK(b0 == doctest::Approx(b1).epsilon(1e-10));
}

TEST_CASE("posterior quality collapses to the deterministic surplus when sigma is zero") {
    auto products = make_products(3);
    UtilityDesign design(products, bare_spec());
    MixedLogitModel m = plain_model(Category::StillWines, 1.0, 0.0, bare_spec(), design.n_features());
    m.beta(0) = 1.0;
    MarketSlice slice = MarketSlice::baseline(products);
    const Household h = reference_household();
    const DrawRule rule = DrawRule::gauss_hermite(9);
    const double ref = population_reference_price(m, design, slice, {h}, rule);
    const double direct = quality_surplus(m, design, slice, h, 0.0, ref);
    const double post = posterior_quality(m, design, slice, h, {{0, 2}, {2, 1}}, rule, ref);
    CHECK(post == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("flat likelihood leaves the posterior at the prior mixture") {
    auto products = make_products(1);
    UtilityDesign design(products, bare_spec());
    MixedLogitModel m = plain_model(Category::StillWines, 1.0, 0.8, bare_spec(), design.n_features());
    m.beta(0) = 1.5;
    MarketSlice slice = MarketSlice::baseline(products);
    const Household h = reference_household();
    const DrawRule rule = DrawRule::gauss_hermite(9);
    // single product: conditional probability of the observed choice is 1 at every draw
    const Eigen::VectorXd w = posterior_draw_weights(m, design, slice, h, {{0, 4}}, rule);
    for (std::size_t r = 0; r < rule.size(); ++r)
        CHECK(w(static_cast<int>(r)) == doctest::Approx(rule.weights[r]).epsilon(1e-12));
}

TEST_CASE("posterior shifts toward low price sensitivity for expensive-product buyers") {
    // 3-node oracle computed by hand from the Bayes rule
    auto products = make_products(2, Category::Spirits, 1, 1, 1);
    UtilityDesign design(products, bare_spec());
    MixedLogitModel m = plain_model(Category::Spirits, 1.0, 0.5, bare_spec(), design.n_features());
    MarketSlice slice = MarketSlice::baseline(products);
    slice.prices << 2.0, 6.0;
    const Household h = reference_household();
    const DrawRule rule = DrawRule::gauss_hermite(3);

    // household always buys the expensive product 1
    const Eigen::VectorXd w = posterior_draw_weights(m, design, slice, h, {{1, 3}}, rule);
    // hand Bayes: prior x conditional likelihood pi_1(z)^3, normalized
    Eigen::VectorXd hand(3);
    for (int r = 0; r < 3; ++r) {
        const double alpha = 1.0 + 0.5 * rule.nodes[r];
        const double v0 = -alpha * 2.0, v1 = -alpha * 6.0;
        const double pi1 = std::exp(v1) / (std::exp(v0) + std::exp(v1));
        hand(r) = rule.weights[r] * std::pow(pi1, 3);
    }
    hand /= hand.sum();
    for (int r = 0; r < 3; ++r) CHECK(w(r) == doctest::Approx(hand(r)).epsilon(1e-12));
    // mass moves to the low-alpha node (node 0 is the most negative z)
    CHECK(w(0) > rule.weights[0]);
}

TEST_CASE("adjusted price index and its identity") {
    CHECK(adjusted_price_index(10.0, 2.0, 0.0) == doctest::Approx(5.0));
    CHECK(adjusted_price_index(10.0, 2.0, 1.0) == doctest::Approx(2.5));
    const QualityIndex q = make_quality_index(7.3, 1.9, 0.37);
    CHECK(q.adjusted_price * q.adjusted_quantity == doctest::Approx(7.3).epsilon(1e-15));
    CHECK_THROWS_AS(make_quality_index(0.0, 1.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(make_quality_index(1.0, 1.0, -1.5), std::domain_error);

    Eigen::VectorXd shares(2), prices(2);
    shares << 0.5, 0.5;
    prices << 2.0, 4.0;
    CHECK(laspeyres_price_index(shares, prices) == doctest::Approx(3.0));
}
