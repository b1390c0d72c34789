#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "mupsim/draws.hpp"
#include "mupsim/rng.hpp"

using namespace mupsim;

TEST_CASE("inverse normal CDF round-trips the error function") {
    // Phi(inverse(p)) == p at scattered probabilities
    for (double p : {1e-10, 1e-4, 0.025, 0.31, 0.5, 0.77, 0.975, 1.0 - 1e-4}) {
        const double z = inverse_normal_cdf(p);
        const double back = 0.5 * std::erfc(-z / std::sqrt(2.0));
        CHECK(back == doctest::Approx(p).epsilon(1e-9));
    }
    CHECK(inverse_normal_cdf(0.5) == doctest::Approx(0.0));
    CHECK_THROWS_AS(inverse_normal_cdf(0.0), std::domain_error);
}

TEST_CASE("gauss-hermite rule integrates normal moments exactly") {
    const DrawRule rule = DrawRule::gauss_hermite(9);
    double w = 0.0, m1 = 0.0, m2 = 0.0, m4 = 0.0, m6 = 0.0;
    for (std::size_t i = 0; i < rule.size(); ++i) {
        w += rule.weights[i];
        const double x = rule.nodes[i];
        m1 += rule.weights[i] * x;
        m2 += rule.weights[i] * x * x;
        m4 += rule.weights[i] * x * x * x * x;
        m6 += rule.weights[i] * std::pow(x, 6);
    }
    CHECK(w == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(m1 == doctest::Approx(0.0).epsilon(1e-13));
    CHECK(m2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m4 == doctest::Approx(3.0).epsilon(1e-11));
    CHECK(m6 == doctest::Approx(15.0).epsilon(1e-10));
}

TEST_CASE("halton rule is deterministic with uniform weights") {
    const DrawRule a = DrawRule::halton(64);
    const DrawRule b = DrawRule::halton(64);
    CHECK(a.nodes == b.nodes);
    CHECK(a.weights[0] == doctest::Approx(1.0 / 64));
    double mean = 0.0, var = 0.0;
    for (double x : a.nodes) mean += x / 64;
    for (double x : a.nodes) var += (x - mean) * (x - mean) / 64;
    CHECK(std::abs(mean) < 0.05);
    CHECK(var == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("rng streams are reproducible and substreams differ") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 5; ++i) {
        const double ua = a.uniform();
        CHECK(ua == b.uniform());
        CHECK(ua != c.uniform());
    }
    CHECK(substream_seed(7, "households") != substream_seed(7, "products"));
    CHECK(substream_seed(7, "households", 0) != substream_seed(7, "households", 1));
}

TEST_CASE("poisson inversion has the right mean") {
    Rng rng(11);
    double total = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) total += rng.poisson(3.7);
    CHECK(total / n == doctest::Approx(3.7).epsilon(0.03));
}
