#include <doctest.h>

#include "mupsim/market_data.hpp"

using namespace mupsim;

namespace {
Product wine_bottle() {
    Product p;
    p.id = 1;
    p.category = Category::StillWines;
    p.subcategory = "table";
    p.brand = "b1";
    p.manufacturer = "m1";
    p.retailer = "r1";
    p.degree = 12.0;
    p.unit_volume = 0.75;
    p.price = 3.2;
    p.excise = 0.04;
    return p;
}
}  // namespace

TEST_CASE("ethanol grams matches the bottle arithmetic") {
    // a standard 0.75 L bottle at 12 degrees holds 72 g, i.e. 7.2 drinks
    CHECK(ethanol_grams(12, 0.75) == doctest::Approx(72.0));
    CHECK(standard_drinks(12, 0.75) == doctest::Approx(7.2));
    CHECK(ethanol_grams(0, 1.0) == 0.0);
    CHECK(ethanol_grams(40, 0.7) == doctest::Approx(224.0));
    CHECK_THROWS_AS(ethanol_grams(101, 1.0), std::domain_error);
    CHECK_THROWS_AS(ethanol_grams(12, -0.1), std::domain_error);
}

TEST_CASE("ethanol grams is linear in degree and volume") {
    for (double d : {2.0, 5.8, 12.0, 40.0})
        for (double v : {0.25, 0.75, 2.0}) {
            CHECK(ethanol_grams(d, 2 * v) == doctest::Approx(2 * ethanol_grams(d, v)));
            CHECK(ethanol_grams(2 * d, v) == doctest::Approx(2 * ethanol_grams(d, v)));
            CHECK(standard_drinks(d, v) * 10.0 == doctest::Approx(ethanol_grams(d, v)));
        }
}

TEST_CASE("tax per liter by schedule kind") {
    Product p = wine_bottle();
    TaxSchedule current;  // keeps the stored excise
    CHECK(tax_per_liter(p, current) == doctest::Approx(0.04));

    TaxSchedule uniform;
    uniform.kind = TaxKind::UniformVolumetric;
    uniform.rate = 0.10;
    CHECK(tax_per_liter(p, uniform) == doctest::Approx(1.20));

    TaxSchedule prog;
    prog.kind = TaxKind::ProgressiveVolumetric;
    prog.rate = 0.10;
    CHECK(tax_per_liter(p, prog) == doctest::Approx(2.10));  // 0.1*(5*1 + 5*2 + 2*3)
    p.degree = 4.0;
    CHECK(tax_per_liter(p, prog) == doctest::Approx(0.40));  // single band
}

TEST_CASE("progressive tax is continuous, piecewise linear and convex in degree") {
    TaxSchedule prog;
    prog.kind = TaxKind::ProgressiveVolumetric;
    prog.rate = 0.07;
    double prev = 0.0, prev_slope = -1.0;
    for (double d = 0.0; d <= 100.0; d += 0.5) {
        const double g = prog.effective_degrees(d);
        const double tax = prog.rate * g;
        if (d > 0.0) {
            const double slope = (tax - prev) / 0.5;
            CHECK(slope >= prev_slope - 1e-12);  // convex
            prev_slope = slope;
        }
        prev = tax;
    }
    // continuity at a band edge
    CHECK(prog.effective_degrees(5.0 - 1e-9) == doctest::Approx(prog.effective_degrees(5.0)));
}

TEST_CASE("mup floor price") {
    CHECK(mup_floor_price(12.0, 0.5) == doctest::Approx(4.8));
    CHECK(mup_floor_price(40.0, 0.5) == doctest::Approx(16.0));
    CHECK(mup_floor_price(5.8, 0.5) == doctest::Approx(2.32));
    CHECK(mup_floor_price(0.0, 0.5) == 0.0);
    // monotone in both arguments
    CHECK(mup_floor_price(13.0, 0.5) > mup_floor_price(12.0, 0.5));
    CHECK(mup_floor_price(12.0, 0.6) > mup_floor_price(12.0, 0.5));
    CHECK_THROWS_AS(mup_floor_price(12.0, -0.1), std::domain_error);
}

TEST_CASE("implicit tax rate") {
    CHECK(implicit_tax_rate(120.0, 20.0) == doctest::Approx(20.0));
    CHECK(implicit_tax_rate(100.0, 0.0) == doctest::Approx(0.0));
    // spirits-like: rate of 219.42% means revenue/(sales-revenue) = 2.1942
    const double sales = 100.0;
    const double revenue = sales * 2.1942 / (1.0 + 2.1942);
    CHECK(implicit_tax_rate(sales, revenue) == doctest::Approx(219.42));
    CHECK_THROWS_AS(implicit_tax_rate(10.0, 10.0), std::domain_error);
    CHECK_THROWS_AS(implicit_tax_rate(10.0, -1.0), std::domain_error);
}

TEST_CASE("households validate and cluster") {
    Household h;
    h.id = 0;
    h.weight = 1.0;
    h.income = 2;
    h.age = 1;
    h.habit = 0;
    h.adult_males[adult_cell(2, 1)] = 1;
    h.adult_females[adult_cell(2, 1)] = 1;
    h.validate();
    CHECK(h.n_adults() == 2);
    CHECK(h.household_type() == 2);
    h.children = 2;
    CHECK(h.household_type() == 3);

    Household single = h;
    single.id = 1;
    single.children = 0;
    single.adult_females = {};
    CHECK(single.household_type() == 0);

    auto d = demographics(h);
    CHECK(d[1] == 1.0);  // income level 2
    CHECK(d[3] == 1.0);  // age level 1
    CHECK(d[5] == 0.0);  // habit reference

    std::vector<Household> pop = {h, single};
    auto clusters = build_clusters(pop);
    CHECK(clusters.size() == 2);
    double w = 0.0;
    for (const auto& c : clusters) w += c.weight;
    CHECK(w == doctest::Approx(2.0));
}
