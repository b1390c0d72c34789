#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mupsim/market_data.hpp"
#include "mupsim/quality_demand.hpp"
#include "mupsim/rng.hpp"

namespace testing_helpers {

using namespace mupsim;

inline Household reference_household(int id = 0, double weight = 1.0) {
    Household h;
    h.id = id;
    h.weight = weight;
    h.adult_males[adult_cell(2, 1)] = 1;
    h.adult_females[adult_cell(2, 1)] = 1;
    return h;
}

inline Household random_household(Rng& rng, int id) {
    Household h = reference_household(id, rng.uniform(0.5, 2.0));
    h.income = static_cast<int>(rng.uniform() * kIncomeLevels);
    h.age = static_cast<int>(rng.uniform() * kAgeLevels);
    h.habit = static_cast<int>(rng.uniform() * kHabitLevels);
    return h;
}

// n products in one category spread over retailers/brands/subcategories.
inline std::vector<Product> make_products(int n, Category cat = Category::StillWines,
                                          int n_retailers = 2, int n_brands = 3,
                                          int n_subcats = 2) {
    std::vector<Product> products(n);
    for (int j = 0; j < n; ++j) {
        Product& p = products[j];
        p.id = j;
        p.category = cat;
        p.retailer = "r" + std::to_string(j % n_retailers);
        p.brand = "b" + std::to_string(j % n_brands);
        p.manufacturer = "m" + std::to_string(j % 2);
        p.subcategory = "s" + std::to_string(j % n_subcats);
        p.degree = 10.0 + j;
        p.unit_volume = 0.75;
        p.price = 2.0 + 0.5 * j;
        p.excise = 0.05;
    }
    return products;
}

// A model whose utilities are all zero at unit prices when beta = 0:
// price_coef * price folded away by setting prices and coefficient directly.
inline MixedLogitModel plain_model(Category cat, double alpha, double sigma,
                                   const UtilityDesignSpec& spec, int n_features) {
    MixedLogitModel m;
    m.category = cat;
    m.design = spec;
    m.price_coef = alpha;
    m.price_sd = sigma;
    m.beta = Eigen::VectorXd::Zero(n_features);
    return m;
}

}  // namespace testing_helpers
