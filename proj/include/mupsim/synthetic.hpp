#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mupsim/draws.hpp"
#include "mupsim/market_data.hpp"
#include "mupsim/quality_demand.hpp"
#include "mupsim/quantity_demand.hpp"

namespace mupsim {

struct SubcategorySpec {
    std::string name;
    int n_products = 4;
    double degree_median = 12.0;
    double degree_spread = 0.5;   // sd of the degree around the median
    double price_median = 3.0;    // €/L VAT-inclusive
    double price_spread = 0.20;   // lognormal sd of base prices across products
    double excise = 0.04;         // €/L current duty
    double utility = 0.0;         // mean purchase utility level of the subcategory
    bool alcohol_free = false;
};

struct CategorySpec {
    Category category = Category::StillWines;
    std::vector<SubcategorySpec> subcategories;
    int n_retailers = 4;
    int n_manufacturers = 3;       // independent manufacturers (one flagged small)
    double private_label_share = 0.3;
    double unit_volume = 0.75;     // liters per purchase act
    // taste truth
    double price_coef = 1.0;
    double price_sd = 0.0;
    Eigen::VectorXd price_demo = Eigen::VectorXd::Zero(kDemoDim);
    double cf_coef = 1.0;
    double champagne_price_shift = 0.0;
    UtilityDesignSpec design;
    double brand_utility_spread = 0.25;
    double retailer_utility_spread = 0.10;
    double participation = 0.8;  // share of households ever buying the category
};

struct GeneratorConfig {
    int n_households = 2000;
    int n_periods = 13;
    double vat = 0.20;
    std::array<CategorySpec, kNumCategories> categories;
    // price dynamics: persistent brand-level cost shocks plus idiosyncratic
    // endogenous shocks that also enter utility through the control function
    double cost_shock_sd = 0.04;
    double cost_shock_persistence = 0.7;
    double endogenous_price_sd = 0.015;  // log scale
    // quantity truth across categories
    QuaidsModel quaids_truth;        // built against cluster demographics
    Eigen::VectorXd budget_price_elasticity;  // total-budget responses
    double budget_income_elasticity = 0.05;
    double base_period_budget = 30.0;  // € per 4-week period
    std::array<double, kHabitLevels> habit_budget_scale = {0.45, 1.3, 3.0};
    double budget_noise_sd = 0.05;     // log scale
    double share_noise_sd = 0.01;      // additive, recentred
    std::array<double, kIncomeLevels> income_level_eur = {3300.0, 2500.0, 1900.0, 1300.0};
    double income_spread = 0.45;  // lognormal sd of incomes within a category
    DrawRule truth_draws = DrawRule::gauss_hermite(9);

    void validate() const;
};

// Defaults calibrated so that degrees, unit values, margins and demand
// elasticities sit near the published market statistics for the six
// categories.
GeneratorConfig default_generator_config();

struct PurchaseRecord {
    int household = 0;
    int period = 0;
    int product = 0;  // global product id
    double liters = 0.0;
    double expenditure = 0.0;
};

struct OccasionRecord {
    int household = 0;
    int period = 0;
    Category category = Category::StillWines;
    int count = 0;
};

struct SyntheticDataset {
    GeneratorConfig config;
    std::uint64_t seed = 0;
    std::vector<Product> products;  // all categories; Product::price is the period mean
    std::array<std::vector<int>, kNumCategories> category_products;  // global ids per category
    std::array<Eigen::MatrixXd, kNumCategories> period_prices;       // period x local product
    std::array<Eigen::MatrixXd, kNumCategories> endogenous_shocks;   // same shape
    std::vector<Household> households;
    std::vector<Cluster> clusters;
    std::vector<PurchaseRecord> purchases;
    std::vector<OccasionRecord> occasions;
    std::array<MixedLogitModel, kNumCategories> quality_truth;
    QuaidsModel quantity_truth;

    int local_index(int global_product_id) const;  // index within its category
};

// Pure function of (config, seed).
SyntheticDataset generate_synthetic_market(const GeneratorConfig& config, std::uint64_t seed);

}  // namespace mupsim
