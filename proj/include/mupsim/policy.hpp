#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mupsim/equilibrium.hpp"
#include "mupsim/market_data.hpp"
#include "mupsim/quality_demand.hpp"
#include "mupsim/quantity_demand.hpp"
#include "mupsim/supply.hpp"

namespace mupsim {

enum class CalibrationTarget { None, Fiscal, PublicFinance };

// A policy scenario: a tax design (calibrated to a revenue target at fixed
// baseline quantities) and/or a consumer price floor per standard drink.
struct Scenario {
    std::string name;
    TaxKind tax_kind = TaxKind::Current;
    CalibrationTarget target = CalibrationTarget::None;
    double mup_per_drink = 0.0;  // 0 disables the floor
    double tax_rate = 0.0;       // €/(degree·L), set by calibration

    bool has_mup() const { return mup_per_drink > 0.0; }
};

// The six scenario designs studied: fiscally-neutral ("low") and
// public-finance-neutral ("high") uniform and progressive taxes, the price
// floor alone, and the floor combined with the low progressive tax.
std::vector<Scenario> standard_scenarios(double mup_per_drink);
Scenario scenario_by_name(const std::string& name, double mup_per_drink);

// Baseline market snapshot used for revenue arithmetic: annual product-level
// quantities at observed prices.
struct BaselineMarket {
    std::vector<Product> products;  // all categories stacked
    Eigen::VectorXd quantities;     // annual liters, population-weighted
    Eigen::VectorXd prices;         // €/L consumer
    double vat = 0.20;

    double excise_revenue() const;
    double vat_revenue() const;
    double total_revenue() const { return excise_revenue() + vat_revenue(); }
};

// Closed-form rate such that the schedule raises the target revenue at fixed
// baseline quantities and producer prices (no behavioral reactions).
// Fiscal: total revenue including VAT is preserved. PublicFinance: excise
// alone must cover the external cost.
double calibrate_tax_rate(TaxKind kind, CalibrationTarget target, const BaselineMarket& baseline,
                          double external_cost);

// Counterfactual excise vector for one category under a calibrated scenario.
Eigen::VectorXd scenario_taxes(const Scenario& scenario, const std::vector<Product>& products,
                               double vat);
Eigen::VectorXd scenario_floors(const Scenario& scenario, const std::vector<Product>& products);

// ---------------------------------------------------------------------------
// Step 2: household-level outcome computation

// Precomputed per-category evaluation bundle shared by all households.
struct CategoryContext {
    std::vector<Product> products;
    MixedLogitModel model;
    UtilityDesign design;
    Eigen::VectorXd baseline_prices;
    Eigen::VectorXd cf_residual;
    Eigen::VectorXd counterfactual_prices;
    DrawRule draws;  // simulation rule for posteriors

    // cached per household-type x draw conditional probabilities and surplus,
    // at baseline and counterfactual prices
    void prepare(const std::vector<Household>& population);
    int type_index(const Household& h) const;

    // filled by prepare():
    double reference_price0 = 0.0, reference_price1 = 0.0;
    std::vector<Eigen::MatrixXd> type_pi0, type_pi1;  // per type: J x R conditional probs
    std::vector<Eigen::VectorXd> type_b0, type_b1;    // per type: R surpluses
};

// Per-household baseline aggregates for one category (annual).
struct HouseholdCategoryBaseline {
    double expenditure = 0.0;  // €
    double liters = 0.0;
    double ethanol_grams = 0.0;
    std::vector<std::pair<int, int>> purchase_counts;  // product -> acts
    bool active() const { return liters > 0.0; }
};

struct HouseholdRecord {
    Household household;
    int cluster = -1;
    std::array<HouseholdCategoryBaseline, kNumCategories> baseline;
};

// Cluster-level demand responsiveness used to map price-index changes into
// quantity-index changes.
struct ClusterResponse {
    QuaidsElasticities elasticities;
    Eigen::VectorXd budget_price_elasticity;  // E of total budget to each price
};

struct CategoryImpact {
    bool active = false;
    double price_index_change = 0.0;     // relative
    double quantity_index_change = 0.0;  // relative
    double quantity_change = 0.0;        // relative, floored at -1
    double content_change = 0.0;         // relative change in mean alcohol content
    double ethanol_change = 0.0;         // relative
    Eigen::VectorXd quantity0, quantity1;  // liters per product
};

struct HouseholdImpact {
    int household = 0;
    double weight = 1.0;
    std::array<CategoryImpact, kNumCategories> category;
    double total_ethanol_change = 0.0;  // baseline-ethanol-weighted mean
    double utility_change = 0.0;        // adjusted-quantity-weighted mean index change
    double ev_eur_year = 0.0;
    double yv_eur_year = 0.0;
    double ev_star_eur_year = 0.0;
    double baseline_ethanol_grams = 0.0;
    double baseline_expenditure = 0.0;
};

// Runs the outcome computation for one household against prepared category
// contexts. `cluster_states` provides the QUAIDS evaluation point per cluster.
HouseholdImpact simulate_household_impacts(
    const HouseholdRecord& record, const std::array<CategoryContext, kNumCategories>& contexts,
    const QuaidsModel& quaids, const std::vector<QuaidsState>& cluster_states,
    const std::vector<ClusterResponse>& cluster_responses, int periods_per_year);

struct WelfareChange {
    double ev = 0.0;       // equivalent variation, €
    double yv = 0.0;       // expenditure variation, €
    double ev_star = 0.0;  // ev - yv
};

// EV at baseline prices of moving to the counterfactual (log) prices and
// expenditure; all in levels (€ per period).
WelfareChange equivalent_variation(const QuaidsModel& quaids, const Eigen::VectorXd& log_prices0,
                                   const Eigen::VectorXd& log_prices1, double expenditure0,
                                   double expenditure1, const Eigen::VectorXd& demographics);

// ---------------------------------------------------------------------------
// Reports

struct RevenueReport {
    std::array<double, kNumCategories> excise{};
    std::array<double, kNumCategories> vat{};
    double excise_total = 0.0;
    double vat_total = 0.0;
    double total() const { return excise_total + vat_total; }
    // producer revenue + excise + VAT = consumer expenditure (identity)
    double producer_total = 0.0;
    double expenditure_total = 0.0;
};

RevenueReport tax_revenue_report(const std::vector<Product>& products,
                                 const Eigen::VectorXd& quantities, const Eigen::VectorXd& prices,
                                 const Eigen::VectorXd& taxes, double vat);

struct GroupStats {
    std::string group;
    double ethanol_change_pct = 0.0;
    double utility_change_pct = 0.0;
    double ev_eur_year = 0.0;
    double weight = 0.0;
};

enum class HeterogeneityGrouping { Income, Risk };

// Weighted group means of the headline household outcomes. Empty groups are
// omitted.
std::vector<GroupStats> heterogeneity_tables(const std::vector<HouseholdImpact>& impacts,
                                             const std::vector<HouseholdRecord>& records,
                                             HeterogeneityGrouping grouping);

struct Percentiles {
    double lo = 0.0;
    double hi = 0.0;
};

// Percentile interval (default 2.5/97.5) of a replication sample.
Percentiles percentile_interval(std::vector<double> values, double lo_pct = 2.5,
                                double hi_pct = 97.5);

}  // namespace mupsim
