#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "mupsim/draws.hpp"
#include "mupsim/market_data.hpp"

namespace mupsim {

// Which fixed-effect blocks enter the purchase utility of a category, mirroring
// the per-market selections used for estimation.
struct UtilityDesignSpec {
    enum class Interaction { None, Income, Age, Habit };
    bool retailer_fe = true;
    bool brand_fe = true;
    bool subcategory_fe = true;
    Interaction interaction = Interaction::None;  // subcategory x demographic block
    bool alcohol_free_fe = false;
    bool brand_alcohol_free_fe = false;
};

std::string interaction_name(UtilityDesignSpec::Interaction);
UtilityDesignSpec::Interaction interaction_from_name(const std::string&);

// Degree below which a variety counts as alcohol-free.
inline constexpr double kAlcoholFreeDegree = 1.2;

// Dummy-coded fixed-effect design over a category's product list. Reference
// levels are dropped within the brand and subcategory blocks so the stacked
// design stays full rank next to the retailer block.
class UtilityDesign {
  public:
    UtilityDesign() = default;
    UtilityDesign(const std::vector<Product>& products, const UtilityDesignSpec& spec);

    int n_features() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& feature_names() const { return names_; }
    const UtilityDesignSpec& spec() const { return spec_; }

    int n_interaction_levels() const { return n_levels_; }
    int interaction_level(const Household& h) const;

    // Feature indices lit for product j when the household sits at `level`.
    const std::vector<int>& features(int j, int level) const {
        return features_[static_cast<std::size_t>(j) * n_levels_ + level];
    }

    // Fixed-effect part of the utilities for all products at a given level.
    Eigen::VectorXd base_utilities(const Eigen::VectorXd& beta, int level) const;

  private:
    UtilityDesignSpec spec_;
    int n_products_ = 0;
    int n_levels_ = 1;
    std::vector<std::string> names_;
    std::vector<std::vector<int>> features_;  // (product, level) -> indices
};

// Random-coefficient logit for one alcohol category. The price sensitivity is
// alpha + demo'D(h) + sd * z with z standard normal; draws pushing it to zero
// or below are clamped at `alpha_floor` and counted.
struct MixedLogitModel {
    Category category = Category::StillWines;
    UtilityDesignSpec design;
    double price_coef = 1.0;  // mean marginal disutility of price, > 0
    Eigen::VectorXd price_demo = Eigen::VectorXd::Zero(kDemoDim);
    double price_sd = 0.0;
    Eigen::VectorXd beta;  // fixed-effect utilities, aligned with UtilityDesign
    double cf_coef = 0.0;  // control-function residual coefficient
    double champagne_price_shift = 0.0;  // extra price disutility for champagne varieties
    double alpha_floor = 1e-6;

    // Price sensitivity for a household at taste draw z (before any
    // product-level champagne shift). Increments *truncated when clamped.
    double price_sensitivity(const Household& h, double z, long* truncated = nullptr) const;
};

// A category's products at given prices, with the control-function residual
// held fixed at its baseline value.
struct MarketSlice {
    const std::vector<Product>* products = nullptr;
    Eigen::VectorXd prices;       // €/L consumer
    Eigen::VectorXd cf_residual;  // per product, zero when absent

    std::size_t size() const { return products ? products->size() : 0; }
    static MarketSlice baseline(const std::vector<Product>& products);
};

struct ChoiceProbabilities {
    Eigen::VectorXd inside;  // per product
    double outside = 0.0;
};

// Logit probabilities conditional on one taste draw. Returns the clamped price
// sensitivity actually used.
double conditional_probabilities(const MixedLogitModel& model, const UtilityDesign& design,
                                 const MarketSlice& slice, const Household& h, double z,
                                 Eigen::VectorXd& inside, double& outside,
                                 long* truncated = nullptr);

// Draw-weighted purchase probabilities for one household.
ChoiceProbabilities choice_probabilities(const MixedLogitModel& model, const UtilityDesign& design,
                                         const MarketSlice& slice, const Household& h,
                                         const DrawRule& rule);

// Population market shares (weights normalized over households).
Eigen::VectorXd market_shares(const MixedLogitModel& model, const UtilityDesign& design,
                              const MarketSlice& slice, const std::vector<Household>& households,
                              const DrawRule& rule);

// Matrix with entry (k, j) = d s_k / d p_j aggregated over the weighted
// household population and draws. Own entries negative, cross entries positive.
Eigen::MatrixXd share_jacobian(const MixedLogitModel& model, const UtilityDesign& design,
                               const MarketSlice& slice, const std::vector<Household>& households,
                               const DrawRule& rule);

// Expected price paid for one unit, with expectation over households and draws
// of the conditional (inside) purchase probabilities.
double population_reference_price(const MixedLogitModel& model, const UtilityDesign& design,
                                  const MarketSlice& slice,
                                  const std::vector<Household>& households, const DrawRule& rule);

// Welfare surplus from within-category differentiation, per unit purchased,
// for one household at one taste draw, relative to `reference_price`.
double quality_surplus(const MixedLogitModel& model, const UtilityDesign& design,
                       const MarketSlice& slice, const Household& h, double z,
                       double reference_price);

// Posterior over taste draws given the household's observed purchase counts in
// the category (conditional likelihood of the chosen varieties). A zero total
// likelihood falls back to the prior weights and sets *degenerate.
Eigen::VectorXd posterior_draw_weights(const MixedLogitModel& model, const UtilityDesign& design,
                                       const MarketSlice& slice, const Household& h,
                                       const std::vector<std::pair<int, int>>& purchase_counts,
                                       const DrawRule& rule, bool* degenerate = nullptr);

// Posterior expectation of the quality surplus.
double posterior_quality(const MixedLogitModel& model, const UtilityDesign& design,
                         const MarketSlice& slice, const Household& h,
                         const std::vector<std::pair<int, int>>& purchase_counts,
                         const DrawRule& rule, double reference_price,
                         bool* degenerate = nullptr);

// Conditional (inside) probabilities averaged under arbitrary draw weights.
Eigen::VectorXd weighted_inside_probabilities(const MixedLogitModel& model,
                                              const UtilityDesign& design,
                                              const MarketSlice& slice, const Household& h,
                                              const DrawRule& rule,
                                              const Eigen::VectorXd& draw_weights);

// Quality surplus averaged under arbitrary draw weights.
double weighted_quality_surplus(const MixedLogitModel& model, const UtilityDesign& design,
                                const MarketSlice& slice, const Household& h, const DrawRule& rule,
                                const Eigen::VectorXd& draw_weights, double reference_price);

// Per household x category x period quality bookkeeping. The identity
// adjusted_price * adjusted_quantity = expenditure holds by construction.
struct QualityIndex {
    double posterior = 0.0;          // expected quality surplus
    double adjusted_price = 0.0;     // expenditure per utility unit
    double adjusted_quantity = 0.0;  // utility units
};

QualityIndex make_quality_index(double expenditure, double quantity, double posterior_surplus);

// Expenditure per utility unit: Y / (Q * (1 + posterior)).
double adjusted_price_index(double expenditure, double quantity, double posterior_surplus);

// Fixed-share alternative price index: sum of share * price.
double laspeyres_price_index(const Eigen::VectorXd& shares, const Eigen::VectorXd& prices);

}  // namespace mupsim
