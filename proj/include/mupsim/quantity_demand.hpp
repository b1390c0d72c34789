#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mupsim/categories.hpp"

namespace mupsim {

// Quadratic almost-ideal demand system over the six categories, on
// quality-adjusted price and quantity indices. Intercepts load on cluster
// demographics; the price matrix is symmetric with zero row/column sums and
// the expenditure and quadratic coefficient vectors sum to zero, so predicted
// shares add to one identically.
struct QuaidsModel {
    int n_goods = static_cast<int>(kNumCategories);
    Eigen::MatrixXd intercept_loadings;  // n_goods x demo_dim, kappa^a = row_a · D
    Eigen::MatrixXd price_coefs;         // n_goods x n_goods, symmetric, rows sum 0
    Eigen::VectorXd expenditure_coefs;   // sums to 0
    Eigen::VectorXd quadratic_coefs;     // sums to 0
    double kappa0 = 0.0;                 // unidentified normalization, fixed
    bool vat_inclusive_prices = true;

    // From the expenditure first stage: elasticity of the total alcohol budget
    // to each category price, and to income.
    Eigen::VectorXd budget_price_elasticity;  // n_goods
    double budget_income_elasticity = 0.0;

    int demo_dim() const { return static_cast<int>(intercept_loadings.cols()); }
    Eigen::VectorXd intercepts(const Eigen::VectorXd& demographics) const;
    // max abs violation over adding-up / homogeneity / symmetry
    double constraint_violation() const;
    void validate(double tol = 1e-8) const;
};

// Evaluation point: log price indices, log total alcohol expenditure, cluster
// demographics, and observed shares where relevant.
struct QuaidsState {
    Eigen::VectorXd log_prices;    // n_goods
    double log_expenditure = 0.0;  // ln Y
    Eigen::VectorXd demographics;  // demo_dim, first component 1
};

struct QuaidsAggregates {
    double log_price_index = 0.0;   // kappa0 + kappa'lnP + 0.5 lnP'G lnP
    double expenditure_scale = 1.0; // exp(chi'lnP), always positive
};

QuaidsAggregates price_aggregators(const QuaidsModel& model, const Eigen::VectorXd& log_prices,
                                   const Eigen::VectorXd& demographics);

Eigen::VectorXd budget_shares(const QuaidsModel& model, const QuaidsState& state);

struct QuaidsElasticities {
    Eigen::VectorXd budget;          // n_goods; NaN where the share is 0
    Eigen::MatrixXd uncompensated;   // (a, k): d ln q_a / d ln p_k
    Eigen::MatrixXd compensated;
    Eigen::VectorXd shares;          // shares used in the denominators
};

// Elasticities at the state's predicted shares (or at given shares).
QuaidsElasticities elasticities(const QuaidsModel& model, const QuaidsState& state);
QuaidsElasticities elasticities_at_shares(const QuaidsModel& model, const QuaidsState& state,
                                          const Eigen::VectorXd& shares);

// Indirect utility / cost function pair used for the welfare measures. The two
// maps are mutual inverses; requires lnY > log_price_index.
double indirect_utility(const QuaidsModel& model, const Eigen::VectorXd& log_prices,
                        double log_expenditure, const Eigen::VectorXd& demographics);
double cost_function(const QuaidsModel& model, const Eigen::VectorXd& log_prices,
                     double log_utility, const Eigen::VectorXd& demographics);

// One pseudo-panel observation: a cluster in a period.
struct PseudoPanelRow {
    int cluster = 0;
    int period = 0;
    double weight = 1.0;
    Eigen::VectorXd shares;        // n_goods observed budget shares
    Eigen::VectorXd log_prices;    // n_goods, cluster-specific indices
    double log_expenditure = 0.0;  // ln Y (endogenous)
    double log_income = 0.0;       // instrument
    Eigen::VectorXd demographics;  // demo_dim shifters (constant first)
    // market-wide per-period indices used by the expenditure stage; falls back
    // to the cluster indices when empty
    Eigen::VectorXd log_prices_market;
};

struct IrlsConfig {
    int max_iterations = 500;
    double tol = 1e-9;       // max-abs parameter change between iterations
    double ridge = 1e-9;     // fallback regularization when the system is singular
    bool instrument_expenditure = true;
    // demographic columns entering the expenditure stage (-1: all). Period
    // effects must stay out of it when prices only vary at the market level.
    int expenditure_demo_columns = -1;
};

struct IrlsResult {
    QuaidsModel model;
    bool converged = false;
    int iterations = 0;
    double share_rss = 0.0;
    bool ridge_used = false;
    // covariance of the free (constraint-reduced) parameters and the map from
    // free to full parameters, for the parameter-draw bootstrap
    Eigen::MatrixXd free_covariance;
    Eigen::MatrixXd free_to_full;
    Eigen::VectorXd full_offset;
    Eigen::VectorXd free_estimates;
};

// Iterated constrained least squares on the share system, with log income
// instrumenting log expenditure via a first-stage fit. Demographic shifters are
// taken from the rows as given.
IrlsResult estimate_irls(const std::vector<PseudoPanelRow>& panel, const IrlsConfig& config = {});

struct ExpenditureStage {
    Eigen::VectorXd price_elasticities;  // n_goods
    double income_elasticity = 0.0;
    Eigen::VectorXd coef;  // full coefficient vector
    Eigen::VectorXd fitted_log_expenditure;  // per panel row
    Eigen::MatrixXd covariance;              // of (price, income) block
    double r_squared = 0.0;
};

// Log-log regression of expenditure on market price indices, income and the
// leading demographic shifters.
ExpenditureStage expenditure_first_stage(const std::vector<PseudoPanelRow>& panel,
                                         int demo_columns = -1);

}  // namespace mupsim
