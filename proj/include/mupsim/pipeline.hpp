#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mupsim/equilibrium.hpp"
#include "mupsim/policy.hpp"
#include "mupsim/serialize.hpp"
#include "mupsim/synthetic.hpp"

namespace mupsim {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingArtifact : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PipelineConfig {
    std::filesystem::path out_dir = "out";
    std::uint64_t seed = 42;
    double vat = 0.20;
    double mup_per_drink = 0.5;
    double external_cost_eur = 0.0;  // 0: use the multiplier below
    double external_cost_multiplier = 2.5;
    std::vector<std::string> scenarios = {"low-uniform",      "high-uniform",
                                          "low-progressive",  "high-progressive",
                                          "mup",              "mup+low-progressive"};
    std::string estimation_draw_method = "sparse-grid";
    int estimation_draw_level = 9;
    std::string posterior_draw_method = "halton";
    int posterior_draw_level = 100;
    SolverConfig solver;
    int replications = 200;
    std::string bootstrap_scheme = "parameter-draw";  // or residual-bootstrap
    bool laspeyres = false;
    bool trace = false;
    GeneratorConfig generator = default_generator_config();

    DrawRule estimation_draws() const {
        return DrawRule::make(estimation_draw_method, estimation_draw_level);
    }
    DrawRule posterior_draws() const {
        return DrawRule::make(posterior_draw_method, posterior_draw_level);
    }
    void validate() const;
};

Json to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const Json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Artifact-backed workspace. Loaders raise MissingArtifact naming the stage
// that produces the file.

struct Workspace {
    PipelineConfig config;
    // data stage
    std::vector<Product> products;
    std::array<std::vector<int>, kNumCategories> category_products;
    std::vector<Household> households;
    std::vector<Cluster> clusters;
    std::vector<int> household_cluster;
    std::array<Eigen::MatrixXd, kNumCategories> period_prices;  // period x local product
    std::vector<PurchaseRecord> purchases;
    std::vector<OccasionRecord> occasions;
    int n_periods = 13;
    // estimate-quality stage
    std::array<MixedLogitModel, kNumCategories> quality;
    std::array<Eigen::MatrixXd, kNumCategories> cf_residuals;  // period x local product
    std::array<Eigen::MatrixXd, kNumCategories> quality_covariance;
    std::vector<PseudoPanelRow> pseudo_panel;
    // estimate-quantity stage
    QuaidsModel quantity;
    Eigen::MatrixXd quantity_free_cov, quantity_free_to_full;
    Eigen::VectorXd quantity_full_offset, quantity_free_estimates;
    // calibrate-supply stage
    std::array<Eigen::VectorXd, kNumCategories> costs, margins;
    // calibrate-tax stage
    std::vector<Scenario> calibrated_scenarios;

    std::vector<Product> category_product_list(int a) const;
    Eigen::VectorXd baseline_prices(int a) const;
    Eigen::VectorXd baseline_taxes(int a) const;
};

// stage entry points; each loads what it needs from disk and writes artifacts
void stage_generate(const PipelineConfig& config);
void stage_estimate_quality(const PipelineConfig& config);
void stage_estimate_quantity(const PipelineConfig& config);
void stage_calibrate_supply(const PipelineConfig& config);
void stage_calibrate_tax(const PipelineConfig& config);
void stage_simulate(const PipelineConfig& config);
void stage_report(const PipelineConfig& config);
int stage_validate(const PipelineConfig& config);  // 0 ok, 1 violated

// loads everything the simulation stage needs
Workspace load_workspace(const PipelineConfig& config, bool need_models = true,
                         bool need_supply = true, bool need_scenarios = true);

// ---------------------------------------------------------------------------
// Simulation internals exposed for tests and the acceptance suite.

struct ScenarioRun {
    Scenario scenario;
    std::array<Eigen::VectorXd, kNumCategories> prices;        // counterfactual
    std::array<Eigen::VectorXd, kNumCategories> taxes;         // counterfactual
    std::array<Eigen::VectorXd, kNumCategories> floors;
    std::array<Eigen::VectorXd, kNumCategories> mechanical_prices;  // no supply reaction
    std::array<SolveResult, kNumCategories> solves;
    std::vector<HouseholdImpact> impacts;
    std::vector<HouseholdImpact> impacts_no_reaction;
    std::map<std::string, double> statistics;
};

// Demand evaluator for one category built from the estimated quality model,
// compressed over demographic types for speed.
DemandEvaluator make_demand_evaluator(const Workspace& ws, int category,
                                      const MixedLogitModel& model);

// Runs one scenario end to end against (possibly perturbed) models.
ScenarioRun run_scenario(const Workspace& ws, const Scenario& scenario,
                         const std::array<MixedLogitModel, kNumCategories>& quality,
                         const QuaidsModel& quantity, bool with_impacts = true);

// statistic map used for reports and Monte Carlo intervals
std::map<std::string, double> scenario_statistics(const Workspace& ws, const ScenarioRun& run);

// parameter-draw or residual-bootstrap replication of the full simulation
std::vector<std::map<std::string, double>> monte_carlo_statistics(
    const Workspace& ws, const Scenario& scenario, int replications, std::uint64_t seed);

// baseline aggregates shared by stages
BaselineMarket build_baseline_market(const Workspace& ws);
std::vector<HouseholdRecord> build_household_records(const Workspace& ws);

}  // namespace mupsim
