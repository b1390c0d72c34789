#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mupsim/draws.hpp"
#include "mupsim/first_stage.hpp"
#include "mupsim/optim.hpp"
#include "mupsim/quality_demand.hpp"

namespace mupsim {

// Choice data for one household in one period of one category: purchase acts
// by product plus the total number of occasions (purchases of products in the
// category are inside choices, the remaining occasions are outside choices).
struct ChoiceObservation {
    int household = 0;  // index into the household list
    int period = 0;
    std::vector<std::pair<int, int>> purchases;  // (product index, acts)
    int occasions = 0;
};

struct MslConfig {
    BfgsConfig optimizer;
    bool estimate_price_demo = true;
    bool estimate_sigma = true;
    bool estimate_cf = true;
    bool estimate_champagne_shift = false;
};

struct MslResult {
    MixedLogitModel model;
    bool converged = false;
    double loglik = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
    Eigen::VectorXd parameters;
    Eigen::VectorXd std_errors;      // outer-product-of-gradients
    Eigen::MatrixXd opg_covariance;
    std::vector<std::string> parameter_names;
    long truncated_draws = 0;
};

// Simulated log-likelihood of the purchase data (and its analytic score) at
// the given model; used by the estimator and directly testable against finite
// differences. cf_residuals is period x product.
double simulated_loglik(const MixedLogitModel& model, const UtilityDesign& design,
                        const ProductPanel& panel, const Eigen::MatrixXd& cf_residuals,
                        const std::vector<Household>& households,
                        const std::vector<ChoiceObservation>& observations, const DrawRule& rule,
                        const MslConfig& config, Eigen::VectorXd* score, long* truncated,
                        Eigen::MatrixXd* opg = nullptr);

// Maximum simulated likelihood for one category. Deterministic given the data,
// draw rule and initial model.
MslResult estimate_msl(const ProductPanel& panel, const Eigen::MatrixXd& cf_residuals,
                       const std::vector<Household>& households,
                       const std::vector<ChoiceObservation>& observations, const DrawRule& rule,
                       const MixedLogitModel& init, const MslConfig& config = {});

// Parameter vector layout helpers shared with the bootstrap.
Eigen::VectorXd msl_pack(const MixedLogitModel& model, const MslConfig& config);
MixedLogitModel msl_unpack(const Eigen::VectorXd& theta, const MixedLogitModel& base,
                           const MslConfig& config);
std::vector<std::string> msl_parameter_names(const MixedLogitModel& model,
                                             const UtilityDesign& design, const MslConfig& config);

}  // namespace mupsim
