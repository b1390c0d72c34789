#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mupsim/market_data.hpp"

namespace mupsim {

// Allocation of household ethanol purchases to members: nonnegative
// gender x age-band x education cell levels, moderated multiplicatively by
// household covariates. Children consume nothing by assumption.
struct IndividualizationModel {
    Eigen::VectorXd male_coefs;    // per adult cell, >= 0; 0 where dropped
    Eigen::VectorXd female_coefs;  // per adult cell
    Eigen::VectorXd moderator_coefs;
    std::vector<std::string> moderator_names;
    std::vector<int> dropped_cells;  // cell ids with no observations (both genders)
    bool converged = false;
    int iterations = 0;
    double rss = 0.0;

    double household_scale(const Household& h) const;  // exp(moderators'coefs)
    double predicted(const Household& h) const;
};

// Household covariates moderating individual intakes: city size, children
// count, habit dummies, income dummies, producing-region flag.
Eigen::VectorXd individualization_moderators(const Household& h);
std::vector<std::string> individualization_moderator_names();

struct IndividualizeConfig {
    int max_iterations = 200;
    double tol = 1e-12;  // relative RSS improvement
};

// Nonnegative least squares in the cell levels jointly with the moderator
// exponents, by projected Gauss-Newton.
IndividualizationModel individualize(const std::vector<Household>& households,
                                     const std::vector<double>& household_ethanol,
                                     const std::vector<double>& weights,
                                     const IndividualizeConfig& config = {});

struct PersonShare {
    bool male = false;
    int cell = 0;   // adult cell id
    int count = 0;  // persons of this gender/cell in the household
    double share = 0.0;  // per person, of household consumption
};

// Within-household consumption shares; they sum to one over adults (children
// excluded, zero by assumption) whenever the household has positive predicted
// consumption.
std::vector<PersonShare> person_shares(const IndividualizationModel& model, const Household& h);

}  // namespace mupsim
