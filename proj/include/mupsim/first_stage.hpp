#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mupsim/market_data.hpp"
#include "mupsim/quality_demand.hpp"

namespace mupsim {

// Per-category product panel: prices and instrument values by period.
struct ProductPanel {
    std::vector<Product> products;
    int n_periods = 0;
    Eigen::MatrixXd prices;  // period x product, €/L consumer
    // instruments(t, j * n_instruments + i)
    Eigen::MatrixXd instruments;
    std::vector<std::string> instrument_names;

    double instrument(int period, int product, int which) const {
        return instruments(period, product * static_cast<int>(instrument_names.size()) + which);
    }
};

// Standard instrument block constructed from the panel itself: the baseline
// tax level, counts of competing varieties (total and by other firms) in the
// subcategory, and leave-one-out mean prices of same-retailer and same-brand
// varieties in other periods.
ProductPanel with_standard_instruments(const std::vector<Product>& products,
                                       const Eigen::MatrixXd& prices,
                                       const std::vector<std::string>& which);

struct FirstStageResult {
    Eigen::VectorXd coef;
    std::vector<std::string> coef_names;
    Eigen::MatrixXd residuals;  // period x product
    double f_statistic = 0.0;   // on the excluded instruments
    bool weak_instruments = false;
    std::vector<std::string> dropped_columns;  // collinear, dropped with a warning
    double r_squared = 0.0;
};

// Least-squares fit of prices on instruments plus the utility model's product
// fixed effects; the residuals are the control-function covariate.
FirstStageResult first_stage_price_regression(const ProductPanel& panel,
                                              const UtilityDesignSpec& design_spec);

}  // namespace mupsim
