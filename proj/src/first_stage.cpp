#include "mupsim/first_stage.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace mupsim {

ProductPanel with_standard_instruments(const std::vector<Product>& products,
                                       const Eigen::MatrixXd& prices,
                                       const std::vector<std::string>& which) {
    ProductPanel panel;
    panel.products = products;
    panel.prices = prices;
    panel.n_periods = static_cast<int>(prices.rows());
    panel.instrument_names = which;
    const int n = static_cast<int>(products.size());
    const int T = panel.n_periods;
    const int q = static_cast<int>(which.size());
    panel.instruments.resize(T, n * q);

    // counts within subcategory
    std::vector<int> subcat_count(n, 0), other_firm_count(n, 0);
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
            if (k == j || products[k].subcategory != products[j].subcategory) continue;
            ++subcat_count[j];
            if (products[k].manufacturer != products[j].manufacturer) ++other_firm_count[j];
        }

    for (int t = 0; t < T; ++t)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < q; ++i) {
                const std::string& name = which[i];
                double v = 0.0;
                if (name == "tax") {
                    v = products[j].excise;
                } else if (name == "n_competing") {
                    v = subcat_count[j];
                } else if (name == "n_other_firms") {
                    v = other_firm_count[j];
                } else if (name == "hausman_retailer" || name == "hausman_brand") {
                    const bool by_brand = name == "hausman_brand";
                    double sum = 0.0;
                    int count = 0;
                    for (int k = 0; k < n; ++k) {
                        if (k == j) continue;
                        const bool same = by_brand ? products[k].brand == products[j].brand
                                                   : products[k].retailer == products[j].retailer;
                        if (!same) continue;
                        for (int s = 0; s < T; ++s) {
                            if (s == t) continue;
                            sum += prices(s, k);
                            ++count;
                        }
                    }
                    v = count > 0 ? sum / count : 0.0;
                } else {
                    throw std::invalid_argument("unknown instrument: " + name);
                }
                panel.instruments(t, j * q + i) = v;
            }
    return panel;
}

FirstStageResult first_stage_price_regression(const ProductPanel& panel,
                                              const UtilityDesignSpec& design_spec) {
    const int n = static_cast<int>(panel.products.size());
    const int T = panel.n_periods;
    const int q = static_cast<int>(panel.instrument_names.size());
    if (n == 0 || T == 0) throw std::invalid_argument("first stage: empty panel");

    // product fixed effects from the utility design (no demographic interactions here)
    UtilityDesignSpec fe_spec = design_spec;
    fe_spec.interaction = UtilityDesignSpec::Interaction::None;
    const UtilityDesign design(panel.products, fe_spec);
    const int n_fe = design.n_features();

    const int rows = T * n;
    const int cols = q + n_fe + 1;  // instruments, FE dummies, constant
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(rows, cols);
    Eigen::VectorXd y(rows);
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < n; ++j) {
            const int r = t * n + j;
            for (int i = 0; i < q; ++i) X(r, i) = panel.instrument(t, j, i);
            for (int f : design.features(j, 0)) X(r, q + f) = 1.0;
            X(r, q + n_fe) = 1.0;
            y(r) = panel.prices(t, j);
        }

    std::vector<std::string> names = panel.instrument_names;
    for (const auto& f : design.feature_names()) names.push_back("fe:" + f);
    names.push_back("const");

    // rank-revealing fit; drop collinear columns and warn
    FirstStageResult result;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    const int rank = static_cast<int>(qr.rank());
    std::vector<int> kept;
    if (rank < cols) {
        const auto& perm = qr.colsPermutation().indices();
        std::set<int> kept_set;
        for (int i = 0; i < rank; ++i) kept_set.insert(perm(i));
        for (int c = 0; c < cols; ++c) {
            if (kept_set.count(c)) kept.push_back(c);
            else result.dropped_columns.push_back(names[c]);
        }
        Eigen::MatrixXd Xk(rows, static_cast<int>(kept.size()));
        for (std::size_t i = 0; i < kept.size(); ++i) Xk.col(static_cast<int>(i)) = X.col(kept[i]);
        X = std::move(Xk);
    } else {
        for (int c = 0; c < cols; ++c) kept.push_back(c);
    }

    const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
    const Eigen::VectorXd fitted = X * beta;
    const Eigen::VectorXd resid = y - fitted;

    result.coef = Eigen::VectorXd::Zero(cols);
    result.coef_names = names;
    for (std::size_t i = 0; i < kept.size(); ++i) result.coef(kept[i]) = beta(static_cast<int>(i));
    result.residuals.resize(T, n);
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < n; ++j) result.residuals(t, j) = resid(t * n + j);

    const double rss_u = resid.squaredNorm();
    const double mean_y = y.mean();
    const double tss = (y.array() - mean_y).square().sum();
    result.r_squared = tss > 0.0 ? 1.0 - rss_u / tss : 0.0;

    // F-statistic on the excluded instruments: restricted fit without them
    int n_instr_kept = 0;
    {
        std::vector<int> restricted_cols;
        for (std::size_t i = 0; i < kept.size(); ++i) {
            if (kept[i] < q) ++n_instr_kept;
            else restricted_cols.push_back(static_cast<int>(i));
        }
        if (n_instr_kept == 0) {
            result.f_statistic = 0.0;
        } else {
            Eigen::MatrixXd Xr(rows, static_cast<int>(restricted_cols.size()));
            for (std::size_t i = 0; i < restricted_cols.size(); ++i)
                Xr.col(static_cast<int>(i)) = X.col(restricted_cols[i]);
            const Eigen::VectorXd beta_r = Xr.colPivHouseholderQr().solve(y);
            const double rss_r = (y - Xr * beta_r).squaredNorm();
            const double dof = std::max(1, rows - static_cast<int>(kept.size()));
            result.f_statistic =
                ((rss_r - rss_u) / n_instr_kept) / std::max(rss_u / dof, 1e-300);
        }
    }
    result.weak_instruments = result.f_statistic < 10.0;
    return result;
}

}  // namespace mupsim
