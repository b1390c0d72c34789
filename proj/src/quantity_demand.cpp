#include "mupsim/quantity_demand.hpp"

#include <cmath>
#include <stdexcept>

namespace mupsim {

Eigen::VectorXd QuaidsModel::intercepts(const Eigen::VectorXd& demographics) const {
    if (demographics.size() != demo_dim())
        throw std::invalid_argument("QuaidsModel: demographics dimension mismatch");
    return intercept_loadings * demographics;
}

double QuaidsModel::constraint_violation() const {
    double v = 0.0;
    // adding-up: intercept loadings columns sum to (1, 0, ..., 0)
    Eigen::VectorXd colsum = intercept_loadings.colwise().sum();
    v = std::max(v, std::abs(colsum(0) - 1.0));
    for (int m = 1; m < demo_dim(); ++m) v = std::max(v, std::abs(colsum(m)));
    v = std::max(v, std::abs(expenditure_coefs.sum()));
    v = std::max(v, std::abs(quadratic_coefs.sum()));
    // homogeneity (rows) and adding-up (columns) of the price matrix
    for (int a = 0; a < n_goods; ++a) {
        v = std::max(v, std::abs(price_coefs.row(a).sum()));
        v = std::max(v, std::abs(price_coefs.col(a).sum()));
    }
    // symmetry
    v = std::max(v, (price_coefs - price_coefs.transpose()).cwiseAbs().maxCoeff());
    return v;
}

void QuaidsModel::validate(double tol) const {
    if (constraint_violation() > tol)
        throw std::domain_error("QuaidsModel: adding-up/homogeneity/symmetry violated");
}

QuaidsAggregates price_aggregators(const QuaidsModel& model, const Eigen::VectorXd& log_prices,
                                   const Eigen::VectorXd& demographics) {
    if (log_prices.size() != model.n_goods)
        throw std::invalid_argument("price_aggregators: price dimension mismatch");
    const Eigen::VectorXd kappa = model.intercepts(demographics);
    QuaidsAggregates agg;
    agg.log_price_index = model.kappa0 + kappa.dot(log_prices) +
                          0.5 * log_prices.dot(model.price_coefs * log_prices);
    agg.expenditure_scale = std::exp(model.expenditure_coefs.dot(log_prices));
    return agg;
}

Eigen::VectorXd budget_shares(const QuaidsModel& model, const QuaidsState& state) {
    const QuaidsAggregates agg = price_aggregators(model, state.log_prices, state.demographics);
    const double z = state.log_expenditure - agg.log_price_index;
    return model.intercepts(state.demographics) + model.price_coefs * state.log_prices +
           model.expenditure_coefs * z +
           model.quadratic_coefs * (z * z / agg.expenditure_scale);
}

QuaidsElasticities elasticities_at_shares(const QuaidsModel& model, const QuaidsState& state,
                                          const Eigen::VectorXd& shares) {
    const int n = model.n_goods;
    const QuaidsAggregates agg = price_aggregators(model, state.log_prices, state.demographics);
    const double z = state.log_expenditure - agg.log_price_index;
    const Eigen::VectorXd kappa = model.intercepts(state.demographics);
    // gradient of the quadratic log price index
    const Eigen::VectorXd dG1 = kappa + model.price_coefs * state.log_prices;

    QuaidsElasticities out;
    out.shares = shares;
    out.budget = Eigen::VectorXd::Constant(n, std::nan(""));
    out.uncompensated = Eigen::MatrixXd::Constant(n, n, std::nan(""));
    out.compensated = Eigen::MatrixXd::Constant(n, n, std::nan(""));

    Eigen::VectorXd mu(n);
    for (int a = 0; a < n; ++a)
        mu(a) = model.expenditure_coefs(a) +
                2.0 * model.quadratic_coefs(a) * z / agg.expenditure_scale;

    for (int a = 0; a < n; ++a) {
        if (!(shares(a) > 0.0)) continue;  // elasticity undefined at a zero share
        out.budget(a) = mu(a) / shares(a) + 1.0;
        for (int k = 0; k < n; ++k) {
            const double mu_ak = model.price_coefs(a, k) - mu(a) * dG1(k) -
                                 model.quadratic_coefs(a) * model.expenditure_coefs(k) * z * z /
                                     agg.expenditure_scale;
            const double own = (a == k) ? 1.0 : 0.0;
            out.uncompensated(a, k) = mu_ak / shares(a) - own;
            out.compensated(a, k) = out.uncompensated(a, k) + out.budget(a) * shares(k);
        }
    }
    return out;
}

QuaidsElasticities elasticities(const QuaidsModel& model, const QuaidsState& state) {
    return elasticities_at_shares(model, state, budget_shares(model, state));
}

double indirect_utility(const QuaidsModel& model, const Eigen::VectorXd& log_prices,
                        double log_expenditure, const Eigen::VectorXd& demographics) {
    const QuaidsAggregates agg = price_aggregators(model, log_prices, demographics);
    const double x = (log_expenditure - agg.log_price_index) / agg.expenditure_scale;
    if (!(x > 0.0))
        throw std::domain_error("indirect_utility: expenditure below the price index level");
    const double c = model.quadratic_coefs.dot(log_prices);
    const double denom = 1.0 + c * x;
    if (!(denom > 0.0)) throw std::domain_error("indirect_utility: outside the regular region");
    return x / denom;
}

double cost_function(const QuaidsModel& model, const Eigen::VectorXd& log_prices,
                     double log_utility, const Eigen::VectorXd& demographics) {
    const QuaidsAggregates agg = price_aggregators(model, log_prices, demographics);
    const double c = model.quadratic_coefs.dot(log_prices);
    const double denom = 1.0 - c * log_utility;
    if (!(denom > 0.0)) throw std::domain_error("cost_function: outside the regular region");
    return agg.log_price_index + agg.expenditure_scale * log_utility / denom;
}

// ---------------------------------------------------------------------------
// Estimation

namespace {

// Linear map from free (constraint-reduced) parameters to the full parameter
// vector [vec(K) row-major | vec(Gamma) row-major | chi | lambda]. Adding-up,
// homogeneity and symmetry then hold exactly for any free-parameter value.
struct ConstraintMap {
    int n = 0;       // goods
    int m = 0;       // demographic dimension
    int n_free = 0;
    Eigen::MatrixXd S;   // full x free
    Eigen::VectorXd s0;  // offset (from the adding-up normalization)

    int full_size() const { return n * m + n * n + 2 * n; }
    int k_index(int a, int col) const { return a * m + col; }
    int g_index(int a, int k) const { return n * m + a * n + k; }
    int chi_index(int a) const { return n * m + n * n + a; }
    int lambda_index(int a) const { return n * m + n * n + n + a; }

    explicit ConstraintMap(int n_goods, int demo_dim) : n(n_goods), m(demo_dim) {
        const int nk = (n - 1) * m;
        const int ng = (n - 1) * n / 2;  // upper triangle of the leading (n-1) block
        n_free = nk + ng + (n - 1) + (n - 1);
        S = Eigen::MatrixXd::Zero(full_size(), n_free);
        s0 = Eigen::VectorXd::Zero(full_size());

        int f = 0;
        // intercept loadings: last equation = column target minus the others
        s0(k_index(n - 1, 0)) = 1.0;  // columns of K sum to (1, 0, ..., 0)
        for (int a = 0; a < n - 1; ++a)
            for (int c = 0; c < m; ++c, ++f) {
                S(k_index(a, c), f) = 1.0;
                S(k_index(n - 1, c), f) = -1.0;
            }
        // price matrix: free upper triangle of the leading block; the last row
        // and column follow from homogeneity and symmetry
        for (int a = 0; a < n - 1; ++a)
            for (int k = a; k < n - 1; ++k, ++f) {
                S(g_index(a, k), f) += 1.0;
                if (k != a) S(g_index(k, a), f) += 1.0;
                // row sums to zero
                S(g_index(a, n - 1), f) -= 1.0;
                S(g_index(n - 1, a), f) -= 1.0;
                if (k != a) {
                    S(g_index(k, n - 1), f) -= 1.0;
                    S(g_index(n - 1, k), f) -= 1.0;
                }
                // corner element keeps the last row summing to zero
                S(g_index(n - 1, n - 1), f) += (k == a) ? 1.0 : 2.0;
            }
        for (int a = 0; a < n - 1; ++a, ++f) {
            S(chi_index(a), f) = 1.0;
            S(chi_index(n - 1), f) = -1.0;
        }
        for (int a = 0; a < n - 1; ++a, ++f) {
            S(lambda_index(a), f) = 1.0;
            S(lambda_index(n - 1), f) = -1.0;
        }
    }

    QuaidsModel unpack(const Eigen::VectorXd& free, const QuaidsModel& base) const {
        const Eigen::VectorXd full = S * free + s0;
        QuaidsModel model = base;
        model.intercept_loadings = Eigen::MatrixXd(n, m);
        model.price_coefs = Eigen::MatrixXd(n, n);
        model.expenditure_coefs = Eigen::VectorXd(n);
        model.quadratic_coefs = Eigen::VectorXd(n);
        for (int a = 0; a < n; ++a) {
            for (int c = 0; c < m; ++c) model.intercept_loadings(a, c) = full(k_index(a, c));
            for (int k = 0; k < n; ++k) model.price_coefs(a, k) = full(g_index(a, k));
            model.expenditure_coefs(a) = full(chi_index(a));
            model.quadratic_coefs(a) = full(lambda_index(a));
        }
        return model;
    }
};

Eigen::VectorXd weighted_least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                       const Eigen::VectorXd& w, double ridge, bool* ridge_used,
                                       Eigen::MatrixXd* xtx_inv = nullptr) {
    const Eigen::MatrixXd Xw = w.cwiseSqrt().asDiagonal() * X;
    const Eigen::VectorXd yw = w.cwiseSqrt().asDiagonal() * y;
    Eigen::MatrixXd xtx = Xw.transpose() * Xw;
    const Eigen::VectorXd xty = Xw.transpose() * yw;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        if (ridge_used) *ridge_used = true;
        xtx.diagonal().array() += ridge * (1.0 + xtx.diagonal().mean());
        ldlt.compute(xtx);
        if (ldlt.info() != Eigen::Success)
            throw std::runtime_error("weighted least squares: singular system");
    }
    if (xtx_inv)
        *xtx_inv = ldlt.solve(Eigen::MatrixXd::Identity(xtx.rows(), xtx.cols()));
    return ldlt.solve(xty);
}

}  // namespace

ExpenditureStage expenditure_first_stage(const std::vector<PseudoPanelRow>& panel,
                                         int demo_columns) {
    if (panel.empty()) throw std::invalid_argument("expenditure_first_stage: empty panel");
    const int n_goods = static_cast<int>(panel.front().log_prices.size());
    const int demo_dim = demo_columns > 0
                             ? std::min<int>(demo_columns,
                                             static_cast<int>(panel.front().demographics.size()))
                             : static_cast<int>(panel.front().demographics.size());
    const int n_rows = static_cast<int>(panel.size());
    const int n_cols = demo_dim + n_goods + 1;
    Eigen::MatrixXd X(n_rows, n_cols);
    Eigen::VectorXd y(n_rows), w(n_rows);
    for (int i = 0; i < n_rows; ++i) {
        const auto& row = panel[i];
        X.row(i).head(demo_dim) = row.demographics.head(demo_dim).transpose();
        const Eigen::VectorXd& lnp =
            row.log_prices_market.size() == n_goods ? row.log_prices_market : row.log_prices;
        X.row(i).segment(demo_dim, n_goods) = lnp.transpose();
        X(i, demo_dim + n_goods) = row.log_income;
        y(i) = row.log_expenditure;
        w(i) = row.weight;
    }
    bool ridge_used = false;
    Eigen::MatrixXd xtx_inv;
    const Eigen::VectorXd coef =
        weighted_least_squares(X, y, w, 1e-9, &ridge_used, &xtx_inv);

    ExpenditureStage stage;
    stage.coef = coef;
    stage.price_elasticities = coef.segment(demo_dim, n_goods);
    stage.income_elasticity = coef(demo_dim + n_goods);
    stage.fitted_log_expenditure = X * coef;

    const Eigen::VectorXd resid = y - stage.fitted_log_expenditure;
    const double rss = (w.array() * resid.array().square()).sum();
    const double dof = std::max(1.0, static_cast<double>(n_rows - n_cols));
    const double sigma2 = rss / dof;
    stage.covariance = sigma2 * xtx_inv.block(demo_dim, demo_dim, n_goods + 1, n_goods + 1);
    const double wmean = (w.array() * y.array()).sum() / w.sum();
    const double tss = (w.array() * (y.array() - wmean).square()).sum();
    stage.r_squared = tss > 0.0 ? 1.0 - rss / tss : 0.0;
    return stage;
}

IrlsResult estimate_irls(const std::vector<PseudoPanelRow>& panel, const IrlsConfig& config) {
    if (panel.empty()) throw std::invalid_argument("estimate_irls: empty panel");
    const int n = static_cast<int>(panel.front().shares.size());
    const int m = static_cast<int>(panel.front().demographics.size());
    const int n_rows = static_cast<int>(panel.size());
    const ConstraintMap map(n, m);

    // expenditure endogeneity: replace lnY by its first-stage fit
    Eigen::VectorXd log_expenditure(n_rows);
    ExpenditureStage stage;
    if (config.instrument_expenditure) {
        stage = expenditure_first_stage(panel, config.expenditure_demo_columns);
        log_expenditure = stage.fitted_log_expenditure;
    } else {
        for (int i = 0; i < n_rows; ++i) log_expenditure(i) = panel[i].log_expenditure;
    }

    QuaidsModel model;
    model.n_goods = n;
    model.intercept_loadings = Eigen::MatrixXd::Zero(n, m);
    // start from average shares in the intercept column; other parameters zero
    {
        Eigen::VectorXd wbar = Eigen::VectorXd::Zero(n);
        double wsum = 0.0;
        for (const auto& row : panel) {
            wbar += row.weight * row.shares;
            wsum += row.weight;
        }
        model.intercept_loadings.col(0) = wbar / wsum;
    }
    model.price_coefs = Eigen::MatrixXd::Zero(n, n);
    model.expenditure_coefs = Eigen::VectorXd::Zero(n);
    model.quadratic_coefs = Eigen::VectorXd::Zero(n);

    IrlsResult result;
    result.model = model;
    Eigen::VectorXd free_prev = Eigen::VectorXd::Zero(map.n_free);

    const int eq_rows = n_rows * (n - 1);
    Eigen::MatrixXd Xfree(eq_rows, map.n_free);
    Eigen::VectorXd y(eq_rows), w(eq_rows);
    Eigen::MatrixXd xtx_inv;

    for (int iter = 0; iter < config.max_iterations; ++iter) {
        // z-regressors held at the previous iterate's aggregators
        for (int i = 0; i < n_rows; ++i) {
            const auto& row = panel[i];
            const QuaidsAggregates agg =
                price_aggregators(result.model, row.log_prices, row.demographics);
            const double z1 = log_expenditure(i) - agg.log_price_index;
            const double z2 = z1 * z1 / agg.expenditure_scale;
            // full design row for equation a: D in K_a, lnP in Gamma_a, z1, z2
            for (int a = 0; a < n - 1; ++a) {
                Eigen::RowVectorXd full = Eigen::RowVectorXd::Zero(map.full_size());
                for (int c = 0; c < m; ++c) full(map.k_index(a, c)) = row.demographics(c);
                for (int k = 0; k < n; ++k) full(map.g_index(a, k)) = row.log_prices(k);
                full(map.chi_index(a)) = z1;
                full(map.lambda_index(a)) = z2;
                const int r = i * (n - 1) + a;
                Xfree.row(r) = full * map.S;
                y(r) = row.shares(a) - full.dot(map.s0);
                w(r) = row.weight;
            }
        }
        bool ridge_used = false;
        const Eigen::VectorXd free =
            weighted_least_squares(Xfree, y, w, config.ridge, &ridge_used, &xtx_inv);
        result.ridge_used = result.ridge_used || ridge_used;
        result.model = map.unpack(free, result.model);
        result.iterations = iter + 1;
        const double delta = (free - free_prev).cwiseAbs().maxCoeff();
        free_prev = free;
        result.free_estimates = free;
        if (delta < config.tol) {
            result.converged = true;
            break;
        }
    }

    // residual sum of squares over all equations at the final parameters
    result.share_rss = 0.0;
    for (int i = 0; i < n_rows; ++i) {
        QuaidsState state{panel[i].log_prices, log_expenditure(i), panel[i].demographics};
        const Eigen::VectorXd resid = panel[i].shares - budget_shares(result.model, state);
        result.share_rss += panel[i].weight * resid.squaredNorm();
    }
    // free-parameter covariance for the parameter-draw bootstrap
    {
        const double dof = std::max(1.0, static_cast<double>(eq_rows - map.n_free));
        double rss_w = 0.0;
        const Eigen::VectorXd fit = Xfree * free_prev;
        for (int r = 0; r < eq_rows; ++r) rss_w += w(r) * (y(r) - fit(r)) * (y(r) - fit(r));
        result.free_covariance = (rss_w / dof) * xtx_inv;
        result.free_to_full = map.S;
        result.full_offset = map.s0;
    }
    if (config.instrument_expenditure) {
        result.model.budget_price_elasticity = stage.price_elasticities;
        result.model.budget_income_elasticity = stage.income_elasticity;
    } else {
        result.model.budget_price_elasticity = Eigen::VectorXd::Zero(n);
    }
    return result;
}

}  // namespace mupsim
