#include "mupsim/msl.hpp"

#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace mupsim {

BfgsResult minimize_bfgs(const Objective& objective, const Eigen::VectorXd& x0,
                         const BfgsConfig& config) {
    const int n = static_cast<int>(x0.size());
    BfgsResult result;
    result.x = x0;
    Eigen::VectorXd grad(n);
    result.value = objective(result.x, &grad);
    result.gradient = grad;
    Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
    bool scaled = false;

    for (int iter = 0; iter < config.max_iterations; ++iter) {
        result.iterations = iter;
        if (grad.cwiseAbs().maxCoeff() <= config.gradient_tol) {
            result.converged = true;
            return result;
        }
        Eigen::VectorXd direction = -hinv * grad;
        double slope = direction.dot(grad);
        if (!(slope < 0.0)) {  // not a descent direction, reset curvature
            hinv.setIdentity();
            scaled = false;
            direction = -grad;
            slope = -grad.squaredNorm();
        }
        // backtracking with quadratic interpolation
        double step = 1.0;
        double f_new = result.value;
        Eigen::VectorXd x_new = result.x;
        bool accepted = false;
        for (int ls = 0; ls < config.max_line_search; ++ls) {
            x_new = result.x + step * direction;
            f_new = objective(x_new, nullptr);
            if (std::isfinite(f_new) && f_new <= result.value + config.armijo * step * slope) {
                accepted = true;
                break;
            }
            double next = config.step_shrink * step;
            if (std::isfinite(f_new)) {
                const double denom = f_new - result.value - step * slope;
                if (denom > 0.0) {
                    const double interp = -0.5 * slope * step * step / denom;
                    next = std::clamp(interp, 0.1 * step, 0.5 * step);
                }
            }
            step = next;
        }
        if (!accepted) {
            // plain gradient fallback with a tiny step; stop if even that fails
            const double g = std::max(grad.cwiseAbs().maxCoeff(), 1e-12);
            x_new = result.x - (1e-8 / g) * grad;
            f_new = objective(x_new, nullptr);
            if (!std::isfinite(f_new) || f_new >= result.value) {
                result.converged = grad.cwiseAbs().maxCoeff() <= config.gradient_tol;
                return result;
            }
            hinv.setIdentity();
            scaled = false;
        }
        Eigen::VectorXd grad_new(n);
        objective(x_new, &grad_new);
        const Eigen::VectorXd s = x_new - result.x;
        const Eigen::VectorXd y = grad_new - grad;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (!scaled) {  // size the initial inverse Hessian to the curvature
                hinv = (sy / y.squaredNorm()) * Eigen::MatrixXd::Identity(n, n);
                scaled = true;
            }
            const Eigen::VectorXd hy = hinv * y;
            const double yhy = y.dot(hy);
            hinv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
                    (hy * s.transpose() + s * hy.transpose()) / sy;
        }
        result.x = x_new;
        result.value = f_new;
        grad = grad_new;
        result.gradient = grad;
    }
    result.converged = grad.cwiseAbs().maxCoeff() <= config.gradient_tol;
    return result;
}

namespace {

struct ParamLayout {
    int i_alpha = 0;
    int i_demo = -1;   // kDemoDim entries
    int i_sigma = -1;
    int i_beta = 0;
    int n_beta = 0;
    int i_cf = -1;
    int i_champagne = -1;
    int size = 0;

    ParamLayout(const MixedLogitModel& model, const MslConfig& config) {
        int at = 0;
        i_alpha = at++;
        if (config.estimate_price_demo) {
            i_demo = at;
            at += kDemoDim;
        }
        if (config.estimate_sigma) i_sigma = at++;
        i_beta = at;
        n_beta = static_cast<int>(model.beta.size());
        at += n_beta;
        if (config.estimate_cf) i_cf = at++;
        if (config.estimate_champagne_shift) i_champagne = at++;
        size = at;
    }
};

}  // namespace

Eigen::VectorXd msl_pack(const MixedLogitModel& model, const MslConfig& config) {
    const ParamLayout lay(model, config);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(lay.size);
    theta(lay.i_alpha) = model.price_coef;
    if (lay.i_demo >= 0) theta.segment(lay.i_demo, kDemoDim) = model.price_demo;
    if (lay.i_sigma >= 0) theta(lay.i_sigma) = model.price_sd;
    theta.segment(lay.i_beta, lay.n_beta) = model.beta;
    if (lay.i_cf >= 0) theta(lay.i_cf) = model.cf_coef;
    if (lay.i_champagne >= 0) theta(lay.i_champagne) = model.champagne_price_shift;
    return theta;
}

MixedLogitModel msl_unpack(const Eigen::VectorXd& theta, const MixedLogitModel& base,
                           const MslConfig& config) {
    const ParamLayout lay(base, config);
    MixedLogitModel model = base;
    model.price_coef = theta(lay.i_alpha);
    if (lay.i_demo >= 0) model.price_demo = theta.segment(lay.i_demo, kDemoDim);
    if (lay.i_sigma >= 0) model.price_sd = theta(lay.i_sigma);
    model.beta = theta.segment(lay.i_beta, lay.n_beta);
    if (lay.i_cf >= 0) model.cf_coef = theta(lay.i_cf);
    if (lay.i_champagne >= 0) model.champagne_price_shift = theta(lay.i_champagne);
    return model;
}

std::vector<std::string> msl_parameter_names(const MixedLogitModel& model,
                                             const UtilityDesign& design,
                                             const MslConfig& config) {
    std::vector<std::string> names;
    names.push_back("price");
    if (config.estimate_price_demo) {
        const char* demo[kDemoDim] = {"price:income1", "price:income2", "price:income3",
                                      "price:age1",    "price:age2",    "price:habit1",
                                      "price:habit2"};
        for (const char* d : demo) names.push_back(d);
    }
    if (config.estimate_sigma) names.push_back("price:sd");
    for (const auto& f : design.feature_names()) names.push_back(f);
    if (config.estimate_cf) names.push_back("control-function");
    if (config.estimate_champagne_shift) names.push_back("price:champagne");
    return names;
}

double simulated_loglik(const MixedLogitModel& model, const UtilityDesign& design,
                        const ProductPanel& panel, const Eigen::MatrixXd& cf_residuals,
                        const std::vector<Household>& households,
                        const std::vector<ChoiceObservation>& observations, const DrawRule& rule,
                        const MslConfig& config, Eigen::VectorXd* score, long* truncated,
                        Eigen::MatrixXd* opg) {
    const ParamLayout lay(model, config);
    const int n_products = static_cast<int>(panel.products.size());
    const std::size_t R = rule.size();

    // group observations by household (they share the taste draw)
    std::map<int, std::vector<int>> obs_by_household;
    for (std::size_t i = 0; i < observations.size(); ++i)
        obs_by_household[observations[i].household].push_back(static_cast<int>(i));

    std::vector<bool> champagne(n_products, false);
    for (int j = 0; j < n_products; ++j)
        champagne[j] = panel.products[j].subcategory == "champagne";

    double total_ll = 0.0;
    if (score) score->setZero(lay.size);
    if (opg) opg->setZero(lay.size, lay.size);

    Eigen::VectorXd v(n_products), d(n_products);
    Eigen::VectorXd draw_ll(R);
    // per-draw score pieces
    Eigen::MatrixXd draw_score;
    const bool want_score = score != nullptr || opg != nullptr;
    if (want_score) draw_score.resize(lay.size, R);

    for (const auto& [h_idx, obs_ids] : obs_by_household) {
        const Household& h = households[h_idx];
        const auto demo = demographics(h);
        const int level = design.interaction_level(h);
        const Eigen::VectorXd base = design.base_utilities(model.beta, level);
        double alpha_lin = model.price_coef;
        for (int i = 0; i < kDemoDim; ++i) alpha_lin += model.price_demo(i) * demo[i];

        if (want_score) draw_score.setZero();
        for (std::size_t r = 0; r < R; ++r) {
            const double z = rule.nodes[r];
            double alpha = alpha_lin + model.price_sd * z;
            const bool clamped = alpha <= 0.0;
            if (clamped) {
                alpha = model.alpha_floor;
                if (truncated) ++(*truncated);
            }
            double ll = 0.0;
            for (int oid : obs_ids) {
                const ChoiceObservation& obs = observations[oid];
                const int t = obs.period;
                // utilities at period t
                for (int j = 0; j < n_products; ++j) {
                    double aj = alpha;
                    if (model.champagne_price_shift != 0.0 && champagne[j])
                        aj = std::max(alpha + model.champagne_price_shift, model.alpha_floor);
                    v(j) = base(j) - aj * panel.prices(t, j) +
                           model.cf_coef * cf_residuals(t, j);
                }
                const double vmax = std::max(0.0, v.maxCoeff());
                d = (v.array() - vmax).exp();
                const double denom = std::exp(-vmax) + d.sum();
                d /= denom;
                const double d0 = std::exp(-vmax) / denom;

                int inside_acts = 0;
                for (const auto& [j, acts] : obs.purchases) {
                    ll += acts * std::log(std::max(d(j), 1e-300));
                    inside_acts += acts;
                }
                const int outside_acts = obs.occasions - inside_acts;
                if (outside_acts < 0)
                    throw std::invalid_argument("choice observation: occasions < purchase acts");
                ll += outside_acts * std::log(std::max(d0, 1e-300));

                if (want_score) {
                    // dV/dtheta aggregated: sum_j n_j dV_j - occasions * sum_k d_k dV_k
                    double sum_np = 0.0, sum_neta = 0.0, sum_np_champ = 0.0;
                    Eigen::VectorXd feat = Eigen::VectorXd::Zero(lay.n_beta);
                    for (const auto& [j, acts] : obs.purchases) {
                        sum_np += acts * panel.prices(t, j);
                        sum_neta += acts * cf_residuals(t, j);
                        if (champagne[j]) sum_np_champ += acts * panel.prices(t, j);
                        for (int f : design.features(j, level)) feat(f) += acts;
                    }
                    double sum_dp = 0.0, sum_deta = 0.0, sum_dp_champ = 0.0;
                    for (int k = 0; k < n_products; ++k) {
                        sum_dp += d(k) * panel.prices(t, k);
                        sum_deta += d(k) * cf_residuals(t, k);
                        if (champagne[k]) sum_dp_champ += d(k) * panel.prices(t, k);
                        for (int f : design.features(k, level)) feat(f) -= obs.occasions * d(k);
                    }
                    const double price_piece = -(sum_np - obs.occasions * sum_dp);
                    const double dalpha = clamped ? 0.0 : 1.0;
                    draw_score(lay.i_alpha, r) += price_piece * dalpha;
                    if (lay.i_demo >= 0)
                        for (int i = 0; i < kDemoDim; ++i)
                            draw_score(lay.i_demo + i, r) += price_piece * dalpha * demo[i];
                    if (lay.i_sigma >= 0) draw_score(lay.i_sigma, r) += price_piece * dalpha * z;
                    draw_score.col(r).segment(lay.i_beta, lay.n_beta) += feat;
                    if (lay.i_cf >= 0)
                        draw_score(lay.i_cf, r) += sum_neta - obs.occasions * sum_deta;
                    if (lay.i_champagne >= 0)
                        draw_score(lay.i_champagne, r) +=
                            -(sum_np_champ - obs.occasions * sum_dp_champ);
                }
            }
            draw_ll(r) = ll;
        }
        // log of the draw-weighted likelihood
        const double m = draw_ll.maxCoeff();
        double lsum = 0.0;
        for (std::size_t r = 0; r < R; ++r) lsum += rule.weights[r] * std::exp(draw_ll(r) - m);
        const double ll_h = m + std::log(std::max(lsum, 1e-300));
        total_ll += ll_h;
        if (want_score) {
            Eigen::VectorXd g_h = Eigen::VectorXd::Zero(lay.size);
            for (std::size_t r = 0; r < R; ++r) {
                const double post = rule.weights[r] * std::exp(draw_ll(r) - m) / lsum;
                g_h += post * draw_score.col(r);
            }
            if (score) *score += g_h;
            if (opg) *opg += g_h * g_h.transpose();
        }
    }
    return total_ll;
}

MslResult estimate_msl(const ProductPanel& panel, const Eigen::MatrixXd& cf_residuals,
                       const std::vector<Household>& households,
                       const std::vector<ChoiceObservation>& observations, const DrawRule& rule,
                       const MixedLogitModel& init, const MslConfig& config) {
    const UtilityDesign design(panel.products, init.design);
    MixedLogitModel base = init;
    if (base.beta.size() != design.n_features())
        base.beta = Eigen::VectorXd::Zero(design.n_features());

    // normalize per household so the gradient tolerance is scale-free
    std::set<int> distinct;
    for (const auto& obs : observations) distinct.insert(obs.household);
    const double scale = std::max<std::size_t>(distinct.size(), 1);

    long truncated = 0;
    const Objective objective = [&](const Eigen::VectorXd& theta, Eigen::VectorXd* grad) {
        const MixedLogitModel m = msl_unpack(theta, base, config);
        Eigen::VectorXd score;
        const double ll =
            simulated_loglik(m, design, panel, cf_residuals, households, observations, rule,
                             config, grad ? &score : nullptr, &truncated);
        if (grad) *grad = -score / scale;
        return -ll / scale;
    };

    const BfgsResult opt = minimize_bfgs(objective, msl_pack(base, config), config.optimizer);

    MslResult result;
    result.model = msl_unpack(opt.x, base, config);
    // the simulated likelihood is even in the taste spread; report it nonnegative
    result.model.price_sd = std::abs(result.model.price_sd);
    result.parameters = msl_pack(result.model, config);
    result.converged = opt.converged;
    result.loglik = -opt.value * scale;
    result.gradient_norm = opt.gradient.cwiseAbs().maxCoeff();
    result.iterations = opt.iterations;
    result.parameter_names = msl_parameter_names(result.model, design, config);
    result.truncated_draws = truncated;

    // outer-product-of-gradients covariance at the optimum
    Eigen::VectorXd score;
    Eigen::MatrixXd opg;
    simulated_loglik(result.model, design, panel, cf_residuals, households, observations, rule,
                     config, &score, nullptr, &opg);
    const int k = static_cast<int>(opg.rows());
    opg.diagonal().array() += 1e-10 * (1.0 + opg.diagonal().mean());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(opg);
    result.opg_covariance = ldlt.solve(Eigen::MatrixXd::Identity(k, k));
    result.std_errors = result.opg_covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    return result;
}

}  // namespace mupsim
