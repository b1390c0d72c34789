#include "mupsim/quality_demand.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace mupsim {

std::string interaction_name(UtilityDesignSpec::Interaction i) {
    switch (i) {
        case UtilityDesignSpec::Interaction::None: return "none";
        case UtilityDesignSpec::Interaction::Income: return "income";
        case UtilityDesignSpec::Interaction::Age: return "age";
        case UtilityDesignSpec::Interaction::Habit: return "habit";
    }
    return "none";
}

UtilityDesignSpec::Interaction interaction_from_name(const std::string& name) {
    if (name == "none") return UtilityDesignSpec::Interaction::None;
    if (name == "income") return UtilityDesignSpec::Interaction::Income;
    if (name == "age") return UtilityDesignSpec::Interaction::Age;
    if (name == "habit") return UtilityDesignSpec::Interaction::Habit;
    throw std::invalid_argument("unknown interaction: " + name);
}

namespace {
bool is_alcohol_free(const Product& p) { return p.degree < kAlcoholFreeDegree; }

int interaction_levels_for(UtilityDesignSpec::Interaction i) {
    switch (i) {
        case UtilityDesignSpec::Interaction::None: return 1;
        case UtilityDesignSpec::Interaction::Income: return kIncomeLevels;
        case UtilityDesignSpec::Interaction::Age: return kAgeLevels;
        case UtilityDesignSpec::Interaction::Habit: return kHabitLevels;
    }
    return 1;
}

template <typename Key>
std::vector<Key> distinct_sorted(const std::vector<Product>& products, Key (*get)(const Product&)) {
    std::vector<Key> keys;
    for (const auto& p : products) keys.push_back(get(p));
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    return keys;
}
}  // namespace

UtilityDesign::UtilityDesign(const std::vector<Product>& products, const UtilityDesignSpec& spec)
    : spec_(spec), n_products_(static_cast<int>(products.size())) {
    n_levels_ = interaction_levels_for(spec.interaction);

    auto retailers = distinct_sorted<std::string>(products, +[](const Product& p) { return p.retailer; });
    auto brands = distinct_sorted<std::string>(products, +[](const Product& p) { return p.brand; });
    auto subcats = distinct_sorted<std::string>(products, +[](const Product& p) { return p.subcategory; });

    std::map<std::string, int> feature_index;
    auto add_feature = [&](const std::string& name) {
        auto [it, inserted] = feature_index.emplace(name, static_cast<int>(names_.size()));
        if (inserted) names_.push_back(name);
        return it->second;
    };

    // register features in a fixed order
    std::map<std::string, int> retailer_idx, brand_idx, subcat_idx;
    if (spec.retailer_fe)
        for (const auto& r : retailers) retailer_idx[r] = add_feature("retailer:" + r);
    if (spec.brand_fe)
        for (std::size_t i = 1; i < brands.size(); ++i)  // drop first as reference
            brand_idx[brands[i]] = add_feature("brand:" + brands[i]);
    if (spec.subcategory_fe)
        for (std::size_t i = 1; i < subcats.size(); ++i)
            subcat_idx[subcats[i]] = add_feature("subcategory:" + subcats[i]);
    std::map<std::pair<std::string, int>, int> inter_idx;
    if (spec.interaction != UtilityDesignSpec::Interaction::None)
        for (const auto& sc : subcats)
            for (int lvl = 1; lvl < n_levels_; ++lvl)
                inter_idx[{sc, lvl}] = add_feature("subcategory:" + sc + ":" +
                                                   interaction_name(spec.interaction) +
                                                   ":" + std::to_string(lvl));
    int af_idx = -1;
    if (spec.alcohol_free_fe) af_idx = add_feature("alcohol-free");
    std::map<std::string, int> brand_af_idx;
    if (spec.brand_alcohol_free_fe)
        for (const auto& p : products)
            if (is_alcohol_free(p) && !brand_af_idx.count(p.brand))
                brand_af_idx[p.brand] = add_feature("brand:" + p.brand + ":alcohol-free");

    features_.resize(static_cast<std::size_t>(n_products_) * n_levels_);
    for (int j = 0; j < n_products_; ++j) {
        const Product& p = products[j];
        std::vector<int> fixed;
        if (spec.retailer_fe) fixed.push_back(retailer_idx.at(p.retailer));
        if (spec.brand_fe && brand_idx.count(p.brand)) fixed.push_back(brand_idx.at(p.brand));
        if (spec.subcategory_fe && subcat_idx.count(p.subcategory))
            fixed.push_back(subcat_idx.at(p.subcategory));
        if (af_idx >= 0 && is_alcohol_free(p)) fixed.push_back(af_idx);
        if (spec.brand_alcohol_free_fe && is_alcohol_free(p)) fixed.push_back(brand_af_idx.at(p.brand));
        for (int lvl = 0; lvl < n_levels_; ++lvl) {
            auto& entry = features_[static_cast<std::size_t>(j) * n_levels_ + lvl];
            entry = fixed;
            if (lvl > 0 && spec.interaction != UtilityDesignSpec::Interaction::None)
                entry.push_back(inter_idx.at({p.subcategory, lvl}));
        }
    }
}

int UtilityDesign::interaction_level(const Household& h) const {
    switch (spec_.interaction) {
        case UtilityDesignSpec::Interaction::None: return 0;
        case UtilityDesignSpec::Interaction::Income: return h.income;
        case UtilityDesignSpec::Interaction::Age: return h.age;
        case UtilityDesignSpec::Interaction::Habit: return h.habit;
    }
    return 0;
}

Eigen::VectorXd UtilityDesign::base_utilities(const Eigen::VectorXd& beta, int level) const {
    if (beta.size() != n_features())
        throw std::invalid_argument("base_utilities: beta size mismatch");
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n_products_);
    for (int j = 0; j < n_products_; ++j)
        for (int f : features(j, level)) u(j) += beta(f);
    return u;
}

double MixedLogitModel::price_sensitivity(const Household& h, double z, long* truncated) const {
    const auto d = mupsim::demographics(h);
    double a = price_coef;
    for (int i = 0; i < kDemoDim; ++i) a += price_demo(i) * d[i];
    a += price_sd * z;
    if (a <= 0.0) {
        if (truncated) ++(*truncated);
        a = alpha_floor;
    }
    return a;
}

MarketSlice MarketSlice::baseline(const std::vector<Product>& products) {
    MarketSlice s;
    s.products = &products;
    s.prices.resize(products.size());
    for (std::size_t j = 0; j < products.size(); ++j) s.prices(j) = products[j].price;
    s.cf_residual = Eigen::VectorXd::Zero(products.size());
    return s;
}

namespace {
bool is_champagne(const Product& p) { return p.subcategory == "champagne"; }

// Utilities for one household/draw; returns the clamped base price sensitivity.
// When `alphas` is given it receives the per-product sensitivities (champagne
// varieties carry an extra price-disutility shift).
double utilities(const MixedLogitModel& model, const UtilityDesign& design,
                 const MarketSlice& slice, const Household& h, double z, Eigen::VectorXd& v,
                 long* truncated, Eigen::VectorXd* alphas = nullptr) {
    const auto& products = *slice.products;
    const int level = design.interaction_level(h);
    const double alpha = model.price_sensitivity(h, z, truncated);
    if (alphas) alphas->resize(products.size());
    v = design.base_utilities(model.beta, level);
    for (std::size_t j = 0; j < products.size(); ++j) {
        double aj = alpha;
        if (model.champagne_price_shift != 0.0 && is_champagne(products[j]))
            aj = std::max(alpha + model.champagne_price_shift, model.alpha_floor);
        if (alphas) (*alphas)(j) = aj;
        v(j) += -aj * slice.prices(j) + model.cf_coef * slice.cf_residual(j);
    }
    return alpha;
}

void conditional_with_alphas(const MixedLogitModel& model, const UtilityDesign& design,
                             const MarketSlice& slice, const Household& h, double z,
                             Eigen::VectorXd& inside, double& outside, Eigen::VectorXd& alphas) {
    Eigen::VectorXd v;
    utilities(model, design, slice, h, z, v, nullptr, &alphas);
    const double vmax = std::max(0.0, v.maxCoeff());
    inside = (v.array() - vmax).exp();
    const double denom = std::exp(-vmax) + inside.sum();
    inside /= denom;
    outside = std::exp(-vmax) / denom;
}
}  // namespace

double conditional_probabilities(const MixedLogitModel& model, const UtilityDesign& design,
                                 const MarketSlice& slice, const Household& h, double z,
                                 Eigen::VectorXd& inside, double& outside, long* truncated) {
    if (slice.size() == 0) throw std::invalid_argument("conditional_probabilities: empty market");
    Eigen::VectorXd v;
    const double alpha = utilities(model, design, slice, h, z, v, truncated);
    // outside option has utility 0; stabilize against the max
    const double vmax = std::max(0.0, v.maxCoeff());
    if (!std::isfinite(vmax)) throw std::runtime_error("non-finite utility encountered");
    inside = (v.array() - vmax).exp();
    const double denom = std::exp(-vmax) + inside.sum();
    inside /= denom;
    outside = std::exp(-vmax) / denom;
    return alpha;
}

ChoiceProbabilities choice_probabilities(const MixedLogitModel& model, const UtilityDesign& design,
                                         const MarketSlice& slice, const Household& h,
                                         const DrawRule& rule) {
    ChoiceProbabilities out;
    out.inside = Eigen::VectorXd::Zero(slice.size());
    Eigen::VectorXd d;
    double d0;
    for (std::size_t r = 0; r < rule.size(); ++r) {
        conditional_probabilities(model, design, slice, h, rule.nodes[r], d, d0);
        out.inside += rule.weights[r] * d;
        out.outside += rule.weights[r] * d0;
    }
    return out;
}

Eigen::VectorXd market_shares(const MixedLogitModel& model, const UtilityDesign& design,
                              const MarketSlice& slice, const std::vector<Household>& households,
                              const DrawRule& rule) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(slice.size());
    double wsum = 0.0;
    Eigen::VectorXd d;
    double d0;
    for (const Household& h : households) {
        for (std::size_t r = 0; r < rule.size(); ++r) {
            conditional_probabilities(model, design, slice, h, rule.nodes[r], d, d0);
            s += h.weight * rule.weights[r] * d;
        }
        wsum += h.weight;
    }
    return s / wsum;
}

Eigen::MatrixXd share_jacobian(const MixedLogitModel& model, const UtilityDesign& design,
                               const MarketSlice& slice, const std::vector<Household>& households,
                               const DrawRule& rule) {
    const int n = static_cast<int>(slice.size());
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
    double wsum = 0.0;
    Eigen::VectorXd d, alphas;
    double d0;
    for (const Household& h : households) {
        for (std::size_t r = 0; r < rule.size(); ++r) {
            conditional_with_alphas(model, design, slice, h, rule.nodes[r], d, d0, alphas);
            const double w = h.weight * rule.weights[r];
            // d s_k / d p_j = alpha_j * d_j d_k for k != j, -alpha_j * d_j (1 - d_j) own
            const Eigen::VectorXd ad = alphas.cwiseProduct(d);
            jac.noalias() += w * (d * ad.transpose());
            jac.diagonal() -= w * ad;
        }
        wsum += h.weight;
    }
    return jac / wsum;
}

double population_reference_price(const MixedLogitModel& model, const UtilityDesign& design,
                                  const MarketSlice& slice,
                                  const std::vector<Household>& households, const DrawRule& rule) {
    Eigen::VectorXd mean_pi = Eigen::VectorXd::Zero(slice.size());
    double wsum = 0.0;
    Eigen::VectorXd d;
    double d0;
    for (const Household& h : households) {
        for (std::size_t r = 0; r < rule.size(); ++r) {
            conditional_probabilities(model, design, slice, h, rule.nodes[r], d, d0);
            const double inside = 1.0 - d0;
            if (inside > 0.0) mean_pi += (h.weight * rule.weights[r] / inside) * d;
        }
        wsum += h.weight;
    }
    mean_pi /= wsum;
    const double total = mean_pi.sum();
    if (total <= 0.0) throw std::runtime_error("population_reference_price: degenerate shares");
    return mean_pi.dot(slice.prices) / total;
}

double quality_surplus(const MixedLogitModel& model, const UtilityDesign& design,
                       const MarketSlice& slice, const Household& h, double z,
                       double reference_price) {
    if (slice.size() == 0) throw std::invalid_argument("quality_surplus: empty market");
    Eigen::VectorXd v;
    const double alpha = utilities(model, design, slice, h, z, v, nullptr);
    if (!(alpha > 0.0)) throw std::domain_error("quality_surplus: nonpositive price sensitivity");
    // conditional probabilities over inside goods
    const double vmax = v.maxCoeff();
    Eigen::VectorXd pi = (v.array() - vmax).exp();
    pi /= pi.sum();
    const double v_ref = pi.dot(v);
    // log sum of exp(V_j - V_ref), computed against the max for stability
    const double lse = std::log(((v.array() - vmax).exp()).sum()) + (vmax - v_ref);
    const double price_term = alpha * pi.dot(slice.prices - Eigen::VectorXd::Constant(
                                                                slice.prices.size(), reference_price));
    return (lse + price_term) / alpha;
}

Eigen::VectorXd posterior_draw_weights(const MixedLogitModel& model, const UtilityDesign& design,
                                       const MarketSlice& slice, const Household& h,
                                       const std::vector<std::pair<int, int>>& purchase_counts,
                                       const DrawRule& rule, bool* degenerate) {
    const std::size_t R = rule.size();
    Eigen::VectorXd loglik = Eigen::VectorXd::Zero(R);
    Eigen::VectorXd d;
    double d0;
    for (std::size_t r = 0; r < R; ++r) {
        conditional_probabilities(model, design, slice, h, rule.nodes[r], d, d0);
        const double inside = 1.0 - d0;
        double ll = 0.0;
        for (const auto& [j, count] : purchase_counts) {
            const double pi = inside > 0.0 ? d(j) / inside : 0.0;
            ll += count * std::log(std::max(pi, 1e-300));
        }
        loglik(r) = ll;
    }
    const double m = loglik.maxCoeff();
    Eigen::VectorXd w(R);
    for (std::size_t r = 0; r < R; ++r) w(r) = rule.weights[r] * std::exp(loglik(r) - m);
    const double total = w.sum();
    if (!(total > 0.0) || !std::isfinite(total)) {
        if (degenerate) *degenerate = true;
        for (std::size_t r = 0; r < R; ++r) w(r) = rule.weights[r];
        return w;
    }
    if (degenerate) *degenerate = false;
    return w / total;
}

double posterior_quality(const MixedLogitModel& model, const UtilityDesign& design,
                         const MarketSlice& slice, const Household& h,
                         const std::vector<std::pair<int, int>>& purchase_counts,
                         const DrawRule& rule, double reference_price, bool* degenerate) {
    const Eigen::VectorXd w =
        posterior_draw_weights(model, design, slice, h, purchase_counts, rule, degenerate);
    return weighted_quality_surplus(model, design, slice, h, rule, w, reference_price);
}

Eigen::VectorXd weighted_inside_probabilities(const MixedLogitModel& model,
                                              const UtilityDesign& design,
                                              const MarketSlice& slice, const Household& h,
                                              const DrawRule& rule,
                                              const Eigen::VectorXd& draw_weights) {
    Eigen::VectorXd pi = Eigen::VectorXd::Zero(slice.size());
    Eigen::VectorXd d;
    double d0;
    for (std::size_t r = 0; r < rule.size(); ++r) {
        if (draw_weights(r) == 0.0) continue;
        conditional_probabilities(model, design, slice, h, rule.nodes[r], d, d0);
        const double inside = 1.0 - d0;
        if (inside > 0.0) pi += (draw_weights(r) / inside) * d;
    }
    const double total = pi.sum();
    if (total > 0.0) pi /= total;
    return pi;
}

double weighted_quality_surplus(const MixedLogitModel& model, const UtilityDesign& design,
                                const MarketSlice& slice, const Household& h, const DrawRule& rule,
                                const Eigen::VectorXd& draw_weights, double reference_price) {
    double b = 0.0;
    for (std::size_t r = 0; r < rule.size(); ++r) {
        if (draw_weights(r) == 0.0) continue;
        b += draw_weights(r) *
             quality_surplus(model, design, slice, h, rule.nodes[r], reference_price);
    }
    return b;
}

QualityIndex make_quality_index(double expenditure, double quantity, double posterior_surplus) {
    if (!(expenditure > 0.0) || !(quantity > 0.0))
        throw std::domain_error("quality index: expenditure and quantity must be positive");
    if (!(1.0 + posterior_surplus > 0.0))
        throw std::domain_error("quality index: 1 + surplus must be positive");
    QualityIndex q;
    q.posterior = posterior_surplus;
    q.adjusted_quantity = quantity * (1.0 + posterior_surplus);
    q.adjusted_price = expenditure / q.adjusted_quantity;
    return q;
}

double adjusted_price_index(double expenditure, double quantity, double posterior_surplus) {
    return make_quality_index(expenditure, quantity, posterior_surplus).adjusted_price;
}

double laspeyres_price_index(const Eigen::VectorXd& shares, const Eigen::VectorXd& prices) {
    if (shares.size() != prices.size())
        throw std::invalid_argument("laspeyres_price_index: size mismatch");
    return shares.dot(prices);
}

}  // namespace mupsim
