#include "mupsim/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "mupsim/rng.hpp"

namespace mupsim {

void GeneratorConfig::validate() const {
    if (n_households < 1) throw std::invalid_argument("generator: need at least one household");
    if (n_periods < 2) throw std::invalid_argument("generator: need at least two periods");
    for (const auto& cat : categories) {
        if (cat.subcategories.empty())
            throw std::invalid_argument("generator: category without subcategories: " +
                                        category_name(cat.category));
        for (const auto& sc : cat.subcategories)
            if (sc.n_products < 1)
                throw std::invalid_argument("generator: zero products in subcategory " + sc.name);
        if (!(cat.price_coef > 0.0))
            throw std::invalid_argument("generator: nonpositive price coefficient");
    }
    if (quaids_truth.demo_dim() != cluster_demographics_dim(n_periods))
        throw std::invalid_argument("generator: quantity-truth demographics dimension mismatch");
}

namespace {

struct CategoryTargets {
    double alpha;
    double sigma;
    std::array<double, kDemoDim> demo;  // shifts of the price sensitivity
    double inside_share;                // occasion-level probability of buying
};

// calibrated so that within-category shares, unit values and own-price
// elasticities sit near the published market statistics
GeneratorConfig build_default_config() {
    GeneratorConfig cfg;

    auto subcat = [](const std::string& name, int n, double degree, double dspread, double price,
                     double pspread, double excise, double share_target) {
        SubcategorySpec s;
        s.name = name;
        s.n_products = n;
        s.degree_median = degree;
        s.degree_spread = dspread;
        s.price_median = price;
        s.price_spread = pspread;
        s.excise = excise;
        s.utility = share_target;  // placeholder: converted to a level below
        s.alcohol_free = degree < kAlcoholFreeDegree;
        return s;
    };

    auto& cats = cfg.categories;
    {
        CategorySpec c;
        c.category = Category::Ciders;
        c.subcategories = {subcat("sweet", 3, 2.0, 0.15, 2.66, 0.18, 0.013, 0.365),
                           subcat("raw", 3, 4.5, 0.20, 2.78, 0.18, 0.013, 0.635)};
        c.price_coef = 1.18;
        c.price_sd = 0.0;
        c.unit_volume = 1.0;
        c.design.interaction = UtilityDesignSpec::Interaction::Age;
        c.participation = 0.35;
        cats[0] = c;
    }
    {
        CategorySpec c;
        c.category = Category::Beers;
        c.subcategories = {subcat("alcohol-free", 2, 0.7, 0.15, 1.37, 0.20, 0.03, 0.061),
                           subcat("bock-premium", 5, 4.6, 0.40, 2.64, 0.25, 0.32, 0.445),
                           subcat("special", 5, 7.0, 0.60, 3.21, 0.25, 0.47, 0.487)};
        c.price_coef = 1.98;
        c.price_sd = 0.41;
        c.unit_volume = 1.0;
        c.design.subcategory_fe = true;
        c.design.brand_alcohol_free_fe = true;
        c.participation = 0.8;
        cats[1] = c;
    }
    {
        CategorySpec c;
        c.category = Category::Aperitifs;
        c.subcategories = {subcat("cocktails", 2, 8.4, 1.5, 5.90, 0.25, 1.21, 0.180),
                           subcat("liquor-wines", 2, 18.3, 0.8, 9.58, 0.20, 0.58, 0.194),
                           subcat("natural-sweet", 2, 15.6, 0.4, 6.02, 0.20, 0.47, 0.148),
                           subcat("amer-vermouth", 2, 12.8, 1.8, 7.08, 0.25, 2.03, 0.262),
                           subcat("other-aperitifs", 2, 11.2, 1.8, 6.03, 0.28, 1.24, 0.216)};
        c.price_coef = 0.475;
        c.price_sd = 0.08;
        c.unit_volume = 0.9;
        c.design.interaction = UtilityDesignSpec::Interaction::Habit;
        c.design.alcohol_free_fe = false;
        c.participation = 0.6;
        cats[2] = c;
    }
    {
        CategorySpec c;
        c.category = Category::Spirits;
        c.subcategories = {subcat("rum", 2, 44.9, 0.7, 16.13, 0.18, 7.61, 0.114),
                           subcat("whisky", 3, 40.0, 0.3, 21.80, 0.22, 9.08, 0.406),
                           subcat("aniseed", 3, 40.0, 4.0, 12.74, 0.22, 7.38, 0.267),
                           subcat("liquors", 2, 21.2, 3.5, 14.89, 0.25, 4.25, 0.127),
                           subcat("other-spirits", 2, 36.0, 2.5, 17.70, 0.20, 8.11, 0.086)};
        c.price_coef = 0.175;
        c.price_sd = 0.045;
        c.unit_volume = 0.7;
        c.design.interaction = UtilityDesignSpec::Interaction::Income;
        c.design.brand_fe = false;
        c.participation = 0.7;
        cats[3] = c;
    }
    {
        CategorySpec c;
        c.category = Category::StillWines;
        c.subcategories = {subcat("table", 3, 12.0, 0.4, 2.52, 0.22, 0.04, 0.189),
                           subcat("pays", 4, 12.0, 0.3, 3.16, 0.20, 0.04, 0.232),
                           subcat("appellation", 5, 12.0, 0.2, 5.49, 0.28, 0.04, 0.579)};
        c.price_coef = 1.08;
        c.price_sd = 0.0;
        c.unit_volume = 0.75;
        c.design.interaction = UtilityDesignSpec::Interaction::Income;
        c.design.brand_fe = false;
        c.participation = 0.85;
        cats[4] = c;
    }
    {
        CategorySpec c;
        c.category = Category::SparklingWines;
        c.subcategories = {subcat("champagne", 3, 12.0, 0.1, 25.95, 0.20, 0.10, 0.279),
                           subcat("other-sparkling", 5, 11.4, 0.8, 5.99, 0.22, 0.09, 0.721)};
        c.price_coef = 0.204;
        c.price_sd = 0.01;
        c.unit_volume = 0.75;
        c.design.interaction = UtilityDesignSpec::Interaction::Age;
        c.champagne_price_shift = -0.10;
        c.participation = 0.6;
        cats[5] = c;
    }

    // demographic shifts of the price sensitivity (positive = more sensitive),
    // rescaled from the published coefficient ratios
    const double demo_table[kNumCategories][kDemoDim] = {
        {-0.017, -0.009, 0.037, -0.315, -0.374, 0.164, 0.380},
        {0.021, 0.104, 0.092, 0.164, 0.372, 0.137, 0.186},
        {-0.012, -0.016, -0.023, -0.021, -0.041, -0.038, -0.007},
        {-0.018, -0.009, -0.003, 0.003, 0.016, -0.011, -0.024},
        {0.045, 0.126, 0.189, -0.036, -0.091, -0.029, -0.008},
        {0.006, 0.009, 0.018, -0.044, -0.029, 0.005, 0.013},
    };
    const double inside_share[kNumCategories] = {0.35, 0.45, 0.40, 0.42, 0.50, 0.38};
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        auto& c = cfg.categories[a];
        c.price_demo = Eigen::VectorXd::Zero(kDemoDim);
        for (int i = 0; i < kDemoDim; ++i) c.price_demo(i) = demo_table[a][i];
        // convert subcategory share targets into utility levels:
        // u = ln(S * share / n_products) + alpha * price
        const double S = inside_share[a] / (1.0 - inside_share[a]);
        for (auto& sc : c.subcategories) {
            const double share_target = sc.utility;
            sc.utility = std::log(S * share_target / sc.n_products) + c.price_coef * sc.price_median;
        }
        c.cf_coef = 1.0;
    }

    cfg.budget_price_elasticity = Eigen::VectorXd::Zero(kNumCategories);
    cfg.budget_price_elasticity << 0.007, 0.098, 0.070, 0.071, 0.059, 0.122;
    // stronger than the published figure so the expenditure instrument has
    // bite at desk-scale sample sizes
    cfg.budget_income_elasticity = 0.6;
    return cfg;
}

// QUAIDS truth: match mean budget shares, budget elasticities and the
// uncompensated own/cross elasticity pattern at the average state, then
// project onto symmetry and homogeneity.
QuaidsModel build_quaids_truth(int n_periods, double y_star) {
    const int n = static_cast<int>(kNumCategories);
    Eigen::VectorXd w(n), budget_elas(n), lambda(n);
    w << 0.029, 0.235, 0.088, 0.353, 0.167, 0.127;
    w /= w.sum();
    budget_elas << 0.503, 1.210, 1.017, 1.434, 0.349, 0.385;
    lambda << 0.002, 0.004, -0.001, -0.006, 0.003, -0.002;

    Eigen::MatrixXd uncomp(n, n);
    uncomp << -0.504, 0.098, -0.002, 0.008, 0.024, -0.127,
              -0.008, -0.828, -0.072, -0.072, -0.121, -0.109,
              -0.014, -0.140, -0.531, -0.112, -0.096, -0.122,
              -0.024, -0.102, -0.068, -0.881, -0.178, -0.183,
               0.008,  0.035,  0.009,  0.014, -0.396, -0.019,
              -0.023, -0.007, -0.030, -0.133, -0.031, -0.161;

    Eigen::VectorXd mu = w.cwiseProduct(budget_elas - Eigen::VectorXd::Ones(n));
    mu -= w * mu.sum();  // Engel aggregation
    const Eigen::VectorXd chi = mu - 2.0 * y_star * lambda;
    const Eigen::VectorXd kappa =
        w - chi * y_star - lambda * y_star * y_star;  // shares hit w at the mean state

    Eigen::MatrixXd gamma(n, n);
    for (int a = 0; a < n; ++a)
        for (int k = 0; k < n; ++k) {
            const double mu_ak = w(a) * (uncomp(a, k) + (a == k ? 1.0 : 0.0));
            gamma(a, k) = mu_ak + mu(a) * kappa(k) + lambda(a) * chi(k) * y_star * y_star;
        }
    gamma = 0.5 * (gamma + gamma.transpose());
    const Eigen::VectorXd rmean = gamma.rowwise().mean();
    gamma = gamma - rmean * Eigen::RowVectorXd::Ones(n) -
            Eigen::VectorXd::Ones(n) * rmean.transpose() +
            Eigen::MatrixXd::Constant(n, n, rmean.mean());

    QuaidsModel truth;
    truth.n_goods = n;
    const int demo_dim = cluster_demographics_dim(n_periods);
    truth.intercept_loadings = Eigen::MatrixXd::Zero(n, demo_dim);
    truth.intercept_loadings.col(0) = kappa;
    // defining-cell loadings: habits tilt toward wines and spirits, income
    // toward appellation-style categories; columns sum to zero
    auto set_loading = [&](int col, std::initializer_list<double> values) {
        Eigen::VectorXd v(n);
        int i = 0;
        for (double x : values) v(i++) = x;
        truth.intercept_loadings.col(col) = v.array() - v.mean();
    };
    // layout: [1, htype1..3, age1..2, income1..3, habit1..2, region, city, periods...]
    set_loading(4, {0.002, -0.010, 0.002, 0.000, 0.008, -0.002});   // age 35-55
    set_loading(5, {0.004, -0.030, 0.004, -0.010, 0.030, 0.002});   // age >55
    set_loading(6, {0.000, 0.008, 0.000, 0.004, -0.010, -0.002});   // income upper-middle
    set_loading(7, {0.000, 0.015, 0.002, 0.008, -0.020, -0.005});   // income lower-middle
    set_loading(8, {0.000, 0.025, 0.002, 0.012, -0.030, -0.009});   // income lower
    set_loading(9, {-0.002, -0.015, 0.000, 0.005, 0.015, -0.003});  // habit (1,2]
    set_loading(10, {-0.004, -0.040, -0.002, 0.012, 0.040, -0.006});  // habit >2
    truth.price_coefs = gamma;
    truth.expenditure_coefs = chi;
    truth.quadratic_coefs = lambda;
    truth.budget_price_elasticity = Eigen::VectorXd::Zero(n);
    truth.budget_price_elasticity << 0.007, 0.098, 0.070, 0.071, 0.059, 0.122;
    truth.budget_income_elasticity = 0.05;
    return truth;
}

}  // namespace

GeneratorConfig default_generator_config() {
    GeneratorConfig cfg = build_default_config();
    // two observation years, as in the pseudo-panel the estimator consumes
    cfg.n_periods = 26;
    cfg.n_households = 3000;
    cfg.quaids_truth = build_quaids_truth(cfg.n_periods, std::log(cfg.base_period_budget));
    return cfg;
}

int SyntheticDataset::local_index(int global_product_id) const {
    const Product& p = products.at(global_product_id);
    const auto& ids = category_products[category_index(p.category)];
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == global_product_id) return static_cast<int>(i);
    throw std::invalid_argument("local_index: product not found");
}

SyntheticDataset generate_synthetic_market(const GeneratorConfig& config, std::uint64_t seed) {
    config.validate();
    SyntheticDataset data;
    data.config = config;
    data.seed = seed;
    data.quantity_truth = config.quaids_truth;

    const int T = config.n_periods;

    // ---- products and per-period prices ------------------------------------
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        const CategorySpec& spec = config.categories[a];
        Rng rng(substream_seed(seed, "products", a));
        std::vector<Product> local;
        int brand_counter = 0;
        for (const auto& sc : spec.subcategories) {
            for (int i = 0; i < sc.n_products; ++i) {
                Product p;
                p.category = spec.category;
                p.subcategory = sc.name;
                const int retailer = static_cast<int>(rng.uniform() * spec.n_retailers);
                p.retailer = "r" + std::to_string(retailer);
                const bool is_pl = rng.uniform() < spec.private_label_share;
                if (is_pl) {
                    p.manufacturer = p.retailer;
                    p.brand = "pl-" + p.retailer;
                    p.size_class = FirmSize::Large;
                } else {
                    const int m = static_cast<int>(rng.uniform() * spec.n_manufacturers);
                    p.manufacturer = category_name(spec.category).substr(0, 2) + "-m" +
                                     std::to_string(m);
                    p.brand = category_name(spec.category).substr(0, 2) + "-b" +
                              std::to_string(brand_counter++ % (2 * spec.n_manufacturers));
                    // the last independent manufacturer aggregates the small firms
                    p.size_class = (m == spec.n_manufacturers - 1) ? FirmSize::Small
                                                                   : FirmSize::Large;
                }
                p.degree = std::clamp(sc.degree_median + rng.normal(0.0, sc.degree_spread),
                                      sc.alcohol_free ? 0.1 : 0.5, 99.0);
                if (sc.alcohol_free) p.degree = std::min(p.degree, kAlcoholFreeDegree - 0.2);
                p.unit_volume = spec.unit_volume;
                p.price = sc.price_median * std::exp(rng.normal(0.0, sc.price_spread));
                // private labels sit below national brands
                if (is_pl) p.price *= 0.8;
                p.excise = sc.excise;
                local.push_back(p);
            }
        }
        // per-period prices: persistent brand cost shocks + endogenous shock
        const int J = static_cast<int>(local.size());
        Eigen::MatrixXd prices(T, J), shocks(T, J);
        std::map<std::string, double> brand_state;
        Rng price_rng(substream_seed(seed, "prices", a));
        std::vector<std::string> brands;
        for (const auto& p : local) brands.push_back(p.brand);
        for (int t = 0; t < T; ++t) {
            std::map<std::string, double> brand_shock;
            for (const auto& b : brands)
                if (!brand_shock.count(b)) {
                    double prev = brand_state.count(b) ? brand_state[b] : 0.0;
                    brand_shock[b] = config.cost_shock_persistence * prev +
                                     price_rng.normal(0.0, config.cost_shock_sd);
                    brand_state[b] = brand_shock[b];
                }
            for (int j = 0; j < J; ++j) {
                const double xi = price_rng.normal(0.0, config.endogenous_price_sd);
                shocks(t, j) = xi;
                prices(t, j) = local[j].price * std::exp(brand_shock[local[j].brand] + xi);
            }
        }
        // the stored baseline price is the period mean
        for (int j = 0; j < J; ++j) local[j].price = prices.col(j).mean();

        const int base_id = static_cast<int>(data.products.size());
        for (int j = 0; j < J; ++j) {
            local[j].id = base_id + j;
            data.category_products[a].push_back(local[j].id);
            data.products.push_back(local[j]);
        }
        data.period_prices[a] = prices;
        data.endogenous_shocks[a] = shocks;

        // taste truth for the category
        MixedLogitModel truth;
        truth.category = spec.category;
        truth.design = spec.design;
        truth.price_coef = spec.price_coef;
        truth.price_demo = spec.price_demo;
        truth.price_sd = spec.price_sd;
        truth.cf_coef = spec.cf_coef;
        truth.champagne_price_shift = spec.champagne_price_shift;
        const UtilityDesign design(local, spec.design);
        truth.beta = Eigen::VectorXd::Zero(design.n_features());
        // map subcategory/brand/retailer levels onto the design features
        Rng beta_rng(substream_seed(seed, "beta", a));
        std::map<std::string, double> brand_level, retailer_level;
        for (const auto& p : local) {
            if (!brand_level.count(p.brand))
                brand_level[p.brand] = beta_rng.normal(0.0, spec.brand_utility_spread);
            if (!retailer_level.count(p.retailer))
                retailer_level[p.retailer] = beta_rng.normal(0.0, spec.retailer_utility_spread);
        }
        std::map<std::string, double> subcat_level;
        for (const auto& sc : spec.subcategories) subcat_level[sc.name] = sc.utility;
        // assemble product-level utilities, then least-squares them onto the
        // design so the truth is exactly representable
        Eigen::VectorXd target(J);
        for (int j = 0; j < J; ++j)
            target(j) = subcat_level[local[j].subcategory] + brand_level[local[j].brand] +
                        retailer_level[local[j].retailer];
        Eigen::MatrixXd X = Eigen::MatrixXd::Zero(J, design.n_features());
        for (int j = 0; j < J; ++j)
            for (int f : design.features(j, 0)) X(j, f) = 1.0;
        truth.beta = (X.transpose() * X +
                      1e-9 * Eigen::MatrixXd::Identity(design.n_features(), design.n_features()))
                         .ldlt()
                         .solve(X.transpose() * target);
        data.quality_truth[a] = truth;
    }

    // ---- households ---------------------------------------------------------
    {
        Rng rng(substream_seed(seed, "households"));
        const double income_probs[kIncomeLevels] = {0.16, 0.30, 0.40, 0.14};
        const double age_probs[kAgeLevels] = {0.25, 0.40, 0.35};
        const double habit_probs[kHabitLevels] = {0.67, 0.16, 0.17};
        for (int i = 0; i < config.n_households; ++i) {
            Household h;
            h.id = i;
            h.weight = std::exp(rng.normal(0.0, 0.3));
            h.income = rng.categorical(income_probs, kIncomeLevels);
            h.income_eur = config.income_level_eur[h.income] *
                           std::exp(rng.normal(0.0, config.income_spread));
            h.age = rng.categorical(age_probs, kAgeLevels);
            h.habit = rng.categorical(habit_probs, kHabitLevels);
            // adults: single male / single female / couple
            const double u = rng.uniform();
            const int age_band = 1 + h.age;  // shopper age maps into bands 1..3
            auto edu = [&]() { return static_cast<int>(rng.uniform() * kEduLevels); };
            if (u < 0.18) {
                h.adult_males[adult_cell(age_band, edu())] = 1;
            } else if (u < 0.38) {
                h.adult_females[adult_cell(age_band, edu())] = 1;
            } else {
                h.adult_males[adult_cell(age_band, edu())] = 1;
                h.adult_females[adult_cell(age_band, edu())] = 1;
            }
            if (h.n_adults() == 2 && rng.uniform() < 0.35)
                h.children = 1 + static_cast<int>(rng.uniform() * 2);
            h.producing_region = rng.uniform() < 0.35;
            h.small_city = rng.uniform() < 0.42;
            data.households.push_back(h);
        }
    }
    data.clusters = build_clusters(data.households);
    std::vector<int> household_cluster(data.households.size(), -1);
    for (const Cluster& c : data.clusters)
        for (int idx : c.members) household_cluster[idx] = c.id;

    // taste draws and participation per household x category
    Eigen::MatrixXd zeta(data.households.size(), kNumCategories);
    std::vector<std::array<bool, kNumCategories>> participates(data.households.size());
    {
        Rng rng(substream_seed(seed, "tastes"));
        for (std::size_t i = 0; i < data.households.size(); ++i)
            for (std::size_t a = 0; a < kNumCategories; ++a) {
                zeta(i, a) = rng.normal();
                participates[i][a] = rng.uniform() < config.categories[a].participation;
            }
    }

    // ---- cluster-level budgets from the quantity truth ----------------------
    // per category: prior-mixture unit values and quality surplus by
    // demographic type and period
    std::array<UtilityDesign, kNumCategories> designs;
    std::array<std::vector<Product>, kNumCategories> locals;
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        for (int id : data.category_products[a]) locals[a].push_back(data.products[id]);
        designs[a] = UtilityDesign(locals[a], config.categories[a].design);
    }

    const DrawRule& rule = config.truth_draws;
    // cluster-average log incomes, and their population mean for centering
    const int n_clusters = static_cast<int>(data.clusters.size());
    std::vector<double> cluster_log_income(n_clusters, 0.0);
    double mean_log_income = 0.0, weight_total = 0.0;
    for (const Cluster& cluster : data.clusters) {
        double num = 0.0, den = 0.0;
        for (int idx : cluster.members) {
            num += data.households[idx].weight * std::log(data.households[idx].income_eur);
            den += data.households[idx].weight;
        }
        cluster_log_income[cluster.id] = num / den;
        mean_log_income += num;
        weight_total += den;
    }
    mean_log_income /= weight_total;

    // quality-adjusted indices per cluster, period and category from the truth
    std::vector<std::array<Eigen::VectorXd, kNumCategories>> cluster_index(n_clusters);
    for (const Cluster& cluster : data.clusters) {
        const Household& rep = data.households[cluster.members.front()];
        for (std::size_t a = 0; a < kNumCategories; ++a)
            cluster_index[cluster.id][a] = Eigen::VectorXd::Zero(T);
        for (int t = 0; t < T; ++t) {
            for (std::size_t a = 0; a < kNumCategories; ++a) {
                MarketSlice slice{&locals[a], data.period_prices[a].row(t).transpose(),
                                  data.endogenous_shocks[a].row(t).transpose()};
                const auto probs = choice_probabilities(data.quality_truth[a], designs[a], slice,
                                                        rep, rule);
                const double inside = 1.0 - probs.outside;
                Eigen::VectorXd pi = inside > 0.0 ? Eigen::VectorXd(probs.inside / inside)
                                                  : Eigen::VectorXd::Zero(slice.prices.size());
                const double unit_value = pi.dot(slice.prices);
                double b = 0.0;
                for (std::size_t r = 0; r < rule.size(); ++r)
                    b += rule.weights[r] * quality_surplus(data.quality_truth[a], designs[a],
                                                           slice, rep, rule.nodes[r], unit_value);
                cluster_index[cluster.id][a](t) = unit_value / (1.0 + b);
            }
        }
    }
    // market-wide indices: cluster-weighted means per period
    std::array<Eigen::VectorXd, kNumCategories> market_log_index;
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        market_log_index[a] = Eigen::VectorXd::Zero(T);
        for (int t = 0; t < T; ++t) {
            double num = 0.0, den = 0.0;
            for (const Cluster& cluster : data.clusters) {
                num += cluster.weight * cluster_index[cluster.id][a](t);
                den += cluster.weight;
            }
            market_log_index[a](t) = std::log(num / den);
        }
    }

    Rng budget_rng(substream_seed(seed, "budgets"));
    Rng choice_rng(substream_seed(seed, "choices"));

    // per cluster and period: shares and budget targets, then the members'
    // purchase occasions
    for (const Cluster& cluster : data.clusters) {
        for (int t = 0; t < T; ++t) {
            Eigen::VectorXd log_index(kNumCategories), market_index_t(kNumCategories);
            for (std::size_t a = 0; a < kNumCategories; ++a) {
                log_index(a) = std::log(cluster_index[cluster.id][a](t));
                market_index_t(a) = market_log_index[a](t);
            }
            const Eigen::VectorXd demo =
                cluster_demographics(cluster, data.households, t, T);
            const double log_income = cluster_log_income[cluster.id];
            double log_budget = std::log(config.base_period_budget) +
                                std::log(config.habit_budget_scale[cluster.habit]) +
                                config.budget_price_elasticity.dot(market_index_t) +
                                config.budget_income_elasticity * (log_income - mean_log_income) +
                                budget_rng.normal(0.0, config.budget_noise_sd);
            QuaidsState state{log_index, log_budget, demo};
            Eigen::VectorXd shares = budget_shares(config.quaids_truth, state);
            for (std::size_t a = 0; a < kNumCategories; ++a) {
                shares(a) += budget_rng.normal(0.0, config.share_noise_sd);
                shares(a) = std::max(shares(a), 0.005);
            }
            shares /= shares.sum();
            const double budget = std::exp(log_budget);

            // distribute category budgets over members and draw occasions
            for (std::size_t a = 0; a < kNumCategories; ++a) {
                double participating_weight = 0.0, total_weight = 0.0;
                for (int idx : cluster.members) {
                    total_weight += data.households[idx].weight;
                    if (participates[idx][a]) participating_weight += data.households[idx].weight;
                }
                if (participating_weight <= 0.0) continue;
                const double cluster_target = shares(a) * budget;  // weighted mean €
                const double scale = total_weight / participating_weight;
                for (int idx : cluster.members) {
                    if (!participates[idx][a]) continue;
                    const Household& h = data.households[idx];
                    const double target_spend = cluster_target * scale;
                    // expected spend per occasion at the household's own taste
                    MarketSlice slice{&locals[a], data.period_prices[a].row(t).transpose(),
                                      data.endogenous_shocks[a].row(t).transpose()};
                    Eigen::VectorXd d;
                    double d0;
                    conditional_probabilities(data.quality_truth[a], designs[a], slice, h,
                                              zeta(idx, a), d, d0);
                    double spend_per_occasion = 0.0;
                    for (int j = 0; j < d.size(); ++j)
                        spend_per_occasion +=
                            d(j) * slice.prices(j) * locals[a][j].unit_volume;
                    if (spend_per_occasion < 1e-9) continue;
                    const int occasions =
                        choice_rng.poisson(target_spend / spend_per_occasion);
                    if (occasions == 0) continue;
                    data.occasions.push_back(
                        {h.id, t, config.categories[a].category, occasions});
                    // draw the occasion outcomes
                    std::vector<double> probs(d.size() + 1);
                    probs[0] = d0;
                    for (int j = 0; j < d.size(); ++j) probs[j + 1] = d(j);
                    std::map<int, int> acts;
                    for (int o = 0; o < occasions; ++o) {
                        const int pick =
                            choice_rng.categorical(probs.data(), static_cast<int>(probs.size()));
                        if (pick > 0) ++acts[pick - 1];
                    }
                    for (const auto& [j, n_acts] : acts) {
                        PurchaseRecord rec;
                        rec.household = h.id;
                        rec.period = t;
                        rec.product = data.category_products[a][j];
                        rec.liters = n_acts * locals[a][j].unit_volume;
                        rec.expenditure = rec.liters * slice.prices(j);
                        data.purchases.push_back(rec);
                    }
                }
            }
        }
    }
    return data;
}

}  // namespace mupsim
