#include "mupsim/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <memory>
#include <set>

#include "mupsim/csv.hpp"
#include "mupsim/first_stage.hpp"
#include "mupsim/individualize.hpp"
#include "mupsim/msl.hpp"
#include "mupsim/rng.hpp"
#include "pipeline_internal.hpp"

namespace mupsim {

namespace {

constexpr const char* kVersion = "0.1.0";

// demographic types (income x age x habit) with representatives and weights
struct TypePopulation {
    std::vector<Household> representatives;
    std::vector<double> weights;  // aligned
    std::vector<int> type_of_household;

    static TypePopulation build(const std::vector<Household>& households) {
        TypePopulation tp;
        std::map<int, int> index;
        tp.type_of_household.resize(households.size());
        for (std::size_t i = 0; i < households.size(); ++i) {
            const Household& h = households[i];
            const int key = (h.income * kAgeLevels + h.age) * kHabitLevels + h.habit;
            auto [it, inserted] = index.emplace(key, static_cast<int>(tp.representatives.size()));
            if (inserted) {
                Household rep = h;
                rep.weight = 0.0;
                tp.representatives.push_back(rep);
                tp.weights.push_back(0.0);
            }
            tp.weights[it->second] += h.weight;
            tp.type_of_household[i] = it->second;
        }
        for (std::size_t t = 0; t < tp.representatives.size(); ++t)
            tp.representatives[t].weight = tp.weights[t];
        return tp;
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// generate

void stage_generate(const PipelineConfig& config) {
    config.validate();
    GeneratorConfig gen = config.generator;
    gen.vat = config.vat;
    const SyntheticDataset data = generate_synthetic_market(gen, config.seed);

    const auto dir = paths::data(config);
    write_products_csv(dir / "products.csv", data.products);
    write_households_csv(dir / "households.csv", data.households);

    {
        CsvTable t({"household", "period", "product", "quantity_L", "expenditure_eur"});
        for (const auto& r : data.purchases)
            t.add_row({CsvTable::format(r.household), CsvTable::format(r.period),
                       CsvTable::format(r.product), CsvTable::format(r.liters),
                       CsvTable::format(r.expenditure)});
        t.write(dir / "purchases.csv");
    }
    {
        CsvTable t({"household", "period", "category", "occasions"});
        for (const auto& r : data.occasions)
            t.add_row({CsvTable::format(r.household), CsvTable::format(r.period),
                       category_name(r.category), CsvTable::format(r.count)});
        t.write(dir / "occasions.csv");
    }
    {
        CsvTable t({"cluster", "household_type", "age", "income", "habit", "weight",
                    "households"});
        for (const Cluster& c : data.clusters)
            t.add_row({CsvTable::format(c.id), CsvTable::format(c.household_type),
                       CsvTable::format(c.age), CsvTable::format(c.income),
                       CsvTable::format(c.habit), CsvTable::format(c.weight),
                       CsvTable::format(static_cast<int>(c.members.size()))});
        t.write(dir / "clusters.csv");
    }
    {
        Workspace ws;
        ws.category_products = data.category_products;
        ws.period_prices = data.period_prices;
        write_prices_csv(dir / "prices.csv", ws);
    }
    const Json config_json = to_json(config);
    write_json(config_json, config.out_dir / "config.json");
    write_json(Json{{"version", kVersion},
                    {"config_digest", json_digest(config_json)},
                    {"seed", config.seed},
                    {"households", static_cast<int>(data.households.size())},
                    {"products", static_cast<int>(data.products.size())},
                    {"purchases", static_cast<int>(data.purchases.size())},
                    {"clusters", static_cast<int>(data.clusters.size())}},
               config.out_dir / "manifest.json");
}

// ---------------------------------------------------------------------------
// base-data loading

namespace {

void load_base_data(Workspace& ws) {
    const PipelineConfig& config = ws.config;
    const auto dir = paths::data(config);
    require_artifact(dir / "products.csv", "generate");
    require_artifact(dir / "households.csv", "generate");
    require_artifact(dir / "purchases.csv", "generate");
    require_artifact(dir / "occasions.csv", "generate");
    require_artifact(dir / "prices.csv", "generate");

    ws.products = read_products_csv(dir / "products.csv");
    std::sort(ws.products.begin(), ws.products.end(),
              [](const Product& a, const Product& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < ws.products.size(); ++i)
        if (ws.products[i].id != static_cast<int>(i))
            throw ConfigError("products.csv: ids must be dense and start at 0");
    for (std::size_t a = 0; a < kNumCategories; ++a) ws.category_products[a].clear();
    for (const Product& p : ws.products)
        ws.category_products[category_index(p.category)].push_back(p.id);

    ws.households = read_households_csv(dir / "households.csv");
    std::sort(ws.households.begin(), ws.households.end(),
              [](const Household& a, const Household& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < ws.households.size(); ++i)
        if (ws.households[i].id != static_cast<int>(i))
            throw ConfigError("households.csv: ids must be dense and start at 0");

    ws.clusters = build_clusters(ws.households);
    ws.household_cluster.assign(ws.households.size(), -1);
    for (const Cluster& c : ws.clusters)
        for (int idx : c.members) ws.household_cluster[idx] = c.id;

    // period prices
    const CsvTable prices = CsvTable::read(dir / "prices.csv");
    prices.require_columns({"product", "period", "price"}, "prices.csv");
    int max_period = 0;
    for (std::size_t r = 0; r < prices.rows(); ++r)
        max_period = std::max(max_period, static_cast<int>(prices.integer(r, "period")));
    ws.n_periods = max_period + 1;
    std::vector<int> local_of(ws.products.size());
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        for (std::size_t i = 0; i < ws.category_products[a].size(); ++i)
            local_of[ws.category_products[a][i]] = static_cast<int>(i);
        ws.period_prices[a] =
            Eigen::MatrixXd::Zero(ws.n_periods, static_cast<int>(ws.category_products[a].size()));
    }
    for (std::size_t r = 0; r < prices.rows(); ++r) {
        const int id = static_cast<int>(prices.integer(r, "product"));
        const int a = category_index(ws.products.at(id).category);
        ws.period_prices[a](prices.integer(r, "period"), local_of[id]) = prices.number(r, "price");
    }

    // purchases and occasions
    const CsvTable pur = CsvTable::read(dir / "purchases.csv");
    pur.require_columns({"household", "period", "product", "quantity_L", "expenditure_eur"},
                        "purchases.csv");
    ws.purchases.clear();
    for (std::size_t r = 0; r < pur.rows(); ++r) {
        PurchaseRecord rec;
        rec.household = static_cast<int>(pur.integer(r, "household"));
        rec.period = static_cast<int>(pur.integer(r, "period"));
        rec.product = static_cast<int>(pur.integer(r, "product"));
        rec.liters = pur.number(r, "quantity_L");
        rec.expenditure = pur.number(r, "expenditure_eur");
        ws.purchases.push_back(rec);
    }
    const CsvTable occ = CsvTable::read(dir / "occasions.csv");
    occ.require_columns({"household", "period", "category", "occasions"}, "occasions.csv");
    ws.occasions.clear();
    for (std::size_t r = 0; r < occ.rows(); ++r) {
        OccasionRecord rec;
        rec.household = static_cast<int>(occ.integer(r, "household"));
        rec.period = static_cast<int>(occ.integer(r, "period"));
        rec.category = category_from_name(occ.cell(r, "category"));
        rec.count = static_cast<int>(occ.integer(r, "occasions"));
        ws.occasions.push_back(rec);
    }
}

void load_quality_models(Workspace& ws) {
    const auto dir = paths::models(ws.config);
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        const auto path = dir / cat_file("model_quality", static_cast<int>(a), ".json");
        require_artifact(path, "estimate-quality");
        const Json j = read_json(path);
        ws.quality[a] = mixed_logit_from_json(j);
        if (j.contains("covariance")) {
            const auto& cov = j.at("covariance");
            const int k = static_cast<int>(cov.size());
            ws.quality_covariance[a].resize(k, k);
            for (int r = 0; r < k; ++r)
                for (int c = 0; c < k; ++c)
                    ws.quality_covariance[a](r, c) = cov[r][c].get<double>();
        }
    }
    // control-function residuals
    const auto cf_path = dir / "cf_residuals.csv";
    require_artifact(cf_path, "estimate-quality");
    const CsvTable t = CsvTable::read(cf_path);
    t.require_columns({"product", "period", "residual"}, "cf_residuals.csv");
    std::vector<int> local_of(ws.products.size());
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        for (std::size_t i = 0; i < ws.category_products[a].size(); ++i)
            local_of[ws.category_products[a][i]] = static_cast<int>(i);
        ws.cf_residuals[a] = Eigen::MatrixXd::Zero(
            ws.n_periods, static_cast<int>(ws.category_products[a].size()));
    }
    for (std::size_t r = 0; r < t.rows(); ++r) {
        const int id = static_cast<int>(t.integer(r, "product"));
        const int a = category_index(ws.products.at(id).category);
        ws.cf_residuals[a](t.integer(r, "period"), local_of[id]) = t.number(r, "residual");
    }
}

void load_pseudo_panel(Workspace& ws) {
    const auto path = paths::models(ws.config) / "pseudo_panel.csv";
    require_artifact(path, "estimate-quality");
    const CsvTable t = CsvTable::read(path);
    t.require_columns({"cluster", "period", "category", "share", "lnP", "lnP_market", "lnY",
                       "laspeyres_lnP", "log_income", "weight"},
                      "pseudo_panel.csv");
    std::map<std::pair<int, int>, PseudoPanelRow> rows;
    const bool use_laspeyres = ws.config.laspeyres;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        const int cluster = static_cast<int>(t.integer(r, "cluster"));
        const int period = static_cast<int>(t.integer(r, "period"));
        auto& row = rows[{cluster, period}];
        if (row.shares.size() == 0) {
            row.cluster = cluster;
            row.period = period;
            row.shares = Eigen::VectorXd::Zero(kNumCategories);
            row.log_prices = Eigen::VectorXd::Zero(kNumCategories);
            row.log_prices_market = Eigen::VectorXd::Zero(kNumCategories);
            row.log_expenditure = t.number(r, "lnY");
            row.log_income = t.number(r, "log_income");
            row.weight = t.number(r, "weight");
            row.demographics = cluster_demographics(ws.clusters.at(cluster), ws.households,
                                                    period, ws.n_periods);
        }
        const int a = category_index(category_from_name(t.cell(r, "category")));
        row.shares(a) = t.number(r, "share");
        row.log_prices(a) = use_laspeyres ? t.number(r, "laspeyres_lnP") : t.number(r, "lnP");
        row.log_prices_market(a) = t.number(r, "lnP_market");
    }
    ws.pseudo_panel.clear();
    for (auto& [key, row] : rows) ws.pseudo_panel.push_back(std::move(row));
}

void load_quantity_model(Workspace& ws) {
    const auto path = paths::models(ws.config) / "model_quantity.json";
    require_artifact(path, "estimate-quantity");
    const Json j = read_json(path);
    ws.quantity = quaids_from_json(j.at("model"));
    const auto& est = j.at("estimation");
    auto mat = [](const Json& m) {
        const int rows = static_cast<int>(m.size());
        const int cols = rows ? static_cast<int>(m[0].size()) : 0;
        Eigen::MatrixXd out(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) out(r, c) = m[r][c].get<double>();
        return out;
    };
    auto vec = [](const Json& v) {
        Eigen::VectorXd out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<int>(i)) = v[i].get<double>();
        return out;
    };
    ws.quantity_free_cov = mat(est.at("free_covariance"));
    ws.quantity_free_to_full = mat(est.at("free_to_full"));
    ws.quantity_full_offset = vec(est.at("full_offset"));
    ws.quantity_free_estimates = vec(est.at("free_estimates"));
}

void load_supply(Workspace& ws) {
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        const auto path = paths::supply(ws.config) / cat_file("costs", static_cast<int>(a), ".csv");
        require_artifact(path, "calibrate-supply");
        const CsvTable t = CsvTable::read(path);
        t.require_columns({"product", "marginal_cost", "margin", "margin_pct"}, path.string());
        ws.costs[a] = Eigen::VectorXd::Zero(static_cast<int>(ws.category_products[a].size()));
        ws.margins[a] = Eigen::VectorXd::Zero(static_cast<int>(ws.category_products[a].size()));
        std::vector<int> local_of(ws.products.size());
        for (std::size_t i = 0; i < ws.category_products[a].size(); ++i)
            local_of[ws.category_products[a][i]] = static_cast<int>(i);
        for (std::size_t r = 0; r < t.rows(); ++r) {
            const int id = static_cast<int>(t.integer(r, "product"));
            ws.costs[a](local_of[id]) = t.number(r, "marginal_cost");
            ws.margins[a](local_of[id]) = t.number(r, "margin");
        }
    }
}

void load_scenarios(Workspace& ws) {
    const auto path = ws.config.out_dir / "scenarios.json";
    require_artifact(path, "calibrate-tax");
    const Json j = read_json(path);
    ws.calibrated_scenarios.clear();
    for (const auto& item : j.at("scenarios")) {
        Scenario s;
        s.name = item.at("name").get<std::string>();
        s.tax_kind = tax_kind_from_name(item.at("tax_kind").get<std::string>());
        s.mup_per_drink = item.at("mup_per_drink").get<double>();
        s.tax_rate = item.at("tax_rate").get<double>();
        const std::string target = item.at("target").get<std::string>();
        s.target = target == "fiscal" ? CalibrationTarget::Fiscal
                   : target == "public-finance" ? CalibrationTarget::PublicFinance
                                                : CalibrationTarget::None;
        ws.calibrated_scenarios.push_back(s);
    }
}

}  // namespace

Workspace load_workspace(const PipelineConfig& config, bool need_models, bool need_supply,
                         bool need_scenarios) {
    Workspace ws;
    ws.config = config;
    load_base_data(ws);
    if (need_models) {
        load_quality_models(ws);
        load_pseudo_panel(ws);
        load_quantity_model(ws);
    }
    if (need_supply) load_supply(ws);
    if (need_scenarios) load_scenarios(ws);
    return ws;
}

// ---------------------------------------------------------------------------
// estimate-quality

namespace {

struct CategoryChoiceData {
    std::vector<ChoiceObservation> observations;
};

CategoryChoiceData build_choice_data(const Workspace& ws, int a) {
    CategoryChoiceData out;
    std::vector<int> local_of(ws.products.size(), -1);
    for (std::size_t i = 0; i < ws.category_products[a].size(); ++i)
        local_of[ws.category_products[a][i]] = static_cast<int>(i);

    std::map<std::pair<int, int>, std::map<int, int>> acts;  // (household, period) -> product acts
    for (const auto& rec : ws.purchases) {
        const int lj = local_of[rec.product];
        if (lj < 0) continue;
        const double unit = ws.products[rec.product].unit_volume;
        const int n = std::max(1, static_cast<int>(std::lround(rec.liters / unit)));
        acts[{rec.household, rec.period}][lj] += n;
    }
    std::map<std::pair<int, int>, int> occasions;
    for (const auto& rec : ws.occasions)
        if (category_index(rec.category) == a) occasions[{rec.household, rec.period}] = rec.count;

    std::set<std::pair<int, int>> keys;
    for (const auto& [k, v] : acts) keys.insert(k);
    for (const auto& [k, v] : occasions) keys.insert(k);
    for (const auto& key : keys) {
        ChoiceObservation obs;
        obs.household = key.first;
        obs.period = key.second;
        int inside = 0;
        if (auto it = acts.find(key); it != acts.end())
            for (const auto& [j, n] : it->second) {
                obs.purchases.push_back({j, n});
                inside += n;
            }
        obs.occasions = std::max(inside, occasions.count(key) ? occasions.at(key) : inside);
        out.observations.push_back(std::move(obs));
    }
    return out;
}

// warm start for the fixed-effect utilities from observed act shares
Eigen::VectorXd warm_start_beta(const UtilityDesign& design, const std::vector<Product>& products,
                                const std::vector<ChoiceObservation>& observations,
                                double alpha0, const Eigen::VectorXd& mean_prices) {
    const int n = static_cast<int>(products.size());
    Eigen::VectorXd acts = Eigen::VectorXd::Constant(n, 0.5);  // smoothing
    double occasions = n * 0.5;
    for (const auto& obs : observations) {
        for (const auto& [j, cnt] : obs.purchases) acts(j) += cnt;
        occasions += obs.occasions;
    }
    const double outside = std::max(occasions - acts.sum(), 1.0);
    Eigen::VectorXd target(n);
    for (int j = 0; j < n; ++j)
        target(j) = std::log(acts(j) / outside) + alpha0 * mean_prices(j);
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, design.n_features());
    for (int j = 0; j < n; ++j)
        for (int f : design.features(j, 0)) X(j, f) = 1.0;
    Eigen::MatrixXd xtx = X.transpose() * X;
    xtx.diagonal().array() += 1e-8;
    return xtx.ldlt().solve(X.transpose() * target);
}

}  // namespace

void stage_estimate_quality(const PipelineConfig& config) {
    Workspace ws;
    ws.config = config;
    load_base_data(ws);
    const auto dir = paths::models(config);
    const DrawRule est_rule = config.estimation_draws();
    const DrawRule post_rule = config.posterior_draws();

    CsvTable cf_table({"product", "period", "residual"});
    std::array<Eigen::MatrixXd, kNumCategories> cf_residuals;

    for (std::size_t a = 0; a < kNumCategories; ++a) {
        const auto local = ws.category_product_list(static_cast<int>(a));
        const UtilityDesignSpec spec = config.generator.categories[a].design;
        const UtilityDesign design(local, spec);

        const ProductPanel panel = with_standard_instruments(
            local, ws.period_prices[a],
            {"tax", "n_competing", "n_other_firms", "hausman_retailer", "hausman_brand"});
        const FirstStageResult fs = first_stage_price_regression(panel, spec);
        cf_residuals[a] = fs.residuals;
        for (int j = 0; j < fs.residuals.cols(); ++j)
            for (int t = 0; t < fs.residuals.rows(); ++t)
                cf_table.add_row({CsvTable::format(ws.category_products[a][j]),
                                  CsvTable::format(t), CsvTable::format(fs.residuals(t, j))});
        {
            Json coefs = Json::object();
            for (std::size_t i = 0; i < fs.coef_names.size(); ++i)
                coefs[fs.coef_names[i]] = fs.coef(static_cast<int>(i));
            write_json(Json{{"category", category_name(static_cast<Category>(a))},
                            {"coefficients", coefs},
                            {"f_statistic", fs.f_statistic},
                            {"weak_instruments", fs.weak_instruments},
                            {"dropped_columns", fs.dropped_columns},
                            {"r_squared", fs.r_squared}},
                       dir / cat_file("first_stage", static_cast<int>(a), ".json"));
        }

        const CategoryChoiceData choice = build_choice_data(ws, static_cast<int>(a));
        MixedLogitModel init;
        init.category = static_cast<Category>(a);
        init.design = spec;
        const Eigen::VectorXd mean_prices = ws.baseline_prices(static_cast<int>(a));
        init.price_coef = 2.0 / std::max(mean_prices.mean(), 0.1);
        init.price_demo = Eigen::VectorXd::Zero(kDemoDim);
        init.price_sd = 0.1 * init.price_coef;
        init.beta = warm_start_beta(design, local, choice.observations, init.price_coef,
                                    mean_prices);
        init.cf_coef = 0.0;
        MslConfig msl_config;
        msl_config.estimate_champagne_shift =
            static_cast<Category>(a) == Category::SparklingWines;
        const MslResult fit = estimate_msl(panel, cf_residuals[a], ws.households,
                                           choice.observations, est_rule, init, msl_config);

        Json j = to_json(fit.model, design.feature_names(), est_rule);
        j["estimation"] = Json{{"converged", fit.converged},
                               {"loglik", fit.loglik},
                               {"gradient_norm", fit.gradient_norm},
                               {"iterations", fit.iterations},
                               {"truncated_draws", fit.truncated_draws},
                               {"parameter_names", fit.parameter_names}};
        Json cov = Json::array();
        for (int r = 0; r < fit.opg_covariance.rows(); ++r) {
            Json row = Json::array();
            for (int c = 0; c < fit.opg_covariance.cols(); ++c)
                row.push_back(fit.opg_covariance(r, c));
            cov.push_back(row);
        }
        j["covariance"] = cov;
        Json params = Json::array();
        for (int i = 0; i < fit.parameters.size(); ++i) params.push_back(fit.parameters(i));
        j["parameters"] = params;
        write_json(j, dir / cat_file("model_quality", static_cast<int>(a), ".json"));
        ws.quality[a] = fit.model;
    }
    cf_table.write(dir / "cf_residuals.csv");
    ws.cf_residuals = cf_residuals;

    // ---- quality indices and the pseudo panel -------------------------------
    const TypePopulation types = TypePopulation::build(ws.households);
    std::vector<int> local_of(ws.products.size(), -1);

    struct HouseholdPeriodCell {
        double expenditure = 0.0;
        double liters = 0.0;
        std::vector<std::pair<int, int>> counts;
    };

    CsvTable panel_table([] {
        std::vector<std::string> cols = {"cluster",  "period",       "category",
                                         "share",    "lnP",          "lnP_market",
                                         "lnY",      "expenditure",  "quantity_L",
                                         "quality_index", "laspeyres_lnP", "log_income",
                                         "weight"};
        return cols;
    }());

    // per cluster-period accumulators across categories
    const int T = ws.n_periods;
    const int C = static_cast<int>(ws.clusters.size());
    std::vector<Eigen::MatrixXd> cluster_expenditure(kNumCategories,
                                                     Eigen::MatrixXd::Zero(C, T));
    std::vector<Eigen::MatrixXd> cluster_adjusted(kNumCategories, Eigen::MatrixXd::Zero(C, T));
    std::vector<Eigen::MatrixXd> cluster_quantity(kNumCategories, Eigen::MatrixXd::Zero(C, T));
    std::vector<Eigen::MatrixXd> cluster_laspeyres(kNumCategories, Eigen::MatrixXd::Zero(C, T));

    for (std::size_t a = 0; a < kNumCategories; ++a) {
        const auto local = ws.category_product_list(static_cast<int>(a));
        const UtilityDesign design(local, ws.quality[a].design);
        const int J = static_cast<int>(local.size());
        for (std::size_t i = 0; i < ws.category_products[a].size(); ++i)
            local_of[ws.category_products[a][i]] = static_cast<int>(i);

        // household-period cells
        std::map<std::pair<int, int>, HouseholdPeriodCell> cells;
        for (const auto& rec : ws.purchases) {
            if (category_index(ws.products[rec.product].category) != static_cast<int>(a)) continue;
            auto& cell = cells[{rec.household, rec.period}];
            cell.expenditure += rec.expenditure;
            cell.liters += rec.liters;
            const int lj = local_of[rec.product];
            const int n = std::max(
                1, static_cast<int>(std::lround(rec.liters / ws.products[rec.product].unit_volume)));
            bool merged = false;
            for (auto& [j, cnt] : cell.counts)
                if (j == lj) {
                    cnt += n;
                    merged = true;
                    break;
                }
            if (!merged) cell.counts.push_back({lj, n});
        }

        // per period: type caches of conditional probabilities and surpluses
        for (int t = 0; t < T; ++t) {
            MarketSlice slice{&local, ws.period_prices[a].row(t).transpose(),
                              cf_residuals[a].row(t).transpose()};
            // reference price: population-expected conditional probabilities
            const int n_types = static_cast<int>(types.representatives.size());
            std::vector<Eigen::MatrixXd> pi(n_types);
            std::vector<Eigen::VectorXd> b(n_types);
            Eigen::VectorXd mean_pi = Eigen::VectorXd::Zero(J);
            double wsum = 0.0;
            Eigen::VectorXd d;
            double d0;
            for (int ty = 0; ty < n_types; ++ty) {
                const Household& rep = types.representatives[ty];
                pi[ty].resize(J, static_cast<int>(post_rule.size()));
                for (std::size_t r = 0; r < post_rule.size(); ++r) {
                    conditional_probabilities(ws.quality[a], design, slice, rep,
                                              post_rule.nodes[r], d, d0);
                    const double inside = 1.0 - d0;
                    pi[ty].col(static_cast<int>(r)) =
                        inside > 0.0 ? Eigen::VectorXd(d / inside) : Eigen::VectorXd::Zero(J);
                    mean_pi += types.weights[ty] * post_rule.weights[r] *
                               pi[ty].col(static_cast<int>(r));
                }
                wsum += types.weights[ty];
            }
            mean_pi /= wsum;
            const double ref_price =
                mean_pi.sum() > 0 ? mean_pi.dot(slice.prices) / mean_pi.sum() : slice.prices.mean();
            for (int ty = 0; ty < n_types; ++ty) {
                b[ty].resize(static_cast<int>(post_rule.size()));
                for (std::size_t r = 0; r < post_rule.size(); ++r)
                    b[ty](static_cast<int>(r)) =
                        quality_surplus(ws.quality[a], design, slice, types.representatives[ty],
                                        post_rule.nodes[r], ref_price);
            }

            // posterior per household with purchases in (a, t)
            for (const auto& [key, cell] : cells) {
                if (key.second != t || !(cell.liters > 0.0)) continue;
                const int h_idx = key.first;
                const int ty = types.type_of_household[h_idx];
                Eigen::VectorXd logl =
                    Eigen::VectorXd::Zero(static_cast<int>(post_rule.size()));
                for (std::size_t r = 0; r < post_rule.size(); ++r)
                    for (const auto& [j, cnt] : cell.counts)
                        logl(static_cast<int>(r)) +=
                            cnt * std::log(std::max(pi[ty](j, static_cast<int>(r)), 1e-300));
                const double m = logl.maxCoeff();
                Eigen::VectorXd w(static_cast<int>(post_rule.size()));
                for (std::size_t r = 0; r < post_rule.size(); ++r)
                    w(static_cast<int>(r)) = post_rule.weights[r] * std::exp(logl(r) - m);
                const double total = w.sum();
                double posterior_b;
                if (total > 0.0 && std::isfinite(total)) {
                    posterior_b = w.dot(b[ty]) / total;
                } else {
                    posterior_b = 0.0;
                    for (std::size_t r = 0; r < post_rule.size(); ++r)
                        posterior_b += post_rule.weights[r] * b[ty](static_cast<int>(r));
                }
                const int c = ws.household_cluster[h_idx];
                const double hw = ws.households[h_idx].weight;
                cluster_expenditure[a](c, t) += hw * cell.expenditure;
                cluster_quantity[a](c, t) += hw * cell.liters;
                cluster_adjusted[a](c, t) += hw * cell.liters * (1.0 + posterior_b);
            }
        }

        // cluster-average product mix for the fixed-share price index
        Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(C, J);
        for (const auto& rec : ws.purchases) {
            if (category_index(ws.products[rec.product].category) != static_cast<int>(a)) continue;
            mix(ws.household_cluster[rec.household], local_of[rec.product]) +=
                ws.households[rec.household].weight * rec.liters;
        }
        for (int c = 0; c < C; ++c) {
            const double total = mix.row(c).sum();
            if (total > 0.0) mix.row(c) /= total;
        }
        for (int c = 0; c < C; ++c)
            for (int t = 0; t < T; ++t)
                cluster_laspeyres[a](c, t) =
                    mix.row(c).sum() > 0.0
                        ? mix.row(c).dot(ws.period_prices[a].row(t))
                        : 0.0;
    }

    // assemble the panel rows; missing cells take the population index
    for (int t = 0; t < T; ++t) {
        std::array<double, kNumCategories> pop_index{};
        for (std::size_t a = 0; a < kNumCategories; ++a) {
            double num = 0.0, den = 0.0;
            for (int c = 0; c < C; ++c) {
                num += cluster_expenditure[a](c, t);
                den += cluster_adjusted[a](c, t);
            }
            pop_index[a] = den > 0.0 ? num / den : 1.0;
        }
        for (int c = 0; c < C; ++c) {
            // cluster weights: members' weights normalized within the cluster
            const double member_weight = ws.clusters[c].weight;
            double total_expenditure = 0.0;
            for (std::size_t a = 0; a < kNumCategories; ++a)
                total_expenditure += cluster_expenditure[a](c, t) / member_weight;
            if (!(total_expenditure > 0.0)) continue;  // cluster inactive this period
            double log_income = 0.0, income_weight = 0.0;
            for (int idx : ws.clusters[c].members) {
                log_income += ws.households[idx].weight * std::log(ws.households[idx].income_eur);
                income_weight += ws.households[idx].weight;
            }
            log_income /= income_weight;
            for (std::size_t a = 0; a < kNumCategories; ++a) {
                const double expenditure = cluster_expenditure[a](c, t) / member_weight;
                const double adjusted = cluster_adjusted[a](c, t) / member_weight;
                const double quantity = cluster_quantity[a](c, t) / member_weight;
                const double index = adjusted > 0.0 ? expenditure / adjusted : pop_index[a];
                const double share = expenditure / total_expenditure;
                const double quality =
                    quantity > 0.0 ? adjusted / quantity - 1.0 : 0.0;
                const double laspeyres = cluster_laspeyres[a](c, t) > 0.0
                                             ? cluster_laspeyres[a](c, t)
                                             : pop_index[a];
                panel_table.add_row(
                    {CsvTable::format(c), CsvTable::format(t),
                     category_name(static_cast<Category>(a)), CsvTable::format(share),
                     CsvTable::format(std::log(index)), CsvTable::format(std::log(pop_index[a])),
                     CsvTable::format(std::log(total_expenditure)),
                     CsvTable::format(expenditure), CsvTable::format(quantity),
                     CsvTable::format(quality), CsvTable::format(std::log(laspeyres)),
                     CsvTable::format(log_income), CsvTable::format(member_weight)});
            }
        }
    }
    panel_table.write(dir / "pseudo_panel.csv");
}

// ---------------------------------------------------------------------------
// estimate-quantity

void stage_estimate_quantity(const PipelineConfig& config) {
    Workspace ws;
    ws.config = config;
    load_base_data(ws);
    load_pseudo_panel(ws);

    IrlsConfig irls;
    irls.expenditure_demo_columns = cluster_demographics_dim(1);  // no period effects
    const IrlsResult fit = estimate_irls(ws.pseudo_panel, irls);

    // mean elasticities over the panel at observed shares, for diagnostics
    Eigen::VectorXd mean_budget = Eigen::VectorXd::Zero(kNumCategories);
    Eigen::MatrixXd mean_uncomp = Eigen::MatrixXd::Zero(kNumCategories, kNumCategories);
    Eigen::MatrixXd weight_sum = Eigen::MatrixXd::Zero(kNumCategories, kNumCategories);
    Eigen::VectorXd weight_b = Eigen::VectorXd::Zero(kNumCategories);
    for (const auto& row : ws.pseudo_panel) {
        QuaidsState state{row.log_prices, row.log_expenditure, row.demographics};
        const auto el = elasticities_at_shares(fit.model, state, row.shares);
        for (int a = 0; a < static_cast<int>(kNumCategories); ++a) {
            if (std::isfinite(el.budget(a))) {
                mean_budget(a) += row.weight * el.budget(a);
                weight_b(a) += row.weight;
            }
            for (int k = 0; k < static_cast<int>(kNumCategories); ++k)
                if (std::isfinite(el.uncompensated(a, k))) {
                    mean_uncomp(a, k) += row.weight * el.uncompensated(a, k);
                    weight_sum(a, k) += row.weight;
                }
        }
    }
    for (int a = 0; a < static_cast<int>(kNumCategories); ++a) {
        if (weight_b(a) > 0) mean_budget(a) /= weight_b(a);
        for (int k = 0; k < static_cast<int>(kNumCategories); ++k)
            if (weight_sum(a, k) > 0) mean_uncomp(a, k) /= weight_sum(a, k);
    }

    Json j;
    j["model"] = to_json(fit.model);
    {
        Json diag;
        Json budget = Json::array();
        for (int a = 0; a < static_cast<int>(kNumCategories); ++a) budget.push_back(mean_budget(a));
        Json uncomp = Json::array();
        for (int a = 0; a < static_cast<int>(kNumCategories); ++a) {
            Json rowj = Json::array();
            for (int k = 0; k < static_cast<int>(kNumCategories); ++k)
                rowj.push_back(mean_uncomp(a, k));
            uncomp.push_back(rowj);
        }
        diag["mean_budget_elasticities"] = budget;
        diag["mean_uncompensated_elasticities"] = uncomp;
        j["diagnostics"] = diag;
    }
    auto mat_json = [](const Eigen::MatrixXd& m) {
        Json out = Json::array();
        for (int r = 0; r < m.rows(); ++r) {
            Json row = Json::array();
            for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
            out.push_back(row);
        }
        return out;
    };
    auto vec_json = [](const Eigen::VectorXd& v) {
        Json out = Json::array();
        for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
        return out;
    };
    j["estimation"] = Json{{"converged", fit.converged},
                           {"iterations", fit.iterations},
                           {"share_rss", fit.share_rss},
                           {"ridge_used", fit.ridge_used},
                           {"laspeyres_prices", config.laspeyres},
                           {"free_covariance", mat_json(fit.free_covariance)},
                           {"free_to_full", mat_json(fit.free_to_full)},
                           {"full_offset", vec_json(fit.full_offset)},
                           {"free_estimates", vec_json(fit.free_estimates)}};
    write_json(j, paths::models(config) / "model_quantity.json");
}

// ---------------------------------------------------------------------------
// calibrate-supply

DemandEvaluator make_demand_evaluator(const Workspace& ws, int category,
                                      const MixedLogitModel& model) {
    // captured by value so perturbed models stay alive through the solver
    auto local = std::make_shared<std::vector<Product>>(ws.category_product_list(category));
    auto design = std::make_shared<UtilityDesign>(*local, model.design);
    auto types = std::make_shared<TypePopulation>(TypePopulation::build(ws.households));
    auto rule = std::make_shared<DrawRule>(ws.config.estimation_draws());
    // baseline control-function values: period means per product
    Eigen::VectorXd cf = Eigen::VectorXd::Zero(static_cast<int>(local->size()));
    if (ws.cf_residuals[category].size() > 0)
        cf = ws.cf_residuals[category].colwise().mean().transpose();
    auto model_ptr = std::make_shared<MixedLogitModel>(model);

    return [local, design, types, rule, cf, model_ptr](const Eigen::VectorXd& prices,
                                                       Eigen::VectorXd& shares,
                                                       Eigen::MatrixXd& jac) {
        MarketSlice slice{local.get(), prices, cf};
        const int n = static_cast<int>(local->size());
        shares = Eigen::VectorXd::Zero(n);
        jac = Eigen::MatrixXd::Zero(n, n);
        double wsum = 0.0;
        Eigen::VectorXd d, alphas;
        double d0;
        for (std::size_t ty = 0; ty < types->representatives.size(); ++ty) {
            const Household& rep = types->representatives[ty];
            const double weight = types->weights[ty];
            for (std::size_t r = 0; r < rule->size(); ++r) {
                const double alpha = conditional_probabilities(*model_ptr, *design, slice, rep,
                                                               rule->nodes[r], d, d0);
                const double w = weight * rule->weights[r];
                shares += w * d;
                // per-product sensitivities for champagne-shifted varieties
                alphas = Eigen::VectorXd::Constant(n, alpha);
                if (model_ptr->champagne_price_shift != 0.0)
                    for (int jdx = 0; jdx < n; ++jdx)
                        if ((*local)[jdx].subcategory == "champagne")
                            alphas(jdx) = std::max(alpha + model_ptr->champagne_price_shift,
                                                   model_ptr->alpha_floor);
                const Eigen::VectorXd ad = alphas.cwiseProduct(d);
                jac.noalias() += w * (d * ad.transpose());
                jac.diagonal() -= w * ad;
            }
            wsum += weight;
        }
        shares /= wsum;
        jac /= wsum;
    };
}

void stage_calibrate_supply(const PipelineConfig& config) {
    Workspace ws;
    ws.config = config;
    load_base_data(ws);
    load_quality_models(ws);

    for (std::size_t a = 0; a < kNumCategories; ++a) {
        const auto evaluator = make_demand_evaluator(ws, static_cast<int>(a), ws.quality[a]);
        const Eigen::VectorXd prices = ws.baseline_prices(static_cast<int>(a));
        const Eigen::VectorXd taxes = ws.baseline_taxes(static_cast<int>(a));
        Eigen::VectorXd shares;
        Eigen::MatrixXd jac;
        evaluator(prices, shares, jac);
        const auto own =
            OwnershipStructure::from_products(ws.category_product_list(static_cast<int>(a)),
                                              config.vat);
        const CostCalibration cal = calibrate_marginal_costs(prices, taxes, own, shares, jac);
        CsvTable t({"product", "marginal_cost", "margin", "margin_pct", "negative_cost"});
        for (std::size_t i = 0; i < ws.category_products[a].size(); ++i) {
            const int id = ws.category_products[a][i];
            const bool negative =
                std::find(cal.negative_cost_products.begin(), cal.negative_cost_products.end(),
                          static_cast<int>(i)) != cal.negative_cost_products.end();
            t.add_row({CsvTable::format(id), CsvTable::format(cal.marginal_costs(i)),
                       CsvTable::format(cal.margins(i)),
                       CsvTable::format(100.0 * cal.margins(i) / prices(i)),
                       negative ? "1" : "0"});
        }
        t.write(paths::supply(config) / cat_file("costs", static_cast<int>(a), ".csv"));
    }
}

// ---------------------------------------------------------------------------
// calibrate-tax

BaselineMarket build_baseline_market(const Workspace& ws) {
    BaselineMarket market;
    market.products = ws.products;
    market.vat = ws.config.vat;
    market.prices.resize(ws.products.size());
    market.quantities = Eigen::VectorXd::Zero(ws.products.size());
    for (std::size_t j = 0; j < ws.products.size(); ++j)
        market.prices(j) = ws.products[j].price;
    for (const auto& rec : ws.purchases)
        market.quantities(rec.product) += ws.households[rec.household].weight * rec.liters;
    return market;
}

void stage_calibrate_tax(const PipelineConfig& config) {
    Workspace ws;
    ws.config = config;
    load_base_data(ws);
    const BaselineMarket market = build_baseline_market(ws);
    const double external_cost = config.external_cost_eur > 0.0
                                     ? config.external_cost_eur
                                     : config.external_cost_multiplier * market.excise_revenue();
    Json list = Json::array();
    for (const std::string& name : config.scenarios) {
        Scenario s = scenario_by_name(name, config.mup_per_drink);
        if (s.target != CalibrationTarget::None)
            s.tax_rate = calibrate_tax_rate(s.tax_kind, s.target, market, external_cost);
        list.push_back(Json{{"name", s.name},
                            {"tax_kind", tax_kind_name(s.tax_kind)},
                            {"target", s.target == CalibrationTarget::Fiscal ? "fiscal"
                                       : s.target == CalibrationTarget::PublicFinance
                                           ? "public-finance"
                                           : "none"},
                            {"tax_rate", s.tax_rate},
                            {"mup_per_drink", s.mup_per_drink}});
    }
    write_json(Json{{"external_cost_eur", external_cost},
                    {"baseline_excise_eur", market.excise_revenue()},
                    {"baseline_vat_eur", market.vat_revenue()},
                    {"scenarios", list}},
               config.out_dir / "scenarios.json");
}

}  // namespace mupsim
