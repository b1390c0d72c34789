#include <algorithm>
#include <cmath>
#include <map>

#include "mupsim/csv.hpp"
#include "mupsim/pipeline.hpp"

#include "pipeline_internal.hpp"

namespace mupsim {

void PipelineConfig::validate() const {
    if (!(vat >= 0.0)) throw ConfigError("config: negative VAT rate");
    if (!(mup_per_drink >= 0.0)) throw ConfigError("config: negative MUP rate");
    if (replications < 0) throw ConfigError("config: negative replication count");
    if (bootstrap_scheme != "parameter-draw" && bootstrap_scheme != "residual-bootstrap")
        throw ConfigError("config: unknown bootstrap scheme '" + bootstrap_scheme + "'");
    for (const auto& s : scenarios) scenario_by_name(s, std::max(mup_per_drink, 1e-9));
    solver.validate();
    generator.validate();
}

namespace {

Json vec_json(const Eigen::VectorXd& v) {
    Json out = Json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Eigen::VectorXd vec_from(const Json& j) {
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j[i].get<double>();
    return v;
}

Json subcat_json(const SubcategorySpec& s) {
    return Json{{"name", s.name},
                {"n_products", s.n_products},
                {"degree_median", s.degree_median},
                {"degree_spread", s.degree_spread},
                {"price_median", s.price_median},
                {"price_spread", s.price_spread},
                {"excise", s.excise},
                {"utility", s.utility},
                {"alcohol_free", s.alcohol_free}};
}

SubcategorySpec subcat_from(const Json& j) {
    SubcategorySpec s;
    s.name = j.at("name").get<std::string>();
    s.n_products = j.at("n_products").get<int>();
    s.degree_median = j.at("degree_median").get<double>();
    s.degree_spread = j.at("degree_spread").get<double>();
    s.price_median = j.at("price_median").get<double>();
    s.price_spread = j.at("price_spread").get<double>();
    s.excise = j.at("excise").get<double>();
    s.utility = j.at("utility").get<double>();
    s.alcohol_free = j.at("alcohol_free").get<bool>();
    return s;
}

Json category_json(const CategorySpec& c) {
    Json subs = Json::array();
    for (const auto& s : c.subcategories) subs.push_back(subcat_json(s));
    return Json{{"category", category_name(c.category)},
                {"subcategories", subs},
                {"n_retailers", c.n_retailers},
                {"n_manufacturers", c.n_manufacturers},
                {"private_label_share", c.private_label_share},
                {"unit_volume", c.unit_volume},
                {"price_coef", c.price_coef},
                {"price_sd", c.price_sd},
                {"price_demo", vec_json(c.price_demo)},
                {"cf_coef", c.cf_coef},
                {"champagne_price_shift", c.champagne_price_shift},
                {"design", to_json(c.design)},
                {"brand_utility_spread", c.brand_utility_spread},
                {"retailer_utility_spread", c.retailer_utility_spread},
                {"participation", c.participation}};
}

CategorySpec category_from(const Json& j) {
    CategorySpec c;
    c.category = category_from_name(j.at("category").get<std::string>());
    for (const auto& s : j.at("subcategories")) c.subcategories.push_back(subcat_from(s));
    c.n_retailers = j.at("n_retailers").get<int>();
    c.n_manufacturers = j.at("n_manufacturers").get<int>();
    c.private_label_share = j.at("private_label_share").get<double>();
    c.unit_volume = j.at("unit_volume").get<double>();
    c.price_coef = j.at("price_coef").get<double>();
    c.price_sd = j.at("price_sd").get<double>();
    c.price_demo = vec_from(j.at("price_demo"));
    c.cf_coef = j.at("cf_coef").get<double>();
    c.champagne_price_shift = j.at("champagne_price_shift").get<double>();
    c.design = design_spec_from_json(j.at("design"));
    c.brand_utility_spread = j.at("brand_utility_spread").get<double>();
    c.retailer_utility_spread = j.at("retailer_utility_spread").get<double>();
    c.participation = j.at("participation").get<double>();
    return c;
}

Json generator_json(const GeneratorConfig& g) {
    Json cats = Json::array();
    for (const auto& c : g.categories) cats.push_back(category_json(c));
    Json habit = Json::array();
    for (double x : g.habit_budget_scale) habit.push_back(x);
    Json income = Json::array();
    for (double x : g.income_level_eur) income.push_back(x);
    return Json{{"income_spread", g.income_spread},
                {"n_households", g.n_households},
                {"n_periods", g.n_periods},
                {"vat", g.vat},
                {"categories", cats},
                {"cost_shock_sd", g.cost_shock_sd},
                {"cost_shock_persistence", g.cost_shock_persistence},
                {"endogenous_price_sd", g.endogenous_price_sd},
                {"quantity_truth", to_json(g.quaids_truth)},
                {"budget_price_elasticity", vec_json(g.budget_price_elasticity)},
                {"budget_income_elasticity", g.budget_income_elasticity},
                {"base_period_budget", g.base_period_budget},
                {"habit_budget_scale", habit},
                {"budget_noise_sd", g.budget_noise_sd},
                {"share_noise_sd", g.share_noise_sd},
                {"income_level_eur", income},
                {"truth_draws", to_json(g.truth_draws)}};
}

GeneratorConfig generator_from(const Json& j) {
    GeneratorConfig g;
    g.n_households = j.at("n_households").get<int>();
    g.n_periods = j.at("n_periods").get<int>();
    g.vat = j.at("vat").get<double>();
    const auto& cats = j.at("categories");
    for (std::size_t a = 0; a < kNumCategories && a < cats.size(); ++a)
        g.categories[a] = category_from(cats[a]);
    g.cost_shock_sd = j.at("cost_shock_sd").get<double>();
    g.cost_shock_persistence = j.at("cost_shock_persistence").get<double>();
    g.endogenous_price_sd = j.at("endogenous_price_sd").get<double>();
    g.quaids_truth = quaids_from_json(j.at("quantity_truth"));
    g.budget_price_elasticity = vec_from(j.at("budget_price_elasticity"));
    g.budget_income_elasticity = j.at("budget_income_elasticity").get<double>();
    g.base_period_budget = j.at("base_period_budget").get<double>();
    for (std::size_t i = 0; i < g.habit_budget_scale.size(); ++i)
        g.habit_budget_scale[i] = j.at("habit_budget_scale")[i].get<double>();
    g.budget_noise_sd = j.at("budget_noise_sd").get<double>();
    g.share_noise_sd = j.at("share_noise_sd").get<double>();
    for (std::size_t i = 0; i < g.income_level_eur.size(); ++i)
        g.income_level_eur[i] = j.at("income_level_eur")[i].get<double>();
    g.truth_draws = draw_rule_from_json(j.at("truth_draws"));
    if (j.contains("income_spread")) g.income_spread = j.at("income_spread").get<double>();
    return g;
}

}  // namespace

Json to_json(const PipelineConfig& config) {
    Json scenarios = Json::array();
    for (const auto& s : config.scenarios) scenarios.push_back(s);
    return Json{{"out_dir", config.out_dir.string()},
                {"seed", config.seed},
                {"vat_rate", config.vat},
                {"mup_per_drink", config.mup_per_drink},
                {"external_cost_eur", config.external_cost_eur},
                {"external_cost_multiplier", config.external_cost_multiplier},
                {"scenarios", scenarios},
                {"estimation_draws", Json{{"method", config.estimation_draw_method},
                                          {"level", config.estimation_draw_level}}},
                {"posterior_draws", Json{{"method", config.posterior_draw_method},
                                         {"level", config.posterior_draw_level}}},
                {"solver", to_json(config.solver)},
                {"replications", config.replications},
                {"bootstrap_scheme", config.bootstrap_scheme},
                {"laspeyres", config.laspeyres},
                {"trace", config.trace},
                {"generator", generator_json(config.generator)}};
}

PipelineConfig pipeline_config_from_json(const Json& j) {
    PipelineConfig config;
    if (j.contains("out_dir")) config.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("vat_rate")) config.vat = j.at("vat_rate").get<double>();
    if (j.contains("mup_per_drink")) config.mup_per_drink = j.at("mup_per_drink").get<double>();
    if (j.contains("external_cost_eur"))
        config.external_cost_eur = j.at("external_cost_eur").get<double>();
    if (j.contains("external_cost_multiplier"))
        config.external_cost_multiplier = j.at("external_cost_multiplier").get<double>();
    if (j.contains("scenarios")) {
        config.scenarios.clear();
        for (const auto& s : j.at("scenarios")) config.scenarios.push_back(s.get<std::string>());
    }
    if (j.contains("estimation_draws")) {
        config.estimation_draw_method = j.at("estimation_draws").at("method").get<std::string>();
        config.estimation_draw_level = j.at("estimation_draws").at("level").get<int>();
    }
    if (j.contains("posterior_draws")) {
        config.posterior_draw_method = j.at("posterior_draws").at("method").get<std::string>();
        config.posterior_draw_level = j.at("posterior_draws").at("level").get<int>();
    }
    if (j.contains("solver")) config.solver = solver_config_from_json(j.at("solver"));
    if (j.contains("replications")) config.replications = j.at("replications").get<int>();
    if (j.contains("bootstrap_scheme"))
        config.bootstrap_scheme = j.at("bootstrap_scheme").get<std::string>();
    if (j.contains("laspeyres")) config.laspeyres = j.at("laspeyres").get<bool>();
    if (j.contains("trace")) config.trace = j.at("trace").get<bool>();
    if (j.contains("generator")) config.generator = generator_from(j.at("generator"));
    config.generator.vat = config.vat;
    return config;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    try {
        return pipeline_config_from_json(read_json(path));
    } catch (const Json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// artifact paths and loaders

namespace paths {
std::filesystem::path data(const PipelineConfig& c) { return c.out_dir / "data"; }
std::filesystem::path models(const PipelineConfig& c) { return c.out_dir / "models"; }
std::filesystem::path supply(const PipelineConfig& c) { return c.out_dir / "supply"; }
std::filesystem::path reports(const PipelineConfig& c) { return c.out_dir / "reports"; }
std::filesystem::path scenario_dir(const PipelineConfig& c, const std::string& name) {
    return c.out_dir / "scenarios" / name;
}
}  // namespace paths

void require_artifact(const std::filesystem::path& p, const std::string& stage) {
    if (!std::filesystem::exists(p))
        throw MissingArtifact("missing artifact " + p.string() + "; run `mupsim " + stage +
                              "` first");
}

std::vector<Product> Workspace::category_product_list(int a) const {
    std::vector<Product> out;
    for (int id : category_products[a]) out.push_back(products[id]);
    return out;
}

Eigen::VectorXd Workspace::baseline_prices(int a) const {
    Eigen::VectorXd p(category_products[a].size());
    for (std::size_t i = 0; i < category_products[a].size(); ++i)
        p(static_cast<int>(i)) = products[category_products[a][i]].price;
    return p;
}

Eigen::VectorXd Workspace::baseline_taxes(int a) const {
    Eigen::VectorXd t(category_products[a].size());
    for (std::size_t i = 0; i < category_products[a].size(); ++i)
        t(static_cast<int>(i)) = products[category_products[a][i]].excise;
    return t;
}

void write_products_csv(const std::filesystem::path& path, const std::vector<Product>& products) {
    CsvTable t({"id", "category", "subcategory", "brand", "manufacturer", "retailer",
                "size_class", "degree", "unit_volume", "price", "excise"});
    for (const Product& p : products)
        t.add_row({CsvTable::format(p.id), category_name(p.category), p.subcategory, p.brand,
                   p.manufacturer, p.retailer, p.size_class == FirmSize::Small ? "small" : "large",
                   CsvTable::format(p.degree), CsvTable::format(p.unit_volume),
                   CsvTable::format(p.price), CsvTable::format(p.excise)});
    t.write(path);
}

std::vector<Product> read_products_csv(const std::filesystem::path& path) {
    const CsvTable t = CsvTable::read(path);
    t.require_columns({"id", "category", "subcategory", "brand", "manufacturer", "retailer",
                       "size_class", "degree", "unit_volume", "price", "excise"},
                      "products.csv");
    std::vector<Product> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        Product p;
        p.id = static_cast<int>(t.integer(r, "id"));
        p.category = category_from_name(t.cell(r, "category"));
        p.subcategory = t.cell(r, "subcategory");
        p.brand = t.cell(r, "brand");
        p.manufacturer = t.cell(r, "manufacturer");
        p.retailer = t.cell(r, "retailer");
        p.size_class = t.cell(r, "size_class") == "small" ? FirmSize::Small : FirmSize::Large;
        p.degree = t.number(r, "degree");
        p.unit_volume = t.number(r, "unit_volume");
        p.price = t.number(r, "price");
        p.excise = t.number(r, "excise");
        p.validate();
        out.push_back(p);
    }
    return out;
}

void write_households_csv(const std::filesystem::path& path,
                          const std::vector<Household>& households) {
    std::vector<std::string> cols = {"id",     "weight",   "income",           "income_eur",
                                     "age",    "habit",    "children",         "producing_region",
                                     "small_city"};
    for (int c = 0; c < kAdultCells; ++c) cols.push_back("males_" + std::to_string(c));
    for (int c = 0; c < kAdultCells; ++c) cols.push_back("females_" + std::to_string(c));
    CsvTable t(cols);
    for (const Household& h : households) {
        std::vector<std::string> row = {CsvTable::format(h.id),
                                        CsvTable::format(h.weight),
                                        CsvTable::format(h.income),
                                        CsvTable::format(h.income_eur),
                                        CsvTable::format(h.age),
                                        CsvTable::format(h.habit),
                                        CsvTable::format(h.children),
                                        h.producing_region ? "1" : "0",
                                        h.small_city ? "1" : "0"};
        for (int c = 0; c < kAdultCells; ++c) row.push_back(CsvTable::format(h.adult_males[c]));
        for (int c = 0; c < kAdultCells; ++c) row.push_back(CsvTable::format(h.adult_females[c]));
        t.add_row(row);
    }
    t.write(path);
}

std::vector<Household> read_households_csv(const std::filesystem::path& path) {
    const CsvTable t = CsvTable::read(path);
    t.require_columns({"id", "weight", "income", "age", "habit", "children"}, "households.csv");
    std::vector<Household> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        Household h;
        h.id = static_cast<int>(t.integer(r, "id"));
        h.weight = t.number(r, "weight");
        h.income = static_cast<int>(t.integer(r, "income"));
        if (t.has_column("income_eur")) h.income_eur = t.number(r, "income_eur");
        h.age = static_cast<int>(t.integer(r, "age"));
        h.habit = static_cast<int>(t.integer(r, "habit"));
        h.children = static_cast<int>(t.integer(r, "children"));
        h.producing_region = t.integer(r, "producing_region") != 0;
        h.small_city = t.integer(r, "small_city") != 0;
        for (int c = 0; c < kAdultCells; ++c) {
            h.adult_males[c] = static_cast<int>(t.integer(r, "males_" + std::to_string(c)));
            h.adult_females[c] = static_cast<int>(t.integer(r, "females_" + std::to_string(c)));
        }
        h.validate();
        out.push_back(h);
    }
    return out;
}

// period price long table: product (global id), period, price
void write_prices_csv(const std::filesystem::path& path, const Workspace& ws) {
    CsvTable t({"product", "period", "price"});
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        const auto& prices = ws.period_prices[a];
        for (int j = 0; j < prices.cols(); ++j)
            for (int p = 0; p < prices.rows(); ++p)
                t.add_row({CsvTable::format(ws.category_products[a][j]), CsvTable::format(p),
                           CsvTable::format(prices(p, j))});
    }
    t.write(path);
}

}  // namespace mupsim
