#include "mupsim/serialize.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace mupsim {

namespace {
Json vec_to_json(const Eigen::VectorXd& v) {
    Json out = Json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Eigen::VectorXd vec_from_json(const Json& j) {
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j[i].get<double>();
    return v;
}

Json mat_to_json(const Eigen::MatrixXd& m) {
    Json out = Json::array();
    for (int r = 0; r < m.rows(); ++r) out.push_back(vec_to_json(m.row(r).transpose()));
    return out;
}

Eigen::MatrixXd mat_from_json(const Json& j) {
    const int rows = static_cast<int>(j.size());
    const int cols = rows > 0 ? static_cast<int>(j[0].size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
    return m;
}
}  // namespace

Json to_json(const UtilityDesignSpec& spec) {
    return Json{{"retailer_fe", spec.retailer_fe},
                {"brand_fe", spec.brand_fe},
                {"subcategory_fe", spec.subcategory_fe},
                {"interaction", interaction_name(spec.interaction)},
                {"alcohol_free_fe", spec.alcohol_free_fe},
                {"brand_alcohol_free_fe", spec.brand_alcohol_free_fe}};
}

UtilityDesignSpec design_spec_from_json(const Json& j) {
    UtilityDesignSpec spec;
    spec.retailer_fe = j.at("retailer_fe").get<bool>();
    spec.brand_fe = j.at("brand_fe").get<bool>();
    spec.subcategory_fe = j.at("subcategory_fe").get<bool>();
    spec.interaction = interaction_from_name(j.at("interaction").get<std::string>());
    spec.alcohol_free_fe = j.at("alcohol_free_fe").get<bool>();
    spec.brand_alcohol_free_fe = j.at("brand_alcohol_free_fe").get<bool>();
    return spec;
}

Json to_json(const DrawRule& rule) {
    return Json{{"method", draw_method_name(rule.method)}, {"level", rule.level}};
}

DrawRule draw_rule_from_json(const Json& j) {
    return DrawRule::make(j.at("method").get<std::string>(), j.at("level").get<int>());
}

Json to_json(const MixedLogitModel& model, const std::vector<std::string>& feature_names,
             const DrawRule& rule) {
    Json features = Json::object();
    for (std::size_t i = 0; i < feature_names.size(); ++i)
        features[feature_names[i]] = model.beta(static_cast<int>(i));
    return Json{{"category", category_name(model.category)},
                {"price_coef", model.price_coef},
                {"price_demo", vec_to_json(model.price_demo)},
                {"price_sd", model.price_sd},
                {"control_function_coef", model.cf_coef},
                {"champagne_price_shift", model.champagne_price_shift},
                {"alpha_floor", model.alpha_floor},
                {"design", to_json(model.design)},
                {"fixed_effects", features},
                {"draw_rule", to_json(rule)}};
}

MixedLogitModel mixed_logit_from_json(const Json& j) {
    MixedLogitModel model;
    model.category = category_from_name(j.at("category").get<std::string>());
    model.price_coef = j.at("price_coef").get<double>();
    model.price_demo = vec_from_json(j.at("price_demo"));
    model.price_sd = j.at("price_sd").get<double>();
    model.cf_coef = j.at("control_function_coef").get<double>();
    model.champagne_price_shift = j.at("champagne_price_shift").get<double>();
    model.alpha_floor = j.at("alpha_floor").get<double>();
    model.design = design_spec_from_json(j.at("design"));
    const auto& features = j.at("fixed_effects");
    model.beta = Eigen::VectorXd::Zero(features.size());
    int i = 0;
    for (auto it = features.begin(); it != features.end(); ++it) model.beta(i++) = *it;
    return model;
}

Json to_json(const QuaidsModel& model) {
    return Json{{"intercept_loadings", mat_to_json(model.intercept_loadings)},
                {"price_coefs", mat_to_json(model.price_coefs)},
                {"expenditure_coefs", vec_to_json(model.expenditure_coefs)},
                {"quadratic_coefs", vec_to_json(model.quadratic_coefs)},
                {"kappa0", model.kappa0},
                {"vat_inclusive_prices", model.vat_inclusive_prices},
                {"budget_price_elasticity", vec_to_json(model.budget_price_elasticity)},
                {"budget_income_elasticity", model.budget_income_elasticity}};
}

QuaidsModel quaids_from_json(const Json& j) {
    QuaidsModel model;
    model.intercept_loadings = mat_from_json(j.at("intercept_loadings"));
    model.price_coefs = mat_from_json(j.at("price_coefs"));
    model.expenditure_coefs = vec_from_json(j.at("expenditure_coefs"));
    model.quadratic_coefs = vec_from_json(j.at("quadratic_coefs"));
    model.kappa0 = j.at("kappa0").get<double>();
    model.vat_inclusive_prices = j.at("vat_inclusive_prices").get<bool>();
    model.budget_price_elasticity = vec_from_json(j.at("budget_price_elasticity"));
    model.budget_income_elasticity = j.at("budget_income_elasticity").get<double>();
    model.n_goods = static_cast<int>(model.expenditure_coefs.size());
    return model;
}

Json to_json(const SolverConfig& config) {
    return Json{{"max_iterations", config.max_iterations},
                {"price_tol", config.price_tol},
                {"foc_tol", config.foc_tol},
                {"damping", config.damping}};
}

SolverConfig solver_config_from_json(const Json& j) {
    SolverConfig config;
    config.max_iterations = j.at("max_iterations").get<int>();
    config.price_tol = j.at("price_tol").get<double>();
    config.foc_tol = j.at("foc_tol").get<double>();
    config.damping = j.at("damping").get<double>();
    return config;
}

void write_json(const Json& j, const std::filesystem::path& path) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    Json j;
    in >> j;
    return j;
}

std::string json_digest(const Json& j) {
    // FNV-1a over the canonical dump; enough for manifest change detection
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace mupsim
