#include "mupsim/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mupsim {

std::vector<Scenario> standard_scenarios(double mup_per_drink) {
    std::vector<Scenario> out;
    Scenario s;
    s.name = "low-uniform";
    s.tax_kind = TaxKind::UniformVolumetric;
    s.target = CalibrationTarget::Fiscal;
    out.push_back(s);
    s.name = "high-uniform";
    s.target = CalibrationTarget::PublicFinance;
    out.push_back(s);
    s.name = "low-progressive";
    s.tax_kind = TaxKind::ProgressiveVolumetric;
    s.target = CalibrationTarget::Fiscal;
    out.push_back(s);
    s.name = "high-progressive";
    s.target = CalibrationTarget::PublicFinance;
    out.push_back(s);
    Scenario mup;
    mup.name = "mup";
    mup.tax_kind = TaxKind::Current;
    mup.mup_per_drink = mup_per_drink;
    out.push_back(mup);
    Scenario combo;
    combo.name = "mup+low-progressive";
    combo.tax_kind = TaxKind::ProgressiveVolumetric;
    combo.target = CalibrationTarget::Fiscal;
    combo.mup_per_drink = mup_per_drink;
    out.push_back(combo);
    return out;
}

Scenario scenario_by_name(const std::string& name, double mup_per_drink) {
    for (const Scenario& s : standard_scenarios(mup_per_drink))
        if (s.name == name) return s;
    throw std::invalid_argument("unknown scenario: " + name);
}

double BaselineMarket::excise_revenue() const {
    double total = 0.0;
    for (std::size_t j = 0; j < products.size(); ++j)
        total += quantities(j) * products[j].excise;
    return total;
}

double BaselineMarket::vat_revenue() const {
    double total = 0.0;
    for (std::size_t j = 0; j < products.size(); ++j)
        total += quantities(j) * prices(j) * vat / (1.0 + vat);
    return total;
}

double calibrate_tax_rate(TaxKind kind, CalibrationTarget target, const BaselineMarket& baseline,
                          double external_cost) {
    if (kind == TaxKind::Current || target == CalibrationTarget::None) return 0.0;
    TaxSchedule schedule;
    schedule.kind = kind;
    schedule.rate = 1.0;
    // taxed degree-units at baseline quantities: revenue is rate * this sum
    double degree_units = 0.0;
    for (std::size_t j = 0; j < baseline.products.size(); ++j)
        degree_units +=
            baseline.quantities(j) * schedule.effective_degrees(baseline.products[j].degree);
    if (!(degree_units > 0.0))
        throw std::domain_error("calibrate_tax_rate: no taxable volume in baseline");

    if (target == CalibrationTarget::PublicFinance) {
        if (!(external_cost > 0.0))
            throw std::domain_error("calibrate_tax_rate: external cost target must be positive");
        return external_cost / degree_units;
    }
    // Fiscal neutrality: hold total revenue (excise + VAT) fixed at the
    // baseline, with producer prices and quantities frozen. The producer-part
    // VAT is unchanged, so the condition reduces to (1+vat)*excise revenue.
    const double target_revenue = baseline.total_revenue();
    if (!(target_revenue > 0.0))
        throw std::domain_error("calibrate_tax_rate: nonpositive baseline revenue");
    double producer_vat = 0.0;
    for (std::size_t j = 0; j < baseline.products.size(); ++j) {
        const double producer_price =
            baseline.prices(j) / (1.0 + baseline.vat) - baseline.products[j].excise;
        producer_vat += baseline.quantities(j) * producer_price * baseline.vat;
    }
    return (target_revenue - producer_vat) / ((1.0 + baseline.vat) * degree_units);
}

Eigen::VectorXd scenario_taxes(const Scenario& scenario, const std::vector<Product>& products,
                               double vat) {
    TaxSchedule schedule;
    schedule.kind = scenario.tax_kind;
    schedule.rate = scenario.tax_rate;
    schedule.vat = vat;
    Eigen::VectorXd taxes(products.size());
    for (std::size_t j = 0; j < products.size(); ++j)
        taxes(j) = tax_per_liter(products[j], schedule);
    return taxes;
}

Eigen::VectorXd scenario_floors(const Scenario& scenario, const std::vector<Product>& products) {
    Eigen::VectorXd floors = Eigen::VectorXd::Zero(products.size());
    if (scenario.has_mup())
        for (std::size_t j = 0; j < products.size(); ++j)
            floors(j) = mup_floor_price(products[j], scenario.mup_per_drink);
    return floors;
}

// ---------------------------------------------------------------------------

int CategoryContext::type_index(const Household& h) const {
    return (h.income * kAgeLevels + h.age) * kHabitLevels + h.habit;
}

void CategoryContext::prepare(const std::vector<Household>& population) {
    const int n_types = kIncomeLevels * kAgeLevels * kHabitLevels;
    const int n = static_cast<int>(products.size());
    const int R = static_cast<int>(draws.size());

    MarketSlice slice0{&products, baseline_prices, cf_residual};
    MarketSlice slice1{&products, counterfactual_prices, cf_residual};
    reference_price0 = population_reference_price(model, design, slice0, population, draws);
    reference_price1 = population_reference_price(model, design, slice1, population, draws);

    type_pi0.assign(n_types, Eigen::MatrixXd());
    type_pi1.assign(n_types, Eigen::MatrixXd());
    type_b0.assign(n_types, Eigen::VectorXd());
    type_b1.assign(n_types, Eigen::VectorXd());

    // one representative household per demographic type
    std::vector<bool> seen(n_types, false);
    for (const Household& h : population) {
        const int ty = type_index(h);
        if (seen[ty]) continue;
        seen[ty] = true;
        Eigen::MatrixXd pi0(n, R), pi1(n, R);
        Eigen::VectorXd b0(R), b1(R);
        Eigen::VectorXd d;
        double d_out;
        for (int r = 0; r < R; ++r) {
            const double z = draws.nodes[r];
            conditional_probabilities(model, design, slice0, h, z, d, d_out);
            const double inside0 = 1.0 - d_out;
            pi0.col(r) = inside0 > 0.0 ? Eigen::VectorXd(d / inside0)
                                       : Eigen::VectorXd::Zero(n);
            conditional_probabilities(model, design, slice1, h, z, d, d_out);
            const double inside1 = 1.0 - d_out;
            pi1.col(r) = inside1 > 0.0 ? Eigen::VectorXd(d / inside1)
                                       : Eigen::VectorXd::Zero(n);
            b0(r) = quality_surplus(model, design, slice0, h, z, reference_price0);
            b1(r) = quality_surplus(model, design, slice1, h, z, reference_price1);
        }
        type_pi0[ty] = pi0;
        type_pi1[ty] = pi1;
        type_b0[ty] = b0;
        type_b1[ty] = b1;
    }
}

namespace {

// posterior over draws from the household's observed purchase counts, using
// the cached conditional probabilities at baseline prices
Eigen::VectorXd posterior_weights_cached(const Eigen::MatrixXd& pi0, const DrawRule& rule,
                                         const std::vector<std::pair<int, int>>& counts) {
    const int R = static_cast<int>(rule.size());
    Eigen::VectorXd logl = Eigen::VectorXd::Zero(R);
    for (int r = 0; r < R; ++r)
        for (const auto& [j, n] : counts)
            logl(r) += n * std::log(std::max(pi0(j, r), 1e-300));
    const double m = logl.maxCoeff();
    Eigen::VectorXd w(R);
    for (int r = 0; r < R; ++r) w(r) = rule.weights[r] * std::exp(logl(r) - m);
    const double total = w.sum();
    if (!(total > 0.0) || !std::isfinite(total)) {
        for (int r = 0; r < R; ++r) w(r) = rule.weights[r];
        return w;
    }
    return w / total;
}

}  // namespace

WelfareChange equivalent_variation(const QuaidsModel& quaids, const Eigen::VectorXd& log_prices0,
                                   const Eigen::VectorXd& log_prices1, double expenditure0,
                                   double expenditure1, const Eigen::VectorXd& demographics) {
    WelfareChange out;
    out.yv = expenditure1 - expenditure0;
    const double v1 = indirect_utility(quaids, log_prices1, std::log(expenditure1), demographics);
    const double cost0_at_v1 = cost_function(quaids, log_prices0, v1, demographics);
    out.ev = std::exp(cost0_at_v1) - expenditure0;
    out.ev_star = out.ev - out.yv;
    return out;
}

HouseholdImpact simulate_household_impacts(
    const HouseholdRecord& record, const std::array<CategoryContext, kNumCategories>& contexts,
    const QuaidsModel& quaids, const std::vector<QuaidsState>& cluster_states,
    const std::vector<ClusterResponse>& cluster_responses, int periods_per_year) {
    HouseholdImpact out;
    out.household = record.household.id;
    out.weight = record.household.weight;

    const ClusterResponse& response = cluster_responses.at(record.cluster);
    const QuaidsState& cstate = cluster_states.at(record.cluster);

    // per-category price-index changes (population index where inactive)
    Eigen::VectorXd dP = Eigen::VectorXd::Zero(kNumCategories);
    std::array<double, kNumCategories> q_index0{}, surplus0{}, surplus1{};
    std::array<Eigen::VectorXd, kNumCategories> pi_post0, pi_post1;

    for (int a = 0; a < static_cast<int>(kNumCategories); ++a) {
        const CategoryContext& ctx = contexts[a];
        const auto& base = record.baseline[a];
        const int ty = ctx.type_index(record.household);
        const Eigen::MatrixXd& pi0 = ctx.type_pi0[ty];
        const Eigen::MatrixXd& pi1 = ctx.type_pi1[ty];
        const Eigen::VectorXd post = posterior_weights_cached(pi0, ctx.draws, base.purchase_counts);
        pi_post0[a] = pi0 * post;
        pi_post1[a] = pi1 * post;
        const double pisum0 = pi_post0[a].sum();
        const double pisum1 = pi_post1[a].sum();
        if (pisum0 > 0.0) pi_post0[a] /= pisum0;
        if (pisum1 > 0.0) pi_post1[a] /= pisum1;
        surplus0[a] = post.dot(ctx.type_b0[ty]);
        surplus1[a] = post.dot(ctx.type_b1[ty]);
        const double unit0 = pi_post0[a].dot(ctx.baseline_prices);
        const double unit1 = pi_post1[a].dot(ctx.counterfactual_prices);
        const double index0 = unit0 / (1.0 + surplus0[a]);
        const double index1 = unit1 / (1.0 + surplus1[a]);
        dP(a) = index0 > 0.0 ? index1 / index0 - 1.0 : 0.0;
    }

    // expenditure response of the total alcohol budget
    const double budget_response = quaids.budget_price_elasticity.size() == kNumCategories
                                       ? quaids.budget_price_elasticity.dot(dP)
                                       : 0.0;

    double ethanol_weighted = 0.0, ethanol_base = 0.0;
    double utility_weighted = 0.0, utility_base = 0.0;

    for (int a = 0; a < static_cast<int>(kNumCategories); ++a) {
        const CategoryContext& ctx = contexts[a];
        const auto& base = record.baseline[a];
        CategoryImpact& impact = out.category[a];
        const int n = static_cast<int>(ctx.products.size());
        impact.quantity0 = Eigen::VectorXd::Zero(n);
        impact.quantity1 = Eigen::VectorXd::Zero(n);
        if (!base.active()) continue;  // non-purchasers stay out
        impact.active = true;
        impact.price_index_change = dP(a);

        // quantity-index response from the cluster's demand system
        double dq_index = 0.0;
        const auto& el = response.elasticities;
        for (int k = 0; k < static_cast<int>(kNumCategories); ++k) {
            const double e_ak = el.uncompensated(a, k);
            if (std::isfinite(e_ak)) dq_index += e_ak * dP(k);
        }
        if (std::isfinite(el.budget(a))) dq_index += el.budget(a) * budget_response;
        impact.quantity_index_change = dq_index;

        const double adj_q0 = base.liters * (1.0 + surplus0[a]);
        const double adj_q1 = std::max(0.0, adj_q0 * (1.0 + dq_index));
        const double liters1 = adj_q1 / (1.0 + surplus1[a]);
        impact.quantity_change = std::max(liters1 / base.liters - 1.0, -1.0);

        // content change from the reshuffled conditional probabilities
        double content0 = 0.0, content1 = 0.0;
        for (int j = 0; j < n; ++j) {
            const double grams_per_liter = 8.0 * ctx.products[j].degree;
            content0 += grams_per_liter * pi_post0[a](j);
            content1 += grams_per_liter * pi_post1[a](j);
        }
        impact.content_change = content0 > 0.0 ? content1 / content0 - 1.0 : 0.0;
        impact.ethanol_change =
            base.ethanol_grams > 0.0
                ? impact.quantity_change * (1.0 + impact.content_change) + impact.content_change
                : 0.0;

        const double liters1_floored = base.liters * (1.0 + impact.quantity_change);
        impact.quantity0 = base.liters * pi_post0[a];
        impact.quantity1 = liters1_floored * pi_post1[a];

        ethanol_weighted += impact.ethanol_change * base.ethanol_grams;
        ethanol_base += base.ethanol_grams;
        utility_weighted += impact.quantity_index_change * adj_q0;
        utility_base += adj_q0;
    }

    out.baseline_ethanol_grams = ethanol_base;
    out.total_ethanol_change = ethanol_base > 0.0 ? ethanol_weighted / ethanol_base : 0.0;
    out.utility_change = utility_base > 0.0 ? utility_weighted / utility_base : 0.0;

    // welfare: QUAIDS cost-function comparison at the household's index changes,
    // per period then annualized
    double expenditure0 = 0.0;
    for (const auto& b : record.baseline) expenditure0 += b.expenditure;
    out.baseline_expenditure = expenditure0;
    if (expenditure0 > 0.0) {
        const double per_period0 = expenditure0 / periods_per_year;
        const double per_period1 = per_period0 * (1.0 + budget_response);
        Eigen::VectorXd lnp0 = cstate.log_prices;
        Eigen::VectorXd lnp1 = cstate.log_prices;
        for (int a = 0; a < static_cast<int>(kNumCategories); ++a)
            lnp1(a) += std::log1p(dP(a));
        const WelfareChange wc = equivalent_variation(quaids, lnp0, lnp1, per_period0,
                                                      per_period1, cstate.demographics);
        out.ev_eur_year = periods_per_year * wc.ev;
        out.yv_eur_year = periods_per_year * wc.yv;
        out.ev_star_eur_year = periods_per_year * wc.ev_star;
    }
    return out;
}

RevenueReport tax_revenue_report(const std::vector<Product>& products,
                                 const Eigen::VectorXd& quantities, const Eigen::VectorXd& prices,
                                 const Eigen::VectorXd& taxes, double vat) {
    RevenueReport report;
    for (std::size_t j = 0; j < products.size(); ++j) {
        const int a = category_index(products[j].category);
        const double q = quantities(j);
        report.excise[a] += q * taxes(j);
        report.vat[a] += q * prices(j) * vat / (1.0 + vat);
        report.producer_total += q * (prices(j) / (1.0 + vat) - taxes(j));
        report.expenditure_total += q * prices(j);
    }
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        report.excise_total += report.excise[a];
        report.vat_total += report.vat[a];
    }
    return report;
}

std::vector<GroupStats> heterogeneity_tables(const std::vector<HouseholdImpact>& impacts,
                                             const std::vector<HouseholdRecord>& records,
                                             HeterogeneityGrouping grouping) {
    std::map<std::string, GroupStats> groups;
    for (std::size_t i = 0; i < impacts.size(); ++i) {
        const HouseholdImpact& imp = impacts[i];
        const Household& h = records[i].household;
        std::string key;
        if (grouping == HeterogeneityGrouping::Income) {
            key = h.income >= 2 ? "low-income" : "high-income";
        } else {
            if (h.habit == 0) key = "low-risk";
            else if (h.habit == 2) key = "high-risk";
            else key = "mid-risk";
        }
        GroupStats& g = groups[key];
        g.group = key;
        g.ethanol_change_pct += imp.weight * 100.0 * imp.total_ethanol_change;
        g.utility_change_pct += imp.weight * 100.0 * imp.utility_change;
        g.ev_eur_year += imp.weight * imp.ev_eur_year;
        g.weight += imp.weight;
    }
    std::vector<GroupStats> out;
    for (auto& [key, g] : groups) {
        if (!(g.weight > 0.0)) continue;  // empty group omitted
        g.ethanol_change_pct /= g.weight;
        g.utility_change_pct /= g.weight;
        g.ev_eur_year /= g.weight;
        out.push_back(g);
    }
    return out;
}

Percentiles percentile_interval(std::vector<double> values, double lo_pct, double hi_pct) {
    if (values.empty()) throw std::invalid_argument("percentile_interval: no values");
    std::sort(values.begin(), values.end());
    auto at = [&](double pct) {
        const double idx = pct / 100.0 * (values.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(std::floor(idx));
        const std::size_t hi = std::min(lo + 1, values.size() - 1);
        const double frac = idx - lo;
        return (1.0 - frac) * values[lo] + frac * values[hi];
    };
    return {at(lo_pct), at(hi_pct)};
}

}  // namespace mupsim
