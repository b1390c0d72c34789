#include <algorithm>
#include <cmath>
#include <future>
#include <iostream>
#include <map>
#include <set>

#include "mupsim/csv.hpp"
#include "mupsim/msl.hpp"
#include "mupsim/pipeline.hpp"
#include "mupsim/rng.hpp"
#include "pipeline_internal.hpp"

namespace mupsim {

namespace {

std::string cat_suffix(int a) { return category_name(static_cast<Category>(a)); }

// multivariate normal draw through the eigendecomposition (covariances from
// the estimators are only approximately positive definite)
Eigen::VectorXd gaussian_perturbation(const Eigen::MatrixXd& cov, Rng& rng) {
    const int n = static_cast<int>(cov.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = rng.normal();
    const Eigen::VectorXd scale = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * scale.asDiagonal() * z;
}

}  // namespace

std::vector<HouseholdRecord> build_household_records(const Workspace& ws) {
    std::vector<HouseholdRecord> records(ws.households.size());
    std::vector<int> local_of(ws.products.size(), -1);
    for (std::size_t a = 0; a < kNumCategories; ++a)
        for (std::size_t i = 0; i < ws.category_products[a].size(); ++i)
            local_of[ws.category_products[a][i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < ws.households.size(); ++i) {
        records[i].household = ws.households[i];
        records[i].cluster = ws.household_cluster[i];
    }
    for (const auto& rec : ws.purchases) {
        const Product& p = ws.products[rec.product];
        const int a = category_index(p.category);
        auto& base = records[rec.household].baseline[a];
        base.expenditure += rec.expenditure;
        base.liters += rec.liters;
        base.ethanol_grams += ethanol_grams(p.degree, rec.liters);
        const int lj = local_of[rec.product];
        const int acts = std::max(1, static_cast<int>(std::lround(rec.liters / p.unit_volume)));
        bool merged = false;
        for (auto& [j, cnt] : base.purchase_counts)
            if (j == lj) {
                cnt += acts;
                merged = true;
                break;
            }
        if (!merged) base.purchase_counts.push_back({lj, acts});
    }
    return records;
}

namespace {

// QUAIDS evaluation states and responses per cluster, at the cluster's mean
// panel position (period effects averaged out)
void build_cluster_states(const Workspace& ws, std::vector<QuaidsState>& states,
                          std::vector<ClusterResponse>& responses) {
    const int C = static_cast<int>(ws.clusters.size());
    states.assign(C, QuaidsState{});
    responses.assign(C, ClusterResponse{});
    std::vector<double> count(C, 0.0);
    std::vector<Eigen::VectorXd> lnp(C, Eigen::VectorXd::Zero(kNumCategories));
    std::vector<Eigen::VectorXd> shares(C, Eigen::VectorXd::Zero(kNumCategories));
    std::vector<double> lny(C, 0.0);
    for (const auto& row : ws.pseudo_panel) {
        lnp[row.cluster] += row.log_prices;
        shares[row.cluster] += row.shares;
        lny[row.cluster] += row.log_expenditure;
        count[row.cluster] += 1.0;
    }
    for (int c = 0; c < C; ++c) {
        QuaidsState& s = states[c];
        const double n = std::max(count[c], 1.0);
        s.log_prices = lnp[c] / n;
        s.log_expenditure = lny[c] / n;
        s.demographics = cluster_demographics(ws.clusters[c], ws.households, 0, ws.n_periods);
        Eigen::VectorXd w = shares[c] / n;
        // guard zero shares: elasticities undefined there, keep them missing
        responses[c].elasticities = elasticities_at_shares(ws.quantity, s, w);
        responses[c].budget_price_elasticity = ws.quantity.budget_price_elasticity;
    }
}

CategoryContext build_category_context(const Workspace& ws, int a, const MixedLogitModel& model,
                                       const Eigen::VectorXd& counterfactual_prices) {
    CategoryContext ctx;
    ctx.products = ws.category_product_list(a);
    ctx.model = model;
    ctx.design = UtilityDesign(ctx.products, model.design);
    ctx.baseline_prices = ws.baseline_prices(a);
    ctx.cf_residual = ws.cf_residuals[a].size() > 0
                          ? Eigen::VectorXd(ws.cf_residuals[a].colwise().mean().transpose())
                          : Eigen::VectorXd::Zero(static_cast<int>(ctx.products.size()));
    ctx.counterfactual_prices = counterfactual_prices;
    ctx.draws = ws.config.posterior_draws();
    ctx.prepare(ws.households);
    return ctx;
}

std::vector<HouseholdImpact> run_step2(const Workspace& ws,
                                       const std::array<MixedLogitModel, kNumCategories>& quality,
                                       const QuaidsModel& quantity,
                                       const std::array<Eigen::VectorXd, kNumCategories>& prices,
                                       const std::vector<HouseholdRecord>& records) {
    std::array<CategoryContext, kNumCategories> contexts;
    for (std::size_t a = 0; a < kNumCategories; ++a)
        contexts[a] =
            build_category_context(ws, static_cast<int>(a), quality[a], prices[a]);
    std::vector<QuaidsState> states;
    std::vector<ClusterResponse> responses;
    Workspace& mutable_ws = const_cast<Workspace&>(ws);  // quantity swap for responses
    const QuaidsModel saved = mutable_ws.quantity;
    mutable_ws.quantity = quantity;
    build_cluster_states(ws, states, responses);
    mutable_ws.quantity = saved;

    std::vector<HouseholdImpact> impacts;
    impacts.reserve(records.size());
    for (const auto& rec : records)
        impacts.push_back(simulate_household_impacts(rec, contexts, quantity, states, responses,
                                                     ws.n_periods));
    return impacts;
}

}  // namespace

ScenarioRun run_scenario(const Workspace& ws, const Scenario& scenario,
                         const std::array<MixedLogitModel, kNumCategories>& quality,
                         const QuaidsModel& quantity, bool with_impacts) {
    ScenarioRun run;
    run.scenario = scenario;

    // category equilibria are independent; solve them concurrently
    std::array<std::future<SolveResult>, kNumCategories> futures;
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        const auto local = ws.category_product_list(static_cast<int>(a));
        run.taxes[a] = scenario.tax_kind == TaxKind::Current
                           ? ws.baseline_taxes(static_cast<int>(a))
                           : scenario_taxes(scenario, local, ws.config.vat);
        run.floors[a] = scenario_floors(scenario, local);
        const Eigen::VectorXd p0 = ws.baseline_prices(static_cast<int>(a));
        const Eigen::VectorXd t0 = ws.baseline_taxes(static_cast<int>(a));
        run.mechanical_prices[a] =
            (p0 + (1.0 + ws.config.vat) * (run.taxes[a] - t0)).cwiseMax(run.floors[a]);
        futures[a] = std::async(std::launch::async, [&ws, &run, &quality, a, p0]() {
            const auto evaluator =
                make_demand_evaluator(ws, static_cast<int>(a), quality[a]);
            SolverConfig config = ws.config.solver;
            config.record_trace = ws.config.trace;
            if (run.scenario.has_mup())
                return solve_mup_counterfactual(evaluator,
                    OwnershipStructure::from_products(ws.category_product_list(static_cast<int>(a)),
                                                      ws.config.vat),
                    run.floors[a], ws.costs[a], run.taxes[a], p0, config);
            return solve_tax_counterfactual(evaluator,
                OwnershipStructure::from_products(ws.category_product_list(static_cast<int>(a)),
                                                  ws.config.vat),
                ws.costs[a], run.taxes[a], p0, config);
        });
    }
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        run.solves[a] = futures[a].get();
        run.prices[a] = run.solves[a].prices;
    }

    if (with_impacts) {
        const auto records = build_household_records(ws);
        run.impacts = run_step2(ws, quality, quantity, run.prices, records);
        run.impacts_no_reaction =
            run_step2(ws, quality, quantity, run.mechanical_prices, records);
        run.statistics = scenario_statistics(ws, run);
    }
    return run;
}

std::map<std::string, double> scenario_statistics(const Workspace& ws, const ScenarioRun& run) {
    std::map<std::string, double> out;
    const auto records = build_household_records(ws);

    auto weighted_mean = [&](auto&& value) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < run.impacts.size(); ++i) {
            const auto v = value(run.impacts[i], records[i]);
            if (!v.second) continue;
            num += run.impacts[i].weight * v.first;
            den += run.impacts[i].weight;
        }
        return den > 0.0 ? num / den : 0.0;
    };

    // headline: mean relative change in household ethanol and liters
    auto household_volume_change = [](const HouseholdImpact& imp, const HouseholdRecord& rec) {
        double q0 = 0.0, q1 = 0.0;
        for (std::size_t a = 0; a < kNumCategories; ++a) {
            q0 += rec.baseline[a].liters;
            q1 += rec.baseline[a].liters * (1.0 + imp.category[a].quantity_change);
        }
        return std::make_pair(q0 > 0.0 ? q1 / q0 - 1.0 : 0.0, q0 > 0.0);
    };
    out["pure_alcohol_change_pct"] =
        100.0 * weighted_mean([](const HouseholdImpact& imp, const HouseholdRecord&) {
            return std::make_pair(imp.total_ethanol_change, imp.baseline_ethanol_grams > 0.0);
        });
    out["purchase_volume_change_pct"] = 100.0 * weighted_mean(household_volume_change);
    out["utility_change_pct"] =
        100.0 * weighted_mean([](const HouseholdImpact& imp, const HouseholdRecord&) {
            return std::make_pair(imp.utility_change, imp.baseline_expenditure > 0.0);
        });
    out["ev_eur_year_mean"] =
        weighted_mean([](const HouseholdImpact& imp, const HouseholdRecord&) {
            return std::make_pair(imp.ev_eur_year, imp.baseline_expenditure > 0.0);
        });

    // the same headline without supply reactions
    {
        double num = 0.0, den = 0.0, vnum = 0.0, vden = 0.0;
        for (std::size_t i = 0; i < run.impacts_no_reaction.size(); ++i) {
            const auto& imp = run.impacts_no_reaction[i];
            if (imp.baseline_ethanol_grams > 0.0) {
                num += imp.weight * imp.total_ethanol_change;
                den += imp.weight;
            }
            const auto v = household_volume_change(imp, records[i]);
            if (v.second) {
                vnum += imp.weight * v.first;
                vden += imp.weight;
            }
        }
        out["pure_alcohol_change_pct_no_supply_reaction"] = den > 0 ? 100.0 * num / den : 0.0;
        out["purchase_volume_change_pct_no_supply_reaction"] =
            vden > 0 ? 100.0 * vnum / vden : 0.0;
    }

    // per-category aggregates from the step-2 product quantities
    std::array<Eigen::VectorXd, kNumCategories> q0, q1;
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        const int n = static_cast<int>(ws.category_products[a].size());
        q0[a] = Eigen::VectorXd::Zero(n);
        q1[a] = Eigen::VectorXd::Zero(n);
    }
    for (const auto& imp : run.impacts)
        for (std::size_t a = 0; a < kNumCategories; ++a) {
            if (!imp.category[a].active) continue;
            q0[a] += imp.weight * imp.category[a].quantity0;
            q1[a] += imp.weight * imp.category[a].quantity1;
        }

    double excise0_total = 0.0, excise1_total = 0.0, vat0_total = 0.0, vat1_total = 0.0;
    double profit0_total = 0.0, profit1_total = 0.0;
    std::map<std::string, double> profit0_size, profit1_size;
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        const auto local = ws.category_product_list(static_cast<int>(a));
        const Eigen::VectorXd p0 = ws.baseline_prices(static_cast<int>(a));
        const Eigen::VectorXd t0 = ws.baseline_taxes(static_cast<int>(a));
        const RevenueReport rev0 = tax_revenue_report(local, q0[a], p0, t0, ws.config.vat);
        const RevenueReport rev1 =
            tax_revenue_report(local, q1[a], run.prices[a], run.taxes[a], ws.config.vat);
        const int ai = static_cast<int>(a);
        const std::string suffix = cat_suffix(ai);
        out["volume_change_pct_" + suffix] =
            q0[a].sum() > 0 ? 100.0 * (q1[a].sum() / q0[a].sum() - 1.0) : 0.0;
        out["excise_change_pct_" + suffix] =
            rev0.excise[ai] > 0 ? 100.0 * (rev1.excise[ai] / rev0.excise[ai] - 1.0) : 0.0;
        out["vat_change_pct_" + suffix] =
            rev0.vat[ai] > 0 ? 100.0 * (rev1.vat[ai] / rev0.vat[ai] - 1.0) : 0.0;
        excise0_total += rev0.excise[ai];
        excise1_total += rev1.excise[ai];
        vat0_total += rev0.vat[ai];
        vat1_total += rev1.vat[ai];

        // mean unit values weighted by household probabilities: aggregate ratio
        const double unit0 = q0[a].sum() > 0 ? q0[a].dot(p0) / q0[a].sum() : 0.0;
        const double unit1 = q1[a].sum() > 0 ? q1[a].dot(run.prices[a]) / q1[a].sum() : 0.0;
        out["unit_price_change_pct_" + suffix] =
            unit0 > 0 ? 100.0 * (unit1 / unit0 - 1.0) : 0.0;

        // mean alcohol-content change across households
        double cnum = 0.0, cden = 0.0;
        for (const auto& imp : run.impacts)
            if (imp.category[a].active) {
                cnum += imp.weight * imp.category[a].content_change;
                cden += imp.weight;
            }
        out["content_change_pct_" + suffix] = cden > 0 ? 100.0 * cnum / cden : 0.0;

        // profits: total marginal profits with margins from the fixed point
        const Eigen::VectorXd m0 = p0 / (1.0 + ws.config.vat) - ws.costs[a] - t0;
        const Eigen::VectorXd m1 =
            run.prices[a] / (1.0 + ws.config.vat) - ws.costs[a] - run.taxes[a];
        const double pr0 = q0[a].dot(m0);
        const double pr1 = q1[a].dot(m1);
        out["profit_change_pct_" + suffix] = pr0 != 0.0 ? 100.0 * (pr1 / pr0 - 1.0) : 0.0;
        profit0_total += pr0;
        profit1_total += pr1;
        for (std::size_t j = 0; j < local.size(); ++j) {
            const std::string size_key =
                local[j].size_class == FirmSize::Small ? "small" : "large";
            profit0_size[size_key] += q0[a](j) * m0(j);
            profit1_size[size_key] += q1[a](j) * m1(j);
        }

        // decomposition into market-size, share and margin terms
        if (q0[a].sum() > 0 && q1[a].sum() > 0) {
            ProfitSide before{q0[a].sum(), q0[a] / q0[a].sum(), m0};
            ProfitSide after{q1[a].sum(), q1[a] / q1[a].sum(), m1};
            const ProfitDecomposition dec = profit_decomposition(before, after);
            out["profit_quantity_term_pct_" + suffix] = 100.0 * dec.quantity;
            out["profit_quality_term_pct_" + suffix] = 100.0 * dec.quality;
            out["profit_price_term_pct_" + suffix] = 100.0 * dec.price;
            out["profit_decomposition_gap_pct_" + suffix] = 100.0 * dec.gap;
        }
    }
    out["excise_change_pct_total"] =
        excise0_total > 0 ? 100.0 * (excise1_total / excise0_total - 1.0) : 0.0;
    out["vat_change_pct_total"] = vat0_total > 0 ? 100.0 * (vat1_total / vat0_total - 1.0) : 0.0;
    out["revenue_change_pct_total"] =
        excise0_total + vat0_total > 0
            ? 100.0 * ((excise1_total + vat1_total) / (excise0_total + vat0_total) - 1.0)
            : 0.0;
    out["excise_eur_total"] = excise1_total;
    out["vat_eur_total"] = vat1_total;
    out["profit_change_pct_total"] =
        profit0_total != 0.0 ? 100.0 * (profit1_total / profit0_total - 1.0) : 0.0;
    for (const auto& [key, v0] : profit0_size)
        out["profit_change_pct_" + key] =
            v0 != 0.0 ? 100.0 * (profit1_size[key] / v0 - 1.0) : 0.0;

    // implicit tax rate at the counterfactual
    {
        double sales = 0.0;
        for (std::size_t a = 0; a < kNumCategories; ++a)
            sales += q1[a].dot(run.prices[a]);
        const double tax = excise1_total + vat1_total;
        if (sales > tax && tax >= 0.0)
            out["implicit_tax_rate_pct"] = implicit_tax_rate(sales, tax);
    }

    // pass-through of the tax change (defined for tax scenarios)
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        const Eigen::VectorXd c0 = ws.costs[a] + ws.baseline_taxes(static_cast<int>(a));
        const Eigen::VectorXd c1 = ws.costs[a] + run.taxes[a];
        const auto pts = pass_through(ws.baseline_prices(static_cast<int>(a)), run.prices[a], c0,
                                      c1, ws.config.vat);
        if (pts.empty()) continue;
        double mean_pretax = 0.0;
        for (const auto& pt : pts) mean_pretax += pt.pretax;
        out["pass_through_pretax_mean_" + cat_suffix(static_cast<int>(a))] =
            mean_pretax / static_cast<double>(pts.size());
    }

    // heterogeneity panels
    for (auto grouping : {HeterogeneityGrouping::Income, HeterogeneityGrouping::Risk})
        for (const GroupStats& g : heterogeneity_tables(run.impacts, records, grouping)) {
            out["ethanol_change_pct_" + g.group] = g.ethanol_change_pct;
            out["utility_change_pct_" + g.group] = g.utility_change_pct;
            out["ev_eur_year_" + g.group] = g.ev_eur_year;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo replication of the simulation under parameter uncertainty

namespace {

std::array<MixedLogitModel, kNumCategories> perturb_quality(const Workspace& ws, Rng& rng) {
    std::array<MixedLogitModel, kNumCategories> out = ws.quality;
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        if (ws.quality_covariance[a].size() == 0) continue;
        MslConfig config;
        config.estimate_champagne_shift =
            static_cast<Category>(a) == Category::SparklingWines;
        const Eigen::VectorXd theta = msl_pack(ws.quality[a], config);
        if (theta.size() != ws.quality_covariance[a].rows()) continue;
        const Eigen::VectorXd draw =
            theta + gaussian_perturbation(ws.quality_covariance[a], rng);
        out[a] = msl_unpack(draw, ws.quality[a], config);
        out[a].price_sd = std::abs(out[a].price_sd);
    }
    return out;
}

QuaidsModel perturb_quantity(const Workspace& ws, Rng& rng) {
    if (ws.quantity_free_cov.size() == 0) return ws.quantity;
    const Eigen::VectorXd free =
        ws.quantity_free_estimates + gaussian_perturbation(ws.quantity_free_cov, rng);
    const Eigen::VectorXd full = ws.quantity_free_to_full * free + ws.quantity_full_offset;
    QuaidsModel model = ws.quantity;
    const int n = model.n_goods;
    const int m = model.demo_dim();
    for (int a = 0; a < n; ++a) {
        for (int c = 0; c < m; ++c) model.intercept_loadings(a, c) = full(a * m + c);
        for (int k = 0; k < n; ++k) model.price_coefs(a, k) = full(n * m + a * n + k);
        model.expenditure_coefs(a) = full(n * m + n * n + a);
        model.quadratic_coefs(a) = full(n * m + n * n + n + a);
    }
    return model;
}

QuaidsModel bootstrap_quantity(const Workspace& ws, Rng& rng) {
    // resample cluster-period share residuals, re-estimate the system
    std::vector<PseudoPanelRow> panel = ws.pseudo_panel;
    std::vector<Eigen::VectorXd> residuals;
    residuals.reserve(panel.size());
    for (const auto& row : panel) {
        QuaidsState state{row.log_prices, row.log_expenditure, row.demographics};
        residuals.push_back(row.shares - budget_shares(ws.quantity, state));
    }
    for (auto& row : panel) {
        const std::size_t pick = static_cast<std::size_t>(rng.uniform() * residuals.size());
        QuaidsState state{row.log_prices, row.log_expenditure, row.demographics};
        row.shares = budget_shares(ws.quantity, state) + residuals[std::min(pick, residuals.size() - 1)];
    }
    IrlsConfig config;
    config.max_iterations = 40;
    config.tol = 1e-7;
    return estimate_irls(panel, config).model;
}

}  // namespace

std::vector<std::map<std::string, double>> monte_carlo_statistics(const Workspace& ws,
                                                                  const Scenario& scenario,
                                                                  int replications,
                                                                  std::uint64_t seed) {
    std::vector<std::map<std::string, double>> samples;
    int failures = 0;
    for (int r = 0; r < replications; ++r) {
        Rng rng(substream_seed(seed, "mc:" + scenario.name, static_cast<std::uint64_t>(r)));
        try {
            const auto quality = perturb_quality(ws, rng);
            const QuaidsModel quantity = ws.config.bootstrap_scheme == "residual-bootstrap"
                                             ? bootstrap_quantity(ws, rng)
                                             : perturb_quantity(ws, rng);
            const ScenarioRun run = run_scenario(ws, scenario, quality, quantity, true);
            samples.push_back(run.statistics);
        } catch (const std::exception&) {
            ++failures;  // recorded and excluded
        }
    }
    if (failures > 0 && !samples.empty()) samples.front()["_mc_failures"] = failures;
    return samples;
}

// ---------------------------------------------------------------------------
// simulate / report / validate stages

void stage_simulate(const PipelineConfig& config) {
    const Workspace ws = load_workspace(config);
    for (const Scenario& scenario : ws.calibrated_scenarios) {
        if (std::find(config.scenarios.begin(), config.scenarios.end(), scenario.name) ==
            config.scenarios.end())
            continue;
        const ScenarioRun run = run_scenario(ws, scenario, ws.quality, ws.quantity, true);
        const auto dir = paths::scenario_dir(config, scenario.name);

        {
            CsvTable t({"product", "baseline_price", "counterfactual_price", "mechanical_price",
                        "floor", "tax0", "tax1", "binding_floor"});
            for (std::size_t a = 0; a < kNumCategories; ++a) {
                const Eigen::VectorXd p0 = ws.baseline_prices(static_cast<int>(a));
                const Eigen::VectorXd t0 = ws.baseline_taxes(static_cast<int>(a));
                std::set<int> binding(run.solves[a].binding_floor.begin(),
                                      run.solves[a].binding_floor.end());
                for (std::size_t j = 0; j < ws.category_products[a].size(); ++j)
                    t.add_row({CsvTable::format(ws.category_products[a][j]),
                               CsvTable::format(p0(j)), CsvTable::format(run.prices[a](j)),
                               CsvTable::format(run.mechanical_prices[a](j)),
                               CsvTable::format(run.floors[a](j)), CsvTable::format(t0(j)),
                               CsvTable::format(run.taxes[a](j)),
                               binding.count(static_cast<int>(j)) ? "1" : "0"});
            }
            t.write(dir / "prices.csv");
        }
        {
            const auto records = build_household_records(ws);
            CsvTable t({"household", "weight", "category", "active", "d_price_index",
                        "d_quantity_index", "d_quantity", "d_content", "d_ethanol",
                        "ethanol0_g", "expenditure0_eur"});
            for (std::size_t i = 0; i < run.impacts.size(); ++i) {
                const auto& imp = run.impacts[i];
                for (std::size_t a = 0; a < kNumCategories; ++a) {
                    const auto& c = imp.category[a];
                    const auto& base = records[i].baseline[a];
                    t.add_row({CsvTable::format(imp.household), CsvTable::format(imp.weight),
                               category_name(static_cast<Category>(a)), c.active ? "1" : "0",
                               CsvTable::format(c.price_index_change),
                               CsvTable::format(c.quantity_index_change),
                               CsvTable::format(c.quantity_change),
                               CsvTable::format(c.content_change),
                               CsvTable::format(c.ethanol_change),
                               CsvTable::format(base.ethanol_grams),
                               CsvTable::format(base.expenditure)});
                }
            }
            t.write(dir / "household_impacts.csv");
        }
        {
            CsvTable t({"household", "weight", "d_ethanol_total", "utility_change", "ev_eur_year",
                        "yv_eur_year", "ev_star_eur_year", "ethanol0_g"});
            for (const auto& imp : run.impacts)
                t.add_row({CsvTable::format(imp.household), CsvTable::format(imp.weight),
                           CsvTable::format(imp.total_ethanol_change),
                           CsvTable::format(imp.utility_change),
                           CsvTable::format(imp.ev_eur_year), CsvTable::format(imp.yv_eur_year),
                           CsvTable::format(imp.ev_star_eur_year),
                           CsvTable::format(imp.baseline_ethanol_grams)});
            t.write(dir / "household_totals.csv");
        }
        {
            // product quantities for the revenue identity checks
            CsvTable t({"product", "q0_liters", "q1_liters"});
            std::array<Eigen::VectorXd, kNumCategories> q0, q1;
            for (std::size_t a = 0; a < kNumCategories; ++a) {
                const int n = static_cast<int>(ws.category_products[a].size());
                q0[a] = Eigen::VectorXd::Zero(n);
                q1[a] = Eigen::VectorXd::Zero(n);
            }
            for (const auto& imp : run.impacts)
                for (std::size_t a = 0; a < kNumCategories; ++a)
                    if (imp.category[a].active) {
                        q0[a] += imp.weight * imp.category[a].quantity0;
                        q1[a] += imp.weight * imp.category[a].quantity1;
                    }
            for (std::size_t a = 0; a < kNumCategories; ++a)
                for (std::size_t j = 0; j < ws.category_products[a].size(); ++j)
                    t.add_row({CsvTable::format(ws.category_products[a][j]),
                               CsvTable::format(q0[a](j)), CsvTable::format(q1[a](j))});
            t.write(dir / "quantities.csv");
        }
        if (config.trace)
            for (std::size_t a = 0; a < kNumCategories; ++a) {
                CsvTable t({"iteration", "residual"});
                for (const auto& [it, res] : run.solves[a].trace)
                    t.add_row({CsvTable::format(it), CsvTable::format(res)});
                t.write(dir / cat_file("trace", static_cast<int>(a), ".csv"));
            }
        {
            CsvTable t({"statistic", "value"});
            for (const auto& [key, value] : run.statistics)
                t.add_row({key, CsvTable::format(value)});
            t.write(dir / "statistics.csv");
        }
        {
            Json solver = Json::array();
            for (std::size_t a = 0; a < kNumCategories; ++a)
                solver.push_back(Json{{"category", cat_suffix(static_cast<int>(a))},
                                      {"converged", run.solves[a].converged},
                                      {"iterations", run.solves[a].iterations},
                                      {"foc_residual", run.solves[a].foc_residual},
                                      {"binding_floor_products",
                                       static_cast<int>(run.solves[a].binding_floor.size())}});
            write_json(Json{{"scenario", scenario.name},
                            {"tax_rate", scenario.tax_rate},
                            {"solver", solver}},
                       dir / "manifest.json");
        }
        if (config.replications > 0) {
            const auto samples =
                monte_carlo_statistics(ws, scenario, config.replications, config.seed);
            CsvTable t({"replication", "statistic", "value"});
            for (std::size_t r = 0; r < samples.size(); ++r)
                for (const auto& [key, value] : samples[r])
                    t.add_row({CsvTable::format(static_cast<int>(r)), key,
                               CsvTable::format(value)});
            t.write(dir / "mc_samples.csv");
        }
    }
    stage_report(config);
}

namespace {

struct ReportRow {
    std::string scenario;
    std::string statistic;
    double point = 0.0;
    bool has_interval = false;
    double lo = 0.0, hi = 0.0;
};

void write_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows,
                  const std::vector<std::string>& prefixes) {
    CsvTable t({"scenario", "statistic", "point", "lo95", "hi95"});
    for (const auto& row : rows) {
        bool matches = false;
        for (const auto& p : prefixes)
            if (row.statistic.rfind(p, 0) == 0) matches = true;
        if (!matches) continue;
        t.add_row({row.scenario, row.statistic, CsvTable::format(row.point),
                   row.has_interval ? CsvTable::format(row.lo) : CsvTable::format(row.point),
                   row.has_interval ? CsvTable::format(row.hi) : CsvTable::format(row.point)});
    }
    t.write(path);
}

}  // namespace

void stage_report(const PipelineConfig& config) {
    std::vector<ReportRow> rows;
    for (const std::string& name : config.scenarios) {
        const auto dir = paths::scenario_dir(config, name);
        const auto stats_path = dir / "statistics.csv";
        require_artifact(stats_path, "simulate");
        const CsvTable stats = CsvTable::read(stats_path);
        std::map<std::string, std::vector<double>> samples;
        const auto mc_path = dir / "mc_samples.csv";
        if (std::filesystem::exists(mc_path)) {
            const CsvTable mc = CsvTable::read(mc_path);
            for (std::size_t r = 0; r < mc.rows(); ++r)
                samples[mc.cell(r, "statistic")].push_back(mc.number(r, "value"));
        }
        for (std::size_t r = 0; r < stats.rows(); ++r) {
            ReportRow row;
            row.scenario = name;
            row.statistic = stats.cell(r, "statistic");
            row.point = stats.number(r, "value");
            auto it = samples.find(row.statistic);
            if (it != samples.end() && it->second.size() >= 2) {
                const Percentiles p = percentile_interval(it->second);
                row.has_interval = true;
                row.lo = p.lo;
                row.hi = p.hi;
            }
            rows.push_back(row);
        }
    }
    const auto dir = paths::reports(config);
    write_report(dir / "impacts_pure_alcohol.csv", rows,
                 {"pure_alcohol_", "purchase_volume_"});
    write_report(dir / "quantity_effects.csv", rows, {"volume_change_pct_", "unit_price_"});
    write_report(dir / "quality_effects.csv", rows, {"content_change_pct_"});
    write_report(dir / "heterogeneity.csv", rows,
                 {"ethanol_change_pct_", "utility_change_pct", "ev_eur_year"});
    write_report(dir / "profits.csv", rows, {"profit_"});
    write_report(dir / "tax_revenue.csv", rows,
                 {"excise_", "vat_", "revenue_", "implicit_", "pass_through_"});
}

int stage_validate(const PipelineConfig& config) {
    int violations = 0;
    auto fail = [&](const std::string& what) {
        ++violations;
        std::cerr << "validate: " << what << "\n";
    };
    const Workspace ws = load_workspace(config, true, true, false);

    // pseudo-panel identities: price x adjusted quantity = expenditure; shares add up
    {
        const CsvTable t = CsvTable::read(paths::models(config) / "pseudo_panel.csv");
        std::map<std::pair<int, int>, double> share_sum;
        for (std::size_t r = 0; r < t.rows(); ++r) {
            const double expenditure = t.number(r, "expenditure");
            const double quantity = t.number(r, "quantity_L");
            const double quality = t.number(r, "quality_index");
            const double lnp = t.number(r, "lnP");
            if (quantity > 0.0) {
                const double reconstructed = std::exp(lnp) * quantity * (1.0 + quality);
                if (std::abs(reconstructed - expenditure) > 1e-8 * (1.0 + expenditure))
                    fail("pseudo_panel row " + std::to_string(r) +
                         ": price x adjusted quantity != expenditure");
            }
            share_sum[{static_cast<int>(t.integer(r, "cluster")),
                       static_cast<int>(t.integer(r, "period"))}] += t.number(r, "share");
        }
        for (const auto& [key, total] : share_sum)
            if (std::abs(total - 1.0) > 1e-9)
                fail("pseudo_panel cluster " + std::to_string(key.first) + " period " +
                     std::to_string(key.second) + ": shares sum to " + std::to_string(total));
    }
    // quantity model constraints
    if (ws.quantity.constraint_violation() > 1e-8)
        fail("quantity model violates adding-up/homogeneity/symmetry");

    // per-scenario artifacts
    for (const std::string& name : config.scenarios) {
        const auto dir = paths::scenario_dir(config, name);
        if (!std::filesystem::exists(dir / "prices.csv")) continue;  // not simulated yet
        const CsvTable prices = CsvTable::read(dir / "prices.csv");
        std::map<int, std::pair<double, double>> price_tax;  // product -> (p1, t1)
        for (std::size_t r = 0; r < prices.rows(); ++r) {
            const double p1 = prices.number(r, "counterfactual_price");
            const double floor = prices.number(r, "floor");
            if (p1 < floor - 1e-9)
                fail(name + ": price below the floor for product " + prices.cell(r, "product"));
            price_tax[static_cast<int>(prices.integer(r, "product"))] = {
                p1, prices.number(r, "tax1")};
        }
        // revenue accounting: excise + VAT + producer = expenditure
        if (std::filesystem::exists(dir / "quantities.csv")) {
            const CsvTable q = CsvTable::read(dir / "quantities.csv");
            double excise = 0.0, vat = 0.0, producer = 0.0, expenditure = 0.0;
            for (std::size_t r = 0; r < q.rows(); ++r) {
                const int id = static_cast<int>(q.integer(r, "product"));
                const double q1 = q.number(r, "q1_liters");
                const auto [p1, t1] = price_tax.at(id);
                excise += q1 * t1;
                vat += q1 * p1 * config.vat / (1.0 + config.vat);
                producer += q1 * (p1 / (1.0 + config.vat) - t1);
                expenditure += q1 * p1;
            }
            if (std::abs(excise + vat + producer - expenditure) >
                1e-9 * (1.0 + std::abs(expenditure)))
                fail(name + ": revenue accounting does not close");
        }
        // the ethanol identity per household-category row
        if (std::filesystem::exists(dir / "household_impacts.csv")) {
            const CsvTable imp = CsvTable::read(dir / "household_impacts.csv");
            for (std::size_t r = 0; r < imp.rows(); ++r) {
                if (imp.integer(r, "active") == 0) continue;
                const double dq = imp.number(r, "d_quantity");
                const double dpsi = imp.number(r, "d_content");
                const double de = imp.number(r, "d_ethanol");
                if (de == 0.0) continue;  // zero-ethanol households report zero
                if (std::abs(de - (dq * (1.0 + dpsi) + dpsi)) > 1e-12)
                    fail(name + ": ethanol identity violated at row " + std::to_string(r));
            }
        }
    }
    if (violations == 0) std::cout << "validate: all invariants hold\n";
    return violations == 0 ? 0 : 1;
}

}  // namespace mupsim
