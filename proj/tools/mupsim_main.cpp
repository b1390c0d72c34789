#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <string>

#include "mupsim/csv.hpp"
#include "mupsim/pipeline.hpp"

namespace {

// flags and environment overrides (MUPSIM_*) applied on top of the config file
struct CliOptions {
    std::string config_path;
    std::string out_dir;
    std::string scenario;
    long long seed = -1;
    int replications = -1;
    bool trace = false;
    bool laspeyres = false;
};

std::string env_or_empty(const char* name) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
}

mupsim::PipelineConfig resolve_config(const CliOptions& opts) {
    mupsim::PipelineConfig config;
    std::string config_path = opts.config_path;
    if (config_path.empty()) config_path = env_or_empty("MUPSIM_CONFIG");
    if (!config_path.empty()) {
        config = mupsim::load_pipeline_config(config_path);
    } else if (!opts.out_dir.empty() &&
               std::filesystem::exists(std::filesystem::path(opts.out_dir) / "config.json")) {
        // reuse the configuration recorded next to the artifacts
        config = mupsim::load_pipeline_config(std::filesystem::path(opts.out_dir) / "config.json");
    }
    if (const auto v = env_or_empty("MUPSIM_OUT"); !v.empty()) config.out_dir = v;
    if (const auto v = env_or_empty("MUPSIM_SEED"); !v.empty()) config.seed = std::stoull(v);
    if (const auto v = env_or_empty("MUPSIM_REPLICATIONS"); !v.empty())
        config.replications = std::stoi(v);
    if (!opts.out_dir.empty()) config.out_dir = opts.out_dir;
    if (opts.seed >= 0) config.seed = static_cast<std::uint64_t>(opts.seed);
    if (opts.replications >= 0) config.replications = opts.replications;
    if (opts.trace) config.trace = true;
    if (opts.laspeyres) config.laspeyres = true;
    if (!opts.scenario.empty()) config.scenarios = {opts.scenario};
    config.validate();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"market simulation pipeline for alcohol pricing policies"};
    app.require_subcommand(1);

    CliOptions opts;
    app.add_option("--config", opts.config_path, "pipeline configuration JSON");
    app.add_option("--out", opts.out_dir, "output directory (overrides the config)");
    app.add_option("--seed", opts.seed, "master seed (overrides the config)");
    app.add_option("--scenario", opts.scenario, "restrict to one scenario");
    app.add_option("--replications", opts.replications, "Monte Carlo replications");
    app.add_flag("--trace", opts.trace, "emit solver iteration traces");
    app.add_flag("--laspeyres", opts.laspeyres,
                 "use fixed-share price indices in the quantity system");

    auto* generate = app.add_subcommand("generate", "draw the synthetic scanner panel");
    auto* est_quality = app.add_subcommand(
        "estimate-quality", "first-stage price regressions, taste models and quality indices");
    auto* est_quantity =
        app.add_subcommand("estimate-quantity", "across-category demand system");
    auto* cal_supply =
        app.add_subcommand("calibrate-supply", "margins and marginal costs from the demand side");
    auto* cal_tax = app.add_subcommand("calibrate-tax", "revenue-matched scenario tax rates");
    auto* simulate =
        app.add_subcommand("simulate", "solve counterfactual equilibria and compute outcomes");
    auto* report = app.add_subcommand("report", "assemble the outcome tables");
    auto* validate = app.add_subcommand("validate", "check pipeline invariants on the artifacts");

    for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();
    CLI11_PARSE(app, argc, argv);

    try {
        const mupsim::PipelineConfig config = resolve_config(opts);
        if (generate->parsed()) mupsim::stage_generate(config);
        if (est_quality->parsed()) mupsim::stage_estimate_quality(config);
        if (est_quantity->parsed()) mupsim::stage_estimate_quantity(config);
        if (cal_supply->parsed()) mupsim::stage_calibrate_supply(config);
        if (cal_tax->parsed()) mupsim::stage_calibrate_tax(config);
        if (simulate->parsed()) mupsim::stage_simulate(config);
        if (report->parsed()) mupsim::stage_report(config);
        if (validate->parsed()) return mupsim::stage_validate(config);
    } catch (const mupsim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const mupsim::MissingArtifact& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mupsim::CsvError& e) {
        std::cerr << "schema error: " << e.what() << "\n";
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::runtime_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
