#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "mupsim/equilibrium.hpp"
#include "mupsim/policy.hpp"
#include "mupsim/quality_demand.hpp"
#include "mupsim/quantity_demand.hpp"
#include "mupsim/synthetic.hpp"

namespace mupsim {

using Json = nlohmann::ordered_json;

Json to_json(const MixedLogitModel& model, const std::vector<std::string>& feature_names,
             const DrawRule& rule);
MixedLogitModel mixed_logit_from_json(const Json& j);

Json to_json(const QuaidsModel& model);
QuaidsModel quaids_from_json(const Json& j);

Json to_json(const UtilityDesignSpec& spec);
UtilityDesignSpec design_spec_from_json(const Json& j);

Json to_json(const DrawRule& rule);
DrawRule draw_rule_from_json(const Json& j);

Json to_json(const SolverConfig& config);
SolverConfig solver_config_from_json(const Json& j);

void write_json(const Json& j, const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);

// stable content hash for manifests
std::string json_digest(const Json& j);

}  // namespace mupsim
