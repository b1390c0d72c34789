#pragma once

#include <filesystem>

#include "mupsim/pipeline.hpp"

namespace mupsim {

inline std::string cat_file(const std::string& stem, int a, const std::string& ext) {
    return stem + "_" + category_name(static_cast<Category>(a)) + ext;
}

namespace paths {
std::filesystem::path data(const PipelineConfig& c);
std::filesystem::path models(const PipelineConfig& c);
std::filesystem::path supply(const PipelineConfig& c);
std::filesystem::path reports(const PipelineConfig& c);
std::filesystem::path scenario_dir(const PipelineConfig& c, const std::string& name);
}  // namespace paths

void require_artifact(const std::filesystem::path& p, const std::string& stage);

void write_products_csv(const std::filesystem::path& path, const std::vector<Product>& products);
std::vector<Product> read_products_csv(const std::filesystem::path& path);
void write_households_csv(const std::filesystem::path& path,
                          const std::vector<Household>& households);
std::vector<Household> read_households_csv(const std::filesystem::path& path);
void write_prices_csv(const std::filesystem::path& path, const Workspace& ws);

}  // namespace mupsim
