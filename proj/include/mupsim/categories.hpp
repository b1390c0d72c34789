#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace mupsim {

// The six alcohol markets, modeled as disjoint.
enum class Category : int {
    Ciders = 0,
    Beers,
    Aperitifs,
    Spirits,
    StillWines,
    SparklingWines,
};

inline constexpr std::size_t kNumCategories = 6;

inline constexpr std::array<Category, kNumCategories> all_categories() {
    return {Category::Ciders,     Category::Beers,      Category::Aperitifs,
            Category::Spirits,    Category::StillWines, Category::SparklingWines};
}

inline const std::string& category_name(Category c) {
    static const std::array<std::string, kNumCategories> names = {
        "ciders", "beers", "aperitifs", "spirits", "still-wines", "sparkling-wines"};
    return names[static_cast<int>(c)];
}

inline Category category_from_name(const std::string& name) {
    for (Category c : all_categories())
        if (category_name(c) == name) return c;
    throw std::invalid_argument("unknown category: " + name);
}

inline int category_index(Category c) { return static_cast<int>(c); }

}  // namespace mupsim
