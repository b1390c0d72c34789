#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "mupsim/categories.hpp"

namespace mupsim {

enum class FirmSize { Small, Large };

// One brand x retailer x subcategory variety. Prices are €/L VAT-inclusive,
// the excise is the baseline per-liter duty. Alcohol content in grams per
// liter is always derived as 8 * degree, never stored.
struct Product {
    int id = 0;
    Category category = Category::StillWines;
    std::string subcategory;
    std::string brand;
    std::string manufacturer;  // equals `retailer` for private labels
    std::string retailer;
    FirmSize size_class = FirmSize::Large;
    double degree = 0.0;       // %vol, in [0,100]
    double unit_volume = 1.0;  // liters per market unit
    double price = 1.0;        // €/L, VAT-inclusive baseline
    double excise = 0.0;       // €/L baseline duty T0

    bool private_label() const { return manufacturer == retailer; }
    void validate() const;
};

enum class TaxKind { Current, UniformVolumetric, ProgressiveVolumetric };

// Excise design. The progressive schedule applies an increasing marginal rate
// over six degree bands, so the per-liter tax is continuous and convex in the
// degree.
struct TaxSchedule {
    TaxKind kind = TaxKind::Current;
    double rate = 0.0;  // €/(degree·L)
    std::array<double, 7> band_edges = {0.0, 5.0, 10.0, 15.0, 25.0, 45.0, 100.0};
    std::array<double, 6> band_multipliers = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    double vat = 0.20;

    void validate() const;
    // Effective taxed degree-units per liter for a product of degree d:
    // tax = rate * effective_degrees(d).
    double effective_degrees(double degree) const;
};

std::string tax_kind_name(TaxKind k);
TaxKind tax_kind_from_name(const std::string& name);

// Grams of pure ethanol in `volume` liters at `degree` %vol.
double ethanol_grams(double degree, double volume);
// Standard drinks (10 g of ethanol each).
double standard_drinks(double degree, double volume);

// €/L excise owed by the product under the schedule.
double tax_per_liter(const Product& product, const TaxSchedule& schedule);

// Consumer price floor (€/L) implied by a minimum unit price in €/standard drink.
double mup_floor_price(const Product& product, double mup_per_drink);
double mup_floor_price(double degree, double mup_per_drink);

// 100 * tax_revenue / (sales - tax_revenue); requires sales > tax_revenue >= 0.
double implicit_tax_rate(double sales, double tax_revenue);

// Adult head-count cells for the individualization model: 5 age bands x 3
// education levels, per gender. Band 0 (16-25) carries no education split; the
// generator only populates its first education slot.
inline constexpr int kAgeBands = 5;
inline constexpr int kEduLevels = 3;
inline constexpr int kAdultCells = kAgeBands * kEduLevels;
inline int adult_cell(int age_band, int edu) { return age_band * kEduLevels + edu; }

inline constexpr int kIncomeLevels = 4;  // 0 = upper (reference) .. 3 = lower
inline constexpr int kAgeLevels = 3;     // shopper age: 0 = <35 (ref), 1 = 35-55, 2 = >55
inline constexpr int kHabitLevels = 3;   // 2013 drinks/adult/day: 0 = <=1 (ref), 1 = (1,2], 2 = >2

struct Household {
    int id = 0;
    double weight = 1.0;
    int income = 0;  // kIncomeLevels categories
    double income_eur = 2000.0;  // monthly income behind the category
    int age = 0;     // shopper age category
    int habit = 0;   // habit category from prior-year purchases
    std::array<int, kAdultCells> adult_males{};
    std::array<int, kAdultCells> adult_females{};
    int children = 0;
    bool producing_region = false;
    bool small_city = false;

    int n_adults() const;
    // single-male / single-female / couple / couple-with-children
    int household_type() const;
    void validate() const;
};

inline constexpr int kHouseholdTypes = 4;

// Demographic dummy vector D^h entering the price-sensitivity shift and the
// demand-side interactions: income (3 non-reference levels), age (2), habit (2).
inline constexpr int kDemoDim = 7;
std::array<double, kDemoDim> demographics(const Household& h);

// Pseudo-panel cell: households grouped on type x age x income x habit.
struct Cluster {
    int id = 0;
    int household_type = 0;
    int age = 0;
    int income = 0;
    int habit = 0;
    double weight = 0.0;  // summed member weights
    std::vector<int> members;  // household indices
};

int cluster_key(int household_type, int age, int income, int habit);
std::vector<Cluster> build_clusters(const std::vector<Household>& households);

// Demand-system shifter vector for a cluster-period: constant, the cluster's
// defining cells as dummies, member shares for region and city size, and
// period effects. Shared by the generator and the estimator.
Eigen::VectorXd cluster_demographics(const Cluster& cluster,
                                     const std::vector<Household>& households, int period,
                                     int n_periods);
int cluster_demographics_dim(int n_periods);

}  // namespace mupsim
