#include "mupsim/market_data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace mupsim {

void Product::validate() const {
    if (!(degree >= 0.0 && degree <= 100.0))
        throw std::domain_error("product " + std::to_string(id) + ": degree outside [0,100]");
    if (!(price > 0.0))
        throw std::domain_error("product " + std::to_string(id) + ": nonpositive price");
    if (!(excise >= 0.0))
        throw std::domain_error("product " + std::to_string(id) + ": negative excise");
    if (!(unit_volume > 0.0))
        throw std::domain_error("product " + std::to_string(id) + ": nonpositive unit volume");
}

void TaxSchedule::validate() const {
    if (rate < 0.0) throw std::domain_error("tax schedule: negative rate");
    if (vat < 0.0) throw std::domain_error("tax schedule: negative VAT rate");
    for (std::size_t b = 0; b + 1 < band_edges.size(); ++b)
        if (!(band_edges[b] < band_edges[b + 1]))
            throw std::domain_error("tax schedule: band edges not increasing");
    if (band_edges.front() != 0.0 || band_edges.back() != 100.0)
        throw std::domain_error("tax schedule: bands must partition [0,100]");
    if (kind == TaxKind::ProgressiveVolumetric)
        for (std::size_t b = 0; b + 1 < band_multipliers.size(); ++b)
            if (!(band_multipliers[b] < band_multipliers[b + 1]))
                throw std::domain_error("tax schedule: multipliers must be strictly increasing");
}

double TaxSchedule::effective_degrees(double degree) const {
    switch (kind) {
        case TaxKind::Current:
            return 0.0;
        case TaxKind::UniformVolumetric:
            return degree;
        case TaxKind::ProgressiveVolumetric: {
            double total = 0.0;
            for (std::size_t b = 0; b + 1 < band_edges.size(); ++b) {
                const double in_band =
                    std::clamp(degree, band_edges[b], band_edges[b + 1]) - band_edges[b];
                total += band_multipliers[b] * in_band;
            }
            return total;
        }
    }
    return 0.0;
}

std::string tax_kind_name(TaxKind k) {
    switch (k) {
        case TaxKind::Current: return "current";
        case TaxKind::UniformVolumetric: return "uniform-volumetric";
        case TaxKind::ProgressiveVolumetric: return "progressive-volumetric";
    }
    return "current";
}

TaxKind tax_kind_from_name(const std::string& name) {
    if (name == "current") return TaxKind::Current;
    if (name == "uniform-volumetric") return TaxKind::UniformVolumetric;
    if (name == "progressive-volumetric") return TaxKind::ProgressiveVolumetric;
    throw std::invalid_argument("unknown tax kind: " + name);
}

double ethanol_grams(double degree, double volume) {
    if (!(degree >= 0.0 && degree <= 100.0))
        throw std::domain_error("ethanol_grams: degree outside [0,100]");
    if (volume < 0.0) throw std::domain_error("ethanol_grams: negative volume");
    return 8.0 * degree * volume;  // 0.8 g/mL of ethanol, degree is % by volume
}

double standard_drinks(double degree, double volume) {
    return ethanol_grams(degree, volume) / 10.0;
}

double tax_per_liter(const Product& product, const TaxSchedule& schedule) {
    if (schedule.kind == TaxKind::Current) return product.excise;
    return schedule.rate * schedule.effective_degrees(product.degree);
}

double mup_floor_price(double degree, double mup_per_drink) {
    if (mup_per_drink < 0.0) throw std::domain_error("mup_floor_price: negative rate");
    // standard drinks per liter = 8 * degree / 10
    return mup_per_drink * 0.8 * degree;
}

double mup_floor_price(const Product& product, double mup_per_drink) {
    return mup_floor_price(product.degree, mup_per_drink);
}

double implicit_tax_rate(double sales, double tax_revenue) {
    if (!(tax_revenue >= 0.0) || !(sales > tax_revenue))
        throw std::domain_error("implicit_tax_rate: requires sales > tax_revenue >= 0");
    return 100.0 * tax_revenue / (sales - tax_revenue);
}

int Household::n_adults() const {
    int n = 0;
    for (int c : adult_males) n += c;
    for (int c : adult_females) n += c;
    return n;
}

int Household::household_type() const {
    int males = 0, females = 0;
    for (int c : adult_males) males += c;
    for (int c : adult_females) females += c;
    if (males + females == 1) return males == 1 ? 0 : 1;
    return children > 0 ? 3 : 2;
}

void Household::validate() const {
    if (!(weight > 0.0)) throw std::domain_error("household: nonpositive weight");
    if (income < 0 || income >= kIncomeLevels) throw std::domain_error("household: bad income level");
    if (age < 0 || age >= kAgeLevels) throw std::domain_error("household: bad age level");
    if (habit < 0 || habit >= kHabitLevels) throw std::domain_error("household: bad habit level");
    if (children < 0) throw std::domain_error("household: negative children count");
    for (int c : adult_males)
        if (c < 0) throw std::domain_error("household: negative cell count");
    for (int c : adult_females)
        if (c < 0) throw std::domain_error("household: negative cell count");
    if (n_adults() == 0) throw std::domain_error("household: no adults");
}

std::array<double, kDemoDim> demographics(const Household& h) {
    std::array<double, kDemoDim> d{};
    if (h.income > 0) d[h.income - 1] = 1.0;     // slots 0..2
    if (h.age > 0) d[3 + h.age - 1] = 1.0;       // slots 3..4
    if (h.habit > 0) d[5 + h.habit - 1] = 1.0;   // slots 5..6
    return d;
}

int cluster_key(int household_type, int age, int income, int habit) {
    // sparse cells are merged: couples with and without children form one
    // type, and the four income categories collapse to two groups
    const int type_group = std::min(household_type, 2);
    const int income_group = income / 2;
    return ((type_group * kAgeLevels + age) * 2 + income_group) * kHabitLevels + habit;
}

int cluster_demographics_dim(int n_periods) {
    return 1 + (kHouseholdTypes - 1) + (kAgeLevels - 1) + (kIncomeLevels - 1) +
           (kHabitLevels - 1) + 2 + (n_periods - 1);
}

Eigen::VectorXd cluster_demographics(const Cluster& cluster,
                                     const std::vector<Household>& households, int period,
                                     int n_periods) {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(cluster_demographics_dim(n_periods));
    int at = 0;
    d(at++) = 1.0;
    for (int t = 1; t < kHouseholdTypes; ++t) d(at++) = cluster.household_type == t ? 1.0 : 0.0;
    for (int a = 1; a < kAgeLevels; ++a) d(at++) = cluster.age == a ? 1.0 : 0.0;
    for (int i = 1; i < kIncomeLevels; ++i) d(at++) = cluster.income == i ? 1.0 : 0.0;
    for (int h = 1; h < kHabitLevels; ++h) d(at++) = cluster.habit == h ? 1.0 : 0.0;
    double region = 0.0, city = 0.0, wsum = 0.0;
    for (int idx : cluster.members) {
        const Household& h = households[idx];
        region += h.weight * (h.producing_region ? 1.0 : 0.0);
        city += h.weight * (h.small_city ? 1.0 : 0.0);
        wsum += h.weight;
    }
    d(at++) = wsum > 0.0 ? region / wsum : 0.0;
    d(at++) = wsum > 0.0 ? city / wsum : 0.0;
    for (int t = 1; t < n_periods; ++t) d(at++) = period == t ? 1.0 : 0.0;
    return d;
}

std::vector<Cluster> build_clusters(const std::vector<Household>& households) {
    std::map<int, Cluster> by_key;
    for (std::size_t i = 0; i < households.size(); ++i) {
        const Household& h = households[i];
        const int key = cluster_key(h.household_type(), h.age, h.income, h.habit);
        Cluster& c = by_key[key];
        if (c.members.empty()) {
            c.household_type = h.household_type();
            c.age = h.age;
            c.income = h.income;
            c.habit = h.habit;
        }
        c.weight += h.weight;
        c.members.push_back(static_cast<int>(i));
    }
    std::vector<Cluster> clusters;
    clusters.reserve(by_key.size());
    int id = 0;
    for (auto& [key, c] : by_key) {
        c.id = id++;
        clusters.push_back(std::move(c));
    }
    return clusters;
}

}  // namespace mupsim
