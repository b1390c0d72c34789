#include "mupsim/individualize.hpp"

#include <cmath>
#include <stdexcept>

namespace mupsim {

std::vector<std::string> individualization_moderator_names() {
    return {"small_city", "children", "habit1", "habit2",
            "income1",    "income2",  "income3", "producing_region"};
}

Eigen::VectorXd individualization_moderators(const Household& h) {
    Eigen::VectorXd d(8);
    d(0) = h.small_city ? 1.0 : 0.0;
    d(1) = static_cast<double>(h.children);
    d(2) = h.habit == 1 ? 1.0 : 0.0;
    d(3) = h.habit == 2 ? 1.0 : 0.0;
    d(4) = h.income == 1 ? 1.0 : 0.0;
    d(5) = h.income == 2 ? 1.0 : 0.0;
    d(6) = h.income == 3 ? 1.0 : 0.0;
    d(7) = h.producing_region ? 1.0 : 0.0;
    return d;
}

double IndividualizationModel::household_scale(const Household& h) const {
    return std::exp(moderator_coefs.dot(individualization_moderators(h)));
}

double IndividualizationModel::predicted(const Household& h) const {
    double cells = 0.0;
    for (int c = 0; c < kAdultCells; ++c) {
        cells += h.adult_males[c] * male_coefs(c);
        cells += h.adult_females[c] * female_coefs(c);
    }
    return cells * household_scale(h);
}

IndividualizationModel individualize(const std::vector<Household>& households,
                                     const std::vector<double>& household_ethanol,
                                     const std::vector<double>& weights,
                                     const IndividualizeConfig& config) {
    const int n = static_cast<int>(households.size());
    if (n == 0 || household_ethanol.size() != households.size())
        throw std::invalid_argument("individualize: empty or mismatched inputs");
    const int n_mod = 8;

    // cells observed in the data; unobserved ones are dropped
    std::vector<bool> male_seen(kAdultCells, false), female_seen(kAdultCells, false);
    for (const Household& h : households)
        for (int c = 0; c < kAdultCells; ++c) {
            if (h.adult_males[c] > 0) male_seen[c] = true;
            if (h.adult_females[c] > 0) female_seen[c] = true;
        }

    IndividualizationModel model;
    model.male_coefs = Eigen::VectorXd::Zero(kAdultCells);
    model.female_coefs = Eigen::VectorXd::Zero(kAdultCells);
    model.moderator_coefs = Eigen::VectorXd::Zero(n_mod);
    model.moderator_names = individualization_moderator_names();
    for (int c = 0; c < kAdultCells; ++c)
        if (!male_seen[c] && !female_seen[c]) model.dropped_cells.push_back(c);

    // start from the weighted mean per adult in every observed cell
    double mean_per_adult = 0.0, wsum = 0.0;
    for (int i = 0; i < n; ++i) {
        const int adults = households[i].n_adults();
        if (adults == 0) continue;
        mean_per_adult += weights[i] * household_ethanol[i] / adults;
        wsum += weights[i];
    }
    mean_per_adult = std::max(mean_per_adult / std::max(wsum, 1e-12), 1e-6);
    for (int c = 0; c < kAdultCells; ++c) {
        if (male_seen[c]) model.male_coefs(c) = mean_per_adult;
        if (female_seen[c]) model.female_coefs(c) = 0.8 * mean_per_adult;
    }

    // parameter order: observed male cells, observed female cells, moderators
    std::vector<int> male_idx, female_idx;
    for (int c = 0; c < kAdultCells; ++c) {
        if (male_seen[c]) male_idx.push_back(c);
        if (female_seen[c]) female_idx.push_back(c);
    }
    const int n_beta = static_cast<int>(male_idx.size() + female_idx.size());
    const int n_par = n_beta + n_mod;

    Eigen::MatrixXd mods(n, n_mod);
    for (int i = 0; i < n; ++i) mods.row(i) = individualization_moderators(households[i]).transpose();

    auto rss_at = [&](const IndividualizationModel& m) {
        double rss = 0.0;
        for (int i = 0; i < n; ++i) {
            const double r = household_ethanol[i] - m.predicted(households[i]);
            rss += weights[i] * r * r;
        }
        return rss;
    };

    double rss = rss_at(model);
    Eigen::MatrixXd jac(n, n_par);
    Eigen::VectorXd resid(n);
    for (int iter = 0; iter < config.max_iterations; ++iter) {
        model.iterations = iter + 1;
        // residuals and Jacobian of predictions
        for (int i = 0; i < n; ++i) {
            const Household& h = households[i];
            const double scale = model.household_scale(h);
            double cells = 0.0;
            for (int c = 0; c < kAdultCells; ++c)
                cells += h.adult_males[c] * model.male_coefs(c) +
                         h.adult_females[c] * model.female_coefs(c);
            const double pred = cells * scale;
            resid(i) = household_ethanol[i] - pred;
            int p = 0;
            for (int c : male_idx) jac(i, p++) = h.adult_males[c] * scale;
            for (int c : female_idx) jac(i, p++) = h.adult_females[c] * scale;
            for (int m = 0; m < n_mod; ++m) jac(i, n_beta + m) = pred * mods(i, m);
        }
        // weighted Gauss-Newton step with a small ridge
        const Eigen::VectorXd sw = Eigen::Map<const Eigen::VectorXd>(weights.data(), n).cwiseSqrt();
        const Eigen::MatrixXd jw = sw.asDiagonal() * jac;
        const Eigen::VectorXd rw = sw.asDiagonal() * resid;
        Eigen::MatrixXd jtj = jw.transpose() * jw;
        jtj.diagonal().array() += 1e-10 * (1.0 + jtj.diagonal().mean());
        const Eigen::VectorXd step = jtj.ldlt().solve(jw.transpose() * rw);

        // backtracking with projection onto the nonnegative cell levels
        double t = 1.0;
        bool improved = false;
        IndividualizationModel trial = model;
        for (int ls = 0; ls < 30; ++ls) {
            trial = model;
            int p = 0;
            for (int c : male_idx)
                trial.male_coefs(c) = std::max(0.0, model.male_coefs(c) + t * step(p++));
            for (int c : female_idx)
                trial.female_coefs(c) = std::max(0.0, model.female_coefs(c) + t * step(p++));
            trial.moderator_coefs = model.moderator_coefs + t * step.tail(n_mod);
            const double trial_rss = rss_at(trial);
            if (trial_rss < rss) {
                improved = true;
                rss = trial_rss;
                model = std::move(trial);
                break;
            }
            t *= 0.5;
        }
        if (!improved) {
            model.converged = true;
            break;
        }
        if (iter > 0 && std::abs(step.cwiseAbs().maxCoeff()) * t <
                            config.tol * (1.0 + model.moderator_coefs.cwiseAbs().maxCoeff() +
                                          model.male_coefs.maxCoeff())) {
            model.converged = true;
            break;
        }
    }
    model.rss = rss;
    return model;
}

std::vector<PersonShare> person_shares(const IndividualizationModel& model, const Household& h) {
    std::vector<PersonShare> out;
    double total = 0.0;
    for (int c = 0; c < kAdultCells; ++c) {
        total += h.adult_males[c] * model.male_coefs(c);
        total += h.adult_females[c] * model.female_coefs(c);
    }
    if (!(total > 0.0)) return out;
    // the moderator scale cancels within the household
    for (int c = 0; c < kAdultCells; ++c) {
        if (h.adult_males[c] > 0)
            out.push_back({true, c, h.adult_males[c], model.male_coefs(c) / total});
        if (h.adult_females[c] > 0)
            out.push_back({false, c, h.adult_females[c], model.female_coefs(c) / total});
    }
    return out;
}

}  // namespace mupsim
