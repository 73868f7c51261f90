#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <vector>

#include "cdcfund/errors.hpp"
#include "cdcfund/gp.hpp"
#include "cdcfund/objective.hpp"
#include "cdcfund/random.hpp"

namespace cdcfund {

// ---------------------------------------------------------------------------
// Design and acquisition

/// Latin hypercube design of `n` points in the box [lower, upper]: along each axis the
/// n values fall one per equal-width stratum, jittered uniformly within the stratum.
template <std::size_t Dim>
[[nodiscard]] std::vector<gp::Point<Dim>> latin_hypercube(std::size_t n,
                                                          const gp::Point<Dim>& lower,
                                                          const gp::Point<Dim>& upper,
                                                          UniformRng& rng) {
    if (n < 1) throw DomainError("latin_hypercube: n must be >= 1");
    std::vector<gp::Point<Dim>> out(n);
    std::vector<std::size_t> strata(n);
    for (std::size_t d = 0; d < Dim; ++d) {
        for (std::size_t i = 0; i < n; ++i) strata[i] = i;
        rng.shuffle(strata);
        const double width = (upper[d] - lower[d]) / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            out[i][d] = lower[d] + width * (static_cast<double>(strata[i]) + rng.uniform());
    }
    return out;
}

[[nodiscard]] inline double normal_pdf(double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

[[nodiscard]] inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Posterior std below which EI collapses to its noiseless limit max(m - f*, 0).
inline constexpr double kMinEiStd = 1e-12;

/// Expected improvement of a Gaussian N(mean, std^2) over the incumbent `f_star`.
[[nodiscard]] inline double expected_improvement(double mean, double std, double f_star) {
    const double gap = mean - f_star;
    if (std < kMinEiStd) return std::max(gap, 0.0);
    const double z = gap / std;
    return std::max(0.0, std * normal_pdf(z) + gap * normal_cdf(z));
}

template <std::size_t Dim>
[[nodiscard]] double expected_improvement(const gp::GpModel<Dim>& model, const gp::Point<Dim>& x,
                                          double f_star) {
    const auto p = model.posterior(x);
    return expected_improvement(p.mean, p.std, f_star);
}

/// Element `index` of the Halton sequence in base `base`.
[[nodiscard]] inline double halton(std::uint64_t index, std::uint64_t base) {
    double f = 1.0, r = 0.0;
    while (index > 0) {
        f /= static_cast<double>(base);
        r += f * static_cast<double>(index % base);
        index /= base;
    }
    return r;
}

template <std::size_t Dim>
struct AcquisitionResult {
    gp::Point<Dim> x{};
    double ei = 0.0;
    std::size_t evaluated = 0;
    double best_raw_candidate_ei = 0.0;  ///< max EI over the global candidate set alone
};

/// Maximizes EI over the unit box: `budget` randomly shifted Halton candidates, then two
/// rounds of `budget / 2` uniform candidates in boxes of half-width 0.1 and 0.025 around
/// the best point so far.
template <std::size_t Dim>
[[nodiscard]] AcquisitionResult<Dim> maximize_acquisition(const gp::GpModel<Dim>& model,
                                                          double f_star, std::size_t budget,
                                                          UniformRng& rng) {
    static_assert(Dim <= 6, "Halton bases table covers up to 6 dimensions");
    constexpr std::array<std::uint64_t, 6> kBases{2, 3, 5, 7, 11, 13};
    if (budget < 1) throw DomainError("maximize_acquisition: budget must be >= 1");

    AcquisitionResult<Dim> best;
    best.ei = -1.0;
    auto consider = [&](const gp::Point<Dim>& x) {
        const double ei = expected_improvement(model, x, f_star);
        ++best.evaluated;
        if (ei > best.ei) {
            best.ei = ei;
            best.x = x;
        }
    };

    gp::Point<Dim> shift{};
    for (auto& s : shift) s = rng.uniform();
    for (std::size_t j = 0; j < budget; ++j) {
        gp::Point<Dim> x{};
        for (std::size_t d = 0; d < Dim; ++d) {
            const double u = halton(j + 1, kBases[d]) + shift[d];
            x[d] = u - std::floor(u);
        }
        consider(x);
    }
    best.best_raw_candidate_ei = best.ei;

    for (const double half_width : {0.1, 0.025}) {
        const gp::Point<Dim> centre = best.x;
        for (std::size_t j = 0; j < budget / 2; ++j) {
            gp::Point<Dim> x{};
            for (std::size_t d = 0; d < Dim; ++d)
                x[d] = std::clamp(centre[d] + rng.uniform(-half_width, half_width), 0.0, 1.0);
            consider(x);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Optimization loop

struct BoConfig {
    std::size_t n_init = 10;
    std::size_t n_total = 100;
    std::size_t candidate_budget = 2000;
    std::uint64_t seed = 0;
    bool common_random_numbers = true;  ///< evaluate every candidate on the same scenarios
    std::vector<double> length_scales = gp::default_length_scales();
    std::vector<double> noise_levels = gp::default_noise_levels();

    void validate() const {
        if (n_init < 2) throw DomainError("bo: n_init must be >= 2");
        if (n_total <= n_init) throw DomainError("bo: n_total must exceed n_init");
        if (candidate_budget < 1) throw DomainError("bo: candidate_budget must be >= 1");
        if (length_scales.empty() || noise_levels.empty())
            throw DomainError("bo: hyperparameter grids must be non-empty");
    }
};

struct BoTraceRow {
    std::size_t iteration = 0;  ///< 1-based evaluation counter
    PolicyParams policy;
    ObjectiveValue value;
    double incumbent_ce = 0.0;
    PolicyParams incumbent;
    // Surrogate that proposed this point; absent for the initial design.
    std::optional<double> gp_length_scale;
    std::optional<double> gp_noise;
    std::optional<std::size_t> gp_n;
    std::optional<double> acquisition_ei;
};

struct BoTrace {
    std::vector<BoTraceRow> rows;

    [[nodiscard]] const BoTraceRow& incumbent_row() const {
        if (rows.empty()) throw DomainError("BoTrace: empty trace");
        std::size_t best = 0;
        for (std::size_t i = 1; i < rows.size(); ++i)
            if (rows[i].value.ce > rows[best].value.ce) best = i;
        return rows[best];
    }

    /// The `count` best evaluated points other than the incumbent, by ce.
    [[nodiscard]] std::vector<BoTraceRow> runners_up(std::size_t count) const {
        const BoTraceRow& top = incumbent_row();
        std::vector<BoTraceRow> others;
        for (const auto& r : rows)
            if (r.iteration != top.iteration) others.push_back(r);
        std::stable_sort(others.begin(), others.end(),
                         [](const BoTraceRow& a, const BoTraceRow& b) { return a.value.ce > b.value.ce; });
        if (others.size() > count) others.resize(count);
        return others;
    }
};

[[nodiscard]] inline gp::Point<2> to_unit_square(const PolicyParams& p) {
    return {p.pi / PolicyParams::kMaxPi, p.theta / PolicyParams::kMaxTheta};
}

[[nodiscard]] inline PolicyParams from_unit_square(const gp::Point<2>& x) {
    return {std::clamp(x[0], 0.0, 1.0) * PolicyParams::kMaxPi,
            std::clamp(x[1], 0.0, 1.0) * PolicyParams::kMaxTheta};
}

/// Seeds derived from BoConfig::seed.
struct BoSeeds {
    std::uint64_t design;
    std::uint64_t acquisition;

    explicit BoSeeds(std::uint64_t seed)
        : design(derive_seed(seed, 0x1a5)), acquisition(derive_seed(seed, 0xacc)) {}
};

/// Sequential EI optimization of `objective(PolicyParams) -> ObjectiveValue` over the
/// policy box, maximizing `ce`.
template <typename Objective>
[[nodiscard]] BoTrace optimize(Objective&& objective, const BoConfig& cfg) {
    cfg.validate();
    const BoSeeds seeds(cfg.seed);
    UniformRng design_rng(seeds.design);
    UniformRng acq_rng(seeds.acquisition);

    BoTrace trace;
    std::vector<gp::Point<2>> xs;
    std::vector<double> fs;
    double best_ce = -std::numeric_limits<double>::infinity();
    PolicyParams best_policy;

    auto record = [&](const PolicyParams& policy, BoTraceRow row) {
        row.iteration = trace.rows.size() + 1;
        row.policy = policy;
        row.value = objective(policy);
        if (row.value.ce > best_ce) {
            best_ce = row.value.ce;
            best_policy = policy;
        }
        row.incumbent_ce = best_ce;
        row.incumbent = best_policy;
        xs.push_back(to_unit_square(policy));
        fs.push_back(row.value.ce);
        trace.rows.push_back(row);
    };

    const auto design = latin_hypercube<2>(
        cfg.n_init, {0.0, 0.0}, {PolicyParams::kMaxPi, PolicyParams::kMaxTheta}, design_rng);
    for (const auto& x : design) record({x[0], x[1]}, {});

    while (trace.rows.size() < cfg.n_total) {
        const auto model = gp::fit<2>(xs, fs, cfg.length_scales, cfg.noise_levels);
        const auto next = maximize_acquisition(model, best_ce, cfg.candidate_budget, acq_rng);
        BoTraceRow row;
        row.gp_length_scale = model.kernel().length_scale;
        row.gp_noise = model.noise_variance();
        row.gp_n = model.size();
        row.acquisition_ei = next.ei;
        record(from_unit_square(next.x), row);
    }
    return trace;
}

/// BO on the pension objective. With common random numbers every evaluation reuses the
/// scenario set drawn from `spec.seed`; otherwise evaluation k draws from
/// derive_seed(spec.seed, k).
[[nodiscard]] inline BoTrace run_bo(const ObjectiveSpec& spec, const BoConfig& cfg,
                                    std::shared_ptr<const MarketScenarios> scenarios = nullptr) {
    if (cfg.common_random_numbers) {
        if (!scenarios) scenarios = make_scenarios(spec);
        return optimize([&](const PolicyParams& p) { return evaluate_policy(p, spec, *scenarios); },
                        cfg);
    }
    std::uint64_t k = 0;
    return optimize(
        [&](const PolicyParams& p) {
            ObjectiveSpec local = spec;
            local.seed = derive_seed(spec.seed, ++k);
            return evaluate_policy(p, local);
        },
        cfg);
}

}  // namespace cdcfund
