#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cdcfund/errors.hpp"
#include "cdcfund/fund.hpp"
#include "cdcfund/idc.hpp"
#include "cdcfund/market.hpp"
#include "cdcfund/objective.hpp"

namespace cdcfund {

/// Increment-ratio roughness: mean over consecutive increment pairs of
/// |d_j + d_{j+1}| / (|d_j| + |d_{j+1}|). Pairs with two zero increments are skipped; a
/// path made only of such pairs has no sign change and scores 1.
[[nodiscard]] inline double ir_roughness(std::span<const double> path) {
    if (path.size() < 3) throw DomainError("ir_roughness: need at least 3 points");
    double total = 0.0;
    std::size_t terms = 0;
    for (std::size_t j = 0; j + 2 < path.size(); ++j) {
        const double d0 = path[j + 1] - path[j];
        const double d1 = path[j + 2] - path[j + 1];
        const double denom = std::abs(d0) + std::abs(d1);
        if (denom == 0.0) continue;
        total += std::abs(d0 + d1) / denom;
        ++terms;
    }
    return terms == 0 ? 1.0 : total / static_cast<double>(terms);
}

enum class Plan { CDC, IDC };

[[nodiscard]] constexpr std::string_view to_string(Plan plan) {
    return plan == Plan::CDC ? "CDC" : "IDC";
}

/// Nearest-rank (type 1) empirical quantile: the ceil(q n)-th smallest value.
[[nodiscard]] inline double nearest_rank_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw DomainError("quantile: empty sample");
    if (!(q > 0.0 && q < 1.0)) throw DomainError("quantile: q must lie in (0, 1)");
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

struct BatchOptions {
    std::vector<int> roughness_generations{41};
    bool funding_ratio = true;
};

/// CDC paths and the paired IDC accounts simulated on one scenario set.
struct SimulationBatch {
    FundConfig cfg;
    PolicyParams policy;
    std::size_t n_paths = 0;
    std::size_t n_bankrupt = 0;
    int first_generation = 0;  ///< N: earliest generation with a full working life inside [0, T]
    /// Per generation g (index g - first_generation), per path: B_g(g), NaN if the fund
    /// went bankrupt before paying it.
    std::vector<std::vector<double>> cdc_benefits;
    std::vector<std::vector<double>> idc_benefits;
    std::vector<int> roughness_generations;
    /// Per roughness generation, per path; NaN when the CDC account was cut short.
    std::vector<std::vector<double>> cdc_roughness;
    std::vector<std::vector<double>> idc_roughness;
    std::vector<CompensatedSum> funding_ratio_sum;
    std::vector<std::size_t> funding_ratio_count;

    [[nodiscard]] int last_generation() const { return cfg.horizon; }

    [[nodiscard]] const std::vector<double>& benefits(Plan plan, int generation) const {
        if (generation < first_generation || generation > last_generation())
            throw DomainError("SimulationBatch: generation outside [N, T]");
        const auto idx = static_cast<std::size_t>(generation - first_generation);
        return plan == Plan::CDC ? cdc_benefits[idx] : idc_benefits[idx];
    }

    [[nodiscard]] std::size_t bankrupt_before(int generation) const {
        std::size_t count = 0;
        for (double b : benefits(Plan::CDC, generation))
            if (std::isnan(b)) ++count;
        return count;
    }
};

[[nodiscard]] inline SimulationBatch simulate_batch(const FundConfig& cfg, const PolicyParams& policy,
                                                    const MarketParams& mkt,
                                                    const MarketScenarios& scenarios,
                                                    std::size_t n_paths,
                                                    const BatchOptions& options = {}) {
    if (n_paths < 1 || scenarios.n_paths() < n_paths || scenarios.n_steps() < cfg.n_steps())
        throw DomainError("simulate_batch: scenario set too small");
    SimulationBatch batch;
    batch.cfg = cfg;
    batch.policy = policy;
    batch.n_paths = n_paths;
    batch.first_generation = cfg.working_generations();
    const int n_gen = cfg.horizon - batch.first_generation + 1;
    if (n_gen < 1) throw DomainError("simulate_batch: horizon shorter than one working life");
    batch.cdc_benefits.assign(static_cast<std::size_t>(n_gen), std::vector<double>(n_paths));
    batch.idc_benefits.assign(static_cast<std::size_t>(n_gen), std::vector<double>(n_paths));
    batch.roughness_generations = options.roughness_generations;
    batch.cdc_roughness.assign(options.roughness_generations.size(), std::vector<double>(n_paths));
    batch.idc_roughness.assign(options.roughness_generations.size(), std::vector<double>(n_paths));
    if (options.funding_ratio) {
        batch.funding_ratio_sum.assign(cfg.n_steps() + 1, CompensatedSum{});
        batch.funding_ratio_count.assign(cfg.n_steps() + 1, 0);
    }

    PathOptions path_opts;
    path_opts.record_funding_ratio = options.funding_ratio;
    path_opts.tracked_generations = options.roughness_generations;
    constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

    const PathSimulator simulate(cfg, policy, mkt);
    for (std::size_t p = 0; p < n_paths; ++p) {
        const auto draws = scenarios.path(p);
        const PathRecord rec = simulate(draws, path_opts);
        if (rec.bankrupt()) ++batch.n_bankrupt;
        for (int g = batch.first_generation; g <= cfg.horizon; ++g) {
            const auto idx = static_cast<std::size_t>(g - batch.first_generation);
            batch.cdc_benefits[idx][p] = rec.payments[static_cast<std::size_t>(g - 1)];
            batch.idc_benefits[idx][p] = simulate_idc(g, cfg, policy.pi, mkt, draws).terminal;
        }
        for (std::size_t r = 0; r < options.roughness_generations.size(); ++r) {
            const int g = options.roughness_generations[r];
            const AccountTrajectory* tr = rec.account(g);
            batch.cdc_roughness[r][p] = tr && tr->complete(cfg) ? ir_roughness(tr->values) : kNaN;
            batch.idc_roughness[r][p] = ir_roughness(simulate_idc(g, cfg, policy.pi, mkt, draws, true).values);
        }
        if (options.funding_ratio) {
            for (std::size_t k = 0; k < rec.funding_ratios.size(); ++k) {
                if (std::isnan(rec.funding_ratios[k])) continue;
                batch.funding_ratio_sum[k].add(rec.funding_ratios[k]);
                ++batch.funding_ratio_count[k];
            }
        }
    }
    return batch;
}

/// Nearest-rank quantile of generation `generation`'s retirement benefit; bankrupt paths
/// count as a zero benefit.
[[nodiscard]] inline double benefit_quantile(const SimulationBatch& batch, Plan plan, int generation,
                                             double q) {
    std::vector<double> values = batch.benefits(plan, generation);
    for (double& v : values)
        if (std::isnan(v)) v = 0.0;
    return nearest_rank_quantile(std::move(values), q);
}

struct GenerationCe {
    std::optional<double> cdc;  ///< absent when any path went bankrupt before paying
    double idc = 0.0;
    std::size_t n_bankrupt = 0;
};

[[nodiscard]] inline double sample_certainty_equivalent(std::span<const double> values, double gamma) {
    CompensatedSum sum;
    for (double v : values) sum.add(crra_utility(v, gamma));
    return certainty_equivalent(sum.value() / static_cast<double>(values.size()), gamma);
}

[[nodiscard]] inline GenerationCe generation_ce(const SimulationBatch& batch, int generation,
                                                double gamma) {
    GenerationCe out;
    out.n_bankrupt = batch.bankrupt_before(generation);
    if (out.n_bankrupt == 0) out.cdc = sample_certainty_equivalent(batch.benefits(Plan::CDC, generation), gamma);
    out.idc = sample_certainty_equivalent(batch.benefits(Plan::IDC, generation), gamma);
    return out;
}

/// Pointwise mean of A/L over the paths still solvent at each grid time.
[[nodiscard]] inline std::vector<double> mean_funding_ratio_trajectory(const SimulationBatch& batch) {
    if (batch.funding_ratio_sum.empty())
        throw DomainError("mean_funding_ratio_trajectory: batch recorded no funding ratios");
    std::vector<double> out(batch.funding_ratio_sum.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 0; k < out.size(); ++k)
        if (batch.funding_ratio_count[k] > 0)
            out[k] = batch.funding_ratio_sum[k].value() / static_cast<double>(batch.funding_ratio_count[k]);
    return out;
}

struct RoughnessSummary {
    Plan plan = Plan::CDC;
    int generation = 0;
    std::size_t n_paths = 0;  ///< paths with a complete account
    double mean = 0.0;
    double std = 0.0;
};

[[nodiscard]] inline RoughnessSummary summarize(std::span<const double> values, Plan plan, int generation) {
    RoughnessSummary s{plan, generation, 0, 0.0, 0.0};
    CompensatedSum sum;
    for (double v : values)
        if (!std::isnan(v)) {
            sum.add(v);
            ++s.n_paths;
        }
    if (s.n_paths == 0) {
        s.mean = s.std = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    s.mean = sum.value() / static_cast<double>(s.n_paths);
    CompensatedSum dev;
    for (double v : values)
        if (!std::isnan(v)) dev.add((v - s.mean) * (v - s.mean));
    s.std = s.n_paths > 1 ? std::sqrt(dev.value() / static_cast<double>(s.n_paths - 1)) : 0.0;
    return s;
}

[[nodiscard]] inline std::vector<RoughnessSummary> roughness_summaries(const SimulationBatch& batch) {
    std::vector<RoughnessSummary> out;
    for (std::size_t r = 0; r < batch.roughness_generations.size(); ++r) {
        const int g = batch.roughness_generations[r];
        out.push_back(summarize(batch.cdc_roughness[r], Plan::CDC, g));
        out.push_back(summarize(batch.idc_roughness[r], Plan::IDC, g));
    }
    return out;
}

struct WelfareRow {
    int generation = 0;
    Plan plan = Plan::CDC;
    double median = 0.0;
    double q01 = 0.0;
    std::optional<double> ce;
    std::size_t n_bankrupt = 0;
};

/// Median, 1% quantile and certainty equivalent per generation N..T and plan.
[[nodiscard]] inline std::vector<WelfareRow> welfare_table(const SimulationBatch& batch, double gamma) {
    std::vector<WelfareRow> rows;
    for (int g = batch.first_generation; g <= batch.last_generation(); ++g) {
        const GenerationCe ce = generation_ce(batch, g, gamma);
        for (const Plan plan : {Plan::CDC, Plan::IDC}) {
            WelfareRow row;
            row.generation = g;
            row.plan = plan;
            row.median = benefit_quantile(batch, plan, g, 0.5);
            row.q01 = benefit_quantile(batch, plan, g, 0.01);
            row.ce = plan == Plan::CDC ? ce.cdc : std::optional<double>(ce.idc);
            row.n_bankrupt = plan == Plan::CDC ? ce.n_bankrupt : 0;
            rows.push_back(row);
        }
    }
    return rows;
}

struct CdfPoint {
    int generation = 0;
    Plan plan = Plan::CDC;
    double benefit = 0.0;
    double cdf = 0.0;
};

/// Empirical CDF points (sorted benefit, i/n) with cdf <= tail_probability.
[[nodiscard]] inline std::vector<CdfPoint> left_tail_cdf(const SimulationBatch& batch, Plan plan,
                                                         int generation, double tail_probability) {
    std::vector<double> values = batch.benefits(plan, generation);
    for (double& v : values)
        if (std::isnan(v)) v = 0.0;
    std::sort(values.begin(), values.end());
    std::vector<CdfPoint> out;
    const double n = static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double f = static_cast<double>(i + 1) / n;
        if (f > tail_probability) break;
        out.push_back({generation, plan, values[i], f});
    }
    return out;
}

}  // namespace cdcfund
