#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "cdcfund/errors.hpp"
#include "cdcfund/fund.hpp"
#include "cdcfund/market.hpp"

namespace cdcfund {

/// Individual DC account of one generation: own contributions, same constant-mix
/// portfolio as the fund, no declaration rate.
struct IdcRecord {
    int generation = 0;
    std::vector<double> values;  ///< same sampling convention as AccountTrajectory (optional)
    double terminal = 0.0;       ///< A_i(i), the lump sum at retirement
};

/// Simulates generation `generation`'s IDC account over its working window
/// [i - N, i] using the calendar-aligned shocks of one market path.
[[nodiscard]] inline IdcRecord simulate_idc(int generation, const FundConfig& cfg, double pi,
                                            const MarketParams& mkt,
                                            std::span<const double> draws,
                                            bool record_trajectory = false) {
    const int n = cfg.working_generations();
    const int spy = cfg.steps_per_year;
    if (generation < n || generation > cfg.horizon)
        throw DomainError("simulate_idc: generation must lie in [N, T]");
    if (draws.size() < cfg.n_steps()) throw DomainError("simulate_idc: not enough draws");
    const PortfolioStep step(mkt, pi, cfg.dt());

    IdcRecord rec;
    rec.generation = generation;
    if (record_trajectory) rec.values.reserve(static_cast<std::size_t>(n * spy + 1));

    double account = 0.0;
    const int start = generation - n;
    for (int t = start; t < generation; ++t) {
        account += cfg.y;
        if (record_trajectory) rec.values.push_back(account);
        std::size_t k = static_cast<std::size_t>(t) * static_cast<std::size_t>(spy);
        double log_growth = 0.0;
        for (int m = 0; m < spy; ++m, ++k) {
            log_growth += step(draws[k]);
            if (record_trajectory && m + 1 < spy) rec.values.push_back(account * std::exp(log_growth));
        }
        account *= std::exp(log_growth);
    }
    rec.terminal = account;
    if (record_trajectory) rec.values.push_back(account);
    return rec;
}

[[nodiscard]] inline IdcRecord simulate_idc(int generation, const FundConfig& cfg, double pi,
                                            const MarketParams& mkt, RandomStream& stream,
                                            bool record_trajectory = false) {
    std::vector<double> draws(cfg.n_steps());
    stream.fill(draws);
    return simulate_idc(generation, cfg, pi, mkt, draws, record_trajectory);
}

}  // namespace cdcfund
