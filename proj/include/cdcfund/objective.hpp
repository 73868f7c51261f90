#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "cdcfund/errors.hpp"
#include "cdcfund/fund.hpp"
#include "cdcfund/market.hpp"

namespace cdcfund {

/// CRRA utility x^(1-gamma)/(1-gamma), ln x at gamma = 1.
[[nodiscard]] inline double crra_utility(double x, double gamma) {
    if (!(x > 0.0)) throw DomainError("crra_utility: x must be positive");
    if (gamma == 1.0) return std::log(x);
    return std::pow(x, 1.0 - gamma) / (1.0 - gamma);
}

/// Inverse of crra_utility on its image.
[[nodiscard]] inline double certainty_equivalent(double eu, double gamma) {
    if (!std::isfinite(eu)) throw DomainError("certainty_equivalent: utility must be finite");
    if (gamma == 1.0) return std::exp(eu);
    const double scaled = (1.0 - gamma) * eu;
    if (gamma > 1.0 ? !(scaled > 0.0) : !(scaled >= 0.0))
        throw DomainError("certainty_equivalent: utility outside the range of U_gamma");
    return std::pow(scaled, 1.0 / (1.0 - gamma));
}

/// Sum over t = 1..T of beta^t U(B(t)); payments[t-1] holds B(t).
[[nodiscard]] inline double discounted_utility_sum(std::span<const double> payments, double beta,
                                                   double gamma) {
    double total = 0.0;
    for (std::size_t t = 1; t <= payments.size(); ++t)
        total += std::pow(beta, static_cast<double>(t)) * crra_utility(payments[t - 1], gamma);
    return total;
}

/// Neumaier-compensated running sum; order-deterministic.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    [[nodiscard]] double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

struct ObjectiveSpec {
    FundConfig cfg;
    MarketParams mkt;
    std::size_t n_paths = 10'000;
    std::uint64_t seed = 0;
};

struct ObjectiveValue {
    double ce = 0.0;           ///< certainty equivalent; 0 when any path went bankrupt
    double eu = 0.0;           ///< mean discounted utility over solvent paths (NaN if none)
    double eu_stderr = 0.0;    ///< Monte Carlo standard error of eu
    double ce_stderr = 0.0;    ///< delta-method standard error of ce (0 when zeroed)
    bool any_bankruptcy = false;
    std::size_t n_bankrupt = 0;
    std::size_t n_paths = 0;

    friend bool operator==(const ObjectiveValue&, const ObjectiveValue&) = default;
};

/// Scenario set matching an objective spec: `spec.n_paths` paths, T/dt shocks each.
[[nodiscard]] inline std::shared_ptr<const MarketScenarios> make_scenarios(const ObjectiveSpec& spec) {
    return std::make_shared<const MarketScenarios>(spec.seed, spec.n_paths, spec.cfg.n_steps());
}

/// Monte Carlo objective on a fixed scenario set. Mean and variance are reduced in
/// path order with compensated sums.
[[nodiscard]] inline ObjectiveValue evaluate_policy(const PolicyParams& policy,
                                                    const ObjectiveSpec& spec,
                                                    const MarketScenarios& scenarios) {
    policy.validate();
    if (spec.n_paths < 1) throw DomainError("evaluate_policy: n_paths must be >= 1");
    if (scenarios.n_paths() < spec.n_paths || scenarios.n_steps() < spec.cfg.n_steps())
        throw DomainError("evaluate_policy: scenario set smaller than n_paths or horizon");

    const double gamma = spec.cfg.gamma;
    std::vector<double> discount(static_cast<std::size_t>(spec.cfg.horizon));
    for (std::size_t t = 0; t < discount.size(); ++t)
        discount[t] = std::pow(spec.cfg.beta, static_cast<double>(t + 1));

    ObjectiveValue out;
    out.n_paths = spec.n_paths;
    std::vector<double> utilities;
    utilities.reserve(spec.n_paths);
    const PathSimulator simulate(spec.cfg, policy, spec.mkt);
    for (std::size_t p = 0; p < spec.n_paths; ++p) {
        const PathRecord rec = simulate(scenarios.path(p));
        if (rec.bankrupt()) {
            ++out.n_bankrupt;
            continue;
        }
        double u = 0.0;
        for (std::size_t t = 0; t < rec.payments.size(); ++t)
            u += discount[t] * crra_utility(rec.payments[t], gamma);
        utilities.push_back(u);
    }
    out.any_bankruptcy = out.n_bankrupt > 0;
    if (utilities.empty()) {
        out.eu = std::numeric_limits<double>::quiet_NaN();
        out.eu_stderr = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    const double n = static_cast<double>(utilities.size());
    CompensatedSum sum;
    for (double u : utilities) sum.add(u);
    out.eu = sum.value() / n;
    CompensatedSum dev2;
    for (double u : utilities) dev2.add((u - out.eu) * (u - out.eu));
    const double var = utilities.size() > 1 ? dev2.value() / (n - 1.0) : 0.0;
    out.eu_stderr = std::sqrt(var / n);
    if (!out.any_bankruptcy) {
        out.ce = certainty_equivalent(out.eu, gamma);
        out.ce_stderr = std::pow(out.ce, gamma) * out.eu_stderr;
    }
    return out;
}

[[nodiscard]] inline ObjectiveValue evaluate_policy(const PolicyParams& policy,
                                                    const ObjectiveSpec& spec) {
    return evaluate_policy(policy, spec, *make_scenarios(spec));
}

}  // namespace cdcfund
