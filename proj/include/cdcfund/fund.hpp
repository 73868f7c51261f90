#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "cdcfund/errors.hpp"
#include "cdcfund/market.hpp"

namespace cdcfund {

/// Demographic and accounting constants of the fund.
struct FundConfig {
    double y = 1.0;            ///< annual contribution per working generation
    int tau0 = 25;             ///< entry age
    int tauR = 65;             ///< retirement age
    int steps_per_year = 12;   ///< inner steps per year; dt = 1 / steps_per_year
    int horizon = 100;         ///< T, years
    double beta = 0.98;        ///< subjective discount factor
    double gamma = 3.0;        ///< relative risk aversion

    [[nodiscard]] int working_generations() const { return tauR - tau0; }
    [[nodiscard]] double dt() const { return 1.0 / steps_per_year; }
    [[nodiscard]] std::size_t n_steps() const {
        return static_cast<std::size_t>(horizon) * static_cast<std::size_t>(steps_per_year);
    }

    void validate() const {
        if (!(y > 0.0) || !std::isfinite(y)) throw DomainError("fund: y must be positive");
        if (tau0 <= 0 || tauR <= tau0) throw DomainError("fund: need 0 < tau0 < tauR");
        if (steps_per_year < 1) throw DomainError("fund: steps_per_year must be >= 1");
        if (horizon < 1) throw DomainError("fund: horizon must be a positive integer");
        if (!(beta > 0.0 && beta < 1.0)) throw DomainError("fund: beta must lie in (0, 1)");
        if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw DomainError("fund: gamma must be >= 0");
    }
};

/// Decision pair searched over [0, 3] x [0, 1].
struct PolicyParams {
    double pi = 0.0;     ///< fraction of the asset held in the risky asset
    double theta = 0.0;  ///< funding-ratio adjustment strength of the declaration rate

    static constexpr double kMaxPi = 3.0;
    static constexpr double kMaxTheta = 1.0;

    void validate() const {
        if (!(pi >= 0.0 && pi <= kMaxPi)) throw DomainError("policy: pi must lie in [0, 3]");
        if (!(theta >= 0.0 && theta <= kMaxTheta)) throw DomainError("policy: theta must lie in [0, 1]");
    }

    friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

/// Calendar year at which the generation aged `tau` at time `t` retires.
[[nodiscard]] inline long generation_indicator(int tau, double t, int tauR) {
    return static_cast<long>(tauR) - tau + static_cast<long>(std::floor(t));
}

/// Pre-inception balance B_i(0) of entry cohort `i` (before the t = 0 contribution):
/// every contribution made at a year s < 0 accrued at the risk-free rate until 0.
[[nodiscard]] inline double entry_cohort_account(int i, const FundConfig& cfg, double r) {
    const int n = cfg.working_generations();
    if (i < 1 || i > n) throw DomainError("entry_cohort_account: indicator outside 1..N");
    double total = 0.0;
    for (int k = 1; k <= n - i; ++k) total += cfg.y * std::exp(r * k);
    return total;
}

/// Expected log-return plus the funding-ratio adjustment.
[[nodiscard]] inline double declaration_rate(double asset, double liability,
                                             const PolicyParams& policy,
                                             const MarketParams& mkt) {
    if (!(asset > 0.0) || !(liability > 0.0))
        throw InvalidStateError("declaration_rate: requires positive asset and liability");
    return portfolio_log_drift(mkt, policy.pi) + policy.theta * std::log(asset / liability);
}

// ---------------------------------------------------------------------------
// Explicit state machine. Every account is stored and updated individually; this is
// the reference route against which the fast path kernel below is checked.

struct FundState {
    long month = 0;                     ///< inner steps elapsed since t = 0
    int steps_per_year = 12;
    double asset = 0.0;
    double liability = 0.0;
    std::map<long, double> accounts;    ///< generation indicator -> B_i
    bool bankrupt = false;
    std::optional<double> bankrupt_at;
    long last_jump_year = -1;           ///< most recent integer year whose jump was applied

    [[nodiscard]] double time() const { return static_cast<double>(month) / steps_per_year; }
    [[nodiscard]] double funding_ratio() const { return asset / liability; }
    [[nodiscard]] bool jump_pending() const {
        return month % steps_per_year == 0 && last_jump_year != month / steps_per_year;
    }
    [[nodiscard]] double account_sum() const {
        double s = 0.0;
        for (const auto& [gen, value] : accounts) s += value;
        return s;
    }
};

[[nodiscard]] inline double declaration_rate(const FundState& state, const PolicyParams& policy,
                                             const MarketParams& mkt) {
    return declaration_rate(state.asset, state.liability, policy, mkt);
}

/// Entry cohorts 1..N loaded with their risk-free history; A = asset_scale * a0,
/// L = a0. The t = 0 jump has not been applied yet.
[[nodiscard]] inline FundState initialize_fund(const FundConfig& cfg, double r,
                                               double asset_scale = 1.0) {
    cfg.validate();
    FundState state;
    state.steps_per_year = cfg.steps_per_year;
    double a0 = 0.0;
    for (int i = 1; i <= cfg.working_generations(); ++i) {
        const double b = entry_cohort_account(i, cfg, r);
        state.accounts.emplace(i, b);
        a0 += b;
    }
    state.asset = asset_scale * a0;
    state.liability = a0;
    return state;
}

/// One inner step: the asset follows the exact portfolio increment for `z`; the
/// declaration rate is taken at the start of the step and every account (and hence L)
/// grows by exp(eta * dt).
inline void step_month(FundState& state, const PolicyParams& policy, const MarketParams& mkt,
                       double z) {
    if (state.bankrupt) throw InvalidStateError("step_month: fund is bankrupt");
    if (state.jump_pending()) throw InvalidStateError("step_month: year-boundary jump pending");
    const double dt = 1.0 / state.steps_per_year;
    const double eta = declaration_rate(state, policy, mkt);
    const double growth = std::exp(eta * dt);
    state.asset *= std::exp(log_return_increment(mkt, policy.pi, dt, z));
    state.liability *= growth;
    for (auto& [gen, value] : state.accounts) value *= growth;
    ++state.month;
    if (state.asset <= 0.0) {
        state.bankrupt = true;
        state.bankrupt_at = state.time();
    }
}

/// Cash-flow jump at the current integer year t: pay generation t, admit generation
/// t + N with a zero balance, credit y to every working generation, and move A and L
/// by the same net flow. Returns the payment (0 at t = 0).
inline double year_boundary_jump(FundState& state, const FundConfig& cfg) {
    if (state.month % state.steps_per_year != 0)
        throw InvalidStateError("year_boundary_jump: not at an integer year");
    if (!state.jump_pending()) throw InvalidStateError("year_boundary_jump: already applied");
    if (state.bankrupt) throw InvalidStateError("year_boundary_jump: fund is bankrupt");
    const long t = state.month / state.steps_per_year;
    const int n = cfg.working_generations();
    double payment = 0.0;
    if (t >= 1) {
        const auto retiree = state.accounts.find(t);
        if (retiree == state.accounts.end())
            throw InvalidStateError("year_boundary_jump: retiring generation missing");
        payment = retiree->second;
        state.accounts.erase(retiree);
        state.accounts.emplace(t + n, 0.0);
    }
    for (auto& [gen, value] : state.accounts) value += cfg.y;
    const double net_flow = n * cfg.y - payment;
    state.asset += net_flow;
    state.liability += net_flow;
    state.last_jump_year = t;
    if (state.asset <= 0.0) {
        state.bankrupt = true;
        state.bankrupt_at = static_cast<double>(t);
    }
    return payment;
}

// ---------------------------------------------------------------------------
// Path simulation

/// Monthly values of one generation's account over its working life: point k is the
/// value at month k after its start (post-contribution at year boundaries); the last
/// point is the balance at retirement, before payout.
struct AccountTrajectory {
    int generation = 0;
    std::vector<double> values;

    [[nodiscard]] bool complete(const FundConfig& cfg) const {
        return values.size() ==
               static_cast<std::size_t>(cfg.working_generations() * cfg.steps_per_year + 1);
    }
};

struct PathRecord {
    std::vector<double> payments;        ///< B(1..T) at index t-1; NaN after bankruptcy
    std::vector<double> funding_ratios;  ///< A/L at each grid time k*dt, k = 0..T/dt (optional)
    std::vector<double> assets;          ///< A on the same grid (optional)
    std::vector<double> liabilities;     ///< L on the same grid (optional)
    std::vector<AccountTrajectory> accounts;
    std::optional<int> bankrupt_at;      ///< year of the jump at which A <= 0

    [[nodiscard]] bool bankrupt() const { return bankrupt_at.has_value(); }

    [[nodiscard]] std::optional<double> payment(int t) const {
        const double b = payments.at(static_cast<std::size_t>(t - 1));
        if (std::isnan(b)) return std::nullopt;
        return b;
    }

    [[nodiscard]] const AccountTrajectory* account(int generation) const {
        for (const auto& a : accounts)
            if (a.generation == generation) return &a;
        return nullptr;
    }
};

struct PathOptions {
    bool record_funding_ratio = false;
    bool record_balances = false;          ///< also keep A and L on the grid
    std::vector<int> tracked_generations;  ///< generations i >= N whose accounts to record
    double asset_scale = 1.0;              ///< A(0) = asset_scale * L(0)
};

/// Simulates fund paths for one (config, policy, market) triple. Runs in log space:
/// log A, and all accounts share one accumulated growth exponent between jumps, so no
/// per-account work happens inside a year.
class PathSimulator {
public:
    PathSimulator(const FundConfig& cfg, const PolicyParams& policy, const MarketParams& mkt)
        : cfg_(cfg), policy_(policy), step_(mkt, policy.pi, cfg.dt()),
          drift_(portfolio_log_drift(mkt, policy.pi)) {
        cfg_.validate();
        const int n = cfg_.working_generations();
        entry_.assign(static_cast<std::size_t>(n), 0.0);
        for (int i = 1; i <= n; ++i) {
            entry_[static_cast<std::size_t>(i % n)] = entry_cohort_account(i, cfg_, mkt.r);
            a0_ += entry_[static_cast<std::size_t>(i % n)];
        }
    }

    [[nodiscard]] const FundConfig& config() const { return cfg_; }
    [[nodiscard]] double initial_liability() const { return a0_; }

    /// One path driven by `draws` (one shock per inner step, aligned to calendar steps).
    [[nodiscard]] PathRecord operator()(std::span<const double> draws,
                                        const PathOptions& options = {}) const {
        const FundConfig& cfg = cfg_;
        const int n = cfg.working_generations();
        const int spy = cfg.steps_per_year;
        const int horizon = cfg.horizon;
        if (draws.size() < cfg.n_steps()) throw DomainError("simulate_path: not enough draws");
        for (int g : options.tracked_generations)
            if (g < n || g > horizon)
                throw DomainError("simulate_path: tracked generation must lie in [N, T]");

        const double dt = cfg.dt();
        const PortfolioStep step = step_;
        const double drift = drift_;
        const double theta = policy_.theta;
        PathRecord rec;
        rec.payments.assign(static_cast<std::size_t>(horizon), std::numeric_limits<double>::quiet_NaN());
        constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
        if (options.record_funding_ratio) rec.funding_ratios.assign(cfg.n_steps() + 1, kNaN);
        if (options.record_balances) {
            rec.assets.assign(cfg.n_steps() + 1, kNaN);
            rec.liabilities.assign(cfg.n_steps() + 1, kNaN);
        }
        for (int g : options.tracked_generations) rec.accounts.push_back({g, {}});
        const bool recording = options.record_funding_ratio || options.record_balances ||
                               !options.tracked_generations.empty();

        // Slot i % N holds generation i; generation t + N reuses the retiree's slot.
        std::vector<double> balance = entry_;
        const double a0 = a0_;
        double asset = options.asset_scale * a0;
        if (options.record_funding_ratio) rec.funding_ratios[0] = asset / a0;
        if (options.record_balances) {
            rec.assets[0] = asset;
            rec.liabilities[0] = a0;
        }

        // Within a year: log L = log_liability + growth, log(A/L) = log_ratio.
        double log_liability = 0.0;  // log L at the last jump
        double growth = 0.0;         // accumulated eta*dt since the last jump
        double log_ratio = 0.0;
        const double ratio_decay = 1.0 - theta * dt;
        const double drift_dt = drift * dt;
        std::size_t k = 0;

        for (int t = 0; t <= horizon; ++t) {
            if (t > 0) {
                const double factor = std::exp(growth);
                for (double& b : balance) b *= factor;
                asset = std::exp(log_liability + growth + log_ratio);
            }
            double payment = 0.0;
            if (t >= 1) {
                auto& slot = balance[static_cast<std::size_t>(t % n)];
                payment = slot;
                for (auto& tr : rec.accounts)
                    if (tr.generation == t) tr.values.push_back(slot);
                slot = 0.0;
                rec.payments[static_cast<std::size_t>(t - 1)] = payment;
            }
            double liability = 0.0;
            for (double& b : balance) {
                b += cfg.y;
                liability += b;
            }
            asset += n * cfg.y - payment;
            if (asset <= 0.0) {
                rec.bankrupt_at = t;
                break;
            }
            if (t == horizon) break;

            for (auto& tr : rec.accounts)
                if (t >= tr.generation - n && t < tr.generation)
                    tr.values.push_back(balance[static_cast<std::size_t>(tr.generation % n)]);

            log_liability = std::log(liability);
            log_ratio = std::log(asset) - log_liability;
            growth = 0.0;
            if (!recording) {
                for (int m = 0; m < spy; ++m, ++k) {
                    growth += (drift + theta * log_ratio) * dt;
                    log_ratio = log_ratio * ratio_decay + (step(draws[k]) - drift_dt);
                }
                continue;
            }
            for (int m = 0; m < spy; ++m, ++k) {
                growth += (drift + theta * log_ratio) * dt;
                log_ratio = log_ratio * ratio_decay + (step(draws[k]) - drift_dt);
                if (options.record_funding_ratio) rec.funding_ratios[k + 1] = std::exp(log_ratio);
                if (options.record_balances) {
                    rec.assets[k + 1] = std::exp(log_liability + growth + log_ratio);
                    rec.liabilities[k + 1] = std::exp(log_liability + growth);
                }
                if (m + 1 < spy)
                    for (auto& tr : rec.accounts)
                        if (t >= tr.generation - n && t < tr.generation)
                            tr.values.push_back(balance[static_cast<std::size_t>(tr.generation % n)] *
                                                std::exp(growth));
            }
        }
        return rec;
    }

private:
    FundConfig cfg_;
    PolicyParams policy_;
    PortfolioStep step_;
    double drift_ = 0.0;
    std::vector<double> entry_;
    double a0_ = 0.0;
};

[[nodiscard]] inline PathRecord simulate_path(const FundConfig& cfg, const PolicyParams& policy,
                                              const MarketParams& mkt,
                                              std::span<const double> draws,
                                              const PathOptions& options = {}) {
    return PathSimulator(cfg, policy, mkt)(draws, options);
}

/// Stream overload: draws the T/dt shocks for path `stream.path_index()` first.
[[nodiscard]] inline PathRecord simulate_path(const FundConfig& cfg, const PolicyParams& policy,
                                              const MarketParams& mkt, RandomStream& stream,
                                              const PathOptions& options = {}) {
    std::vector<double> draws(cfg.n_steps());
    stream.fill(draws);
    return simulate_path(cfg, policy, mkt, draws, options);
}

}  // namespace cdcfund
