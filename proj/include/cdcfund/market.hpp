#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cdcfund/errors.hpp"

namespace cdcfund {

/// Black–Scholes market: risk-free rate `r`, risky drift `mu` and volatility `sigma`,
/// all annualized.
struct MarketParams {
    double mu = 0.065;
    double r = 0.02;
    double sigma = 0.15;

    [[nodiscard]] double market_price_of_risk() const { return (mu - r) / sigma; }

    void validate() const {
        if (!(sigma > 0.0) || !std::isfinite(sigma))
            throw DomainError("market: sigma must be positive and finite");
        if (!(r > 0.0) || !std::isfinite(r))
            throw DomainError("market: r must be positive and finite");
        if (!(mu > r) || !std::isfinite(mu))
            throw DomainError("market: mu must exceed r");
    }

    friend bool operator==(const MarketParams&, const MarketParams&) = default;
};

enum class MarketPreset { M1, M2, M3 };

[[nodiscard]] constexpr MarketParams preset_market(MarketPreset preset) {
    switch (preset) {
        case MarketPreset::M1: return {0.065, 0.02, 0.15};
        case MarketPreset::M2: return {0.065, 0.01, 0.25};
        case MarketPreset::M3: return {0.065, 0.01, 0.5};
    }
    return {};
}

[[nodiscard]] inline MarketPreset parse_market_preset(std::string_view name) {
    if (name == "M1") return MarketPreset::M1;
    if (name == "M2") return MarketPreset::M2;
    if (name == "M3") return MarketPreset::M3;
    throw ConfigError("market", "unknown market preset '" + std::string(name) + "'");
}

[[nodiscard]] constexpr std::string_view to_string(MarketPreset preset) {
    switch (preset) {
        case MarketPreset::M1: return "M1";
        case MarketPreset::M2: return "M2";
        case MarketPreset::M3: return "M3";
    }
    return "?";
}

/// Expected log-return per year of the constant-mix portfolio holding fraction `pi`
/// in the risky asset.
[[nodiscard]] inline double portfolio_log_drift(const MarketParams& mkt, double pi) {
    return pi * (mkt.mu - mkt.r) + mkt.r - 0.5 * pi * pi * mkt.sigma * mkt.sigma;
}

/// One inner step of the constant-mix portfolio, precomputed for a fixed (pi, dt).
/// The log-increment for draw `z` is `drift + diffusion * z`.
struct PortfolioStep {
    double drift = 0.0;
    double diffusion = 0.0;

    PortfolioStep() = default;
    PortfolioStep(const MarketParams& mkt, double pi, double dt) {
        if (pi < 0.0) throw DomainError("short selling (pi < 0) is not allowed");
        if (!(dt > 0.0)) throw DomainError("dt must be positive");
        drift = portfolio_log_drift(mkt, pi) * dt;
        diffusion = pi * mkt.sigma * std::sqrt(dt);
    }

    [[nodiscard]] double operator()(double z) const { return drift + diffusion * z; }
};

/// Exact log-increment of the constant-mix portfolio over `dt` years driven by the
/// standard normal draw `z`.
[[nodiscard]] inline double log_return_increment(const MarketParams& mkt, double pi, double dt,
                                                 double z) {
    return PortfolioStep(mkt, pi, dt)(z);
}

// ---------------------------------------------------------------------------
// Random streams

/// Philox4x32-10 counter-based generator (Salmon et al.). Stateless: the output block
/// is a pure function of (counter, key).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
        const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kW0;
        key[1] += kW1;
    }
    return ctr;
}

/// splitmix64 finalizer; used to derive child seeds from a parent seed and a tag.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) {
    return mix64(mix64(parent) ^ (tag * 0xD1B54A32D192ED03ull + 1));
}

/// Standard-normal stream keyed by (seed, path_index). Block `k` of the stream is
/// Philox(counter = (k, path_index), key = seed); each block yields two normals via
/// Box–Muller.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t path_index)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          path_index_(path_index) {}

    [[nodiscard]] std::uint64_t path_index() const { return path_index_; }
    [[nodiscard]] std::uint64_t draws() const { return draws_; }

    /// Uniform in (0, 1], 53-bit resolution.
    static double to_unit(std::uint32_t hi, std::uint32_t lo) {
        const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;
        return static_cast<double>(bits + 1) * 0x1.0p-53;
    }

    double next_normal() {
        if ((draws_ & 1u) == 0) {
            const std::uint64_t block = draws_ >> 1;
            const auto out = philox4x32(
                {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
                 static_cast<std::uint32_t>(path_index_),
                 static_cast<std::uint32_t>(path_index_ >> 32)},
                key_);
            const double u1 = to_unit(out[0], out[1]);
            const double u2 = to_unit(out[2], out[3]);
            const double radius = std::sqrt(-2.0 * std::log(u1));
            const double angle = 2.0 * std::numbers::pi * u2;
            spare_ = radius * std::sin(angle);
            ++draws_;
            return radius * std::cos(angle);
        }
        ++draws_;
        return spare_;
    }

    void fill(std::span<double> out) {
        for (double& z : out) z = next_normal();
    }

private:
    std::array<std::uint32_t, 2> key_;
    std::uint64_t path_index_;
    std::uint64_t draws_ = 0;
    double spare_ = 0.0;
};

/// Pre-drawn market shocks: one standard normal per (path, calendar month). Month `m`
/// covers [m·dt, (m+1)·dt). Sharing one set across policies gives common random numbers.
class MarketScenarios {
public:
    MarketScenarios() = default;
    MarketScenarios(std::uint64_t seed, std::size_t n_paths, std::size_t n_steps)
        : seed_(seed), n_paths_(n_paths), n_steps_(n_steps), draws_(n_paths * n_steps) {
        for (std::size_t p = 0; p < n_paths; ++p) {
            RandomStream stream(seed, p);
            stream.fill(std::span<double>(draws_).subspan(p * n_steps, n_steps));
        }
    }

    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] std::size_t n_paths() const { return n_paths_; }
    [[nodiscard]] std::size_t n_steps() const { return n_steps_; }

    [[nodiscard]] std::span<const double> path(std::size_t p) const {
        return std::span<const double>(draws_).subspan(p * n_steps_, n_steps_);
    }

private:
    std::uint64_t seed_ = 0;
    std::size_t n_paths_ = 0;
    std::size_t n_steps_ = 0;
    std::vector<double> draws_;
};

}  // namespace cdcfund
