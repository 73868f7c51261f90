#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cdcfund/market.hpp"

namespace cdcfund {

/// Uniform generator on top of Philox; the output is fully specified by the seed, so
/// designs and acquisition candidates are reproducible across platforms.
class UniformRng {
public:
    explicit UniformRng(std::uint64_t seed)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

    /// Uniform in [0, 1).
    double uniform() {
        if (cursor_ == 2) refill();
        const double u = static_cast<double>(buffer_[cursor_] >> 11) * 0x1.0p-53;
        ++cursor_;
        return u;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        auto k = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return k < n ? k : n - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

private:
    void refill() {
        const auto out = philox4x32({static_cast<std::uint32_t>(block_),
                                     static_cast<std::uint32_t>(block_ >> 32), 0x5eedu, 0u},
                                    key_);
        ++block_;
        buffer_[0] = (std::uint64_t{out[0]} << 32) | out[1];
        buffer_[1] = (std::uint64_t{out[2]} << 32) | out[3];
        cursor_ = 0;
    }

    std::array<std::uint32_t, 2> key_;
    std::uint64_t block_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
    int cursor_ = 2;
};

}  // namespace cdcfund
