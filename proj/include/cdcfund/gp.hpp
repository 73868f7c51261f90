#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "cdcfund/errors.hpp"

namespace cdcfund::gp {

template <std::size_t Dim>
using Point = std::array<double, Dim>;

template <std::size_t Dim>
[[nodiscard]] double distance(const Point<Dim>& a, const Point<Dim>& b) {
    double s = 0.0;
    for (std::size_t d = 0; d < Dim; ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
    return std::sqrt(s);
}

/// Matérn-5/2 covariance as a function of distance.
[[nodiscard]] inline double matern52(double d, double h, double signal_variance = 1.0) {
    const double s = std::sqrt(5.0) * d / h;
    return signal_variance * (1.0 + s + s * s / 3.0) * std::exp(-s);
}

struct Matern52Kernel {
    double length_scale = 0.2;
    double signal_variance = 1.0;

    template <std::size_t Dim>
    [[nodiscard]] double operator()(const Point<Dim>& a, const Point<Dim>& b) const {
        return matern52(distance(a, b), length_scale, signal_variance);
    }
};

template <std::size_t Dim>
[[nodiscard]] double matern52(const Point<Dim>& a, const Point<Dim>& b, double h) {
    return matern52(distance(a, b), h);
}

struct Prediction {
    double mean = 0.0;
    double std = 0.0;
};

/// Diagonal pivots of the Cholesky factor below this (relative to the signal variance)
/// are treated as a failed factorization.
inline constexpr double kMinPivot = 1e-12;

/// Zero-mean GP posterior over standardized observations. Immutable after fit().
template <std::size_t Dim = 2>
class GpModel {
public:
    GpModel(std::vector<Point<Dim>> x, std::span<const double> f_raw, Matern52Kernel kernel,
            double noise_variance)
        : x_(std::move(x)), kernel_(kernel), noise_(noise_variance) {
        if (x_.empty() || x_.size() != f_raw.size())
            throw DomainError("GpModel: need matching, non-empty inputs and outputs");
        if (!(kernel_.length_scale > 0.0)) throw DomainError("GpModel: length scale must be positive");
        if (!(noise_ >= 0.0)) throw DomainError("GpModel: noise variance must be >= 0");
        standardize(f_raw);
        factorize();
    }

    [[nodiscard]] bool ok() const { return ok_; }
    [[nodiscard]] std::size_t size() const { return x_.size(); }
    [[nodiscard]] const Matern52Kernel& kernel() const { return kernel_; }
    [[nodiscard]] double noise_variance() const { return noise_; }
    [[nodiscard]] double raw_mean() const { return mean_; }
    [[nodiscard]] double raw_scale() const { return scale_; }
    [[nodiscard]] const std::vector<Point<Dim>>& inputs() const { return x_; }

    /// Exact log marginal likelihood of the standardized observations.
    [[nodiscard]] double log_marginal_likelihood() const { return lml_; }

    /// Posterior mean and standard deviation of f at `q`, on the raw output scale.
    [[nodiscard]] Prediction posterior(const Point<Dim>& q) const {
        if (!ok_) throw FitError("GpModel: factorization failed");
        const auto n = static_cast<Eigen::Index>(x_.size());
        Eigen::VectorXd k(n);
        for (Eigen::Index i = 0; i < n; ++i) k(i) = kernel_(q, x_[static_cast<std::size_t>(i)]);
        const double mean_std = k.dot(alpha_);
        const Eigen::VectorXd v = chol_.matrixL().solve(k);
        double var = kernel_.signal_variance - v.squaredNorm();
        if (var < 0.0) var = 0.0;
        return {mean_ + scale_ * mean_std, scale_ * std::sqrt(var)};
    }

private:
    void standardize(std::span<const double> f_raw) {
        const double n = static_cast<double>(f_raw.size());
        double m = 0.0;
        for (double v : f_raw) m += v;
        m /= n;
        double ss = 0.0;
        for (double v : f_raw) ss += (v - m) * (v - m);
        const double sd = f_raw.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        mean_ = m;
        scale_ = sd > 0.0 && std::isfinite(sd) ? sd : 1.0;
        f_.resize(static_cast<Eigen::Index>(f_raw.size()));
        for (std::size_t i = 0; i < f_raw.size(); ++i)
            f_(static_cast<Eigen::Index>(i)) = (f_raw[i] - mean_) / scale_;
    }

    void factorize() {
        const auto n = static_cast<Eigen::Index>(x_.size());
        Eigen::MatrixXd k(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j <= i; ++j) {
                const double v = kernel_(x_[static_cast<std::size_t>(i)], x_[static_cast<std::size_t>(j)]);
                k(i, j) = v;
                k(j, i) = v;
            }
            k(i, i) += noise_;
        }
        chol_.compute(k);
        ok_ = chol_.info() == Eigen::Success;
        if (ok_) {
            const Eigen::MatrixXd l = chol_.matrixL();
            const double floor = kMinPivot * kernel_.signal_variance;
            double log_det_half = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double d = l(i, i);
                if (!(d * d > floor) || !std::isfinite(d)) {
                    ok_ = false;
                    break;
                }
                log_det_half += std::log(d);
            }
            if (ok_) {
                alpha_ = chol_.solve(f_);
                lml_ = -0.5 * f_.dot(alpha_) - log_det_half -
                       0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
            }
        }
        if (!ok_) lml_ = -std::numeric_limits<double>::infinity();
    }

    std::vector<Point<Dim>> x_;
    Matern52Kernel kernel_;
    double noise_ = 0.0;
    double mean_ = 0.0;
    double scale_ = 1.0;
    Eigen::VectorXd f_;
    Eigen::LLT<Eigen::MatrixXd> chol_;
    Eigen::VectorXd alpha_;
    double lml_ = 0.0;
    bool ok_ = false;
};

/// `count` log-spaced values on [lo, hi].
[[nodiscard]] inline std::vector<double> log_space(double lo, double hi, std::size_t count) {
    std::vector<double> out;
    if (count == 1) return {lo};
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * static_cast<double>(i) /
                                                  static_cast<double>(count - 1)));
    return out;
}

[[nodiscard]] inline std::vector<double> default_length_scales() { return log_space(0.05, 2.0, 12); }
[[nodiscard]] inline std::vector<double> default_noise_levels() { return {1e-6, 1e-4, 1e-2, 1e-1}; }

/// Fits a unit-amplitude Matérn-5/2 GP, picking (length scale, noise) from the candidate
/// grid by exact log marginal likelihood. Ties keep the earliest candidate.
template <std::size_t Dim>
[[nodiscard]] GpModel<Dim> fit(const std::vector<Point<Dim>>& x, std::span<const double> f_raw,
                               std::span<const double> length_scales,
                               std::span<const double> noise_levels) {
    if (x.empty()) throw DomainError("gp::fit: need at least one observation");
    std::optional<GpModel<Dim>> best;
    for (double h : length_scales) {
        for (double noise : noise_levels) {
            GpModel<Dim> candidate(x, f_raw, Matern52Kernel{h, 1.0}, noise);
            if (!candidate.ok()) continue;
            if (!best || candidate.log_marginal_likelihood() > best->log_marginal_likelihood())
                best.emplace(std::move(candidate));
        }
    }
    if (!best) throw FitError("gp::fit: every candidate factorization failed");
    return std::move(*best);
}

template <std::size_t Dim>
[[nodiscard]] GpModel<Dim> fit(const std::vector<Point<Dim>>& x, std::span<const double> f_raw) {
    const auto hs = default_length_scales();
    const auto noises = default_noise_levels();
    return fit<Dim>(x, f_raw, hs, noises);
}

}  // namespace cdcfund::gp
