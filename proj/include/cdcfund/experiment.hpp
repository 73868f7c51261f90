#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cdcfund/analysis.hpp"
#include "cdcfund/bo.hpp"
#include "cdcfund/errors.hpp"
#include "cdcfund/fund.hpp"
#include "cdcfund/idc.hpp"
#include "cdcfund/market.hpp"
#include "cdcfund/objective.hpp"

#ifndef CDCFUND_VERSION
#define CDCFUND_VERSION "0.0.0"
#endif

namespace cdcfund {

inline constexpr std::string_view kVersion = CDCFUND_VERSION;

struct AnalysisSettings {
    std::size_t n_paths = 10'000;
    std::vector<int> roughness_generations{41};
    std::vector<int> cdf_generations{41};
    double tail_probability = 0.1;
    std::size_t trajectory_paths = 3;

    friend bool operator==(const AnalysisSettings&, const AnalysisSettings&) = default;
};

struct ExperimentConfig {
    std::string market_name = "M1";  ///< preset name, or "custom"
    MarketParams market = preset_market(MarketPreset::M1);
    FundConfig fund;
    std::size_t n_paths = 10'000;
    std::uint64_t seed = 0;
    BoConfig bo;
    std::optional<PolicyParams> policy;
    AnalysisSettings analysis;
    std::size_t grid_resolution = 20;
    std::string output_dir = "out";
};

/// Desk-scale profile for CI runs.
inline void apply_fast_profile(ExperimentConfig& cfg) {
    cfg.n_paths = 2'000;
    cfg.bo.n_total = 60;
    cfg.analysis.n_paths = 2'000;
}

/// Everything random in an experiment hangs off the one top-level seed.
struct ExperimentSeeds {
    std::uint64_t scenarios;  ///< objective scenario set shared by BO and the grid oracle
    std::uint64_t bo;         ///< BoConfig::seed (LHS and acquisition streams derive from it)
    std::uint64_t analysis;   ///< scenario set of the welfare batch

    explicit ExperimentSeeds(std::uint64_t seed)
        : scenarios(derive_seed(seed, 1)), bo(derive_seed(seed, 2)), analysis(derive_seed(seed, 3)) {}
};

[[nodiscard]] inline ObjectiveSpec objective_spec(const ExperimentConfig& cfg) {
    return {cfg.fund, cfg.market, cfg.n_paths, ExperimentSeeds(cfg.seed).scenarios};
}

[[nodiscard]] inline BoConfig bo_config(const ExperimentConfig& cfg) {
    BoConfig out = cfg.bo;
    out.seed = ExperimentSeeds(cfg.seed).bo;
    return out;
}

// ---------------------------------------------------------------------------
// Config documents

namespace detail {

using nlohmann::json;

inline std::pair<int, int> line_column(std::string_view text, std::size_t byte) {
    int line = 1, column = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            column = 1;
        } else {
            ++column;
        }
    }
    return {line, column};
}

/// Reads one JSON object, rejecting keys nobody asked for.
class ObjectReader {
public:
    ObjectReader(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
        if (!obj_.is_object()) throw ConfigError(prefix_, "expected an object");
    }

    [[nodiscard]] std::string key(std::string_view name) const {
        return prefix_.empty() ? std::string(name) : prefix_ + "." + std::string(name);
    }

    const json* find(std::string_view name) {
        seen_.emplace_back(name);
        const auto it = obj_.find(std::string(name));
        return it == obj_.end() ? nullptr : &*it;
    }

    void number(std::string_view name, double& out) {
        if (const json* v = find(name)) {
            if (!v->is_number()) throw ConfigError(key(name), "expected a number");
            out = v->get<double>();
            if (!std::isfinite(out)) throw ConfigError(key(name), "must be finite");
        }
    }

    template <typename Int>
    void integer(std::string_view name, Int& out) {
        if (const json* v = find(name)) {
            if (!v->is_number_integer()) throw ConfigError(key(name), "expected an integer");
            if (v->is_number_unsigned()) {
                out = static_cast<Int>(v->get<std::uint64_t>());
            } else {
                const auto s = v->get<std::int64_t>();
                if (s < 0 && std::is_unsigned_v<Int>) throw ConfigError(key(name), "must be >= 0");
                out = static_cast<Int>(s);
            }
        }
    }

    void boolean(std::string_view name, bool& out) {
        if (const json* v = find(name)) {
            if (!v->is_boolean()) throw ConfigError(key(name), "expected true or false");
            out = v->get<bool>();
        }
    }

    void string(std::string_view name, std::string& out) {
        if (const json* v = find(name)) {
            if (!v->is_string()) throw ConfigError(key(name), "expected a string");
            out = v->get<std::string>();
        }
    }

    template <typename T>
    void list(std::string_view name, std::vector<T>& out) {
        if (const json* v = find(name)) {
            if (!v->is_array()) throw ConfigError(key(name), "expected an array");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number() || (std::is_integral_v<T> && !e.is_number_integer()))
                    throw ConfigError(key(name), std::is_integral_v<T> ? "expected integers" : "expected numbers");
                out.push_back(e.get<T>());
            }
        }
    }

    void finish() const {
        for (const auto& [k, v] : obj_.items()) {
            if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
                throw ConfigError(key(k), "unknown key");
        }
    }

private:
    const json& obj_;
    std::string prefix_;
    std::vector<std::string> seen_;
};

inline void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError(key, what);
}

}  // namespace detail

/// Range checks; throws ConfigError naming the offending key.
inline void validate(const ExperimentConfig& cfg) {
    using detail::require;
    try {
        cfg.market.validate();
    } catch (const DomainError& e) {
        throw ConfigError("market", e.what());
    }
    const FundConfig& f = cfg.fund;
    require(f.gamma >= 0.0, "gamma", "must be >= 0");
    require(f.beta > 0.0 && f.beta < 1.0, "beta", "must lie in (0, 1)");
    require(f.y > 0.0, "y", "must be positive");
    require(f.tau0 > 0, "tau0", "must be positive");
    require(f.tauR > f.tau0, "tauR", "must exceed tau0");
    require(f.horizon >= f.working_generations(), "horizon",
            "must cover at least one working life (tauR - tau0 years)");
    require(cfg.n_paths >= 1, "n_paths", "must be >= 1");
    const BoConfig& b = cfg.bo;
    require(b.n_init >= 2, "bo.n_init", "must be >= 2");
    require(b.n_total > b.n_init, "bo.n_total", "must exceed bo.n_init");
    require(b.candidate_budget >= 1, "bo.candidate_budget", "must be >= 1");
    require(!b.length_scales.empty(), "bo.length_scales", "must be non-empty");
    for (double h : b.length_scales) require(h > 0.0, "bo.length_scales", "entries must be positive");
    require(!b.noise_levels.empty(), "bo.noise_levels", "must be non-empty");
    for (double s : b.noise_levels) require(s >= 0.0, "bo.noise_levels", "entries must be >= 0");
    if (cfg.policy) {
        require(cfg.policy->pi >= 0.0 && cfg.policy->pi <= PolicyParams::kMaxPi, "policy.pi",
                "must lie in [0, 3]");
        require(cfg.policy->theta >= 0.0 && cfg.policy->theta <= PolicyParams::kMaxTheta,
                "policy.theta", "must lie in [0, 1]");
    }
    const AnalysisSettings& a = cfg.analysis;
    const int n = f.working_generations();
    require(a.n_paths >= 1, "analysis.n_paths", "must be >= 1");
    for (int g : a.roughness_generations)
        require(g >= n && g <= f.horizon, "analysis.roughness_generations", "generations must lie in [N, T]");
    for (int g : a.cdf_generations)
        require(g >= n && g <= f.horizon, "analysis.cdf_generations", "generations must lie in [N, T]");
    require(a.tail_probability > 0.0 && a.tail_probability <= 1.0, "analysis.tail_probability",
            "must lie in (0, 1]");
    require(a.trajectory_paths <= a.n_paths, "analysis.trajectory_paths", "must not exceed analysis.n_paths");
    require(a.trajectory_paths == 0 || (41 >= n && 41 <= f.horizon), "analysis.trajectory_paths",
            "the trajectory dump tracks generation 41, which must lie in [N, T]");
    require(cfg.grid_resolution >= 2, "grid.resolution", "must be >= 2");
    require(!cfg.output_dir.empty(), "output_dir", "must be non-empty");
}

/// Steps per year for an inner step `dt`. Each step must span a whole number of months,
/// so the scenario grid stays aligned with calendar months.
[[nodiscard]] inline int steps_per_year_from_dt(double dt) {
    if (!(dt > 0.0 && dt <= 1.0)) throw ConfigError("dt", "must lie in (0, 1]");
    const double n = std::round(1.0 / dt);
    if (std::abs(n * dt - 1.0) > 1e-12) throw ConfigError("dt", "1/dt must be an integer number of steps per year");
    const int steps = static_cast<int>(n);
    if (12 % steps != 0) throw ConfigError("dt", "steps per year must divide 12 (whole months per step)");
    return steps;
}

/// Parses a JSON config document. An empty document yields all defaults.
[[nodiscard]] inline ExperimentConfig parse_config(std::string_view text) {
    using detail::json;
    ExperimentConfig cfg;
    if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) return cfg;

    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        const auto [line, column] = detail::line_column(text, e.byte > 0 ? e.byte - 1 : 0);
        std::string what = e.what();
        if (const auto pos = what.find("syntax error"); pos != std::string::npos) what = what.substr(pos);
        throw ConfigError("", what, line, column);
    }

    detail::ObjectReader root(doc, "");
    if (const json* m = root.find("market")) {
        if (m->is_string()) {
            const auto preset = parse_market_preset(m->get<std::string>());
            cfg.market_name = std::string(to_string(preset));
            cfg.market = preset_market(preset);
        } else if (m->is_object()) {
            detail::ObjectReader mr(*m, "market");
            cfg.market_name = "custom";
            mr.number("mu", cfg.market.mu);
            mr.number("r", cfg.market.r);
            mr.number("sigma", cfg.market.sigma);
            mr.finish();
        } else {
            throw ConfigError("market", "expected a preset name or an object {mu, r, sigma}");
        }
    }
    root.number("gamma", cfg.fund.gamma);
    root.number("beta", cfg.fund.beta);
    root.number("y", cfg.fund.y);
    root.integer("tau0", cfg.fund.tau0);
    root.integer("tauR", cfg.fund.tauR);
    root.integer("horizon", cfg.fund.horizon);
    if (const json* dt = root.find("dt")) {
        if (!dt->is_number()) throw ConfigError("dt", "expected a number");
        cfg.fund.steps_per_year = steps_per_year_from_dt(dt->get<double>());
    }
    root.integer("n_paths", cfg.n_paths);
    root.integer("seed", cfg.seed);
    root.string("output_dir", cfg.output_dir);

    if (const json* b = root.find("bo")) {
        detail::ObjectReader br(*b, "bo");
        br.integer("n_init", cfg.bo.n_init);
        br.integer("n_total", cfg.bo.n_total);
        br.integer("candidate_budget", cfg.bo.candidate_budget);
        br.boolean("common_random_numbers", cfg.bo.common_random_numbers);
        br.list("length_scales", cfg.bo.length_scales);
        br.list("noise_levels", cfg.bo.noise_levels);
        br.finish();
    }
    if (const json* p = root.find("policy")) {
        detail::ObjectReader pr(*p, "policy");
        PolicyParams policy;
        if (!pr.find("pi") || !pr.find("theta")) throw ConfigError("policy", "needs both pi and theta");
        pr.number("pi", policy.pi);
        pr.number("theta", policy.theta);
        pr.finish();
        cfg.policy = policy;
    }
    if (const json* a = root.find("analysis")) {
        detail::ObjectReader ar(*a, "analysis");
        ar.integer("n_paths", cfg.analysis.n_paths);
        ar.list("roughness_generations", cfg.analysis.roughness_generations);
        ar.list("cdf_generations", cfg.analysis.cdf_generations);
        ar.number("tail_probability", cfg.analysis.tail_probability);
        ar.integer("trajectory_paths", cfg.analysis.trajectory_paths);
        ar.finish();
    }
    if (const json* g = root.find("grid")) {
        detail::ObjectReader gr(*g, "grid");
        gr.integer("resolution", cfg.grid_resolution);
        gr.finish();
    }
    root.finish();
    validate(cfg);
    return cfg;
}

[[nodiscard]] inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("", "cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Effective config as a document that parse_config reads back to the same values.
[[nodiscard]] inline nlohmann::ordered_json to_json(const ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    if (cfg.market_name == "custom")
        j["market"] = {{"mu", cfg.market.mu}, {"r", cfg.market.r}, {"sigma", cfg.market.sigma}};
    else
        j["market"] = cfg.market_name;
    j["gamma"] = cfg.fund.gamma;
    j["beta"] = cfg.fund.beta;
    j["y"] = cfg.fund.y;
    j["tau0"] = cfg.fund.tau0;
    j["tauR"] = cfg.fund.tauR;
    j["horizon"] = cfg.fund.horizon;
    j["dt"] = cfg.fund.dt();
    j["n_paths"] = cfg.n_paths;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["bo"] = {{"n_init", cfg.bo.n_init},
               {"n_total", cfg.bo.n_total},
               {"candidate_budget", cfg.bo.candidate_budget},
               {"common_random_numbers", cfg.bo.common_random_numbers},
               {"length_scales", cfg.bo.length_scales},
               {"noise_levels", cfg.bo.noise_levels}};
    if (cfg.policy) j["policy"] = {{"pi", cfg.policy->pi}, {"theta", cfg.policy->theta}};
    j["analysis"] = {{"n_paths", cfg.analysis.n_paths},
                     {"roughness_generations", cfg.analysis.roughness_generations},
                     {"cdf_generations", cfg.analysis.cdf_generations},
                     {"tail_probability", cfg.analysis.tail_probability},
                     {"trajectory_paths", cfg.analysis.trajectory_paths}};
    j["grid"] = {{"resolution", cfg.grid_resolution}};
    return j;
}

// ---------------------------------------------------------------------------
// Tabular output

/// Shortest round-trip decimal form; empty for NaN.
[[nodiscard]] inline std::string format_number(double v) {
    if (std::isnan(v)) return {};
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

[[nodiscard]] inline std::string format_number(std::optional<double> v) {
    return v ? format_number(*v) : std::string{};
}

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row(header); }

    void row(const std::vector<std::string>& fields) {
        if (fields.size() != columns_) throw DomainError("CsvWriter: wrong number of fields");
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ += ',';
            out_ += fields[i];
        }
        out_ += '\n';
    }

    [[nodiscard]] const std::string& str() const { return out_; }

private:
    std::size_t columns_;
    std::string out_;
};

namespace csv_columns {
inline const std::vector<std::string> bo_trace{
    "iteration", "pi", "theta", "ce", "eu", "eu_stderr", "ce_stderr", "any_bankruptcy", "n_bankrupt",
    "incumbent_pi", "incumbent_theta", "incumbent_ce", "gp_length_scale", "gp_noise", "gp_n",
    "acquisition_ei"};
inline const std::vector<std::string> grid{"pi", "theta", "ce", "eu", "ce_stderr", "n_bankrupt"};
inline const std::vector<std::string> trajectories{"path_id", "account_kind", "t_months", "A", "L",
                                                   "funding_ratio", "B_41"};
inline const std::vector<std::string> welfare{"generation", "plan", "median", "q01", "ce", "n_bankrupt"};
inline const std::vector<std::string> roughness{"plan", "generation", "n_paths", "mean", "std"};
inline const std::vector<std::string> funding_ratio{"t_months", "mean_funding_ratio", "n_paths"};
inline const std::vector<std::string> cdf_tail{"generation", "plan", "benefit", "cdf"};
}  // namespace csv_columns

[[nodiscard]] inline std::string bo_trace_csv(const BoTrace& trace) {
    CsvWriter w(csv_columns::bo_trace);
    auto opt_size = [](const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : std::string{}; };
    for (const auto& r : trace.rows) {
        w.row({std::to_string(r.iteration), format_number(r.policy.pi), format_number(r.policy.theta),
               format_number(r.value.ce), format_number(r.value.eu), format_number(r.value.eu_stderr),
               format_number(r.value.ce_stderr), r.value.any_bankruptcy ? "1" : "0",
               std::to_string(r.value.n_bankrupt), format_number(r.incumbent.pi),
               format_number(r.incumbent.theta), format_number(r.incumbent_ce),
               format_number(r.gp_length_scale), format_number(r.gp_noise), opt_size(r.gp_n),
               format_number(r.acquisition_ei)});
    }
    return w.str();
}

[[nodiscard]] inline nlohmann::ordered_json bo_summary_json(const BoTrace& trace) {
    const BoTraceRow& top = trace.incumbent_row();
    nlohmann::ordered_json j;
    j["pi_star"] = top.policy.pi;
    j["theta_star"] = top.policy.theta;
    j["ce_star"] = top.value.ce;
    j["ce_stderr_star"] = top.value.ce_stderr;
    j["iteration_star"] = top.iteration;
    j["n_evaluations"] = trace.rows.size();
    auto runners = nlohmann::ordered_json::array();
    for (const auto& r : trace.runners_up(10))
        runners.push_back({{"iteration", r.iteration}, {"pi", r.policy.pi}, {"theta", r.policy.theta}, {"ce", r.value.ce}});
    j["runners_up"] = runners;
    return j;
}

// ---------------------------------------------------------------------------
// Grid oracle

struct GridPoint {
    PolicyParams policy;
    ObjectiveValue value;
};

struct GridResult {
    std::size_t resolution = 0;
    std::vector<GridPoint> points;  ///< pi-major order
    std::size_t best = 0;           ///< first point with maximal ce

    [[nodiscard]] const GridPoint& argmax() const { return points.at(best); }
};

/// Evaluates the objective on a resolution x resolution lattice over [lower, upper]
/// (inclusive of both ends on each axis).
[[nodiscard]] inline GridResult evaluate_lattice(const ObjectiveSpec& spec, const MarketScenarios& scenarios,
                                                 PolicyParams lower, PolicyParams upper,
                                                 std::size_t resolution) {
    if (resolution < 2) throw DomainError("grid: resolution must be >= 2");
    GridResult out;
    out.resolution = resolution;
    const double denom = static_cast<double>(resolution - 1);
    for (std::size_t a = 0; a < resolution; ++a) {
        for (std::size_t b = 0; b < resolution; ++b) {
            const PolicyParams p{lower.pi + (upper.pi - lower.pi) * static_cast<double>(a) / denom,
                                 lower.theta + (upper.theta - lower.theta) * static_cast<double>(b) / denom};
            out.points.push_back({p, evaluate_policy(p, spec, scenarios)});
            if (out.points.back().value.ce > out.points[out.best].value.ce) out.best = out.points.size() - 1;
        }
    }
    return out;
}

[[nodiscard]] inline GridResult run_grid_oracle(const ObjectiveSpec& spec, const MarketScenarios& scenarios,
                                                std::size_t resolution) {
    return evaluate_lattice(spec, scenarios, {0.0, 0.0}, {PolicyParams::kMaxPi, PolicyParams::kMaxTheta},
                            resolution);
}

/// Grid oracle followed by `rounds` zooms: each round re-grids a box two lattice steps
/// either side of the current argmax, clipped to the policy box.
[[nodiscard]] inline GridResult refine_grid_oracle(const ObjectiveSpec& spec, const MarketScenarios& scenarios,
                                                   std::size_t resolution, int rounds) {
    GridResult current = run_grid_oracle(spec, scenarios, resolution);
    double step_pi = PolicyParams::kMaxPi / static_cast<double>(resolution - 1);
    double step_theta = PolicyParams::kMaxTheta / static_cast<double>(resolution - 1);
    for (int k = 0; k < rounds; ++k) {
        const PolicyParams c = current.argmax().policy;
        const PolicyParams lo{std::max(0.0, c.pi - 2 * step_pi), std::max(0.0, c.theta - 2 * step_theta)};
        const PolicyParams hi{std::min(PolicyParams::kMaxPi, c.pi + 2 * step_pi),
                              std::min(PolicyParams::kMaxTheta, c.theta + 2 * step_theta)};
        GridResult next = evaluate_lattice(spec, scenarios, lo, hi, resolution);
        if (next.argmax().value.ce >= current.argmax().value.ce) current = std::move(next);
        step_pi = (hi.pi - lo.pi) / static_cast<double>(resolution - 1);
        step_theta = (hi.theta - lo.theta) / static_cast<double>(resolution - 1);
    }
    return current;
}

[[nodiscard]] inline std::string grid_csv(const GridResult& grid) {
    CsvWriter w(csv_columns::grid);
    for (const auto& g : grid.points)
        w.row({format_number(g.policy.pi), format_number(g.policy.theta), format_number(g.value.ce),
               format_number(g.value.eu), format_number(g.value.ce_stderr), std::to_string(g.value.n_bankrupt)});
    return w.str();
}

[[nodiscard]] inline nlohmann::ordered_json grid_summary_json(const GridResult& grid) {
    const GridPoint& top = grid.argmax();
    return {{"resolution", grid.resolution},
            {"n_evaluations", grid.points.size()},
            {"pi_star", top.policy.pi},
            {"theta_star", top.policy.theta},
            {"ce_star", top.value.ce},
            {"ce_stderr_star", top.value.ce_stderr}};
}

// ---------------------------------------------------------------------------
// Simulation and welfare outputs

/// CDC rows over the whole horizon, then IDC rows over generation 41's working life, for
/// the first `n_paths` scenario paths. A, L and funding_ratio are pre-jump values at year
/// boundaries; B_41 is the account after that year's contribution (pre-payout at t = 41).
[[nodiscard]] inline std::string trajectories_csv(const FundConfig& cfg, const PolicyParams& policy,
                                                  const MarketParams& mkt, const MarketScenarios& scenarios,
                                                  std::size_t n_paths) {
    constexpr int kGeneration = 41;
    CsvWriter w(csv_columns::trajectories);
    const int spy = cfg.steps_per_year;
    const int months_per_step = 12 / spy;
    const int first_step = (kGeneration - cfg.working_generations()) * spy;
    PathOptions opts;
    opts.record_funding_ratio = true;
    opts.record_balances = true;
    opts.tracked_generations = {kGeneration};
    const PathSimulator simulate(cfg, policy, mkt);
    for (std::size_t p = 0; p < n_paths; ++p) {
        const auto draws = scenarios.path(p);
        const PathRecord rec = simulate(draws, opts);
        const AccountTrajectory* acct = rec.account(kGeneration);
        const std::string id = std::to_string(p);
        for (std::size_t k = 0; k <= cfg.n_steps(); ++k) {
            const long idx = static_cast<long>(k) - first_step;
            std::string b;
            if (acct && idx >= 0 && static_cast<std::size_t>(idx) < acct->values.size())
                b = format_number(acct->values[static_cast<std::size_t>(idx)]);
            w.row({id, "CDC", std::to_string(static_cast<long>(k) * months_per_step),
                   format_number(rec.assets[k]), format_number(rec.liabilities[k]),
                   format_number(rec.funding_ratios[k]), b});
        }
        const IdcRecord idc = simulate_idc(kGeneration, cfg, policy.pi, mkt, draws, true);
        for (std::size_t j = 0; j < idc.values.size(); ++j)
            w.row({id, "IDC", std::to_string((first_step + static_cast<long>(j)) * months_per_step), "", "", "",
                   format_number(idc.values[j])});
    }
    return w.str();
}

[[nodiscard]] inline std::string welfare_csv(const std::vector<WelfareRow>& rows) {
    CsvWriter w(csv_columns::welfare);
    for (const auto& r : rows)
        w.row({std::to_string(r.generation), std::string(to_string(r.plan)), format_number(r.median),
               format_number(r.q01), format_number(r.ce), std::to_string(r.n_bankrupt)});
    return w.str();
}

[[nodiscard]] inline std::string roughness_csv(const std::vector<RoughnessSummary>& rows) {
    CsvWriter w(csv_columns::roughness);
    for (const auto& r : rows)
        w.row({std::string(to_string(r.plan)), std::to_string(r.generation), std::to_string(r.n_paths),
               format_number(r.mean), format_number(r.std)});
    return w.str();
}

[[nodiscard]] inline std::string funding_ratio_csv(const SimulationBatch& batch) {
    CsvWriter w(csv_columns::funding_ratio);
    const auto mean = mean_funding_ratio_trajectory(batch);
    const int months_per_step = 12 / batch.cfg.steps_per_year;
    for (std::size_t k = 0; k < mean.size(); ++k)
        w.row({std::to_string(static_cast<long>(k) * months_per_step), format_number(mean[k]),
               std::to_string(batch.funding_ratio_count[k])});
    return w.str();
}

[[nodiscard]] inline std::string cdf_tail_csv(const SimulationBatch& batch, const std::vector<int>& generations,
                                              double tail_probability) {
    CsvWriter w(csv_columns::cdf_tail);
    for (int g : generations)
        for (const Plan plan : {Plan::CDC, Plan::IDC})
            for (const auto& pt : left_tail_cdf(batch, plan, g, tail_probability))
                w.row({std::to_string(pt.generation), std::string(to_string(pt.plan)), format_number(pt.benefit),
                       format_number(pt.cdf)});
    return w.str();
}

// ---------------------------------------------------------------------------
// Pipeline

/// Files produced by a pipeline stage, keyed by file name.
using Artifacts = std::vector<std::pair<std::string, std::string>>;

/// FNV-1a 64-bit digest, as hex.
[[nodiscard]] inline std::string fnv1a_hex(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline void write_artifacts(const std::filesystem::path& dir, const Artifacts& files) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, body] : files) {
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
        out << body;
    }
}

[[nodiscard]] inline PolicyParams require_policy(const ExperimentConfig& cfg) {
    if (!cfg.policy) throw ConfigError("policy", "this command needs a policy {pi, theta}");
    return *cfg.policy;
}

[[nodiscard]] inline std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

[[nodiscard]] inline Artifacts optimize_stage(const ExperimentConfig& cfg, BoTrace* trace_out = nullptr) {
    const BoTrace trace = run_bo(objective_spec(cfg), bo_config(cfg));
    Artifacts files{{"bo_trace.csv", bo_trace_csv(trace)}, {"bo_summary.json", dump(bo_summary_json(trace))}};
    if (trace_out) *trace_out = trace;
    return files;
}

[[nodiscard]] inline Artifacts grid_stage(const ExperimentConfig& cfg) {
    const ObjectiveSpec spec = objective_spec(cfg);
    const auto scenarios = make_scenarios(spec);
    const GridResult grid = run_grid_oracle(spec, *scenarios, cfg.grid_resolution);
    return {{"grid.csv", grid_csv(grid)}, {"grid_summary.json", dump(grid_summary_json(grid))}};
}

[[nodiscard]] inline std::shared_ptr<const MarketScenarios> analysis_scenarios(const ExperimentConfig& cfg,
                                                                               std::size_t n_paths) {
    return std::make_shared<const MarketScenarios>(ExperimentSeeds(cfg.seed).analysis, n_paths,
                                                   cfg.fund.n_steps());
}

[[nodiscard]] inline Artifacts simulate_stage(const ExperimentConfig& cfg, const PolicyParams& policy) {
    const auto scenarios = analysis_scenarios(cfg, cfg.analysis.trajectory_paths);
    return {{"trajectories.csv",
             trajectories_csv(cfg.fund, policy, cfg.market, *scenarios, cfg.analysis.trajectory_paths)}};
}

[[nodiscard]] inline Artifacts analyze_stage(const ExperimentConfig& cfg, const PolicyParams& policy) {
    const auto scenarios = analysis_scenarios(cfg, cfg.analysis.n_paths);
    BatchOptions opts;
    opts.roughness_generations = cfg.analysis.roughness_generations;
    const SimulationBatch batch =
        simulate_batch(cfg.fund, policy, cfg.market, *scenarios, cfg.analysis.n_paths, opts);
    return {{"welfare_table.csv", welfare_csv(welfare_table(batch, cfg.fund.gamma))},
            {"roughness.csv", roughness_csv(roughness_summaries(batch))},
            {"funding_ratio.csv", funding_ratio_csv(batch)},
            {"cdf_tail.csv", cdf_tail_csv(batch, cfg.analysis.cdf_generations, cfg.analysis.tail_probability)}};
}

struct StageStatus {
    std::string name;
    std::string status;  ///< "ok" or "failed"
    std::string error;
};

struct CellResult {
    Artifacts files;
    std::vector<StageStatus> stages;
    std::optional<PolicyParams> incumbent;
    bool ok = true;
};

/// Manifest describing how a run's outputs were produced. `wall_seconds` is the only
/// field that varies between otherwise identical runs.
[[nodiscard]] inline nlohmann::ordered_json manifest_json(const ExperimentConfig& cfg, std::string_view command,
                                                          const std::vector<StageStatus>& stages,
                                                          const Artifacts& files, double wall_seconds) {
    const ExperimentSeeds seeds(cfg.seed);
    const BoSeeds bo_seeds(seeds.bo);
    nlohmann::ordered_json j;
    j["version"] = std::string(kVersion);
    j["command"] = std::string(command);
    j["seed"] = cfg.seed;
    j["seeds"] = {{"scenarios", seeds.scenarios},
                  {"bo", seeds.bo},
                  {"bo_design", bo_seeds.design},
                  {"bo_acquisition", bo_seeds.acquisition},
                  {"analysis", seeds.analysis}};
    j["config"] = to_json(cfg);
    auto st = nlohmann::ordered_json::array();
    for (const auto& s : stages) {
        nlohmann::ordered_json e{{"name", s.name}, {"status", s.status}};
        if (!s.error.empty()) e["error"] = s.error;
        st.push_back(e);
    }
    j["stages"] = st;
    auto out = nlohmann::ordered_json::array();
    for (const auto& [name, body] : files)
        out.push_back({{"file", name}, {"bytes", body.size()}, {"fnv1a64", fnv1a_hex(body)}});
    j["outputs"] = out;
    j["wall_seconds"] = wall_seconds;
    return j;
}

/// optimize, then simulate and analyze at the incumbent. A failing stage is recorded and
/// stops the cell.
[[nodiscard]] inline CellResult run_cell(const ExperimentConfig& cfg) {
    CellResult result;
    auto stage = [&](const std::string& name, const std::function<Artifacts()>& body) {
        if (!result.ok) return;
        try {
            Artifacts files = body();
            result.files.insert(result.files.end(), files.begin(), files.end());
            result.stages.push_back({name, "ok", {}});
        } catch (const std::exception& e) {
            result.stages.push_back({name, "failed", e.what()});
            result.ok = false;
        }
    };
    result.files.push_back({"config.json", dump(to_json(cfg))});
    stage("optimize", [&] {
        BoTrace trace;
        Artifacts files = optimize_stage(cfg, &trace);
        result.incumbent = trace.incumbent_row().policy;
        return files;
    });
    stage("simulate", [&] { return simulate_stage(cfg, *result.incumbent); });
    stage("analyze", [&] { return analyze_stage(cfg, *result.incumbent); });
    return result;
}

}  // namespace cdcfund
