#pragma once

// Cut-in episode simulation with an IDM follower, and per-grid outcome maps.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "fst/common.hpp"
#include "fst/scenario_space.hpp"

namespace fst {

struct IdmParams {
    double desired_speed_mps = 25.0;
    double max_accel_mps2 = 2.0;
    double comfortable_decel_mps2 = 3.0;
    double min_gap_m = 2.0;
    double time_headway_s = 1.0;
    double accel_exponent = 4.0;
    // Physical braking limit. Without it the IDM term can demand arbitrarily
    // large deceleration and never collides.
    double max_decel_mps2 = 6.0;

    void validate() const {
        require(desired_speed_mps > 0.0, "idm: desired_speed_mps must be > 0");
        require(max_accel_mps2 > 0.0, "idm: max_accel_mps2 must be > 0");
        require(comfortable_decel_mps2 > 0.0, "idm: comfortable_decel_mps2 must be > 0");
        require(time_headway_s > 0.0, "idm: time_headway_s must be > 0");
        require(min_gap_m >= 0.0, "idm: min_gap_m must be >= 0");
        require(accel_exponent > 0.0, "idm: accel_exponent must be > 0");
        require(max_decel_mps2 > 0.0, "idm: max_decel_mps2 must be > 0");
    }

    /// IDM acceleration for speed v, gap s and approach rate dv = v - v_lead,
    /// clipped below at -max_decel.
    double acceleration(double v, double gap, double dv) const {
        double interaction =
            min_gap_m + std::max(0.0, v * time_headway_s + v * dv / (2.0 * std::sqrt(max_accel_mps2 * comfortable_decel_mps2)));
        double ratio = interaction / std::max(gap, 1e-9);
        double acc = max_accel_mps2 * (1.0 - std::pow(v / desired_speed_mps, accel_exponent) - ratio * ratio);
        return std::max(acc, -max_decel_mps2);
    }
};

enum class LeadPolicy { ConstantSpeed };

struct EpisodeConfig {
    double av_initial_speed_mps = 20.0;
    LeadPolicy bv_speed_policy = LeadPolicy::ConstantSpeed;
    double horizon_s = 10.0;
    double dt_s = 0.1;

    void validate() const {
        require(horizon_s > 0.0, "episode: horizon_s must be > 0");
        require(dt_s > 0.0 && dt_s <= 0.5, "episode: dt_s must be in (0, 0.5]");
        require(av_initial_speed_mps > 0.0, "episode: av_initial_speed_mps must be > 0");
    }
};

namespace detail {

/// Backward-Euler acceleration a = f(v + a dt) for an accelerating step.
/// Near contact the interaction term swings from +a to hard braking within
/// one step; evaluating it at the end-of-step speed keeps a follower creeping
/// up from standstill from overshooting into the lead.
inline double implicit_acceleration(const IdmParams& p, double v, double gap, double v_lead, double dt) {
    auto residual = [&](double w) { return v + dt * p.acceleration(w, gap, w - v_lead) - w; };
    double explicit_acc = p.acceleration(v, gap, v - v_lead);
    // The root lies between v and the explicit end speed whenever the IDM
    // acceleration falls with speed; otherwise the explicit value is smaller.
    double lo = v, hi = v + dt * explicit_acc;
    double r_lo = residual(lo), r_hi = residual(hi);
    if (r_hi >= 0.0) return explicit_acc;
    // Illinois variant of regula falsi.
    int side = 0;
    for (int it = 0; it < 100 && hi - lo > 1e-13 * (1.0 + hi); ++it) {
        double w = (lo * r_hi - hi * r_lo) / (r_hi - r_lo);
        double r = residual(w);
        if (r == 0.0) return (w - v) / dt;
        if (r > 0.0) {
            lo = w;
            r_lo = r;
            if (side == -1) r_hi *= 0.5;
            side = -1;
        } else {
            hi = w;
            r_hi = r;
            if (side == 1) r_lo *= 0.5;
            side = 1;
        }
    }
    return (0.5 * (lo + hi) - v) / dt;
}

}  // namespace detail

/// One cut-in: the lead appears at gap R travelling at v_follower + Rdot and
/// holds that speed. The follower's acceleration is held constant over each
/// step and positions are integrated exactly, including a stop inside the
/// step; contact is checked at the closest approach within the step.
/// Accelerating steps use the backward-Euler value, braking steps the IDM
/// value at the start of the step. Returns 1 when the gap closes within the
/// horizon.
inline int simulate_episode(const Scenario& x, const IdmParams& follower, const EpisodeConfig& cfg) {
    require_in_box(x);
    follower.validate();
    cfg.validate();

    const double dt = cfg.dt_s;
    double v = cfg.av_initial_speed_mps;
    const double v_lead = std::max(0.0, v + x.range_rate_mps);
    double gap = x.range_m;
    if (gap <= 0.0) return 1;

    const auto steps = static_cast<long>(std::llround(cfg.horizon_s / dt));
    for (long t = 0; t < steps; ++t) {
        double a = follower.acceleration(v, gap, v - v_lead);
        if (a > 0.0) a = std::min(a, detail::implicit_acceleration(follower, v, gap, v_lead, dt));
        double moving = (v + a * dt < 0.0) ? -v / a : dt;  // time until the follower stops
        auto gap_at = [&](double s) { return gap + (v_lead - v) * s - 0.5 * a * s * s; };
        double closest = gap_at(moving);
        if (a < 0.0) {
            double s = (v_lead - v) / a;  // relative speed reaches zero
            if (s > 0.0 && s < moving) closest = std::min(closest, gap_at(s));
        }
        if (closest <= 0.0) return 1;
        gap = gap_at(moving) + v_lead * (dt - moving);
        v = moving < dt ? 0.0 : std::max(0.0, v + a * dt);
    }
    return 0;
}

/// Outcome P_m(A|x) per grid cell, aligned with ScenarioGrid::cells().
struct PerformanceMap {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }

    bool is_binary() const {
        return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0 || v == 1.0; });
    }

    void validate(const ScenarioGrid& grid) const {
        require(values.size() == grid.size(), "performance map: size does not match grid");
        for (double v : values) require(v >= 0.0 && v <= 1.0, "performance map: values must be in [0,1]");
    }

    std::string to_csv(const ScenarioGrid& grid) const {
        validate(grid);
        std::string out = "r,rdot,value\n";
        for (std::size_t k = 0; k < values.size(); ++k)
            out += format_double(grid.cell(k).range_m) + "," + format_double(grid.cell(k).range_rate_mps) + "," +
                   format_double(values[k]) + "\n";
        return out;
    }

    static PerformanceMap from_csv(const std::filesystem::path& path, const ScenarioGrid& grid) {
        auto rows = read_csv(path, "r,rdot,value");
        if (rows.size() != grid.size()) throw ArtifactError(path.string() + ": row count does not match grid");
        PerformanceMap map;
        map.values.reserve(rows.size());
        for (std::size_t k = 0; k < rows.size(); ++k) {
            if (std::abs(parse_double(rows[k][0]) - grid.cell(k).range_m) > 1e-9 ||
                std::abs(parse_double(rows[k][1]) - grid.cell(k).range_rate_mps) > 1e-9)
                throw ArtifactError(path.string() + ": row " + std::to_string(k) + " is not aligned with the grid");
            map.values.push_back(parse_double(rows[k][2]));
        }
        try {
            map.validate(grid);
        } catch (const ValidationError& e) {
            throw ArtifactError(path.string() + ": " + e.what());
        }
        return map;
    }
};

/// Simulates every grid cell. Work is split into contiguous index blocks, so
/// the result does not depend on the thread count.
inline PerformanceMap rasterize_model(const IdmParams& follower, const ScenarioGrid& grid, const EpisodeConfig& cfg,
                                      unsigned threads = 1) {
    follower.validate();
    cfg.validate();
    PerformanceMap map;
    map.values.assign(grid.size(), 0.0);
    auto run = [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) map.values[k] = simulate_episode(grid.cell(k), follower, cfg);
    };
    threads = std::max(1u, threads);
    if (threads == 1) {
        run(0, grid.size());
        return map;
    }
    std::vector<std::thread> pool;
    std::size_t block = (grid.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        std::size_t begin = std::min(grid.size(), t * block);
        std::size_t end = std::min(grid.size(), begin + block);
        pool.emplace_back(run, begin, end);
    }
    for (auto& th : pool) th.join();
    return map;
}

/// Exact performance index on the discrete space: sum of outcome * exposure.
inline double ground_truth(const PerformanceMap& map, const ScenarioGrid& grid) {
    require(map.size() == grid.size(), "ground_truth: map is not aligned with the grid");
    double sum = 0.0;
    for (std::size_t k = 0; k < map.size(); ++k) sum += map.values[k] * grid.exposure()[k];
    return sum;
}

/// Default surrogate vertices, ordered aggressive to conservative.
inline std::vector<IdmParams> default_surrogates() {
    std::vector<IdmParams> out;
    const double headway[] = {0.6, 1.0, 1.5, 2.0};
    const double decel[] = {3.5, 3.0, 2.5, 2.0};
    const double braking[] = {3.5, 5.0, 7.0, 10.0};
    for (int i = 0; i < 4; ++i) {
        IdmParams p;
        p.time_headway_s = headway[i];
        p.comfortable_decel_mps2 = decel[i];
        p.max_decel_mps2 = braking[i];
        out.push_back(p);
    }
    return out;
}

/// Default vehicles under test, sitting between neighbouring surrogates.
inline std::vector<IdmParams> default_subjects() {
    std::vector<IdmParams> out;
    const double headway[] = {0.8, 1.2, 1.7};
    const double decel[] = {3.25, 2.8, 2.3};
    const double braking[] = {4.25, 6.0, 8.5};
    for (int i = 0; i < 3; ++i) {
        IdmParams p;
        p.time_headway_s = headway[i];
        p.comfortable_decel_mps2 = decel[i];
        p.max_decel_mps2 = braking[i];
        out.push_back(p);
    }
    return out;
}

}  // namespace fst
