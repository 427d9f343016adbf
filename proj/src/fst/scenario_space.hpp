#pragma once

// Discretized cut-in state space: range R in [0, 90] m, range rate in
// [-20, 10] m/s, with a synthetic exposure distribution over the cells.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fst/common.hpp"

namespace fst {

inline constexpr double kRangeMin = 0.0;
inline constexpr double kRangeMax = 90.0;
inline constexpr double kRangeRateMin = -20.0;
inline constexpr double kRangeRateMax = 10.0;

struct Scenario {
    double range_m = 0.0;
    double range_rate_mps = 0.0;

    friend bool operator==(const Scenario&, const Scenario&) = default;
};

inline bool in_box(const Scenario& s) {
    return s.range_m >= kRangeMin && s.range_m <= kRangeMax && s.range_rate_mps >= kRangeRateMin &&
           s.range_rate_mps <= kRangeRateMax;
}

inline void require_in_box(const Scenario& s) {
    if (!in_box(s)) {
        std::ostringstream os;
        os << "scenario (" << s.range_m << ", " << s.range_rate_mps << ") outside [0,90]x[-20,10]";
        throw ValidationError(os.str());
    }
}

/// Unit-square coordinates used as network input.
using UnitCoords = std::array<double, 2>;

inline UnitCoords normalize_coords(const Scenario& s) {
    require_in_box(s);
    return {(s.range_m - kRangeMin) / (kRangeMax - kRangeMin),
            (s.range_rate_mps - kRangeRateMin) / (kRangeRateMax - kRangeRateMin)};
}

inline Scenario denormalize_coords(const UnitCoords& u) {
    return {kRangeMin + u[0] * (kRangeMax - kRangeMin), kRangeRateMin + u[1] * (kRangeRateMax - kRangeRateMin)};
}

struct GaussianComponent {
    double weight = 1.0;
    double mean_r = 0.0;
    double mean_rdot = 0.0;
    double std_r = 1.0;
    double std_rdot = 1.0;
};

struct ExposureModel {
    std::vector<GaussianComponent> components;

    void validate() const {
        require(!components.empty(), "exposure: at least one mixture component required");
        double total = 0.0;
        for (const auto& c : components) {
            require(c.weight >= 0.0 && std::isfinite(c.weight), "exposure: component weights must be >= 0");
            require(c.std_r > 0.0 && c.std_rdot > 0.0, "exposure: component std values must be > 0");
            require(std::isfinite(c.mean_r) && std::isfinite(c.mean_rdot), "exposure: means must be finite");
            total += c.weight;
        }
        require(std::abs(total - 1.0) <= 1e-9, "exposure: component weights must sum to 1");
    }

    /// Unnormalized mixture density at a point.
    double density(double r, double rdot) const {
        double sum = 0.0;
        for (const auto& c : components) {
            double zr = (r - c.mean_r) / c.std_r;
            double zd = (rdot - c.mean_rdot) / c.std_rdot;
            sum += c.weight * std::exp(-0.5 * (zr * zr + zd * zd)) / (2.0 * std::numbers::pi * c.std_r * c.std_rdot);
        }
        return sum;
    }
};

/// Mixture concentrated on moderate-gap, near-zero range-rate cut-ins, so the
/// low-range closing corner where crashes happen carries almost no exposure.
inline ExposureModel default_exposure() {
    return ExposureModel{{{0.7, 45.0, 1.0, 15.0, 3.0}, {0.3, 30.0, -4.0, 10.0, 4.0}}};
}

class ScenarioGrid {
public:
    ScenarioGrid() = default;

    ScenarioGrid(std::size_t r_steps, std::size_t rdot_steps, std::vector<double> exposure)
        : r_steps_(r_steps), rdot_steps_(rdot_steps), exposure_(std::move(exposure)) {
        require(r_steps >= 2 && rdot_steps >= 2, "grid: step counts must be >= 2");
        require(exposure_.size() == r_steps * rdot_steps, "grid: exposure size must equal r_steps * rdot_steps");
        cells_.reserve(size());
        for (std::size_t j = 0; j < rdot_steps_; ++j)
            for (std::size_t i = 0; i < r_steps_; ++i) cells_.push_back(cell_at(i, j));
        for (double p : exposure_) require(p >= 0.0 && std::isfinite(p), "grid: exposure values must be >= 0");
    }

    std::size_t r_steps() const { return r_steps_; }
    std::size_t rdot_steps() const { return rdot_steps_; }
    std::size_t size() const { return r_steps_ * rdot_steps_; }
    const std::vector<Scenario>& cells() const { return cells_; }
    const std::vector<double>& exposure() const { return exposure_; }
    const Scenario& cell(std::size_t k) const { return cells_.at(k); }

    double r_spacing() const { return (kRangeMax - kRangeMin) / double(r_steps_ - 1); }
    double rdot_spacing() const { return (kRangeRateMax - kRangeRateMin) / double(rdot_steps_ - 1); }

    Scenario cell_at(std::size_t i, std::size_t j) const {
        // Endpoints are pinned so the corners are exactly the box corners.
        double r = i + 1 == r_steps_ ? kRangeMax : kRangeMin + r_spacing() * double(i);
        double d = j + 1 == rdot_steps_ ? kRangeRateMax : kRangeRateMin + rdot_spacing() * double(j);
        return {r, d};
    }

    std::size_t index(std::size_t i, std::size_t j) const { return j * r_steps_ + i; }

    /// Cell minimizing the normalized-coordinate distance. The grid is a
    /// product of uniform axes, so this is per-axis rounding; exact midpoints
    /// go to the lower index.
    std::size_t nearest_cell(const Scenario& s) const {
        require_in_box(s);
        return index(nearest_axis((s.range_m - kRangeMin) / r_spacing(), r_steps_),
                     nearest_axis((s.range_rate_mps - kRangeRateMin) / rdot_spacing(), rdot_steps_));
    }

    /// Nearest cell for a unit-square point, clamping outside points.
    std::size_t nearest_cell(const UnitCoords& u) const {
        return index(nearest_axis(std::clamp(u[0], 0.0, 1.0) * double(r_steps_ - 1), r_steps_),
                     nearest_axis(std::clamp(u[1], 0.0, 1.0) * double(rdot_steps_ - 1), rdot_steps_));
    }

    /// Equal-probability binning of the unit square onto cells: each cell owns
    /// a 1/r_steps x 1/rdot_steps tile. Used by the uniform baseline so every
    /// cell is drawn with probability exactly 1/N.
    std::size_t cell_of_tile(const UnitCoords& u) const {
        auto bin = [](double x, std::size_t steps) {
            auto k = static_cast<std::size_t>(std::floor(std::clamp(x, 0.0, 1.0) * double(steps)));
            return std::min(k, steps - 1);
        };
        return index(bin(u[0], r_steps_), bin(u[1], rdot_steps_));
    }

    std::string to_csv() const {
        std::string out = "r,rdot,p\n";
        for (std::size_t k = 0; k < size(); ++k)
            out += format_double(cells_[k].range_m) + "," + format_double(cells_[k].range_rate_mps) + "," +
                   format_double(exposure_[k]) + "\n";
        return out;
    }

    static ScenarioGrid from_csv(const std::filesystem::path& path) {
        auto rows = read_csv(path, "r,rdot,p");
        std::size_t r_steps = 0;
        while (r_steps < rows.size() && parse_double(rows[r_steps][1]) == parse_double(rows[0][1])) ++r_steps;
        if (r_steps < 2 || rows.size() % r_steps != 0) throw ArtifactError(path.string() + ": not a product grid");
        std::vector<double> p;
        p.reserve(rows.size());
        for (const auto& row : rows) p.push_back(parse_double(row[2]));
        double total = 0.0;
        for (double v : p) total += v;
        if (std::abs(total - 1.0) > 1e-9) throw ArtifactError(path.string() + ": exposure does not sum to 1");
        ScenarioGrid grid(r_steps, rows.size() / r_steps, std::move(p));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            if (std::abs(parse_double(rows[k][0]) - grid.cells_[k].range_m) > 1e-9 ||
                std::abs(parse_double(rows[k][1]) - grid.cells_[k].range_rate_mps) > 1e-9)
                throw ArtifactError(path.string() + ": cell coordinates do not match a uniform grid");
        }
        return grid;
    }

private:
    static std::size_t nearest_axis(double pos, std::size_t steps) {
        auto k = static_cast<long long>(std::ceil(pos - 0.5));
        return static_cast<std::size_t>(std::clamp<long long>(k, 0, static_cast<long long>(steps) - 1));
    }

    std::size_t r_steps_ = 0;
    std::size_t rdot_steps_ = 0;
    std::vector<Scenario> cells_;
    std::vector<double> exposure_;
};

/// Uniform grid over the box with the mixture density evaluated at each cell
/// center and renormalized to sum to one.
inline ScenarioGrid build_grid(std::size_t r_steps, std::size_t rdot_steps, const ExposureModel& model) {
    require(r_steps >= 2 && rdot_steps >= 2, "grid: step counts must be >= 2");
    model.validate();
    ScenarioGrid shape(r_steps, rdot_steps, std::vector<double>(r_steps * rdot_steps, 0.0));
    std::vector<double> p(shape.size());
    double total = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        p[k] = model.density(shape.cell(k).range_m, shape.cell(k).range_rate_mps);
        total += p[k];
    }
    if (!(total > 0.0) || !std::isfinite(total))
        throw ValidationError("exposure: mixture has no mass inside the box");
    for (double& v : p) v /= total;
    return ScenarioGrid(r_steps, rdot_steps, std::move(p));
}

}  // namespace fst
