#pragma once

// Surrogate-model set: the convex hull of s vertex performance maps.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fst/common.hpp"
#include "fst/cutin_sim.hpp"
#include "fst/scenario_space.hpp"

namespace fst {

struct ConvexWeights {
    std::vector<double> c;

    void validate(std::size_t s) const {
        require(c.size() == s, "convex weights: expected " + std::to_string(s) + " entries");
        double total = 0.0;
        for (double v : c) {
            require(v >= 0.0 && std::isfinite(v), "convex weights: entries must be >= 0");
            total += v;
        }
        require(std::abs(total - 1.0) <= 1e-12, "convex weights: entries must sum to 1");
    }

    static ConvexWeights one_hot(std::size_t s, std::size_t j) {
        ConvexWeights w{std::vector<double>(s, 0.0)};
        w.c.at(j) = 1.0;
        return w;
    }
};

class SurrogateSet {
public:
    SurrogateSet() = default;

    SurrogateSet(std::vector<PerformanceMap> vertex_maps, const ScenarioGrid& grid) : maps_(std::move(vertex_maps)) {
        require(maps_.size() >= 2, "surrogate set: at least 2 vertex models required");
        for (const auto& m : maps_) {
            m.validate(grid);
            truths_.push_back(ground_truth(m, grid));
        }
    }

    std::size_t size() const { return maps_.size(); }
    std::size_t cells() const { return maps_.front().size(); }
    const std::vector<PerformanceMap>& vertex_maps() const { return maps_; }
    const std::vector<double>& vertex_ground_truths() const { return truths_; }
    const PerformanceMap& vertex(std::size_t i) const { return maps_.at(i); }

    /// Writes one CSV per vertex plus manifest.json listing files and truths.
    void save(const std::filesystem::path& dir, const ScenarioGrid& grid, const nlohmann::json& extra = {}) const {
        nlohmann::json manifest;
        manifest["vertices"] = nlohmann::json::array();
        for (std::size_t i = 0; i < size(); ++i) {
            std::string name = "vertex_" + std::to_string(i) + ".csv";
            write_file(dir / name, maps_[i].to_csv(grid));
            manifest["vertices"].push_back(
                {{"file", name}, {"ground_truth", truths_[i]}, {"hash", file_hash(dir / name)}});
        }
        for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
        write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    }

    static SurrogateSet load(const std::filesystem::path& dir, const ScenarioGrid& grid) {
        auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
        std::vector<PerformanceMap> maps;
        std::vector<double> recorded;
        for (const auto& v : manifest.at("vertices")) {
            auto path = dir / v.at("file").get<std::string>();
            if (v.contains("hash") && file_hash(path) != v.at("hash").get<std::string>())
                throw ArtifactError("hash mismatch for " + path.string());
            maps.push_back(PerformanceMap::from_csv(path, grid));
            recorded.push_back(v.at("ground_truth").get<double>());
        }
        SurrogateSet set(std::move(maps), grid);
        for (std::size_t i = 0; i < set.size(); ++i)
            if (std::abs(set.truths_[i] - recorded[i]) > 1e-12)
                throw ArtifactError(dir.string() + ": recorded ground truth of vertex " + std::to_string(i) +
                                    " does not match its map");
        return set;
    }

private:
    std::vector<PerformanceMap> maps_;
    std::vector<double> truths_;
};

/// Elementwise convex combination of the vertex maps.
inline PerformanceMap combine(const SurrogateSet& set, const ConvexWeights& c) {
    c.validate(set.size());
    PerformanceMap out;
    out.values.assign(set.cells(), 0.0);
    for (std::size_t i = 0; i < set.size(); ++i)
        for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] += c.c[i] * set.vertex(i).values[k];
    for (double& v : out.values) v = std::clamp(v, 0.0, 1.0);
    return out;
}

/// Ground truth of a member, by linearity of the exposure sum.
inline double member_ground_truth(const SurrogateSet& set, const ConvexWeights& c) {
    c.validate(set.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) sum += c.c[i] * set.vertex_ground_truths()[i];
    return sum;
}

struct VertexError {
    std::size_t index = 0;
    double error = 0.0;
};

/// Worst |estimate_i - mu_i| over the vertices; ties go to the lower index.
/// The worst error over the whole hull is attained here.
inline VertexError worst_vertex_error(const SurrogateSet& set, const std::vector<double>& estimates) {
    require(estimates.size() == set.size(), "worst_vertex_error: expected one estimate per vertex");
    VertexError worst{0, -1.0};
    for (std::size_t i = 0; i < set.size(); ++i) {
        double e = std::abs(estimates[i] - set.vertex_ground_truths()[i]);
        if (e > worst.error) worst = {i, e};
    }
    return worst;
}

/// Symmetric Dirichlet(1,...,1) draw, i.e. uniform on the simplex.
inline ConvexWeights sample_member(const SurrogateSet& set, std::uint64_t seed) {
    require(set.size() >= 2, "sample_member: at least 2 vertices required");
    Rng rng(seed);
    std::exponential_distribution<double> expo(1.0);
    ConvexWeights w{std::vector<double>(set.size())};
    double total = 0.0;
    for (double& v : w.c) total += (v = expo(rng));
    for (double& v : w.c) v /= total;
    // Absorb rounding so the sum is 1 to the last bit that matters.
    double residual = 1.0;
    for (std::size_t i = 0; i + 1 < w.c.size(); ++i) residual -= w.c[i];
    w.c.back() = std::max(0.0, residual);
    return w;
}

}  // namespace fst
