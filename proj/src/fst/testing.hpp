#pragma once

// Small fixtures shared by the unit and integration tests.

#include <random>
#include <string>
#include <vector>

#include "fst/common.hpp"
#include "fst/cutin_sim.hpp"
#include "fst/model_set.hpp"
#include "fst/scenario_space.hpp"
#include "fst/similarity_net.hpp"

namespace fst::testing {

/// Grid with random positive exposure summing to one.
inline ScenarioGrid random_grid(std::size_t r_steps, std::size_t rdot_steps, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> U(0.05, 1.0);
    std::vector<double> p(r_steps * rdot_steps);
    double total = 0.0;
    for (double& v : p) total += (v = U(rng));
    for (double& v : p) v /= total;
    return ScenarioGrid(r_steps, rdot_steps, std::move(p));
}

inline std::vector<Scenario> random_scenarios(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> R(kRangeMin, kRangeMax), D(kRangeRateMin, kRangeRateMax);
    std::vector<Scenario> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({R(rng), D(rng)});
    return out;
}

inline std::vector<UnitCoords> unit_of(const std::vector<Scenario>& s) {
    std::vector<UnitCoords> out;
    for (const auto& x : s) out.push_back(normalize_coords(x));
    return out;
}

/// Random binary map with roughly `rate` ones.
inline PerformanceMap random_map(std::size_t cells, double rate, std::uint64_t seed) {
    Rng rng(seed);
    std::bernoulli_distribution B(rate);
    PerformanceMap m;
    for (std::size_t k = 0; k < cells; ++k) m.values.push_back(B(rng) ? 1.0 : 0.0);
    return m;
}

inline SurrogateSet random_set(const ScenarioGrid& grid, std::size_t s, std::uint64_t seed) {
    std::vector<PerformanceMap> maps;
    for (std::size_t i = 0; i < s; ++i) maps.push_back(random_map(grid.size(), 0.3, derive_seed(seed, "map", i)));
    return SurrogateSet(std::move(maps), grid);
}

inline NetParams small_net(std::uint64_t seed, double temperature = 1.0) {
    return NetParams::initialize({{8, 8}, 4}, seed, temperature);
}

/// Config overrides for a pipeline run that finishes in seconds.
inline std::vector<std::string> tiny_run_overrides(const std::string& output_dir) {
    return {"output_dir=" + output_dir,
            "grid.r_steps=16",
            "grid.rdot_steps=11",
            "network.hidden=[8]",
            "network.feature_dim=4",
            "training.epochs=3",
            "training.batches_per_epoch=2",
            "training.n_train=3",
            "training.k=3",
            "optimization.n=4",
            "optimization.restarts=2",
            "optimization.steps=10",
            "evaluation.n_values=[3,4]",
            "evaluation.trials=100",
            "evaluation.fst_restarts=1",
            "evaluation.fst_steps=5",
            "evaluation.bound_draws=50",
            "evaluation.ablation.n=4",
            "evaluation.cross_n.train_n=[3,4]",
            "evaluation.cross_n.test_n=[3]",
            "evaluation.cross_n.epochs=2"};
}

/// Default grid and surrogate set, built once per process.
struct DefaultSetup {
    ScenarioGrid grid;
    SurrogateSet set;
    std::vector<PerformanceMap> subjects;

    static const DefaultSetup& get() {
        static const DefaultSetup instance = [] {
            DefaultSetup d;
            d.grid = build_grid(91, 61, default_exposure());
            EpisodeConfig ep;
            std::vector<PerformanceMap> maps;
            for (const auto& p : default_surrogates()) maps.push_back(rasterize_model(p, d.grid, ep));
            d.set = SurrogateSet(std::move(maps), d.grid);
            for (const auto& p : default_subjects()) d.subjects.push_back(rasterize_model(p, d.grid, ep));
            return d;
        }();
        return instance;
    }
};

}  // namespace fst::testing
