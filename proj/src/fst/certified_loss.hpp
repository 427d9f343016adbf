#pragma once

// Worst-vertex evaluation error: the quantity minimized both when training
// the similarity network and when optimizing the test set. For fixed fusion
// weights the error over the convex hull peaks at a vertex, so the max over
// the s vertex models is the bound for every member.

#include <cmath>
#include <vector>

#include "fst/common.hpp"
#include "fst/cutin_sim.hpp"
#include "fst/model_set.hpp"
#include "fst/scenario_space.hpp"
#include "fst/similarity_net.hpp"

namespace fst {

/// Outcomes of each vertex model at a set of test cells, plus the truths.
struct VertexOutcomes {
    std::vector<std::vector<double>> outcomes;  // [vertex][query]
    std::vector<double> truths;                 // [vertex]

    std::size_t vertices() const { return truths.size(); }
};

inline VertexOutcomes lookup_outcomes(const std::vector<PerformanceMap>& maps, const std::vector<double>& truths,
                                      const std::vector<std::size_t>& cells) {
    require(maps.size() == truths.size() && !maps.empty(), "lookup_outcomes: need one truth per map");
    VertexOutcomes out;
    out.truths = truths;
    for (const auto& m : maps) {
        std::vector<double> o;
        o.reserve(cells.size());
        for (auto k : cells) o.push_back(m.values.at(k));
        out.outcomes.push_back(std::move(o));
    }
    return out;
}

inline VertexOutcomes lookup_outcomes(const SurrogateSet& set, const std::vector<std::size_t>& cells) {
    return lookup_outcomes(set.vertex_maps(), set.vertex_ground_truths(), cells);
}

struct LossValue {
    double loss = 0.0;
    std::size_t worst = 0;       // argmax vertex, lowest index on ties
    double signed_error = 0.0;   // estimate - truth at the worst vertex
    std::vector<double> estimates;
};

inline LossValue worst_vertex_loss(const FusionWeights& w, const VertexOutcomes& v) {
    LossValue out;
    out.loss = -1.0;
    for (std::size_t m = 0; m < v.vertices(); ++m) {
        double est = fuse_estimate(w, v.outcomes[m]);
        out.estimates.push_back(est);
        double err = est - v.truths[m];
        if (std::abs(err) > out.loss) {
            out.loss = std::abs(err);
            out.worst = m;
            out.signed_error = err;
        }
    }
    require_finite(out.loss, "worst-vertex loss");
    return out;
}

/// Subgradient of the loss with respect to the fusion weights: only the
/// argmax vertex contributes.
inline std::vector<double> worst_vertex_loss_grad(const LossValue& value, const VertexOutcomes& v) {
    double sign = value.signed_error > 0.0 ? 1.0 : (value.signed_error < 0.0 ? -1.0 : 0.0);
    std::vector<double> g(v.outcomes[value.worst].size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = sign * v.outcomes[value.worst][i];
    return g;
}

}  // namespace fst
