#pragma once

#include "lab/model/policy.hpp"
#include "lab/tokenizer.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace lab::graph {

// Think-segment step texts, split at sentence-final punctuation tokens.
std::vector<std::string> segment_steps(const Tokenizer& tok, const model::Trace& trace);

// Mean mid-layer hidden state over each step's token span. Vector count always
// equals the step count from segment_steps on the same trace.
std::vector<VecX> embed_steps(const model::Policy& policy, const Tokenizer& tok,
                              const model::Trace& trace);

// Directed multigraph over clustered step representations.
struct ReasoningGraph {
    int k = 0;       // node count (clusters)
    uint64_t seed = 0;
    std::map<std::pair<int, int>, int> edges;        // (from, to) -> multiplicity
    std::vector<std::vector<int>> trajectories;       // cluster id path per trajectory
};

// Pools all step vectors, k-means clusters them, and draws one edge per
// consecutive step pair within each trajectory.
ReasoningGraph build_graph(const std::vector<std::vector<VecX>>& trajectories, int k, uint64_t seed);

struct GraphStats {
    int64_t cycle_count = 0;
    int diameter = 0;
    std::optional<double> small_world;
};

// Simple digraph projection used by the metric primitives and their tests.
struct Digraph {
    int n = 0;
    std::set<std::pair<int, int>> edges;
};

Digraph simple_projection(const ReasoningGraph& g);

// Exact number of simple directed cycles (self-loops count).
int64_t count_simple_cycles(const Digraph& g);

// Longest finite shortest path on the largest weakly-connected component of
// the undirected projection (self-loops ignored).
int diameter_of(const Digraph& g);

// sigma = (C/C_rand) / (L/L_rand) against degree-preserving rewirings of the
// undirected projection; absent when the graph is too small or degenerate.
std::optional<double> small_world_index(const Digraph& g, int rewirings, uint64_t seed);

GraphStats graph_stats(const ReasoningGraph& g, uint64_t seed, int rewirings = 20);

// Distribution data for violin-style reporting: stats over random trajectory
// subsamples of the same graph.
std::vector<GraphStats> stats_distribution(const ReasoningGraph& g, int n_samples, double fraction,
                                           uint64_t seed);

int default_cluster_count(std::size_t total_steps);  // ceil(sqrt(total))

}  // namespace lab::graph
