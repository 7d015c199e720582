#include "lab/graph/reasoning_graph.hpp"

#include "lab/core/rng.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace lab::graph {

namespace {

bool is_boundary(const Tokenizer& tok, TokenId id) {
    const std::string& w = tok.word(id);
    return w == "." || w == "?" || w == "!" || w == "\n";
}

// Token spans of the think segment split at boundary tokens, relative to the
// full sequence of the trace.
std::vector<std::pair<std::size_t, std::size_t>> step_spans(const Tokenizer& tok,
                                                            const model::Trace& trace,
                                                            TokenSeq* full_out) {
    TokenSeq full = trace.full_ids();
    std::size_t open = full.size(), close = full.size();
    for (std::size_t i = 0; i < full.size(); ++i) {
        if (full[i] == tok.think_open_id()) {
            open = i;
            break;
        }
    }
    if (open < full.size()) {
        for (std::size_t i = open + 1; i < full.size(); ++i) {
            if (full[i] == tok.think_close_id()) {
                close = i;
                break;
            }
        }
    }
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    if (open < full.size()) {
        std::size_t begin = open + 1;
        for (std::size_t i = open + 1; i < std::min(close, full.size()); ++i) {
            if (is_boundary(tok, full[i])) {
                if (i + 1 > begin) spans.emplace_back(begin, i + 1);  // keep the terminator
                begin = i + 1;
            }
        }
        std::size_t end = std::min(close, full.size());
        if (begin < end) spans.emplace_back(begin, end);  // trailing fragment without terminator
    }
    if (full_out) *full_out = std::move(full);
    return spans;
}

}  // namespace

std::vector<std::string> segment_steps(const Tokenizer& tok, const model::Trace& trace) {
    TokenSeq full;
    auto spans = step_spans(tok, trace, &full);
    std::vector<std::string> steps;
    for (const auto& [begin, end] : spans) {
        std::string text = tok.decode(full, begin, end);
        if (!text.empty()) steps.push_back(std::move(text));
    }
    return steps;
}

std::vector<VecX> embed_steps(const model::Policy& policy, const Tokenizer& tok,
                              const model::Trace& trace) {
    TokenSeq full;
    auto spans = step_spans(tok, trace, &full);
    if (spans.empty()) return {};
    const int mid_layer = (policy.cfg.layers - 1) / 2;
    MatX hidden = model::hidden_states(policy, full, mid_layer);

    std::vector<VecX> vectors;
    for (const auto& [begin, end] : spans) {
        if (end > static_cast<std::size_t>(hidden.cols()) || begin >= end) {
            throw DataError("embed_steps: step span misaligned with the token sequence");
        }
        VecX mean = VecX::Zero(hidden.rows());
        for (std::size_t t = begin; t < end; ++t) mean += hidden.col(static_cast<Eigen::Index>(t));
        mean /= static_cast<double>(end - begin);
        if (!mean.allFinite()) throw DataError("embed_steps: non-finite embedding");
        vectors.push_back(std::move(mean));
    }
    return vectors;
}

int default_cluster_count(std::size_t total_steps) {
    return std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(total_steps)))));
}

ReasoningGraph build_graph(const std::vector<std::vector<VecX>>& trajectories, int k, uint64_t seed) {
    std::vector<const VecX*> pool;
    for (const auto& traj : trajectories) {
        for (const auto& v : traj) pool.push_back(&v);
    }
    if (k < 1) throw ConfigError("build_graph: k must be >= 1");
    if (pool.size() < static_cast<std::size_t>(k)) {
        throw ConfigError("build_graph: fewer steps than clusters");
    }
    const auto dim = pool.front()->size();

    // k-means with seeded distinct init; empty clusters grab the farthest point.
    Rng rng(0x4b4d4541ULL ^ seed);
    std::vector<std::size_t> init(pool.size());
    for (std::size_t i = 0; i < init.size(); ++i) init[i] = i;
    rng.shuffle(init);
    MatX centroids(dim, k);
    for (int c = 0; c < k; ++c) centroids.col(c) = *pool[init[static_cast<std::size_t>(c)]];

    std::vector<int> assign(pool.size(), -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            int best = 0;
            double best_d = (centroids.col(0) - *pool[i]).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const double d = (centroids.col(c) - *pool[i]).squaredNorm();
                if (d < best_d) {
                    best = c;
                    best_d = d;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        MatX sums = MatX::Zero(dim, k);
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < pool.size(); ++i) {
            sums.col(assign[i]) += *pool[i];
            ++counts[static_cast<std::size_t>(assign[i])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                centroids.col(c) = sums.col(c) / counts[static_cast<std::size_t>(c)];
            } else {
                // farthest point from its centroid
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < pool.size(); ++i) {
                    const double d = (centroids.col(assign[i]) - *pool[i]).squaredNorm();
                    if (d > far_d) {
                        far = i;
                        far_d = d;
                    }
                }
                centroids.col(c) = *pool[far];
            }
        }
    }

    ReasoningGraph g;
    g.k = k;
    g.seed = seed;
    std::size_t at = 0;
    for (const auto& traj : trajectories) {
        std::vector<int> path;
        for (std::size_t s = 0; s < traj.size(); ++s) path.push_back(assign[at++]);
        for (std::size_t s = 0; s + 1 < path.size(); ++s) {
            ++g.edges[{path[s], path[s + 1]}];
        }
        g.trajectories.push_back(std::move(path));
    }
    return g;
}

Digraph simple_projection(const ReasoningGraph& g) {
    Digraph d;
    d.n = g.k;
    for (const auto& [edge, mult] : g.edges) d.edges.insert(edge);
    return d;
}

namespace {

std::vector<std::vector<int>> adjacency(const Digraph& g) {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(g.n));
    for (const auto& [from, to] : g.edges) adj[static_cast<std::size_t>(from)].push_back(to);
    return adj;
}

// Undirected simple adjacency, self-loops dropped.
std::vector<std::set<int>> undirected(const Digraph& g) {
    std::vector<std::set<int>> adj(static_cast<std::size_t>(g.n));
    for (const auto& [from, to] : g.edges) {
        if (from == to) continue;
        adj[static_cast<std::size_t>(from)].insert(to);
        adj[static_cast<std::size_t>(to)].insert(from);
    }
    return adj;
}

void dfs_cycles(int start, int node, const std::vector<std::vector<int>>& adj,
                std::vector<bool>& on_path, int64_t& count) {
    for (int next : adj[static_cast<std::size_t>(node)]) {
        if (next == start) {
            ++count;
        } else if (next > start && !on_path[static_cast<std::size_t>(next)]) {
            on_path[static_cast<std::size_t>(next)] = true;
            dfs_cycles(start, next, adj, on_path, count);
            on_path[static_cast<std::size_t>(next)] = false;
        }
    }
}

std::vector<int> largest_component(const std::vector<std::set<int>>& adj) {
    const int n = static_cast<int>(adj.size());
    std::vector<int> comp(static_cast<std::size_t>(n), -1);
    int best_root = -1;
    std::size_t best_size = 0;
    for (int s = 0; s < n; ++s) {
        if (comp[static_cast<std::size_t>(s)] != -1) continue;
        std::vector<int> members;
        std::deque<int> queue{s};
        comp[static_cast<std::size_t>(s)] = s;
        while (!queue.empty()) {
            int u = queue.front();
            queue.pop_front();
            members.push_back(u);
            for (int v : adj[static_cast<std::size_t>(u)]) {
                if (comp[static_cast<std::size_t>(v)] == -1) {
                    comp[static_cast<std::size_t>(v)] = s;
                    queue.push_back(v);
                }
            }
        }
        if (members.size() > best_size) {
            best_size = members.size();
            best_root = s;
        }
    }
    std::vector<int> out;
    for (int v = 0; v < n; ++v) {
        if (best_root != -1 && comp[static_cast<std::size_t>(v)] == best_root) out.push_back(v);
    }
    return out;
}

// BFS distances from src restricted to `adj`.
std::vector<int> bfs_dist(int src, const std::vector<std::set<int>>& adj) {
    std::vector<int> dist(adj.size(), -1);
    std::deque<int> queue{src};
    dist[static_cast<std::size_t>(src)] = 0;
    while (!queue.empty()) {
        int u = queue.front();
        queue.pop_front();
        for (int v : adj[static_cast<std::size_t>(u)]) {
            if (dist[static_cast<std::size_t>(v)] == -1) {
                dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
                queue.push_back(v);
            }
        }
    }
    return dist;
}

double clustering_coefficient(const std::vector<std::set<int>>& adj) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t u = 0; u < adj.size(); ++u) {
        const auto& nbrs = adj[u];
        const std::size_t deg = nbrs.size();
        ++n;
        if (deg < 2) continue;
        int links = 0;
        for (int a : nbrs) {
            for (int b : nbrs) {
                if (a < b && adj[static_cast<std::size_t>(a)].count(b)) ++links;
            }
        }
        sum += 2.0 * links / (static_cast<double>(deg) * (static_cast<double>(deg) - 1.0));
    }
    return n == 0 ? 0.0 : sum / n;
}

// Mean shortest path over connected pairs of the largest component.
double average_path_length(const std::vector<std::set<int>>& adj) {
    std::vector<int> comp = largest_component(adj);
    if (comp.size() < 2) return 0.0;
    double sum = 0.0;
    int64_t pairs = 0;
    for (int u : comp) {
        std::vector<int> dist = bfs_dist(u, adj);
        for (int v : comp) {
            if (v != u && dist[static_cast<std::size_t>(v)] > 0) {
                sum += dist[static_cast<std::size_t>(v)];
                ++pairs;
            }
        }
    }
    return pairs == 0 ? 0.0 : sum / static_cast<double>(pairs);
}

// Degree-preserving double-edge swaps on the undirected simple graph.
std::vector<std::set<int>> rewire(const std::vector<std::set<int>>& adj, Rng& rng) {
    std::vector<std::pair<int, int>> edges;
    for (std::size_t u = 0; u < adj.size(); ++u) {
        for (int v : adj[u]) {
            if (static_cast<int>(u) < v) edges.emplace_back(static_cast<int>(u), v);
        }
    }
    std::vector<std::set<int>> out = adj;
    if (edges.size() < 2) return out;
    const std::size_t attempts = edges.size() * 10;
    for (std::size_t it = 0; it < attempts; ++it) {
        const std::size_t i = rng.uniform_int(edges.size());
        const std::size_t j = rng.uniform_int(edges.size());
        if (i == j) continue;
        auto [a, b] = edges[i];
        auto [c, d] = edges[j];
        if (rng.uniform() < 0.5) std::swap(c, d);
        // Swap to (a, d), (c, b).
        if (a == d || c == b) continue;
        if (a == c || b == d) continue;
        if (out[static_cast<std::size_t>(a)].count(d) || out[static_cast<std::size_t>(c)].count(b)) continue;
        out[static_cast<std::size_t>(a)].erase(b);
        out[static_cast<std::size_t>(b)].erase(a);
        out[static_cast<std::size_t>(c)].erase(d);
        out[static_cast<std::size_t>(d)].erase(c);
        out[static_cast<std::size_t>(a)].insert(d);
        out[static_cast<std::size_t>(d)].insert(a);
        out[static_cast<std::size_t>(c)].insert(b);
        out[static_cast<std::size_t>(b)].insert(c);
        edges[i] = {std::min(a, d), std::max(a, d)};
        edges[j] = {std::min(c, b), std::max(c, b)};
    }
    return out;
}

}  // namespace

int64_t count_simple_cycles(const Digraph& g) {
    const auto adj = adjacency(g);
    int64_t count = 0;
    std::vector<bool> on_path(static_cast<std::size_t>(g.n), false);
    for (int start = 0; start < g.n; ++start) {
        on_path[static_cast<std::size_t>(start)] = true;
        dfs_cycles(start, start, adj, on_path, count);
        on_path[static_cast<std::size_t>(start)] = false;
    }
    return count;
}

int diameter_of(const Digraph& g) {
    const auto adj = undirected(g);
    std::vector<int> comp = largest_component(adj);
    int best = 0;
    for (int u : comp) {
        std::vector<int> dist = bfs_dist(u, adj);
        for (int v : comp) best = std::max(best, dist[static_cast<std::size_t>(v)]);
    }
    return best;
}

std::optional<double> small_world_index(const Digraph& g, int rewirings, uint64_t seed) {
    if (g.n < 3) return std::nullopt;
    const auto adj = undirected(g);
    const double c = clustering_coefficient(adj);
    const double l = average_path_length(adj);
    if (l <= 0.0) return std::nullopt;

    Rng rng(0x53574958ULL ^ seed);
    double c_rand = 0.0, l_rand = 0.0;
    for (int r = 0; r < rewirings; ++r) {
        auto rewired = rewire(adj, rng);
        c_rand += clustering_coefficient(rewired);
        l_rand += average_path_length(rewired);
    }
    c_rand /= rewirings;
    l_rand /= rewirings;
    if (c_rand <= 0.0 || l_rand <= 0.0) return std::nullopt;
    return (c / c_rand) / (l / l_rand);
}

GraphStats graph_stats(const ReasoningGraph& g, uint64_t seed, int rewirings) {
    if (g.k <= 0) throw DataError("graph_stats: empty graph");
    const Digraph d = simple_projection(g);
    GraphStats stats;
    stats.cycle_count = count_simple_cycles(d);
    stats.diameter = diameter_of(d);
    stats.small_world = small_world_index(d, rewirings, seed);
    return stats;
}

std::vector<GraphStats> stats_distribution(const ReasoningGraph& g, int n_samples, double fraction,
                                           uint64_t seed) {
    if (g.trajectories.empty()) throw DataError("stats_distribution: graph has no trajectories");
    Rng rng(0x44495354ULL ^ seed);
    const auto take = std::max<std::size_t>(
        1, static_cast<std::size_t>(fraction * static_cast<double>(g.trajectories.size())));

    std::vector<GraphStats> out;
    for (int s = 0; s < n_samples; ++s) {
        std::vector<std::size_t> order(g.trajectories.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        ReasoningGraph sub;
        sub.k = g.k;
        sub.seed = g.seed;
        for (std::size_t i = 0; i < take; ++i) {
            const auto& path = g.trajectories[order[i]];
            sub.trajectories.push_back(path);
            for (std::size_t t = 0; t + 1 < path.size(); ++t) ++sub.edges[{path[t], path[t + 1]}];
        }
        out.push_back(graph_stats(sub, seed + static_cast<uint64_t>(s) + 1));
    }
    return out;
}

}  // namespace lab::graph
