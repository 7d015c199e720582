#pragma once

#include "lab/model/policy.hpp"
#include "lab/perturb/perturb.hpp"

#include <map>
#include <utility>
#include <vector>

namespace lab::probe {

// Per-head feature matrix: one row per trial (final-position context vector),
// labels from perturbation success. Binary for single perturbations and the
// aligned combined experiment; ternary for disparate trials:
// 0 = reasoning_win, 1 = retrieval_win, 2 = neither.
struct HeadFeatureSet {
    int layer = 0;
    int head = 0;
    MatX features;            // N x head_dim
    std::vector<int> labels;  // N entries
};

std::vector<HeadFeatureSet> collect_features(const std::vector<perturb::Outcome>& outcomes,
                                             const std::vector<model::Trace>& traces);

struct DegenerateLabelsError : std::runtime_error {
    explicit DegenerateLabelsError(const std::string& what) : std::runtime_error(what) {}
};

// Stratified k-fold CV with an L2 logistic probe per fold; returns the mean
// validation AUC (macro one-vs-rest for ternary labels). Feature
// standardization is fit on the train folds only.
double head_auc(const HeadFeatureSet& fs, int folds = 5, uint64_t seed = 0, double l2 = 1.0);

struct HeadAUCReport {
    int folds = 5;
    uint64_t seed = 0;
    std::map<std::pair<int, int>, double> auc;  // (layer, head) -> mean AUC
};

HeadAUCReport probe_heads(const std::vector<HeadFeatureSet>& sets, int folds = 5, uint64_t seed = 0,
                          double l2 = 1.0);

struct RankedHead {
    int layer = 0;
    int head = 0;
    double auc = 0.0;
};

struct RankTable {
    std::map<int, std::vector<RankedHead>> by_layer;  // descending AUC per layer
    std::vector<RankedHead> top;                      // global top-k
};

RankTable rank_heads(const HeadAUCReport& report, int top_k = 8);

// Internals exposed for tests.
double auc_score(const VecX& scores, const std::vector<int>& labels);
VecX logistic_fit(const MatX& features, const std::vector<int>& labels, double l2);
std::vector<int> stratified_folds(const std::vector<int>& labels, int folds, uint64_t seed);

// JSON table plus the layer-by-head AUC grid for the plotting CLI.
std::string report_to_json(const HeadAUCReport& report, const RankTable& table);

}  // namespace lab::probe
