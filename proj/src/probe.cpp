#include "lab/probe/probe.hpp"

#include "lab/core/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>

using nlohmann::json;

namespace lab::probe {

std::vector<HeadFeatureSet> collect_features(const std::vector<perturb::Outcome>& outcomes,
                                             const std::vector<model::Trace>& traces) {
    if (outcomes.size() != traces.size()) {
        throw DataError("collect_features: outcome/trace count mismatch");
    }
    if (outcomes.empty()) throw DataError("collect_features: no trials");

    const bool ternary = outcomes.front().kind == perturb::Kind::combined_disparate;
    auto label_of = [ternary](const perturb::Outcome& o) {
        if (ternary) return o.reasoning_win ? 0 : (o.retrieval_win ? 1 : 2);
        return (o.reasoning_win || o.retrieval_win) ? 1 : 0;
    };

    const auto& first = traces.front().activations;
    if (first.empty()) throw DataError("collect_features: traces carry no activations");

    std::vector<HeadFeatureSet> sets;
    for (const auto& [key, vec] : first) {
        HeadFeatureSet fs;
        fs.layer = key.first;
        fs.head = key.second;
        fs.features.resize(static_cast<Eigen::Index>(traces.size()), vec.size());
        sets.push_back(std::move(fs));
    }

    for (std::size_t i = 0; i < traces.size(); ++i) {
        const auto& acts = traces[i].activations;
        if (acts.size() != first.size()) {
            throw DataError("collect_features: trace " + outcomes[i].item_id + " missing activations");
        }
        std::size_t s = 0;
        for (const auto& [key, vec] : acts) {
            if (key.first != sets[s].layer || key.second != sets[s].head ||
                vec.size() != sets[s].features.cols()) {
                throw DataError("collect_features: activation layout mismatch");
            }
            sets[s].features.row(static_cast<Eigen::Index>(i)) = vec.transpose();
            ++s;
        }
    }
    for (auto& fs : sets) {
        fs.labels.reserve(outcomes.size());
        for (const auto& o : outcomes) fs.labels.push_back(label_of(o));
    }
    return sets;
}

std::vector<int> stratified_folds(const std::vector<int>& labels, int folds, uint64_t seed) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    std::vector<int> assignment(labels.size(), 0);
    Rng rng(0x464f4c44ULL ^ seed);
    int next = 0;
    for (auto& [cls, indices] : by_class) {
        rng.shuffle(indices);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            assignment[indices[i]] = next % folds;
            ++next;
        }
    }
    return assignment;
}

VecX logistic_fit(const MatX& features, const std::vector<int>& labels, double l2) {
    const auto n = features.rows();
    const auto d = features.cols() + 1;  // bias appended last
    MatX x(n, d);
    x.leftCols(features.cols()) = features;
    x.col(d - 1).setOnes();
    VecX y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;

    VecX w = VecX::Zero(d);
    for (int iter = 0; iter < 50; ++iter) {
        VecX z = x * w;
        VecX p = (1.0 / (1.0 + (-z.array()).exp())).matrix();
        VecX grad = x.transpose() * (p - y);
        grad.head(d - 1) += l2 * w.head(d - 1);  // bias unregularized
        VecX s = (p.array() * (1.0 - p.array())).matrix();
        MatX hess = x.transpose() * s.asDiagonal() * x;
        for (Eigen::Index k = 0; k + 1 < d; ++k) hess(k, k) += l2;
        hess(d - 1, d - 1) += 1e-9;
        VecX delta = hess.ldlt().solve(grad);
        w -= delta;
        if (delta.cwiseAbs().maxCoeff() < 1e-10) break;
    }
    return w;
}

double auc_score(const VecX& scores, const std::vector<int>& labels) {
    // Mann-Whitney with midranks for ties.
    const auto n = scores.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(),
              [&scores](Eigen::Index a, Eigen::Index b) { return scores(a) < scores(b); });

    std::vector<double> ranks(static_cast<std::size_t>(n));
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores(order[j + 1]) == scores(order[i])) ++j;
        const double midrank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[static_cast<std::size_t>(order[k])] = midrank;
        i = j + 1;
    }

    double rank_sum = 0.0;
    Eigen::Index n_pos = 0;
    for (Eigen::Index k = 0; k < n; ++k) {
        if (labels[static_cast<std::size_t>(k)]) {
            rank_sum += ranks[static_cast<std::size_t>(k)];
            ++n_pos;
        }
    }
    const Eigen::Index n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DegenerateLabelsError("auc_score: single-class labels");
    return (rank_sum - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace {

struct Standardizer {
    VecX mean, inv_std;

    void fit(const MatX& x) {
        mean = x.colwise().mean();
        VecX var = ((x.rowwise() - mean.transpose()).array().square().colwise().sum() /
                    static_cast<double>(x.rows()))
                       .matrix()
                       .transpose();
        inv_std = (var.array() + 1e-12).sqrt().inverse();
    }
    MatX apply(const MatX& x) const {
        return (x.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array();
    }
};

}  // namespace

double head_auc(const HeadFeatureSet& fs, int folds, uint64_t seed, double l2) {
    const auto n = fs.features.rows();
    if (n < folds) throw DataError("head_auc: fewer trials than folds");
    std::set<int> classes(fs.labels.begin(), fs.labels.end());
    if (classes.size() < 2) throw DegenerateLabelsError("head_auc: labels are single-class");

    const std::vector<int> fold_of = stratified_folds(fs.labels, folds, seed);

    double auc_sum = 0.0;
    int auc_count = 0;
    for (int fold = 0; fold < folds; ++fold) {
        std::vector<Eigen::Index> train_idx, val_idx;
        for (Eigen::Index i = 0; i < n; ++i) {
            (fold_of[static_cast<std::size_t>(i)] == fold ? val_idx : train_idx).push_back(i);
        }
        if (train_idx.empty() || val_idx.empty()) continue;

        MatX x_train(static_cast<Eigen::Index>(train_idx.size()), fs.features.cols());
        MatX x_val(static_cast<Eigen::Index>(val_idx.size()), fs.features.cols());
        for (std::size_t i = 0; i < train_idx.size(); ++i) x_train.row(static_cast<Eigen::Index>(i)) = fs.features.row(train_idx[i]);
        for (std::size_t i = 0; i < val_idx.size(); ++i) x_val.row(static_cast<Eigen::Index>(i)) = fs.features.row(val_idx[i]);

        Standardizer std_fit;
        std_fit.fit(x_train);
        MatX xs_train = std_fit.apply(x_train);
        MatX xs_val = std_fit.apply(x_val);

        // One-vs-rest per class; binary problems reduce to the positive class.
        std::vector<int> ovr_classes;
        if (classes.size() == 2) {
            ovr_classes.push_back(*classes.rbegin());
        } else {
            ovr_classes.assign(classes.begin(), classes.end());
        }

        double fold_sum = 0.0;
        int fold_count = 0;
        for (int cls : ovr_classes) {
            std::vector<int> y_train, y_val;
            for (std::size_t i = 0; i < train_idx.size(); ++i) {
                y_train.push_back(fs.labels[static_cast<std::size_t>(train_idx[i])] == cls ? 1 : 0);
            }
            for (std::size_t i = 0; i < val_idx.size(); ++i) {
                y_val.push_back(fs.labels[static_cast<std::size_t>(val_idx[i])] == cls ? 1 : 0);
            }
            const int train_pos = static_cast<int>(std::count(y_train.begin(), y_train.end(), 1));
            const int val_pos = static_cast<int>(std::count(y_val.begin(), y_val.end(), 1));
            if (train_pos == 0 || train_pos == static_cast<int>(y_train.size())) continue;
            if (val_pos == 0 || val_pos == static_cast<int>(y_val.size())) continue;

            VecX w = logistic_fit(xs_train, y_train, l2);
            VecX scores = xs_val * w.head(w.size() - 1) + VecX::Constant(xs_val.rows(), w(w.size() - 1));
            fold_sum += auc_score(scores, y_val);
            ++fold_count;
        }
        if (fold_count > 0) {
            auc_sum += fold_sum / fold_count;
            ++auc_count;
        }
    }
    if (auc_count == 0) throw DegenerateLabelsError("head_auc: no scoreable folds");
    return auc_sum / auc_count;
}

HeadAUCReport probe_heads(const std::vector<HeadFeatureSet>& sets, int folds, uint64_t seed,
                          double l2) {
    HeadAUCReport report;
    report.folds = folds;
    report.seed = seed;
    for (const auto& fs : sets) {
        report.auc[{fs.layer, fs.head}] = head_auc(fs, folds, seed, l2);
    }
    return report;
}

RankTable rank_heads(const HeadAUCReport& report, int top_k) {
    if (report.auc.empty()) throw DataError("rank_heads: empty report");
    RankTable table;
    for (const auto& [key, auc] : report.auc) {
        table.by_layer[key.first].push_back({key.first, key.second, auc});
    }
    for (auto& [layer, heads] : table.by_layer) {
        std::stable_sort(heads.begin(), heads.end(), [](const RankedHead& a, const RankedHead& b) {
            if (a.auc != b.auc) return a.auc > b.auc;
            return a.head < b.head;  // stable tie order by head index
        });
        for (const auto& h : heads) table.top.push_back(h);
    }
    std::stable_sort(table.top.begin(), table.top.end(), [](const RankedHead& a, const RankedHead& b) {
        if (a.auc != b.auc) return a.auc > b.auc;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.head < b.head;
    });
    if (static_cast<int>(table.top.size()) > top_k) table.top.resize(static_cast<std::size_t>(top_k));
    return table;
}

std::string report_to_json(const HeadAUCReport& report, const RankTable& table) {
    int max_layer = 0, max_head = 0;
    for (const auto& [key, auc] : report.auc) {
        max_layer = std::max(max_layer, key.first);
        max_head = std::max(max_head, key.second);
    }
    json grid = json::array();
    for (int l = 0; l <= max_layer; ++l) {
        json row = json::array();
        for (int h = 0; h <= max_head; ++h) {
            auto it = report.auc.find({l, h});
            row.push_back(it == report.auc.end() ? json() : json(it->second));
        }
        grid.push_back(row);
    }

    json by_layer = json::object();
    for (const auto& [layer, heads] : table.by_layer) {
        json arr = json::array();
        for (const auto& h : heads) arr.push_back({{"head", h.head}, {"auc", h.auc}});
        by_layer[std::to_string(layer)] = arr;
    }
    json top = json::array();
    for (const auto& h : table.top) {
        top.push_back({{"layer", h.layer}, {"head", h.head}, {"auc", h.auc}});
    }

    json j = {{"folds", report.folds}, {"seed", report.seed}, {"grid", grid},
              {"by_layer", by_layer}, {"top", top}};
    return j.dump(2);
}

}  // namespace lab::probe
