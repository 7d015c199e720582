#pragma once

#include "lab/core/types.hpp"
#include "lab/model/policy.hpp"

#include <string>
#include <vector>

namespace lab::train {

// Group-normalized advantages: (r - mean) / population std. Groups with no
// reward spread get all-zero advantages and are flagged degenerate.
inline VecX group_advantage(const VecX& rewards, bool* degenerate = nullptr) {
    if (rewards.size() < 2) throw ConfigError("group_advantage: group size must be >= 2");
    const double mean = rewards.mean();
    const double var = (rewards.array() - mean).square().sum() / static_cast<double>(rewards.size());
    const double std = std::sqrt(var);
    if (std < 1e-8) {
        if (degenerate) *degenerate = true;
        return VecX::Zero(rewards.size());
    }
    if (degenerate) *degenerate = false;
    return (rewards.array() - mean) / std;
}

// G sampled rollouts for one prompt together with rewards and advantages.
struct RewardGroup {
    std::string prompt;
    std::string gold;
    std::vector<model::Trace> traces;
    VecX rewards;
    VecX advantages;
    bool degenerate = false;

    void finalize() {
        advantages = group_advantage(rewards, &degenerate);
    }
};

}  // namespace lab::train
