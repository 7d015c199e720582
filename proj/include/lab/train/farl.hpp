#pragma once

#include "lab/train/losses.hpp"
#include "lab/train/reward.hpp"
#include "lab/train/sft.hpp"

#include <fstream>
#include <functional>

namespace lab::train {

struct DynamicsRow {
    int epoch = 0;
    int step = 0;
    double mean_reward = 0.0;
    double val_acc = 0.0;
    double val_reward = 0.0;
    double npo_loss = 0.0;
};

inline void write_dynamics_csv(const std::string& path, const std::vector<DynamicsRow>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open dynamics csv: " + path);
    out << "epoch,step,mean_reward,val_acc,val_reward,npo_loss\n";
    for (const auto& r : rows) {
        out << r.epoch << "," << r.step << "," << r.mean_reward << "," << r.val_acc << ","
            << r.val_reward << "," << r.npo_loss << "\n";
    }
}

template <typename S>
struct FarlHooks {
    std::function<void(int epoch, const model::PolicyT<S>&)> on_epoch_end;
};

namespace detail {

inline std::string rollout_response_text(const Tokenizer& tok, const model::Trace& trace) {
    TokenSeq ids;
    for (TokenId id : trace.sampled_ids) {
        if (id != tok.eos_id()) ids.push_back(id);
    }
    return tok.decode(ids);
}

template <typename S>
std::pair<double, double> validate(const model::PolicyT<S>& policy, const Tokenizer& tok,
                                   const extract::Extractor& extractor,
                                   const std::vector<const forge::QAItem*>& items,
                                   int max_new_tokens) {
    if (items.empty()) return {0.0, 0.0};
    int correct = 0;
    double reward_sum = 0.0;
    model::GenParams gp;
    gp.temperature = 0.0;
    gp.max_new_tokens = max_new_tokens;
    for (const forge::QAItem* item : items) {
        model::Trace trace = model::generate(policy, tok, item->question, "", gp);
        const std::string text = rollout_response_text(tok, trace);
        const double r = reward(text, item->choices, item->gold, extractor, item->question);
        reward_sum += r;
        if (r == 1.0) ++correct;
    }
    return {static_cast<double>(correct) / static_cast<double>(items.size()),
            reward_sum / static_cast<double>(items.size())};
}

}  // namespace detail

// The training loop: GRPO steps with a group-relative clipped objective,
// optionally interleaved with one NPO unlearning update per step on the step
// batch's direct question->answer associations. With unlearning disabled (or
// beta_npo == 0) this is the plain GRPO baseline, same RNG stream and all.
template <typename S>
model::PolicyT<S> farl_train(const model::PolicyT<S>& init_state,
                             const std::vector<forge::QAItem>& items, const Tokenizer& tok,
                             const extract::Extractor& extractor, const TrainConfig& cfg,
                             bool unlearning_enabled,
                             std::vector<DynamicsRow>* dynamics = nullptr,
                             const std::vector<const forge::QAItem*>* val_items = nullptr,
                             const FarlHooks<S>& hooks = {}) {
    cfg.validate();
    if (items.empty()) throw ConfigError("farl_train: empty dataset");

    model::PolicyT<S> policy = init_state;
    AdamW<S, model::PolicyParams<S>> grpo_opt(policy.params, {cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    AdamW<S, model::PolicyParams<S>> npo_opt(policy.params, {cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    Rng rng(cfg.seed);

    for (int epoch = 0; epoch < cfg.n_epoch; ++epoch) {
        model::PolicyT<S> policy_ref = policy;  // refreshed once per epoch
        for (int step = 0; step < cfg.n_step; ++step) {
            // Sample the prompt batch.
            std::vector<const forge::QAItem*> batch;
            for (int b = 0; b < cfg.batch; ++b) {
                batch.push_back(&items[rng.uniform_int(items.size())]);
            }
            model::PolicyT<S> policy_old = policy;  // refreshed every step

            // Rollouts under the old policy.
            std::vector<RewardGroup> groups;
            double reward_sum = 0.0;
            int64_t reward_count = 0;
            for (const forge::QAItem* item : batch) {
                RewardGroup group;
                group.prompt = item->question;
                group.gold = item->gold;
                group.rewards.resize(cfg.group_size);
                for (int g = 0; g < cfg.group_size; ++g) {
                    model::GenParams gp;
                    gp.temperature = cfg.temperature;
                    gp.max_new_tokens = cfg.max_new_tokens;
                    gp.seed = rng.fork(static_cast<uint64_t>(g));
                    model::Trace trace = model::generate(policy_old, tok, item->question, "", gp);
                    const std::string text = detail::rollout_response_text(tok, trace);
                    const double r = reward(text, item->choices, item->gold, extractor, item->question);
                    group.rewards(g) = r;
                    reward_sum += r;
                    ++reward_count;
                    group.traces.push_back(std::move(trace));
                }
                group.finalize();
                groups.push_back(std::move(group));
            }

            for (int it = 0; it < cfg.mu; ++it) {
                model::PolicyParams<S> grads = model::zeros_like<S>(policy.params);
                const S objective = grpo_loss<S>(groups, policy, policy_old, policy_ref, cfg, &grads);
                if (!std::isfinite(static_cast<double>(objective))) {
                    throw TrainingError("farl_train: GRPO objective diverged");
                }
                grpo_opt.step(policy.params, grads);
            }

            double npo_value = 0.0;
            if (unlearning_enabled && cfg.beta_npo > 0.0) {
                std::vector<TokenPair> unlearn;
                for (std::size_t bi = 0; bi < batch.size(); ++bi) {
                    const forge::QAItem* item = batch[bi];
                    if (cfg.unlearn_set == TrainConfig::UnlearnSet::lookup_only &&
                        item->domain != forge::Domain::lookup) {
                        continue;
                    }
                    if (cfg.unlearn_set == TrainConfig::UnlearnSet::high_reward_no_cot) {
                        bool hit = false;
                        for (const model::Trace& t : groups[bi].traces) {
                            if (t.think_text.empty() && !t.answer_text.empty()) {
                                const double r = reward(t.answer_text, item->choices, item->gold,
                                                        extractor, item->question);
                                if (r == 1.0) hit = true;
                            }
                        }
                        if (!hit) continue;
                    }
                    unlearn.push_back(answer_only_pair(tok, *item));
                }
                if (!unlearn.empty()) {
                    model::PolicyParams<S> grads = model::zeros_like<S>(policy.params);
                    npo_value = static_cast<double>(
                        npo_loss<S>(unlearn, policy, policy_ref, cfg.beta_npo, &grads));
                    if (!std::isfinite(npo_value)) throw TrainingError("farl_train: NPO loss diverged");
                    npo_opt.step(policy.params, grads);
                }
            }

            if (dynamics) {
                DynamicsRow row;
                row.epoch = epoch;
                row.step = step;
                row.mean_reward = reward_sum / static_cast<double>(reward_count);
                if (val_items) {
                    auto [acc, vrew] = detail::validate(policy, tok, extractor, *val_items, cfg.max_new_tokens);
                    row.val_acc = acc;
                    row.val_reward = vrew;
                }
                row.npo_loss = npo_value;
                dynamics->push_back(row);
            }
        }
        if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, policy);
    }
    return policy;
}

}  // namespace lab::train
