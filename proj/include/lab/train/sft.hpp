#pragma once

#include "lab/model/policy.hpp"
#include "lab/tasks/qa.hpp"
#include "lab/train/adamw.hpp"

#include <utility>
#include <vector>

namespace lab::train {

struct SftConfig {
    int epochs = 1;
    int batch = 32;
    double lr = 1e-3;
    double weight_decay = 0.0;
    uint64_t seed = 0;
    bool shuffle = true;
};

using TokenPair = std::pair<TokenSeq, TokenSeq>;  // prompt, target

// Cross-entropy fine-tuning on target continuations. Used both for demo
// pretraining (full CoT targets) and the answer-only SFT baseline.
template <typename S>
model::PolicyT<S> sft_train(const model::PolicyT<S>& state, const std::vector<TokenPair>& pairs,
                            const SftConfig& cfg, std::vector<double>* epoch_losses = nullptr) {
    if (pairs.empty()) throw ConfigError("sft_train: empty dataset");
    model::PolicyT<S> policy = state;
    AdamW<S, model::PolicyParams<S>> opt(policy.params,
                                         {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    Rng rng(cfg.seed);

    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.shuffle) rng.shuffle(order);
        double epoch_loss = 0.0;
        int64_t epoch_tokens = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t stop = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch));
            int64_t batch_tokens = 0;
            for (std::size_t i = at; i < stop; ++i) batch_tokens += static_cast<int64_t>(pairs[order[i]].second.size());
            if (batch_tokens == 0) continue;

            model::PolicyParams<S> grads = model::zeros_like<S>(policy.params);
            double batch_loss = 0.0;
            for (std::size_t i = at; i < stop; ++i) {
                const auto& [prompt, target] = pairs[order[i]];
                if (target.empty()) continue;
                TokenSeq full = prompt;
                full.insert(full.end(), target.begin(), target.end());
                model::ScoreCache<S> cache;
                Vec<S> logp = model::score_forward<S>(policy, full, static_cast<int>(prompt.size()), &cache);
                batch_loss -= static_cast<double>(logp.sum());
                // Mean negative log-likelihood over batch tokens.
                Vec<S> coeffs = Vec<S>::Constant(logp.size(), static_cast<S>(-1.0 / static_cast<double>(batch_tokens)));
                model::score_backward<S>(policy, cache, coeffs, &grads, nullptr);
            }
            batch_loss /= static_cast<double>(batch_tokens);
            if (!std::isfinite(batch_loss)) throw TrainingError("sft_train: loss diverged");
            opt.step(policy.params, grads);
            epoch_loss += batch_loss * static_cast<double>(batch_tokens);
            epoch_tokens += batch_tokens;
        }
        if (epoch_losses) epoch_losses->push_back(epoch_loss / static_cast<double>(epoch_tokens));
    }
    return policy;
}

// Demo pair: the question prompts a full think + answer continuation.
inline TokenPair demo_pair(const Tokenizer& tok, const forge::QAItem& item) {
    forge::DemoExample demo = forge::render_demo(item);
    TokenSeq prompt = tok.encode(item.question);
    TokenSeq full = tok.encode(demo.full_text);
    TokenSeq target(full.begin() + static_cast<std::ptrdiff_t>(prompt.size()), full.end());
    return {std::move(prompt), std::move(target)};
}

// Answer-only pair: no think segment, straight to the answer sentence.
inline TokenPair answer_only_pair(const Tokenizer& tok, const forge::QAItem& item) {
    TokenSeq prompt = tok.encode(item.question);
    TokenSeq target = tok.encode(forge::render_answer_sentence(item.gold) + " " + Tokenizer::kEos);
    return {std::move(prompt), std::move(target)};
}

}  // namespace lab::train
