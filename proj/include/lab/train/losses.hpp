#pragma once

#include "lab/model/policy.hpp"
#include "lab/train/advantage.hpp"

#include <cmath>
#include <vector>

namespace lab::train {

struct TrainConfig {
    int group_size = 8;
    double eps_low = 1.0;
    double eps_high = 5.0;
    double beta_kl = 0.001;
    double beta_npo = 0.01;
    int mu = 1;
    int n_epoch = 3;
    int n_step = 8;
    double lr = 1e-3;
    int batch = 32;
    double temperature = 1.0;
    int max_new_tokens = 96;
    uint64_t seed = 1;
    // Which (x, y) pairs feed the unlearning step.
    enum class UnlearnSet { batch_gold, lookup_only, high_reward_no_cot };
    UnlearnSet unlearn_set = UnlearnSet::batch_gold;
    int val_items = 16;

    void validate() const {
        if (group_size < 2) throw ConfigError("train config: group size must be >= 2");
        if (eps_low < 0 || eps_high < 0) throw ConfigError("train config: clip bounds must be >= 0");
        if (mu < 1) throw ConfigError("train config: mu must be >= 1");
    }
};

// Per-token KL estimator with rho = pi_ref / pi_theta: rho - log(rho) - 1.
// Non-negative, zero exactly at rho = 1.
inline double kl_term(double logp, double logp_ref) {
    if (!std::isfinite(logp) || !std::isfinite(logp_ref)) {
        throw DataError("kl_term: inputs must be finite");
    }
    const double log_rho = logp_ref - logp;
    return std::exp(log_rho) - log_rho - 1.0;
}

namespace detail {

inline double log_sigmoid(double s) {
    // log(1/(1+e^-s)) without overflow on either side.
    return s >= 0 ? -std::log1p(std::exp(-s)) : s - std::log1p(std::exp(s));
}

inline double sigmoid(double s) { return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s)); }

}  // namespace detail

// Clipped-ratio group-relative objective with the per-token KL penalty.
// Returns the objective J (to be maximized). When `grads` is non-null the
// gradient of the loss -J with respect to `policy` is accumulated into it;
// policy_old and policy_ref are treated as constants.
template <typename S>
S grpo_loss(const std::vector<RewardGroup>& groups, const model::PolicyT<S>& policy,
            const model::PolicyT<S>& policy_old, const model::PolicyT<S>& policy_ref,
            const TrainConfig& cfg, model::PolicyParams<S>* grads = nullptr) {
    cfg.validate();
    if (groups.empty()) throw DataError("grpo_loss: no groups");

    const double n_groups = static_cast<double>(groups.size());
    double objective = 0.0;

    for (const RewardGroup& group : groups) {
        const auto G = static_cast<double>(group.traces.size());
        if (group.traces.empty()) throw DataError("grpo_loss: empty group");
        for (std::size_t j = 0; j < group.traces.size(); ++j) {
            const model::Trace& trace = group.traces[j];
            const double advantage = group.advantages(static_cast<Eigen::Index>(j));
            TokenSeq full = trace.full_ids();
            const int cont_begin = static_cast<int>(trace.context_ids().size());
            const auto n_tok = static_cast<Eigen::Index>(trace.sampled_ids.size());
            if (n_tok == 0) continue;

            model::ScoreCache<S> cache;
            Vec<S> logp = model::score_forward<S>(policy, full, cont_begin, grads ? &cache : nullptr);
            Vec<S> logp_old = model::score_forward<S>(policy_old, full, cont_begin, nullptr);
            Vec<S> logp_ref;
            if (cfg.beta_kl != 0.0) {
                logp_ref = model::score_forward<S>(policy_ref, full, cont_begin, nullptr);
            }

            const double weight = 1.0 / (static_cast<double>(n_tok) * G * n_groups);
            Vec<S> coeffs = Vec<S>::Zero(n_tok);
            for (Eigen::Index t = 0; t < n_tok; ++t) {
                const double w = std::exp(static_cast<double>(logp(t) - logp_old(t)));
                const double clipped = std::min(std::max(w, 1.0 - cfg.eps_low), 1.0 + cfg.eps_high);
                const double term1 = w * advantage;
                const double term2 = clipped * advantage;
                double term = std::min(term1, term2);
                double dterm;  // d(term)/d(logp_t)
                if (term1 <= term2) {
                    dterm = w * advantage;
                } else {
                    const bool inside = w > 1.0 - cfg.eps_low && w < 1.0 + cfg.eps_high;
                    dterm = inside ? w * advantage : 0.0;
                }
                double kl = 0.0, dkl = 0.0;
                if (cfg.beta_kl != 0.0) {
                    const double lr_ratio = static_cast<double>(logp_ref(t) - logp(t));
                    const double rho = std::exp(lr_ratio);
                    kl = rho - lr_ratio - 1.0;
                    dkl = 1.0 - rho;  // d(kl)/d(logp_t)
                }
                objective += weight * (term - cfg.beta_kl * kl);
                // Loss is -J; coefficient is dLoss/dlogp_t.
                coeffs(t) = static_cast<S>(-weight * (dterm - cfg.beta_kl * dkl));
            }
            if (grads) model::score_backward<S>(policy, cache, coeffs, grads, nullptr);
        }
    }
    return static_cast<S>(objective);
}

// Negative preference optimization over (prompt, target) token pairs. Returns
// the batch-mean loss; gradients with respect to `policy` are accumulated
// when `grads` is given (policy_ref is frozen).
template <typename S>
S npo_loss(const std::vector<std::pair<TokenSeq, TokenSeq>>& batch, const model::PolicyT<S>& policy,
           const model::PolicyT<S>& policy_ref, double beta_npo,
           model::PolicyParams<S>* grads = nullptr) {
    if (batch.empty()) throw DataError("npo_loss: empty batch");
    double loss = 0.0;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    for (const auto& [prompt, target] : batch) {
        if (target.empty()) throw DataError("npo_loss: empty target sequence");
        TokenSeq full = prompt;
        full.insert(full.end(), target.begin(), target.end());
        const int cont_begin = static_cast<int>(prompt.size());
        const auto n_tok = static_cast<Eigen::Index>(target.size());

        model::ScoreCache<S> cache;
        Vec<S> logp = model::score_forward<S>(policy, full, cont_begin, grads ? &cache : nullptr);
        Vec<S> logp_ref = model::score_forward<S>(policy_ref, full, cont_begin, nullptr);

        const double s = -static_cast<double>((logp - logp_ref).sum()) / static_cast<double>(n_tok);
        loss += inv_batch * (-beta_npo * detail::log_sigmoid(s));
        if (grads) {
            // dLoss/dlogp_t = beta * (1 - sigma(s)) / |y| / batch
            const double c = inv_batch * beta_npo * (1.0 - detail::sigmoid(s)) / static_cast<double>(n_tok);
            Vec<S> coeffs = Vec<S>::Constant(n_tok, static_cast<S>(c));
            model::score_backward<S>(policy, cache, coeffs, grads, nullptr);
        }
    }
    return static_cast<S>(loss);
}

}  // namespace lab::train
