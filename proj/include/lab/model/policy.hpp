#pragma once

#include "lab/model/params.hpp"
#include "lab/tokenizer.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <utility>

namespace lab::model {

struct TruncationError : std::runtime_error {
    explicit TruncationError(const std::string& what) : std::runtime_error(what) {}
};

struct TokenizationError : std::runtime_error {
    explicit TokenizationError(const std::string& what) : std::runtime_error(what) {}
};

struct GenParams {
    double temperature = 1.0;
    int max_new_tokens = 96;
    bool capture_activations = false;
    uint64_t seed = 0;
};

// One full generation. Log-probs are always the temperature-1 model
// probabilities of the sampled tokens, so rollouts double as policy samples.
struct Trace {
    std::string prompt_text;
    std::string prefill_text;
    std::string think_text;
    std::string answer_text;
    TokenSeq prompt_ids;   // prompt only
    TokenSeq prefill_ids;  // teacher-forced after the prompt
    TokenSeq sampled_ids;  // o
    VecX logprobs;         // one per sampled token
    bool ended_with_eos = false;
    // (layer, head) -> attention context vector at the final generated
    // position (the input to the output projection).
    std::map<std::pair<int, int>, VecX> activations;

    TokenSeq context_ids() const {
        TokenSeq ids = prompt_ids;
        ids.insert(ids.end(), prefill_ids.begin(), prefill_ids.end());
        return ids;
    }
    TokenSeq full_ids() const {
        TokenSeq ids = context_ids();
        ids.insert(ids.end(), sampled_ids.begin(), sampled_ids.end());
        return ids;
    }
    int generated_tokens() const { return static_cast<int>(sampled_ids.size()); }
};

namespace detail {

template <typename S>
void log_softmax_inplace(Vec<S>& x) {
    S m = x.maxCoeff();
    S lse = m + std::log((x.array() - m).exp().sum());
    x.array() -= lse;
}

template <typename S>
Vec<S> softmax(const Vec<S>& x) {
    Vec<S> p = x;
    S m = p.maxCoeff();
    p = (p.array() - m).exp();
    p /= p.sum();
    return p;
}

template <typename S>
S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x * S(0.7071067811865475)));
}

template <typename S>
S gelu_grad(S x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return S(0.5) * (S(1) + std::erf(x * S(0.7071067811865475))) +
           x * S(inv_sqrt_2pi) * std::exp(S(-0.5) * x * x);
}

constexpr double kLnEps = 1e-5;

}  // namespace detail

template <typename S>
struct PolicyT {
    ModelConfig cfg;
    PolicyParams<S> params;
    std::optional<AdapterParams<S>> adapter;

    static PolicyT init(const ModelConfig& cfg, uint64_t seed) {
        PolicyT p;
        p.cfg = cfg;
        p.params = init_params<S>(cfg, seed);
        return p;
    }
};

using Policy = PolicyT<Scalar>;

// Returns a copy of `state` with a zero-delta low-rank adapter attached to
// every attention/MLP projection. The base tensors are left untouched; only
// adapter factors receive gradients while it is attached.
template <typename S>
PolicyT<S> attach_adapter(const PolicyT<S>& state, int rank, S alpha, uint64_t seed) {
    PolicyT<S> out = state;
    out.adapter = init_adapter<S>(state.cfg, rank, alpha, seed);
    return out;
}

template <typename S>
PolicyT<S> detach_adapter(const PolicyT<S>& state) {
    PolicyT<S> out = state;
    out.adapter.reset();
    return out;
}

// ---------------------------------------------------------------------------
// Forward/backward machinery
// ---------------------------------------------------------------------------

template <typename S>
struct LayerCache {
    Mat<S> x_in;
    Mat<S> xhat1;
    Vec<S> inv_std1;
    Mat<S> a1;
    Mat<S> q, k, v;
    std::vector<Mat<S>> attn;  // per head, rows = query position
    Mat<S> ctx;                // concatenated head outputs, pre-W_o
    Mat<S> ax_q, ax_k, ax_v, ax_o, ax_1, ax_2;  // adapter intermediates
    Mat<S> x_mid;
    Mat<S> xhat2;
    Vec<S> inv_std2;
    Mat<S> a2;
    Mat<S> h_pre, h;
};

template <typename S>
struct ScoreCache {
    TokenSeq ids;
    int cont_begin = 0;
    std::vector<LayerCache<S>> layers;
    Mat<S> xhatf;
    Vec<S> inv_stdf;
    Mat<S> f;
    Mat<S> probs;     // vocab x n_cont, column c is the softmax at position cont_begin-1+c
    Vec<S> logprobs;  // per continuation token
};

namespace detail {

// y = gamma .* xhat + beta per column; returns y, fills xhat and inv_std.
template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& gamma, const Mat<S>& beta, Mat<S>& xhat,
                  Vec<S>& inv_std) {
    const auto T = x.cols();
    const auto d = x.rows();
    xhat.resize(d, T);
    inv_std.resize(T);
    Mat<S> y(d, T);
    for (Eigen::Index t = 0; t < T; ++t) {
        S mean = x.col(t).mean();
        Vec<S> centered = x.col(t).array() - mean;
        S var = centered.squaredNorm() / static_cast<S>(d);
        S istd = S(1) / std::sqrt(var + S(kLnEps));
        inv_std(t) = istd;
        xhat.col(t) = centered * istd;
        y.col(t) = gamma.col(0).cwiseProduct(xhat.col(t)) + beta.col(0);
    }
    return y;
}

// Accumulates dx for y = LN(x); also accumulates parameter grads when given.
template <typename S>
void layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const Vec<S>& inv_std,
                         const Mat<S>& gamma, Mat<S>& dx, Mat<S>* dgamma, Mat<S>* dbeta) {
    const auto T = dy.cols();
    const auto d = dy.rows();
    for (Eigen::Index t = 0; t < T; ++t) {
        if (dgamma) dgamma->col(0) += dy.col(t).cwiseProduct(xhat.col(t));
        if (dbeta) dbeta->col(0) += dy.col(t);
        Vec<S> dxhat = dy.col(t).cwiseProduct(gamma.col(0));
        S mean_dxhat = dxhat.mean();
        S mean_dxhat_xhat = dxhat.cwiseProduct(xhat.col(t)).sum() / static_cast<S>(d);
        dx.col(t) += inv_std(t) * (dxhat.array() - mean_dxhat - xhat.col(t).array() * mean_dxhat_xhat).matrix();
    }
}

// Effective linear application W x + (alpha/r) b (a x) + bias. `ax_out` keeps
// the adapter intermediate for the backward pass.
template <typename S>
Mat<S> linear_apply(const Mat<S>& w, const Mat<S>& bias, const LoraPair<S>* lora, S scale,
                    const Mat<S>& x, Mat<S>* ax_out) {
    Mat<S> y = w * x;
    if (lora) {
        Mat<S> ax = lora->a * x;
        y.noalias() += scale * (lora->b * ax);
        if (ax_out) *ax_out = std::move(ax);
    }
    y.colwise() += bias.col(0);
    return y;
}

template <typename S>
struct LinearGrads {
    Mat<S>* dw = nullptr;
    Mat<S>* dbias = nullptr;
    LoraPair<S>* dlora = nullptr;
};

// dX += W_eff^T dY plus parameter gradient accumulation.
template <typename S>
void linear_backward(const Mat<S>& w, const LoraPair<S>* lora, S scale, const Mat<S>& x,
                     const Mat<S>& ax, const Mat<S>& dy, Mat<S>& dx, LinearGrads<S> grads) {
    dx.noalias() += w.transpose() * dy;
    if (lora) {
        dx.noalias() += scale * (lora->a.transpose() * (lora->b.transpose() * dy));
        if (grads.dlora) {
            grads.dlora->b.noalias() += scale * (dy * ax.transpose());
            grads.dlora->a.noalias() += scale * ((lora->b.transpose() * dy) * x.transpose());
        }
    }
    if (grads.dw) grads.dw->noalias() += dy * x.transpose();
    if (grads.dbias) grads.dbias->col(0) += dy.rowwise().sum();
}

}  // namespace detail

// Full teacher-forced forward pass over `ids`. Fills the cache and returns
// log-probs of ids[cont_begin..] under the model. When `capture` is non-null
// it receives per-head context vectors at the last position.
template <typename S>
Vec<S> score_forward(const PolicyT<S>& policy, const TokenSeq& ids, int cont_begin,
                     ScoreCache<S>* cache,
                     std::map<std::pair<int, int>, Vec<S>>* capture = nullptr) {
    const ModelConfig& cfg = policy.cfg;
    const auto T = static_cast<Eigen::Index>(ids.size());
    if (T == 0) throw DataError("score_forward: empty sequence");
    if (T > cfg.context) throw TruncationError("sequence length exceeds model context");
    if (cont_begin < 1 || cont_begin > static_cast<int>(T)) {
        throw DataError("score_forward: continuation must start inside the sequence");
    }
    for (TokenId id : ids) {
        if (id < 0 || id >= cfg.vocab) throw DataError("score_forward: token id out of range");
    }

    const int hd = cfg.head_dim();
    const S att_scale = S(1) / std::sqrt(static_cast<S>(hd));
    const AdapterParams<S>* ad = policy.adapter ? &*policy.adapter : nullptr;
    const S lscale = ad ? ad->scale() : S(0);

    Mat<S> x(cfg.dim, T);
    for (Eigen::Index t = 0; t < T; ++t) {
        x.col(t) = policy.params.tok_emb.col(ids[static_cast<std::size_t>(t)]) + policy.params.pos_emb.col(t);
    }

    if (cache) {
        cache->ids = ids;
        cache->cont_begin = cont_begin;
        cache->layers.assign(static_cast<std::size_t>(cfg.layers), {});
    }

    for (int l = 0; l < cfg.layers; ++l) {
        const LayerParams<S>& lp = policy.params.layers[static_cast<std::size_t>(l)];
        const LayerAdapter<S>* la = ad ? &ad->layers[static_cast<std::size_t>(l)] : nullptr;
        LayerCache<S> lc;
        lc.x_in = x;

        lc.a1 = detail::layer_norm(x, lp.ln1_g, lp.ln1_b, lc.xhat1, lc.inv_std1);
        lc.q = detail::linear_apply<S>(lp.wq, lp.bq, la ? &la->wq : nullptr, lscale, lc.a1, &lc.ax_q);
        lc.k = detail::linear_apply<S>(lp.wk, lp.bk, la ? &la->wk : nullptr, lscale, lc.a1, &lc.ax_k);
        lc.v = detail::linear_apply<S>(lp.wv, lp.bv, la ? &la->wv : nullptr, lscale, lc.a1, &lc.ax_v);

        lc.ctx.resize(cfg.dim, T);
        lc.attn.resize(static_cast<std::size_t>(cfg.heads));
        for (int h = 0; h < cfg.heads; ++h) {
            auto qh = lc.q.middleRows(h * hd, hd);
            auto kh = lc.k.middleRows(h * hd, hd);
            auto vh = lc.v.middleRows(h * hd, hd);
            Mat<S> scores = (qh.transpose() * kh) * att_scale;  // T x T, row = query
            Mat<S>& p = lc.attn[static_cast<std::size_t>(h)];
            p = Mat<S>::Zero(T, T);
            for (Eigen::Index i = 0; i < T; ++i) {
                Vec<S> row = scores.row(i).head(i + 1).transpose();
                detail::log_softmax_inplace(row);
                p.row(i).head(i + 1) = row.array().exp().transpose();
            }
            lc.ctx.middleRows(h * hd, hd).noalias() = vh * p.transpose();
        }

        Mat<S> attn_out = detail::linear_apply<S>(lp.wo, lp.bo, la ? &la->wo : nullptr, lscale, lc.ctx, &lc.ax_o);
        if (capture) {
            for (int h = 0; h < cfg.heads; ++h) {
                (*capture)[{l, h}] = lc.ctx.col(T - 1).segment(h * hd, hd);
            }
        }
        lc.x_mid = x + attn_out;

        lc.a2 = detail::layer_norm(lc.x_mid, lp.ln2_g, lp.ln2_b, lc.xhat2, lc.inv_std2);
        lc.h_pre = detail::linear_apply<S>(lp.w1, lp.b1, la ? &la->w1 : nullptr, lscale, lc.a2, &lc.ax_1);
        lc.h = lc.h_pre.unaryExpr([](S v) { return detail::gelu(v); });
        Mat<S> mlp_out = detail::linear_apply<S>(lp.w2, lp.b2, la ? &la->w2 : nullptr, lscale, lc.h, &lc.ax_2);
        x = lc.x_mid + mlp_out;

        if (cache) {
            cache->layers[static_cast<std::size_t>(l)] = std::move(lc);
        }
    }

    Mat<S> xhatf;
    Vec<S> inv_stdf;
    Mat<S> f = detail::layer_norm(x, policy.params.lnf_g, policy.params.lnf_b, xhatf, inv_stdf);

    const Eigen::Index n_cont = T - cont_begin;
    Vec<S> logprobs(n_cont);
    Mat<S> probs;
    if (cache) probs.resize(cfg.vocab, n_cont);
    for (Eigen::Index c = 0; c < n_cont; ++c) {
        Eigen::Index pos = cont_begin - 1 + c;
        Vec<S> logits = policy.params.head_w * f.col(pos) + policy.params.head_b.col(0);
        detail::log_softmax_inplace(logits);
        logprobs(c) = logits(ids[static_cast<std::size_t>(pos + 1)]);
        if (cache) probs.col(c) = logits.array().exp();
    }

    if (cache) {
        cache->xhatf = std::move(xhatf);
        cache->inv_stdf = std::move(inv_stdf);
        cache->f = std::move(f);
        cache->probs = std::move(probs);
        cache->logprobs = logprobs;
    }
    return logprobs;
}

// Accumulates d(sum_t coeffs[t] * logprob[t]) / d(params) into `base_grads`
// and, when the policy carries an adapter, into `adapter_grads`. Passing a
// null base_grads trains the adapter alone (the poisoning regime).
template <typename S>
void score_backward(const PolicyT<S>& policy, const ScoreCache<S>& cache, const Vec<S>& coeffs,
                    PolicyParams<S>* base_grads, AdapterParams<S>* adapter_grads) {
    const ModelConfig& cfg = policy.cfg;
    const auto T = static_cast<Eigen::Index>(cache.ids.size());
    const Eigen::Index n_cont = T - cache.cont_begin;
    if (coeffs.size() != n_cont) throw DataError("score_backward: coefficient length mismatch");

    const int hd = cfg.head_dim();
    const S att_scale = S(1) / std::sqrt(static_cast<S>(hd));
    const AdapterParams<S>* ad = policy.adapter ? &*policy.adapter : nullptr;
    const S lscale = ad ? ad->scale() : S(0);
    if (adapter_grads && !ad) throw DataError("score_backward: no adapter attached");

    // d logits -> d f
    Mat<S> dlogits = Mat<S>::Zero(cfg.vocab, T);
    for (Eigen::Index c = 0; c < n_cont; ++c) {
        Eigen::Index pos = cache.cont_begin - 1 + c;
        TokenId target = cache.ids[static_cast<std::size_t>(pos + 1)];
        dlogits.col(pos) = -coeffs(c) * cache.probs.col(c);
        dlogits(target, pos) += coeffs(c);
    }
    Mat<S> df = policy.params.head_w.transpose() * dlogits;
    if (base_grads) {
        base_grads->head_w.noalias() += dlogits * cache.f.transpose();
        base_grads->head_b.col(0) += dlogits.rowwise().sum();
    }

    Mat<S> dx = Mat<S>::Zero(cfg.dim, T);
    detail::layer_norm_backward(df, cache.xhatf, cache.inv_stdf, policy.params.lnf_g, dx,
                                base_grads ? &base_grads->lnf_g : nullptr,
                                base_grads ? &base_grads->lnf_b : nullptr);

    for (int l = cfg.layers - 1; l >= 0; --l) {
        const LayerParams<S>& lp = policy.params.layers[static_cast<std::size_t>(l)];
        const LayerAdapter<S>* la = ad ? &ad->layers[static_cast<std::size_t>(l)] : nullptr;
        LayerParams<S>* lg = base_grads ? &base_grads->layers[static_cast<std::size_t>(l)] : nullptr;
        LayerAdapter<S>* lag = adapter_grads ? &adapter_grads->layers[static_cast<std::size_t>(l)] : nullptr;
        const LayerCache<S>& lc = cache.layers[static_cast<std::size_t>(l)];

        // MLP block: x = x_mid + W2 gelu(W1 a2 + b1) + b2
        Mat<S> dh = Mat<S>::Zero(cfg.ffn_dim(), T);
        detail::linear_backward(lp.w2, la ? &la->w2 : nullptr, lscale, lc.h, lc.ax_2, dx, dh,
                                detail::LinearGrads<S>{lg ? &lg->w2 : nullptr, lg ? &lg->b2 : nullptr,
                                                       lag ? &lag->w2 : nullptr});
        Mat<S> dh_pre = dh.cwiseProduct(lc.h_pre.unaryExpr([](S v) { return detail::gelu_grad(v); }));
        Mat<S> da2 = Mat<S>::Zero(cfg.dim, T);
        detail::linear_backward(lp.w1, la ? &la->w1 : nullptr, lscale, lc.a2, lc.ax_1, dh_pre, da2,
                                detail::LinearGrads<S>{lg ? &lg->w1 : nullptr, lg ? &lg->b1 : nullptr,
                                                       lag ? &lag->w1 : nullptr});
        Mat<S> dx_mid = dx;  // residual branch
        detail::layer_norm_backward(da2, lc.xhat2, lc.inv_std2, lp.ln2_g, dx_mid,
                                    lg ? &lg->ln2_g : nullptr, lg ? &lg->ln2_b : nullptr);

        // Attention block: x_mid = x_in + Wo ctx + bo
        Mat<S> dctx = Mat<S>::Zero(cfg.dim, T);
        detail::linear_backward(lp.wo, la ? &la->wo : nullptr, lscale, lc.ctx, lc.ax_o, dx_mid, dctx,
                                detail::LinearGrads<S>{lg ? &lg->wo : nullptr, lg ? &lg->bo : nullptr,
                                                       lag ? &lag->wo : nullptr});

        Mat<S> dq = Mat<S>::Zero(cfg.dim, T);
        Mat<S> dk = Mat<S>::Zero(cfg.dim, T);
        Mat<S> dv = Mat<S>::Zero(cfg.dim, T);
        for (int h = 0; h < cfg.heads; ++h) {
            auto qh = lc.q.middleRows(h * hd, hd);
            auto kh = lc.k.middleRows(h * hd, hd);
            auto vh = lc.v.middleRows(h * hd, hd);
            auto dch = dctx.middleRows(h * hd, hd);
            const Mat<S>& p = lc.attn[static_cast<std::size_t>(h)];

            dv.middleRows(h * hd, hd).noalias() += dch * p;
            Mat<S> dp = dch.transpose() * vh;  // T x T
            Mat<S> ds(T, T);
            for (Eigen::Index i = 0; i < T; ++i) {
                auto prow = p.row(i).head(i + 1);
                auto dprow = dp.row(i).head(i + 1);
                S dot = (dprow.array() * prow.array()).sum();
                ds.row(i).setZero();
                ds.row(i).head(i + 1) = prow.array() * (dprow.array() - dot);
            }
            dq.middleRows(h * hd, hd).noalias() += att_scale * (kh * ds.transpose());
            dk.middleRows(h * hd, hd).noalias() += att_scale * (qh * ds);
        }

        Mat<S> da1 = Mat<S>::Zero(cfg.dim, T);
        detail::linear_backward(lp.wq, la ? &la->wq : nullptr, lscale, lc.a1, lc.ax_q, dq, da1,
                                detail::LinearGrads<S>{lg ? &lg->wq : nullptr, lg ? &lg->bq : nullptr,
                                                       lag ? &lag->wq : nullptr});
        detail::linear_backward(lp.wk, la ? &la->wk : nullptr, lscale, lc.a1, lc.ax_k, dk, da1,
                                detail::LinearGrads<S>{lg ? &lg->wk : nullptr, lg ? &lg->bk : nullptr,
                                                       lag ? &lag->wk : nullptr});
        detail::linear_backward(lp.wv, la ? &la->wv : nullptr, lscale, lc.a1, lc.ax_v, dv, da1,
                                detail::LinearGrads<S>{lg ? &lg->wv : nullptr, lg ? &lg->bv : nullptr,
                                                       lag ? &lag->wv : nullptr});

        Mat<S> dx_in = dx_mid;  // residual branch
        detail::layer_norm_backward(da1, lc.xhat1, lc.inv_std1, lp.ln1_g, dx_in,
                                    lg ? &lg->ln1_g : nullptr, lg ? &lg->ln1_b : nullptr);
        dx = std::move(dx_in);
    }

    if (base_grads) {
        for (Eigen::Index t = 0; t < T; ++t) {
            base_grads->tok_emb.col(cache.ids[static_cast<std::size_t>(t)]) += dx.col(t);
            base_grads->pos_emb.col(t) += dx.col(t);
        }
    }
}

// Per-token log-probabilities of `continuation` given `prompt`.
template <typename S>
Vec<S> sequence_logprob(const PolicyT<S>& policy, const TokenSeq& prompt, const TokenSeq& continuation) {
    if (prompt.empty()) throw DataError("sequence_logprob: prompt must be non-empty");
    if (continuation.empty()) return Vec<S>();
    TokenSeq ids = prompt;
    ids.insert(ids.end(), continuation.begin(), continuation.end());
    return score_forward<S>(policy, ids, static_cast<int>(prompt.size()), nullptr);
}

// ---------------------------------------------------------------------------
// Incremental generation
// ---------------------------------------------------------------------------

template <typename S>
struct KvCache {
    std::vector<Mat<S>> k, v;  // per layer, dim x filled
    Eigen::Index filled = 0;

    void reset(const ModelConfig& cfg) {
        k.assign(static_cast<std::size_t>(cfg.layers), Mat<S>(cfg.dim, cfg.context));
        v.assign(static_cast<std::size_t>(cfg.layers), Mat<S>(cfg.dim, cfg.context));
        filled = 0;
    }
};

// Feeds one token at the next position, returns the logits column.
template <typename S>
Vec<S> forward_step(const PolicyT<S>& policy, TokenId id, KvCache<S>& cache) {
    const ModelConfig& cfg = policy.cfg;
    const Eigen::Index pos = cache.filled;
    if (pos >= cfg.context) throw TruncationError("forward_step: context exhausted");
    const int hd = cfg.head_dim();
    const S att_scale = S(1) / std::sqrt(static_cast<S>(hd));
    const AdapterParams<S>* ad = policy.adapter ? &*policy.adapter : nullptr;
    const S lscale = ad ? ad->scale() : S(0);

    Vec<S> x = policy.params.tok_emb.col(id) + policy.params.pos_emb.col(pos);
    Mat<S> xhat_scratch;
    Vec<S> istd_scratch;
    for (int l = 0; l < cfg.layers; ++l) {
        const LayerParams<S>& lp = policy.params.layers[static_cast<std::size_t>(l)];
        const LayerAdapter<S>* la = ad ? &ad->layers[static_cast<std::size_t>(l)] : nullptr;

        Mat<S> a1 = detail::layer_norm(Mat<S>(x), lp.ln1_g, lp.ln1_b, xhat_scratch, istd_scratch);
        Mat<S> q = detail::linear_apply<S>(lp.wq, lp.bq, la ? &la->wq : nullptr, lscale, a1, nullptr);
        Mat<S> k = detail::linear_apply<S>(lp.wk, lp.bk, la ? &la->wk : nullptr, lscale, a1, nullptr);
        Mat<S> v = detail::linear_apply<S>(lp.wv, lp.bv, la ? &la->wv : nullptr, lscale, a1, nullptr);
        cache.k[static_cast<std::size_t>(l)].col(pos) = k.col(0);
        cache.v[static_cast<std::size_t>(l)].col(pos) = v.col(0);

        Mat<S> ctx(cfg.dim, 1);
        for (int h = 0; h < cfg.heads; ++h) {
            auto kh = cache.k[static_cast<std::size_t>(l)].middleRows(h * hd, hd).leftCols(pos + 1);
            auto vh = cache.v[static_cast<std::size_t>(l)].middleRows(h * hd, hd).leftCols(pos + 1);
            Vec<S> scores = (kh.transpose() * q.col(0).segment(h * hd, hd)) * att_scale;
            detail::log_softmax_inplace(scores);
            Vec<S> probs = scores.array().exp();
            ctx.col(0).segment(h * hd, hd).noalias() = vh * probs;
        }
        Mat<S> attn_out = detail::linear_apply<S>(lp.wo, lp.bo, la ? &la->wo : nullptr, lscale, ctx, nullptr);
        x += attn_out.col(0);

        Mat<S> a2 = detail::layer_norm(Mat<S>(x), lp.ln2_g, lp.ln2_b, xhat_scratch, istd_scratch);
        Mat<S> h_pre = detail::linear_apply<S>(lp.w1, lp.b1, la ? &la->w1 : nullptr, lscale, a2, nullptr);
        Mat<S> h = h_pre.unaryExpr([](S val) { return detail::gelu(val); });
        Mat<S> mlp_out = detail::linear_apply<S>(lp.w2, lp.b2, la ? &la->w2 : nullptr, lscale, h, nullptr);
        x += mlp_out.col(0);
    }
    Mat<S> f = detail::layer_norm(Mat<S>(x), policy.params.lnf_g, policy.params.lnf_b, xhat_scratch,
                                  istd_scratch);
    cache.filled = pos + 1;
    return policy.params.head_w * f.col(0) + policy.params.head_b.col(0);
}

namespace detail {

template <typename S>
TokenId sample_token(const Vec<S>& logits, double temperature, Rng& rng) {
    if (temperature <= 0.0) {
        Eigen::Index best = 0;
        logits.maxCoeff(&best);
        return static_cast<TokenId>(best);
    }
    Vec<S> scaled = logits / static_cast<S>(temperature);
    Vec<S> p = softmax(scaled);
    double u = rng.uniform();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        acc += static_cast<double>(p(i));
        if (u < acc) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(p.size() - 1);
}

}  // namespace detail

// Samples a continuation after teacher-forcing prompt + prefill. Generation
// stops at <eos> or when max_new_tokens / the context window is exhausted.
template <typename S>
Trace generate(const PolicyT<S>& policy, const Tokenizer& tok, const std::string& prompt,
               const std::string& prefill, const GenParams& params) {
    if (params.max_new_tokens < 1) throw ConfigError("generate: max_new_tokens must be >= 1");
    if (params.temperature < 0) throw ConfigError("generate: temperature must be >= 0");

    Trace trace;
    trace.prompt_text = prompt;
    trace.prefill_text = prefill;
    trace.prompt_ids = tok.encode(prompt);
    trace.prefill_ids = tok.encode(prefill);
    if (trace.prompt_ids.empty()) throw DataError("generate: empty prompt");

    TokenSeq context = trace.context_ids();
    if (static_cast<int>(context.size()) >= policy.cfg.context) {
        throw TruncationError("generate: prompt + prefill does not fit the context window");
    }

    Rng rng(params.seed);
    KvCache<S> kv;
    kv.reset(policy.cfg);

    Vec<S> logits;
    for (TokenId id : context) logits = forward_step(policy, id, kv);

    std::vector<double> logprobs;
    for (int step = 0; step < params.max_new_tokens; ++step) {
        TokenId next = detail::sample_token(logits, params.temperature, rng);
        Vec<S> logp = logits;
        detail::log_softmax_inplace(logp);
        logprobs.push_back(static_cast<double>(logp(next)));
        trace.sampled_ids.push_back(next);
        if (next == tok.eos_id()) {
            trace.ended_with_eos = true;
            break;
        }
        if (kv.filled >= policy.cfg.context) break;  // window exhausted
        logits = forward_step(policy, next, kv);
    }

    trace.logprobs = Eigen::Map<const VecX>(logprobs.data(), static_cast<Eigen::Index>(logprobs.size()));

    // Think span: first opening delimiter to the first closing one, over
    // prefill + sampled tokens. Without delimiters the whole tail is answer.
    TokenSeq tail = trace.prefill_ids;
    tail.insert(tail.end(), trace.sampled_ids.begin(), trace.sampled_ids.end());
    std::size_t open = tail.size(), close = tail.size();
    for (std::size_t i = 0; i < tail.size(); ++i) {
        if (tail[i] == tok.think_open_id()) {
            open = i;
            break;
        }
    }
    std::size_t answer_begin = 0;
    if (open < tail.size()) {
        for (std::size_t i = open + 1; i < tail.size(); ++i) {
            if (tail[i] == tok.think_close_id()) {
                close = i;
                break;
            }
        }
        trace.think_text = tok.decode(tail, open + 1, close);
        answer_begin = close < tail.size() ? close + 1 : tail.size();
    }
    TokenSeq answer_ids;
    for (std::size_t i = answer_begin; i < tail.size(); ++i) {
        if (tail[i] != tok.eos_id()) answer_ids.push_back(tail[i]);
    }
    trace.answer_text = tok.decode(answer_ids);

    if (params.capture_activations) {
        TokenSeq full = trace.full_ids();
        std::map<std::pair<int, int>, Vec<S>> cap;
        score_forward<S>(policy, full, static_cast<int>(full.size()) - 1, nullptr, &cap);
        for (auto& [key, vec] : cap) trace.activations[key] = vec.template cast<Scalar>();
    }
    return trace;
}

// Next-token logits over the four labels at the position following the
// answer-sentence stem "The correct answer is (".
template <typename S>
std::map<std::string, S> answer_logits(const PolicyT<S>& policy, const Tokenizer& tok,
                                       const std::string& prompt) {
    static const char* kStemWords[] = {"The", "correct", "answer", "is", "("};
    TokenSeq ids = tok.encode(prompt);
    if (ids.empty()) throw DataError("answer_logits: empty prompt");
    for (const char* w : kStemWords) {
        if (!tok.contains(w)) throw TokenizationError(std::string("answer stem word missing: ") + w);
        ids.push_back(tok.id_of(w));
    }
    if (static_cast<int>(ids.size()) > policy.cfg.context) {
        throw TruncationError("answer_logits: prompt does not fit the context window");
    }

    KvCache<S> kv;
    kv.reset(policy.cfg);
    Vec<S> logits;
    for (TokenId id : ids) logits = forward_step(policy, id, kv);

    std::map<std::string, S> out;
    for (const char* label : {"A", "B", "C", "D"}) {
        if (!tok.contains(label)) throw TokenizationError(std::string("label token missing: ") + label);
        out[label] = logits(tok.id_of(label));
    }
    return out;
}

// Residual-stream states after block `layer` for each position; used by the
// reasoning-graph embeddings.
template <typename S>
Mat<S> hidden_states(const PolicyT<S>& policy, const TokenSeq& ids, int layer) {
    if (layer < 0 || layer >= policy.cfg.layers) throw ConfigError("hidden_states: layer out of range");
    const ModelConfig& cfg = policy.cfg;
    if (static_cast<Eigen::Index>(ids.size()) > cfg.context) {
        throw TruncationError("hidden_states: sequence exceeds context");
    }
    // Reuse the cached score pass; cont_begin=1 keeps it valid for any length.
    ScoreCache<S> cache;
    score_forward<S>(policy, ids, 1, &cache);
    if (layer + 1 < cfg.layers) {
        return cache.layers[static_cast<std::size_t>(layer + 1)].x_in;
    }
    // Last block's output (the input to the final layer norm) is rebuilt from
    // the cached MLP activations.
    const LayerCache<S>& lc = cache.layers.back();
    const LayerParams<S>& lp = policy.params.layers.back();
    const AdapterParams<S>* ad = policy.adapter ? &*policy.adapter : nullptr;
    const LayerAdapter<S>* la = ad ? &ad->layers.back() : nullptr;
    Mat<S> mlp_out = detail::linear_apply<S>(lp.w2, lp.b2, la ? &la->w2 : nullptr,
                                          ad ? ad->scale() : S(0), lc.h, nullptr);
    return lc.x_mid + mlp_out;
}

}  // namespace lab::model
