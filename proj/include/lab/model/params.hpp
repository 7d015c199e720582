#pragma once

#include "lab/core/rng.hpp"
#include "lab/model/config.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lab::model {

// Every tensor is a Mat so optimizers and checkpoints can treat the parameter
// set as a flat list; vectors are stored as n-by-1 matrices.
template <typename S>
struct LayerParams {
    Mat<S> ln1_g, ln1_b;
    Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
    Mat<S> ln2_g, ln2_b;
    Mat<S> w1, b1, w2, b2;

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".ln1_g", ln1_g);
        f(prefix + ".ln1_b", ln1_b);
        f(prefix + ".wq", wq);
        f(prefix + ".bq", bq);
        f(prefix + ".wk", wk);
        f(prefix + ".bk", bk);
        f(prefix + ".wv", wv);
        f(prefix + ".bv", bv);
        f(prefix + ".wo", wo);
        f(prefix + ".bo", bo);
        f(prefix + ".ln2_g", ln2_g);
        f(prefix + ".ln2_b", ln2_b);
        f(prefix + ".w1", w1);
        f(prefix + ".b1", b1);
        f(prefix + ".w2", w2);
        f(prefix + ".b2", b2);
    }
};

template <typename S>
struct PolicyParams {
    Mat<S> tok_emb;  // dim x vocab
    Mat<S> pos_emb;  // dim x context
    std::vector<LayerParams<S>> layers;
    Mat<S> lnf_g, lnf_b;
    Mat<S> head_w;  // vocab x dim
    Mat<S> head_b;  // vocab x 1

    template <typename F>
    void visit(F&& f) {
        f("tok_emb", tok_emb);
        f("pos_emb", pos_emb);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            layers[l].visit("layer" + std::to_string(l), f);
        }
        f("lnf_g", lnf_g);
        f("lnf_b", lnf_b);
        f("head_w", head_w);
        f("head_b", head_b);
    }

    int64_t count() const {
        int64_t n = 0;
        const_cast<PolicyParams*>(this)->visit([&n](const std::string&, const Mat<S>& m) { n += m.size(); });
        return n;
    }
};

// Low-rank delta on one projection: effective weight is W + (alpha/r) * b * a.
template <typename S>
struct LoraPair {
    Mat<S> a;  // rank x in
    Mat<S> b;  // out x rank
};

template <typename S>
struct LayerAdapter {
    LoraPair<S> wq, wk, wv, wo, w1, w2;

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".wq.a", wq.a);
        f(prefix + ".wq.b", wq.b);
        f(prefix + ".wk.a", wk.a);
        f(prefix + ".wk.b", wk.b);
        f(prefix + ".wv.a", wv.a);
        f(prefix + ".wv.b", wv.b);
        f(prefix + ".wo.a", wo.a);
        f(prefix + ".wo.b", wo.b);
        f(prefix + ".w1.a", w1.a);
        f(prefix + ".w1.b", w1.b);
        f(prefix + ".w2.a", w2.a);
        f(prefix + ".w2.b", w2.b);
    }
};

template <typename S>
struct AdapterParams {
    int rank = 0;
    S alpha = S(16);
    std::vector<LayerAdapter<S>> layers;

    S scale() const { return alpha / static_cast<S>(rank); }

    template <typename F>
    void visit(F&& f) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            layers[l].visit("adapter" + std::to_string(l), f);
        }
    }

    int64_t count() const {
        int64_t n = 0;
        const_cast<AdapterParams*>(this)->visit([&n](const std::string&, const Mat<S>& m) { n += m.size(); });
        return n;
    }
};

template <typename S>
PolicyParams<S> init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    auto randn = [&rng](int rows, int cols, double std) {
        Mat<S> m(rows, cols);
        for (int c = 0; c < cols; ++c) {
            for (int r = 0; r < rows; ++r) m(r, c) = static_cast<S>(rng.normal(0.0, std));
        }
        return m;
    };

    const double base_std = 0.08;
    // Residual-projection init shrinks with depth, GPT-2 style.
    const double out_std = base_std / std::sqrt(2.0 * cfg.layers);

    PolicyParams<S> p;
    p.tok_emb = randn(cfg.dim, cfg.vocab, base_std);
    p.pos_emb = randn(cfg.dim, cfg.context, 0.02);
    p.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& layer : p.layers) {
        layer.ln1_g = Mat<S>::Ones(cfg.dim, 1);
        layer.ln1_b = Mat<S>::Zero(cfg.dim, 1);
        layer.wq = randn(cfg.dim, cfg.dim, base_std);
        layer.bq = Mat<S>::Zero(cfg.dim, 1);
        layer.wk = randn(cfg.dim, cfg.dim, base_std);
        layer.bk = Mat<S>::Zero(cfg.dim, 1);
        layer.wv = randn(cfg.dim, cfg.dim, base_std);
        layer.bv = Mat<S>::Zero(cfg.dim, 1);
        layer.wo = randn(cfg.dim, cfg.dim, out_std);
        layer.bo = Mat<S>::Zero(cfg.dim, 1);
        layer.ln2_g = Mat<S>::Ones(cfg.dim, 1);
        layer.ln2_b = Mat<S>::Zero(cfg.dim, 1);
        layer.w1 = randn(cfg.ffn_dim(), cfg.dim, base_std);
        layer.b1 = Mat<S>::Zero(cfg.ffn_dim(), 1);
        layer.w2 = randn(cfg.dim, cfg.ffn_dim(), out_std);
        layer.b2 = Mat<S>::Zero(cfg.dim, 1);
    }
    p.lnf_g = Mat<S>::Ones(cfg.dim, 1);
    p.lnf_b = Mat<S>::Zero(cfg.dim, 1);
    p.head_w = randn(cfg.vocab, cfg.dim, base_std);
    p.head_b = Mat<S>::Zero(cfg.vocab, 1);
    return p;
}

template <typename S>
AdapterParams<S> init_adapter(const ModelConfig& cfg, int rank, S alpha, uint64_t seed) {
    if (rank < 1) throw ConfigError("adapter rank must be >= 1");
    if (rank > cfg.dim || rank > cfg.ffn_dim()) {
        throw ConfigError("adapter rank exceeds projection dimensions");
    }
    Rng rng(seed);
    auto randn = [&rng](int rows, int cols, double std) {
        Mat<S> m(rows, cols);
        for (int c = 0; c < cols; ++c) {
            for (int r = 0; r < rows; ++r) m(r, c) = static_cast<S>(rng.normal(0.0, std));
        }
        return m;
    };
    // a gets a small random init, b starts at zero so the delta vanishes.
    auto make = [&](int out, int in) {
        LoraPair<S> pair;
        pair.a = randn(rank, in, 0.02);
        pair.b = Mat<S>::Zero(out, rank);
        return pair;
    };

    AdapterParams<S> ad;
    ad.rank = rank;
    ad.alpha = alpha;
    ad.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& layer : ad.layers) {
        layer.wq = make(cfg.dim, cfg.dim);
        layer.wk = make(cfg.dim, cfg.dim);
        layer.wv = make(cfg.dim, cfg.dim);
        layer.wo = make(cfg.dim, cfg.dim);
        layer.w1 = make(cfg.ffn_dim(), cfg.dim);
        layer.w2 = make(cfg.dim, cfg.ffn_dim());
    }
    return ad;
}

// Zero-filled gradient holder with the same shapes.
template <typename S, typename P>
P zeros_like(const P& params) {
    P g = params;
    const_cast<P&>(g).visit([](const std::string&, Mat<S>& m) { m.setZero(); });
    return g;
}

}  // namespace lab::model
