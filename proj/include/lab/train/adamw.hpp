#pragma once

#include "lab/model/params.hpp"

#include <vector>

namespace lab::train {

// AdamW over any visitable parameter pack (policy params or adapter factors).
template <typename S, typename P>
class AdamW {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW() = default;
    AdamW(const P& shape, Options opts) : opts_(opts) {
        m_ = model::zeros_like<S>(shape);
        v_ = model::zeros_like<S>(shape);
    }

    Options& options() { return opts_; }

    void step(P& params, P& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));

        std::vector<Mat<S>*> ps, gs, ms, vs;
        params.visit([&](const std::string&, Mat<S>& m) { ps.push_back(&m); });
        grads.visit([&](const std::string&, Mat<S>& m) { gs.push_back(&m); });
        m_.visit([&](const std::string&, Mat<S>& m) { ms.push_back(&m); });
        v_.visit([&](const std::string&, Mat<S>& m) { vs.push_back(&m); });
        if (ps.size() != gs.size() || ps.size() != ms.size()) {
            throw DataError("AdamW: parameter/gradient structure mismatch");
        }

        for (std::size_t i = 0; i < ps.size(); ++i) {
            Mat<S>& p = *ps[i];
            const Mat<S>& g = *gs[i];
            Mat<S>& m = *ms[i];
            Mat<S>& v = *vs[i];
            m = static_cast<S>(opts_.beta1) * m + static_cast<S>(1.0 - opts_.beta1) * g;
            v = static_cast<S>(opts_.beta2) * v.array().matrix() +
                static_cast<S>(1.0 - opts_.beta2) * g.array().square().matrix();
            if (opts_.weight_decay != 0.0) {
                p -= static_cast<S>(opts_.lr * opts_.weight_decay) * p;
            }
            p.array() -= static_cast<S>(opts_.lr) * (m.array() / static_cast<S>(bc1)) /
                         ((v.array() / static_cast<S>(bc2)).sqrt() + static_cast<S>(opts_.eps));
        }
    }

private:
    Options opts_;
    P m_, v_;
    int64_t t_ = 0;
};

}  // namespace lab::train
