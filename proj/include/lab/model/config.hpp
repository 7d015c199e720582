#pragma once

#include "lab/core/types.hpp"

#include <string>

namespace lab::model {

struct ModelConfig {
    int layers = 4;
    int heads = 4;
    int dim = 128;
    int context = 512;
    int ffn_mult = 4;
    int vocab = 0;

    int head_dim() const { return dim / heads; }
    int ffn_dim() const { return dim * ffn_mult; }

    void validate() const {
        if (layers < 1 || heads < 1 || dim < 1 || context < 2 || vocab < 1) {
            throw ConfigError("model config: all dimensions must be positive");
        }
        if (dim % heads != 0) throw ConfigError("model config: dim must divide evenly into heads");
    }

    bool operator==(const ModelConfig&) const = default;
};

}  // namespace lab::model
