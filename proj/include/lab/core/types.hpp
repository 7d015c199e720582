#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lab {

// Default scalar for the whole pipeline. Double keeps the advantage/loss
// identity checks and finite-difference gradient tests well inside their
// tolerances on a single build.
using Scalar = double;

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using MatX = Mat<Scalar>;
using VecX = Vec<Scalar>;

using TokenId = int32_t;
using TokenSeq = std::vector<TokenId>;

// Error taxonomy used across modules. Callers that need to branch on the
// category catch the concrete type.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lab
