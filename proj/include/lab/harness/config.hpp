#pragma once

#include "lab/extract/judge.hpp"
#include "lab/model/config.hpp"
#include "lab/perturb/perturb.hpp"
#include "lab/tasks/qa.hpp"
#include "lab/train/losses.hpp"

#include <string>
#include <vector>

namespace lab::harness {

struct PretrainConfig {
    int epochs = 8;
    int batch = 32;
    double lr = 1e-3;
};

struct PerturbStageConfig {
    int items = 100;  // trials per experiment kind (spread over eval domains)
    perturb::PoisonSpec poison;
    std::string cue_template = "A reliable expert suggests the answer is ( {Y} ) .";
    std::vector<std::string> kinds = {"reasoning", "retrieval", "combined_aligned",
                                      "combined_disparate"};
};

struct ProbeConfig {
    int folds = 5;
    double l2 = 1.0;
    int top_k = 8;
};

struct EvalConfig {
    int items = 150;          // ACC/MTL measurement size per split
    int perturb_items = 40;   // disparate trials per method for the table
    int max_new_tokens = 96;
};

struct GraphConfig {
    int trajectories = 100;
    int clusters = 0;  // 0 = ceil(sqrt(total steps))
    int rewirings = 20;
    int subsamples = 20;
    double fraction = 0.5;
};

struct ExperimentConfig {
    uint64_t seed = 1;
    std::string name = "run";
    forge::DatasetConfig dataset;
    model::ModelConfig model;  // vocab is derived from the dataset at runtime
    PretrainConfig pretrain;
    PerturbStageConfig perturb;
    ProbeConfig probe;
    train::TrainConfig train;
    EvalConfig eval;
    GraphConfig graph;
    extract::JudgeMode judge = extract::JudgeMode::mock;
    std::vector<std::string> stages;  // empty = all stages in order
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& config);

// Stable content hash over the canonical JSON form; used for resume safety.
std::string config_hash(const ExperimentConfig& config);

extern const std::vector<std::string> kStageOrder;

}  // namespace lab::harness
