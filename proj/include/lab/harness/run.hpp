#pragma once

#include "lab/harness/config.hpp"
#include "lab/model/checkpoint.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace lab::harness {

struct StageStatus {
    std::string status;  // "done" or "failed"
    double seconds = 0.0;
    std::string error;
    std::vector<std::string> artifacts;
};

struct RunRecord {
    std::string run_id;
    std::string config_hash;
    std::string source_rev;
    std::map<std::string, StageStatus> stages;
};

struct StageFailure : std::runtime_error {
    explicit StageFailure(const std::string& what) : std::runtime_error(what) {}
};

class Run {
public:
    // Opens or creates a run directory. Refuses to resume when the config
    // hash does not match the directory's recorded one.
    Run(std::filesystem::path dir, const ExperimentConfig& config);

    // Executes the requested stages in dependency order, skipping stages that
    // are already done. Throws StageFailure after recording the failure.
    void execute(const std::vector<std::string>& stages);

    const RunRecord& record() const { return record_; }
    const std::filesystem::path& dir() const { return dir_; }
    const ExperimentConfig& config() const { return config_; }

    bool stage_done(const std::string& stage) const;

    // Individual stages; public so the CLI subcommands can drive them.
    void stage_forge();
    void stage_pretrain();
    void stage_perturb(const std::vector<std::string>& kinds);
    void stage_probe(const std::vector<std::string>& kinds);
    void stage_train(const std::vector<std::string>& methods);
    void stage_eval();
    void stage_graph();
    void stage_report();

    // Artifact accessors used by stages, the report and the tests.
    forge::Dataset load_dataset() const;
    Tokenizer load_tokenizer() const;
    model::Policy load_policy(const std::string& name) const;
    extract::Extractor make_extractor() const;

private:
    void run_stage(const std::string& name, const std::function<void()>& body);
    void save_record() const;
    void mark_artifact(const std::string& stage, const std::string& rel_path);

    std::filesystem::path dir_;
    ExperimentConfig config_;
    RunRecord record_;
};

// Trace rows persisted by the eval stage; every table number recomputes from
// these exactly.
struct EvalRecord {
    std::string method;
    std::string item_id;
    std::string domain;
    int n_generated = 0;
    std::string extracted;  // "" when unextracted
    std::string gold;
    bool correct = false;
};

void append_eval_records(const std::string& path, const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_eval_records(const std::string& path);

// Activation rows persisted by the perturb stage for probing.
struct ActivationRecord {
    std::string item_id;
    std::string kind;
    std::map<std::pair<int, int>, VecX> activations;
};

void append_activation_records(const std::string& path, const std::vector<ActivationRecord>& records);
std::vector<ActivationRecord> read_activation_records(const std::string& path);

}  // namespace lab::harness
