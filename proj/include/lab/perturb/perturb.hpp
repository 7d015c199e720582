#pragma once

#include "lab/extract/judge.hpp"
#include "lab/model/policy.hpp"
#include "lab/tasks/qa.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace lab::perturb {

using model::Policy;

enum class Kind { reasoning, retrieval, combined_aligned, combined_disparate };

const char* kind_name(Kind k);
Kind kind_from_name(const std::string& name);

// Misleading cue appended to the model's own think segment, right before the
// closing delimiter.
struct CueSpec {
    std::string target;  // y_r
    std::string template_text = "A reliable expert suggests the answer is ( {Y} ) .";

    std::string render() const;
};

// Memory-poisoning fine-tune hyperparameters. One throwaway adapter per item;
// the base weights are never touched.
struct PoisonSpec {
    int batch = 2;
    int rank = 4;
    double alpha = 16.0;
    double lr = 0.02;
    int epochs = 8;
    uint64_t seed = 0;
};

struct Outcome {
    std::string item_id;
    std::string domain;
    Kind kind = Kind::reasoning;
    std::string y;        // original (gold) answer
    std::string y_r;      // cue target, when applicable
    std::string y_t;      // poison target, when applicable
    std::string y_prime;  // observed answer label, empty when unextracted
    std::string cot_answer;  // A(z'), retrieval kind only
    bool reasoning_win = false;
    bool retrieval_win = false;
    bool neither = true;
    bool posthoc = false;
    bool poison_ineffective = false;
    uint64_t seed = 0;
};

struct TrialResult {
    Outcome outcome;
    model::Trace trace;  // the perturbed generation (activation source)
};

struct TrialParams {
    model::GenParams gen;         // temperature 0 by default for measurement
    extract::Extractor extractor;
    uint64_t seed = 0;

    TrialParams() { gen.temperature = 0.0; }
};

// Uniform pick among labels different from y (and from `exclude` when given).
std::string select_cue_target(const std::string& y, const std::optional<std::string>& exclude,
                              uint64_t seed);

// Highest answer-stem logit excluding the original answer; ties break toward
// the alphabetically first label.
std::string select_poison_target(const Policy& policy, const Tokenizer& tok,
                                 const forge::QAItem& item, const std::string& y);

// Adapter-only fine-tune of prompt -> "The correct answer is (Y)." pairs.
Policy poison_finetune(const Policy& policy, const Tokenizer& tok, const std::string& prompt,
                       const std::string& target_label, const PoisonSpec& spec);

// The four experiments. Each first checks the filtering precondition (the
// clean model answers correctly at temperature 0) and returns nullopt for
// items that fail it.
std::optional<TrialResult> reasoning_perturb(const Policy& policy, const Tokenizer& tok,
                                             const forge::QAItem& item, const CueSpec& cue,
                                             const TrialParams& params);

// Generation-function variant so scripted stand-in policies can drive the
// experiment logic directly.
using GenerateFn = std::function<model::Trace(const std::string& prompt, const std::string& prefill,
                                              const model::GenParams& params)>;
std::optional<TrialResult> reasoning_perturb(const GenerateFn& generate, const Tokenizer& tok,
                                             const forge::QAItem& item, const CueSpec& cue,
                                             const TrialParams& params);

struct RetrievalResult {
    Policy poisoned;  // adapter still attached; discard to restore the base
    TrialResult trial;
};

std::optional<RetrievalResult> retrieval_perturb(const Policy& policy, const Tokenizer& tok,
                                                 const forge::QAItem& item, const PoisonSpec& spec,
                                                 const TrialParams& params);

enum class CombinedMode { aligned, disparate };

std::optional<TrialResult> combined_perturb(const Policy& policy, const Tokenizer& tok,
                                            const forge::QAItem& item, CombinedMode mode,
                                            const PoisonSpec& poison_spec,
                                            const std::string& cue_template,
                                            const TrialParams& params);

// Metrics -----------------------------------------------------------------

struct RateBlock {
    int n = 0;
    std::optional<double> r_psr;
    std::optional<double> t_psr;
    std::optional<double> combined_sum;  // aligned kind
    std::optional<double> per;           // retrieval kind
};

struct MetricReport {
    Kind kind = Kind::reasoning;
    RateBlock total;
    std::map<std::string, RateBlock> by_domain;
};

MetricReport compute_metrics(const std::vector<Outcome>& outcomes);

// Run-store persistence: one schema-versioned JSON object per trial.
void append_outcomes_jsonl(const std::string& path, const std::vector<Outcome>& outcomes);
std::vector<Outcome> read_outcomes_jsonl(const std::string& path);

}  // namespace lab::perturb
