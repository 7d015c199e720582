#pragma once

#include "lab/extract/extract.hpp"

#include <map>
#include <memory>
#include <string>

namespace lab::extract {

struct JudgeUnavailableError : std::runtime_error {
    explicit JudgeUnavailableError(const std::string& what) : std::runtime_error(what) {}
};

struct JudgeParseError : std::runtime_error {
    explicit JudgeParseError(const std::string& what) : std::runtime_error(what) {}
};

// Chat-completion-style judge endpoint. Wire format: HTTP POST /judge with
// JSON body {question, choices, model_output, instruction}; reply {label}.
struct JudgeClient {
    std::string endpoint;  // host:port
    std::string instruction =
        "Decide which multiple-choice option the model output selects. "
        "Reply with the single label A, B, C or D, or an empty string if none.";
    double timeout_seconds = 5.0;
    int retries = 2;
};

ExtractionResult judge_answer(const std::string& question,
                              const std::map<std::string, std::string>& choices,
                              const std::string& model_output, const JudgeClient& client);

// Offline deterministic judge: picks the label whose choice text occurs last
// in the output (whole-token match). Ties and no-occurrence give none.
ExtractionResult mock_judge(const std::map<std::string, std::string>& choices,
                            const std::string& model_output);

enum class JudgeMode { off, mock, remote };

JudgeMode judge_mode_from_name(const std::string& name);
const char* judge_mode_name(JudgeMode m);

// Full A(.) pipeline: pattern extraction, then the configured judge fallback.
// The judge is only consulted when pattern matching fails.
struct Extractor {
    JudgeMode mode = JudgeMode::mock;
    JudgeClient client;  // used when mode == remote

    ExtractionResult extract(const std::string& question,
                             const std::map<std::string, std::string>& choices,
                             const std::string& model_output) const;
};

// Env var consulted by the CLI when --judge remote is selected.
inline constexpr const char* kJudgeEndpointEnv = "LAB_JUDGE_ENDPOINT";

}  // namespace lab::extract
