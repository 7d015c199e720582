#include "lab/extract/judge.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

using nlohmann::json;

namespace lab::extract {

namespace {

// Last whole-token occurrence of `needle` in `text`, npos when absent.
std::size_t last_token_occurrence(const std::string& text, const std::string& needle) {
    if (needle.empty()) return std::string::npos;
    std::size_t best = std::string::npos;
    std::size_t pos = text.find(needle);
    while (pos != std::string::npos) {
        bool left_ok = pos == 0 || text[pos - 1] == ' ' || text[pos - 1] == '\n';
        std::size_t after = pos + needle.size();
        bool right_ok = after >= text.size() || text[after] == ' ' || text[after] == '\n';
        if (left_ok && right_ok) best = pos;
        pos = text.find(needle, pos + 1);
    }
    return best;
}

}  // namespace

ExtractionResult mock_judge(const std::map<std::string, std::string>& choices,
                            const std::string& model_output) {
    std::string best_label;
    std::size_t best_pos = 0;
    bool found = false;
    bool tie = false;
    for (const auto& [label, text] : choices) {
        std::size_t pos = last_token_occurrence(model_output, text);
        if (pos == std::string::npos) continue;
        if (!found || pos > best_pos) {
            best_label = label;
            best_pos = pos;
            found = true;
            tie = false;
        } else if (pos == best_pos) {
            tie = true;
        }
    }
    ExtractionResult result;
    if (found && !tie) {
        result.label = best_label;
        result.method = Method::judge;
        result.matched_span = choices.at(best_label);
    }
    return result;
}

ExtractionResult judge_answer(const std::string& question,
                              const std::map<std::string, std::string>& choices,
                              const std::string& model_output, const JudgeClient& client) {
    if (client.timeout_seconds <= 0) throw ConfigError("judge timeout must be positive");

    std::string host = client.endpoint;
    int port = 80;
    if (auto colon = host.rfind(':'); colon != std::string::npos) {
        port = std::stoi(host.substr(colon + 1));
        host = host.substr(0, colon);
    }

    json body = {{"question", question},
                 {"choices", choices},
                 {"model_output", model_output},
                 {"instruction", client.instruction}};
    const std::string payload = body.dump();

    httplib::Client http(host, port);
    http.set_connection_timeout(std::chrono::milliseconds(static_cast<int>(client.timeout_seconds * 1000)));
    http.set_read_timeout(std::chrono::milliseconds(static_cast<int>(client.timeout_seconds * 1000)));

    httplib::Result res;
    for (int attempt = 0; attempt <= client.retries; ++attempt) {
        res = http.Post("/judge", payload, "application/json");
        if (res && res->status == 200) break;
    }
    if (!res || res->status != 200) {
        throw JudgeUnavailableError("judge endpoint " + client.endpoint + " unreachable");
    }

    json reply;
    try {
        reply = json::parse(res->body);
    } catch (const json::exception&) {
        throw JudgeParseError("judge reply is not valid JSON");
    }
    if (!reply.contains("label") || !reply["label"].is_string()) {
        throw JudgeParseError("judge reply missing label field");
    }

    std::string label_text = reply["label"].get<std::string>();
    ExtractionResult result;
    if (label_text.empty()) return result;  // judge explicitly undecided

    // Replies go through the same pattern grammar, so "The answer: (C)" and a
    // bare "C" both resolve.
    ExtractionResult parsed = extract_answer(label_text);
    if (!parsed.label) throw JudgeParseError("judge reply has no parsable label: " + label_text);
    result.label = parsed.label;
    result.method = Method::judge;
    result.matched_span = label_text;
    return result;
}

JudgeMode judge_mode_from_name(const std::string& name) {
    if (name == "off") return JudgeMode::off;
    if (name == "mock") return JudgeMode::mock;
    if (name == "remote") return JudgeMode::remote;
    throw ConfigError("unknown judge mode: " + name);
}

const char* judge_mode_name(JudgeMode m) {
    switch (m) {
        case JudgeMode::off: return "off";
        case JudgeMode::mock: return "mock";
        case JudgeMode::remote: return "remote";
    }
    return "off";
}

ExtractionResult Extractor::extract(const std::string& question,
                                    const std::map<std::string, std::string>& choices,
                                    const std::string& model_output) const {
    ExtractionResult pattern = extract_answer(model_output);
    if (pattern.label || mode == JudgeMode::off) return pattern;
    if (mode == JudgeMode::mock) return mock_judge(choices, model_output);
    return judge_answer(question, choices, model_output, client);
}

}  // namespace lab::extract
