#pragma once

#include "lab/extract/judge.hpp"

#include <map>
#include <string>

namespace lab::train {

// Reward case split: 1.0 on gold, -0.5 when nothing can be extracted (even
// after the judge fallback), -1.0 on a wrong label.
inline double reward(const std::string& answer_text, const std::map<std::string, std::string>& choices,
                     const std::string& gold, const extract::Extractor& extractor = {},
                     const std::string& question = "") {
    extract::ExtractionResult r = extractor.extract(question, choices, answer_text);
    if (!r.label) return -0.5;
    return *r.label == gold ? 1.0 : -1.0;
}

}  // namespace lab::train
