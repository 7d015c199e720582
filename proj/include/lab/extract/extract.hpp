#pragma once

#include "lab/core/types.hpp"

#include <map>
#include <optional>
#include <string>

namespace lab::extract {

enum class Method { pattern, judge, none };

struct ExtractionResult {
    std::optional<std::string> label;  // "A".."D"; absent iff method == none
    Method method = Method::none;
    std::string matched_span;
};

// Pattern-matching pass of A(.): scans for "The correct answer is (L)" and
// close variants ("answer is L", "(L)" as final token, bare trailing label)
// and returns the last match. Deterministic and total.
ExtractionResult extract_answer(const std::string& text);

}  // namespace lab::extract
