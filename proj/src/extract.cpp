#include "lab/extract/extract.hpp"

#include <cctype>

namespace lab::extract {

namespace {

bool is_label_char(char c) { return c >= 'A' && c <= 'D'; }

char upper(char c) { return static_cast<char>(std::toupper(static_cast<unsigned char>(c))); }

// Case-insensitive search for "answer is" starting at pos.
std::size_t find_anchor(const std::string& text, std::size_t pos) {
    static const std::string anchor = "answer is";
    for (std::size_t i = pos; i + anchor.size() <= text.size(); ++i) {
        bool ok = true;
        for (std::size_t k = 0; k < anchor.size(); ++k) {
            if (std::tolower(static_cast<unsigned char>(text[i + k])) != anchor[k]) {
                ok = false;
                break;
            }
        }
        if (ok) return i;
    }
    return std::string::npos;
}

// After an anchor, accept "(L)", "( L )", "L", optionally wrapped in emphasis
// characters. Returns label position or npos.
std::size_t label_after_anchor(const std::string& text, std::size_t after, char* label_out) {
    std::size_t i = after;
    auto skip_filler = [&]() {
        while (i < text.size() &&
               (text[i] == ' ' || text[i] == '(' || text[i] == '*' || text[i] == '_' || text[i] == '"' ||
                text[i] == '\'')) {
            ++i;
        }
    };
    skip_filler();
    if (i >= text.size()) return std::string::npos;
    char c = upper(text[i]);
    if (!is_label_char(c)) return std::string::npos;
    // Reject when the candidate is the first letter of a longer word.
    if (i + 1 < text.size()) {
        char next = text[i + 1];
        if (std::isalnum(static_cast<unsigned char>(next))) return std::string::npos;
    }
    *label_out = c;
    return i;
}

}  // namespace

ExtractionResult extract_answer(const std::string& text) {
    std::optional<std::size_t> best_pos;
    char best_label = 0;
    std::size_t best_end = 0;

    // Variant 1: "... answer is (L)" in any casing, last occurrence wins.
    std::size_t pos = 0;
    while (true) {
        std::size_t at = find_anchor(text, pos);
        if (at == std::string::npos) break;
        char label = 0;
        std::size_t lp = label_after_anchor(text, at + 9, &label);
        if (lp != std::string::npos && (!best_pos || lp >= *best_pos)) {
            best_pos = lp;
            best_label = label;
            best_end = lp + 1;
        }
        pos = at + 1;
    }

    // Trailing variants: trim whitespace/punctuation from the right, then look
    // for "(L)" or a bare label as the final token.
    std::size_t end = text.size();
    while (end > 0 && (text[end - 1] == ' ' || text[end - 1] == '\n' || text[end - 1] == '\t' ||
                       text[end - 1] == '.' || text[end - 1] == '*' || text[end - 1] == '_')) {
        --end;
    }
    if (end > 0) {
        std::size_t i = end;
        if (text[i - 1] == ')') {
            std::size_t j = i - 1;
            while (j > 0 && text[j - 1] == ' ') --j;
            if (j > 0 && is_label_char(upper(text[j - 1]))) {
                char label = upper(text[j - 1]);
                std::size_t lp = j - 1;
                std::size_t k = lp;
                while (k > 0 && text[k - 1] == ' ') --k;
                if (k > 0 && text[k - 1] == '(' && (!best_pos || lp >= *best_pos)) {
                    best_pos = lp;
                    best_label = label;
                    best_end = lp + 1;
                }
            }
        } else if (is_label_char(upper(text[i - 1]))) {
            // Bare trailing label must be a standalone word.
            if (i == 1 || text[i - 2] == ' ' || text[i - 2] == '\n') {
                std::size_t lp = i - 1;
                if (!best_pos || lp >= *best_pos) {
                    best_pos = lp;
                    best_label = upper(text[i - 1]);
                    best_end = lp + 1;
                }
            }
        }
    }

    ExtractionResult result;
    if (best_pos) {
        result.label = std::string(1, best_label);
        result.method = Method::pattern;
        std::size_t span_begin = *best_pos >= 24 ? *best_pos - 24 : 0;
        result.matched_span = text.substr(span_begin, best_end - span_begin);
    }
    return result;
}

}  // namespace lab::extract
