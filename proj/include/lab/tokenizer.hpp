#pragma once

#include "lab/core/types.hpp"

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lab {

// Word-level tokenizer over a closed vocabulary. Rendered text is always
// space-separated, so tokenize/detokenize round-trips exactly. The think
// delimiters are dedicated single tokens, which keeps the think-span parse
// unambiguous.
class Tokenizer {
public:
    static constexpr const char* kUnk = "<unk>";
    static constexpr const char* kThinkOpen = "<think>";
    static constexpr const char* kThinkClose = "</think>";
    static constexpr const char* kEos = "<eos>";

    Tokenizer() = default;
    explicit Tokenizer(std::vector<std::string> vocab);

    static Tokenizer build(const std::vector<std::string>& extra_words);

    TokenSeq encode(std::string_view text) const;
    std::string decode(const TokenSeq& ids) const;
    std::string decode(const TokenSeq& ids, std::size_t begin, std::size_t end) const;

    TokenId id_of(std::string_view word) const;  // kUnk id when absent
    bool contains(std::string_view word) const;
    const std::string& word(TokenId id) const { return vocab_.at(static_cast<std::size_t>(id)); }

    int size() const { return static_cast<int>(vocab_.size()); }
    const std::vector<std::string>& vocab() const { return vocab_; }

    TokenId unk_id() const { return unk_id_; }
    TokenId think_open_id() const { return think_open_id_; }
    TokenId think_close_id() const { return think_close_id_; }
    TokenId eos_id() const { return eos_id_; }

    // FNV-1a over the vocab; stored in checkpoints so a model is never paired
    // with the wrong token table.
    uint64_t vocab_hash() const;

private:
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, TokenId> index_;
    TokenId unk_id_ = 0;
    TokenId think_open_id_ = 0;
    TokenId think_close_id_ = 0;
    TokenId eos_id_ = 0;
};

// The fixed surface language shared by every generated dataset: question and
// demo templates, cue words, labels, digits. Key/code tokens are appended per
// dataset.
const std::vector<std::string>& base_words();

}  // namespace lab
