#include "lab/tokenizer.hpp"

#include <sstream>

namespace lab {

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
    index_.reserve(vocab_.size());
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        index_.emplace(vocab_[i], static_cast<TokenId>(i));
    }
    unk_id_ = index_.at(kUnk);
    think_open_id_ = index_.at(kThinkOpen);
    think_close_id_ = index_.at(kThinkClose);
    eos_id_ = index_.at(kEos);
}

Tokenizer Tokenizer::build(const std::vector<std::string>& extra_words) {
    std::vector<std::string> vocab = {kUnk, kThinkOpen, kThinkClose, kEos};
    auto add = [&vocab](const std::string& w) {
        for (const auto& v : vocab) {
            if (v == w) return;
        }
        vocab.push_back(w);
    };
    for (const auto& w : base_words()) add(w);
    for (const auto& w : extra_words) add(w);
    return Tokenizer(std::move(vocab));
}

TokenSeq Tokenizer::encode(std::string_view text) const {
    TokenSeq out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && text[i] == ' ') ++i;
        std::size_t j = i;
        while (j < text.size() && text[j] != ' ') ++j;
        if (j > i) out.push_back(id_of(text.substr(i, j - i)));
        i = j;
    }
    return out;
}

std::string Tokenizer::decode(const TokenSeq& ids) const { return decode(ids, 0, ids.size()); }

std::string Tokenizer::decode(const TokenSeq& ids, std::size_t begin, std::size_t end) const {
    std::string out;
    for (std::size_t i = begin; i < end && i < ids.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += word(ids[i]);
    }
    return out;
}

TokenId Tokenizer::id_of(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? unk_id_ : it->second;
}

bool Tokenizer::contains(std::string_view word) const {
    return index_.find(std::string(word)) != index_.end();
}

uint64_t Tokenizer::vocab_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& w : vocab_) {
        for (char c : w) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        h ^= 0x1f;
        h *= 0x100000001b3ULL;
    }
    return h;
}

const std::vector<std::string>& base_words() {
    static const std::vector<std::string> words = {
        // punctuation & digits
        ".", "?", ":", "(", ")", "/",
        "0", "1", "2", "3", "4", "5", "6", "7",
        // labels
        "A", "B", "C", "D",
        // question surface
        "Question", "Start", "with", "Then", "add", "subtract", "multiply", "by",
        "What", "is", "the", "result", "modulo", "Choices", "Output", "format",
        "code", "number", "of", "entity",
        // demo / answer surface
        "The", "correct", "answer", "plus", "minus", "times", "has", "so",
        // cue surface
        "reliable", "expert", "suggests",
    };
    return words;
}

}  // namespace lab
