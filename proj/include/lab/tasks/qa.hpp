#pragma once

#include "lab/core/types.hpp"
#include "lab/tokenizer.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lab::forge {

enum class Domain { compute, lookup, mixed };

const char* domain_name(Domain d);
Domain domain_from_name(const std::string& name);

enum class OpKind { add, subtract, multiply };

struct ChainStep {
    OpKind op;
    int operand;  // 1..modulus-1
};

// One arithmetic chain over Z_modulus. For mixed items the start value is the
// memorized per-entity number rather than a literal in the question.
struct Chain {
    int start = 0;
    std::vector<ChainStep> steps;
    int modulus = 7;
    std::optional<std::string> start_key;  // set for mixed items

    int evaluate() const;
    std::vector<int> intermediates() const;  // value after each step
};

struct ItemMeta {
    uint64_t seed = 0;
    int steps = 0;                    // compute/mixed
    std::optional<std::string> key;   // lookup/mixed
    std::optional<Chain> chain;       // compute/mixed
};

struct QAItem {
    std::string id;
    Domain domain = Domain::compute;
    std::string question;                       // rendered prompt text
    std::map<std::string, std::string> choices; // label -> answer text, keys A..D
    std::string gold;                           // label
    ItemMeta meta;

    const std::string& gold_text() const { return choices.at(gold); }
};

struct Registry {
    std::map<std::string, std::string> entries;  // key -> two-letter code
    std::map<std::string, int> numbers;          // key -> digit in [0, modulus)
    uint64_t seed = 0;

    bool has(const std::string& key) const { return entries.count(key) != 0; }
};

struct DemoExample {
    std::string item_id;
    std::string full_text;  // question + delimited think segment + answer sentence
};

inline constexpr int kModulus = 7;
inline constexpr const char* kLabels[4] = {"A", "B", "C", "D"};

// `variant` reshuffles distractors and label order while keeping the chain;
// multiple variants of one chain force answer-by-matching over label recall.
QAItem gen_compute_item(uint64_t seed, int steps, int variant = 0);
Registry gen_lookup_registry(int n, uint64_t seed);
QAItem gen_lookup_item(const Registry& registry, const std::string& key, uint64_t seed);
QAItem gen_mixed_item(const Registry& registry, const std::string& key, uint64_t seed, int steps,
                      int variant = 0);

DemoExample render_demo(const QAItem& item);

// Pieces of render_demo that trainers and perturbations reuse.
std::string render_think(const QAItem& item);
std::string render_answer_sentence(const std::string& label);
std::string answer_stem();  // "The correct answer is ("

// Dataset assembly ------------------------------------------------------

struct DatasetConfig {
    uint64_t seed = 1;
    int n_keys = 64;
    int lookup_variants = 6;   // training items (choice shuffles) per key
    int compute_train = 2000;  // unique training chains
    int compute_variants = 1;  // choice shuffles per training chain
    int compute_eval = 200;
    int lookup_eval = 150;
    int mixed_train = 500;
    int mixed_variants = 1;
    int mixed_eval = 150;
    int steps_min = 2;
    int steps_max = 4;
};

struct Dataset {
    DatasetConfig config;
    Registry registry;
    std::vector<QAItem> train;  // all domains; pretraining corpus
    std::vector<QAItem> eval;   // held-out chains / fresh shuffles

    std::vector<const QAItem*> eval_of(Domain d) const;
};

// Pure function of config; train/eval chains are disjoint by construction.
Dataset build_dataset(const DatasetConfig& config);

// Tokenizer over the base surface language plus this dataset's keys/codes.
Tokenizer make_tokenizer(const Registry& registry);

// JSONL round-trip, one object per line mirroring QAItem.
void write_items_jsonl(const std::string& path, const std::vector<QAItem>& items);
std::vector<QAItem> read_items_jsonl(const std::string& path);

void write_manifest(const std::string& path, const Dataset& ds);

}  // namespace lab::forge
