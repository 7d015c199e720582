#include "lab/tasks/qa.hpp"

#include "lab/core/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

using nlohmann::json;

namespace lab::forge {

const char* domain_name(Domain d) {
    switch (d) {
        case Domain::compute: return "compute";
        case Domain::lookup: return "lookup";
        case Domain::mixed: return "mixed";
    }
    return "compute";
}

Domain domain_from_name(const std::string& name) {
    if (name == "compute") return Domain::compute;
    if (name == "lookup") return Domain::lookup;
    if (name == "mixed") return Domain::mixed;
    throw DataError("unknown domain: " + name);
}

int Chain::evaluate() const {
    int v = start % modulus;
    for (const auto& s : steps) {
        switch (s.op) {
            case OpKind::add: v = (v + s.operand) % modulus; break;
            case OpKind::subtract: v = ((v - s.operand) % modulus + modulus) % modulus; break;
            case OpKind::multiply: v = (v * s.operand) % modulus; break;
        }
    }
    return v;
}

std::vector<int> Chain::intermediates() const {
    std::vector<int> out;
    int v = start % modulus;
    for (const auto& s : steps) {
        switch (s.op) {
            case OpKind::add: v = (v + s.operand) % modulus; break;
            case OpKind::subtract: v = ((v - s.operand) % modulus + modulus) % modulus; break;
            case OpKind::multiply: v = (v * s.operand) % modulus; break;
        }
        out.push_back(v);
    }
    return out;
}

namespace {

const char* op_question_word(OpKind op) {
    switch (op) {
        case OpKind::add: return "add";
        case OpKind::subtract: return "subtract";
        case OpKind::multiply: return "multiply by";
    }
    return "add";
}

const char* op_think_word(OpKind op) {
    switch (op) {
        case OpKind::add: return "plus";
        case OpKind::subtract: return "minus";
        case OpKind::multiply: return "times";
    }
    return "plus";
}

Chain sample_chain(Rng& rng, int steps) {
    Chain c;
    c.modulus = kModulus;
    c.start = rng.uniform_index(kModulus);
    c.steps.reserve(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        ChainStep s;
        // Additive steps dominate; multiplication stays in the mix.
        int k = rng.uniform_index(5);
        s.op = k <= 1 ? OpKind::add : (k <= 3 ? OpKind::subtract : OpKind::multiply);
        s.operand = 1 + rng.uniform_index(kModulus - 1);
        c.steps.push_back(s);
    }
    return c;
}

std::string chain_question(const Chain& c) {
    std::ostringstream q;
    q << "Question :";
    if (c.start_key) {
        q << " Start with the number of entity " << *c.start_key << " .";
    } else {
        q << " Start with " << c.start << " .";
    }
    for (const auto& s : c.steps) {
        q << " Then " << op_question_word(s.op) << " " << s.operand << " .";
    }
    q << " What is the result modulo " << c.modulus << " ?";
    return q.str();
}

std::string choices_block(const std::array<std::string, 4>& texts) {
    std::ostringstream out;
    out << " Choices :";
    for (int i = 0; i < 4; ++i) out << " ( " << kLabels[i] << " ) " << texts[static_cast<std::size_t>(i)];
    out << " . Output format : The correct answer is ( A / B / C / D ) .";
    return out.str();
}

// Shuffle gold + distractors onto labels, return (choices map, gold label).
std::pair<std::map<std::string, std::string>, std::string> assign_labels(
    Rng& rng, const std::string& gold_text, const std::array<std::string, 3>& distractors) {
    std::vector<std::string> texts = {gold_text, distractors[0], distractors[1], distractors[2]};
    rng.shuffle(texts);
    std::map<std::string, std::string> choices;
    std::string gold_label;
    for (int i = 0; i < 4; ++i) {
        choices[kLabels[i]] = texts[static_cast<std::size_t>(i)];
        if (texts[static_cast<std::size_t>(i)] == gold_text) gold_label = kLabels[i];
    }
    return {choices, gold_label};
}

std::array<std::string, 3> residue_distractors(Rng& rng, int gold) {
    std::vector<int> pool;
    for (int r = 0; r < kModulus; ++r) {
        if (r != gold) pool.push_back(r);
    }
    rng.shuffle(pool);
    return {std::to_string(pool[0]), std::to_string(pool[1]), std::to_string(pool[2])};
}

QAItem finish_chain_item(const std::string& id, Domain domain, Chain chain, uint64_t seed,
                         Rng& rng, int variant) {
    if (variant > 0) {
        // Fresh distractor/label stream per variant, same chain.
        rng = Rng(rng.fork(0x56a5u + static_cast<uint64_t>(variant)));
    }
    QAItem item;
    item.id = id;
    item.domain = domain;
    item.question = chain_question(chain);
    int gold_value = chain.evaluate();
    auto distractors = residue_distractors(rng, gold_value);
    auto [choices, gold_label] = assign_labels(rng, std::to_string(gold_value), distractors);
    std::array<std::string, 4> texts;
    for (int i = 0; i < 4; ++i) texts[static_cast<std::size_t>(i)] = choices.at(kLabels[i]);
    item.question += choices_block(texts);
    item.choices = std::move(choices);
    item.gold = gold_label;
    item.meta.seed = seed;
    item.meta.steps = static_cast<int>(chain.steps.size());
    item.meta.key = chain.start_key;
    item.meta.chain = std::move(chain);
    return item;
}

}  // namespace

QAItem gen_compute_item(uint64_t seed, int steps, int variant) {
    if (steps < 2) throw ConfigError("gen_compute_item: steps must be >= 2");
    Rng rng(0x434f4d50ULL ^ (seed * 0x9e3779b97f4a7c15ULL + 0x243f6a8885a308d3ULL));
    Chain chain = sample_chain(rng, steps);
    std::string id = "c" + std::to_string(seed);
    if (variant > 0) id += "v" + std::to_string(variant);
    return finish_chain_item(id, Domain::compute, std::move(chain), seed, rng, variant);
}

Registry gen_lookup_registry(int n, uint64_t seed) {
    if (n <= 0) throw ConfigError("gen_lookup_registry: n must be >= 1");
    if (n > 26 * 26) throw ConfigError("gen_lookup_registry: code space holds at most 676 entries");
    Rng rng(0x52454731ULL ^ (seed * 0x9e3779b97f4a7c15ULL + 0x13198a2e03707344ULL));
    Registry reg;
    reg.seed = seed;
    std::set<std::string> used;
    for (int i = 0; i < n; ++i) {
        std::string code;
        do {
            code = std::string(1, static_cast<char>('A' + rng.uniform_index(26))) +
                   static_cast<char>('A' + rng.uniform_index(26));
        } while (used.count(code) != 0);
        used.insert(code);
        char buf[8];
        std::snprintf(buf, sizeof(buf), "k%03d", i);
        reg.entries[buf] = code;
        reg.numbers[buf] = rng.uniform_index(kModulus);
    }
    return reg;
}

QAItem gen_lookup_item(const Registry& registry, const std::string& key, uint64_t seed) {
    auto it = registry.entries.find(key);
    if (it == registry.entries.end()) throw DataError("gen_lookup_item: unknown key " + key);

    std::vector<std::string> others;
    for (const auto& [k, v] : registry.entries) {
        if (v != it->second) others.push_back(v);
    }
    std::sort(others.begin(), others.end());
    others.erase(std::unique(others.begin(), others.end()), others.end());
    if (others.size() < 3) throw ConfigError("gen_lookup_item: registry too small for distractors");

    Rng rng(0x4c4f4f4bULL ^ (seed * 0x9e3779b97f4a7c15ULL + 0xa4093822299f31d0ULL));
    rng.shuffle(others);
    std::array<std::string, 3> distractors = {others[0], others[1], others[2]};
    auto [choices, gold_label] = assign_labels(rng, it->second, distractors);

    QAItem item;
    item.id = "l" + key + "_" + std::to_string(seed);
    item.domain = Domain::lookup;
    std::array<std::string, 4> texts;
    for (int i = 0; i < 4; ++i) texts[static_cast<std::size_t>(i)] = choices.at(kLabels[i]);
    item.question = "Question : What is the code of entity " + key + " ?" + choices_block(texts);
    item.choices = std::move(choices);
    item.gold = gold_label;
    item.meta.seed = seed;
    item.meta.key = key;
    return item;
}

QAItem gen_mixed_item(const Registry& registry, const std::string& key, uint64_t seed, int steps,
                      int variant) {
    if (steps < 2) throw ConfigError("gen_mixed_item: steps must be >= 2");
    auto it = registry.numbers.find(key);
    if (it == registry.numbers.end()) throw DataError("gen_mixed_item: unknown key " + key);
    Rng rng(0x4d495845ULL ^ (seed * 0x9e3779b97f4a7c15ULL + 0x082efa98ec4e6c89ULL));
    Chain chain = sample_chain(rng, steps);
    chain.start = it->second;
    chain.start_key = key;
    std::string id = "m" + std::to_string(seed);
    if (variant > 0) id += "v" + std::to_string(variant);
    return finish_chain_item(id, Domain::mixed, std::move(chain), seed, rng, variant);
}

std::string render_think(const QAItem& item) {
    // Thinks conclude by naming the matched label, so the final answer
    // sentence is a copy of the chain of thought's own conclusion.
    std::ostringstream think;
    if (item.domain == Domain::lookup) {
        think << "entity " << *item.meta.key << " has code " << item.gold_text() << " . "
              << item.gold_text() << " is ( " << item.gold << " ) so the answer is ( " << item.gold
              << " ) .";
        return think.str();
    }
    const Chain& chain = *item.meta.chain;
    bool first = true;
    if (chain.start_key) {
        think << "entity " << *chain.start_key << " has number " << chain.start << " .";
        first = false;
    }
    int v = chain.start % chain.modulus;
    auto values = chain.intermediates();
    for (std::size_t i = 0; i < chain.steps.size(); ++i) {
        if (!first) think << " ";
        think << v << " " << op_think_word(chain.steps[i].op) << " " << chain.steps[i].operand
              << " is " << values[i] << " .";
        v = values[i];
        first = false;
    }
    think << " " << v << " is ( " << item.gold << " ) so the answer is ( " << item.gold << " ) .";
    return think.str();
}

std::string render_answer_sentence(const std::string& label) {
    return "The correct answer is ( " + label + " ) .";
}

std::string answer_stem() { return "The correct answer is ("; }

DemoExample render_demo(const QAItem& item) {
    DemoExample demo;
    demo.item_id = item.id;
    demo.full_text = item.question + " " + Tokenizer::kThinkOpen + " " + render_think(item) + " " +
                     Tokenizer::kThinkClose + " " + render_answer_sentence(item.gold) + " " +
                     Tokenizer::kEos;
    return demo;
}

// Dataset assembly ------------------------------------------------------

namespace {

std::string chain_signature(const Chain& c) {
    std::ostringstream sig;
    sig << (c.start_key ? *c.start_key : std::to_string(c.start));
    for (const auto& s : c.steps) sig << "|" << static_cast<int>(s.op) << ":" << s.operand;
    return sig.str();
}

}  // namespace

std::vector<const QAItem*> Dataset::eval_of(Domain d) const {
    std::vector<const QAItem*> out;
    for (const auto& item : eval) {
        if (item.domain == d) out.push_back(&item);
    }
    return out;
}

Dataset build_dataset(const DatasetConfig& config) {
    if (config.n_keys < 4) throw ConfigError("build_dataset: need at least 4 keys for distractors");
    if (config.steps_min < 2 || config.steps_max < config.steps_min) {
        throw ConfigError("build_dataset: invalid step range");
    }

    Dataset ds;
    ds.config = config;
    ds.registry = gen_lookup_registry(config.n_keys, config.seed);

    Rng rng(0x44415441ULL ^ config.seed);
    std::set<std::string> seen_chains;
    int span = config.steps_max - config.steps_min + 1;

    auto emit_chain_items = [&](Domain domain, int count, int variants, std::vector<QAItem>& sink) {
        int made = 0;
        uint64_t sub = domain == Domain::compute ? 0u : 1u;
        while (made < count) {
            uint64_t item_seed = rng.fork(sub * 1000003u + static_cast<uint64_t>(made));
            int steps = config.steps_min + static_cast<int>(item_seed % static_cast<uint64_t>(span));
            QAItem item;
            if (domain == Domain::compute) {
                item = gen_compute_item(item_seed, steps);
            } else {
                std::vector<std::string> keys;
                for (const auto& [k, v] : ds.registry.entries) keys.push_back(k);
                item = gen_mixed_item(ds.registry, keys[item_seed % keys.size()], item_seed, steps);
            }
            std::string sig = chain_signature(*item.meta.chain);
            if (!seen_chains.insert(sig).second) continue;  // resample duplicates
            for (int v = 1; v < variants; ++v) {
                if (domain == Domain::compute) {
                    sink.push_back(gen_compute_item(item_seed, steps, v));
                } else {
                    sink.push_back(gen_mixed_item(ds.registry, *item.meta.key, item_seed, steps, v));
                }
            }
            sink.push_back(std::move(item));
            ++made;
        }
    };

    emit_chain_items(Domain::compute, config.compute_train, config.compute_variants, ds.train);
    emit_chain_items(Domain::compute, config.compute_eval, 1, ds.eval);

    std::vector<std::string> keys;
    for (const auto& [k, v] : ds.registry.entries) keys.push_back(k);
    for (int variant = 0; variant < config.lookup_variants; ++variant) {
        for (const auto& key : keys) {
            ds.train.push_back(gen_lookup_item(ds.registry, key, rng.fork(0x10000u + static_cast<uint64_t>(variant))));
        }
    }
    for (int i = 0; i < config.lookup_eval; ++i) {
        const std::string& key = keys[static_cast<std::size_t>(i) % keys.size()];
        ds.eval.push_back(gen_lookup_item(ds.registry, key, rng.fork(0x20000u + static_cast<uint64_t>(i))));
    }

    emit_chain_items(Domain::mixed, config.mixed_train, config.mixed_variants, ds.train);
    emit_chain_items(Domain::mixed, config.mixed_eval, 1, ds.eval);

    return ds;
}

Tokenizer make_tokenizer(const Registry& registry) {
    std::vector<std::string> extra;
    for (const auto& [key, code] : registry.entries) {
        extra.push_back(key);
        extra.push_back(code);
    }
    return Tokenizer::build(extra);
}

// JSON serialization -----------------------------------------------------

namespace {

json chain_to_json(const Chain& c) {
    json steps = json::array();
    for (const auto& s : c.steps) {
        const char* op = s.op == OpKind::add ? "add" : (s.op == OpKind::subtract ? "subtract" : "multiply");
        steps.push_back({{"op", op}, {"operand", s.operand}});
    }
    json j = {{"start", c.start}, {"modulus", c.modulus}, {"steps", steps}};
    if (c.start_key) j["start_key"] = *c.start_key;
    return j;
}

Chain chain_from_json(const json& j) {
    Chain c;
    c.start = j.at("start").get<int>();
    c.modulus = j.at("modulus").get<int>();
    for (const auto& s : j.at("steps")) {
        std::string op = s.at("op").get<std::string>();
        ChainStep step;
        step.op = op == "add" ? OpKind::add : (op == "subtract" ? OpKind::subtract : OpKind::multiply);
        step.operand = s.at("operand").get<int>();
        c.steps.push_back(step);
    }
    if (j.contains("start_key")) c.start_key = j.at("start_key").get<std::string>();
    return c;
}

json item_to_json(const QAItem& item) {
    json j;
    j["id"] = item.id;
    j["domain"] = domain_name(item.domain);
    j["question"] = item.question;
    j["choices"] = item.choices;
    j["gold"] = item.gold;
    json meta = {{"seed", item.meta.seed}, {"steps", item.meta.steps}};
    if (item.meta.key) meta["key"] = *item.meta.key;
    if (item.meta.chain) meta["chain"] = chain_to_json(*item.meta.chain);
    j["meta"] = meta;
    return j;
}

QAItem item_from_json(const json& j) {
    QAItem item;
    item.id = j.at("id").get<std::string>();
    item.domain = domain_from_name(j.at("domain").get<std::string>());
    item.question = j.at("question").get<std::string>();
    item.choices = j.at("choices").get<std::map<std::string, std::string>>();
    item.gold = j.at("gold").get<std::string>();
    const json& meta = j.at("meta");
    item.meta.seed = meta.at("seed").get<uint64_t>();
    item.meta.steps = meta.at("steps").get<int>();
    if (meta.contains("key")) item.meta.key = meta.at("key").get<std::string>();
    if (meta.contains("chain")) item.meta.chain = chain_from_json(meta.at("chain"));
    return item;
}

}  // namespace

void write_items_jsonl(const std::string& path, const std::vector<QAItem>& items) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    for (const auto& item : items) out << item_to_json(item).dump() << "\n";
}

std::vector<QAItem> read_items_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<QAItem> items;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        items.push_back(item_from_json(json::parse(line)));
    }
    return items;
}

void write_manifest(const std::string& path, const Dataset& ds) {
    json counts = json::object();
    for (const auto& item : ds.train) counts[std::string("train_") + domain_name(item.domain)] = 0;
    for (const auto& item : ds.eval) counts[std::string("eval_") + domain_name(item.domain)] = 0;
    for (const auto& item : ds.train) counts[std::string("train_") + domain_name(item.domain)] = counts[std::string("train_") + domain_name(item.domain)].get<int>() + 1;
    for (const auto& item : ds.eval) counts[std::string("eval_") + domain_name(item.domain)] = counts[std::string("eval_") + domain_name(item.domain)].get<int>() + 1;

    json j;
    j["seed"] = ds.config.seed;
    j["modulus"] = kModulus;
    j["n_keys"] = ds.config.n_keys;
    j["counts"] = counts;
    j["registry"] = {{"entries", ds.registry.entries}, {"numbers", ds.registry.numbers}, {"seed", ds.registry.seed}};

    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

}  // namespace lab::forge
