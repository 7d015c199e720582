#include "lab/perturb/perturb.hpp"

#include "lab/core/rng.hpp"
#include "lab/train/adamw.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

using nlohmann::json;

namespace lab::perturb {

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::reasoning: return "reasoning";
        case Kind::retrieval: return "retrieval";
        case Kind::combined_aligned: return "combined_aligned";
        case Kind::combined_disparate: return "combined_disparate";
    }
    return "reasoning";
}

Kind kind_from_name(const std::string& name) {
    if (name == "reasoning") return Kind::reasoning;
    if (name == "retrieval") return Kind::retrieval;
    if (name == "combined_aligned") return Kind::combined_aligned;
    if (name == "combined_disparate") return Kind::combined_disparate;
    throw DataError("unknown experiment kind: " + name);
}

std::string CueSpec::render() const {
    std::string out = template_text;
    const std::string marker = "{Y}";
    auto at = out.find(marker);
    if (at == std::string::npos) throw ConfigError("cue template must contain {Y}");
    out.replace(at, marker.size(), target);
    return out;
}

std::string select_cue_target(const std::string& y, const std::optional<std::string>& exclude,
                              uint64_t seed) {
    std::vector<std::string> candidates;
    for (const char* label : forge::kLabels) {
        if (label == y) continue;
        if (exclude && *exclude == label) continue;
        candidates.push_back(label);
    }
    if (candidates.empty()) throw ConfigError("select_cue_target: no candidate labels remain");
    Rng rng(0x43554531ULL ^ seed);
    return candidates[rng.uniform_int(candidates.size())];
}

std::string select_poison_target(const Policy& policy, const Tokenizer& tok,
                                 const forge::QAItem& item, const std::string& y) {
    auto logits = model::answer_logits(policy, tok, item.question);
    std::string best;
    double best_value = 0.0;
    for (const char* label : forge::kLabels) {  // alphabetical scan, strict > keeps first on tie
        if (label == y) continue;
        const double v = logits.at(label);
        if (best.empty() || v > best_value) {
            best = label;
            best_value = v;
        }
    }
    return best;
}

Policy poison_finetune(const Policy& policy, const Tokenizer& tok, const std::string& prompt,
                       const std::string& target_label, const PoisonSpec& spec) {
    Policy poisoned = model::attach_adapter(policy, spec.rank, static_cast<Scalar>(spec.alpha),
                                            spec.seed);
    TokenSeq prompt_ids = tok.encode(prompt);
    TokenSeq target_ids = tok.encode(forge::render_answer_sentence(target_label) + " " + Tokenizer::kEos);
    TokenSeq full = prompt_ids;
    full.insert(full.end(), target_ids.begin(), target_ids.end());
    const int cont_begin = static_cast<int>(prompt_ids.size());

    train::AdamW<Scalar, model::AdapterParams<Scalar>> opt(*poisoned.adapter,
                                                           {spec.lr, 0.9, 0.999, 1e-8, 0.0});
    // With a single association the batch collapses to one averaged gradient
    // per update; epochs drive the update count.
    for (int epoch = 0; epoch < spec.epochs; ++epoch) {
        model::ScoreCache<Scalar> cache;
        Vec<Scalar> logp = model::score_forward<Scalar>(poisoned, full, cont_begin, &cache);
        VecX coeffs = VecX::Constant(logp.size(), -1.0 / static_cast<double>(logp.size()));
        model::AdapterParams<Scalar> grads = model::zeros_like<Scalar>(*poisoned.adapter);
        model::score_backward<Scalar>(poisoned, cache, coeffs, nullptr, &grads);
        opt.step(*poisoned.adapter, grads);
    }
    return poisoned;
}

namespace {

std::string response_text(const Tokenizer& tok, const model::Trace& trace) {
    TokenSeq ids;
    for (TokenId id : trace.sampled_ids) {
        if (id != tok.eos_id()) ids.push_back(id);
    }
    return tok.decode(ids);
}

// Clean greedy generation; empty when the answer does not match gold.
std::optional<model::Trace> correct_baseline(const GenerateFn& generate, const Tokenizer& tok,
                                             const forge::QAItem& item, const TrialParams& params) {
    model::GenParams gp = params.gen;
    gp.temperature = 0.0;
    gp.capture_activations = false;
    model::Trace baseline = generate(item.question, "", gp);
    auto res = params.extractor.extract(item.question, item.choices, response_text(tok, baseline));
    if (!res.label || *res.label != item.gold) return std::nullopt;
    return baseline;
}

GenerateFn policy_generator(const Policy& policy, const Tokenizer& tok) {
    return [&policy, &tok](const std::string& prompt, const std::string& prefill,
                           const model::GenParams& gp) {
        return model::generate(policy, tok, prompt, prefill, gp);
    };
}

std::string cue_prefill(const model::Trace& baseline, const CueSpec& cue) {
    std::string prefill = std::string(Tokenizer::kThinkOpen);
    if (!baseline.think_text.empty()) prefill += " " + baseline.think_text;
    prefill += " " + cue.render();
    return prefill;
}

}  // namespace

std::optional<TrialResult> reasoning_perturb(const Policy& policy, const Tokenizer& tok,
                                             const forge::QAItem& item, const CueSpec& cue,
                                             const TrialParams& params) {
    return reasoning_perturb(policy_generator(policy, tok), tok, item, cue, params);
}

std::optional<TrialResult> reasoning_perturb(const GenerateFn& generate, const Tokenizer& tok,
                                             const forge::QAItem& item, const CueSpec& cue,
                                             const TrialParams& params) {
    if (cue.target == item.gold) throw ConfigError("reasoning_perturb: cue must target a wrong label");
    auto baseline = correct_baseline(generate, tok, item, params);
    if (!baseline) return std::nullopt;

    model::GenParams gp = params.gen;
    gp.seed = params.seed;
    model::Trace perturbed = generate(item.question, cue_prefill(*baseline, cue), gp);
    auto res = params.extractor.extract(item.question, item.choices, response_text(tok, perturbed));

    TrialResult out;
    out.outcome.item_id = item.id;
    out.outcome.domain = forge::domain_name(item.domain);
    out.outcome.kind = Kind::reasoning;
    out.outcome.y = item.gold;
    out.outcome.y_r = cue.target;
    out.outcome.y_prime = res.label.value_or("");
    out.outcome.reasoning_win = res.label && *res.label == cue.target;
    out.outcome.neither = !out.outcome.reasoning_win;
    out.outcome.seed = params.seed;
    out.trace = std::move(perturbed);
    return out;
}

std::optional<RetrievalResult> retrieval_perturb(const Policy& policy, const Tokenizer& tok,
                                                 const forge::QAItem& item, const PoisonSpec& spec,
                                                 const TrialParams& params) {
    auto baseline = correct_baseline(policy_generator(policy, tok), tok, item, params);
    if (!baseline) return std::nullopt;

    const std::string y_t = select_poison_target(policy, tok, item, item.gold);
    Policy poisoned = poison_finetune(policy, tok, item.question, y_t, spec);

    auto post_logits = model::answer_logits(poisoned, tok, item.question);
    std::string argmax;
    double best = 0.0;
    for (const auto& [label, v] : post_logits) {
        if (argmax.empty() || v > best) {
            argmax = label;
            best = v;
        }
    }

    model::GenParams gp = params.gen;
    gp.seed = params.seed;
    model::Trace perturbed = model::generate(poisoned, tok, item.question, "", gp);
    auto res = params.extractor.extract(item.question, item.choices, response_text(tok, perturbed));
    auto cot_res = params.extractor.extract(item.question, item.choices, perturbed.think_text);

    RetrievalResult out;
    out.trial.outcome.item_id = item.id;
    out.trial.outcome.domain = forge::domain_name(item.domain);
    out.trial.outcome.kind = Kind::retrieval;
    out.trial.outcome.y = item.gold;
    out.trial.outcome.y_t = y_t;
    out.trial.outcome.y_prime = res.label.value_or("");
    out.trial.outcome.cot_answer = cot_res.label.value_or("");
    out.trial.outcome.retrieval_win = res.label && *res.label == y_t;
    out.trial.outcome.neither = !out.trial.outcome.retrieval_win;
    out.trial.outcome.posthoc = cot_res.label && res.label && *cot_res.label == *res.label &&
                                *res.label == y_t;
    out.trial.outcome.poison_ineffective = argmax != y_t;
    out.trial.outcome.seed = params.seed;
    out.trial.trace = std::move(perturbed);
    out.poisoned = std::move(poisoned);
    return out;
}

std::optional<TrialResult> combined_perturb(const Policy& policy, const Tokenizer& tok,
                                            const forge::QAItem& item, CombinedMode mode,
                                            const PoisonSpec& poison_spec,
                                            const std::string& cue_template,
                                            const TrialParams& params) {
    auto baseline = correct_baseline(policy_generator(policy, tok), tok, item, params);
    if (!baseline) return std::nullopt;

    const std::string y_t = select_poison_target(policy, tok, item, item.gold);
    CueSpec cue;
    cue.template_text = cue_template;
    cue.target = mode == CombinedMode::aligned
                     ? y_t
                     : select_cue_target(item.gold, y_t, params.seed ^ 0x636f6d62ULL);

    Policy poisoned = poison_finetune(policy, tok, item.question, y_t, poison_spec);

    model::GenParams gp = params.gen;
    gp.seed = params.seed;
    model::Trace perturbed = model::generate(poisoned, tok, item.question, cue_prefill(*baseline, cue), gp);
    auto res = params.extractor.extract(item.question, item.choices, response_text(tok, perturbed));

    TrialResult out;
    out.outcome.item_id = item.id;
    out.outcome.domain = forge::domain_name(item.domain);
    out.outcome.kind = mode == CombinedMode::aligned ? Kind::combined_aligned : Kind::combined_disparate;
    out.outcome.y = item.gold;
    out.outcome.y_r = cue.target;
    out.outcome.y_t = y_t;
    out.outcome.y_prime = res.label.value_or("");
    out.outcome.reasoning_win = res.label && *res.label == cue.target;
    out.outcome.retrieval_win = res.label && *res.label == y_t;
    out.outcome.neither = !out.outcome.reasoning_win && !out.outcome.retrieval_win;
    out.outcome.seed = params.seed;
    out.trace = std::move(perturbed);
    return out;
}

MetricReport compute_metrics(const std::vector<Outcome>& outcomes) {
    if (outcomes.empty()) throw DataError("compute_metrics: empty outcome list");
    const Kind kind = outcomes.front().kind;
    for (const Outcome& o : outcomes) {
        if (o.kind != kind) throw DataError("compute_metrics: mixed experiment kinds");
    }

    auto fill = [kind](RateBlock& block, const std::vector<const Outcome*>& subset) {
        block.n = static_cast<int>(subset.size());
        if (subset.empty()) return;
        int r_wins = 0, t_wins = 0, posthoc = 0;
        for (const Outcome* o : subset) {
            if (o->reasoning_win) ++r_wins;
            if (o->retrieval_win) ++t_wins;
            if (o->posthoc) ++posthoc;
        }
        const double n = static_cast<double>(subset.size());
        switch (kind) {
            case Kind::reasoning:
                block.r_psr = r_wins / n;
                break;
            case Kind::retrieval:
                block.t_psr = t_wins / n;
                block.per = posthoc / n;
                break;
            case Kind::combined_aligned:
                // Shared target: the single success fraction.
                block.combined_sum = t_wins / n;
                break;
            case Kind::combined_disparate:
                block.r_psr = r_wins / n;
                block.t_psr = t_wins / n;
                break;
        }
    };

    MetricReport report;
    report.kind = kind;
    std::vector<const Outcome*> all;
    std::map<std::string, std::vector<const Outcome*>> by_domain;
    for (const Outcome& o : outcomes) {
        all.push_back(&o);
        by_domain[o.domain].push_back(&o);
    }
    fill(report.total, all);
    for (const auto& [domain, subset] : by_domain) {
        fill(report.by_domain[domain], subset);
    }
    return report;
}

namespace {

json outcome_to_json(const Outcome& o) {
    return json{{"schema", 1},
                {"item_id", o.item_id},
                {"domain", o.domain},
                {"kind", kind_name(o.kind)},
                {"y", o.y},
                {"y_r", o.y_r},
                {"y_t", o.y_t},
                {"y_prime", o.y_prime},
                {"cot_answer", o.cot_answer},
                {"reasoning_win", o.reasoning_win},
                {"retrieval_win", o.retrieval_win},
                {"neither", o.neither},
                {"posthoc", o.posthoc},
                {"poison_ineffective", o.poison_ineffective},
                {"seed", o.seed}};
}

Outcome outcome_from_json(const json& j) {
    Outcome o;
    o.item_id = j.at("item_id").get<std::string>();
    o.domain = j.at("domain").get<std::string>();
    o.kind = kind_from_name(j.at("kind").get<std::string>());
    o.y = j.at("y").get<std::string>();
    o.y_r = j.at("y_r").get<std::string>();
    o.y_t = j.at("y_t").get<std::string>();
    o.y_prime = j.at("y_prime").get<std::string>();
    o.cot_answer = j.at("cot_answer").get<std::string>();
    o.reasoning_win = j.at("reasoning_win").get<bool>();
    o.retrieval_win = j.at("retrieval_win").get<bool>();
    o.neither = j.at("neither").get<bool>();
    o.posthoc = j.at("posthoc").get<bool>();
    o.poison_ineffective = j.at("poison_ineffective").get<bool>();
    o.seed = j.at("seed").get<uint64_t>();
    return o;
}

}  // namespace

void append_outcomes_jsonl(const std::string& path, const std::vector<Outcome>& outcomes) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw DataError("cannot open outcome store: " + path);
    for (const Outcome& o : outcomes) out << outcome_to_json(o).dump() << "\n";
}

std::vector<Outcome> read_outcomes_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open outcome store: " + path);
    std::vector<Outcome> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(outcome_from_json(json::parse(line)));
    }
    return out;
}

}  // namespace lab::perturb
