#include "lab/harness/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

using nlohmann::json;

namespace lab::harness {

const std::vector<std::string> kStageOrder = {"forge", "pretrain", "perturb", "probe",
                                              "train", "eval",     "graph",   "report"};

namespace {

train::TrainConfig::UnlearnSet unlearn_set_from_name(const std::string& name) {
    if (name == "batch_gold") return train::TrainConfig::UnlearnSet::batch_gold;
    if (name == "lookup_only") return train::TrainConfig::UnlearnSet::lookup_only;
    if (name == "high_reward_no_cot") return train::TrainConfig::UnlearnSet::high_reward_no_cot;
    throw ConfigError("unknown unlearn_set: " + name);
}

const char* unlearn_set_name(train::TrainConfig::UnlearnSet s) {
    switch (s) {
        case train::TrainConfig::UnlearnSet::batch_gold: return "batch_gold";
        case train::TrainConfig::UnlearnSet::lookup_only: return "lookup_only";
        case train::TrainConfig::UnlearnSet::high_reward_no_cot: return "high_reward_no_cot";
    }
    return "batch_gold";
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    ExperimentConfig c;
    c.seed = j.value("seed", c.seed);
    c.name = j.value("name", c.name);

    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        c.dataset.seed = d.value("seed", c.seed);
        c.dataset.n_keys = d.value("n_keys", c.dataset.n_keys);
        c.dataset.lookup_variants = d.value("lookup_variants", c.dataset.lookup_variants);
        c.dataset.compute_train = d.value("compute_train", c.dataset.compute_train);
        c.dataset.compute_variants = d.value("compute_variants", c.dataset.compute_variants);
        c.dataset.compute_eval = d.value("compute_eval", c.dataset.compute_eval);
        c.dataset.lookup_eval = d.value("lookup_eval", c.dataset.lookup_eval);
        c.dataset.mixed_train = d.value("mixed_train", c.dataset.mixed_train);
        c.dataset.mixed_variants = d.value("mixed_variants", c.dataset.mixed_variants);
        c.dataset.mixed_eval = d.value("mixed_eval", c.dataset.mixed_eval);
        c.dataset.steps_min = d.value("steps_min", c.dataset.steps_min);
        c.dataset.steps_max = d.value("steps_max", c.dataset.steps_max);
    } else {
        c.dataset.seed = c.seed;
    }

    if (j.contains("model")) {
        const json& m = j["model"];
        c.model.layers = m.value("layers", c.model.layers);
        c.model.heads = m.value("heads", c.model.heads);
        c.model.dim = m.value("dim", c.model.dim);
        c.model.context = m.value("context", c.model.context);
        c.model.ffn_mult = m.value("ffn_mult", c.model.ffn_mult);
    }

    if (j.contains("pretrain")) {
        const json& p = j["pretrain"];
        c.pretrain.epochs = p.value("epochs", c.pretrain.epochs);
        c.pretrain.batch = p.value("batch", c.pretrain.batch);
        c.pretrain.lr = p.value("lr", c.pretrain.lr);
    }

    if (j.contains("perturb")) {
        const json& p = j["perturb"];
        c.perturb.items = p.value("items", c.perturb.items);
        c.perturb.cue_template = p.value("cue_template", c.perturb.cue_template);
        if (p.contains("kinds")) c.perturb.kinds = p["kinds"].get<std::vector<std::string>>();
        if (p.contains("poison")) {
            const json& q = p["poison"];
            c.perturb.poison.batch = q.value("batch", c.perturb.poison.batch);
            c.perturb.poison.rank = q.value("rank", c.perturb.poison.rank);
            c.perturb.poison.alpha = q.value("alpha", c.perturb.poison.alpha);
            c.perturb.poison.lr = q.value("lr", c.perturb.poison.lr);
            c.perturb.poison.epochs = q.value("epochs", c.perturb.poison.epochs);
        }
    }

    if (j.contains("probe")) {
        const json& p = j["probe"];
        c.probe.folds = p.value("folds", c.probe.folds);
        c.probe.l2 = p.value("l2", c.probe.l2);
        c.probe.top_k = p.value("top_k", c.probe.top_k);
    }

    if (j.contains("train")) {
        const json& t = j["train"];
        c.train.group_size = t.value("group_size", c.train.group_size);
        c.train.eps_low = t.value("eps_low", c.train.eps_low);
        c.train.eps_high = t.value("eps_high", c.train.eps_high);
        c.train.beta_kl = t.value("beta_kl", c.train.beta_kl);
        c.train.beta_npo = t.value("beta_npo", c.train.beta_npo);
        c.train.mu = t.value("mu", c.train.mu);
        c.train.n_epoch = t.value("n_epoch", c.train.n_epoch);
        c.train.n_step = t.value("n_step", c.train.n_step);
        c.train.lr = t.value("lr", c.train.lr);
        c.train.batch = t.value("batch", c.train.batch);
        c.train.temperature = t.value("temperature", c.train.temperature);
        c.train.max_new_tokens = t.value("max_new_tokens", c.train.max_new_tokens);
        c.train.val_items = t.value("val_items", c.train.val_items);
        c.train.seed = t.value("seed", c.seed);
        if (t.contains("unlearn_set")) {
            c.train.unlearn_set = unlearn_set_from_name(t["unlearn_set"].get<std::string>());
        }
    } else {
        c.train.seed = c.seed;
    }

    if (j.contains("eval")) {
        const json& e = j["eval"];
        c.eval.items = e.value("items", c.eval.items);
        c.eval.perturb_items = e.value("perturb_items", c.eval.perturb_items);
        c.eval.max_new_tokens = e.value("max_new_tokens", c.eval.max_new_tokens);
    }

    if (j.contains("graph")) {
        const json& g = j["graph"];
        c.graph.trajectories = g.value("trajectories", c.graph.trajectories);
        c.graph.clusters = g.value("clusters", c.graph.clusters);
        c.graph.rewirings = g.value("rewirings", c.graph.rewirings);
        c.graph.subsamples = g.value("subsamples", c.graph.subsamples);
        c.graph.fraction = g.value("fraction", c.graph.fraction);
    }

    if (j.contains("judge")) c.judge = extract::judge_mode_from_name(j["judge"].get<std::string>());
    if (j.contains("stages")) c.stages = j["stages"].get<std::vector<std::string>>();
    for (const auto& s : c.stages) {
        if (std::find(kStageOrder.begin(), kStageOrder.end(), s) == kStageOrder.end()) {
            throw ConfigError("unknown stage: " + s);
        }
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json_text(ss.str());
}

std::string config_to_json_text(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["name"] = c.name;
    j["dataset"] = {{"seed", c.dataset.seed},
                    {"n_keys", c.dataset.n_keys},
                    {"lookup_variants", c.dataset.lookup_variants},
                    {"compute_train", c.dataset.compute_train},
                    {"compute_variants", c.dataset.compute_variants},
                    {"compute_eval", c.dataset.compute_eval},
                    {"lookup_eval", c.dataset.lookup_eval},
                    {"mixed_train", c.dataset.mixed_train},
                    {"mixed_variants", c.dataset.mixed_variants},
                    {"mixed_eval", c.dataset.mixed_eval},
                    {"steps_min", c.dataset.steps_min},
                    {"steps_max", c.dataset.steps_max}};
    j["model"] = {{"layers", c.model.layers},
                  {"heads", c.model.heads},
                  {"dim", c.model.dim},
                  {"context", c.model.context},
                  {"ffn_mult", c.model.ffn_mult}};
    j["pretrain"] = {{"epochs", c.pretrain.epochs}, {"batch", c.pretrain.batch}, {"lr", c.pretrain.lr}};
    j["perturb"] = {{"items", c.perturb.items},
                    {"cue_template", c.perturb.cue_template},
                    {"kinds", c.perturb.kinds},
                    {"poison",
                     {{"batch", c.perturb.poison.batch},
                      {"rank", c.perturb.poison.rank},
                      {"alpha", c.perturb.poison.alpha},
                      {"lr", c.perturb.poison.lr},
                      {"epochs", c.perturb.poison.epochs}}}};
    j["probe"] = {{"folds", c.probe.folds}, {"l2", c.probe.l2}, {"top_k", c.probe.top_k}};
    j["train"] = {{"group_size", c.train.group_size},
                  {"eps_low", c.train.eps_low},
                  {"eps_high", c.train.eps_high},
                  {"beta_kl", c.train.beta_kl},
                  {"beta_npo", c.train.beta_npo},
                  {"mu", c.train.mu},
                  {"n_epoch", c.train.n_epoch},
                  {"n_step", c.train.n_step},
                  {"lr", c.train.lr},
                  {"batch", c.train.batch},
                  {"temperature", c.train.temperature},
                  {"max_new_tokens", c.train.max_new_tokens},
                  {"val_items", c.train.val_items},
                  {"seed", c.train.seed},
                  {"unlearn_set", unlearn_set_name(c.train.unlearn_set)}};
    j["eval"] = {{"items", c.eval.items},
                 {"perturb_items", c.eval.perturb_items},
                 {"max_new_tokens", c.eval.max_new_tokens}};
    j["graph"] = {{"trajectories", c.graph.trajectories},
                  {"clusters", c.graph.clusters},
                  {"rewirings", c.graph.rewirings},
                  {"subsamples", c.graph.subsamples},
                  {"fraction", c.graph.fraction}};
    j["judge"] = extract::judge_mode_name(c.judge);
    j["stages"] = c.stages;
    return j.dump(2);
}

std::string config_hash(const ExperimentConfig& config) {
    const std::string text = config_to_json_text(config);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : text) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace lab::harness
