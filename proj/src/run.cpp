#include "lab/harness/run.hpp"

#include "lab/graph/reasoning_graph.hpp"
#include "lab/probe/probe.hpp"
#include "lab/train/farl.hpp"

#include <nlohmann/json.hpp>

#include "lab/harness/report.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

using nlohmann::json;
namespace fs = std::filesystem;

namespace lab::harness {

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

std::string rollout_text(const Tokenizer& tok, const model::Trace& trace) {
    TokenSeq ids;
    for (TokenId id : trace.sampled_ids) {
        if (id != tok.eos_id()) ids.push_back(id);
    }
    return tok.decode(ids);
}

// Round-robin across domains so every experiment sees each family.
std::vector<const forge::QAItem*> spread_items(const forge::Dataset& ds, int count) {
    std::vector<std::vector<const forge::QAItem*>> buckets = {
        ds.eval_of(forge::Domain::compute), ds.eval_of(forge::Domain::lookup),
        ds.eval_of(forge::Domain::mixed)};
    std::vector<const forge::QAItem*> out;
    std::size_t at = 0;
    while (static_cast<int>(out.size()) < count) {
        bool any = false;
        for (auto& bucket : buckets) {
            if (at < bucket.size()) {
                out.push_back(bucket[at]);
                any = true;
                if (static_cast<int>(out.size()) == count) break;
            }
        }
        if (!any) break;
        ++at;
    }
    return out;
}

}  // namespace

Run::Run(fs::path dir, const ExperimentConfig& config) : dir_(std::move(dir)), config_(config) {
    fs::create_directories(dir_);
    const std::string hash = config_hash(config_);
    const fs::path record_path = dir_ / "run.json";
    if (fs::exists(record_path)) {
        json j = json::parse(read_text(record_path));
        record_.run_id = j.at("run_id").get<std::string>();
        record_.config_hash = j.at("config_hash").get<std::string>();
        record_.source_rev = j.value("source_rev", "unknown");
        for (const auto& [name, js] : j.at("stages").items()) {
            StageStatus st;
            st.status = js.at("status").get<std::string>();
            st.seconds = js.value("seconds", 0.0);
            st.error = js.value("error", "");
            st.artifacts = js.value("artifacts", std::vector<std::string>{});
            record_.stages[name] = st;
        }
        if (record_.config_hash != hash) {
            throw ConfigError("run directory " + dir_.string() +
                              " was created with a different config (hash mismatch); refusing to resume");
        }
    } else {
        record_.run_id = config_.name + "-" + hash.substr(0, 8);
        record_.config_hash = hash;
#ifdef LAB_SOURCE_REV
        record_.source_rev = LAB_SOURCE_REV;
#else
        record_.source_rev = "unknown";
#endif
        write_text(dir_ / "config.json", config_to_json_text(config_));
        save_record();
    }
}

void Run::save_record() const {
    json stages = json::object();
    for (const auto& [name, st] : record_.stages) {
        stages[name] = {{"status", st.status},
                        {"seconds", st.seconds},
                        {"error", st.error},
                        {"artifacts", st.artifacts}};
    }
    json j = {{"run_id", record_.run_id},
              {"config_hash", record_.config_hash},
              {"source_rev", record_.source_rev},
              {"stages", stages}};
    write_text(dir_ / "run.json", j.dump(2));
}

bool Run::stage_done(const std::string& stage) const {
    auto it = record_.stages.find(stage);
    return it != record_.stages.end() && it->second.status == "done";
}

void Run::mark_artifact(const std::string& stage, const std::string& rel_path) {
    record_.stages[stage].artifacts.push_back(rel_path);
}

void Run::run_stage(const std::string& name, const std::function<void()>& body) {
    if (stage_done(name)) return;
    const auto start = std::chrono::steady_clock::now();
    try {
        body();
    } catch (const std::exception& e) {
        StageStatus& st = record_.stages[name];
        st.status = "failed";
        st.error = e.what();
        st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        save_record();
        throw StageFailure("stage " + name + " failed: " + e.what());
    }
    StageStatus& st = record_.stages[name];
    st.status = "done";
    st.error.clear();
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    save_record();
}

void Run::execute(const std::vector<std::string>& stages) {
    std::vector<std::string> wanted = stages.empty() ? config_.stages : stages;
    if (wanted.empty()) wanted = kStageOrder;
    for (const std::string& name : kStageOrder) {
        if (std::find(wanted.begin(), wanted.end(), name) == wanted.end()) continue;
        if (name == "forge") run_stage(name, [this] { stage_forge(); });
        else if (name == "pretrain") run_stage(name, [this] { stage_pretrain(); });
        else if (name == "perturb") run_stage(name, [this] { stage_perturb(config_.perturb.kinds); });
        else if (name == "probe") run_stage(name, [this] { stage_probe(config_.perturb.kinds); });
        else if (name == "train") run_stage(name, [this] { stage_train({"sft", "grpo", "farl"}); });
        else if (name == "eval") run_stage(name, [this] { stage_eval(); });
        else if (name == "graph") run_stage(name, [this] { stage_graph(); });
        else if (name == "report") run_stage(name, [this] { stage_report(); });
    }
}

// -- artifact accessors ----------------------------------------------------

forge::Dataset Run::load_dataset() const {
    const fs::path base = dir_ / "dataset";
    if (!fs::exists(base / "manifest.json")) {
        throw StageFailure("dependency missing: stage forge has not produced dataset/manifest.json");
    }
    forge::Dataset ds;
    ds.config = config_.dataset;
    ds.train = forge::read_items_jsonl((base / "train.jsonl").string());
    ds.eval = forge::read_items_jsonl((base / "eval.jsonl").string());
    json manifest = json::parse(read_text(base / "manifest.json"));
    ds.registry.entries = manifest.at("registry").at("entries").get<std::map<std::string, std::string>>();
    ds.registry.numbers = manifest.at("registry").at("numbers").get<std::map<std::string, int>>();
    ds.registry.seed = manifest.at("registry").at("seed").get<uint64_t>();
    return ds;
}

Tokenizer Run::load_tokenizer() const {
    const fs::path path = dir_ / "dataset" / "vocab.json";
    if (!fs::exists(path)) {
        throw StageFailure("dependency missing: stage forge has not produced dataset/vocab.json");
    }
    json j = json::parse(read_text(path));
    return Tokenizer(j.at("vocab").get<std::vector<std::string>>());
}

model::Policy Run::load_policy(const std::string& name) const {
    std::map<std::string, fs::path> paths = {{"base", dir_ / "checkpoints" / "base.ckpt"},
                                             {"sft", dir_ / "train" / "sft.ckpt"},
                                             {"grpo", dir_ / "train" / "grpo.ckpt"},
                                             {"farl", dir_ / "train" / "farl.ckpt"}};
    auto it = paths.find(name);
    if (it == paths.end()) throw ConfigError("unknown method: " + name);
    if (!fs::exists(it->second)) {
        const std::string stage = name == "base" ? "pretrain" : "train";
        throw StageFailure("dependency missing: stage " + stage + " has not produced " +
                           it->second.string());
    }
    return model::load_checkpoint<Scalar>(it->second.string());
}

extract::Extractor Run::make_extractor() const {
    extract::Extractor ex;
    ex.mode = config_.judge;
    if (ex.mode == extract::JudgeMode::remote) {
        const char* endpoint = std::getenv(extract::kJudgeEndpointEnv);
        if (!endpoint || !*endpoint) {
            throw ConfigError(std::string("judge mode is remote but ") + extract::kJudgeEndpointEnv +
                              " is not set");
        }
        ex.client.endpoint = endpoint;
    }
    return ex;
}

// -- stages -----------------------------------------------------------------

void Run::stage_forge() {
    const fs::path base = dir_ / "dataset";
    fs::create_directories(base);
    forge::Dataset ds = forge::build_dataset(config_.dataset);
    forge::write_items_jsonl((base / "train.jsonl").string(), ds.train);
    forge::write_items_jsonl((base / "eval.jsonl").string(), ds.eval);
    forge::write_manifest((base / "manifest.json").string(), ds);
    Tokenizer tok = forge::make_tokenizer(ds.registry);
    json vocab = {{"vocab", tok.vocab()}, {"hash", tok.vocab_hash()}};
    write_text(base / "vocab.json", vocab.dump());
    mark_artifact("forge", "dataset/train.jsonl");
    mark_artifact("forge", "dataset/eval.jsonl");
    mark_artifact("forge", "dataset/manifest.json");
    mark_artifact("forge", "dataset/vocab.json");
}

void Run::stage_pretrain() {
    forge::Dataset ds = load_dataset();
    Tokenizer tok = load_tokenizer();
    fs::create_directories(dir_ / "checkpoints");

    model::ModelConfig mc = config_.model;
    mc.vocab = tok.size();
    model::Policy policy = model::Policy::init(mc, config_.seed);

    std::vector<train::TokenPair> pairs;
    pairs.reserve(ds.train.size());
    for (const auto& item : ds.train) pairs.push_back(train::demo_pair(tok, item));

    train::SftConfig sft;
    sft.epochs = config_.pretrain.epochs;
    sft.batch = config_.pretrain.batch;
    sft.lr = config_.pretrain.lr;
    sft.seed = config_.seed;
    std::vector<double> losses;
    policy = train::sft_train(policy, pairs, sft, &losses);

    model::CheckpointMeta meta;
    meta.provenance = record_.config_hash + ":pretrain";
    meta.vocab_hash = tok.vocab_hash();
    model::save_checkpoint((dir_ / "checkpoints" / "base.ckpt").string(), policy, meta);
    write_text(dir_ / "checkpoints" / "pretrain_loss.json", json{{"epoch_loss", losses}}.dump(2));
    mark_artifact("pretrain", "checkpoints/base.ckpt");
}

void Run::stage_perturb(const std::vector<std::string>& kinds) {
    forge::Dataset ds = load_dataset();
    Tokenizer tok = load_tokenizer();
    model::Policy policy = load_policy("base");
    fs::create_directories(dir_ / "perturb");

    Rng seeder(config_.seed ^ 0x50455254ULL);
    std::vector<const forge::QAItem*> items = spread_items(ds, config_.perturb.items);

    for (const std::string& kind_name : kinds) {
        const perturb::Kind kind = perturb::kind_from_name(kind_name);
        std::vector<perturb::Outcome> outcomes;
        std::vector<ActivationRecord> activations;
        int skipped = 0;

        for (std::size_t i = 0; i < items.size(); ++i) {
            const forge::QAItem& item = *items[i];
            perturb::TrialParams params;
            params.extractor = make_extractor();
            params.gen.max_new_tokens = config_.eval.max_new_tokens;
            params.gen.capture_activations = true;
            params.seed = seeder.fork(i);

            std::optional<perturb::TrialResult> trial;
            if (kind == perturb::Kind::reasoning) {
                perturb::CueSpec cue;
                cue.template_text = config_.perturb.cue_template;
                cue.target = perturb::select_cue_target(item.gold, std::nullopt, params.seed);
                trial = perturb::reasoning_perturb(policy, tok, item, cue, params);
            } else if (kind == perturb::Kind::retrieval) {
                perturb::PoisonSpec spec = config_.perturb.poison;
                spec.seed = params.seed;
                auto res = perturb::retrieval_perturb(policy, tok, item, spec, params);
                if (res) trial = std::move(res->trial);
            } else {
                perturb::PoisonSpec spec = config_.perturb.poison;
                spec.seed = params.seed;
                const auto mode = kind == perturb::Kind::combined_aligned
                                      ? perturb::CombinedMode::aligned
                                      : perturb::CombinedMode::disparate;
                trial = perturb::combined_perturb(policy, tok, item, mode, spec,
                                                  config_.perturb.cue_template, params);
            }
            if (!trial) {
                ++skipped;
                continue;
            }
            ActivationRecord act;
            act.item_id = trial->outcome.item_id;
            act.kind = kind_name;
            act.activations = trial->trace.activations;
            activations.push_back(std::move(act));
            outcomes.push_back(std::move(trial->outcome));
        }
        if (outcomes.empty()) {
            throw StageFailure("perturb/" + kind_name + ": every item failed the correctness filter");
        }

        // An explicit rerun rebuilds this kind's own store from scratch.
        fs::remove(dir_ / "perturb" / ("outcomes_" + kind_name + ".jsonl"));
        fs::remove(dir_ / "perturb" / ("activations_" + kind_name + ".jsonl"));
        perturb::append_outcomes_jsonl((dir_ / "perturb" / ("outcomes_" + kind_name + ".jsonl")).string(),
                                       outcomes);
        append_activation_records(
            (dir_ / "perturb" / ("activations_" + kind_name + ".jsonl")).string(), activations);

        perturb::MetricReport report = perturb::compute_metrics(outcomes);
        json jm = {{"kind", kind_name},
                   {"n", report.total.n},
                   {"skipped", skipped}};
        if (report.total.r_psr) jm["r_psr"] = *report.total.r_psr;
        if (report.total.t_psr) jm["t_psr"] = *report.total.t_psr;
        if (report.total.combined_sum) jm["combined_sum"] = *report.total.combined_sum;
        if (report.total.per) jm["per"] = *report.total.per;
        json domains = json::object();
        for (const auto& [domain, block] : report.by_domain) {
            json jd = {{"n", block.n}};
            if (block.r_psr) jd["r_psr"] = *block.r_psr;
            if (block.t_psr) jd["t_psr"] = *block.t_psr;
            if (block.combined_sum) jd["combined_sum"] = *block.combined_sum;
            if (block.per) jd["per"] = *block.per;
            domains[domain] = jd;
        }
        jm["by_domain"] = domains;
        write_text(dir_ / "perturb" / ("metrics_" + kind_name + ".json"), jm.dump(2));
        mark_artifact("perturb", "perturb/outcomes_" + kind_name + ".jsonl");
        mark_artifact("perturb", "perturb/metrics_" + kind_name + ".json");
    }
}

void Run::stage_probe(const std::vector<std::string>& kinds) {
    fs::create_directories(dir_ / "probe");
    for (const std::string& kind_name : kinds) {
        const fs::path outcome_path = dir_ / "perturb" / ("outcomes_" + kind_name + ".jsonl");
        const fs::path act_path = dir_ / "perturb" / ("activations_" + kind_name + ".jsonl");
        if (!fs::exists(outcome_path) || !fs::exists(act_path)) {
            throw StageFailure("dependency missing: stage perturb has not produced artifacts for " +
                               kind_name);
        }
        std::vector<perturb::Outcome> outcomes = perturb::read_outcomes_jsonl(outcome_path.string());
        std::vector<ActivationRecord> acts = read_activation_records(act_path.string());
        if (outcomes.size() != acts.size()) {
            throw StageFailure("probe/" + kind_name + ": outcome/activation row mismatch");
        }
        std::vector<model::Trace> traces(acts.size());
        for (std::size_t i = 0; i < acts.size(); ++i) traces[i].activations = acts[i].activations;

        auto sets = probe::collect_features(outcomes, traces);
        probe::HeadAUCReport report;
        try {
            report = probe::probe_heads(sets, config_.probe.folds, config_.seed, config_.probe.l2);
        } catch (const probe::DegenerateLabelsError& e) {
            // One-sided outcomes carry no signal to probe; record and move on.
            write_text(dir_ / "probe" / ("auc_" + kind_name + ".json"),
                       json{{"kind", kind_name}, {"skipped", e.what()}}.dump(2));
            continue;
        } catch (const DataError& e) {
            // Too few filtered trials for the fold count.
            write_text(dir_ / "probe" / ("auc_" + kind_name + ".json"),
                       json{{"kind", kind_name}, {"skipped", e.what()}}.dump(2));
            continue;
        }
        probe::RankTable table = probe::rank_heads(report, config_.probe.top_k);
        write_text(dir_ / "probe" / ("auc_" + kind_name + ".json"),
                   probe::report_to_json(report, table));
        mark_artifact("probe", "probe/auc_" + kind_name + ".json");
    }
}

void Run::stage_train(const std::vector<std::string>& methods) {
    forge::Dataset ds = load_dataset();
    Tokenizer tok = load_tokenizer();
    model::Policy base = load_policy("base");
    fs::create_directories(dir_ / "train");

    // Training domain: the compute family (the "mathematics portion" analog).
    std::vector<forge::QAItem> train_items;
    for (const auto& item : ds.train) {
        if (item.domain == forge::Domain::compute) train_items.push_back(item);
    }
    std::vector<const forge::QAItem*> val_items;
    for (const auto* item : ds.eval_of(forge::Domain::compute)) {
        if (static_cast<int>(val_items.size()) >= config_.train.val_items) break;
        val_items.push_back(item);
    }

    extract::Extractor extractor = make_extractor();

    for (const std::string& method : methods) {
        const auto start = std::chrono::steady_clock::now();
        if (method == "sft") {
            std::vector<train::TokenPair> pairs;
            for (const auto& item : train_items) pairs.push_back(train::answer_only_pair(tok, item));
            train::SftConfig sft;
            sft.epochs = config_.train.n_epoch;
            sft.batch = config_.train.batch;
            sft.lr = config_.train.lr;
            sft.seed = config_.train.seed;
            model::Policy trained = train::sft_train(base, pairs, sft);
            model::CheckpointMeta meta{record_.config_hash + ":sft", tok.vocab_hash()};
            model::save_checkpoint((dir_ / "train" / "sft.ckpt").string(), trained, meta);
        } else if (method == "grpo" || method == "farl") {
            const bool unlearning = method == "farl";
            std::vector<train::DynamicsRow> dynamics;
            train::FarlHooks<Scalar> hooks;
            hooks.on_epoch_end = [&](int epoch, const model::Policy& p) {
                model::CheckpointMeta meta{record_.config_hash + ":" + method + ":epoch" +
                                               std::to_string(epoch),
                                           tok.vocab_hash()};
                model::save_checkpoint(
                    (dir_ / "train" / (method + "_epoch" + std::to_string(epoch) + ".ckpt")).string(),
                    p, meta);
            };
            model::Policy trained = train::farl_train(base, train_items, tok, extractor,
                                                      config_.train, unlearning, &dynamics,
                                                      &val_items, hooks);
            model::CheckpointMeta meta{record_.config_hash + ":" + method, tok.vocab_hash()};
            model::save_checkpoint((dir_ / "train" / (method + ".ckpt")).string(), trained, meta);
            train::write_dynamics_csv((dir_ / "train" / ("dynamics_" + method + ".csv")).string(),
                                      dynamics);
            mark_artifact("train", "train/dynamics_" + method + ".csv");
        } else {
            throw ConfigError("unknown training method: " + method);
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_text(dir_ / "train" / ("time_" + method + ".json"), json{{"seconds", seconds}}.dump());
        mark_artifact("train", "train/" + method + ".ckpt");
    }
}

void Run::stage_eval() {
    forge::Dataset ds = load_dataset();
    Tokenizer tok = load_tokenizer();
    extract::Extractor extractor = make_extractor();
    fs::create_directories(dir_ / "eval");

    const fs::path records_path = dir_ / "eval" / "records.jsonl";
    json summary = json::object();

    for (const std::string& method : {"base", "sft", "grpo", "farl"}) {
        fs::path ckpt = method == std::string("base") ? dir_ / "checkpoints" / "base.ckpt"
                                                      : dir_ / "train" / (method + std::string(".ckpt"));
        if (!fs::exists(ckpt)) continue;  // partial ladders are fine; report flags gaps
        model::Policy policy = load_policy(method);

        std::vector<EvalRecord> records;
        auto run_split = [&](forge::Domain domain) {
            int taken = 0;
            for (const auto* item : ds.eval_of(domain)) {
                if (taken >= config_.eval.items) break;
                ++taken;
                model::GenParams gp;
                gp.temperature = 0.0;
                gp.max_new_tokens = config_.eval.max_new_tokens;
                model::Trace trace = model::generate(policy, tok, item->question, "", gp);
                auto res = extractor.extract(item->question, item->choices, rollout_text(tok, trace));
                EvalRecord rec;
                rec.method = method;
                rec.item_id = item->id;
                rec.domain = forge::domain_name(domain);
                rec.n_generated = trace.generated_tokens();
                rec.extracted = res.label.value_or("");
                rec.gold = item->gold;
                rec.correct = res.label && *res.label == item->gold;
                records.push_back(std::move(rec));
            }
        };
        run_split(forge::Domain::compute);
        run_split(forge::Domain::lookup);
        run_split(forge::Domain::mixed);
        append_eval_records(records_path.string(), records);

        // Disparate-target perturbation metrics for the method row.
        std::vector<perturb::Outcome> outcomes;
        Rng seeder(config_.seed ^ 0x4556414cULL);
        std::vector<const forge::QAItem*> pitems = spread_items(ds, config_.eval.perturb_items);
        for (std::size_t i = 0; i < pitems.size(); ++i) {
            perturb::TrialParams params;
            params.extractor = extractor;
            params.gen.max_new_tokens = config_.eval.max_new_tokens;
            params.seed = seeder.fork(i);
            perturb::PoisonSpec spec = config_.perturb.poison;
            spec.seed = params.seed;
            auto trial = perturb::combined_perturb(policy, tok, *pitems[i],
                                                   perturb::CombinedMode::disparate, spec,
                                                   config_.perturb.cue_template, params);
            if (trial) outcomes.push_back(trial->outcome);
        }
        if (!outcomes.empty()) {
            perturb::append_outcomes_jsonl((dir_ / "eval" / ("perturb_" + method + ".jsonl")).string(),
                                           outcomes);
            perturb::MetricReport mr = perturb::compute_metrics(outcomes);
            summary[method] = {{"r_psr", mr.total.r_psr ? json(*mr.total.r_psr) : json()},
                               {"t_psr", mr.total.t_psr ? json(*mr.total.t_psr) : json()},
                               {"perturb_n", mr.total.n}};
        }
        mark_artifact("eval", "eval/records.jsonl");
    }
    write_text(dir_ / "eval" / "summary.json", summary.dump(2));
    mark_artifact("eval", "eval/summary.json");
}

void Run::stage_graph() {
    forge::Dataset ds = load_dataset();
    Tokenizer tok = load_tokenizer();
    fs::create_directories(dir_ / "graph");

    for (const std::string& method : {"base", "sft", "grpo", "farl"}) {
        fs::path ckpt = method == std::string("base") ? dir_ / "checkpoints" / "base.ckpt"
                                                      : dir_ / "train" / (method + std::string(".ckpt"));
        if (!fs::exists(ckpt)) continue;
        model::Policy policy = load_policy(method);

        std::vector<std::vector<VecX>> trajectories;
        std::size_t total_steps = 0;
        int taken = 0;
        for (const auto& item : ds.eval) {
            if (taken >= config_.graph.trajectories) break;
            ++taken;
            model::GenParams gp;
            gp.temperature = 0.0;
            gp.max_new_tokens = config_.eval.max_new_tokens;
            model::Trace trace = model::generate(policy, tok, item.question, "", gp);
            if (trace.think_text.empty()) continue;
            std::vector<VecX> vectors = graph::embed_steps(policy, tok, trace);
            if (vectors.empty()) continue;
            total_steps += vectors.size();
            trajectories.push_back(std::move(vectors));
        }
        if (trajectories.empty()) {
            write_text(dir_ / "graph" / ("stats_" + method + ".json"),
                       json{{"skipped", "no think segments"}}.dump(2));
            continue;
        }
        const int k = config_.graph.clusters > 0 ? config_.graph.clusters
                                                 : graph::default_cluster_count(total_steps);
        graph::ReasoningGraph g = graph::build_graph(trajectories, k, config_.seed);
        graph::GraphStats stats = graph::graph_stats(g, config_.seed, config_.graph.rewirings);
        json js = {{"method", method},
                   {"k", g.k},
                   {"trajectories", g.trajectories.size()},
                   {"cycle_count", stats.cycle_count},
                   {"diameter", stats.diameter},
                   {"small_world", stats.small_world ? json(*stats.small_world) : json()}};
        write_text(dir_ / "graph" / ("stats_" + method + ".json"), js.dump(2));

        auto dist = graph::stats_distribution(g, config_.graph.subsamples, config_.graph.fraction,
                                              config_.seed);
        json rows = json::array();
        for (const auto& s : dist) {
            rows.push_back({{"cycle_count", s.cycle_count},
                            {"diameter", s.diameter},
                            {"small_world", s.small_world ? json(*s.small_world) : json()}});
        }
        write_text(dir_ / "graph" / ("distribution_" + method + ".json"), rows.dump(2));
        mark_artifact("graph", "graph/stats_" + method + ".json");
    }
}

void Run::stage_report() {
    fs::create_directories(dir_ / "report");
    Report report = build_report(dir_);
    write_text(dir_ / "report" / "report.txt", report_to_text(report));
    write_text(dir_ / "report" / "report.json", report_to_json_text(report));
    mark_artifact("report", "report/report.txt");
    mark_artifact("report", "report/report.json");
}

// -- record stores -----------------------------------------------------------

void append_eval_records(const std::string& path, const std::vector<EvalRecord>& records) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw DataError("cannot open eval record store: " + path);
    for (const auto& r : records) {
        json j = {{"schema", 1},        {"method", r.method},     {"item_id", r.item_id},
                  {"domain", r.domain}, {"n_generated", r.n_generated}, {"extracted", r.extracted},
                  {"gold", r.gold},     {"correct", r.correct}};
        out << j.dump() << "\n";
    }
}

std::vector<EvalRecord> read_eval_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open eval record store: " + path);
    std::vector<EvalRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        EvalRecord r;
        r.method = j.at("method").get<std::string>();
        r.item_id = j.at("item_id").get<std::string>();
        r.domain = j.at("domain").get<std::string>();
        r.n_generated = j.at("n_generated").get<int>();
        r.extracted = j.at("extracted").get<std::string>();
        r.gold = j.at("gold").get<std::string>();
        r.correct = j.at("correct").get<bool>();
        out.push_back(std::move(r));
    }
    return out;
}

void append_activation_records(const std::string& path, const std::vector<ActivationRecord>& records) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw DataError("cannot open activation store: " + path);
    for (const auto& r : records) {
        json acts = json::array();
        for (const auto& [key, vec] : r.activations) {
            std::vector<double> values(vec.data(), vec.data() + vec.size());
            acts.push_back({{"layer", key.first}, {"head", key.second}, {"values", values}});
        }
        json j = {{"schema", 1}, {"item_id", r.item_id}, {"kind", r.kind}, {"activations", acts}};
        out << j.dump() << "\n";
    }
}

std::vector<ActivationRecord> read_activation_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open activation store: " + path);
    std::vector<ActivationRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        ActivationRecord r;
        r.item_id = j.at("item_id").get<std::string>();
        r.kind = j.at("kind").get<std::string>();
        for (const auto& a : j.at("activations")) {
            std::vector<double> values = a.at("values").get<std::vector<double>>();
            VecX v = Eigen::Map<const VecX>(values.data(), static_cast<Eigen::Index>(values.size()));
            r.activations[{a.at("layer").get<int>(), a.at("head").get<int>()}] = v;
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace lab::harness
