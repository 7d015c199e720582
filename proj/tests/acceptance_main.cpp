// Acceptance suite: one pass/fail line per criterion, exit 1 on any failure.
// Heavy fixtures (pretrained policies, training ladders, perturbation stores)
// are cached under --work-dir so reruns are cheap.

#include "lab/graph/reasoning_graph.hpp"
#include "lab/harness/report.hpp"
#include "lab/harness/run.hpp"
#include "lab/probe/probe.hpp"
#include "lab/train/farl.hpp"

#include "oracles.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace lab;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// ---------------------------------------------------------------------------
// Pinned acceptance configuration (desk scale)
// ---------------------------------------------------------------------------

struct AcceptanceConfig {
    forge::DatasetConfig dataset = [] {
        forge::DatasetConfig d;
        d.seed = 1;
        d.n_keys = 48;
        d.lookup_variants = 6;
        d.compute_train = 1200;
        d.compute_eval = 80;
        d.lookup_eval = 48;
        d.mixed_train = 400;
        d.mixed_eval = 80;
        d.steps_min = 2;
        d.steps_max = 4;
        return d;
    }();
    // policy
    int layers = 4;
    int heads = 4;
    int dim = 64;
    int context = 256;
    // pretraining (demo SFT)
    int pretrain_epochs = 20;
    double pretrain_lr = 2e-3;
    int pretrain_batch = 32;
    // training ladder (identical budgets for GRPO and FARL)
    train::TrainConfig ladder = [] {
        train::TrainConfig t;
        t.group_size = 8;  // Appendix B.2 defaults
        t.eps_low = 1.0;
        t.eps_high = 5.0;
        t.beta_kl = 0.001;
        t.beta_npo = 0.01;
        t.mu = 1;
        t.n_epoch = 3;
        t.n_step = 8;
        t.batch = 12;
        t.lr = 3e-4;
        t.temperature = 1.0;
        t.max_new_tokens = 72;
        t.val_items = 12;
        return t;
    }();
    double sft_lr = 1e-3;
    // measurement sizes
    int poison_items_per_domain = 67;  // x3 seeds ~= 200 per family
    int psr_items = 60;                // reasoning-perturbation trials per method/seed
    int acc_items = 80;                // out-of-domain ACC items
    int gen_tokens = 80;
    std::vector<uint64_t> seeds = {1, 2, 3};
};

const AcceptanceConfig kCfg;

struct Fixture {
    fs::path work;
    forge::Dataset dataset;
    Tokenizer tok;

    explicit Fixture(fs::path dir) : work(std::move(dir)) {
        fs::create_directories(work);
        dataset = forge::build_dataset(kCfg.dataset);
        tok = forge::make_tokenizer(dataset.registry);
    }

    model::ModelConfig model_config() const {
        model::ModelConfig mc;
        mc.layers = kCfg.layers;
        mc.heads = kCfg.heads;
        mc.dim = kCfg.dim;
        mc.context = kCfg.context;
        mc.vocab = tok.size();
        return mc;
    }

    fs::path base_path(uint64_t seed) const {
        return work / ("base_seed" + std::to_string(seed) + ".ckpt");
    }

    model::Policy base_policy(uint64_t seed) {
        const fs::path path = base_path(seed);
        if (fs::exists(path)) return model::load_checkpoint<Scalar>(path.string());
        std::cerr << "  [fixture] pretraining base policy, seed " << seed << "\n";
        model::Policy policy = model::Policy::init(model_config(), seed);
        std::vector<train::TokenPair> pairs;
        for (const auto& item : dataset.train) pairs.push_back(train::demo_pair(tok, item));
        train::SftConfig sft;
        sft.epochs = kCfg.pretrain_epochs;
        sft.batch = kCfg.pretrain_batch;
        sft.lr = kCfg.pretrain_lr;
        sft.seed = seed;
        policy = train::sft_train(policy, pairs, sft);
        model::save_checkpoint(path.string(), policy, {"acceptance:base", tok.vocab_hash()});
        return policy;
    }

    fs::path ladder_path(const std::string& method, uint64_t seed) const {
        return work / (method + "_seed" + std::to_string(seed) + ".ckpt");
    }
    fs::path dynamics_path(uint64_t seed) const {
        return work / ("dynamics_farl_seed" + std::to_string(seed) + ".csv");
    }

    std::vector<forge::QAItem> compute_train_items() const {
        std::vector<forge::QAItem> items;
        for (const auto& item : dataset.train) {
            if (item.domain == forge::Domain::compute) items.push_back(item);
        }
        return items;
    }

    std::vector<const forge::QAItem*> val_items() const {
        std::vector<const forge::QAItem*> items;
        for (const auto* item : dataset.eval_of(forge::Domain::compute)) {
            if (static_cast<int>(items.size()) >= kCfg.ladder.val_items) break;
            items.push_back(item);
        }
        return items;
    }

    model::Policy ladder_policy(const std::string& method, uint64_t seed) {
        const fs::path path = ladder_path(method, seed);
        if (fs::exists(path)) return model::load_checkpoint<Scalar>(path.string());
        std::cerr << "  [fixture] training " << method << ", seed " << seed << "\n";
        model::Policy base = base_policy(seed);
        extract::Extractor ex;
        model::Policy trained;
        if (method == "sft") {
            std::vector<train::TokenPair> pairs;
            for (const auto& item : compute_train_items()) {
                pairs.push_back(train::answer_only_pair(tok, item));
            }
            train::SftConfig sft;
            sft.epochs = kCfg.ladder.n_epoch;
            sft.batch = kCfg.pretrain_batch;
            sft.lr = kCfg.sft_lr;
            sft.seed = seed;
            trained = train::sft_train(base, pairs, sft);
        } else {
            train::TrainConfig tc = kCfg.ladder;
            tc.seed = seed;
            std::vector<train::DynamicsRow> dynamics;
            auto vals = val_items();
            trained = train::farl_train(base, compute_train_items(), tok, ex, tc, method == "farl",
                                        &dynamics, &vals);
            if (method == "farl") {
                train::write_dynamics_csv(dynamics_path(seed).string(), dynamics);
            }
        }
        model::save_checkpoint(path.string(), trained, {"acceptance:" + method, tok.vocab_hash()});
        return trained;
    }
};

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

std::string rollout_text(const Tokenizer& tok, const model::Trace& trace) {
    TokenSeq ids;
    for (TokenId id : trace.sampled_ids) {
        if (id != tok.eos_id()) ids.push_back(id);
    }
    return tok.decode(ids);
}

double greedy_acc(const model::Policy& policy, const Tokenizer& tok,
                  const std::vector<const forge::QAItem*>& items, int max_new_tokens) {
    extract::Extractor ex;
    int correct = 0;
    model::GenParams gp;
    gp.temperature = 0.0;
    gp.max_new_tokens = max_new_tokens;
    for (const auto* item : items) {
        model::Trace trace = model::generate(policy, tok, item->question, "", gp);
        auto res = ex.extract(item->question, item->choices, rollout_text(tok, trace));
        if (res.label && *res.label == item->gold) ++correct;
    }
    return items.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(items.size());
}

json load_json(const fs::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return json::parse(ss.str());
}

void save_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Criteria 1-4, 8, 10 (cheap / structural)
// ---------------------------------------------------------------------------

CriterionResult criterion1_advantages() {
    CriterionResult r{1, "advantage identities", false, "", 0};
    Rng rng(101);
    int tested = 0;
    double worst_mean = 0.0, worst_std = 0.0;
    while (tested < 1000) {
        VecX rewards(8);
        for (int j = 0; j < 8; ++j) {
            const int pick = rng.uniform_index(3);
            rewards(j) = pick == 0 ? 1.0 : (pick == 1 ? -0.5 : -1.0);
        }
        bool degenerate = false;
        VecX adv = train::group_advantage(rewards, &degenerate);
        if (degenerate) continue;
        ++tested;
        worst_mean = std::max(worst_mean, std::abs(adv.mean()));
        const double std = std::sqrt(adv.array().square().sum() / 8.0);
        worst_std = std::max(worst_std, std::abs(std - 1.0));
    }
    bool degenerate = false;
    VecX flat = train::group_advantage(VecX::Constant(8, 1.0), &degenerate);
    const bool zeros_ok = degenerate && flat.cwiseAbs().maxCoeff() == 0.0;

    r.pass = worst_mean < 1e-9 && worst_std < 1e-6 && zeros_ok;
    std::ostringstream d;
    d << "1000 groups: max|mean|=" << worst_mean << ", max|std-1|=" << worst_std
      << ", all-equal group -> zeros " << (zeros_ok ? "ok" : "VIOLATED");
    r.detail = d.str();
    return r;
}

CriterionResult criterion2_loss_identities() {
    CriterionResult r{2, "loss identities", false, "", 0};
    model::ModelConfig mc;
    mc.layers = 2;
    mc.heads = 2;
    mc.dim = 16;
    mc.context = 32;
    mc.ffn_mult = 2;
    mc.vocab = 11;
    model::Policy policy = model::Policy::init(mc, 5);
    model::Policy ref = policy;

    std::vector<train::TokenPair> batch = {{{0, 1, 2}, {3, 4, 5}}, {{6, 7}, {8, 9, 10, 1}}};
    const double npo = train::npo_loss(batch, policy, ref, 0.01);
    const double npo_err = std::abs(npo - 0.01 * std::log(2.0));

    const double kl = train::kl_term(-1.7, -1.7);

    train::RewardGroup group;
    model::Trace t1;
    t1.prompt_ids = {0, 1};
    t1.sampled_ids = {2, 3};
    model::Trace t2 = t1;
    t2.sampled_ids = {4, 5};
    group.traces = {t1, t2};
    group.rewards = VecX::Constant(2, -0.5);
    group.finalize();
    train::TrainConfig tc;
    tc.group_size = 2;
    const double grpo = train::grpo_loss<Scalar>({group}, policy, policy, policy, tc);

    r.pass = npo_err < 1e-7 && kl == 0.0 && grpo == 0.0;
    std::ostringstream d;
    d << "|npo - beta*log2|=" << npo_err << ", kl(rho=1)=" << kl << ", grpo(identity)=" << grpo;
    r.detail = d.str();
    return r;
}

template <typename LossFn, typename GradsFn>
std::pair<double, int> max_rel_fd_error(model::Policy& policy, LossFn loss, GradsFn grads_of,
                                        double h, double sign) {
    model::PolicyParams<Scalar> grads = grads_of();
    std::vector<MatX*> params, gmats;
    policy.params.visit([&params](const std::string&, MatX& m) { params.push_back(&m); });
    grads.visit([&gmats](const std::string&, MatX& m) { gmats.push_back(&m); });

    double worst = 0.0;
    int checked = 0;
    for (std::size_t mi = 0; mi < params.size(); ++mi) {
        MatX& mat = *params[mi];
        for (Eigen::Index k = 0; k < mat.size(); ++k) {
            const double original = mat.data()[k];
            mat.data()[k] = original + h;
            const double up = loss();
            mat.data()[k] = original - h;
            const double down = loss();
            mat.data()[k] = original;
            const double numeric = sign * (up - down) / (2 * h);
            const double analytic = gmats[mi]->data()[k];
            // Below the central-difference noise floor the quotient is noise.
            if (std::abs(numeric) < 1e-6 && std::abs(analytic) < 1e-6) continue;
            const double denom = std::max(std::abs(numeric), std::abs(analytic));
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
            ++checked;
        }
    }
    return {worst, checked};
}

CriterionResult criterion3_gradient_oracle() {
    CriterionResult r{3, "gradient oracle (finite differences)", false, "", 0};
    model::ModelConfig mc;
    mc.layers = 1;
    mc.heads = 1;
    mc.dim = 2;
    mc.context = 8;
    mc.ffn_mult = 2;
    mc.vocab = 3;
    model::Policy policy = model::Policy::init(mc, 31);
    if (policy.params.count() > 100) {
        r.detail = "policy exceeds 100 parameters";
        return r;
    }
    model::Policy policy_old = policy;
    policy_old.params.head_b(1, 0) += 0.3;
    model::Policy policy_ref = policy;
    policy_ref.params.head_b(2, 0) -= 0.2;

    train::RewardGroup group;
    model::Trace t1;
    t1.prompt_ids = {0, 1};
    t1.sampled_ids = {2, 0, 1};
    model::Trace t2;
    t2.prompt_ids = {0, 1};
    t2.sampled_ids = {1, 2};
    group.traces = {t1, t2};
    group.rewards = VecX(2);
    group.rewards << 1.0, -1.0;
    group.finalize();
    std::vector<train::RewardGroup> groups = {group};
    train::TrainConfig tc;
    tc.group_size = 2;

    auto [grpo_worst, grpo_checked] = max_rel_fd_error(
        policy,
        [&] {
            return static_cast<double>(
                train::grpo_loss<Scalar>(groups, policy, policy_old, policy_ref, tc));
        },
        [&] {
            model::PolicyParams<Scalar> g = model::zeros_like<Scalar>(policy.params);
            train::grpo_loss<Scalar>(groups, policy, policy_old, policy_ref, tc, &g);
            return g;
        },
        1e-5, -1.0);

    std::vector<train::TokenPair> batch = {{{0, 1}, {2, 1}}, {{2}, {0, 0, 1}}};
    auto [npo_worst, npo_checked] = max_rel_fd_error(
        policy,
        [&] { return static_cast<double>(train::npo_loss<Scalar>(batch, policy, policy_ref, 0.01)); },
        [&] {
            model::PolicyParams<Scalar> g = model::zeros_like<Scalar>(policy.params);
            train::npo_loss<Scalar>(batch, policy, policy_ref, 0.01, &g);
            return g;
        },
        1e-5, 1.0);

    r.pass = grpo_worst < 1e-4 && npo_worst < 1e-4 && grpo_checked > 40 && npo_checked > 40;
    std::ostringstream d;
    d << policy.params.count() << " params; grpo max rel err=" << grpo_worst << " (" << grpo_checked
      << " coords), npo max rel err=" << npo_worst << " (" << npo_checked << " coords)";
    r.detail = d.str();
    return r;
}

CriterionResult criterion4_reward_fixture() {
    CriterionResult r{4, "reward case split on 50-case fixture", false, "", 0};
    const std::map<std::string, std::string> choices = {
        {"A", "4"}, {"B", "2"}, {"C", "QX"}, {"D", "6"}};
    struct Case {
        std::string text;
        double expected;
    };
    std::vector<Case> fixture;
    for (const char* label : {"A", "B", "C", "D"}) {
        fixture.push_back({std::string("The correct answer is ( ") + label + " ) .",
                           std::string(label) == "B" ? 1.0 : -1.0});
        fixture.push_back(
            {std::string("the answer is ") + label, std::string(label) == "B" ? 1.0 : -1.0});
        fixture.push_back(
            {std::string("verdict : ( ") + label + " )", std::string(label) == "B" ? 1.0 : -1.0});
    }
    // Judge-fallback cases: no label pattern, but a choice text appears.
    fixture.push_back({"after computing , the result is 2 .", 1.0});   // judge -> B (gold)
    fixture.push_back({"after computing , the result is 4 .", -1.0});  // judge -> A
    fixture.push_back({"entity k000 has code QX .", -1.0});            // judge -> C
    fixture.push_back({"3 plus 5 is 1 . 1 times 2 is 2 .", 1.0});      // judge -> B via last mention
    fixture.push_back({"maybe 6 , maybe 2 . final value 2 .", 1.0});   // judge -> B
    fixture.push_back({"maybe 2 at first , later 6 .", -1.0});         // judge -> D
    // Unextractable cases.
    fixture.push_back({"", -0.5});
    fixture.push_back({"no label and no choice text here", -0.5});
    fixture.push_back({"numbers like 9 or 12 are not choices", -0.5});
    fixture.push_back({"thinking without conclusion", -0.5});
    int i = 0;
    while (fixture.size() < 50) {
        switch (i % 3) {
            case 0:
                fixture.push_back(
                    {"step " + std::to_string(i) + " . The correct answer is ( B ) .", 1.0});
                break;
            case 1:
                fixture.push_back(
                    {"step " + std::to_string(i) + " . The correct answer is ( D ) .", -1.0});
                break;
            default:
                // No label pattern and no choice text anywhere.
                fixture.push_back({"still thinking at round " + std::to_string(i + 10) +
                                       " , nothing concluded yet",
                                   -0.5});
                break;
        }
        ++i;
    }

    extract::Extractor ex;  // pattern + mock judge fallback
    int mismatches = 0;
    for (const auto& c : fixture) {
        const double got = train::reward(c.text, choices, "B", ex, "q");
        if (got != c.expected) {
            ++mismatches;
            if (mismatches <= 3) {
                std::cerr << "  reward mismatch on '" << c.text << "': got " << got << " expected "
                          << c.expected << "\n";
            }
        }
    }
    r.pass = mismatches == 0 && fixture.size() == 50;
    r.detail = std::to_string(fixture.size()) + " cases, " + std::to_string(mismatches) +
               " mismatches";
    return r;
}

CriterionResult criterion8_farl_grpo_equivalence(Fixture& fx) {
    CriterionResult r{8, "farl(beta_npo=0) bit-identical to grpo path", false, "", 0};
    model::Policy base = fx.base_policy(kCfg.seeds[0]);

    std::vector<forge::QAItem> items = fx.compute_train_items();
    items.resize(24);
    train::TrainConfig tc = kCfg.ladder;
    tc.n_epoch = 1;
    tc.n_step = 2;
    tc.batch = 4;
    tc.max_new_tokens = 48;
    tc.seed = 99;

    extract::Extractor ex;
    model::Policy grpo = train::farl_train(base, items, fx.tok, ex, tc, false);
    train::TrainConfig tc_zero = tc;
    tc_zero.beta_npo = 0.0;
    model::Policy farl0 = train::farl_train(base, items, fx.tok, ex, tc_zero, true);

    const fs::path pa = fx.work / "equiv_grpo.ckpt";
    const fs::path pb = fx.work / "equiv_farl0.ckpt";
    model::save_checkpoint(pa.string(), grpo, {"equivalence", fx.tok.vocab_hash()});
    model::save_checkpoint(pb.string(), farl0, {"equivalence", fx.tok.vocab_hash()});

    std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    r.pass = sa.str() == sb.str() && !sa.str().empty();
    r.detail = "checkpoint bytes " + std::to_string(sa.str().size()) + " vs " +
               std::to_string(sb.str().size()) + (r.pass ? ", identical" : ", DIFFER");
    return r;
}

CriterionResult criterion10_graph_oracle() {
    CriterionResult r{10, "graph-stat oracle", false, "", 0};
    Rng rng(77);
    int mismatches = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 3 + static_cast<int>(rng.uniform_int(10));  // up to 12 nodes
        graph::Digraph g;
        g.n = n;
        const double p = 0.10 + 0.15 * rng.uniform();
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) {
                if (rng.uniform() < p) g.edges.insert({a, b});
            }
        }
        if (graph::count_simple_cycles(g) != oracles::cycle_count_dp(g)) ++mismatches;
        if (graph::diameter_of(g) != oracles::diameter_floyd_warshall(g)) ++mismatches;
    }

    graph::Digraph aba;
    aba.n = 2;
    aba.edges = {{0, 1}, {1, 0}};
    const bool aba_ok = graph::count_simple_cycles(aba) == 1;

    graph::Digraph rnd;
    rnd.n = 24;
    Rng rng2(5);
    for (int a = 0; a < rnd.n; ++a) {
        for (int b = 0; b < rnd.n; ++b) {
            if (rng2.uniform() < 0.14) rnd.edges.insert({a, b});
        }
    }
    auto sigma = graph::small_world_index(rnd, 20, 9);
    const bool sigma_ok = sigma && *sigma > 0.75 && *sigma < 1.25;

    r.pass = mismatches == 0 && aba_ok && sigma_ok;
    std::ostringstream d;
    d << "50 random graphs, " << mismatches << " oracle mismatches; A->B->A cycles="
      << graph::count_simple_cycles(aba)
      << "; sigma(random vs own ensemble)=" << (sigma ? std::to_string(*sigma) : std::string("absent"));
    r.detail = d.str();
    return r;
}

// ---------------------------------------------------------------------------
// Fixture-heavy criteria
// ---------------------------------------------------------------------------

fs::path poison_store(const Fixture& fx, uint64_t seed) {
    return fx.work / ("poison_seed" + std::to_string(seed) + ".jsonl");
}

void build_poison_store(Fixture& fx, uint64_t seed) {
    const fs::path path = poison_store(fx, seed);
    if (fs::exists(path)) return;
    std::cerr << "  [fixture] poisoning trials, seed " << seed << "\n";
    model::Policy policy = fx.base_policy(seed);

    std::vector<perturb::Outcome> outcomes;
    Rng seeder(seed ^ 0xbeefULL);
    auto run_domain = [&](forge::Domain domain) {
        int taken = 0;
        for (const auto* item : fx.dataset.eval_of(domain)) {
            if (taken >= kCfg.poison_items_per_domain) break;
            ++taken;
            perturb::TrialParams params;
            params.gen.max_new_tokens = kCfg.gen_tokens;
            params.seed = seeder.fork(static_cast<uint64_t>(taken));
            perturb::PoisonSpec spec;
            spec.seed = params.seed;
            auto res = perturb::retrieval_perturb(policy, fx.tok, *item, spec, params);
            if (res) outcomes.push_back(res->trial.outcome);
        }
    };
    run_domain(forge::Domain::lookup);
    run_domain(forge::Domain::compute);
    fs::remove(path);
    perturb::append_outcomes_jsonl(path.string(), outcomes);
}

CriterionResult criterion6_poisoning(Fixture& fx) {
    CriterionResult r{6, "perturbation efficacy at desk scale", false, "", 0};
    std::vector<perturb::Outcome> lookup, compute;
    for (uint64_t seed : kCfg.seeds) {
        build_poison_store(fx, seed);
        for (const auto& o : perturb::read_outcomes_jsonl(poison_store(fx, seed).string())) {
            (o.domain == "lookup" ? lookup : compute).push_back(o);
        }
    }
    if (lookup.empty() || compute.empty()) {
        r.detail = "no trials survived the correctness filter";
        return r;
    }

    int lookup_flips = 0;
    for (const auto& o : lookup) {
        if (!o.poison_ineffective) ++lookup_flips;
    }
    const double flip_rate = static_cast<double>(lookup_flips) / static_cast<double>(lookup.size());

    auto t_psr = [](const std::vector<perturb::Outcome>& v) {
        int wins = 0;
        for (const auto& o : v) {
            if (o.retrieval_win) ++wins;
        }
        return static_cast<double>(wins) / static_cast<double>(v.size());
    };
    const double t_lookup = t_psr(lookup);
    const double t_compute = t_psr(compute);

    const bool a_ok = flip_rate >= 0.80;
    const bool b_ok = t_lookup > t_compute + 0.10;
    r.pass = a_ok && b_ok;
    std::ostringstream d;
    d << "(a) greedy-stem flip rate on lookup = " << flip_rate << " over " << lookup.size()
      << " trials (need >= 0.80); (b) T-PSR lookup=" << t_lookup << " vs compute=" << t_compute
      << " over " << compute.size() << " trials (need gap > 0.10)";
    r.detail = d.str();
    return r;
}

fs::path ladder_metrics_path(const Fixture& fx, uint64_t seed) {
    return fx.work / ("ladder_metrics_seed" + std::to_string(seed) + ".json");
}

json build_ladder_metrics(Fixture& fx, uint64_t seed) {
    const fs::path path = ladder_metrics_path(fx, seed);
    if (fs::exists(path)) return load_json(path);

    json out;
    std::vector<const forge::QAItem*> mixed_items = fx.dataset.eval_of(forge::Domain::mixed);
    std::vector<const forge::QAItem*> acc_items = mixed_items;
    if (static_cast<int>(acc_items.size()) > kCfg.acc_items) acc_items.resize(kCfg.acc_items);

    for (const std::string method : {"base", "sft", "grpo", "farl"}) {
        std::cerr << "  [fixture] measuring " << method << ", seed " << seed << "\n";
        model::Policy policy =
            method == "base" ? fx.base_policy(seed) : fx.ladder_policy(method, seed);

        // Out-of-domain accuracy on the mixed family (held-out compute chains
        // whose start value must be recalled).
        const double acc = greedy_acc(policy, fx.tok, acc_items, kCfg.gen_tokens);

        // R-PSR via reasoning perturbation on the mixed benchmark.
        int wins = 0, measured = 0;
        Rng seeder(seed ^ 0x7070ULL);
        int taken = 0;
        for (const auto* item : mixed_items) {
            if (taken >= kCfg.psr_items) break;
            ++taken;
            perturb::TrialParams params;
            params.gen.max_new_tokens = kCfg.gen_tokens;
            params.seed = seeder.fork(static_cast<uint64_t>(taken));
            perturb::CueSpec cue;
            cue.target = perturb::select_cue_target(item->gold, std::nullopt, params.seed);
            auto trial = perturb::reasoning_perturb(policy, fx.tok, *item, cue, params);
            if (!trial) continue;
            ++measured;
            if (trial->outcome.reasoning_win) ++wins;
        }
        out[method] = {{"acc_out", acc},
                       {"r_psr", measured > 0 ? static_cast<double>(wins) / measured : 0.0},
                       {"r_psr_n", measured}};
    }
    save_json(path, out);
    return out;
}

CriterionResult criterion7_directional_farl(Fixture& fx) {
    CriterionResult r{7, "directional FARL reproduction", false, "", 0};
    std::map<std::string, double> mean_acc, mean_psr;
    json per_seed = json::array();
    for (uint64_t seed : kCfg.seeds) {
        json m = build_ladder_metrics(fx, seed);
        per_seed.push_back(m);
        for (const std::string method : {"base", "sft", "grpo", "farl"}) {
            mean_acc[method] += m[method]["acc_out"].get<double>() / kCfg.seeds.size();
            mean_psr[method] += m[method]["r_psr"].get<double>() / kCfg.seeds.size();
        }
    }

    const bool psr_order =
        mean_psr["farl"] <= mean_psr["grpo"] && mean_psr["grpo"] <= mean_psr["base"];
    const bool acc_order =
        mean_acc["farl"] >= mean_acc["grpo"] && mean_acc["grpo"] >= mean_acc["sft"];
    const double farl_grpo_acc_gap = mean_acc["farl"] - mean_acc["grpo"];
    const double farl_grpo_psr_gap = mean_psr["grpo"] - mean_psr["farl"];
    const bool gaps_ok = farl_grpo_acc_gap >= 0.02 || farl_grpo_psr_gap >= 0.02;

    std::ostringstream d;
    d << "mean R-PSR base/grpo/farl = " << mean_psr["base"] << "/" << mean_psr["grpo"] << "/"
      << mean_psr["farl"] << "; mean ACC(out) sft/grpo/farl = " << mean_acc["sft"] << "/"
      << mean_acc["grpo"] << "/" << mean_acc["farl"];

    json result = {{"per_seed", per_seed},
                   {"mean_acc", mean_acc},
                   {"mean_psr", mean_psr},
                   {"psr_order_holds", psr_order},
                   {"acc_order_holds", acc_order},
                   {"farl_grpo_acc_gap", farl_grpo_acc_gap},
                   {"farl_grpo_psr_gap", farl_grpo_psr_gap},
                   {"seeds", kCfg.seeds},
                   {"config",
                    {{"n_epoch", kCfg.ladder.n_epoch},
                     {"n_step", kCfg.ladder.n_step},
                     {"batch", kCfg.ladder.batch},
                     {"group_size", kCfg.ladder.group_size},
                     {"lr", kCfg.ladder.lr},
                     {"beta_npo", kCfg.ladder.beta_npo}}}};

    if (psr_order && acc_order && gaps_ok) {
        r.pass = true;
        result["outcome"] = "orderings hold";
    } else {
        // The criterion admits an explicitly reported null result with seeds
        // and configs; record it and pass with the null flag.
        r.pass = true;
        result["outcome"] = "null result";
        d << " [null result: orderings "
          << (psr_order && acc_order ? "hold but FARL-GRPO gaps < 0.02" : "do not all hold")
          << "; recorded in farl_null_result.json]";
    }
    save_json(fx.work / "farl_directional_result.json", result);
    if (result["outcome"] == "null result") {
        save_json(fx.work / "farl_null_result.json", result);
    }
    r.detail = d.str();
    return r;
}

CriterionResult criterion11_dynamics(Fixture& fx) {
    CriterionResult r{11, "training-dynamics analog", false, "", 0};
    std::map<int, std::vector<double>> epoch_rewards;  // epoch -> per-seed means
    std::vector<double> npo_spearmans;
    for (uint64_t seed : kCfg.seeds) {
        build_ladder_metrics(fx, seed);  // ensures the FARL run + dynamics exist
        std::ifstream in(fx.dynamics_path(seed));
        if (!in) {
            r.detail = "missing dynamics csv for seed " + std::to_string(seed);
            return r;
        }
        std::string line;
        std::getline(in, line);  // header
        std::map<int, std::vector<double>> by_epoch_val, by_epoch_npo;
        while (std::getline(in, line)) {
            std::stringstream ss(line);
            std::string field;
            std::vector<double> fields;
            while (std::getline(ss, field, ',')) fields.push_back(std::stod(field));
            const int epoch = static_cast<int>(fields[0]);
            by_epoch_val[epoch].push_back(fields[4]);  // val_reward
            by_epoch_npo[epoch].push_back(fields[5]);  // npo_loss
        }
        for (const auto& [epoch, vals] : by_epoch_val) {
            double mean = 0;
            for (double v : vals) mean += v / vals.size();
            epoch_rewards[epoch].push_back(mean);
        }
        // NPO loss decreasing within each epoch (theta_ref resets per epoch).
        for (const auto& [epoch, losses] : by_epoch_npo) {
            std::vector<double> steps(losses.size());
            for (std::size_t i = 0; i < steps.size(); ++i) steps[i] = static_cast<double>(i);
            npo_spearmans.push_back(oracles::spearman_rho(steps, losses));
        }
    }

    std::vector<double> epochs, rewards;
    for (const auto& [epoch, per_seed] : epoch_rewards) {
        double mean = 0;
        for (double v : per_seed) mean += v / per_seed.size();
        epochs.push_back(static_cast<double>(epoch));
        rewards.push_back(mean);
    }
    const double val_rho = oracles::spearman_rho(epochs, rewards);
    double npo_rho = 0;
    for (double v : npo_spearmans) npo_rho += v / npo_spearmans.size();

    r.pass = val_rho > 0.0 && npo_rho < 0.0;
    std::ostringstream d;
    d << "Spearman(epoch, seed-mean val reward)=" << val_rho
      << " (need > 0); mean within-epoch Spearman(step, npo loss)=" << npo_rho << " (need < 0) over "
      << npo_spearmans.size() << " epoch curves";
    r.detail = d.str();

    save_json(fx.work / "dynamics_result.json",
              json{{"epoch_mean_val_reward", rewards},
                   {"val_spearman", val_rho},
                   {"npo_spearman_mean", npo_rho}});
    return r;
}

CriterionResult criterion5_metric_oracle(Fixture& fx) {
    CriterionResult r{5, "metric recomputation oracle", false, "", 0};
    build_poison_store(fx, kCfg.seeds[0]);
    auto outcomes = perturb::read_outcomes_jsonl(poison_store(fx, kCfg.seeds[0]).string());
    if (outcomes.empty()) {
        r.detail = "empty outcome store";
        return r;
    }
    perturb::MetricReport report = perturb::compute_metrics(outcomes);
    int t_wins = 0, posthoc = 0;
    for (const auto& o : outcomes) {
        if (!o.y_prime.empty() && o.y_prime == o.y_t) ++t_wins;
        if (!o.cot_answer.empty() && o.cot_answer == o.y_prime && o.y_prime == o.y_t) ++posthoc;
    }
    const double t_psr_brute = static_cast<double>(t_wins) / static_cast<double>(outcomes.size());
    const double per_brute = static_cast<double>(posthoc) / static_cast<double>(outcomes.size());
    const bool t_ok = report.total.t_psr && *report.total.t_psr == t_psr_brute;
    const bool per_ok = report.total.per && *report.total.per == per_brute;

    // R-PSR from a reasoning store.
    const fs::path rpath = fx.work / "reasoning_store.jsonl";
    if (!fs::exists(rpath)) {
        model::Policy policy = fx.base_policy(kCfg.seeds[0]);
        std::vector<perturb::Outcome> rout;
        Rng seeder(404);
        int taken = 0;
        for (const auto* item : fx.dataset.eval_of(forge::Domain::lookup)) {
            if (taken >= 30) break;
            ++taken;
            perturb::TrialParams params;
            params.gen.max_new_tokens = kCfg.gen_tokens;
            params.seed = seeder.fork(static_cast<uint64_t>(taken));
            perturb::CueSpec cue;
            cue.target = perturb::select_cue_target(item->gold, std::nullopt, params.seed);
            auto trial = perturb::reasoning_perturb(policy, fx.tok, *item, cue, params);
            if (trial) rout.push_back(trial->outcome);
        }
        if (!rout.empty()) perturb::append_outcomes_jsonl(rpath.string(), rout);
    }
    bool r_ok = false;
    if (fs::exists(rpath)) {
        auto rstore = perturb::read_outcomes_jsonl(rpath.string());
        auto rreport = perturb::compute_metrics(rstore);
        int rwins = 0;
        for (const auto& o : rstore) {
            if (!o.y_prime.empty() && o.y_prime == o.y_r) ++rwins;
        }
        r_ok = rreport.total.r_psr &&
               *rreport.total.r_psr ==
                   static_cast<double>(rwins) / static_cast<double>(rstore.size());
    }

    // ACC/MTL from eval records written through the harness store.
    const fs::path epath = fx.work / "eval_records.jsonl";
    if (!fs::exists(epath)) {
        model::Policy policy = fx.base_policy(kCfg.seeds[0]);
        extract::Extractor ex;
        std::vector<harness::EvalRecord> records;
        model::GenParams gp;
        gp.temperature = 0.0;
        gp.max_new_tokens = kCfg.gen_tokens;
        int taken = 0;
        for (const auto* item : fx.dataset.eval_of(forge::Domain::compute)) {
            if (taken >= 40) break;
            ++taken;
            model::Trace trace = model::generate(policy, fx.tok, item->question, "", gp);
            auto res = ex.extract(item->question, item->choices, rollout_text(fx.tok, trace));
            harness::EvalRecord rec;
            rec.method = "base";
            rec.item_id = item->id;
            rec.domain = "compute";
            rec.n_generated = trace.generated_tokens();
            rec.extracted = res.label.value_or("");
            rec.gold = item->gold;
            rec.correct = res.label && *res.label == item->gold;
            records.push_back(rec);
        }
        harness::append_eval_records(epath.string(), records);
    }
    auto records = harness::read_eval_records(epath.string());
    harness::SplitMetrics agg = harness::aggregate_eval(records, "base", true);
    int correct = 0;
    int64_t tokens = 0;
    for (const auto& rec : records) {
        if (rec.correct) ++correct;
        tokens += rec.n_generated;
    }
    const double acc_brute = static_cast<double>(correct) / static_cast<double>(records.size());
    const double mtl_brute = static_cast<double>(tokens) / static_cast<double>(records.size());
    const bool acc_ok = agg.acc == acc_brute;
    const bool mtl_ok = agg.mtl == mtl_brute;

    r.pass = t_ok && per_ok && r_ok && acc_ok && mtl_ok;
    std::ostringstream d;
    d << "T-PSR " << (t_ok ? "exact" : "MISMATCH") << ", PER " << (per_ok ? "exact" : "MISMATCH")
      << ", R-PSR " << (r_ok ? "exact" : "MISMATCH") << ", ACC " << (acc_ok ? "exact" : "MISMATCH")
      << ", MTL " << (mtl_ok ? "exact" : "MISMATCH") << " (0 tolerance, " << outcomes.size() << "+"
      << records.size() << " records)";
    r.detail = d.str();
    return r;
}

CriterionResult criterion9_probe_sanity(Fixture& fx) {
    CriterionResult r{9, "probe sanity", false, "", 0};
    probe::HeadFeatureSet planted;
    planted.layer = 0;
    planted.head = 0;
    planted.features.resize(80, kCfg.dim / kCfg.heads);
    Rng prng(55);
    for (int i = 0; i < 80; ++i) {
        planted.labels.push_back(i % 2);
        for (Eigen::Index dcol = 0; dcol < planted.features.cols(); ++dcol) {
            planted.features(i, dcol) = prng.normal(i % 2 ? 3.0 : -3.0, 0.4);
        }
    }
    const double planted_auc = probe::head_auc(planted, 5, 1);

    // Real activations: captured during reasoning trials on the base policy.
    const fs::path apath = fx.work / "probe_activations.jsonl";
    const fs::path opath = fx.work / "probe_outcomes.jsonl";
    if (!fs::exists(apath)) {
        std::cerr << "  [fixture] capturing activations for the probe\n";
        model::Policy policy = fx.base_policy(kCfg.seeds[0]);
        std::vector<perturb::Outcome> outcomes;
        std::vector<harness::ActivationRecord> acts;
        Rng seeder(777);
        int taken = 0;
        for (const auto* item : fx.dataset.eval_of(forge::Domain::lookup)) {
            if (taken >= 44) break;
            ++taken;
            perturb::TrialParams params;
            params.gen.max_new_tokens = kCfg.gen_tokens;
            params.gen.capture_activations = true;
            params.seed = seeder.fork(static_cast<uint64_t>(taken));
            perturb::CueSpec cue;
            cue.target = perturb::select_cue_target(item->gold, std::nullopt, params.seed);
            auto trial = perturb::reasoning_perturb(policy, fx.tok, *item, cue, params);
            if (!trial) continue;
            harness::ActivationRecord rec;
            rec.item_id = trial->outcome.item_id;
            rec.kind = "reasoning";
            rec.activations = trial->trace.activations;
            acts.push_back(std::move(rec));
            outcomes.push_back(trial->outcome);
        }
        if (!outcomes.empty()) {
            perturb::append_outcomes_jsonl(opath.string(), outcomes);
            harness::append_activation_records(apath.string(), acts);
        }
    }
    if (!fs::exists(apath)) {
        r.detail = "no activation fixture could be built";
        return r;
    }
    auto outcomes = perturb::read_outcomes_jsonl(opath.string());
    auto acts = harness::read_activation_records(apath.string());
    std::vector<model::Trace> traces(acts.size());
    for (std::size_t i = 0; i < acts.size(); ++i) traces[i].activations = acts[i].activations;
    auto sets = probe::collect_features(outcomes, traces);

    probe::HeadFeatureSet shuffled = sets.front();
    bool has_both = false;
    for (int v : shuffled.labels) {
        if (v != shuffled.labels.front()) has_both = true;
    }
    if (!has_both) {
        r.detail = "perturbation outcomes are single-class; cannot probe";
        return r;
    }
    Rng srng(31);
    double sum = 0.0;
    for (int s = 0; s < 50; ++s) {
        srng.shuffle(shuffled.labels);
        sum += probe::head_auc(shuffled, 5, static_cast<uint64_t>(s));
    }
    const double shuffle_mean = sum / 50.0;
    const bool shuffle_ok = shuffle_mean >= 0.45 && shuffle_mean <= 0.55;

    auto ra = probe::probe_heads(sets, 5, 9);
    auto rb = probe::probe_heads(sets, 5, 9);
    bool repro = ra.auc.size() == rb.auc.size();
    for (const auto& [key, auc] : ra.auc) {
        if (rb.auc.at(key) != auc) repro = false;
    }

    r.pass = planted_auc == 1.0 && shuffle_ok && repro;
    std::ostringstream d;
    d << "planted AUC=" << planted_auc << " (need 1.0); shuffled mean AUC=" << shuffle_mean
      << " over 50 reshuffles of " << shuffled.labels.size()
      << " trials (need 0.5 +/- 0.05); layer-by-head report "
      << (repro ? "bit-reproducible" : "NOT reproducible");
    r.detail = d.str();
    return r;
}

}  // namespace

int main(int argc, char** argv) {
    fs::path work = "acceptance_work";
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--work-dir" && i + 1 < argc) {
            work = argv[++i];
        } else if (arg == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string tokstr;
            while (std::getline(ss, tokstr, ',')) only.push_back(std::stoi(tokstr));
        }
    }
    auto wanted = [&only](int id) {
        return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
    };

    Fixture fx(work);
    std::cout << "acceptance work dir: " << fs::absolute(fx.work).string() << "\n";
    std::cout << "policy: " << kCfg.layers << " layers, dim " << kCfg.dim << ", " << fx.tok.size()
              << "-word vocab; dataset train=" << fx.dataset.train.size()
              << " eval=" << fx.dataset.eval.size() << "\n\n";

    std::vector<CriterionResult> results;
    auto run = [&results](int id, bool enabled, auto&& fn) {
        if (!enabled) return;
        const auto t0 = Clock::now();
        CriterionResult r;
        try {
            r = fn();
        } catch (const std::exception& e) {
            r.id = id;
            r.name = "criterion " + std::to_string(id);
            r.pass = false;
            r.detail = std::string("exception: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        results.push_back(r);
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << "criterion " << r.id << ": " << r.name
                  << " -- " << r.detail << " (" << std::fixed << std::setprecision(1) << r.seconds
                  << "s)\n"
                  << std::flush;
    };

    run(1, wanted(1), [] { return criterion1_advantages(); });
    run(2, wanted(2), [] { return criterion2_loss_identities(); });
    run(3, wanted(3), [] { return criterion3_gradient_oracle(); });
    run(4, wanted(4), [] { return criterion4_reward_fixture(); });
    run(10, wanted(10), [] { return criterion10_graph_oracle(); });
    run(8, wanted(8), [&fx] { return criterion8_farl_grpo_equivalence(fx); });
    run(6, wanted(6), [&fx] { return criterion6_poisoning(fx); });
    run(5, wanted(5), [&fx] { return criterion5_metric_oracle(fx); });
    run(9, wanted(9), [&fx] { return criterion9_probe_sanity(fx); });
    run(7, wanted(7), [&fx] { return criterion7_directional_farl(fx); });
    run(11, wanted(11), [&fx] { return criterion11_dynamics(fx); });

    std::sort(results.begin(), results.end(),
              [](const CriterionResult& a, const CriterionResult& b) { return a.id < b.id; });
    std::cout << "\n=== acceptance summary ===\n";
    bool all_pass = true;
    json summary = json::array();
    for (const auto& r : results) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << "criterion " << r.id << ": " << r.name
                  << "\n";
        summary.push_back({{"id", r.id},
                           {"name", r.name},
                           {"pass", r.pass},
                           {"detail", r.detail},
                           {"seconds", r.seconds}});
        if (!r.pass) all_pass = false;
    }
    save_json(fx.work / "acceptance_summary.json", summary);
    std::cout << (all_pass ? "ALL CRITERIA PASSED\n" : "SOME CRITERIA FAILED\n");
    return all_pass ? 0 : 1;
}
