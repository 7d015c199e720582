#include "lab/harness/report.hpp"
#include "lab/harness/run.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

lab::harness::ExperimentConfig load_or_die(const std::string& path) {
    return lab::harness::load_config(path);
}

// Run dirs carry their config; subcommands operating on a run reload it.
lab::harness::ExperimentConfig config_of_run(const std::string& run_dir) {
    return lab::harness::load_config(run_dir + "/config.json");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reasoning-vs-retrieval perturbation lab"};
    app.require_subcommand(1);

    std::string judge_override;
    app.add_option("--judge", judge_override, "judge fallback: off|mock|remote")
        ->check(CLI::IsMember({"off", "mock", "remote"}));

    // lab run <config> [--out dir] [--stages ...]
    auto* cmd_run = app.add_subcommand("run", "execute an experiment config");
    std::string run_config_path, run_out;
    std::vector<std::string> run_stages;
    cmd_run->add_option("config", run_config_path, "experiment config JSON")->required();
    cmd_run->add_option("--out", run_out, "run directory (default: runs/<name>)");
    cmd_run->add_option("--stages", run_stages, "subset of stages to execute");

    // lab report <run_dir>
    auto* cmd_report = app.add_subcommand("report", "assemble tables from run artifacts");
    std::string report_dir;
    cmd_report->add_option("run", report_dir, "run directory")->required();

    // lab perturb <run_dir> <kind> [--mode aligned|disparate]
    auto* cmd_perturb = app.add_subcommand("perturb", "run one perturbation experiment");
    std::string pert_dir, pert_kind, pert_mode = "aligned";
    cmd_perturb->add_option("run", pert_dir, "run directory")->required();
    cmd_perturb->add_option("kind", pert_kind, "reasoning|retrieval|combined")
        ->required()
        ->check(CLI::IsMember({"reasoning", "retrieval", "combined"}));
    cmd_perturb->add_option("--mode", pert_mode, "combined mode: aligned|disparate")
        ->check(CLI::IsMember({"aligned", "disparate"}));

    // lab probe <run_dir> [--kind ...]
    auto* cmd_probe = app.add_subcommand("probe", "fit per-head probes on stored activations");
    std::string probe_dir;
    std::vector<std::string> probe_kinds;
    cmd_probe->add_option("run", probe_dir, "run directory")->required();
    cmd_probe->add_option("--kind", probe_kinds, "experiment kinds to probe");

    // lab train <run_dir> --method sft|grpo|farl
    auto* cmd_train = app.add_subcommand("train", "train one method of the ladder");
    std::string train_dir, train_method;
    cmd_train->add_option("run", train_dir, "run directory")->required();
    cmd_train->add_option("--method", train_method, "sft|grpo|farl")
        ->required()
        ->check(CLI::IsMember({"sft", "grpo", "farl"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (*cmd_run) {
            lab::harness::ExperimentConfig config = load_or_die(run_config_path);
            if (!judge_override.empty()) config.judge = lab::extract::judge_mode_from_name(judge_override);
            const std::string out = run_out.empty() ? "runs/" + config.name : run_out;
            lab::harness::Run run(out, config);
            run.execute(run_stages);
            std::cout << "run " << run.record().run_id << " complete; artifacts in " << out << "\n";
        } else if (*cmd_report) {
            lab::harness::Report report = lab::harness::build_report(report_dir);
            std::cout << lab::harness::report_to_text(report);
        } else if (*cmd_perturb) {
            lab::harness::ExperimentConfig config = config_of_run(pert_dir);
            if (!judge_override.empty()) config.judge = lab::extract::judge_mode_from_name(judge_override);
            lab::harness::Run run(pert_dir, config);
            std::string kind = pert_kind == "combined" ? "combined_" + pert_mode : pert_kind;
            run.stage_perturb({kind});
            std::cout << "wrote perturb/outcomes_" << kind << ".jsonl\n";
        } else if (*cmd_probe) {
            lab::harness::ExperimentConfig config = config_of_run(probe_dir);
            lab::harness::Run run(probe_dir, config);
            run.stage_probe(probe_kinds.empty() ? config.perturb.kinds : probe_kinds);
            std::cout << "probe reports written\n";
        } else if (*cmd_train) {
            lab::harness::ExperimentConfig config = config_of_run(train_dir);
            if (!judge_override.empty()) config.judge = lab::extract::judge_mode_from_name(judge_override);
            lab::harness::Run run(train_dir, config);
            run.stage_train({train_method});
            std::cout << "trained " << train_method << "\n";
        }
    } catch (const lab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const lab::harness::StageFailure& e) {
        std::cerr << "stage failure: " << e.what() << "\n";
        return kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStage;
    }
    return kExitOk;
}
