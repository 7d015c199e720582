#pragma once

#include "lab/harness/run.hpp"

#include <optional>
#include <string>

namespace lab::harness {

struct MethodRow {
    std::string method;
    std::optional<double> r_psr;
    std::optional<double> t_psr;
    std::optional<double> mtl_in, acc_in;    // training-domain split
    std::optional<double> mtl_out, acc_out;  // out-of-domain split
    std::optional<double> train_seconds;
};

struct Report {
    std::vector<MethodRow> rows;  // Base, SFT, GRPO, FARL
    std::vector<std::string> gaps;  // artifacts that were missing
};

// Pure function of the persisted artifacts under `run_dir`.
Report build_report(const std::filesystem::path& run_dir);

std::string report_to_text(const Report& report);
std::string report_to_json_text(const Report& report);

// ACC/MTL aggregation from eval records; exposed for the audit tests.
struct SplitMetrics {
    double acc = 0.0;
    double mtl = 0.0;
    int n = 0;
};
SplitMetrics aggregate_eval(const std::vector<EvalRecord>& records, const std::string& method,
                            bool in_domain);

}  // namespace lab::harness
