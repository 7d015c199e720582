#include "lab/harness/report.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

using nlohmann::json;
namespace fs = std::filesystem;

namespace lab::harness {

SplitMetrics aggregate_eval(const std::vector<EvalRecord>& records, const std::string& method,
                            bool in_domain) {
    SplitMetrics m;
    int64_t tokens = 0;
    int correct = 0;
    for (const auto& r : records) {
        if (r.method != method) continue;
        const bool is_in = r.domain == "compute";
        if (is_in != in_domain) continue;
        ++m.n;
        tokens += r.n_generated;
        if (r.correct) ++correct;
    }
    if (m.n > 0) {
        m.acc = static_cast<double>(correct) / m.n;
        m.mtl = static_cast<double>(tokens) / m.n;
    }
    return m;
}

Report build_report(const fs::path& run_dir) {
    Report report;

    std::vector<EvalRecord> records;
    const fs::path rec_path = run_dir / "eval" / "records.jsonl";
    if (fs::exists(rec_path)) {
        records = read_eval_records(rec_path.string());
    } else {
        report.gaps.push_back("eval/records.jsonl");
    }

    json summary = json::object();
    const fs::path sum_path = run_dir / "eval" / "summary.json";
    if (fs::exists(sum_path)) {
        std::ifstream in(sum_path);
        std::stringstream ss;
        ss << in.rdbuf();
        summary = json::parse(ss.str());
    } else {
        report.gaps.push_back("eval/summary.json");
    }

    for (const std::string& method : {"base", "sft", "grpo", "farl"}) {
        MethodRow row;
        row.method = method;

        SplitMetrics in = aggregate_eval(records, method, true);
        SplitMetrics out = aggregate_eval(records, method, false);
        if (in.n > 0) {
            row.acc_in = in.acc;
            row.mtl_in = in.mtl;
        }
        if (out.n > 0) {
            row.acc_out = out.acc;
            row.mtl_out = out.mtl;
        }
        if (in.n == 0 && out.n == 0) report.gaps.push_back("eval records for " + method);

        if (summary.contains(method)) {
            const json& s = summary[method];
            if (s.contains("r_psr") && !s["r_psr"].is_null()) row.r_psr = s["r_psr"].get<double>();
            if (s.contains("t_psr") && !s["t_psr"].is_null()) row.t_psr = s["t_psr"].get<double>();
        }

        const fs::path time_path = run_dir / "train" / ("time_" + method + ".json");
        if (fs::exists(time_path)) {
            std::ifstream in_time(time_path);
            std::stringstream ss;
            ss << in_time.rdbuf();
            row.train_seconds = json::parse(ss.str()).at("seconds").get<double>();
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

namespace {

std::string fmt(const std::optional<double>& v, int precision = 3) {
    if (!v) return "/";
    std::ostringstream out;
    out << std::fixed << std::setprecision(precision) << *v;
    return out.str();
}

}  // namespace

std::string report_to_text(const Report& report) {
    std::ostringstream out;
    out << std::left << std::setw(8) << "method" << std::right << std::setw(8) << "R-PSR"
        << std::setw(8) << "T-PSR" << std::setw(10) << "MTL(in)" << std::setw(9) << "ACC(in)"
        << std::setw(10) << "MTL(out)" << std::setw(10) << "ACC(out)" << std::setw(12) << "train(s)"
        << "\n";
    for (const auto& row : report.rows) {
        out << std::left << std::setw(8) << row.method << std::right << std::setw(8) << fmt(row.r_psr)
            << std::setw(8) << fmt(row.t_psr) << std::setw(10) << fmt(row.mtl_in, 1) << std::setw(9)
            << fmt(row.acc_in) << std::setw(10) << fmt(row.mtl_out, 1) << std::setw(10)
            << fmt(row.acc_out) << std::setw(12) << fmt(row.train_seconds, 1) << "\n";
    }
    if (!report.gaps.empty()) {
        out << "\nmissing artifacts:\n";
        for (const auto& gap : report.gaps) out << "  - " << gap << "\n";
    }
    return out.str();
}

std::string report_to_json_text(const Report& report) {
    json rows = json::array();
    for (const auto& row : report.rows) {
        json r = {{"method", row.method}};
        auto put = [&r](const char* key, const std::optional<double>& v) {
            r[key] = v ? json(*v) : json();
        };
        put("r_psr", row.r_psr);
        put("t_psr", row.t_psr);
        put("mtl_in", row.mtl_in);
        put("acc_in", row.acc_in);
        put("mtl_out", row.mtl_out);
        put("acc_out", row.acc_out);
        put("train_seconds", row.train_seconds);
        rows.push_back(std::move(r));
    }
    return json{{"rows", rows}, {"gaps", report.gaps}}.dump(2);
}

}  // namespace lab::harness
