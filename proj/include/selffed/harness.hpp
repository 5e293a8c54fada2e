#pragma once

#include <string>
#include <vector>

#include "selffed/config.hpp"

namespace selffed {

/// Distilled outcome of one experiment plus where its artifacts live.
struct RunResult {
    std::string output_dir;
    std::string csv_path;
    std::string summary_path;
    std::string run_id;
    double final_accuracy = std::numeric_limits<double>::quiet_NaN();
    double final_recon = std::numeric_limits<double>::quiet_NaN();
    int64_t phase1_rounds = 0;
    int64_t phase2_rounds = 0;
    double wall_seconds = 0.0;
};

/// Stable content id derived from the canonical config text.
std::string config_run_id(const ExperimentConfig& cfg);

/// Build data, partition, run the configured phases, stream one CSV row per
/// round, write checkpoints and the JSON summary. Deterministic given the
/// config; the only varying outputs are the wall-time fields.
RunResult run_experiment(const ExperimentConfig& cfg);

/// Re-run the experiment once per value of the swept parameter
/// ("beta", "delta" or "label_fraction"); each run lands in its own
/// subdirectory and a sweep_summary.json collects one row per value.
std::vector<RunResult> run_sweep(const ExperimentConfig& base, const std::string& param,
                                 const std::vector<double>& values, const std::string& out_root);

struct CompareRow {
    std::string method;  // mode + aggregation
    double delta = 0.0;
    double label_fraction = 0.0;
    double beta = 0.0;
    int runs = 0;
    double mean_accuracy = 0.0;
    double delta_vs_first = 0.0;
};

/// Align summaries by (method, delta, label fraction, beta); summaries of
/// the same condition (different seeds) are averaged. All summaries must
/// describe the same dataset.
std::vector<CompareRow> compare_runs(const std::vector<std::string>& summary_paths);
std::string render_comparison(const std::vector<CompareRow>& rows);

// CSV helpers shared with the tests: read a runs.csv and drop the wall-time
// column so byte comparisons ignore timing.
std::string csv_without_timing(const std::string& csv_text);

}  // namespace selffed
