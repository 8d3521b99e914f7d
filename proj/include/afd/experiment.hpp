#pragma once

#include <functional>
#include <string>
#include <vector>

#include "afd/config.hpp"
#include "afd/data.hpp"
#include "afd/trainer.hpp"

namespace afd {

inline constexpr const char* kMetricsHeader =
    "epoch,net_id,split,loss_ce,loss_kl,loss_g,loss_d,top1,ens_top1,lr_logit,lr_adv";

struct PreparedData {
    Dataset train;
    Dataset test;
    Standardization stats;
};

/// Loads or generates both splits and standardizes them with train statistics.
/// The synthetic test split uses seed + 1.
PreparedData prepare_data(const RunConfig& config);

/// Reapplies stored standardization instead of refitting (resume, eval).
PreparedData prepare_data(const RunConfig& config, const Standardization& stats);

struct ExperimentOptions {
    std::string resume_from;     // checkpoint written by an earlier run
    int stop_after_epoch = -1;   // simulate an interruption; -1 runs to the end
    std::function<void(const std::string&)> log;
};

struct ExperimentResult {
    std::string metrics_path;
    std::string final_checkpoint;
    EvalResult final_eval;
    int last_epoch = 0;
};

/// Trains per `config`, writing metrics.csv and checkpoints under out_dir.
/// Epoch 0 holds the evaluation before any update; epochs 1..N follow.
ExperimentResult run_experiment(const RunConfig& config, const ExperimentOptions& options = {});

/// Checkpoint entries of a plan plus run metadata.
std::vector<NamedArray> snapshot(const DistillPlan& plan, int epoch, const Standardization& stats);
int snapshot_epoch(const std::vector<NamedArray>& entries);
Standardization snapshot_standardization(const std::vector<NamedArray>& entries);

/// Rebuilds a plan from a checkpoint for evaluation or analysis.
struct RestoredRun {
    std::unique_ptr<DistillPlan> plan;
    PreparedData data;
    int epoch = 0;
};
RestoredRun restore_run(const RunConfig& config, const std::string& checkpoint_path);

/// One CSV row per metric set; absent metrics are left as empty fields.
struct MetricsRow {
    int epoch = 0;
    std::size_t net_id = 0;
    std::string split;
    std::vector<double> values;  // loss_ce, loss_kl, loss_g, loss_d, top1, ens_top1, lr_logit, lr_adv
    std::vector<bool> present;
};

std::string format_metrics_row(const MetricsRow& row);
MetricsRow parse_metrics_row(const std::string& line);
std::vector<MetricsRow> read_metrics(const std::string& path);

}  // namespace afd
