#include "afd/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "afd/errors.hpp"

namespace fs = std::filesystem;

namespace afd {

namespace {

Dataset load_split(const RunConfig& config, bool train) {
    if (config.dataset == "synth") {
        Dataset d = synth_blobs(config.synth_classes, train ? config.synth_train_per_class : config.synth_test_per_class,
                                config.synth_image_size, config.synth_noise, train ? config.seed : config.seed + 1);
        d.split = train ? "train" : "test";
        return d;
    }
    Dataset d = train ? load_idx(config.train_images, config.train_labels, config.num_classes)
                      : load_idx(config.test_images, config.test_labels, config.num_classes);
    d.split = train ? "train" : "test";
    return d;
}

PreparedData load_both(const RunConfig& config) {
    PreparedData out;
    out.train = load_split(config, true);
    out.test = load_split(config, false);
    if (out.test.channels != out.train.channels || out.test.height != out.train.height ||
        out.test.width != out.train.width) {
        throw DataError("train and test images differ in shape");
    }
    // Both splits share the class count of the larger label range.
    const std::size_t classes = std::max(out.train.num_classes, out.test.num_classes);
    out.train.num_classes = out.test.num_classes = classes;
    return out;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

struct Accumulator {
    std::vector<LossRecord> sums;
    std::size_t ens_correct = 0;
    std::size_t count = 0;

    explicit Accumulator(std::size_t K) : sums(K) {}

    void add(const StepResult& r) {
        for (std::size_t k = 0; k < sums.size(); ++k) {
            const double b = static_cast<double>(r.nets[k].count);
            sums[k].ce += r.nets[k].ce * b;
            sums[k].kl += r.nets[k].kl * b;
            sums[k].g += r.nets[k].g * b;
            sums[k].d += r.nets[k].d * b;
            sums[k].correct += r.nets[k].correct;
        }
        ens_correct += r.ensemble_correct;
        count += r.nets.front().count;
    }
};

}  // namespace

PreparedData prepare_data(const RunConfig& config) {
    PreparedData out = load_both(config);
    out.stats = fit_standardization(out.train);
    apply_standardization(out.train, out.stats);
    apply_standardization(out.test, out.stats);
    return out;
}

PreparedData prepare_data(const RunConfig& config, const Standardization& stats) {
    PreparedData out = load_both(config);
    out.stats = stats;
    apply_standardization(out.train, out.stats);
    apply_standardization(out.test, out.stats);
    return out;
}

std::string format_metrics_row(const MetricsRow& row) {
    std::string line = std::to_string(row.epoch) + "," + std::to_string(row.net_id) + "," + row.split;
    for (std::size_t i = 0; i < row.values.size(); ++i) {
        line += ",";
        if (row.present.empty() || row.present[i]) line += format_value(row.values[i]);
    }
    return line;
}

MetricsRow parse_metrics_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, ',')) fields.push_back(cur);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 11) throw DataError("metrics row has " + std::to_string(fields.size()) + " fields: " + line);
    MetricsRow row;
    row.epoch = std::stoi(fields[0]);
    row.net_id = std::stoul(fields[1]);
    row.split = fields[2];
    for (std::size_t i = 3; i < fields.size(); ++i) {
        row.present.push_back(!fields[i].empty());
        row.values.push_back(fields[i].empty() ? 0.0 : std::stod(fields[i]));
    }
    return row;
}

std::vector<MetricsRow> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    std::getline(in, line);
    if (line != kMetricsHeader) throw DataError("unexpected metrics header in " + path);
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty()) rows.push_back(parse_metrics_row(line));
    }
    return rows;
}

std::vector<NamedArray> snapshot(const DistillPlan& plan, int epoch, const Standardization& stats) {
    auto entries = plan.state();
    entries.push_back({"meta.epoch", {1}, {static_cast<float>(epoch)}});
    entries.push_back({"meta.std_mean", {stats.mean.size()}, stats.mean});
    entries.push_back({"meta.std_stddev", {stats.stddev.size()}, stats.stddev});
    return entries;
}

int snapshot_epoch(const std::vector<NamedArray>& entries) {
    const NamedArray* e = find_array(entries, "meta.epoch");
    if (e == nullptr || e->values.size() != 1) throw StateError("checkpoint has no epoch record");
    return static_cast<int>(e->values[0]);
}

Standardization snapshot_standardization(const std::vector<NamedArray>& entries) {
    const NamedArray* m = find_array(entries, "meta.std_mean");
    const NamedArray* s = find_array(entries, "meta.std_stddev");
    if (m == nullptr || s == nullptr) throw StateError("checkpoint has no standardization statistics");
    return {m->values, s->values};
}

RestoredRun restore_run(const RunConfig& config, const std::string& checkpoint_path) {
    const auto entries = read_checkpoint(checkpoint_path);
    RestoredRun run;
    run.data = prepare_data(config, snapshot_standardization(entries));
    run.plan = std::make_unique<DistillPlan>(config, run.data.train.channels, run.data.train.num_classes);
    run.plan->load_state(entries);
    run.epoch = snapshot_epoch(entries);
    return run;
}

ExperimentResult run_experiment(const RunConfig& config, const ExperimentOptions& options) {
    config.validate();
    auto log = [&](const std::string& msg) {
        if (options.log) options.log(msg);
    };
    ensure_dir(config.out_dir);

    std::vector<NamedArray> resume_entries;
    PreparedData data;
    if (!options.resume_from.empty()) {
        resume_entries = read_checkpoint(options.resume_from);
        data = prepare_data(config, snapshot_standardization(resume_entries));
    } else {
        data = prepare_data(config);
    }
    DistillPlan plan(config, data.train.channels, data.train.num_classes);

    int start_epoch = 0;
    if (!resume_entries.empty()) {
        plan.load_state(resume_entries);
        start_epoch = snapshot_epoch(resume_entries);
        log("resumed from " + options.resume_from + " at epoch " + std::to_string(start_epoch));
    } else if (config.method == Method::l1_kd_offline) {
        plan.load_teacher(config.teacher_checkpoint);
    }

    {
        std::ofstream cfg(fs::path(config.out_dir) / "config.txt", std::ios::trunc);
        if (!cfg) throw IoError("cannot write " + (fs::path(config.out_dir) / "config.txt").string());
        cfg << format_config(config);
    }

    ExperimentResult result;
    result.metrics_path = (fs::path(config.out_dir) / "metrics.csv").string();

    // Keep earlier rows on resume; drop anything past the resumed epoch.
    std::vector<std::string> kept;
    if (start_epoch > 0 && fs::exists(result.metrics_path)) {
        for (const auto& row : read_metrics(result.metrics_path)) {
            if (row.epoch <= start_epoch) kept.push_back(format_metrics_row(row));
        }
    }
    std::ofstream csv(result.metrics_path, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + result.metrics_path);
    csv << kMetricsHeader << "\n";
    for (const auto& line : kept) csv << line << "\n";

    const std::size_t K = plan.num_nets();
    std::vector<Network<float>*> net_ptrs;
    for (auto& n : plan.nets()) net_ptrs.push_back(&n);

    auto write_test_rows = [&](int epoch) {
        EvalResult ev = evaluate(net_ptrs, data.test);
        for (std::size_t k = 0; k < K; ++k) {
            MetricsRow row{epoch, k, "test",
                           {ev.ce[k], 0, 0, 0, ev.top1[k], ev.ensemble_top1, plan.lr_logit(), plan.lr_adv()},
                           {true, false, false, false, true, true, true, true}};
            csv << format_metrics_row(row) << "\n";
        }
        csv.flush();
        return ev;
    };

    auto write_checkpoint_at = [&](int epoch, const std::string& name) {
        const std::string path = (fs::path(config.out_dir) / name).string();
        write_checkpoint(path, snapshot(plan, epoch, data.stats));
        return path;
    };

    auto is_milestone = [&](int epoch) {
        for (int m : config.milestones_logit) {
            if (m == epoch) return true;
        }
        for (int m : config.milestones_adv) {
            if (m == epoch) return true;
        }
        return config.checkpoint_every > 0 && epoch % static_cast<int>(config.checkpoint_every) == 0;
    };

    if (start_epoch == 0) {
        plan.set_epoch(0);
        result.final_eval = write_test_rows(0);
    }

    const int last = static_cast<int>(config.epochs);
    int epoch = start_epoch;
    std::size_t batch_index = 0;
    try {
        for (epoch = start_epoch + 1; epoch <= last; ++epoch) {
            plan.set_epoch(epoch - 1);
            plan.set_mode(NormMode::train);
            Accumulator acc(K);
            batch_index = 0;
            for (const auto& idx : batches(data.train.size(), config.batch_size, config.seed,
                                           static_cast<std::uint64_t>(epoch - 1))) {
                Tensor<float> x = data.train.gather_images(idx);
                auto labels = data.train.gather_labels(idx);
                acc.add(plan.train_step(x, labels));
                ++batch_index;
            }
            const double n = static_cast<double>(acc.count);
            for (std::size_t k = 0; k < K; ++k) {
                const LossRecord& s = acc.sums[k];
                MetricsRow row{epoch,
                               k,
                               "train",
                               {s.ce / n, s.kl / n, s.g / n, s.d / n, 100.0 * static_cast<double>(s.correct) / n,
                                100.0 * static_cast<double>(acc.ens_correct) / n, plan.lr_logit(), plan.lr_adv()},
                               {}};
                csv << format_metrics_row(row) << "\n";
            }
            result.final_eval = write_test_rows(epoch);
            log("epoch " + std::to_string(epoch) + "/" + std::to_string(last) + " test top1 net0 " +
                format_value(result.final_eval.top1[0]) + " ensemble " + format_value(result.final_eval.ensemble_top1));
            if (is_milestone(epoch)) write_checkpoint_at(epoch, "ckpt_epoch" + std::to_string(epoch) + ".afdk");
            if (epoch == options.stop_after_epoch) break;
        }
    } catch (const NumericError& err) {
        const std::string path = (fs::path(config.out_dir) / "abort.txt").string();
        std::ofstream diag(path, std::ios::trunc);
        diag << "aborted: non-finite value\n"
             << "epoch " << epoch << " batch " << batch_index << "\n"
             << "method " << method_name(config.method) << " seed " << config.seed << "\n"
             << "lr_logit " << format_value(plan.lr_logit()) << " lr_adv " << format_value(plan.lr_adv()) << "\n"
             << "error " << err.what() << "\n";
        throw;
    }

    result.last_epoch = std::min(epoch, last);
    if (result.last_epoch < start_epoch) result.last_epoch = start_epoch;
    if (options.stop_after_epoch < 0 || result.last_epoch >= last) {
        result.final_checkpoint = write_checkpoint_at(result.last_epoch, "final.afdk");
    }
    return result;
}

}  // namespace afd
