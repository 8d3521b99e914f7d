// Command-line front end: train, eval, analyze, gradcam, synth-data.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "afd/analysis.hpp"
#include "afd/config.hpp"
#include "afd/errors.hpp"
#include "afd/experiment.hpp"

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// Config file first, then one --<key> flag per config field on top.
struct ConfigArgs {
    std::string config_path;
    std::map<std::string, std::string> overrides;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", config_path, "key = value config file");
        for (const auto& key : afd::config_keys()) {
            app->add_option("--" + key, overrides[key], afd::config_help(key))->group("Run settings");
        }
    }

    afd::RunConfig resolve(const afd::RunConfig& base = {}) const {
        afd::RunConfig config = config_path.empty() ? base : afd::load_config_file(config_path, base);
        for (const auto& [key, value] : overrides) {
            if (!value.empty()) afd::set_config_value(config, key, value);
        }
        return config;
    }
};

// Runs saved by `train` keep their config next to the checkpoints.
struct RunArgs {
    std::string run_dir;
    std::string checkpoint;

    void attach(CLI::App* app) {
        app->add_option("--run", run_dir, "output directory of a training run")->required();
        app->add_option("--checkpoint", checkpoint, "checkpoint file (default: <run>/final.afdk)");
    }

    afd::RestoredRun restore() const {
        const afd::RunConfig config = afd::load_config_file((fs::path(run_dir) / "config.txt").string());
        const std::string ckpt = checkpoint.empty() ? (fs::path(run_dir) / "final.afdk").string() : checkpoint;
        return afd::restore_run(config, ckpt);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial feature distillation trainer"};
    app.require_subcommand(1);
    app.footer(
        "Architecture specs: a preset (tiny-a, tiny-b) or blocks joined by '-':\n"
        "  conv:C:K:S  conv with C output channels, KxK kernel, stride S, padding K/2\n"
        "  bn | relu | pool:P\n"
        "e.g. conv:8:3:1-bn-relu-pool:2-conv:16:3:1-bn-relu");

    auto* train = app.add_subcommand("train", "train networks and write metrics.csv plus checkpoints");
    ConfigArgs train_cfg;
    train_cfg.attach(train);
    std::string resume;
    bool quiet = false;
    train->add_option("--resume", resume, "continue from a checkpoint of the same run");
    train->add_flag("-q,--quiet", quiet, "no per-epoch progress on stderr");
    bool print_config = false;
    train->add_flag("--print-config", print_config, "print the resolved config and exit");

    auto* eval = app.add_subcommand("eval", "evaluate a trained run on its test split");
    RunArgs eval_run;
    eval_run.attach(eval);

    auto* analyze = app.add_subcommand("analyze", "feature-map similarity between two networks of a run");
    RunArgs analyze_run;
    analyze_run.attach(analyze);
    std::size_t net_a = 0, net_b = 1;
    std::string label;
    bool header = false;
    analyze->add_option("--net-a", net_a, "first network index");
    analyze->add_option("--net-b", net_b, "second network index");
    analyze->add_option("--label", label, "method column (default: the run's method)");
    analyze->add_flag("--header", header, "print the CSV header first");

    auto* gradcam = app.add_subcommand("gradcam", "export a Grad-CAM heatmap as binary PGM");
    RunArgs cam_run;
    cam_run.attach(gradcam);
    std::size_t cam_net = 0, cam_index = 0;
    int cam_class = -1;
    std::string cam_out;
    gradcam->add_option("--net", cam_net, "network index");
    gradcam->add_option("--index", cam_index, "test sample index");
    gradcam->add_option("--class", cam_class, "target class (default: the sample's label)");
    gradcam->add_option("-o,--out", cam_out, "output .pgm path")->required();

    auto* synth = app.add_subcommand("synth-data", "write a synthetic blob dataset as IDX files");
    std::size_t classes = 6, per_class = 200, size = 28;
    double noise = 0.35;
    std::uint64_t seed = 1;
    std::string images_out, labels_out;
    synth->add_option("--classes", classes, "number of classes");
    synth->add_option("--per-class", per_class, "samples per class");
    synth->add_option("--size", size, "image side length");
    synth->add_option("--noise", noise, "pixel noise standard deviation");
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--images", images_out, "output IDX image file")->required();
    synth->add_option("--labels", labels_out, "output IDX label file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            const afd::RunConfig config = train_cfg.resolve();
            config.validate();
            if (print_config) {
                std::cout << afd::format_config(config);
                return 0;
            }
            afd::ExperimentOptions opts;
            opts.resume_from = resume;
            if (!quiet) opts.log = [](const std::string& msg) { std::cerr << msg << "\n"; };
            const auto result = afd::run_experiment(config, opts);
            std::cout << "metrics: " << result.metrics_path << "\n";
            if (!result.final_checkpoint.empty()) std::cout << "checkpoint: " << result.final_checkpoint << "\n";
            for (std::size_t k = 0; k < result.final_eval.top1.size(); ++k) {
                std::cout << "net" << k << " test top1: " << fmt(result.final_eval.top1[k]) << "\n";
            }
            std::cout << "ensemble test top1: " << fmt(result.final_eval.ensemble_top1) << "\n";
        } else if (*eval) {
            auto run = eval_run.restore();
            std::vector<afd::Network<float>*> nets;
            for (auto& n : run.plan->nets()) nets.push_back(&n);
            const auto ev = afd::evaluate(nets, run.data.test);
            std::cout << "epoch " << run.epoch << ", " << ev.count << " test samples\n";
            for (std::size_t k = 0; k < ev.top1.size(); ++k) {
                std::cout << "net" << k << " top1 " << fmt(ev.top1[k]) << " ce " << fmt(ev.ce[k]) << "\n";
            }
            std::cout << "ensemble top1 " << fmt(ev.ensemble_top1) << "\n";
        } else if (*analyze) {
            auto run = analyze_run.restore();
            if (net_a >= run.plan->num_nets() || net_b >= run.plan->num_nets()) {
                throw afd::UsageError("network index out of range");
            }
            const auto report =
                afd::feature_similarity(run.plan->net(net_a), run.plan->net(net_b), run.data.test);
            if (header) std::cout << "method,pair,l1,l2,cosine,n\n";
            const std::string method = label.empty() ? afd::method_name(run.plan->method()) : label;
            std::cout << method << "," << net_a << "-" << net_b << "," << fmt(report.l1) << "," << fmt(report.l2)
                      << "," << fmt(report.cosine) << "," << report.samples << "\n";
        } else if (*gradcam) {
            auto run = cam_run.restore();
            if (cam_net >= run.plan->num_nets()) throw afd::UsageError("network index out of range");
            if (cam_index >= run.data.test.size()) throw afd::UsageError("sample index out of range");
            const std::vector<std::size_t> idx{cam_index};
            const auto image = run.data.test.gather_images(idx);
            const std::size_t cls =
                cam_class < 0 ? static_cast<std::size_t>(run.data.test.labels[cam_index]) : static_cast<std::size_t>(cam_class);
            const auto map = afd::grad_cam(run.plan->net(cam_net), image, cls);
            afd::export_pgm(map, cam_out);
            std::cout << "wrote " << cam_out << " (" << map.width << "x" << map.height << ", class " << cls << ")\n";
        } else if (*synth) {
            const auto data = afd::synth_blobs(classes, per_class, size, noise, seed);
            for (const auto& out : {images_out, labels_out}) {
                const auto parent = std::filesystem::path(out).parent_path();
                if (!parent.empty()) std::filesystem::create_directories(parent);
            }
            afd::write_idx(data, images_out, labels_out);
            std::cout << "wrote " << data.size() << " images to " << images_out << " and " << labels_out << "\n";
        }
    } catch (const afd::Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
    return 0;
}
