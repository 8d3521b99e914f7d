#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace afd {

enum class Method { afd, dml, l1, l1_kd, l1_kd_offline, kd_ensemble, vanilla };

std::string method_name(Method method);
/// Throws ConfigError for unknown names.
Method parse_method(const std::string& name);

/// Every knob of a training run. Field names double as config-file keys.
struct RunConfig {
    Method method = Method::afd;
    std::size_t num_nets = 2;
    std::vector<std::string> arch{"tiny-a"};  // one per net, or one shared by all
    double temperature = 3.0;
    std::size_t epochs = 20;
    std::size_t batch_size = 128;
    std::uint64_t seed = 1;

    // Logit phase: momentum SGD.
    double lr_logit = 0.1;
    double momentum = 0.9;
    double weight_decay_logit = 1e-4;
    std::vector<int> milestones_logit{10, 15};

    // Adversarial phase: Adam over extractors, transfer layers and discriminators.
    double lr_adv = 2e-5;
    double weight_decay_adv = 1e-1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    std::vector<int> milestones_adv{5, 10};
    double lr_factor = 0.1;
    std::size_t disc_width = 32;

    // AFD ablation switches.
    bool use_logit_kd = true;
    bool use_adversarial = true;

    // Data source: "synth" or "idx".
    std::string dataset = "synth";
    std::size_t synth_classes = 6;
    std::size_t synth_train_per_class = 200;
    std::size_t synth_test_per_class = 100;
    std::size_t synth_image_size = 28;
    double synth_noise = 0.35;
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;
    std::size_t num_classes = 0;  // idx only; 0 infers from the training labels

    std::string out_dir = "runs/default";
    std::string teacher_checkpoint;
    std::size_t checkpoint_every = 0;  // 0: only at milestones and at the end

    /// Architecture of net `k`, expanding a single shared entry.
    const std::string& arch_of(std::size_t k) const;

    /// Throws ConfigError naming the offending key.
    void validate() const;
};

/// Names of every settable key, in declaration order.
const std::vector<std::string>& config_keys();

/// Help text for a key (used by the CLI).
std::string config_help(const std::string& key);

/// Sets one key from its textual value. Throws ConfigError.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

/// Parses `key = value` lines; '#' starts a comment. Unknown keys are errors.
RunConfig parse_config_text(const std::string& text, RunConfig base = {});
RunConfig load_config_file(const std::string& path, RunConfig base = {});

/// Canonical text form, loadable by parse_config_text.
std::string format_config(const RunConfig& config);

}  // namespace afd
