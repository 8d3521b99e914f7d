#include "afd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>

#include "afd/errors.hpp"
#include "afd/nn.hpp"

namespace afd {

std::string method_name(Method method) {
    switch (method) {
        case Method::afd: return "afd";
        case Method::dml: return "dml";
        case Method::l1: return "l1";
        case Method::l1_kd: return "l1_kd";
        case Method::l1_kd_offline: return "l1_kd_offline";
        case Method::kd_ensemble: return "kd_ensemble";
        case Method::vanilla: return "vanilla";
    }
    return "?";
}

Method parse_method(const std::string& name) {
    for (Method m : {Method::afd, Method::dml, Method::l1, Method::l1_kd, Method::l1_kd_offline, Method::kd_ensemble,
                     Method::vanilla}) {
        if (method_name(m) == name) return m;
    }
    throw ConfigError("unknown method '" + name + "' (expected afd|dml|l1|l1_kd|l1_kd_offline|kd_ensemble|vanilla)");
}

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(text);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename U>
U parse_integer(const std::string& key, const std::string& text) {
    U value{};
    const std::string t = trim(text);
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + text + "'");
    }
    return value;
}

double parse_real(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    try {
        std::size_t used = 0;
        double v = std::stod(t, &used);
        if (used != t.size()) throw std::invalid_argument(t);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

std::string format_real(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

template <typename U>
std::string join(const std::vector<U>& items) {
    std::ostringstream os;
    for (std::size_t i = 0; i < items.size(); ++i) os << (i ? "," : "") << items[i];
    return os.str();
}

struct Field {
    std::string key;
    std::string help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename U>
Field size_field(std::string key, std::string help, U RunConfig::*member) {
    return {key, std::move(help),
            [key, member](RunConfig& c, const std::string& v) { c.*member = parse_integer<U>(key, v); },
            [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field real_field(std::string key, std::string help, double RunConfig::*member) {
    return {key, std::move(help), [key, member](RunConfig& c, const std::string& v) { c.*member = parse_real(key, v); },
            [member](const RunConfig& c) { return format_real(c.*member); }};
}

Field bool_field(std::string key, std::string help, bool RunConfig::*member) {
    return {key, std::move(help), [key, member](RunConfig& c, const std::string& v) { c.*member = parse_bool(key, v); },
            [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field string_field(std::string key, std::string help, std::string RunConfig::*member) {
    return {key, std::move(help), [member](RunConfig& c, const std::string& v) { c.*member = trim(v); },
            [member](const RunConfig& c) { return c.*member; }};
}

Field milestone_field(std::string key, std::string help, std::vector<int> RunConfig::*member) {
    return {key, std::move(help),
            [key, member](RunConfig& c, const std::string& v) {
                std::vector<int> out;
                for (const auto& item : split_list(v)) out.push_back(parse_integer<int>(key, item));
                c.*member = std::move(out);
            },
            [member](const RunConfig& c) { return join(c.*member); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"method", "afd|dml|l1|l1_kd|l1_kd_offline|kd_ensemble|vanilla",
         [](RunConfig& c, const std::string& v) { c.method = parse_method(trim(v)); },
         [](const RunConfig& c) { return method_name(c.method); }},
        size_field("num_nets", "number of co-trained networks K", &RunConfig::num_nets),
        {"arch",
         "comma-separated architecture per net, or one for all. Presets tiny-a, tiny-b, or block strings "
         "such as conv:16:3:1-bn-relu-pool:2 (tokens conv:C:K:S, bn, relu, pool:P)",
         [](RunConfig& c, const std::string& v) { c.arch = split_list(v); },
         [](const RunConfig& c) { return join(c.arch); }},
        real_field("temperature", "softmax temperature for KL mimicry", &RunConfig::temperature),
        size_field("epochs", "training epochs", &RunConfig::epochs),
        size_field("batch_size", "mini-batch size", &RunConfig::batch_size),
        size_field("seed", "base seed for init and batch order", &RunConfig::seed),
        real_field("lr_logit", "initial SGD learning rate (logit phase)", &RunConfig::lr_logit),
        real_field("momentum", "SGD momentum", &RunConfig::momentum),
        real_field("weight_decay_logit", "SGD weight decay", &RunConfig::weight_decay_logit),
        milestone_field("milestones_logit", "epochs at which the SGD rate is multiplied by lr_factor",
                        &RunConfig::milestones_logit),
        real_field("lr_adv", "initial Adam learning rate (adversarial phase)", &RunConfig::lr_adv),
        real_field("weight_decay_adv", "Adam weight decay", &RunConfig::weight_decay_adv),
        real_field("adam_beta1", "Adam beta1", &RunConfig::adam_beta1),
        real_field("adam_beta2", "Adam beta2", &RunConfig::adam_beta2),
        milestone_field("milestones_adv", "epochs at which the Adam rate is multiplied by lr_factor",
                        &RunConfig::milestones_adv),
        real_field("lr_factor", "multiplicative decay at each milestone", &RunConfig::lr_factor),
        size_field("disc_width", "channels of the discriminator's first conv", &RunConfig::disc_width),
        bool_field("use_logit_kd", "afd: include the KL term in the logit phase", &RunConfig::use_logit_kd),
        bool_field("use_adversarial", "afd: run the adversarial phase", &RunConfig::use_adversarial),
        string_field("dataset", "synth|idx", &RunConfig::dataset),
        size_field("synth_classes", "synthetic: number of classes", &RunConfig::synth_classes),
        size_field("synth_train_per_class", "synthetic: training samples per class", &RunConfig::synth_train_per_class),
        size_field("synth_test_per_class", "synthetic: test samples per class", &RunConfig::synth_test_per_class),
        size_field("synth_image_size", "synthetic: image side length", &RunConfig::synth_image_size),
        real_field("synth_noise", "synthetic: Gaussian pixel noise std", &RunConfig::synth_noise),
        string_field("train_images", "idx: training images file", &RunConfig::train_images),
        string_field("train_labels", "idx: training labels file", &RunConfig::train_labels),
        string_field("test_images", "idx: test images file", &RunConfig::test_images),
        string_field("test_labels", "idx: test labels file", &RunConfig::test_labels),
        size_field("num_classes", "idx: class count (0 infers from labels)", &RunConfig::num_classes),
        string_field("out_dir", "output directory for metrics and checkpoints", &RunConfig::out_dir),
        string_field("teacher_checkpoint", "l1_kd_offline: checkpoint of the pretrained teacher",
                     &RunConfig::teacher_checkpoint),
        size_field("checkpoint_every", "extra checkpoint period in epochs (0 disables)", &RunConfig::checkpoint_every),
    };
    return table;
}

const Field& field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) return f;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::string& RunConfig::arch_of(std::size_t k) const {
    if (arch.empty()) throw ConfigError("config key 'arch' is empty");
    return arch.size() == 1 ? arch.front() : arch.at(k);
}

void RunConfig::validate() const {
    const bool needs_peer = method != Method::vanilla;
    if (num_nets < 1) throw ConfigError("config key 'num_nets' must be at least 1");
    if (needs_peer && num_nets < 2) {
        throw ConfigError("config key 'num_nets': method " + method_name(method) + " needs at least 2 networks");
    }
    if (method == Method::l1_kd_offline && num_nets != 2) {
        throw ConfigError("config key 'num_nets': l1_kd_offline trains one student against one teacher (2 nets)");
    }
    if ((method == Method::l1 || method == Method::l1_kd || method == Method::dml) && num_nets != 2) {
        throw ConfigError("config key 'num_nets': method " + method_name(method) + " is defined for 2 networks");
    }
    if (method == Method::l1_kd_offline && teacher_checkpoint.empty()) {
        throw ConfigError("config key 'teacher_checkpoint' is required for l1_kd_offline");
    }
    if (arch.empty() || (arch.size() != 1 && arch.size() != num_nets)) {
        throw ConfigError("config key 'arch' must list one architecture or one per net");
    }
    for (const auto& a : arch) parse_arch(a);
    if (!(temperature > 0.0)) throw ConfigError("config key 'temperature' must be positive");
    if (batch_size == 0) throw ConfigError("config key 'batch_size' must be positive");
    if (lr_logit < 0.0 || lr_adv < 0.0) throw ConfigError("learning rates must be non-negative");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("config key 'momentum' must lie in [0, 1)");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
        throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(lr_factor > 0.0)) throw ConfigError("config key 'lr_factor' must be positive");
    for (const auto* ms : {&milestones_logit, &milestones_adv}) {
        for (std::size_t i = 1; i < ms->size(); ++i) {
            if ((*ms)[i] < (*ms)[i - 1]) throw ConfigError("milestones must be sorted ascending");
        }
    }
    if (disc_width == 0) throw ConfigError("config key 'disc_width' must be positive");
    if (dataset == "synth") {
        if (synth_classes < 2 || synth_train_per_class == 0 || synth_test_per_class == 0 || synth_image_size < 4 ||
            synth_noise < 0.0) {
            throw ConfigError("invalid synthetic dataset parameters");
        }
    } else if (dataset == "idx") {
        if (train_images.empty() || train_labels.empty() || test_images.empty() || test_labels.empty()) {
            throw ConfigError("dataset idx needs train_images, train_labels, test_images and test_labels");
        }
    } else {
        throw ConfigError("config key 'dataset' must be synth or idx, got '" + dataset + "'");
    }
    if (out_dir.empty()) throw ConfigError("config key 'out_dir' is empty");
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const auto& f : fields()) out.push_back(f.key);
        return out;
    }();
    return keys;
}

std::string config_help(const std::string& key) { return field(key).help; }

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    field(key).set(config, value);
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return field(key).get(config); }

RunConfig parse_config_text(const std::string& text, RunConfig base) {
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        try {
            set_config_value(base, key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return base;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
    std::ifstream file(path);
    if (!file) throw IoError("cannot open config file: " + path);
    return parse_config_text(std::string(std::istreambuf_iterator<char>(file), {}), std::move(base));
}

std::string format_config(const RunConfig& config) {
    std::ostringstream os;
    for (const auto& f : fields()) os << f.key << " = " << f.get(config) << '\n';
    return os.str();
}

}  // namespace afd
