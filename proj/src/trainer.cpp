#include "afd/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "afd/errors.hpp"
#include "afd/losses.hpp"
#include "afd/ops.hpp"

namespace afd {

std::vector<Edge> build_edges(Method method, std::size_t num_nets) {
    switch (method) {
        case Method::vanilla:
        case Method::kd_ensemble:
            return {};
        case Method::l1_kd_offline:
            if (num_nets != 2) throw ConfigError("l1_kd_offline needs exactly 2 networks");
            return {{1, 0}};
        default:
            break;
    }
    if (num_nets < 2) throw ConfigError("method " + method_name(method) + " needs at least 2 networks");
    if (num_nets == 2) return {{0, 1}, {1, 0}};
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < num_nets; ++i) edges.push_back({i, (i + 1) % num_nets});
    return edges;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

namespace {

bool uses_transfer(Method m) {
    return m == Method::afd || m == Method::l1 || m == Method::l1_kd || m == Method::l1_kd_offline;
}

std::vector<NamedTensor<float>> qualified(const std::string& prefix, std::vector<NamedTensor<float>> params) {
    for (auto& p : params) p.name = prefix + p.name;
    return params;
}

void append(std::vector<NamedTensor<float>>& out, std::vector<NamedTensor<float>> more) {
    for (auto& p : more) out.push_back(std::move(p));
}

std::vector<Tensor<float>> tensors_of(const std::vector<NamedTensor<float>>& params) {
    std::vector<Tensor<float>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.tensor);
    return out;
}

void save_stats(std::vector<NamedArray>& out, const std::string& prefix, const std::vector<NamedStats<float>>& stats) {
    for (const auto& s : stats) {
        const Shape shape{s.stats->mean.size()};
        out.push_back({prefix + s.name + ".running_mean", shape, s.stats->mean});
        out.push_back({prefix + s.name + ".running_var", shape, s.stats->var});
    }
}

const NamedArray& require_entry(const std::vector<NamedArray>& entries, const std::string& name, std::size_t size) {
    const NamedArray* e = find_array(entries, name);
    if (e == nullptr) throw StateError("checkpoint is missing '" + name + "'");
    if (e->values.size() != size) {
        throw StateError("checkpoint entry '" + name + "' holds " + std::to_string(e->values.size()) +
                         " values, expected " + std::to_string(size));
    }
    return *e;
}

void load_params(const std::vector<NamedArray>& entries, const std::string& prefix,
                 std::vector<NamedTensor<float>> params) {
    for (auto& p : params) {
        const NamedArray& e = require_entry(entries, prefix + p.name, p.tensor.numel());
        p.tensor.assign(e.values);
    }
}

void load_stats(const std::vector<NamedArray>& entries, const std::string& prefix,
                const std::vector<NamedStats<float>>& stats) {
    for (const auto& s : stats) {
        s.stats->mean = require_entry(entries, prefix + s.name + ".running_mean", s.stats->mean.size()).values;
        s.stats->var = require_entry(entries, prefix + s.name + ".running_var", s.stats->var.size()).values;
        s.stats->populated = true;
    }
}

}  // namespace

DistillPlan::DistillPlan(const RunConfig& config, std::size_t in_channels, std::size_t num_classes)
    : config_(config) {
    config_.validate();
    nets_.reserve(config_.num_nets);
    for (std::size_t k = 0; k < config_.num_nets; ++k) {
        nets_.push_back(build_network<float>(config_.arch_of(k), num_classes, mix_seed(config_.seed, 1000 + k),
                                             in_channels));
    }
    build_components();
}

DistillPlan::DistillPlan(const RunConfig& config, std::vector<Network<float>> nets)
    : config_(config), nets_(std::move(nets)) {
    config_.validate();
    if (nets_.size() != config_.num_nets) {
        throw ConfigError("plan expects " + std::to_string(config_.num_nets) + " networks, got " +
                          std::to_string(nets_.size()));
    }
    build_components();
}

void DistillPlan::build_components() {
    edges_ = build_edges(config_.method, nets_.size());
    for (std::size_t e = 0; e < edges_.size(); ++e) {
        const std::size_t c_src = nets_[edges_[e].src].feature_channels();
        const std::size_t c_dst = nets_[edges_[e].dst].feature_channels();
        if (config_.method == Method::afd) {
            discriminators_.emplace_back(c_src, config_.disc_width, mix_seed(config_.seed, 2000 + e));
        }
        if (uses_transfer(config_.method)) {
            transfers_.emplace_back(c_dst, c_src, mix_seed(config_.seed, 3000 + e));
        }
    }

    const Sgd::Options sgd_opts{config_.lr_logit, config_.momentum, config_.weight_decay_logit};
    sgd_.resize(nets_.size());
    for (std::size_t k = 0; k < nets_.size(); ++k) {
        if (!is_trainable(k)) continue;
        auto params = qualified("net" + std::to_string(k) + ".", nets_[k].parameters());
        if (config_.method != Method::afd) {
            // Direct-alignment baselines train their adapters with the classifier.
            for (std::size_t e = 0; e < transfers_.size(); ++e) {
                if (edges_[e].dst == k) {
                    append(params, qualified("transfer" + std::to_string(e) + ".", transfers_[e].parameters()));
                }
            }
        }
        sgd_[k] = std::make_unique<Sgd>(std::move(params), sgd_opts);
    }
    if (!is_trainable(1) && nets_.size() > 1) nets_[1].set_mode(NormMode::eval);

    if (config_.method == Method::afd) {
        const Adam::Options adam_opts{config_.lr_adv, config_.adam_beta1, config_.adam_beta2, 1e-8,
                                      config_.weight_decay_adv};
        std::vector<NamedTensor<float>> d_params;
        for (std::size_t e = 0; e < discriminators_.size(); ++e) {
            append(d_params, qualified("disc" + std::to_string(e) + ".", discriminators_[e].parameters()));
        }
        std::vector<NamedTensor<float>> g_params;
        for (std::size_t k = 0; k < nets_.size(); ++k) {
            append(g_params, qualified("net" + std::to_string(k) + ".", nets_[k].extractor_parameters()));
        }
        for (std::size_t e = 0; e < transfers_.size(); ++e) {
            append(g_params, qualified("transfer" + std::to_string(e) + ".", transfers_[e].parameters()));
        }
        adam_d_ = std::make_unique<Adam>(std::move(d_params), adam_opts);
        adam_g_ = std::make_unique<Adam>(std::move(g_params), adam_opts);
    }
    set_epoch(0);
}

bool DistillPlan::is_trainable(std::size_t k) const {
    return !(config_.method == Method::l1_kd_offline && k == 1);
}

std::size_t DistillPlan::num_transfer_layers() const {
    return static_cast<std::size_t>(
        std::count_if(transfers_.begin(), transfers_.end(), [](const auto& t) { return !t.is_identity(); }));
}

void DistillPlan::set_epoch(int epoch) {
    lr_logit_ = lr_at(epoch, config_.lr_logit, config_.milestones_logit, config_.lr_factor);
    lr_adv_ = lr_at(epoch, config_.lr_adv, config_.milestones_adv, config_.lr_factor);
    for (auto& s : sgd_) {
        if (s) s->set_lr(lr_logit_);
    }
    if (adam_d_) adam_d_->set_lr(lr_adv_);
    if (adam_g_) adam_g_->set_lr(lr_adv_);
}

void DistillPlan::set_mode(NormMode mode) {
    for (std::size_t k = 0; k < nets_.size(); ++k) nets_[k].set_mode(is_trainable(k) ? mode : NormMode::eval);
    for (auto& d : discriminators_) d.set_mode(mode);
    for (auto& t : transfers_) t.set_mode(mode);
}

void DistillPlan::step_sgd() {
    for (auto& s : sgd_) {
        if (s) s->step();
    }
}

void DistillPlan::clear_grads() {
    for (auto& s : sgd_) {
        if (s) s->zero_grad();
    }
    if (adam_d_) adam_d_->zero_grad();
    if (adam_g_) adam_g_->zero_grad();
}

void DistillPlan::tally(StepResult& out, const std::vector<Tensor<float>>& logits,
                        std::span<const std::int32_t> labels, double temperature_for_ensemble) const {
    const std::size_t batch = labels.size();
    const std::size_t classes = logits.front().dim(1);
    std::vector<Tensor<float>> probs;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        auto pred = argmax_rows(logits[k].data(), batch, classes);
        for (std::size_t b = 0; b < batch; ++b) out.nets[k].correct += pred[b] == labels[b] ? 1 : 0;
        out.nets[k].count = batch;
        NoGradGuard guard;
        probs.push_back(softmax(logits[k].detach(), temperature_for_ensemble));
    }
    auto ens = ensemble_predict(probs);
    for (std::size_t b = 0; b < batch; ++b) out.ensemble_correct += ens[b] == labels[b] ? 1 : 0;
}

StepResult DistillPlan::train_step(const Tensor<float>& x, std::span<const std::int32_t> labels) {
    if (x.rank() != 4 || x.dim(0) != labels.size()) {
        throw DimensionError("train_step: batch of " + shape_str(x.shape()) + " with " +
                             std::to_string(labels.size()) + " labels");
    }
    switch (config_.method) {
        case Method::afd:
            return step_afd(x, labels);
        case Method::dml:
            return step_dml(x, labels);
        case Method::vanilla:
        case Method::kd_ensemble:
            return step_logit_only(x, labels);
        case Method::l1:
        case Method::l1_kd:
        case Method::l1_kd_offline:
            return step_l1(x, labels);
    }
    throw ConfigError("unknown method");
}

StepResult DistillPlan::step_afd(const Tensor<float>& x, std::span<const std::int32_t> labels) {
    const std::size_t K = nets_.size();
    StepResult out;
    out.nets.resize(K);
    std::vector<Network<float>::Output> fwd;
    fwd.reserve(K);
    for (auto& net : nets_) fwd.push_back(net.forward(x));

    // Logit phase: every network at once, then one synchronous SGD step.
    Tensor<float> total;
    std::vector<Tensor<float>> logits;
    for (std::size_t k = 0; k < K; ++k) {
        logits.push_back(fwd[k].logits);
        Tensor<float> loss = cross_entropy(labels, fwd[k].logits);
        out.nets[k].ce = loss.item();
        if (config_.use_logit_kd) {
            Tensor<float> kl;
            std::size_t incoming = 0;
            for (const Edge& e : edges_) {
                if (e.dst != k) continue;
                Tensor<float> term = kl_mimicry(fwd[e.src].logits, fwd[k].logits, config_.temperature);
                kl = kl.defined() ? add(kl, term) : term;
                ++incoming;
            }
            if (incoming > 0) {
                if (incoming > 1) kl = scale(kl, 1.0 / static_cast<double>(incoming));
                out.nets[k].kl = kl.item();
                loss = add(loss, kl);
            }
        }
        total = total.defined() ? add(total, loss) : loss;
    }
    total.backward();
    step_sgd();
    clear_grads();
    if (phase_hook_) phase_hook_(Phase::logit);

    if (config_.use_adversarial && !edges_.empty()) {
        // Adversarial phase reuses the features of the single forward above.
        Tensor<float> loss_d, loss_g;
        for (std::size_t e = 0; e < edges_.size(); ++e) {
            const Edge& edge = edges_[e];
            Tensor<float> real = fwd[edge.src].feature.detach();
            Tensor<float> own = transfers_[e].forward(fwd[edge.dst].feature);
            Tensor<float> d_real = discriminators_[e].forward(real);
            Tensor<float> d_own = discriminators_[e].forward(own);
            Tensor<float> ld = lsgan_d_loss(d_real, d_own);
            Tensor<float> lg = lsgan_g_loss(d_own);
            out.nets[edge.dst].d = ld.item();
            out.nets[edge.dst].g = lg.item();
            loss_d = loss_d.defined() ? add(loss_d, ld) : ld;
            loss_g = loss_g.defined() ? add(loss_g, lg) : lg;
        }
        const auto d_targets = tensors_of(adam_d_->params());
        loss_d.backward_to(d_targets);
        adam_d_->step();
        const auto g_targets = tensors_of(adam_g_->params());
        loss_g.backward_to(g_targets);
        adam_g_->step();
        clear_grads();
    }
    if (phase_hook_) phase_hook_(Phase::adversarial);

    tally(out, logits, labels);
    return out;
}

StepResult DistillPlan::step_dml(const Tensor<float>& x, std::span<const std::int32_t> labels) {
    StepResult out;
    out.nets.resize(2);
    auto first = nets_[0].forward(x);
    auto second = nets_[1].forward(x);

    Tensor<float> ce0 = cross_entropy(labels, first.logits);
    Tensor<float> kl0 = kl_mimicry(second.logits, first.logits, config_.temperature);
    add(ce0, kl0).backward();
    sgd_[0]->step();
    clear_grads();

    // The second network learns from the first one's updated predictions.
    Tensor<float> refreshed;
    {
        NoGradGuard guard;
        refreshed = nets_[0].forward(x).logits;
    }
    Tensor<float> ce1 = cross_entropy(labels, second.logits);
    Tensor<float> kl1 = kl_mimicry(refreshed, second.logits, config_.temperature);
    add(ce1, kl1).backward();
    sgd_[1]->step();
    clear_grads();

    out.nets[0].ce = ce0.item();
    out.nets[0].kl = kl0.item();
    out.nets[1].ce = ce1.item();
    out.nets[1].kl = kl1.item();
    tally(out, {first.logits, second.logits}, labels);
    return out;
}

StepResult DistillPlan::step_logit_only(const Tensor<float>& x, std::span<const std::int32_t> labels) {
    const std::size_t K = nets_.size();
    StepResult out;
    out.nets.resize(K);
    std::vector<Tensor<float>> logits;
    for (auto& net : nets_) logits.push_back(net.forward(x).logits);

    Tensor<float> target;
    if (config_.method == Method::kd_ensemble) {
        NoGradGuard guard;
        std::vector<float> avg(logits.front().numel(), 0.0f);
        for (const auto& z : logits) {
            Tensor<float> p = softmax(z.detach(), config_.temperature);
            for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += p.data()[i];
        }
        for (float& v : avg) v /= static_cast<float>(K);
        target = Tensor<float>(logits.front().shape(), std::move(avg));
    }

    Tensor<float> total;
    for (std::size_t k = 0; k < K; ++k) {
        Tensor<float> loss = cross_entropy(labels, logits[k]);
        out.nets[k].ce = loss.item();
        if (target.defined()) {
            Tensor<float> kl = kl_to_distribution(target, logits[k], config_.temperature);
            out.nets[k].kl = kl.item();
            loss = add(loss, kl);
        }
        total = total.defined() ? add(total, loss) : loss;
    }
    total.backward();
    step_sgd();
    clear_grads();
    tally(out, logits, labels);
    return out;
}

StepResult DistillPlan::step_l1(const Tensor<float>& x, std::span<const std::int32_t> labels) {
    const std::size_t K = nets_.size();
    const bool with_kd = config_.method != Method::l1;
    StepResult out;
    out.nets.resize(K);
    std::vector<Network<float>::Output> fwd(K);
    for (std::size_t k = 0; k < K; ++k) {
        if (is_trainable(k)) {
            fwd[k] = nets_[k].forward(x);
        } else {
            NoGradGuard guard;
            fwd[k] = nets_[k].forward(x);
        }
    }

    Tensor<float> total;
    std::vector<Tensor<float>> logits;
    for (std::size_t k = 0; k < K; ++k) {
        logits.push_back(fwd[k].logits);
        Tensor<float> loss = cross_entropy(labels, fwd[k].logits);
        out.nets[k].ce = loss.item();
        if (!is_trainable(k)) continue;
        for (std::size_t e = 0; e < edges_.size(); ++e) {
            if (edges_[e].dst != k) continue;
            const Edge& edge = edges_[e];
            Tensor<float> align = l1_alignment(transfers_[e].forward(fwd[k].feature), fwd[edge.src].feature);
            out.nets[k].g += align.item();
            loss = add(loss, align);
            if (with_kd) {
                Tensor<float> kl = kl_mimicry(fwd[edge.src].logits, fwd[k].logits, config_.temperature);
                out.nets[k].kl += kl.item();
                loss = add(loss, kl);
            }
        }
        total = total.defined() ? add(total, loss) : loss;
    }
    total.backward();
    step_sgd();
    clear_grads();
    tally(out, logits, labels);
    return out;
}

void DistillPlan::load_teacher(const std::string& path) {
    if (config_.method != Method::l1_kd_offline) throw UsageError("load_teacher: only the offline method has a teacher");
    const auto entries = read_checkpoint(path);
    load_params(entries, "net0.", nets_[1].parameters());
    load_stats(entries, "net0.", nets_[1].running_stats());
    nets_[1].set_mode(NormMode::eval);
}

std::vector<NamedArray> DistillPlan::state() const {
    std::vector<NamedArray> out;
    auto save_params = [&](const std::string& prefix, const std::vector<NamedTensor<float>>& params) {
        for (const auto& p : params) {
            out.push_back({prefix + p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
        }
    };
    auto& self = const_cast<DistillPlan&>(*this);  // running_stats() hands out mutable pointers
    for (std::size_t k = 0; k < nets_.size(); ++k) {
        const std::string prefix = "net" + std::to_string(k) + ".";
        save_params(prefix, nets_[k].parameters());
        save_stats(out, prefix, self.nets_[k].running_stats());
    }
    for (std::size_t e = 0; e < discriminators_.size(); ++e) {
        const std::string prefix = "disc" + std::to_string(e) + ".";
        save_params(prefix, discriminators_[e].parameters());
        save_stats(out, prefix, self.discriminators_[e].running_stats());
    }
    for (std::size_t e = 0; e < transfers_.size(); ++e) {
        const std::string prefix = "transfer" + std::to_string(e) + ".";
        save_params(prefix, transfers_[e].parameters());
        save_stats(out, prefix, self.transfers_[e].running_stats());
    }
    for (std::size_t k = 0; k < sgd_.size(); ++k) {
        if (!sgd_[k]) continue;
        for (auto& a : sgd_[k]->state("opt.sgd" + std::to_string(k) + ".")) out.push_back(std::move(a));
    }
    if (adam_d_) {
        for (auto& a : adam_d_->state("opt.adam_d.")) out.push_back(std::move(a));
    }
    if (adam_g_) {
        for (auto& a : adam_g_->state("opt.adam_g.")) out.push_back(std::move(a));
    }
    return out;
}

void DistillPlan::load_state(const std::vector<NamedArray>& entries) {
    for (std::size_t k = 0; k < nets_.size(); ++k) {
        const std::string prefix = "net" + std::to_string(k) + ".";
        load_params(entries, prefix, nets_[k].parameters());
        load_stats(entries, prefix, nets_[k].running_stats());
    }
    for (std::size_t e = 0; e < discriminators_.size(); ++e) {
        const std::string prefix = "disc" + std::to_string(e) + ".";
        load_params(entries, prefix, discriminators_[e].parameters());
        load_stats(entries, prefix, discriminators_[e].running_stats());
    }
    for (std::size_t e = 0; e < transfers_.size(); ++e) {
        const std::string prefix = "transfer" + std::to_string(e) + ".";
        load_params(entries, prefix, transfers_[e].parameters());
        load_stats(entries, prefix, transfers_[e].running_stats());
    }
    for (std::size_t k = 0; k < sgd_.size(); ++k) {
        if (sgd_[k]) sgd_[k]->load_state("opt.sgd" + std::to_string(k) + ".", entries);
    }
    if (adam_d_) adam_d_->load_state("opt.adam_d.", entries);
    if (adam_g_) adam_g_->load_state("opt.adam_g.", entries);
}

std::vector<std::int32_t> argmax_rows(std::span<const float> values, std::size_t rows, std::size_t cols) {
    if (values.size() != rows * cols) throw DimensionError("argmax_rows: size mismatch");
    std::vector<std::int32_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = values.data() + r * cols;
        std::size_t best = 0;
        for (std::size_t c = 1; c < cols; ++c) {
            if (row[c] > row[best]) best = c;
        }
        out[r] = static_cast<std::int32_t>(best);
    }
    return out;
}

std::vector<std::int32_t> ensemble_predict(std::span<const Tensor<float>> member_probs) {
    if (member_probs.empty()) throw UsageError("ensemble_predict: no members");
    const Shape& shape = member_probs.front().shape();
    if (shape.size() != 2) throw DimensionError("ensemble_predict: expected [B,C] rows");
    std::vector<double> acc(shape_numel(shape), 0.0);
    for (const auto& p : member_probs) {
        if (p.shape() != shape) throw DimensionError("ensemble_predict: member shapes differ");
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p.data()[i];
    }
    std::vector<float> mean(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) mean[i] = static_cast<float>(acc[i] / member_probs.size());
    return argmax_rows(mean, shape[0], shape[1]);
}

EvalResult evaluate(std::span<Network<float>* const> nets, const Dataset& data, std::size_t chunk) {
    if (nets.empty()) throw UsageError("evaluate: no networks");
    if (data.size() == 0) throw DataError("evaluate: empty dataset '" + data.split + "'");
    if (chunk == 0) chunk = data.size();
    const std::size_t K = nets.size();
    std::vector<NormMode> modes;
    for (auto* net : nets) {
        modes.push_back(net->mode());
        net->set_mode(NormMode::eval);
    }
    // Reverse order so a network listed twice gets its original mode back.
    auto restore = [&] {
        for (std::size_t k = K; k-- > 0;) nets[k]->set_mode(modes[k]);
    };
    NoGradGuard guard;
    std::vector<std::size_t> correct(K, 0);
    std::vector<double> ce_sum(K, 0.0);
    std::size_t ens_correct = 0;
    try {
        for (std::size_t start = 0; start < data.size(); start += chunk) {
            const std::size_t end = std::min(data.size(), start + chunk);
            std::vector<std::size_t> idx(end - start);
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
            Tensor<float> x = data.gather_images(idx);
            auto labels = data.gather_labels(idx);
            std::vector<Tensor<float>> probs;
            for (std::size_t k = 0; k < K; ++k) {
                Tensor<float> z = nets[k]->forward(x).logits;
                const std::size_t classes = z.dim(1);
                auto pred = argmax_rows(z.data(), idx.size(), classes);
                for (std::size_t b = 0; b < idx.size(); ++b) correct[k] += pred[b] == labels[b] ? 1 : 0;
                ce_sum[k] += cross_entropy(labels, z).item() * static_cast<double>(idx.size());
                probs.push_back(softmax(z, 1.0));
            }
            auto ens = ensemble_predict(probs);
            for (std::size_t b = 0; b < idx.size(); ++b) ens_correct += ens[b] == labels[b] ? 1 : 0;
        }
    } catch (...) {
        restore();
        throw;
    }
    restore();

    EvalResult r;
    r.count = data.size();
    const double n = static_cast<double>(data.size());
    for (std::size_t k = 0; k < K; ++k) {
        r.top1.push_back(100.0 * static_cast<double>(correct[k]) / n);
        r.ce.push_back(ce_sum[k] / n);
    }
    r.ensemble_top1 = 100.0 * static_cast<double>(ens_correct) / n;
    return r;
}

}  // namespace afd
