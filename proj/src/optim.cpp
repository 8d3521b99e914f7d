#include "afd/optim.hpp"

#include <algorithm>
#include <cmath>

#include "afd/errors.hpp"

namespace afd {

double lr_at(int epoch, double base_lr, std::span<const int> milestones, double factor) {
    double lr = base_lr;
    for (int m : milestones) {
        if (m <= epoch) lr *= factor;
    }
    return lr;
}

namespace {

std::vector<float> load_buffer(const std::vector<NamedArray>& entries, const std::string& name, std::size_t size) {
    const NamedArray* e = find_array(entries, name);
    if (e == nullptr) return {};
    if (e->values.size() != size) throw StateError("optimizer state '" + name + "' has wrong size");
    return e->values;
}

}  // namespace

Sgd::Sgd(std::vector<NamedTensor<float>> params, Options options)
    : params_(std::move(params)), options_(options), momentum_(params_.size()) {}

void Sgd::step() {
    const float lr = static_cast<float>(options_.lr);
    const float mu = static_cast<float>(options_.momentum);
    const float wd = static_cast<float>(options_.weight_decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor<float>& p = params_[i].tensor;
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto w = p.data();
        auto& buf = momentum_[i];
        const bool first = buf.empty();
        if (first) buf.resize(w.size());
        std::vector<float> next(w.size());
        for (std::size_t k = 0; k < w.size(); ++k) {
            const float d = g[k] + wd * w[k];
            buf[k] = first ? d : mu * buf[k] + d;
            next[k] = w[k] - lr * buf[k];
        }
        p.assign(std::move(next));
    }
}

void Sgd::zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
}

std::vector<NamedArray> Sgd::state(const std::string& prefix) const {
    std::vector<NamedArray> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (momentum_[i].empty()) continue;
        out.push_back({prefix + params_[i].name + ".momentum", params_[i].tensor.shape(), momentum_[i]});
    }
    return out;
}

void Sgd::load_state(const std::string& prefix, const std::vector<NamedArray>& entries) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        momentum_[i] = load_buffer(entries, prefix + params_[i].name + ".momentum", params_[i].tensor.numel());
    }
}

Adam::Adam(std::vector<NamedTensor<float>> params, Options options)
    : params_(std::move(params)),
      options_(options),
      m_(params_.size()),
      v_(params_.size()),
      steps_(params_.size(), 0) {}

void Adam::step() {
    const float lr = static_cast<float>(options_.lr);
    const float b1 = static_cast<float>(options_.beta1);
    const float b2 = static_cast<float>(options_.beta2);
    const float eps = static_cast<float>(options_.eps);
    const float wd = static_cast<float>(options_.weight_decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor<float>& p = params_[i].tensor;
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto w = p.data();
        if (m_[i].empty()) {
            m_[i].assign(w.size(), 0.0f);
            v_[i].assign(w.size(), 0.0f);
        }
        const std::uint32_t t = ++steps_[i];
        const float bc1 = 1.0f - static_cast<float>(std::pow(options_.beta1, t));
        const float bc2 = 1.0f - static_cast<float>(std::pow(options_.beta2, t));
        std::vector<float> next(w.size());
        for (std::size_t k = 0; k < w.size(); ++k) {
            const float d = g[k] + wd * w[k];
            m_[i][k] = b1 * m_[i][k] + (1.0f - b1) * d;
            v_[i][k] = b2 * v_[i][k] + (1.0f - b2) * d * d;
            const float m_hat = m_[i][k] / bc1;
            const float v_hat = v_[i][k] / bc2;
            next[k] = w[k] - lr * m_hat / (std::sqrt(v_hat) + eps);
        }
        p.assign(std::move(next));
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
}

std::vector<NamedArray> Adam::state(const std::string& prefix) const {
    std::vector<NamedArray> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (m_[i].empty()) continue;
        const std::string base = prefix + params_[i].name;
        out.push_back({base + ".m", params_[i].tensor.shape(), m_[i]});
        out.push_back({base + ".v", params_[i].tensor.shape(), v_[i]});
        out.push_back({base + ".step", {1}, {static_cast<float>(steps_[i])}});
    }
    return out;
}

void Adam::load_state(const std::string& prefix, const std::vector<NamedArray>& entries) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const std::string base = prefix + params_[i].name;
        const std::size_t n = params_[i].tensor.numel();
        m_[i] = load_buffer(entries, base + ".m", n);
        v_[i] = load_buffer(entries, base + ".v", n);
        auto step = load_buffer(entries, base + ".step", 1);
        steps_[i] = step.empty() ? 0 : static_cast<std::uint32_t>(step[0]);
        if (m_[i].empty() != v_[i].empty()) throw StateError("incomplete Adam state for '" + base + "'");
    }
}

}  // namespace afd
