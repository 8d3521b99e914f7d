#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "afd/checkpoint.hpp"
#include "afd/nn.hpp"

namespace afd {

/// Multi-step schedule: base_lr * factor^(number of milestones <= epoch).
double lr_at(int epoch, double base_lr, std::span<const int> milestones, double factor = 0.1);

/// Momentum SGD with L2 weight decay folded into the gradient.
class Sgd {
public:
    struct Options {
        double lr = 0.1;
        double momentum = 0.9;
        double weight_decay = 1e-4;
    };

    Sgd(std::vector<NamedTensor<float>> params, Options options);

    /// Parameters that have no gradient yet are skipped.
    void step();
    void zero_grad();
    void set_lr(double lr) { options_.lr = lr; }
    double lr() const { return options_.lr; }

    const std::vector<NamedTensor<float>>& params() const { return params_; }
    std::vector<NamedArray> state(const std::string& prefix) const;
    void load_state(const std::string& prefix, const std::vector<NamedArray>& entries);

private:
    std::vector<NamedTensor<float>> params_;
    Options options_;
    std::vector<std::vector<float>> momentum_;  // empty until the first step touching the param
};

/// Adam with L2 weight decay folded into the gradient (not decoupled).
class Adam {
public:
    struct Options {
        double lr = 2e-5;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 1e-1;
    };

    Adam(std::vector<NamedTensor<float>> params, Options options);

    void step();
    void zero_grad();
    void set_lr(double lr) { options_.lr = lr; }
    double lr() const { return options_.lr; }

    const std::vector<NamedTensor<float>>& params() const { return params_; }
    std::vector<NamedArray> state(const std::string& prefix) const;
    void load_state(const std::string& prefix, const std::vector<NamedArray>& entries);

private:
    std::vector<NamedTensor<float>> params_;
    Options options_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    std::vector<std::uint32_t> steps_;
};

}  // namespace afd
