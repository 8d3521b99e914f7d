#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "afd/checkpoint.hpp"
#include "afd/config.hpp"
#include "afd/data.hpp"
#include "afd/nn.hpp"
#include "afd/optim.hpp"

namespace afd {

/// Knowledge flows from `src` to `dst`: dst learns to mimic src.
struct Edge {
    std::size_t src = 0;
    std::size_t dst = 0;
    bool operator==(const Edge&) const = default;
};

/// K = 2: both directions. K >= 3: i -> (i + 1) mod K. The offline method
/// has a single teacher-to-student edge; vanilla and kd_ensemble have none.
std::vector<Edge> build_edges(Method method, std::size_t num_nets);

/// Derives an independent stream seed from the run seed and a stream id.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Losses and training accuracy of one network on one batch.
struct LossRecord {
    double ce = 0.0;
    double kl = 0.0;
    double g = 0.0;  // adversarial generator term, or the L1 alignment term
    double d = 0.0;  // discriminator loss of the edge feeding this network
    std::size_t correct = 0;
    std::size_t count = 0;
};

struct StepResult {
    std::vector<LossRecord> nets;
    std::size_t ensemble_correct = 0;
};

enum class Phase { logit, adversarial };

class DistillPlan {
public:
    /// Builds networks, edges, discriminators, transfer layers and optimizers.
    DistillPlan(const RunConfig& config, std::size_t in_channels, std::size_t num_classes);
    /// Same, around caller-supplied networks (one per configured net).
    DistillPlan(const RunConfig& config, std::vector<Network<float>> nets);

    DistillPlan(const DistillPlan&) = delete;
    DistillPlan& operator=(const DistillPlan&) = delete;

    /// One optimization step on a batch, dispatching on the method.
    StepResult train_step(const Tensor<float>& x, std::span<const std::int32_t> labels);

    /// Applies the schedules for a zero-based training epoch.
    void set_epoch(int epoch);
    double lr_logit() const { return lr_logit_; }
    double lr_adv() const { return lr_adv_; }

    void set_mode(NormMode mode);

    /// Loads network 0 of a checkpoint as the frozen teacher (offline method).
    void load_teacher(const std::string& path);

    /// Called after each phase of an AFD step. For tests.
    void set_phase_hook(std::function<void(Phase)> hook) { phase_hook_ = std::move(hook); }

    std::vector<NamedArray> state() const;
    void load_state(const std::vector<NamedArray>& entries);

    const RunConfig& config() const { return config_; }
    Method method() const { return config_.method; }
    std::size_t num_nets() const { return nets_.size(); }
    Network<float>& net(std::size_t k) { return nets_.at(k); }
    const Network<float>& net(std::size_t k) const { return nets_.at(k); }
    std::vector<Network<float>>& nets() { return nets_; }
    const std::vector<Edge>& edges() const { return edges_; }
    std::size_t num_discriminators() const { return discriminators_.size(); }
    Discriminator<float>& discriminator(std::size_t e) { return discriminators_.at(e); }
    std::size_t num_transfer_layers() const;
    TransferLayer<float>& transfer(std::size_t e) { return transfers_.at(e); }
    bool is_trainable(std::size_t k) const;

    const Sgd& sgd(std::size_t k) const { return *sgd_.at(k); }
    const Adam* adam_discriminators() const { return adam_d_.get(); }
    const Adam* adam_generators() const { return adam_g_.get(); }

private:
    void build_components();
    StepResult step_afd(const Tensor<float>& x, std::span<const std::int32_t> labels);
    StepResult step_dml(const Tensor<float>& x, std::span<const std::int32_t> labels);
    StepResult step_logit_only(const Tensor<float>& x, std::span<const std::int32_t> labels);
    StepResult step_l1(const Tensor<float>& x, std::span<const std::int32_t> labels);

    void step_sgd();
    void clear_grads();
    void tally(StepResult& out, const std::vector<Tensor<float>>& logits, std::span<const std::int32_t> labels,
               double temperature_for_ensemble = 1.0) const;

    RunConfig config_;
    std::vector<Network<float>> nets_;
    std::vector<Edge> edges_;
    std::vector<Discriminator<float>> discriminators_;
    std::vector<TransferLayer<float>> transfers_;
    std::vector<std::unique_ptr<Sgd>> sgd_;  // null for frozen networks
    std::unique_ptr<Adam> adam_d_;
    std::unique_ptr<Adam> adam_g_;
    double lr_logit_ = 0.0;
    double lr_adv_ = 0.0;
    std::function<void(Phase)> phase_hook_;
};

/// Index of the first maximum in each row of a [B,C] matrix.
std::vector<std::int32_t> argmax_rows(std::span<const float> values, std::size_t rows, std::size_t cols);

/// Ensemble prediction: argmax of the mean of the members' probability rows,
/// ties broken toward the lowest class index.
std::vector<std::int32_t> ensemble_predict(std::span<const Tensor<float>> member_probs);

struct EvalResult {
    std::vector<double> top1;  // per network, in percent
    double ensemble_top1 = 0.0;
    std::vector<double> ce;    // per network, mean cross-entropy
    std::size_t count = 0;
};

/// Eval-mode, gradient-free pass over `data`. Restores each network's mode.
EvalResult evaluate(std::span<Network<float>* const> nets, const Dataset& data, std::size_t chunk = 256);

}  // namespace afd
