#pragma once

#include <array>
#include <span>
#include <vector>

#include "haemsa/model.hpp"
#include "haemsa/tasks.hpp"

namespace haemsa {

enum class ObjectiveMode {
    WeightedSum,  // sum_t lambda_t L_t + gamma (KL_t + KL_a + KL_v)
    Attention,    // sum_t w_t L_t + beta L_KT
};

const char* to_string(ObjectiveMode m);
ObjectiveMode objective_mode_from_string(const std::string& s);

struct LossConfig {
    std::array<double, 4> lambdas{1.0, 1.0, 1.0, 1.0};
    double gamma = 0.5;
    double beta = 0.5;
    double kl_epsilon = 1e-8;
    double kl_temperature = 1.0;
    ObjectiveMode mode = ObjectiveMode::WeightedSum;
    /// Cross-entropy of the shared probe against the transfer-task label. The
    /// shared probe is the distillation teacher and receives no gradient from
    /// the KL terms, so this is what trains it.
    double teacher_weight = 1.0;
    /// Inactive tasks are skipped entirely (reported loss 0). Empty = all active.
    std::vector<bool> task_active;

    bool active(std::size_t task) const { return task_active.empty() || task_active.at(task); }
    void validate() const;
    bool operator==(const LossConfig&) const = default;
};

struct LossReport {
    std::vector<double> task_losses;   // L_t (batch means)
    std::vector<double> task_weights;  // w_t
    double mtl = 0.0;                  // sum_t w_t L_t
    double kl_t = 0.0;
    double kl_a = 0.0;
    double kl_v = 0.0;
    double kt = 0.0;                   // KL_t + KL_a + KL_v
    double teacher = 0.0;
    double total = 0.0;
    std::size_t samples = 0;
};

struct TransferLoss {
    double kl_t = 0.0;
    double kl_a = 0.0;
    double kl_v = 0.0;
    double total = 0.0;
};

/// Per-task label columns for a batch: targets[t][b].
using BatchTargets = std::vector<std::vector<double>>;

/// Single-sample task loss. Regression: (pred - label)^2. Classification:
/// -log(max(p[label], eps)).
double task_loss(const TaskDescriptor& desc, std::span<const double> prediction, double label,
                 double eps = 1e-8);

/// sum_t w_t L_t.
double mtl_loss(std::span<const double> losses, std::span<const double> weights);

/// KL(p || q) with both clamped to >= eps and renormalized.
double kl_divergence(std::span<const double> p, std::span<const double> q, double eps = 1e-8);

/// d KL(p || q) / dq with p held constant (same clamping as kl_divergence).
std::vector<double> kl_divergence_grad_q(std::span<const double> p, std::span<const double> q,
                                         double eps = 1e-8);

/// KL(p_s || p_m) for m in {t, a, v}.
TransferLoss transfer_loss(const TaskDistributions& dists, double eps = 1e-8);

/// Total objective from the parts of a report.
double total_loss(const LossReport& parts, const LossConfig& cfg);

/// Batch losses for a forward pass. If `grads` is non-null it receives
/// dTotal/d(outputs) for HaenModel::backward.
LossReport compute_losses(const HaenConfig& model_cfg, const ForwardResult& fwd,
                          const BatchTargets& targets, const LossConfig& cfg,
                          OutputGrads* grads = nullptr);

}  // namespace haemsa
