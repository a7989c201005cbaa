#include "haemsa/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "haemsa/error.hpp"

namespace haemsa {

const char* to_string(ObjectiveMode m) {
    return m == ObjectiveMode::WeightedSum ? "weighted_sum" : "attention";
}

ObjectiveMode objective_mode_from_string(const std::string& s) {
    if (s == "weighted_sum") return ObjectiveMode::WeightedSum;
    if (s == "attention") return ObjectiveMode::Attention;
    throw ConfigError("unknown objective mode '" + s + "' (expected weighted_sum or attention)");
}

void LossConfig::validate() const {
    bool any = false;
    for (double l : lambdas) {
        if (!(l >= 0.0)) throw ConfigError("lambda weights must be >= 0");
        any = any || l > 0.0;
    }
    if (!any) throw ConfigError("at least one lambda must be > 0");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (!(teacher_weight >= 0.0)) throw ConfigError("teacher_weight must be >= 0");
    if (!(kl_epsilon > 0.0 && kl_epsilon <= 1e-3)) throw ConfigError("kl_epsilon must be in (0, 1e-3]");
    if (!(kl_temperature > 0.0)) throw ConfigError("kl_temperature must be > 0");
}

double task_loss(const TaskDescriptor& desc, std::span<const double> prediction, double label,
                 double eps) {
    if (desc.kind == TaskKind::Regression) {
        if (prediction.size() != 1) throw ShapeError("regression prediction must be a scalar");
        const double d = prediction[0] - label;
        return d * d;
    }
    if (prediction.size() != static_cast<std::size_t>(desc.num_classes)) {
        throw ShapeError("prediction length != num_classes for task '" + desc.id + "'");
    }
    if (label < 0 || label >= desc.num_classes || label != std::floor(label)) {
        throw LabelError("label " + std::to_string(label) + " out of range for task '" + desc.id + "'");
    }
    return -std::log(std::max(prediction[static_cast<std::size_t>(label)], eps));
}

double mtl_loss(std::span<const double> losses, std::span<const double> weights) {
    if (losses.size() != weights.size()) throw ShapeError("mtl_loss: losses and weights differ in length");
    double sum = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) sum += weights[i] * losses[i];
    return sum;
}

namespace {

// Clamp to >= eps and renormalize.
std::vector<double> clamp_normalize(std::span<const double> p, double eps, double* sum_out = nullptr) {
    std::vector<double> out(p.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        out[i] = std::max(p[i], eps);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    if (sum_out) *sum_out = sum;
    return out;
}

}  // namespace

double kl_divergence(std::span<const double> p, std::span<const double> q, double eps) {
    if (p.size() != q.size()) throw ShapeError("kl_divergence: distributions differ in length");
    if (p.empty()) throw ShapeError("kl_divergence: empty distributions");
    const auto pc = clamp_normalize(p, eps);
    const auto qc = clamp_normalize(q, eps);
    double kl = 0.0;
    for (std::size_t i = 0; i < pc.size(); ++i) kl += pc[i] * std::log(pc[i] / qc[i]);
    return kl;
}

std::vector<double> kl_divergence_grad_q(std::span<const double> p, std::span<const double> q,
                                         double eps) {
    if (p.size() != q.size()) throw ShapeError("kl_divergence: distributions differ in length");
    // KL = sum p~ log p~ - sum p~ log c_i + log S, with c_i = max(q_i, eps), S = sum c.
    const auto pc = clamp_normalize(p, eps);
    double s = 0.0;
    for (double v : q) s += std::max(v, eps);
    std::vector<double> g(q.size(), 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] > eps) g[i] = -pc[i] / q[i] + 1.0 / s;
    }
    return g;
}

TransferLoss transfer_loss(const TaskDistributions& dists, double eps) {
    const auto& teacher = dists.stream_probs[idx(Stream::Shared)];
    if (teacher.size() == 0) throw StateError("transfer_loss: shared-stream distribution missing");
    TransferLoss out;
    std::array<double*, 3> slots{&out.kl_t, &out.kl_a, &out.kl_v};
    for (std::size_t i = 0; i < kModalities.size(); ++i) {
        const auto& student = dists.stream_probs[idx(kModalities[i])];
        if (student.size() == 0) {
            throw StateError(std::string("transfer_loss: stream '") + stream_tag(kModalities[i]) +
                             "' distribution missing");
        }
        *slots[i] = kl_divergence({teacher.data(), static_cast<std::size_t>(teacher.size())},
                                  {student.data(), static_cast<std::size_t>(student.size())}, eps);
    }
    out.total = out.kl_t + out.kl_a + out.kl_v;
    return out;
}

double total_loss(const LossReport& parts, const LossConfig& cfg) {
    cfg.validate();
    if (cfg.mode == ObjectiveMode::Attention) {
        return parts.mtl + cfg.beta * parts.kt + cfg.teacher_weight * parts.teacher;
    }
    if (parts.task_losses.size() != cfg.lambdas.size()) {
        throw ShapeError("weighted-sum objective needs exactly 4 task losses, got " +
                         std::to_string(parts.task_losses.size()));
    }
    double total = 0.0;
    for (std::size_t t = 0; t < cfg.lambdas.size(); ++t) total += cfg.lambdas[t] * parts.task_losses[t];
    total += cfg.gamma * (parts.kl_t + parts.kl_a + parts.kl_v);
    total += cfg.teacher_weight * parts.teacher;
    return total;
}

LossReport compute_losses(const HaenConfig& model_cfg, const ForwardResult& fwd,
                          const BatchTargets& targets, const LossConfig& cfg, OutputGrads* grads) {
    cfg.validate();
    const auto& tasks = model_cfg.tasks;
    const std::size_t T = tasks.size();
    if (targets.size() != T) throw ShapeError("targets must have one column per task");
    if (!cfg.task_active.empty() && cfg.task_active.size() != T) {
        throw ConfigError("task_active must have one entry per task");
    }
    if (cfg.mode == ObjectiveMode::WeightedSum && T != cfg.lambdas.size()) {
        throw ConfigError("weighted-sum objective needs exactly 4 tasks");
    }
    const Eigen::Index batch = fwd.tower_input.rows();
    if (batch == 0) throw ShapeError("empty batch");
    const double inv_b = 1.0 / static_cast<double>(batch);
    const double eps = cfg.kl_epsilon;

    LossReport r;
    r.samples = static_cast<std::size_t>(batch);
    r.task_losses.assign(T, 0.0);
    r.task_weights.assign(fwd.task_weights.data(), fwd.task_weights.data() + fwd.task_weights.size());

    if (grads) {
        *grads = OutputGrads{};
        grads->task_outputs.resize(T);
    }

    for (std::size_t t = 0; t < T; ++t) {
        if (targets[t].size() != static_cast<std::size_t>(batch)) {
            throw ShapeError("target column length != batch size");
        }
        if (!cfg.active(t)) continue;
        const auto& desc = tasks[t];
        const Matrix& out = fwd.task_outputs[t];
        const double coef =
            cfg.mode == ObjectiveMode::WeightedSum ? cfg.lambdas[t] : r.task_weights[t];
        Matrix g;
        if (grads) g = Matrix::Zero(out.rows(), out.cols());
        double sum = 0.0;
        for (Eigen::Index b = 0; b < batch; ++b) {
            const double y = targets[t][static_cast<std::size_t>(b)];
            sum += task_loss(desc, {out.row(b).data(), static_cast<std::size_t>(out.cols())}, y, eps);
            if (!grads) continue;
            if (desc.kind == TaskKind::Regression) {
                g(b, 0) = coef * 2.0 * (out(b, 0) - y) * inv_b;
            } else {
                const auto c = static_cast<Eigen::Index>(y);
                if (out(b, c) > eps) g(b, c) = -coef * inv_b / out(b, c);
            }
        }
        r.task_losses[t] = sum * inv_b;
        if (grads) grads->task_outputs[t] = std::move(g);
    }
    r.mtl = mtl_loss(r.task_losses, r.task_weights);

    // Knowledge transfer: teacher p_s is a constant target.
    const Matrix& ps = fwd.stream_probs[idx(Stream::Shared)];
    const double kl_coef = cfg.mode == ObjectiveMode::WeightedSum ? cfg.gamma : cfg.beta;
    std::array<double*, 3> slots{&r.kl_t, &r.kl_a, &r.kl_v};
    for (std::size_t i = 0; i < kModalities.size(); ++i) {
        const Matrix& pm = fwd.stream_probs[idx(kModalities[i])];
        Matrix g;
        const bool want_grad = grads && kl_coef > 0.0;
        if (want_grad) g = Matrix::Zero(pm.rows(), pm.cols());
        double sum = 0.0;
        for (Eigen::Index b = 0; b < batch; ++b) {
            const std::span<const double> p{ps.row(b).data(), static_cast<std::size_t>(ps.cols())};
            const std::span<const double> q{pm.row(b).data(), static_cast<std::size_t>(pm.cols())};
            sum += kl_divergence(p, q, eps);
            if (want_grad) {
                const auto gq = kl_divergence_grad_q(p, q, eps);
                for (std::size_t c = 0; c < gq.size(); ++c) {
                    g(b, static_cast<Eigen::Index>(c)) = kl_coef * inv_b * gq[c];
                }
            }
        }
        *slots[i] = sum * inv_b;
        if (want_grad) grads->stream_probs[idx(kModalities[i])] = std::move(g);
    }
    r.kt = r.kl_t + r.kl_a + r.kl_v;

    // Teacher supervision on the transfer task's labels.
    const auto& transfer = targets[model_cfg.transfer_task];
    {
        Matrix g;
        const bool want_grad = grads && cfg.teacher_weight > 0.0;
        if (want_grad) g = Matrix::Zero(ps.rows(), ps.cols());
        double sum = 0.0;
        for (Eigen::Index b = 0; b < batch; ++b) {
            const auto c = static_cast<Eigen::Index>(transfer[static_cast<std::size_t>(b)]);
            sum += -std::log(std::max(ps(b, c), eps));
            if (want_grad && ps(b, c) > eps) g(b, c) = -cfg.teacher_weight * inv_b / ps(b, c);
        }
        r.teacher = sum * inv_b;
        if (want_grad) grads->stream_probs[idx(Stream::Shared)] = std::move(g);
    }

    if (grads && cfg.mode == ObjectiveMode::Attention) {
        grads->task_weights = Vector::Map(r.task_losses.data(), static_cast<Eigen::Index>(T));
    }
    r.total = total_loss(r, cfg);
    return r;
}

}  // namespace haemsa
