#pragma once

// Independent reference computations shared by the unit and acceptance tests.
// Nothing here calls the library's forward/backward code for the quantity it
// checks; the model is only used to read weights and, for finite differences,
// to evaluate the loss at perturbed parameters.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "haemsa/dataset.hpp"
#include "haemsa/model.hpp"
#include "haemsa/nn.hpp"
#include "haemsa/objectives.hpp"

namespace oracle {

using haemsa::Matrix;

inline long double act(haemsa::nn::Activation a, long double x) {
    switch (a) {
        case haemsa::nn::Activation::Tanh:
            return std::tanh(x);
        case haemsa::nn::Activation::Relu:
            return x > 0 ? x : 0;
        default:
            return x;
    }
}

/// Scalar long-double MLP forward for one sample.
inline std::vector<long double> mlp(const haemsa::nn::Mlp& net, std::vector<long double> x) {
    for (const auto& layer : net.layers()) {
        std::vector<long double> y(layer.out_dim());
        for (std::size_t o = 0; o < layer.out_dim(); ++o) {
            long double s = layer.bias(static_cast<Eigen::Index>(o));
            for (std::size_t i = 0; i < layer.in_dim(); ++i) {
                s += static_cast<long double>(layer.weights(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i))) * x[i];
            }
            y[o] = act(layer.activation, s);
        }
        if (layer.activation == haemsa::nn::Activation::Softmax) {
            long double mx = *std::max_element(y.begin(), y.end());
            long double z = 0;
            for (auto& v : y) z += (v = std::exp(v - mx));
            for (auto& v : y) v /= z;
        }
        x = std::move(y);
    }
    return x;
}

inline std::vector<long double> row(const Matrix& m, Eigen::Index r) {
    std::vector<long double> out(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(c)] = m(r, c);
    return out;
}

inline std::vector<long double> cat(std::initializer_list<const std::vector<long double>*> parts) {
    std::vector<long double> out;
    for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
    return out;
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
    }
    return m;
}

inline haemsa::ModalityBatch random_batch(std::mt19937_64& rng, Eigen::Index b, const haemsa::HaenConfig& c) {
    return {random_matrix(rng, b, c.d_t), random_matrix(rng, b, c.d_a), random_matrix(rng, b, c.d_v)};
}

inline std::vector<haemsa::LabelBundle> random_labels(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> s(-3.0, 3.0);
    std::uniform_int_distribution<int> e(0, 5);
    std::vector<haemsa::LabelBundle> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(haemsa::LabelBundle::from_sentiment(s(rng), e(rng)));
    return out;
}

inline haemsa::BatchTargets targets_for(const std::vector<haemsa::TaskDescriptor>& tasks,
                                        const std::vector<haemsa::LabelBundle>& labels) {
    haemsa::BatchTargets t(tasks.size());
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        for (const auto& l : labels) t[k].push_back(haemsa::label_value(tasks[k], l));
    }
    return t;
}

/// Total loss with the distillation teacher's KL contribution frozen at
/// `teacher` while the teacher's own cross-entropy term stays live. This is the
/// function whose gradient the backward pass computes.
inline double stop_gradient_total(const haemsa::HaenModel& model, const haemsa::ModalityBatch& batch,
                                  const haemsa::BatchTargets& targets, const haemsa::LossConfig& loss,
                                  const Matrix& teacher) {
    const auto fwd = model.forward_full(batch, loss.kl_temperature);
    const auto live = haemsa::compute_losses(model.config(), fwd, targets, loss);
    auto frozen_fwd = fwd;
    frozen_fwd.stream_probs[haemsa::idx(haemsa::Stream::Shared)] = teacher;
    const auto frozen = haemsa::compute_losses(model.config(), frozen_fwd, targets, loss);
    return frozen.total - loss.teacher_weight * frozen.teacher + loss.teacher_weight * live.teacher;
}

inline std::string group_of(const std::string& block_name) {
    return block_name.substr(0, block_name.find(".layer"));
}

struct GroupError {
    double rel = 0.0;          // ||analytic - numeric|| / max(||analytic|| + ||numeric||, floor)
    double analytic_norm = 0.0;
};

/// Central finite differences (step h) of the stop-gradient total against the
/// model's analytic gradient, per parameter group.
inline std::map<std::string, GroupError> model_gradient_errors(haemsa::HaenModel& model,
                                                               const haemsa::ModalityBatch& batch,
                                                               const haemsa::BatchTargets& targets,
                                                               const haemsa::LossConfig& loss,
                                                               double h = 1e-5) {
    haemsa::ForwardCache cache;
    const auto fwd = model.forward_full(batch, loss.kl_temperature, &cache);
    haemsa::OutputGrads grads;
    haemsa::compute_losses(model.config(), fwd, targets, loss, &grads);
    const auto analytic = model.backward(fwd, cache, grads);
    const Matrix teacher = fwd.stream_probs[haemsa::idx(haemsa::Stream::Shared)];

    auto params = model.flatten();
    std::map<std::string, std::pair<double, std::pair<double, double>>> acc;  // diff^2, (a^2, n^2)
    for (std::size_t b = 0; b < params.layout.size(); ++b) {
        const auto& blk = params.layout[b];
        auto& slot = acc[group_of(blk.name)];
        for (std::size_t i = blk.offset; i < blk.offset + blk.size(); ++i) {
            const double orig = params.values[i];
            params.values[i] = orig + h;
            model.unflatten(params);
            const double up = stop_gradient_total(model, batch, targets, loss, teacher);
            params.values[i] = orig - h;
            model.unflatten(params);
            const double down = stop_gradient_total(model, batch, targets, loss, teacher);
            params.values[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic.values[i];
            slot.first += (a - numeric) * (a - numeric);
            slot.second.first += a * a;
            slot.second.second += numeric * numeric;
        }
    }
    model.unflatten(params);
    std::map<std::string, GroupError> out;
    for (const auto& [g, v] : acc) {
        const double an = std::sqrt(v.second.first);
        const double nu = std::sqrt(v.second.second);
        out[g] = {std::sqrt(v.first) / std::max(an + nu, 1e-9), an};
    }
    return out;
}

/// Small random configuration covering the structural switches.
inline haemsa::HaenConfig random_small_config(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dim(2, 4), width(2, 4), lv(1, 3), coin(0, 1);
    haemsa::HaenConfig c = haemsa::HaenConfig::defaults(dim(rng), dim(rng), dim(rng));
    for (auto& w : c.expert_widths) {
        w = coin(rng) ? std::vector<int>{width(rng), width(rng)} : std::vector<int>{width(rng)};
    }
    c.fusion_mode = coin(rng) && coin(rng) ? haemsa::FusionMode::ConcatLinear : haemsa::FusionMode::Hierarchical;
    c.levels = c.fusion_mode == haemsa::FusionMode::ConcatLinear ? 1 : lv(rng);
    c.fusion_widths.clear();
    for (int l = 0; l < c.levels; ++l) {
        haemsa::StreamWidths fw;
        for (auto& w : fw) w = {width(rng)};
        c.fusion_widths.push_back(fw);
    }
    for (auto& w : c.tower_widths) w = {width(rng)};
    c.cross_modal = coin(rng) || coin(rng);
    c.attention_gates = coin(rng) || coin(rng);
    return c;
}

/// Brute-force metric oracles.
inline int bin7(double s) { return static_cast<int>(std::lround(std::clamp(s, -3.0, 3.0))) + 3; }
inline int bin5(double s) { return static_cast<int>(std::lround(std::clamp(s, -2.0, 2.0))) + 2; }
inline int bin2(double s) { return s >= 0.0 ? 1 : 0; }

struct MetricOracle {
    double mae = 0, acc7 = 0, acc5 = 0, acc2 = 0, weighted_f1 = 0;
    std::vector<double> f1;
};

inline MetricOracle metric_oracle(const std::vector<double>& p, const std::vector<double>& y,
                                  const std::vector<int>& cp, const std::vector<int>& cy, int k) {
    MetricOracle o;
    const double n = static_cast<double>(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        o.mae += std::fabs(p[i] - y[i]) / n;
        o.acc7 += (bin7(p[i]) == bin7(y[i])) * 100.0 / n;
        o.acc5 += (bin5(p[i]) == bin5(y[i])) * 100.0 / n;
        o.acc2 += (bin2(p[i]) == bin2(y[i])) * 100.0 / n;
    }
    const double m = static_cast<double>(cp.size());
    for (int c = 0; c < k; ++c) {
        double tp = 0, fp = 0, fn = 0, support = 0;
        for (std::size_t i = 0; i < cp.size(); ++i) {
            tp += cp[i] == c && cy[i] == c;
            fp += cp[i] == c && cy[i] != c;
            fn += cp[i] != c && cy[i] == c;
            support += cy[i] == c;
        }
        const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        o.f1.push_back(f1);
        o.weighted_f1 += 100.0 * support / m * f1;
    }
    return o;
}

}  // namespace oracle
