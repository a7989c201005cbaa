#include "haemsa/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "haemsa/error.hpp"

namespace haemsa::nn {

const char* to_string(Activation a) {
    switch (a) {
        case Activation::Tanh:
            return "tanh";
        case Activation::Relu:
            return "relu";
        case Activation::Identity:
            return "identity";
        case Activation::Softmax:
            return "softmax";
    }
    return "?";
}

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    if (s == "identity") return Activation::Identity;
    if (s == "softmax") return Activation::Softmax;
    throw ConfigError("unknown activation '" + s + "'");
}

DenseLayer::DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation act)
    : weights(Matrix::Zero(static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in_dim))),
      bias(Vector::Zero(static_cast<Eigen::Index>(out_dim))),
      activation(act) {
    if (in_dim == 0 || out_dim == 0) {
        throw ShapeError("dense layer dimensions must be >= 1");
    }
}

// ---------------------------------------------------------------------------
// ParamVector

std::size_t layout_size(const ParamLayout& layout) {
    std::size_t expected = 0;
    for (const auto& b : layout) {
        if (b.offset != expected) {
            throw ShapeError("parameter layout is not contiguous at block '" + b.name + "'");
        }
        expected += b.size();
    }
    return expected;
}

ParamVector::ParamVector(ParamLayout l) : values(layout_size(l), 0.0), layout(std::move(l)) {}

std::span<double> ParamVector::block(std::size_t i) {
    const auto& b = layout.at(i);
    return std::span<double>(values).subspan(b.offset, b.size());
}

std::span<const double> ParamVector::block(std::size_t i) const {
    const auto& b = layout.at(i);
    return std::span<const double>(values).subspan(b.offset, b.size());
}

std::ptrdiff_t ParamVector::find(const std::string& name) const {
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (layout[i].name == name) return static_cast<std::ptrdiff_t>(i);
    }
    return -1;
}

// ---------------------------------------------------------------------------
// Mlp

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

Mlp Mlp::make(std::size_t in_dim, const std::vector<int>& widths, Activation hidden,
              Activation output) {
    if (widths.empty()) throw ShapeError("an MLP needs at least one layer");
    std::vector<DenseLayer> layers;
    std::size_t prev = in_dim;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (widths[i] < 1) throw ShapeError("layer width must be >= 1");
        const bool last = i + 1 == widths.size();
        layers.emplace_back(prev, static_cast<std::size_t>(widths[i]), last ? output : hidden);
        prev = static_cast<std::size_t>(widths[i]);
    }
    return Mlp(std::move(layers));
}

void Mlp::validate() const {
    if (layers_.empty()) throw ShapeError("an MLP needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.in_dim() == 0 || l.out_dim() == 0) throw ShapeError("layer dimensions must be >= 1");
        if (static_cast<std::size_t>(l.bias.size()) != l.out_dim()) {
            throw ShapeError("bias length does not match layer out_dim");
        }
        if (i + 1 < layers_.size()) {
            if (l.activation == Activation::Softmax) {
                throw ShapeError("softmax is only allowed on the final layer");
            }
            if (l.out_dim() != layers_[i + 1].in_dim()) {
                throw ShapeError("layer " + std::to_string(i) + " out_dim " +
                                 std::to_string(l.out_dim()) + " does not chain into in_dim " +
                                 std::to_string(layers_[i + 1].in_dim()));
            }
        }
    }
}

std::size_t Mlp::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.param_count();
    return n;
}

ParamLayout Mlp::layout(const std::string& prefix, std::size_t base_offset) const {
    ParamLayout out;
    std::size_t off = base_offset;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        const std::string stem = prefix + "layer" + std::to_string(i);
        out.push_back({stem + ".W", l.out_dim(), l.in_dim(), off, false});
        off += l.out_dim() * l.in_dim();
        out.push_back({stem + ".b", l.out_dim(), 1, off, true});
        off += l.out_dim();
    }
    return out;
}

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void Mlp::init_xavier(Rng& rng) {
    for (auto& l : layers_) {
        std::uniform_real_distribution<double> dist(-xavier_bound(l.in_dim(), l.out_dim()),
                                                    xavier_bound(l.in_dim(), l.out_dim()));
        for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = dist(rng);
        }
        l.bias.setZero();
    }
}

void Mlp::set_zero() {
    for (auto& l : layers_) {
        l.weights.setZero();
        l.bias.setZero();
    }
}

// ---------------------------------------------------------------------------
// Forward / backward

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            out(r, c) = std::exp(logits(r, c) - mx);
            sum += out(r, c);
        }
        out.row(r) /= sum;
    }
    return out;
}

Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy) {
    Matrix dz(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double dot = y.row(r).dot(dy.row(r));
        dz.row(r) = y.row(r).cwiseProduct(dy.row(r).array().matrix() -
                                          Eigen::RowVectorXd::Constant(y.cols(), dot));
    }
    return dz;
}

namespace {

void apply_activation(Activation a, Matrix& z) {
    switch (a) {
        case Activation::Tanh:
            z = z.array().tanh().matrix();
            break;
        case Activation::Relu:
            z = z.cwiseMax(0.0);
            break;
        case Activation::Identity:
            break;
        case Activation::Softmax:
            z = softmax_rows(z);
            break;
    }
}

// dL/dz given the post-activation output y and dL/dy.
Matrix activation_backward(Activation a, const Matrix& y, const Matrix& dy) {
    switch (a) {
        case Activation::Tanh:
            return (dy.array() * (1.0 - y.array().square())).matrix();
        case Activation::Relu:
            return (dy.array() * (y.array() > 0.0).cast<double>()).matrix();
        case Activation::Identity:
            return dy;
        case Activation::Softmax:
            return softmax_rows_backward(y, dy);
    }
    return dy;
}

}  // namespace

Matrix forward(const Mlp& net, const Matrix& input, GradTape* tape) {
    if (static_cast<std::size_t>(input.cols()) != net.in_dim()) {
        throw ShapeError("input width " + std::to_string(input.cols()) + " != net in_dim " +
                         std::to_string(net.in_dim()));
    }
    if (tape) tape->clear();
    Matrix x = input;
    for (const auto& l : net.layers()) {
        Matrix z = x * l.weights.transpose();
        z.rowwise() += l.bias.transpose();
        apply_activation(l.activation, z);
        if (tape) {
            tape->inputs.push_back(std::move(x));
            tape->outputs.push_back(z);
        }
        x = std::move(z);
    }
    return x;
}

Vector forward(const Mlp& net, const Vector& input, GradTape* tape) {
    Matrix row = input.transpose();
    Matrix out = forward(net, row, tape);
    return out.row(0).transpose();
}

Matrix accumulate_backward(const Mlp& net, const GradTape& tape, const Matrix& output_grad,
                           std::span<double> param_grad) {
    const auto& layers = net.layers();
    if (tape.empty() || tape.inputs.size() != layers.size()) {
        throw StateError("backward called without a matching forward tape");
    }
    if (static_cast<std::size_t>(output_grad.cols()) != net.out_dim() ||
        output_grad.rows() != tape.outputs.back().rows()) {
        throw ShapeError("output gradient shape does not match the forward pass");
    }
    if (param_grad.size() != net.param_count()) {
        throw ShapeError("gradient buffer length != parameter count");
    }

    // Offsets of each layer's W block in flatten order.
    std::vector<std::size_t> offsets(layers.size());
    std::size_t off = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        offsets[i] = off;
        off += layers[i].param_count();
    }

    Matrix grad = output_grad;
    for (std::size_t k = layers.size(); k-- > 0;) {
        const auto& l = layers[k];
        const Matrix dz = activation_backward(l.activation, tape.outputs[k], grad);
        const auto out = static_cast<Eigen::Index>(l.out_dim());
        const auto in = static_cast<Eigen::Index>(l.in_dim());
        Eigen::Map<Matrix> dw(param_grad.data() + offsets[k], out, in);
        Eigen::Map<Vector> db(param_grad.data() + offsets[k] + l.out_dim() * l.in_dim(), out);
        dw.noalias() += dz.transpose() * tape.inputs[k];
        db += dz.colwise().sum().transpose();
        grad = dz * l.weights;
    }
    return grad;
}

BackwardResult backward(const Mlp& net, const GradTape& tape, const Matrix& output_grad) {
    BackwardResult r;
    r.param_grad = ParamVector(net.layout());
    r.input_grad = accumulate_backward(net, tape, output_grad, r.param_grad.values);
    return r;
}

// ---------------------------------------------------------------------------
// Flatten / unflatten

void flatten_into(const Mlp& net, std::span<double> out) {
    if (out.size() != net.param_count()) throw ShapeError("flatten buffer length != parameter count");
    std::size_t off = 0;
    for (const auto& l : net.layers()) {
        const auto n = l.out_dim() * l.in_dim();
        std::copy(l.weights.data(), l.weights.data() + n, out.begin() + static_cast<long>(off));
        off += n;
        std::copy(l.bias.data(), l.bias.data() + l.out_dim(), out.begin() + static_cast<long>(off));
        off += l.out_dim();
    }
}

void unflatten_from(Mlp& net, std::span<const double> in) {
    if (in.size() != net.param_count()) {
        throw ShapeError("parameter vector length " + std::to_string(in.size()) +
                         " != network parameter count " + std::to_string(net.param_count()));
    }
    std::size_t off = 0;
    for (auto& l : net.layers()) {
        const auto n = l.out_dim() * l.in_dim();
        std::copy(in.begin() + static_cast<long>(off), in.begin() + static_cast<long>(off + n),
                  l.weights.data());
        off += n;
        std::copy(in.begin() + static_cast<long>(off),
                  in.begin() + static_cast<long>(off + l.out_dim()), l.bias.data());
        off += l.out_dim();
    }
}

ParamVector flatten_params(const Mlp& net) {
    ParamVector p(net.layout());
    flatten_into(net, p.values);
    return p;
}

void unflatten_params(const ParamVector& params, Mlp& net) {
    const auto expected = net.layout();
    if (params.layout.size() != expected.size()) {
        throw ShapeError("parameter layout does not match network architecture");
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (!params.layout[i].same_shape(expected[i]) || params.layout[i].offset != expected[i].offset) {
            throw ShapeError("parameter block '" + params.layout[i].name +
                             "' does not match network architecture");
        }
    }
    unflatten_from(net, params.values);
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamOptions& opts) {
    if (params.size() != grads.size()) throw ShapeError("adam: params and grads differ in length");
    if (state.step == 0 && state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeError("adam: moment buffers do not match parameter length");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = opts.beta1 * state.m[i] + (1.0 - opts.beta1) * g;
        state.v[i] = opts.beta2 * state.v[i] + (1.0 - opts.beta2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + opts.epsilon);
    }
}

void adam_step(ParamVector& params, const ParamVector& grads, AdamState& state, double lr,
               const AdamOptions& opts) {
    if (params.layout.size() != grads.layout.size()) throw ShapeError("adam: layout mismatch");
    for (std::size_t i = 0; i < params.layout.size(); ++i) {
        if (!params.layout[i].same_shape(grads.layout[i]) ||
            params.layout[i].offset != grads.layout[i].offset) {
            throw ShapeError("adam: layout mismatch at block '" + params.layout[i].name + "'");
        }
    }
    adam_step(std::span<double>(params.values), std::span<const double>(grads.values), state, lr,
              opts);
}

// ---------------------------------------------------------------------------
// Block init

void init_block(ParamVector& params, std::size_t block, Rng& rng) {
    const auto& b = params.layout.at(block);
    auto span = params.block(block);
    if (b.is_bias) {
        std::fill(span.begin(), span.end(), 0.0);
        return;
    }
    const double bound = xavier_bound(b.cols, b.rows);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : span) v = dist(rng);
}

void init_blocks(ParamVector& params, Rng& rng) {
    for (std::size_t i = 0; i < params.layout.size(); ++i) init_block(params, i, rng);
}

}  // namespace haemsa::nn
