#pragma once

// Dense-network primitives: layers, MLPs, reverse-mode gradients, Adam.
//
// Activations are batched row-wise: a batch of B inputs of width n is a
// B x n row-major matrix. Weight matrices are out_dim x in_dim, so a layer
// computes Y = act(X * W^T + 1 b^T).

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "haemsa/rng.hpp"

namespace haemsa {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

namespace nn {

enum class Activation { Tanh, Relu, Identity, Softmax };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseLayer {
    Matrix weights;  // out_dim x in_dim
    Vector bias;     // out_dim
    Activation activation = Activation::Tanh;

    DenseLayer() = default;
    DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation act);

    std::size_t in_dim() const { return static_cast<std::size_t>(weights.cols()); }
    std::size_t out_dim() const { return static_cast<std::size_t>(weights.rows()); }
    std::size_t param_count() const { return out_dim() * in_dim() + out_dim(); }
};

/// One contiguous tensor inside a flat parameter vector.
struct ParamBlock {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;
    bool is_bias = false;

    std::size_t size() const { return rows * cols; }
    bool same_shape(const ParamBlock& o) const { return rows == o.rows && cols == o.cols; }
    bool operator==(const ParamBlock&) const = default;
};

using ParamLayout = std::vector<ParamBlock>;

/// Total element count of a layout; throws ShapeError if offsets are not contiguous.
std::size_t layout_size(const ParamLayout& layout);

/// Flat parameter (or gradient) vector together with its tensor layout.
struct ParamVector {
    std::vector<double> values;
    ParamLayout layout;

    ParamVector() = default;
    explicit ParamVector(ParamLayout l);  // zero-filled

    std::size_t size() const { return values.size(); }
    std::span<double> block(std::size_t i);
    std::span<const double> block(std::size_t i) const;
    /// Index of the block with this name, or -1.
    std::ptrdiff_t find(const std::string& name) const;

    bool operator==(const ParamVector&) const = default;
};

/// Multi-layer perceptron. Adjacent layer dimensions always chain.
class Mlp {
public:
    Mlp() = default;
    explicit Mlp(std::vector<DenseLayer> layers);

    /// Builds in_dim -> widths[0] -> ... -> widths.back(). Every layer uses
    /// `hidden` except the last, which uses `output`. Weights are zero.
    static Mlp make(std::size_t in_dim, const std::vector<int>& widths, Activation hidden,
                    Activation output);

    std::size_t in_dim() const { return layers_.front().in_dim(); }
    std::size_t out_dim() const { return layers_.back().out_dim(); }
    std::size_t param_count() const;
    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }

    /// Layout of this net's parameters; each layer contributes W (row-major) then b.
    ParamLayout layout(const std::string& prefix = "", std::size_t base_offset = 0) const;

    /// Glorot-uniform weights, zero biases.
    void init_xavier(Rng& rng);
    void set_zero();

private:
    void validate() const;
    std::vector<DenseLayer> layers_;
};

/// Per-forward cache used by the backward pass.
struct GradTape {
    std::vector<Matrix> inputs;   // input to each layer
    std::vector<Matrix> outputs;  // post-activation output of each layer

    bool empty() const { return inputs.empty(); }
    void clear() {
        inputs.clear();
        outputs.clear();
    }
};

/// Batched forward pass. If `tape` is non-null it is cleared and refilled.
Matrix forward(const Mlp& net, const Matrix& input, GradTape* tape = nullptr);
/// Single-sample forward pass.
Vector forward(const Mlp& net, const Vector& input, GradTape* tape = nullptr);

/// Backward pass. Adds dLoss/dparams into `param_grad` (length param_count(),
/// same order as flatten_params) and returns dLoss/dinput.
Matrix accumulate_backward(const Mlp& net, const GradTape& tape, const Matrix& output_grad,
                           std::span<double> param_grad);

struct BackwardResult {
    ParamVector param_grad;
    Matrix input_grad;
};

BackwardResult backward(const Mlp& net, const GradTape& tape, const Matrix& output_grad);

/// Writes the net's parameters into `out` (length param_count()).
void flatten_into(const Mlp& net, std::span<double> out);
/// Reads the net's parameters from `in` (length param_count()).
void unflatten_from(Mlp& net, std::span<const double> in);

ParamVector flatten_params(const Mlp& net);
void unflatten_params(const ParamVector& params, Mlp& net);

/// Adam moments. Lazily sized on first step.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamOptions& opts = {});
void adam_step(ParamVector& params, const ParamVector& grads, AdamState& state, double lr,
               const AdamOptions& opts = {});

/// Row-wise softmax.
Matrix softmax_rows(const Matrix& logits);
/// Given y = softmax(z) row-wise and dL/dy, returns dL/dz.
Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy);

/// Glorot-uniform bound sqrt(6 / (fan_in + fan_out)).
double xavier_bound(std::size_t fan_in, std::size_t fan_out);

/// Initializes every block of `params` in place: weight blocks Glorot-uniform
/// (rows = fan_out, cols = fan_in), bias blocks zero.
void init_blocks(ParamVector& params, Rng& rng);
void init_block(ParamVector& params, std::size_t block, Rng& rng);

}  // namespace nn
}  // namespace haemsa
