#pragma once

// Hierarchical adaptive expert network.
//
// Level 0: one expert per modality (text, audio, visual) plus a shared expert
// over the concatenated modalities. Levels 1..L: each modality stream fuses
// its previous state with the previous shared state; the shared stream fuses
// its previous state with all three modality states. Task towers read the
// concatenated level-L streams, gated per sample by task-attention weights.
// Each stream also owns a linear probe whose softmax is the stream's
// distribution over the transfer task's classes.

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "haemsa/nn.hpp"
#include "haemsa/tasks.hpp"

namespace haemsa {

enum class Stream : std::size_t { Text = 0, Audio = 1, Visual = 2, Shared = 3 };
inline constexpr std::size_t kNumStreams = 4;
inline constexpr std::array<Stream, 3> kModalities = {Stream::Text, Stream::Audio, Stream::Visual};

const char* stream_tag(Stream s);  // "t", "a", "v", "s"
inline std::size_t idx(Stream s) { return static_cast<std::size_t>(s); }

enum class FusionMode {
    Hierarchical,  // tanh fusion MLPs, any depth
    ConcatLinear,  // one level, each block a single linear map over the concatenation
};

/// Per-stream width lists, indexed by Stream.
using StreamWidths = std::array<std::vector<int>, kNumStreams>;

struct HaenConfig {
    int d_t = 16;
    int d_a = 16;
    int d_v = 16;
    StreamWidths expert_widths;               // f_t, f_a, f_v, f_s
    int levels = 2;                           // L
    std::vector<StreamWidths> fusion_widths;  // one entry per level 1..L
    std::vector<std::vector<int>> tower_widths;  // hidden widths per task; head appended
    std::vector<TaskDescriptor> tasks;
    std::size_t transfer_task = kClass7Task;  // label space shared by the stream probes
    FusionMode fusion_mode = FusionMode::Hierarchical;
    bool cross_modal = true;      // modality streams receive the shared state during fusion
    bool attention_gates = true;  // towers gated by task attention; otherwise gate = 1

    /// Desk-scale default: experts [32,16], L=2, fusion [16], towers [16].
    static HaenConfig defaults(int d_t = 16, int d_a = 16, int d_v = 16);

    /// Throws ConfigError when the configuration cannot be instantiated.
    void validate() const;

    int input_dim(Stream s) const;
    /// Output width of stream `s` at level `level` (0..L).
    int stream_dim(Stream s, int level) const;
    int transfer_classes() const;

    bool operator==(const HaenConfig&) const = default;
};

/// A batch of modality inputs; row b of each matrix is sample b.
struct ModalityBatch {
    Matrix text;
    Matrix audio;
    Matrix visual;

    Eigen::Index rows() const { return text.rows(); }
    const Matrix& get(Stream s) const;
};

/// h_t, h_a, h_v, h_s at one level, indexed by Stream.
struct LevelState {
    std::array<Matrix, kNumStreams> h;
    const Matrix& operator[](Stream s) const { return h[idx(s)]; }
    Matrix& operator[](Stream s) { return h[idx(s)]; }
};

/// Outputs for a single sample.
struct TaskDistributions {
    std::vector<Vector> task_outputs;  // probability vector or 1-element regression value
    std::array<Vector, kNumStreams> stream_probs;  // p_t, p_a, p_v, p_s
};

struct ForwardResult {
    std::vector<LevelState> levels;     // 0..L
    std::vector<Matrix> task_outputs;   // B x output_dim per task
    std::array<Matrix, kNumStreams> stream_probs;  // B x K per stream
    Matrix attention_logits;            // B x T
    Matrix gates;                       // B x T per-sample gate values
    Vector task_weights;                // batch-level w = softmax(mean logits)
    Matrix tower_input;                 // B x D concatenation of level-L streams

    TaskDistributions sample(Eigen::Index b) const;
};

/// Tapes for every sub-network touched by a forward pass.
struct ForwardCache {
    std::array<nn::GradTape, kNumStreams> experts;
    std::vector<std::array<nn::GradTape, kNumStreams>> fusion;  // per level 1..L
    nn::GradTape scorer;
    std::vector<nn::GradTape> towers;
    std::array<nn::GradTape, kNumStreams> probes;
    std::array<Matrix, kNumStreams> probe_logits;
    double temperature = 1.0;
    bool valid = false;
};

/// dLoss/d(outputs) fed into HaenModel::backward. Empty matrices mean zero.
struct OutputGrads {
    std::vector<Matrix> task_outputs;
    std::array<Matrix, kNumStreams> stream_probs;
    Vector task_weights;  // gradient w.r.t. batch-level w
};

class HaenModel {
public:
    explicit HaenModel(HaenConfig cfg);

    const HaenConfig& config() const { return cfg_; }
    std::size_t param_count() const;
    nn::ParamLayout layout() const;
    nn::ParamVector flatten() const;
    void unflatten(const nn::ParamVector& params);
    void init_xavier(Rng& rng);
    void set_zero();

    const nn::Mlp& expert(Stream s) const { return experts_[idx(s)]; }
    nn::Mlp& expert(Stream s) { return experts_[idx(s)]; }
    /// Fusion block g_s^(level), level in 1..L.
    const nn::Mlp& fusion(int level, Stream s) const;
    nn::Mlp& fusion(int level, Stream s);
    const nn::Mlp& scorer() const { return scorer_; }
    nn::Mlp& scorer() { return scorer_; }
    const nn::Mlp& tower(std::size_t task) const { return towers_.at(task); }
    nn::Mlp& tower(std::size_t task) { return towers_.at(task); }
    const nn::Mlp& probe(Stream s) const { return probes_[idx(s)]; }
    nn::Mlp& probe(Stream s) { return probes_[idx(s)]; }

    /// h_t, h_a, h_v (Shared slot left empty).
    LevelState encode_modality(const ModalityBatch& in) const;
    /// h_s = f_s([x_t; x_a; x_v]).
    Matrix encode_shared(const ModalityBatch& in) const;
    /// Level-0 state: all four expert outputs.
    LevelState encode(const ModalityBatch& in, ForwardCache* cache = nullptr) const;
    /// One fusion round producing level `level` (1..L) from level-1.
    LevelState fuse_level(const LevelState& prev, int level, ForwardCache* cache = nullptr) const;
    /// Batch-level task weights: softmax of the batch-mean scorer logits.
    Vector task_attention_weights(const Matrix& shared_final) const;

    ForwardResult forward_full(const ModalityBatch& in, double temperature = 1.0,
                               ForwardCache* cache = nullptr) const;

    /// Gradient of the loss w.r.t. every parameter, in layout() order.
    nn::ParamVector backward(const ForwardResult& fwd, const ForwardCache& cache,
                             const OutputGrads& grads) const;

private:
    // Every sub-network with its name prefix, in parameter-layout order.
    std::vector<std::pair<std::string, const nn::Mlp*>> named_nets() const;
    std::vector<nn::Mlp*> mutable_nets();

    HaenConfig cfg_;
    std::array<nn::Mlp, kNumStreams> experts_;
    std::vector<std::array<nn::Mlp, kNumStreams>> fusion_;
    nn::Mlp scorer_;
    std::vector<nn::Mlp> towers_;
    std::array<nn::Mlp, kNumStreams> probes_;
};

/// Copies the listed rows of a batch, in order.
ModalityBatch slice_rows(const ModalityBatch& batch, const std::vector<std::size_t>& rows);

}  // namespace haemsa
