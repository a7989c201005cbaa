#include "haemsa/model.hpp"

#include <numeric>

#include "haemsa/error.hpp"

namespace haemsa {

using nn::Activation;
using nn::Mlp;

const char* stream_tag(Stream s) {
    switch (s) {
        case Stream::Text:
            return "t";
        case Stream::Audio:
            return "a";
        case Stream::Visual:
            return "v";
        case Stream::Shared:
            return "s";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// HaenConfig

HaenConfig HaenConfig::defaults(int d_t, int d_a, int d_v) {
    HaenConfig c;
    c.d_t = d_t;
    c.d_a = d_a;
    c.d_v = d_v;
    for (auto& w : c.expert_widths) w = {32, 16};
    c.levels = 2;
    StreamWidths fw;
    for (auto& w : fw) w = {16};
    c.fusion_widths.assign(2, fw);
    c.tasks = default_tasks();
    c.tower_widths.assign(c.tasks.size(), {16});
    c.transfer_task = kClass7Task;
    return c;
}

namespace {

void check_widths(const std::vector<int>& w, const std::string& what) {
    if (w.empty()) throw ConfigError(what + ": width list is empty");
    for (int x : w) {
        if (x < 1) throw ConfigError(what + ": widths must be >= 1");
    }
}

}  // namespace

void HaenConfig::validate() const {
    if (d_t < 1 || d_a < 1 || d_v < 1) throw ConfigError("input dims must be >= 1");
    if (levels < 1) throw ConfigError("levels must be >= 1");
    for (std::size_t s = 0; s < kNumStreams; ++s) {
        check_widths(expert_widths[s], std::string("expert ") + stream_tag(static_cast<Stream>(s)));
    }
    if (fusion_widths.size() != static_cast<std::size_t>(levels)) {
        throw ConfigError("fusion_widths must have one entry per level");
    }
    for (std::size_t l = 0; l < fusion_widths.size(); ++l) {
        for (std::size_t s = 0; s < kNumStreams; ++s) {
            check_widths(fusion_widths[l][s], "fusion level " + std::to_string(l + 1));
            if (fusion_mode == FusionMode::ConcatLinear && fusion_widths[l][s].size() != 1) {
                throw ConfigError("concat-linear fusion blocks must be a single layer");
            }
        }
    }
    if (fusion_mode == FusionMode::ConcatLinear && levels != 1) {
        throw ConfigError("concat-linear fusion uses exactly one level");
    }
    if (tasks.empty()) throw ConfigError("at least one task is required");
    for (const auto& t : tasks) t.validate();
    if (tower_widths.size() != tasks.size()) {
        throw ConfigError("tower_widths must have one entry per task");
    }
    for (const auto& w : tower_widths) {
        for (int x : w) {
            if (x < 1) throw ConfigError("tower widths must be >= 1");
        }
    }
    if (transfer_task >= tasks.size() ||
        tasks[transfer_task].kind != TaskKind::Classification) {
        throw ConfigError("transfer_task must name a classification task");
    }
}

int HaenConfig::input_dim(Stream s) const {
    switch (s) {
        case Stream::Text:
            return d_t;
        case Stream::Audio:
            return d_a;
        case Stream::Visual:
            return d_v;
        case Stream::Shared:
            return d_t + d_a + d_v;
    }
    return 0;
}

int HaenConfig::stream_dim(Stream s, int level) const {
    if (level < 0 || level > levels) throw StateError("level out of range");
    if (level == 0) return expert_widths[idx(s)].back();
    return fusion_widths[static_cast<std::size_t>(level - 1)][idx(s)].back();
}

int HaenConfig::transfer_classes() const { return tasks.at(transfer_task).num_classes; }

// ---------------------------------------------------------------------------
// Batches

const Matrix& ModalityBatch::get(Stream s) const {
    switch (s) {
        case Stream::Text:
            return text;
        case Stream::Audio:
            return audio;
        case Stream::Visual:
            return visual;
        case Stream::Shared:
            break;
    }
    throw StateError("the shared stream has no raw modality input");
}

ModalityBatch slice_rows(const ModalityBatch& batch, const std::vector<std::size_t>& rows) {
    ModalityBatch out;
    out.text.resize(static_cast<Eigen::Index>(rows.size()), batch.text.cols());
    out.audio.resize(static_cast<Eigen::Index>(rows.size()), batch.audio.cols());
    out.visual.resize(static_cast<Eigen::Index>(rows.size()), batch.visual.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(rows[i]);
        const auto o = static_cast<Eigen::Index>(i);
        out.text.row(o) = batch.text.row(r);
        out.audio.row(o) = batch.audio.row(r);
        out.visual.row(o) = batch.visual.row(r);
    }
    return out;
}

TaskDistributions ForwardResult::sample(Eigen::Index b) const {
    TaskDistributions d;
    for (const auto& out : task_outputs) d.task_outputs.push_back(out.row(b).transpose());
    for (std::size_t s = 0; s < kNumStreams; ++s) {
        d.stream_probs[s] = stream_probs[s].row(b).transpose();
    }
    return d;
}

// ---------------------------------------------------------------------------
// HaenModel

HaenModel::HaenModel(HaenConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const Activation fusion_act =
        cfg_.fusion_mode == FusionMode::ConcatLinear ? Activation::Identity : Activation::Tanh;

    for (std::size_t s = 0; s < kNumStreams; ++s) {
        const auto st = static_cast<Stream>(s);
        experts_[s] = Mlp::make(static_cast<std::size_t>(cfg_.input_dim(st)), cfg_.expert_widths[s],
                                Activation::Tanh, Activation::Tanh);
    }
    for (int level = 1; level <= cfg_.levels; ++level) {
        std::array<Mlp, kNumStreams> blocks;
        const auto& widths = cfg_.fusion_widths[static_cast<std::size_t>(level - 1)];
        const int shared_prev = cfg_.stream_dim(Stream::Shared, level - 1);
        for (auto m : kModalities) {
            int in = cfg_.stream_dim(m, level - 1);
            if (cfg_.cross_modal) in += shared_prev;
            blocks[idx(m)] =
                Mlp::make(static_cast<std::size_t>(in), widths[idx(m)], fusion_act, fusion_act);
        }
        int shared_in = shared_prev;
        for (auto m : kModalities) shared_in += cfg_.stream_dim(m, level - 1);
        blocks[idx(Stream::Shared)] = Mlp::make(static_cast<std::size_t>(shared_in),
                                                widths[idx(Stream::Shared)], fusion_act, fusion_act);
        fusion_.push_back(std::move(blocks));
    }

    const int shared_final = cfg_.stream_dim(Stream::Shared, cfg_.levels);
    scorer_ = Mlp::make(static_cast<std::size_t>(shared_final),
                        {static_cast<int>(cfg_.tasks.size())}, Activation::Identity,
                        Activation::Identity);

    int tower_in = 0;
    for (std::size_t s = 0; s < kNumStreams; ++s) {
        tower_in += cfg_.stream_dim(static_cast<Stream>(s), cfg_.levels);
    }
    for (std::size_t t = 0; t < cfg_.tasks.size(); ++t) {
        auto widths = cfg_.tower_widths[t];
        widths.push_back(cfg_.tasks[t].output_dim());
        const Activation head = cfg_.tasks[t].kind == TaskKind::Classification
                                    ? Activation::Softmax
                                    : Activation::Identity;
        towers_.push_back(
            Mlp::make(static_cast<std::size_t>(tower_in), widths, Activation::Tanh, head));
    }

    for (std::size_t s = 0; s < kNumStreams; ++s) {
        probes_[s] = Mlp::make(static_cast<std::size_t>(cfg_.stream_dim(static_cast<Stream>(s),
                                                                         cfg_.levels)),
                               {cfg_.transfer_classes()}, Activation::Identity,
                               Activation::Identity);
    }
}

const Mlp& HaenModel::fusion(int level, Stream s) const {
    if (level < 1 || level > cfg_.levels) throw StateError("fusion level out of range");
    return fusion_[static_cast<std::size_t>(level - 1)][idx(s)];
}

Mlp& HaenModel::fusion(int level, Stream s) {
    if (level < 1 || level > cfg_.levels) throw StateError("fusion level out of range");
    return fusion_[static_cast<std::size_t>(level - 1)][idx(s)];
}

std::vector<std::pair<std::string, const Mlp*>> HaenModel::named_nets() const {
    std::vector<std::pair<std::string, const Mlp*>> out;
    for (std::size_t s = 0; s < kNumStreams; ++s) {
        out.emplace_back(std::string("expert.") + stream_tag(static_cast<Stream>(s)) + ".",
                         &experts_[s]);
    }
    for (std::size_t l = 0; l < fusion_.size(); ++l) {
        for (std::size_t s = 0; s < kNumStreams; ++s) {
            out.emplace_back("fusion." + std::to_string(l + 1) + "." +
                                 stream_tag(static_cast<Stream>(s)) + ".",
                             &fusion_[l][s]);
        }
    }
    out.emplace_back("scorer.", &scorer_);
    for (std::size_t t = 0; t < towers_.size(); ++t) {
        out.emplace_back("tower." + cfg_.tasks[t].id + ".", &towers_[t]);
    }
    for (std::size_t s = 0; s < kNumStreams; ++s) {
        out.emplace_back(std::string("probe.") + stream_tag(static_cast<Stream>(s)) + ".",
                         &probes_[s]);
    }
    return out;
}

std::vector<Mlp*> HaenModel::mutable_nets() {
    std::vector<Mlp*> out;
    for (const auto& [name, net] : std::as_const(*this).named_nets()) {
        out.push_back(const_cast<Mlp*>(net));
    }
    return out;
}

std::size_t HaenModel::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, net] : named_nets()) n += net->param_count();
    return n;
}

nn::ParamLayout HaenModel::layout() const {
    nn::ParamLayout out;
    std::size_t off = 0;
    for (const auto& [name, net] : named_nets()) {
        auto part = net->layout(name, off);
        off += net->param_count();
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

nn::ParamVector HaenModel::flatten() const {
    nn::ParamVector p(layout());
    std::size_t off = 0;
    for (const auto& [name, net] : named_nets()) {
        nn::flatten_into(*net, std::span<double>(p.values).subspan(off, net->param_count()));
        off += net->param_count();
    }
    return p;
}

void HaenModel::unflatten(const nn::ParamVector& params) {
    const auto expected = layout();
    if (params.layout.size() != expected.size() || params.values.size() != param_count()) {
        throw ShapeError("parameter vector does not match model architecture (" +
                         std::to_string(params.values.size()) + " vs " +
                         std::to_string(param_count()) + " values)");
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (!params.layout[i].same_shape(expected[i]) || params.layout[i].offset != expected[i].offset) {
            throw ShapeError("parameter block '" + params.layout[i].name +
                             "' does not match model architecture");
        }
    }
    std::size_t off = 0;
    for (auto* net : mutable_nets()) {
        nn::unflatten_from(*net,
                           std::span<const double>(params.values).subspan(off, net->param_count()));
        off += net->param_count();
    }
}

void HaenModel::init_xavier(Rng& rng) {
    for (auto* net : mutable_nets()) net->init_xavier(rng);
}

void HaenModel::set_zero() {
    for (auto* net : mutable_nets()) net->set_zero();
}

namespace {

void check_input(const Matrix& x, int expected, const char* name) {
    if (x.cols() != expected) {
        throw ShapeError(std::string(name) + " features have width " + std::to_string(x.cols()) +
                         ", expected " + std::to_string(expected));
    }
}

Matrix hconcat(std::initializer_list<const Matrix*> parts) {
    Eigen::Index cols = 0;
    const Eigen::Index rows = (*parts.begin())->rows();
    for (const auto* p : parts) {
        if (p->rows() != rows) throw ShapeError("cannot concatenate batches with different row counts");
        cols += p->cols();
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (const auto* p : parts) {
        out.middleCols(c, p->cols()) = *p;
        c += p->cols();
    }
    return out;
}

}  // namespace

LevelState HaenModel::encode(const ModalityBatch& in, ForwardCache* cache) const {
    check_input(in.text, cfg_.d_t, "text");
    check_input(in.audio, cfg_.d_a, "audio");
    check_input(in.visual, cfg_.d_v, "visual");
    if (in.audio.rows() != in.text.rows() || in.visual.rows() != in.text.rows()) {
        throw ShapeError("modality batches have different sample counts");
    }
    LevelState st;
    for (auto m : kModalities) {
        st[m] = nn::forward(experts_[idx(m)], in.get(m), cache ? &cache->experts[idx(m)] : nullptr);
    }
    // Concatenation order is fixed: text, audio, visual.
    const Matrix joint = hconcat({&in.text, &in.audio, &in.visual});
    st[Stream::Shared] = nn::forward(experts_[idx(Stream::Shared)], joint,
                                     cache ? &cache->experts[idx(Stream::Shared)] : nullptr);
    return st;
}

LevelState HaenModel::encode_modality(const ModalityBatch& in) const {
    LevelState st = encode(in);
    st[Stream::Shared] = Matrix();
    return st;
}

Matrix HaenModel::encode_shared(const ModalityBatch& in) const {
    return encode(in)[Stream::Shared];
}

LevelState HaenModel::fuse_level(const LevelState& prev, int level, ForwardCache* cache) const {
    if (level < 1 || level > cfg_.levels) throw StateError("fusion level out of range");
    for (std::size_t s = 0; s < kNumStreams; ++s) {
        if (prev.h[s].cols() != cfg_.stream_dim(static_cast<Stream>(s), level - 1)) {
            throw StateError("previous level state does not match the configuration");
        }
    }
    const auto l = static_cast<std::size_t>(level - 1);
    auto tape = [&](Stream s) -> nn::GradTape* {
        if (!cache) return nullptr;
        if (cache->fusion.size() < static_cast<std::size_t>(cfg_.levels)) {
            cache->fusion.resize(static_cast<std::size_t>(cfg_.levels));
        }
        return &cache->fusion[l][idx(s)];
    };
    LevelState next;
    const Matrix& shared = prev[Stream::Shared];
    for (auto m : kModalities) {
        if (cfg_.cross_modal) {
            next[m] = nn::forward(fusion_[l][idx(m)], hconcat({&prev[m], &shared}), tape(m));
        } else {
            next[m] = nn::forward(fusion_[l][idx(m)], prev[m], tape(m));
        }
    }
    next[Stream::Shared] =
        nn::forward(fusion_[l][idx(Stream::Shared)],
                    hconcat({&shared, &prev[Stream::Text], &prev[Stream::Audio], &prev[Stream::Visual]}),
                    tape(Stream::Shared));
    return next;
}

Vector HaenModel::task_attention_weights(const Matrix& shared_final) const {
    const Matrix logits = nn::forward(scorer_, shared_final);
    const Matrix mean = logits.colwise().mean();
    return nn::softmax_rows(mean).row(0).transpose();
}

ForwardResult HaenModel::forward_full(const ModalityBatch& in, double temperature,
                                      ForwardCache* cache) const {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (cache) {
        *cache = ForwardCache{};
        cache->fusion.resize(static_cast<std::size_t>(cfg_.levels));
        cache->towers.resize(towers_.size());
        cache->temperature = temperature;
    }
    ForwardResult r;
    r.levels.push_back(encode(in, cache));
    for (int level = 1; level <= cfg_.levels; ++level) {
        r.levels.push_back(fuse_level(r.levels.back(), level, cache));
    }
    const LevelState& top = r.levels.back();
    const Eigen::Index batch = in.rows();
    const auto n_tasks = static_cast<Eigen::Index>(cfg_.tasks.size());

    r.attention_logits = nn::forward(scorer_, top[Stream::Shared], cache ? &cache->scorer : nullptr);
    r.task_weights = nn::softmax_rows(Matrix(r.attention_logits.colwise().mean())).row(0).transpose();
    r.gates = cfg_.attention_gates ? nn::softmax_rows(r.attention_logits)
                                   : Matrix(Matrix::Ones(batch, n_tasks));

    r.tower_input = hconcat({&top[Stream::Text], &top[Stream::Audio], &top[Stream::Visual],
                             &top[Stream::Shared]});
    for (std::size_t t = 0; t < towers_.size(); ++t) {
        const Matrix gated = r.gates.col(static_cast<Eigen::Index>(t)).asDiagonal() * r.tower_input;
        r.task_outputs.push_back(nn::forward(towers_[t], gated, cache ? &cache->towers[t] : nullptr));
    }

    for (std::size_t s = 0; s < kNumStreams; ++s) {
        Matrix logits = nn::forward(probes_[s], top.h[s], cache ? &cache->probes[s] : nullptr);
        r.stream_probs[s] = nn::softmax_rows(logits / temperature);
        if (cache) cache->probe_logits[s] = std::move(logits);
    }
    if (cache) cache->valid = true;
    return r;
}

nn::ParamVector HaenModel::backward(const ForwardResult& fwd, const ForwardCache& cache,
                                    const OutputGrads& grads) const {
    if (!cache.valid) throw StateError("backward called without a cached forward pass");
    nn::ParamVector out(layout());

    // Offsets of each sub-network, in named_nets() order.
    const auto nets = named_nets();
    std::vector<std::size_t> offsets(nets.size());
    std::size_t off = 0;
    for (std::size_t i = 0; i < nets.size(); ++i) {
        offsets[i] = off;
        off += nets[i].second->param_count();
    }
    const std::size_t L = static_cast<std::size_t>(cfg_.levels);
    const std::size_t T = towers_.size();
    auto span_of = [&](std::size_t net_index) {
        return std::span<double>(out.values)
            .subspan(offsets[net_index], nets[net_index].second->param_count());
    };
    auto expert_index = [](std::size_t s) { return s; };
    auto fusion_index = [](std::size_t level, std::size_t s) { return kNumStreams * level + s; };
    const std::size_t scorer_index = kNumStreams * (L + 1);
    auto tower_index = [&](std::size_t t) { return scorer_index + 1 + t; };
    auto probe_index = [&](std::size_t s) { return scorer_index + 1 + T + s; };

    const LevelState& top = fwd.levels.back();
    const Eigen::Index batch = fwd.tower_input.rows();
    const auto n_tasks = static_cast<Eigen::Index>(T);

    std::array<Matrix, kNumStreams> dh;
    for (std::size_t s = 0; s < kNumStreams; ++s) dh[s] = Matrix::Zero(batch, top.h[s].cols());

    // Towers and gates.
    Matrix d_input = Matrix::Zero(batch, fwd.tower_input.cols());
    Matrix d_gates = Matrix::Zero(batch, n_tasks);
    bool any_tower = false;
    for (std::size_t t = 0; t < T; ++t) {
        if (t >= grads.task_outputs.size() || grads.task_outputs[t].size() == 0) continue;
        any_tower = true;
        const Matrix d_gated =
            nn::accumulate_backward(towers_[t], cache.towers[t], grads.task_outputs[t], span_of(tower_index(t)));
        const auto col = static_cast<Eigen::Index>(t);
        d_input += fwd.gates.col(col).asDiagonal() * d_gated;
        d_gates.col(col) = d_gated.cwiseProduct(fwd.tower_input).rowwise().sum();
    }

    Matrix d_logits = Matrix::Zero(batch, n_tasks);
    if (cfg_.attention_gates && any_tower) {
        d_logits += nn::softmax_rows_backward(fwd.gates, d_gates);
    }
    if (grads.task_weights.size() == n_tasks) {
        const Matrix w = fwd.task_weights.transpose();
        const Matrix dw = grads.task_weights.transpose();
        const Matrix d_mean = nn::softmax_rows_backward(w, dw) / static_cast<double>(batch);
        d_logits.rowwise() += d_mean.row(0);
    }
    dh[idx(Stream::Shared)] +=
        nn::accumulate_backward(scorer_, cache.scorer, d_logits, span_of(scorer_index));

    Eigen::Index col = 0;
    for (std::size_t s = 0; s < kNumStreams; ++s) {
        dh[s] += d_input.middleCols(col, dh[s].cols());
        col += dh[s].cols();
    }

    // Stream probes: p = softmax(z / tau).
    for (std::size_t s = 0; s < kNumStreams; ++s) {
        if (grads.stream_probs[s].size() == 0) continue;
        const Matrix dz =
            nn::softmax_rows_backward(fwd.stream_probs[s], grads.stream_probs[s]) / cache.temperature;
        dh[s] += nn::accumulate_backward(probes_[s], cache.probes[s], dz, span_of(probe_index(s)));
    }

    // Fusion levels, top-down.
    for (std::size_t level = L; level >= 1; --level) {
        const LevelState& prev = fwd.levels[level - 1];
        std::array<Matrix, kNumStreams> dprev;
        for (std::size_t s = 0; s < kNumStreams; ++s) dprev[s] = Matrix::Zero(batch, prev.h[s].cols());
        const Eigen::Index ds = prev[Stream::Shared].cols();
        for (auto m : kModalities) {
            const Matrix din = nn::accumulate_backward(fusion_[level - 1][idx(m)],
                                                       cache.fusion[level - 1][idx(m)], dh[idx(m)],
                                                       span_of(fusion_index(level, idx(m))));
            const Eigen::Index dm = prev[m].cols();
            dprev[idx(m)] += din.leftCols(dm);
            if (cfg_.cross_modal) dprev[idx(Stream::Shared)] += din.middleCols(dm, ds);
        }
        const std::size_t sh = idx(Stream::Shared);
        const Matrix din = nn::accumulate_backward(fusion_[level - 1][sh], cache.fusion[level - 1][sh],
                                                   dh[sh], span_of(fusion_index(level, sh)));
        dprev[sh] += din.leftCols(ds);
        Eigen::Index c = ds;
        for (auto m : kModalities) {
            const Eigen::Index dm = prev[m].cols();
            dprev[idx(m)] += din.middleCols(c, dm);
            c += dm;
        }
        dh = std::move(dprev);
    }

    for (std::size_t s = 0; s < kNumStreams; ++s) {
        nn::accumulate_backward(experts_[s], cache.experts[s], dh[s], span_of(expert_index(s)));
    }
    return out;
}

}  // namespace haemsa
