#include <doctest.h>

#include "haemsa/error.hpp"
#include "haemsa/model.hpp"
#include "support/oracles.hpp"

using namespace haemsa;

namespace {

HaenModel random_model(const HaenConfig& cfg, std::uint64_t seed) {
    HaenModel m(cfg);
    Rng rng(seed);
    m.init_xavier(rng);
    // Nonzero biases everywhere so every term of every layer matters.
    auto p = m.flatten();
    std::normal_distribution<double> n(0.0, 0.2);
    for (std::size_t b = 0; b < p.layout.size(); ++b) {
        if (!p.layout[b].is_bias) continue;
        for (auto& v : p.block(b)) v = n(rng);
    }
    m.unflatten(p);
    return m;
}

HaenConfig small_config() {
    HaenConfig c = HaenConfig::defaults(4, 3, 5);
    for (auto& w : c.expert_widths) w = {6, 4};
    c.expert_widths[idx(Stream::Shared)] = {7, 5};
    for (auto& lvl : c.fusion_widths) {
        for (auto& w : lvl) w = {4};
    }
    c.fusion_widths[0][idx(Stream::Shared)] = {6};
    for (auto& w : c.tower_widths) w = {5};
    return c;
}

}  // namespace

TEST_CASE("zero-weight model: experts and fusion output zeros of the configured widths") {
    const HaenConfig cfg = small_config();
    HaenModel m(cfg);
    std::mt19937_64 rng(1);
    const auto batch = oracle::random_batch(rng, 3, cfg);
    const auto fwd = m.forward_full(batch);
    REQUIRE(fwd.levels.size() == static_cast<std::size_t>(cfg.levels + 1));
    for (int l = 0; l <= cfg.levels; ++l) {
        for (std::size_t s = 0; s < kNumStreams; ++s) {
            const Matrix& h = fwd.levels[static_cast<std::size_t>(l)].h[s];
            CHECK(h.rows() == 3);
            CHECK(h.cols() == cfg.stream_dim(static_cast<Stream>(s), l));
            CHECK(h.cwiseAbs().maxCoeff() == 0.0);
        }
    }
    CHECK(fwd.levels[0][Stream::Text].cols() == 4);
    CHECK(fwd.levels[0][Stream::Shared].cols() == 5);
}

TEST_CASE("zero-weight scorer gives uniform task weights") {
    const HaenConfig cfg = small_config();
    HaenModel m = random_model(cfg, 3);
    m.scorer().set_zero();
    std::mt19937_64 rng(2);
    const auto fwd = m.forward_full(oracle::random_batch(rng, 4, cfg));
    for (Eigen::Index t = 0; t < fwd.task_weights.size(); ++t) CHECK(fwd.task_weights(t) == doctest::Approx(0.25));
}

TEST_CASE("full forward equals manual composition of the sub-networks") {
    for (bool cross : {true, false}) {
        for (bool gates : {true, false}) {
            HaenConfig cfg = small_config();
            cfg.cross_modal = cross;
            cfg.attention_gates = gates;
            const HaenModel m = random_model(cfg, 7);
            std::mt19937_64 rng(4);
            const auto batch = oracle::random_batch(rng, 3, cfg);
            const double tau = 1.7;
            const auto fwd = m.forward_full(batch, tau);
            for (Eigen::Index b = 0; b < 3; ++b) {
                const auto xt = oracle::row(batch.text, b), xa = oracle::row(batch.audio, b),
                           xv = oracle::row(batch.visual, b);
                std::array<std::vector<long double>, 4> h{
                    oracle::mlp(m.expert(Stream::Text), xt), oracle::mlp(m.expert(Stream::Audio), xa),
                    oracle::mlp(m.expert(Stream::Visual), xv),
                    oracle::mlp(m.expert(Stream::Shared), oracle::cat({&xt, &xa, &xv}))};
                for (int l = 1; l <= cfg.levels; ++l) {
                    std::array<std::vector<long double>, 4> next;
                    for (auto s : kModalities) {
                        next[idx(s)] = oracle::mlp(m.fusion(l, s), cross ? oracle::cat({&h[idx(s)], &h[3]}) : h[idx(s)]);
                    }
                    next[3] = oracle::mlp(m.fusion(l, Stream::Shared), oracle::cat({&h[3], &h[0], &h[1], &h[2]}));
                    h = next;
                }
                for (std::size_t s = 0; s < 4; ++s) {
                    const Matrix& got = fwd.levels.back().h[s];
                    for (Eigen::Index c = 0; c < got.cols(); ++c) {
                        CHECK(got(b, c) == doctest::Approx(static_cast<double>(h[s][static_cast<std::size_t>(c)])).epsilon(1e-12));
                    }
                }
                // Per-sample gates from the scorer logits, then towers.
                const auto logits = oracle::mlp(m.scorer(), h[3]);
                std::vector<long double> g(logits.size(), 1.0L);
                if (gates) {
                    long double z = 0;
                    for (auto v : logits) z += std::exp(v);
                    for (std::size_t t = 0; t < g.size(); ++t) g[t] = std::exp(logits[t]) / z;
                }
                const auto top = oracle::cat({&h[0], &h[1], &h[2], &h[3]});
                for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
                    auto in = top;
                    for (auto& v : in) v *= g[t];
                    const auto out = oracle::mlp(m.tower(t), in);
                    for (std::size_t c = 0; c < out.size(); ++c) {
                        CHECK(fwd.task_outputs[t](b, static_cast<Eigen::Index>(c)) ==
                              doctest::Approx(static_cast<double>(out[c])).epsilon(1e-12));
                    }
                }
                // Probes: softmax(logits / tau).
                for (std::size_t s = 0; s < 4; ++s) {
                    auto z = oracle::mlp(m.probe(static_cast<Stream>(s)), h[s]);
                    long double sum = 0;
                    for (auto& v : z) sum += (v = std::exp(v / tau));
                    for (std::size_t c = 0; c < z.size(); ++c) {
                        CHECK(fwd.stream_probs[s](b, static_cast<Eigen::Index>(c)) ==
                              doctest::Approx(static_cast<double>(z[c] / sum)).epsilon(1e-12));
                    }
                }
            }
        }
    }
}

TEST_CASE("batch task weights are the softmax of the mean scorer logits") {
    const HaenConfig cfg = small_config();
    const HaenModel m = random_model(cfg, 13);
    std::mt19937_64 rng(5);
    const auto fwd = m.forward_full(oracle::random_batch(rng, 6, cfg));
    std::vector<long double> mean(cfg.tasks.size(), 0.0L);
    for (Eigen::Index b = 0; b < 6; ++b) {
        const auto lg = oracle::mlp(m.scorer(), oracle::row(fwd.levels.back()[Stream::Shared], b));
        for (std::size_t t = 0; t < mean.size(); ++t) mean[t] += lg[t] / 6.0L;
    }
    long double z = 0;
    for (auto v : mean) z += std::exp(v);
    double sum = 0;
    for (std::size_t t = 0; t < mean.size(); ++t) {
        CHECK(fwd.task_weights(static_cast<Eigen::Index>(t)) == doctest::Approx(static_cast<double>(std::exp(mean[t]) / z)).epsilon(1e-12));
        sum += fwd.task_weights(static_cast<Eigen::Index>(t));
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-9);
    CHECK(m.task_attention_weights(fwd.levels.back()[Stream::Shared]).isApprox(fwd.task_weights, 1e-14));
}

TEST_CASE("shared expert input order matters") {
    HaenConfig cfg = small_config();
    cfg.d_t = cfg.d_a = cfg.d_v = 3;
    const HaenModel m = random_model(cfg, 17);
    std::mt19937_64 rng(6);
    const auto batch = oracle::random_batch(rng, 2, cfg);
    const ModalityBatch permuted{batch.audio, batch.text, batch.visual};
    CHECK_FALSE(m.encode_shared(batch).isApprox(m.encode_shared(permuted), 1e-6));
}

TEST_CASE("shared expert input width must be the sum of the modality widths") {
    HaenConfig cfg = small_config();
    HaenModel m(cfg);
    ModalityBatch bad{Matrix::Zero(1, 4), Matrix::Zero(1, 3), Matrix::Zero(1, 6)};
    CHECK_THROWS(m.encode_shared(bad));
    cfg.d_t = 0;
    CHECK_THROWS_AS(HaenModel{cfg}, ConfigError);
}

TEST_CASE("one-level config performs exactly one fusion round") {
    HaenConfig cfg = small_config();
    cfg.levels = 1;
    cfg.fusion_widths.resize(1);
    const HaenModel m = random_model(cfg, 1);
    std::mt19937_64 rng(1);
    const auto fwd = m.forward_full(oracle::random_batch(rng, 2, cfg));
    CHECK(fwd.levels.size() == 2);
    CHECK_THROWS_AS(m.fuse_level(fwd.levels[1], 2), StateError);
}

TEST_CASE("zero-weight fusion blocks give zero level states") {
    const HaenConfig cfg = small_config();
    HaenModel m = random_model(cfg, 2);
    for (int l = 1; l <= cfg.levels; ++l) {
        for (std::size_t s = 0; s < kNumStreams; ++s) m.fusion(l, static_cast<Stream>(s)).set_zero();
    }
    std::mt19937_64 rng(1);
    const auto fwd = m.forward_full(oracle::random_batch(rng, 2, cfg));
    for (int l = 1; l <= cfg.levels; ++l) {
        for (const auto& h : fwd.levels[static_cast<std::size_t>(l)].h) CHECK(h.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("classification outputs are valid distributions and forward is deterministic") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const HaenConfig cfg = oracle::random_small_config(rng);
        const HaenModel m = random_model(cfg, static_cast<std::uint64_t>(trial));
        const auto batch = oracle::random_batch(rng, 5, cfg);
        const auto fwd = m.forward_full(batch);
        for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
            CHECK(fwd.task_outputs[t].cols() == cfg.tasks[t].output_dim());
            if (cfg.tasks[t].kind != TaskKind::Classification) continue;
            for (Eigen::Index b = 0; b < 5; ++b) {
                CHECK(std::fabs(fwd.task_outputs[t].row(b).sum() - 1.0) <= 1e-9);
                CHECK(fwd.task_outputs[t].row(b).minCoeff() >= 0.0);
                CHECK(fwd.task_outputs[t].row(b).maxCoeff() <= 1.0);
            }
        }
        const auto again = m.forward_full(batch);
        for (std::size_t t = 0; t < cfg.tasks.size(); ++t) CHECK(again.task_outputs[t] == fwd.task_outputs[t]);
    }
}

TEST_CASE("invalid configurations fail construction") {
    HaenConfig cfg = small_config();
    cfg.fusion_widths.resize(1);  // levels still 2
    CHECK_THROWS_AS(HaenModel{cfg}, ConfigError);
    cfg = small_config();
    cfg.tower_widths.pop_back();
    CHECK_THROWS_AS(HaenModel{cfg}, ConfigError);
    cfg = small_config();
    cfg.expert_widths[0] = {};
    CHECK_THROWS_AS(HaenModel{cfg}, ConfigError);
    cfg = small_config();
    cfg.fusion_mode = FusionMode::ConcatLinear;  // needs exactly one level
    CHECK_THROWS_AS(HaenModel{cfg}, ConfigError);
}

TEST_CASE("concat-linear fusion changes the output relative to the hierarchy") {
    HaenConfig hier = small_config();
    hier.levels = 1;
    hier.fusion_widths.resize(1);
    HaenConfig flat = hier;
    flat.fusion_mode = FusionMode::ConcatLinear;
    HaenModel a = random_model(hier, 5);
    HaenModel b(flat);
    b.unflatten(a.flatten());
    std::mt19937_64 rng(3);
    const auto batch = oracle::random_batch(rng, 3, hier);
    CHECK_FALSE(a.forward_full(batch).task_outputs[0].isApprox(b.forward_full(batch).task_outputs[0], 1e-6));
}

TEST_CASE("cross-modal dependence: audio perturbation reaches the text stream only through fusion") {
    for (bool cross : {true, false}) {
        HaenConfig cfg = small_config();
        cfg.cross_modal = cross;
        const HaenModel m = random_model(cfg, 23);
        std::mt19937_64 rng(8);
        auto batch = oracle::random_batch(rng, 2, cfg);
        const auto before = m.forward_full(batch);
        batch.audio.array() += 0.5;
        const auto after = m.forward_full(batch);
        CHECK(before.levels[0][Stream::Text] == after.levels[0][Stream::Text]);
        for (int l = 1; l <= cfg.levels; ++l) {
            const auto& h0 = before.levels[static_cast<std::size_t>(l)][Stream::Text];
            const auto& h1 = after.levels[static_cast<std::size_t>(l)][Stream::Text];
            if (cross) {
                CHECK((h0 - h1).cwiseAbs().maxCoeff() > 1e-6);
            } else {
                CHECK(h0 == h1);
            }
        }
    }
}

TEST_CASE("flatten/unflatten round-trip through the full model") {
    const HaenModel a = random_model(small_config(), 4);
    HaenModel b(small_config());
    CHECK(b.param_count() == a.param_count());
    b.unflatten(a.flatten());
    CHECK(b.flatten() == a.flatten());
    auto wrong = a.flatten();
    wrong.values.pop_back();
    wrong.layout.back().rows -= 1;
    CHECK_THROWS(b.unflatten(wrong));
}

TEST_CASE("end-to-end gradient matches finite differences for every parameter group") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 4; ++trial) {
        const HaenConfig cfg = oracle::random_small_config(rng);
        HaenModel m = random_model(cfg, static_cast<std::uint64_t>(100 + trial));
        const auto labels = oracle::random_labels(rng, 4);
        const auto batch = oracle::random_batch(rng, 4, cfg);
        LossConfig loss;
        loss.mode = trial % 2 ? ObjectiveMode::Attention : ObjectiveMode::WeightedSum;
        loss.kl_temperature = trial == 2 ? 2.0 : 1.0;
        const auto errors = oracle::model_gradient_errors(m, batch, oracle::targets_for(cfg.tasks, labels), loss);
        for (const auto& [group, e] : errors) {
            CAPTURE(trial);
            CAPTURE(group);
            CHECK(e.rel < 1e-4);
        }
    }
}

TEST_CASE("backward without a cached forward is a state error") {
    const HaenModel m(small_config());
    CHECK_THROWS_AS(m.backward(ForwardResult{}, ForwardCache{}, OutputGrads{}), StateError);
}

TEST_CASE("slice_rows copies the requested rows in order") {
    std::mt19937_64 rng(1);
    const auto batch = oracle::random_batch(rng, 5, small_config());
    const auto s = slice_rows(batch, {4, 1});
    CHECK(s.rows() == 2);
    CHECK(s.text.row(0) == batch.text.row(4));
    CHECK(s.visual.row(1) == batch.visual.row(1));
}
