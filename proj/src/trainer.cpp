#include "haemsa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "haemsa/checkpoint.hpp"
#include "haemsa/error.hpp"

namespace haemsa {

std::string to_string(AblationMode m) {
    switch (m) {
        case AblationMode::Full:
            return "full";
        case AblationMode::NoHierarchy:
            return "no-hierarchy";
        case AblationMode::NoEvolution:
            return "no-evolution";
        case AblationMode::NoCrossModal:
            return "no-crossmodal";
        case AblationMode::NoMtl:
            return "no-mtl";
    }
    return "?";
}

AblationMode ablation_from_string(const std::string& s) {
    std::string k = s;
    std::replace(k.begin(), k.end(), '_', '-');
    for (auto m : kAllAblations) {
        if (to_string(m) == k) return m;
    }
    throw ConfigError("unknown ablation mode '" + s +
                      "' (expected full, no-hierarchy, no-evolution, no-crossmodal, no-mtl)");
}

void SearchBounds::validate() const {
    auto check = [](const GeneRange& r, const char* name, int min_lo) {
        if (r.lo < min_lo || r.hi < r.lo) {
            throw ConfigError(std::string("search bound '") + name + "' must satisfy " +
                              std::to_string(min_lo) + " <= lo <= hi");
        }
    };
    check(expert_hidden, "expert_hidden", 1);
    check(expert_out, "expert_out", 1);
    check(levels, "levels", 1);
    check(fusion_width, "fusion_width", 1);
    check(tower_hidden, "tower_hidden", 1);
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be finite and >= 0");
    }
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

// ---------------------------------------------------------------------------
// Genome space

HaenSpace::HaenSpace(SearchBounds bounds, int d_t, int d_a, int d_v, AblationMode mode)
    : bounds_(bounds), d_t_(d_t), d_a_(d_a), d_v_(d_v), mode_(mode) {
    bounds_.validate();
    for (std::size_t s = 0; s < kNumStreams; ++s) {
        genes_.push_back({std::string("expert_hidden.") + stream_tag(static_cast<Stream>(s)),
                          bounds_.expert_hidden.lo, bounds_.expert_hidden.hi});
    }
    for (std::size_t s = 0; s < kNumStreams; ++s) {
        genes_.push_back({std::string("expert_out.") + stream_tag(static_cast<Stream>(s)),
                          bounds_.expert_out.lo, bounds_.expert_out.hi});
    }
    genes_.push_back({"levels", bounds_.levels.lo, bounds_.levels.hi});
    for (int l = 1; l <= bounds_.levels.hi; ++l) {
        for (std::size_t s = 0; s < kNumStreams; ++s) {
            genes_.push_back({"fusion." + std::to_string(l) + "." + stream_tag(static_cast<Stream>(s)),
                              bounds_.fusion_width.lo, bounds_.fusion_width.hi});
        }
    }
    for (const auto& t : default_tasks()) {
        genes_.push_back({"tower." + t.id, bounds_.tower_hidden.lo, bounds_.tower_hidden.hi});
    }
}

HaenConfig HaenSpace::config_for(const std::vector<int>& arch) const {
    if (!in_bounds(arch)) throw ConfigError("architecture genes outside search bounds");
    HaenConfig c = HaenConfig::defaults(d_t_, d_a_, d_v_);
    for (std::size_t s = 0; s < kNumStreams; ++s) {
        c.expert_widths[s] = {arch[s], arch[kNumStreams + s]};
    }
    const std::size_t levels_gene = 2 * kNumStreams;
    const std::size_t fusion_base = levels_gene + 1;
    c.levels = arch[levels_gene];
    if (mode_ == AblationMode::NoHierarchy) {
        c.levels = 1;
        c.fusion_mode = FusionMode::ConcatLinear;
    }
    c.fusion_widths.clear();
    for (int l = 0; l < c.levels; ++l) {
        StreamWidths w;
        for (std::size_t s = 0; s < kNumStreams; ++s) {
            w[s] = {arch[fusion_base + static_cast<std::size_t>(l) * kNumStreams + s]};
        }
        c.fusion_widths.push_back(w);
    }
    const std::size_t tower_base =
        fusion_base + static_cast<std::size_t>(bounds_.levels.hi) * kNumStreams;
    for (std::size_t t = 0; t < c.tasks.size(); ++t) c.tower_widths[t] = {arch[tower_base + t]};
    if (mode_ == AblationMode::NoCrossModal) c.cross_modal = false;
    if (mode_ == AblationMode::NoMtl) c.attention_gates = false;
    return c;
}

nn::ParamLayout HaenSpace::layout(const std::vector<int>& arch) const {
    return HaenModel(config_for(arch)).layout();
}

std::string HaenSpace::summarize(const std::vector<int>& arch) const {
    const auto c = config_for(arch);
    std::ostringstream os;
    auto widths = [&](const std::vector<int>& w) {
        os << '[';
        for (std::size_t i = 0; i < w.size(); ++i) os << (i ? "," : "") << w[i];
        os << ']';
    };
    os << "experts";
    for (const auto& w : c.expert_widths) widths(w);
    os << " L=" << c.levels << " fusion";
    for (const auto& lvl : c.fusion_widths) {
        for (const auto& w : lvl) widths(w);
    }
    os << " towers";
    for (const auto& w : c.tower_widths) widths(w);
    return os.str();
}

// ---------------------------------------------------------------------------
// Run configuration

void RunConfig::validate() const {
    evolution.validate();
    loss.validate();
    train.validate();
    search.validate();
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (data_dir.empty()) synthetic.validate();
}

namespace {

nlohmann::ordered_json range_json(const GeneRange& r) { return nlohmann::ordered_json::array({r.lo, r.hi}); }

GeneRange range_from(const nlohmann::json& j, const char* name) {
    if (!j.is_array() || j.size() != 2) {
        throw ConfigError(std::string("search.") + name + " must be a [lo, hi] pair");
    }
    return {j[0].get<int>(), j[1].get<int>()};
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    std::set<std::string> k(known.begin(), known.end());
    for (const auto& [key, value] : j.items()) {
        if (!k.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

}  // namespace

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["evolution"] = {{"population_size", evolution.population_size},
                      {"generations", evolution.generations},
                      {"tournament_k", evolution.tournament_k},
                      {"sigma", evolution.sigma},
                      {"sigma_decay", evolution.sigma_decay},
                      {"arch_mutation_prob", evolution.arch_mutation_prob},
                      {"elitism_count", evolution.elitism_count},
                      {"inner_epochs", evolution.inner_epochs},
                      {"convergence_patience", evolution.convergence_patience},
                      {"master_seed", evolution.master_seed},
                      {"workers", evolution.workers}};
    j["loss"] = {{"lambdas", loss.lambdas},
                 {"gamma", loss.gamma},
                 {"beta", loss.beta},
                 {"kl_epsilon", loss.kl_epsilon},
                 {"kl_temperature", loss.kl_temperature},
                 {"mode", to_string(loss.mode)},
                 {"teacher_weight", loss.teacher_weight}};
    j["train"] = {{"learning_rate", train.learning_rate}, {"batch_size", train.batch_size}};
    j["search"] = {{"expert_hidden", range_json(search.expert_hidden)},
                   {"expert_out", range_json(search.expert_out)},
                   {"levels", range_json(search.levels)},
                   {"fusion_width", range_json(search.fusion_width)},
                   {"tower_hidden", range_json(search.tower_hidden)}};
    j["data"] = data_dir;
    j["synthetic"] = synthetic.to_json();
    j["ablation"] = to_string(ablation);
    j["seeds"] = seeds;
    j["out"] = out_dir;
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        reject_unknown(j, {"evolution", "loss", "train", "search", "data", "synthetic", "ablation", "seeds", "out", "command"},
                       "run config");
        if (j.contains("evolution")) {
            const auto& e = j["evolution"];
            reject_unknown(e, {"population_size", "generations", "tournament_k", "sigma", "sigma_decay",
                               "arch_mutation_prob", "elitism_count", "inner_epochs",
                               "convergence_patience", "master_seed", "workers"},
                           "evolution");
            auto& ev = c.evolution;
            ev.population_size = e.value("population_size", ev.population_size);
            ev.generations = e.value("generations", ev.generations);
            ev.tournament_k = e.value("tournament_k", ev.tournament_k);
            ev.sigma = e.value("sigma", ev.sigma);
            ev.sigma_decay = e.value("sigma_decay", ev.sigma_decay);
            ev.arch_mutation_prob = e.value("arch_mutation_prob", ev.arch_mutation_prob);
            ev.elitism_count = e.value("elitism_count", ev.elitism_count);
            ev.inner_epochs = e.value("inner_epochs", ev.inner_epochs);
            ev.convergence_patience = e.value("convergence_patience", ev.convergence_patience);
            ev.master_seed = e.value("master_seed", ev.master_seed);
            ev.workers = e.value("workers", ev.workers);
        }
        if (j.contains("loss")) {
            const auto& l = j["loss"];
            reject_unknown(l, {"lambdas", "gamma", "beta", "kl_epsilon", "kl_temperature", "mode", "teacher_weight"},
                           "loss");
            if (l.contains("lambdas")) c.loss.lambdas = l["lambdas"].get<std::array<double, 4>>();
            c.loss.gamma = l.value("gamma", c.loss.gamma);
            c.loss.beta = l.value("beta", c.loss.beta);
            c.loss.kl_epsilon = l.value("kl_epsilon", c.loss.kl_epsilon);
            c.loss.kl_temperature = l.value("kl_temperature", c.loss.kl_temperature);
            if (l.contains("mode")) c.loss.mode = objective_mode_from_string(l["mode"].get<std::string>());
            c.loss.teacher_weight = l.value("teacher_weight", c.loss.teacher_weight);
        }
        if (j.contains("train")) {
            const auto& t = j["train"];
            reject_unknown(t, {"learning_rate", "batch_size"}, "train");
            c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
            c.train.batch_size = t.value("batch_size", c.train.batch_size);
        }
        if (j.contains("search")) {
            const auto& s = j["search"];
            reject_unknown(s, {"expert_hidden", "expert_out", "levels", "fusion_width", "tower_hidden"}, "search");
            if (s.contains("expert_hidden")) c.search.expert_hidden = range_from(s["expert_hidden"], "expert_hidden");
            if (s.contains("expert_out")) c.search.expert_out = range_from(s["expert_out"], "expert_out");
            if (s.contains("levels")) c.search.levels = range_from(s["levels"], "levels");
            if (s.contains("fusion_width")) c.search.fusion_width = range_from(s["fusion_width"], "fusion_width");
            if (s.contains("tower_hidden")) c.search.tower_hidden = range_from(s["tower_hidden"], "tower_hidden");
        }
        c.data_dir = j.value("data", c.data_dir);
        if (j.contains("synthetic")) {
            reject_unknown(j["synthetic"], {"generator", "n", "d_t", "d_a", "d_v", "noise_level", "seed", "ratios"},
                           "synthetic");
            c.synthetic = GeneratorSpec::from_json(j["synthetic"]);
        }
        if (j.contains("ablation")) c.ablation = ablation_from_string(j["ablation"].get<std::string>());
        if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        c.out_dir = j.value("out", c.out_dir);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid run config: ") + e.what());
    }
    return c;
}

RunConfig apply_ablation(AblationMode mode, RunConfig cfg) {
    cfg.ablation = mode;
    switch (mode) {
        case AblationMode::Full:
        case AblationMode::NoHierarchy:
        case AblationMode::NoEvolution:
            break;
        case AblationMode::NoCrossModal:
            cfg.loss.gamma = 0.0;
            break;
        case AblationMode::NoMtl:
            cfg.loss.lambdas = {0.0, 1.0, 0.0, 0.0};
            cfg.loss.task_active = {false, true, false, false};
            break;
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Inner loop

namespace {

void accumulate(LossReport& acc, const LossReport& r) {
    const double w = static_cast<double>(r.samples);
    if (acc.task_losses.empty()) {
        acc.task_losses.assign(r.task_losses.size(), 0.0);
        acc.task_weights.assign(r.task_weights.size(), 0.0);
    }
    for (std::size_t i = 0; i < r.task_losses.size(); ++i) acc.task_losses[i] += w * r.task_losses[i];
    for (std::size_t i = 0; i < r.task_weights.size(); ++i) acc.task_weights[i] += w * r.task_weights[i];
    acc.mtl += w * r.mtl;
    acc.kl_t += w * r.kl_t;
    acc.kl_a += w * r.kl_a;
    acc.kl_v += w * r.kl_v;
    acc.kt += w * r.kt;
    acc.teacher += w * r.teacher;
    acc.total += w * r.total;
    acc.samples += r.samples;
}

LossReport finalize(LossReport acc) {
    if (acc.samples == 0) return acc;
    const double inv = 1.0 / static_cast<double>(acc.samples);
    for (auto& v : acc.task_losses) v *= inv;
    for (auto& v : acc.task_weights) v *= inv;
    acc.mtl *= inv;
    acc.kl_t *= inv;
    acc.kl_a *= inv;
    acc.kl_v *= inv;
    acc.kt *= inv;
    acc.teacher *= inv;
    acc.total *= inv;
    return acc;
}

BatchTargets select_targets(const BatchTargets& all, const std::vector<std::size_t>& rows) {
    BatchTargets out(all.size());
    for (std::size_t t = 0; t < all.size(); ++t) {
        out[t].reserve(rows.size());
        for (auto r : rows) out[t].push_back(all[t][r]);
    }
    return out;
}

}  // namespace

TrainResult train_inner(HaenModel& model, const std::vector<MultimodalSample>& train, int epochs,
                        const LossConfig& loss, const TrainConfig& tc, Rng& rng) {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    tc.validate();
    loss.validate();
    TrainResult result;
    if (epochs == 0) return result;
    if (train.empty()) throw ConfigError("training split is empty");

    const ModalityBatch all = make_batch(train);
    const BatchTargets all_targets = make_targets(model.config().tasks, train);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    nn::ParamVector params = model.flatten();
    nn::AdamState adam;
    ForwardCache cache;
    OutputGrads grads;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        LossReport acc;
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
            const std::vector<std::size_t> rows(
                order.begin() + static_cast<long>(start),
                order.begin() + static_cast<long>(std::min(order.size(), start + tc.batch_size)));
            const ModalityBatch batch = slice_rows(all, rows);
            const BatchTargets targets = select_targets(all_targets, rows);
            const ForwardResult fwd = model.forward_full(batch, loss.kl_temperature, &cache);
            const LossReport rep = compute_losses(model.config(), fwd, targets, loss, &grads);
            if (!std::isfinite(rep.total)) {
                throw ValueError("non-finite training loss at epoch " + std::to_string(epoch + 1) +
                                 ", step " + std::to_string(result.steps + 1));
            }
            const nn::ParamVector g = model.backward(fwd, cache, grads);
            nn::adam_step(params, g, adam, tc.learning_rate);
            model.unflatten(params);
            ++result.steps;
            accumulate(acc, rep);
        }
        result.epochs.push_back(finalize(std::move(acc)));
    }
    return result;
}

LossReport evaluate_loss(const HaenModel& model, const std::vector<MultimodalSample>& samples,
                         const LossConfig& loss) {
    if (samples.empty()) throw ConfigError("cannot evaluate on an empty split");
    const auto fwd = model.forward_full(make_batch(samples), loss.kl_temperature);
    return compute_losses(model.config(), fwd, make_targets(model.config().tasks, samples), loss);
}

Predictions predict(const HaenModel& model, const std::vector<MultimodalSample>& samples,
                    bool score_from_class7) {
    const auto fwd = model.forward_full(make_batch(samples));
    Predictions p;
    const auto n = static_cast<Eigen::Index>(samples.size());
    const Matrix& reg = fwd.task_outputs.at(kSentimentTask);
    const Matrix& c7 = fwd.task_outputs.at(kClass7Task);
    const Matrix& emo = fwd.task_outputs.at(kEmotionTask);
    for (Eigen::Index b = 0; b < n; ++b) {
        if (score_from_class7) {
            double e = 0.0;
            for (Eigen::Index c = 0; c < c7.cols(); ++c) e += c7(b, c) * static_cast<double>(c - 3);
            p.scores.push_back(e);
        } else {
            p.scores.push_back(reg(b, 0));
        }
        Eigen::Index arg = 0;
        emo.row(b).maxCoeff(&arg);
        p.emotion.push_back(static_cast<int>(arg));
    }
    return p;
}

MetricsReport evaluate_metrics(const HaenModel& model, const std::vector<MultimodalSample>& samples,
                               bool score_from_class7) {
    if (samples.empty()) throw ConfigError("cannot evaluate on an empty split");
    const auto p = predict(model, samples, score_from_class7);
    std::vector<double> labels;
    std::vector<int> emotions;
    for (const auto& s : samples) {
        labels.push_back(s.labels.sentiment);
        emotions.push_back(s.labels.emotion);
    }
    return evaluate_metrics(p.scores, labels, p.emotion, emotions,
                            model.config().tasks.at(kEmotionTask).num_classes);
}

nlohmann::ordered_json loss_report_to_json(const LossReport& r) {
    return {{"task_losses", r.task_losses}, {"task_weights", r.task_weights},
            {"mtl", r.mtl},                 {"kl_t", r.kl_t},
            {"kl_a", r.kl_a},               {"kl_v", r.kl_v},
            {"kt", r.kt},                   {"teacher", r.teacher},
            {"total", r.total},             {"samples", r.samples}};
}

// ---------------------------------------------------------------------------
// Fitness

HaenEvaluator::HaenEvaluator(const HaenSpace& space, const DatasetSplit& data, LossConfig loss,
                             TrainConfig train, int inner_epochs)
    : space_(space), data_(data), loss_(std::move(loss)), train_(train), inner_epochs_(inner_epochs) {
    if (data_.train.empty() && inner_epochs_ > 0) throw ConfigError("training split is empty");
    if (data_.val.empty()) throw ConfigError("validation split is empty");
    if (inner_epochs_ < 0) throw ConfigError("inner_epochs must be >= 0");
    loss_.validate();
    train_.validate();
}

evo::Evaluation HaenEvaluator::evaluate(const evo::Genome& genome, std::uint64_t seed) const {
    HaenModel model(space_.config_for(genome.arch));
    model.unflatten(genome.weights);
    Rng rng(seed);
    const auto tr = train_inner(model, data_.train, inner_epochs_, loss_, train_, rng);
    const auto val = evaluate_loss(model, data_.val, loss_);

    evo::Evaluation e;
    e.fitness = std::isfinite(val.total) ? -val.total : -INFINITY;
    e.trained_weights = model.flatten();
    e.metrics = evaluate_metrics(model, data_.val, !loss_.active(kSentimentTask));
    for (std::size_t i = 0; i < tr.epochs.size(); ++i) {
        nlohmann::ordered_json rec{{"kind", "train_epoch"}, {"epoch", i + 1}};
        rec["loss"] = loss_report_to_json(tr.epochs[i]);
        e.log.push_back(std::move(rec));
    }
    nlohmann::ordered_json rec{{"kind", "validation"}, {"steps", tr.steps}, {"fitness", e.fitness}};
    rec["loss"] = loss_report_to_json(val);
    e.log.push_back(std::move(rec));
    return e;
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

std::string fmt_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path.string() + "' for writing");
    os << text;
    if (!os) throw Error("write failed for '" + path.string() + "'");
}

nlohmann::ordered_json history_json(const std::vector<evo::GenerationStats>& h) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& g : h) {
        arr.push_back({{"generation", g.generation},
                       {"best_fitness", g.best_fitness},
                       {"mean_fitness", g.mean_fitness},
                       {"failed", g.failed},
                       {"best_arch", g.best_arch}});
    }
    return arr;
}

std::string history_csv(const std::vector<evo::GenerationStats>& h) {
    std::ostringstream os;
    os << "generation,best_fitness,mean_fitness,best_arch_summary\n";
    for (const auto& g : h) {
        os << g.generation << ',' << fmt_double(g.best_fitness) << ',' << fmt_double(g.mean_fitness)
           << ",\"" << g.best_arch << "\"\n";
    }
    return os.str();
}

}  // namespace

void write_embeddings(const HaenModel& model, const std::vector<MultimodalSample>& samples,
                      const std::filesystem::path& path) {
    const auto fwd = model.forward_full(make_batch(samples));
    const Matrix& hs = fwd.levels.back()[Stream::Shared];
    std::ostringstream os;
    os << "id,label";
    for (Eigen::Index c = 0; c < hs.cols(); ++c) os << ",h" << c;
    os << '\n';
    for (std::size_t i = 0; i < samples.size(); ++i) {
        os << samples[i].id << ',' << samples[i].labels.class7;
        for (Eigen::Index c = 0; c < hs.cols(); ++c) {
            os << ',' << fmt_double(hs(static_cast<Eigen::Index>(i), c));
        }
        os << '\n';
    }
    write_text(path, os.str());
}

SeedResult run_seed(const RunConfig& user_cfg, const DatasetSplit& data, std::uint64_t seed,
                    const std::filesystem::path& seed_dir) {
    RunConfig cfg = apply_ablation(user_cfg.ablation, user_cfg);
    cfg.evolution.master_seed = seed;
    cfg.validate();
    if (data.train.empty() || data.val.empty() || data.test.empty()) {
        throw ConfigError("train, validation and test splits must all be nonempty");
    }
    const HaenSpace space(cfg.search, data.header.d_t, data.header.d_a, data.header.d_v, cfg.ablation);
    const HaenEvaluator evaluator(space, data, cfg.loss, cfg.train, cfg.evolution.inner_epochs);
    const bool score_from_class7 = !cfg.loss.active(kSentimentTask);

    SeedResult r;
    r.seed = seed;
    double best_fitness = -INFINITY;
    if (cfg.ablation == AblationMode::NoEvolution) {
        // Same initial genome as member 0 of the evolutionary run, trained for
        // generations x inner_epochs epochs without the outer loop.
        Rng init = make_rng(seed, {0, 0});
        evo::Genome genome = evo::make_genome(space, space.default_arch(), init);
        HaenModel model(space.config_for(genome.arch));
        model.unflatten(genome.weights);
        Rng rng(evo::evaluation_seed(seed, 0, 0));
        const auto tr = train_inner(model, data.train, cfg.evolution.generations * cfg.evolution.inner_epochs,
                                    cfg.loss, cfg.train, rng);
        const auto val = evaluate_loss(model, data.val, cfg.loss);
        best_fitness = -val.total;
        genome.weights = model.flatten();
        r.best = genome;
        r.gradient_steps = tr.steps;
        r.history.push_back({0, best_fitness, best_fitness, std::isfinite(best_fitness) ? 0u : 1u,
                             space.summarize(genome.arch)});
        for (std::size_t i = 0; i < tr.epochs.size(); ++i) {
            nlohmann::ordered_json rec{{"generation", 0}, {"member", 0}, {"kind", "train_epoch"}, {"epoch", i + 1}};
            rec["loss"] = loss_report_to_json(tr.epochs[i]);
            r.trace.log.push_back(std::move(rec));
        }
        nlohmann::ordered_json rec{{"generation", 0}, {"member", 0}, {"kind", "validation"},
                                   {"steps", tr.steps}, {"fitness", best_fitness}};
        rec["loss"] = loss_report_to_json(val);
        r.trace.log.push_back(std::move(rec));
        r.trace.evaluations = 1;
    } else {
        auto res = evo::run_evolution(cfg.evolution, space, evaluator);
        best_fitness = res.best.fitness.value_or(-INFINITY);
        r.best = std::move(res.best.genome);
        r.history = std::move(res.history);
        r.trace = std::move(res.trace);
        for (const auto& rec : r.trace.log) {
            if (rec.value("kind", "") == "validation") r.gradient_steps += rec.value("steps", std::size_t{0});
        }
    }
    if (!std::isfinite(best_fitness)) throw ValueError("no individual produced a finite fitness");

    HaenModel model(space.config_for(r.best.arch));
    model.unflatten(r.best.weights);
    r.test = evaluate_metrics(model, data.test, score_from_class7);
    r.ok = true;

    if (!seed_dir.empty()) {
        std::filesystem::create_directories(seed_dir);
        nlohmann::ordered_json m{{"seed", seed},
                                 {"ablation", to_string(cfg.ablation)},
                                 {"best_fitness", best_fitness},
                                 {"gradient_steps", r.gradient_steps},
                                 {"test", r.test.to_json()}};
        write_text(seed_dir / "metrics.json", m.dump(2) + "\n");
        nlohmann::ordered_json meta{{"seed", seed},
                                    {"ablation", to_string(cfg.ablation)},
                                    {"score_source", score_from_class7 ? "class7_expectation" : "regression"},
                                    {"arch", r.best.arch},
                                    {"fitness", best_fitness}};
        save_checkpoint(model, seed_dir / "checkpoint.json", meta);
        write_text(seed_dir / "history.csv", history_csv(r.history));
        write_text(seed_dir / "history.json", history_json(r.history).dump(2) + "\n");
        std::string log;
        for (const auto& rec : r.trace.log) log += rec.dump() + "\n";
        write_text(seed_dir / "run_log.jsonl", log);
        write_embeddings(model, data.test, seed_dir / "embeddings.csv");
    }
    return r;
}

DatasetSplit load_run_data(const RunConfig& cfg) {
    if (!cfg.data_dir.empty()) return load_dataset_dir(cfg.data_dir);
    return generate_synthetic(cfg.synthetic);
}

ExperimentResult run_experiment(const RunConfig& cfg) {
    cfg.validate();
    const auto data = load_run_data(cfg);
    return run_experiment(cfg, data);
}

nlohmann::ordered_json summary_to_json(const RunConfig& cfg, const ExperimentResult& r) {
    auto metrics = [](const MetricSummary& s) {
        return nlohmann::ordered_json{{"acc7", s.acc7}, {"acc5", s.acc5}, {"acc2", s.acc2},
                                      {"mae", s.mae},   {"weighted_f1", s.weighted_f1}};
    };
    nlohmann::ordered_json j;
    j["ablation"] = to_string(cfg.ablation);
    j["seeds"] = cfg.seeds;
    j["failed"] = r.failed;
    j["mean"] = metrics(r.mean);
    j["std"] = metrics(r.std);
    auto per_seed = nlohmann::ordered_json::array();
    for (const auto& s : r.seeds) {
        nlohmann::ordered_json e{{"seed", s.seed}, {"ok", s.ok}};
        if (s.ok) {
            e["test"] = s.test.to_json();
        } else {
            e["error"] = s.error;
        }
        per_seed.push_back(std::move(e));
    }
    j["per_seed"] = per_seed;
    return j;
}

ExperimentResult run_experiment(const RunConfig& cfg, const DatasetSplit& data) {
    cfg.validate();
    const std::filesystem::path out = cfg.out_dir;
    if (!out.empty()) std::filesystem::create_directories(out);

    ExperimentResult res;
    for (auto seed : cfg.seeds) {
        const auto seed_dir = out.empty() ? std::filesystem::path() : out / ("seed_" + std::to_string(seed));
        try {
            spdlog::info("[{}] seed {}: starting", to_string(cfg.ablation), seed);
            res.seeds.push_back(run_seed(cfg, data, seed, seed_dir));
            const auto& t = res.seeds.back().test;
            spdlog::info("[{}] seed {}: acc2 {:.2f} acc7 {:.2f} mae {:.4f}", to_string(cfg.ablation), seed,
                         t.acc2, t.acc7, t.mae);
        } catch (const std::exception& e) {
            SeedResult failed;
            failed.seed = seed;
            failed.error = e.what();
            res.seeds.push_back(std::move(failed));
            ++res.failed;
            spdlog::error("[{}] seed {} failed: {}", to_string(cfg.ablation), seed, e.what());
        }
    }

    std::vector<const MetricsReport*> ok;
    for (const auto& s : res.seeds) {
        if (s.ok) ok.push_back(&s.test);
    }
    if (!ok.empty()) {
        const double n = static_cast<double>(ok.size());
        auto stat = [&](auto field, double& mean, double& sd) {
            double sum = 0.0;
            for (const auto* m : ok) sum += field(*m);
            mean = sum / n;
            double sq = 0.0;
            for (const auto* m : ok) sq += (field(*m) - mean) * (field(*m) - mean);
            sd = std::sqrt(sq / n);
        };
        stat([](const MetricsReport& m) { return m.acc7; }, res.mean.acc7, res.std.acc7);
        stat([](const MetricsReport& m) { return m.acc5; }, res.mean.acc5, res.std.acc5);
        stat([](const MetricsReport& m) { return m.acc2; }, res.mean.acc2, res.std.acc2);
        stat([](const MetricsReport& m) { return m.mae; }, res.mean.mae, res.std.mae);
        stat([](const MetricsReport& m) { return m.weighted_f1; }, res.mean.weighted_f1, res.std.weighted_f1);
    }

    if (!out.empty()) {
        write_text(out / "config_resolved.json", cfg.to_json().dump(2) + "\n");
        std::ostringstream csv;
        csv << "seed,status,acc7,acc5,acc2,mae,weighted_f1\n";
        for (const auto& s : res.seeds) {
            csv << s.seed << ',' << (s.ok ? "ok" : "failed");
            if (s.ok) {
                csv << ',' << fmt_double(s.test.acc7) << ',' << fmt_double(s.test.acc5) << ','
                    << fmt_double(s.test.acc2) << ',' << fmt_double(s.test.mae) << ','
                    << fmt_double(s.test.weighted_f1);
            } else {
                csv << ",,,,,";
            }
            csv << '\n';
        }
        csv << "mean,," << fmt_double(res.mean.acc7) << ',' << fmt_double(res.mean.acc5) << ','
            << fmt_double(res.mean.acc2) << ',' << fmt_double(res.mean.mae) << ','
            << fmt_double(res.mean.weighted_f1) << '\n';
        csv << "std,," << fmt_double(res.std.acc7) << ',' << fmt_double(res.std.acc5) << ','
            << fmt_double(res.std.acc2) << ',' << fmt_double(res.std.mae) << ','
            << fmt_double(res.std.weighted_f1) << '\n';
        write_text(out / "metrics_summary.csv", csv.str());
        write_text(out / "metrics_summary.json", summary_to_json(cfg, res).dump(2) + "\n");
    }
    return res;
}

}  // namespace haemsa
