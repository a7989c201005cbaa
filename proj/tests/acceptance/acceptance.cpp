// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include <spdlog/spdlog.h>

#include "haemsa/evolution.hpp"
#include "haemsa/metrics.hpp"
#include "haemsa/objectives.hpp"
#include "haemsa/trainer.hpp"
#include "support/oracles.hpp"

using namespace haemsa;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
        o = fn();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("[%s] criterion %d: %s | %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<double> random_dist(std::mt19937_64& rng, std::size_t k) {
    std::gamma_distribution<double> g(0.7, 1.0);
    std::vector<double> p(k);
    double s = 0;
    for (auto& v : p) s += (v = g(rng) + 1e-12);
    for (auto& v : p) v /= s;
    return p;
}

HaenModel random_model(const HaenConfig& cfg, std::uint64_t seed) {
    HaenModel m(cfg);
    Rng rng(seed);
    m.init_xavier(rng);
    auto p = m.flatten();
    std::normal_distribution<double> n(0.0, 0.2);
    for (std::size_t b = 0; b < p.layout.size(); ++b) {
        if (!p.layout[b].is_bias) continue;
        for (auto& v : p.block(b)) v = n(rng);
    }
    m.unflatten(p);
    return m;
}

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240601);
    double worst = 0.0;
    std::string worst_where;
    const int configs = 24;
    for (int i = 0; i < configs; ++i) {
        const HaenConfig cfg = oracle::random_small_config(rng);
        HaenModel m = random_model(cfg, static_cast<std::uint64_t>(i) + 1);
        const auto batch = oracle::random_batch(rng, 4, cfg);
        const auto targets = oracle::targets_for(cfg.tasks, oracle::random_labels(rng, 4));
        LossConfig loss;
        loss.mode = i % 2 ? ObjectiveMode::Attention : ObjectiveMode::WeightedSum;
        loss.kl_temperature = i % 3 == 2 ? 2.0 : 1.0;
        for (const auto& [group, e] : oracle::model_gradient_errors(m, batch, targets, loss)) {
            if (e.rel > worst) {
                worst = e.rel;
                worst_where = "config " + std::to_string(i) + " group " + group;
            }
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 60.0,
            std::to_string(configs) + " configs, max group relative error " + fmt("%.3g", worst) + " (" +
                worst_where + ", limit 1e-4), " + fmt("%.1f", secs) + " s (limit 60 s)"};
}

Outcome kl_suite() {
    std::mt19937_64 rng(7);
    double min_kl = INFINITY, max_self = 0.0;
    bool finite = true;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t k = 2 + static_cast<std::size_t>(i % 7);
        const auto p = random_dist(rng, k), q = random_dist(rng, k);
        min_kl = std::min(min_kl, kl_divergence(p, q));
        max_self = std::max(max_self, std::fabs(kl_divergence(p, p)));
        auto qz = q;
        qz[0] = 0.0;
        qz[k - 1] = 0.0;
        finite = finite && std::isfinite(kl_divergence(p, qz));
        const auto g = kl_divergence_grad_q(p, qz);
        for (double v : g) finite = finite && std::isfinite(v);
    }
    return {min_kl >= 0.0 && max_self <= 1e-12 && finite,
            "min KL over 1000 pairs " + fmt("%.3g", min_kl) + ", max |KL(p,p)| " + fmt("%.3g", max_self) +
                " (limit 1e-12), zero-containing q finite: " + (finite ? "yes" : "no")};
}

Outcome operator_algebra() {
    // Blend exactness on same-architecture parents.
    const evo::FixedSpace space({{"w", 3, 4, 0, false}, {"b", 1, 3, 12, true}});
    Rng rng(11);
    const auto a = evo::make_genome(space, {}, rng);
    auto b = evo::make_genome(space, {}, rng);
    std::normal_distribution<double> n(0, 1);
    for (auto& v : b.weights.values) v = n(rng);
    double blend_err = 0;
    for (double alpha : {0.0, 0.25, 0.5, 1.0}) {
        const auto c = evo::crossover(space, a, b, alpha, rng);
        for (std::size_t i = 0; i < c.weights.size(); ++i) {
            blend_err = std::max(blend_err, std::fabs(c.weights.values[i] - (alpha * a.weights.values[i] +
                                                                              (1 - alpha) * b.weights.values[i])));
        }
    }
    // Mutation moments on a single weight.
    const evo::FixedSpace one({{"w", 1, 1, 0, false}});
    evo::Genome g;
    g.weights = nn::ParamVector(one.layout({}));
    const double sigma = 0.1;
    const int draws = 100000;
    double sum = 0, sq = 0;
    for (int i = 0; i < draws; ++i) {
        const double d = evo::mutate(one, g, sigma, 0.0, rng).weights.values[0];
        sum += d;
        sq += d * d;
    }
    const double mean = sum / draws, sd = std::sqrt(sq / draws - mean * mean);
    const double mean_bound = 4 * sigma / std::sqrt(static_cast<double>(draws));
    const bool moments = std::fabs(mean) <= mean_bound && std::fabs(sd - sigma) <= 0.02 * sigma;
    // Tournament: k = N gives the argmax; k = 1 is uniform.
    evo::Population pop;
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 10; ++i) {
        evo::Individual ind;
        ind.fitness = u(rng);
        pop.members.push_back(ind);
    }
    const auto argmax = static_cast<std::size_t>(
        std::max_element(pop.members.begin(), pop.members.end(),
                         [](const auto& x, const auto& y) { return *x.fitness < *y.fitness; }) -
        pop.members.begin());
    bool full_ok = true;
    for (int i = 0; i < 100; ++i) full_ok = full_ok && evo::tournament_select(pop, 10, rng) == argmax;
    std::vector<double> counts(10, 0);
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) counts[evo::tournament_select(pop, 1, rng)] += 1;
    double chi2 = 0;
    for (double c : counts) chi2 += (c - trials / 10.0) * (c - trials / 10.0) / (trials / 10.0);
    const double crit = 21.666;  // chi-squared, 9 degrees of freedom, p = 0.01
    return {blend_err <= 1e-15 && moments && full_ok && chi2 < crit,
            "blend max error " + fmt("%.2g", blend_err) + "; mutation mean " + fmt("%.2e", mean) + " (bound " +
                fmt("%.2e", mean_bound) + "), std " + fmt("%.5f", sd) + " (sigma 0.1, 2%); k=N argmax " +
                (full_ok ? "ok" : "wrong") + "; k=1 chi2 " + fmt("%.2f", chi2) + " < " + fmt("%.3f", crit)};
}

Outcome evolution_sanity() {
    const auto t0 = Clock::now();
    const evo::FixedSpace space({{"w", 5, 4, 0, false}});
    const evo::FunctionEvaluator eval([](const evo::Genome& g) {
        double s = 0;
        for (double v : g.weights.values) s += v * v;
        return -s;
    });
    evo::EvolutionConfig cfg;
    cfg.population_size = 16;
    cfg.generations = 20;
    cfg.sigma = 0.1;
    cfg.elitism_count = 1;
    cfg.master_seed = 2024;
    cfg.workers = 1;
    const auto r1 = evo::run_evolution(cfg, space, eval);
    cfg.workers = 3;
    const auto r2 = evo::run_evolution(cfg, space, eval);
    bool monotone = true;
    for (std::size_t i = 1; i < r1.history.size(); ++i) {
        monotone = monotone && r1.history[i].best_fitness >= r1.history[i - 1].best_fitness;
    }
    const double f0 = r1.history.front().best_fitness, f20 = r1.history.back().best_fitness;
    const double improvement = (f20 - f0) / std::fabs(f0);
    bool identical = r1.history.size() == r2.history.size();
    for (std::size_t i = 0; identical && i < r1.history.size(); ++i) {
        identical = r1.history[i].best_fitness == r2.history[i].best_fitness &&
                    r1.history[i].mean_fitness == r2.history[i].mean_fitness;
    }
    for (std::size_t i = 0; identical && i < r1.final_population.members.size(); ++i) {
        identical = r1.final_population.members[i].genome == r2.final_population.members[i].genome;
    }
    const double secs = seconds_since(t0);
    return {improvement >= 0.5 && monotone && identical && secs < 30.0,
            "best fitness " + fmt("%.4f", f0) + " -> " + fmt("%.4f", f20) + " (improvement " +
                fmt("%.1f", 100 * improvement) + "%, need 50%), monotone " + (monotone ? "yes" : "no") +
                ", trace identical across 1 and 3 workers " + (identical ? "yes" : "no") + ", " +
                fmt("%.2f", secs) + " s"};
}

Outcome metrics_oracle() {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-3.5, 3.5);
    std::uniform_int_distribution<int> c(0, 5);
    double worst = 0;
    for (int set = 0; set < 200; ++set) {
        std::vector<double> p(200), y(200);
        std::vector<int> cp(200), cy(200);
        for (int i = 0; i < 200; ++i) {
            p[i] = u(rng);
            y[i] = std::clamp(u(rng), -3.0, 3.0);
            cp[i] = c(rng);
            cy[i] = i % 2 ? cp[i] : c(rng);
        }
        const auto m = evaluate_metrics(p, y, cp, cy, 6);
        const auto o = oracle::metric_oracle(p, y, cp, cy, 6);
        for (double d : {m.mae - o.mae, m.acc7 - o.acc7, m.acc5 - o.acc5, m.acc2 - o.acc2,
                         m.weighted_f1 - o.weighted_f1}) {
            worst = std::max(worst, std::fabs(d));
        }
        for (std::size_t k = 0; k < 6; ++k) worst = std::max(worst, std::fabs(m.per_class_f1[k] - o.f1[k]));
    }
    const double hand = f1_metrics(std::vector<int>{0, 0, 1}, std::vector<int>{0, 1, 1}, 2).weighted_f1;
    const bool hand_ok = std::fabs(hand - 200.0 / 3.0) <= 1e-9;
    return {worst <= 1e-9 && hand_ok,
            "max deviation from oracle over 200 sets " + fmt("%.2g", worst) + " (limit 1e-9); hand case weighted-F1 " +
                fmt("%.4f", hand) + "%"};
}

struct Benchmark {
    DatasetSplit data;
    std::map<AblationMode, ExperimentResult> results;
    std::map<AblationMode, double> seconds;
    fs::path root;
};

RunConfig benchmark_config(AblationMode mode, const fs::path& out) {
    RunConfig c;
    c.ablation = mode;
    c.seeds = {1, 2, 3, 4, 5};
    c.out_dir = out.string();
    return c;
}

ExperimentResult run_mode(Benchmark& b, AblationMode mode) {
    const auto t0 = Clock::now();
    auto r = run_experiment(benchmark_config(mode, b.root / to_string(mode)), b.data);
    b.seconds[mode] = seconds_since(t0);
    b.results[mode] = r;
    return r;
}

Outcome end_to_end(Benchmark& b) {
    const auto r = run_mode(b, AblationMode::Full);
    double pos = 0;
    for (const auto& s : b.data.test) pos += s.labels.sentiment >= 0.0;
    const double majority = 100.0 * std::max(pos, b.data.test.size() - pos) / b.data.test.size();
    const double margin = r.mean.acc2 - majority;
    const double secs = b.seconds[AblationMode::Full];
    return {r.failed == 0 && margin >= 15.0 && secs < 300.0,
            "mean test Acc-2 " + fmt("%.2f", r.mean.acc2) + "% vs majority " + fmt("%.2f", majority) +
                "% (margin " + fmt("%.2f", margin) + " pp, need 15), " + std::to_string(r.failed) +
                " failed seeds, " + fmt("%.1f", secs) + " s (limit 300 s)"};
}

Outcome ablation_ordering(Benchmark& b) {
    const auto& full = b.results.at(AblationMode::Full);
    bool ok = true;
    std::string detail = "full Acc-2 " + fmt("%.2f", full.mean.acc2) + " MAE " + fmt("%.4f", full.mean.mae);
    for (auto mode : kAllAblations) {
        if (mode == AblationMode::Full) continue;
        const auto r = run_mode(b, mode);
        const double d_acc = full.mean.acc2 - r.mean.acc2;
        const double d_mae = r.mean.mae - full.mean.mae;
        // Means of identical per-seed percentages can differ in the last bit.
        const bool mode_ok = r.failed == 0 && d_acc >= -1e-9 && d_mae >= -1e-9;
        ok = ok && mode_ok;
        detail += "; " + to_string(mode) + (mode_ok ? "" : " [violated]") + " Acc-2 " + fmt("%.2f", r.mean.acc2) +
                  " (margin " + fmt("%+.2f", d_acc) + ") MAE " + fmt("%.4f", r.mean.mae) + " (margin " +
                  fmt("%+.4f", d_mae) + ")";
    }
    return {ok, detail};
}

Outcome determinism(Benchmark& b) {
    const auto first = b.root / to_string(AblationMode::Full) / "metrics_summary.json";
    const auto again_dir = b.root / "full_repeat";
    run_experiment(benchmark_config(AblationMode::Full, again_dir), b.data);
    const auto x = slurp(first), y = slurp(again_dir / "metrics_summary.json");
    return {!x.empty() && x == y, "metrics_summary.json " + std::to_string(x.size()) + " bytes, repeat " +
                                      (x == y ? "byte-identical" : "differs")};
}

Outcome uniform_anchor(const DatasetSplit& data) {
    const RunConfig c;
    const HaenSpace space(c.search, data.header.d_t, data.header.d_a, data.header.d_v);
    const HaenEvaluator ev(space, data, c.loss, c.train, 0);
    evo::Genome g;
    g.arch = space.default_arch();
    g.weights = nn::ParamVector(space.layout(g.arch));
    const auto e = ev.evaluate(g, 1);
    double ce7 = NAN;
    for (const auto& rec : e.log) {
        if (rec.value("kind", "") == "validation") ce7 = rec["loss"]["task_losses"][kClass7Task].get<double>();
    }
    const double err = std::fabs(ce7 - std::log(7.0));
    return {err <= 1e-6 && std::isfinite(e.fitness),
            "7-class CE " + fmt("%.9f", ce7) + " vs ln 7 = " + fmt("%.9f", std::log(7.0)) + " (|diff| " +
                fmt("%.2g", err) + ", limit 1e-6)"};
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::warn);
    Benchmark bench;
    bench.data = generate_synthetic(GeneratorSpec{});
    bench.root = fs::temp_directory_path() / "haemsa_acceptance";
    fs::remove_all(bench.root);

    report(1, "analytic gradients match finite differences", gradient_suite);
    report(2, "KL divergence is non-negative, zero on equal inputs, finite under zeros", kl_suite);
    report(3, "crossover, mutation and tournament algebra", operator_algebra);
    report(4, "evolution improves the sphere surrogate deterministically", evolution_sanity);
    report(5, "metrics agree with brute-force oracles", metrics_oracle);
    report(6, "full model beats the majority baseline on the synthetic benchmark", [&] { return end_to_end(bench); });
    report(7, "full model is at least as good as every ablation (Acc-2 and MAE)", [&] { return ablation_ordering(bench); });
    report(8, "repeated runs give byte-identical metrics_summary.json", [&] { return determinism(bench); });
    report(9, "untrained zero-weight genome has 7-class loss ln 7", [&] { return uniform_anchor(bench.data); });

    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
