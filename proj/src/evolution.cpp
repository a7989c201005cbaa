#include "haemsa/evolution.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>

#include "haemsa/error.hpp"

namespace haemsa::evo {

std::vector<int> GenomeSpace::default_arch() const {
    std::vector<int> arch;
    for (const auto& g : genes()) arch.push_back((g.lo + g.hi) / 2);
    return arch;
}

std::string GenomeSpace::summarize(const std::vector<int>& arch) const {
    std::ostringstream os;
    const auto& gs = genes();
    for (std::size_t i = 0; i < arch.size() && i < gs.size(); ++i) {
        if (i) os << ' ';
        os << gs[i].name << '=' << arch[i];
    }
    return os.str();
}

bool GenomeSpace::in_bounds(const std::vector<int>& arch) const {
    const auto& gs = genes();
    if (arch.size() != gs.size()) return false;
    for (std::size_t i = 0; i < gs.size(); ++i) {
        if (arch[i] < gs[i].lo || arch[i] > gs[i].hi) return false;
    }
    return true;
}

void Genome::validate(const GenomeSpace& space) const {
    if (!space.in_bounds(arch)) throw StateError("genome architecture outside search bounds");
    const auto expected = space.layout(arch);
    if (weights.layout != expected || weights.values.size() != nn::layout_size(expected)) {
        throw StateError("genome weights do not match the layout implied by its architecture");
    }
}

Genome make_genome(const GenomeSpace& space, std::vector<int> arch, Rng& rng) {
    if (!space.in_bounds(arch)) throw ConfigError("architecture genes outside search bounds");
    Genome g;
    g.weights = nn::ParamVector(space.layout(arch));
    g.arch = std::move(arch);
    nn::init_blocks(g.weights, rng);
    return g;
}

Genome random_genome(const GenomeSpace& space, Rng& rng) {
    std::vector<int> arch;
    for (const auto& gene : space.genes()) {
        arch.push_back(std::uniform_int_distribution<int>(gene.lo, gene.hi)(rng));
    }
    return make_genome(space, std::move(arch), rng);
}

namespace {

// Rebuilds `weights` for a new layout, keeping every block whose name and
// shape survive and initializing the rest.
nn::ParamVector relayout(const nn::ParamVector& old, nn::ParamLayout layout, Rng& rng) {
    nn::ParamVector out(std::move(layout));
    for (std::size_t i = 0; i < out.layout.size(); ++i) {
        const auto j = old.find(out.layout[i].name);
        if (j >= 0 && old.layout[static_cast<std::size_t>(j)].same_shape(out.layout[i])) {
            auto src = old.block(static_cast<std::size_t>(j));
            std::copy(src.begin(), src.end(), out.block(i).begin());
        } else {
            nn::init_block(out, i, rng);
        }
    }
    return out;
}

}  // namespace

Genome crossover(const GenomeSpace& space, const Genome& a, const Genome& b, Rng& rng) {
    const double alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return crossover(space, a, b, alpha, rng);
}

Genome crossover(const GenomeSpace& space, const Genome& a, const Genome& b, double alpha, Rng& rng) {
    if (a.arch.size() != b.arch.size()) throw StateError("parents come from different genome spaces");
    Genome child;
    child.arch.resize(a.arch.size());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < a.arch.size(); ++i) {
        child.arch[i] = unit(rng) < alpha ? a.arch[i] : b.arch[i];
    }
    child.birth_gen = std::max(a.birth_gen, b.birth_gen);
    child.weights = nn::ParamVector(space.layout(child.arch));
    for (std::size_t i = 0; i < child.weights.layout.size(); ++i) {
        const auto& blk = child.weights.layout[i];
        const auto ia = a.weights.find(blk.name);
        const auto ib = b.weights.find(blk.name);
        const bool a_fits = ia >= 0 && a.weights.layout[static_cast<std::size_t>(ia)].same_shape(blk);
        const bool b_fits = ib >= 0 && b.weights.layout[static_cast<std::size_t>(ib)].same_shape(blk);
        auto dst = child.weights.block(i);
        if (a_fits && b_fits) {
            auto wa = a.weights.block(static_cast<std::size_t>(ia));
            auto wb = b.weights.block(static_cast<std::size_t>(ib));
            for (std::size_t k = 0; k < dst.size(); ++k) {
                // Equal parent values are kept exactly.
                dst[k] = wa[k] == wb[k] ? wa[k] : alpha * wa[k] + (1.0 - alpha) * wb[k];
            }
        } else if (a_fits) {
            auto src = a.weights.block(static_cast<std::size_t>(ia));
            std::copy(src.begin(), src.end(), dst.begin());
        } else if (b_fits) {
            auto src = b.weights.block(static_cast<std::size_t>(ib));
            std::copy(src.begin(), src.end(), dst.begin());
        } else {
            nn::init_block(child.weights, i, rng);
        }
    }
    return child;
}

Genome mutate(const GenomeSpace& space, const Genome& g, double sigma, double arch_prob, Rng& rng) {
    Genome out = g;
    const auto& genes = space.genes();
    bool arch_changed = false;
    if (arch_prob > 0.0) {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (std::size_t i = 0; i < genes.size(); ++i) {
            if (unit(rng) < arch_prob) {
                const int v = std::uniform_int_distribution<int>(genes[i].lo, genes[i].hi)(rng);
                arch_changed = arch_changed || v != out.arch[i];
                out.arch[i] = v;
            }
        }
    }
    if (arch_changed) out.weights = relayout(g.weights, space.layout(out.arch), rng);
    if (sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, sigma);
        for (auto& w : out.weights.values) w += noise(rng);
    }
    return out;
}

std::size_t tournament_select(const Population& pop, std::size_t k, Rng& rng) {
    const std::size_t n = pop.members.size();
    if (k < 1 || k > n) throw ConfigError("tournament size must be in [1, population size]");
    for (const auto& m : pop.members) {
        if (!m.evaluated()) throw StateError("tournament over an unevaluated population");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first k entries are a uniform k-subset.
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
        std::swap(idx[i], idx[j]);
    }
    std::size_t best = idx[0];
    for (std::size_t i = 1; i < k; ++i) {
        const std::size_t c = idx[i];
        const double fc = *pop.members[c].fitness;
        const double fb = *pop.members[best].fitness;
        if (fc > fb || (fc == fb && c < best)) best = c;
    }
    return best;
}

void EvolutionConfig::validate() const {
    if (population_size < 2) throw ConfigError("population_size must be >= 2");
    if (generations < 1) throw ConfigError("generations must be >= 1");
    if (tournament_k < 1 || tournament_k > population_size) {
        throw ConfigError("tournament_k must be in [1, population_size]");
    }
    if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
    if (!(arch_mutation_prob >= 0.0 && arch_mutation_prob <= 1.0)) {
        throw ConfigError("arch_mutation_prob must be in [0, 1]");
    }
    if (elitism_count >= population_size) throw ConfigError("elitism_count must be < population_size");
    if (inner_epochs < 0) throw ConfigError("inner_epochs must be >= 0");
    if (convergence_patience < 0) throw ConfigError("convergence_patience must be >= 0");
    if (workers < 1) throw ConfigError("workers must be >= 1");
}

double EvolutionConfig::sigma_at(int generation) const {
    if (!sigma_decay || generation <= 1) return sigma;
    return sigma * std::pow(0.97, generation - 1);
}

std::uint64_t evaluation_seed(std::uint64_t master_seed, int generation, std::size_t member) {
    return derive_seed(master_seed, {1, static_cast<std::uint64_t>(generation), member});
}

void evaluate_members(Population& pop, const std::vector<std::size_t>& members,
                      const FitnessEvaluator& evaluator, const EvolutionConfig& cfg,
                      RunTrace* trace) {
    std::vector<Evaluation> results(members.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < members.size(); i = next++) {
            const auto m = members[i];
            Evaluation e;
            try {
                e = evaluator.evaluate(pop.members[m].genome,
                                       evaluation_seed(cfg.master_seed, pop.generation, m));
            } catch (const std::exception&) {
                e = Evaluation{};
            }
            if (!std::isfinite(e.fitness)) e = Evaluation{};
            results[i] = std::move(e);
        }
    };
    const unsigned n_threads =
        static_cast<unsigned>(std::min<std::size_t>(cfg.workers, members.size()));
    if (n_threads <= 1) {
        work();
    } else {
        std::vector<std::jthread> threads;
        for (unsigned t = 0; t < n_threads; ++t) threads.emplace_back(work);
    }
    for (std::size_t i = 0; i < members.size(); ++i) {
        auto& ind = pop.members[members[i]];
        ind.fitness = results[i].fitness;
        ind.eval_metrics = results[i].metrics;
        if (results[i].trained_weights) ind.genome.weights = std::move(*results[i].trained_weights);
    }
    if (trace) {
        trace->evaluations += members.size();
        for (std::size_t i = 0; i < members.size(); ++i) {
            for (auto& rec : results[i].log) {
                nlohmann::ordered_json tagged{{"generation", pop.generation}, {"member", members[i]}};
                for (auto& [k, v] : rec.items()) tagged[k] = std::move(v);
                trace->log.push_back(std::move(tagged));
            }
        }
    }
}

Population initial_population(const EvolutionConfig& cfg, const GenomeSpace& space,
                              const FitnessEvaluator& evaluator, RunTrace* trace) {
    cfg.validate();
    Population pop;
    pop.generation = 0;
    for (std::size_t i = 0; i < cfg.population_size; ++i) {
        Rng rng = make_rng(cfg.master_seed, {0, i});
        Individual ind;
        ind.genome = i == 0 ? make_genome(space, space.default_arch(), rng) : random_genome(space, rng);
        pop.members.push_back(std::move(ind));
    }
    std::vector<std::size_t> all(cfg.population_size);
    std::iota(all.begin(), all.end(), 0);
    evaluate_members(pop, all, evaluator, cfg, trace);
    return pop;
}

std::vector<std::size_t> rank_members(const Population& pop) {
    std::vector<std::size_t> order(pop.members.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pop.members[a].fitness.value_or(-INFINITY) > pop.members[b].fitness.value_or(-INFINITY);
    });
    return order;
}

Population evolve_generation(const Population& pop, const EvolutionConfig& cfg,
                             const GenomeSpace& space, const FitnessEvaluator& evaluator, Rng& rng,
                             RunTrace* trace) {
    cfg.validate();
    if (pop.members.size() != cfg.population_size) {
        throw StateError("population size does not match configuration");
    }
    for (const auto& m : pop.members) {
        if (!m.evaluated()) throw StateError("evolve_generation needs an evaluated population");
    }
    Population next;
    next.generation = pop.generation + 1;
    const auto order = rank_members(pop);
    for (std::size_t e = 0; e < cfg.elitism_count; ++e) next.members.push_back(pop.members[order[e]]);

    const double sigma = cfg.sigma_at(next.generation);
    std::vector<std::size_t> fresh;
    while (next.members.size() < cfg.population_size) {
        const auto i = tournament_select(pop, cfg.tournament_k, rng);
        const auto j = tournament_select(pop, cfg.tournament_k, rng);
        Genome child = crossover(space, pop.members[i].genome, pop.members[j].genome, rng);
        child = mutate(space, child, sigma, cfg.arch_mutation_prob, rng);
        child.birth_gen = next.generation;
        if (trace) {
            ++trace->crossovers;
            ++trace->mutations;
        }
        fresh.push_back(next.members.size());
        Individual ind;
        ind.genome = std::move(child);
        next.members.push_back(std::move(ind));
    }
    evaluate_members(next, fresh, evaluator, cfg, trace);
    return next;
}

GenerationStats summarize_generation(const Population& pop, const GenomeSpace& space) {
    GenerationStats s;
    s.generation = pop.generation;
    const auto order = rank_members(pop);
    s.best_fitness = pop.members[order.front()].fitness.value_or(-INFINITY);
    s.best_arch = space.summarize(pop.members[order.front()].genome.arch);
    double sum = 0.0;
    std::size_t finite = 0;
    for (const auto& m : pop.members) {
        const double f = m.fitness.value_or(-INFINITY);
        if (std::isfinite(f)) {
            sum += f;
            ++finite;
        } else {
            ++s.failed;
        }
    }
    s.mean_fitness = finite ? sum / static_cast<double>(finite) : -INFINITY;
    return s;
}

EvolutionResult run_evolution(const EvolutionConfig& cfg, const GenomeSpace& space,
                              const FitnessEvaluator& evaluator) {
    cfg.validate();
    EvolutionResult result;
    Population pop = initial_population(cfg, space, evaluator, &result.trace);
    result.history.push_back(summarize_generation(pop, space));
    Rng rng = make_rng(cfg.master_seed, {2});
    int stale = 0;
    for (int g = 1; g <= cfg.generations; ++g) {
        pop = evolve_generation(pop, cfg, space, evaluator, rng, &result.trace);
        result.history.push_back(summarize_generation(pop, space));
        const double gain = result.history.back().best_fitness -
                            result.history[result.history.size() - 2].best_fitness;
        stale = gain < 1e-6 ? stale + 1 : 0;
        if (cfg.convergence_patience > 0 && stale >= cfg.convergence_patience) break;
    }
    result.best = pop.members[rank_members(pop).front()];
    result.final_population = std::move(pop);
    return result;
}

}  // namespace haemsa::evo
