#pragma once

// Genetic outer loop: blend crossover, Gaussian mutation, tournament
// selection with elitism. Genomes carry integer architecture genes and a flat
// weight vector whose layout is a function of the genes (see GenomeSpace).
// Fitness is maximized.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "haemsa/metrics.hpp"
#include "haemsa/nn.hpp"
#include "haemsa/rng.hpp"

namespace haemsa::evo {

struct GeneSpec {
    std::string name;
    int lo = 0;
    int hi = 0;  // inclusive
};

/// Maps architecture genes to a parameter layout.
class GenomeSpace {
public:
    virtual ~GenomeSpace() = default;
    virtual const std::vector<GeneSpec>& genes() const = 0;
    virtual nn::ParamLayout layout(const std::vector<int>& arch) const = 0;
    /// Mid-range genome, (lo + hi) / 2 per gene.
    virtual std::vector<int> default_arch() const;
    virtual std::string summarize(const std::vector<int>& arch) const;

    bool in_bounds(const std::vector<int>& arch) const;
};

/// A space with no architecture genes and a fixed layout.
class FixedSpace final : public GenomeSpace {
public:
    explicit FixedSpace(nn::ParamLayout layout) : layout_(std::move(layout)) {}
    const std::vector<GeneSpec>& genes() const override { return genes_; }
    nn::ParamLayout layout(const std::vector<int>&) const override { return layout_; }

private:
    std::vector<GeneSpec> genes_;
    nn::ParamLayout layout_;
};

struct Genome {
    std::vector<int> arch;
    nn::ParamVector weights;
    int birth_gen = 0;

    /// Throws StateError unless arch is in bounds and weights match its layout.
    void validate(const GenomeSpace& space) const;
    bool operator==(const Genome&) const = default;
};

/// Genome with the given genes and Glorot-initialized weights.
Genome make_genome(const GenomeSpace& space, std::vector<int> arch, Rng& rng);
Genome random_genome(const GenomeSpace& space, Rng& rng);

/// Blend crossover with alpha ~ U[0, 1].
Genome crossover(const GenomeSpace& space, const Genome& a, const Genome& b, Rng& rng);
/// Blend crossover with a fixed alpha: each gene comes from `a` with
/// probability alpha; weight blocks whose shape agrees with both parents are
/// alpha * a + (1 - alpha) * b, blocks present in only one parent are copied,
/// and anything else is freshly initialized.
Genome crossover(const GenomeSpace& space, const Genome& a, const Genome& b, double alpha, Rng& rng);

/// Gaussian weight noise N(0, sigma) per coordinate; each gene is resampled
/// from its range with probability arch_prob.
Genome mutate(const GenomeSpace& space, const Genome& g, double sigma, double arch_prob, Rng& rng);

struct Individual {
    Genome genome;
    std::optional<double> fitness;
    std::optional<MetricsReport> eval_metrics;

    bool evaluated() const { return fitness.has_value(); }
};

struct Population {
    std::vector<Individual> members;
    int generation = 0;
};

/// Samples k distinct members uniformly and returns the index of the fittest
/// (lowest index on ties).
std::size_t tournament_select(const Population& pop, std::size_t k, Rng& rng);

struct EvolutionConfig {
    std::size_t population_size = 8;
    int generations = 10;
    std::size_t tournament_k = 3;
    double sigma = 0.02;
    bool sigma_decay = false;  // sigma *= 0.97 per generation
    double arch_mutation_prob = 0.1;
    std::size_t elitism_count = 1;
    int inner_epochs = 3;
    int convergence_patience = 0;  // 0 disables early stopping
    std::uint64_t master_seed = 0;
    unsigned workers = 1;

    void validate() const;
    double sigma_at(int generation) const;
    bool operator==(const EvolutionConfig&) const = default;
};

struct Evaluation {
    double fitness = -std::numeric_limits<double>::infinity();
    std::optional<nn::ParamVector> trained_weights;  // written back into the genome
    std::optional<MetricsReport> metrics;
    std::vector<nlohmann::ordered_json> log;  // per-epoch records, tagged by the caller
};

/// Must be safe to call concurrently from several threads.
class FitnessEvaluator {
public:
    virtual ~FitnessEvaluator() = default;
    virtual Evaluation evaluate(const Genome& genome, std::uint64_t seed) const = 0;
};

/// Adapts a plain function (genome -> fitness) with no weight write-back.
class FunctionEvaluator final : public FitnessEvaluator {
public:
    explicit FunctionEvaluator(std::function<double(const Genome&)> fn) : fn_(std::move(fn)) {}
    Evaluation evaluate(const Genome& genome, std::uint64_t) const override {
        Evaluation e;
        e.fitness = fn_(genome);
        return e;
    }

private:
    std::function<double(const Genome&)> fn_;
};

struct GenerationStats {
    int generation = 0;
    double best_fitness = 0.0;
    double mean_fitness = 0.0;  // over members with finite fitness
    std::size_t failed = 0;     // members with non-finite fitness
    std::string best_arch;
};

/// Operator call counts plus evaluation log records in (generation, member) order.
struct RunTrace {
    std::size_t crossovers = 0;
    std::size_t mutations = 0;
    std::size_t evaluations = 0;
    std::vector<nlohmann::ordered_json> log;
};

struct EvolutionResult {
    Individual best;
    std::vector<GenerationStats> history;  // generation 0 first
    Population final_population;
    RunTrace trace;
};

/// Seed of the evaluation stream for (generation, member).
std::uint64_t evaluation_seed(std::uint64_t master_seed, int generation, std::size_t member);

/// Evaluates the given members in parallel; non-finite results and
/// exceptions become -inf fitness.
void evaluate_members(Population& pop, const std::vector<std::size_t>& members,
                      const FitnessEvaluator& evaluator, const EvolutionConfig& cfg,
                      RunTrace* trace = nullptr);

/// Generation 0: member 0 uses the default genome, the rest random genes.
Population initial_population(const EvolutionConfig& cfg, const GenomeSpace& space,
                              const FitnessEvaluator& evaluator, RunTrace* trace = nullptr);

/// Member indices sorted by fitness, best first (lower index on ties).
std::vector<std::size_t> rank_members(const Population& pop);

Population evolve_generation(const Population& pop, const EvolutionConfig& cfg,
                             const GenomeSpace& space, const FitnessEvaluator& evaluator, Rng& rng,
                             RunTrace* trace = nullptr);

GenerationStats summarize_generation(const Population& pop, const GenomeSpace& space);

EvolutionResult run_evolution(const EvolutionConfig& cfg, const GenomeSpace& space,
                              const FitnessEvaluator& evaluator);

}  // namespace haemsa::evo
