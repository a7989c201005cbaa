#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "haemsa/dataset.hpp"
#include "haemsa/evolution.hpp"
#include "haemsa/metrics.hpp"
#include "haemsa/model.hpp"
#include "haemsa/objectives.hpp"

namespace haemsa {

enum class AblationMode { Full, NoHierarchy, NoEvolution, NoCrossModal, NoMtl };

inline constexpr std::array<AblationMode, 5> kAllAblations = {
    AblationMode::Full, AblationMode::NoHierarchy, AblationMode::NoEvolution,
    AblationMode::NoCrossModal, AblationMode::NoMtl};

/// "full", "no-hierarchy", ... (underscores also accepted when parsing).
std::string to_string(AblationMode m);
AblationMode ablation_from_string(const std::string& s);

struct GeneRange {
    int lo = 0;
    int hi = 0;
    bool operator==(const GeneRange&) const = default;
};

/// Inclusive ranges of the architecture genes.
struct SearchBounds {
    GeneRange expert_hidden{8, 56};
    GeneRange expert_out{8, 24};
    GeneRange levels{1, 3};
    GeneRange fusion_width{8, 24};
    GeneRange tower_hidden{8, 24};

    void validate() const;
    bool operator==(const SearchBounds&) const = default;
};

struct TrainConfig {
    double learning_rate = 0.005;
    std::size_t batch_size = 32;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Architecture genes of the hierarchical expert network: per-expert hidden
/// and output widths, level count, per-level per-stream fusion widths, and
/// per-task tower widths. Structural ablations are applied when mapping genes
/// to a model configuration.
class HaenSpace final : public evo::GenomeSpace {
public:
    HaenSpace(SearchBounds bounds, int d_t, int d_a, int d_v, AblationMode mode = AblationMode::Full);

    const std::vector<evo::GeneSpec>& genes() const override { return genes_; }
    nn::ParamLayout layout(const std::vector<int>& arch) const override;
    std::string summarize(const std::vector<int>& arch) const override;

    HaenConfig config_for(const std::vector<int>& arch) const;
    AblationMode mode() const { return mode_; }

private:
    SearchBounds bounds_;
    int d_t_, d_a_, d_v_;
    AblationMode mode_;
    std::vector<evo::GeneSpec> genes_;
};

struct RunConfig {
    evo::EvolutionConfig evolution;
    LossConfig loss;
    TrainConfig train;
    SearchBounds search;
    std::string data_dir;                    // empty: use the synthetic generator
    GeneratorSpec synthetic;
    AblationMode ablation = AblationMode::Full;
    std::vector<std::uint64_t> seeds{1};
    std::string out_dir = "runs/out";

    void validate() const;
    nlohmann::ordered_json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static RunConfig from_json(const nlohmann::json& j);
    bool operator==(const RunConfig&) const = default;
};

/// Loss-side effect of an ablation (structural effects live in HaenSpace).
/// no_crossmodal: gamma = 0. no_mtl: only the 7-class task is active.
RunConfig apply_ablation(AblationMode mode, RunConfig cfg);

struct TrainResult {
    std::vector<LossReport> epochs;  // mean report per epoch
    std::size_t steps = 0;
};

/// Minibatch Adam on the total loss with per-epoch seeded shuffling.
/// Throws ValueError on a non-finite loss.
TrainResult train_inner(HaenModel& model, const std::vector<MultimodalSample>& train, int epochs,
                        const LossConfig& loss, const TrainConfig& tc, Rng& rng);

/// Whole split evaluated as one batch.
LossReport evaluate_loss(const HaenModel& model, const std::vector<MultimodalSample>& samples,
                         const LossConfig& loss);

/// Sentiment scores come from the regression head unless that task is
/// inactive, in which case the 7-class head's expected value minus 3 is used.
struct Predictions {
    std::vector<double> scores;
    std::vector<int> emotion;
};

Predictions predict(const HaenModel& model, const std::vector<MultimodalSample>& samples,
                    bool score_from_class7 = false);

MetricsReport evaluate_metrics(const HaenModel& model, const std::vector<MultimodalSample>& samples,
                               bool score_from_class7 = false);

/// Fitness = -(mean validation total loss) after inner training; the trained
/// weights are written back into the genome.
class HaenEvaluator final : public evo::FitnessEvaluator {
public:
    HaenEvaluator(const HaenSpace& space, const DatasetSplit& data, LossConfig loss, TrainConfig train,
                  int inner_epochs);
    evo::Evaluation evaluate(const evo::Genome& genome, std::uint64_t seed) const override;

private:
    const HaenSpace& space_;
    const DatasetSplit& data_;
    LossConfig loss_;
    TrainConfig train_;
    int inner_epochs_;
};

struct SeedResult {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    MetricsReport test;
    std::vector<evo::GenerationStats> history;
    evo::RunTrace trace;
    evo::Genome best;
    std::size_t gradient_steps = 0;  // steps applied along the returned model's training
};

struct MetricSummary {
    double acc7 = 0.0, acc5 = 0.0, acc2 = 0.0, mae = 0.0, weighted_f1 = 0.0;
};

struct ExperimentResult {
    std::vector<SeedResult> seeds;
    MetricSummary mean;
    MetricSummary std;  // population standard deviation over successful seeds
    std::size_t failed = 0;
};

/// Runs one seed: evolution (or the no-evolution baseline), test metrics, and
/// per-seed artifacts under `seed_dir` when it is non-empty.
SeedResult run_seed(const RunConfig& cfg, const DatasetSplit& data, std::uint64_t seed,
                    const std::filesystem::path& seed_dir);

/// Loads (or generates) the data, runs every seed, and writes:
///   seed_<s>/metrics.json, seed_<s>/checkpoint.json, seed_<s>/history.csv,
///   seed_<s>/embeddings.csv, seed_<s>/history.json, seed_<s>/run_log.jsonl,
///   config_resolved.json, metrics_summary.json, metrics_summary.csv.
ExperimentResult run_experiment(const RunConfig& cfg);
/// Same, with data supplied by the caller. Empty out_dir writes nothing.
ExperimentResult run_experiment(const RunConfig& cfg, const DatasetSplit& data);

DatasetSplit load_run_data(const RunConfig& cfg);

nlohmann::ordered_json loss_report_to_json(const LossReport& r);
nlohmann::ordered_json summary_to_json(const RunConfig& cfg, const ExperimentResult& r);

/// Writes h_s^(L) for every sample as CSV: id,label,h0,h1,...
void write_embeddings(const HaenModel& model, const std::vector<MultimodalSample>& samples,
                      const std::filesystem::path& path);

}  // namespace haemsa
