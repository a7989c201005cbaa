#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "haemsa/model.hpp"
#include "haemsa/objectives.hpp"
#include "haemsa/tasks.hpp"

namespace haemsa {

struct MultimodalSample {
    std::string id;
    Vector text;
    Vector audio;
    Vector visual;
    LabelBundle labels;

    bool operator==(const MultimodalSample&) const = default;
};

/// Parameters of the synthetic latent-factor generator.
struct GeneratorSpec {
    std::size_t n = 2000;
    int d_t = 16;
    int d_a = 16;
    int d_v = 16;
    double noise_level = 0.3;
    std::uint64_t seed = 1;
    std::array<double, 3> ratios{0.7, 0.15, 0.15};  // train / val / test

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static GeneratorSpec from_json(const nlohmann::json& j);
    bool operator==(const GeneratorSpec&) const = default;
};

struct DatasetHeader {
    int d_t = 0;
    int d_a = 0;
    int d_v = 0;
    nlohmann::ordered_json spec = nlohmann::ordered_json::object();

    bool operator==(const DatasetHeader&) const = default;
};

struct DatasetSplit {
    DatasetHeader header;
    std::vector<MultimodalSample> train;
    std::vector<MultimodalSample> val;
    std::vector<MultimodalSample> test;

    bool operator==(const DatasetSplit&) const = default;
};

/// One JSONL file: header record plus samples.
struct JsonlFile {
    DatasetHeader header;
    std::vector<MultimodalSample> samples;
};

/// Draws n samples from the latent-factor model: z ~ N(0, I_4),
/// sentiment = 3 tanh(u.z), each modality = A_m z + b_m + noise. Every
/// modality's mixing matrix ignores one latent factor, so only the joint
/// view carries the full signal. Emotion is the sector of the angle of
/// (u.z, v.z) for a fixed v orthogonal to u.
std::vector<MultimodalSample> generate_samples(const GeneratorSpec& spec);

/// generate_samples followed by split_dataset with the spec's ratios and seed.
DatasetSplit generate_synthetic(const GeneratorSpec& spec);

/// Seeded shuffle, then contiguous train / val / test partition.
DatasetSplit split_dataset(const DatasetHeader& header, std::vector<MultimodalSample> samples,
                           const std::array<double, 3>& ratios, std::uint64_t seed);

void save_jsonl(const DatasetHeader& header, const std::vector<MultimodalSample>& samples,
                const std::filesystem::path& path);
JsonlFile load_jsonl(const std::filesystem::path& path);

/// Writes train.jsonl, val.jsonl and test.jsonl.
void save_dataset_dir(const DatasetSplit& split, const std::filesystem::path& dir);
/// Reads the three split files; val must be nonempty and ids disjoint.
DatasetSplit load_dataset_dir(const std::filesystem::path& dir);

/// Throws FormatError if a sample disagrees with the header or has bad labels.
void validate_sample(const DatasetHeader& header, const MultimodalSample& s);

ModalityBatch make_batch(const std::vector<MultimodalSample>& samples);
BatchTargets make_targets(const std::vector<TaskDescriptor>& tasks,
                          const std::vector<MultimodalSample>& samples);

}  // namespace haemsa
