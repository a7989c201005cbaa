#include "haemsa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "haemsa/error.hpp"
#include "haemsa/rng.hpp"

namespace haemsa {

namespace {

constexpr int kLatentDim = 4;
constexpr int kEmotionClasses = 6;

}  // namespace

void GeneratorSpec::validate() const {
    if (n < 30) throw ConfigError("generator: n must be >= 30");
    if (d_t < 2 || d_a < 2 || d_v < 2) throw ConfigError("generator: feature dims must be >= 2");
    if (!(noise_level >= 0.0) || !std::isfinite(noise_level)) {
        throw ConfigError("generator: noise_level must be finite and >= 0");
    }
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r > 0.0)) throw ConfigError("generator: split ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("generator: split ratios must sum to 1");
}

nlohmann::ordered_json GeneratorSpec::to_json() const {
    return {{"generator", "latent_factor"},
            {"n", n},
            {"d_t", d_t},
            {"d_a", d_a},
            {"d_v", d_v},
            {"noise_level", noise_level},
            {"seed", seed},
            {"ratios", ratios}};
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
    GeneratorSpec s;
    s.n = j.value("n", s.n);
    s.d_t = j.value("d_t", s.d_t);
    s.d_a = j.value("d_a", s.d_a);
    s.d_v = j.value("d_v", s.d_v);
    s.noise_level = j.value("noise_level", s.noise_level);
    s.seed = j.value("seed", s.seed);
    if (j.contains("ratios")) s.ratios = j.at("ratios").get<std::array<double, 3>>();
    return s;
}

std::vector<MultimodalSample> generate_samples(const GeneratorSpec& spec) {
    spec.validate();
    Rng model_rng = make_rng(spec.seed, {0});
    std::normal_distribution<double> normal(0.0, 1.0);

    // Sentiment direction u (unit) and an orthogonal emotion direction v.
    Vector u(kLatentDim), v(kLatentDim);
    for (int i = 0; i < kLatentDim; ++i) u(i) = normal(model_rng);
    u.normalize();
    for (int i = 0; i < kLatentDim; ++i) v(i) = normal(model_rng);
    v -= v.dot(u) * u;
    v.normalize();

    const std::array<int, 3> dims{spec.d_t, spec.d_a, spec.d_v};
    std::array<Matrix, 3> mixing;
    std::array<Vector, 3> offsets;
    for (std::size_t m = 0; m < 3; ++m) {
        mixing[m] = Matrix(dims[m], kLatentDim);
        for (int r = 0; r < dims[m]; ++r) {
            for (int c = 0; c < kLatentDim; ++c) {
                // Modality m is blind to latent factor m.
                const double w = normal(model_rng) / std::sqrt(kLatentDim - 1.0);
                mixing[m](r, c) = c == static_cast<int>(m) ? 0.0 : w;
            }
        }
        offsets[m] = Vector(dims[m]);
        for (int r = 0; r < dims[m]; ++r) offsets[m](r) = normal(model_rng);
    }

    Rng sample_rng = make_rng(spec.seed, {1});
    std::vector<MultimodalSample> out;
    out.reserve(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        Vector z(kLatentDim);
        for (int k = 0; k < kLatentDim; ++k) z(k) = normal(sample_rng);
        MultimodalSample s;
        s.id = "s" + std::to_string(i);
        std::array<Vector*, 3> feats{&s.text, &s.audio, &s.visual};
        for (std::size_t m = 0; m < 3; ++m) {
            Vector x = mixing[m] * z + offsets[m];
            for (int r = 0; r < dims[m]; ++r) x(r) += spec.noise_level * normal(sample_rng);
            *feats[m] = std::move(x);
        }
        const double su = u.dot(z);
        const double sentiment = 3.0 * std::tanh(su);
        double angle = std::atan2(v.dot(z), su);  // (-pi, pi]
        if (angle < 0) angle += 2.0 * std::numbers::pi;
        int emotion = static_cast<int>(angle / (2.0 * std::numbers::pi / kEmotionClasses));
        emotion = std::clamp(emotion, 0, kEmotionClasses - 1);
        s.labels = LabelBundle::from_sentiment(sentiment, emotion);
        out.push_back(std::move(s));
    }
    return out;
}

DatasetSplit generate_synthetic(const GeneratorSpec& spec) {
    DatasetHeader header{spec.d_t, spec.d_a, spec.d_v, spec.to_json()};
    return split_dataset(header, generate_samples(spec), spec.ratios, spec.seed);
}

DatasetSplit split_dataset(const DatasetHeader& header, std::vector<MultimodalSample> samples,
                           const std::array<double, 3>& ratios, std::uint64_t seed) {
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    Rng rng = make_rng(seed, {2});
    std::shuffle(samples.begin(), samples.end(), rng);
    const auto n = samples.size();
    const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train,
                                static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n))));
    DatasetSplit out;
    out.header = header;
    auto it = std::make_move_iterator(samples.begin());
    out.train.assign(it, it + static_cast<long>(n_train));
    out.val.assign(it + static_cast<long>(n_train), it + static_cast<long>(n_train + n_val));
    out.test.assign(it + static_cast<long>(n_train + n_val), std::make_move_iterator(samples.end()));
    return out;
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

nlohmann::ordered_json vec_json(const Vector& v) {
    auto arr = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

Vector parse_vec(const nlohmann::json& j, const char* name, int expected, std::size_t row) {
    if (!j.is_array()) {
        throw FormatError("row " + std::to_string(row) + ": '" + name + "' is not an array");
    }
    if (static_cast<int>(j.size()) != expected) {
        throw FormatError("row " + std::to_string(row) + ": '" + name + "' has " +
                          std::to_string(j.size()) + " features, header declares " +
                          std::to_string(expected));
    }
    Vector v(expected);
    for (int i = 0; i < expected; ++i) {
        const auto& x = j[static_cast<std::size_t>(i)];
        if (!x.is_number()) {
            throw FormatError("row " + std::to_string(row) + ": '" + name + "' feature " +
                              std::to_string(i) + " is not a finite number");
        }
        v(i) = x.get<double>();
        if (!std::isfinite(v(i))) {
            throw FormatError("row " + std::to_string(row) + ": '" + name +
                              "' contains a non-finite value");
        }
    }
    return v;
}

}  // namespace

void validate_sample(const DatasetHeader& header, const MultimodalSample& s) {
    const std::array<std::pair<const Vector*, int>, 3> feats{
        {{&s.text, header.d_t}, {&s.audio, header.d_a}, {&s.visual, header.d_v}}};
    for (const auto& [v, d] : feats) {
        if (v->size() != d) throw FormatError("sample '" + s.id + "': feature width mismatch");
        if (!v->allFinite()) throw FormatError("sample '" + s.id + "': non-finite feature");
    }
    try {
        s.labels.validate();
    } catch (const LabelError& e) {
        throw FormatError("sample '" + s.id + "': " + e.what());
    }
}

void save_jsonl(const DatasetHeader& header, const std::vector<MultimodalSample>& samples,
                const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    nlohmann::ordered_json h{{"d_t", header.d_t}, {"d_a", header.d_a}, {"d_v", header.d_v},
                             {"spec", header.spec}};
    os << h.dump() << '\n';
    for (const auto& s : samples) {
        nlohmann::ordered_json row{{"id", s.id},
                                   {"text", vec_json(s.text)},
                                   {"audio", vec_json(s.audio)},
                                   {"visual", vec_json(s.visual)},
                                   {"labels",
                                    {{"sentiment", s.labels.sentiment},
                                     {"class7", s.labels.class7},
                                     {"class2", s.labels.class2},
                                     {"emotion", s.labels.emotion}}}};
        os << row.dump() << '\n';
    }
    if (!os) throw FormatError("write failed for '" + path.string() + "'");
}

JsonlFile load_jsonl(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path.string() + "'");
    JsonlFile out;
    std::string line;
    std::size_t row = 0;
    bool have_header = false;
    std::set<std::string> ids;
    const std::string where = path.string() + ": ";
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(where + "row " + std::to_string(row) + ": invalid JSON (" + e.what() + ")");
        }
        try {
            if (!have_header) {
                for (const char* k : {"d_t", "d_a", "d_v"}) {
                    if (!j.contains(k) || !j[k].is_number_integer() || j[k].get<int>() < 1) {
                        throw FormatError(where + "header must declare positive integer " + k);
                    }
                }
                out.header.d_t = j["d_t"].get<int>();
                out.header.d_a = j["d_a"].get<int>();
                out.header.d_v = j["d_v"].get<int>();
                if (j.contains("spec")) out.header.spec = nlohmann::ordered_json(j["spec"]);
                have_header = true;
                continue;
            }
            MultimodalSample s;
            s.id = j.at("id").get<std::string>();
            s.text = parse_vec(j.at("text"), "text", out.header.d_t, row);
            s.audio = parse_vec(j.at("audio"), "audio", out.header.d_a, row);
            s.visual = parse_vec(j.at("visual"), "visual", out.header.d_v, row);
            const auto& l = j.at("labels");
            s.labels.sentiment = l.at("sentiment").get<double>();
            s.labels.class7 = l.at("class7").get<int>();
            s.labels.class2 = l.at("class2").get<int>();
            s.labels.emotion = l.at("emotion").get<int>();
            try {
                s.labels.validate();
            } catch (const LabelError& e) {
                throw FormatError("row " + std::to_string(row) + ": " + e.what());
            }
            if (!ids.insert(s.id).second) {
                throw FormatError("row " + std::to_string(row) + ": duplicate id '" + s.id + "'");
            }
            out.samples.push_back(std::move(s));
        } catch (const FormatError& e) {
            const std::string msg = e.what();
            throw FormatError(msg.rfind(where, 0) == 0 ? msg : where + msg);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + "row " + std::to_string(row) + ": " + e.what());
        }
    }
    if (!have_header) throw FormatError(where + "missing header record");
    return out;
}

void save_dataset_dir(const DatasetSplit& split, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_jsonl(split.header, split.train, dir / "train.jsonl");
    save_jsonl(split.header, split.val, dir / "val.jsonl");
    save_jsonl(split.header, split.test, dir / "test.jsonl");
}

DatasetSplit load_dataset_dir(const std::filesystem::path& dir) {
    auto train = load_jsonl(dir / "train.jsonl");
    auto val = load_jsonl(dir / "val.jsonl");
    auto test = load_jsonl(dir / "test.jsonl");
    auto same_dims = [](const DatasetHeader& a, const DatasetHeader& b) {
        return a.d_t == b.d_t && a.d_a == b.d_a && a.d_v == b.d_v;
    };
    if (!same_dims(train.header, val.header) || !same_dims(train.header, test.header)) {
        throw FormatError("split files in '" + dir.string() + "' declare different feature dims");
    }
    if (val.samples.empty()) {
        throw FormatError("'" + (dir / "val.jsonl").string() + "' has no samples; a validation split is required");
    }
    if (train.samples.empty()) {
        throw FormatError("'" + (dir / "train.jsonl").string() + "' has no samples");
    }
    std::set<std::string> ids;
    for (const auto* part : {&train.samples, &val.samples, &test.samples}) {
        for (const auto& s : *part) {
            if (!ids.insert(s.id).second) {
                throw FormatError("sample id '" + s.id + "' appears in more than one split");
            }
        }
    }
    DatasetSplit out;
    out.header = train.header;
    out.train = std::move(train.samples);
    out.val = std::move(val.samples);
    out.test = std::move(test.samples);
    return out;
}

ModalityBatch make_batch(const std::vector<MultimodalSample>& samples) {
    ModalityBatch b;
    if (samples.empty()) return b;
    const auto n = static_cast<Eigen::Index>(samples.size());
    b.text.resize(n, samples[0].text.size());
    b.audio.resize(n, samples[0].audio.size());
    b.visual.resize(n, samples[0].visual.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        if (s.text.size() != b.text.cols() || s.audio.size() != b.audio.cols() ||
            s.visual.size() != b.visual.cols()) {
            throw ShapeError("sample '" + s.id + "' has inconsistent feature widths");
        }
        b.text.row(i) = s.text.transpose();
        b.audio.row(i) = s.audio.transpose();
        b.visual.row(i) = s.visual.transpose();
    }
    return b;
}

BatchTargets make_targets(const std::vector<TaskDescriptor>& tasks,
                          const std::vector<MultimodalSample>& samples) {
    BatchTargets out(tasks.size());
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        out[t].reserve(samples.size());
        for (const auto& s : samples) out[t].push_back(label_value(tasks[t], s.labels));
    }
    return out;
}

}  // namespace haemsa
