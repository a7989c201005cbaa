#include "haemsa/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "haemsa/error.hpp"

namespace haemsa {

namespace {

const char* kind_name(TaskKind k) { return k == TaskKind::Regression ? "regression" : "classification"; }
const char* loss_name(LossFn f) { return f == LossFn::Mse ? "mse" : "cross_entropy"; }

const char* field_name(LabelField f) {
    switch (f) {
        case LabelField::Sentiment:
            return "sentiment";
        case LabelField::Class7:
            return "class7";
        case LabelField::Class2:
            return "class2";
        case LabelField::Emotion:
            return "emotion";
    }
    return "?";
}

LabelField field_from(const std::string& s) {
    if (s == "sentiment") return LabelField::Sentiment;
    if (s == "class7") return LabelField::Class7;
    if (s == "class2") return LabelField::Class2;
    if (s == "emotion") return LabelField::Emotion;
    throw FormatError("unknown label field '" + s + "'");
}

}  // namespace

nlohmann::ordered_json haen_config_to_json(const HaenConfig& cfg) {
    nlohmann::ordered_json j;
    j["d_t"] = cfg.d_t;
    j["d_a"] = cfg.d_a;
    j["d_v"] = cfg.d_v;
    j["expert_widths"] = cfg.expert_widths;
    j["levels"] = cfg.levels;
    j["fusion_widths"] = cfg.fusion_widths;
    j["tower_widths"] = cfg.tower_widths;
    auto tasks = nlohmann::ordered_json::array();
    for (const auto& t : cfg.tasks) {
        tasks.push_back({{"id", t.id},
                         {"kind", kind_name(t.kind)},
                         {"num_classes", t.num_classes},
                         {"loss_fn", loss_name(t.loss_fn)},
                         {"field", field_name(t.field)}});
    }
    j["tasks"] = tasks;
    j["transfer_task"] = cfg.transfer_task;
    j["fusion_mode"] = cfg.fusion_mode == FusionMode::Hierarchical ? "hierarchical" : "concat_linear";
    j["cross_modal"] = cfg.cross_modal;
    j["attention_gates"] = cfg.attention_gates;
    return j;
}

HaenConfig haen_config_from_json(const nlohmann::json& j) {
    HaenConfig c;
    c.d_t = j.at("d_t").get<int>();
    c.d_a = j.at("d_a").get<int>();
    c.d_v = j.at("d_v").get<int>();
    c.expert_widths = j.at("expert_widths").get<StreamWidths>();
    c.levels = j.at("levels").get<int>();
    c.fusion_widths = j.at("fusion_widths").get<std::vector<StreamWidths>>();
    c.tower_widths = j.at("tower_widths").get<std::vector<std::vector<int>>>();
    for (const auto& t : j.at("tasks")) {
        TaskDescriptor d;
        d.id = t.at("id").get<std::string>();
        d.kind = t.at("kind").get<std::string>() == "regression" ? TaskKind::Regression
                                                                  : TaskKind::Classification;
        d.num_classes = t.at("num_classes").get<int>();
        d.loss_fn = t.at("loss_fn").get<std::string>() == "mse" ? LossFn::Mse : LossFn::CrossEntropy;
        d.field = field_from(t.at("field").get<std::string>());
        c.tasks.push_back(d);
    }
    c.transfer_task = j.at("transfer_task").get<std::size_t>();
    c.fusion_mode = j.at("fusion_mode").get<std::string>() == "concat_linear" ? FusionMode::ConcatLinear
                                                                              : FusionMode::Hierarchical;
    c.cross_modal = j.at("cross_modal").get<bool>();
    c.attention_gates = j.at("attention_gates").get<bool>();
    return c;
}

std::string checkpoint_to_string(const HaenModel& model, const nlohmann::ordered_json& meta) {
    const auto params = model.flatten();
    nlohmann::ordered_json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["config"] = haen_config_to_json(model.config());
    j["meta"] = meta;
    j["param_count"] = params.values.size();
    j["params"] = params.values;
    return j.dump() + "\n";
}

void save_checkpoint(const HaenModel& model, const std::filesystem::path& path,
                     const nlohmann::ordered_json& meta) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open checkpoint '" + path.string() + "' for writing");
    os << checkpoint_to_string(model, meta);
    if (!os) throw FormatError("write failed for checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint '" + path.string() + "'");
    std::stringstream buf;
    buf << is.rdbuf();
    try {
        const auto j = nlohmann::json::parse(buf.str());
        if (j.value("format", "") != kCheckpointFormat) {
            throw FormatError("'" + path.string() + "' is not a model checkpoint");
        }
        if (j.at("version").get<int>() != kCheckpointVersion) {
            throw FormatError("'" + path.string() + "' has unsupported checkpoint version");
        }
        Checkpoint c;
        c.config = haen_config_from_json(j.at("config"));
        if (j.contains("meta")) c.meta = nlohmann::ordered_json(j.at("meta"));
        const HaenModel skeleton(c.config);
        c.params = nn::ParamVector(skeleton.layout());
        auto values = j.at("params").get<std::vector<double>>();
        if (values.size() != c.params.values.size()) {
            throw FormatError("'" + path.string() + "': parameter count " + std::to_string(values.size()) +
                              " does not match its configuration (" +
                              std::to_string(c.params.values.size()) + ")");
        }
        c.params.values = std::move(values);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path.string() + "': " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError("'" + path.string() + "': " + e.what());
    }
}

HaenModel model_from_checkpoint(const Checkpoint& ckpt) {
    HaenModel m(ckpt.config);
    m.unflatten(ckpt.params);
    return m;
}

}  // namespace haemsa
