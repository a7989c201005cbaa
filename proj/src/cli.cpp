#include "haemsa/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "haemsa/checkpoint.hpp"

namespace haemsa::cli {

namespace fs = std::filesystem;

std::string to_string(Command c) {
    switch (c) {
        case Command::GenData:
            return "gen-data";
        case Command::Evolve:
            return "evolve";
        case Command::Train:
            return "train";
        case Command::Evaluate:
            return "evaluate";
        case Command::Ablate:
            return "ablate";
        case Command::Report:
            return "report";
    }
    return "?";
}

namespace {

struct RawFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::vector<std::uint64_t> seeds;
    std::string out;
    std::optional<int> generations;
    std::optional<long long> population;
    std::optional<int> inner_epochs;
    std::optional<unsigned> workers;
    std::string ablation;
    std::string data;
};

void add_run_flags(CLI::App* cmd, RawFlags& f, bool with_ablation) {
    cmd->add_option("--config", f.config, "JSON run config");
    cmd->add_option("--seed", f.seed, "run seed (sets the seed list to this single value)");
    cmd->add_option("--seeds", f.seeds, "several run seeds")->delimiter(',');
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--generations", f.generations, "number of generations");
    cmd->add_option("--population", f.population, "population size");
    cmd->add_option("--inner-epochs", f.inner_epochs, "gradient epochs per fitness evaluation");
    cmd->add_option("--workers", f.workers, "parallel fitness evaluations");
    if (with_ablation) {
        cmd->add_option("--ablation", f.ablation,
                        "full, no-hierarchy, no-evolution, no-crossmodal or no-mtl");
    }
    cmd->add_option("--data", f.data, "dataset directory with train/val/test.jsonl");
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
}

void apply_flags(CliOptions& o, const RawFlags& f) {
    if (!f.config.empty()) o.run = RunConfig::from_json(read_json_file(f.config));
    if (f.seed && !f.seeds.empty()) throw ConfigError("use either --seed or --seeds, not both");
    if (f.seed) {
        o.run.seeds = {*f.seed};
        o.run.evolution.master_seed = *f.seed;
    }
    if (!f.seeds.empty()) {
        o.run.seeds = f.seeds;
        o.run.evolution.master_seed = f.seeds.front();
    }
    if (!f.out.empty()) o.run.out_dir = f.out;
    if (f.generations) o.run.evolution.generations = *f.generations;
    if (f.population) {
        if (*f.population < 0) throw ConfigError("population_size must be >= 2");
        o.run.evolution.population_size = static_cast<std::size_t>(*f.population);
    }
    if (f.inner_epochs) o.run.evolution.inner_epochs = *f.inner_epochs;
    if (f.workers) o.run.evolution.workers = *f.workers;
    if (!f.ablation.empty()) {
        o.ablation_flag = ablation_from_string(f.ablation);
        o.run.ablation = *o.ablation_flag;
    }
    if (!f.data.empty()) o.run.data_dir = f.data;
}

std::string pct(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", x);
    return buf;
}

std::string num(double x, const char* fmt) {
    char buf[32];
    std::snprintf(buf, sizeof buf, fmt, x);
    return buf;
}

MetricSummary single(const MetricsReport& m) {
    return {m.acc7, m.acc5, m.acc2, m.mae, m.weighted_f1};
}

MetricSummary summary_from_json(const nlohmann::json& j) {
    return {j.at("acc7").get<double>(), j.at("acc5").get<double>(), j.at("acc2").get<double>(),
            j.at("mae").get<double>(), j.at("weighted_f1").get<double>()};
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error("cannot open '" + p.string() + "' for writing");
    os << text;
}

void write_resolved(const CliOptions& o, const fs::path& dir) {
    fs::create_directories(dir);
    auto j = o.run.to_json();
    j["command"] = to_string(o.command);
    write_file(dir / "config_resolved.json", j.dump(2) + "\n");
}

TableRow row_for(const std::string& label, const ExperimentResult& r) {
    return {label, r.mean, r.std};
}

void cmd_gen_data(const CliOptions& o, std::ostream& out) {
    const auto split = generate_synthetic(o.run.synthetic);
    save_dataset_dir(split, o.run.out_dir);
    write_resolved(o, o.run.out_dir);
    out << "wrote " << split.train.size() << " / " << split.val.size() << " / " << split.test.size()
        << " samples (train / val / test) to " << o.run.out_dir << "\n";
}

void cmd_run(const CliOptions& o, std::ostream& out) {
    const auto result = run_experiment(o.run);
    // run_experiment already wrote config_resolved.json; rewrite it with the command tag.
    write_resolved(o, o.run.out_dir);
    out << format_table({row_for(to_string(o.run.ablation), result)});
    if (result.failed > 0) {
        out << result.failed << " of " << result.seeds.size() << " seeds failed\n";
        if (result.failed == result.seeds.size()) throw Error("every seed failed");
    }
}

void cmd_ablate(const CliOptions& o, std::ostream& out) {
    std::vector<AblationMode> modes(kAllAblations.begin(), kAllAblations.end());
    if (o.ablation_flag) modes = {*o.ablation_flag};
    const auto data = load_run_data(o.run);
    std::vector<TableRow> rows;
    std::size_t failed = 0;
    for (auto mode : modes) {
        RunConfig cfg = o.run;
        cfg.ablation = mode;
        cfg.out_dir = (fs::path(o.run.out_dir) / to_string(mode)).string();
        const auto r = run_experiment(cfg, data);
        failed += r.failed == r.seeds.size() ? 1 : 0;
        rows.push_back(row_for(to_string(mode), r));
    }
    write_resolved(o, o.run.out_dir);
    const std::string table = format_table(rows);
    write_file(fs::path(o.run.out_dir) / "ablation_table.txt", table);
    out << table;
    if (failed == modes.size()) throw Error("every ablation run failed");
}

void cmd_evaluate(const CliOptions& o, std::ostream& out) {
    const auto ckpt = load_checkpoint(o.checkpoint);
    const auto model = model_from_checkpoint(ckpt);
    const auto data = load_run_data(o.run);
    const auto& samples = o.split == "train" ? data.train : o.split == "val" ? data.val : data.test;
    const bool from_class7 = ckpt.meta.value("score_source", "") == "class7_expectation";
    const auto m = evaluate_metrics(model, samples, from_class7);
    out << format_table({{o.split, single(m), std::nullopt}});
    if (!o.run.out_dir.empty()) {
        write_resolved(o, o.run.out_dir);
        nlohmann::ordered_json j{{"checkpoint", o.checkpoint}, {"split", o.split}, {"metrics", m.to_json()}};
        write_file(fs::path(o.run.out_dir) / "evaluation.json", j.dump(2) + "\n");
    }
}

// A run dir holds metrics_summary.json directly, or (ablate output) one
// subdirectory per mode.
void collect_rows(const fs::path& dir, std::vector<TableRow>& rows) {
    const auto summary = dir / "metrics_summary.json";
    if (fs::exists(summary)) {
        std::ifstream is(summary);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(is);
            rows.push_back({dir.filename().string() + " (" + j.at("ablation").get<std::string>() + ")",
                            summary_from_json(j.at("mean")), summary_from_json(j.at("std"))});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("'" + summary.string() + "': " + e.what());
        }
        return;
    }
    std::vector<fs::path> subdirs;
    if (fs::is_directory(dir)) {
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.is_directory() && fs::exists(e.path() / "metrics_summary.json")) subdirs.push_back(e.path());
        }
    }
    if (subdirs.empty()) throw Error("no metrics_summary.json found under '" + dir.string() + "'");
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& s : subdirs) collect_rows(s, rows);
}

void cmd_report(const CliOptions& o, std::ostream& out) {
    std::vector<TableRow> rows;
    for (const auto& d : o.run_dirs) collect_rows(d, rows);
    out << format_table(rows);
}

}  // namespace

std::string format_table(const std::vector<TableRow>& rows) {
    const std::vector<std::string> headers{"Run", "Acc-7", "Acc-5", "Acc-2", "MAE", "Weighted-F1"};
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : rows) {
        auto cell = [&](double mean, double sd, bool is_mae) {
            std::string s = is_mae ? num(mean, "%.4f") : pct(mean);
            if (r.std) s += " ± " + (is_mae ? num(sd, "%.4f") : pct(sd));
            return s;
        };
        const MetricSummary sd = r.std.value_or(MetricSummary{});
        cells.push_back({r.label, cell(r.mean.acc7, sd.acc7, false), cell(r.mean.acc5, sd.acc5, false),
                         cell(r.mean.acc2, sd.acc2, false), cell(r.mean.mae, sd.mae, true),
                         cell(r.mean.weighted_f1, sd.weighted_f1, false)});
    }
    // "±" is two bytes but one column wide.
    auto width = [](const std::string& s) {
        std::size_t w = 0;
        for (unsigned char c : s) w += (c & 0xC0) != 0x80;
        return w;
    };
    std::vector<std::size_t> widths;
    for (const auto& h : headers) widths.push_back(h.size());
    for (const auto& row : cells) {
        for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], width(row[i]));
    }
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            const std::string pad(widths[i] - width(row[i]), ' ');
            if (i == 0) {
                os << row[i] << pad;
            } else {
                os << "  " << pad << row[i];
            }
        }
        os << '\n';
    };
    line(headers);
    std::size_t total = 0;
    for (auto w : widths) total += w + 2;
    os << std::string(total - 2, '-') << '\n';
    for (const auto& row : cells) line(row);
    return os.str();
}

CliOptions parse_args(const std::vector<std::string>& args) {
    CLI::App app{"Hierarchical evolutionary multimodal sentiment analysis", "haemsa"};
    app.require_subcommand(1, 1);

    RawFlags f;
    CliOptions o;

    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset as train/val/test.jsonl");
    gen->add_option("--config", f.config, "JSON run config (its 'synthetic' section is used)");
    gen->add_option("--seed", f.seed, "generator seed");
    gen->add_option("--out", f.out, "output directory")->required();
    std::optional<std::size_t> n;
    std::optional<double> noise;
    gen->add_option("--n", n, "number of samples");
    gen->add_option("--noise", noise, "noise level");

    auto* evolve = app.add_subcommand("evolve", "evolutionary training (default: full model)");
    add_run_flags(evolve, f, true);
    auto* train = app.add_subcommand("train", "train the default genome without evolution");
    add_run_flags(train, f, false);
    auto* ablate = app.add_subcommand("ablate", "run every ablation mode (or just --ablation)");
    add_run_flags(ablate, f, true);

    auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset split");
    evaluate->add_option("--checkpoint", o.checkpoint, "checkpoint.json")->required();
    evaluate->add_option("--config", f.config, "JSON run config");
    evaluate->add_option("--data", f.data, "dataset directory");
    evaluate->add_option("--out", f.out, "output directory for evaluation.json");
    evaluate->add_option("--split", o.split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}));

    auto* report = app.add_subcommand("report", "compare finished runs side by side");
    report->add_option("run_dirs", o.run_dirs, "run directories")->required();

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        throw HelpRequested{app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help()};
    } catch (const CLI::CallForAllHelp&) {
        throw HelpRequested{app.help("", CLI::AppFormatMode::All)};
    } catch (const CLI::ParseError& e) {
        const auto subs = app.get_subcommands();
        throw UsageError(e.what(), subs.empty() ? app.help() : subs.front()->help());
    }

    const CLI::App* chosen = app.get_subcommands().front();
    const std::string name = chosen->get_name();
    if (name == "gen-data") {
        o.command = Command::GenData;
        if (!f.config.empty()) o.run = RunConfig::from_json(read_json_file(f.config));
        if (f.seed) o.run.synthetic.seed = *f.seed;
        if (n) o.run.synthetic.n = *n;
        if (noise) o.run.synthetic.noise_level = *noise;
        o.run.out_dir = f.out;
        o.run.synthetic.validate();
        return o;
    }
    if (name == "report") {
        o.command = Command::Report;
        return o;
    }
    if (name == "evaluate") {
        o.command = Command::Evaluate;
        o.run.out_dir.clear();
        if (!f.config.empty()) o.run = RunConfig::from_json(read_json_file(f.config));
        if (!f.data.empty()) o.run.data_dir = f.data;
        if (!f.out.empty()) o.run.out_dir = f.out;
        return o;
    }
    o.command = name == "evolve" ? Command::Evolve : name == "train" ? Command::Train : Command::Ablate;
    apply_flags(o, f);
    if (o.command == Command::Train) o.run.ablation = AblationMode::NoEvolution;
    if (o.run.out_dir.empty()) throw UsageError("--out must not be empty", chosen->help());
    o.run.validate();
    return o;
}

void run_command(const CliOptions& o, std::ostream& out) {
    switch (o.command) {
        case Command::GenData:
            cmd_gen_data(o, out);
            break;
        case Command::Evolve:
        case Command::Train:
            cmd_run(o, out);
            break;
        case Command::Ablate:
            cmd_ablate(o, out);
            break;
        case Command::Evaluate:
            cmd_evaluate(o, out);
            break;
        case Command::Report:
            cmd_report(o, out);
            break;
    }
}

int main_entry(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    // Progress logs go to stderr so stdout stays the result table.
    static const bool logger_ready = [] {
        spdlog::set_default_logger(spdlog::stderr_color_mt("haemsa"));
        return true;
    }();
    (void)logger_ready;
    CliOptions opts;
    try {
        opts = parse_args(args);
    } catch (const HelpRequested& h) {
        out << h.text;
        return kExitOk;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n\n" << e.usage;
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    try {
        run_command(opts, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace haemsa::cli
