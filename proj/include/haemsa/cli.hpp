#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "haemsa/error.hpp"
#include "haemsa/trainer.hpp"

namespace haemsa::cli {

enum class Command { GenData, Evolve, Train, Evaluate, Ablate, Report };

std::string to_string(Command c);

/// Bad invocation: unknown flag, missing required flag, malformed value.
/// Maps to exit code 2 together with ConfigError.
struct UsageError : Error {
    UsageError(const std::string& msg, std::string usage_text) : Error(msg), usage(std::move(usage_text)) {}
    std::string usage;
};

/// --help was requested; `text` holds the help output.
struct HelpRequested {
    std::string text;
};

struct CliOptions {
    Command command = Command::Evolve;
    RunConfig run;                      // file values, then flag overrides
    std::optional<AblationMode> ablation_flag;
    std::string checkpoint;             // evaluate
    std::string split = "test";         // evaluate: train, val or test
    std::vector<std::string> run_dirs;  // report
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// `args` excludes the program name. Throws UsageError, ConfigError (invalid
/// effective configuration) or HelpRequested.
CliOptions parse_args(const std::vector<std::string>& args);

/// Executes a parsed command. Runtime failures propagate as exceptions.
void run_command(const CliOptions& opts, std::ostream& out);

/// Parse + run with the 0/1/2 exit-code contract.
int main_entry(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct TableRow {
    std::string label;
    MetricSummary mean;
    std::optional<MetricSummary> std;
};

/// Aligned table with Acc-7, Acc-5, Acc-2, MAE and Weighted-F1 columns.
std::string format_table(const std::vector<TableRow>& rows);

}  // namespace haemsa::cli
