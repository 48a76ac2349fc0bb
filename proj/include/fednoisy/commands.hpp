#pragma once

// Subcommands behind the `fednoisy` executable.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "fednoisy/config.hpp"

namespace fednoisy::cli {

enum ExitCode : int { ok = 0, runtime_failure = 1, invalid_config = 2 };

/// Applies --out / --seed overrides, then revalidates.
struct Overrides {
    std::optional<std::filesystem::path> out;
    std::optional<std::uint64_t> seed;
};
config::ExperimentConfig apply(config::ExperimentConfig cfg, const Overrides& overrides);

std::size_t default_workers();

/// metrics.csv, metrics.jsonl, config.json, summary.json, timing.log and
/// optionally checkpoints/ under cfg.output_dir.
void cmd_run(const config::ExperimentConfig& cfg, std::size_t workers);

/// compare.csv (round x aggregator accuracy) plus a per-aggregator run in
/// `<out>/<aggregator>/`.
void cmd_compare(const config::ExperimentConfig& cfg, const std::vector<server::Aggregator>& aggregators,
                 std::size_t workers);

/// noise_profile.csv; the same table goes to `log`.
void cmd_noise_preview(const config::ExperimentConfig& cfg, std::ostream& log);

/// Reads `checkpoint_dirs` (or `<out>/checkpoints/round_NNNN` for each
/// round) and writes cka_layer_<l>.csv plus cka_depth.csv. With several
/// checkpoints, outputs for each go to `<out>/cka/round_NNNN/` and the depth
/// series gains a round column.
void cmd_cka(const config::ExperimentConfig& cfg, const std::vector<std::filesystem::path>& checkpoint_dirs);

/// Full argv handling; returns the process exit code.
int run_main(int argc, char** argv);

}  // namespace fednoisy::cli
