#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "formbo/optimizer_loop.hpp"
#include "formbo/result_store.hpp"

namespace formbo {

enum class PlotKind { targets_vs_iterations, ei_sum_vs_iterations, inputs_vs_target, energy_vs_iterations };

std::string_view to_string(PlotKind kind);
/// Unknown names throw ConfigError listing the valid kinds.
PlotKind plot_kind_from_string(std::string_view text);

/// A run directory: state.json (loop state plus schema) and history.jsonl
/// (this run's records in dispatch order).
struct RunArtifacts {
    std::string run_id;
    json state;
    std::vector<std::string> input_names;
    TargetSpec targets;
    std::vector<SimulationRecord> history;

    static RunArtifacts load(const std::filesystem::path& run_dir);
};

/// Rewrites both files; each is replaced atomically.
void write_run_artifacts(const std::filesystem::path& run_dir, const std::string& run_id, const LoopConfig& config,
                         const LoopState& state, const std::vector<SimulationRecord>& history,
                         const json& extra = json::object());

/// CSV with a header row. Per-iteration kinds have one row per record,
/// ei_sum_vs_iterations one row per cycle. Output is byte-deterministic.
std::string export_plot_csv(const RunArtifacts& run, PlotKind kind);

}  // namespace formbo
