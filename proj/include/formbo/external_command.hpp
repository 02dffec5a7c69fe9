#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "formbo/virtual_press.hpp"

namespace formbo {

/// Replaces every `${name}` with the shortest round-trip decimal text of
/// x[name]; `$${` yields a literal `${`. Throws BackendError on unresolved
/// or unterminated placeholders.
std::string substitute_template(std::string_view text, const DesignPoint& x);

/// Placeholder names in order of appearance, escapes skipped.
std::vector<std::string> template_placeholders(std::string_view text);

/// `<config_dir>/<name>_<value>.cfg`, or BackendError "missing discrete config".
std::filesystem::path discrete_config_file(const std::filesystem::path& config_dir, const std::string& name,
                                           double value);

struct ExternalCommandConfig {
    std::filesystem::path template_path;
    std::filesystem::path config_dir;  // per-value files for discrete parameters
    std::filesystem::path work_root;   // one subdirectory per job
    // Run through /bin/sh inside the job directory; `{workdir}` and `{input}`
    // expand to the job directory and the substituted template file.
    std::string command;
    std::vector<ParameterSpec> parameters;

    void validate() const;
};

/// Parses the last non-empty line of `stdout_text` as {L1..L7, walltime_s?, energy_j?}.
RunOutcome parse_command_output(const std::string& stdout_text);

/// Patches the template, runs the command and parses its output. No progress
/// stream: the watcher is called once with the final targets.
class ExternalCommandBackend final : public SimulationBackend {
public:
    explicit ExternalCommandBackend(ExternalCommandConfig config);

    BackendCapabilities capabilities() const override { return {false, true, false}; }
    RunOutcome run(const DesignPoint& x, const Watcher& watcher, std::uint64_t seed) override;

    /// Directory used by the most recent run.
    const std::filesystem::path& last_workdir() const { return last_workdir_; }

private:
    ExternalCommandConfig config_;
    std::filesystem::path last_workdir_;
};

}  // namespace formbo
