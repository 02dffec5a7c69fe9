#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "formbo/parameters.hpp"

namespace formbo {

using json = nlohmann::ordered_json;

enum class JobSource { automated, human, initial_predictor, random };

std::string_view to_string(JobSource source);
JobSource job_source_from_string(std::string_view text);

struct JobMeta {
    std::int64_t iteration = 0;
    std::int64_t cycle = 0;
    double walltime_s = 0.0;
    double energy_j = 0.0;
    double progress = 1.0;
    bool terminated_early = false;
    JobSource source = JobSource::automated;
    // Failed jobs carry no targets; they are kept so every dispatched design
    // point appears in the store exactly once.
    bool failed = false;
    std::string error;

    bool operator==(const JobMeta&) const = default;
};

struct SimulationRecord {
    std::string part_id;
    DesignPoint inputs;
    TargetVector targets;
    JobMeta meta;

    /// Converged, successful observation suitable as surrogate training data.
    bool is_training_row() const { return !meta.failed && !meta.terminated_early; }

    bool operator==(const SimulationRecord&) const = default;
};

/// Throws DataError naming the offending field.
void validate_record(const SimulationRecord& record);

json to_json(const JobMeta& meta);
json to_json(const SimulationRecord& record);
SimulationRecord record_from_json(const json& j);

struct DataFilter {
    enum class Mode { all, complexity, part };

    Mode mode = Mode::all;
    std::optional<std::string> part_id;
    std::optional<std::pair<double, double>> complexity_band;

    static DataFilter all() { return {}; }
    static DataFilter part(std::string id) { return {Mode::part, std::move(id), std::nullopt}; }
    static DataFilter complexity(double low, double high) {
        return {Mode::complexity, std::nullopt, std::make_pair(low, high)};
    }

    void validate() const;
};

struct PartInfo {
    double complexity = 0.0;
    std::string cloud_path;
};

/// Sidecar registry: part_id -> {complexity, cloud_path}.
class PartRegistry {
public:
    PartRegistry() = default;
    static PartRegistry load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    void set(const std::string& part_id, PartInfo info);
    const PartInfo* find(const std::string& part_id) const;
    const std::map<std::string, PartInfo>& parts() const { return parts_; }

    // Relative cloud paths are resolved against this directory.
    std::filesystem::path base_dir;

private:
    std::map<std::string, PartInfo> parts_;
};

/// Append-only JSON Lines store of simulation records. One writer at a time;
/// readers see a consistent prefix.
class ResultStore {
public:
    /// Opens (and loads, if present) the file at `path`. Malformed lines throw
    /// DataError naming the 1-based line number.
    explicit ResultStore(std::filesystem::path path, PartRegistry registry = {});

    ResultStore(const ResultStore&) = delete;
    ResultStore& operator=(const ResultStore&) = delete;

    std::size_t append(const SimulationRecord& record);

    std::vector<SimulationRecord> query(const DataFilter& filter) const;
    std::size_t size() const;

    /// Min/max for continuous parameters, sorted distinct values for discrete
    /// ones, over the filtered records that carry the parameter.
    std::vector<ParameterRange> observed_ranges(const DataFilter& filter,
                                                std::span<const ParameterSpec> specs) const;

    const PartRegistry& registry() const { return registry_; }
    const std::filesystem::path& path() const { return path_; }

private:
    bool matches(const SimulationRecord& record, const DataFilter& filter) const;

    std::filesystem::path path_;
    PartRegistry registry_;
    mutable std::shared_mutex records_mutex_;
    std::mutex writer_mutex_;
    std::vector<SimulationRecord> records_;
    std::vector<std::string> schema_;  // input names of the first record
};

std::vector<ParameterRange> observed_ranges(std::span<const SimulationRecord> records,
                                            std::span<const ParameterSpec> specs);

}  // namespace formbo
