#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "formbo/external_command.hpp"
#include "formbo/optimizer_loop.hpp"
#include "formbo/virtual_press.hpp"

namespace formbo {

enum class BackendType { virtual_press, external };

struct BackendSettings {
    BackendType type = BackendType::virtual_press;
    PressModel press = PressModel::three_input();
    ExternalCommandConfig external;
};

/// Everything a run needs. Relative paths are resolved against the
/// directory of the configuration file.
struct RunConfig {
    LoopConfig loop;
    BackendSettings backend;
    std::filesystem::path results_path;
    std::optional<std::filesystem::path> parts_path;
    std::filesystem::path runs_dir;
    json source;

    /// Throws ConfigError with the offending key path, e.g. "loop.p: must be >= 1".
    static RunConfig from_json(const json& j, const std::filesystem::path& base_dir);
    static RunConfig load(const std::filesystem::path& path);

    BackendFactory backend_factory() const;
    PartRegistry load_registry() const;
    /// Short hex digest of the configuration text.
    std::string digest() const;
};

/// DesignPoint from a JSON object of numbers; field errors are collected, not thrown.
DesignPoint design_point_from_json(const json& j, std::vector<std::pair<std::string, std::string>>& errors);

}  // namespace formbo
