#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "formbo/result_store.hpp"

namespace formbo::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("formbo-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline SimulationRecord make_record(const std::string& part, DesignPoint inputs, std::array<double, 7> l,
                                    std::int64_t iteration = 0) {
    SimulationRecord r;
    r.part_id = part;
    r.inputs = std::move(inputs);
    for (std::size_t j = 0; j < 7; ++j) r.targets.set(kFeasibilityTargets[j], l[j]);
    r.meta.iteration = iteration;
    return r;
}

inline std::array<double, 7> safe_targets(double l4 = 100.0) {
    const double rest = (100.0 - l4) / 6.0;
    return {rest, rest, rest, l4, rest, rest, rest};
}

}  // namespace formbo::test
