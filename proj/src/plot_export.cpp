#include "formbo/plot_export.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace formbo {

namespace fs = std::filesystem;

std::string_view to_string(PlotKind kind) {
    switch (kind) {
        case PlotKind::targets_vs_iterations: return "targets_vs_iterations";
        case PlotKind::ei_sum_vs_iterations: return "ei_sum_vs_iterations";
        case PlotKind::inputs_vs_target: return "inputs_vs_target";
        case PlotKind::energy_vs_iterations: return "energy_vs_iterations";
    }
    return "targets_vs_iterations";
}

PlotKind plot_kind_from_string(std::string_view text) {
    for (auto k : {PlotKind::targets_vs_iterations, PlotKind::ei_sum_vs_iterations, PlotKind::inputs_vs_target,
                   PlotKind::energy_vs_iterations})
        if (to_string(k) == text) return k;
    throw ConfigError("unknown plot kind '" + std::string(text) +
                      "'; expected one of targets_vs_iterations, ei_sum_vs_iterations, inputs_vs_target, "
                      "energy_vs_iterations");
}

namespace {

void write_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) throw DataError("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string cell(double v) { return std::isfinite(v) ? format_number(v) : std::string(); }

const char* status_of(const SimulationRecord& r) {
    if (r.meta.failed) return "failed";
    return r.meta.terminated_early ? "terminated_early" : "completed";
}

std::string objective_cell(const RunArtifacts& run, const SimulationRecord& r) {
    if (!r.is_training_row()) return "";
    Eigen::VectorXd y(static_cast<Index>(run.targets.names.size()));
    for (std::size_t j = 0; j < run.targets.names.size(); ++j) {
        auto v = r.targets.get(run.targets.names[j]);
        if (!v) return "";
        y(static_cast<Index>(j)) = *v;
    }
    return format_number(run.targets.scalarize(y));
}

}  // namespace

void write_run_artifacts(const fs::path& run_dir, const std::string& run_id, const LoopConfig& config,
                         const LoopState& state, const std::vector<SimulationRecord>& history, const json& extra) {
    fs::create_directories(run_dir);
    json j = to_json(state);
    j["run_id"] = run_id;
    j["part_id"] = config.part_id;
    j["mode"] = to_string(config.mode);
    j["input_names"] = config.input_names();
    j["targets"] = {{"names", config.targets.names},
                    {"f_star", std::vector<double>(config.targets.f_star.data(),
                                                   config.targets.f_star.data() + config.targets.f_star.size())},
                    {"attention", std::vector<double>(config.targets.attention.data(),
                                                      config.targets.attention.data() + config.targets.attention.size())}};
    for (const auto& [k, v] : extra.items()) j[k] = v;
    std::string lines;
    for (const auto& r : history) lines += to_json(r).dump() + '\n';
    write_atomic(run_dir / "history.jsonl", lines);
    write_atomic(run_dir / "state.json", j.dump(2) + '\n');
}

RunArtifacts RunArtifacts::load(const fs::path& run_dir) {
    if (!fs::is_directory(run_dir)) throw DataError("no such run: " + run_dir.string());
    RunArtifacts run;
    {
        std::ifstream in(run_dir / "state.json");
        if (!in) throw DataError("cannot read " + (run_dir / "state.json").string());
        try {
            run.state = json::parse(in);
        } catch (const json::exception& e) {
            throw DataError((run_dir / "state.json").string() + ": " + e.what());
        }
    }
    run.run_id = run.state.value("run_id", run_dir.filename().string());
    run.input_names = run.state.at("input_names").get<std::vector<std::string>>();
    const json& t = run.state.at("targets");
    run.targets.names = t.at("names").get<std::vector<std::string>>();
    const auto f = t.at("f_star").get<std::vector<double>>();
    const auto a = t.at("attention").get<std::vector<double>>();
    run.targets.f_star = Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Index>(f.size()));
    run.targets.attention = Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Index>(a.size()));

    std::ifstream in(run_dir / "history.jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            run.history.push_back(record_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw DataError("history.jsonl line " + std::to_string(n) + ": " + e.what());
        }
    }
    return run;
}

std::string export_plot_csv(const RunArtifacts& run, PlotKind kind) {
    std::ostringstream out;
    const auto& targets = run.targets.names;
    switch (kind) {
        case PlotKind::targets_vs_iterations: {
            out << "iteration,cycle,source,status";
            for (const auto& t : targets) out << ',' << t;
            out << ",objective\n";
            for (const auto& r : run.history) {
                out << r.meta.iteration << ',' << r.meta.cycle << ',' << to_string(r.meta.source) << ',' << status_of(r);
                for (const auto& t : targets) out << ',' << cell(r.targets.get(t).value_or(NAN));
                out << ',' << objective_cell(run, r) << '\n';
            }
            break;
        }
        case PlotKind::ei_sum_vs_iterations: {
            out << "cycle,iteration,ei_sum\n";
            const json& hist = run.state.at("ei_sum_history");
            const json& ends = run.state.at("cycle_end_iterations");
            for (std::size_t c = 0; c < hist.size(); ++c) {
                out << c << ',' << (c < ends.size() ? ends[c].get<std::int64_t>() : 0) << ','
                    << (hist[c].is_number() ? cell(hist[c].get<double>()) : std::string()) << '\n';
            }
            break;
        }
        case PlotKind::inputs_vs_target: {
            out << "iteration";
            for (const auto& x : run.input_names) out << ',' << x;
            for (const auto& t : targets) out << ',' << t;
            out << ",objective\n";
            for (const auto& r : run.history) {
                out << r.meta.iteration;
                for (const auto& x : run.input_names) out << ',' << cell(r.inputs.get(x).value_or(NAN));
                for (const auto& t : targets) out << ',' << cell(r.targets.get(t).value_or(NAN));
                out << ',' << objective_cell(run, r) << '\n';
            }
            break;
        }
        case PlotKind::energy_vs_iterations: {
            out << "iteration,energy_j,cumulative_energy_j,walltime_s,cumulative_walltime_s\n";
            double energy = 0.0, wall = 0.0;
            for (const auto& r : run.history) {
                energy += r.meta.energy_j;
                wall += r.meta.walltime_s;
                out << r.meta.iteration << ',' << format_number(r.meta.energy_j) << ',' << format_number(energy) << ','
                    << format_number(r.meta.walltime_s) << ',' << format_number(wall) << '\n';
            }
            break;
        }
    }
    return out.str();
}

}  // namespace formbo
