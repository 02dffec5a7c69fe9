#include "formbo/external_command.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

namespace formbo {

namespace fs = std::filesystem;

namespace {

template <typename OnText, typename OnName>
void scan_template(std::string_view text, OnText on_text, OnName on_name) {
    std::size_t i = 0;
    while (i < text.size()) {
        if (text.compare(i, 3, "$${") == 0) {
            on_text("${");
            i += 3;
        } else if (text.compare(i, 2, "${") == 0) {
            const auto close = text.find('}', i + 2);
            if (close == std::string_view::npos) throw BackendError("unterminated placeholder in template");
            on_name(std::string(text.substr(i + 2, close - i - 2)));
            i = close + 1;
        } else {
            on_text(text.substr(i, 1));
            ++i;
        }
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw BackendError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return out + "'";
}

std::string replace_all(std::string s, std::string_view from, const std::string& to) {
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
        s.replace(pos, from.size(), to);
    return s;
}

}  // namespace

std::string substitute_template(std::string_view text, const DesignPoint& x) {
    std::string out;
    scan_template(
        text, [&](std::string_view t) { out += t; },
        [&](const std::string& name) {
            auto v = x.get(name);
            if (!v) throw BackendError("unresolved placeholder ${" + name + "}");
            out += format_number(*v);
        });
    return out;
}

std::vector<std::string> template_placeholders(std::string_view text) {
    std::vector<std::string> names;
    scan_template(text, [](std::string_view) {}, [&](const std::string& name) { names.push_back(name); });
    return names;
}

fs::path discrete_config_file(const fs::path& config_dir, const std::string& name, double value) {
    const auto file = config_dir / (name + "_" + format_number(value) + ".cfg");
    if (!fs::is_regular_file(file))
        throw BackendError("missing discrete config " + file.filename().string() + " for " + name + " = " +
                           format_number(value));
    return file;
}

void ExternalCommandConfig::validate() const {
    if (command.empty()) throw ConfigError("backend.command: empty");
    if (!fs::is_regular_file(template_path))
        throw ConfigError("backend.template: cannot read " + template_path.string());
    const auto names = template_placeholders(read_file(template_path));
    for (const auto& p : parameters)
        if (p.kind == ParameterKind::continuous && std::find(names.begin(), names.end(), p.name) == names.end())
            throw ConfigError("backend.template: no ${" + p.name + "} placeholder");
}

RunOutcome parse_command_output(const std::string& stdout_text) {
    std::istringstream in(stdout_text);
    std::string line, last;
    while (std::getline(in, line))
        if (line.find_first_not_of(" \t\r") != std::string::npos) last = line;
    if (last.empty()) throw BackendError("command produced no output");
    json j;
    try {
        j = json::parse(last);
    } catch (const json::exception&) {
        throw BackendError("unparsable command output: " + last);
    }
    if (!j.is_object()) throw BackendError("unparsable command output: " + last);
    RunOutcome out;
    for (auto name : kFeasibilityTargets) {
        const std::string key(name);
        if (!j.contains(key) || !j[key].is_number())
            throw BackendError("command output lacks numeric " + key + ": " + last);
        out.targets.set(key, j[key].get<double>());
    }
    for (const auto& [key, value] : j.items()) {
        if (key == "walltime_s" || key == "energy_j" || out.targets.contains(key)) continue;
        if (value.is_number()) out.targets.set(key, value.get<double>());
    }
    if (j.contains("walltime_s") && j["walltime_s"].is_number()) out.meta.walltime_s = j["walltime_s"].get<double>();
    if (j.contains("energy_j") && j["energy_j"].is_number()) out.meta.energy_j = j["energy_j"].get<double>();
    return out;
}

ExternalCommandBackend::ExternalCommandBackend(ExternalCommandConfig config) : config_(std::move(config)) {
    config_.validate();
}

RunOutcome ExternalCommandBackend::run(const DesignPoint& x, const Watcher& watcher, std::uint64_t seed) {
    static std::atomic<unsigned long> counter{0};
    const std::string text = substitute_template(read_file(config_.template_path), x);

    std::vector<fs::path> discrete_files;
    for (const auto& p : config_.parameters)
        if (p.kind == ParameterKind::discrete)
            discrete_files.push_back(discrete_config_file(config_.config_dir, p.name, x.at(p.name)));

    const auto workdir = config_.work_root / ("job_" + std::to_string(::getpid()) + "_" +
                                              std::to_string(counter.fetch_add(1)) + "_" + std::to_string(seed));
    fs::remove_all(workdir);
    fs::create_directories(workdir);
    last_workdir_ = workdir;
    const auto input = workdir / config_.template_path.filename();
    {
        std::ofstream out(input, std::ios::binary);
        out << text;
        if (!out) throw BackendError("cannot write " + input.string());
    }
    for (const auto& f : discrete_files) fs::copy_file(f, workdir / f.filename(), fs::copy_options::overwrite_existing);

    std::string cmd = replace_all(config_.command, "{workdir}", shell_quote(workdir.string()));
    cmd = replace_all(cmd, "{input}", shell_quote(input.string()));
    const std::string full = "cd " + shell_quote(workdir.string()) + " && (" + cmd + ") 2>" +
                             shell_quote((workdir / "stderr.txt").string());

    const auto start = std::chrono::steady_clock::now();
    FILE* pipe = ::popen(full.c_str(), "r");
    if (!pipe) throw BackendError("cannot start command: " + cmd);
    std::string captured;
    std::array<char, 4096> buf{};
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) captured.append(buf.data(), n);
    const int status = ::pclose(pipe);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const std::string err = fs::exists(workdir / "stderr.txt") ? read_file(workdir / "stderr.txt") : "";
    if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        const int code = status != -1 && WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        throw BackendError("command exited with status " + std::to_string(code) + "\nstdout:\n" + captured +
                           "\nstderr:\n" + err);
    }
    RunOutcome out;
    try {
        out = parse_command_output(captured);
    } catch (const BackendError& e) {
        throw BackendError(std::string(e.what()) + "\nstderr:\n" + err);
    }
    if (out.meta.walltime_s == 0.0) out.meta.walltime_s = elapsed;
    if (watcher) watcher({1.0, out.targets, out.meta.walltime_s, out.meta.energy_j});
    return out;
}

}  // namespace formbo
