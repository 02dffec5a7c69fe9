#include "formbo/result_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace formbo {

namespace {

constexpr double kSumTolerance = 1e-6;
constexpr double kEntryTolerance = 1e-9;

double number_field(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw DataError(where + ": missing key '" + key + "'");
    if (!it->is_number()) throw DataError(where + "." + key + ": expected a number");
    return it->get<double>();
}

OrderedValues values_from_json(const json& obj, const std::string& where) {
    if (!obj.is_object()) throw DataError(where + ": expected an object");
    OrderedValues out;
    for (const auto& [key, value] : obj.items()) {
        if (!value.is_number()) throw DataError(where + "." + key + ": expected a number");
        out.set(key, value.get<double>());
    }
    return out;
}

json values_to_json(const OrderedValues& values) {
    json obj = json::object();
    for (const auto& [k, v] : values) obj[k] = v;
    return obj;
}

}  // namespace

std::string_view to_string(JobSource source) {
    switch (source) {
        case JobSource::automated: return "automated";
        case JobSource::human: return "human";
        case JobSource::initial_predictor: return "initial_predictor";
        case JobSource::random: return "random";
    }
    return "automated";
}

JobSource job_source_from_string(std::string_view text) {
    if (text == "automated") return JobSource::automated;
    if (text == "human") return JobSource::human;
    if (text == "initial_predictor") return JobSource::initial_predictor;
    if (text == "random") return JobSource::random;
    throw DataError("meta.source: unknown value '" + std::string(text) + "'");
}

void validate_record(const SimulationRecord& record) {
    if (record.part_id.empty()) throw DataError("part_id: must not be empty");
    for (const auto& [name, v] : record.inputs)
        if (!std::isfinite(v)) throw DataError("inputs." + name + ": not finite");

    const JobMeta& m = record.meta;
    if (m.iteration < 0) throw DataError("meta.iteration: must be >= 0");
    if (m.cycle < 0) throw DataError("meta.cycle: must be >= 0");
    if (!(m.walltime_s >= 0.0)) throw DataError("meta.walltime_s: must be >= 0");
    if (!(m.energy_j >= 0.0)) throw DataError("meta.energy_j: must be >= 0");
    if (!(m.progress >= 0.0 && m.progress <= 1.0))
        throw DataError("meta.progress: must lie in [0, 1]");
    if (m.terminated_early && m.progress >= 1.0)
        throw DataError("meta.terminated_early: requires progress < 1");

    if (m.failed) return;

    double sum = 0.0;
    for (auto name : kFeasibilityTargets) {
        auto v = record.targets.get(name);
        if (!v) throw DataError("targets." + std::string(name) + ": missing");
        if (!(*v >= -kEntryTolerance && *v <= 100.0 + kEntryTolerance))
            throw DataError("targets." + std::string(name) + ": " + format_number(*v) +
                            " outside [0, 100]");
        sum += *v;
    }
    const bool partial = m.terminated_early && m.progress < 1.0;
    if (!partial && std::abs(sum - 100.0) > kSumTolerance)
        throw DataError("targets: L1..L7 sum to " + format_number(sum) + ", expected 100");
}

json to_json(const JobMeta& m) {
    json j = json::object();
    j["iteration"] = m.iteration;
    j["cycle"] = m.cycle;
    j["walltime_s"] = m.walltime_s;
    j["energy_j"] = m.energy_j;
    j["progress"] = m.progress;
    j["terminated_early"] = m.terminated_early;
    j["source"] = std::string(to_string(m.source));
    if (m.failed) {
        j["failed"] = true;
        j["error"] = m.error;
    }
    return j;
}

json to_json(const SimulationRecord& r) {
    json j = json::object();
    j["part_id"] = r.part_id;
    j["inputs"] = values_to_json(r.inputs);
    j["targets"] = values_to_json(r.targets);
    j["meta"] = to_json(r.meta);
    return j;
}

SimulationRecord record_from_json(const json& j) {
    if (!j.is_object()) throw DataError("record: expected an object");
    SimulationRecord r;
    auto pid = j.find("part_id");
    if (pid == j.end() || !pid->is_string()) throw DataError("part_id: missing or not a string");
    r.part_id = pid->get<std::string>();
    if (!j.contains("inputs")) throw DataError("inputs: missing");
    r.inputs = values_from_json(j.at("inputs"), "inputs");
    if (!j.contains("targets")) throw DataError("targets: missing");
    r.targets = values_from_json(j.at("targets"), "targets");
    if (!j.contains("meta") || !j.at("meta").is_object()) throw DataError("meta: missing");
    const json& m = j.at("meta");
    r.meta.iteration = static_cast<std::int64_t>(number_field(m, "iteration", "meta"));
    r.meta.cycle = static_cast<std::int64_t>(number_field(m, "cycle", "meta"));
    r.meta.walltime_s = number_field(m, "walltime_s", "meta");
    r.meta.energy_j = number_field(m, "energy_j", "meta");
    r.meta.progress = number_field(m, "progress", "meta");
    if (!m.contains("terminated_early") || !m.at("terminated_early").is_boolean())
        throw DataError("meta.terminated_early: missing or not a boolean");
    r.meta.terminated_early = m.at("terminated_early").get<bool>();
    if (!m.contains("source") || !m.at("source").is_string())
        throw DataError("meta.source: missing or not a string");
    r.meta.source = job_source_from_string(m.at("source").get<std::string>());
    if (m.contains("failed")) r.meta.failed = m.at("failed").get<bool>();
    if (m.contains("error")) r.meta.error = m.at("error").get<std::string>();
    return r;
}

void DataFilter::validate() const {
    if (mode == Mode::part && !part_id) throw ConfigError("part filter requires a part_id");
    if (mode == Mode::complexity) {
        if (!complexity_band) throw ConfigError("complexity filter requires a band");
        if (complexity_band->first > complexity_band->second)
            throw ConfigError("complexity band: low > high");
    }
}

PartRegistry PartRegistry::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open part registry " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("part registry " + path.string() + ": " + e.what());
    }
    PartRegistry reg;
    reg.base_dir = path.parent_path();
    for (const auto& [id, entry] : j.items()) {
        PartInfo info;
        info.complexity = entry.value("complexity", 0.0);
        info.cloud_path = entry.value("cloud_path", std::string{});
        reg.set(id, info);
    }
    return reg;
}

void PartRegistry::save(const std::filesystem::path& path) const {
    json j = json::object();
    for (const auto& [id, info] : parts_)
        j[id] = json{{"complexity", info.complexity}, {"cloud_path", info.cloud_path}};
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw DataError("cannot write part registry " + path.string());
}

void PartRegistry::set(const std::string& part_id, PartInfo info) {
    parts_[part_id] = std::move(info);
}

const PartInfo* PartRegistry::find(const std::string& part_id) const {
    auto it = parts_.find(part_id);
    return it == parts_.end() ? nullptr : &it->second;
}

ResultStore::ResultStore(std::filesystem::path path, PartRegistry registry)
    : path_(std::move(path)), registry_(std::move(registry)) {
    std::ifstream in(path_);
    if (!in) return;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            records_.push_back(record_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw DataError(path_.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!records_.empty()) schema_ = records_.front().inputs.names();
}

std::size_t ResultStore::append(const SimulationRecord& record) {
    validate_record(record);
    std::lock_guard writer(writer_mutex_);

    if (!schema_.empty()) {
        std::set<std::string> expected(schema_.begin(), schema_.end());
        std::set<std::string> seen;
        for (const auto& [name, v] : record.inputs) {
            if (!expected.count(name))
                throw DataError("inputs." + name + ": not in the store schema");
            seen.insert(name);
        }
        for (const auto& name : expected)
            if (!seen.count(name)) throw DataError("inputs." + name + ": missing");
    }

    const std::string line = to_json(record).dump() + "\n";
    std::error_code ec;
    const auto before = std::filesystem::exists(path_, ec) ? std::filesystem::file_size(path_, ec) : 0;
    {
        std::ofstream out(path_, std::ios::app | std::ios::binary);
        if (out) {
            out.write(line.data(), static_cast<std::streamsize>(line.size()));
            out.flush();
        }
        if (!out) {
            if (std::filesystem::exists(path_, ec)) std::filesystem::resize_file(path_, before, ec);
            throw DataError("cannot append to " + path_.string());
        }
    }

    std::unique_lock lock(records_mutex_);
    if (schema_.empty()) schema_ = record.inputs.names();
    records_.push_back(record);
    return records_.size() - 1;
}

bool ResultStore::matches(const SimulationRecord& r, const DataFilter& f) const {
    switch (f.mode) {
        case DataFilter::Mode::all: return true;
        case DataFilter::Mode::part: return r.part_id == *f.part_id;
        case DataFilter::Mode::complexity: {
            const PartInfo* info = registry_.find(r.part_id);
            if (!info) return false;
            return info->complexity >= f.complexity_band->first &&
                   info->complexity <= f.complexity_band->second;
        }
    }
    return false;
}

std::vector<SimulationRecord> ResultStore::query(const DataFilter& filter) const {
    filter.validate();
    std::shared_lock lock(records_mutex_);
    std::vector<SimulationRecord> out;
    for (const auto& r : records_)
        if (matches(r, filter)) out.push_back(r);
    return out;
}

std::size_t ResultStore::size() const {
    std::shared_lock lock(records_mutex_);
    return records_.size();
}

std::vector<ParameterRange> ResultStore::observed_ranges(const DataFilter& filter,
                                                         std::span<const ParameterSpec> specs) const {
    const auto records = query(filter);
    return formbo::observed_ranges(records, specs);
}

std::vector<ParameterRange> observed_ranges(std::span<const SimulationRecord> records,
                                            std::span<const ParameterSpec> specs) {
    if (records.empty()) throw DataError("no observations");
    std::vector<ParameterRange> out;
    for (const auto& spec : specs) {
        std::vector<double> seen;
        for (const auto& r : records)
            if (auto v = r.inputs.get(spec.name)) seen.push_back(*v);
        if (seen.empty()) throw DataError("no observations for parameter " + spec.name);
        ParameterRange range;
        if (spec.kind == ParameterKind::continuous) {
            auto [lo, hi] = std::minmax_element(seen.begin(), seen.end());
            range = ParameterRange::continuous(spec.name, *lo, *hi);
        } else {
            range = ParameterRange::discrete(spec.name, std::move(seen));
        }
        range.precision = spec.precision;
        out.push_back(std::move(range));
    }
    return out;
}

}  // namespace formbo
