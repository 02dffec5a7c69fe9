#include "formbo/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace formbo {

namespace fs = std::filesystem;

namespace {

// Reads one JSON object, remembering its key path for error messages and
// rejecting keys nobody asked for.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail("expected an object");
    }

    [[noreturn]] void fail(const std::string& msg, const std::string& key = "") const {
        std::string where = path_;
        if (!key.empty()) where += where.empty() ? key : "." + key;
        throw ConfigError((where.empty() ? std::string("config") : where) + ": " + msg);
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    const json& raw(const std::string& key) {
        if (!has(key)) fail("missing", key);
        return j_.at(key);
    }

    Section sub(const std::string& key) {
        static const json empty = json::object();
        return Section(has(key) ? j_.at(key) : empty, child(key));
    }

    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
        if (!has(key)) {
            if (fallback) return *fallback;
            fail("missing", key);
        }
        const auto& v = j_.at(key);
        if (!v.is_number()) fail("expected a number", key);
        return v.get<double>();
    }

    std::optional<double> optional_number(const std::string& key) {
        if (!has(key)) return std::nullopt;
        return number(key);
    }

    std::int64_t integer(const std::string& key, std::int64_t fallback) {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_number_integer()) fail("expected an integer", key);
        return v.get<std::int64_t>();
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_boolean()) fail("expected true or false", key);
        return v.get<bool>();
    }

    std::string string(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
        if (!has(key)) {
            if (fallback) return *fallback;
            fail("missing", key);
        }
        const auto& v = j_.at(key);
        if (!v.is_string()) fail("expected a string", key);
        return v.get<std::string>();
    }

    std::vector<double> numbers(const std::string& key) {
        if (!has(key)) return {};
        const auto& v = j_.at(key);
        if (!v.is_array()) fail("expected an array of numbers", key);
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) fail("expected an array of numbers", key);
            out.push_back(e.get<double>());
        }
        return out;
    }

    template <typename F>
    auto parse(const std::string& key, F&& f) -> decltype(f(std::string_view{})) {
        const std::string text = string(key);
        try {
            return f(text);
        } catch (const ConfigError& e) {
            fail(e.what(), key);
        }
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) fail("unknown key", k);
    }

    const json& value() const { return j_; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_relative() ? base / path : path;
}

ParameterSpec parse_parameter(const json& j, std::size_t index) {
    Section s(j, "parameters[" + std::to_string(index) + "]");
    ParameterSpec p;
    p.name = s.string("name");
    p.kind = s.parse("kind", parameter_kind_from_string);
    p.lower = s.optional_number("lower");
    p.upper = s.optional_number("upper");
    p.add_values = s.numbers("add");
    p.discard_values = s.numbers("discard");
    if (s.has("precision")) p.precision = static_cast<int>(s.integer("precision", 0));
    s.finish();
    try {
        p.validate();
    } catch (const ConfigError& e) {
        s.fail(e.what());
    }
    return p;
}

Eigen::VectorXd target_values(Section& s, const std::string& key, const std::vector<std::string>& names,
                              const Eigen::VectorXd& fallback) {
    if (!s.has(key)) return fallback;
    const json& v = s.raw(key);
    Eigen::VectorXd out = fallback;
    if (v.is_array()) {
        if (v.size() != names.size()) s.fail("expected " + std::to_string(names.size()) + " values", key);
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) s.fail("expected numbers", key);
            out(static_cast<Index>(i)) = v[i].get<double>();
        }
    } else if (v.is_object()) {
        for (const auto& [name, x] : v.items()) {
            auto it = std::find(names.begin(), names.end(), name);
            if (it == names.end()) s.fail("unknown target " + name, key);
            if (!x.is_number()) s.fail("expected a number for " + name, key);
            out(it - names.begin()) = x.get<double>();
        }
    } else {
        s.fail("expected an array or an object", key);
    }
    return out;
}

}  // namespace

DesignPoint design_point_from_json(const json& j, std::vector<std::pair<std::string, std::string>>& errors) {
    DesignPoint x;
    if (!j.is_object()) {
        errors.emplace_back("design_point", "expected an object of numbers");
        return x;
    }
    for (const auto& [k, v] : j.items()) {
        if (!v.is_number()) errors.emplace_back(k, "expected a number");
        else x.set(k, v.get<double>());
    }
    return x;
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
    RunConfig rc;
    rc.source = j;
    Section top(j, "");
    LoopConfig& lc = rc.loop;
    lc.part_id = top.string("part_id");
    rc.results_path = resolve(base_dir, top.string("results", "results.jsonl"));
    if (top.has("parts")) rc.parts_path = resolve(base_dir, top.string("parts"));
    rc.runs_dir = resolve(base_dir, top.string("runs_dir", "runs"));

    const json& params = top.raw("parameters");
    if (!params.is_array() || params.empty()) top.fail("expected a non-empty array", "parameters");
    for (std::size_t i = 0; i < params.size(); ++i) lc.parameters.push_back(parse_parameter(params[i], i));

    {
        Section t = top.sub("targets");
        if (t.has("names")) {
            const json& n = t.raw("names");
            if (!n.is_array() || n.empty()) t.fail("expected a non-empty array of names", "names");
            lc.targets.names.clear();
            for (const auto& e : n) {
                if (!e.is_string()) t.fail("expected strings", "names");
                lc.targets.names.push_back(e.get<std::string>());
            }
            if (!t.has("f_star") || !t.has("attention")) t.fail("custom target names need f_star and attention");
            lc.targets.f_star = Eigen::VectorXd::Zero(static_cast<Index>(lc.targets.names.size()));
            lc.targets.attention = Eigen::VectorXd::Ones(static_cast<Index>(lc.targets.names.size()));
        }
        lc.targets.f_star = target_values(t, "f_star", lc.targets.names, lc.targets.f_star);
        lc.targets.attention = target_values(t, "attention", lc.targets.names, lc.targets.attention);
        t.finish();
    }
    {
        Section s = top.sub("surrogate");
        auto& sc = lc.surrogate;
        if (s.has("flavor")) sc.flavor = s.parse("flavor", surrogate_flavor_from_string);
        sc.matern_nu = s.number("matern_nu", sc.matern_nu);
        sc.latent_encoder = s.boolean("latent_encoder", sc.latent_encoder);
        sc.latent_input_dim = static_cast<int>(s.integer("latent_input_dim", sc.latent_input_dim));
        sc.latent_output_dim = static_cast<int>(s.integer("latent_output_dim", sc.latent_output_dim));
        sc.num_latent_gps = static_cast<int>(s.integer("num_latent_gps", sc.num_latent_gps));
        sc.noise_floor = s.number("noise_floor", sc.noise_floor);
        Section tr = s.sub("training");
        sc.training.max_steps = static_cast<int>(tr.integer("max_steps", sc.training.max_steps));
        sc.training.learning_rate = tr.number("learning_rate", sc.training.learning_rate);
        sc.training.convergence_tol = tr.number("convergence_tol", sc.training.convergence_tol);
        sc.training.seed = static_cast<std::uint64_t>(tr.integer("seed", 0));
        tr.finish();
        s.finish();
        try {
            sc.validate();
        } catch (const ConfigError& e) {
            s.fail(e.what());
        }
    }
    {
        Section s = top.sub("candidates");
        auto& c = lc.candidates;
        if (s.has("method")) c.method = s.parse("method", generation_from_string);
        c.n_star = s.integer("n_star", c.n_star);
        c.strict = s.boolean("strict", c.strict);
        if (s.has("steps")) {
            const json& st = s.raw("steps");
            if (st.is_number_integer()) {
                c.default_steps = st.get<int>();
            } else if (st.is_object()) {
                for (const auto& [name, v] : st.items()) {
                    if (!v.is_number_integer()) s.fail("expected integers", "steps");
                    c.steps[name] = v.get<int>();
                }
            } else {
                s.fail("expected an integer or an object of integers", "steps");
            }
        }
        if (s.has("cap")) c.cap = s.integer("cap", 0);
        c.expansion = s.number("expansion", c.expansion);
        c.batch_size = s.integer("batch_size", c.batch_size);
        s.finish();
    }
    {
        Section s = top.sub("acquisition");
        if (s.has("method")) lc.acquisition.method = s.parse("method", acquisition_method_from_string);
        lc.acquisition.n_mc = s.integer("n_mc", lc.acquisition.n_mc);
        s.finish();
    }
    {
        Section s = top.sub("loop");
        lc.p = s.integer("p", lc.p);
        if (s.has("strategy")) lc.strategy = s.parse("strategy", parallel_strategy_from_string);
        lc.moe.i_moe = static_cast<int>(s.integer("i_moe", lc.moe.i_moe));
        lc.max_iterations = s.integer("max_iterations", lc.max_iterations);
        if (s.has("mode")) lc.mode = s.parse("mode", loop_mode_from_string);
        lc.seed = static_cast<std::uint64_t>(s.integer("seed", 0));
        if (s.has("complexity_band")) {
            const auto band = s.numbers("complexity_band");
            if (band.size() != 2) s.fail("expected [low, high]", "complexity_band");
            lc.complexity_band = std::make_pair(band[0], band[1]);
        }
        lc.use_initial_predictor = s.boolean("use_initial_predictor", lc.use_initial_predictor);
        lc.proposals_k = s.integer("proposals", lc.proposals_k);
        lc.warm_start = s.boolean("warm_start", lc.warm_start);
        Section e = s.sub("end_conditions");
        lc.end.no_improvement_window = static_cast<int>(e.integer("no_improvement", lc.end.no_improvement_window));
        if (e.has("constant_minimum")) lc.end.constant_minimum_window = static_cast<int>(e.integer("constant_minimum", 0));
        lc.end.energy_budget_j = e.optional_number("energy_budget_j");
        e.finish();
        Section et = s.sub("early_termination");
        lc.early_termination.enabled = et.boolean("enabled", lc.early_termination.enabled);
        lc.early_termination.threshold = et.number("threshold", lc.early_termination.threshold);
        if (et.has("limits")) {
            const json& lim = et.raw("limits");
            if (!lim.is_object()) et.fail("expected an object of numbers", "limits");
            lc.early_termination.limits.clear();
            for (const auto& [name, v] : lim.items()) {
                if (!v.is_number()) et.fail("expected a number for " + name, "limits");
                lc.early_termination.limits[name] = v.get<double>();
            }
        }
        et.finish();
        s.finish();
    }
    {
        Section s = top.sub("moe");
        if (s.has("gating")) lc.moe.gating = s.parse("gating", gating_mode_from_string);
        lc.moe.cutoff = s.number("cutoff", lc.moe.cutoff);
        Section e = s.sub("encoder");
        auto& ec = lc.moe.encoder;
        if (e.has("mode")) ec.mode = e.parse("mode", resample_mode_from_string);
        if (e.has("embedding_dim")) ec.embedding_dim = e.integer("embedding_dim", 0);
        ec.max_steps = static_cast<int>(e.integer("max_steps", ec.max_steps));
        ec.learning_rate = e.number("learning_rate", ec.learning_rate);
        ec.seed = static_cast<std::uint64_t>(e.integer("seed", 0));
        e.finish();
        s.finish();
    }
    {
        Section s = top.sub("backend");
        const std::string type = s.string("type", "virtual_press");
        if (type == "virtual_press") {
            rc.backend.type = BackendType::virtual_press;
            const std::string model = s.string("model", "standard");
            if (model == "standard") rc.backend.press = PressModel::standard();
            else if (model == "three_input") rc.backend.press = PressModel::three_input();
            else s.fail("expected standard or three_input", "model");
            auto& pm = rc.backend.press;
            pm.steps = static_cast<int>(s.integer("steps", pm.steps));
            pm.step_walltime_s = s.number("step_walltime_s", pm.step_walltime_s);
            pm.power_w = s.number("power_w", pm.power_w);
            pm.step_delay_s = s.number("step_delay_s", pm.step_delay_s);
            pm.score_noise = s.number("score_noise", pm.score_noise);
            if (s.has("fixed")) {
                const json& f = s.raw("fixed");
                if (!f.is_object()) s.fail("expected an object of numbers", "fixed");
                for (const auto& [name, v] : f.items()) {
                    if (!v.is_number()) s.fail("expected a number for " + name, "fixed");
                    bool found = false;
                    for (auto& p : pm.schema)
                        if (p.name == name) {
                            p.fixed_value = v.get<double>();
                            found = true;
                        }
                    if (!found) s.fail("virtual press has no parameter " + name, "fixed");
                }
            }
            pm.variable.clear();
            for (const auto& p : lc.parameters) {
                bool found = false;
                for (const auto& q : pm.schema) found = found || q.name == p.name;
                if (!found) top.fail("virtual press has no parameter " + p.name, "parameters");
                pm.variable.push_back(p.name);
            }
            try {
                pm.validate();
            } catch (const ConfigError& e) {
                s.fail(e.what());
            }
        } else if (type == "external") {
            rc.backend.type = BackendType::external;
            auto& ex = rc.backend.external;
            ex.template_path = resolve(base_dir, s.string("template"));
            ex.config_dir = resolve(base_dir, s.string("config_dir", "."));
            ex.work_root = resolve(base_dir, s.string("work_dir", "work"));
            ex.command = s.string("command");
            ex.parameters = lc.parameters;
            try {
                ex.validate();
            } catch (const ConfigError& e) {
                throw ConfigError(e.what());
            }
        } else {
            s.fail("expected virtual_press or external", "type");
        }
        s.finish();
    }
    top.finish();
    lc.validate();
    return rc;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
    return from_json(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

BackendFactory RunConfig::backend_factory() const {
    if (backend.type == BackendType::virtual_press) {
        PressModel model = backend.press;
        return [model]() -> std::unique_ptr<SimulationBackend> { return std::make_unique<VirtualPress>(model); };
    }
    ExternalCommandConfig ext = backend.external;
    return [ext]() -> std::unique_ptr<SimulationBackend> { return std::make_unique<ExternalCommandBackend>(ext); };
}

PartRegistry RunConfig::load_registry() const {
    if (!parts_path) return {};
    return PartRegistry::load(*parts_path);
}

std::string RunConfig::digest() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : source.dump()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf, 8);
}

}  // namespace formbo
