#include "formbo/optimizer_loop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include "formbo/initial_predictor.hpp"

namespace formbo {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr Index kSweepPoints = 51;

std::uint64_t cycle_seed(std::uint64_t seed, std::int64_t cycle) {
    return seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(cycle + 1);
}

json values_json(const OrderedValues& v) {
    json j = json::object();
    for (const auto& [k, x] : v) j[k] = x;
    return j;
}

json range_json(const ParameterRange& r) {
    json j;
    j["name"] = r.name;
    j["kind"] = to_string(r.kind);
    if (r.kind == ParameterKind::continuous) {
        j["lower"] = r.lo;
        j["upper"] = r.hi;
    } else {
        j["values"] = r.values;
    }
    return j;
}

Eigen::VectorXd target_values(const TargetVector& t, const std::vector<std::string>& names) {
    Eigen::VectorXd y(static_cast<Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) y(static_cast<Index>(j)) = t.at(names[j]);
    return y;
}

bool has_targets(const SimulationRecord& r, const std::vector<std::string>& names) {
    return std::all_of(names.begin(), names.end(), [&](const auto& n) { return r.targets.contains(n); });
}

}  // namespace

std::string_view to_string(LoopMode mode) { return mode == LoopMode::automated ? "automated" : "human_guided"; }

LoopMode loop_mode_from_string(std::string_view text) {
    if (text == "automated") return LoopMode::automated;
    if (text == "human_guided") return LoopMode::human_guided;
    throw ConfigError("unknown loop mode '" + std::string(text) + "'");
}

std::string_view to_string(LoopStatus status) {
    switch (status) {
        case LoopStatus::running: return "running";
        case LoopStatus::awaiting_human: return "awaiting_human";
        case LoopStatus::stopped: return "stopped";
    }
    return "running";
}

void LoopConfig::validate() const {
    if (part_id.empty()) throw ConfigError("part_id: empty");
    if (parameters.empty()) throw ConfigError("parameters: at least one parameter is required");
    for (std::size_t i = 0; i < parameters.size(); ++i) {
        parameters[i].validate();
        for (std::size_t k = 0; k < i; ++k)
            if (parameters[k].name == parameters[i].name)
                throw ConfigError("parameters: duplicate name " + parameters[i].name);
    }
    targets.validate();
    surrogate.validate();
    if (candidates.n_star < 2 && candidates.method == Generation::linear)
        throw ConfigError("candidates.n_star: must be >= 2");
    if (candidates.expansion < 0.0) throw ConfigError("candidates.expansion: must be >= 0");
    if (candidates.batch_size < 1) throw ConfigError("candidates.batch_size: must be >= 1");
    if (candidates.default_steps < 1) throw ConfigError("candidates.steps: must be >= 1");
    for (const auto& [name, s] : candidates.steps)
        if (s < 1) throw ConfigError("candidates.steps." + name + ": must be >= 1");
    if (candidates.cap && *candidates.cap < 1) throw ConfigError("candidates.cap: must be >= 1");
    if (acquisition.n_mc < 1) throw ConfigError("acquisition.n_mc: must be >= 1");
    if (p < 1) throw ConfigError("loop.p: must be >= 1");
    if (moe.i_moe < 0) throw ConfigError("loop.i_moe: must be >= 0");
    if (!(moe.cutoff >= 0.0 && moe.cutoff < 1.0)) throw ConfigError("moe.cutoff: must be in [0, 1)");
    if (max_iterations < 1) throw ConfigError("loop.max_iterations: must be >= 1");
    if (end.no_improvement_window < 1) throw ConfigError("loop.end_conditions.no_improvement: window must be >= 1");
    if (end.constant_minimum_window && *end.constant_minimum_window < 1)
        throw ConfigError("loop.end_conditions.constant_minimum: window must be >= 1");
    if (end.energy_budget_j && !(*end.energy_budget_j >= 0.0))
        throw ConfigError("loop.end_conditions.energy_budget_j: must be >= 0");
    if (!(early_termination.threshold >= 0.0 && early_termination.threshold <= 1.0))
        throw ConfigError("loop.early_termination.threshold: must be in [0, 1]");
    if (complexity_band && complexity_band->first > complexity_band->second)
        throw ConfigError("loop.complexity_band: low > high");
    if (proposals_k < 1) throw ConfigError("loop.proposals: must be >= 1");
}

std::vector<std::string> LoopConfig::input_names() const {
    std::vector<std::string> names;
    for (const auto& p : parameters) names.push_back(p.name);
    return names;
}

json to_json(const LoopState& s) {
    json j;
    j["iteration"] = s.iteration;
    j["cycle"] = s.cycle;
    j["status"] = to_string(s.status);
    j["stop_reason"] = s.stop_reason.empty() ? json(nullptr) : json(s.stop_reason);
    j["ei_sum_history"] = json::array();
    for (double v : s.ei_sum_history) j["ei_sum_history"].push_back(std::isfinite(v) ? json(v) : json(nullptr));
    j["cycle_end_iterations"] = s.cycle_end_iterations;
    if (s.best) {
        j["best_so_far"] = {{"point", values_json(s.best->point)},
                            {"targets", values_json(s.best->targets)},
                            {"objective", s.best->objective},
                            {"iteration", s.best->iteration}};
    } else {
        j["best_so_far"] = nullptr;
    }
    j["best_history"] = json::array();
    for (double v : s.best_history) j["best_history"].push_back(std::isfinite(v) ? json(v) : json(nullptr));
    j["consumed_energy_j"] = s.consumed_energy_j;
    j["training_energy_j"] = s.training_energy_j;
    j["training_energy_available"] = s.training_energy_available;
    return j;
}

json to_json(const AcquisitionProfile& p) {
    json j;
    j["cycle"] = p.cycle;
    j["data_source"] = p.data_source;
    j["target_names"] = p.target_names;
    j["ranges"] = json::array();
    for (const auto& r : p.ranges) j["ranges"].push_back(range_json(r));
    j["anchor"] = values_json(p.anchor);
    j["sweeps"] = json::array();
    for (const auto& s : p.sweeps) j["sweeps"].push_back({{"name", s.name}, {"values", s.values}, {"ei_sum", s.ei_sum}});
    j["proposals"] = json::array();
    for (const auto& q : p.proposals) {
        j["proposals"].push_back({{"index", q.index},
                                  {"point", values_json(q.point)},
                                  {"ei_sum", q.ei_sum},
                                  {"mean", std::vector<double>(q.mean.data(), q.mean.data() + q.mean.size())},
                                  {"stddev", std::vector<double>(q.stddev.data(), q.stddev.data() + q.stddev.size())}});
    }
    j["last_selected"] = json::array();
    for (const auto& x : p.last_selected) j["last_selected"].push_back(values_json(x));
    return j;
}

WatchDecision check_early_termination(const ProgressSnapshot& snapshot, const EarlyTermination& config) {
    if (!config.enabled || snapshot.progress < config.threshold) return WatchDecision::proceed;
    for (const auto& [name, limit] : config.limits) {
        auto v = snapshot.targets.get(name);
        if (v && *v > limit) return WatchDecision::stop;
    }
    return WatchDecision::proceed;
}

std::optional<std::string> evaluate_end_conditions(const LoopState& s, const LoopConfig& c) {
    const auto window = static_cast<std::size_t>(c.end.no_improvement_window);
    if (s.ei_sum_history.size() >= window) {
        const auto tail = std::span(s.ei_sum_history).last(window);
        const bool finite = std::all_of(tail.begin(), tail.end(), [](double v) { return std::isfinite(v); });
        if (finite) {
            const auto [lo, hi] = std::minmax_element(tail.begin(), tail.end());
            if (*hi - *lo <= 1e-9) return "no_improvement";
        }
    }
    if (c.end.constant_minimum_window && s.best && s.cycles_since_improvement >= *c.end.constant_minimum_window)
        return "constant_minimum";
    if (c.end.energy_budget_j && s.consumed_energy_j >= *c.end.energy_budget_j) return "energy_budget";
    if (s.iteration >= c.max_iterations) return "max_iterations";
    return std::nullopt;
}

struct Optimizer::Prepared {
    std::int64_t cycle = 0;
    std::string source;
    std::shared_ptr<const Predictor> model;
    std::vector<ParameterRange> ranges;
    CandidateSet candidates;
    std::optional<PosteriorPrediction> prediction;
    std::optional<AcquisitionScores> scores;
    std::optional<DesignPoint> initial_point;
    std::vector<std::string> warnings;
    double training_energy_j = 0.0;
};

Optimizer::Optimizer(LoopConfig config, ResultStore& store, BackendFactory backend,
                     const std::atomic<bool>* interrupt)
    : config_(std::move(config)), store_(store), backend_(std::move(backend)), interrupt_(interrupt) {
    config_.validate();
    if (!backend_) throw ConfigError("backend: no backend factory");
    for (const auto& r : store_.query(DataFilter::part(config_.part_id))) {
        if (!r.is_training_row() || !has_targets(r, config_.targets.names)) continue;
        const double obj = config_.targets.scalarize(target_values(r.targets, config_.targets.names));
        if (!state_.best || obj < state_.best->objective) state_.best = BestSoFar{r.inputs, r.targets, obj, -1};
    }
    state_.training_energy_available = std::isfinite(read_energy_counter());
}

Optimizer::~Optimizer() = default;

bool Optimizer::stop_now() const {
    return stop_requested_.load() || (interrupt_ && interrupt_->load());
}

double Optimizer::read_energy_counter() const {
    std::ifstream in("/sys/class/powercap/intel-rapl:0/energy_uj");
    double uj = kNaN;
    if (in >> uj) return uj * 1e-6;
    return kNaN;
}

std::vector<ParameterRange> Optimizer::effective_ranges(const std::vector<SimulationRecord>& observed) const {
    std::vector<ParameterRange> obs;
    if (!observed.empty()) obs = observed_ranges(observed, config_.parameters);
    return expand_ranges(obs, config_.parameters, config_.candidates.expansion);
}

std::shared_ptr<const Predictor> Optimizer::mixture_model(std::vector<std::string>& warnings) {
    if (mixture_tried_) return mixture_;
    mixture_tried_ = true;
    try {
        const auto& registry = store_.registry();
        auto resolve = [&](const std::string& p) {
            std::filesystem::path path(p);
            return path.is_relative() ? registry.base_dir / path : path;
        };
        const PartInfo* self = registry.find(config_.part_id);
        if (!self || self->cloud_path.empty()) {
            warnings.push_back("mixture of experts unavailable: no point cloud for part " + config_.part_id);
            return nullptr;
        }
        std::map<std::string, std::vector<SimulationRecord>> groups;
        for (auto& r : store_.query(DataFilter::all()))
            if (r.part_id != config_.part_id && r.is_training_row() && has_targets(r, config_.targets.names))
                groups[r.part_id].push_back(std::move(r));
        ExpertMap experts;
        std::vector<PointCloud> clouds;
        for (const auto& [id, rows] : groups) {
            const PartInfo* info = registry.find(id);
            if (rows.size() < 2 || !info || info->cloud_path.empty()) continue;
            const auto data = TrainingData::from_records(rows, config_.input_names(), config_.targets.names);
            experts[id] = std::make_shared<FittedSurrogate>(FittedSurrogate::fit(data, config_.surrogate));
            clouds.push_back(PointCloud::load(resolve(info->cloud_path), id));
        }
        if (experts.empty()) {
            warnings.push_back("mixture of experts unavailable: no other part has a cloud and two completed rows");
            return nullptr;
        }
        GatingDecision decision;
        if (experts.size() == 1) {
            decision.mode = config_.moe.gating;
            decision.selected = {{experts.begin()->first, 1.0}};
            decision.distances = {{experts.begin()->first, 0.0}};
        } else {
            auto trained = train_encoder(clouds, config_.moe.encoder);
            for (auto& w : trained.warnings) warnings.push_back(std::move(w));
            const auto cloud = PointCloud::load(resolve(self->cloud_path), config_.part_id);
            decision = gate(cloud, trained.encoder, trained.embeddings, config_.moe.gating, config_.moe.cutoff);
        }
        mixture_ = std::make_shared<MixturePredictor>(std::move(decision), std::move(experts));
    } catch (const Error& e) {
        warnings.push_back(std::string("mixture of experts unavailable: ") + e.what());
        mixture_.reset();
    }
    return mixture_;
}

std::shared_ptr<Optimizer::Prepared> Optimizer::prepare() {
    auto pr = std::make_shared<Prepared>();
    pr->cycle = state_.cycle;
    const auto names = config_.input_names();
    const auto& target_names = config_.targets.names;

    const auto part_records = store_.query(DataFilter::part(config_.part_id));
    auto training_rows = [&](const std::vector<SimulationRecord>& rows) {
        return std::count_if(rows.begin(), rows.end(),
                             [&](const auto& r) { return r.is_training_row() && has_targets(r, target_names); });
    };

    std::vector<SimulationRecord> fit_rows;
    std::vector<SimulationRecord> observed = part_records;
    if (state_.iteration < config_.moe.i_moe) {
        if (auto moe = mixture_model(pr->warnings)) {
            pr->source = "moe";
            pr->model = moe;
            observed = store_.query(DataFilter::all());
        }
    }
    if (!pr->model && training_rows(part_records) >= 2) {
        pr->source = "part";
        fit_rows = part_records;
    }
    if (!pr->model && pr->source.empty() && config_.complexity_band) {
        auto rows = store_.query(DataFilter::complexity(config_.complexity_band->first, config_.complexity_band->second));
        if (training_rows(rows) >= 2) {
            pr->source = "complexity";
            fit_rows = rows;
            observed = rows;
        }
    }
    if (!fit_rows.empty()) {
        const auto data = TrainingData::from_records(fit_rows, names, target_names);
        const double e0 = read_energy_counter();
        try {
            const GpHyperparameters* warm = config_.warm_start && warm_ && warm_source_ == pr->source ? &*warm_ : nullptr;
            auto fitted = std::make_shared<FittedSurrogate>(FittedSurrogate::fit(data, config_.surrogate, warm));
            warm_ = fitted->hyperparameters();
            warm_source_ = pr->source;
            pr->model = fitted;
        } catch (const NumericalError& e) {
            pr->warnings.push_back(std::string("surrogate fit failed, sampling at random: ") + e.what());
            pr->source.clear();
        }
        const double e1 = read_energy_counter();
        if (std::isfinite(e0) && std::isfinite(e1) && e1 >= e0) pr->training_energy_j = e1 - e0;
    }

    pr->ranges = effective_ranges(observed);
    const auto seed = cycle_seed(config_.seed, state_.cycle);
    if (config_.candidates.method == Generation::linear) {
        pr->candidates = generate_linear(pr->ranges, config_.candidates.n_star, seed, !config_.candidates.strict);
    } else {
        std::vector<int> steps;
        for (const auto& r : pr->ranges) {
            auto it = config_.candidates.steps.find(r.name);
            steps.push_back(it != config_.candidates.steps.end() ? it->second : config_.candidates.default_steps);
        }
        pr->candidates = generate_combination(pr->ranges, steps, config_.candidates.cap, seed);
    }

    if (pr->model) {
        const bool mc = config_.acquisition.method == AcquisitionMethod::monte_carlo;
        pr->prediction = pr->model->predict(pr->candidates, mc, config_.candidates.batch_size);
        pr->scores = mc ? ei_monte_carlo(*pr->prediction, config_.targets, config_.acquisition.n_mc, seed)
                        : ei_marginal(*pr->prediction, config_.targets);
    } else {
        pr->source = "random";
        if (config_.use_initial_predictor && training_rows(part_records) == 0) {
            try {
                InitialPredictorOptions opts;
                opts.seed = config_.seed;
                const auto all = store_.query(DataFilter::all());
                const auto ip = InitialPredictor::train(all, pr->ranges, opts);
                pr->initial_point = ip.predict({}, config_.targets);
                pr->source = "initial_predictor";
            } catch (const Error& e) {
                pr->warnings.push_back(e.what());
            }
        }
    }
    return pr;
}

void Optimizer::publish_profile(const Prepared& pr) {
    auto profile = std::make_shared<AcquisitionProfile>();
    profile->cycle = pr.cycle;
    profile->data_source = pr.source;
    profile->target_names = config_.targets.names;
    profile->ranges = pr.ranges;
    {
        std::lock_guard lock(mutex_);
        profile->last_selected = last_selected_;
    }
    if (pr.model && pr.scores) {
        const auto names = config_.input_names();
        const Index best = select_best(*pr.scores, pr.candidates).index;
        profile->anchor = pr.candidates.row(best);
        if (state_.best) {
            bool inside = true;
            for (const auto& r : pr.ranges) inside = inside && r.contains(state_.best->point.at(r.name), 1e-9);
            if (inside) profile->anchor = state_.best->point;
        }
        const bool mc = config_.acquisition.method == AcquisitionMethod::monte_carlo;
        for (std::size_t d = 0; d < pr.ranges.size(); ++d) {
            const auto& r = pr.ranges[d];
            ProfileSweep sweep;
            sweep.name = r.name;
            if (r.kind == ParameterKind::discrete) {
                sweep.values = r.values;
            } else {
                for (Index i = 0; i < kSweepPoints; ++i)
                    sweep.values.push_back(i == kSweepPoints - 1 ? r.hi : r.lo + (r.hi - r.lo) * i / (kSweepPoints - 1));
            }
            CandidateSet set;
            set.names = names;
            set.points.resize(static_cast<Index>(sweep.values.size()), static_cast<Index>(names.size()));
            for (std::size_t k = 0; k < names.size(); ++k)
                set.points.col(static_cast<Index>(k)).setConstant(profile->anchor.at(names[k]));
            const auto col = static_cast<Index>(std::find(names.begin(), names.end(), r.name) - names.begin());
            for (std::size_t i = 0; i < sweep.values.size(); ++i) set.points(static_cast<Index>(i), col) = sweep.values[i];
            const auto pred = pr.model->predict(set, mc, config_.candidates.batch_size);
            const auto scores = mc ? ei_monte_carlo(pred, config_.targets, config_.acquisition.n_mc, config_.seed)
                                   : ei_marginal(pred, config_.targets);
            sweep.ei_sum.assign(scores.sum.data(), scores.sum.data() + scores.sum.size());
            profile->sweeps.push_back(std::move(sweep));
        }
        std::vector<Index> order(static_cast<std::size_t>(pr.candidates.size()));
        std::iota(order.begin(), order.end(), Index{0});
        const Index k = std::min<Index>(config_.proposals_k, pr.candidates.size());
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
            return pr.scores->sum(a) > pr.scores->sum(b) || (pr.scores->sum(a) == pr.scores->sum(b) && a < b);
        });
        for (Index i = 0; i < k; ++i) {
            const Index c = order[static_cast<std::size_t>(i)];
            profile->proposals.push_back({c, pr.candidates.row(c), pr.scores->sum(c),
                                          pr.prediction->mean.row(c).transpose(),
                                          pr.prediction->variance.row(c).cwiseSqrt().transpose()});
        }
    }
    std::lock_guard lock(mutex_);
    profile_ = std::move(profile);
}

std::vector<SimulationRecord> Optimizer::dispatch(const std::vector<std::pair<DesignPoint, JobSource>>& jobs) {
    std::vector<SimulationRecord> out(jobs.size());
    const std::int64_t base = state_.iteration;
    const std::int64_t cycle = state_.cycle;
    auto job = [&](std::size_t k) {
        SimulationRecord& rec = out[k];
        rec.part_id = config_.part_id;
        rec.inputs = jobs[k].first;
        rec.meta.iteration = base + static_cast<std::int64_t>(k);
        rec.meta.cycle = cycle;
        rec.meta.source = jobs[k].second;
        try {
            auto backend = backend_();
            Watcher watcher = [this](const ProgressSnapshot& snap) {
                if (stop_now()) return WatchDecision::stop;
                if (config_.early_termination.enabled) return check_early_termination(snap, config_.early_termination);
                return WatchDecision::proceed;
            };
            auto result = backend->run(rec.inputs, watcher, config_.seed + static_cast<std::uint64_t>(rec.meta.iteration));
            rec.targets = std::move(result.targets);
            rec.meta.walltime_s = result.meta.walltime_s;
            rec.meta.energy_j = result.meta.energy_j;
            rec.meta.progress = result.meta.progress;
            rec.meta.terminated_early = result.meta.terminated_early;
            validate_record(rec);
        } catch (const std::exception& e) {
            rec.targets = {};
            rec.meta.failed = true;
            rec.meta.error = e.what();
            rec.meta.progress = 0.0;
            rec.meta.terminated_early = false;
        }
    };
    if (jobs.size() == 1) {
        job(0);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t k = 0; k < jobs.size(); ++k) threads.emplace_back(job, k);
        for (auto& t : threads) t.join();
    }
    return out;
}

void Optimizer::record_outcomes(const std::vector<SimulationRecord>& records) {
    for (const auto& r : records) store_.append(r);
    std::lock_guard lock(mutex_);
    history_.insert(history_.end(), records.begin(), records.end());
}

CycleReport Optimizer::run_cycle() {
    CycleReport report;
    {
        std::lock_guard lock(mutex_);
        report.cycle = state_.cycle;
        if (state_.status == LoopStatus::stopped) return report;
    }
    auto stop_with = [&](std::string reason) {
        std::lock_guard lock(mutex_);
        state_.status = LoopStatus::stopped;
        state_.stop_reason = std::move(reason);
    };
    if (stop_now()) {
        stop_with(stop_requested_ ? "stop_requested" : "interrupted");
        return report;
    }

    if (!prepared_ || prepared_->cycle != state_.cycle) {
        prepared_ = prepare();
        publish_profile(*prepared_);
    }
    const Prepared& pr = *prepared_;
    report.data_source = pr.source;
    report.warnings = pr.warnings;
    if (pr.scores) {
        report.best_index = select_best(*pr.scores, pr.candidates).index;
        report.ei_sum = pr.scores->sum.sum();
    } else {
        report.ei_sum = kNaN;
    }

    const Index room = static_cast<Index>(config_.max_iterations - state_.iteration);
    const Index p = std::max<Index>(1, std::min(config_.p, room));
    std::vector<std::pair<DesignPoint, JobSource>> jobs;
    if (config_.mode == LoopMode::human_guided) {
        std::lock_guard lock(mutex_);
        if (human_queue_.empty()) {
            state_.status = LoopStatus::awaiting_human;
            return report;
        }
        jobs.emplace_back(human_queue_.front(), JobSource::human);
        human_queue_.pop_front();
        state_.status = LoopStatus::running;
        report.data_source = "human";
    } else if (pr.scores) {
        for (const auto& s : select_parallel(*pr.scores, pr.candidates, std::min(p, pr.candidates.size()), config_.strategy)) {
            report.selected.push_back(s.index);
            jobs.emplace_back(s.point, JobSource::automated);
        }
    } else {
        std::vector<Index> idx(static_cast<std::size_t>(pr.candidates.size()));
        std::iota(idx.begin(), idx.end(), Index{0});
        std::mt19937_64 rng(cycle_seed(config_.seed, state_.cycle) ^ 0xA5A5A5A5ULL);
        Index k = 0;
        if (pr.initial_point) {
            jobs.emplace_back(*pr.initial_point, JobSource::initial_predictor);
            ++k;
        }
        const Index n = pr.candidates.size();
        for (Index i = 0; k < p && i < n; ++i, ++k) {
            std::uniform_int_distribution<Index> pick(i, n - 1);
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
            report.selected.push_back(idx[static_cast<std::size_t>(i)]);
            jobs.emplace_back(pr.candidates.row(idx[static_cast<std::size_t>(i)]), JobSource::random);
        }
    }

    report.records = dispatch(jobs);
    report.dispatched = true;
    record_outcomes(report.records);

    std::lock_guard lock(mutex_);
    last_selected_.clear();
    for (const auto& [x, src] : jobs) last_selected_.push_back(x);
    bool improved = false;
    bool all_failed = true;
    for (const auto& r : report.records) {
        state_.consumed_energy_j += r.meta.energy_j;
        all_failed = all_failed && r.meta.failed;
        if (!r.is_training_row() || !has_targets(r, config_.targets.names)) continue;
        const double obj = config_.targets.scalarize(target_values(r.targets, config_.targets.names));
        if (!state_.best || obj < state_.best->objective) {
            state_.best = BestSoFar{r.inputs, r.targets, obj, r.meta.iteration};
            improved = true;
        }
    }
    state_.training_energy_j += pr.training_energy_j;
    state_.consumed_energy_j += pr.training_energy_j;
    state_.iteration += static_cast<std::int64_t>(report.records.size());
    state_.cycle += 1;
    state_.ei_sum_history.push_back(report.ei_sum);
    state_.cycle_end_iterations.push_back(state_.iteration);
    state_.best_history.push_back(state_.best ? state_.best->objective : kNaN);
    if (improved) state_.cycles_since_improvement = 0;
    else if (state_.best) ++state_.cycles_since_improvement;

    if (stop_now()) {
        state_.status = LoopStatus::stopped;
        state_.stop_reason = stop_requested_ ? "stop_requested" : "interrupted";
    } else if (all_failed) {
        state_.status = LoopStatus::stopped;
        state_.stop_reason = "backend failure";
    } else if (auto reason = evaluate_end_conditions(state_, config_)) {
        state_.status = LoopStatus::stopped;
        state_.stop_reason = *reason;
    } else {
        state_.status = LoopStatus::running;
    }
    prepared_.reset();
    return report;
}

LoopState Optimizer::run(const std::function<void(const CycleReport&, const LoopState&)>& on_cycle) {
    for (;;) {
        if (state().status == LoopStatus::stopped) break;
        auto report = run_cycle();
        if (report.dispatched) {
            if (on_cycle) on_cycle(report, state());
            continue;
        }
        std::unique_lock lock(mutex_);
        if (state_.status == LoopStatus::awaiting_human)
            queue_cv_.wait_for(lock, std::chrono::milliseconds(100),
                               [&] { return !human_queue_.empty() || stop_now(); });
    }
    return state();
}

LoopState Optimizer::state() const {
    std::lock_guard lock(mutex_);
    return state_;
}

std::shared_ptr<const AcquisitionProfile> Optimizer::profile() const {
    std::lock_guard lock(mutex_);
    return profile_;
}

std::vector<SimulationRecord> Optimizer::history() const {
    std::lock_guard lock(mutex_);
    return history_;
}

SelectionResult Optimizer::submit_selection(const DesignPoint& point) {
    SelectionResult result;
    std::lock_guard lock(mutex_);
    if (state_.status != LoopStatus::awaiting_human) {
        result.status = SelectionResult::Status::not_awaiting;
        return result;
    }
    const auto profile = profile_;
    std::vector<ParameterRange> ranges = profile ? profile->ranges : std::vector<ParameterRange>{};
    for (const auto& spec : config_.parameters) {
        auto v = point.get(spec.name);
        if (!v) {
            result.field_errors.emplace_back(spec.name, "missing");
            continue;
        }
        if (!std::isfinite(*v)) {
            result.field_errors.emplace_back(spec.name, "not a finite number");
            continue;
        }
        const ParameterRange* r = find_range(ranges, spec.name);
        if (!r) continue;
        if (r->kind == ParameterKind::continuous && !r->contains(*v, 1e-9))
            result.field_errors.emplace_back(spec.name, format_number(*v) + " outside [" + format_number(r->lo) +
                                                            ", " + format_number(r->hi) + "]");
        else if (r->kind == ParameterKind::discrete && !r->contains(*v))
            result.field_errors.emplace_back(spec.name, format_number(*v) + " is not an allowed value");
    }
    for (const auto& [name, v] : point)
        if (std::none_of(config_.parameters.begin(), config_.parameters.end(),
                         [&](const auto& s) { return s.name == name; }))
            result.field_errors.emplace_back(name, "unknown parameter");
    if (!result.field_errors.empty()) {
        result.status = SelectionResult::Status::invalid;
        return result;
    }
    DesignPoint ordered;
    for (const auto& spec : config_.parameters) ordered.set(spec.name, point.at(spec.name));
    human_queue_.push_back(std::move(ordered));
    queue_cv_.notify_all();
    return result;
}

void Optimizer::request_stop() {
    stop_requested_ = true;
    queue_cv_.notify_all();
}

}  // namespace formbo
