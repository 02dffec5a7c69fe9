#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "formbo/acquisition.hpp"
#include "formbo/candidate_space.hpp"
#include "formbo/expert_mixture.hpp"
#include "formbo/result_store.hpp"
#include "formbo/surrogate_gp.hpp"
#include "formbo/virtual_press.hpp"

namespace formbo {

struct CandidateOptions {
    Generation method = Generation::linear;
    Index n_star = 10000;
    bool strict = false;               // linear: plain stacked columns, no permutation
    std::map<std::string, int> steps;  // combination: grid steps per continuous parameter
    int default_steps = 10;
    std::optional<Index> cap;
    double expansion = 0.1;
    Index batch_size = 1024;
};

struct AcquisitionOptions {
    AcquisitionMethod method = AcquisitionMethod::marginal;
    Index n_mc = 10000;
};

struct EndConditions {
    int no_improvement_window = 5;
    std::optional<int> constant_minimum_window;
    std::optional<double> energy_budget_j;
};

struct EarlyTermination {
    bool enabled = true;
    double threshold = 0.9;
    std::map<std::string, double> limits{{"L1", 10.0}, {"L6", 5.0}, {"L7", 1.0}};
};

enum class LoopMode { automated, human_guided };

std::string_view to_string(LoopMode mode);
LoopMode loop_mode_from_string(std::string_view text);

struct MoeOptions {
    int i_moe = 0;  // iterations that may use the mixture of experts
    GatingMode gating = GatingMode::soft;
    double cutoff = 0.1;
    EncoderConfig encoder;
};

struct LoopConfig {
    std::string part_id;
    std::vector<ParameterSpec> parameters;
    TargetSpec targets = TargetSpec::feasibility_default();
    SurrogateConfig surrogate;
    CandidateOptions candidates;
    AcquisitionOptions acquisition;
    Index p = 1;
    ParallelStrategy strategy = ParallelStrategy::highest_sum;
    MoeOptions moe;
    std::int64_t max_iterations = 10;
    EndConditions end;
    EarlyTermination early_termination;
    LoopMode mode = LoopMode::automated;
    std::uint64_t seed = 0;
    std::optional<std::pair<double, double>> complexity_band;
    bool use_initial_predictor = false;
    Index proposals_k = 5;
    bool warm_start = true;  // reuse the previous cycle's hyperparameters as the starting point

    void validate() const;
    std::vector<std::string> input_names() const;
};

enum class LoopStatus { running, awaiting_human, stopped };

std::string_view to_string(LoopStatus status);

struct BestSoFar {
    DesignPoint point;
    TargetVector targets;
    double objective = 0.0;
    std::int64_t iteration = 0;
};

struct LoopState {
    std::int64_t iteration = 0;
    std::int64_t cycle = 0;
    // One entry per completed cycle; NaN for cycles without a model.
    std::vector<double> ei_sum_history;
    std::vector<std::int64_t> cycle_end_iterations;
    std::optional<BestSoFar> best;
    std::vector<double> best_history;  // objective after each cycle, NaN while undefined
    int cycles_since_improvement = 0;
    double consumed_energy_j = 0.0;
    double training_energy_j = 0.0;
    bool training_energy_available = false;
    LoopStatus status = LoopStatus::running;
    std::string stop_reason;
};

json to_json(const LoopState& state);

/// Stop iff progress >= threshold and some configured limit is exceeded.
WatchDecision check_early_termination(const ProgressSnapshot& snapshot, const EarlyTermination& config);

/// First matching reason in the order no_improvement, constant_minimum,
/// energy_budget, max_iterations.
std::optional<std::string> evaluate_end_conditions(const LoopState& state, const LoopConfig& config);

struct ProfileSweep {
    std::string name;
    std::vector<double> values;
    std::vector<double> ei_sum;
};

struct Proposal {
    Index index = 0;
    DesignPoint point;
    double ei_sum = 0.0;
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;
};

/// What a human needs to pick the next sample.
struct AcquisitionProfile {
    std::int64_t cycle = 0;
    std::string data_source;
    std::vector<std::string> target_names;
    std::vector<ParameterRange> ranges;
    DesignPoint anchor;               // sweeps pass through this point
    std::vector<ProfileSweep> sweeps;  // 51 points per continuous dimension
    std::vector<Proposal> proposals;
    std::vector<DesignPoint> last_selected;
};

json to_json(const AcquisitionProfile& profile);

struct SelectionResult {
    enum class Status { accepted, not_awaiting, invalid };
    Status status = Status::accepted;
    std::vector<std::pair<std::string, std::string>> field_errors;
};

struct CycleReport {
    std::int64_t cycle = 0;
    std::string data_source;  // moe, part, complexity, random, initial_predictor, human
    std::vector<SimulationRecord> records;
    std::vector<Index> selected;      // candidate indices, automated mode
    std::optional<Index> best_index;  // select_best over the cycle's scores
    double ei_sum = 0.0;
    bool dispatched = false;
    std::vector<std::string> warnings;
};

/// Owns one optimisation run. run_cycle/run are called from a single owner
/// thread; the query and submission methods are safe from any thread.
class Optimizer {
public:
    Optimizer(LoopConfig config, ResultStore& store, BackendFactory backend,
              const std::atomic<bool>* interrupt = nullptr);
    ~Optimizer();

    Optimizer(const Optimizer&) = delete;
    Optimizer& operator=(const Optimizer&) = delete;

    CycleReport run_cycle();

    /// Cycles until an end condition, a stop request or an interrupt. In
    /// human-guided mode waits for selections between cycles.
    LoopState run(const std::function<void(const CycleReport&, const LoopState&)>& on_cycle = {});

    LoopState state() const;
    std::shared_ptr<const AcquisitionProfile> profile() const;
    std::vector<SimulationRecord> history() const;

    SelectionResult submit_selection(const DesignPoint& point);
    void request_stop();

    const LoopConfig& config() const { return config_; }

private:
    struct Prepared;

    std::shared_ptr<Prepared> prepare();
    std::shared_ptr<const Predictor> mixture_model(std::vector<std::string>& warnings);
    std::vector<ParameterRange> effective_ranges(const std::vector<SimulationRecord>& observed) const;
    std::vector<SimulationRecord> dispatch(const std::vector<std::pair<DesignPoint, JobSource>>& jobs);
    void record_outcomes(const std::vector<SimulationRecord>& records);
    void publish_profile(const Prepared& prepared);
    bool stop_now() const;
    double read_energy_counter() const;

    LoopConfig config_;
    ResultStore& store_;
    BackendFactory backend_;
    const std::atomic<bool>* interrupt_;
    std::atomic<bool> stop_requested_{false};

    mutable std::mutex mutex_;
    std::condition_variable queue_cv_;
    LoopState state_;
    std::deque<DesignPoint> human_queue_;
    std::shared_ptr<const AcquisitionProfile> profile_;
    std::vector<SimulationRecord> history_;
    std::vector<DesignPoint> last_selected_;
    std::shared_ptr<Prepared> prepared_;

    std::optional<GpHyperparameters> warm_;
    std::string warm_source_;
    std::shared_ptr<const Predictor> mixture_;
    bool mixture_tried_ = false;
};

}  // namespace formbo
