#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "formbo/initial_predictor.hpp"
#include "formbo/optimizer_loop.hpp"
#include "support.hpp"

using namespace formbo;
using test::TempDir;

namespace {

LoopConfig small_config(Index p, std::int64_t max_iterations, std::uint64_t seed = 1) {
    LoopConfig c;
    c.part_id = "cup";
    c.parameters = PressModel::three_input().parameter_specs();
    c.candidates.n_star = 400;
    c.surrogate.training.max_steps = 40;
    c.p = p;
    c.max_iterations = max_iterations;
    c.seed = seed;
    c.early_termination.enabled = false;
    return c;
}

BackendFactory press_factory(PressModel model = PressModel::three_input()) {
    return [model] { return std::make_unique<VirtualPress>(model); };
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ProgressSnapshot snapshot(double progress, double l7, double l1 = 0.0) {
    ProgressSnapshot s;
    s.progress = progress;
    s.targets = make_feasibility_targets(
        (Eigen::VectorXd(7) << l1, 0, 0, 100 - l7 - l1, 0, 0, l7).finished());
    return s;
}

// Fails every `period`-th job counted across all instances sharing `calls`.
class FlakyBackend final : public SimulationBackend {
public:
    FlakyBackend(std::shared_ptr<std::atomic<int>> calls, int period) : calls_(std::move(calls)), period_(period) {}
    BackendCapabilities capabilities() const override { return {}; }
    RunOutcome run(const DesignPoint& x, const Watcher& w, std::uint64_t seed) override {
        if ((*calls_)++ % period_ == 0) throw BackendError("solver crashed");
        return VirtualPress(PressModel::three_input()).run(x, w, seed);
    }

private:
    std::shared_ptr<std::atomic<int>> calls_;
    int period_;
};

BackendFactory flaky_factory(int period) {
    auto calls = std::make_shared<std::atomic<int>>(0);
    return [calls, period] { return std::make_unique<FlakyBackend>(calls, period); };
}

}  // namespace

TEST_CASE("early termination decision") {
    EarlyTermination et;
    CHECK(check_early_termination(snapshot(0.5, 50), et) == WatchDecision::proceed);
    CHECK(check_early_termination(snapshot(0.9, 50), et) == WatchDecision::stop);
    CHECK(check_early_termination(snapshot(0.95, 0.5), et) == WatchDecision::proceed);
    CHECK(check_early_termination(snapshot(0.95, 0.5, 11), et) == WatchDecision::stop);
    et.enabled = false;
    CHECK(check_early_termination(snapshot(0.95, 50), et) == WatchDecision::proceed);
}

TEST_CASE("end conditions in priority order") {
    LoopConfig cfg = small_config(1, 100);
    LoopState s;
    s.iteration = 10;
    s.ei_sum_history = {9, 5, 5, 5, 5, 5};
    CHECK(evaluate_end_conditions(s, cfg) == "no_improvement");

    s.ei_sum_history = {5, 5, 5, 5};
    CHECK(evaluate_end_conditions(s, cfg) == std::nullopt);
    s.ei_sum_history = {5, 5, 5, 5, 5 + 1e-6};
    CHECK(evaluate_end_conditions(s, cfg) == std::nullopt);

    cfg.end.energy_budget_j = 100'000;
    s.consumed_energy_j = 100'001;
    CHECK(evaluate_end_conditions(s, cfg) == "energy_budget");
    s.ei_sum_history = {5, 5, 5, 5, 5};
    CHECK(evaluate_end_conditions(s, cfg) == "no_improvement");

    cfg.end.constant_minimum_window = 3;
    s.ei_sum_history = {1, 2, 3};
    s.cycles_since_improvement = 3;
    CHECK(evaluate_end_conditions(s, cfg) == "energy_budget");  // no best yet
    s.best = BestSoFar{};
    CHECK(evaluate_end_conditions(s, cfg) == "constant_minimum");

    s.cycles_since_improvement = 0;
    s.consumed_energy_j = 10;
    s.iteration = 100;
    CHECK(evaluate_end_conditions(s, cfg) == "max_iterations");
    s.iteration = 99;
    CHECK(evaluate_end_conditions(s, cfg) == std::nullopt);

    // Random cycles contribute NaN and never count as a constant tail.
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.ei_sum_history = {nan, nan, nan, nan, nan};
    CHECK(evaluate_end_conditions(s, cfg) == std::nullopt);
}

TEST_CASE("first cycle without history samples at random") {
    TempDir dir;
    ResultStore store(dir / "results.jsonl");
    Optimizer opt(small_config(1, 3), store, press_factory());
    const auto report = opt.run_cycle();
    CHECK(report.data_source == "random");
    REQUIRE(report.records.size() == 1);
    CHECK(report.records[0].meta.source == JobSource::random);
    CHECK(store.size() == 1);
    CHECK(std::isnan(opt.state().ei_sum_history.at(0)));
}

TEST_CASE("parallel-sample accounting") {
    for (Index p : {2, 5}) {
        CAPTURE(p);
        TempDir dir;
        ResultStore store(dir / "results.jsonl");
        const std::int64_t max_it = 10;
        Optimizer opt(small_config(p, max_it, 3), store, press_factory());
        std::vector<CycleReport> reports;
        const auto final_state = opt.run([&](const CycleReport& r, const LoopState&) { reports.push_back(r); });
        CHECK(final_state.iteration == max_it);
        CHECK(final_state.cycle == max_it / p);
        CHECK(final_state.stop_reason == "max_iterations");
        CHECK(store.size() == static_cast<std::size_t>(max_it));
        CHECK(reports.size() == static_cast<std::size_t>(max_it / p));
        for (const auto& r : reports) {
            CHECK(r.records.size() == static_cast<std::size_t>(p));
            CHECK(std::set<Index>(r.selected.begin(), r.selected.end()).size() == r.selected.size());
            if (r.data_source != "random") {
                REQUIRE(r.best_index);
                REQUIRE(!r.selected.empty());
                CHECK(r.selected.front() == *r.best_index);
            }
            for (const auto& rec : r.records) CHECK(rec.meta.cycle == r.cycle);
        }
        CHECK(reports.back().data_source == "part");
    }
}

TEST_CASE("seeded runs are reproducible") {
    TempDir a, b;
    for (const TempDir* d : {&a, &b}) {
        ResultStore store(*d / "results.jsonl");
        Optimizer opt(small_config(2, 8, 11), store, press_factory());
        opt.run();
    }
    const std::string ra = slurp(a / "results.jsonl");
    CHECK(!ra.empty());
    CHECK(ra == slurp(b / "results.jsonl"));
}

TEST_CASE("best so far never gets worse") {
    TempDir dir;
    ResultStore store(dir / "results.jsonl");
    Optimizer opt(small_config(1, 8, 5), store, press_factory());
    const auto s = opt.run();
    REQUIRE(s.best);
    for (std::size_t i = 1; i < s.best_history.size(); ++i) CHECK(s.best_history[i] <= s.best_history[i - 1]);
    CHECK(s.best->objective == s.best_history.back());
}

TEST_CASE("early-terminated jobs are stored flagged and never used for training") {
    TempDir dir;
    ResultStore store(dir / "results.jsonl");
    auto cfg = small_config(1, 6, 2);
    cfg.early_termination.enabled = true;
    cfg.early_termination.limits = {{"L7", 1.0}};
    Optimizer opt(cfg, store, press_factory());
    opt.run();
    const auto all = store.query(DataFilter::all());
    REQUIRE(all.size() == 6);
    std::size_t partial = 0;
    for (const auto& r : all) {
        if (!r.meta.terminated_early) continue;
        ++partial;
        CHECK(r.meta.progress >= 0.9);
        CHECK(r.meta.progress < 1.0);
        CHECK(r.targets.at("L7") > 1.0);
    }
    CHECK(partial > 0);
    const auto data = TrainingData::from_records(all, cfg.input_names(), feasibility_target_names());
    CHECK(static_cast<std::size_t>(data.size()) == all.size() - partial);
}

TEST_CASE("energy budget stops within one cycle") {
    TempDir dir;
    ResultStore store(dir / "results.jsonl");
    auto cfg = small_config(2, 100, 4);
    const double per_run = PressModel::three_input().step_energy_j() * PressModel::three_input().steps;
    cfg.end.energy_budget_j = 3 * per_run;  // crossed during the second cycle
    cfg.end.no_improvement_window = 1000;
    Optimizer opt(cfg, store, press_factory());
    const auto s = opt.run();
    CHECK(s.stop_reason == "energy_budget");
    CHECK(s.cycle == 2);
    CHECK(s.consumed_energy_j >= 3 * per_run);
}

TEST_CASE("failed jobs are recorded and the cycle continues") {
    TempDir dir;
    ResultStore store(dir / "results.jsonl");
    auto cfg = small_config(4, 8, 6);
    Optimizer opt(cfg, store, flaky_factory(2));
    const auto s = opt.run();
    const auto all = store.query(DataFilter::all());
    CHECK(all.size() == 8);
    std::size_t failed = 0;
    for (const auto& r : all) {
        if (!r.meta.failed) continue;
        ++failed;
        CHECK(r.targets.empty());
        CHECK(r.meta.error.find("solver crashed") != std::string::npos);
    }
    CHECK(failed == 4);
    CHECK(s.stop_reason == "max_iterations");

    TempDir dir2;
    ResultStore store2(dir2 / "results.jsonl");
    Optimizer doomed(small_config(2, 8, 6), store2, flaky_factory(1));
    const auto d = doomed.run();
    CHECK(d.stop_reason == "backend failure");
    CHECK(store2.size() == 2);
}

TEST_CASE("human-guided mode waits for and runs exactly the submitted point") {
    TempDir dir;
    ResultStore store(dir / "results.jsonl");
    auto cfg = small_config(1, 4, 8);
    cfg.mode = LoopMode::human_guided;
    Optimizer opt(cfg, store, press_factory());

    CHECK(opt.submit_selection({{"p", 100}, {"Fr", 0.1}, {"D", 1.0}}).status ==
          SelectionResult::Status::not_awaiting);
    auto report = opt.run_cycle();
    CHECK_FALSE(report.dispatched);
    CHECK(opt.state().status == LoopStatus::awaiting_human);
    CHECK(store.size() == 0);
    REQUIRE(opt.profile() != nullptr);

    const auto bad = opt.submit_selection({{"p", -5}, {"Fr", 0.1}, {"D", 1.0}, {"zz", 1}});
    CHECK(bad.status == SelectionResult::Status::invalid);
    std::map<std::string, std::string> errs(bad.field_errors.begin(), bad.field_errors.end());
    CHECK(errs.count("p"));
    CHECK(errs.count("zz"));
    CHECK(opt.submit_selection({{"p", 100}}).status == SelectionResult::Status::invalid);

    const DesignPoint chosen = {{"p", 123.5}, {"Fr", 0.11}, {"D", 1.25}};
    CHECK(opt.submit_selection(chosen).status == SelectionResult::Status::accepted);
    report = opt.run_cycle();
    REQUIRE(report.records.size() == 1);
    CHECK(report.records[0].inputs == chosen);
    CHECK(report.records[0].meta.source == JobSource::human);
    CHECK(store.size() == 1);
    CHECK(opt.history().size() == 1);
}

TEST_CASE("acquisition profile shape") {
    TempDir dir;
    ResultStore store(dir / "results.jsonl");
    Optimizer opt(small_config(1, 6, 9), store, press_factory());
    for (int i = 0; i < 3; ++i) opt.run_cycle();
    const auto prof = opt.profile();
    REQUIRE(prof != nullptr);
    CHECK(prof->data_source == "part");
    REQUIRE(prof->sweeps.size() == 3);
    for (const auto& sw : prof->sweeps) {
        CHECK(sw.values.size() == 51);
        CHECK(sw.ei_sum.size() == 51);
    }
    CHECK(prof->proposals.size() == 5);
    for (std::size_t i = 1; i < prof->proposals.size(); ++i)
        CHECK(prof->proposals[i].ei_sum <= prof->proposals[i - 1].ei_sum);
    CHECK(!prof->last_selected.empty());
    const json j = to_json(*prof);
    CHECK(j.at("sweeps").size() == 3);
}

TEST_CASE("interrupt stops running jobs and flags the partial rows") {
    TempDir dir;
    ResultStore store(dir / "results.jsonl");
    auto model = PressModel::three_input();
    model.step_delay_s = 0.01;
    std::atomic<bool> interrupt{false};
    Optimizer opt(small_config(2, 10, 1), store, press_factory(model), &interrupt);
    std::thread trigger([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(300));
        interrupt = true;
    });
    const auto s = opt.run();
    trigger.join();
    CHECK(s.stop_reason == "interrupted");
    const auto all = store.query(DataFilter::all());
    REQUIRE(!all.empty());
    CHECK(all.size() % 2 == 0);
    CHECK(all.back().meta.terminated_early);
    CHECK(all.back().meta.progress < 1.0);
}

TEST_CASE("configuration validation") {
    auto cfg = small_config(0, 10);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(1, 10);
    cfg.parameters.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(1, 10);
    cfg.targets.attention.resize(3);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_NOTHROW(small_config(1, 10).validate());
}

TEST_CASE("initial predictor recovers a linear design rule") {
    // p = 100 + 2 * L4 exactly, other targets fill the remainder evenly.
    std::vector<SimulationRecord> recs;
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    for (int i = 0; i < 60; ++i) {
        const double l4 = u(rng);
        recs.push_back(test::make_record("A", {{"p", 100 + 2 * l4}, {"Rp", 220}}, test::safe_targets(l4)));
    }
    const std::vector<ParameterRange> ranges = {ParameterRange::continuous("p", 100, 300),
                                                ParameterRange::discrete("Rp", {160, 220, 280, 340})};
    InitialPredictorOptions opts;
    opts.seed = 4;
    const auto ip = InitialPredictor::train(std::span(recs).first(40), ranges, opts);
    for (std::size_t i = 40; i < recs.size(); ++i) {
        TargetSpec t = TargetSpec::feasibility_default();
        t.f_star = feasibility_vector(recs[i].targets);
        const auto x = ip.predict({}, t);
        const double truth = recs[i].inputs.at("p");
        CHECK(std::abs(x.at("p") - truth) <= 0.05 * truth);
        CHECK(x.at("Rp") == 220);
        CHECK(ranges[0].contains(x.at("p")));
    }
    TargetSpec wild = TargetSpec::feasibility_default();
    wild.f_star(3) = 10'000;
    CHECK(ranges[0].contains(ip.predict({}, wild).at("p")));
    CHECK(ip.predict({}, wild) == ip.predict({}, wild));

    CHECK_THROWS_WITH_AS(InitialPredictor::train(std::span(recs).first(5), ranges, opts),
                         doctest::Contains("insufficient data"), DataError);
}

TEST_CASE("snapping to allowed values") {
    const std::vector<double> rp = {160, 220, 280, 340};
    CHECK(snap_to_values(235, rp) == 220);
    CHECK(snap_to_values(250, rp) == 220);
    CHECK(snap_to_values(251, rp) == 280);
    CHECK(snap_to_values(-1e9, rp) == 160);
    CHECK(snap_to_values(1e9, rp) == 340);
}

TEST_CASE("initial predictor output runs on the virtual press") {
    TempDir dir;
    ResultStore store(dir / "results.jsonl");
    std::mt19937_64 rng(13);
    const auto model = PressModel::three_input();
    for (int i = 0; i < 25; ++i) {
        DesignPoint x;
        for (const auto& name : model.variable) {
            const auto& prm = model.parameter(name);
            x.set(name, std::uniform_real_distribution<double>(prm.lo, prm.hi)(rng));
        }
        auto rec = test::make_record("other", x, {});
        rec.targets = evaluate_final(model, x);
        store.append(rec);
    }
    auto cfg = small_config(1, 1, 2);
    cfg.use_initial_predictor = true;
    Optimizer opt(cfg, store, press_factory());
    const auto report = opt.run_cycle();
    CHECK(report.data_source == "initial_predictor");
    REQUIRE(report.records.size() == 1);
    CHECK(report.records[0].meta.source == JobSource::initial_predictor);
    CHECK_FALSE(report.records[0].meta.failed);
}
