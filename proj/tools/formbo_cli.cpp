// formbo: run, serve and export optimisation runs.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "formbo/initial_predictor.hpp"
#include "formbo/plot_export.hpp"
#include "formbo/service.hpp"

namespace fs = std::filesystem;
using namespace formbo;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_backend = 3;
constexpr int exit_interrupted = 130;

std::atomic<bool> g_interrupt{false};

extern "C" void on_sigint(int) { g_interrupt = true; }

std::string status_line(const CycleReport& report, const LoopState& state) {
    std::string line = "cycle " + std::to_string(report.cycle) + " iter " + std::to_string(state.iteration) +
                       " source " + report.data_source;
    if (report.dispatched) line += " jobs " + std::to_string(report.records.size());
    if (std::isfinite(report.ei_sum) && report.data_source != "random") line += " ei_sum " + format_number(report.ei_sum);
    if (state.best) line += " best " + format_number(state.best->objective);
    line += " energy_j " + format_number(state.consumed_energy_j);
    line += " status " + std::string(to_string(state.status));
    return line;
}

struct RunArgs {
    std::string config;
    std::string mode;
    std::optional<std::uint64_t> seed;
    std::string serve;
    std::string run_id;
    bool quiet = false;
};

int cmd_run(const RunArgs& args) {
    std::shared_ptr<RunSession> session;
    try {
        RunConfig cfg = RunConfig::load(args.config);
        if (!args.mode.empty()) cfg.loop.mode = loop_mode_from_string(args.mode);
        if (args.seed) cfg.loop.seed = *args.seed;
        cfg.loop.validate();
        if (cfg.loop.mode == LoopMode::human_guided && args.serve.empty())
            throw ConfigError("human_guided mode needs --serve ADDR to accept selections");
        const std::string id = args.run_id.empty() ? "run-" + utc_timestamp() + "-" + cfg.digest() : args.run_id;
        session = std::make_shared<RunSession>(std::move(cfg), id, &g_interrupt);
    } catch (const Error& e) {
        std::cerr << "formbo: config error: " << e.what() << '\n';
        return exit_config;
    }

    RunManager manager;
    std::unique_ptr<HttpService> http;
    std::thread server_thread;
    if (!args.serve.empty()) {
        try {
            const auto [host, port] = parse_listen_address(args.serve);
            manager.adopt(session);
            http = std::make_unique<HttpService>(manager);
            const int bound = http->bind(host, port);
            std::cout << "serving run " << session->id() << " on " << host << ':' << bound << std::endl;
            server_thread = std::thread([&] { http->listen(); });
        } catch (const Error& e) {
            std::cerr << "formbo: config error: " << e.what() << '\n';
            return exit_config;
        }
    }
    auto shutdown = [&] {
        if (http) http->stop();
        if (server_thread.joinable()) server_thread.join();
    };

    if (!args.quiet) std::cout << "run " << session->id() << " dir " << session->run_dir().string() << std::endl;
    int code = exit_ok;
    try {
        const LoopState final_state = session->run([&](const CycleReport& report, const LoopState& state) {
            if (args.quiet) return;
            std::cout << status_line(report, state) << std::endl;
            for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
        });
        if (!args.quiet) std::cout << "stopped: " << final_state.stop_reason << std::endl;
        if (final_state.stop_reason == "interrupted" || g_interrupt) code = exit_interrupted;
        else if (final_state.stop_reason == "backend failure") code = exit_backend;
    } catch (const ConfigError& e) {
        std::cerr << "formbo: config error: " << e.what() << '\n';
        code = exit_config;
    } catch (const BackendError& e) {
        std::cerr << "formbo: backend failure: " << e.what() << '\n';
        code = exit_backend;
    } catch (const std::exception& e) {
        std::cerr << "formbo: " << e.what() << '\n';
        code = exit_backend;
    }
    shutdown();
    return code;
}

int cmd_export(const std::string& run, const std::string& kind, const std::string& out, const std::string& runs_dir) {
    try {
        const PlotKind k = plot_kind_from_string(kind);
        fs::path dir = run;
        if (!fs::is_directory(dir)) dir = fs::path(runs_dir) / run;
        const RunArtifacts artifacts = RunArtifacts::load(dir);
        const std::string csv = export_plot_csv(artifacts, k);
        if (out == "-") {
            std::cout << csv;
        } else {
            std::ofstream f(out, std::ios::binary | std::ios::trunc);
            f << csv;
            if (!f) throw DataError("cannot write " + out);
        }
        return exit_ok;
    } catch (const ConfigError& e) {
        std::cerr << "formbo: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "formbo: " << e.what() << '\n';
        return 1;
    }
}

int cmd_serve(const std::string& listen, const std::string& base_dir) {
    try {
        const auto [host, port] = parse_listen_address(listen);
        RunManager manager(base_dir);
        HttpService http(manager);
        const int bound = http.bind(host, port);
        std::cout << "listening on " << host << ':' << bound << std::endl;
        std::thread server([&] { http.listen(); });
        while (!g_interrupt) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        http.stop();
        server.join();
        manager.stop_all();
        return exit_interrupted;
    } catch (const Error& e) {
        std::cerr << "formbo: " << e.what() << '\n';
        return exit_config;
    }
}

int cmd_predict_initial(const std::string& config_path) {
    try {
        const RunConfig cfg = RunConfig::load(config_path);
        ResultStore store(cfg.results_path, cfg.load_registry());
        const auto records = store.query(DataFilter::all());
        std::vector<ParameterRange> observed;
        if (!records.empty()) observed = observed_ranges(records, cfg.loop.parameters);
        const auto ranges = expand_ranges(observed, cfg.loop.parameters, cfg.loop.candidates.expansion);
        InitialPredictorOptions opts;
        opts.seed = cfg.loop.seed;
        const auto predictor = InitialPredictor::train(records, ranges, opts);
        const DesignPoint point = predictor.predict({}, cfg.loop.targets);
        json out = json::object();
        for (const auto& name : point.names()) out[name] = point.at(name);
        std::cout << out.dump(2) << '\n';
        return exit_ok;
    } catch (const ConfigError& e) {
        std::cerr << "formbo: config error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "formbo: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian optimisation of forming-process parameters"};
    app.require_subcommand(1);

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "run the optimisation loop");
    run->add_option("--config", run_args.config, "run configuration (JSON)")->required();
    run->add_option("--mode", run_args.mode, "automated or human_guided")
        ->check(CLI::IsMember({"automated", "human_guided"}));
    run->add_option("--seed", run_args.seed, "override loop.seed");
    run->add_option("--serve", run_args.serve, "also serve the HTTP API on host:port");
    run->add_option("--run-id", run_args.run_id, "run directory name under runs_dir");
    run->add_flag("--quiet", run_args.quiet, "no per-cycle status lines");

    std::string export_run, export_kind, export_out = "-", export_runs_dir = "runs";
    auto* exp = app.add_subcommand("export", "write plot data as CSV");
    exp->add_option("--run", export_run, "run id or run directory")->required();
    exp->add_option("--kind", export_kind,
                    "targets_vs_iterations, ei_sum_vs_iterations, inputs_vs_target or energy_vs_iterations")
        ->required();
    exp->add_option("--out", export_out, "output path, - for stdout");
    exp->add_option("--runs-dir", export_runs_dir, "where run directories live");

    std::string listen = "127.0.0.1:8080", base_dir = ".";
    auto* serve = app.add_subcommand("serve", "HTTP service; runs are created with POST /runs");
    serve->add_option("--listen", listen, "host:port");
    serve->add_option("--base-dir", base_dir, "directory relative config paths resolve against");

    std::string predict_config;
    auto* predict = app.add_subcommand("predict-initial", "initial design point from the feasibility regressors");
    predict->add_option("--config", predict_config, "run configuration (JSON)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_config;
    }

    std::signal(SIGINT, on_sigint);
    std::signal(SIGTERM, on_sigint);

    if (*run) return cmd_run(run_args);
    if (*exp) return cmd_export(export_run, export_kind, export_out, export_runs_dir);
    if (*serve) return cmd_serve(listen, base_dir);
    return cmd_predict_initial(predict_config);
}
