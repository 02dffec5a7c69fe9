#pragma once

#include <atomic>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "formbo/optimizer_loop.hpp"
#include "formbo/run_config.hpp"

namespace httplib {
class Server;
}

namespace formbo {

/// One run: its result store, loop owner and run directory.
class RunSession {
public:
    RunSession(RunConfig config, std::string run_id, const std::atomic<bool>* interrupt = nullptr);
    ~RunSession();

    /// Blocking. Artifacts under runs_dir/run_id are rewritten after every
    /// cycle. An exception thrown by the loop is stored and rethrown.
    LoopState run(const std::function<void(const CycleReport&, const LoopState&)>& on_cycle = {});

    /// State snapshot plus run metadata, as served by GET /runs/{id}/state.
    json state_json() const;
    json history_json() const;

    Optimizer& optimizer() { return *optimizer_; }
    const Optimizer& optimizer() const { return *optimizer_; }
    const RunConfig& config() const { return config_; }
    const std::string& id() const { return run_id_; }
    std::filesystem::path run_dir() const { return config_.runs_dir / run_id_; }
    bool finished() const { return finished_.load(); }
    std::exception_ptr error() const;

private:
    void write_artifacts() const;

    RunConfig config_;
    std::string run_id_;
    std::string created_at_;
    std::unique_ptr<ResultStore> store_;
    std::unique_ptr<Optimizer> optimizer_;
    std::atomic<bool> finished_{false};
    mutable std::mutex error_mutex_;
    std::exception_ptr error_;
    std::string error_text_;
};

/// Runs owned by a service instance, each on its own thread.
class RunManager {
public:
    explicit RunManager(std::filesystem::path base_dir = ".");
    ~RunManager();

    /// Parses and validates `config` (ConfigError on failure) and starts the loop.
    std::string start(const json& config,
                      std::function<void(const CycleReport&, const LoopState&)> on_cycle = {});
    /// Serves an already constructed session; the caller drives it.
    void adopt(std::shared_ptr<RunSession> session);

    std::shared_ptr<RunSession> find(const std::string& run_id) const;
    std::vector<std::string> ids() const;
    void stop_all();

private:
    std::filesystem::path base_dir_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<RunSession>> runs_;
    std::vector<std::thread> threads_;
    std::uint64_t counter_ = 0;
};

/// HTTP/JSON front end over a RunManager.
class HttpService {
public:
    explicit HttpService(RunManager& runs);
    ~HttpService();

    /// Binds `host:port`; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void listen();
    void stop();

private:
    RunManager& runs_;
    std::unique_ptr<httplib::Server> server_;
};

/// "host:port" -> (host, port). Throws ConfigError.
std::pair<std::string, int> parse_listen_address(const std::string& text);

/// UTC timestamp, ISO 8601.
std::string utc_timestamp();

}  // namespace formbo
