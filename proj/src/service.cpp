#include "formbo/service.hpp"

#include <chrono>
#include <ctime>

#include <fstream>

#include <httplib.h>

#include "formbo/plot_export.hpp"

namespace formbo {

namespace fs = std::filesystem;

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::pair<std::string, int> parse_listen_address(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) throw ConfigError("listen address '" + text + "': expected host:port");
    const std::string host = text.substr(0, colon);
    int port = -1;
    try {
        std::size_t used = 0;
        port = std::stoi(text.substr(colon + 1), &used);
        if (used != text.size() - colon - 1) port = -1;
    } catch (const std::exception&) {
        port = -1;
    }
    if (host.empty() || port < 0 || port > 65535) throw ConfigError("listen address '" + text + "': expected host:port");
    return {host, port};
}

RunSession::RunSession(RunConfig config, std::string run_id, const std::atomic<bool>* interrupt)
    : config_(std::move(config)), run_id_(std::move(run_id)), created_at_(utc_timestamp()) {
    store_ = std::make_unique<ResultStore>(config_.results_path, config_.load_registry());
    optimizer_ = std::make_unique<Optimizer>(config_.loop, *store_, config_.backend_factory(), interrupt);
    fs::create_directories(run_dir());
    std::ofstream(run_dir() / "config.json") << config_.source.dump(2) << '\n';
    write_artifacts();
}

RunSession::~RunSession() = default;

void RunSession::write_artifacts() const {
    json extra = {{"created_at", created_at_}, {"config_digest", config_.digest()}};
    std::lock_guard lock(error_mutex_);
    if (!error_text_.empty()) extra["error"] = error_text_;
    write_run_artifacts(run_dir(), run_id_, config_.loop, optimizer_->state(), optimizer_->history(), extra);
}

LoopState RunSession::run(const std::function<void(const CycleReport&, const LoopState&)>& on_cycle) {
    LoopState final_state;
    try {
        final_state = optimizer_->run([&](const CycleReport& report, const LoopState& state) {
            write_artifacts();
            if (on_cycle) on_cycle(report, state);
        });
    } catch (const std::exception& e) {
        {
            std::lock_guard lock(error_mutex_);
            error_ = std::current_exception();
            error_text_ = e.what();
        }
        optimizer_->request_stop();
        write_artifacts();
        finished_ = true;
        std::rethrow_exception(error());
    }
    write_artifacts();
    finished_ = true;
    return final_state;
}

std::exception_ptr RunSession::error() const {
    std::lock_guard lock(error_mutex_);
    return error_;
}

json RunSession::state_json() const {
    json j = to_json(optimizer_->state());
    j["run_id"] = run_id_;
    j["part_id"] = config_.loop.part_id;
    j["mode"] = to_string(config_.loop.mode);
    j["created_at"] = created_at_;
    j["config_digest"] = config_.digest();
    j["max_iterations"] = config_.loop.max_iterations;
    j["p"] = config_.loop.p;
    j["input_names"] = config_.loop.input_names();
    j["target_names"] = config_.loop.targets.names;
    std::lock_guard lock(error_mutex_);
    if (!error_text_.empty()) j["error"] = error_text_;
    return j;
}

json RunSession::history_json() const {
    json arr = json::array();
    for (const auto& r : optimizer_->history()) arr.push_back(to_json(r));
    return arr;
}

RunManager::RunManager(fs::path base_dir) : base_dir_(std::move(base_dir)) {}

RunManager::~RunManager() {
    stop_all();
    for (auto& t : threads_)
        if (t.joinable()) t.join();
}

std::string RunManager::start(const json& config, std::function<void(const CycleReport&, const LoopState&)> on_cycle) {
    RunConfig rc = RunConfig::from_json(config, base_dir_);
    std::string id;
    {
        std::lock_guard lock(mutex_);
        id = "run-" + std::to_string(++counter_) + "-" + rc.digest();
    }
    auto session = std::make_shared<RunSession>(std::move(rc), id);
    std::lock_guard lock(mutex_);
    runs_[id] = session;
    threads_.emplace_back([session, on_cycle = std::move(on_cycle)] {
        try {
            session->run(on_cycle);
        } catch (const std::exception&) {
            // Kept on the session and reported through its state.
        }
    });
    return id;
}

void RunManager::adopt(std::shared_ptr<RunSession> session) {
    std::lock_guard lock(mutex_);
    runs_[session->id()] = std::move(session);
}

std::shared_ptr<RunSession> RunManager::find(const std::string& run_id) const {
    std::lock_guard lock(mutex_);
    auto it = runs_.find(run_id);
    return it == runs_.end() ? nullptr : it->second;
}

std::vector<std::string> RunManager::ids() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, s] : runs_) out.push_back(id);
    return out;
}

void RunManager::stop_all() {
    std::lock_guard lock(mutex_);
    for (auto& [id, s] : runs_) s->optimizer().request_stop();
}

namespace {

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

}  // namespace

HttpService::HttpService(RunManager& runs) : runs_(runs), server_(std::make_unique<httplib::Server>()) {
    auto& srv = *server_;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Headers", "Content-Type"},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    auto with_run = [this](auto handler) {
        return [this, handler](const httplib::Request& req, httplib::Response& res) {
            auto session = runs_.find(req.matches[1]);
            if (!session) return reply(res, 404, {{"error", "unknown run " + std::string(req.matches[1])}});
            handler(*session, req, res);
        };
    };

    srv.Get("/runs", [this](const httplib::Request&, httplib::Response& res) {
        reply(res, 200, {{"runs", runs_.ids()}});
    });

    srv.Post("/runs", [this](const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception& e) {
            return reply(res, 400, {{"error", std::string("invalid JSON: ") + e.what()}});
        }
        const json& config = body.is_object() && body.contains("config") ? body.at("config") : body;
        try {
            reply(res, 201, {{"run_id", runs_.start(config)}});
        } catch (const Error& e) {
            reply(res, 400, {{"error", e.what()}});
        }
    });

    srv.Get(R"(/runs/([^/]+)/state)", with_run([](RunSession& s, const httplib::Request&, httplib::Response& res) {
        reply(res, 200, s.state_json());
    }));

    srv.Get(R"(/runs/([^/]+)/acquisition)",
            with_run([](RunSession& s, const httplib::Request&, httplib::Response& res) {
                auto profile = s.optimizer().profile();
                reply(res, 200, profile ? to_json(*profile) : to_json(AcquisitionProfile{}));
            }));

    srv.Get(R"(/runs/([^/]+)/history)", with_run([](RunSession& s, const httplib::Request&, httplib::Response& res) {
        reply(res, 200, s.history_json());
    }));

    srv.Post(R"(/runs/([^/]+)/stop)", with_run([](RunSession& s, const httplib::Request&, httplib::Response& res) {
        s.optimizer().request_stop();
        reply(res, 202, {{"run_id", s.id()}, {"stopping", true}});
    }));

    srv.Post(R"(/runs/([^/]+)/select)", with_run([](RunSession& s, const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception& e) {
            return reply(res, 400, {{"error", std::string("invalid JSON: ") + e.what()}});
        }
        const json& raw = body.is_object() && body.contains("design_point") ? body.at("design_point") : body;
        std::vector<std::pair<std::string, std::string>> errors;
        const DesignPoint point = design_point_from_json(raw, errors);
        SelectionResult result;
        if (errors.empty()) {
            result = s.optimizer().submit_selection(point);
        } else if (s.optimizer().state().status != LoopStatus::awaiting_human) {
            result.status = SelectionResult::Status::not_awaiting;
        } else {
            result.status = SelectionResult::Status::invalid;
            result.field_errors = std::move(errors);
        }
        switch (result.status) {
            case SelectionResult::Status::accepted: {
                json queued = json::object();
                for (const auto& [k, v] : point) queued[k] = v;
                return reply(res, 202, {{"queued", queued}});
            }
            case SelectionResult::Status::not_awaiting:
                return reply(res, 409, {{"error", "run is not awaiting a human selection"},
                                        {"status", to_string(s.optimizer().state().status)}});
            case SelectionResult::Status::invalid: {
                json fields = json::object();
                for (const auto& [k, msg] : result.field_errors) fields[k] = msg;
                return reply(res, 422, {{"error", "invalid design point"}, {"fields", fields}});
            }
        }
    }));
}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
    return bound;
}

void HttpService::listen() { server_->listen_after_bind(); }

void HttpService::stop() {
    if (server_) server_->stop();
}

}  // namespace formbo
