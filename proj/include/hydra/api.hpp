#pragma once

#include "hydra/alarms.hpp"
#include "hydra/analytics.hpp"
#include "hydra/store.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>

namespace hydra {

struct ApiConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path db_path;
    std::filesystem::path image_root;
    std::filesystem::path heatmap_dir;
    /// Relative model artifact paths resolve against this directory.
    std::filesystem::path model_root;
    UtcMillis default_window_ms = kDefaultLogWindowMs;
    /// Longest time a GET /alarms/stream request is held open.
    std::chrono::milliseconds alarm_wait{20000};
    /// Suggested client polling interval, returned by GET /config.
    int poll_interval_ms = 2000;
    std::function<UtcMillis()> clock = now_ms;
};

inline constexpr std::string_view kUserHeader = "X-Hydra-User";

/// Reads HYDRA_DB_PATH, HYDRA_IMAGE_ROOT and HYDRA_LISTEN (host:port) over the
/// given defaults. Heatmaps default to <image_root>/heatmaps.
ApiConfig api_config_from_env(ApiConfig defaults = {});

struct ApiRequest {
    std::string method;
    std::string path;
    std::map<std::string, std::string> params;
    /// Header names are matched case-insensitively.
    std::map<std::string, std::string> headers;
    std::string body;

    std::optional<std::string> header(std::string_view name) const;
};

struct ApiResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

// JSON-over-HTTP adapter over the store, analytics and the alarm bus.
// handle() is transport independent; listen() serves it over HTTP.
class ApiService {
public:
    ApiService(Store& store, AlarmBus& alarms, ApiConfig config);
    ~ApiService();

    ApiService(const ApiService&) = delete;
    ApiService& operator=(const ApiService&) = delete;

    ApiResponse handle(const ApiRequest& request);

    /// Blocks serving requests until stop(). Returns false if the address
    /// cannot be bound.
    bool listen();
    /// Binds an ephemeral port on config.host; returns it. Serve with listen_after_bind().
    int bind_any_port();
    bool listen_after_bind();
    void stop();

    const ApiConfig& config() const noexcept { return config_; }

private:
    struct Server;

    Store& store_;
    AlarmBus& alarms_;
    ApiConfig config_;
    std::unique_ptr<Server> server_;
};

} // namespace hydra
