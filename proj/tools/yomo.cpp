// yomo: meter-node simulator, coordinator, trace replay and table report.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "yomo/node.hpp"
#include "yomo/report.hpp"
#include "yomo/service.hpp"

#ifndef YOMO_DEFAULT_FIXTURES
#define YOMO_DEFAULT_FIXTURES "fixtures/appliances.json"
#endif

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

std::atomic<bool> g_stop{false};

void on_signal(int)
{
    g_stop = true;
}

void install_signal_handlers()
{
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
}

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int run_node(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& coordinator,
             std::optional<double> duration)
{
    yomo::NodeConfig cfg;
    try {
        cfg = yomo::load_node_config(config_path);
        if (seed) {
            cfg.meter.seed = *seed;
        }
        if (!coordinator.empty()) {
            cfg.coordinator = yomo::Endpoint::parse(coordinator);
        }
        if (duration) {
            cfg.duration_s = *duration;
        }
    } catch (const std::exception& e) {
        spdlog::error("node config: {}", e.what());
        return kExitConfig;
    }

    try {
        yomo::UdpSocket socket(cfg.local_port);
        yomo::WallClock clock;
        yomo::MeterNode node(cfg.meter, cfg.coordinator, socket, clock, cfg.options);
        spdlog::info("node {} ({}) -> {}, f_s {} Hz, local port {}", cfg.meter.meter_id.hex(),
                     cfg.meter.profile.name, cfg.coordinator.str(), cfg.meter.sampling_freq, socket.port());
        install_signal_handlers();
        while (!g_stop) {
            node.step();
            if (cfg.duration_s > 0.0 && node.local_now() >= cfg.duration_s) {
                break;
            }
            double wait_s = 0.05;
            if (const auto due = node.next_due()) {
                wait_s = std::clamp(*due - node.local_now(), 0.0, 0.05);
            }
            if (auto d = socket.receive(std::chrono::milliseconds(static_cast<int>(wait_s * 1000.0)))) {
                node.on_datagram(d->bytes);
            }
        }
        const auto flushed = node.flush();
        spdlog::info("node {} stopped: {} readings transmitted ({} flushed at shutdown), {} evicted",
                     cfg.meter.meter_id.hex(), node.transmitted(), flushed, node.state().evicted);
    } catch (const std::exception& e) {
        spdlog::error("node: {}", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}

int run_report(const std::string& fixtures, double fs, std::uint64_t seed)
{
    std::vector<yomo::ApplianceFixture> fx;
    try {
        fx = yomo::load_fixtures(fixtures);
        yomo::validate_sampling_frequency(fs);
    } catch (const std::exception& e) {
        spdlog::error("report: {}", e.what());
        return kExitConfig;
    }
    try {
        std::cout << yomo::format_tables(yomo::reproduce_tables(fx, fs, seed));
    } catch (const std::exception& e) {
        spdlog::error("report: {}", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}

int run_replay(const std::string& log_path, const std::string& meter_id, const std::string& to, double speed)
{
    std::ifstream log(log_path);
    yomo::MeterId id;
    yomo::Endpoint target;
    try {
        if (!log) {
            throw ConfigError(fmt::format("cannot open log {}", log_path));
        }
        id = yomo::MeterId::from_hex(meter_id);
        target = yomo::Endpoint::parse(to);
        if (speed < 0.0) {
            throw ConfigError("speed must be >= 0");
        }
    } catch (const std::exception& e) {
        spdlog::error("replay: {}", e.what());
        return kExitConfig;
    }
    try {
        yomo::UdpSocket socket(0);
        const auto stats = yomo::replay(log, id, socket, target, speed);
        std::cout << fmt::format("sent {} skipped {}\n", stats.sent, stats.skipped);
    } catch (const std::exception& e) {
        spdlog::error("replay: {}", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}

/// Fills options not given on the command line or via environment from a
/// JSON config file.
void apply_json_config(const std::string& path, CLI::App& sub)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(fmt::format("cannot open config {}", path));
    }
    const auto j = nlohmann::json::parse(in);
    for (const auto& [key, value] : j.items()) {
        CLI::Option* opt = nullptr;
        try {
            opt = sub.get_option("--" + key);
        } catch (const CLI::OptionNotFound&) {
            throw ConfigError(fmt::format("unknown config key '{}'", key));
        }
        if (opt->count() > 0 || (!opt->get_envname().empty() && std::getenv(opt->get_envname().c_str()))) {
            continue;
        }
        opt->clear();
        opt->add_result(value.is_string() ? value.get<std::string>() : value.dump());
        opt->run_callback();
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"YoMo smart-metering simulator"};
    app.fallthrough(); // global options may follow the subcommand
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string log_level = "info";
    app.add_option("--config", config_path, "Config file (JSON)");
    app.add_option("--seed", seed, "RNG seed override");
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    // node
    auto* node = app.add_subcommand("node", "Run a simulated meter node");
    std::string node_coordinator;
    std::optional<double> node_duration;
    node->add_option("--coordinator", node_coordinator, "Override coordinator host:port");
    node->add_option("--duration", node_duration, "Stop after this many seconds");

    // coordinator
    auto* coord = app.add_subcommand("coordinator", "Run the coordinator (UDP ingest + HTTP API)");
    yomo::ServiceConfig svc;
    std::string data_dir = "data";
    coord->add_option("--udp-port", svc.udp_port, "UDP listen port")->envname("YOMO_UDP_PORT")->capture_default_str();
    coord->add_option("--http-port", svc.http_port, "HTTP port")->envname("YOMO_HTTP_PORT")->capture_default_str();
    coord->add_option("--bind", svc.bind_host, "Bind address")->envname("YOMO_BIND")->capture_default_str();
    coord->add_option("--data-dir", data_dir, "Data directory")->envname("YOMO_DATA_DIR")->capture_default_str();
    coord->add_option("--liveness-ms", svc.coordinator.liveness_ms, "Meter liveness window")
        ->envname("YOMO_LIVENESS_MS")
        ->capture_default_str();
    coord->add_option("--retries", svc.coordinator.max_attempts, "Command send attempts")
        ->envname("YOMO_RETRIES")
        ->check(CLI::Range(1, 100))
        ->capture_default_str();
    coord->add_option("--retry-interval-ms", svc.coordinator.retry_interval_ms, "Command retry interval")
        ->envname("YOMO_RETRY_INTERVAL_MS")
        ->capture_default_str();
    coord->add_option("--workers", svc.workers, "Ingest worker threads")->envname("YOMO_WORKERS");
    coord->add_option("--cors-origin", svc.cors_origin, "Access-Control-Allow-Origin value")
        ->envname("YOMO_CORS_ORIGIN");
    coord->add_option("--static-dir", svc.static_dir, "Serve a dashboard bundle from this directory")
        ->envname("YOMO_STATIC_DIR");

    // replay
    auto* rep = app.add_subcommand("replay", "Re-send a readings.log to a coordinator");
    std::string replay_log;
    std::string replay_meter = "00000000000000ff";
    std::string replay_to = "127.0.0.1:7753";
    double replay_speed = 0.0;
    rep->add_option("log", replay_log, "readings.log file")->required();
    rep->add_option("--meter-id", replay_meter, "Meter id to send as (hex)")->capture_default_str();
    rep->add_option("--to", replay_to, "Coordinator host:port")->capture_default_str();
    rep->add_option("--speed", replay_speed, "Time scale; 0 = as fast as possible")->capture_default_str();

    // report
    auto* report = app.add_subcommand("report", "Reproduce the appliance power tables");
    std::string fixtures = YOMO_DEFAULT_FIXTURES;
    double report_fs = 1000.0;
    report->add_option("--fixtures", fixtures, "Appliance fixture file")->capture_default_str();
    report->add_option("--fs", report_fs, "Sampling frequency [Hz]")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));

    if (*node) {
        if (config_path.empty()) {
            spdlog::error("node: --config is required");
            return kExitConfig;
        }
        return run_node(config_path, seed, node_coordinator, node_duration);
    }
    if (*report) {
        return run_report(fixtures, report_fs, seed.value_or(0));
    }
    if (*rep) {
        return run_replay(replay_log, replay_meter, replay_to, replay_speed);
    }

    // coordinator
    try {
        if (!config_path.empty()) {
            apply_json_config(config_path, *coord);
        }
    } catch (const std::exception& e) {
        spdlog::error("coordinator config: {}", e.what());
        return kExitConfig;
    }
    svc.coordinator.data_dir = data_dir;
    yomo::WallClock clock;
    try {
        yomo::CoordinatorService service(svc, clock);
        service.start();
        install_signal_handlers();
        while (!g_stop) {
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
        service.stop();
    } catch (const std::exception& e) {
        spdlog::error("coordinator: {}", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}
