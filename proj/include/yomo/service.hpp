#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "yomo/coordinator.hpp"

namespace httplib {
class Server;
}

namespace yomo {

nlohmann::json to_json(const PowerReading& r);
nlohmann::json to_json(const CommandTicket& t);
nlohmann::json to_json(const MeterSummary& m, std::int64_t now_ms, std::int64_t liveness_ms);
nlohmann::json to_json(const HealthCounters& h);

/// Registers the /api routes on `server`. CORS headers use `cors_origin`.
void mount_api(httplib::Server& server, Coordinator& coordinator, const std::string& cors_origin = "*");

struct ServiceConfig {
    CoordinatorConfig coordinator;
    std::string bind_host = "0.0.0.0";
    std::uint16_t udp_port = 7753;
    std::uint16_t http_port = 8080;
    std::size_t queue_capacity = 65'536;
    std::size_t workers = 2;
    std::string cors_origin = "*";
    std::string static_dir; // optional dashboard bundle
};

class StartupError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Coordinator process: one UDP receive loop feeding bounded per-worker
/// queues, a worker pool running ingest, a retransmit timer and the HTTP API.
class CoordinatorService {
public:
    CoordinatorService(ServiceConfig config, const Clock& clock);
    ~CoordinatorService();
    CoordinatorService(const CoordinatorService&) = delete;
    CoordinatorService& operator=(const CoordinatorService&) = delete;

    /// Binds both ports (throws StartupError naming the port) and starts threads.
    void start();
    void stop();

    [[nodiscard]] std::uint16_t udp_port() const;
    [[nodiscard]] std::uint16_t http_port() const { return http_port_; }
    Coordinator& coordinator() { return *coordinator_; }

private:
    struct Shard;

    void receive_loop();
    void worker_loop(Shard& shard);
    void timer_loop();

    ServiceConfig config_;
    const Clock& clock_;
    std::unique_ptr<UdpSocket> socket_;
    std::unique_ptr<Coordinator> coordinator_;
    std::unique_ptr<httplib::Server> http_;
    std::uint16_t http_port_ = 0;

    // One queue per worker; a meter always maps to the same worker so its
    // datagrams are ingested in arrival order.
    struct Shard {
        std::condition_variable cv;
        std::deque<ReceivedDatagram> queue;
    };
    std::mutex queue_mutex_;
    std::vector<std::unique_ptr<Shard>> shards_;
    std::size_t queued_ = 0;

    std::atomic<bool> running_{false};
    std::vector<std::thread> threads_;
};

} // namespace yomo
