#include "yomo/service.hpp"

#include <charconv>
#include <limits>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

namespace yomo {

using nlohmann::json;

json to_json(const PowerReading& r)
{
    return {
        {"seq", r.seq},
        {"timestamp_ms", r.timestamp_ms},
        {"v_rms", r.v_rms},
        {"i_rms", r.i_rms},
        {"phi", r.phi},
        {"p", r.triplet.active_p},
        {"q", r.triplet.reactive_q},
        {"s", r.triplet.apparent_s},
        {"energy_j", r.energy_j},
        {"relay_closed", r.relay_closed},
    };
}

json to_json(const CommandTicket& t)
{
    json j = {
        {"id", t.command_id},
        {"meter", t.storage_id},
        {"op", opcode_name(t.command.op)},
        {"state", ticket_state_name(t.state)},
        {"attempts", t.attempts},
        {"created_ms", t.created_ms},
    };
    if (t.command.op == Opcode::SetFs) {
        j["arg"] = t.command.fs_hz;
    }
    if (!t.detail.empty()) {
        j["detail"] = t.detail;
    }
    return j;
}

json to_json(const MeterSummary& m, std::int64_t now_ms, std::int64_t liveness_ms)
{
    json j = {
        {"id", m.storage_id},
        {"meter_id", m.meter_id.hex()},
        {"last_seen_ms", m.last_seen_ms},
        {"live", m.last_seen_ms > 0 && now_ms - m.last_seen_ms <= liveness_ms},
        {"gap_count", m.gap_count},
        {"missing", m.missing},
        {"readings", m.reading_count},
    };
    j["last_seq"] = m.last_seq ? json(*m.last_seq) : json(nullptr);
    j["last_reading"] = m.last_reading ? to_json(*m.last_reading) : json(nullptr);
    return j;
}

json to_json(const HealthCounters& h)
{
    json dropped = json::object();
    std::uint64_t total_dropped = 0;
    for (std::size_t k = 0; k < h.dropped.size(); ++k) {
        dropped[std::string(wire::error_class_name(static_cast<wire::DecodeErrorClass>(k)))] = h.dropped[k];
        total_dropped += h.dropped[k];
    }
    json j = {
        {"status", "ok"},
        {"received", h.received},
        {"ingested", h.ingested},
        {"stored", h.stored},
        {"duplicates", h.duplicates},
        {"gaps", h.gaps},
        {"missing", h.missing},
        {"time_sync", h.time_sync},
        {"acks", h.acks},
        {"ignored", h.ignored},
        {"queue_overflow", h.queue_overflow},
        {"meters", h.meters},
        {"dropped", dropped},
        {"dropped_total", total_dropped},
    };
    // Flat copies so clients can read e.g. health.crc_errors directly.
    for (auto& [k, v] : dropped.items()) {
        j[k] = v;
    }
    return j;
}

namespace {

void reply(httplib::Response& res, int status, const json& body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message)
{
    reply(res, status, json{{"error", message}});
}

template <typename T>
std::optional<T> param(const httplib::Request& req, const char* name)
{
    if (!req.has_param(name)) {
        return std::nullopt;
    }
    const auto text = req.get_param_value(name);
    T value{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw std::invalid_argument(fmt::format("query parameter '{}' is not a number: '{}'", name, text));
    }
    return value;
}

int http_status(CoordinatorError::Code code)
{
    switch (code) {
    case CoordinatorError::Code::NotFound:
        return 404;
    case CoordinatorError::Code::Stale:
        return 409;
    case CoordinatorError::Code::InvalidCommand:
        return 422;
    }
    return 500;
}

} // namespace

void mount_api(httplib::Server& server, Coordinator& coord, const std::string& cors_origin)
{
    server.set_default_headers({
        {"Access-Control-Allow-Origin", cors_origin},
        {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
        {"Access-Control-Allow-Headers", "Content-Type"},
    });
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/api/health", [&coord](const httplib::Request&, httplib::Response& res) {
        reply(res, 200, to_json(coord.health()));
    });

    server.Get("/api/meters", [&coord](const httplib::Request&, httplib::Response& res) {
        const auto now = coord.clock().now_ms();
        json list = json::array();
        for (const auto& m : coord.meters()) {
            list.push_back(to_json(m, now, coord.config().liveness_ms));
        }
        reply(res, 200, list);
    });

    server.Get(R"(/api/meters/([^/]+)/readings)", [&coord](const httplib::Request& req, httplib::Response& res) {
        try {
            const auto from = param<std::int64_t>(req, "from").value_or(0);
            const auto to = param<std::int64_t>(req, "to").value_or(std::numeric_limits<std::int64_t>::max());
            const auto max = param<std::size_t>(req, "max").value_or(1000);
            const auto after = param<std::uint32_t>(req, "after");
            const auto page = coord.query_series(req.matches[1], from, to, max, after);
            json readings = json::array();
            for (const auto& r : page.readings) {
                readings.push_back(to_json(r));
            }
            reply(res, 200, {{"readings", readings}, {"next", page.next ? json(*page.next) : json(nullptr)}});
        } catch (const CoordinatorError& e) {
            reply_error(res, http_status(e.code()), e.what());
        } catch (const std::invalid_argument& e) {
            reply_error(res, 400, e.what());
        }
    });

    server.Post(R"(/api/meters/([^/]+)/command)", [&coord](const httplib::Request& req, httplib::Response& res) {
        const std::string sid = req.matches[1];
        if (!coord.meter(sid)) {
            reply_error(res, 404, fmt::format("unknown meter '{}'", sid));
            return;
        }
        Command cmd;
        try {
            const auto body = json::parse(req.body);
            const auto op = opcode_from_name(body.at("op").get<std::string>());
            if (!op) {
                reply_error(res, 422, fmt::format("unknown op '{}'", body.at("op").get<std::string>()));
                return;
            }
            cmd.op = *op;
            if (cmd.op == Opcode::SetFs) {
                cmd.fs_hz = body.at("arg").get<double>();
            }
        } catch (const json::exception& e) {
            reply_error(res, 422, fmt::format("invalid command body: {}", e.what()));
            return;
        }
        try {
            reply(res, 202, to_json(coord.dispatch_command(sid, cmd)));
        } catch (const CoordinatorError& e) {
            reply_error(res, http_status(e.code()), e.what());
        }
    });

    server.Get(R"(/api/tickets/(\d+))", [&coord](const httplib::Request& req, httplib::Response& res) {
        std::uint32_t id = 0;
        const std::string text = req.matches[1];
        const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), id);
        const auto t = ec == std::errc{} ? coord.ticket(id) : std::nullopt;
        if (!t) {
            reply_error(res, 404, fmt::format("unknown ticket '{}'", text));
            return;
        }
        reply(res, 200, to_json(*t));
    });
}

// ---------------------------------------------------------------------------

CoordinatorService::CoordinatorService(ServiceConfig config, const Clock& clock)
    : config_(std::move(config)), clock_(clock)
{
}

CoordinatorService::~CoordinatorService()
{
    stop();
}

std::uint16_t CoordinatorService::udp_port() const
{
    return socket_ ? socket_->port() : 0;
}

void CoordinatorService::start()
{
    try {
        socket_ = std::make_unique<UdpSocket>(config_.udp_port, config_.bind_host);
    } catch (const SocketError& e) {
        throw StartupError(fmt::format("UDP port {} unavailable: {}", config_.udp_port, e.what()));
    }
    coordinator_ = std::make_unique<Coordinator>(config_.coordinator, clock_, *socket_);

    http_ = std::make_unique<httplib::Server>();
    // httplib defaults to SO_REUSEPORT, which would let a second instance
    // share the port silently.
    http_->set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    mount_api(*http_, *coordinator_, config_.cors_origin);
    if (!config_.static_dir.empty()) {
        http_->set_mount_point("/", config_.static_dir);
    }
    if (config_.http_port == 0) {
        const int port = http_->bind_to_any_port(config_.bind_host);
        if (port <= 0) {
            throw StartupError("cannot bind an ephemeral HTTP port");
        }
        http_port_ = static_cast<std::uint16_t>(port);
    } else {
        if (!http_->bind_to_port(config_.bind_host, config_.http_port)) {
            throw StartupError(fmt::format("HTTP port {} unavailable", config_.http_port));
        }
        http_port_ = config_.http_port;
    }

    shards_.clear();
    for (std::size_t k = 0; k < std::max<std::size_t>(1, config_.workers); ++k) {
        shards_.push_back(std::make_unique<Shard>());
    }
    running_ = true;
    threads_.emplace_back([this] { receive_loop(); });
    for (auto& shard : shards_) {
        threads_.emplace_back([this, s = shard.get()] { worker_loop(*s); });
    }
    threads_.emplace_back([this] { timer_loop(); });
    threads_.emplace_back([this] { http_->listen_after_bind(); });
    http_->wait_until_ready();
    spdlog::info("coordinator listening: udp {} http {}", udp_port(), http_port_);
}

void CoordinatorService::stop()
{
    if (!running_.exchange(false)) {
        return;
    }
    if (http_) {
        http_->stop();
    }
    {
        std::lock_guard lock(queue_mutex_);
        for (auto& shard : shards_) {
            shard->cv.notify_all();
        }
    }
    for (auto& t : threads_) {
        if (t.joinable()) {
            t.join();
        }
    }
    threads_.clear();
}

void CoordinatorService::receive_loop()
{
    using namespace std::chrono_literals;
    while (running_) {
        auto d = socket_->receive(50ms);
        if (!d) {
            continue;
        }
        // Shard on the meter id bytes of the header; short datagrams are
        // garbage anyway and go to the first worker.
        std::size_t key = 0;
        if (d->bytes.size() >= wire::kHeaderSize) {
            for (std::size_t k = 4; k < wire::kHeaderSize; ++k) {
                key = key * 131 + d->bytes[k];
            }
        }
        auto& shard = *shards_[key % shards_.size()];
        {
            std::lock_guard lock(queue_mutex_);
            if (queued_ >= config_.queue_capacity) {
                coordinator_->note_queue_overflow();
                continue;
            }
            shard.queue.push_back(std::move(*d));
            ++queued_;
        }
        shard.cv.notify_one();
    }
}

void CoordinatorService::worker_loop(Shard& shard)
{
    while (true) {
        ReceivedDatagram d;
        {
            std::unique_lock lock(queue_mutex_);
            shard.cv.wait(lock, [&] { return !shard.queue.empty() || !running_; });
            if (shard.queue.empty()) {
                return;
            }
            d = std::move(shard.queue.front());
            shard.queue.pop_front();
            --queued_;
        }
        coordinator_->ingest(d.bytes, d.from);
    }
}

void CoordinatorService::timer_loop()
{
    using namespace std::chrono_literals;
    while (running_) {
        coordinator_->poll();
        std::this_thread::sleep_for(20ms);
    }
}

} // namespace yomo
