#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "test_support.hpp"
#include "yomo/service.hpp"
#include "yomo/node.hpp"

using namespace yomo;
using namespace std::chrono_literals;
using json = nlohmann::json;

namespace {

ServiceConfig service_config(const std::filesystem::path& dir)
{
    ServiceConfig c;
    c.coordinator.data_dir = dir;
    c.coordinator.liveness_ms = 10'000;
    c.bind_host = "127.0.0.1";
    c.udp_port = 0;
    c.http_port = 0;
    return c;
}

json get_json(httplib::Client& cli, const std::string& path)
{
    const auto res = cli.Get(path);
    REQUIRE(res);
    REQUIRE(res->status == 200);
    return json::parse(res->body);
}

template <typename Pred>
bool wait_for(Pred pred, std::chrono::milliseconds limit = 5s)
{
    const auto end = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < end) {
        if (pred()) {
            return true;
        }
        std::this_thread::sleep_for(5ms);
    }
    return pred();
}

/// Real meter node on a UDP socket, stepped from its own thread.
class NodeThread {
public:
    NodeThread(MeterConfig meter, std::uint16_t coordinator_port, const Clock& clock)
        : node_(std::move(meter), {"127.0.0.1", coordinator_port}, socket_, clock, NodeOptions{1.0, 64, 64}),
          thread_([this] {
              while (running_) {
                  if (auto d = socket_.receive(2ms)) {
                      node_.on_datagram(d->bytes);
                  }
                  node_.step();
              }
          })
    {
    }
    ~NodeThread()
    {
        running_ = false;
        thread_.join();
    }

private:
    UdpSocket socket_{0, "127.0.0.1"};
    MeterNode node_;
    std::atomic<bool> running_{true};
    std::thread thread_;
};

MeterConfig kettle(std::uint64_t id)
{
    MeterConfig m;
    m.meter_id = MeterId::from_u64(id);
    m.profile.name = "kettle";
    m.profile.p_active = 1930;
    m.profile.s_apparent = 1940;
    return m;
}

} // namespace

TEST_CASE("empty store")
{
    testsupport::TempDir dir("svc-empty");
    WallClock clock;
    CoordinatorService svc(service_config(dir.path()), clock);
    svc.start();
    httplib::Client cli("127.0.0.1", svc.http_port());
    CHECK(get_json(cli, "/api/meters") == json::array());
    const auto h = get_json(cli, "/api/health");
    CHECK(h["stored"] == 0);
    CHECK(h["status"] == "ok");
    const auto res = cli.Get("/api/meters/m0001/readings");
    REQUIRE(res);
    CHECK(res->status == 404);
    CHECK(cli.Get("/api/tickets/1")->status == 404);
}

TEST_CASE("health counts ingested and corrupt datagrams")
{
    testsupport::TempDir dir("svc-health");
    WallClock clock;
    CoordinatorService svc(service_config(dir.path()), clock);
    svc.start();
    UdpSocket sock(0, "127.0.0.1");
    const Endpoint to{"127.0.0.1", svc.udp_port()};
    for (std::uint32_t s = 0; s < 10; ++s) {
        sock.send(to, testsupport::measurement(1, s, 1000 + 200 * s));
    }
    for (int k = 0; k < 2; ++k) {
        auto bad = testsupport::measurement(1, 50, 5000);
        bad[30] ^= 0x40;
        sock.send(to, bad);
    }
    httplib::Client cli("127.0.0.1", svc.http_port());
    REQUIRE(wait_for([&] { return svc.coordinator().health().received == 12; }));
    const auto h = get_json(cli, "/api/health");
    CHECK(h["ingested"] == 10);
    CHECK(h["crc_errors"] == 2);
    CHECK(h["dropped"]["crc_errors"] == 2);

    const auto meters = get_json(cli, "/api/meters");
    REQUIRE(meters.size() == 1);
    CHECK(meters[0]["id"] == "m0001");
    CHECK(meters[0]["live"] == true);
    CHECK(meters[0]["last_seq"] == 9);

    auto page = get_json(cli, "/api/meters/m0001/readings?max=4");
    CHECK(page["readings"].size() == 4);
    CHECK(page["next"] == 3);
    page = get_json(cli, "/api/meters/m0001/readings?max=100&after=3&from=1000&to=2600");
    REQUIRE(page["readings"].size() == 4);
    CHECK(page["readings"][0]["seq"] == 4);
    CHECK(page["readings"][0]["p"] == 1000.0);
    CHECK(page["next"].is_null());
    CHECK(cli.Get("/api/meters/m0001/readings?max=abc")->status == 400);
    CHECK(cli.Get("/api/meters/m0001/readings?from=9&to=1")->status == 400);
}

TEST_CASE("commands over HTTP against a live node")
{
    testsupport::TempDir dir("svc-cmd");
    WallClock clock;
    CoordinatorService svc(service_config(dir.path()), clock);
    svc.start();
    NodeThread node(kettle(0x42), svc.udp_port(), clock);
    httplib::Client cli("127.0.0.1", svc.http_port());
    REQUIRE(wait_for([&] { return svc.coordinator().health().stored >= 2; }));
    const auto sid = *svc.coordinator().storage_id_of(MeterId::from_u64(0x42));

    auto post = [&](const std::string& body) {
        auto res = cli.Post(("/api/meters/" + sid + "/command").c_str(), body, "application/json");
        REQUIRE(res);
        return *res;
    };
    CHECK(post(R"({"op":"SET_FS","arg":99})").status == 422);
    CHECK(post(R"({"op":"SET_FS","arg":99.9})").status == 422);
    CHECK(post(R"({"op":"EXPLODE"})").status == 422);
    CHECK(post("not json").status == 422);
    CHECK(cli.Post("/api/meters/m0999/command", R"({"op":"SLEEP"})", "application/json")->status == 404);

    const auto res = post(R"({"op":"SET_FS","arg":200})");
    REQUIRE(res.status == 202);
    const auto ticket = json::parse(res.body);
    CHECK(ticket["state"] == "pending");
    const auto path = "/api/tickets/" + std::to_string(ticket["id"].get<int>());
    REQUIRE(wait_for([&] { return get_json(cli, path)["state"] == "acked"; }));

    // At 200 Hz a window is 50 mains cycles: readings 1 s apart.
    const auto acked_seq = get_json(cli, "/api/meters")[0]["last_seq"].get<std::uint32_t>();
    REQUIRE(wait_for([&] { return get_json(cli, "/api/meters")[0]["last_seq"] >= acked_seq + 3; }, 6s));
    const auto page =
        get_json(cli, "/api/meters/" + sid + "/readings?after=" + std::to_string(acked_seq + 1) + "&max=2");
    REQUIRE(page["readings"].size() == 2);
    const auto dt = page["readings"][1]["timestamp_ms"].get<std::int64_t>() -
                    page["readings"][0]["timestamp_ms"].get<std::int64_t>();
    CHECK(std::abs(dt - 1000) <= 1);
}

TEST_CASE("stale meter gives 409")
{
    testsupport::TempDir dir("svc-stale");
    SimClock clock(1'000'000);
    CoordinatorService svc(service_config(dir.path()), clock);
    svc.start();
    UdpSocket sock(0, "127.0.0.1");
    sock.send({"127.0.0.1", svc.udp_port()}, testsupport::measurement(1, 0, 1000));
    REQUIRE(wait_for([&] { return svc.coordinator().health().stored == 1; }));
    clock.advance(10'001);
    httplib::Client cli("127.0.0.1", svc.http_port());
    const auto res = cli.Post("/api/meters/m0001/command", R"({"op":"SWITCH_OFF"})", "application/json");
    REQUIRE(res);
    CHECK(res->status == 409);
}

TEST_CASE("CORS")
{
    testsupport::TempDir dir("svc-cors");
    WallClock clock;
    auto cfg = service_config(dir.path());
    cfg.cors_origin = "http://localhost:5173";
    CoordinatorService svc(cfg, clock);
    svc.start();
    httplib::Client cli("127.0.0.1", svc.http_port());
    const auto res = cli.Get("/api/health");
    REQUIRE(res);
    CHECK(res->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
    const auto pre = cli.Options("/api/meters/m0001/command");
    REQUIRE(pre);
    CHECK(pre->status == 204);
    CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
}

TEST_CASE("burst of 1000 datagrams from 10 meters")
{
    testsupport::TempDir dir("svc-burst");
    WallClock clock;
    CoordinatorService svc(service_config(dir.path()), clock);
    svc.start();
    UdpSocket sock(0, "127.0.0.1");
    const Endpoint to{"127.0.0.1", svc.udp_port()};
    for (std::uint32_t s = 0; s < 100; ++s) {
        for (std::uint64_t m = 1; m <= 10; ++m) {
            sock.send(to, testsupport::measurement(m, s, 1000 + s));
        }
    }
    REQUIRE(wait_for([&] { return svc.coordinator().health().received == 1000; }, 10s));
    const auto h = svc.coordinator().health();
    CHECK(h.queue_overflow == 0);
    CHECK(h.stored == 1000);
    CHECK(h.meters == 10);
    for (const auto& m : svc.coordinator().meters()) {
        CHECK(m.reading_count == 100);
        CHECK(m.gap_count == 0);
    }
}

TEST_CASE("port collisions are startup errors naming the port")
{
    testsupport::TempDir dir("svc-ports");
    WallClock clock;
    CoordinatorService first(service_config(dir.path()), clock);
    first.start();

    auto cfg = service_config(dir.path());
    cfg.udp_port = first.udp_port();
    CoordinatorService udp_clash(cfg, clock);
    try {
        udp_clash.start();
        FAIL("expected StartupError");
    } catch (const StartupError& e) {
        CHECK(std::string(e.what()).find(std::to_string(first.udp_port())) != std::string::npos);
    }

    cfg = service_config(dir.path());
    cfg.http_port = first.http_port();
    CoordinatorService http_clash(cfg, clock);
    try {
        http_clash.start();
        FAIL("expected StartupError");
    } catch (const StartupError& e) {
        CHECK(std::string(e.what()).find(std::to_string(first.http_port())) != std::string::npos);
        CHECK(std::string(e.what()).find("HTTP") != std::string::npos);
    }
}

TEST_CASE("restart over HTTP keeps history")
{
    testsupport::TempDir dir("svc-restart");
    WallClock clock;
    {
        CoordinatorService svc(service_config(dir.path()), clock);
        svc.start();
        UdpSocket sock(0, "127.0.0.1");
        for (std::uint32_t s = 0; s < 20; ++s) {
            sock.send({"127.0.0.1", svc.udp_port()}, testsupport::measurement(3, s, 1000 + s));
        }
        REQUIRE(wait_for([&] { return svc.coordinator().health().stored == 20; }));
    }
    CoordinatorService svc(service_config(dir.path()), clock);
    svc.start();
    httplib::Client cli("127.0.0.1", svc.http_port());
    CHECK(get_json(cli, "/api/meters/m0001/readings")["readings"].size() == 20);
}
