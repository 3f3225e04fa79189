#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "test_support.hpp"
#include "yomo/coordinator.hpp"
#include "yomo/store.hpp"

using namespace yomo;
using testsupport::measurement;

namespace {

const Endpoint kMeterAddr{"10.0.0.2", 4000};

struct Fixture {
    testsupport::TempDir dir{"coord"};
    SimClock clock{1'000'000};
    testsupport::RecordingSender sender;

    CoordinatorConfig config() const
    {
        CoordinatorConfig c;
        c.data_dir = dir.path();
        c.liveness_ms = 10'000;
        c.max_attempts = 3;
        c.retry_interval_ms = 500;
        return c;
    }
};

std::uint32_t sent_command_id(const testsupport::Sent& s)
{
    const auto d = wire::decode(s.bytes);
    return std::get<wire::CommandPayload>(d.payload).command_id;
}

std::vector<std::uint8_t> ack(std::uint64_t meter, std::uint32_t id,
                              wire::AckStatus st = wire::AckStatus::Accepted)
{
    return wire::encode({MeterId::from_u64(meter), wire::AckPayload{id, st}});
}

} // namespace

TEST_CASE("first contact creates a meter with a storage id")
{
    Fixture f;
    Coordinator c(f.config(), f.clock, f.sender);
    CHECK(c.meters().empty());
    CHECK(c.ingest(measurement(7, 0, 1000), kMeterAddr) == IngestOutcome::Stored);
    const auto meters = c.meters();
    REQUIRE(meters.size() == 1);
    CHECK(meters[0].storage_id == "m0001");
    CHECK(meters[0].meter_id == MeterId::from_u64(7));
    CHECK(meters[0].reading_count == 1);
    CHECK(meters[0].last_seen_ms == 1'000'000);
    CHECK(c.storage_id_of(MeterId::from_u64(7)) == "m0001");
    CHECK_FALSE(c.storage_id_of(MeterId::from_u64(8)));
    CHECK(std::filesystem::exists(f.dir.path() / "meters.idx"));
    CHECK(std::filesystem::exists(f.dir.path() / "m0001" / "readings.log"));
}

TEST_CASE("duplicates are counted, not stored")
{
    Fixture f;
    Coordinator c(f.config(), f.clock, f.sender);
    const auto d = measurement(1, 3, 1000);
    CHECK(c.ingest(d, kMeterAddr) == IngestOutcome::Stored);
    CHECK(c.ingest(d, kMeterAddr) == IngestOutcome::Duplicate);
    const auto h = c.health();
    CHECK(h.stored == 1);
    CHECK(h.duplicates == 1);
    CHECK(h.ingested == 2);
    CHECK(c.meter("m0001")->reading_count == 1);
}

TEST_CASE("sequence gaps")
{
    Fixture f;
    Coordinator c(f.config(), f.clock, f.sender);
    for (std::uint32_t s = 0; s <= 5; ++s) {
        c.ingest(measurement(1, s, 1000 + s), kMeterAddr);
    }
    CHECK(c.meter("m0001")->gap_count == 0);
    c.ingest(measurement(1, 8, 1008), kMeterAddr);
    auto m = c.meter("m0001");
    CHECK(m->gap_count == 1);
    CHECK(m->missing == 2);
    CHECK(m->last_seq == 8);

    // A late arrival fills the hole but does not open a new gap.
    CHECK(c.ingest(measurement(1, 6, 1006), kMeterAddr) == IngestOutcome::Stored);
    m = c.meter("m0001");
    CHECK(m->gap_count == 1);
    CHECK(m->last_seq == 8);
    CHECK(c.health().gaps == 1);
}

TEST_CASE("first contact after data loss counts as a gap")
{
    Fixture f;
    Coordinator c(f.config(), f.clock, f.sender);
    c.ingest(measurement(1, 4, 1000), kMeterAddr);
    CHECK(c.meter("m0001")->gap_count == 1);
    CHECK(c.meter("m0001")->missing == 4);
}

TEST_CASE("decode failures are counted by class")
{
    Fixture f;
    Coordinator c(f.config(), f.clock, f.sender);
    auto bad = measurement(1, 0, 1000);
    bad[20] ^= 0xff;
    CHECK(c.ingest(bad, kMeterAddr) == IngestOutcome::Dropped);
    CHECK(c.ingest(std::vector<std::uint8_t>{1, 2, 3}, kMeterAddr) == IngestOutcome::Dropped);
    const auto h = c.health();
    CHECK(h.dropped[static_cast<std::size_t>(wire::DecodeErrorClass::CrcMismatch)] == 1);
    CHECK(h.dropped[static_cast<std::size_t>(wire::DecodeErrorClass::Truncated)] == 1);
    CHECK(h.received == 2);
    CHECK(h.stored == 0);
    CHECK(c.meters().empty());
}

TEST_CASE("time sync requests are answered to the source")
{
    Fixture f;
    Coordinator c(f.config(), f.clock, f.sender);
    const auto req = wire::encode({MeterId::from_u64(3), wire::TimeSyncRequest{555}});
    CHECK(c.ingest(req, kMeterAddr) == IngestOutcome::TimeSyncAnswered);
    REQUIRE(f.sender.sent.size() == 1);
    CHECK(f.sender.sent[0].to == kMeterAddr);
    const auto d = wire::decode(f.sender.sent[0].bytes);
    const auto reply = std::get<wire::TimeSyncReply>(d.payload);
    CHECK(reply.request_meter_ms == 555);
    CHECK(reply.coordinator_time_ms == 1'000'000);
    CHECK(d.meter_id == MeterId::from_u64(3));
}

TEST_CASE("query_series: range, order and continuation")
{
    Fixture f;
    Coordinator c(f.config(), f.clock, f.sender);
    // 300 readings over three meters, delivered interleaved and out of order.
    std::vector<std::pair<std::uint64_t, std::uint32_t>> order;
    for (std::uint32_t s = 0; s < 100; ++s) {
        for (std::uint64_t m = 1; m <= 3; ++m) {
            order.emplace_back(m, s);
        }
    }
    std::mt19937 rng(4);
    std::shuffle(order.begin(), order.end(), rng);
    for (const auto& [m, s] : order) {
        c.ingest(measurement(m, s, 10'000 + 200 * s), kMeterAddr);
    }
    CHECK(c.health().stored == 300);

    for (const auto& sid : {"m0001", "m0002", "m0003"}) {
        CAPTURE(sid);
        auto all = c.query_series(sid, 0, INT64_MAX, 1000);
        REQUIRE(all.readings.size() == 100);
        CHECK_FALSE(all.next);
        for (std::size_t k = 0; k < 100; ++k) {
            CHECK(all.readings[k].seq == k);
        }

        // Half-open window [10000 + 200*10, 10000 + 200*20)
        auto win = c.query_series(sid, 12'000, 14'000, 1000);
        REQUIRE(win.readings.size() == 10);
        CHECK(win.readings.front().seq == 10);
        CHECK(win.readings.back().seq == 19);

        // Paging reproduces the unpaged result.
        std::vector<std::uint32_t> paged;
        std::optional<std::uint32_t> after;
        int pages = 0;
        do {
            auto p = c.query_series(sid, 0, INT64_MAX, 7, after);
            for (const auto& r : p.readings) {
                paged.push_back(r.seq);
            }
            after = p.next;
            ++pages;
        } while (after);
        CHECK(pages == 15);
        REQUIRE(paged.size() == 100);
        CHECK(std::is_sorted(paged.begin(), paged.end()));
        CHECK(std::adjacent_find(paged.begin(), paged.end()) == paged.end());
    }
    CHECK(c.query_series("m0001", 5, 5, 10).readings.empty());
    CHECK_THROWS_AS(c.query_series("m0001", 6, 5, 10), std::invalid_argument);
    CHECK_THROWS_AS(c.query_series("m0001", 0, 5, 0), std::invalid_argument);
    CHECK_THROWS_AS(c.query_series("m0099", 0, 5, 1), CoordinatorError);
}

TEST_CASE("dispatch_command errors")
{
    Fixture f;
    Coordinator c(f.config(), f.clock, f.sender);
    auto code = [&](const std::string& sid, Command cmd) {
        try {
            c.dispatch_command(sid, cmd);
        } catch (const CoordinatorError& e) {
            return e.code();
        }
        FAIL("dispatch succeeded");
        return CoordinatorError::Code::NotFound;
    };
    CHECK(code("m0001", {Opcode::SwitchOff, 0, 0}) == CoordinatorError::Code::NotFound);
    c.ingest(measurement(1, 0, 1000), kMeterAddr);
    CHECK(code("m0001", {Opcode::SetFs, 99.0, 0}) == CoordinatorError::Code::InvalidCommand);
    CHECK(code("m0001", {Opcode::SetFs, 99.9, 0}) == CoordinatorError::Code::InvalidCommand);
    f.clock.advance(10'001);
    CHECK(code("m0001", {Opcode::SwitchOff, 0, 0}) == CoordinatorError::Code::Stale);
    CHECK(f.sender.sent.empty());
}

TEST_CASE("ticket lifecycle")
{
    Fixture f;
    Coordinator c(f.config(), f.clock, f.sender);
    c.ingest(measurement(1, 0, 1000), kMeterAddr);

    SUBCASE("acked")
    {
        const auto t = c.dispatch_command("m0001", {Opcode::SwitchOff, 0, 0});
        CHECK(t.state == TicketState::Pending);
        CHECK(t.attempts == 1);
        REQUIRE(f.sender.sent.size() == 1);
        CHECK(f.sender.sent[0].to == kMeterAddr);
        CHECK(sent_command_id(f.sender.sent[0]) == t.command_id);
        c.ingest(ack(1, t.command_id), kMeterAddr);
        CHECK(c.ticket(t.command_id)->state == TicketState::Acked);
        f.clock.advance(5000);
        c.poll();
        CHECK(f.sender.sent.size() == 1);
    }
    SUBCASE("ack from a different meter is ignored")
    {
        c.ingest(measurement(2, 0, 1000), kMeterAddr);
        const auto t = c.dispatch_command("m0001", {Opcode::Sleep, 0, 0});
        c.ingest(ack(2, t.command_id), kMeterAddr);
        CHECK(c.ticket(t.command_id)->state == TicketState::Pending);
    }
    SUBCASE("retries then fails")
    {
        const auto t = c.dispatch_command("m0001", {Opcode::SwitchOn, 0, 0});
        c.poll();
        CHECK(f.sender.sent.size() == 1); // interval not elapsed
        f.clock.advance(500);
        c.poll();
        CHECK(f.sender.sent.size() == 2);
        f.clock.advance(500);
        c.poll();
        CHECK(f.sender.sent.size() == 3);
        CHECK(c.ticket(t.command_id)->attempts == 3);
        CHECK(c.ticket(t.command_id)->state == TicketState::Pending);
        f.clock.advance(500);
        c.poll();
        CHECK(f.sender.sent.size() == 3);
        CHECK(c.ticket(t.command_id)->state == TicketState::Failed);
        for (const auto& s : f.sender.sent) {
            CHECK(sent_command_id(s) == t.command_id);
        }
        // A late ack does not revive a failed ticket.
        c.ingest(ack(1, t.command_id), kMeterAddr);
        CHECK(c.ticket(t.command_id)->state == TicketState::Failed);
    }
    SUBCASE("rejected by the meter")
    {
        const auto t = c.dispatch_command("m0001", {Opcode::SetFs, 100.0, 0});
        c.ingest(ack(1, t.command_id, wire::AckStatus::RejectedSamplingFrequency), kMeterAddr);
        const auto got = c.ticket(t.command_id);
        CHECK(got->state == TicketState::Rejected);
        CHECK_FALSE(got->detail.empty());
    }
    SUBCASE("unknown ticket")
    {
        CHECK_FALSE(c.ticket(12345));
    }
}

TEST_CASE("restart restores readings, gaps and storage ids")
{
    Fixture f;
    {
        Coordinator c(f.config(), f.clock, f.sender);
        for (std::uint32_t s : {0u, 1u, 2u, 5u, 6u}) {
            c.ingest(measurement(1, s, 1000 + s), kMeterAddr);
        }
        c.ingest(measurement(2, 0, 5000), kMeterAddr);
    }
    Coordinator c(f.config(), f.clock, f.sender);
    const auto m = c.meter("m0001");
    REQUIRE(m);
    CHECK(m->reading_count == 5);
    CHECK(m->gap_count == 1);
    CHECK(m->missing == 2);
    CHECK(c.storage_id_of(MeterId::from_u64(2)) == "m0002");
    CHECK(c.ingest(measurement(1, 6, 1006), kMeterAddr) == IngestOutcome::Duplicate);
    CHECK(c.ingest(measurement(3, 0, 1006), kMeterAddr) == IngestOutcome::Stored);
    CHECK(c.storage_id_of(MeterId::from_u64(3)) == "m0003");
    const auto page = c.query_series("m0001", 0, INT64_MAX, 100);
    REQUIRE(page.readings.size() == 5);
    CHECK(page.readings[3].seq == 5);
    CHECK(page.readings[3].energy_j == doctest::Approx(5.0));
}

TEST_CASE("torn final line is skipped and later appends stay readable")
{
    Fixture f;
    {
        Coordinator c(f.config(), f.clock, f.sender);
        for (std::uint32_t s = 0; s < 3; ++s) {
            c.ingest(measurement(1, s, 1000 + s), kMeterAddr);
        }
    }
    {
        std::ofstream out(f.dir.path() / "m0001" / "readings.log", std::ios::app);
        out << "3 1003 230000 43"; // crash mid-record
    }
    {
        Coordinator c(f.config(), f.clock, f.sender);
        CHECK(c.meter("m0001")->reading_count == 3);
        c.ingest(measurement(1, 3, 1003), kMeterAddr);
        c.ingest(measurement(1, 4, 1004), kMeterAddr);
    }
    Coordinator c(f.config(), f.clock, f.sender);
    CHECK(c.meter("m0001")->reading_count == 5);
    CHECK(c.meter("m0001")->gap_count == 0);
    const auto loaded = store::load(f.dir.path());
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].skipped_lines == 1);
}

TEST_CASE("store record format round-trips")
{
    wire::MeasurementPayload m{9, 1'700'000'000'000, 230'000, 8'435, -101'609, -5, 196'977, 1'940'000, 1, 3};
    const auto line = store::format_record(m);
    CHECK(store::parse_record(line) == m);
    CHECK_FALSE(store::parse_record(""));
    CHECK_FALSE(store::parse_record("1 2 3"));
    CHECK_FALSE(store::parse_record(line + " 7"));
    CHECK_FALSE(store::parse_record("a b c d e f g h i j"));
}
