#include "yomo/report.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include <fmt/format.h>

#include "yomo/protocol.hpp"
#include "yomo/store.hpp"

namespace yomo {

namespace {
double rel_error(double measured, double expected)
{
    if (expected == 0.0) {
        return measured == 0.0 ? 0.0 : INFINITY;
    }
    return std::abs(measured - expected) / std::abs(expected);
}
} // namespace

double TableRow::p_error() const { return rel_error(reading.triplet.active_p, table_p); }
double TableRow::s_error() const { return rel_error(reading.triplet.apparent_s, table_s); }
double TableRow::q_error() const { return rel_error(reading.triplet.reactive_q, derived_q); }

bool TableRow::q_inconsistent() const
{
    return table_q && std::abs(*table_q - derived_q) > 1.0;
}

std::vector<TableRow> reproduce_tables(const std::vector<ApplianceFixture>& fixtures, double sampling_freq,
                                       std::uint64_t seed)
{
    std::vector<TableRow> rows;
    for (const auto& fx : fixtures) {
        MeterConfig cfg;
        cfg.profile = fx.profile;
        cfg.sampling_freq = sampling_freq;
        cfg.seed = seed;
        auto meter = make_meter(cfg);
        tick(meter, 0.0);
        const auto due = next_due(meter).value();
        auto reading = tick(meter, due);

        TableRow row;
        row.name = fx.profile.name;
        row.table_p = fx.table_p;
        row.table_s = fx.table_s;
        row.table_q = fx.table_q;
        row.derived_q = std::sqrt(std::max(0.0, fx.table_s * fx.table_s - fx.table_p * fx.table_p));
        row.reading = reading.value();
        rows.push_back(row);
    }
    return rows;
}

std::string format_tables(const std::vector<TableRow>& rows)
{
    std::string out;
    auto section = [&](const char* title, auto&& line) {
        out += fmt::format("{}\n", title);
        out += fmt::format("  {:<16} {:>12} {:>12} {:>8}\n", "appliance", "measured", "real value", "error");
        for (const auto& r : rows) {
            line(r);
        }
        out += "\n";
    };
    section("Active power [W]", [&](const TableRow& r) {
        out += fmt::format("  {:<16} {:>12.3f} {:>12.1f} {:>7.3f}%\n", r.name, r.reading.triplet.active_p, r.table_p,
                           100.0 * r.p_error());
    });
    section("Apparent power [VA]", [&](const TableRow& r) {
        out += fmt::format("  {:<16} {:>12.3f} {:>12.1f} {:>7.3f}%\n", r.name, r.reading.triplet.apparent_s,
                           r.table_s, 100.0 * r.s_error());
    });
    out += "Reactive power [var]\n";
    out += fmt::format("  {:<16} {:>12} {:>12} {:>8} {:>12}\n", "appliance", "measured", "sqrt(S2-P2)", "error",
                       "table value");
    for (const auto& r : rows) {
        const auto table = r.table_q ? fmt::format("{:.1f}", *r.table_q) : std::string("-");
        out += fmt::format("  {:<16} {:>12.3f} {:>12.2f} {:>7.3f}% {:>12}{}\n", r.name, r.reading.triplet.reactive_q,
                           r.derived_q, 100.0 * r.q_error(), table,
                           r.q_inconsistent() ? "  (inconsistent with P,S)" : "");
    }
    return out;
}

ReplayStats replay(std::istream& log, const MeterId& meter_id, DatagramSender& sender, const Endpoint& to,
                   double speed)
{
    using clock = std::chrono::steady_clock;
    ReplayStats stats;
    std::optional<std::int64_t> first_ts;
    const auto started = clock::now();
    std::string line;
    while (std::getline(log, line)) {
        const auto rec = store::parse_record(line);
        if (!rec) {
            ++stats.skipped;
            continue;
        }
        std::vector<std::uint8_t> bytes;
        try {
            bytes = wire::encode({meter_id, *rec});
        } catch (const wire::EncodeRangeError&) {
            ++stats.skipped;
            continue;
        }
        if (speed > 0.0) {
            if (!first_ts) {
                first_ts = rec->timestamp_ms;
            }
            const double offset_ms = static_cast<double>(rec->timestamp_ms - *first_ts) / speed;
            std::this_thread::sleep_until(started + std::chrono::microseconds(std::llround(offset_ms * 1000.0)));
        }
        sender.send(to, bytes);
        ++stats.sent;
    }
    return stats;
}

} // namespace yomo
