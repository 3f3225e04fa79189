#include "yomo/store.hpp"

#include <charconv>
#include <sstream>

#include <fmt/format.h>

namespace yomo::store {

namespace fs = std::filesystem;

std::string format_record(const wire::MeasurementPayload& m)
{
    return fmt::format("{} {} {} {} {} {} {} {} {} {}", m.seq, m.timestamp_ms, m.v_rms_mv, m.i_rms_ma, m.phi_urad,
                       m.p_mw, m.q_mvar, m.s_mva, m.energy_mj, static_cast<int>(m.flags));
}

namespace {

template <typename T>
bool next_field(std::string_view& rest, T& out)
{
    while (!rest.empty() && rest.front() == ' ') {
        rest.remove_prefix(1);
    }
    const auto end = rest.find(' ');
    const auto tok = rest.substr(0, end);
    if (tok.empty()) {
        return false;
    }
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
        return false;
    }
    rest.remove_prefix(end == std::string_view::npos ? rest.size() : end);
    return true;
}

} // namespace

std::optional<wire::MeasurementPayload> parse_record(std::string_view line)
{
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
        line.remove_suffix(1);
    }
    wire::MeasurementPayload m;
    int flags = 0;
    auto rest = line;
    if (!(next_field(rest, m.seq) && next_field(rest, m.timestamp_ms) && next_field(rest, m.v_rms_mv) &&
          next_field(rest, m.i_rms_ma) && next_field(rest, m.phi_urad) && next_field(rest, m.p_mw) &&
          next_field(rest, m.q_mvar) && next_field(rest, m.s_mva) && next_field(rest, m.energy_mj) &&
          next_field(rest, flags))) {
        return std::nullopt;
    }
    if (!rest.empty() || flags < 0 || flags > (wire::kFlagRelayClosed | wire::kFlagSleeping)) {
        return std::nullopt;
    }
    m.flags = static_cast<std::uint8_t>(flags);
    return m;
}

std::vector<PersistedMeter> load(const fs::path& data_dir)
{
    std::vector<PersistedMeter> out;
    std::ifstream idx(data_dir / "meters.idx");
    if (!idx) {
        return out;
    }
    std::string line;
    while (std::getline(idx, line)) {
        std::istringstream fields(line);
        std::string storage_id;
        std::string hex;
        if (!(fields >> storage_id >> hex)) {
            continue;
        }
        PersistedMeter pm;
        pm.storage_id = storage_id;
        pm.meter_id = MeterId::from_hex(hex);
        std::ifstream log(data_dir / storage_id / "readings.log");
        std::string rec;
        while (std::getline(log, rec)) {
            if (auto m = parse_record(rec)) {
                pm.readings.push_back(*m);
            } else {
                ++pm.skipped_lines;
            }
        }
        out.push_back(std::move(pm));
    }
    return out;
}

void append_index(const fs::path& data_dir, const std::string& storage_id, const MeterId& meter_id)
{
    fs::create_directories(data_dir / storage_id);
    std::ofstream idx(data_dir / "meters.idx", std::ios::app);
    idx << storage_id << ' ' << meter_id.hex() << '\n';
    idx.flush();
    if (!idx) {
        throw std::runtime_error(fmt::format("cannot append to {}", (data_dir / "meters.idx").string()));
    }
}

LogWriter::LogWriter(const fs::path& data_dir, const std::string& storage_id)
{
    fs::create_directories(data_dir / storage_id);
    const auto path = data_dir / storage_id / "readings.log";
    bool torn_tail = false;
    if (std::ifstream probe(path, std::ios::binary | std::ios::ate); probe && probe.tellg() > 0) {
        probe.seekg(-1, std::ios::end);
        torn_tail = probe.get() != '\n';
    }
    out_.open(path, std::ios::app);
    if (!out_) {
        throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    }
    if (torn_tail) {
        // Terminate a record cut short by a crash so it stays a single bad line.
        out_ << '\n';
        out_.flush();
    }
}

void LogWriter::append(const wire::MeasurementPayload& m)
{
    out_ << format_record(m) << '\n';
    out_.flush();
}

} // namespace yomo::store
