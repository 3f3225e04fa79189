#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "yomo/protocol.hpp"

namespace yomo::store {

// Data directory layout:
//   <dir>/meters.idx                  one "<storage_id> <meter_id_hex>" per line
//   <dir>/<storage_id>/readings.log   one measurement record per line

std::string format_record(const wire::MeasurementPayload& m);
/// nullopt for malformed or partially written lines.
std::optional<wire::MeasurementPayload> parse_record(std::string_view line);

struct PersistedMeter {
    std::string storage_id;
    MeterId meter_id;
    /// In file (arrival) order.
    std::vector<wire::MeasurementPayload> readings;
    std::size_t skipped_lines = 0;
};

std::vector<PersistedMeter> load(const std::filesystem::path& data_dir);

void append_index(const std::filesystem::path& data_dir, const std::string& storage_id, const MeterId& meter_id);

/// Append-only writer; every record is flushed before append() returns.
class LogWriter {
public:
    LogWriter(const std::filesystem::path& data_dir, const std::string& storage_id);
    void append(const wire::MeasurementPayload& m);

private:
    std::ofstream out_;
};

} // namespace yomo::store
