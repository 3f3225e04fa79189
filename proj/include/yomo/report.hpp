#pragma once

#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "yomo/monitor.hpp"
#include "yomo/transport.hpp"
#include "yomo/waveform.hpp"

namespace yomo {

/// One appliance run through the measurement chain, next to its table values.
struct TableRow {
    std::string name;
    double table_p = 0.0;
    double table_s = 0.0;
    std::optional<double> table_q;
    double derived_q = 0.0; // sqrt(S^2 - P^2) from the table pair
    PowerReading reading;

    [[nodiscard]] double p_error() const;
    [[nodiscard]] double s_error() const;
    /// Against derived_q; 0 when derived_q is 0 and the measurement is 0.
    [[nodiscard]] double q_error() const;
    /// The table's own Q disagrees with its P/S pair by more than 1 var.
    [[nodiscard]] bool q_inconsistent() const;
};

/// Runs one full measurement window per appliance through a fresh meter.
std::vector<TableRow> reproduce_tables(const std::vector<ApplianceFixture>& fixtures, double sampling_freq = 1000.0,
                                       std::uint64_t seed = 0);

std::string format_tables(const std::vector<TableRow>& rows);

struct ReplayStats {
    std::size_t sent = 0;
    std::size_t skipped = 0;
};

/// Re-sends readings.log records as measurement datagrams. speed == 0 sends
/// back to back; otherwise record spacing is scaled by 1 / speed.
ReplayStats replay(std::istream& log, const MeterId& meter_id, DatagramSender& sender, const Endpoint& to,
                   double speed);

} // namespace yomo
