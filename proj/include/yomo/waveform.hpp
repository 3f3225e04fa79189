#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace yomo {

/// Steady-state load description. Current amplitude and phase follow from
/// the apparent and active power at the nominal grid voltage.
struct ApplianceProfile {
    std::string name;
    double u_rms_nominal = 230.0; // V
    double p_active = 0.0;        // W
    double s_apparent = 0.0;      // VA
    double mains_freq = 50.0;     // Hz, 50 or 60
    double noise_stddev = 0.0;    // fraction of the current peak
    double gain_error = 1.0;

    /// arccos(P/S), or 0 for a zero load.
    [[nodiscard]] double phase() const;
    /// Peak current of the noise-free waveform, sqrt(2) * S / U.
    [[nodiscard]] double current_peak() const;
    /// Throws std::invalid_argument when an invariant is violated.
    void validate() const;
};

struct WaveformFrame {
    std::vector<double> u_samples; // V
    std::vector<double> i_samples; // A
    double sample_rate = 0.0;      // Hz
    double start_time = 0.0;       // s since node epoch

    [[nodiscard]] std::size_t size() const { return u_samples.size(); }
    [[nodiscard]] double duration() const { return static_cast<double>(size()) / sample_rate; }
};

class WaveformError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Samples u(t) and i(t) at t = start_time + n / sample_rate for
/// n in [0, round(duration * sample_rate)). Noise is Gaussian on the current
/// only and is fully determined by `seed`.
WaveformFrame synthesize(const ApplianceProfile& profile, double sample_rate, double duration,
                         double start_time, std::uint64_t seed = 0);

/// Open relay: current path broken, grid voltage still present.
WaveformFrame relay_gate(WaveformFrame frame, bool relay_closed);

/// Reference values from the measurement tables, kept next to each fixture.
struct ApplianceFixture {
    ApplianceProfile profile;
    double table_p = 0.0;
    double table_s = 0.0;
    std::optional<double> table_q;
};

/// Loads a JSON profile file: either a single object or {"appliances": [...]}.
std::vector<ApplianceFixture> load_fixtures(const std::filesystem::path& path);
ApplianceFixture fixture_from_json(const nlohmann::json& j);
const ApplianceFixture& find_fixture(const std::vector<ApplianceFixture>& fixtures, std::string_view name);

} // namespace yomo
