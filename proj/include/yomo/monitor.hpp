#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "yomo/powercalc.hpp"
#include "yomo/waveform.hpp"

namespace yomo {

/// 8-byte meter identifier as carried on the wire.
struct MeterId {
    std::array<std::uint8_t, 8> bytes{};

    static MeterId from_u64(std::uint64_t v);
    /// Accepts 1..16 hex digits; shorter ids are zero-extended on the left.
    static MeterId from_hex(std::string_view hex);
    [[nodiscard]] std::uint64_t to_u64() const;
    [[nodiscard]] std::string hex() const;

    friend auto operator<=>(const MeterId&, const MeterId&) = default;
};

// ---------------------------------------------------------------------------
// Register file
// ---------------------------------------------------------------------------

enum class RegisterAddress : std::uint8_t { Vrms, Irms, ActivePower, ReactivePower, ApparentPower, Energy, Fs, Mode };

namespace reg {
inline constexpr double kVoltageFullScale = 400.0;
inline constexpr double kCurrentFullScale = 32.0;
inline constexpr double kVrmsLsb = kVoltageFullScale / 4096.0; // 2^-12 of full scale
inline constexpr double kIrmsLsb = kCurrentFullScale / 4096.0;
inline constexpr double kPowerLsb = 0.125;  // W, var, VA
inline constexpr double kEnergyLsb = 1e-3;  // J
inline constexpr std::uint32_t kU24Max = (1u << 24) - 1;
inline constexpr std::int32_t kS24Max = (1 << 23) - 1;
inline constexpr std::int32_t kS24Min = -(1 << 23);
inline constexpr std::uint64_t kU48Max = (std::uint64_t{1} << 48) - 1;
inline constexpr std::uint8_t kModeSleep = 0x01;
inline constexpr std::uint8_t kModeRelayClosed = 0x02;

std::uint32_t encode_vrms(double volts);
std::uint32_t encode_irms(double amperes);
std::int32_t encode_power(double value);
std::uint64_t encode_energy(double joules);
std::uint16_t encode_fs(double hertz);

double decode_vrms(std::uint32_t raw);
double decode_irms(std::uint32_t raw);
double decode_power(std::int32_t raw);
double decode_energy(std::uint64_t raw);
} // namespace reg

/// Emulated energy-monitor registers. Raw fields hold the fixed-point
/// encodings; all engineering values are derived from them.
struct RegisterFile {
    std::uint32_t vrms = 0;   // u24
    std::uint32_t irms = 0;   // u24
    std::int32_t p = 0;       // s24
    std::int32_t q = 0;       // s24
    std::int32_t s = 0;       // s24
    std::uint64_t energy = 0; // u48, saturating
    std::uint16_t fs = 0;
    std::uint8_t mode = 0;

    friend bool operator==(const RegisterFile&, const RegisterFile&) = default;
};

struct RegisterValue {
    std::int64_t raw = 0;
    double value = 0.0;
};

class UnknownRegisterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

RegisterValue read_register(const RegisterFile& registers, RegisterAddress address);
/// Names: vrms, irms, p, q, s, energy, fs, mode (with or without a "_reg" suffix).
RegisterValue read_register(const RegisterFile& registers, std::string_view name);

// ---------------------------------------------------------------------------
// Meter state
// ---------------------------------------------------------------------------

struct PowerReading {
    MeterId meter_id;
    std::uint32_t seq = 0;
    std::int64_t timestamp_ms = 0;
    double v_rms = 0.0;
    double i_rms = 0.0;
    double phi = 0.0;
    PowerTriplet triplet;
    double energy_j = 0.0;
    bool relay_closed = true;
    bool sleeping = false;

    friend bool operator==(const PowerReading&, const PowerReading&) = default;
};

enum class Opcode : std::uint8_t { SwitchOn = 0x01, SwitchOff = 0x02, Sleep = 0x03, Wake = 0x04, SetFs = 0x05 };

std::string_view opcode_name(Opcode op);
std::optional<Opcode> opcode_from_name(std::string_view name);

struct Command {
    Opcode op = Opcode::SwitchOn;
    double fs_hz = 0.0; // SET_FS only
    std::uint32_t command_id = 0;
};

struct CommandOutcome {
    std::uint32_t command_id = 0;
    bool accepted = true;
    std::string reason;
};

struct MeterConfig {
    MeterId meter_id;
    ApplianceProfile profile;
    double sampling_freq = 1000.0;
    std::size_t buffer_capacity = 4096;
    /// Sample budget per measurement window; the window is rounded to whole
    /// mains cycles (200 samples at 1 kHz = 10 cycles at 50 Hz).
    std::size_t window_samples = 200;
    double fs_ceiling = kDefaultFsCeilingHz;
    std::uint64_t seed = 0;
};

struct MeterState {
    MeterId meter_id;
    RegisterFile registers;
    double sampling_freq = 1000.0;
    bool relay_closed = true;
    bool sleeping = false;
    std::uint32_t seq_next = 0;
    std::deque<PowerReading> buffer;
    std::size_t buffer_capacity = 4096;
    std::uint64_t evicted = 0;
    double clock_offset = 0.0; // s, coordinator minus meter
    ApplianceProfile profile;

    std::size_t window_samples = 200;
    double fs_ceiling = kDefaultFsCeilingHz;
    std::uint64_t seed = 0;
    EnergyAccumulator energy;
    std::optional<double> window_start;
    std::vector<CommandOutcome> outcomes; // awaiting acknowledgment
};

MeterState make_meter(const MeterConfig& config);

/// Length of one measurement window at the given sampling frequency.
double measurement_period(double sampling_freq, double mains_freq, std::size_t window_samples);
/// Rate at which the emulated front end samples the window: f_s itself, or the
/// smallest integer multiple of it reaching 4 x mains frequency.
double analysis_rate(double sampling_freq, double mains_freq);
/// Node-local time at which the current window completes; nullopt until the
/// first tick has opened a window.
std::optional<double> next_due(const MeterState& state);

/// Advances the meter to `now` (node seconds). Emits at most one reading.
std::optional<PowerReading> tick(MeterState& state, double now);

CommandOutcome apply_command(MeterState& state, const Command& cmd);

/// Applies and removes every pending command in arrival order.
void command_window(MeterState& state, std::deque<Command>& inbox);

/// Removes and returns up to `max` oldest buffered readings.
std::vector<PowerReading> drain_buffer(MeterState& state, std::size_t max);

} // namespace yomo
