#include "yomo/monitor.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace yomo {

MeterId MeterId::from_u64(std::uint64_t v)
{
    MeterId id;
    for (int k = 7; k >= 0; --k) {
        id.bytes[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(v & 0xFF);
        v >>= 8;
    }
    return id;
}

MeterId MeterId::from_hex(std::string_view hex)
{
    if (hex.empty() || hex.size() > 16) {
        throw std::invalid_argument(fmt::format("meter id '{}' must be 1-16 hex digits", hex));
    }
    std::uint64_t v = 0;
    for (char c : hex) {
        int d = 0;
        if (c >= '0' && c <= '9') {
            d = c - '0';
        } else if (c >= 'a' && c <= 'f') {
            d = c - 'a' + 10;
        } else if (c >= 'A' && c <= 'F') {
            d = c - 'A' + 10;
        } else {
            throw std::invalid_argument(fmt::format("meter id '{}' is not hex", hex));
        }
        v = (v << 4) | static_cast<std::uint64_t>(d);
    }
    return from_u64(v);
}

std::uint64_t MeterId::to_u64() const
{
    std::uint64_t v = 0;
    for (auto b : bytes) {
        v = (v << 8) | b;
    }
    return v;
}

std::string MeterId::hex() const
{
    return fmt::format("{:016x}", to_u64());
}

// ---------------------------------------------------------------------------

namespace reg {

namespace {
template <typename T>
T quantize(double value, double lsb, T lo, T hi)
{
    if (std::isnan(value)) {
        return T{0};
    }
    const double steps = std::round(value / lsb);
    if (steps <= static_cast<double>(lo)) {
        return lo;
    }
    if (steps >= static_cast<double>(hi)) {
        return hi;
    }
    return static_cast<T>(steps);
}
} // namespace

std::uint32_t encode_vrms(double volts) { return quantize<std::uint32_t>(volts, kVrmsLsb, 0, kU24Max); }
std::uint32_t encode_irms(double amperes) { return quantize<std::uint32_t>(amperes, kIrmsLsb, 0, kU24Max); }
std::int32_t encode_power(double value) { return quantize<std::int32_t>(value, kPowerLsb, kS24Min, kS24Max); }
std::uint64_t encode_energy(double joules) { return quantize<std::uint64_t>(joules, kEnergyLsb, 0, kU48Max); }
std::uint16_t encode_fs(double hertz) { return quantize<std::uint16_t>(hertz, 1.0, 0, 0xFFFF); }

double decode_vrms(std::uint32_t raw) { return raw * kVrmsLsb; }
double decode_irms(std::uint32_t raw) { return raw * kIrmsLsb; }
double decode_power(std::int32_t raw) { return raw * kPowerLsb; }
double decode_energy(std::uint64_t raw) { return static_cast<double>(raw) * kEnergyLsb; }

} // namespace reg

RegisterValue read_register(const RegisterFile& r, RegisterAddress address)
{
    switch (address) {
    case RegisterAddress::Vrms:
        return {r.vrms, reg::decode_vrms(r.vrms)};
    case RegisterAddress::Irms:
        return {r.irms, reg::decode_irms(r.irms)};
    case RegisterAddress::ActivePower:
        return {r.p, reg::decode_power(r.p)};
    case RegisterAddress::ReactivePower:
        return {r.q, reg::decode_power(r.q)};
    case RegisterAddress::ApparentPower:
        return {r.s, reg::decode_power(r.s)};
    case RegisterAddress::Energy:
        return {static_cast<std::int64_t>(r.energy), reg::decode_energy(r.energy)};
    case RegisterAddress::Fs:
        return {r.fs, static_cast<double>(r.fs)};
    case RegisterAddress::Mode:
        return {r.mode, static_cast<double>(r.mode)};
    }
    throw UnknownRegisterError("unknown register address");
}

RegisterValue read_register(const RegisterFile& registers, std::string_view name)
{
    std::string key(name);
    if (key.size() > 4 && key.ends_with("_reg")) {
        key.resize(key.size() - 4);
    }
    static constexpr std::pair<std::string_view, RegisterAddress> table[] = {
        {"vrms", RegisterAddress::Vrms},  {"irms", RegisterAddress::Irms},     {"p", RegisterAddress::ActivePower},
        {"q", RegisterAddress::ReactivePower}, {"s", RegisterAddress::ApparentPower},
        {"energy", RegisterAddress::Energy}, {"fs", RegisterAddress::Fs},      {"mode", RegisterAddress::Mode},
    };
    for (const auto& [n, addr] : table) {
        if (n == key) {
            return read_register(registers, addr);
        }
    }
    throw UnknownRegisterError(fmt::format("unknown register '{}'", name));
}

// ---------------------------------------------------------------------------

std::string_view opcode_name(Opcode op)
{
    switch (op) {
    case Opcode::SwitchOn:
        return "SWITCH_ON";
    case Opcode::SwitchOff:
        return "SWITCH_OFF";
    case Opcode::Sleep:
        return "SLEEP";
    case Opcode::Wake:
        return "WAKE";
    case Opcode::SetFs:
        return "SET_FS";
    }
    return "UNKNOWN";
}

std::optional<Opcode> opcode_from_name(std::string_view name)
{
    for (auto op : {Opcode::SwitchOn, Opcode::SwitchOff, Opcode::Sleep, Opcode::Wake, Opcode::SetFs}) {
        if (opcode_name(op) == name) {
            return op;
        }
    }
    return std::nullopt;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

void refresh_mode(MeterState& s)
{
    s.registers.mode = static_cast<std::uint8_t>((s.sleeping ? reg::kModeSleep : 0) |
                                                 (s.relay_closed ? reg::kModeRelayClosed : 0));
}

} // namespace

MeterState make_meter(const MeterConfig& config)
{
    config.profile.validate();
    validate_sampling_frequency(config.sampling_freq, config.fs_ceiling);
    if (config.buffer_capacity == 0) {
        throw std::invalid_argument("buffer capacity must be at least 1");
    }
    MeterState s;
    s.meter_id = config.meter_id;
    s.profile = config.profile;
    s.sampling_freq = config.sampling_freq;
    s.buffer_capacity = config.buffer_capacity;
    s.window_samples = config.window_samples;
    s.fs_ceiling = config.fs_ceiling;
    s.seed = config.seed;
    s.energy = EnergyAccumulator::for_sampling_frequency(config.sampling_freq);
    s.registers.fs = reg::encode_fs(config.sampling_freq);
    refresh_mode(s);
    return s;
}

double measurement_period(double sampling_freq, double mains_freq, std::size_t window_samples)
{
    const double cycles =
        std::max(2.0, std::round(static_cast<double>(window_samples) * mains_freq / sampling_freq));
    return cycles / mains_freq;
}

double analysis_rate(double sampling_freq, double mains_freq)
{
    const double floor = 4.0 * mains_freq;
    if (sampling_freq >= floor) {
        return sampling_freq;
    }
    return std::ceil(floor / sampling_freq) * sampling_freq;
}

std::optional<double> next_due(const MeterState& state)
{
    if (!state.window_start) {
        return std::nullopt;
    }
    return *state.window_start + measurement_period(state.sampling_freq, state.profile.mains_freq,
                                                    state.window_samples);
}

std::optional<PowerReading> tick(MeterState& state, double now)
{
    if (state.sleeping) {
        return std::nullopt;
    }
    if (!state.window_start) {
        state.window_start = now;
        return std::nullopt;
    }
    const double mains = state.profile.mains_freq;
    const double period = measurement_period(state.sampling_freq, mains, state.window_samples);
    const double start = *state.window_start;
    // Small slack so accumulated float steps do not skip a due window.
    if (now + 1e-9 < start + period) {
        return std::nullopt;
    }

    const double rate = analysis_rate(state.sampling_freq, mains);
    const auto frame = relay_gate(
        // Round the sample count up so the window always spans its full cycles.
        synthesize(state.profile, rate, std::ceil(period * rate - 1e-9) / rate, start,
                   splitmix64(state.seed ^ splitmix64(state.seq_next))),
        state.relay_closed);

    const double v = rms(frame.u_samples);
    const double i = rms(frame.i_samples);
    double phi = 0.0;
    if (i > 0.0) {
        try {
            phi = phase_shift(frame.u_samples, frame.i_samples, frame.sample_rate, mains);
        } catch (const NoSignalError&) {
            phi = 0.0;
        }
    }
    const auto triplet = power_triplet(v, i, phi);

    const auto steps = std::llround(period * state.sampling_freq);
    for (long long k = 0; k < steps; ++k) {
        state.energy = accumulate(state.energy, triplet.active_p);
    }

    auto& r = state.registers;
    r.vrms = reg::encode_vrms(v);
    r.irms = reg::encode_irms(i);
    r.p = reg::encode_power(triplet.active_p);
    r.q = reg::encode_power(triplet.reactive_q);
    r.s = reg::encode_power(triplet.apparent_s);
    r.energy = std::max(r.energy, reg::encode_energy(state.energy.energy_j));
    r.fs = reg::encode_fs(state.sampling_freq);
    refresh_mode(state);

    PowerReading reading;
    reading.meter_id = state.meter_id;
    reading.seq = state.seq_next++;
    reading.timestamp_ms = std::llround((start + period + state.clock_offset) * 1000.0);
    reading.v_rms = reg::decode_vrms(r.vrms);
    reading.i_rms = reg::decode_irms(r.irms);
    reading.triplet = {reg::decode_power(r.p), reg::decode_power(r.q), reg::decode_power(r.s)};
    reading.phi = r.s > 0 ? std::atan2(reading.triplet.reactive_q, reading.triplet.active_p) : 0.0;
    reading.energy_j = reg::decode_energy(r.energy);
    reading.relay_closed = state.relay_closed;
    reading.sleeping = false;

    state.buffer.push_back(reading);
    while (state.buffer.size() > state.buffer_capacity) {
        state.buffer.pop_front();
        ++state.evicted;
    }
    state.window_start = start + period;
    return reading;
}

CommandOutcome apply_command(MeterState& state, const Command& cmd)
{
    CommandOutcome outcome{cmd.command_id, true, {}};
    switch (cmd.op) {
    case Opcode::SwitchOn:
        state.relay_closed = true;
        break;
    case Opcode::SwitchOff:
        state.relay_closed = false;
        break;
    case Opcode::Sleep:
        state.sleeping = true;
        break;
    case Opcode::Wake:
        if (state.sleeping) {
            state.sleeping = false;
            state.window_start.reset();
        }
        break;
    case Opcode::SetFs:
        try {
            state.sampling_freq = validate_sampling_frequency(cmd.fs_hz, state.fs_ceiling);
            state.energy.step_s = 1.0 / state.sampling_freq;
            state.registers.fs = reg::encode_fs(state.sampling_freq);
        } catch (const SamplingFrequencyError& e) {
            outcome.accepted = false;
            outcome.reason = e.what();
        }
        break;
    default:
        outcome.accepted = false;
        outcome.reason = fmt::format("unknown opcode {}", static_cast<int>(cmd.op));
        break;
    }
    refresh_mode(state);
    state.outcomes.push_back(outcome);
    return outcome;
}

void command_window(MeterState& state, std::deque<Command>& inbox)
{
    while (!inbox.empty()) {
        apply_command(state, inbox.front());
        inbox.pop_front();
    }
}

std::vector<PowerReading> drain_buffer(MeterState& state, std::size_t max)
{
    if (max == 0) {
        throw std::invalid_argument("drain_buffer needs max >= 1");
    }
    const auto n = std::min(max, state.buffer.size());
    std::vector<PowerReading> out(state.buffer.begin(), state.buffer.begin() + static_cast<long>(n));
    state.buffer.erase(state.buffer.begin(), state.buffer.begin() + static_cast<long>(n));
    return out;
}

} // namespace yomo
