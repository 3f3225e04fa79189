#include "yomo/waveform.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <fmt/format.h>

namespace yomo {

double ApplianceProfile::phase() const
{
    if (s_apparent <= 0.0) {
        return 0.0;
    }
    return std::acos(std::clamp(p_active / s_apparent, 0.0, 1.0));
}

double ApplianceProfile::current_peak() const
{
    return std::numbers::sqrt2 * s_apparent / u_rms_nominal;
}

void ApplianceProfile::validate() const
{
    if (!(u_rms_nominal > 0.0)) {
        throw WaveformError(fmt::format("profile '{}': u_rms_nominal must be positive", name));
    }
    if (p_active < 0.0) {
        throw WaveformError(fmt::format("profile '{}': negative active power {}", name, p_active));
    }
    if (s_apparent < p_active) {
        throw WaveformError(
            fmt::format("profile '{}': apparent power {} below active power {}", name, s_apparent, p_active));
    }
    if (mains_freq != 50.0 && mains_freq != 60.0) {
        throw WaveformError(fmt::format("profile '{}': mains frequency {} Hz not 50 or 60", name, mains_freq));
    }
    if (noise_stddev < 0.0) {
        throw WaveformError(fmt::format("profile '{}': negative noise stddev", name));
    }
}

WaveformFrame synthesize(const ApplianceProfile& profile, double sample_rate, double duration,
                         double start_time, std::uint64_t seed)
{
    profile.validate();
    const double f = profile.mains_freq;
    if (!(sample_rate >= 4.0 * f)) {
        throw WaveformError(fmt::format("sample rate {} Hz below 4 x {} Hz", sample_rate, f));
    }
    // Tolerate float noise in cycle-multiple durations such as 10 / 50.
    if (!(duration * f >= 1.0 - 1e-9)) {
        throw WaveformError(fmt::format("duration {} s shorter than one mains cycle", duration));
    }

    const auto n = static_cast<std::size_t>(std::llround(duration * sample_rate));
    const double omega = 2.0 * std::numbers::pi * f;
    const double u_peak = std::numbers::sqrt2 * profile.u_rms_nominal;
    const double i_peak = profile.current_peak();
    const double i_amp = profile.gain_error * i_peak;
    const double phi = profile.phase();
    const double sigma = profile.noise_stddev * i_peak;

    WaveformFrame frame;
    frame.sample_rate = sample_rate;
    frame.start_time = start_time;
    frame.u_samples.resize(n);
    frame.i_samples.resize(n);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t k = 0; k < n; ++k) {
        const double t = start_time + static_cast<double>(k) / sample_rate;
        frame.u_samples[k] = u_peak * std::sin(omega * t);
        double i = i_amp * std::sin(omega * t - phi);
        if (sigma > 0.0) {
            i += sigma * noise(rng);
        }
        frame.i_samples[k] = i;
    }
    return frame;
}

WaveformFrame relay_gate(WaveformFrame frame, bool relay_closed)
{
    if (!relay_closed) {
        std::fill(frame.i_samples.begin(), frame.i_samples.end(), 0.0);
    }
    return frame;
}

ApplianceFixture fixture_from_json(const nlohmann::json& j)
{
    ApplianceFixture fx;
    auto& p = fx.profile;
    p.name = j.value("name", std::string{});
    p.u_rms_nominal = j.value("u_rms_nominal", 230.0);
    p.p_active = j.at("p_active").get<double>();
    p.s_apparent = j.at("s_apparent").get<double>();
    p.mains_freq = j.value("mains_freq", 50.0);
    p.noise_stddev = j.value("noise_stddev", 0.0);
    p.gain_error = j.value("gain_error", 1.0);
    p.validate();
    fx.table_p = j.value("table_p", p.p_active);
    fx.table_s = j.value("table_s", p.s_apparent);
    if (j.contains("table_q") && !j.at("table_q").is_null()) {
        fx.table_q = j.at("table_q").get<double>();
    }
    return fx;
}

std::vector<ApplianceFixture> load_fixtures(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error(fmt::format("cannot open profile file {}", path.string()));
    }
    const auto doc = nlohmann::json::parse(in);
    std::vector<ApplianceFixture> out;
    if (doc.contains("appliances")) {
        for (const auto& item : doc.at("appliances")) {
            out.push_back(fixture_from_json(item));
        }
    } else {
        out.push_back(fixture_from_json(doc));
    }
    return out;
}

const ApplianceFixture& find_fixture(const std::vector<ApplianceFixture>& fixtures, std::string_view name)
{
    for (const auto& fx : fixtures) {
        if (fx.profile.name == name) {
            return fx;
        }
    }
    throw std::out_of_range(fmt::format("no appliance named '{}'", name));
}

} // namespace yomo
