#include "yomo/powercalc.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <fmt/format.h>

namespace yomo {

double rms(std::span<const double> samples)
{
    if (samples.size() < 2) {
        throw PowerCalcError(fmt::format("rms needs at least 2 samples, got {}", samples.size()));
    }
    double acc = 0.0;
    for (double x : samples) {
        acc += x * x;
    }
    return std::sqrt(acc / static_cast<double>(samples.size()));
}

double crest_rms(double peak_amplitude)
{
    if (peak_amplitude < 0.0) {
        throw PowerCalcError(fmt::format("negative peak amplitude {}", peak_amplitude));
    }
    return peak_amplitude / std::numbers::sqrt2;
}

namespace {

double wrap_angle(double a)
{
    constexpr double two_pi = 2.0 * std::numbers::pi;
    a = std::fmod(a, two_pi);
    if (a <= -std::numbers::pi) {
        a += two_pi;
    } else if (a > std::numbers::pi) {
        a -= two_pi;
    }
    return a;
}

bool all_zero(std::span<const double> xs)
{
    return std::all_of(xs.begin(), xs.end(), [](double x) { return x == 0.0; });
}

} // namespace

double phase_shift(std::span<const double> u_samples, std::span<const double> i_samples, double sample_rate,
                   double mains_freq)
{
    if (u_samples.size() != i_samples.size()) {
        throw PowerCalcError(
            fmt::format("length mismatch: {} voltage vs {} current samples", u_samples.size(), i_samples.size()));
    }
    if (!(mains_freq > 0.0) || !(sample_rate >= 4.0 * mains_freq)) {
        throw PowerCalcError(fmt::format("sample rate {} Hz below 4 x {} Hz", sample_rate, mains_freq));
    }
    const double period_samples = sample_rate / mains_freq;
    const double cycles = std::floor(static_cast<double>(u_samples.size()) / period_samples + 1e-9);
    if (cycles < 2.0) {
        throw PowerCalcError("phase estimation needs at least two mains cycles");
    }
    const auto n = std::min(u_samples.size(), static_cast<std::size_t>(std::llround(cycles * period_samples)));
    const auto u = u_samples.first(n);
    const auto i = i_samples.first(n);
    if (all_zero(u) || all_zero(i)) {
        throw NoSignalError("no signal: phase undefined for an all-zero channel");
    }

    const auto max_lag = static_cast<long>(std::floor(period_samples / 2.0));
    const auto len = static_cast<long>(n);
    auto corr = [&](long k) {
        double acc = 0.0;
        for (long m = 0; m < len; ++m) {
            acc += u[static_cast<std::size_t>(m)] * i[static_cast<std::size_t>(((m + k) % len + len) % len)];
        }
        return acc;
    };

    long best = 0;
    double best_val = corr(0);
    for (long mag = 1; mag <= max_lag; ++mag) {
        for (long k : {mag, -mag}) {
            const double v = corr(k);
            if (v > best_val) {
                best_val = v;
                best = k;
            }
        }
    }

    const double left = corr(best - 1);
    const double right = corr(best + 1);
    const double denom = left - 2.0 * best_val + right;
    double offset = 0.0;
    if (denom < 0.0) {
        offset = std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
    }
    const double tau = (static_cast<double>(best) + offset) / sample_rate;
    return wrap_angle(2.0 * std::numbers::pi * mains_freq * tau);
}

PowerTriplet power_triplet(double u_rms, double i_rms, double phi)
{
    if (u_rms < 0.0 || i_rms < 0.0) {
        throw PowerCalcError(fmt::format("negative RMS input (U={}, I={})", u_rms, i_rms));
    }
    const double s = u_rms * i_rms;
    return {s * std::cos(phi), s * std::sin(phi), s};
}

EnergyAccumulator accumulate(EnergyAccumulator acc, double active_p)
{
    acc.energy_j += active_p * acc.step_s;
    ++acc.sample_count;
    return acc;
}

double validate_sampling_frequency(double f, double ceiling)
{
    if (!(f >= kNyquistFloorHz)) {
        throw SamplingFrequencyError(
            f, fmt::format("sampling frequency {} Hz rejected: must not be less than {} Hz (Nyquist)", f,
                           kNyquistFloorHz));
    }
    if (!(f <= ceiling)) {
        throw SamplingFrequencyError(
            f, fmt::format("sampling frequency {} Hz rejected: above ceiling {} Hz", f, ceiling));
    }
    return f;
}

} // namespace yomo
