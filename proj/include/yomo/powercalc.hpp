#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace yomo {

/// Active (W), reactive (var) and apparent (VA) power of one window.
struct PowerTriplet {
    double active_p = 0.0;
    double reactive_q = 0.0;
    double apparent_s = 0.0;

    friend bool operator==(const PowerTriplet&, const PowerTriplet&) = default;
};

class PowerCalcError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised by phase_shift when either channel carries no signal.
class NoSignalError : public PowerCalcError {
public:
    using PowerCalcError::PowerCalcError;
};

/// Sampling frequency outside [floor, ceiling].
class SamplingFrequencyError : public PowerCalcError {
public:
    SamplingFrequencyError(double offending, const std::string& what)
        : PowerCalcError(what), offending_(offending)
    {
    }
    [[nodiscard]] double offending() const { return offending_; }

private:
    double offending_;
};

inline constexpr double kNyquistFloorHz = 100.0;
inline constexpr double kDefaultFsCeilingHz = 10'000.0;

/// sqrt(mean(x^2)). Needs at least two samples.
double rms(std::span<const double> samples);

/// RMS of a pure sinusoid from its peak: peak / sqrt(2).
double crest_rms(double peak_amplitude);

/// Phase of voltage minus phase of current, in (-pi, pi]. Positive when the
/// current lags.
///
/// The estimate is the lag maximizing the circular cross-correlation
/// sum_n u[n] * i[n + k], searched over +-half a mains period (ties go to the
/// smaller |k|), refined by a parabola through the peak and its neighbours.
/// Only the longest prefix spanning a whole number of mains cycles is used,
/// so the circular wrap stays seamless.
double phase_shift(std::span<const double> u_samples, std::span<const double> i_samples, double sample_rate,
                   double mains_freq);

PowerTriplet power_triplet(double u_rms, double i_rms, double phi);

/// Left-endpoint Riemann sum of active power, one step per sample period.
struct EnergyAccumulator {
    double energy_j = 0.0;
    double step_s = 0.01;
    std::uint64_t sample_count = 0;

    static EnergyAccumulator for_sampling_frequency(double fs) { return {0.0, 1.0 / fs, 0}; }
};

EnergyAccumulator accumulate(EnergyAccumulator acc, double active_p);

/// Returns `f` iff kNyquistFloorHz <= f <= ceiling.
double validate_sampling_frequency(double f, double ceiling = kDefaultFsCeilingHz);

} // namespace yomo
