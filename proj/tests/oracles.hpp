#pragma once

// Independent reference computations used only by tests. These deliberately
// avoid the library's implementation paths.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace oracle {

inline double rms(std::span<const double> xs)
{
    long double acc = 0.0L;
    for (double x : xs) {
        acc += static_cast<long double>(x) * x;
    }
    return static_cast<double>(std::sqrt(acc / static_cast<long double>(xs.size())));
}

/// Plain discrete argmax of the linear cross-correlation, normalised by the
/// overlap, over lags within +-half a period. No interpolation.
inline double phase_by_argmax(std::span<const double> u, std::span<const double> i, double fs, double mains)
{
    const auto n = static_cast<long>(u.size());
    const auto half = static_cast<long>(fs / mains / 2.0);
    long best = 0;
    double best_val = -1e300;
    for (long k = -half; k <= half; ++k) {
        double acc = 0.0;
        long count = 0;
        for (long m = 0; m < n; ++m) {
            const long j = m + k;
            if (j < 0 || j >= n) {
                continue;
            }
            acc += u[static_cast<std::size_t>(m)] * i[static_cast<std::size_t>(j)];
            ++count;
        }
        const double v = acc / static_cast<double>(count);
        if (v > best_val + 1e-12 || (std::abs(v - best_val) <= 1e-12 && std::abs(k) < std::abs(best))) {
            best_val = v;
            best = k;
        }
    }
    return 2.0 * std::numbers::pi * mains * static_cast<double>(best) / fs;
}

/// Dense reference from the closed forms: correlate `cycles` whole periods of
/// u with i evaluated at every shifted instant (no window edges, no
/// wrap-around), lags within +-half a period, discrete argmax at `dense_fs`.
template <typename U, typename I>
double dense_phase(U u_of_t, I i_of_t, double cycles, double mains, double dense_fs)
{
    const auto n = static_cast<long>(std::llround(cycles * dense_fs / mains));
    const auto half = static_cast<long>(dense_fs / mains / 2.0);
    std::vector<double> u(static_cast<std::size_t>(n));
    std::vector<double> i(static_cast<std::size_t>(n + 2 * half + 1));
    for (long k = 0; k < n; ++k) {
        u[static_cast<std::size_t>(k)] = u_of_t(static_cast<double>(k) / dense_fs);
    }
    for (long k = -half; k <= n + half; ++k) {
        i[static_cast<std::size_t>(k + half)] = i_of_t(static_cast<double>(k) / dense_fs);
    }
    long best = 0;
    double best_val = -1e300;
    for (long lag = -half; lag <= half; ++lag) {
        double acc = 0.0;
        for (long m = 0; m < n; ++m) {
            acc += u[static_cast<std::size_t>(m)] * i[static_cast<std::size_t>(m + lag + half)];
        }
        if (acc > best_val * (1.0 + 1e-12) || (std::abs(acc - best_val) <= 1e-12 * std::abs(best_val) &&
                                               std::abs(lag) < std::abs(best))) {
            best_val = acc;
            best = lag;
        }
    }
    return 2.0 * std::numbers::pi * mains * static_cast<double>(best) / dense_fs;
}

} // namespace oracle
