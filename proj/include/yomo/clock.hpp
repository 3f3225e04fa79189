#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>

namespace yomo {

class Clock {
public:
    virtual ~Clock() = default;
    [[nodiscard]] virtual std::int64_t now_ms() const = 0;
    [[nodiscard]] double now_s() const { return static_cast<double>(now_ms()) / 1000.0; }
};

class WallClock final : public Clock {
public:
    [[nodiscard]] std::int64_t now_ms() const override
    {
        using namespace std::chrono;
        return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
    }
};

/// Manually advanced clock for deterministic runs. An optional skew lets two
/// SimClocks disagree by a fixed amount.
class SimClock final : public Clock {
public:
    explicit SimClock(std::int64_t start_ms = 0) : now_(start_ms) {}

    [[nodiscard]] std::int64_t now_ms() const override { return now_.load(std::memory_order_relaxed); }
    void set(std::int64_t ms) { now_.store(ms, std::memory_order_relaxed); }
    void advance(std::int64_t ms) { now_.fetch_add(ms, std::memory_order_relaxed); }

private:
    std::atomic<std::int64_t> now_;
};

/// View of another clock shifted by a constant offset.
class OffsetClock final : public Clock {
public:
    OffsetClock(const Clock& base, std::int64_t offset_ms) : base_(base), offset_(offset_ms) {}
    [[nodiscard]] std::int64_t now_ms() const override { return base_.now_ms() + offset_; }

private:
    const Clock& base_;
    std::int64_t offset_;
};

} // namespace yomo
