#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "yomo/monitor.hpp"

namespace yomo::wire {

// Layout (all integers big-endian):
//   magic "YM" | version | kind | meter_id[8] | payload | crc32
// The CRC (IEEE 802.3) covers every byte before it.

inline constexpr std::uint8_t kMagic0 = 0x59;
inline constexpr std::uint8_t kMagic1 = 0x4D;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 12;
inline constexpr std::size_t kCrcSize = 4;
inline constexpr std::size_t kMaxDatagram = 512;

enum class Kind : std::uint8_t {
    Measurement = 0x01,
    Command = 0x02,
    Ack = 0x03,
    TimeSyncRequest = 0x04,
    TimeSyncReply = 0x05,
};

inline constexpr std::uint8_t kFlagRelayClosed = 0x01;
inline constexpr std::uint8_t kFlagSleeping = 0x02;

/// Milli-unit integers. Fields are wider than their wire slots so that
/// out-of-range values surface as EncodeRangeError instead of wrapping.
struct MeasurementPayload {
    std::uint32_t seq = 0;
    std::int64_t timestamp_ms = 0; // u64
    std::int64_t v_rms_mv = 0;     // u32
    std::int64_t i_rms_ma = 0;     // u32
    std::int64_t phi_urad = 0;     // i32
    std::int64_t p_mw = 0;         // i32
    std::int64_t q_mvar = 0;       // i32
    std::int64_t s_mva = 0;        // u32
    std::int64_t energy_mj = 0;    // u64
    std::uint8_t flags = 0;

    friend bool operator==(const MeasurementPayload&, const MeasurementPayload&) = default;
};

struct CommandPayload {
    Opcode opcode = Opcode::SwitchOn;
    std::uint32_t argument = 0; // SET_FS: hertz x 10
    std::uint32_t command_id = 0;

    friend bool operator==(const CommandPayload&, const CommandPayload&) = default;
};

enum class AckStatus : std::uint8_t {
    Accepted = 0x00,
    RejectedSamplingFrequency = 0x01,
    Rejected = 0x02,
};

/// Accepted acks carry only the command id; a status byte follows only for
/// rejections.
struct AckPayload {
    std::uint32_t command_id = 0;
    AckStatus status = AckStatus::Accepted;

    friend bool operator==(const AckPayload&, const AckPayload&) = default;
};

struct TimeSyncRequest {
    std::int64_t meter_time_ms = 0;

    friend bool operator==(const TimeSyncRequest&, const TimeSyncRequest&) = default;
};

struct TimeSyncReply {
    std::int64_t request_meter_ms = 0; // echoed
    std::int64_t coordinator_time_ms = 0;

    friend bool operator==(const TimeSyncReply&, const TimeSyncReply&) = default;
};

using Payload = std::variant<MeasurementPayload, CommandPayload, AckPayload, TimeSyncRequest, TimeSyncReply>;

struct Datagram {
    MeterId meter_id;
    Payload payload;

    [[nodiscard]] Kind kind() const;

    friend bool operator==(const Datagram&, const Datagram&) = default;
};

enum class DecodeErrorClass : std::uint8_t {
    Truncated,
    CrcMismatch,
    BadMagic,
    UnsupportedVersion,
    UnknownKind,
    UnknownOpcode,
    Malformed,
};
inline constexpr std::size_t kDecodeErrorClassCount = 7;

std::string_view error_class_name(DecodeErrorClass c);

class DecodeError : public std::runtime_error {
public:
    DecodeError(DecodeErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
    [[nodiscard]] DecodeErrorClass error_class() const { return cls_; }

private:
    DecodeErrorClass cls_;
};

class EncodeRangeError : public std::out_of_range {
public:
    EncodeRangeError(std::string field, const std::string& what) : std::out_of_range(what), field_(std::move(field))
    {
    }
    [[nodiscard]] const std::string& field() const { return field_; }

private:
    std::string field_;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode(const Datagram& datagram);
/// Never reads outside `bytes`; every failure is a DecodeError.
Datagram decode(std::span<const std::uint8_t> bytes);

/// Midpoint clock offset (ms) from one request/reply exchange:
/// coordinator_time + rtt/2 - reply_received.
double time_sync(std::int64_t request_sent_ms, std::int64_t reply_received_ms, std::int64_t coordinator_time_ms);

MeasurementPayload to_wire(const PowerReading& reading);
PowerReading from_wire(const MeterId& meter_id, const MeasurementPayload& payload);

/// Throws EncodeRangeError if the frequency does not fit the argument field.
CommandPayload to_wire(const Command& command);
Command from_wire(const CommandPayload& payload);

std::string to_hex(std::span<const std::uint8_t> bytes);
/// Ignores whitespace; throws std::invalid_argument on odd length or non-hex.
std::vector<std::uint8_t> from_hex(std::string_view text);

} // namespace yomo::wire
