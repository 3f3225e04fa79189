#include "yomo/protocol.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <zlib.h>

namespace yomo::wire {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void be(std::uint64_t v, int width)
    {
        for (int k = width - 1; k >= 0; --k) {
            out_.push_back(static_cast<std::uint8_t>((v >> (8 * k)) & 0xFF));
        }
    }
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    std::vector<std::uint8_t>& buffer() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint64_t be(int width)
    {
        const auto w = static_cast<std::size_t>(width);
        if (pos_ + w > data_.size()) {
            throw DecodeError(DecodeErrorClass::Truncated, "payload truncated");
        }
        std::uint64_t v = 0;
        for (std::size_t k = 0; k < w; ++k) {
            v = (v << 8) | data_[pos_ + k];
        }
        pos_ += w;
        return v;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(be(1)); }
    std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(be(4))); }
    [[nodiscard]] std::size_t remaining() const { return data_.size() - pos_; }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

void check_range(const char* field, std::int64_t v, std::int64_t lo, std::int64_t hi)
{
    if (v < lo || v > hi) {
        throw EncodeRangeError(field, fmt::format("field '{}' value {} outside [{}, {}]", field, v, lo, hi));
    }
}

constexpr std::int64_t kU32Max = std::numeric_limits<std::uint32_t>::max();
constexpr std::int64_t kI32Min = std::numeric_limits<std::int32_t>::min();
constexpr std::int64_t kI32Max = std::numeric_limits<std::int32_t>::max();
constexpr std::int64_t kI64Max = std::numeric_limits<std::int64_t>::max();

bool valid_opcode(std::uint8_t op) { return op >= 0x01 && op <= 0x05; }

void write_payload(Writer& w, const MeasurementPayload& m)
{
    check_range("timestamp_ms", m.timestamp_ms, 0, kI64Max);
    check_range("v_rms", m.v_rms_mv, 0, kU32Max);
    check_range("i_rms", m.i_rms_ma, 0, kU32Max);
    check_range("phi", m.phi_urad, kI32Min, kI32Max);
    check_range("p", m.p_mw, kI32Min, kI32Max);
    check_range("q", m.q_mvar, kI32Min, kI32Max);
    check_range("s", m.s_mva, 0, kU32Max);
    check_range("energy", m.energy_mj, 0, kI64Max);
    check_range("flags", m.flags, 0, kFlagRelayClosed | kFlagSleeping);
    w.be(m.seq, 4);
    w.be(static_cast<std::uint64_t>(m.timestamp_ms), 8);
    w.be(static_cast<std::uint64_t>(m.v_rms_mv), 4);
    w.be(static_cast<std::uint64_t>(m.i_rms_ma), 4);
    w.be(static_cast<std::uint32_t>(static_cast<std::int32_t>(m.phi_urad)), 4);
    w.be(static_cast<std::uint32_t>(static_cast<std::int32_t>(m.p_mw)), 4);
    w.be(static_cast<std::uint32_t>(static_cast<std::int32_t>(m.q_mvar)), 4);
    w.be(static_cast<std::uint64_t>(m.s_mva), 4);
    w.be(static_cast<std::uint64_t>(m.energy_mj), 8);
    w.u8(m.flags);
}

void write_payload(Writer& w, const CommandPayload& c)
{
    const auto op = static_cast<std::uint8_t>(c.opcode);
    if (!valid_opcode(op)) {
        throw EncodeRangeError("opcode", fmt::format("opcode {} outside 1..5", op));
    }
    if (c.opcode != Opcode::SetFs && c.argument != 0) {
        throw EncodeRangeError("argument", fmt::format("{} carries non-zero argument {}", opcode_name(c.opcode),
                                                       c.argument));
    }
    w.u8(op);
    w.be(c.argument, 4);
    w.be(c.command_id, 4);
}

void write_payload(Writer& w, const AckPayload& a)
{
    const auto st = static_cast<std::uint8_t>(a.status);
    if (st > static_cast<std::uint8_t>(AckStatus::Rejected)) {
        throw EncodeRangeError("status", fmt::format("ack status {} unknown", st));
    }
    w.be(a.command_id, 4);
    if (a.status != AckStatus::Accepted) {
        w.u8(st);
    }
}

void write_payload(Writer& w, const TimeSyncRequest& r)
{
    check_range("meter_time_ms", r.meter_time_ms, 0, kI64Max);
    w.be(static_cast<std::uint64_t>(r.meter_time_ms), 8);
}

void write_payload(Writer& w, const TimeSyncReply& r)
{
    check_range("request_meter_ms", r.request_meter_ms, 0, kI64Max);
    check_range("coordinator_time_ms", r.coordinator_time_ms, 0, kI64Max);
    w.be(static_cast<std::uint64_t>(r.request_meter_ms), 8);
    w.be(static_cast<std::uint64_t>(r.coordinator_time_ms), 8);
}

std::int64_t read_i64_nonneg(Reader& r, const char* field)
{
    const auto v = r.be(8);
    if (v > static_cast<std::uint64_t>(kI64Max)) {
        throw DecodeError(DecodeErrorClass::Malformed, fmt::format("field '{}' exceeds 2^63-1", field));
    }
    return static_cast<std::int64_t>(v);
}

Payload read_payload(Kind kind, Reader& r)
{
    switch (kind) {
    case Kind::Measurement: {
        MeasurementPayload m;
        m.seq = static_cast<std::uint32_t>(r.be(4));
        m.timestamp_ms = read_i64_nonneg(r, "timestamp_ms");
        m.v_rms_mv = static_cast<std::int64_t>(r.be(4));
        m.i_rms_ma = static_cast<std::int64_t>(r.be(4));
        m.phi_urad = r.i32();
        m.p_mw = r.i32();
        m.q_mvar = r.i32();
        m.s_mva = static_cast<std::int64_t>(r.be(4));
        m.energy_mj = read_i64_nonneg(r, "energy");
        m.flags = r.u8();
        if ((m.flags & ~(kFlagRelayClosed | kFlagSleeping)) != 0) {
            throw DecodeError(DecodeErrorClass::Malformed, fmt::format("reserved flag bits set: 0x{:02x}", m.flags));
        }
        return m;
    }
    case Kind::Command: {
        const auto op = r.u8();
        CommandPayload c;
        c.argument = static_cast<std::uint32_t>(r.be(4));
        c.command_id = static_cast<std::uint32_t>(r.be(4));
        if (!valid_opcode(op)) {
            throw DecodeError(DecodeErrorClass::UnknownOpcode, fmt::format("unknown opcode 0x{:02x}", op));
        }
        c.opcode = static_cast<Opcode>(op);
        if (c.opcode != Opcode::SetFs && c.argument != 0) {
            throw DecodeError(DecodeErrorClass::Malformed,
                              fmt::format("{} with non-zero argument", opcode_name(c.opcode)));
        }
        return c;
    }
    case Kind::Ack: {
        AckPayload a;
        a.command_id = static_cast<std::uint32_t>(r.be(4));
        if (r.remaining() > 0) {
            const auto st = r.u8();
            if (st == 0 || st > static_cast<std::uint8_t>(AckStatus::Rejected)) {
                throw DecodeError(DecodeErrorClass::Malformed, fmt::format("bad ack status 0x{:02x}", st));
            }
            a.status = static_cast<AckStatus>(st);
        }
        return a;
    }
    case Kind::TimeSyncRequest:
        return TimeSyncRequest{read_i64_nonneg(r, "meter_time_ms")};
    case Kind::TimeSyncReply: {
        TimeSyncReply rep;
        rep.request_meter_ms = read_i64_nonneg(r, "request_meter_ms");
        rep.coordinator_time_ms = read_i64_nonneg(r, "coordinator_time_ms");
        return rep;
    }
    }
    throw DecodeError(DecodeErrorClass::UnknownKind, "unknown kind");
}

} // namespace

Kind Datagram::kind() const
{
    return static_cast<Kind>(payload.index() + 1);
}

std::string_view error_class_name(DecodeErrorClass c)
{
    switch (c) {
    case DecodeErrorClass::Truncated:
        return "truncated";
    case DecodeErrorClass::CrcMismatch:
        return "crc_errors";
    case DecodeErrorClass::BadMagic:
        return "bad_magic";
    case DecodeErrorClass::UnsupportedVersion:
        return "unsupported_version";
    case DecodeErrorClass::UnknownKind:
        return "unknown_kind";
    case DecodeErrorClass::UnknownOpcode:
        return "unknown_opcode";
    case DecodeErrorClass::Malformed:
        return "malformed";
    }
    return "unknown";
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes)
{
    return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::vector<std::uint8_t> encode(const Datagram& d)
{
    Writer w;
    w.u8(kMagic0);
    w.u8(kMagic1);
    w.u8(kVersion);
    w.u8(static_cast<std::uint8_t>(d.kind()));
    w.bytes(d.meter_id.bytes);
    std::visit([&](const auto& p) { write_payload(w, p); }, d.payload);
    auto& out = w.buffer();
    const auto crc = crc32(out);
    w.be(crc, 4);
    if (out.size() > kMaxDatagram) {
        throw EncodeRangeError("datagram", fmt::format("datagram of {} bytes exceeds {}", out.size(), kMaxDatagram));
    }
    return std::move(out);
}

Datagram decode(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < kHeaderSize + kCrcSize) {
        throw DecodeError(DecodeErrorClass::Truncated, fmt::format("datagram of {} bytes too short", bytes.size()));
    }
    if (bytes.size() > kMaxDatagram) {
        throw DecodeError(DecodeErrorClass::Malformed, fmt::format("datagram of {} bytes too long", bytes.size()));
    }
    const auto body = bytes.first(bytes.size() - kCrcSize);
    const auto tail = bytes.last(kCrcSize);
    const std::uint32_t stored = (std::uint32_t{tail[0]} << 24) | (std::uint32_t{tail[1]} << 16) |
                                 (std::uint32_t{tail[2]} << 8) | std::uint32_t{tail[3]};
    const auto computed = crc32(body);
    if (stored != computed) {
        throw DecodeError(DecodeErrorClass::CrcMismatch,
                          fmt::format("crc mismatch: stored {:08x}, computed {:08x}", stored, computed));
    }
    if (body[0] != kMagic0 || body[1] != kMagic1) {
        throw DecodeError(DecodeErrorClass::BadMagic, fmt::format("bad magic {:02x}{:02x}", body[0], body[1]));
    }
    if (body[2] != kVersion) {
        throw DecodeError(DecodeErrorClass::UnsupportedVersion, fmt::format("unsupported version {}", body[2]));
    }
    const auto kind_byte = body[3];
    if (kind_byte < 0x01 || kind_byte > 0x05) {
        throw DecodeError(DecodeErrorClass::UnknownKind, fmt::format("unknown kind 0x{:02x}", kind_byte));
    }
    Datagram d;
    std::copy_n(body.begin() + 4, 8, d.meter_id.bytes.begin());
    Reader r(body.subspan(kHeaderSize));
    d.payload = read_payload(static_cast<Kind>(kind_byte), r);
    if (r.remaining() != 0) {
        throw DecodeError(DecodeErrorClass::Malformed, fmt::format("{} trailing payload bytes", r.remaining()));
    }
    return d;
}

double time_sync(std::int64_t request_sent_ms, std::int64_t reply_received_ms, std::int64_t coordinator_time_ms)
{
    if (reply_received_ms < request_sent_ms) {
        throw std::invalid_argument(
            fmt::format("negative round trip: sent {} ms, received {} ms", request_sent_ms, reply_received_ms));
    }
    const double rtt = static_cast<double>(reply_received_ms - request_sent_ms);
    return static_cast<double>(coordinator_time_ms) + rtt / 2.0 - static_cast<double>(reply_received_ms);
}

namespace {
std::int64_t milli(double v) { return std::llround(v * 1000.0); }
} // namespace

MeasurementPayload to_wire(const PowerReading& r)
{
    MeasurementPayload m;
    m.seq = r.seq;
    m.timestamp_ms = r.timestamp_ms;
    m.v_rms_mv = milli(r.v_rms);
    m.i_rms_ma = milli(r.i_rms);
    m.phi_urad = std::llround(r.phi * 1e6);
    m.p_mw = milli(r.triplet.active_p);
    m.q_mvar = milli(r.triplet.reactive_q);
    m.s_mva = milli(r.triplet.apparent_s);
    m.energy_mj = milli(r.energy_j);
    m.flags = static_cast<std::uint8_t>((r.relay_closed ? kFlagRelayClosed : 0) | (r.sleeping ? kFlagSleeping : 0));
    return m;
}

PowerReading from_wire(const MeterId& meter_id, const MeasurementPayload& m)
{
    PowerReading r;
    r.meter_id = meter_id;
    r.seq = m.seq;
    r.timestamp_ms = m.timestamp_ms;
    r.v_rms = static_cast<double>(m.v_rms_mv) / 1000.0;
    r.i_rms = static_cast<double>(m.i_rms_ma) / 1000.0;
    r.phi = static_cast<double>(m.phi_urad) / 1e6;
    r.triplet = {static_cast<double>(m.p_mw) / 1000.0, static_cast<double>(m.q_mvar) / 1000.0,
                 static_cast<double>(m.s_mva) / 1000.0};
    r.energy_j = static_cast<double>(m.energy_mj) / 1000.0;
    r.relay_closed = (m.flags & kFlagRelayClosed) != 0;
    r.sleeping = (m.flags & kFlagSleeping) != 0;
    return r;
}

CommandPayload to_wire(const Command& c)
{
    CommandPayload p;
    p.opcode = c.op;
    p.command_id = c.command_id;
    if (c.op == Opcode::SetFs) {
        const double deci = std::round(c.fs_hz * 10.0);
        if (!(deci >= 0.0 && deci <= static_cast<double>(kU32Max))) {
            throw EncodeRangeError("argument", fmt::format("sampling frequency {} Hz does not fit", c.fs_hz));
        }
        p.argument = static_cast<std::uint32_t>(deci);
    }
    return p;
}

Command from_wire(const CommandPayload& p)
{
    Command c;
    c.op = p.opcode;
    c.command_id = p.command_id;
    c.fs_hz = p.opcode == Opcode::SetFs ? static_cast<double>(p.argument) / 10.0 : 0.0;
    return c;
}

std::string to_hex(std::span<const std::uint8_t> bytes)
{
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out += fmt::format("{:02x}", b);
    }
    return out;
}

std::vector<std::uint8_t> from_hex(std::string_view text)
{
    std::vector<std::uint8_t> out;
    int pending = -1;
    for (char c : text) {
        if (c == ' ' || c == '\n' || c == '\r' || c == '\t') {
            continue;
        }
        int d = 0;
        if (c >= '0' && c <= '9') {
            d = c - '0';
        } else if (c >= 'a' && c <= 'f') {
            d = c - 'a' + 10;
        } else if (c >= 'A' && c <= 'F') {
            d = c - 'A' + 10;
        } else {
            throw std::invalid_argument(fmt::format("non-hex character '{}'", c));
        }
        if (pending < 0) {
            pending = d;
        } else {
            out.push_back(static_cast<std::uint8_t>((pending << 4) | d));
            pending = -1;
        }
    }
    if (pending >= 0) {
        throw std::invalid_argument("odd number of hex digits");
    }
    return out;
}

} // namespace yomo::wire
