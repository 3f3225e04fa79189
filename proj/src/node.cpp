#include "yomo/node.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace yomo {

NodeConfig load_node_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error(fmt::format("cannot open node config {}", path.string()));
    }
    const auto j = nlohmann::json::parse(in);
    NodeConfig cfg;
    cfg.meter.meter_id = MeterId::from_hex(j.at("meter_id").get<std::string>());
    cfg.coordinator = Endpoint::parse(j.at("coordinator").get<std::string>());

    const auto& prof = j.at("profile");
    if (prof.is_string()) {
        auto fixtures_path = std::filesystem::path(j.value("fixtures", std::string{"fixtures/appliances.json"}));
        if (fixtures_path.is_relative()) {
            fixtures_path = path.parent_path() / fixtures_path;
        }
        cfg.meter.profile = find_fixture(load_fixtures(fixtures_path), prof.get<std::string>()).profile;
    } else {
        cfg.meter.profile = fixture_from_json(prof).profile;
    }
    cfg.meter.sampling_freq = j.value("sampling_freq", 1000.0);
    cfg.meter.buffer_capacity = j.value("buffer_capacity", std::size_t{4096});
    cfg.meter.window_samples = j.value("window_samples", std::size_t{200});
    cfg.meter.seed = j.value("seed", std::uint64_t{0});
    cfg.options.heartbeat_s = j.value("heartbeat_s", 5.0);
    cfg.options.drain_batch = j.value("drain_batch", std::size_t{64});
    cfg.local_port = j.value("local_port", std::uint16_t{0});
    cfg.duration_s = j.value("duration_s", 0.0);
    validate_sampling_frequency(cfg.meter.sampling_freq, cfg.meter.fs_ceiling);
    return cfg;
}

MeterNode::MeterNode(MeterConfig config, Endpoint coordinator, DatagramSender& sender, const Clock& clock,
                     NodeOptions options)
    : state_(make_meter(config)),
      coordinator_(std::move(coordinator)),
      sender_(sender),
      clock_(clock),
      options_(options),
      epoch_ms_(clock.now_ms())
{
    state_.clock_offset = static_cast<double>(epoch_ms_) / 1000.0;
}

double MeterNode::local_now() const
{
    return static_cast<double>(clock_.now_ms() - epoch_ms_) / 1000.0;
}

bool MeterNode::link_up() const
{
    return last_sync_reply_ && local_now() - *last_sync_reply_ <= 2.0 * options_.heartbeat_s + 1e-3;
}

void MeterNode::send(const wire::Datagram& d)
{
    sender_.send(coordinator_, wire::encode(d));
}

void MeterNode::send_sync_request(double now)
{
    last_sync_sent_ = now;
    send({state_.meter_id, wire::TimeSyncRequest{clock_.now_ms()}});
}

void MeterNode::on_datagram(std::span<const std::uint8_t> bytes)
{
    wire::Datagram d;
    try {
        d = wire::decode(bytes);
    } catch (const wire::DecodeError& e) {
        ++rejected_;
        spdlog::debug("node {}: dropped datagram: {}", state_.meter_id.hex(), e.what());
        return;
    }
    if (d.meter_id != state_.meter_id) {
        ++rejected_;
        return;
    }
    if (const auto* reply = std::get_if<wire::TimeSyncReply>(&d.payload)) {
        const auto received = clock_.now_ms();
        if (received < reply->request_meter_ms) {
            return;
        }
        const double offset_ms = wire::time_sync(reply->request_meter_ms, received, reply->coordinator_time_ms);
        state_.clock_offset = (static_cast<double>(epoch_ms_) + offset_ms) / 1000.0;
        if (!synced_from_seq_) {
            synced_from_seq_ = state_.seq_next;
            first_offset_ms_ = offset_ms;
        }
        last_sync_reply_ = local_now();
        return;
    }
    if (const auto* cmd = std::get_if<wire::CommandPayload>(&d.payload)) {
        if (const auto it = seen_commands_.find(cmd->command_id); it != seen_commands_.end()) {
            // Retransmission of a command we already applied: only re-ack.
            send({state_.meter_id, wire::AckPayload{cmd->command_id, it->second}});
            return;
        }
        if (std::find_if(inbox_.begin(), inbox_.end(),
                         [&](const Command& c) { return c.command_id == cmd->command_id; }) != inbox_.end()) {
            return;
        }
        pending_ops_[cmd->command_id] = cmd->opcode;
        inbox_.push_back(wire::from_wire(*cmd));
    }
}

void MeterNode::transmit(const std::vector<PowerReading>& readings)
{
    for (auto r : readings) {
        if (synced_from_seq_ && r.seq < *synced_from_seq_) {
            r.timestamp_ms += std::llround(first_offset_ms_);
        }
        send({state_.meter_id, wire::to_wire(r)});
        ++transmitted_;
    }
}

void MeterNode::send_ack(const CommandOutcome& outcome, Opcode op)
{
    auto status = wire::AckStatus::Accepted;
    if (!outcome.accepted) {
        status = op == Opcode::SetFs ? wire::AckStatus::RejectedSamplingFrequency : wire::AckStatus::Rejected;
        spdlog::warn("node {}: command {} rejected: {}", state_.meter_id.hex(), outcome.command_id, outcome.reason);
    }
    seen_commands_[outcome.command_id] = status;
    seen_order_.push_back(outcome.command_id);
    while (seen_order_.size() > options_.remembered_commands) {
        seen_commands_.erase(seen_order_.front());
        seen_order_.pop_front();
    }
    send({state_.meter_id, wire::AckPayload{outcome.command_id, status}});
}

void MeterNode::step()
{
    const double now = local_now();
    if (!last_sync_sent_ || now - *last_sync_sent_ >= options_.heartbeat_s) {
        send_sync_request(now);
    }

    while (tick(state_, now)) {
    }

    if (link_up()) {
        transmit(drain_buffer(state_, options_.drain_batch));
    }

    command_window(state_, inbox_);
    for (const auto& outcome : state_.outcomes) {
        const auto it = pending_ops_.find(outcome.command_id);
        const auto op = it == pending_ops_.end() ? Opcode::SwitchOn : it->second;
        if (it != pending_ops_.end()) {
            pending_ops_.erase(it);
        }
        send_ack(outcome, op);
    }
    state_.outcomes.clear();
}

std::size_t MeterNode::flush()
{
    std::size_t n = 0;
    while (!state_.buffer.empty()) {
        const auto batch = drain_buffer(state_, options_.drain_batch);
        n += batch.size();
        transmit(batch);
    }
    return n;
}

} // namespace yomo
