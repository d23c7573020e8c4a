#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "flowsight/error.hpp"
#include "flowsight/pcap.hpp"

namespace flowsight {

// One assembled bidirectional flow. Packets are timestamp-ordered and all
// share `key`; direction is relative to `forward_endpoint`, the sender of
// the flow's first packet.
struct FlowBuffer {
  FlowKey key;
  Endpoint forward_endpoint;
  std::uint64_t first_ts_us = 0;
  std::uint64_t activity_timeout_us = 5'000'000;
  std::vector<PacketSummary> packets;

  std::uint64_t last_ts_us() const {
    return packets.empty() ? first_ts_us : packets.back().timestamp_us;
  }
  std::uint64_t duration_us() const { return last_ts_us() - first_ts_us; }
};

struct AssemblerOptions {
  double flow_timeout_s = 600.0;    // packets join while ts - first_ts <= this
  double activity_timeout_s = 5.0;  // active/idle split, carried on the buffer
  double reorder_window_s = 1.0;    // tolerated timestamp disorder
};

namespace detail {

struct OpenFlow {
  FlowBuffer buffer;
  bool fin_forward = false;
  bool fin_backward = false;
  bool closed = false;
  std::uint64_t order = 0;  // emission tie-break: opening order
};

}  // namespace detail

// Groups a timestamp-ordered packet stream into flows. A packet joins the
// open flow with its canonical key while within the flow timeout and the
// flow is not TCP-closed (both FINs or any RST, closing packet included);
// otherwise it opens a new flow and becomes the forward endpoint.
// Packets more than the reorder window out of order are an error.
inline std::vector<FlowBuffer> assemble_flows(
    std::span<const PacketSummary> packets,
    const AssemblerOptions& options = {}) {
  const std::uint64_t flow_timeout_us =
      static_cast<std::uint64_t>(options.flow_timeout_s * 1e6);
  const std::uint64_t activity_timeout_us =
      static_cast<std::uint64_t>(options.activity_timeout_s * 1e6);
  const std::uint64_t reorder_us =
      static_cast<std::uint64_t>(options.reorder_window_s * 1e6);

  std::map<FlowKey, detail::OpenFlow> open;
  std::vector<detail::OpenFlow> done;
  std::uint64_t next_order = 0;

  auto emit = [&](detail::OpenFlow&& flow) { done.push_back(std::move(flow)); };

  auto feed = [&](const PacketSummary& pkt) {
    auto it = open.find(pkt.key);
    bool fresh = false;
    if (it == open.end()) {
      fresh = true;
    } else if (it->second.closed ||
               pkt.timestamp_us - it->second.buffer.first_ts_us > flow_timeout_us) {
      emit(std::move(it->second));
      open.erase(it);
      fresh = true;
    }
    if (fresh) {
      detail::OpenFlow flow;
      flow.buffer.key = pkt.key;
      flow.buffer.forward_endpoint = pkt.src;
      flow.buffer.first_ts_us = pkt.timestamp_us;
      flow.buffer.activity_timeout_us = activity_timeout_us;
      flow.order = next_order++;
      it = open.emplace(pkt.key, std::move(flow)).first;
    }

    detail::OpenFlow& flow = it->second;
    PacketSummary stored = pkt;
    stored.direction = (pkt.src == flow.buffer.forward_endpoint)
                           ? Direction::forward
                           : Direction::backward;
    flow.buffer.packets.push_back(stored);

    if (pkt.key.protocol == Protocol::tcp) {
      if (stored.has_flag(tcp_flag::rst)) flow.closed = true;
      if (stored.has_flag(tcp_flag::fin)) {
        if (stored.direction == Direction::forward)
          flow.fin_forward = true;
        else
          flow.fin_backward = true;
      }
      if (flow.fin_forward && flow.fin_backward) flow.closed = true;
    }
  };

  // Reorder buffer: packets are released once the watermark has moved past
  // them, so ties keep arrival order (multimap preserves insertion order
  // within a key).
  std::multimap<std::uint64_t, PacketSummary> pending;
  std::uint64_t max_ts = 0;
  std::uint64_t released_ts = 0;
  bool any = false;

  for (const PacketSummary& pkt : packets) {
    if (any && pkt.timestamp_us + reorder_us < max_ts)
      throw DataError("packet stream out of order beyond the reorder window");
    if (any && pkt.timestamp_us < released_ts)
      throw DataError("packet stream out of order beyond the reorder window");
    max_ts = any ? std::max(max_ts, pkt.timestamp_us) : pkt.timestamp_us;
    any = true;
    pending.emplace(pkt.timestamp_us, pkt);
    while (!pending.empty() &&
           pending.begin()->first + reorder_us <= max_ts) {
      released_ts = pending.begin()->first;
      feed(pending.begin()->second);
      pending.erase(pending.begin());
    }
  }
  for (auto& [ts, pkt] : pending) feed(pkt);

  for (auto& [key, flow] : open) done.push_back(std::move(flow));
  std::sort(done.begin(), done.end(),
            [](const detail::OpenFlow& x, const detail::OpenFlow& y) {
              if (x.buffer.first_ts_us != y.buffer.first_ts_us)
                return x.buffer.first_ts_us < y.buffer.first_ts_us;
              return x.order < y.order;
            });
  std::vector<FlowBuffer> result;
  result.reserve(done.size());
  for (detail::OpenFlow& flow : done) result.push_back(std::move(flow.buffer));
  return result;
}

}  // namespace flowsight
