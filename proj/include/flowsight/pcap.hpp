#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flowsight/error.hpp"

namespace flowsight {

enum class Protocol : std::uint8_t { tcp = 6, udp = 17 };
enum class Direction : std::uint8_t { forward, backward };

// TCP flag bits as laid out in the wire octet.
namespace tcp_flag {
inline constexpr std::uint8_t fin = 0x01;
inline constexpr std::uint8_t syn = 0x02;
inline constexpr std::uint8_t rst = 0x04;
inline constexpr std::uint8_t psh = 0x08;
inline constexpr std::uint8_t ack = 0x10;
inline constexpr std::uint8_t urg = 0x20;
inline constexpr std::uint8_t ece = 0x40;
inline constexpr std::uint8_t cwr = 0x80;
}  // namespace tcp_flag

struct Endpoint {
  std::uint32_t addr = 0;  // IPv4, host byte order
  std::uint16_t port = 0;

  friend auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

// Bidirectional 5-tuple, canonicalized so a packet and its reply share a key.
struct FlowKey {
  Endpoint a;
  Endpoint b;
  Protocol protocol = Protocol::tcp;

  friend auto operator<=>(const FlowKey&, const FlowKey&) = default;

  static FlowKey canonical(Endpoint src, Endpoint dst, Protocol proto) {
    FlowKey key;
    key.protocol = proto;
    if (src <= dst) {
      key.a = src;
      key.b = dst;
    } else {
      key.a = dst;
      key.b = src;
    }
    return key;
  }
};

struct PacketSummary {
  std::uint64_t timestamp_us = 0;  // microseconds since epoch
  FlowKey key;
  Endpoint src;  // sender of this packet; direction is derived from it
  Direction direction = Direction::forward;
  std::uint32_t ip_total_len = 0;
  std::uint32_t l4_header_len = 0;
  std::uint32_t payload_len = 0;
  std::uint8_t tcp_flags = 0;  // 0 for UDP
  std::optional<std::uint32_t> tcp_window;

  bool is_tcp() const { return key.protocol == Protocol::tcp; }
  bool has_flag(std::uint8_t mask) const { return (tcp_flags & mask) != 0; }
};

struct PcapResult {
  std::vector<PacketSummary> packets;
  std::uint64_t skipped = 0;  // non-IPv4 / non-TCP-UDP frames
  bool truncated = false;     // last record was cut short; stream stopped there
};

namespace detail {

inline std::uint16_t read_u16(const std::uint8_t* p, bool swap) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  if (swap) v = static_cast<std::uint16_t>((v >> 8) | (v << 8));
  return v;
}

inline std::uint32_t read_u32(const std::uint8_t* p, bool swap) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  if (swap) v = __builtin_bswap32(v);
  return v;
}

inline std::uint16_t read_be16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

inline std::uint32_t read_be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

}  // namespace detail

// Reads a classic pcap file (both endians, microsecond and nanosecond
// variants; Ethernet link type) and summarizes every IPv4 TCP/UDP packet.
// Other frames are skipped and counted. Directions are assigned relative to
// the first sender seen for each canonical key.
inline PcapResult read_pcap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open capture file: " + path);

  std::uint8_t ghdr[24];
  in.read(reinterpret_cast<char*>(ghdr), 24);
  if (in.gcount() != 24) throw DataError("malformed pcap global header: " + path);

  std::uint32_t magic = detail::read_u32(ghdr, false);
  bool swap = false;
  bool nanos = false;
  switch (magic) {
    case 0xA1B2C3D4u: break;
    case 0xD4C3B2A1u: swap = true; break;
    case 0xA1B23C4Du: nanos = true; break;
    case 0x4D3CB2A1u: swap = true; nanos = true; break;
    default:
      throw DataError("malformed pcap global header (bad magic): " + path);
  }
  std::uint32_t link_type = detail::read_u32(ghdr + 20, swap);
  if (link_type != 1)  // LINKTYPE_ETHERNET
    throw DataError("unsupported pcap link type " + std::to_string(link_type) +
                    " (only Ethernet is supported)");

  PcapResult result;
  std::map<FlowKey, Endpoint> first_sender;
  std::vector<std::uint8_t> data;

  for (;;) {
    std::uint8_t rhdr[16];
    in.read(reinterpret_cast<char*>(rhdr), 16);
    if (in.gcount() == 0) break;  // clean EOF
    if (in.gcount() != 16) {
      result.truncated = true;
      break;
    }
    std::uint64_t ts_sec = detail::read_u32(rhdr, swap);
    std::uint64_t ts_sub = detail::read_u32(rhdr + 4, swap);
    std::uint32_t incl_len = detail::read_u32(rhdr + 8, swap);

    data.resize(incl_len);
    in.read(reinterpret_cast<char*>(data.data()), incl_len);
    if (static_cast<std::uint32_t>(in.gcount()) != incl_len) {
      result.truncated = true;
      break;
    }

    std::uint64_t ts_us = ts_sec * 1000000ULL + (nanos ? ts_sub / 1000 : ts_sub);

    // Ethernet header, with optional single 802.1Q tag.
    if (incl_len < 14) {
      ++result.skipped;
      continue;
    }
    std::size_t off = 12;
    std::uint16_t ethertype = detail::read_be16(&data[off]);
    off += 2;
    if (ethertype == 0x8100 && incl_len >= 18) {
      off += 2;
      ethertype = detail::read_be16(&data[off]);
      off += 2;
    }
    if (ethertype != 0x0800) {  // not IPv4 (ARP, IPv6, ... all counted)
      ++result.skipped;
      continue;
    }

    if (data.size() < off + 20) {
      ++result.skipped;
      continue;
    }
    const std::uint8_t* ip = &data[off];
    if ((ip[0] >> 4) != 4) {
      ++result.skipped;
      continue;
    }
    std::uint32_t ihl = static_cast<std::uint32_t>(ip[0] & 0x0F) * 4;
    if (ihl < 20 || data.size() < off + ihl) {
      ++result.skipped;
      continue;
    }
    std::uint16_t total_len = detail::read_be16(ip + 2);
    std::uint16_t frag = detail::read_be16(ip + 6);
    if ((frag & 0x1FFF) != 0) {  // non-first fragment: no L4 header
      ++result.skipped;
      continue;
    }
    std::uint8_t proto = ip[9];
    if (proto != 6 && proto != 17) {
      ++result.skipped;
      continue;
    }

    const std::uint8_t* l4 = ip + ihl;
    std::size_t l4_avail = data.size() - off - ihl;

    PacketSummary pkt;
    pkt.timestamp_us = ts_us;
    pkt.ip_total_len = total_len;
    Endpoint src{detail::read_be32(ip + 12), 0};
    Endpoint dst{detail::read_be32(ip + 16), 0};

    if (proto == 6) {
      if (l4_avail < 20) {
        ++result.skipped;
        continue;
      }
      src.port = detail::read_be16(l4);
      dst.port = detail::read_be16(l4 + 2);
      std::uint32_t data_offset = static_cast<std::uint32_t>(l4[12] >> 4) * 4;
      if (data_offset < 20) {
        ++result.skipped;
        continue;
      }
      pkt.l4_header_len = data_offset;
      pkt.tcp_flags = l4[13];
      pkt.tcp_window = detail::read_be16(l4 + 14);
      pkt.key = FlowKey::canonical(src, dst, Protocol::tcp);
    } else {
      if (l4_avail < 8) {
        ++result.skipped;
        continue;
      }
      src.port = detail::read_be16(l4);
      dst.port = detail::read_be16(l4 + 2);
      pkt.l4_header_len = 8;
      pkt.key = FlowKey::canonical(src, dst, Protocol::udp);
    }

    std::uint32_t header_total = ihl + pkt.l4_header_len;
    pkt.payload_len = total_len > header_total ? total_len - header_total : 0;
    pkt.src = src;

    auto [it, inserted] = first_sender.try_emplace(pkt.key, src);
    pkt.direction = (src == it->second) ? Direction::forward : Direction::backward;

    result.packets.push_back(pkt);
  }
  return result;
}

}  // namespace flowsight
