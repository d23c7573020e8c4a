#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowsight/error.hpp"
#include "flowsight/flow.hpp"

namespace flowsight {

inline constexpr std::size_t kFeatureCount = 77;

// Flow feature columns, in the reference flow meter's layout. The final 14
// (from kRedListStart on) are emitted for column completeness but excluded
// from every analysis and model by prune_static.
inline const std::array<std::string, kFeatureCount>& feature_names() {
  static const std::array<std::string, kFeatureCount> names = {
      "Flow Duration",
      "Tot Fwd Pkts",
      "Tot Bwd Pkts",
      "TotLen Fwd Pkts",
      "TotLen Bwd Pkts",
      "Fwd Pkt Len Max",
      "Fwd Pkt Len Min",
      "Fwd Pkt Len Mean",
      "Fwd Pkt Len Std",
      "Bwd Pkt Len Max",
      "Bwd Pkt Len Min",
      "Bwd Pkt Len Mean",
      "Bwd Pkt Len Std",
      "Flow Byts/s",
      "Flow Pkts/s",
      "Flow IAT Mean",
      "Flow IAT Std",
      "Flow IAT Max",
      "Flow IAT Min",
      "Fwd IAT Max",
      "Fwd IAT Min",
      "Fwd IAT Mean",
      "Fwd IAT Std",
      "Fwd IAT Tot",
      "Bwd IAT Min",
      "Bwd IAT Max",
      "Bwd IAT Mean",
      "Bwd IAT Std",
      "Bwd IAT Tot",
      "Fwd Header Len",
      "Bwd Header Len",
      "Fwd Pkts/s",
      "Bwd Pkts/s",
      "Pkt Len Min",
      "Pkt Len Max",
      "Pkt Len Mean",
      "Pkt Len Std",
      "Pkt Len Var",
      "Down/Up Ratio",
      "Pkt Size Avg",
      "Fwd Header Len.1",
      "Fwd Seg Size Avg",
      "Bwd Seg Size Avg",
      "Bwd PSH Flags",
      "FIN Flag Cnt",
      "SYN Flag Cnt",
      "RST Flag Cnt",
      "PSH Flag Cnt",
      "ACK Flag Cnt",
      "Subflow Fwd Pkts",
      "Subflow Fwd Byts",
      "Subflow Bwd Pkts",
      "Subflow Bwd Byts",
      "Init Bwd Win Byts",
      "Fwd Act Data Pkts",
      "Active Min",
      "Active Mean",
      "Active Max",
      "Active Std",
      "Idle Min",
      "Idle Mean",
      "Idle Max",
      "Idle Std",
      "Fwd PSH Flags",
      "Fwd URG Flags",
      "Bwd URG Flags",
      "URG Flag Cnt",
      "CWR Flag Cnt",
      "ECE Flag Cnt",
      "Fwd Byts/b Avg",
      "Fwd Pkts/b Avg",
      "Fwd Blk Rate Avg",
      "Bwd Byts/b Avg",
      "Bwd Pkts/b Avg",
      "Bwd Blk Rate Avg",
      "Init Fwd Win Byts",
      "Fwd Seg Size Min",
  };
  return names;
}

inline constexpr std::size_t kRedListStart = 63;

namespace feat {
inline constexpr std::size_t flow_duration = 0;
inline constexpr std::size_t tot_fwd_pkts = 1;
inline constexpr std::size_t tot_bwd_pkts = 2;
inline constexpr std::size_t totlen_fwd_pkts = 3;
inline constexpr std::size_t totlen_bwd_pkts = 4;
inline constexpr std::size_t flow_byts_s = 13;
inline constexpr std::size_t flow_pkts_s = 14;
inline constexpr std::size_t flow_iat_mean = 15;
inline constexpr std::size_t flow_iat_std = 16;
inline constexpr std::size_t flow_iat_max = 17;
inline constexpr std::size_t flow_iat_min = 18;
inline constexpr std::size_t fwd_header_len = 29;
inline constexpr std::size_t bwd_header_len = 30;
inline constexpr std::size_t fwd_pkts_s = 31;
inline constexpr std::size_t bwd_pkts_s = 32;
inline constexpr std::size_t down_up_ratio = 38;
inline constexpr std::size_t subflow_fwd_byts = 50;
inline constexpr std::size_t init_bwd_win_byts = 53;
inline constexpr std::size_t fwd_act_data_pkts = 54;
inline constexpr std::size_t urg_flag_cnt = 66;
inline constexpr std::size_t init_fwd_win_byts = 75;
}  // namespace feat

inline std::size_t feature_index(const std::string& name) {
  const auto& names = feature_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw ValidationError("unknown feature name: " + name);
}

using FeatureVector = std::array<double, kFeatureCount>;

namespace detail {

struct RunningStats {
  std::vector<double> values;

  void add(double v) { values.push_back(v); }
  bool empty() const { return values.empty(); }
  double sum() const {
    double s = 0;
    for (double v : values) s += v;
    return s;
  }
  double min() const {
    return empty() ? 0.0 : *std::min_element(values.begin(), values.end());
  }
  double max() const {
    return empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  }
  double mean() const {
    return empty() ? 0.0 : sum() / static_cast<double>(values.size());
  }
  // Population standard deviation; a single sample has std 0.
  double stddev() const { return std::sqrt(variance()); }
  double variance() const {
    if (values.size() < 2) return 0.0;
    double m = mean();
    double acc = 0;
    for (double v : values) acc += (v - m) * (v - m);
    return acc / static_cast<double>(values.size());
  }
};

// Bulk transfer accounting for the red-listed */b Avg features: a bulk is a
// run of >=4 same-direction payload packets not interrupted by an opposite
// payload packet or a >1 s gap.
struct BulkTracker {
  std::uint64_t run_start = 0, run_last = 0, run_bytes = 0;
  std::uint32_t run_pkts = 0;
  std::uint32_t bulks = 0;
  std::uint64_t bulk_pkts = 0, bulk_bytes = 0, bulk_duration_us = 0;

  void packet(std::uint64_t ts, std::uint64_t payload) {
    if (run_pkts > 0 && ts - run_last > 1'000'000) commit();
    if (run_pkts == 0) run_start = ts;
    ++run_pkts;
    run_bytes += payload;
    run_last = ts;
  }
  void interrupt() { commit(); }
  void commit() {
    if (run_pkts >= 4) {
      ++bulks;
      bulk_pkts += run_pkts;
      bulk_bytes += run_bytes;
      bulk_duration_us += run_last - run_start;
    }
    run_pkts = 0;
    run_bytes = 0;
  }
};

// Canonical packet order: ties on timestamp are broken by packet content so
// the feature vector is invariant under reordering of equal timestamps.
inline bool canonical_packet_less(const PacketSummary& x, const PacketSummary& y) {
  auto key = [](const PacketSummary& p) {
    return std::make_tuple(p.timestamp_us, p.direction == Direction::backward,
                           p.ip_total_len, p.payload_len, p.l4_header_len,
                           p.tcp_flags, p.tcp_window.value_or(0));
  };
  return key(x) < key(y);
}

}  // namespace detail

// Computes all 77 flow features. Lengths are transport payload bytes, time
// features are microseconds, and rate features are per second with a
// zero-duration flow defining every rate as 0.
inline FeatureVector compute_features(const FlowBuffer& flow) {
  if (flow.packets.empty())
    throw ValidationError("cannot compute features of an empty flow");

  std::vector<PacketSummary> pkts(flow.packets.begin(), flow.packets.end());
  std::stable_sort(pkts.begin(), pkts.end(), detail::canonical_packet_less);

  const std::uint64_t first_ts = pkts.front().timestamp_us;
  const std::uint64_t last_ts = pkts.back().timestamp_us;
  const double duration_us = static_cast<double>(last_ts - first_ts);
  const double duration_s = duration_us / 1e6;

  detail::RunningStats fwd_len, bwd_len, all_len;
  detail::RunningStats flow_iat, fwd_iat, bwd_iat;
  detail::RunningStats active, idle;
  detail::BulkTracker fwd_bulk, bwd_bulk;

  double fwd_header = 0, bwd_header = 0;
  double fwd_count = 0, bwd_count = 0;
  double fin = 0, syn = 0, rst = 0, psh = 0, ack = 0, urg = 0, cwr = 0, ece = 0;
  double fwd_psh = 0, bwd_psh = 0, fwd_urg = 0, bwd_urg = 0;
  double fwd_act_data = 0;
  double init_fwd_win = -1, init_bwd_win = -1;
  double fwd_seg_size_min = 0;
  bool fwd_seg_size_min_set = false;

  std::uint64_t prev_ts = 0, prev_fwd_ts = 0, prev_bwd_ts = 0;
  bool have_prev = false, have_prev_fwd = false, have_prev_bwd = false;

  std::uint64_t subflows = 1;
  std::uint64_t active_start = first_ts, last_seen = first_ts;
  const std::uint64_t activity_timeout = flow.activity_timeout_us;

  for (const PacketSummary& pkt : pkts) {
    const bool forward = pkt.direction == Direction::forward;
    const double payload = static_cast<double>(pkt.payload_len);

    all_len.add(payload);
    if (forward) {
      fwd_len.add(payload);
      fwd_header += pkt.l4_header_len;
      ++fwd_count;
      if (pkt.payload_len >= 1) ++fwd_act_data;
      if (!fwd_seg_size_min_set || pkt.l4_header_len < fwd_seg_size_min) {
        fwd_seg_size_min = pkt.l4_header_len;
        fwd_seg_size_min_set = true;
      }
      if (pkt.tcp_window && init_fwd_win < 0)
        init_fwd_win = static_cast<double>(*pkt.tcp_window);
    } else {
      bwd_len.add(payload);
      bwd_header += pkt.l4_header_len;
      ++bwd_count;
      if (pkt.tcp_window && init_bwd_win < 0)
        init_bwd_win = static_cast<double>(*pkt.tcp_window);
    }

    if (pkt.is_tcp()) {
      if (pkt.has_flag(tcp_flag::fin)) ++fin;
      if (pkt.has_flag(tcp_flag::syn)) ++syn;
      if (pkt.has_flag(tcp_flag::rst)) ++rst;
      if (pkt.has_flag(tcp_flag::psh)) {
        ++psh;
        forward ? ++fwd_psh : ++bwd_psh;
      }
      if (pkt.has_flag(tcp_flag::ack)) ++ack;
      if (pkt.has_flag(tcp_flag::urg)) {
        ++urg;
        forward ? ++fwd_urg : ++bwd_urg;
      }
      if (pkt.has_flag(tcp_flag::cwr)) ++cwr;
      if (pkt.has_flag(tcp_flag::ece)) ++ece;
    }

    if (have_prev) {
      std::uint64_t gap = pkt.timestamp_us - prev_ts;
      flow_iat.add(static_cast<double>(gap));
      if (gap > 1'000'000) ++subflows;
      if (gap > activity_timeout) {
        if (last_seen > active_start)
          active.add(static_cast<double>(last_seen - active_start));
        idle.add(static_cast<double>(gap));
        active_start = pkt.timestamp_us;
      }
    }
    last_seen = pkt.timestamp_us;
    prev_ts = pkt.timestamp_us;
    have_prev = true;

    if (forward) {
      if (have_prev_fwd)
        fwd_iat.add(static_cast<double>(pkt.timestamp_us - prev_fwd_ts));
      prev_fwd_ts = pkt.timestamp_us;
      have_prev_fwd = true;
      if (pkt.payload_len > 0) {
        fwd_bulk.packet(pkt.timestamp_us, pkt.payload_len);
        bwd_bulk.interrupt();
      }
    } else {
      if (have_prev_bwd)
        bwd_iat.add(static_cast<double>(pkt.timestamp_us - prev_bwd_ts));
      prev_bwd_ts = pkt.timestamp_us;
      have_prev_bwd = true;
      if (pkt.payload_len > 0) {
        bwd_bulk.packet(pkt.timestamp_us, pkt.payload_len);
        fwd_bulk.interrupt();
      }
    }
  }
  if (last_seen > active_start)
    active.add(static_cast<double>(last_seen - active_start));
  fwd_bulk.commit();
  bwd_bulk.commit();

  const double total_pkts = fwd_count + bwd_count;
  const double total_bytes = fwd_len.sum() + bwd_len.sum();
  auto rate = [&](double amount) {
    return duration_s > 0 ? amount / duration_s : 0.0;
  };

  FeatureVector f{};
  std::size_t i = 0;
  f[i++] = duration_us;                                   // Flow Duration
  f[i++] = fwd_count;                                     // Tot Fwd Pkts
  f[i++] = bwd_count;                                     // Tot Bwd Pkts
  f[i++] = fwd_len.sum();                                 // TotLen Fwd Pkts
  f[i++] = bwd_len.sum();                                 // TotLen Bwd Pkts
  f[i++] = fwd_len.max();                                 // Fwd Pkt Len Max
  f[i++] = fwd_len.min();                                 // Fwd Pkt Len Min
  f[i++] = fwd_len.mean();                                // Fwd Pkt Len Mean
  f[i++] = fwd_len.stddev();                              // Fwd Pkt Len Std
  f[i++] = bwd_len.max();                                 // Bwd Pkt Len Max
  f[i++] = bwd_len.min();                                 // Bwd Pkt Len Min
  f[i++] = bwd_len.mean();                                // Bwd Pkt Len Mean
  f[i++] = bwd_len.stddev();                              // Bwd Pkt Len Std
  f[i++] = rate(total_bytes);                             // Flow Byts/s
  f[i++] = rate(total_pkts);                              // Flow Pkts/s
  f[i++] = flow_iat.mean();                               // Flow IAT Mean
  f[i++] = flow_iat.stddev();                             // Flow IAT Std
  f[i++] = flow_iat.max();                                // Flow IAT Max
  f[i++] = flow_iat.min();                                // Flow IAT Min
  f[i++] = fwd_iat.max();                                 // Fwd IAT Max
  f[i++] = fwd_iat.min();                                 // Fwd IAT Min
  f[i++] = fwd_iat.mean();                                // Fwd IAT Mean
  f[i++] = fwd_iat.stddev();                              // Fwd IAT Std
  f[i++] = fwd_iat.sum();                                 // Fwd IAT Tot
  f[i++] = bwd_iat.min();                                 // Bwd IAT Min
  f[i++] = bwd_iat.max();                                 // Bwd IAT Max
  f[i++] = bwd_iat.mean();                                // Bwd IAT Mean
  f[i++] = bwd_iat.stddev();                              // Bwd IAT Std
  f[i++] = bwd_iat.sum();                                 // Bwd IAT Tot
  f[i++] = fwd_header;                                    // Fwd Header Len
  f[i++] = bwd_header;                                    // Bwd Header Len
  f[i++] = rate(fwd_count);                               // Fwd Pkts/s
  f[i++] = rate(bwd_count);                               // Bwd Pkts/s
  f[i++] = all_len.min();                                 // Pkt Len Min
  f[i++] = all_len.max();                                 // Pkt Len Max
  f[i++] = all_len.mean();                                // Pkt Len Mean
  f[i++] = all_len.stddev();                              // Pkt Len Std
  f[i++] = all_len.variance();                            // Pkt Len Var
  f[i++] = fwd_count > 0 ? bwd_count / fwd_count : 0.0;   // Down/Up Ratio
  f[i++] = all_len.mean();                                // Pkt Size Avg
  f[i++] = fwd_header;                                    // Fwd Header Len.1
  f[i++] = fwd_len.mean();                                // Fwd Seg Size Avg
  f[i++] = bwd_len.mean();                                // Bwd Seg Size Avg
  f[i++] = bwd_psh;                                       // Bwd PSH Flags
  f[i++] = fin;                                           // FIN Flag Cnt
  f[i++] = syn;                                           // SYN Flag Cnt
  f[i++] = rst;                                           // RST Flag Cnt
  f[i++] = psh;                                           // PSH Flag Cnt
  f[i++] = ack;                                           // ACK Flag Cnt
  double sf = static_cast<double>(subflows);
  f[i++] = fwd_count / sf;                                // Subflow Fwd Pkts
  f[i++] = fwd_len.sum() / sf;                            // Subflow Fwd Byts
  f[i++] = bwd_count / sf;                                // Subflow Bwd Pkts
  f[i++] = bwd_len.sum() / sf;                            // Subflow Bwd Byts
  f[i++] = init_bwd_win;                                  // Init Bwd Win Byts
  f[i++] = fwd_act_data;                                  // Fwd Act Data Pkts
  f[i++] = active.min();                                  // Active Min
  f[i++] = active.mean();                                 // Active Mean
  f[i++] = active.max();                                  // Active Max
  f[i++] = active.stddev();                               // Active Std
  f[i++] = idle.min();                                    // Idle Min
  f[i++] = idle.mean();                                   // Idle Mean
  f[i++] = idle.max();                                    // Idle Max
  f[i++] = idle.stddev();                                 // Idle Std
  f[i++] = fwd_psh;                                       // Fwd PSH Flags
  f[i++] = fwd_urg;                                       // Fwd URG Flags
  f[i++] = bwd_urg;                                       // Bwd URG Flags
  f[i++] = urg;                                           // URG Flag Cnt
  f[i++] = cwr;                                           // CWR Flag Cnt
  f[i++] = ece;                                           // ECE Flag Cnt
  f[i++] = fwd_bulk.bulks ? static_cast<double>(fwd_bulk.bulk_bytes) / fwd_bulk.bulks : 0.0;
  f[i++] = fwd_bulk.bulks ? static_cast<double>(fwd_bulk.bulk_pkts) / fwd_bulk.bulks : 0.0;
  f[i++] = fwd_bulk.bulk_duration_us
               ? static_cast<double>(fwd_bulk.bulk_bytes) /
                     (static_cast<double>(fwd_bulk.bulk_duration_us) / 1e6)
               : 0.0;
  f[i++] = bwd_bulk.bulks ? static_cast<double>(bwd_bulk.bulk_bytes) / bwd_bulk.bulks : 0.0;
  f[i++] = bwd_bulk.bulks ? static_cast<double>(bwd_bulk.bulk_pkts) / bwd_bulk.bulks : 0.0;
  f[i++] = bwd_bulk.bulk_duration_us
               ? static_cast<double>(bwd_bulk.bulk_bytes) /
                     (static_cast<double>(bwd_bulk.bulk_duration_us) / 1e6)
               : 0.0;
  f[i++] = init_fwd_win;                                  // Init Fwd Win Byts
  f[i++] = fwd_seg_size_min;                              // Fwd Seg Size Min
  return f;
}

// Row-major labeled feature matrix with a per-column activity mask. All math
// downstream of pruning honors the mask.
struct FeatureMatrix {
  std::vector<std::string> names;
  std::vector<double> data;  // n_rows x names.size()
  std::vector<std::string> labels;
  std::vector<std::uint8_t> active_mask;

  FeatureMatrix() = default;
  explicit FeatureMatrix(std::vector<std::string> feature_names)
      : names(std::move(feature_names)), active_mask(names.size(), 1) {}

  static FeatureMatrix standard() {
    return FeatureMatrix(std::vector<std::string>(feature_names().begin(),
                                                  feature_names().end()));
  }

  std::size_t n_features() const { return names.size(); }
  std::size_t n_rows() const {
    return names.empty() ? 0 : data.size() / names.size();
  }
  double& at(std::size_t row, std::size_t col) {
    return data[row * names.size() + col];
  }
  double at(std::size_t row, std::size_t col) const {
    return data[row * names.size() + col];
  }
  const double* row(std::size_t r) const { return &data[r * names.size()]; }

  void add_row(const double* values, const std::string& label = "") {
    data.insert(data.end(), values, values + names.size());
    if (!label.empty() || !labels.empty()) labels.push_back(label);
  }
  void add_row(const FeatureVector& v, const std::string& label = "") {
    add_row(v.data(), label);
  }

  bool has_labels() const { return labels.size() == n_rows() && n_rows() > 0; }

  std::vector<std::size_t> active_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < active_mask.size(); ++j)
      if (active_mask[j]) idx.push_back(j);
    return idx;
  }
};

// Applies the static red list, then masks any remaining column whose values
// never vary across rows. Values are retained; the mask is authoritative.
inline FeatureMatrix prune_static(FeatureMatrix m) {
  if (m.n_rows() < 2)
    throw ValidationError("prune_static needs at least 2 rows");
  if (m.n_features() == kFeatureCount)
    for (std::size_t j = kRedListStart; j < kFeatureCount; ++j)
      m.active_mask[j] = 0;
  for (std::size_t j = 0; j < m.n_features(); ++j) {
    if (!m.active_mask[j]) continue;
    double v0 = m.at(0, j);
    bool varies = false;
    for (std::size_t r = 1; r < m.n_rows() && !varies; ++r)
      varies = m.at(r, j) != v0;
    if (!varies) m.active_mask[j] = 0;
  }
  return m;
}

}  // namespace flowsight
