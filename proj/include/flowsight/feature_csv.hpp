#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flowsight/error.hpp"
#include "flowsight/features.hpp"

namespace flowsight {

// Shortest representation that round-trips exactly; used everywhere a double
// is written to CSV so golden files and manifests are byte-stable.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

namespace detail {

// Header aliases so feature CSVs produced by other tools load cleanly.
// Covers the long-name header family and its known quirks (the duplicated
// forward header length column, the CWE/CWR spelling).
inline const std::map<std::string, std::string>& csv_header_aliases() {
  static const std::map<std::string, std::string> aliases = {
      {"Flow Bytes/s", "Flow Byts/s"},
      {"Flow Packets/s", "Flow Pkts/s"},
      {"Total Fwd Packets", "Tot Fwd Pkts"},
      {"Total Backward Packets", "Tot Bwd Pkts"},
      {"Total Bwd packets", "Tot Bwd Pkts"},
      {"Total Length of Fwd Packets", "TotLen Fwd Pkts"},
      {"Total Length of Bwd Packets", "TotLen Bwd Pkts"},
      {"Fwd Packet Length Max", "Fwd Pkt Len Max"},
      {"Fwd Packet Length Min", "Fwd Pkt Len Min"},
      {"Fwd Packet Length Mean", "Fwd Pkt Len Mean"},
      {"Fwd Packet Length Std", "Fwd Pkt Len Std"},
      {"Bwd Packet Length Max", "Bwd Pkt Len Max"},
      {"Bwd Packet Length Min", "Bwd Pkt Len Min"},
      {"Bwd Packet Length Mean", "Bwd Pkt Len Mean"},
      {"Bwd Packet Length Std", "Bwd Pkt Len Std"},
      {"Fwd IAT Total", "Fwd IAT Tot"},
      {"Bwd IAT Total", "Bwd IAT Tot"},
      {"Fwd Header Length", "Fwd Header Len"},
      {"Bwd Header Length", "Bwd Header Len"},
      {"Fwd Header Length.1", "Fwd Header Len.1"},
      {"Fwd Packets/s", "Fwd Pkts/s"},
      {"Bwd Packets/s", "Bwd Pkts/s"},
      {"Min Packet Length", "Pkt Len Min"},
      {"Max Packet Length", "Pkt Len Max"},
      {"Packet Length Mean", "Pkt Len Mean"},
      {"Packet Length Std", "Pkt Len Std"},
      {"Packet Length Variance", "Pkt Len Var"},
      {"Average Packet Size", "Pkt Size Avg"},
      {"Avg Fwd Segment Size", "Fwd Seg Size Avg"},
      {"Avg Bwd Segment Size", "Bwd Seg Size Avg"},
      {"FIN Flag Count", "FIN Flag Cnt"},
      {"SYN Flag Count", "SYN Flag Cnt"},
      {"RST Flag Count", "RST Flag Cnt"},
      {"PSH Flag Count", "PSH Flag Cnt"},
      {"ACK Flag Count", "ACK Flag Cnt"},
      {"URG Flag Count", "URG Flag Cnt"},
      {"CWE Flag Count", "CWR Flag Cnt"},
      {"CWE Flag Cnt", "CWR Flag Cnt"},
      {"CWR Flag Count", "CWR Flag Cnt"},
      {"ECE Flag Count", "ECE Flag Cnt"},
      {"Subflow Fwd Packets", "Subflow Fwd Pkts"},
      {"Subflow Fwd Bytes", "Subflow Fwd Byts"},
      {"Subflow Bwd Packets", "Subflow Bwd Pkts"},
      {"Subflow Bwd Bytes", "Subflow Bwd Byts"},
      {"Init_Win_bytes_forward", "Init Fwd Win Byts"},
      {"Init_Win_bytes_backward", "Init Bwd Win Byts"},
      {"act_data_pkt_fwd", "Fwd Act Data Pkts"},
      {"Act_data_pkt_forward", "Fwd Act Data Pkts"},
      {"min_seg_size_forward", "Fwd Seg Size Min"},
      {"Min_seg_size_forward", "Fwd Seg Size Min"},
      {"Fwd Avg Bytes/Bulk", "Fwd Byts/b Avg"},
      {"Fwd Avg Packets/Bulk", "Fwd Pkts/b Avg"},
      {"Fwd Avg Bulk Rate", "Fwd Blk Rate Avg"},
      {"Bwd Avg Bytes/Bulk", "Bwd Byts/b Avg"},
      {"Bwd Avg Packets/Bulk", "Bwd Pkts/b Avg"},
      {"Bwd Avg Bulk Rate", "Bwd Blk Rate Avg"},
  };
  return aliases;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string canonical_header(const std::string& raw,
                                    int fwd_header_len_seen) {
  std::string name = trim(raw);
  auto alias = csv_header_aliases().find(name);
  if (alias != csv_header_aliases().end()) name = alias->second;
  // A second occurrence of the forward header length column maps to the
  // duplicate slot, matching the reference tool's raw output.
  if (name == "Fwd Header Len" && fwd_header_len_seen > 0)
    name = "Fwd Header Len.1";
  return name;
}

}  // namespace detail

// Writes the feature matrix as CSV: the 77 reference columns (or whatever
// the matrix carries), plus a Label column when labels are present.
inline void write_feature_csv(std::ostream& out, const FeatureMatrix& m) {
  for (std::size_t j = 0; j < m.n_features(); ++j) {
    if (j) out << ',';
    out << m.names[j];
  }
  if (m.has_labels()) out << ",Label";
  out << '\n';
  for (std::size_t r = 0; r < m.n_rows(); ++r) {
    for (std::size_t j = 0; j < m.n_features(); ++j) {
      if (j) out << ',';
      out << format_double(m.at(r, j));
    }
    if (m.has_labels()) out << ',' << m.labels[r];
    out << '\n';
  }
}

inline void write_feature_csv(const std::string& path, const FeatureMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write CSV file: " + path);
  write_feature_csv(out, m);
}

// Reads a feature CSV with the reference 77 columns (any order, long or
// short header names) and an optional Label column. Missing feature columns
// are an error; extra columns are ignored.
inline FeatureMatrix read_feature_csv(std::istream& in,
                                      const std::string& origin = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV: " + origin);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> raw_headers = detail::split_csv_line(line);
  FeatureMatrix m = FeatureMatrix::standard();
  std::vector<int> source_col(kFeatureCount, -1);
  int label_col = -1;
  int fwd_header_seen = 0;
  for (std::size_t c = 0; c < raw_headers.size(); ++c) {
    std::string name = detail::canonical_header(raw_headers[c], fwd_header_seen);
    if (name == "Fwd Header Len" || name == "Fwd Header Len.1") ++fwd_header_seen;
    if (name == "Label") {
      label_col = static_cast<int>(c);
      continue;
    }
    const auto& names = feature_names();
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
      if (names[j] == name && source_col[j] < 0) {
        source_col[j] = static_cast<int>(c);
        break;
      }
    }
  }
  for (std::size_t j = 0; j < kFeatureCount; ++j)
    if (source_col[j] < 0)
      throw DataError("CSV is missing feature column '" + feature_names()[j] +
                      "': " + origin);

  std::size_t line_no = 1;
  std::vector<std::string> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != raw_headers.size())
      throw DataError(origin + ":" + std::to_string(line_no) +
                      ": expected " + std::to_string(raw_headers.size()) +
                      " cells, got " + std::to_string(cells.size()));
    FeatureVector row{};
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
      const std::string cell = detail::trim(cells[source_col[j]]);
      double v = 0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size())
        throw DataError(origin + ":" + std::to_string(line_no) +
                        ": cannot parse value '" + cell + "' for '" +
                        feature_names()[j] + "'");
      if (!std::isfinite(v))
        throw DataError(origin + ":" + std::to_string(line_no) +
                        ": non-finite value for '" + feature_names()[j] + "'");
      row[j] = v;
    }
    m.add_row(row);
    if (label_col >= 0) labels.push_back(detail::trim(cells[label_col]));
  }
  if (label_col >= 0) m.labels = std::move(labels);
  return m;
}

inline FeatureMatrix read_feature_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open CSV file: " + path);
  return read_feature_csv(in, path);
}

}  // namespace flowsight
