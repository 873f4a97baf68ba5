// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <iterator>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "moelab/error.hpp"
#include "moelab/gate_scores.hpp"

namespace moelab {

enum class Phase : std::uint8_t { Prefill = 0, Decode = 1 };

inline std::string_view to_string(Phase p) { return p == Phase::Prefill ? "prefill" : "decode"; }

struct TraceHeader {
  std::uint32_t num_experts = 0;
  std::uint32_t num_layers = 0;
  bool phase_present = false;
  friend bool operator==(const TraceHeader&, const TraceHeader&) = default;
};

struct TraceRecord {
  std::uint32_t batch = 0;
  std::uint16_t layer = 0;
  std::uint32_t token = 0;
  Phase phase = Phase::Prefill;
  std::vector<float> scores;
  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct Trace {
  TraceHeader header;
  std::vector<TraceRecord> records;
};

// Binary layout, little-endian:
//   [0, 16)   magic "MOEGATETRACE\0v01"
//   [16, 25)  u32 num_experts, u32 num_layers, u8 phase_present
//   records   u32 batch, u16 layer, u32 token, u8 phase, f32[num_experts]
//   trailer   u32 CRC-32 (zlib polynomial) of bytes [16, trailer)
namespace trace_format {
inline constexpr std::array<char, 16> kMagic = {'M', 'O', 'E', 'G', 'A', 'T', 'E', 'T',
                                                'R', 'A', 'C', 'E', '\0', 'v', '0', '1'};
inline constexpr std::size_t kHeaderBytes = 9;
inline constexpr std::size_t kPreambleBytes = kMagic.size() + kHeaderBytes;
inline constexpr std::size_t kCrcBytes = 4;
inline constexpr std::size_t record_bytes(std::size_t num_experts) { return 11 + 4 * num_experts; }

inline bool is_ndjson(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  return ext == ".ndjson" || ext == ".jsonl";
}

template <typename T>
void put_le(std::vector<unsigned char>& buf, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<unsigned char>((u >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return static_cast<T>(u);
}

inline std::uint32_t crc_update(std::uint32_t crc, std::span<const unsigned char> bytes) {
  return static_cast<std::uint32_t>(::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}
}  // namespace trace_format

/// Checks a record's score vector against the ingest rules without
/// renormalizing; returns a diagnostic or an empty string.
inline std::string score_problem(std::span<const float> scores) {
  try {
    GateScores g(scores);
  } catch (const InputError& e) {
    return e.what();
  }
  return {};
}

// Streaming writer. The trailing CRC is written by finish(); a writer
// destroyed without finish() leaves a file the reader rejects.
class TraceWriter {
 public:
  TraceWriter(const std::filesystem::path& path, const TraceHeader& header)
      : header_(header), ndjson_(trace_format::is_ndjson(path)), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw Error("cannot open trace for writing: " + path.string());
    if (header.num_experts == 0) throw InputError("trace header needs num_experts >= 1");
    if (ndjson_) {
      nlohmann::ordered_json h = {{"format", "moe-gate-trace"},
                                  {"version", 1},
                                  {"num_experts", header.num_experts},
                                  {"num_layers", header.num_layers},
                                  {"phase_present", header.phase_present}};
      out_ << h.dump() << '\n';
    } else {
      out_.write(trace_format::kMagic.data(), trace_format::kMagic.size());
      std::vector<unsigned char> buf;
      trace_format::put_le<std::uint32_t>(buf, header.num_experts);
      trace_format::put_le<std::uint32_t>(buf, header.num_layers);
      buf.push_back(header.phase_present ? 1 : 0);
      emit(buf);
    }
  }

  void append(const TraceRecord& r) {
    if (finished_) throw Error("append after finish");
    if (r.scores.size() != header_.num_experts)
      throw InputError("record has " + std::to_string(r.scores.size()) + " scores, header says " +
                       std::to_string(header_.num_experts));
    if (r.layer >= header_.num_layers) throw InputError("record layer beyond header num_layers");
    if (!header_.phase_present && r.phase != Phase::Prefill)
      throw InputError("phase tag on a trace without phase information");
    if (ndjson_) {
      nlohmann::ordered_json j = {{"batch", r.batch},
                                  {"layer", r.layer},
                                  {"token", r.token},
                                  {"phase", to_string(r.phase)},
                                  {"scores", r.scores}};
      out_ << j.dump() << '\n';
    } else {
      std::vector<unsigned char> buf;
      buf.reserve(trace_format::record_bytes(r.scores.size()));
      trace_format::put_le<std::uint32_t>(buf, r.batch);
      trace_format::put_le<std::uint16_t>(buf, r.layer);
      trace_format::put_le<std::uint32_t>(buf, r.token);
      buf.push_back(static_cast<unsigned char>(r.phase));
      for (float f : r.scores) trace_format::put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(f));
      emit(buf);
    }
    ++count_;
  }

  void finish() {
    if (finished_) return;
    if (!ndjson_) {
      std::vector<unsigned char> buf;
      trace_format::put_le<std::uint32_t>(buf, crc_);
      out_.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    out_.flush();
    if (!out_) throw Error("trace write failed");
    finished_ = true;
  }

  std::size_t records_written() const noexcept { return count_; }

 private:
  void emit(const std::vector<unsigned char>& buf) {
    crc_ = trace_format::crc_update(crc_, buf);
    out_.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }

  TraceHeader header_;
  bool ndjson_;
  std::ofstream out_;
  std::uint32_t crc_ = 0;
  std::size_t count_ = 0;
  bool finished_ = false;
};

inline void write_trace(const std::filesystem::path& path, const Trace& trace) {
  TraceWriter w(path, trace.header);
  for (const auto& r : trace.records) w.append(r);
  w.finish();
}

namespace detail {

inline Trace read_binary_trace(const std::filesystem::path& path) {
  using namespace trace_format;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open trace: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::uint64_t size = bytes.size();

  if (size < kMagic.size() || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    std::uint64_t off = 0;
    while (off < kMagic.size() && off < size && bytes[off] == static_cast<unsigned char>(kMagic[off])) ++off;
    throw FormatError("bad trace magic", off);
  }
  if (size < kPreambleBytes) throw FormatError("trace truncated inside header", size);

  Trace t;
  const unsigned char* h = bytes.data() + kMagic.size();
  t.header.num_experts = get_le<std::uint32_t>(h);
  t.header.num_layers = get_le<std::uint32_t>(h + 4);
  const unsigned char flag = h[8];
  if (t.header.num_experts == 0) throw FormatError("num_experts is zero", kMagic.size());
  if (flag > 1) throw FormatError("phase-present flag must be 0 or 1", kMagic.size() + 8);
  t.header.phase_present = flag == 1;

  const std::size_t rec = record_bytes(t.header.num_experts);
  if (size < kPreambleBytes + kCrcBytes) throw FormatError("trace truncated: missing trailing checksum", size);
  const std::uint64_t body = size - kPreambleBytes - kCrcBytes;
  if (body % rec != 0) {
    const std::uint64_t partial_at = kPreambleBytes + (body / rec) * rec;
    throw FormatError("trace truncated: record starting at byte " + std::to_string(partial_at) +
                          " is incomplete or the checksum is missing",
                      size);
  }

  const std::uint32_t stored = get_le<std::uint32_t>(bytes.data() + size - kCrcBytes);
  const std::uint32_t actual = crc_update(0, std::span<const unsigned char>(bytes).subspan(
                                                 kMagic.size(), size - kCrcBytes - kMagic.size()));
  if (stored != actual) {
    char msg[96];
    std::snprintf(msg, sizeof msg, "trace checksum mismatch: stored %08x, computed %08x", stored, actual);
    throw FormatError(msg, size - kCrcBytes);
  }

  const std::uint64_t n_records = body / rec;
  t.records.reserve(n_records);
  for (std::uint64_t i = 0; i < n_records; ++i) {
    const std::uint64_t off = kPreambleBytes + i * rec;
    const unsigned char* p = bytes.data() + off;
    TraceRecord r;
    r.batch = get_le<std::uint32_t>(p);
    r.layer = get_le<std::uint16_t>(p + 4);
    r.token = get_le<std::uint32_t>(p + 6);
    const unsigned char phase = p[10];
    if (r.layer >= t.header.num_layers)
      throw FormatError("record " + std::to_string(i) + ": layer " + std::to_string(r.layer) + " >= num_layers",
                        off + 4);
    if (phase > 1 || (!t.header.phase_present && phase != 0))
      throw FormatError("record " + std::to_string(i) + ": invalid phase byte", off + 10);
    r.phase = static_cast<Phase>(phase);
    r.scores.resize(t.header.num_experts);
    for (std::size_t e = 0; e < t.header.num_experts; ++e)
      r.scores[e] = std::bit_cast<float>(get_le<std::uint32_t>(p + 11 + 4 * e));
    if (auto why = score_problem(r.scores); !why.empty())
      throw FormatError("record " + std::to_string(i) + ": " + why, off + 11);
    t.records.push_back(std::move(r));
  }
  return t;
}

inline Trace read_ndjson_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open trace: " + path.string());
  Trace t;
  std::string line;
  std::uint64_t offset = 0;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    const std::uint64_t line_start = offset;
    offset += line.size() + 1;
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (!have_header) {
        if (j.value("format", "") != "moe-gate-trace") throw FormatError(where + "not a moe-gate-trace header", line_start);
        t.header.num_experts = j.at("num_experts").get<std::uint32_t>();
        t.header.num_layers = j.at("num_layers").get<std::uint32_t>();
        t.header.phase_present = j.value("phase_present", false);
        if (t.header.num_experts == 0) throw FormatError(where + "num_experts is zero", line_start);
        have_header = true;
        continue;
      }
      TraceRecord r;
      r.batch = j.at("batch").get<std::uint32_t>();
      r.layer = j.at("layer").get<std::uint16_t>();
      r.token = j.at("token").get<std::uint32_t>();
      const auto phase = j.value("phase", std::string("prefill"));
      if (phase == "prefill") r.phase = Phase::Prefill;
      else if (phase == "decode") r.phase = Phase::Decode;
      else throw FormatError(where + "unknown phase '" + phase + "'", line_start);
      if (!t.header.phase_present && r.phase != Phase::Prefill)
        throw FormatError(where + "phase tag on a trace without phase information", line_start);
      r.scores = j.at("scores").get<std::vector<float>>();
      if (r.scores.size() != t.header.num_experts)
        throw FormatError(where + "expected " + std::to_string(t.header.num_experts) + " scores", line_start);
      if (r.layer >= t.header.num_layers) throw FormatError(where + "layer >= num_layers", line_start);
      if (auto why = score_problem(r.scores); !why.empty()) throw FormatError(where + why, line_start);
      t.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + e.what(), line_start);
    }
  }
  if (!have_header) throw FormatError("empty NDJSON trace", 0);
  return t;
}

}  // namespace detail

/// Reads and validates a whole trace; records come back in file order.
inline Trace replay_trace(const std::filesystem::path& path) {
  return trace_format::is_ndjson(path) ? detail::read_ndjson_trace(path) : detail::read_binary_trace(path);
}

}  // namespace moelab
