// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "moelab/rng.hpp"
#include "moelab/trace.hpp"

using namespace moelab;
namespace fs = std::filesystem;

namespace {

class TraceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("moelab_trace_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

std::vector<unsigned char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Byte-at-a-time little-endian encoder, independent of the writer.
void le(std::vector<unsigned char>& b, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

std::vector<unsigned char> encode(const Trace& t) {
  std::vector<unsigned char> b;
  const char magic[] = "MOEGATETRACE\0v01";
  b.insert(b.end(), magic, magic + 16);
  le(b, t.header.num_experts, 4);
  le(b, t.header.num_layers, 4);
  b.push_back(t.header.phase_present ? 1 : 0);
  for (const auto& r : t.records) {
    le(b, r.batch, 4);
    le(b, r.layer, 2);
    le(b, r.token, 4);
    b.push_back(static_cast<unsigned char>(r.phase));
    for (float f : r.scores) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      le(b, u, 4);
    }
  }
  const auto crc = ::crc32(0L, b.data() + 16, static_cast<uInt>(b.size() - 16));
  le(b, crc, 4);
  return b;
}

Trace sample_trace(std::size_t records, std::uint64_t seed) {
  Rng rng(seed);
  Trace t{{4, 3, true}, {}};
  for (std::size_t i = 0; i < records; ++i) {
    TraceRecord r{static_cast<std::uint32_t>(i / 6), static_cast<std::uint16_t>(i % 3),
                  static_cast<std::uint32_t>(i), i % 2 ? Phase::Decode : Phase::Prefill, {}};
    double sum = 0;
    std::vector<double> g(4);
    for (auto& x : g) sum += x = rng.gamma(0.5) + 1e-3;
    for (double x : g) r.scores.push_back(static_cast<float>(x / sum));
    t.records.push_back(r);
  }
  return t;
}

std::uint64_t offset_of(const auto& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "no FormatError";
  return ~0ull;
}

}  // namespace

TEST_F(TraceTest, BinaryLayoutMatchesIndependentEncoder) {
  const auto t = sample_trace(50, 1);
  write_trace(dir_ / "a.bin", t);
  EXPECT_EQ(slurp(dir_ / "a.bin"), encode(t));
  EXPECT_EQ(fs::file_size(dir_ / "a.bin"), 16 + 9 + 50 * trace_format::record_bytes(4) + 4);
}

TEST_F(TraceTest, RoundTripBinaryAndNdjson) {
  const auto t = sample_trace(300, 2);
  for (const char* name : {"t.bin", "t.ndjson", "t.jsonl"}) {
    write_trace(dir_ / name, t);
    const auto back = replay_trace(dir_ / name);
    EXPECT_EQ(back.header, t.header) << name;
    EXPECT_EQ(back.records, t.records) << name;
  }
}

TEST_F(TraceTest, EmptyTraceRoundTrips) {
  Trace t{{8, 2, false}, {}};
  write_trace(dir_ / "e.bin", t);
  EXPECT_EQ(fs::file_size(dir_ / "e.bin"), 29u);
  const auto back = replay_trace(dir_ / "e.bin");
  EXPECT_EQ(back.header, t.header);
  EXPECT_TRUE(back.records.empty());
}

TEST_F(TraceTest, UnfinishedWriterIsRejected) {
  const auto t = sample_trace(5, 3);
  {
    TraceWriter w(dir_ / "u.bin", t.header);
    for (const auto& r : t.records) w.append(r);
  }
  EXPECT_EQ(offset_of([&] { replay_trace(dir_ / "u.bin"); }), fs::file_size(dir_ / "u.bin"));
}

TEST_F(TraceTest, CorruptionIsReportedWithOffset) {
  const auto good = encode(sample_trace(20, 4));
  const auto path = dir_ / "c.bin";

  auto bad = good;
  bad[3] = 'X';
  spit(path, bad);
  EXPECT_EQ(offset_of([&] { replay_trace(path); }), 3u);

  bad = good;
  bad[100] ^= 0x40;
  spit(path, bad);
  EXPECT_EQ(offset_of([&] { replay_trace(path); }), good.size() - 4);

  bad = good;
  bad.back() ^= 1;
  spit(path, bad);
  EXPECT_EQ(offset_of([&] { replay_trace(path); }), good.size() - 4);

  bad.assign(good.begin(), good.end() - 7);
  spit(path, bad);
  EXPECT_EQ(offset_of([&] { replay_trace(path); }), bad.size());

  bad.assign(good.begin(), good.begin() + 20);
  spit(path, bad);
  EXPECT_EQ(offset_of([&] { replay_trace(path); }), 20u);
}

TEST_F(TraceTest, SemanticErrorsCarryRecordOffset) {
  auto t = sample_trace(3, 5);
  t.records[1].scores = {0.5f, 0.5f, 0.5f, 0.5f};
  spit(dir_ / "s.bin", encode(t));
  const std::uint64_t rec1 = 25 + trace_format::record_bytes(4);
  EXPECT_EQ(offset_of([&] { replay_trace(dir_ / "s.bin"); }), rec1 + 11);

  t = sample_trace(3, 5);
  t.records[2].layer = 7;
  spit(dir_ / "s.bin", encode(t));
  EXPECT_EQ(offset_of([&] { replay_trace(dir_ / "s.bin"); }), 25 + 2 * trace_format::record_bytes(4) + 4);

  t = sample_trace(3, 5);
  t.header.phase_present = false;
  spit(dir_ / "s.bin", encode(t));  // record 1 carries a decode tag
  EXPECT_EQ(offset_of([&] { replay_trace(dir_ / "s.bin"); }), rec1 + 10);
}

TEST_F(TraceTest, NegativeAndNanScoresRejected) {
  auto t = sample_trace(2, 6);
  t.records[0].scores = {1.2f, -0.2f, 0.0f, 0.0f};
  spit(dir_ / "n.bin", encode(t));
  EXPECT_THROW(replay_trace(dir_ / "n.bin"), FormatError);
  t.records[0].scores = {NAN, 1.0f, 0.0f, 0.0f};
  spit(dir_ / "n.bin", encode(t));
  EXPECT_THROW(replay_trace(dir_ / "n.bin"), FormatError);
}

TEST_F(TraceTest, WriterValidatesRecords) {
  TraceWriter w(dir_ / "w.bin", {3, 2, false});
  EXPECT_THROW(w.append({0, 0, 0, Phase::Prefill, {0.5f, 0.5f}}), InputError);
  EXPECT_THROW(w.append({0, 2, 0, Phase::Prefill, {0.5f, 0.5f, 0.0f}}), InputError);
  EXPECT_THROW(w.append({0, 0, 0, Phase::Decode, {0.5f, 0.5f, 0.0f}}), InputError);
  w.append({0, 1, 0, Phase::Prefill, {0.5f, 0.5f, 0.0f}});
  w.finish();
  EXPECT_THROW(w.append({0, 1, 0, Phase::Prefill, {0.5f, 0.5f, 0.0f}}), Error);
  EXPECT_EQ(replay_trace(dir_ / "w.bin").records.size(), 1u);
}

TEST_F(TraceTest, NdjsonErrorsNameTheLine) {
  std::ofstream(dir_ / "x.ndjson") << R"({"format":"moe-gate-trace","version":1,"num_experts":2,"num_layers":1})" << "\n"
                                   << R"({"batch":0,"layer":0,"token":0,"scores":[0.5,0.5]})" << "\n"
                                   << R"({"batch":0,"layer":0,"token":1,"scores":[0.5]})" << "\n";
  try {
    replay_trace(dir_ / "x.ndjson");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  std::ofstream(dir_ / "y.ndjson") << "{not json\n";
  EXPECT_THROW(replay_trace(dir_ / "y.ndjson"), FormatError);
}
