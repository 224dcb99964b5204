#pragma once

// Binary trace format:
//   bytes 0..7    magic "NODETRC1"
//   bytes 8..15   sample rate, float64 little-endian
//   bytes 16..23  unit code, uint64 little-endian (0 volts, 1 amps, 2 dimensionless)
//   bytes 24..    samples, float64 little-endian
// CSV export: header "time_s,value", one row per sample.

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "node/errors.hpp"
#include "node/signal_core.hpp"

namespace node::io {

inline constexpr std::array<char, 8> kTraceMagic{'N', 'O', 'D', 'E', 'T', 'R', 'C', '1'};
inline constexpr std::size_t kTraceHeaderBytes = 24;

namespace detail {

inline std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
    return r;
  }
}

inline void put_u64(std::vector<char>& buf, std::uint64_t v) {
  v = to_le(v);
  char bytes[8];
  std::memcpy(bytes, &v, 8);
  buf.insert(buf.end(), bytes, bytes + 8);
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return to_le(v);
}

}  // namespace detail

inline std::vector<char> encode_trace(const SignalTrace& trace) {
  std::vector<char> buf(kTraceMagic.begin(), kTraceMagic.end());
  buf.reserve(kTraceHeaderBytes + 8 * trace.size());
  detail::put_u64(buf, std::bit_cast<std::uint64_t>(trace.sample_rate_hz()));
  detail::put_u64(buf, static_cast<std::uint64_t>(trace.unit()));
  for (double v : trace.samples()) detail::put_u64(buf, std::bit_cast<std::uint64_t>(v));
  return buf;
}

inline SignalTrace decode_trace(const std::vector<char>& buf) {
  if (buf.size() < kTraceHeaderBytes || std::memcmp(buf.data(), kTraceMagic.data(), 8) != 0)
    throw IoError("not a NODETRC1 trace");
  const std::size_t payload = buf.size() - kTraceHeaderBytes;
  if (payload % 8 != 0) throw IoError("trace payload is not a whole number of float64 samples");
  if (payload == 0) throw EmptyTrace("trace file holds no samples");
  const double rate = std::bit_cast<double>(detail::get_u64(buf.data() + 8));
  const std::uint64_t unit = detail::get_u64(buf.data() + 16);
  if (unit > 2) throw IoError("unknown unit code " + std::to_string(unit));
  std::vector<double> samples(payload / 8);
  for (std::size_t i = 0; i < samples.size(); ++i)
    samples[i] = std::bit_cast<double>(detail::get_u64(buf.data() + kTraceHeaderBytes + 8 * i));
  try {
    return SignalTrace(std::move(samples), rate, static_cast<Unit>(unit));
  } catch (const InvalidTrace& e) {
    throw IoError(std::string("corrupt trace: ") + e.what());
  }
}

inline void write_trace(const std::string& path, const SignalTrace& trace) {
  const auto buf = encode_trace(trace);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to " + path);
}

inline SignalTrace read_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_trace(buf);
}

inline void write_trace_csv(const std::string& path, const SignalTrace& trace) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw IoError("cannot open " + path + " for writing");
  std::fputs("time_s,value\n", f);
  for (std::size_t i = 0; i < trace.size(); ++i)
    std::fprintf(f, "%.9g,%.17g\n", static_cast<double>(i) / trace.sample_rate_hz(), trace[i]);
  if (std::fclose(f) != 0) throw IoError("failed to flush " + path);
}

}  // namespace node::io
