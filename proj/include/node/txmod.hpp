#pragma once

// Transmitter side: frame construction and the CPU-load current modulator.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "node/errors.hpp"
#include "node/signal_core.hpp"

namespace node {

using Bits = std::vector<std::uint8_t>;

inline Bits parse_bits(std::string_view text) {
  Bits out;
  for (char c : text) {
    if (c == '0' || c == '1') {
      out.push_back(static_cast<std::uint8_t>(c - '0'));
    } else if (c != ' ' && c != '_' && c != ',') {
      throw ConfigError(std::string("invalid bit character '") + c + "'");
    }
  }
  return out;
}

inline std::string format_bits(const Bits& bits) {
  std::string s;
  s.reserve(bits.size());
  for (auto b : bits) s.push_back(b ? '1' : '0');
  return s;
}

/// MSB-first expansion of raw bytes.
inline Bits bytes_to_bits(std::string_view bytes) {
  Bits out;
  out.reserve(bytes.size() * 8);
  for (unsigned char c : bytes)
    for (int i = 7; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((c >> i) & 1u));
  return out;
}

/// Frame geometry: pilot ++ payload, rectangular symbols of symbol_duration_s.
class FrameSpec {
 public:
  FrameSpec() : FrameSpec(Bits{1, 1, 0, 0, 1, 0}, 94, 0.033) {}

  FrameSpec(Bits pilot, std::size_t payload_len_bits, double symbol_duration_s)
      : pilot_(std::move(pilot)), payload_len_(payload_len_bits), symbol_s_(symbol_duration_s) {
    if (pilot_.empty()) throw ConfigError("pilot sequence must not be empty");
    for (auto b : pilot_)
      if (b > 1) throw ConfigError("pilot must contain only 0/1");
    if (payload_len_ == 0) throw ConfigError("payload length must be positive");
    if (!(symbol_s_ > 0.0)) throw ConfigError("symbol duration must be positive");
  }

  const Bits& pilot() const { return pilot_; }
  std::size_t pilot_len() const { return pilot_.size(); }
  std::size_t payload_len() const { return payload_len_; }
  std::size_t frame_bits() const { return pilot_.size() + payload_len_; }
  double symbol_duration_s() const { return symbol_s_; }
  double pilot_duration_s() const { return static_cast<double>(pilot_.size()) * symbol_s_; }
  double frame_duration_s() const { return static_cast<double>(frame_bits()) * symbol_s_; }

 private:
  Bits pilot_;
  std::size_t payload_len_;
  double symbol_s_;
};

/// Fractional CPU load in [0, 1] plus the core-count scale it was generated with.
struct LoadWaveform {
  SignalTrace load;
  double cores_scale = 1.0;
};

inline Bits build_frame(const Bits& payload, const FrameSpec& spec) {
  if (payload.size() != spec.payload_len())
    throw LengthMismatch("payload has " + std::to_string(payload.size()) + " bits, frame expects " +
                         std::to_string(spec.payload_len()));
  Bits frame = spec.pilot();
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

namespace tx_detail {

/// Piecewise-constant waveform with `levels[i]` over [i T, (i+1) T).
inline SignalTrace staircase(const std::vector<double>& levels, double symbol_s, double fs) {
  const double per_symbol = symbol_s * fs;
  const auto n = static_cast<std::size_t>(std::llround(static_cast<double>(levels.size()) * per_symbol));
  std::vector<double> out(std::max<std::size_t>(n, 1), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Small epsilon keeps exact multiples of T on the later symbol.
    auto idx = static_cast<std::size_t>(std::floor(static_cast<double>(i) / per_symbol + 1e-9));
    out[i] = levels.empty() ? 0.0 : levels[std::min(idx, levels.size() - 1)];
  }
  return SignalTrace(std::move(out), fs, Unit::dimensionless);
}

}  // namespace tx_detail

/// On-off keyed load: cores_scale for every "1" symbol, 0 for every "0".
inline LoadWaveform modulate(const Bits& bits, const FrameSpec& spec, double sample_rate_hz, double cores_scale) {
  if (!(cores_scale > 0.0 && cores_scale <= 1.0)) throw ConfigError("cores_scale must lie in (0, 1]");
  std::vector<double> levels(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) levels[i] = bits[i] ? cores_scale : 0.0;
  return {tx_detail::staircase(levels, spec.symbol_duration_s(), sample_rate_hz), cores_scale};
}

/// Load level for each of the 2^N symbols.
inline std::vector<double> multilevel_levels(int bits_per_symbol) {
  if (bits_per_symbol < 1 || bits_per_symbol > 16) throw ConfigError("bits per symbol must be in [1, 16]");
  if (bits_per_symbol == 2) return {0.0, 0.25, 0.75, 1.0};
  const std::size_t count = std::size_t{1} << bits_per_symbol;
  std::vector<double> levels(count);
  for (std::size_t i = 0; i < count; ++i) levels[i] = static_cast<double>(i) / static_cast<double>(count - 1);
  return levels;
}

inline LoadWaveform modulate_multilevel(const std::vector<int>& symbols, int bits_per_symbol, double symbol_duration_s,
                                        double sample_rate_hz) {
  const auto table = multilevel_levels(bits_per_symbol);
  std::vector<double> levels(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (symbols[i] < 0 || static_cast<std::size_t>(symbols[i]) >= table.size())
      throw SymbolOutOfRange("symbol " + std::to_string(symbols[i]) + " outside [0, " +
                             std::to_string(table.size()) + ")");
    levels[i] = table[static_cast<std::size_t>(symbols[i])];
  }
  return {tx_detail::staircase(levels, symbol_duration_s, sample_rate_hz), 1.0};
}

}  // namespace node
