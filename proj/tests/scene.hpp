#pragma once

// Small end-to-end traces built directly from the channel and modulator,
// without going through the scenario harness.

#include <random>
#include <vector>

#include "node/channel.hpp"
#include "node/txmod.hpp"

namespace scene {

struct Sender {
  node::DeviceModel device;
  node::Bits payload;
  double start_s = 0.5;
  double cores_scale = 1.0;
};

struct Trace {
  node::SignalTrace v;
  std::vector<node::SignalTrace> currents;
};

inline node::Bits random_payload(std::size_t n, unsigned seed) {
  std::mt19937 eng(seed);
  node::Bits b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(eng() & 1u);
  return b;
}

/// Load is idle before start_s and after the frame.
inline node::SignalTrace frame_load(const node::Bits& payload, const node::FrameSpec& spec, double start_s,
                                    double duration_s, double fs, double cores_scale) {
  const auto frame = node::modulate(node::build_frame(payload, spec), spec, fs, cores_scale);
  std::vector<double> x(static_cast<std::size_t>(std::llround(duration_s * fs)), 0.0);
  const auto offset = static_cast<std::size_t>(std::llround(start_s * fs));
  for (std::size_t i = 0; i < frame.load.size() && offset + i < x.size(); ++i) x[offset + i] = frame.load[i];
  return node::SignalTrace(std::move(x), fs, node::Unit::dimensionless);
}

inline Trace build(const std::vector<Sender>& senders, const node::FrameSpec& spec, double duration_s, double fs,
                   double noise_rms_v, std::uint64_t seed, double drift_v = 0.5) {
  node::NetworkModel net;
  net.grid_noise.broadband_noise_rms_v = noise_rms_v;
  net.grid_noise.slow_drift_amplitude_v = drift_v;
  Trace t{node::SignalTrace({0.0}, fs), {}};
  std::uint64_t k = 0;
  for (const auto& s : senders) {
    const auto load = frame_load(s.payload, spec, s.start_s, duration_s, fs, s.cores_scale);
    t.currents.push_back(node::synthesize_current(s.device, load, duration_s, fs, seed * 1000 + ++k));
  }
  t.v = node::receiver_frontend(node::superpose(net, t.currents, seed), node::AdcSpec{});
  return t;
}

inline Trace single(double carrier_hz, const node::Bits& payload, const node::FrameSpec& spec, std::uint64_t seed,
                    double fs = 500e3, double noise_rms_v = 8e-3, double start_s = 0.5) {
  Sender s;
  s.device.pfc_freq_hz = carrier_hz;
  s.payload = payload;
  s.start_s = start_s;
  return build({s}, spec, start_s + spec.frame_duration_s() + 0.3, fs, noise_rms_v, seed);
}

}  // namespace scene
