#pragma once

// Power-network physics: device current synthesis, receiver voltage
// superposition over a shared bus, line noise filters and the receiver's
// analog front end.
//
// Receiver voltage on a single resistive bus:
//   v_r(t) = v_s(t) - R * sum_k i_k(t) - (R + R_r) * i_r(t)
// where v_s is the mains source with slow amplitude drift and broadband noise.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "node/errors.hpp"
#include "node/fft.hpp"
#include "node/rng.hpp"
#include "node/signal_core.hpp"

namespace node {

struct GridNoiseSpec {
  /// Typical one-minute excursion of the mains amplitude (V, peak).
  double slow_drift_amplitude_v = 0.5;
  double broadband_noise_rms_v = 8e-3;

  void validate() const {
    if (!(slow_drift_amplitude_v >= 0.0) || !(broadband_noise_rms_v >= 0.0))
      throw InvalidModel("grid noise amplitudes must be non-negative");
  }
};

struct NetworkModel {
  double source_voltage_rms = 120.0;
  double mains_freq_hz = 60.0;
  double common_resistance_ohm = 0.2;
  double receiver_branch_resistance_ohm = 0.1;
  GridNoiseSpec grid_noise;

  void validate() const {
    if (!(source_voltage_rms > 0.0)) throw InvalidModel("source voltage must be positive");
    if (!(mains_freq_hz > 0.0)) throw InvalidModel("mains frequency must be positive");
    if (!(common_resistance_ohm >= 0.0) || !(receiver_branch_resistance_ohm >= 0.0))
      throw InvalidModel("resistances must be non-negative");
    grid_noise.validate();
  }
};

/// Switching-frequency offset applied from `at_s` until the next step.
struct FrequencyStep {
  double at_s = 0.0;
  double offset_hz = 0.0;
};

/// One computer's electrical behaviour (CCM PFC supply).
struct DeviceModel {
  double pfc_freq_hz = 67.3e3;
  /// Largest switching-frequency excursion over any 5 s window.
  double pfc_drift_hz_per_5s = 50.0;
  double idle_current_a = 0.4;  // RMS
  double peak_current_a = 1.0;  // RMS
  /// First-order current response to load changes.
  double lag_tau_s = 0.010;
  /// Fraction of the instantaneous current envelope appearing as switching ripple.
  double ripple_gain = 0.01;
  double branch_resistance_ohm = 0.0;
  /// Ripple shrinks as load grows (seen on some all-in-one supplies).
  bool inverted_ripple = false;
  /// Optional slow sinusoidal FM of the switching frequency (peak-to-peak spread).
  double fm_spread_hz = 0.0;
  double fm_rate_hz = 0.0;
  /// Forced excursions on top of the random drift, sorted by time.
  std::vector<FrequencyStep> forced_steps;

  void validate() const {
    if (!(pfc_freq_hz >= 40e3 && pfc_freq_hz <= 150e3))
      throw InvalidModel("PFC frequency must lie in [40 kHz, 150 kHz], got " + std::to_string(pfc_freq_hz));
    if (!(pfc_drift_hz_per_5s >= 0.0)) throw InvalidModel("PFC drift must be non-negative");
    if (!(idle_current_a >= 0.0) || !(idle_current_a <= peak_current_a))
      throw InvalidModel("need 0 <= idle_current <= peak_current");
    if (!(lag_tau_s > 0.0)) throw InvalidModel("lag time constant must be positive");
    if (!(ripple_gain > 0.0 && ripple_gain < 1.0)) throw InvalidModel("ripple gain must lie in (0, 1)");
    if (!(branch_resistance_ohm >= 0.0)) throw InvalidModel("branch resistance must be non-negative");
    if (!(fm_spread_hz >= 0.0) || !(fm_rate_hz >= 0.0)) throw InvalidModel("FM parameters must be non-negative");
    for (std::size_t i = 1; i < forced_steps.size(); ++i)
      if (forced_steps[i].at_s < forced_steps[i - 1].at_s) throw InvalidModel("forced frequency steps must be sorted");
  }
};

struct AdcSpec {
  int resolution_bits = 12;
  double full_scale_v = 5.0;
  double highpass_cutoff_hz = 10e3;

  void validate() const {
    if (resolution_bits < 4 || resolution_bits > 24) throw InvalidModel("ADC resolution must be 4..24 bits");
    if (!(full_scale_v > 0.0)) throw InvalidModel("ADC full scale must be positive");
  }
};

namespace channel_detail {

inline constexpr double kDriftKnotSpacingS = 0.5;
inline constexpr double kGridDriftKnotSpacingS = 0.1;

/// Piecewise-linear random walk with knots every `spacing_s`. Increments are
/// uniform in +-max_step, so any window of 10 knot spacings moves at most 10 * max_step.
inline std::vector<double> uniform_walk_knots(std::size_t count, double max_step, rng::Engine& eng) {
  std::uniform_real_distribution<double> step(-max_step, max_step);
  std::vector<double> knots(count, 0.0);
  for (std::size_t i = 1; i < count; ++i) knots[i] = knots[i - 1] + (max_step > 0.0 ? step(eng) : 0.0);
  return knots;
}

inline double interp_knots(const std::vector<double>& knots, double spacing_s, double t) {
  const double pos = t / spacing_s;
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= knots.size()) return knots.back();
  const double frac = pos - static_cast<double>(i);
  return knots[i] + frac * (knots[i + 1] - knots[i]);
}

/// Fills out[n] = sin(phase(n)) for a frequency that is constant over blocks of
/// `block` samples. Phase is carried across blocks exactly; within a block the
/// sinusoid is generated by phasor rotation.
template <typename FreqAt>
void block_oscillator(std::span<double> out, double fs, double phase0, std::size_t block, FreqAt freq_at) {
  double phase = phase0;
  for (std::size_t start = 0; start < out.size(); start += block) {
    const std::size_t end = std::min(out.size(), start + block);
    const double f = freq_at(start, end);
    const double dphi = 2.0 * std::numbers::pi * f / fs;
    std::complex<double> z(std::cos(phase), std::sin(phase));
    const std::complex<double> rot(std::cos(dphi), std::sin(dphi));
    for (std::size_t n = start; n < end; ++n) {
      out[n] = z.imag();
      z *= rot;
    }
    phase = std::fmod(phase + dphi * static_cast<double>(end - start), 2.0 * std::numbers::pi);
  }
}

}  // namespace channel_detail

/// Switching frequency over time: drifting random walk plus optional FM.
/// Exposed so tests and the harness can compare against ground truth.
inline std::vector<double> pfc_frequency_track(const DeviceModel& device, double duration_s, std::uint64_t seed) {
  auto eng = rng::make_engine(rng::derive_seed(seed, "pfc-drift"));
  const auto knots_needed = static_cast<std::size_t>(std::ceil(duration_s / channel_detail::kDriftKnotSpacingS)) + 2;
  // Ten knot spacings = 5 s, so each step may use a tenth of the 5 s budget.
  const double max_step = device.pfc_drift_hz_per_5s * channel_detail::kDriftKnotSpacingS / 5.0;
  return channel_detail::uniform_walk_knots(knots_needed, max_step, eng);
}

inline double pfc_frequency_at(const DeviceModel& device, const std::vector<double>& drift_knots, double t) {
  double f = device.pfc_freq_hz + channel_detail::interp_knots(drift_knots, channel_detail::kDriftKnotSpacingS, t);
  if (device.fm_spread_hz > 0.0 && device.fm_rate_hz > 0.0)
    f += 0.5 * device.fm_spread_hz * std::sin(2.0 * std::numbers::pi * device.fm_rate_hz * t);
  for (auto it = device.forced_steps.rbegin(); it != device.forced_steps.rend(); ++it) {
    if (t >= it->at_s) {
      f += it->offset_hz;
      break;
    }
  }
  return f;
}

/// Device current i(t) = I_env(t) [sin(2 pi f_mains t) + g sin(phi_pfc(t))].
/// I_env is the load mapped onto [sqrt2 idle, sqrt2 peak] through a first-order
/// lag starting from zero current. `cpu_load` shorter than the requested duration
/// holds its last value.
inline SignalTrace synthesize_current(const DeviceModel& device, const SignalTrace& cpu_load, double duration_s,
                                      double sample_rate_hz, std::uint64_t seed, double mains_freq_hz = 60.0) {
  device.validate();
  if (cpu_load.sample_rate_hz() != sample_rate_hz)
    throw RateMismatch("cpu load sampled at " + std::to_string(cpu_load.sample_rate_hz()) + " Hz, output at " +
                       std::to_string(sample_rate_hz) + " Hz");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
  if (n == 0) throw InvalidModel("duration must cover at least one sample");
  for (double v : cpu_load.samples())
    if (v < 0.0 || v > 1.0) throw InvalidModel("cpu load must lie in [0, 1]");

  const double fs = sample_rate_hz;
  const auto block = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fs * 1e-3)));

  std::vector<double> mains(n);
  channel_detail::block_oscillator(mains, fs, 0.0, block, [&](std::size_t, std::size_t) { return mains_freq_hz; });

  auto eng = rng::make_engine(rng::derive_seed(seed, "pfc-phase"));
  const double phase0 = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(eng);
  const auto knots = pfc_frequency_track(device, duration_s, seed);
  std::vector<double> ripple(n);
  channel_detail::block_oscillator(ripple, fs, phase0, block, [&](std::size_t a, std::size_t b) {
    const double t_mid = 0.5 * static_cast<double>(a + b - 1) / fs;
    return pfc_frequency_at(device, knots, t_mid);
  });

  const double lo = std::numbers::sqrt2 * device.idle_current_a;
  const double hi = std::numbers::sqrt2 * device.peak_current_a;
  const double alpha = 1.0 - std::exp(-1.0 / (fs * device.lag_tau_s));
  const auto& load = cpu_load.samples();
  std::vector<double> out(n);
  double env = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = load[std::min(i, load.size() - 1)];
    const double target = lo + l * (hi - lo);
    env += alpha * (target - env);
    const double ripple_amp = device.ripple_gain * (device.inverted_ripple ? std::max(0.0, lo + hi - env) : env);
    out[i] = env * mains[i] + ripple_amp * ripple[i];
  }
  return SignalTrace(std::move(out), fs, Unit::amps);
}

/// Constant load with uniform +-jitter re-drawn at `update_hz` (idle background PCs).
inline SignalTrace background_load(double base_load, double jitter, double update_hz, double duration_s,
                                   double sample_rate_hz, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
  auto eng = rng::make_engine(rng::derive_seed(seed, "background-load"));
  std::uniform_real_distribution<double> u(-jitter, jitter);
  const auto period = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(sample_rate_hz / update_hz)));
  std::vector<double> out(std::max<std::size_t>(n, 1));
  double level = base_load;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i % period == 0) level = std::clamp(base_load * (1.0 + u(eng)), 0.0, 1.0);
    out[i] = level;
  }
  return SignalTrace(std::move(out), sample_rate_hz, Unit::dimensionless);
}

/// Mains source at the outlet: (sqrt2 V + drift(t)) sin(2 pi f t) + white noise.
inline SignalTrace source_voltage(const NetworkModel& network, double duration_s, double sample_rate_hz,
                                  std::uint64_t seed) {
  network.validate();
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
  if (n == 0) throw InvalidModel("duration must cover at least one sample");
  const auto& noise = network.grid_noise;

  auto drift_eng = rng::make_engine(rng::derive_seed(seed, "grid-drift"));
  const auto knot_count =
      static_cast<std::size_t>(std::ceil(duration_s / channel_detail::kGridDriftKnotSpacingS)) + 2;
  // 600 knots per minute: the random walk's one-minute standard deviation equals the amplitude.
  std::normal_distribution<double> drift_step(0.0, noise.slow_drift_amplitude_v / std::sqrt(600.0));
  std::vector<double> drift(knot_count, 0.0);
  for (std::size_t i = 1; i < knot_count; ++i)
    drift[i] = drift[i - 1] + (noise.slow_drift_amplitude_v > 0.0 ? drift_step(drift_eng) : 0.0);

  auto noise_eng = rng::make_engine(rng::derive_seed(seed, "grid-broadband"));
  std::normal_distribution<double> white(0.0, 1.0);

  const double peak = std::numbers::sqrt2 * network.source_voltage_rms;
  const double w = 2.0 * std::numbers::pi * network.mains_freq_hz / sample_rate_hz;
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate_hz;
    const double amp = peak + channel_detail::interp_knots(drift, channel_detail::kGridDriftKnotSpacingS, t);
    v[i] = amp * std::sin(w * static_cast<double>(i));
    if (noise.broadband_noise_rms_v > 0.0) v[i] += noise.broadband_noise_rms_v * white(noise_eng);
  }
  return SignalTrace(std::move(v), sample_rate_hz, Unit::volts);
}

/// Receiver-outlet voltage for a set of device currents sharing the bus.
/// `receiver_current` is the receiver's own draw (zero when null).
inline SignalTrace superpose(const NetworkModel& network, std::span<const SignalTrace> device_currents,
                             std::uint64_t seed, const SignalTrace* receiver_current = nullptr) {
  if (device_currents.empty()) throw EmptyDeviceList("superposition needs at least one device current");
  const double fs = device_currents.front().sample_rate_hz();
  const std::size_t n = device_currents.front().size();
  for (const auto& c : device_currents) {
    if (c.sample_rate_hz() != fs) throw RateMismatch("device currents use different sample rates");
    if (c.size() != n) throw LengthMismatch("device currents have different lengths");
  }
  if (receiver_current != nullptr) {
    if (receiver_current->sample_rate_hz() != fs) throw RateMismatch("receiver current sample rate differs");
    if (receiver_current->size() != n) throw LengthMismatch("receiver current length differs");
  }

  auto v = std::move(source_voltage(network, static_cast<double>(n) / fs, fs, seed)).release();
  v.resize(n, 0.0);
  const double r = network.common_resistance_ohm;
  for (const auto& c : device_currents) {
    const auto& s = c.samples();
    for (std::size_t i = 0; i < n; ++i) v[i] -= r * s[i];
  }
  if (receiver_current != nullptr) {
    const double rr = r + network.receiver_branch_resistance_ohm;
    const auto& s = receiver_current->samples();
    for (std::size_t i = 0; i < n; ++i) v[i] -= rr * s[i];
  }
  return SignalTrace(std::move(v), fs, Unit::volts);
}

/// RC high-pass followed by a mid-tread uniform quantizer over +-full_scale.
inline SignalTrace receiver_frontend(const SignalTrace& v, const AdcSpec& adc) {
  adc.validate();
  auto x = std::move(high_pass(v, adc.highpass_cutoff_hz)).release();
  const double levels = std::ldexp(1.0, adc.resolution_bits);
  const double step = 2.0 * adc.full_scale_v / levels;
  const double qmin = -levels / 2.0;
  const double qmax = levels / 2.0 - 1.0;
  for (double& s : x) s = std::clamp(std::round(s / step), qmin, qmax) * step;
  return SignalTrace(std::move(x), v.sample_rate_hz(), v.unit());
}

inline constexpr double kLineFilterPassHz = 1e3;
inline constexpr double kLineFilterStopHz = 20e3;

/// Gain of a power-line noise filter: unity below 1 kHz, 1/attenuation above
/// 20 kHz, straight line in log-log between.
inline double line_filter_gain(double f_hz, double attenuation_factor) {
  if (f_hz <= kLineFilterPassHz) return 1.0;
  if (f_hz >= kLineFilterStopHz) return 1.0 / attenuation_factor;
  const double frac = std::log(f_hz / kLineFilterPassHz) / std::log(kLineFilterStopHz / kLineFilterPassHz);
  return std::exp(-frac * std::log(attenuation_factor));
}

inline SignalTrace line_filter(const SignalTrace& current, double attenuation_factor) {
  if (!(attenuation_factor >= 1.0))
    throw InvalidAttenuation("attenuation factor must be >= 1, got " + std::to_string(attenuation_factor));
  const double fs = current.sample_rate_hz();
  const std::size_t n = current.size();
  const auto pad = static_cast<std::size_t>(std::ceil(0.01 * fs));
  const std::size_t nfft = fft::good_size(n + pad);
  auto spec = fft::rfft(current.samples(), nfft);
  for (std::size_t k = 0; k < spec.size(); ++k)
    spec[k] *= line_filter_gain(static_cast<double>(k) * fs / static_cast<double>(nfft), attenuation_factor);
  auto out = fft::irfft(spec, nfft);
  out.resize(n);
  return SignalTrace(std::move(out), fs, current.unit());
}

}  // namespace node
