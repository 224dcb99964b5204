#pragma once

// Software countermeasures that reshape a machine's CPU load:
//   * Random Noise: CPU-heavy bursts at random intervals added to the
//     transmitter's own load.
//   * Random Power: a closed loop that holds modeled power on a random target
//     redrawn periodically from a Gaussian truncated to [0, 1], using extra
//     load to push power up and throttling (DVFS) to pull it down.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "node/errors.hpp"
#include "node/rng.hpp"
#include "node/signal_core.hpp"
#include "node/txmod.hpp"

namespace node {

/// Affine CPU-load to watts map.
struct PowerModel {
  double idle_w = 28.0;
  double dynamic_w = 57.0;

  double watts(double load) const { return idle_w + dynamic_w * load; }
  double load_for(double watts_value) const { return (watts_value - idle_w) / dynamic_w; }
};

struct TruncatedGaussianSpec {
  double mu = 0.5;
  double sigma = 0.5;
  /// Target power for samples 0 and 1.
  double power_lo_w = 35.0;
  double power_hi_w = 85.0;

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DegenerateSpec("sigma must be positive and finite");
    if (!std::isfinite(mu)) throw DegenerateSpec("mu must be finite");
  }

  /// Probability mass of the untruncated Gaussian inside [0, 1].
  double mass() const {
    const double s = sigma * std::numbers::sqrt2;
    return 0.5 * (std::erf((1.0 - mu) / s) - std::erf(-mu / s));
  }

  double pdf(double x) const {
    if (x < 0.0 || x > 1.0) return 0.0;
    const double z = (x - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi) * mass());
  }

  double cdf(double x) const {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double s = sigma * std::numbers::sqrt2;
    return 0.5 * (std::erf((x - mu) / s) - std::erf(-mu / s)) / mass();
  }

  double to_watts(double x) const { return power_lo_w + x * (power_hi_w - power_lo_w); }
};

/// Rejection sampler: Gaussian draws outside [0, 1] are discarded.
class TruncatedGaussianSampler {
 public:
  static constexpr long kMaxConsecutiveRejections = 1'000'000;

  TruncatedGaussianSampler(const TruncatedGaussianSpec& spec, std::uint64_t seed)
      : eng_(rng::make_engine(rng::derive_seed(seed, "truncated-gaussian"))), dist_(spec.mu, spec.sigma) {
    spec.validate();
  }

  double operator()() {
    for (long i = 0; i < kMaxConsecutiveRejections; ++i) {
      const double x = dist_(eng_);
      if (x >= 0.0 && x <= 1.0) return x;
    }
    throw DegenerateSpec("no sample inside [0, 1] after " + std::to_string(kMaxConsecutiveRejections) + " draws");
  }

 private:
  rng::Engine eng_;
  std::normal_distribution<double> dist_;
};

inline std::vector<double> sample_truncated_gaussian(const TruncatedGaussianSpec& spec, std::uint64_t seed,
                                                     std::size_t n) {
  if (n == 0) throw ConfigError("sample count must be positive");
  TruncatedGaussianSampler sampler(spec, seed);
  std::vector<double> out(n);
  for (auto& x : out) x = sampler();
  return out;
}

struct RandomNoiseConfig {
  double interval_s = 0.033;
  double duty = 0.5;
  double cores_scale = 1.0;

  void validate() const {
    if (!(interval_s > 0.0)) throw ConfigError("random noise interval must be positive");
    if (!(duty >= 0.0 && duty <= 1.0)) throw ConfigError("random noise duty must lie in [0, 1]");
    if (!(cores_scale > 0.0 && cores_scale <= 1.0)) throw ConfigError("random noise cores_scale must lie in (0, 1]");
  }
};

/// Each interval is independently busy (cores_scale) with probability `duty`.
/// A busy interval for one duty stays busy for every larger duty under the same seed.
inline LoadWaveform random_noise_load(const RandomNoiseConfig& cfg, double duration_s, double sample_rate_hz,
                                      std::uint64_t seed) {
  cfg.validate();
  const auto intervals = static_cast<std::size_t>(std::ceil(duration_s / cfg.interval_s - 1e-9));
  if (intervals == 0) throw ConfigError("duration shorter than one random-noise interval");
  auto eng = rng::make_engine(rng::derive_seed(seed, "random-noise"));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> levels(intervals);
  for (auto& l : levels) l = u(eng) < cfg.duty ? cfg.cores_scale : 0.0;
  auto wave = tx_detail::staircase(levels, cfg.interval_s, sample_rate_hz);
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
  auto samples = std::move(wave).release();
  samples.resize(std::max<std::size_t>(n, 1), levels.back());
  return {SignalTrace(std::move(samples), sample_rate_hz, Unit::dimensionless), cfg.cores_scale};
}

/// Sample-wise min(1, a + b), with b held at its last value if shorter.
inline SignalTrace combine_loads(const SignalTrace& a, const SignalTrace& b) {
  if (a.sample_rate_hz() != b.sample_rate_hz()) throw RateMismatch("load waveforms use different sample rates");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a[i] + b[std::min(i, b.size() - 1)], 0.0, 1.0);
  return SignalTrace(std::move(out), a.sample_rate_hz(), Unit::dimensionless);
}

struct RandomPowerConfig {
  TruncatedGaussianSpec target;
  double update_period_s = 0.040;
  double controller_gain = 0.8;
  /// Power is sampled and corrected this often; targets change every update_period_s.
  double control_period_s = 0.001;
  /// Lowest DVFS scaling applied to the transmitter's load.
  double min_throttle = 0.2;
  PowerModel power;

  void validate() const {
    target.validate();
    if (!(update_period_s > 0.0)) throw ConfigError("random power update period must be positive");
    if (!(control_period_s > 0.0)) throw ConfigError("random power control period must be positive");
    if (!(controller_gain > 0.0 && controller_gain <= 1.0)) throw ConfigError("controller gain must lie in (0, 1]");
    if (!(min_throttle > 0.0 && min_throttle <= 1.0)) throw ConfigError("min throttle must lie in (0, 1]");
    if (!(power.dynamic_w > 0.0)) throw ConfigError("power model needs a positive dynamic range");
  }
};

struct RandomPowerTrace {
  LoadWaveform total;
  /// Target power in watts for each update period.
  std::vector<double> targets_w;
};

/// Closed-loop power randomization on top of `transmitter_load`. Every control
/// tick the controller measures modeled power and moves the total load a
/// fraction `controller_gain` of the way to the current target. It adds
/// defense load when the target is above the transmitter's own draw and
/// throttles the transmitter (factor in [min_throttle, 1]) when below.
inline RandomPowerTrace random_power_trace(const RandomPowerConfig& cfg, double duration_s, double sample_rate_hz,
                                           const LoadWaveform& transmitter_load, std::uint64_t seed) {
  cfg.validate();
  const auto& tx = transmitter_load.load;
  if (tx.sample_rate_hz() != sample_rate_hz) throw RateMismatch("transmitter load sample rate differs");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
  if (n == 0) throw ConfigError("duration must cover at least one sample");
  const auto tick = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.control_period_s * sample_rate_hz)));
  const auto update = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.update_period_s * sample_rate_hz)));

  TruncatedGaussianSampler sampler(cfg.target, seed);
  std::vector<double> targets_w;
  std::vector<double> total(n);
  double defense = 0.0;
  double throttle = 1.0;
  double target_load = 0.0;
  std::size_t next_update = 0;
  for (std::size_t start = 0; start < n; start += tick) {
    const std::size_t end = std::min(n, start + tick);
    while (start >= next_update) {
      targets_w.push_back(cfg.target.to_watts(sampler()));
      target_load = std::clamp(cfg.power.load_for(targets_w.back()), 0.0, 1.0);
      next_update += update;
    }
    const double tx_now = tx[std::min(start, tx.size() - 1)];
    const double measured = std::clamp(throttle * tx_now + defense, 0.0, 1.0);
    const double wanted = measured + cfg.controller_gain * (target_load - measured);
    if (wanted >= tx_now) {
      throttle = 1.0;
      defense = std::min(1.0 - tx_now, wanted - tx_now);
    } else {
      defense = 0.0;
      throttle = tx_now > 0.0 ? std::clamp(wanted / tx_now, cfg.min_throttle, 1.0) : 1.0;
    }
    for (std::size_t i = start; i < end; ++i)
      total[i] = std::clamp(throttle * tx[std::min(i, tx.size() - 1)] + defense, 0.0, 1.0);
  }
  return {{SignalTrace(std::move(total), sample_rate_hz, Unit::dimensionless), transmitter_load.cores_scale},
          std::move(targets_w)};
}

inline LoadWaveform random_power_load(const RandomPowerConfig& cfg, double duration_s, double sample_rate_hz,
                                      const LoadWaveform& transmitter_load, std::uint64_t seed) {
  return random_power_trace(cfg, duration_s, sample_rate_hz, transmitter_load, seed).total;
}

/// Mean modeled power above the idle baseline.
inline double power_overhead(const SignalTrace& load, const PowerModel& model, double baseline_idle_w) {
  if (load.size() == 0) throw EmptyTrace("load trace is empty");
  double sum = 0.0;
  for (double l : load.samples()) sum += model.watts(l);
  return sum / static_cast<double>(load.size()) - baseline_idle_w;
}

inline double power_overhead(const LoadWaveform& load, const PowerModel& model, double baseline_idle_w) {
  return power_overhead(load.load, model, baseline_idle_w);
}

}  // namespace node
