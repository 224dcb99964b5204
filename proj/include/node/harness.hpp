#pragma once

// Scenario configuration, end-to-end runs, sweeps and report export.
//
// A scenario is one receiver outlet on a shared bus with any number of
// transmitting machines and idle background machines. run_scenario
// synthesizes the receiver trace and decodes every frame of every
// transmitter; sweep repeats that over a grid of one numeric config value.
//
// Config files are JSON mirroring the Scenario struct field by field (see
// configs/default.json). Unknown keys are rejected.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "node/channel.hpp"
#include "node/defense.hpp"
#include "node/errors.hpp"
#include "node/rng.hpp"
#include "node/rxdsp.hpp"
#include "node/signal_core.hpp"
#include "node/trace_io.hpp"
#include "node/txmod.hpp"

namespace node {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Load scale when only some of four cores run the modulator. Power does not
/// grow linearly with active cores; these are fitted to the default channel.
inline double cores_scale_for(int cores) {
  switch (cores) {
    case 1: return 0.20;
    case 2: return 0.30;
    case 3: return 0.50;
    case 4: return 1.0;
    default: throw ConfigError("cores must be 1..4, got " + std::to_string(cores));
  }
}

inline const std::vector<std::string>& device_preset_names() {
  static const std::vector<std::string> names{"optiplex", "poweredge", "xps", "acer", "custom1", "custom2", "imac"};
  return names;
}

inline DeviceModel device_preset(const std::string& name) {
  DeviceModel d;
  if (name == "optiplex") {
    d.pfc_freq_hz = 67.3e3;
  } else if (name == "poweredge") {
    d.pfc_freq_hz = 65.8e3;
  } else if (name == "xps") {
    d.pfc_freq_hz = 60.1e3;
  } else if (name == "acer") {
    d.pfc_freq_hz = 63.5e3;
    d.ripple_gain = 0.004;
  } else if (name == "custom1") {
    d.pfc_freq_hz = 91.2e3;
    d.ripple_gain = 0.0045;
  } else if (name == "custom2") {
    d.pfc_freq_hz = 67.7e3;
    d.ripple_gain = 0.0042;
  } else if (name == "imac") {
    // Ripple shrinks under load, responds slowly, and is smeared over ~1 kHz.
    d.pfc_freq_hz = 101e3;
    d.inverted_ripple = true;
    d.lag_tau_s = 0.035;
    d.fm_spread_hz = 1000.0;
    d.fm_rate_hz = 20.0;
  } else {
    throw ConfigError("unknown device preset '" + name + "'");
  }
  return d;
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

struct PayloadSource {
  enum class Kind { random, bits, text };
  Kind kind = Kind::random;
  /// Bit string for `bits`; ASCII for `text` (padded with random bits).
  std::string value;
};

struct TransmitterConfig {
  std::string name;
  DeviceModel device;
  FrameSpec frame;
  double cores_scale = 1.0;
  PayloadSource payload;
  double start_s = 0.5;
  std::size_t frames = 1;
  double frame_gap_s = 0.0;
  std::optional<RandomNoiseConfig> random_noise;
  std::optional<RandomPowerConfig> random_power;
  std::optional<double> line_filter_attenuation;
  /// The machine is fed through a UPS. Online-bypass UPS units pass the
  /// utility line straight through, so this has no electrical effect.
  bool ups = false;
  /// Passband already known to the receiver; skips acquisition and fine-tuning.
  std::optional<Passband> receiver_band;
};

struct BackgroundConfig {
  std::size_t count = 30;
  double f_lo_hz = 40e3;
  double f_hi_hz = 150e3;
  /// Background carriers keep at least this far from every transmitter.
  double exclusion_hz = 1e3;
  double base_load = 0.2;
  double jitter = 0.05;
  double update_hz = 1.0;
  DeviceModel device;
  /// Explicit carrier frequencies; when non-empty, `count` is ignored.
  std::vector<double> freqs_hz;
};

enum class TimingMode { blind, oracle };

struct ReceiverConfig {
  /// blind: the pilot is located by sliding search. oracle: the true frame
  /// start is used. Both acquire the passband from the true pilot window.
  TimingMode timing = TimingMode::blind;
  ScanConfig scan = [] {
    ScanConfig c;
    c.f_max_hz = 60.0;
    return c;
  }();
  SyncConfig sync;
  bool fine_tune = true;
  double fine_tune_radius_hz = 500.0;
  /// Start of the band-pass output that is free of filter warm-up.
  double settle_guard_s = 0.1;
};

struct Scenario {
  NetworkModel network;
  std::vector<TransmitterConfig> transmitters;
  BackgroundConfig background;
  AdcSpec adc;
  ReceiverConfig receiver;
  double sample_rate_hz = 500e3;
  /// 0 = last frame end + tail_s.
  double duration_s = 0.0;
  double tail_s = 0.3;
  std::uint64_t seed = 1;
};

inline Scenario default_scenario() {
  Scenario s;
  TransmitterConfig tx;
  tx.name = "optiplex";
  tx.device = device_preset("optiplex");
  s.transmitters.push_back(tx);
  return s;
}

inline double frame_start_s(const TransmitterConfig& tx, std::size_t k) {
  return tx.start_s + static_cast<double>(k) * (tx.frame.frame_duration_s() + tx.frame_gap_s);
}

inline double scenario_duration_s(const Scenario& s) {
  if (s.duration_s > 0.0) return s.duration_s;
  double end = 0.0;
  for (const auto& tx : s.transmitters)
    end = std::max(end, frame_start_s(tx, tx.frames - 1) + tx.frame.frame_duration_s());
  if (end <= 0.0) throw ConfigError("scenario without transmitters needs an explicit duration_s");
  return end + s.tail_s;
}

inline void validate(const Scenario& s) {
  if (!(s.sample_rate_hz > 0.0)) throw ConfigError("sample rate must be positive");
  s.network.validate();
  s.adc.validate();
  s.receiver.scan.validate();
  const double duration = scenario_duration_s(s);
  for (const auto& tx : s.transmitters) {
    tx.device.validate();
    if (!(tx.cores_scale > 0.0 && tx.cores_scale <= 1.0)) throw ConfigError("cores_scale must lie in (0, 1]");
    if (tx.frames == 0) throw ConfigError("transmitter '" + tx.name + "' sends no frames");
    if (tx.start_s < 0.0) throw ConfigError("frame start must be non-negative");
    if (frame_start_s(tx, tx.frames - 1) + tx.frame.frame_duration_s() > duration + 1e-9)
      throw ConfigError("transmitter '" + tx.name + "' frames extend past the scenario duration");
    if (tx.random_noise) tx.random_noise->validate();
    if (tx.random_power) tx.random_power->validate();
    if (tx.line_filter_attenuation && !(*tx.line_filter_attenuation >= 1.0))
      throw InvalidAttenuation("line filter attenuation must be >= 1");
    if (tx.receiver_band) tx.receiver_band->validate(s.sample_rate_hz);
  }
  if (s.background.count > 0 || !s.background.freqs_hz.empty()) {
    if (!(s.background.f_lo_hz < s.background.f_hi_hz)) throw ConfigError("background needs f_lo < f_hi");
    if (!(s.background.update_hz > 0.0)) throw ConfigError("background update rate must be positive");
  }
}

// ---------------------------------------------------------------------------
// JSON mapping
// ---------------------------------------------------------------------------

namespace harness_detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }))
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace harness_detail

inline json to_json(const DeviceModel& d) {
  json steps = json::array();
  for (const auto& st : d.forced_steps) steps.push_back({{"at_s", st.at_s}, {"offset_hz", st.offset_hz}});
  return {{"pfc_freq_hz", d.pfc_freq_hz},
          {"pfc_drift_hz_per_5s", d.pfc_drift_hz_per_5s},
          {"idle_current_a", d.idle_current_a},
          {"peak_current_a", d.peak_current_a},
          {"lag_tau_s", d.lag_tau_s},
          {"ripple_gain", d.ripple_gain},
          {"branch_resistance_ohm", d.branch_resistance_ohm},
          {"inverted_ripple", d.inverted_ripple},
          {"fm_spread_hz", d.fm_spread_hz},
          {"fm_rate_hz", d.fm_rate_hz},
          {"forced_steps", steps}};
}

/// A preset name, or an object with an optional "preset" plus overrides.
inline DeviceModel device_from_json(const json& j, const std::string& where) {
  using harness_detail::read;
  if (j.is_string()) return device_preset(j.get<std::string>());
  harness_detail::check_keys(j,
                             {"preset", "pfc_freq_hz", "pfc_drift_hz_per_5s", "idle_current_a", "peak_current_a",
                              "lag_tau_s", "ripple_gain", "branch_resistance_ohm", "inverted_ripple", "fm_spread_hz",
                              "fm_rate_hz", "forced_steps"},
                             where);
  DeviceModel d = j.contains("preset") ? device_preset(j.at("preset").get<std::string>()) : DeviceModel{};
  read(j, "pfc_freq_hz", d.pfc_freq_hz, where);
  read(j, "pfc_drift_hz_per_5s", d.pfc_drift_hz_per_5s, where);
  read(j, "idle_current_a", d.idle_current_a, where);
  read(j, "peak_current_a", d.peak_current_a, where);
  read(j, "lag_tau_s", d.lag_tau_s, where);
  read(j, "ripple_gain", d.ripple_gain, where);
  read(j, "branch_resistance_ohm", d.branch_resistance_ohm, where);
  read(j, "inverted_ripple", d.inverted_ripple, where);
  read(j, "fm_spread_hz", d.fm_spread_hz, where);
  read(j, "fm_rate_hz", d.fm_rate_hz, where);
  if (j.contains("forced_steps")) {
    d.forced_steps.clear();
    for (const auto& st : j.at("forced_steps")) {
      harness_detail::check_keys(st, {"at_s", "offset_hz"}, where + ".forced_steps");
      FrequencyStep step;
      read(st, "at_s", step.at_s, where);
      read(st, "offset_hz", step.offset_hz, where);
      d.forced_steps.push_back(step);
    }
  }
  return d;
}

inline json to_json(const Scenario& s) {
  json txs = json::array();
  for (const auto& tx : s.transmitters) {
    json t;
    t["name"] = tx.name;
    t["device"] = to_json(tx.device);
    t["frame"] = {{"pilot", format_bits(tx.frame.pilot())},
                  {"payload_len_bits", tx.frame.payload_len()},
                  {"symbol_duration_s", tx.frame.symbol_duration_s()}};
    t["cores_scale"] = tx.cores_scale;
    const char* kinds[] = {"random", "bits", "text"};
    t["payload"] = {{"kind", kinds[static_cast<int>(tx.payload.kind)]}, {"value", tx.payload.value}};
    t["start_s"] = tx.start_s;
    t["frames"] = tx.frames;
    t["frame_gap_s"] = tx.frame_gap_s;
    t["random_noise"] = tx.random_noise ? json{{"interval_s", tx.random_noise->interval_s},
                                               {"duty", tx.random_noise->duty},
                                               {"cores_scale", tx.random_noise->cores_scale}}
                                        : json(nullptr);
    if (tx.random_power) {
      const auto& rp = *tx.random_power;
      t["random_power"] = {{"mu", rp.target.mu},
                           {"sigma", rp.target.sigma},
                           {"power_lo_w", rp.target.power_lo_w},
                           {"power_hi_w", rp.target.power_hi_w},
                           {"update_period_s", rp.update_period_s},
                           {"controller_gain", rp.controller_gain},
                           {"control_period_s", rp.control_period_s},
                           {"min_throttle", rp.min_throttle},
                           {"idle_w", rp.power.idle_w},
                           {"dynamic_w", rp.power.dynamic_w}};
    } else {
      t["random_power"] = nullptr;
    }
    t["line_filter_attenuation"] = tx.line_filter_attenuation ? json(*tx.line_filter_attenuation) : json(nullptr);
    t["ups"] = tx.ups;
    t["receiver_band"] =
        tx.receiver_band ? json::array({tx.receiver_band->lb_hz, tx.receiver_band->ub_hz}) : json(nullptr);
    txs.push_back(t);
  }
  const auto& sc = s.receiver.scan;
  const auto& sy = s.receiver.sync;
  return {{"seed", s.seed},
          {"sample_rate_hz", s.sample_rate_hz},
          {"duration_s", s.duration_s},
          {"tail_s", s.tail_s},
          {"network",
           {{"source_voltage_rms", s.network.source_voltage_rms},
            {"mains_freq_hz", s.network.mains_freq_hz},
            {"common_resistance_ohm", s.network.common_resistance_ohm},
            {"receiver_branch_resistance_ohm", s.network.receiver_branch_resistance_ohm},
            {"grid_noise",
             {{"slow_drift_amplitude_v", s.network.grid_noise.slow_drift_amplitude_v},
              {"broadband_noise_rms_v", s.network.grid_noise.broadband_noise_rms_v}}}}},
          {"adc",
           {{"resolution_bits", s.adc.resolution_bits},
            {"full_scale_v", s.adc.full_scale_v},
            {"highpass_cutoff_hz", s.adc.highpass_cutoff_hz}}},
          {"background",
           {{"count", s.background.count},
            {"f_lo_hz", s.background.f_lo_hz},
            {"f_hi_hz", s.background.f_hi_hz},
            {"exclusion_hz", s.background.exclusion_hz},
            {"base_load", s.background.base_load},
            {"jitter", s.background.jitter},
            {"update_hz", s.background.update_hz},
            {"device", to_json(s.background.device)},
            {"freqs_hz", s.background.freqs_hz}}},
          {"receiver",
           {{"timing", s.receiver.timing == TimingMode::blind ? "blind" : "oracle"},
            {"scan",
             {{"f_lo_hz", sc.f_lo_hz},
              {"f_hi_hz", sc.f_hi_hz},
              {"f_max_hz", sc.f_max_hz},
              {"f_inc_hz", sc.f_inc_hz},
              {"min_contrast", sc.min_contrast},
              {"min_band_snr_db", sc.min_band_snr_db},
              {"edge_margin_hz", sc.edge_margin_hz},
              {"allow_inverted", sc.allow_inverted},
              {"threads", sc.threads}}},
            {"sync",
             {{"min_contrast", sy.min_contrast},
              {"min_band_snr_db", sy.min_band_snr_db},
              {"min_swing_fraction", sy.min_swing_fraction},
              {"allow_inverted", sy.allow_inverted},
              {"substeps", sy.substeps}}},
            {"fine_tune", s.receiver.fine_tune},
            {"fine_tune_radius_hz", s.receiver.fine_tune_radius_hz},
            {"settle_guard_s", s.receiver.settle_guard_s}}},
          {"transmitters", txs}};
}

inline Scenario scenario_from_json(const json& j) {
  using harness_detail::check_keys;
  using harness_detail::read;
  check_keys(j,
             {"seed", "sample_rate_hz", "duration_s", "tail_s", "network", "adc", "background", "receiver",
              "transmitters"},
             "scenario");
  Scenario s;
  read(j, "seed", s.seed, "scenario");
  read(j, "sample_rate_hz", s.sample_rate_hz, "scenario");
  read(j, "duration_s", s.duration_s, "scenario");
  read(j, "tail_s", s.tail_s, "scenario");
  if (j.contains("network")) {
    const auto& n = j.at("network");
    check_keys(n,
               {"source_voltage_rms", "mains_freq_hz", "common_resistance_ohm", "receiver_branch_resistance_ohm",
                "grid_noise"},
               "network");
    read(n, "source_voltage_rms", s.network.source_voltage_rms, "network");
    read(n, "mains_freq_hz", s.network.mains_freq_hz, "network");
    read(n, "common_resistance_ohm", s.network.common_resistance_ohm, "network");
    read(n, "receiver_branch_resistance_ohm", s.network.receiver_branch_resistance_ohm, "network");
    if (n.contains("grid_noise")) {
      const auto& g = n.at("grid_noise");
      check_keys(g, {"slow_drift_amplitude_v", "broadband_noise_rms_v"}, "network.grid_noise");
      read(g, "slow_drift_amplitude_v", s.network.grid_noise.slow_drift_amplitude_v, "network.grid_noise");
      read(g, "broadband_noise_rms_v", s.network.grid_noise.broadband_noise_rms_v, "network.grid_noise");
    }
  }
  if (j.contains("adc")) {
    const auto& a = j.at("adc");
    check_keys(a, {"resolution_bits", "full_scale_v", "highpass_cutoff_hz"}, "adc");
    read(a, "resolution_bits", s.adc.resolution_bits, "adc");
    read(a, "full_scale_v", s.adc.full_scale_v, "adc");
    read(a, "highpass_cutoff_hz", s.adc.highpass_cutoff_hz, "adc");
  }
  if (j.contains("background")) {
    const auto& b = j.at("background");
    check_keys(b,
               {"count", "f_lo_hz", "f_hi_hz", "exclusion_hz", "base_load", "jitter", "update_hz", "device",
                "freqs_hz"},
               "background");
    read(b, "count", s.background.count, "background");
    read(b, "f_lo_hz", s.background.f_lo_hz, "background");
    read(b, "f_hi_hz", s.background.f_hi_hz, "background");
    read(b, "exclusion_hz", s.background.exclusion_hz, "background");
    read(b, "base_load", s.background.base_load, "background");
    read(b, "jitter", s.background.jitter, "background");
    read(b, "update_hz", s.background.update_hz, "background");
    read(b, "freqs_hz", s.background.freqs_hz, "background");
    if (b.contains("device")) s.background.device = device_from_json(b.at("device"), "background.device");
  }
  if (j.contains("receiver")) {
    const auto& r = j.at("receiver");
    check_keys(r, {"timing", "scan", "sync", "fine_tune", "fine_tune_radius_hz", "settle_guard_s"}, "receiver");
    if (r.contains("timing")) {
      const auto t = r.at("timing").get<std::string>();
      if (t == "blind") s.receiver.timing = TimingMode::blind;
      else if (t == "oracle") s.receiver.timing = TimingMode::oracle;
      else throw ConfigError("receiver.timing must be \"blind\" or \"oracle\"");
    }
    if (r.contains("scan")) {
      const auto& c = r.at("scan");
      auto& sc = s.receiver.scan;
      check_keys(c,
                 {"f_lo_hz", "f_hi_hz", "f_max_hz", "f_inc_hz", "min_contrast", "min_band_snr_db", "edge_margin_hz",
                  "allow_inverted", "threads"},
                 "receiver.scan");
      read(c, "f_lo_hz", sc.f_lo_hz, "receiver.scan");
      read(c, "f_hi_hz", sc.f_hi_hz, "receiver.scan");
      read(c, "f_max_hz", sc.f_max_hz, "receiver.scan");
      read(c, "f_inc_hz", sc.f_inc_hz, "receiver.scan");
      read(c, "min_contrast", sc.min_contrast, "receiver.scan");
      read(c, "min_band_snr_db", sc.min_band_snr_db, "receiver.scan");
      read(c, "edge_margin_hz", sc.edge_margin_hz, "receiver.scan");
      read(c, "allow_inverted", sc.allow_inverted, "receiver.scan");
      read(c, "threads", sc.threads, "receiver.scan");
    }
    if (r.contains("sync")) {
      const auto& c = r.at("sync");
      auto& sy = s.receiver.sync;
      check_keys(c, {"min_contrast", "min_band_snr_db", "min_swing_fraction", "allow_inverted", "substeps"},
                 "receiver.sync");
      read(c, "min_contrast", sy.min_contrast, "receiver.sync");
      read(c, "min_band_snr_db", sy.min_band_snr_db, "receiver.sync");
      read(c, "min_swing_fraction", sy.min_swing_fraction, "receiver.sync");
      read(c, "allow_inverted", sy.allow_inverted, "receiver.sync");
      read(c, "substeps", sy.substeps, "receiver.sync");
    }
    read(r, "fine_tune", s.receiver.fine_tune, "receiver");
    read(r, "fine_tune_radius_hz", s.receiver.fine_tune_radius_hz, "receiver");
    read(r, "settle_guard_s", s.receiver.settle_guard_s, "receiver");
  }
  if (j.contains("transmitters")) {
    std::size_t index = 0;
    for (const auto& t : j.at("transmitters")) {
      const std::string where = "transmitters[" + std::to_string(index++) + "]";
      check_keys(t,
                 {"name", "device", "frame", "cores", "cores_scale", "payload", "start_s", "frames", "frame_gap_s",
                  "random_noise", "random_power", "line_filter_attenuation", "ups", "receiver_band"},
                 where);
      TransmitterConfig tx;
      read(t, "name", tx.name, where);
      if (t.contains("device")) tx.device = device_from_json(t.at("device"), where + ".device");
      if (t.contains("frame")) {
        const auto& f = t.at("frame");
        check_keys(f, {"pilot", "payload_len_bits", "symbol_duration_s"}, where + ".frame");
        std::string pilot = format_bits(tx.frame.pilot());
        std::size_t payload_len = tx.frame.payload_len();
        double symbol_s = tx.frame.symbol_duration_s();
        read(f, "pilot", pilot, where + ".frame");
        read(f, "payload_len_bits", payload_len, where + ".frame");
        read(f, "symbol_duration_s", symbol_s, where + ".frame");
        tx.frame = FrameSpec(parse_bits(pilot), payload_len, symbol_s);
      }
      if (t.contains("cores") && !t.at("cores").is_null()) tx.cores_scale = cores_scale_for(t.at("cores").get<int>());
      read(t, "cores_scale", tx.cores_scale, where);
      if (t.contains("payload")) {
        const auto& p = t.at("payload");
        if (p.is_string()) {
          tx.payload.kind = PayloadSource::Kind::random;
          if (p.get<std::string>() != "random") throw ConfigError(where + ".payload: only \"random\" may be a bare string");
        } else {
          check_keys(p, {"kind", "value"}, where + ".payload");
          std::string kind = "random";
          read(p, "kind", kind, where + ".payload");
          read(p, "value", tx.payload.value, where + ".payload");
          if (kind == "random") tx.payload.kind = PayloadSource::Kind::random;
          else if (kind == "bits") tx.payload.kind = PayloadSource::Kind::bits;
          else if (kind == "text") tx.payload.kind = PayloadSource::Kind::text;
          else throw ConfigError(where + ".payload.kind must be random, bits or text");
        }
      }
      read(t, "start_s", tx.start_s, where);
      read(t, "frames", tx.frames, where);
      read(t, "frame_gap_s", tx.frame_gap_s, where);
      if (t.contains("random_noise") && !t.at("random_noise").is_null()) {
        const auto& c = t.at("random_noise");
        check_keys(c, {"interval_s", "duty", "cores_scale"}, where + ".random_noise");
        RandomNoiseConfig rn;
        read(c, "interval_s", rn.interval_s, where + ".random_noise");
        read(c, "duty", rn.duty, where + ".random_noise");
        read(c, "cores_scale", rn.cores_scale, where + ".random_noise");
        tx.random_noise = rn;
      }
      if (t.contains("random_power") && !t.at("random_power").is_null()) {
        const auto& c = t.at("random_power");
        const std::string w = where + ".random_power";
        check_keys(c,
                   {"mu", "sigma", "power_lo_w", "power_hi_w", "update_period_s", "controller_gain",
                    "control_period_s", "min_throttle", "idle_w", "dynamic_w"},
                   w);
        RandomPowerConfig rp;
        read(c, "mu", rp.target.mu, w);
        read(c, "sigma", rp.target.sigma, w);
        read(c, "power_lo_w", rp.target.power_lo_w, w);
        read(c, "power_hi_w", rp.target.power_hi_w, w);
        read(c, "update_period_s", rp.update_period_s, w);
        read(c, "controller_gain", rp.controller_gain, w);
        read(c, "control_period_s", rp.control_period_s, w);
        read(c, "min_throttle", rp.min_throttle, w);
        read(c, "idle_w", rp.power.idle_w, w);
        read(c, "dynamic_w", rp.power.dynamic_w, w);
        tx.random_power = rp;
      }
      if (t.contains("line_filter_attenuation") && !t.at("line_filter_attenuation").is_null())
        tx.line_filter_attenuation = t.at("line_filter_attenuation").get<double>();
      read(t, "ups", tx.ups, where);
      if (t.contains("receiver_band") && !t.at("receiver_band").is_null()) {
        const auto& b = t.at("receiver_band");
        if (!b.is_array() || b.size() != 2) throw ConfigError(where + ".receiver_band must be [lb_hz, ub_hz]");
        tx.receiver_band = Passband{b[0].get<double>(), b[1].get<double>()};
      }
      if (tx.name.empty()) tx.name = "tx" + std::to_string(index - 1);
      s.transmitters.push_back(std::move(tx));
    }
  }
  validate(s);
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return scenario_from_json(j);
}

/// Config hash (FNV-1a over the canonical JSON) and seed.
inline std::string fingerprint(const Scenario& s) {
  const auto canonical = to_json(s).dump();
  char buf[64];
  std::snprintf(buf, sizeof buf, "%016llx-%llu", static_cast<unsigned long long>(rng::hash_tag(canonical)),
                static_cast<unsigned long long>(s.seed));
  return buf;
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

inline Bits make_payload(const PayloadSource& src, std::size_t len, std::uint64_t seed) {
  auto eng = rng::make_engine(rng::derive_seed(seed, "payload"));
  Bits out;
  switch (src.kind) {
    case PayloadSource::Kind::bits:
      out = parse_bits(src.value);
      if (out.size() != len)
        throw LengthMismatch("payload bit string has " + std::to_string(out.size()) + " bits, frame expects " +
                             std::to_string(len));
      return out;
    case PayloadSource::Kind::text:
      out = bytes_to_bits(src.value);
      if (out.size() > len) out.resize(len);
      break;
    case PayloadSource::Kind::random:
      break;
  }
  while (out.size() < len) out.push_back(static_cast<std::uint8_t>(eng() >> 63));
  return out;
}

struct TransmitterTruth {
  std::vector<Bits> payloads;
  std::vector<double> frame_starts_s;
  /// Switching frequency at the middle of each frame's pilot.
  std::vector<double> pilot_carrier_hz;
  SignalTrace load;
};

struct SynthesizedScenario {
  SignalTrace receiver_voltage;
  std::vector<TransmitterTruth> truth;
  std::vector<double> background_freqs_hz;
};

namespace harness_detail {

inline std::uint64_t tx_seed(const Scenario& s, std::size_t i, std::string_view tag) {
  return rng::derive_seed(s.seed, tag, i);
}

inline std::vector<double> background_frequencies(const Scenario& s) {
  const auto& bg = s.background;
  if (!bg.freqs_hz.empty()) return bg.freqs_hz;
  auto eng = rng::make_engine(rng::derive_seed(s.seed, "background-freqs"));
  std::uniform_real_distribution<double> u(bg.f_lo_hz, bg.f_hi_hz);
  std::vector<double> out;
  for (std::size_t k = 0; k < bg.count; ++k) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw ConfigError("cannot place background carriers outside the exclusion zones");
      const double f = u(eng);
      const bool clear = std::all_of(s.transmitters.begin(), s.transmitters.end(), [&](const auto& tx) {
        return std::abs(f - tx.device.pfc_freq_hz) >= bg.exclusion_hz;
      });
      if (clear) {
        out.push_back(f);
        break;
      }
    }
  }
  return out;
}

}  // namespace harness_detail

inline SynthesizedScenario synthesize(const Scenario& s) {
  validate(s);
  const double fs = s.sample_rate_hz;
  const double duration = scenario_duration_s(s);
  const auto n = static_cast<std::size_t>(std::llround(duration * fs));
  SynthesizedScenario out{SignalTrace::zeros(n, fs), {}, {}};

  std::vector<SignalTrace> currents;
  for (std::size_t i = 0; i < s.transmitters.size(); ++i) {
    const auto& tx = s.transmitters[i];
    TransmitterTruth truth{{}, {}, {}, SignalTrace::zeros(1, fs, Unit::dimensionless)};
    std::vector<double> load(n, 0.0);
    const auto drift = pfc_frequency_track(tx.device, duration, harness_detail::tx_seed(s, i, "tx-current"));
    for (std::size_t k = 0; k < tx.frames; ++k) {
      const auto payload = make_payload(tx.payload, tx.frame.payload_len(),
                                        rng::derive_seed(harness_detail::tx_seed(s, i, "payload"), "frame", k));
      const double start = frame_start_s(tx, k);
      const auto wave = modulate(build_frame(payload, tx.frame), tx.frame, fs, tx.cores_scale);
      const auto offset = static_cast<std::size_t>(std::llround(start * fs));
      for (std::size_t m = 0; m < wave.load.size() && offset + m < n; ++m) load[offset + m] = wave.load[m];
      truth.payloads.push_back(payload);
      truth.frame_starts_s.push_back(start);
      truth.pilot_carrier_hz.push_back(pfc_frequency_at(tx.device, drift, start + 0.5 * tx.frame.pilot_duration_s()));
    }
    LoadWaveform wave{SignalTrace(std::move(load), fs, Unit::dimensionless), tx.cores_scale};
    if (tx.random_noise) {
      const auto rn = random_noise_load(*tx.random_noise, duration, fs, harness_detail::tx_seed(s, i, "random-noise"));
      wave.load = combine_loads(wave.load, rn.load);
    }
    if (tx.random_power)
      wave = random_power_load(*tx.random_power, duration, fs, wave, harness_detail::tx_seed(s, i, "random-power"));
    auto current = synthesize_current(tx.device, wave.load, duration, fs, harness_detail::tx_seed(s, i, "tx-current"),
                                      s.network.mains_freq_hz);
    if (tx.line_filter_attenuation) current = line_filter(current, *tx.line_filter_attenuation);
    truth.load = std::move(wave.load);
    currents.push_back(std::move(current));
    out.truth.push_back(std::move(truth));
  }

  out.background_freqs_hz = harness_detail::background_frequencies(s);
  if (!out.background_freqs_hz.empty()) {
    std::vector<double> aggregate(n, 0.0);
    for (std::size_t k = 0; k < out.background_freqs_hz.size(); ++k) {
      DeviceModel dev = s.background.device;
      dev.pfc_freq_hz = out.background_freqs_hz[k];
      const auto bl = background_load(s.background.base_load, s.background.jitter, s.background.update_hz, duration,
                                      fs, rng::derive_seed(s.seed, "background-load", k));
      const auto c = synthesize_current(dev, bl, duration, fs, rng::derive_seed(s.seed, "background-current", k),
                                        s.network.mains_freq_hz);
      for (std::size_t m = 0; m < n; ++m) aggregate[m] += c[m];
    }
    currents.emplace_back(std::move(aggregate), fs, Unit::amps);
  }

  const auto grid_seed = rng::derive_seed(s.seed, "grid");
  const auto v = currents.empty() ? source_voltage(s.network, duration, fs, grid_seed)
                                  : superpose(s.network, currents, grid_seed);
  out.receiver_voltage = receiver_frontend(v, s.adc);
  return out;
}

// ---------------------------------------------------------------------------
// Decoding and reports
// ---------------------------------------------------------------------------

struct FrameOutcome {
  std::size_t tx_index = 0;
  std::size_t frame_index = 0;
  double true_start_s = 0.0;
  double true_carrier_hz = 0.0;
  bool missed = false;
  std::string miss_reason;
  /// Present whenever a pilot was accepted, including misaligned ones.
  std::optional<DecodeResult> result;
};

struct RunReport {
  std::vector<std::string> tx_names;
  std::vector<FrameOutcome> frames;
  std::string fingerprint;
  double runtime_s = 0.0;

  std::size_t missed(std::size_t tx) const {
    return static_cast<std::size_t>(
        std::count_if(frames.begin(), frames.end(), [&](const auto& f) { return f.tx_index == tx && f.missed; }));
  }
  /// Mean BER over this transmitter's decoded frames (NaN when none decoded).
  double mean_ber(std::size_t tx) const {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& f : frames)
      if (f.tx_index == tx && !f.missed && f.result && f.result->ber) {
        sum += *f.result->ber;
        ++count;
      }
    return count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
  }
};

/// Receiver pass for one transmitter over a finished trace.
inline std::vector<FrameOutcome> decode_transmitter(const SignalTrace& v, const Scenario& s, std::size_t tx_index,
                                                    const TransmitterTruth& truth) {
  const auto& tx = s.transmitters.at(tx_index);
  const auto& rc = s.receiver;
  const auto& spec = tx.frame;
  const double fs = v.sample_rate_hz();
  const double symbol_s = spec.symbol_duration_s();
  std::optional<Passband> band = tx.receiver_band;
  double search_from = 0.0;
  std::vector<FrameOutcome> out;
  for (std::size_t k = 0; k < tx.frames; ++k) {
    FrameOutcome o;
    o.tx_index = tx_index;
    o.frame_index = k;
    o.true_start_s = truth.frame_starts_s[k];
    o.true_carrier_hz = truth.pilot_carrier_hz[k];
    try {
      if (!band) {
        // The receiver lists every band carrying a pilot in this window; the
        // evaluation pairs this transmitter with the one nearest its carrier.
        const auto bands = scan_all_passbands(v, spec, rc.scan, o.true_start_s);
        band = *std::min_element(bands.begin(), bands.end(), [&](const Passband& a, const Passband& b) {
          return std::abs(a.center_hz() - o.true_carrier_hz) < std::abs(b.center_hz() - o.true_carrier_hz);
        });
      } else if (k > 0 && rc.fine_tune && !tx.receiver_band) {
        band = fine_tune_passband(v, spec, *band, rc.fine_tune_radius_hz, rc.scan, o.true_start_s);
      }
      // The receiver buffers one search window: the next frame may start
      // anywhere up to one frame length (plus the configured gap) later.
      const double slice_start = std::max(0.0, search_from - rc.settle_guard_s);
      const double window_s = rc.settle_guard_s + 2.0 * spec.frame_duration_s() + tx.frame_gap_s + 2.0 * symbol_s;
      const auto first = std::min(v.size(), static_cast<std::size_t>(std::llround(slice_start * fs)));
      const auto count = std::min(v.size() - first, static_cast<std::size_t>(std::llround(window_s * fs)));
      if (count < static_cast<std::size_t>(spec.frame_duration_s() * fs)) throw PilotNotFound("trace ends before a full frame");
      const BandEnvelope env(v.slice(first, count), *band, symbol_s);
      DecodeResult r = rc.timing == TimingMode::oracle
                           ? demodulate_at(env, spec, o.true_start_s - slice_start, truth.payloads[k], rc.sync)
                           : demodulate(env, spec, truth.payloads[k], rc.sync, rc.settle_guard_s);
      r.frame_start_s += slice_start;
      if (std::abs(r.frame_start_s - o.true_start_s) > 0.5 * symbol_s) {
        o.missed = true;
        o.miss_reason = "pilot accepted at the wrong position";
      }
      search_from = r.frame_start_s + spec.frame_duration_s();
      o.result = std::move(r);
    } catch (const NoPilotFound& e) {
      o.missed = true;
      o.miss_reason = std::string("NoPilotFound: ") + e.what();
    } catch (const PilotNotFound& e) {
      o.missed = true;
      o.miss_reason = std::string("PilotNotFound: ") + e.what();
    }
    out.push_back(std::move(o));
  }
  return out;
}

inline RunReport run_scenario(const Scenario& s, const SynthesizedScenario& synth) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.fingerprint = fingerprint(s);
  for (std::size_t i = 0; i < s.transmitters.size(); ++i) {
    report.tx_names.push_back(s.transmitters[i].name);
    auto frames = decode_transmitter(synth.receiver_voltage, s, i, synth.truth[i]);
    report.frames.insert(report.frames.end(), frames.begin(), frames.end());
  }
  report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

inline RunReport run_scenario(const Scenario& s) {
  const auto t0 = std::chrono::steady_clock::now();
  auto report = run_scenario(s, synthesize(s));
  report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

namespace harness_detail {

inline std::string num(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("short write to " + path);
}

}  // namespace harness_detail

inline constexpr const char* kReportCsvHeader = "tx_id,ber,effective_bps,lb_hz,ub_hz,frame_start_s,missed";

/// One row per frame. Missed frames report effective_bps 0 and the band/start
/// of the rejected lock if one existed.
inline std::string report_csv(const RunReport& r) {
  using harness_detail::num;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::string out = std::string(kReportCsvHeader) + "\n";
  for (const auto& f : r.frames) {
    const auto& d = f.result;
    const double ber = (!f.missed && d && d->ber) ? *d->ber : nan;
    const double bps = (!f.missed && d) ? d->effective_bps : 0.0;
    out += std::to_string(f.tx_index) + "," + num(ber) + "," + num(bps) + "," + num(d ? d->passband.lb_hz : nan) +
           "," + num(d ? d->passband.ub_hz : nan) + "," + num(d ? d->frame_start_s : nan) + "," +
           (f.missed ? "1" : "0") + "\n";
  }
  return out;
}

inline std::string report_jsonl(const RunReport& r) {
  std::string out;
  for (const auto& f : r.frames) {
    json j{{"tx_id", f.tx_index},
           {"name", r.tx_names.at(f.tx_index)},
           {"frame", f.frame_index},
           {"missed", f.missed},
           {"true_start_s", f.true_start_s},
           {"true_carrier_hz", f.true_carrier_hz},
           {"fingerprint", r.fingerprint}};
    if (!f.miss_reason.empty()) j["reason"] = f.miss_reason;
    if (f.result) {
      const auto& d = *f.result;
      j["ber"] = d.ber ? json(*d.ber) : json(nullptr);
      j["effective_bps"] = f.missed ? 0.0 : d.effective_bps;
      j["lb_hz"] = d.passband.lb_hz;
      j["ub_hz"] = d.passband.ub_hz;
      j["frame_start_s"] = d.frame_start_s;
      j["threshold"] = d.threshold;
      j["decision_threshold"] = d.decision_threshold;
      j["inverted"] = d.inverted;
      j["bits"] = format_bits(d.bits);
    }
    out += j.dump() + "\n";
  }
  return out;
}

inline void export_report(const RunReport& r, const std::string& format, const std::string& path) {
  if (format == "csv") harness_detail::write_text(path, report_csv(r));
  else if (format == "jsonl") harness_detail::write_text(path, report_jsonl(r));
  else throw ConfigError("unknown export format '" + format + "'");
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

inline const std::map<std::string, std::string>& axis_aliases() {
  static const std::map<std::string, std::string> aliases{
      {"broadband_noise_rms_v", "network.grid_noise.broadband_noise_rms_v"},
      {"common_resistance_ohm", "network.common_resistance_ohm"},
      {"cores_scale", "transmitters.*.cores_scale"},
      {"duty", "transmitters.*.random_noise.duty"},
      {"interval_s", "transmitters.*.random_noise.interval_s"},
      {"line_filter_attenuation", "transmitters.*.line_filter_attenuation"},
      {"symbol_duration_s", "transmitters.*.frame.symbol_duration_s"},
      {"ripple_gain", "transmitters.*.device.ripple_gain"},
      {"lag_tau_s", "transmitters.*.device.lag_tau_s"},
      {"sigma", "transmitters.*.random_power.sigma"},
      {"mu", "transmitters.*.random_power.mu"},
  };
  return aliases;
}

namespace harness_detail {

inline std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  return parts;
}

/// Sets every numeric leaf matched by `parts` ("*" matches all array items).
/// Returns the number of leaves set.
inline std::size_t set_path(json& node, const std::vector<std::string>& parts, std::size_t depth, double value) {
  if (depth == parts.size()) {
    if (!node.is_number()) return 0;
    node = value;
    return 1;
  }
  const auto& key = parts[depth];
  if (node.is_array()) {
    std::size_t count = 0;
    if (key == "*") {
      for (auto& item : node) count += set_path(item, parts, depth + 1, value);
      return count;
    }
    char* end = nullptr;
    const auto idx = std::strtoul(key.c_str(), &end, 10);
    if (end == key.c_str() || *end != '\0' || idx >= node.size()) return 0;
    return set_path(node[idx], parts, depth + 1, value);
  }
  if (node.is_object() && node.contains(key)) return set_path(node[key], parts, depth + 1, value);
  return 0;
}

}  // namespace harness_detail

/// Copy of `base` with the numeric config value(s) at `axis` replaced. The axis is
/// a dotted JSON path ("transmitters.0.cores_scale", "*" for every array item)
/// or one of axis_aliases().
inline Scenario with_axis(const Scenario& base, const std::string& axis, double value) {
  const auto it = axis_aliases().find(axis);
  const std::string path = it != axis_aliases().end() ? it->second : axis;
  auto j = to_json(base);
  if (harness_detail::set_path(j, harness_detail::split_path(path), 0, value) == 0)
    throw UnknownAxis("no numeric config value at '" + axis + "'");
  return scenario_from_json(j);
}

struct SweepRow {
  double value = 0.0;
  double median_ber = 0.0;
  double mean_effective_bps = 0.0;
  double miss_rate = 0.0;
  std::size_t frames = 0;
  std::size_t decoded = 0;
};

namespace harness_detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Runs job(i) for i in [0, count) on `threads` workers.
template <typename Job>
void parallel_for(std::size_t count, unsigned threads, Job job) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  auto worker = [&](unsigned w) {
    try {
      for (std::size_t i = next++; i < count; i = next++) job(i);
    } catch (...) {
      errors[w] = std::current_exception();
      next = count;
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace harness_detail

/// Every cell reuses the same per-frame seeds (frame j runs with seed
/// derive(base.seed, j)), so cells differ only in the swept value.
/// threads = 0 uses every hardware thread.
inline std::vector<SweepRow> sweep(const Scenario& base, const std::string& axis, const std::vector<double>& values,
                                   std::size_t frames_per_cell, unsigned threads = 0) {
  std::vector<Scenario> cells;
  for (double v : values) cells.push_back(with_axis(base, axis, v));
  const std::size_t jobs = cells.size() * frames_per_cell;
  std::vector<std::vector<FrameOutcome>> results(jobs);
  harness_detail::parallel_for(jobs, threads, [&](std::size_t job) {
    Scenario s = cells[job / frames_per_cell];
    s.seed = rng::derive_seed(base.seed, "sweep-frame", job % frames_per_cell);
    results[job] = run_scenario(s).frames;
  });
  std::vector<SweepRow> rows;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    SweepRow row;
    row.value = values[c];
    std::vector<double> bers;
    double bps = 0.0;
    for (std::size_t j = 0; j < frames_per_cell; ++j) {
      for (const auto& f : results[c * frames_per_cell + j]) {
        ++row.frames;
        if (f.missed || !f.result) continue;
        ++row.decoded;
        if (f.result->ber) bers.push_back(*f.result->ber);
        bps += f.result->effective_bps;
      }
    }
    row.median_ber = harness_detail::median(bers);
    row.mean_effective_bps = row.frames ? bps / static_cast<double>(row.frames) : 0.0;
    row.miss_rate = row.frames ? static_cast<double>(row.frames - row.decoded) / static_cast<double>(row.frames) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

inline constexpr const char* kSweepCsvHeader = "value,median_ber,mean_effective_bps,miss_rate,frames,decoded";

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  using harness_detail::num;
  std::string out = std::string(kSweepCsvHeader) + "\n";
  for (const auto& r : rows)
    out += num(r.value) + "," + num(r.median_ber) + "," + num(r.mean_effective_bps) + "," + num(r.miss_rate) + "," +
           std::to_string(r.frames) + "," + std::to_string(r.decoded) + "\n";
  return out;
}

inline std::string sweep_jsonl(const std::vector<SweepRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    json j{{"value", r.value},
           {"median_ber", std::isnan(r.median_ber) ? json(nullptr) : json(r.median_ber)},
           {"mean_effective_bps", r.mean_effective_bps},
           {"miss_rate", r.miss_rate},
           {"frames", r.frames},
           {"decoded", r.decoded}};
    out += j.dump() + "\n";
  }
  return out;
}

inline void export_sweep(const std::vector<SweepRow>& rows, const std::string& format, const std::string& path) {
  if (format == "csv") harness_detail::write_text(path, sweep_csv(rows));
  else if (format == "jsonl") harness_detail::write_text(path, sweep_jsonl(rows));
  else throw ConfigError("unknown export format '" + format + "'");
}

}  // namespace node
