#pragma once

// Blind receiver: passband discovery, frame synchronization, bit extraction
// and the rate/error metrics.
//
// Every bit decision follows the same rule: band-pass the voltage, take the
// envelope, average it over each symbol, and compare against the mean of the
// pilot's per-symbol averages. A pilot is accepted only when that rule
// reproduces the pilot exactly AND the decision has some margin:
//   * contrast = (weakest "1" - strongest "0") / mean >= min_contrast
//   * band energy >= min_band_snr_db above the local noise floor, so a band
//     holding only noise is never searched.
// Without these tests a noise-only band reproduces a 6-bit pilot by chance
// roughly once every 60 offsets.
// The scan also requires the strongest spectral line near the band to sit at
// least edge_margin_hz inside it. Scanning lb upward otherwise always returns
// the band whose upper skirt barely catches the carrier.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "node/errors.hpp"
#include "node/fft.hpp"
#include "node/signal_core.hpp"
#include "node/txmod.hpp"

namespace node {

struct ScanConfig {
  double f_lo_hz = 20e3;
  double f_hi_hz = 150e3;
  double f_max_hz = 500.0;
  double f_inc_hz = 10.0;
  double min_contrast = 0.1;
  double min_band_snr_db = 10.0;
  /// Bands narrower than 2 * edge_margin_hz never pass.
  double edge_margin_hz = 25.0;
  bool allow_inverted = true;
  unsigned threads = 1;

  void validate() const {
    if (!(f_lo_hz < f_hi_hz)) throw ConfigError("scan needs f_lo < f_hi");
    if (!(f_inc_hz > 0.0 && f_inc_hz <= f_max_hz)) throw ConfigError("scan needs 0 < f_inc <= f_max");
    if (f_max_hz > f_hi_hz - f_lo_hz) throw ConfigError("scan window wider than scan range");
  }
};

struct SyncConfig {
  double min_contrast = 0.1;
  double min_band_snr_db = 10.0;
  /// Pilot gap as a fraction of the spread (90th - 10th percentile) of
  /// symbol-length averages across the search window. Keeps noise on an idle
  /// carrier from passing as a pilot.
  double min_swing_fraction = 0.3;
  bool allow_inverted = true;
  /// Offsets tried per symbol.
  int substeps = 8;
};

/// Outcome of comparing per-symbol amplitudes with the pilot.
struct PilotDecision {
  bool matched = false;
  bool inverted = false;
  double threshold = 0.0;
  double contrast = 0.0;
  /// Weakest "1" minus strongest "0" (sign-flipped when inverted).
  double gap = 0.0;
};

struct FrameSync {
  double frame_start_s = 0.0;
  /// Mean envelope over the pilot window.
  double threshold = 0.0;
  /// Mean of the pilot's per-symbol averages, used for every bit decision.
  double decision_threshold = 0.0;
  bool inverted = false;
  double contrast = 0.0;
};

struct DecodeResult {
  Bits bits;
  std::optional<double> ber;
  double effective_bps = 0.0;
  Passband passband;
  double frame_start_s = 0.0;
  double threshold = 0.0;
  double decision_threshold = 0.0;
  bool inverted = false;
  std::vector<double> pilot_amplitudes;
  std::vector<double> bitwise_amplitudes;
};

/// Payload bits per second after removing pilot overhead and errored bits.
inline double effective_rate_bps(std::size_t payload_len, double ber, double frame_duration_s) {
  return static_cast<double>(payload_len) * (1.0 - ber) / frame_duration_s;
}

inline double bit_error_rate(const Bits& decoded, const Bits& reference) {
  if (decoded.size() != reference.size())
    throw LengthMismatch("decoded " + std::to_string(decoded.size()) + " bits, reference has " +
                         std::to_string(reference.size()));
  std::size_t errors = 0;
  for (std::size_t i = 0; i < decoded.size(); ++i) errors += decoded[i] != reference[i] ? 1 : 0;
  return decoded.empty() ? 0.0 : static_cast<double>(errors) / static_cast<double>(decoded.size());
}

namespace rx_detail {

inline PilotDecision decide(std::span<const double> amps, const Bits& pilot, double min_contrast, bool inverted) {
  PilotDecision d;
  d.inverted = inverted;
  const double mean = std::accumulate(amps.begin(), amps.end(), 0.0) / static_cast<double>(amps.size());
  d.threshold = mean;
  if (!(mean > 0.0)) return d;
  double min_one = std::numeric_limits<double>::infinity();
  double max_zero = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < amps.size(); ++i) {
    const bool bit = inverted ? amps[i] < mean : amps[i] > mean;
    if (static_cast<std::uint8_t>(bit) != pilot[i]) return d;
    // In inverted polarity a "1" is a dip.
    const double a = inverted ? -amps[i] : amps[i];
    if (pilot[i]) min_one = std::min(min_one, a);
    else max_zero = std::max(max_zero, a);
  }
  d.gap = min_one - max_zero;
  d.contrast = d.gap / mean;
  d.matched = d.contrast >= min_contrast;
  return d;
}

inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  const auto k = static_cast<std::size_t>(std::llround(q * static_cast<double>(values.size() - 1)));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  return values[k];
}

}  // namespace rx_detail

/// Pilot decision with inverted polarity tried only when normal polarity fails.
inline PilotDecision match_pilot(std::span<const double> amps, const Bits& pilot, double min_contrast,
                                 bool allow_inverted) {
  if (amps.size() != pilot.size()) throw LengthMismatch("pilot amplitude count differs from pilot length");
  auto d = rx_detail::decide(amps, pilot, min_contrast, false);
  if (d.matched || !allow_inverted) return d;
  auto inv = rx_detail::decide(amps, pilot, min_contrast, true);
  return inv.matched ? inv : d;
}

/// Time integral of a uniformly sampled, piecewise-constant signal; sample i
/// covers [t0 + i dt, t0 + (i+1) dt).
class SymbolIntegrator {
 public:
  SymbolIntegrator() = default;
  SymbolIntegrator(std::span<const double> values, double dt, double t0 = 0.0)
      : prefix_(values.size() + 1, 0.0), values_(values.begin(), values.end()), dt_(dt), t0_(t0) {
    for (std::size_t i = 0; i < values.size(); ++i) prefix_[i + 1] = prefix_[i] + values[i];
  }

  double end_s() const { return t0_ + dt_ * static_cast<double>(values_.size()); }

  /// Mean value over [a, b), clipped to the covered span.
  double mean(double a, double b) const {
    a = std::clamp(a, t0_, end_s());
    b = std::clamp(b, t0_, end_s());
    if (!(b > a)) return 0.0;
    return (integral(b) - integral(a)) / (b - a);
  }

  std::vector<double> symbol_means(double start_s, double symbol_s, std::size_t count) const {
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
      const double a = start_s + static_cast<double>(i) * symbol_s;
      out[i] = mean(a, a + symbol_s);
    }
    return out;
  }

 private:
  double integral(double t) const {
    const double pos = (t - t0_) / dt_;
    const auto i = std::min(static_cast<std::size_t>(pos), values_.size());
    double s = prefix_[i] * dt_;
    if (i < values_.size()) s += (pos - static_cast<double>(i)) * dt_ * values_[i];
    return s;
  }

  std::vector<double> prefix_;
  std::vector<double> values_;
  double dt_ = 1.0;
  double t0_ = 0.0;
};

/// Envelope window used by the receiver. Symbol averaging does the real
/// smoothing; a wider window only adds inter-symbol interference.
inline double receiver_envelope_window(double symbol_s) { return symbol_s / 16.0; }

namespace rx_detail {

inline constexpr double kFloorHalfWindowHz = 2500.0;

/// In-band energy over the expected energy of the local noise floor, estimated
/// as the median bin power within +-2.5 kHz (the median of an exponential
/// variable is ln2 times its mean).
inline double band_snr_db(std::span<const double> power, double df, const Passband& band) {
  const auto clamp_bin = [&](double f) {
    return static_cast<std::size_t>(std::clamp(std::llround(f / df), 0LL, static_cast<long long>(power.size()) - 1));
  };
  const std::size_t lo = clamp_bin(band.lb_hz);
  const std::size_t hi = clamp_bin(band.ub_hz);
  double signal = 0.0;
  for (std::size_t k = lo; k <= hi; ++k) signal += power[k];
  std::vector<double> around(power.begin() + static_cast<std::ptrdiff_t>(clamp_bin(band.lb_hz - kFloorHalfWindowHz)),
                             power.begin() + static_cast<std::ptrdiff_t>(clamp_bin(band.ub_hz + kFloorHalfWindowHz)) + 1);
  auto mid = around.begin() + static_cast<std::ptrdiff_t>(around.size() / 2);
  std::nth_element(around.begin(), mid, around.end());
  const double noise = *mid / std::numbers::ln2 * static_cast<double>(hi - lo + 1);
  if (!(noise > 0.0)) return signal > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / noise);
}

}  // namespace rx_detail

/// Band-passed envelope of a whole trace, ready for per-symbol averaging.
class BandEnvelope {
 public:
  BandEnvelope(const SignalTrace& v, const Passband& band, double symbol_s)
      : band_(band), duration_s_(v.duration_s()) {
    band.validate(v.sample_rate_hz());
    const auto env = envelope(band_pass(v, band), receiver_envelope_window(symbol_s));
    integrator_ = SymbolIntegrator(env.samples(), env.dt());
    const std::size_t nfft = fft::good_size(v.size());
    const auto spectrum = fft::rfft(v.samples(), nfft);
    std::vector<double> power(spectrum.size());
    for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(spectrum[k]);
    snr_db_ = rx_detail::band_snr_db(power, v.sample_rate_hz() / static_cast<double>(nfft), band);
  }

  const Passband& band() const { return band_; }
  double duration_s() const { return duration_s_; }
  /// Energy in the band relative to the surrounding noise floor over the whole trace.
  double snr_db() const { return snr_db_; }
  const SymbolIntegrator& integrator() const { return integrator_; }

 private:
  Passband band_;
  double duration_s_;
  double snr_db_ = 0.0;
  SymbolIntegrator integrator_;
};

// ---------------------------------------------------------------------------
// Passband scan.
//
// Band-passing with a windowed-sinc <lb, ub> equals modulating the input down by
// fc = (lb+ub)/2, low-passing with the (ub-lb)/2 prototype, and taking
// y = 2 Re(e^{j w_c n} z). The scanner therefore transforms the pilot segment
// once, and for each candidate band inverse-transforms only the few hundred
// bins inside the band onto a coarse time grid. Because the carrier spans
// hundreds of cycles per envelope window, the rectified-and-smoothed |y| equals
// (4/pi) |z| smoothed by the same window.
// ---------------------------------------------------------------------------

class SpectralBandScanner {
 public:
  SpectralBandScanner(const SignalTrace& v, const FrameSpec& spec, const ScanConfig& cfg, double pilot_start_s = 0.0)
      : spec_(spec), cfg_(cfg), fs_(v.sample_rate_hz()) {
    cfg_.validate();
    if (cfg_.f_hi_hz >= 0.5 * fs_) throw InvalidBand("scan range exceeds Nyquist");
    const std::size_t taps = fir::band_pass_length(fs_);
    half_taps_ = taps / 2;
    const double symbol_s = spec.symbol_duration_s();
    const auto pilot_start = static_cast<std::ptrdiff_t>(std::llround(pilot_start_s * fs_));
    const auto pilot_len = static_cast<std::ptrdiff_t>(std::llround(spec.pilot_duration_s() * fs_));
    const auto pad = static_cast<std::ptrdiff_t>(half_taps_) +
                     static_cast<std::ptrdiff_t>(std::llround(receiver_envelope_window(symbol_s) * fs_));
    const auto n = static_cast<std::ptrdiff_t>(v.size());
    if (pilot_start < 0 || pilot_start >= n) throw NoPilotFound("pilot start lies outside the trace");
    seg_begin_ = std::max<std::ptrdiff_t>(0, pilot_start - pad);
    const std::ptrdiff_t seg_end = std::min(n, pilot_start + pilot_len + pad);
    seg_len_ = static_cast<std::size_t>(seg_end - seg_begin_);
    pilot_offset_s_ = static_cast<double>(pilot_start - seg_begin_) / fs_;
    pilot_fits_ = pilot_start + pilot_len <= n;

    // Bin spacing divides f_inc/2 so every candidate centre lands on a bin.
    const double base = 0.5 * cfg_.f_inc_hz;
    const double needed = static_cast<double>(seg_len_ + taps);
    const double k = std::ceil(needed * base / fs_);
    nfft_ = static_cast<std::size_t>(std::llround(fs_ * k / base));
    df_ = fs_ / static_cast<double>(nfft_);

    const auto seg = std::span<const double>(v.samples()).subspan(static_cast<std::size_t>(seg_begin_), seg_len_);
    spectrum_ = fft::rfft(seg, nfft_);
    power_.resize(spectrum_.size());
    for (std::size_t i = 0; i < spectrum_.size(); ++i) power_[i] = std::norm(spectrum_[i]);
    build_noise_floor();

    // Coarse grid: at least 16 points per symbol.
    const double span_s = static_cast<double>(nfft_) / fs_;
    min_grid_ = 64;
    while (span_s / static_cast<double>(min_grid_) > symbol_s / 16.0) min_grid_ *= 2;
  }

  struct Evaluation {
    bool snr_ok = false;
    double snr_db = -std::numeric_limits<double>::infinity();
    std::vector<double> pilot_amplitudes;
    PilotDecision decision;
  };

  /// Per-symbol envelope averages over the pilot window for one band (no gating).
  std::vector<double> pilot_amplitudes(const Passband& band) { return compute_amplitudes(band); }

  Evaluation evaluate(const Passband& band) {
    Evaluation e;
    if (!pilot_fits_) return e;
    e.snr_db = band_snr_db(band);
    e.snr_ok = e.snr_db >= cfg_.min_band_snr_db && peak_inside(band);
    if (!e.snr_ok) return e;
    e.pilot_amplitudes = compute_amplitudes(band);
    e.decision = match_pilot(e.pilot_amplitudes, spec_.pilot(), cfg_.min_contrast, cfg_.allow_inverted);
    return e;
  }

  /// First band (ascending lb, then ascending width) on the grid whose lb lies in
  /// [lb_min, lb_max] and ub <= ub_limit that decodes the pilot.
  std::optional<Passband> first_match(double lb_min, double lb_max, double ub_limit) {
    const double inc = cfg_.f_inc_hz;
    const auto widths = static_cast<long>(std::floor(cfg_.f_max_hz / inc + 1e-9));
    const auto lb_steps = static_cast<long>(std::floor((lb_max - lb_min) / inc + 1e-9));
    for (long i = 0; i <= lb_steps; ++i) {
      const double lb = lb_min + static_cast<double>(i) * inc;
      for (long j = 1; j <= widths; ++j) {
        const double ub = lb + static_cast<double>(j) * inc;
        if (ub > ub_limit + 1e-9) break;
        const Passband band{lb, ub};
        if (!usable(band)) continue;
        if (evaluate(band).decision.matched) return band;
      }
    }
    return std::nullopt;
  }

  double bin_width_hz() const { return df_; }
  const ScanConfig& config() const { return cfg_; }

 private:
  bool usable(const Passband& band) const {
    if (!(band.lb_hz > 0.0) || !(band.ub_hz < 0.5 * fs_)) return false;
    const auto c = center_bin(band);
    const auto kmax = static_cast<long>(response(band.width_hz()).size()) - 1;
    return c - kmax >= 0 && c + kmax < static_cast<long>(spectrum_.size());
  }

  long center_bin(const Passband& band) const { return std::lround(band.center_hz() / df_); }

  /// Strongest bin under the filter response lies edge_margin_hz inside the band.
  bool peak_inside(const Passband& band) const {
    const long c = center_bin(band);
    const long kmax = static_cast<long>(response(band.width_hz()).size()) - 1;
    std::size_t best = static_cast<std::size_t>(c - kmax);
    for (auto k = static_cast<std::size_t>(c - kmax); k <= static_cast<std::size_t>(c + kmax); ++k)
      if (power_[k] > power_[best]) best = k;
    const double f = static_cast<double>(best) * df_;
    return f >= band.lb_hz + cfg_.edge_margin_hz && f <= band.ub_hz - cfg_.edge_margin_hz;
  }

  /// Prototype low-pass frequency response at k * df, k = 0..K (real, symmetric).
  const std::vector<double>& response(double width_hz) const {
    const auto key = std::llround(width_hz * 1000.0);
    {
      std::lock_guard<std::mutex> lock(cache_mutex());
      auto& cache = response_cache();
      auto it = cache.find({fs_, nfft_, key});
      if (it != cache.end()) return *it->second;
    }
    const std::size_t taps = 2 * half_taps_ + 1;
    const auto proto = fir::low_pass_prototype(0.5 * width_hz, fs_, taps);
    // Centre the symmetric prototype at index 0 of a circular buffer.
    std::vector<double> circ(nfft_, 0.0);
    for (std::size_t i = 0; i < taps; ++i) {
      const auto m = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(half_taps_);
      circ[static_cast<std::size_t>((m + static_cast<std::ptrdiff_t>(nfft_)) % static_cast<std::ptrdiff_t>(nfft_))] =
          proto[i];
    }
    const auto h = fft::rfft(circ, nfft_);
    // Beyond half-width + transition + margin the prototype is in its stopband.
    const auto kmax = static_cast<std::size_t>(std::ceil((0.5 * width_hz + fir::kTransitionHz) / df_));
    auto resp = std::make_shared<std::vector<double>>(std::min(kmax + 1, h.size()));
    for (std::size_t k = 0; k < resp->size(); ++k) (*resp)[k] = h[k].real();
    std::lock_guard<std::mutex> lock(cache_mutex());
    auto& slot = response_cache()[{fs_, nfft_, key}];
    if (!slot) slot = resp;
    return *slot;
  }

  void build_noise_floor() {
    // Median power in 500 Hz blocks over a +-2.5 kHz neighbourhood; median of an
    // exponential variable is ln2 times its mean.
    block_bins_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(500.0 / df_)));
    const auto half_window = static_cast<std::size_t>(std::llround(2500.0 / df_));
    const std::size_t blocks = power_.size() / block_bins_ + 1;
    floor_.assign(blocks, 0.0);
    std::vector<double> scratch;
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t centre = b * block_bins_ + block_bins_ / 2;
      const std::size_t lo = centre > half_window ? centre - half_window : 0;
      const std::size_t hi = std::min(power_.size(), centre + half_window + 1);
      if (lo >= hi) {
        floor_[b] = b > 0 ? floor_[b - 1] : 0.0;
        continue;
      }
      scratch.assign(power_.begin() + static_cast<std::ptrdiff_t>(lo), power_.begin() + static_cast<std::ptrdiff_t>(hi));
      auto mid = scratch.begin() + static_cast<std::ptrdiff_t>(scratch.size() / 2);
      std::nth_element(scratch.begin(), mid, scratch.end());
      floor_[b] = *mid / std::numbers::ln2;
    }
  }

  double floor_at(std::size_t bin) const { return floor_[std::min(bin / block_bins_, floor_.size() - 1)]; }

  double band_snr_db(const Passband& band) const {
    const auto& h = response(band.width_hz());
    const long c = center_bin(band);
    const long kmax = static_cast<long>(h.size()) - 1;
    double signal = 0.0;
    double noise = 0.0;
    for (long k = -kmax; k <= kmax; ++k) {
      const double g = h[static_cast<std::size_t>(std::labs(k))];
      const auto bin = static_cast<std::size_t>(c + k);
      signal += g * g * power_[bin];
      noise += g * g * floor_at(bin);
    }
    if (!(noise > 0.0)) return signal > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(signal / noise);
  }

  fft::ComplexTransform& transform(std::size_t m) {
    auto it = transforms_.find(m);
    if (it == transforms_.end()) it = transforms_.emplace(m, std::make_unique<fft::ComplexTransform>(m, false)).first;
    return *it->second;
  }

  std::vector<double> compute_amplitudes(const Passband& band) {
    const auto& h = response(band.width_hz());
    const long c = center_bin(band);
    const long kmax = static_cast<long>(h.size()) - 1;
    std::size_t m = min_grid_;
    while (m < static_cast<std::size_t>(2 * kmax + 1)) m *= 2;
    auto& tr = transform(m);
    auto in = tr.input();
    std::fill(in.begin(), in.end(), fft::cplx(0.0, 0.0));
    const double inv_n = 1.0 / static_cast<double>(nfft_);
    const auto ml = static_cast<long>(m);
    for (long k = -kmax; k <= kmax; ++k) {
      const auto bin = static_cast<std::size_t>(c + k);
      in[static_cast<std::size_t>((k + ml) % ml)] = h[static_cast<std::size_t>(std::labs(k))] * spectrum_[bin] * inv_n;
    }
    tr.execute();
    const auto out = tr.output();

    // Envelope on the coarse grid, then the same centred moving average.
    const double dt = static_cast<double>(nfft_) / (static_cast<double>(m) * fs_);
    std::vector<double> mag(m);
    for (std::size_t i = 0; i < m; ++i) mag[i] = (4.0 / std::numbers::pi) * std::abs(out[i]);
    const double symbol_s = spec_.symbol_duration_s();
    const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(receiver_envelope_window(symbol_s) / dt)));
    const std::size_t valid = std::min(m, static_cast<std::size_t>(std::ceil(static_cast<double>(seg_len_) / fs_ / dt)));
    std::vector<double> prefix(valid + 1, 0.0);
    for (std::size_t i = 0; i < valid; ++i) prefix[i + 1] = prefix[i] + mag[i];
    std::vector<double> smooth(valid);
    const std::size_t before = w / 2;
    const std::size_t after = w - before;
    for (std::size_t i = 0; i < valid; ++i) {
      const std::size_t lo = i >= before ? i - before : 0;
      const std::size_t hi = std::min(valid, i + after);
      smooth[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
    }
    // Grid point i represents time i*dt; shift half a cell so it covers [i dt - dt/2, i dt + dt/2).
    SymbolIntegrator integ(smooth, dt, -0.5 * dt);
    return integ.symbol_means(pilot_offset_s_, symbol_s, spec_.pilot_len());
  }

  struct CacheKey {
    double fs;
    std::size_t nfft;
    long long width_mhz;
    bool operator<(const CacheKey& o) const {
      return std::tie(fs, nfft, width_mhz) < std::tie(o.fs, o.nfft, o.width_mhz);
    }
  };
  static std::mutex& cache_mutex() {
    static std::mutex m;
    return m;
  }
  static std::map<CacheKey, std::shared_ptr<std::vector<double>>>& response_cache() {
    static std::map<CacheKey, std::shared_ptr<std::vector<double>>> cache;
    return cache;
  }

  FrameSpec spec_;
  ScanConfig cfg_;
  double fs_;
  std::size_t half_taps_ = 0;
  std::ptrdiff_t seg_begin_ = 0;
  std::size_t seg_len_ = 0;
  double pilot_offset_s_ = 0.0;
  bool pilot_fits_ = true;
  std::size_t nfft_ = 0;
  double df_ = 1.0;
  std::vector<fft::cplx> spectrum_;
  std::vector<double> power_;
  std::vector<double> floor_;
  std::size_t block_bins_ = 1;
  std::size_t min_grid_ = 64;
  std::map<std::size_t, std::unique_ptr<fft::ComplexTransform>> transforms_;
};

namespace rx_detail {

/// Splits the lb grid into contiguous chunks, scans them concurrently and keeps the
/// lowest-ordered match, so the result is the same for any thread count.
inline std::optional<Passband> parallel_first_match(const SignalTrace& v, const FrameSpec& spec, const ScanConfig& cfg,
                                                    double pilot_start_s, double lb_min, double lb_max,
                                                    double ub_limit) {
  const unsigned threads = std::max(1u, cfg.threads);
  if (threads == 1) {
    SpectralBandScanner scanner(v, spec, cfg, pilot_start_s);
    return scanner.first_match(lb_min, lb_max, ub_limit);
  }
  const auto steps = static_cast<long>(std::floor((lb_max - lb_min) / cfg.f_inc_hz + 1e-9)) + 1;
  const long chunk = (steps + static_cast<long>(threads) - 1) / static_cast<long>(threads);
  std::vector<std::optional<Passband>> results(threads);
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> workers;
  for (unsigned t = 0; t < threads; ++t) {
    const long first = static_cast<long>(t) * chunk;
    if (first >= steps) break;
    const long last = std::min(steps - 1, first + chunk - 1);
    workers.emplace_back([&, t, first, last] {
      try {
        SpectralBandScanner scanner(v, spec, cfg, pilot_start_s);
        results[t] = scanner.first_match(lb_min + static_cast<double>(first) * cfg.f_inc_hz,
                                         lb_min + static_cast<double>(last) * cfg.f_inc_hz, ub_limit);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (auto& r : results)
    if (r) return r;
  return std::nullopt;
}

}  // namespace rx_detail

/// Passband discovery over a trace whose pilot begins at `pilot_start_s`.
inline Passband scan_passband(const SignalTrace& v, const FrameSpec& spec, const ScanConfig& cfg = {},
                              double pilot_start_s = 0.0) {
  cfg.validate();
  if (v.duration_s() < pilot_start_s + spec.pilot_duration_s() - 0.5 / v.sample_rate_hz())
    throw NoPilotFound("trace shorter than one pilot");
  auto band = rx_detail::parallel_first_match(v, spec, cfg, pilot_start_s, cfg.f_lo_hz, cfg.f_hi_hz - cfg.f_max_hz,
                                              cfg.f_hi_hz);
  if (!band) throw NoPilotFound("no band in [" + std::to_string(cfg.f_lo_hz) + ", " + std::to_string(cfg.f_hi_hz) +
                                "] Hz decodes the pilot");
  return *band;
}

/// Every non-overlapping band that decodes the pilot, in ascending order: after
/// each hit the scan resumes at that band's upper edge. Used when several
/// transmitters send their pilots at the same time.
inline std::vector<Passband> scan_all_passbands(const SignalTrace& v, const FrameSpec& spec,
                                                const ScanConfig& cfg = {}, double pilot_start_s = 0.0) {
  cfg.validate();
  if (v.duration_s() < pilot_start_s + spec.pilot_duration_s() - 0.5 / v.sample_rate_hz())
    throw NoPilotFound("trace shorter than one pilot");
  SpectralBandScanner scanner(v, spec, cfg, pilot_start_s);
  std::vector<Passband> bands;
  double lb = cfg.f_lo_hz;
  const double lb_max = cfg.f_hi_hz - cfg.f_inc_hz;
  while (lb <= lb_max) {
    const auto band = scanner.first_match(lb, lb_max, cfg.f_hi_hz);
    if (!band) break;
    bands.push_back(*band);
    lb = band->ub_hz;
  }
  if (bands.empty()) throw NoPilotFound("no band decodes the pilot");
  return bands;
}

/// Passband discovery without pilot timing: scans with the pilot assumed at
/// successive offsets `step_s` apart (default half a symbol) and returns the
/// first band found together with the offset that produced it.
inline std::pair<Passband, double> acquire_passband(const SignalTrace& v, const FrameSpec& spec,
                                                    const ScanConfig& cfg = {}, double t_min = 0.0,
                                                    std::optional<double> step_s = std::nullopt) {
  const double step = step_s.value_or(0.5 * spec.symbol_duration_s());
  if (!(step > 0.0)) throw ConfigError("acquisition step must be positive");
  const double last = v.duration_s() - spec.pilot_duration_s();
  for (double t = t_min; t <= last; t += step) {
    try {
      return {scan_passband(v, spec, cfg, t), t};
    } catch (const NoPilotFound&) {
    }
  }
  throw NoPilotFound("no pilot at any offset in the trace");
}

/// Re-scan restricted to bands inside [prev.lb - radius, prev.ub + radius].
inline Passband fine_tune_passband(const SignalTrace& v, const FrameSpec& spec, const Passband& prev,
                                   double radius_hz = 500.0, const ScanConfig& cfg = {}, double pilot_start_s = 0.0) {
  prev.validate(v.sample_rate_hz());
  if (!(radius_hz >= 0.0)) throw ConfigError("fine-tune radius must be non-negative");
  ScanConfig local = cfg;
  local.f_lo_hz = std::max(1.0, prev.lb_hz - radius_hz);
  local.f_hi_hz = std::min(0.5 * v.sample_rate_hz() - 1.0, prev.ub_hz + radius_hz);
  local.f_max_hz = std::min(cfg.f_max_hz, local.f_hi_hz - local.f_lo_hz);
  local.f_inc_hz = std::min(cfg.f_inc_hz, local.f_max_hz);
  if (v.duration_s() < pilot_start_s + spec.pilot_duration_s() - 0.5 / v.sample_rate_hz())
    throw NoPilotFound("trace shorter than one pilot");
  auto band = rx_detail::parallel_first_match(v, spec, local, pilot_start_s, local.f_lo_hz,
                                              local.f_hi_hz - local.f_inc_hz, local.f_hi_hz);
  if (!band) throw NoPilotFound("no band within " + std::to_string(radius_hz) + " Hz of the previous passband");
  return *band;
}

// ---------------------------------------------------------------------------
// Frame synchronization and demodulation.
// ---------------------------------------------------------------------------

/// Slides a pilot-length window in steps of T_b / substeps over [t_min, t_max - T_p]
/// and returns the earliest offset that decodes the pilot. Among the matching
/// offsets within the following symbol, the one with the largest contrast wins.
inline FrameSync find_frame_start(const BandEnvelope& env, const FrameSpec& spec, const SyncConfig& cfg = {},
                                  double t_min = 0.0, std::optional<double> t_max = std::nullopt) {
  const double symbol_s = spec.symbol_duration_s();
  const double pilot_s = spec.pilot_duration_s();
  const double stop = t_max.value_or(env.duration_s());
  const double step = symbol_s / std::max(1, cfg.substeps);
  if (stop - t_min < pilot_s - 1e-12) throw PilotNotFound("trace shorter than one pilot");
  if (env.snr_db() < cfg.min_band_snr_db)
    throw PilotNotFound("no carrier in band: " + std::to_string(env.snr_db()) + " dB above the noise floor");
  const auto offsets = static_cast<long>(std::floor((stop - pilot_s - t_min) / step + 1e-9)) + 1;
  const auto& integ = env.integrator();

  const auto levels = integ.symbol_means(
      t_min, symbol_s, static_cast<std::size_t>(std::max(1.0, std::floor((env.duration_s() - t_min) / symbol_s))));
  const double swing = rx_detail::percentile(levels, 0.9) - rx_detail::percentile(levels, 0.1);
  const auto accept = [&](const PilotDecision& d) { return d.matched && d.gap >= cfg.min_swing_fraction * swing; };

  for (bool inverted : {false, true}) {
    if (inverted && !cfg.allow_inverted) break;
    for (long j = 0; j < offsets; ++j) {
      const double t = t_min + static_cast<double>(j) * step;
      const auto amps = integ.symbol_means(t, symbol_s, spec.pilot_len());
      auto d = rx_detail::decide(amps, spec.pilot(), cfg.min_contrast, inverted);
      if (!accept(d)) continue;
      double best_t = t;
      for (long k = j + 1; k < std::min(offsets, j + 1 + cfg.substeps); ++k) {
        const double tk = t_min + static_cast<double>(k) * step;
        const auto ak = integ.symbol_means(tk, symbol_s, spec.pilot_len());
        const auto dk = rx_detail::decide(ak, spec.pilot(), cfg.min_contrast, inverted);
        if (accept(dk) && dk.contrast > d.contrast) {
          d = dk;
          best_t = tk;
        }
      }
      FrameSync sync;
      sync.frame_start_s = best_t;
      sync.threshold = integ.mean(best_t, best_t + pilot_s);
      sync.decision_threshold = d.threshold;
      sync.inverted = d.inverted;
      sync.contrast = d.contrast;
      return sync;
    }
  }
  throw PilotNotFound("no offset in the trace decodes the pilot");
}

inline FrameSync find_frame_start(const SignalTrace& v, const Passband& band, const FrameSpec& spec,
                                  const SyncConfig& cfg = {}) {
  band.validate(v.sample_rate_hz());
  if (v.duration_s() < spec.pilot_duration_s()) throw PilotNotFound("trace shorter than one pilot");
  return find_frame_start(BandEnvelope(v, band, spec.symbol_duration_s()), spec, cfg);
}

namespace rx_detail {

inline DecodeResult decode_payload(const BandEnvelope& env, const FrameSpec& spec, const FrameSync& sync,
                                   const std::optional<Bits>& reference) {
  DecodeResult r;
  r.passband = env.band();
  r.frame_start_s = sync.frame_start_s;
  r.threshold = sync.threshold;
  r.decision_threshold = sync.decision_threshold;
  r.inverted = sync.inverted;
  const double symbol_s = spec.symbol_duration_s();
  const auto& integ = env.integrator();
  r.pilot_amplitudes = integ.symbol_means(sync.frame_start_s, symbol_s, spec.pilot_len());
  r.bitwise_amplitudes = integ.symbol_means(sync.frame_start_s + spec.pilot_duration_s(), symbol_s, spec.payload_len());
  r.bits.resize(spec.payload_len());
  for (std::size_t i = 0; i < r.bits.size(); ++i) {
    const double a = r.bitwise_amplitudes[i];
    r.bits[i] = static_cast<std::uint8_t>(sync.inverted ? a < sync.decision_threshold : a > sync.decision_threshold);
  }
  if (reference) {
    r.ber = bit_error_rate(r.bits, *reference);
    r.effective_bps = effective_rate_bps(spec.payload_len(), *r.ber, spec.frame_duration_s());
  } else {
    r.effective_bps = effective_rate_bps(spec.payload_len(), 0.0, spec.frame_duration_s());
  }
  return r;
}

}  // namespace rx_detail

/// Blind demodulation: synchronize on the pilot, then threshold each payload symbol.
/// Only offsets whose whole frame fits inside [t_min, t_max] are considered.
inline DecodeResult demodulate(const BandEnvelope& env, const FrameSpec& spec,
                               const std::optional<Bits>& reference_payload = std::nullopt,
                               const SyncConfig& cfg = {}, double t_min = 0.0,
                               std::optional<double> t_max = std::nullopt) {
  const double stop = t_max.value_or(env.duration_s());
  const double payload_s = spec.frame_duration_s() - spec.pilot_duration_s();
  const auto sync = find_frame_start(env, spec, cfg, t_min, stop - payload_s);
  return rx_detail::decode_payload(env, spec, sync, reference_payload);
}

inline DecodeResult demodulate(const SignalTrace& v, const Passband& band, const FrameSpec& spec,
                               const std::optional<Bits>& reference_payload = std::nullopt,
                               const SyncConfig& cfg = {}) {
  band.validate(v.sample_rate_hz());
  if (v.duration_s() < spec.frame_duration_s()) throw PilotNotFound("trace shorter than one frame");
  return demodulate(BandEnvelope(v, band, spec.symbol_duration_s()), spec, reference_payload, cfg);
}

/// Demodulation with the frame start supplied by the caller. The decision
/// threshold still comes from the pilot at that position; polarity is inverted
/// only if the pilot decodes inverted but not normally.
inline DecodeResult demodulate_at(const BandEnvelope& env, const FrameSpec& spec, double frame_start_s,
                                  const std::optional<Bits>& reference_payload = std::nullopt,
                                  const SyncConfig& cfg = {}) {
  const auto& integ = env.integrator();
  const auto amps = integ.symbol_means(frame_start_s, spec.symbol_duration_s(), spec.pilot_len());
  auto d = rx_detail::decide(amps, spec.pilot(), 0.0, false);
  if (!d.matched && cfg.allow_inverted) {
    auto inv = rx_detail::decide(amps, spec.pilot(), 0.0, true);
    if (inv.matched) d = inv;
  }
  FrameSync sync;
  sync.frame_start_s = frame_start_s;
  sync.threshold = integ.mean(frame_start_s, frame_start_s + spec.pilot_duration_s());
  sync.decision_threshold = d.threshold;
  sync.inverted = d.inverted;
  sync.contrast = d.contrast;
  return rx_detail::decode_payload(env, spec, sync, reference_payload);
}

/// Mean distance of payload symbol amplitudes from the nearer pilot level (the
/// average "1" and average "0" of the pilot), in units of the level gap. Near 0
/// for a clean on-off keyed frame; background carriers that happen to match the
/// pilot pattern score higher.
inline double level_residual(const DecodeResult& r, const FrameSpec& spec) {
  double hi = 0.0, lo = 0.0;
  std::size_t nh = 0, nl = 0;
  for (std::size_t i = 0; i < spec.pilot_len(); ++i) {
    if (spec.pilot()[i]) {
      hi += r.pilot_amplitudes.at(i);
      ++nh;
    } else {
      lo += r.pilot_amplitudes.at(i);
      ++nl;
    }
  }
  if (nh == 0 || nl == 0 || r.bitwise_amplitudes.empty()) return 0.0;
  hi /= static_cast<double>(nh);
  lo /= static_cast<double>(nl);
  const double gap = std::abs(hi - lo);
  if (!(gap > 0.0)) return std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (double a : r.bitwise_amplitudes) sum += std::min(std::abs(a - hi), std::abs(a - lo));
  return sum / (gap * static_cast<double>(r.bitwise_amplitudes.size()));
}

struct Histogram {
  std::vector<double> edges;  // size bins + 1
  std::vector<double> probabilities;
};

/// Distribution of per-symbol deviations from their class (true bit) mean.
inline Histogram noise_pmf(const DecodeResult& result, const Bits& reference, std::size_t bins) {
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  const auto& amps = result.bitwise_amplitudes;
  if (reference.size() != amps.size())
    throw LengthMismatch("reference has " + std::to_string(reference.size()) + " bits, result has " +
                         std::to_string(amps.size()) + " amplitudes");
  double sum[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  for (std::size_t i = 0; i < amps.size(); ++i) {
    sum[reference[i] ? 1 : 0] += amps[i];
    ++count[reference[i] ? 1 : 0];
  }
  const double mean[2] = {count[0] ? sum[0] / static_cast<double>(count[0]) : 0.0,
                          count[1] ? sum[1] / static_cast<double>(count[1]) : 0.0};
  std::vector<double> noise(amps.size());
  for (std::size_t i = 0; i < amps.size(); ++i) noise[i] = amps[i] - mean[reference[i] ? 1 : 0];

  Histogram h;
  h.probabilities.assign(bins, 0.0);
  if (noise.empty()) {
    h.edges = {-0.5, 0.5};
    h.probabilities.assign(1, 0.0);
    return h;
  }
  double lo = *std::min_element(noise.begin(), noise.end());
  double hi = *std::max_element(noise.begin(), noise.end());
  const double scale = std::max({std::abs(lo), std::abs(hi), std::abs(mean[0]), std::abs(mean[1]), 1e-300});
  if (hi - lo <= 1e-12 * scale) {
    // Degenerate: every deviation is (numerically) zero.
    const double halfw = std::max(1e-12 * scale, 1e-300);
    lo = -halfw;
    hi = halfw;
    bins = 1;
    h.probabilities.assign(1, 0.0);
  }
  h.edges.resize(bins + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  for (double x : noise) {
    auto b = static_cast<std::size_t>(std::floor((x - lo) / width));
    if (b >= bins) b = bins - 1;
    h.probabilities[b] += 1.0;
  }
  for (double& p : h.probabilities) p /= static_cast<double>(noise.size());
  return h;
}

struct MultilevelDecode {
  std::vector<int> symbols;
  std::vector<double> amplitudes;
  std::vector<double> level_centers;
};

/// Nearest-centre decisions for 2^N-level symbols. Level centres come from a known
/// training sequence sent immediately before the data symbols.
inline MultilevelDecode demodulate_multilevel(const BandEnvelope& env, double start_s, double symbol_s,
                                              const std::vector<int>& training, std::size_t data_symbols,
                                              int bits_per_symbol) {
  const std::size_t levels = std::size_t{1} << bits_per_symbol;
  const auto& integ = env.integrator();
  const auto train_amps = integ.symbol_means(start_s, symbol_s, training.size());
  std::vector<double> sum(levels, 0.0);
  std::vector<std::size_t> count(levels, 0);
  for (std::size_t i = 0; i < training.size(); ++i) {
    if (training[i] < 0 || static_cast<std::size_t>(training[i]) >= levels)
      throw SymbolOutOfRange("training symbol out of range");
    sum[static_cast<std::size_t>(training[i])] += train_amps[i];
    ++count[static_cast<std::size_t>(training[i])];
  }
  MultilevelDecode out;
  out.level_centers.resize(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    if (count[l] == 0) throw ConfigError("training sequence must contain every level");
    out.level_centers[l] = sum[l] / static_cast<double>(count[l]);
  }
  out.amplitudes = integ.symbol_means(start_s + static_cast<double>(training.size()) * symbol_s, symbol_s, data_symbols);
  out.symbols.resize(data_symbols);
  for (std::size_t i = 0; i < data_symbols; ++i) {
    std::size_t best = 0;
    for (std::size_t l = 1; l < levels; ++l)
      if (std::abs(out.amplitudes[i] - out.level_centers[l]) < std::abs(out.amplitudes[i] - out.level_centers[best]))
        best = l;
    out.symbols[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace node
