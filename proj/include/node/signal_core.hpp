#pragma once

// Sampled-signal primitives: traces, FIR band-pass, RC high-pass, envelope,
// Welch PSD and spectrogram.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "node/errors.hpp"
#include "node/fft.hpp"

namespace node {

enum class Unit : std::uint64_t { volts = 0, amps = 1, dimensionless = 2 };

inline const char* unit_name(Unit u) {
  switch (u) {
    case Unit::volts: return "volts";
    case Unit::amps: return "amps";
    case Unit::dimensionless: return "dimensionless";
  }
  return "unknown";
}

/// Uniformly sampled real waveform. Always non-empty, finite, with a positive rate.
class SignalTrace {
 public:
  SignalTrace(std::vector<double> samples, double sample_rate_hz, Unit unit = Unit::volts)
      : samples_(std::move(samples)), sample_rate_hz_(sample_rate_hz), unit_(unit) {
    if (!(sample_rate_hz_ > 0.0) || !std::isfinite(sample_rate_hz_))
      throw InvalidTrace("sample rate must be positive, got " + std::to_string(sample_rate_hz_));
    if (samples_.empty()) throw InvalidTrace("trace must contain at least one sample");
    for (double v : samples_)
      if (!std::isfinite(v)) throw InvalidTrace("trace contains a non-finite sample");
  }

  static SignalTrace zeros(std::size_t n, double sample_rate_hz, Unit unit = Unit::volts) {
    return SignalTrace(std::vector<double>(n, 0.0), sample_rate_hz, unit);
  }

  const std::vector<double>& samples() const { return samples_; }
  std::vector<double> release() && { return std::move(samples_); }
  double operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const { return samples_.size(); }
  double sample_rate_hz() const { return sample_rate_hz_; }
  double dt() const { return 1.0 / sample_rate_hz_; }
  double duration_s() const { return static_cast<double>(samples_.size()) / sample_rate_hz_; }
  double nyquist_hz() const { return 0.5 * sample_rate_hz_; }
  Unit unit() const { return unit_; }

  /// Samples [begin, begin + count), clamped to the trace.
  SignalTrace slice(std::size_t begin, std::size_t count) const {
    begin = std::min(begin, samples_.size() - 1);
    count = std::clamp<std::size_t>(count, 1, samples_.size() - begin);
    return SignalTrace(std::vector<double>(samples_.begin() + static_cast<std::ptrdiff_t>(begin),
                                           samples_.begin() + static_cast<std::ptrdiff_t>(begin + count)),
                       sample_rate_hz_, unit_);
  }

  SignalTrace scaled(double factor) const {
    std::vector<double> out(samples_);
    for (double& v : out) v *= factor;
    return SignalTrace(std::move(out), sample_rate_hz_, unit_);
  }

 private:
  std::vector<double> samples_;
  double sample_rate_hz_;
  Unit unit_;
};

/// Lower/upper cutoff pair identifying one transmitter's spectral slot.
struct Passband {
  double lb_hz = 0.0;
  double ub_hz = 0.0;

  double width_hz() const { return ub_hz - lb_hz; }
  double center_hz() const { return 0.5 * (lb_hz + ub_hz); }
  bool contains(double f_hz) const { return f_hz >= lb_hz && f_hz <= ub_hz; }

  void validate(double sample_rate_hz) const {
    if (!(lb_hz > 0.0) || !(lb_hz < ub_hz) || !(ub_hz < 0.5 * sample_rate_hz))
      throw InvalidBand("need 0 < lb < ub < fs/2, got <" + std::to_string(lb_hz) + ", " +
                        std::to_string(ub_hz) + "> at fs=" + std::to_string(sample_rate_hz));
  }

  friend bool operator==(const Passband&, const Passband&) = default;
};

struct Spectrum {
  std::vector<double> freqs_hz;
  std::vector<double> psd;

  double bin_width_hz() const { return freqs_hz.size() > 1 ? freqs_hz[1] - freqs_hz[0] : 0.0; }

  std::size_t nearest_bin(double f_hz) const {
    const double df = bin_width_hz();
    if (df <= 0.0) return 0;
    auto k = static_cast<std::size_t>(std::llround(std::max(0.0, f_hz) / df));
    return std::min(k, psd.size() - 1);
  }

  std::size_t peak_bin() const {
    return static_cast<std::size_t>(std::max_element(psd.begin(), psd.end()) - psd.begin());
  }

  /// Largest PSD value in [lo, hi].
  double max_in(double lo_hz, double hi_hz) const {
    double best = 0.0;
    for (std::size_t k = 0; k < psd.size(); ++k)
      if (freqs_hz[k] >= lo_hz && freqs_hz[k] <= hi_hz) best = std::max(best, psd[k]);
    return best;
  }
};

struct TimedSpectrum {
  double time_s;
  Spectrum spectrum;
};

namespace fir {

/// Transition width of every band-pass produced by band_pass().
inline constexpr double kTransitionHz = 30.0;
/// Blackman window: transition ~ 5.5 fs / L, stopband ~ -74 dB.
inline constexpr double kBlackmanTransitionFactor = 5.5;

/// Odd filter length giving a kTransitionHz transition at this sample rate.
inline std::size_t band_pass_length(double sample_rate_hz) {
  auto n = static_cast<std::size_t>(std::ceil(kBlackmanTransitionFactor * sample_rate_hz / kTransitionHz));
  return n | 1u;
}

inline std::vector<double> blackman(std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (length < 2) return w;
  const double denom = static_cast<double>(length - 1);
  for (std::size_t n = 0; n < length; ++n) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(n) / denom;
    w[n] = 0.42 - 0.5 * std::cos(a) + 0.08 * std::cos(2.0 * a);
  }
  return w;
}

/// Zero-phase windowed-sinc low-pass prototype with cutoff `cutoff_hz`, centred at
/// index (L-1)/2. A band-pass <lb, ub> is exactly this prototype with cutoff
/// (ub-lb)/2 modulated by 2 cos(2 pi fc m / fs).
inline std::vector<double> low_pass_prototype(double cutoff_hz, double sample_rate_hz, std::size_t length) {
  const auto w = blackman(length);
  const auto mid = static_cast<std::ptrdiff_t>(length / 2);
  std::vector<double> h(length);
  const double wc = 2.0 * std::numbers::pi * cutoff_hz / sample_rate_hz;
  for (std::size_t n = 0; n < length; ++n) {
    const auto m = static_cast<double>(static_cast<std::ptrdiff_t>(n) - mid);
    h[n] = w[n] * (m == 0.0 ? wc / std::numbers::pi : std::sin(wc * m) / (std::numbers::pi * m));
  }
  return h;
}

inline std::vector<double> band_pass_taps(const Passband& band, double sample_rate_hz) {
  const std::size_t length = band_pass_length(sample_rate_hz);
  auto h = low_pass_prototype(0.5 * band.width_hz(), sample_rate_hz, length);
  const auto mid = static_cast<std::ptrdiff_t>(length / 2);
  const double wc = 2.0 * std::numbers::pi * band.center_hz() / sample_rate_hz;
  for (std::size_t n = 0; n < length; ++n) {
    const auto m = static_cast<double>(static_cast<std::ptrdiff_t>(n) - mid);
    h[n] *= 2.0 * std::cos(wc * m);
  }
  return h;
}

/// Linear convolution with an odd-length symmetric kernel, with the group delay
/// removed so the output is aligned sample-for-sample with the input.
inline std::vector<double> zero_phase_convolve(std::span<const double> x, std::span<const double> taps) {
  const std::size_t n = x.size();
  const std::size_t length = taps.size();
  const std::size_t nfft = fft::good_size(n + length - 1);
  auto xf = fft::rfft(x, nfft);
  const auto hf = fft::rfft(taps, nfft);
  for (std::size_t k = 0; k < xf.size(); ++k) xf[k] *= hf[k];
  auto full = fft::irfft(xf, nfft);
  const std::size_t delay = length / 2;
  return {full.begin() + static_cast<std::ptrdiff_t>(delay),
          full.begin() + static_cast<std::ptrdiff_t>(delay + n)};
}

}  // namespace fir

/// Linear-phase FIR band-pass with group delay compensated (zero phase).
inline SignalTrace band_pass(const SignalTrace& trace, const Passband& band) {
  band.validate(trace.sample_rate_hz());
  const auto taps = fir::band_pass_taps(band, trace.sample_rate_hz());
  return SignalTrace(fir::zero_phase_convolve(trace.samples(), taps), trace.sample_rate_hz(),
                     trace.unit());
}

/// Analog first-order RC high-pass, H(f) = jf/fc / (1 + jf/fc), applied as a
/// causal response to the trace (zero signal before the first sample).
inline SignalTrace high_pass(const SignalTrace& trace, double cutoff_hz) {
  const double fs = trace.sample_rate_hz();
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < 0.5 * fs))
    throw InvalidBand("high-pass cutoff must lie in (0, fs/2), got " + std::to_string(cutoff_hz));
  const std::size_t n = trace.size();
  // The RC impulse response has decayed by e^-30 after this many samples.
  const double tail = std::ceil(30.0 * fs / (2.0 * std::numbers::pi * cutoff_hz));
  const auto pad = static_cast<std::size_t>(std::min(tail, 4.0 * static_cast<double>(n) + 16.0));
  const std::size_t nfft = fft::good_size(n + pad);
  auto spec = fft::rfft(trace.samples(), nfft);
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double ratio = (static_cast<double>(k) * fs / static_cast<double>(nfft)) / cutoff_hz;
    const std::complex<double> jr(0.0, ratio);
    spec[k] *= jr / (1.0 + jr);
  }
  auto out = fft::irfft(spec, nfft);
  out.resize(n);
  return SignalTrace(std::move(out), fs, trace.unit());
}

/// Rectify, then centred moving average of width window_s (shrinking at the edges).
inline SignalTrace envelope(const SignalTrace& trace, double window_s) {
  const double width = window_s * trace.sample_rate_hz();
  if (!(window_s > 0.0) || !(width >= 1.0))
    throw InvalidWindow("envelope window must span at least one sample");
  const auto w = static_cast<std::size_t>(std::llround(width));
  const std::size_t n = trace.size();
  const auto& x = trace.samples();

  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + std::abs(x[i]);

  std::vector<double> out(n);
  const std::size_t before = w / 2;
  const std::size_t after = w - before;  // exclusive
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= before ? i - before : 0;
    const std::size_t hi = std::min(n, i + after);
    out[i] = std::max(0.0, (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo));
  }
  return SignalTrace(std::move(out), trace.sample_rate_hz(), trace.unit());
}

namespace detail {

inline std::vector<double> hann(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t n = 0; n < length; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(length));
  return w;
}

inline void check_segment(std::size_t samples, std::size_t segment_len) {
  if (samples == 0) throw EmptyTrace("cannot estimate a spectrum of an empty trace");
  if (segment_len == 0) throw InvalidWindow("segment length must be positive");
  if (segment_len > samples)
    throw SegmentTooLong("segment of " + std::to_string(segment_len) + " samples exceeds trace of " +
                         std::to_string(samples));
}

/// One-sided periodogram of x[begin, begin+L) with window w, accumulated into acc.
inline void accumulate_periodogram(std::span<const double> x, std::size_t begin, std::span<const double> w,
                                   double fs, std::vector<double>& acc) {
  const std::size_t length = w.size();
  std::vector<double> seg(length);
  double wss = 0.0;
  for (std::size_t i = 0; i < length; ++i) {
    seg[i] = x[begin + i] * w[i];
    wss += w[i] * w[i];
  }
  const auto spec = fft::rfft(seg, length);
  const double scale = 1.0 / (fs * wss);
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const bool edge = k == 0 || (length % 2 == 0 && k == length / 2);
    acc[k] += std::norm(spec[k]) * scale * (edge ? 1.0 : 2.0);
  }
}

inline std::vector<double> bin_freqs(std::size_t segment_len, double fs) {
  std::vector<double> f(segment_len / 2 + 1);
  for (std::size_t k = 0; k < f.size(); ++k) f[k] = static_cast<double>(k) * fs / static_cast<double>(segment_len);
  return f;
}

}  // namespace detail

/// Default Welch segment at 500 kSa/s (~15 Hz bins).
inline constexpr std::size_t kDefaultPsdSegment = 1u << 15;

/// Welch PSD: Hann window, 50% overlap, one-sided density (unit^2/Hz).
inline Spectrum psd(std::span<const double> x, double sample_rate_hz, std::size_t segment_len) {
  detail::check_segment(x.size(), segment_len);
  const auto w = detail::hann(segment_len);
  const std::size_t hop = std::max<std::size_t>(1, segment_len / 2);
  std::vector<double> acc(segment_len / 2 + 1, 0.0);
  std::size_t count = 0;
  for (std::size_t begin = 0; begin + segment_len <= x.size(); begin += hop, ++count)
    detail::accumulate_periodogram(x, begin, w, sample_rate_hz, acc);
  for (double& v : acc) v /= static_cast<double>(count);
  return Spectrum{detail::bin_freqs(segment_len, sample_rate_hz), std::move(acc)};
}

inline Spectrum psd(const SignalTrace& trace, std::size_t segment_len = kDefaultPsdSegment) {
  return psd(trace.samples(), trace.sample_rate_hz(), segment_len);
}

/// Hann-windowed periodogram per hop; timestamps are segment start times.
inline std::vector<TimedSpectrum> spectrogram(const SignalTrace& trace, std::size_t segment_len, std::size_t hop) {
  detail::check_segment(trace.size(), segment_len);
  if (hop == 0 || hop > segment_len)
    throw InvalidWindow("spectrogram hop must be in [1, segment_len]");
  const auto w = detail::hann(segment_len);
  const auto freqs = detail::bin_freqs(segment_len, trace.sample_rate_hz());
  std::vector<TimedSpectrum> out;
  for (std::size_t begin = 0; begin + segment_len <= trace.size(); begin += hop) {
    std::vector<double> acc(segment_len / 2 + 1, 0.0);
    detail::accumulate_periodogram(trace.samples(), begin, w, trace.sample_rate_hz(), acc);
    out.push_back({static_cast<double>(begin) / trace.sample_rate_hz(), Spectrum{freqs, std::move(acc)}});
  }
  return out;
}

}  // namespace node
