#pragma once

// Reference computations written independently of the library: direct sums,
// closed forms and brute-force integration. Tests compare library output
// against these rather than against the library itself.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

/// Amplitude of the f_hz component of x[begin, end) by a direct single-bin DFT.
inline double tone_amplitude(const std::vector<double>& x, double fs, double f_hz, std::size_t begin,
                             std::size_t end) {
  std::complex<double> acc{0.0, 0.0};
  const double w = 2.0 * std::numbers::pi * f_hz / fs;
  for (std::size_t n = begin; n < end; ++n)
    acc += x[n] * std::complex<double>(std::cos(w * static_cast<double>(n)), -std::sin(w * static_cast<double>(n)));
  return 2.0 * std::abs(acc) / static_cast<double>(end - begin);
}

inline std::vector<double> tone(double amplitude, double f_hz, double fs, std::size_t n, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = amplitude * std::sin(2.0 * std::numbers::pi * f_hz * static_cast<double>(i) / fs + phase);
  return x;
}

/// Carrier keyed on/off by `bits`, each bit lasting symbol_s, starting at start_s.
inline std::vector<double> ook_tone(const std::vector<int>& bits, double symbol_s, double start_s, double amplitude,
                                    double f_hz, double fs, std::size_t n, bool inverted = false) {
  std::vector<double> x(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double k = std::floor((t - start_s) / symbol_s);
    bool on = false;
    if (k >= 0 && k < static_cast<double>(bits.size())) on = bits[static_cast<std::size_t>(k)] != 0;
    if (inverted) on = !on;
    if (on) x[i] = amplitude * std::sin(2.0 * std::numbers::pi * f_hz * t);
  }
  return x;
}

/// |H(f)| of a first-order RC high-pass.
inline double rc_highpass_gain(double f_hz, double cutoff_hz) {
  const double r = f_hz / cutoff_hz;
  return r / std::sqrt(1.0 + r * r);
}

/// Composite Simpson rule with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 2000) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// CDF of a Gaussian truncated to [0, 1], by integrating its density.
inline double truncated_gaussian_cdf(double mu, double sigma, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const auto density = [&](double t) { return std::exp(-(t - mu) * (t - mu) / (2.0 * sigma * sigma)); };
  return simpson(density, 0.0, x) / simpson(density, 0.0, 1.0);
}

/// Two-sided Kolmogorov-Smirnov distance between a sample and a CDF.
inline double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Payload bits per second net of errors and pilot overhead.
inline double effective_rate(double payload_bits, double ber, double frame_s) {
  return payload_bits * (1.0 - ber) / frame_s;
}

/// Bit decisions from per-symbol carrier amplitude measured by direct DFT over
/// the middle half of each symbol, thresholded at the mean of the pilot symbols.
inline std::vector<int> dft_decode(const std::vector<double>& x, double fs, double f_hz, double start_s,
                                   double symbol_s, std::size_t pilot_len, std::size_t payload_len) {
  std::vector<double> amps;
  for (std::size_t k = 0; k < pilot_len + payload_len; ++k) {
    const double t0 = start_s + (static_cast<double>(k) + 0.25) * symbol_s;
    const auto a = static_cast<std::size_t>(t0 * fs);
    const auto b = static_cast<std::size_t>((t0 + 0.5 * symbol_s) * fs);
    amps.push_back(tone_amplitude(x, fs, f_hz, a, std::min(b, x.size())));
  }
  double threshold = 0.0;
  for (std::size_t k = 0; k < pilot_len; ++k) threshold += amps[k];
  threshold /= static_cast<double>(pilot_len);
  std::vector<int> bits;
  for (std::size_t k = pilot_len; k < amps.size(); ++k) bits.push_back(amps[k] > threshold ? 1 : 0);
  return bits;
}

}  // namespace oracle
