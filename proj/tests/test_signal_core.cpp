#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "node/signal_core.hpp"
#include "node/trace_io.hpp"
#include "oracles.hpp"

using namespace node;

namespace {

constexpr double kFs = 500e3;

double db(double ratio) { return 20.0 * std::log10(ratio); }

// Band-pass settling margin: half the FIR length.
std::size_t settle() { return fir::band_pass_length(kFs) / 2; }

std::vector<double> white_noise(std::size_t n, double rms, unsigned seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> g(0.0, rms);
  std::vector<double> x(n);
  for (auto& v : x) v = g(eng);
  return x;
}

}  // namespace

TEST(SignalTrace, RejectsInvalidConstruction) {
  EXPECT_THROW(SignalTrace({}, kFs), InvalidTrace);
  EXPECT_THROW(SignalTrace({1.0}, 0.0), InvalidTrace);
  EXPECT_THROW(SignalTrace({1.0, NAN}, kFs), InvalidTrace);
  EXPECT_THROW(SignalTrace({INFINITY}, kFs), InvalidTrace);
}

TEST(SignalTrace, SliceClampsToTrace) {
  SignalTrace t({0, 1, 2, 3, 4}, 10.0);
  auto s = t.slice(3, 10);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0], 3.0);
  EXPECT_EQ(s.sample_rate_hz(), 10.0);
}

TEST(BandPass, InBandTonePreservedWithinOneDb) {
  const std::size_t n = 500'000;
  SignalTrace x(oracle::tone(1.0, 67.30e3, kFs, n), kFs);
  const auto y = band_pass(x, {67.28e3, 67.34e3});
  ASSERT_EQ(y.size(), n);
  const double a = oracle::tone_amplitude(y.samples(), kFs, 67.30e3, settle(), n - settle());
  EXPECT_NEAR(db(a), 0.0, 1.0);
}

TEST(BandPass, MainsToneRejectedBySixtyDb) {
  const std::size_t n = 500'000;
  SignalTrace x(oracle::tone(1.0, 60.0, kFs, n), kFs);
  const auto y = band_pass(x, {67.28e3, 67.34e3});
  double peak = 0.0;
  for (std::size_t i = settle(); i < n - settle(); ++i) peak = std::max(peak, std::abs(y[i]));
  EXPECT_LE(db(peak), -60.0);
}

TEST(BandPass, OutOfBandNeighbourRejected) {
  // A tone 100 Hz outside the band edge sits well past the 30 Hz transition.
  const std::size_t n = 500'000;
  SignalTrace x(oracle::tone(1.0, 67.44e3, kFs, n), kFs);
  const auto y = band_pass(x, {67.28e3, 67.34e3});
  const double a = oracle::tone_amplitude(y.samples(), kFs, 67.44e3, settle(), n - settle());
  EXPECT_LE(db(a), -60.0);
}

TEST(BandPass, InvalidBands) {
  SignalTrace x(std::vector<double>(1000, 0.0), kFs);
  EXPECT_THROW(band_pass(x, {67e3, 67e3}), InvalidBand);
  EXPECT_THROW(band_pass(x, {68e3, 67e3}), InvalidBand);
  EXPECT_THROW(band_pass(x, {0.0, 1e3}), InvalidBand);
  EXPECT_THROW(band_pass(x, {200e3, 250e3}), InvalidBand);
}

TEST(BandPass, Linearity) {
  const std::size_t n = 200'000;
  const auto a = white_noise(n, 1.0, 1);
  const auto b = oracle::tone(0.3, 67.3e3, kFs, n);
  std::vector<double> mix(n);
  for (std::size_t i = 0; i < n; ++i) mix[i] = 2.5 * a[i] - 0.7 * b[i];
  const Passband band{67.28e3, 67.34e3};
  const auto ya = band_pass(SignalTrace(a, kFs), band);
  const auto yb = band_pass(SignalTrace(b, kFs), band);
  const auto ym = band_pass(SignalTrace(mix, kFs), band);
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    err = std::max(err, std::abs(ym[i] - (2.5 * ya[i] - 0.7 * yb[i])));
    scale = std::max(scale, std::abs(ym[i]));
  }
  EXPECT_LE(err, 1e-9 * scale);
}

TEST(BandPass, EnvelopeOfInBandToneIsFlat) {
  const std::size_t n = 500'000;
  const auto y = band_pass(SignalTrace(oracle::tone(1.0, 67.31e3, kFs, n), kFs), {67.28e3, 67.34e3});
  const auto e = envelope(y, 0.033 / 4);
  double sum = 0.0, sq = 0.0;
  const std::size_t lo = settle(), hi = n - settle();
  for (std::size_t i = lo; i < hi; ++i) {
    sum += e[i];
    sq += e[i] * e[i];
  }
  const double m = sum / static_cast<double>(hi - lo);
  const double sd = std::sqrt(std::max(0.0, sq / static_cast<double>(hi - lo) - m * m));
  EXPECT_LT(sd / m, 0.01);
}

TEST(BandPass, OutputSpectrumConfinedToBand) {
  const std::size_t n = 1'000'000;
  const Passband band{67.28e3, 67.34e3};
  const auto y = band_pass(SignalTrace(white_noise(n, 1.0, 7), kFs), band);
  // Analyse only the settled middle part.
  const auto mid = y.slice(settle(), n - 2 * settle());
  const auto s = psd(mid, kDefaultPsdSegment);
  const double df = s.bin_width_hz();
  const double inband = s.max_in(band.lb_hz, band.ub_hz);
  // Hann leakage of the in-band peak is still about -48 dB three bins out and
  // falls below -60 dB from the sixth bin, so the guard is six bins.
  const double outside = std::max(s.max_in(0.0, band.lb_hz - 6 * df), s.max_in(band.ub_hz + 6 * df, kFs / 2));
  EXPECT_LE(10.0 * std::log10(outside / inband), -60.0);
}

TEST(HighPass, RemovesDc) {
  const auto y = high_pass(SignalTrace(std::vector<double>(200'000, 120.0), kFs), 10e3);
  double m = 0.0;
  for (double v : y.samples()) m += v;
  m /= static_cast<double>(y.size());
  EXPECT_LT(std::abs(m), 0.01 * 120.0);
}

TEST(HighPass, MatchesAnalyticRcResponse) {
  const std::size_t n = 100'000;
  for (double f : {10e3, 100e3, 3e3}) {
    const auto y = high_pass(SignalTrace(oracle::tone(1.0, f, kFs, n), kFs), 10e3);
    const double a = oracle::tone_amplitude(y.samples(), kFs, f, n / 10, n - n / 10);
    EXPECT_NEAR(db(a), db(oracle::rc_highpass_gain(f, 10e3)), 0.5) << f;
  }
  const auto y = high_pass(SignalTrace(oracle::tone(1.0, 10e3, kFs, n), kFs), 10e3);
  EXPECT_NEAR(db(oracle::tone_amplitude(y.samples(), kFs, 10e3, n / 10, n - n / 10)), -3.0, 0.5);
}

TEST(HighPass, InvalidCutoff) {
  SignalTrace x(std::vector<double>(100, 1.0), kFs);
  EXPECT_THROW(high_pass(x, 0.0), InvalidBand);
  EXPECT_THROW(high_pass(x, 250e3), InvalidBand);
}

TEST(Envelope, ToneGivesTwoOverPiAmplitude) {
  const std::size_t n = 100'000;
  const auto e = envelope(SignalTrace(oracle::tone(3.0, 67.3e3, kFs, n), kFs), 0.002);
  for (std::size_t i = 1000; i < n - 1000; i += 997) EXPECT_NEAR(e[i], 2.0 * 3.0 / std::numbers::pi, 3e-3);
}

TEST(Envelope, ZeroInZeroOut) {
  const auto e = envelope(SignalTrace::zeros(5000, kFs), 0.001);
  for (double v : e.samples()) EXPECT_EQ(v, 0.0);
}

TEST(Envelope, OokSymbolContrast) {
  const double symbol = 0.033;
  const std::vector<int> bits{1, 0, 1, 1, 0, 0, 1, 0};
  const auto n = static_cast<std::size_t>(symbol * bits.size() * kFs);
  const auto e = envelope(SignalTrace(oracle::ook_tone(bits, symbol, 0.0, 1.0, 67.3e3, kFs, n), kFs), symbol / 4);
  double hi = 1e9, lo = 0.0;
  for (std::size_t k = 0; k < bits.size(); ++k) {
    const double v = e[static_cast<std::size_t>((k + 0.5) * symbol * kFs)];
    if (bits[k]) hi = std::min(hi, v);
    else lo = std::max(lo, v);
  }
  EXPECT_GE(hi, 10.0 * std::max(lo, 1e-12));
}

TEST(Envelope, RejectsSubSampleWindow) {
  EXPECT_THROW(envelope(SignalTrace::zeros(10, kFs), 1e-7), InvalidWindow);
  EXPECT_THROW(envelope(SignalTrace::zeros(10, kFs), 0.0), InvalidWindow);
}

TEST(Psd, TonePeakAtNearestBin) {
  const auto s = psd(SignalTrace(oracle::tone(1.0, 67.3e3, kFs, 200'000), kFs), 1u << 15);
  EXPECT_LE(std::abs(s.freqs_hz[s.peak_bin()] - 67.3e3), s.bin_width_hz());
}

TEST(Psd, ParsevalForWhiteNoise) {
  const auto x = white_noise(1u << 18, 0.7, 3);
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  const auto s = psd(SignalTrace(x, kFs), 4096);
  double total = 0.0;
  for (double p : s.psd) total += p * s.bin_width_hz();
  EXPECT_NEAR(total / ms, 1.0, 0.05);
}

TEST(Psd, DisjointHalvesAgree) {
  const auto x = white_noise(1u << 19, 1.0, 11);
  const std::size_t half = x.size() / 2;
  const auto a = psd(std::span<const double>(x).subspan(0, half), kFs, 4096);
  const auto b = psd(std::span<const double>(x).subspan(half), kFs, 4096);
  double mean_abs_db = 0.0;
  for (std::size_t k = 1; k + 1 < a.psd.size(); ++k) mean_abs_db += std::abs(10.0 * std::log10(a.psd[k] / b.psd[k]));
  mean_abs_db /= static_cast<double>(a.psd.size() - 2);
  EXPECT_LT(mean_abs_db, 3.0);
}

TEST(Psd, ZeroTraceAndErrors) {
  const auto s = psd(SignalTrace::zeros(4096, kFs), 1024);
  for (double p : s.psd) EXPECT_EQ(p, 0.0);
  EXPECT_THROW(psd(std::span<const double>(), kFs, 16), EmptyTrace);
  EXPECT_THROW(psd(SignalTrace::zeros(100, kFs), 1024), SegmentTooLong);
}

TEST(Spectrogram, OokCarrierFollowsSymbols) {
  const double symbol = 0.033;
  const std::vector<int> bits{1, 1, 0, 0, 1, 0, 1, 0};
  const auto n = static_cast<std::size_t>(symbol * bits.size() * kFs);
  const auto x = oracle::ook_tone(bits, symbol, 0.0, 1.0, 67.3e3, kFs, n);
  const std::size_t seg = 4096;  // 8 ms, well inside one symbol
  const auto frames = spectrogram(SignalTrace(x, kFs), seg, seg);
  for (const auto& f : frames) {
    const double centre = f.time_s + 0.5 * seg / kFs;
    const auto k = static_cast<std::size_t>(centre / symbol);
    const double t_in = centre - static_cast<double>(k) * symbol;
    if (t_in < 0.006 || t_in > symbol - 0.006) continue;  // straddles an edge
    const double p = f.spectrum.psd[f.spectrum.nearest_bin(67.3e3)];
    if (bits[k]) EXPECT_GT(p, 1e-3) << centre;
    else EXPECT_LT(p, 1e-9) << centre;
  }
}

TEST(Spectrogram, StationaryToneConstantPower) {
  const auto frames = spectrogram(SignalTrace(oracle::tone(1.0, 67.3e3, kFs, 100'000), kFs), 8192, 4096);
  ASSERT_GT(frames.size(), 5u);
  double lo = 1e300, hi = 0.0;
  for (const auto& f : frames) {
    const double p = f.spectrum.max_in(67.2e3, 67.4e3);
    lo = std::min(lo, p);
    hi = std::max(hi, p);
    EXPECT_NEAR(f.time_s * kFs, std::round(f.time_s * kFs), 1e-6);
  }
  EXPECT_LT(10.0 * std::log10(hi / lo), 1.0);
}

TEST(Spectrogram, HopLongerThanSegmentRejected) {
  EXPECT_THROW(spectrogram(SignalTrace::zeros(5000, kFs), 1024, 2048), InvalidWindow);
}

TEST(Determinism, FiltersAreBitIdentical) {
  const SignalTrace x(white_noise(100'000, 1.0, 5), kFs);
  const Passband band{60e3, 60.06e3};
  EXPECT_EQ(band_pass(x, band).samples(), band_pass(x, band).samples());
  EXPECT_EQ(high_pass(x, 10e3).samples(), high_pass(x, 10e3).samples());
  EXPECT_EQ(envelope(x, 0.001).samples(), envelope(x, 0.001).samples());
}

TEST(TraceIo, BinaryRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "node_trace_roundtrip.bin";
  const SignalTrace t({1.5, -2.25, 3e-9}, 12345.0, Unit::amps);
  io::write_trace(path.string(), t);
  const auto u = io::read_trace(path.string());
  EXPECT_EQ(u.samples(), t.samples());
  EXPECT_EQ(u.sample_rate_hz(), 12345.0);
  EXPECT_EQ(u.unit(), Unit::amps);
  std::ifstream in(path, std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  EXPECT_EQ(std::string(magic, 8), "NODETRC1");
  EXPECT_EQ(std::filesystem::file_size(path), 24u + 3u * 8u);
  std::filesystem::remove(path);
}

TEST(TraceIo, RejectsCorruptFiles) {
  const auto path = std::filesystem::temp_directory_path() / "node_trace_corrupt.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTATRACE_________________________________";
  }
  EXPECT_THROW(io::read_trace(path.string()), IoError);
  std::filesystem::remove(path);
  EXPECT_THROW(io::read_trace("/nonexistent/dir/trace.bin"), IoError);
  EXPECT_THROW(io::write_trace("/nonexistent/dir/trace.bin", SignalTrace({1.0}, 1.0)), IoError);
}

TEST(TraceIo, CsvHeaderAndRows) {
  const auto path = std::filesystem::temp_directory_path() / "node_trace.csv";
  io::write_trace_csv(path.string(), SignalTrace({0.5, -1.0}, 2.0));
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "time_s,value");
  std::getline(in, line);
  EXPECT_EQ(line, "0,0.5");
  std::getline(in, line);
  EXPECT_EQ(line, "0.5,-1");
  std::filesystem::remove(path);
}
