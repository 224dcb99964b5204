#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "node/harness.hpp"

using namespace node;
namespace fs = std::filesystem;

namespace {

/// One transmitter, no background machines, so synthesis stays fast.
Scenario small_scenario(std::uint64_t seed = 1) {
  auto s = default_scenario();
  s.background.count = 0;
  s.seed = seed;
  return s;
}

std::string temp_path(const std::string& name) { return (fs::temp_directory_path() / name).string(); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST(Presets, CoresScale) {
  EXPECT_EQ(cores_scale_for(4), 1.0);
  EXPECT_LT(cores_scale_for(1), cores_scale_for(2));
  EXPECT_LT(cores_scale_for(2), cores_scale_for(3));
  EXPECT_LT(cores_scale_for(3), cores_scale_for(4));
  EXPECT_THROW(cores_scale_for(0), ConfigError);
  EXPECT_THROW(cores_scale_for(5), ConfigError);
}

TEST(Presets, DeviceFrequencies) {
  const std::map<std::string, double> expected{{"optiplex", 67.3e3}, {"poweredge", 65.8e3}, {"xps", 60.1e3},
                                               {"acer", 63.5e3},     {"custom1", 91.2e3},   {"custom2", 67.7e3},
                                               {"imac", 101e3}};
  ASSERT_EQ(device_preset_names().size(), expected.size());
  for (const auto& name : device_preset_names()) {
    const auto d = device_preset(name);
    EXPECT_EQ(d.pfc_freq_hz, expected.at(name)) << name;
    EXPECT_NO_THROW(d.validate()) << name;
  }
  const auto imac = device_preset("imac");
  EXPECT_TRUE(imac.inverted_ripple);
  EXPECT_EQ(imac.lag_tau_s, 0.035);
  EXPECT_GT(imac.fm_spread_hz, 0.0);
  EXPECT_THROW(device_preset("thinkpad"), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  auto s = small_scenario(7);
  auto& tx = s.transmitters[0];
  tx.random_noise = RandomNoiseConfig{0.015, 0.3, 0.5};
  tx.random_power = RandomPowerConfig{};
  tx.line_filter_attenuation = 10.0;
  tx.receiver_band = Passband{67.28e3, 67.34e3};
  tx.payload = {PayloadSource::Kind::text, "password123"};
  tx.device.forced_steps = {{1.0, 2000.0}};
  s.background.freqs_hz = {50e3, 80e3};
  s.receiver.timing = TimingMode::oracle;
  const auto j = to_json(s);
  const auto back = scenario_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(fingerprint(back), fingerprint(s));
  EXPECT_EQ(back.transmitters[0].device.forced_steps.size(), 1u);
  EXPECT_EQ(back.receiver.timing, TimingMode::oracle);
}

TEST(Config, FingerprintTracksConfigAndSeed) {
  const auto a = small_scenario(1);
  auto b = a;
  b.seed = 2;
  auto c = a;
  c.network.common_resistance_ohm = 0.3;
  EXPECT_NE(fingerprint(a), fingerprint(b));
  EXPECT_NE(fingerprint(a), fingerprint(c));
  EXPECT_EQ(fingerprint(a), fingerprint(small_scenario(1)));
}

TEST(Config, UnknownKeysRejected) {
  auto j = to_json(small_scenario());
  j["colour"] = "blue";
  EXPECT_THROW(scenario_from_json(j), ConfigError);
  j = to_json(small_scenario());
  j["network"]["resistance"] = 1.0;
  EXPECT_THROW(scenario_from_json(j), ConfigError);
  j = to_json(small_scenario());
  j["transmitters"][0]["device"]["pfc"] = 1.0;
  EXPECT_THROW(scenario_from_json(j), ConfigError);
}

TEST(Config, PresetsAndCoresFromJson) {
  const auto j = json::parse(R"({
    "transmitters": [
      {"name": "a", "device": "xps", "cores": 2},
      {"name": "b", "device": {"preset": "acer", "ripple_gain": 0.005}, "cores_scale": 0.7, "start_s": 4.0}
    ]
  })");
  const auto s = scenario_from_json(j);
  ASSERT_EQ(s.transmitters.size(), 2u);
  EXPECT_EQ(s.transmitters[0].device.pfc_freq_hz, 60.1e3);
  EXPECT_EQ(s.transmitters[0].cores_scale, cores_scale_for(2));
  EXPECT_EQ(s.transmitters[1].device.pfc_freq_hz, 63.5e3);
  EXPECT_EQ(s.transmitters[1].device.ripple_gain, 0.005);
  EXPECT_EQ(s.transmitters[1].cores_scale, 0.7);
}

TEST(Config, ShippedConfigsLoadAndValidate) {
  std::size_t count = 0;
  for (const auto& entry : fs::recursive_directory_iterator(NODE_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    ++count;
    Scenario s;
    ASSERT_NO_THROW(s = load_scenario(entry.path().string())) << entry.path();
    EXPECT_NO_THROW(validate(s)) << entry.path();
    EXPECT_FALSE(s.transmitters.empty()) << entry.path();
  }
  EXPECT_GE(count, 11u);
}

TEST(Config, DefaultConfigMatchesBuiltInDefault) {
  const auto file = load_scenario(std::string(NODE_CONFIG_DIR) + "/default.json");
  EXPECT_EQ(to_json(file), to_json(default_scenario()));
}

TEST(Config, LoadErrors) {
  EXPECT_THROW(load_scenario("/nonexistent/config.json"), IoError);
  const auto path = temp_path("node_bad_config.json");
  std::ofstream(path) << "{ \"seed\": ";
  EXPECT_THROW(load_scenario(path), ConfigError);
  fs::remove(path);
}

TEST(Config, ValidationCatchesBadScenarios) {
  auto s = small_scenario();
  s.transmitters[0].frames = 0;
  EXPECT_THROW(validate(s), ConfigError);
  s = small_scenario();
  s.duration_s = 2.0;
  EXPECT_THROW(validate(s), ConfigError);
  s = small_scenario();
  s.transmitters[0].cores_scale = 0.0;
  EXPECT_THROW(validate(s), ConfigError);
  s = small_scenario();
  s.transmitters[0].line_filter_attenuation = 0.5;
  EXPECT_THROW(validate(s), InvalidAttenuation);
  s = small_scenario();
  s.transmitters.clear();
  EXPECT_THROW(validate(s), ConfigError);
}

TEST(Payload, SourcesAndDeterminism) {
  const auto text = make_payload({PayloadSource::Kind::text, "password123"}, 94, 3);
  EXPECT_EQ(format_bits(Bits(text.begin(), text.begin() + 88)), format_bits(bytes_to_bits("password123")));
  EXPECT_EQ(text, make_payload({PayloadSource::Kind::text, "password123"}, 94, 3));
  const std::string bits(94, '1');
  EXPECT_EQ(make_payload({PayloadSource::Kind::bits, bits}, 94, 1), Bits(94, 1));
  EXPECT_THROW(make_payload({PayloadSource::Kind::bits, "101"}, 94, 1), LengthMismatch);
  EXPECT_EQ(make_payload({}, 94, 5), make_payload({}, 94, 5));
  EXPECT_NE(make_payload({}, 94, 5), make_payload({}, 94, 6));
}

TEST(Synthesis, TruthDescribesFrames) {
  auto s = small_scenario();
  s.transmitters[0].frames = 2;
  s.transmitters[0].frame_gap_s = 0.2;
  s.background.count = 5;
  const auto synth = synthesize(s);
  ASSERT_EQ(synth.truth.size(), 1u);
  const auto& t = synth.truth[0];
  ASSERT_EQ(t.payloads.size(), 2u);
  EXPECT_DOUBLE_EQ(t.frame_starts_s[1], 0.5 + 3.3 + 0.2);
  EXPECT_NE(t.payloads[0], t.payloads[1]);
  EXPECT_NEAR(synth.receiver_voltage.duration_s(), 0.5 + 2 * 3.3 + 0.2 + 0.3, 1e-6);
  ASSERT_EQ(synth.background_freqs_hz.size(), 5u);
  for (double f : synth.background_freqs_hz) EXPECT_GE(std::abs(f - 67.3e3), s.background.exclusion_hz);
  for (double c : t.pilot_carrier_hz) EXPECT_NEAR(c, 67.3e3, 50.0);
}

TEST(Report, CsvHeaderAndRows) {
  RunReport r;
  r.tx_names = {"a"};
  FrameOutcome ok;
  DecodeResult d;
  d.ber = 0.0;
  d.effective_bps = 94.0 / 3.3;
  d.passband = {67280, 67340};
  d.frame_start_s = 0.5123456789;
  ok.result = d;
  FrameOutcome miss;
  miss.frame_index = 1;
  miss.missed = true;
  r.frames = {ok, miss};
  const auto csv = report_csv(r);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "tx_id,ber,effective_bps,lb_hz,ub_hz,frame_start_s,missed");
  std::getline(in, line);
  EXPECT_EQ(line, "0,0,28.4848485,67280,67340,0.512345679,0");
  std::getline(in, line);
  EXPECT_EQ(line, "0,nan,0,nan,nan,nan,1");
  EXPECT_EQ(count_lines(report_jsonl(r)), 2u);
}

TEST(Report, ExportErrors) {
  RunReport r;
  EXPECT_THROW(export_report(r, "csv", "/nonexistent/dir/report.csv"), IoError);
  EXPECT_THROW(export_report(r, "xml", temp_path("node_report.xml")), ConfigError);
  EXPECT_THROW(export_sweep({}, "csv", "/nonexistent/dir/sweep.csv"), IoError);
  const auto path = temp_path("node_report.csv");
  export_report(r, "csv", path);
  EXPECT_EQ(read_file(path), std::string(kReportCsvHeader) + "\n");
  fs::remove(path);
}

TEST(Sweep, EmptyValuesGiveEmptyTable) {
  EXPECT_TRUE(sweep(small_scenario(), "cores_scale", {}, 3).empty());
  EXPECT_EQ(sweep_csv({}), std::string(kSweepCsvHeader) + "\n");
}

TEST(Sweep, UnknownAxis) {
  EXPECT_THROW(sweep(small_scenario(), "flux_capacitance", {1.0}, 1), UnknownAxis);
  // The alias exists but the scenario has no random noise section.
  EXPECT_THROW(with_axis(small_scenario(), "duty", 0.5), UnknownAxis);
  EXPECT_THROW(with_axis(small_scenario(), "network.grid_noise", 0.5), UnknownAxis);
}

TEST(Sweep, AxisPathsAndAliases) {
  auto base = small_scenario();
  base.transmitters.push_back(base.transmitters[0]);
  base.transmitters[1].start_s = 4.0;
  const auto a = with_axis(base, "cores_scale", 0.5);
  EXPECT_EQ(a.transmitters[0].cores_scale, 0.5);
  EXPECT_EQ(a.transmitters[1].cores_scale, 0.5);
  const auto b = with_axis(base, "transmitters.1.device.lag_tau_s", 0.02);
  EXPECT_EQ(b.transmitters[0].device.lag_tau_s, 0.010);
  EXPECT_EQ(b.transmitters[1].device.lag_tau_s, 0.02);
  const auto c = with_axis(base, "broadband_noise_rms_v", 0.02);
  EXPECT_EQ(c.network.grid_noise.broadband_noise_rms_v, 0.02);
}

TEST(Sweep, CsvPrecision) {
  SweepRow row;
  row.value = 0.123456789;
  row.median_ber = 1.0 / 3.0;
  row.mean_effective_bps = 28.484848;
  row.frames = 5;
  row.decoded = 4;
  row.miss_rate = 0.2;
  EXPECT_EQ(sweep_csv({row}),
            std::string(kSweepCsvHeader) + "\n0.123456789,0.333333333,28.484848,0.2,5,4\n");
}

TEST(Sweep, ThreadCountDoesNotChangeTable) {
  const auto base = small_scenario(3);
  const std::vector<double> values{0.008, 0.05};
  const auto one = sweep_csv(sweep(base, "broadband_noise_rms_v", values, 2, 1));
  const auto two = sweep_csv(sweep(base, "broadband_noise_rms_v", values, 2, 2));
  EXPECT_EQ(one, two);
  EXPECT_EQ(count_lines(one), 3u);
}

TEST(RunScenario, DefaultDecodesWithoutErrors) {
  const auto s = default_scenario();
  const auto r = run_scenario(s);
  ASSERT_EQ(r.frames.size(), 1u);
  const auto& f = r.frames[0];
  ASSERT_FALSE(f.missed) << f.miss_reason;
  ASSERT_TRUE(f.result && f.result->ber);
  EXPECT_EQ(*f.result->ber, 0.0);
  EXPECT_NEAR(f.result->effective_bps, 28.48, 0.01);
  EXPECT_TRUE(f.result->passband.contains(f.true_carrier_hz));
  EXPECT_LT(r.runtime_s, 60.0);
}

TEST(RunScenario, RepeatedRunsGiveIdenticalCsv) {
  auto s = small_scenario(11);
  s.transmitters[0].frames = 2;
  const auto a = report_csv(run_scenario(s));
  const auto b = report_csv(run_scenario(s));
  EXPECT_EQ(a, b);
  EXPECT_EQ(count_lines(a), 3u);
}

TEST(RunScenario, TransmitterDecodeOrderIrrelevant) {
  auto s = small_scenario(12);
  auto second = s.transmitters[0];
  second.name = "xps";
  second.device = device_preset("xps");
  second.start_s = 1.0;
  s.transmitters.push_back(second);
  const auto synth = synthesize(s);
  const auto forward = run_scenario(s, synth);
  const auto late = decode_transmitter(synth.receiver_voltage, s, 1, synth.truth[1]);
  const auto early = decode_transmitter(synth.receiver_voltage, s, 0, synth.truth[0]);
  RunReport reversed = forward;
  reversed.frames = early;
  reversed.frames.insert(reversed.frames.end(), late.begin(), late.end());
  EXPECT_EQ(report_csv(forward), report_csv(reversed));
  for (const auto& f : forward.frames) {
    ASSERT_FALSE(f.missed) << f.miss_reason;
    EXPECT_EQ(*f.result->ber, 0.0);
  }
}

TEST(RunScenario, OracleTimingDecodes) {
  auto s = small_scenario(13);
  s.receiver.timing = TimingMode::oracle;
  const auto r = run_scenario(s);
  ASSERT_FALSE(r.frames[0].missed);
  EXPECT_EQ(*r.frames[0].result->ber, 0.0);
  EXPECT_DOUBLE_EQ(r.frames[0].result->frame_start_s, 0.5);
}

TEST(RunScenario, KnownBandSkipsAcquisition) {
  auto s = small_scenario(14);
  s.transmitters[0].receiver_band = Passband{67.27e3, 67.33e3};
  const auto r = run_scenario(s);
  ASSERT_FALSE(r.frames[0].missed);
  EXPECT_EQ(r.frames[0].result->passband.lb_hz, 67.27e3);
  EXPECT_EQ(*r.frames[0].result->ber, 0.0);
}

TEST(RunScenario, UpsHasNoElectricalEffect) {
  auto s = small_scenario(15);
  const auto plain = synthesize(s);
  s.transmitters[0].ups = true;
  const auto ups = synthesize(s);
  EXPECT_EQ(plain.receiver_voltage.samples(), ups.receiver_voltage.samples());
}

TEST(RunScenario, MissingPilotIsReportedNotThrown) {
  auto s = small_scenario(16);
  s.transmitters[0].cores_scale = 0.01;
  const auto r = run_scenario(s);
  ASSERT_EQ(r.frames.size(), 1u);
  EXPECT_TRUE(r.frames[0].missed);
  EXPECT_EQ(r.missed(0), 1u);
  EXPECT_TRUE(std::isnan(r.mean_ber(0)));
}
