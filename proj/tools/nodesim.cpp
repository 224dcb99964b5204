// nodesim: scenario runner and trace decoder.
//
//   nodesim simulate <config> [-o report.csv] [--jsonl report.jsonl]
//   nodesim decode <trace> --pilot 110010 --symbol-ms 33 [--payload-len 94] [--band LB,UB]
//   nodesim scan <trace> --pilot 110010 --symbol-ms 33 [--pilot-start S]
//   nodesim sweep <config> --axis PATH --values a,b,c [--frames N] [-o table.csv]
//   nodesim export-trace <config> -o trace.bin|trace.csv
//
// Exit status: 0 success, 2 no pilot found, 1 configuration or I/O error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "node/node.hpp"

namespace {

using namespace node;

struct TraceArgs {
  std::string path;
  std::string pilot = "110010";
  double symbol_ms = 33.0;
  std::size_t payload_len = 94;
  std::vector<double> band;
  double f_lo = 20e3;
  double f_hi = 150e3;
  double f_max = 60.0;
  double f_inc = 10.0;
  unsigned threads = 1;
  std::string reference;
};

std::vector<Bits> read_reference(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Bits> frames;
  for (std::string line; std::getline(in, line);) {
    auto bits = parse_bits(line);
    if (!bits.empty()) frames.push_back(std::move(bits));
  }
  return frames;
}

ScanConfig scan_config(const TraceArgs& a) {
  ScanConfig c;
  c.f_lo_hz = a.f_lo;
  c.f_hi_hz = a.f_hi;
  c.f_max_hz = a.f_max;
  c.f_inc_hz = a.f_inc;
  c.threads = a.threads;
  return c;
}

FrameSpec frame_spec(const TraceArgs& a) { return FrameSpec(parse_bits(a.pilot), a.payload_len, a.symbol_ms * 1e-3); }

void add_trace_options(CLI::App* cmd, TraceArgs& a) {
  cmd->add_option("trace", a.path, "trace file (binary trace format)")->required();
  cmd->add_option("--pilot", a.pilot, "pilot bit string")->capture_default_str();
  cmd->add_option("--symbol-ms", a.symbol_ms, "symbol duration in ms")->capture_default_str();
  cmd->add_option("--payload-len", a.payload_len, "payload bits per frame")->capture_default_str();
  cmd->add_option("--f-lo", a.f_lo, "scan lower edge, Hz")->capture_default_str();
  cmd->add_option("--f-hi", a.f_hi, "scan upper edge, Hz")->capture_default_str();
  cmd->add_option("--f-max", a.f_max, "widest scanned band, Hz")->capture_default_str();
  cmd->add_option("--f-inc", a.f_inc, "scan step, Hz")->capture_default_str();
  cmd->add_option("--threads", a.threads, "scan worker threads (0 = all cores)")->capture_default_str();
}

Scenario load_with_seed(const std::string& path, const std::optional<std::uint64_t>& seed) {
  Scenario s = load_scenario(path);
  if (seed) s.seed = *seed;
  return s;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::fputs(text.c_str(), stdout);
  } else {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out.flush()) throw IoError("short write to " + path);
  }
}

/// Band and first-pilot search. Every (band, offset) pair the scan accepts
/// within one frame length of the first hit is demodulated. The band whose
/// payload sits closest to the two pilot levels wins, and decoding starts at
/// that band's earliest hit (later hits may be pilot patterns inside a payload).
std::pair<Passband, double> acquire(const SignalTrace& v, const FrameSpec& spec, const ScanConfig& cfg) {
  const double symbol_s = spec.symbol_duration_s();
  const double step = 0.5 * symbol_s;
  const double guard = 0.1;  // band-pass warm-up margin around each local window
  std::optional<double> first_hit;
  std::optional<std::pair<Passband, double>> best;
  double best_residual = std::numeric_limits<double>::infinity();
  std::map<double, double> earliest_from;
  for (double t = 0.0;;) {
    if (first_hit && t > *first_hit + spec.frame_duration_s()) break;
    std::pair<Passband, double> hit;
    try {
      hit = acquire_passband(v, spec, cfg, t, step);
    } catch (const NoPilotFound&) {
      if (!best) throw;
      break;
    }
    const auto& [band, pilot_at] = hit;
    t = pilot_at + step;
    const double from = std::max(0.0, pilot_at - symbol_s);
    const double begin = std::max(0.0, from - guard);
    const auto first = static_cast<std::size_t>(std::llround(begin * v.sample_rate_hz()));
    const auto count =
        static_cast<std::size_t>(std::llround((spec.frame_duration_s() + 3.0 * symbol_s + 2.0 * guard) * v.sample_rate_hz()));
    if (first + count > v.size()) continue;
    if (!first_hit) first_hit = pilot_at;
    try {
      const BandEnvelope env(v.slice(first, count), band, symbol_s);
      const auto r = demodulate(env, spec, std::nullopt, {}, from - begin, from - begin + spec.frame_duration_s() + 3.0 * symbol_s);
      const double residual = level_residual(r, spec);
      if (residual < best_residual) {
        best_residual = residual;
        const auto earliest = earliest_from.try_emplace(band.lb_hz * 1e6 + band.ub_hz, from).first->second;
        best = std::make_pair(band, earliest);
      }
      earliest_from.try_emplace(band.lb_hz * 1e6 + band.ub_hz, from);
    } catch (const PilotNotFound&) {
    }
  }
  if (!best) throw NoPilotFound("no band yields a complete frame");
  return *best;
}

int run_decode(const TraceArgs& a) {
  const auto v = io::read_trace(a.path);
  const auto spec = frame_spec(a);
  Passband band{};
  double search_from = 0.0;
  if (a.band.size() == 2) {
    band = {a.band[0], a.band[1]};
  } else if (a.band.empty()) {
    std::tie(band, search_from) = acquire(v, spec, scan_config(a));
  } else {
    throw ConfigError("--band takes LB,UB");
  }
  std::fprintf(stderr, "band %.0f-%.0f Hz\n", band.lb_hz, band.ub_hz);
  const auto reference = a.reference.empty() ? std::vector<Bits>{} : read_reference(a.reference);
  const BandEnvelope env(v, band, spec.symbol_duration_s());
  RunReport report;
  report.tx_names = {"rx"};
  for (std::size_t k = 0;; ++k) {
    FrameOutcome o;
    o.frame_index = k;
    try {
      std::optional<Bits> ref;
      if (k < reference.size()) ref = reference[k];
      o.result = demodulate(env, spec, ref, {}, search_from);
    } catch (const PilotNotFound&) {
      if (k == 0) throw;
      break;
    }
    search_from = o.result->frame_start_s + spec.frame_duration_s();
    std::fprintf(stderr, "frame %zu at %.4f s: %s\n", k, o.result->frame_start_s, format_bits(o.result->bits).c_str());
    report.frames.push_back(std::move(o));
  }
  std::fputs(report_csv(report).c_str(), stdout);
  return 0;
}

int run_scan(const TraceArgs& a, const std::optional<double>& pilot_start) {
  const auto v = io::read_trace(a.path);
  const auto spec = frame_spec(a);
  const auto cfg = scan_config(a);
  Passband band{};
  if (pilot_start) {
    band = scan_passband(v, spec, cfg, *pilot_start);
  } else {
    band = acquire(v, spec, cfg).first;
  }
  std::printf("%.9g %.9g\n", band.lb_hz, band.ub_hz);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NoDE power-line covert channel simulator and decoder"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "override the scenario seed");

  std::string config, out_path, jsonl_path;

  auto* simulate = app.add_subcommand("simulate", "synthesize and decode a scenario, print the report CSV");
  simulate->add_option("config", config, "scenario JSON")->required();
  simulate->add_option("-o,--output", out_path, "report CSV path (default stdout)");
  simulate->add_option("--jsonl", jsonl_path, "also write a JSONL report");

  TraceArgs decode_args;
  auto* decode = app.add_subcommand("decode", "blind decode of a recorded trace");
  add_trace_options(decode, decode_args);
  decode->add_option("--band", decode_args.band, "skip the scan and use LB,UB (Hz)")->delimiter(',')->expected(2);
  decode->add_option("--reference", decode_args.reference, "file with the sent payload bits, one frame per line");

  TraceArgs scan_args;
  std::optional<double> pilot_start;
  auto* scan = app.add_subcommand("scan", "passband discovery only; prints LB UB in Hz");
  add_trace_options(scan, scan_args);
  scan->add_option("--pilot-start", pilot_start, "pilot start in seconds (default: try every half symbol)");

  std::string axis;
  std::vector<double> values;
  std::size_t frames = 5;
  unsigned threads = 0;
  auto* sweep_cmd = app.add_subcommand("sweep", "run a scenario over a grid of one config value");
  sweep_cmd->add_option("config", config, "scenario JSON")->required();
  sweep_cmd->add_option("--axis", axis, "JSON path or alias, e.g. transmitters.*.cores_scale")->required();
  sweep_cmd->add_option("--values", values, "comma-separated values")->delimiter(',');
  sweep_cmd->add_option("--frames", frames, "independent runs per value")->capture_default_str();
  sweep_cmd->add_option("--threads", threads, "worker threads (0 = all cores)")->capture_default_str();
  sweep_cmd->add_option("-o,--output", out_path, "table CSV path (default stdout)");
  sweep_cmd->add_option("--jsonl", jsonl_path, "also write a JSONL table");

  auto* export_cmd = app.add_subcommand("export-trace", "write the synthesized receiver trace");
  export_cmd->add_option("config", config, "scenario JSON")->required();
  export_cmd->add_option("-o,--output", out_path, "output path; .csv writes text, anything else binary")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*simulate) {
      const auto s = load_with_seed(config, seed);
      const auto report = run_scenario(s);
      emit(report_csv(report), out_path);
      if (!jsonl_path.empty()) export_report(report, "jsonl", jsonl_path);
      for (std::size_t i = 0; i < report.tx_names.size(); ++i)
        std::fprintf(stderr, "%s: %zu/%zu frames missed, mean BER %.4g\n", report.tx_names[i].c_str(),
                     report.missed(i), s.transmitters[i].frames, report.mean_ber(i));
      std::fprintf(stderr, "fingerprint %s, %.1f s\n", report.fingerprint.c_str(), report.runtime_s);
      return 0;
    }
    if (*decode) return run_decode(decode_args);
    if (*scan) return run_scan(scan_args, pilot_start);
    if (*sweep_cmd) {
      const auto s = load_with_seed(config, seed);
      const auto rows = sweep(s, axis, values, frames, threads);
      emit(sweep_csv(rows), out_path);
      if (!jsonl_path.empty()) export_sweep(rows, "jsonl", jsonl_path);
      return 0;
    }
    if (*export_cmd) {
      const auto s = load_with_seed(config, seed);
      const auto synth = synthesize(s);
      const bool csv = out_path.size() >= 4 && out_path.compare(out_path.size() - 4, 4, ".csv") == 0;
      if (csv) io::write_trace_csv(out_path, synth.receiver_voltage);
      else io::write_trace(out_path, synth.receiver_voltage);
      return 0;
    }
  } catch (const NoPilotFound& e) {
    std::fprintf(stderr, "no pilot: %s\n", e.what());
    return 2;
  } catch (const PilotNotFound& e) {
    std::fprintf(stderr, "no pilot: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
