// adiaplan command-line tool.
//
// Exit codes: 0 success, 1 runtime or domain error, 2 usage error,
// 3 adiabatic threshold not found.

#include <adiaplan/adiaplan.hpp>
#include <adiaplan/digest.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <unistd.h>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace adiaplan;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_runtime = 1;
constexpr int exit_usage = 2;
constexpr int exit_no_threshold = 3;

/// Flag combinations CLI11 cannot check on its own.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string out_dir = ".";
  unsigned threads = 0;
  std::uint64_t seed = 0;
  bool quiet = false;
};

void info(const Globals &g, const std::string &msg) {
  if (!g.quiet) std::cerr << msg << "\n";
}

/// Writes through a temporary file in the destination directory and renames it into place.
void write_atomic(const fs::path &path, const std::string &content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + fmt::format(".tmp{}", ::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) fail(ErrorKind::Io, "failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    fail(ErrorKind::Io, "cannot move output into place at " + path.string() + ": " + ec.message());
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Provenance record written next to the outputs of every command.
class RunManifest {
public:
  RunManifest(std::string command, const Globals &g) : command_(std::move(command)), globals_(g) {}

  void parameter(const std::string &key, json value) { params_[key] = std::move(value); }

  void input(const std::string &role, const std::string &path) {
    if (path.rfind("builtin:", 0) == 0)
      inputs_[role] = {{"path", path}, {"sha256", nullptr}};
    else
      inputs_[role] = {{"path", path}, {"sha256", sha256_file(path)}};
  }

  std::string input_digest(const std::string &role) const {
    const auto &d = inputs_.at(role).at("sha256");
    return d.is_string() ? d.get<std::string>() : inputs_.at(role).at("path").get<std::string>();
  }

  /// Writes `content` to out_dir/name and records its digest.
  fs::path output(const std::string &name, const std::string &content) {
    const fs::path path = fs::path(globals_.out_dir) / name;
    write_atomic(path, content);
    outputs_[name] = sha256_hex(content);
    return path;
  }

  void write(const std::string &file_stem) const {
    json body = {{"command", command_},
                 {"tool", tool_name},
                 {"tool_version", tool_version},
                 {"parameters", params_},
                 {"globals", {{"threads", globals_.threads}, {"seed", globals_.seed}}},
                 {"inputs", inputs_},
                 {"outputs", outputs_}};
    // Thread count does not influence results, so it is left out of the digest.
    json digested = body;
    digested["globals"].erase("threads");
    body["digest"] = sha256_hex(digested.dump());
    body["timestamp"] = utc_timestamp();
    write_atomic(fs::path(globals_.out_dir) / (file_stem + ".manifest.json"), body.dump(1) + "\n");
  }

private:
  std::string command_;
  Globals globals_;
  json params_ = json::object();
  json inputs_ = json::object();
  json outputs_ = json::object();
};

PulseWaveform resolve_waveform(const std::string &source) {
  if (source == "builtin:trfoci") return make_trfoci_style();
  const TrFociDesign d;
  if (source == "builtin:hs1") return generate_hs(1, d.beta, d.mu, d.duration_s, d.n_samples);
  if (source == "builtin:foci") return generate_foci(generate_hs(1, d.beta, d.mu, d.duration_s, d.n_samples), d.a_max);
  if (source.rfind("builtin:", 0) == 0) throw UsageError("unknown builtin waveform '" + source + "' (builtin:trfoci, builtin:hs1, builtin:foci)");
  if (!fs::exists(source)) throw UsageError("waveform file not found: " + source);
  return load_waveform(source);
}

/// "lo:hi" in Hz.
std::pair<double, double> parse_range(const std::string &s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw UsageError("range must be written lo:hi, got '" + s + "'");
  try {
    std::size_t a = 0, b = 0;
    const std::string lo_s = s.substr(0, colon), hi_s = s.substr(colon + 1);
    const double lo = std::stod(lo_s, &a), hi = std::stod(hi_s, &b);
    if (a != lo_s.size() || b != hi_s.size()) throw std::invalid_argument(s);
    return {lo, hi};
  } catch (const std::exception &) {
    throw UsageError("range must be written lo:hi, got '" + s + "'");
  }
}


// --------------------------------------------------------------------------

struct MakePulseArgs {
  std::string family = "trfoci";
  double beta = TrFociDesign{}.beta;
  double mu = TrFociDesign{}.mu;
  double duration_ms = 1e3 * TrFociDesign{}.duration_s;
  int samples = TrFociDesign{}.n_samples;
  double a_max = TrFociDesign{}.a_max;
  double edge_slowdown = TrFociDesign{}.edge_slowdown;
  std::string out = "pulse.json";
};

int cmd_make_pulse(const Globals &g, const MakePulseArgs &a) {
  PulseWaveform w;
  const double duration_s = a.duration_ms * 1e-3;
  if (a.family == "hs1") {
    w = generate_hs(1, a.beta, a.mu, duration_s, a.samples);
  } else if (a.family == "foci") {
    w = generate_foci(generate_hs(1, a.beta, a.mu, duration_s, a.samples), a.a_max);
  } else {
    w = make_trfoci_style({duration_s, a.samples, a.beta, a.mu, a.a_max, a.edge_slowdown});
  }
  RunManifest m("make-pulse", g);
  m.parameter("family", a.family);
  m.parameter("beta", a.beta);
  m.parameter("mu", a.mu);
  m.parameter("duration_ms", a.duration_ms);
  m.parameter("samples", a.samples);
  m.parameter("a_max", a.a_max);
  m.parameter("edge_slowdown", a.edge_slowdown);
  const auto path = m.output(a.out, serialize_waveform(w));
  m.write(fs::path(a.out).stem().string());
  info(g, fmt::format("wrote {} ({} samples, {} ms, bandwidth {:.1f} Hz)", path.string(), w.size(), 1e3 * w.duration_s(), bandwidth(w)));
  return exit_ok;
}

// --------------------------------------------------------------------------

struct SimArgs {
  std::string waveform;
  double thickness_mm = 3.0;
  double max_dt_us = 2.0;
  std::string metric = "band";
  double band_fraction = 0.4;
  double t1_ms = 0.0, t2_ms = 0.0;
};

SimOptions sim_options(const Globals &g, const SimArgs &a) {
  SimOptions opt;
  opt.max_dt_s = a.max_dt_us * 1e-6;
  opt.metric = a.metric == "center" ? EfficiencyMetric::Center : EfficiencyMetric::BandMean;
  opt.band_fraction = a.band_fraction;
  if (a.t1_ms > 0.0 || a.t2_ms > 0.0) {
    if (!(a.t1_ms > 0.0 && a.t2_ms > 0.0)) throw UsageError("--t1-ms and --t2-ms must be given together");
    opt.relaxation = Relaxation{a.t1_ms * 1e-3, a.t2_ms * 1e-3};
  }
  opt.threads = g.threads;
  return opt;
}

void record_sim(RunManifest &m, const SimArgs &a) {
  m.input("waveform", a.waveform);
  m.parameter("thickness_mm", a.thickness_mm);
  m.parameter("max_dt_us", a.max_dt_us);
  m.parameter("metric", a.metric);
  m.parameter("band_fraction", a.band_fraction);
  if (a.t1_ms > 0.0) m.parameter("t1_ms", a.t1_ms);
  if (a.t2_ms > 0.0) m.parameter("t2_ms", a.t2_ms);
}

struct SimulateArgs {
  SimArgs sim;
  double b1max_hz = 0.0;
  std::string out = "profile.csv";
  std::string svg;
};

int cmd_simulate_pulse(const Globals &g, const SimulateArgs &a) {
  const PulseWaveform w = resolve_waveform(a.sim.waveform);
  const SliceSelection slice = make_slice_selection(w, a.sim.thickness_mm);
  const SimOptions opt = sim_options(g, a.sim);
  const SliceProfile p = sweep_grid(w, slice, {a.b1max_hz}, opt).front();

  RunManifest m("simulate-pulse", g);
  record_sim(m, a.sim);
  m.parameter("b1max_hz", a.b1max_hz);
  m.output(a.out, profile_csv(p));
  svg::Chart chart;
  chart.title = fmt::format("Slice profile of {} at B1max {} Hz", w.name, a.b1max_hz);
  chart.x_label = "z (mm)";
  chart.y_label = "Mz";
  chart.y_min = -1.0;
  chart.y_max = 1.0;
  chart.series.push_back({fmt::format("{} Hz", a.b1max_hz), p.z_mm, p.mz_final});
  const std::string svg_name = a.svg.empty() ? fs::path(a.out).replace_extension(".svg").string() : a.svg;
  m.output(svg_name, svg::render(chart));
  m.write(fs::path(a.out).stem().string());
  std::cout << fmt::format("inversion efficiency: {:.4f}\n", p.inversion_efficiency);
  return exit_ok;
}

// --------------------------------------------------------------------------

struct ThresholdArgs {
  SimArgs sim;
  double target = 0.97;
  std::string range = "0:200";
  double tol_hz = 0.5;
  std::string sweep_out;
  std::size_t sweep_points = 41;
};

int cmd_find_threshold(const Globals &g, const ThresholdArgs &a) {
  const PulseWaveform w = resolve_waveform(a.sim.waveform);
  const SliceSelection slice = make_slice_selection(w, a.sim.thickness_mm);
  const SimOptions opt = sim_options(g, a.sim);
  const auto [lo, hi] = parse_range(a.range);
  ThresholdSearch search;
  search.target_efficiency = a.target;
  search.lo_hz = lo;
  search.hi_hz = hi;
  search.tol_hz = a.tol_hz;

  RunManifest m("find-threshold", g);
  record_sim(m, a.sim);
  m.parameter("target", a.target);
  m.parameter("range_hz", {lo, hi});
  m.parameter("tol_hz", a.tol_hz);

  if (!a.sweep_out.empty()) {
    if (a.sweep_points < 2) throw UsageError("--sweep-points must be at least 2");
    std::vector<double> values(a.sweep_points);
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(values.size() - 1);
    const auto profiles = sweep_grid(w, slice, values, opt);
    svg::Chart chart;
    chart.title = fmt::format("Inversion efficiency of {}", w.name);
    chart.x_label = "B1max (Hz)";
    chart.y_label = "inversion efficiency";
    chart.y_min = 0.0;
    chart.y_max = 1.0;
    std::vector<double> eff;
    for (const auto &p : profiles) eff.push_back(p.inversion_efficiency);
    chart.series.push_back({"efficiency", values, eff, svg::palette()[0], true});
    chart.series.push_back({fmt::format("target {}", a.target), {lo, hi}, {a.target, a.target}, svg::palette()[1]});
    m.parameter("sweep_points", a.sweep_points);
    m.output(a.sweep_out, sweep_csv(profiles));
    m.output(fs::path(a.sweep_out).replace_extension(".svg").string(), svg::render(chart));
  }

  try {
    const double threshold = find_threshold(w, slice, search, opt);
    m.parameter("threshold_hz", threshold);
    m.write("find-threshold");
    std::cout << fmt::format("threshold: {} Hz\n", threshold);
    return exit_ok;
  } catch (const ThresholdNotFound &e) {
    m.parameter("threshold_hz", nullptr);
    m.parameter("efficiency_at_hi", e.efficiency_at_hi());
    m.write("find-threshold");
    std::cerr << fmt::format("threshold not found: best efficiency {:.4f} at {} Hz (target {})\n", e.efficiency_at_hi(), hi, a.target);
    return exit_no_threshold;
  }
}

// --------------------------------------------------------------------------

struct PlanArgs {
  std::string b1map, mask, anatomy, auto_mask, geometry, reference;
  std::optional<double> threshold_hz, nominal_hz;
  std::string strategy = "ci95-sem";
  std::string population = "subthreshold";
  double safety_margin = 1.0;
  double clamp_max = 1.0;
  std::optional<double> v_ref_volts, v_op_volts, b1_at_ref_hz;
  std::string name = "plan";
  std::string label;
};

Volume absolute_map(const Volume &b1, const PlanArgs &a) {
  const bool calibrated = a.v_ref_volts || a.v_op_volts || a.b1_at_ref_hz;
  if (b1.intent == VolumeIntent::RelativeB1) {
    if (!(a.v_ref_volts && a.v_op_volts && a.b1_at_ref_hz))
      throw UsageError("a RELATIVE_B1 map needs --v-ref-volts, --v-op-volts and --b1-at-ref-hz");
    return to_absolute(b1, {*a.v_ref_volts, *a.v_op_volts, *a.b1_at_ref_hz});
  }
  if (b1.intent == VolumeIntent::AbsoluteB1Hz) {
    if (calibrated) throw UsageError("calibration flags apply only to RELATIVE_B1 maps; the map is already absolute");
    return b1;
  }
  fail(ErrorKind::InvalidArgument, std::string("B1 map intent must be RELATIVE_B1 or ABSOLUTE_B1_HZ, got ") + to_string(b1.intent));
}

svg::Chart plan_chart(const std::string &title) {
  svg::Chart c;
  c.title = title;
  c.x_label = "slice index";
  c.y_label = "scale factor k";
  c.y_min = 0.0;
  c.y_max = 1.05;
  return c;
}

std::vector<double> slice_axis(std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(i);
  return x;
}

int cmd_plan(const Globals &g, const PlanArgs &a) {
  if (!a.mask.empty() && !a.auto_mask.empty()) throw UsageError("--mask and --auto-mask are mutually exclusive");
  ScaleStrategy strategy;
  try {
    parse_statistic(a.strategy, strategy);
    strategy.population = parse_population(a.population);
    strategy.safety_margin = a.safety_margin;
    strategy.clamp_max = a.clamp_max;
    validate(strategy);
    if (!a.auto_mask.empty()) parse_mask_method(a.auto_mask);
  } catch (const Error &e) {
    throw UsageError(e.detail());
  }
  const double threshold = *a.threshold_hz;
  const double nominal = a.nominal_hz.value_or(threshold);

  RunManifest m("plan", g);
  m.input("b1map", a.b1map);
  m.input("geometry", a.geometry);
  Volume b1 = absolute_map(load_volume(a.b1map), a);

  // Resample onto the anatomical grid; voxels outside the map's field of view
  // are dropped from the plan through the validity mask.
  std::optional<Volume> valid;
  if (!a.reference.empty()) {
    m.input("reference", a.reference);
    const Volume ref = load_volume(a.reference);
    ResliceResult r = reslice_like(b1, ref, g.threads);
    b1 = std::move(r.values);
    valid = std::move(r.valid);
    const auto bytes = nifti::encode(b1);
    m.output(a.name + "_b1_resliced.nii", std::string(bytes.begin(), bytes.end()));
    const auto mask_bytes = nifti::encode(*valid);
    m.output(a.name + "_b1_resliced_valid.nii", std::string(mask_bytes.begin(), mask_bytes.end()));
  }

  Volume mask;
  if (!a.mask.empty()) {
    m.input("mask", a.mask);
    mask = load_volume(a.mask);
    if (mask.intent != VolumeIntent::Mask) fail(ErrorKind::InvalidArgument, "--mask volume must have MASK intent");
  } else if (!a.auto_mask.empty()) {
    const std::string source = !a.anatomy.empty() ? a.anatomy : (!a.reference.empty() ? a.reference : a.b1map);
    if (!a.anatomy.empty()) m.input("anatomy", a.anatomy);
    mask = threshold_mask(load_volume(source), parse_mask_method(a.auto_mask));
    m.parameter("auto_mask", a.auto_mask);
  } else {
    mask = like(b1, VolumeIntent::Mask, 1.0);
  }
  if (!same_grid(b1, mask)) fail(ErrorKind::InvalidArgument, "mask grid does not match the B1 map grid");
  if (valid)
    for (std::size_t i = 0; i < mask.size(); ++i) mask.data[i] = mask.data[i] != 0.0 && valid->data[i] != 0.0 ? 1.0 : 0.0;

  const SliceStackGeometry geom = fs::path(a.geometry).extension() == ".nii" ? geometry_from_reference(load_volume(a.geometry))
                                                                             : load_geometry(a.geometry);
  const SliceScalePlan plan = make_plan(b1, mask, geom, threshold, nominal, strategy, g.threads);

  json provenance = {{"tool", tool_name},
                     {"tool_version", tool_version},
                     {"label", a.label.empty() ? a.name : a.label},
                     {"inputs", {{"b1map_sha256", m.input_digest("b1map")}, {"geometry_sha256", m.input_digest("geometry")}}}};
  if (!a.mask.empty()) provenance["inputs"]["mask_sha256"] = m.input_digest("mask");
  if (!a.reference.empty()) provenance["inputs"]["reference_sha256"] = m.input_digest("reference");
  if (!a.auto_mask.empty()) provenance["auto_mask"] = a.auto_mask;
  if (a.v_ref_volts) provenance["calibration"] = {{"v_ref_volts", *a.v_ref_volts}, {"v_op_volts", *a.v_op_volts}, {"b1_at_ref_hz", *a.b1_at_ref_hz}};

  m.parameter("threshold_hz", threshold);
  m.parameter("nominal_hz", nominal);
  m.parameter("strategy", to_json(strategy));
  if (a.v_ref_volts) m.parameter("calibration", provenance["calibration"]);

  m.output(a.name + ".json", plan_to_json(plan, provenance).dump(1) + "\n");
  m.output(a.name + ".csv", plan_csv(plan));
  auto chart = plan_chart(fmt::format("Slice scale factors ({})", statistic_name(strategy)));
  chart.series.push_back({a.label.empty() ? a.name : a.label, slice_axis(plan.slices.size()), plan.scale_factors(), svg::palette()[0], true});
  m.output(a.name + ".svg", svg::render(chart));
  m.write(a.name);

  std::size_t empty = 0, fell_back = 0;
  for (const auto &s : plan.slices) {
    empty += s.empty;
    fell_back += s.fell_back;
  }
  if (empty) info(g, fmt::format("{} of {} slices contain no masked voxels and keep k = {}", empty, plan.slices.size(), strategy.clamp_max));
  if (fell_back) info(g, fmt::format("{} slices have no sub-threshold voxels; statistics use the whole slice", fell_back));
  std::cout << fmt::format("SAR reduction: {:.1f}%\n", plan.sar_reduction_percent);
  return exit_ok;
}

// --------------------------------------------------------------------------

struct CompareArgs {
  std::string predicted, measured, mask;
  std::string name = "compare";
};

int cmd_compare(const Globals &g, const CompareArgs &a) {
  RunManifest m("compare", g);
  m.input("predicted", a.predicted);
  m.input("measured", a.measured);
  const Volume predicted = load_volume(a.predicted);
  const Volume measured = load_volume(a.measured);
  std::optional<Volume> mask;
  if (!a.mask.empty()) {
    m.input("mask", a.mask);
    mask = load_volume(a.mask);
  }
  const ErrorMap err = compare_maps(predicted, measured, mask ? &*mask : nullptr);
  const auto bytes = nifti::encode(err.error_percent);
  m.output(a.name + "_error_percent.nii", std::string(bytes.begin(), bytes.end()));
  const json stats = {{"mean_abs_percent", err.mean_abs_percent},
                      {"max_abs_percent", err.max_abs_percent},
                      {"n_compared", err.n_compared},
                      {"n_excluded", err.n_excluded}};
  m.output(a.name + ".json", stats.dump(1) + "\n");
  m.write(a.name);
  if (err.n_excluded) info(g, fmt::format("{} masked voxels with zero measured B1 were excluded", err.n_excluded));
  std::cout << fmt::format("mean absolute error: {:.2f}%\n", err.mean_abs_percent);
  return exit_ok;
}

// --------------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> plans;
  std::vector<std::string> labels;
  std::string out = "report.svg";
  std::string title = "Slice scale factors";
};

int cmd_report(const Globals &g, const ReportArgs &a) {
  if (a.plans.empty()) throw UsageError("report needs at least one plan file");
  if (!a.labels.empty() && a.labels.size() != a.plans.size()) throw UsageError("--label must be given once per plan");
  RunManifest m("report", g);
  std::vector<SliceScalePlan> plans;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < a.plans.size(); ++i) {
    m.input(fmt::format("plan{}", i), a.plans[i]);
    std::ifstream in(a.plans[i], std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open plan " + a.plans[i]);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception &e) {
      fail(ErrorKind::Parse, a.plans[i] + ": " + e.what());
    }
    plans.push_back(plan_from_json(doc));
    std::string label = a.labels.empty() ? "" : a.labels[i];
    if (label.empty() && doc.contains("provenance") && doc["provenance"].contains("label")) label = doc["provenance"]["label"].get<std::string>();
    labels.push_back(label.empty() ? fs::path(a.plans[i]).stem().string() : label);
  }

  auto chart = plan_chart(a.title);
  std::string csv = "plan,label,n_slices,sar_reduction_percent\n";
  if (plans.size() >= 3) {
    const std::size_t n = plans.front().slices.size();
    for (const auto &p : plans)
      if (p.slices.size() != n) fail(ErrorKind::InvalidArgument, "plans for a mean/sd band must have the same number of slices");
    svg::Band band{"mean ± sd", slice_axis(n), std::vector<double>(n), std::vector<double>(n)};
    std::vector<double> mean(n);
    for (std::size_t s = 0; s < n; ++s) {
      double sum = 0.0, ss = 0.0;
      for (const auto &p : plans) sum += p.slices[s].scale_factor;
      mean[s] = sum / static_cast<double>(plans.size());
      for (const auto &p : plans) ss += (p.slices[s].scale_factor - mean[s]) * (p.slices[s].scale_factor - mean[s]);
      const double sd = std::sqrt(ss / static_cast<double>(plans.size() - 1));
      band.lo[s] = mean[s] - sd;
      band.hi[s] = mean[s] + sd;
    }
    chart.bands.push_back(band);
    for (std::size_t i = 0; i < plans.size(); ++i) {
      auto color = svg::palette()[(i + 1) % svg::palette().size()];
      chart.series.push_back({"", slice_axis(n), plans[i].scale_factors(), color});
    }
    chart.series.push_back({"mean", slice_axis(n), mean, "#000000", true});
  } else {
    for (std::size_t i = 0; i < plans.size(); ++i)
      chart.series.push_back({labels[i], slice_axis(plans[i].slices.size()), plans[i].scale_factors(), svg::palette()[i % svg::palette().size()], true});
  }
  for (std::size_t i = 0; i < plans.size(); ++i)
    csv += fmt::format("{},{},{},{}\n", i, labels[i], plans[i].slices.size(), plans[i].sar_reduction_percent);

  m.output(a.out, svg::render(chart));
  m.output(fs::path(a.out).replace_extension(".csv").string(), csv);
  m.write(fs::path(a.out).stem().string());
  for (std::size_t i = 0; i < plans.size(); ++i) std::cout << fmt::format("{}: SAR reduction {:.1f}%\n", labels[i], plans[i].sar_reduction_percent);
  return exit_ok;
}

void add_sim_flags(CLI::App *cmd, SimArgs &a) {
  cmd->add_option("--waveform", a.waveform, "Waveform JSON file or builtin:trfoci | builtin:hs1 | builtin:foci")->required();
  cmd->add_option("--thickness-mm", a.thickness_mm, "Slice thickness in mm")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--max-dt-us", a.max_dt_us, "Largest integration substep in microseconds")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--metric", a.metric, "Inversion efficiency metric")->check(CLI::IsMember({"band", "center"}))->capture_default_str();
  cmd->add_option("--band-fraction", a.band_fraction, "Half-width of the efficiency band, in slice thicknesses")
      ->check(CLI::Range(1e-6, 2.0))
      ->capture_default_str();
  cmd->add_option("--t1-ms", a.t1_ms, "Longitudinal relaxation time (off when omitted)")->check(CLI::PositiveNumber);
  cmd->add_option("--t2-ms", a.t2_ms, "Transverse relaxation time (off when omitted)")->check(CLI::PositiveNumber);
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Slice-wise adiabatic inversion power planning from B1 maps", "adiaplan"};
  app.set_version_flag("--version", std::string(tool_version));
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--out-dir", g.out_dir, "Directory for all outputs")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->envname("ADIAPLAN_THREADS");
  app.add_option("--seed", g.seed, "Seed recorded in manifests and forwarded to stochastic steps");
  app.add_flag("--quiet", g.quiet, "Suppress informational messages");

  MakePulseArgs make_args;
  auto *make = app.add_subcommand("make-pulse", "Generate an HS1, FOCI or TR-FOCI-style waveform file");
  make->add_option("--family", make_args.family)->check(CLI::IsMember({"hs1", "foci", "trfoci"}))->capture_default_str();
  make->add_option("--beta", make_args.beta, "Dimensionless truncation")->check(CLI::PositiveNumber)->capture_default_str();
  make->add_option("--mu", make_args.mu)->check(CLI::NonNegativeNumber)->capture_default_str();
  make->add_option("--duration-ms", make_args.duration_ms)->check(CLI::PositiveNumber)->capture_default_str();
  make->add_option("--samples", make_args.samples)->check(CLI::Range(16, 1 << 20))->capture_default_str();
  make->add_option("--a-max", make_args.a_max)->check(CLI::Range(1.0, 1e6))->capture_default_str();
  make->add_option("--edge-slowdown", make_args.edge_slowdown)->check(CLI::Range(0.0, 0.99))->capture_default_str();
  make->add_option("--out", make_args.out, "Output file name inside --out-dir")->capture_default_str();

  SimulateArgs sim_args;
  auto *simulate = app.add_subcommand("simulate-pulse", "Simulate the slice profile Mz(z) at one B1 amplitude");
  add_sim_flags(simulate, sim_args.sim);
  simulate->add_option("--b1max-hz", sim_args.b1max_hz, "Peak B1 amplitude in Hz")->required()->check(CLI::NonNegativeNumber);
  simulate->add_option("--out", sim_args.out, "Profile CSV name inside --out-dir")->capture_default_str();
  simulate->add_option("--svg", sim_args.svg, "Profile plot name (default: CSV name with .svg)");

  ThresholdArgs thr_args;
  auto *threshold = app.add_subcommand("find-threshold", "Find the smallest B1 amplitude reaching the target inversion efficiency");
  add_sim_flags(threshold, thr_args.sim);
  threshold->add_option("--target", thr_args.target, "Target inversion efficiency")->check(CLI::Range(1e-6, 1.0 - 1e-9))->capture_default_str();
  threshold->add_option("--range", thr_args.range, "Search range lo:hi in Hz")->capture_default_str();
  threshold->add_option("--tol-hz", thr_args.tol_hz, "Bisection tolerance in Hz")->check(CLI::PositiveNumber)->capture_default_str();
  threshold->add_option("--sweep-out", thr_args.sweep_out, "Also write an efficiency sweep CSV (and SVG) under this name");
  threshold->add_option("--sweep-points", thr_args.sweep_points, "Amplitudes in the sweep")->capture_default_str();

  PlanArgs plan_args;
  auto *plan = app.add_subcommand("plan", "Compute per-slice scale factors and the SAR reduction index");
  plan->add_option("--b1map", plan_args.b1map, "RELATIVE_B1 or ABSOLUTE_B1_HZ NIfTI map")->required()->check(CLI::ExistingFile);
  plan->add_option("--mask", plan_args.mask, "Brain mask (MASK intent, same grid)")->check(CLI::ExistingFile);
  plan->add_option("--auto-mask", plan_args.auto_mask, "Threshold mask: otsu or fraction:F");
  plan->add_option("--anatomy", plan_args.anatomy, "Volume the automatic mask is derived from (default: the B1 map)")->check(CLI::ExistingFile);
  plan->add_option("--geometry", plan_args.geometry, "Slice geometry JSON or a reference .nii")->required()->check(CLI::ExistingFile);
  plan->add_option("--reference", plan_args.reference, "Reslice the B1 map onto this volume's grid before planning")->check(CLI::ExistingFile);
  plan->add_option("--threshold-hz", plan_args.threshold_hz, "Adiabatic threshold in Hz")->required()->check(CLI::PositiveNumber);
  plan->add_option("--nominal-hz", plan_args.nominal_hz, "Nominal B1 in Hz (default: the threshold)")->check(CLI::PositiveNumber);
  plan->add_option("--strategy", plan_args.strategy, "ci95-sem, mean+1.96sd or percentile:P")->capture_default_str();
  plan->add_option("--population", plan_args.population)->check(CLI::IsMember({"subthreshold", "all"}))->capture_default_str();
  plan->add_option("--safety-margin", plan_args.safety_margin)->check(CLI::Range(1.0, 100.0))->capture_default_str();
  plan->add_option("--clamp-max", plan_args.clamp_max)->check(CLI::Range(1e-9, 1.0))->capture_default_str();
  plan->add_option("--v-ref-volts", plan_args.v_ref_volts, "Reference voltage of the B1 mapping scan")->check(CLI::PositiveNumber);
  plan->add_option("--v-op-volts", plan_args.v_op_volts, "Operating voltage of the inversion pulse")->check(CLI::PositiveNumber);
  plan->add_option("--b1-at-ref-hz", plan_args.b1_at_ref_hz, "Absolute B1 at the reference voltage for relative value 1")->check(CLI::PositiveNumber);
  plan->add_option("--name", plan_args.name, "Output file stem")->capture_default_str();
  plan->add_option("--label", plan_args.label, "Series label used by reports");

  CompareArgs cmp_args;
  auto *compare = app.add_subcommand("compare", "Percent error of a predicted B1 map against a measured one");
  compare->add_option("--predicted", cmp_args.predicted)->required()->check(CLI::ExistingFile);
  compare->add_option("--measured", cmp_args.measured)->required()->check(CLI::ExistingFile);
  compare->add_option("--mask", cmp_args.mask)->check(CLI::ExistingFile);
  compare->add_option("--name", cmp_args.name, "Output file stem")->capture_default_str();

  ReportArgs rep_args;
  auto *report = app.add_subcommand("report", "Overlay per-slice scale factors of one or more plans");
  report->add_option("plans", rep_args.plans, "Plan JSON files")->check(CLI::ExistingFile);
  report->add_option("--label", rep_args.labels, "Series label, once per plan");
  report->add_option("--out", rep_args.out, "SVG name inside --out-dir")->capture_default_str();
  report->add_option("--title", rep_args.title)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    if (*make) return cmd_make_pulse(g, make_args);
    if (*simulate) return cmd_simulate_pulse(g, sim_args);
    if (*threshold) return cmd_find_threshold(g, thr_args);
    if (*plan) return cmd_plan(g, plan_args);
    if (*compare) return cmd_compare(g, cmp_args);
    if (*report) return cmd_report(g, rep_args);
  } catch (const UsageError &e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return exit_usage;
  } catch (const ThresholdNotFound &e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_no_threshold;
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_runtime;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_runtime;
  }
  return exit_usage;
}
