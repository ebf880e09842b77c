// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include "../oracles.hpp"

#include <adiaplan/adiaplan.hpp>
#include <adiaplan/digest.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <fmt/format.h>
#include <json.hpp>

namespace fs = std::filesystem;
using namespace adiaplan;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string &name, const std::function<Verdict()> &check) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = check();
  } catch (const std::exception &e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!v.pass) ++failures;
  std::printf("%s %s: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), secs);
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const fs::path &out_dir, const std::string &args) {
  const std::string cmd = std::string(ADIAPLAN_CLI) + " --quiet --out-dir " + out_dir.string() + " " + args + " > " +
                          (out_dir / "stdout.txt").string() + " 2>&1";
  fs::create_directories(out_dir);
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const PulseWaveform &bundled() {
  static const PulseWaveform w = load_waveform(ADIAPLAN_DATA_DIR "/trfoci_style.json");
  return w;
}

std::vector<PulseWaveform> pulse_set() {
  const TrFociDesign d;
  const auto hs1 = generate_hs(1, d.beta, d.mu, d.duration_s, d.n_samples);
  return {hs1, generate_foci(hs1, d.a_max), bundled()};
}

// --- criteria ----------------------------------------------------------------

Verdict pi_pulse() {
  PulseWaveform w;
  w.name = "rect";
  w.dt_s = 2e-3 / 200.0;
  w.samples.assign(200, PulseSample{1.0, 0.0, 1.0});
  SimConfig cfg;
  cfg.b1max_hz = 250.0;
  cfg.slice = make_slice_selection(3.0, 1000.0);
  const Magnetization m = propagate({0.0, 0.0, 1.0}, w, cfg, 0.0);
  const double err = std::abs(m.mz + 1.0);
  return {err < 1e-9, fmt::format("mz = {:.15f}, |mz + 1| = {:.2e}", m.mz, err)};
}

Verdict norm_conservation() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> b1(0.0, 400.0), z(-6.0, 6.0);
  double worst = 0.0;
  std::size_t draws = 0;
  for (const auto &w : pulse_set()) {
    const SliceSelection slice = make_slice_selection(w, 3.0);
    for (int i = 0; i < 100; ++i) {
      SimConfig cfg;
      cfg.slice = slice;
      cfg.b1max_hz = b1(rng);
      const Magnetization m = propagate({}, w, cfg, z(rng));
      worst = std::max(worst, std::abs(m.norm() - 1.0));
      ++draws;
    }
  }
  return {worst < 1e-9, fmt::format("max ||M| - 1| = {:.2e} over {} draws on HS1, FOCI and the bundled pulse", worst, draws)};
}

Verdict integrator_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t runs = 0;
  const double zs[] = {0.0, 0.8, -1.7, 2.9, 4.4};
  for (const auto &w : pulse_set()) {
    const SliceSelection slice = make_slice_selection(w, 3.0);
    for (int a = 1; a <= 10; ++a) {
      const double b1 = 30.0 * a;
      const double z = zs[a % 5];
      SimConfig cfg;
      cfg.slice = slice;
      cfg.b1max_hz = b1;
      const Magnetization m = propagate({}, w, cfg, z);
      const auto ref = oracle::rk4_carrier(w, b1, slice.nominal_gradient_hz_per_mm, z, cfg.max_dt_s / 10.0);
      const double e = std::max({std::abs(m.mx - ref.m[0]), std::abs(m.my - ref.m[1]), std::abs(m.mz - ref.m[2])});
      if (e > worst) {
        worst = e;
        where = fmt::format("{} at {} Hz, z = {} mm", w.name, b1, z);
      }
      ++runs;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0, fmt::format("max component difference {:.2e} ({}) over {} runs in {:.1f} s", worst, where, runs, secs)};
}

Verdict threshold_reproduction() {
  const auto t0 = std::chrono::steady_clock::now();
  const PulseWaveform &w = bundled();
  const SliceSelection slice = make_slice_selection(w, 3.0);
  const double thr = find_threshold(w, slice, ThresholdSearch{});
  std::vector<double> amps;
  for (int i = 0; i <= 64; ++i) amps.push_back(thr + (200.0 - thr) * i / 64.0);
  const auto profiles = sweep_grid(w, slice, amps);
  double worst_drop = 0.0;
  for (std::size_t i = 1; i < profiles.size(); ++i)
    worst_drop = std::max(worst_drop, profiles[i - 1].inversion_efficiency - profiles[i].inversion_efficiency);
  const double secs = seconds_since(t0);
  const bool ok = thr >= 120.0 && thr <= 180.0 && worst_drop <= 1e-3 && secs < 120.0 && profiles.front().inversion_efficiency >= 0.97;
  return {ok, fmt::format("threshold {} Hz, efficiency {:.4f} there and {:.4f} at 200 Hz, largest drop {:.1e} over 65 amplitudes, {:.1f} s", thr,
                          profiles.front().inversion_efficiency, profiles.back().inversion_efficiency, worst_drop, secs)};
}

Verdict sar_index() {
  const double ones = sar_reduction_index(std::vector<double>(40, 1.0));
  const double halves = sar_reduction_index(std::vector<double>(40, 0.5));
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> k(1 + trial % 97);
    for (double &x : k) x = 1.0 - u(rng);
    double brute = 0.0;
    for (double x : k) brute += x * x;
    brute /= static_cast<double>(k.size());
    worst = std::max(worst, std::abs(sar_reduction_index(k) - brute));
  }
  return {ones == 1.0 && halves == 0.25 && worst <= 1e-15,
          fmt::format("k = 1: {}, 40 x 0.5: {}, max deviation from brute force {:.1e} over 1000 vectors", ones, halves, worst)};
}

// Brute-force statistics of one population, as an independent script would compute them.
double brute_bound(std::vector<double> v, const std::string &strategy) {
  double sum = 0.0;
  for (double x : v) sum += x;
  const double n = static_cast<double>(v.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  if (strategy == "ci95-sem") return mean + 1.96 * sd / std::sqrt(n);
  if (strategy == "mean+1.96sd") return mean + 1.96 * sd;
  return oracle::percentile_sorted(std::move(v), 95.0);
}

struct PlanCheck {
  double worst_rel = 0.0;
  std::size_t mismatches = 0;
  std::size_t slices = 0;
};

/// Runs `plan` on the map and compares each slice with a per-slab brute force.
PlanCheck check_plan(const fs::path &dir, const Volume &b1, const Volume &mask, const SliceStackGeometry &geom, const std::string &strategy,
                     bool exact) {
  save_volume(b1, (dir / "b1.nii").string());
  save_volume(mask, (dir / "mask.nii").string());
  save_geometry(geom, (dir / "geom.json").string());
  const fs::path out = dir / ("out_" + std::to_string(std::hash<std::string>{}(strategy)));
  const int rc = cli(out, fmt::format("plan --b1map {} --mask {} --geometry {} --threshold-hz 150 --nominal-hz 150 --strategy {}",
                                      (dir / "b1.nii").string(), (dir / "mask.nii").string(), (dir / "geom.json").string(), strategy));
  if (rc != 0) throw std::runtime_error(fmt::format("plan exited with {}: {}", rc, slurp(out / "stdout.txt")));
  const json plan = json::parse(slurp(out / "plan.json"));

  // Reload what was written so the oracle sees the same float32-rounded values.
  const Volume b1f = load_volume((dir / "b1.nii").string());
  std::vector<std::vector<double>> slabs(geom.n_slices);
  for (std::size_t flat = 0; flat < b1f.size(); ++flat) {
    if (mask.data[flat] == 0.0) continue;
    const double z = b1f.world(flat).dot(geom.normal);
    for (std::size_t s = 0; s < geom.n_slices; ++s)
      if (std::abs(z - geom.center_mm[s].dot(geom.normal)) <= 0.5 * geom.thickness_mm) {
        slabs[s].push_back(b1f.data[flat]);
        break;
      }
  }
  PlanCheck c;
  double sum_k2 = 0.0;
  for (std::size_t s = 0; s < geom.n_slices; ++s) {
    double k = 1.0;
    if (!slabs[s].empty()) {
      std::vector<double> below;
      for (double x : slabs[s])
        if (x < 150.0) below.push_back(x);
      const double bound = brute_bound(below.empty() ? slabs[s] : below, strategy);
      k = std::min(1.0, 150.0 / bound);
    }
    sum_k2 += k * k;
    const double got = plan["slices"][s]["scale_factor"].get<double>();
    const double rel = std::abs(got - k) / k;
    c.worst_rel = std::max(c.worst_rel, rel);
    if (exact ? got != k : rel > 1e-12) ++c.mismatches;
    if (plan["slices"][s]["n_voxels"].get<std::size_t>() != slabs[s].size()) ++c.mismatches;
    ++c.slices;
  }
  const double index = sum_k2 / static_cast<double>(geom.n_slices);
  const double got_index = plan["sar_reduction_index"].get<double>();
  if (exact ? got_index != index : std::abs(got_index - index) > 1e-12) ++c.mismatches;
  return c;
}

Verdict plan_oracle() {
  const fs::path dir = fs::temp_directory_path() / "adiaplan_acceptance_plan";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const Dims dims{64, 64, 64};
  // 3 mm voxels; sixteen 12 mm slabs of four voxel planes each.
  Volume b1 = make_volume(dims, centered_affine(dims, {192.0, 192.0, 192.0}), VolumeIntent::AbsoluteB1Hz);
  const auto geom = make_geometry(16, Eigen::Vector3d::UnitZ(), {0.0, 0.0, -90.0}, 12.0, 12.0, {192.0, 192.0});
  Volume mask = like(b1, VolumeIntent::Mask);
  for (std::size_t flat = 0; flat < b1.size(); ++flat) {
    const Eigen::Vector3d p = b1.world(flat);
    const auto slab = static_cast<int>(std::floor((p.z() + 96.0) / 12.0));
    b1.data[flat] = 95.0 + 15.5 * slab; // 95 ... 327.5 Hz, straddling the 150 Hz threshold
    mask.data[flat] = p.norm() <= 80.0 ? 1.0 : 0.0;
  }

  std::string detail;
  bool ok = true;
  for (const std::string strategy : {"ci95-sem", "mean+1.96sd", "percentile:95"}) {
    const PlanCheck c = check_plan(dir, b1, mask, geom, strategy, true);
    ok = ok && c.mismatches == 0;
    detail += fmt::format("{}: {} mismatches / {} slices; ", strategy, c.mismatches, c.slices);
  }

  // Same pipeline on a map with in-slab variation, to within rounding of the summation order.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> jitter(-40.0, 40.0);
  for (double &x : b1.data) x = static_cast<float>(x + jitter(rng));
  double worst = 0.0;
  for (const std::string strategy : {"ci95-sem", "mean+1.96sd", "percentile:95"}) {
    const PlanCheck c = check_plan(dir, b1, mask, geom, strategy, false);
    ok = ok && c.mismatches == 0;
    worst = std::max(worst, c.worst_rel);
  }
  detail += fmt::format("varied map max relative k difference {:.1e}", worst);
  if (ok) fs::remove_all(dir);
  return {ok, detail};
}

Verdict reslice() {
  const Dims dims{20, 18, 16};
  Eigen::Matrix4d a = Eigen::Matrix4d::Identity();
  a.topLeftCorner<3, 3>() = Eigen::AngleAxisd(0.4, Eigen::Vector3d(1, 1, 2).normalized()).toRotationMatrix() * Eigen::Vector3d(1.5, 2.0, 2.5).asDiagonal();
  a.block<3, 1>(0, 3) = Eigen::Vector3d(-12.0, 3.0, 40.0);
  Volume src = make_volume(dims, a, VolumeIntent::Intensity);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (double &x : src.data) x = u(rng);
  const auto same = reslice_like(src, src);
  double id_err = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) id_err = std::max(id_err, std::abs(same.values.data[i] - src.data[i]));
  const bool all_valid = count_nonzero(same.valid) == src.size();

  // Ramp f = 3 i + 2 j - k + 7 along the voxel axes; shift the target by one voxel along i.
  Volume ramp = make_volume(dims, a, VolumeIntent::Intensity);
  for (std::size_t k = 0; k < dims[2]; ++k)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t i = 0; i < dims[0]; ++i) ramp.data[ramp.index(i, j, k)] = 3.0 * i + 2.0 * j - 1.0 * k + 7.0;
  Eigen::Matrix4d shift = Eigen::Matrix4d::Identity();
  shift(0, 3) = 1.0;
  const auto moved = reslice_to(ramp, a * shift, dims);
  double shift_err = 0.0;
  std::size_t valid = 0;
  for (std::size_t k = 0; k < dims[2]; ++k)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t i = 0; i < dims[0]; ++i) {
        const std::size_t f = moved.values.index(i, j, k);
        if (moved.valid.data[f] == 0.0) continue;
        ++valid;
        shift_err = std::max(shift_err, std::abs(moved.values.data[f] - (3.0 * (i + 1.0) + 2.0 * j - 1.0 * k + 7.0)));
      }
  const std::size_t expected_valid = (dims[0] - 1) * dims[1] * dims[2];
  return {id_err <= 1e-12 && all_valid && shift_err <= 1e-6 && valid == expected_valid,
          fmt::format("identity max error {:.1e}; shifted ramp max error {:.1e} on {} valid voxels (expected {})", id_err, shift_err, valid,
                      expected_valid)};
}

Verdict round_trips() {
  const fs::path dir = fs::temp_directory_path() / "adiaplan_acceptance_files";
  fs::remove_all(dir);
  fs::create_directories(dir);
  bool ok = true;
  std::string detail;

  // NIfTI: every intent, both data types.
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::size_t nifti_ok = 0, nifti_total = 0;
  for (VolumeIntent intent : {VolumeIntent::RelativeB1, VolumeIntent::AbsoluteB1Hz, VolumeIntent::Mask, VolumeIntent::ErrorPercent,
                              VolumeIntent::Intensity}) {
    Volume v = make_volume({9, 7, 5}, centered_affine({9, 7, 5}, {27.0, 21.0, 20.0}), intent);
    for (double &x : v.data) x = intent == VolumeIntent::Mask ? (u(rng) > 1.0 ? 1.0 : 0.0) : static_cast<float>(u(rng));
    const std::string p1 = (dir / "a.nii").string(), p2 = (dir / "b.nii").string();
    save_volume(v, p1);
    const Volume back = load_volume(p1);
    save_volume(back, p2);
    ++nifti_total;
    if (slurp(p1) == slurp(p2) && back.data == v.data && back.affine == v.affine && back.intent == v.intent) ++nifti_ok;
  }
  ok = ok && nifti_ok == nifti_total;
  detail += fmt::format("NIfTI {}/{} bit-exact; ", nifti_ok, nifti_total);

  const std::string original = slurp(ADIAPLAN_DATA_DIR "/trfoci_style.json");
  const bool wave_ok = serialize_waveform(parse_waveform(original)) == original;
  ok = ok && wave_ok;
  detail += fmt::format("waveform {}; ", wave_ok ? "bit-exact" : "DIFFERS");

  Volume b1 = make_volume({48, 48, 40}, centered_affine({48, 48, 40}, {192.0, 192.0, 160.0}), VolumeIntent::AbsoluteB1Hz);
  std::uniform_real_distribution<double> hz(60.0, 320.0);
  for (double &x : b1.data) x = static_cast<float>(hz(rng));
  save_volume(b1, (dir / "b1.nii").string());
  save_geometry(make_geometry(20, Eigen::Vector3d(0.0, 0.2, 1.0).normalized(), {0.0, 0.0, -76.0}, 8.0, 3.0), (dir / "geom.json").string());
  const std::string args = fmt::format("plan --b1map {} --geometry {} --threshold-hz 150 --nominal-hz 120 --strategy percentile:90",
                                       (dir / "b1.nii").string(), (dir / "geom.json").string());
  std::set<std::string> plan_digests, manifest_digests;
  for (const auto &[sub, threads] : std::vector<std::pair<std::string, int>>{{"r1", 1}, {"r2", 1}, {"r3", 4}, {"r4", 2}}) {
    if (cli(dir / sub, args + fmt::format(" --threads {}", threads)) != 0) throw std::runtime_error("plan failed: " + slurp(dir / sub / "stdout.txt"));
    plan_digests.insert(sha256_file((dir / sub / "plan.json").string()));
    manifest_digests.insert(json::parse(slurp(dir / sub / "plan.manifest.json"))["digest"].get<std::string>());
  }
  ok = ok && plan_digests.size() == 1 && manifest_digests.size() == 1;
  detail += fmt::format("plan JSON {} distinct digest(s) over 4 runs at 1, 1, 4 and 2 threads ({})", plan_digests.size(),
                        plan_digests.begin()->substr(0, 12));
  if (ok) fs::remove_all(dir);
  return {ok, detail};
}

} // namespace

int main() {
  report("pi-pulse exactness", pi_pulse);
  report("norm conservation", norm_conservation);
  report("integrator oracle", integrator_oracle);
  report("threshold reproduction", threshold_reproduction);
  report("SAR reduction index", sar_index);
  report("end-to-end plan oracle", plan_oracle);
  report("reslice identity and shift", reslice);
  report("file round-trips", round_trips);
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
