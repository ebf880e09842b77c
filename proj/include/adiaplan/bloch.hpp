#pragma once

// Bloch simulation of slice-selective adiabatic pulses.
//
// Integration runs in the frame that follows the RF phase phi(t) = 2*pi*int fm,
// where the effective field is
//     omega(t) = 2*pi * (b1max * am(t), 0, gm(t) * G0 * z + off_resonance - fm(t))
// and dM/dt = omega x M. Each substep applies the exact rotation about the
// field evaluated at the substep midpoint. The returned magnetization is
// rotated back into the fixed carrier frame by phi(T).

#include <adiaplan/error.hpp>
#include <adiaplan/parallel.hpp>
#include <adiaplan/pulse.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

namespace adiaplan {

struct Magnetization {
  double mx = 0.0;
  double my = 0.0;
  double mz = 1.0;

  double norm() const { return std::sqrt(mx * mx + my * my + mz * mz); }
  friend bool operator==(const Magnetization &, const Magnetization &) = default;
};

struct Relaxation {
  double t1_s = 0.0;
  double t2_s = 0.0;
};

enum class EfficiencyMetric {
  BandMean, ///< mean over |z| <= band_fraction * thickness
  Center,   ///< mz at z = 0 (linear interpolation on the grid)
};

struct SimConfig {
  double b1max_hz = 0.0;
  SliceSelection slice;
  std::vector<double> z_grid_mm;
  double max_dt_s = 2e-6;
  std::optional<Relaxation> relaxation;
  double off_resonance_hz = 0.0;
  EfficiencyMetric metric = EfficiencyMetric::BandMean;
  double band_fraction = 0.4;
};

struct SliceProfile {
  double b1max_hz = 0.0;
  std::vector<double> z_mm;
  std::vector<double> mz_final;
  double inversion_efficiency = 0.0;
};

/// Evenly spaced positions over [-half_span, half_span]; n should be odd so 0 is included.
inline std::vector<double> linear_grid(double half_span_mm, std::size_t n) {
  if (n < 2) fail(ErrorKind::InvalidArgument, "grid needs at least 2 points");
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = -half_span_mm + 2.0 * half_span_mm * static_cast<double>(i) / static_cast<double>(n - 1);
  return z;
}

/// Default profile grid: +-2 slice thicknesses, 161 points.
inline std::vector<double> default_z_grid(double thickness_mm) { return linear_grid(2.0 * thickness_mm, 161); }

inline SimConfig make_sim_config(const SliceSelection &slice, double b1max_hz) {
  SimConfig cfg;
  cfg.slice = slice;
  cfg.b1max_hz = b1max_hz;
  cfg.z_grid_mm = default_z_grid(slice.thickness_mm);
  return cfg;
}

namespace detail {

inline void check_config(const SimConfig &cfg) {
  if (!std::isfinite(cfg.b1max_hz) || cfg.b1max_hz < 0.0) fail(ErrorKind::InvalidArgument, "b1max_hz must be finite and >= 0");
  if (!std::isfinite(cfg.max_dt_s) || cfg.max_dt_s <= 0.0) fail(ErrorKind::InvalidArgument, "max_dt_s must be positive");
  if (!std::isfinite(cfg.slice.nominal_gradient_hz_per_mm)) fail(ErrorKind::Numerical, "non-finite slice gradient");
  if (!std::isfinite(cfg.off_resonance_hz)) fail(ErrorKind::Numerical, "non-finite off-resonance");
  if (cfg.relaxation) {
    if (!(cfg.relaxation->t2_s > 0.0)) fail(ErrorKind::InvalidArgument, "relaxation t2_s must be positive");
    if (!(cfg.relaxation->t1_s > 0.0)) fail(ErrorKind::InvalidArgument, "relaxation t1_s must be positive");
  }
}

} // namespace detail

/// Channel values at the midpoints of a uniform substep grid, shared by all
/// positions of one simulation.
struct SubstepField {
  double h_s = 0.0;
  std::vector<double> am, fm_hz, gm;
  double final_phase_rad = 0.0;

  SubstepField(const PulseWaveform &w, double max_dt_s) {
    validate(w);
    if (!std::isfinite(max_dt_s) || max_dt_s <= 0.0) fail(ErrorKind::InvalidArgument, "max_dt_s must be positive");
    const double duration = w.duration_s();
    const auto n = static_cast<std::size_t>(std::ceil(duration / max_dt_s - 1e-9));
    h_s = duration / static_cast<double>(n);
    am.resize(n);
    fm_hz.resize(n);
    gm.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double t = (static_cast<double>(k) + 0.5) * h_s;
      am[k] = interpolate_channel(w, t, [](const PulseSample &s) { return s.am; });
      fm_hz[k] = interpolate_channel(w, t, [](const PulseSample &s) { return s.fm_hz; });
      gm[k] = interpolate_channel(w, t, [](const PulseSample &s) { return s.gm; });
    }
    // Exact integral of the piecewise-linear fm: flat half intervals at both
    // ends, trapezoids between sample midpoints.
    const auto &s = w.samples;
    double cycles = 0.5 * w.dt_s * (s.front().fm_hz + s.back().fm_hz);
    for (std::size_t i = 1; i < s.size(); ++i) cycles += 0.5 * w.dt_s * (s[i - 1].fm_hz + s[i].fm_hz);
    final_phase_rad = 2.0 * M_PI * cycles;
  }

  std::size_t size() const noexcept { return am.size(); }
};

namespace detail {

// Rotation of m about (wx, wy, wz) by angle |w| * h, right-handed.
inline void rotate(Magnetization &m, double wx, double wy, double wz, double h) {
  const double mag = std::sqrt(wx * wx + wy * wy + wz * wz);
  if (mag == 0.0) return;
  const double nx = wx / mag, ny = wy / mag, nz = wz / mag;
  const double theta = mag * h;
  const double c = std::cos(theta), s = std::sin(theta);
  const double dot = nx * m.mx + ny * m.my + nz * m.mz;
  const double cx = ny * m.mz - nz * m.my;
  const double cy = nz * m.mx - nx * m.mz;
  const double cz = nx * m.my - ny * m.mx;
  const double k = dot * (1.0 - c);
  m = {m.mx * c + cx * s + nx * k, m.my * c + cy * s + ny * k, m.mz * c + cz * s + nz * k};
}

} // namespace detail

/// Propagation in the RF-phase frame over a precomputed field. The result is
/// left in that frame.
inline Magnetization propagate_rotating(Magnetization m, const SubstepField &field, const SimConfig &cfg, double z_mm) {
  if (!std::isfinite(z_mm)) fail(ErrorKind::Numerical, "non-finite position");
  const double two_pi = 2.0 * M_PI;
  const double g0 = cfg.slice.nominal_gradient_hz_per_mm;
  const double h = field.h_s;
  double e1 = 1.0, e2 = 1.0;
  if (cfg.relaxation) {
    e1 = std::exp(-h / cfg.relaxation->t1_s);
    e2 = std::exp(-h / cfg.relaxation->t2_s);
  }
  for (std::size_t k = 0; k < field.size(); ++k) {
    const double wx = two_pi * cfg.b1max_hz * field.am[k];
    const double wz = two_pi * (field.gm[k] * g0 * z_mm + cfg.off_resonance_hz - field.fm_hz[k]);
    if (!std::isfinite(wx) || !std::isfinite(wz)) fail(ErrorKind::Numerical, "non-finite effective field at substep " + std::to_string(k));
    detail::rotate(m, wx, 0.0, wz, h);
    if (cfg.relaxation) {
      m.mx *= e2;
      m.my *= e2;
      m.mz = 1.0 + (m.mz - 1.0) * e1;
    }
  }
  return m;
}

/// Magnetization after the pulse at slice position z_mm, in the carrier frame.
inline Magnetization propagate(const Magnetization &m0, const PulseWaveform &w, const SimConfig &cfg, double z_mm) {
  detail::check_config(cfg);
  const SubstepField field(w, cfg.max_dt_s);
  auto m = propagate_rotating(m0, field, cfg, z_mm);
  const double c = std::cos(field.final_phase_rad), s = std::sin(field.final_phase_rad);
  return {c * m.mx - s * m.my, s * m.mx + c * m.my, m.mz};
}

namespace detail {

inline double band_half_width(const SimConfig &cfg) { return cfg.band_fraction * cfg.slice.thickness_mm; }

inline double efficiency_from_mz(double mz_metric) { return std::clamp((1.0 - mz_metric) / 2.0, 0.0, 1.0); }

inline double center_mz(const std::vector<double> &z, const std::vector<double> &mz) {
  if (z.front() > 0.0 || z.back() < 0.0) fail(ErrorKind::InvalidArgument, "z grid does not contain the slice center");
  for (std::size_t i = 0; i + 1 < z.size(); ++i) {
    if (z[i] <= 0.0 && z[i + 1] >= 0.0) {
      const double f = z[i + 1] == z[i] ? 0.0 : (0.0 - z[i]) / (z[i + 1] - z[i]);
      return mz[i] + f * (mz[i + 1] - mz[i]);
    }
  }
  return mz.back();
}

} // namespace detail

/// Inversion efficiency of a computed profile under the configured metric.
inline double inversion_efficiency(const std::vector<double> &z_mm, const std::vector<double> &mz, const SimConfig &cfg) {
  if (cfg.metric == EfficiencyMetric::Center) return detail::efficiency_from_mz(detail::center_mz(z_mm, mz));
  const double half = detail::band_half_width(cfg);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < z_mm.size(); ++i) {
    if (std::abs(z_mm[i]) <= half) {
      sum += mz[i];
      ++count;
    }
  }
  if (count == 0) fail(ErrorKind::InvalidArgument, "no grid positions inside the efficiency band");
  return detail::efficiency_from_mz(sum / static_cast<double>(count));
}

inline void check_profile_grid(const SimConfig &cfg) {
  const auto &z = cfg.z_grid_mm;
  if (z.size() < 2) fail(ErrorKind::InvalidArgument, "z grid needs at least 2 positions");
  for (std::size_t i = 1; i < z.size(); ++i)
    if (!(z[i] > z[i - 1])) fail(ErrorKind::InvalidArgument, "z grid must be strictly increasing");
  const double need = 2.0 * cfg.slice.thickness_mm * (1.0 - 1e-12);
  if (z.front() > -need || z.back() < need) fail(ErrorKind::InvalidArgument, "z grid must span at least +-2 slice thicknesses");
}

/// Final mz across the configured z grid.
inline SliceProfile slice_profile(const PulseWaveform &w, const SimConfig &cfg) {
  detail::check_config(cfg);
  check_profile_grid(cfg);
  const SubstepField field(w, cfg.max_dt_s);
  SliceProfile p;
  p.b1max_hz = cfg.b1max_hz;
  p.z_mm = cfg.z_grid_mm;
  p.mz_final.resize(p.z_mm.size());
  for (std::size_t i = 0; i < p.z_mm.size(); ++i)
    p.mz_final[i] = std::clamp(propagate_rotating({}, field, cfg, p.z_mm[i]).mz, -1.0, 1.0);
  p.inversion_efficiency = inversion_efficiency(p.z_mm, p.mz_final, cfg);
  return p;
}

/// Efficiency only, simulating just the grid positions the metric reads.
inline double simulate_efficiency(const PulseWaveform &w, const SimConfig &cfg) {
  detail::check_config(cfg);
  const SubstepField field(w, cfg.max_dt_s);
  std::vector<double> z, mz;
  const double half = detail::band_half_width(cfg);
  for (std::size_t i = 0; i < cfg.z_grid_mm.size(); ++i) {
    const double zi = cfg.z_grid_mm[i];
    bool needed = std::abs(zi) <= half;
    if (cfg.metric == EfficiencyMetric::Center) {
      const bool left = i + 1 < cfg.z_grid_mm.size() && zi <= 0.0 && cfg.z_grid_mm[i + 1] >= 0.0;
      const bool right = i > 0 && zi >= 0.0 && cfg.z_grid_mm[i - 1] <= 0.0;
      needed = left || right;
    }
    if (!needed) continue;
    z.push_back(zi);
    mz.push_back(std::clamp(propagate_rotating({}, field, cfg, zi).mz, -1.0, 1.0));
  }
  if (z.empty()) fail(ErrorKind::InvalidArgument, "no grid positions inside the efficiency band");
  return inversion_efficiency(z, mz, cfg);
}

/// Adiabaticity factor K = |omega_eff| / |d alpha / dt| at z = 0 between samples
/// t_index and t_index + 1, alpha being the tilt of the effective field from +z.
/// Returns +infinity when the tilt does not change.
inline double adiabaticity_factor(const PulseWaveform &w, double b1max_hz, std::size_t t_index) {
  validate(w);
  if (t_index + 1 >= w.size()) fail(ErrorKind::InvalidArgument, "t_index must be < n_samples - 1");
  const auto &a = w.samples[t_index];
  const auto &b = w.samples[t_index + 1];
  const double alpha_a = std::atan2(b1max_hz * a.am, -a.fm_hz);
  const double alpha_b = std::atan2(b1max_hz * b.am, -b.fm_hz);
  const double dalpha = std::abs(alpha_b - alpha_a) / w.dt_s;
  if (dalpha == 0.0) return std::numeric_limits<double>::infinity();
  const double bx = 0.5 * b1max_hz * (a.am + b.am);
  const double bz = -0.5 * (a.fm_hz + b.fm_hz);
  return 2.0 * M_PI * std::hypot(bx, bz) / dalpha;
}

inline double min_adiabaticity_factor(const PulseWaveform &w, double b1max_hz) {
  double k = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < w.size(); ++i) k = std::min(k, adiabaticity_factor(w, b1max_hz, i));
  return k;
}

/// Integration and efficiency settings used by threshold searches and sweeps.
struct SimOptions {
  std::vector<double> z_grid_mm; ///< empty = default grid for the slice
  double max_dt_s = 2e-6;
  EfficiencyMetric metric = EfficiencyMetric::BandMean;
  double band_fraction = 0.4;
  std::optional<Relaxation> relaxation;
  unsigned threads = 1;
};

inline SimConfig make_sim_config(const SliceSelection &slice, double b1max_hz, const SimOptions &opt) {
  SimConfig cfg;
  cfg.slice = slice;
  cfg.b1max_hz = b1max_hz;
  cfg.z_grid_mm = opt.z_grid_mm.empty() ? default_z_grid(slice.thickness_mm) : opt.z_grid_mm;
  cfg.max_dt_s = opt.max_dt_s;
  cfg.metric = opt.metric;
  cfg.band_fraction = opt.band_fraction;
  cfg.relaxation = opt.relaxation;
  return cfg;
}

struct ThresholdSearch {
  double target_efficiency = 0.97;
  double lo_hz = 0.0;
  double hi_hz = 200.0;
  double tol_hz = 0.5;
  std::size_t coarse_points = 21;
};

/// Smallest b1max in [lo, hi] reaching the target efficiency: a coarse scan
/// localizes the first crossing, bisection refines it to tol_hz. The returned
/// value always satisfies the target.
inline double find_threshold(const PulseWaveform &w, const SliceSelection &slice, const ThresholdSearch &search,
                             const SimOptions &opt = {}) {
  if (!(search.target_efficiency > 0.0 && search.target_efficiency < 1.0))
    fail(ErrorKind::InvalidArgument, "target efficiency must lie in (0, 1)");
  if (!(search.lo_hz >= 0.0) || !(search.hi_hz > search.lo_hz)) fail(ErrorKind::InvalidArgument, "b1 range must satisfy 0 <= lo < hi");
  if (!(search.tol_hz > 0.0)) fail(ErrorKind::InvalidArgument, "tolerance must be positive");
  const std::size_t n = std::max<std::size_t>(search.coarse_points, 2);
  auto efficiency = [&](double b1) { return simulate_efficiency(w, make_sim_config(slice, b1, opt)); };

  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i)
    grid[i] = i + 1 == n ? search.hi_hz
                         : search.lo_hz + (search.hi_hz - search.lo_hz) * static_cast<double>(i) / static_cast<double>(n - 1);
  std::vector<double> eff(n, std::numeric_limits<double>::quiet_NaN());
  parallel_for(n, opt.threads, [&](std::size_t i) { eff[i] = efficiency(grid[i]); });

  std::size_t first = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (eff[i] >= search.target_efficiency) {
      first = i;
      break;
    }
  }
  if (first == n)
    throw ThresholdNotFound(eff.back(), fmt::format("efficiency {:.4f} at {} Hz is below target {}", eff.back(), search.hi_hz,
                                                    search.target_efficiency));
  if (first == 0) return grid[0];
  double lo = grid[first - 1], hi = grid[first];
  while (hi - lo > search.tol_hz) {
    const double mid = 0.5 * (lo + hi);
    if (efficiency(mid) >= search.target_efficiency)
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

/// One profile per amplitude, in input order, independent of thread count.
inline std::vector<SliceProfile> sweep_grid(const PulseWaveform &w, const SliceSelection &slice, const std::vector<double> &b1_values_hz,
                                            const SimOptions &opt = {}) {
  for (double b : b1_values_hz)
    if (!std::isfinite(b) || b < 0.0) fail(ErrorKind::InvalidArgument, "sweep amplitudes must be finite and non-negative");
  std::vector<SliceProfile> out(b1_values_hz.size());
  parallel_for(out.size(), opt.threads, [&](std::size_t i) { out[i] = slice_profile(w, make_sim_config(slice, b1_values_hz[i], opt)); });
  return out;
}

inline std::string profile_csv(const SliceProfile &p) {
  std::string out = "z_mm,mz\n";
  for (std::size_t i = 0; i < p.z_mm.size(); ++i) out += fmt::format("{},{}\n", p.z_mm[i], p.mz_final[i]);
  return out;
}

inline std::string sweep_csv(const std::vector<SliceProfile> &profiles) {
  std::string out = "b1max_hz,inversion_efficiency\n";
  for (const auto &p : profiles) out += fmt::format("{},{}\n", p.b1max_hz, p.inversion_efficiency);
  return out;
}

} // namespace adiaplan
