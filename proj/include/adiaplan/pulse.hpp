#pragma once

// Adiabatic inversion pulse synthesis: hyperbolic-secant (HSn), FOCI and
// time-resampled FOCI waveforms, stored as sampled amplitude (am), instantaneous
// frequency (fm, Hz) and gradient (gm) modulation functions.
//
// Sample i represents the interval [i*dt, (i+1)*dt] and is located at its
// midpoint. Downstream consumers interpolate linearly between sample midpoints.

#include <adiaplan/error.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace adiaplan {

enum class PulseFamily { HS, FOCI, TRFOCI, CUSTOM };

inline const char *to_string(PulseFamily f) {
  switch (f) {
  case PulseFamily::HS: return "HS";
  case PulseFamily::FOCI: return "FOCI";
  case PulseFamily::TRFOCI: return "TRFOCI";
  case PulseFamily::CUSTOM: return "CUSTOM";
  }
  return "CUSTOM";
}

inline PulseFamily parse_family(const std::string &s) {
  if (s == "HS") return PulseFamily::HS;
  if (s == "FOCI") return PulseFamily::FOCI;
  if (s == "TRFOCI") return PulseFamily::TRFOCI;
  if (s == "CUSTOM") return PulseFamily::CUSTOM;
  fail(ErrorKind::Validation, "unknown pulse family '" + s + "'");
}

struct PulseSample {
  double am = 0.0;    ///< amplitude modulation, peak-normalized to 1
  double fm_hz = 0.0; ///< instantaneous frequency offset
  double gm = 1.0;    ///< gradient scaling relative to the nominal slice gradient

  friend bool operator==(const PulseSample &, const PulseSample &) = default;
};

struct PulseWaveform {
  std::string name;
  PulseFamily family = PulseFamily::CUSTOM;
  double dt_s = 0.0;
  std::vector<PulseSample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  double duration_s() const noexcept { return dt_s * static_cast<double>(samples.size()); }
  double time_of(std::size_t i) const noexcept { return (static_cast<double>(i) + 0.5) * dt_s; }

  friend bool operator==(const PulseWaveform &, const PulseWaveform &) = default;
};

/// Throws ErrorKind::Validation when a waveform breaks its invariants.
inline void validate(const PulseWaveform &w) {
  if (w.samples.size() < 2) fail(ErrorKind::Validation, "waveform needs at least 2 samples, got " + std::to_string(w.samples.size()));
  if (!std::isfinite(w.dt_s) || w.dt_s <= 0.0) fail(ErrorKind::Validation, "dt_s must be finite and positive");
  double peak = 0.0;
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const auto &s = w.samples[i];
    if (!std::isfinite(s.am) || !std::isfinite(s.fm_hz) || !std::isfinite(s.gm))
      fail(ErrorKind::Validation, "sample " + std::to_string(i) + " has a non-finite channel");
    if (s.am < 0.0 || s.am > 1.0)
      fail(ErrorKind::Validation, "am[" + std::to_string(i) + "] = " + std::to_string(s.am) + " outside [0,1]");
    peak = std::max(peak, s.am);
  }
  if (peak != 1.0) fail(ErrorKind::Validation, "waveform is not peak-normalized (max am = " + std::to_string(peak) + ")");
}

/// Divides am by its maximum so that the peak is exactly one.
inline void peak_normalize(PulseWaveform &w) {
  double peak = 0.0;
  for (const auto &s : w.samples) peak = std::max(peak, s.am);
  if (!(peak > 0.0)) fail(ErrorKind::InvalidArgument, "cannot peak-normalize an all-zero amplitude");
  for (auto &s : w.samples) s.am = std::clamp(s.am / peak, 0.0, 1.0);
}

/// Normalized time of sample i on [-1, 1]; exactly antisymmetric about the center.
inline double normalized_time(std::size_t i, std::size_t n) {
  return (2.0 * static_cast<double>(i) - static_cast<double>(n - 1)) / static_cast<double>(n - 1);
}

namespace detail {

inline double sech(double x) { return 1.0 / std::cosh(x); }

// Integral of sech^2(beta*s^n) over [0, tau] by composite Simpson; odd in tau.
inline double hsn_sweep_integral(int n_power, double beta, double tau) {
  const double a = std::abs(tau);
  const int m = 2000;
  const double h = a / m;
  auto f = [&](double s) {
    const double v = sech(beta * std::pow(s, n_power));
    return v * v;
  };
  double acc = f(0.0) + f(a);
  for (int k = 1; k < m; ++k) acc += (k % 2 ? 4.0 : 2.0) * f(k * h);
  return std::copysign(acc * h / 3.0, tau);
}

} // namespace detail

/// Hyperbolic-secant pulse of order n_power.
///
/// am(tau) = sech(beta * tau^n) on tau in [-1, 1]. The frequency sweep follows
/// the integral of am^2 and is scaled so that, for n = 1,
///     fm(t) = -(mu * beta_t / 2pi) * tanh(beta_t * t),   beta_t = 2 * beta / T,
/// i.e. beta is the dimensionless truncation and the sweep spans
/// 2 * mu * beta * tanh(beta) / (pi * T) Hz. gm is constant 1.
inline PulseWaveform generate_hs(int n_power, double beta, double mu, double duration_s, int n_samples) {
  if (!std::isfinite(duration_s) || duration_s <= 0.0) fail(ErrorKind::InvalidArgument, "duration_s must be finite and positive");
  if (n_samples < 16) fail(ErrorKind::InvalidArgument, "n_samples must be at least 16");
  if (n_power < 1) fail(ErrorKind::InvalidArgument, "n_power must be >= 1");
  if (!std::isfinite(beta) || beta <= 0.0 || !std::isfinite(mu) || mu < 0.0)
    fail(ErrorKind::InvalidArgument, "beta must be positive and mu non-negative");

  const auto n = static_cast<std::size_t>(n_samples);
  PulseWaveform w;
  w.name = "HS" + std::to_string(n_power);
  w.family = PulseFamily::HS;
  w.dt_s = duration_s / static_cast<double>(n);
  w.samples.resize(n);

  const double half_sweep_hz = mu * beta * std::tanh(beta) / (M_PI * duration_s);
  const double edge_integral = n_power == 1 ? std::tanh(beta) : detail::hsn_sweep_integral(n_power, beta, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double tau = normalized_time(i, n);
    const double shape = n_power == 1 ? std::tanh(beta * tau) : detail::hsn_sweep_integral(n_power, beta, tau);
    w.samples[i].am = detail::sech(beta * std::pow(tau, n_power));
    w.samples[i].fm_hz = -half_sweep_hz * shape / edge_integral;
    w.samples[i].gm = 1.0;
  }
  peak_normalize(w);
  return w;
}

/// Frequency-offset-corrected inversion: scales all three channels of an HS
/// pulse by A(t) = min(a_max, 1 / am(t)).
inline PulseWaveform generate_foci(const PulseWaveform &base, double a_max) {
  if (base.family != PulseFamily::HS) fail(ErrorKind::InvalidArgument, "FOCI requires an HS base pulse");
  if (!std::isfinite(a_max) || a_max < 1.0) fail(ErrorKind::InvalidArgument, "a_max must be >= 1");
  validate(base);

  PulseWaveform w = base;
  w.family = PulseFamily::FOCI;
  w.name = "FOCI(" + base.name + ")";
  for (auto &s : w.samples) {
    const double scale = s.am * a_max > 1.0 ? 1.0 / s.am : a_max;
    s.am = scale * s.am;
    s.fm_hz = scale * s.fm_hz;
    s.gm = scale * s.gm / a_max;
  }
  peak_normalize(w);
  return w;
}

/// Linear interpolation of one channel at time t (seconds), clamped to the
/// first/last sample outside the span of sample midpoints.
template <typename Channel>
double interpolate_channel(const PulseWaveform &w, double t, Channel channel) {
  const double x = t / w.dt_s - 0.5;
  const auto last = w.samples.size() - 1;
  if (x <= 0.0) return channel(w.samples.front());
  if (x >= static_cast<double>(last)) return channel(w.samples.back());
  const auto i = static_cast<std::size_t>(x);
  const double f = x - static_cast<double>(i);
  const double a = channel(w.samples[i]);
  const double b = channel(w.samples[std::min(i + 1, last)]);
  return f == 0.0 ? a : a + f * (b - a);
}

/// Time resampling of a FOCI pulse. warp[i] is the base-pulse time (seconds)
/// played at output sample i. am is composed with the warp; fm and gm are also
/// multiplied by the warp rate so the accumulated phase obeys
/// phi_out(t) = phi_base(warp(t)) and every slice position stays resonant with
/// the same part of the base sweep. gm is renormalized to a peak of one.
inline PulseWaveform resample_trfoci(const PulseWaveform &base, const std::vector<double> &warp) {
  if (base.family != PulseFamily::FOCI) fail(ErrorKind::InvalidArgument, "time resampling requires a FOCI base pulse");
  validate(base);
  const std::size_t n = base.size();
  if (warp.size() != n) fail(ErrorKind::InvalidArgument, "warp must have one knot per sample");
  const double duration = base.duration_s();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(warp[i]) || warp[i] < 0.0 || warp[i] > duration)
      fail(ErrorKind::InvalidArgument, "warp knot " + std::to_string(i) + " outside [0, duration]");
    if (i > 0 && !(warp[i] > warp[i - 1])) fail(ErrorKind::InvalidArgument, "warp is not strictly increasing at knot " + std::to_string(i));
  }

  PulseWaveform w = base;
  w.family = PulseFamily::TRFOCI;
  w.name = "TR-" + base.name;
  double gm_peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == n ? i : i + 1;
    const double rate = (warp[hi] - warp[lo]) / (static_cast<double>(hi - lo) * base.dt_s);
    const double u = warp[i];
    w.samples[i].am = interpolate_channel(base, u, [](const PulseSample &s) { return s.am; });
    w.samples[i].fm_hz = rate * interpolate_channel(base, u, [](const PulseSample &s) { return s.fm_hz; });
    w.samples[i].gm = rate * interpolate_channel(base, u, [](const PulseSample &s) { return s.gm; });
    gm_peak = std::max(gm_peak, w.samples[i].gm);
  }
  if (gm_peak > 0.0)
    for (auto &s : w.samples) s.gm /= gm_peak;
  peak_normalize(w);
  return w;
}

/// Smooth warp with rate 1 - edge_slowdown * cos(2 pi t / T): the pulse edges
/// are traversed slower and the center faster. Knots are evaluated at the
/// sample midpoints; the warp maps [0, T] onto itself and the center onto itself.
inline std::vector<double> default_trfoci_warp(std::size_t n_samples, double duration_s, double edge_slowdown = 0.3) {
  if (!(edge_slowdown >= 0.0 && edge_slowdown < 1.0)) fail(ErrorKind::InvalidArgument, "edge_slowdown must lie in [0, 1)");
  const double dt = duration_s / static_cast<double>(n_samples);
  std::vector<double> warp(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double t = (static_cast<double>(i) + 0.5) * dt;
    warp[i] = t - edge_slowdown * duration_s / (2.0 * M_PI) * std::sin(2.0 * M_PI * t / duration_s);
  }
  return warp;
}

/// Parameters of the bundled TR-FOCI-style inversion pulse. The published
/// TR-FOCI tables are not available; this is an HS1 -> FOCI -> warp chain.
struct TrFociDesign {
  double duration_s = 20e-3;
  int n_samples = 512;
  double beta = 5.3;
  double mu = 1.1;
  double a_max = 10.0;
  double edge_slowdown = 0.3;
};

inline PulseWaveform make_trfoci_style(const TrFociDesign &d = {}) {
  auto hs = generate_hs(1, d.beta, d.mu, d.duration_s, d.n_samples);
  auto foci = generate_foci(hs, d.a_max);
  auto w = resample_trfoci(foci, default_trfoci_warp(foci.size(), foci.duration_s(), d.edge_slowdown));
  w.name = "trfoci-style";
  return w;
}

/// Full frequency sweep, max(fm) - min(fm).
inline double bandwidth(const PulseWaveform &w) {
  if (w.samples.empty()) return 0.0;
  auto [lo, hi] = std::minmax_element(w.samples.begin(), w.samples.end(),
                                      [](const PulseSample &a, const PulseSample &b) { return a.fm_hz < b.fm_hz; });
  return hi->fm_hz - lo->fm_hz;
}

/// Accumulated phase in cycles at the sample midpoints (trapezoidal, starting
/// from the first sample's half interval).
inline std::vector<double> accumulated_phase_cycles(const PulseWaveform &w) {
  std::vector<double> phase(w.size());
  if (w.samples.empty()) return phase;
  phase[0] = 0.5 * w.dt_s * w.samples[0].fm_hz;
  for (std::size_t i = 1; i < w.size(); ++i)
    phase[i] = phase[i - 1] + 0.5 * w.dt_s * (w.samples[i - 1].fm_hz + w.samples[i].fm_hz);
  return phase;
}

/// Peak-to-peak excursion of the accumulated phase, in cycles.
inline double phase_excursion_cycles(const PulseWaveform &w) {
  auto phase = accumulated_phase_cycles(w);
  phase.push_back(0.0);
  auto [lo, hi] = std::minmax_element(phase.begin(), phase.end());
  return *hi - *lo;
}

struct SliceSelection {
  double thickness_mm = 0.0;
  double pulse_bandwidth_hz = 0.0;
  double nominal_gradient_hz_per_mm = 0.0;
};

inline SliceSelection make_slice_selection(double thickness_mm, double pulse_bandwidth_hz) {
  if (!(thickness_mm > 0.0) || !std::isfinite(thickness_mm)) fail(ErrorKind::InvalidArgument, "slice thickness must be positive");
  if (!(pulse_bandwidth_hz > 0.0) || !std::isfinite(pulse_bandwidth_hz))
    fail(ErrorKind::InvalidArgument, "pulse bandwidth must be positive");
  return {thickness_mm, pulse_bandwidth_hz, pulse_bandwidth_hz / thickness_mm};
}

inline SliceSelection make_slice_selection(const PulseWaveform &w, double thickness_mm) {
  return make_slice_selection(thickness_mm, bandwidth(w));
}

// ---------------------------------------------------------------------------
// Waveform files: one JSON document {name, family, dt_s, duration_s, am[], fm_hz[], gm[]}.

inline nlohmann::json to_json(const PulseWaveform &w) {
  nlohmann::json am = nlohmann::json::array(), fm = nlohmann::json::array(), gm = nlohmann::json::array();
  for (const auto &s : w.samples) {
    am.push_back(s.am);
    fm.push_back(s.fm_hz);
    gm.push_back(s.gm);
  }
  return {{"name", w.name}, {"family", to_string(w.family)}, {"dt_s", w.dt_s}, {"duration_s", w.duration_s()},
          {"am", am}, {"fm_hz", fm}, {"gm", gm}};
}

namespace detail {

inline std::string line_col(const std::string &text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

inline std::vector<double> number_array(const nlohmann::json &doc, const char *field) {
  if (!doc.contains(field)) fail(ErrorKind::Parse, std::string("missing field '") + field + "'");
  const auto &arr = doc.at(field);
  if (!arr.is_array()) fail(ErrorKind::Parse, std::string("field '") + field + "' must be an array");
  std::vector<double> out;
  out.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number())
      fail(ErrorKind::Validation, std::string(field) + "[" + std::to_string(i) + "] is not a finite number");
    out.push_back(arr[i].get<double>());
  }
  return out;
}

} // namespace detail

inline PulseWaveform waveform_from_json(const nlohmann::json &doc) {
  if (!doc.is_object()) fail(ErrorKind::Parse, "waveform document must be a JSON object");
  auto get_number = [&](const char *field) {
    if (!doc.contains(field) || !doc.at(field).is_number()) fail(ErrorKind::Parse, std::string("missing or non-numeric field '") + field + "'");
    return doc.at(field).get<double>();
  };
  PulseWaveform w;
  w.name = doc.contains("name") && doc.at("name").is_string() ? doc.at("name").get<std::string>() : std::string{};
  if (!doc.contains("family") || !doc.at("family").is_string()) fail(ErrorKind::Parse, "missing or non-string field 'family'");
  w.family = parse_family(doc.at("family").get<std::string>());
  w.dt_s = get_number("dt_s");
  const double duration = get_number("duration_s");
  const auto am = detail::number_array(doc, "am");
  const auto fm = detail::number_array(doc, "fm_hz");
  const auto gm = detail::number_array(doc, "gm");
  if (am.size() != fm.size() || am.size() != gm.size())
    fail(ErrorKind::Parse, "am, fm_hz and gm must have equal length (" + std::to_string(am.size()) + ", " +
                               std::to_string(fm.size()) + ", " + std::to_string(gm.size()) + ")");
  w.samples.resize(am.size());
  for (std::size_t i = 0; i < am.size(); ++i) w.samples[i] = {am[i], fm[i], gm[i]};
  validate(w);
  if (std::abs(duration - w.duration_s()) > 1e-9 * std::abs(duration))
    fail(ErrorKind::Validation, "duration_s does not equal dt_s times the sample count");
  return w;
}

inline PulseWaveform parse_waveform(const std::string &text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error &e) {
    fail(ErrorKind::Parse, "malformed waveform JSON at " + detail::line_col(text, e.byte > 0 ? e.byte - 1 : 0) + ": " + e.what());
  }
  return waveform_from_json(doc);
}

inline std::string serialize_waveform(const PulseWaveform &w) {
  validate(w);
  return to_json(w).dump(1) + "\n";
}

inline void save_waveform(const PulseWaveform &w, const std::string &path) {
  const auto text = serialize_waveform(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  out << text;
  if (!out) fail(ErrorKind::Io, "failed writing " + path);
}

inline PulseWaveform load_waveform(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open waveform file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_waveform(ss.str());
  } catch (const Error &e) {
    throw Error(e.kind(), path + ": " + e.detail());
  }
}

} // namespace adiaplan
