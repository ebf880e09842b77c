#pragma once

// Threshold-based brain masks, used when no external brain mask is supplied.

#include <adiaplan/error.hpp>
#include <adiaplan/volume.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace adiaplan {

struct MaskMethod {
  enum class Kind { Otsu, Fraction };
  Kind kind = Kind::Otsu;
  double fraction = 0.0;

  static MaskMethod otsu() { return {Kind::Otsu, 0.0}; }
  static MaskMethod fraction_of_max(double f) { return {Kind::Fraction, f}; }
};

/// Parses "otsu" or "fraction:F".
inline MaskMethod parse_mask_method(const std::string &s) {
  if (s == "otsu") return MaskMethod::otsu();
  const std::string prefix = "fraction:";
  if (s.rfind(prefix, 0) == 0) {
    try {
      return MaskMethod::fraction_of_max(std::stod(s.substr(prefix.size())));
    } catch (const std::exception &) {
    }
  }
  fail(ErrorKind::InvalidArgument, "mask method must be 'otsu' or 'fraction:F', got '" + s + "'");
}

inline constexpr std::size_t otsu_bins = 256;

/// Bin index of x on a histogram of `otsu_bins` equal bins over [lo, hi]; hi lands in the last bin.
inline std::size_t histogram_bin(double x, double lo, double hi) {
  const double scaled = (x - lo) / (hi - lo) * static_cast<double>(otsu_bins);
  return std::min(otsu_bins - 1, static_cast<std::size_t>(std::max(0.0, scaled)));
}

/// Otsu split on a 256-bin histogram: returns the last bin of the lower class.
inline std::size_t otsu_split_bin(const std::vector<double> &values, double lo, double hi) {
  std::array<double, otsu_bins> hist{};
  for (double x : values) hist[histogram_bin(x, lo, hi)] += 1.0;
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (std::size_t b = 0; b < otsu_bins; ++b) sum_all += static_cast<double>(b) * hist[b];

  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  std::size_t best_bin = 0;
  for (std::size_t b = 0; b + 1 < otsu_bins; ++b) {
    w0 += hist[b];
    sum0 += static_cast<double>(b) * hist[b];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = sum0 / w0, mu1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  return best_bin;
}

inline Volume threshold_mask(const Volume &v, const MaskMethod &method) {
  validate(v);
  if (v.intent != VolumeIntent::Intensity && v.intent != VolumeIntent::RelativeB1)
    fail(ErrorKind::InvalidArgument, std::string("threshold masks need an INTENSITY or RELATIVE_B1 volume, got ") + to_string(v.intent));
  Volume mask = like(v, VolumeIntent::Mask);
  const auto [lo_it, hi_it] = std::minmax_element(v.data.begin(), v.data.end());
  const double lo = *lo_it, hi = *hi_it;

  if (method.kind == MaskMethod::Kind::Fraction) {
    if (!std::isfinite(method.fraction)) fail(ErrorKind::InvalidArgument, "mask fraction must be finite");
    const double cut = method.fraction * hi;
    for (std::size_t i = 0; i < v.size(); ++i) mask.data[i] = v.data[i] >= cut ? 1.0 : 0.0;
    return mask;
  }
  if (!(hi > lo)) fail(ErrorKind::DegenerateInput, "Otsu threshold undefined on a constant volume");
  const std::size_t split = otsu_split_bin(v.data, lo, hi);
  for (std::size_t i = 0; i < v.size(); ++i) mask.data[i] = histogram_bin(v.data[i], lo, hi) > split ? 1.0 : 0.0;
  return mask;
}

inline std::size_t count_nonzero(const Volume &v) {
  return static_cast<std::size_t>(std::count_if(v.data.begin(), v.data.end(), [](double x) { return x != 0.0; }));
}

} // namespace adiaplan
