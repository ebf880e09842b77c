#pragma once

// Slice-by-slice inversion-pulse power planning from absolute B1 maps.
//
//   absolute B1      b1_abs(x) = rel(x) * b1_at_ref * V_op / V_ref
//   scale factor     k_i = min(margin * nominal / bound_i, clamp_max)
//   SAR index        sum_i k_i^2 / N
//   prediction error 100 * (predicted - measured) / measured

#include <adiaplan/error.hpp>
#include <adiaplan/geometry.hpp>
#include <adiaplan/parallel.hpp>
#include <adiaplan/volume.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

namespace adiaplan {

struct Calibration {
  double v_ref_volts = 0.0;
  double v_op_volts = 0.0;
  double b1_at_ref_hz = 0.0; ///< absolute B1 at V_ref for a relative value of 1.0
};

inline Volume to_absolute(const Volume &rel, const Calibration &cal) {
  validate(rel);
  if (!(cal.v_ref_volts > 0.0) || !(cal.v_op_volts > 0.0) || !(cal.b1_at_ref_hz > 0.0))
    fail(ErrorKind::InvalidArgument, "calibration values must be strictly positive");
  std::size_t negative = 0, non_finite = 0;
  for (double x : rel.data) {
    if (!std::isfinite(x))
      ++non_finite;
    else if (x < 0.0)
      ++negative;
  }
  if (negative > 0 || non_finite > 0)
    fail(ErrorKind::Validation, fmt::format("relative B1 map has {} negative and {} non-finite voxels", negative, non_finite));
  Volume out = rel;
  out.intent = VolumeIntent::AbsoluteB1Hz;
  out.dtype = DataType::Float32;
  const double factor = cal.b1_at_ref_hz * (cal.v_op_volts / cal.v_ref_volts);
  for (double &x : out.data) x *= factor;
  return out;
}

enum class Statistic {
  CI95_SEM,         ///< mean + 1.96 sd / sqrt(n)
  MeanPlus1p96SD,   ///< mean + 1.96 sd
  Percentile,       ///< p-th percentile, linear interpolation between order statistics
};

enum class Population {
  SubthresholdWithFallback, ///< values below the adiabatic threshold; all values when none are
  AllMasked,
};

struct ScaleStrategy {
  Statistic statistic = Statistic::CI95_SEM;
  double percentile = 95.0;
  Population population = Population::SubthresholdWithFallback;
  double safety_margin = 1.0;
  double clamp_max = 1.0;
};

inline void validate(const ScaleStrategy &s) {
  if (s.statistic == Statistic::Percentile && !(s.percentile > 0.0 && s.percentile < 100.0))
    fail(ErrorKind::InvalidArgument, "percentile must lie in (0, 100)");
  if (!(s.safety_margin >= 1.0) || !std::isfinite(s.safety_margin)) fail(ErrorKind::InvalidArgument, "safety margin must be >= 1");
  if (!(s.clamp_max > 0.0 && s.clamp_max <= 1.0)) fail(ErrorKind::InvalidArgument, "clamp_max must lie in (0, 1]");
}

inline std::string statistic_name(const ScaleStrategy &s) {
  switch (s.statistic) {
  case Statistic::CI95_SEM: return "CI95_SEM";
  case Statistic::MeanPlus1p96SD: return "MEAN_PLUS_1P96_SD";
  case Statistic::Percentile: return fmt::format("PERCENTILE({})", s.percentile);
  }
  return "CI95_SEM";
}

inline const char *to_string(Population p) {
  return p == Population::AllMasked ? "ALL_MASKED" : "SUBTHRESHOLD_WITH_FALLBACK";
}

/// "ci95-sem", "mean+1.96sd" or "percentile:P".
inline void parse_statistic(const std::string &s, ScaleStrategy &out) {
  if (s == "ci95-sem" || s == "CI95_SEM") {
    out.statistic = Statistic::CI95_SEM;
  } else if (s == "mean+1.96sd" || s == "MEAN_PLUS_1P96_SD") {
    out.statistic = Statistic::MeanPlus1p96SD;
  } else if (s.rfind("percentile:", 0) == 0) {
    out.statistic = Statistic::Percentile;
    try {
      std::size_t used = 0;
      const std::string num = s.substr(11);
      out.percentile = std::stod(num, &used);
      if (used != num.size()) throw std::invalid_argument(num);
    } catch (const std::exception &) {
      fail(ErrorKind::InvalidArgument, "bad percentile in '" + s + "'");
    }
  } else {
    fail(ErrorKind::InvalidArgument, "unknown statistic '" + s + "' (ci95-sem, mean+1.96sd, percentile:P)");
  }
}

inline Population parse_population(const std::string &s) {
  if (s == "subthreshold" || s == "SUBTHRESHOLD_WITH_FALLBACK") return Population::SubthresholdWithFallback;
  if (s == "all" || s == "ALL_MASKED") return Population::AllMasked;
  fail(ErrorKind::InvalidArgument, "unknown population '" + s + "' (subthreshold, all)");
}

struct SliceStats {
  std::size_t n = 0; ///< size of the selected population
  double mean = 0.0;
  double sd = 0.0; ///< sample standard deviation (n - 1); 0 for n = 1
  double bound_hz = 0.0;
  double subthreshold_fraction = 0.0;
  bool fell_back = false;
};

/// Percentile with linear interpolation at rank p/100 * (n - 1) of the sorted values.
inline double percentile_of(std::vector<double> values, double p) {
  if (values.empty()) fail(ErrorKind::EmptyInput, "percentile of an empty list");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double f = rank - static_cast<double>(lo);
  return values[lo] + f * (values[hi] - values[lo]);
}

inline SliceStats slice_statistics(std::span<const double> values_hz, double threshold_hz, const ScaleStrategy &strategy) {
  if (values_hz.empty()) fail(ErrorKind::EmptyInput, "slice has no voxels");
  validate(strategy);
  SliceStats st;
  std::vector<double> population;
  std::size_t below = 0;
  for (double x : values_hz) {
    if (x < threshold_hz) ++below;
  }
  st.subthreshold_fraction = static_cast<double>(below) / static_cast<double>(values_hz.size());
  if (strategy.population == Population::SubthresholdWithFallback && below > 0) {
    population.reserve(below);
    for (double x : values_hz)
      if (x < threshold_hz) population.push_back(x);
  } else {
    population.assign(values_hz.begin(), values_hz.end());
    st.fell_back = strategy.population == Population::SubthresholdWithFallback;
  }

  st.n = population.size();
  const double n = static_cast<double>(st.n);
  double sum = 0.0;
  for (double x : population) sum += x;
  st.mean = sum / n;
  double ss = 0.0;
  for (double x : population) ss += (x - st.mean) * (x - st.mean);
  st.sd = st.n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;

  switch (strategy.statistic) {
  case Statistic::CI95_SEM: st.bound_hz = st.mean + 1.96 * st.sd / std::sqrt(n); break;
  case Statistic::MeanPlus1p96SD: st.bound_hz = st.mean + 1.96 * st.sd; break;
  case Statistic::Percentile: st.bound_hz = percentile_of(std::move(population), strategy.percentile); break;
  }
  return st;
}

struct ScaleFactor {
  double raw = 0.0;
  double k = 0.0;
};

inline ScaleFactor scale_factor(double bound_hz, double nominal_hz, const ScaleStrategy &strategy) {
  if (!(bound_hz > 0.0) || !std::isfinite(bound_hz)) fail(ErrorKind::InvalidArgument, "upper-bound B1 must be positive");
  if (!(nominal_hz > 0.0) || !std::isfinite(nominal_hz)) fail(ErrorKind::InvalidArgument, "nominal B1 must be positive");
  const double raw = strategy.safety_margin * nominal_hz / bound_hz;
  return {raw, std::min(raw, strategy.clamp_max)};
}

inline ScaleFactor scale_factor(const SliceStats &stats, double nominal_hz, const ScaleStrategy &strategy) {
  return scale_factor(stats.bound_hz, nominal_hz, strategy);
}

/// sum(k_i^2) / N; every k must lie in (0, 1].
inline double sar_reduction_index(std::span<const double> k) {
  if (k.empty()) fail(ErrorKind::EmptyInput, "no scale factors");
  double sum = 0.0;
  for (double x : k) {
    if (!(x > 0.0 && x <= 1.0)) fail(ErrorKind::InvalidArgument, "scale factors must lie in (0, 1]");
    sum += x * x;
  }
  return sum / static_cast<double>(k.size());
}

struct SlicePlanEntry {
  std::size_t index = 0;
  std::size_t n_voxels = 0;
  std::size_t n_population = 0;
  double mean_hz = std::numeric_limits<double>::quiet_NaN();
  double sd_hz = std::numeric_limits<double>::quiet_NaN();
  double bound_hz = std::numeric_limits<double>::quiet_NaN();
  double subthreshold_fraction = std::numeric_limits<double>::quiet_NaN();
  double raw_factor = std::numeric_limits<double>::quiet_NaN();
  double scale_factor = 1.0;
  bool empty = false;     ///< no masked voxels; k = clamp_max
  bool fell_back = false; ///< no sub-threshold voxels; statistics over the whole slice
};

struct SliceScalePlan {
  std::vector<SlicePlanEntry> slices;
  double threshold_hz = 0.0;
  double nominal_hz = 0.0;
  ScaleStrategy strategy;
  double sar_reduction_index = 1.0;
  double sar_reduction_percent = 0.0;

  std::vector<double> scale_factors() const {
    std::vector<double> k;
    for (const auto &s : slices) k.push_back(s.scale_factor);
    return k;
  }
};

inline SliceScalePlan plan_from_partition(const SlicePartition &part, double threshold_hz, double nominal_hz, const ScaleStrategy &strategy,
                                          unsigned threads = 1) {
  if (!(threshold_hz > 0.0) || !(nominal_hz > 0.0)) fail(ErrorKind::InvalidArgument, "threshold and nominal B1 must be positive");
  validate(strategy);
  SliceScalePlan plan;
  plan.threshold_hz = threshold_hz;
  plan.nominal_hz = nominal_hz;
  plan.strategy = strategy;
  plan.slices.resize(part.values.size());
  parallel_for(part.values.size(), threads, [&](std::size_t i) {
    SlicePlanEntry &e = plan.slices[i];
    e.index = i;
    const auto &values = part.values[i];
    e.n_voxels = values.size();
    if (values.empty()) {
      e.empty = true;
      e.scale_factor = strategy.clamp_max;
      return;
    }
    const SliceStats st = slice_statistics(values, threshold_hz, strategy);
    const ScaleFactor f = scale_factor(st, nominal_hz, strategy);
    e.n_population = st.n;
    e.mean_hz = st.mean;
    e.sd_hz = st.sd;
    e.bound_hz = st.bound_hz;
    e.subthreshold_fraction = st.subthreshold_fraction;
    e.fell_back = st.fell_back;
    e.raw_factor = f.raw;
    e.scale_factor = f.k;
  });
  const auto k = plan.scale_factors();
  plan.sar_reduction_index = sar_reduction_index(k);
  plan.sar_reduction_percent = 100.0 * (1.0 - plan.sar_reduction_index);
  return plan;
}

inline SliceScalePlan make_plan(const Volume &abs_b1, const Volume &mask, const SliceStackGeometry &geom, double threshold_hz,
                                double nominal_hz, const ScaleStrategy &strategy, unsigned threads = 1) {
  if (!same_grid(abs_b1, mask)) fail(ErrorKind::InvalidArgument, "mask grid does not match the B1 map grid");
  const SlicePartition part = partition_slices(abs_b1, geom, mask);
  const bool any = std::any_of(part.values.begin(), part.values.end(), [](const auto &v) { return !v.empty(); });
  if (!any) fail(ErrorKind::InvalidArgument, "slice geometry does not intersect any masked voxel of the B1 map");
  return plan_from_partition(part, threshold_hz, nominal_hz, strategy, threads);
}

namespace detail {

inline nlohmann::json number_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

inline double number_or_nan(const nlohmann::json &j) { return j.is_number() ? j.get<double>() : std::numeric_limits<double>::quiet_NaN(); }

} // namespace detail

inline nlohmann::json to_json(const ScaleStrategy &s) {
  return {{"statistic", statistic_name(s)},
          {"percentile", s.statistic == Statistic::Percentile ? nlohmann::json(s.percentile) : nlohmann::json(nullptr)},
          {"population", to_string(s.population)},
          {"safety_margin", s.safety_margin},
          {"clamp_max", s.clamp_max}};
}

/// Plan document; `provenance` is embedded verbatim and must not contain timestamps.
inline nlohmann::json plan_to_json(const SliceScalePlan &plan, const nlohmann::json &provenance = nlohmann::json::object()) {
  nlohmann::json slices = nlohmann::json::array();
  for (const auto &e : plan.slices) {
    slices.push_back({{"index", e.index},
                      {"n_voxels", e.n_voxels},
                      {"n_population", e.n_population},
                      {"mean_hz", detail::number_or_null(e.mean_hz)},
                      {"sd_hz", detail::number_or_null(e.sd_hz)},
                      {"bound_hz", detail::number_or_null(e.bound_hz)},
                      {"subthreshold_fraction", detail::number_or_null(e.subthreshold_fraction)},
                      {"raw_factor", detail::number_or_null(e.raw_factor)},
                      {"scale_factor", e.scale_factor},
                      {"empty", e.empty},
                      {"fell_back", e.fell_back}});
  }
  return {{"n_slices", plan.slices.size()},
          {"threshold_hz", plan.threshold_hz},
          {"nominal_hz", plan.nominal_hz},
          {"strategy", to_json(plan.strategy)},
          {"sar_reduction_index", plan.sar_reduction_index},
          {"sar_reduction_percent", plan.sar_reduction_percent},
          {"slices", slices},
          {"provenance", provenance}};
}

inline SliceScalePlan plan_from_json(const nlohmann::json &doc) {
  try {
    SliceScalePlan plan;
    plan.threshold_hz = doc.at("threshold_hz").get<double>();
    plan.nominal_hz = doc.at("nominal_hz").get<double>();
    plan.sar_reduction_index = doc.at("sar_reduction_index").get<double>();
    plan.sar_reduction_percent = doc.at("sar_reduction_percent").get<double>();
    const auto &st = doc.at("strategy");
    const std::string stat = st.at("statistic").get<std::string>();
    if (stat.rfind("PERCENTILE", 0) == 0) {
      plan.strategy.statistic = Statistic::Percentile;
      plan.strategy.percentile = st.at("percentile").get<double>();
    } else {
      parse_statistic(stat, plan.strategy);
    }
    plan.strategy.population = parse_population(st.at("population").get<std::string>());
    plan.strategy.safety_margin = st.at("safety_margin").get<double>();
    plan.strategy.clamp_max = st.at("clamp_max").get<double>();
    for (const auto &s : doc.at("slices")) {
      SlicePlanEntry e;
      e.index = s.at("index").get<std::size_t>();
      e.n_voxels = s.at("n_voxels").get<std::size_t>();
      e.n_population = s.value("n_population", std::size_t{0});
      e.mean_hz = detail::number_or_nan(s.at("mean_hz"));
      e.sd_hz = detail::number_or_nan(s.at("sd_hz"));
      e.bound_hz = detail::number_or_nan(s.at("bound_hz"));
      e.subthreshold_fraction = detail::number_or_nan(s.at("subthreshold_fraction"));
      e.raw_factor = detail::number_or_nan(s.at("raw_factor"));
      e.scale_factor = s.at("scale_factor").get<double>();
      e.empty = s.value("empty", false);
      e.fell_back = s.value("fell_back", false);
      plan.slices.push_back(e);
    }
    return plan;
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorKind::Parse, std::string("malformed plan document: ") + e.what());
  }
}

/// Per-slice table "slice,n,mean_hz,sd_hz,bound_hz,subthresh_frac,raw,k"; empty slices leave statistics blank.
inline std::string plan_csv(const SliceScalePlan &plan) {
  auto cell = [](double x) { return std::isfinite(x) ? fmt::format("{}", x) : std::string{}; };
  std::string out = "slice,n,mean_hz,sd_hz,bound_hz,subthresh_frac,raw,k\n";
  for (const auto &e : plan.slices)
    out += fmt::format("{},{},{},{},{},{},{},{}\n", e.index, e.n_voxels, cell(e.mean_hz), cell(e.sd_hz), cell(e.bound_hz),
                       cell(e.subthreshold_fraction), cell(e.raw_factor), e.scale_factor);
  return out;
}

struct ErrorMap {
  Volume error_percent;
  double mean_abs_percent = 0.0;
  double max_abs_percent = 0.0;
  std::size_t n_compared = 0;
  std::size_t n_excluded = 0; ///< masked voxels with a zero measurement
};

/// Percent error of predicted against measured on masked voxels with a non-zero
/// measurement. An absent mask selects every voxel.
inline ErrorMap compare_maps(const Volume &predicted, const Volume &measured, const Volume *mask = nullptr) {
  validate(predicted);
  validate(measured);
  if (!same_grid(predicted, measured)) fail(ErrorKind::InvalidArgument, "predicted and measured maps are on different grids");
  if (mask) {
    validate(*mask);
    if (!same_grid(*mask, measured)) fail(ErrorKind::InvalidArgument, "mask grid does not match the measured map");
  }
  ErrorMap out{like(measured, VolumeIntent::ErrorPercent)};
  double sum_abs = 0.0;
  for (std::size_t i = 0; i < measured.size(); ++i) {
    if (mask && mask->data[i] == 0.0) continue;
    const double m = measured.data[i];
    if (m == 0.0) {
      ++out.n_excluded;
      continue;
    }
    const double e = (predicted.data[i] - m) / m * 100.0;
    out.error_percent.data[i] = e;
    sum_abs += std::abs(e);
    out.max_abs_percent = std::max(out.max_abs_percent, std::abs(e));
    ++out.n_compared;
  }
  if (out.n_compared == 0) fail(ErrorKind::EmptyInput, "no masked voxel with a non-zero measurement");
  out.mean_abs_percent = sum_abs / static_cast<double>(out.n_compared);
  return out;
}

} // namespace adiaplan
