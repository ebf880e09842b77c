#include <adiaplan/pulse.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <functional>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace adiaplan;

namespace {

std::string temp_path(const std::string &name) { return (std::filesystem::temp_directory_path() / ("adiaplan_test_" + name)).string(); }

std::string slurp(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double trapezoid_cycles(const PulseWaveform &w) {
  double acc = 0.0;
  for (std::size_t i = 1; i < w.size(); ++i) acc += 0.5 * w.dt_s * (w.samples[i - 1].fm_hz + w.samples[i].fm_hz);
  return acc;
}

ErrorKind kind_of(const std::function<void()> &fn) {
  try {
    fn();
  } catch (const Error &e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::Io;
}

} // namespace

TEST(GenerateHs, MatchesClosedForm) {
  const double beta = 5.3, mu = 6.0, T = 10e-3;
  const auto w = generate_hs(1, beta, mu, T, 512);
  ASSERT_EQ(w.size(), 512u);
  EXPECT_EQ(w.family, PulseFamily::HS);
  EXPECT_DOUBLE_EQ(w.duration_s(), T);
  // beta in rad/s over the pulse: the dimensionless truncation spread over T/2.
  const double beta_t = 2.0 * beta / T;
  const double am_edge = 1.0 / std::cosh(beta * 511.0 / 511.0);
  double am_peak = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double tau = (2.0 * static_cast<double>(i) - 511.0) / 511.0;
    am_peak = std::max(am_peak, 1.0 / std::cosh(beta * tau));
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double tau = (2.0 * static_cast<double>(i) - 511.0) / 511.0;
    EXPECT_NEAR(w.samples[i].am, 1.0 / std::cosh(beta * tau) / am_peak, 1e-12);
    EXPECT_NEAR(w.samples[i].fm_hz, -mu * beta_t / (2.0 * M_PI) * std::tanh(beta * tau), 1e-9);
    EXPECT_EQ(w.samples[i].gm, 1.0);
  }
  EXPECT_NEAR(w.samples.front().am * am_peak, am_edge, 1e-12);
}

TEST(GenerateHs, PeakIsOneAndShapeIsSymmetric) {
  for (int n : {1, 2, 8}) {
    for (int samples : {512, 513}) {
      const auto w = generate_hs(n, 5.3, 6.0, 10e-3, samples);
      double peak = 0.0;
      for (const auto &s : w.samples) peak = std::max(peak, s.am);
      EXPECT_EQ(peak, 1.0);
      const std::size_t N = w.size();
      for (std::size_t i = 0; i < N; ++i) {
        EXPECT_NEAR(w.samples[i].am, w.samples[N - 1 - i].am, 1e-12);
        EXPECT_NEAR(w.samples[i].gm, w.samples[N - 1 - i].gm, 1e-12);
        EXPECT_NEAR(w.samples[i].fm_hz, -w.samples[N - 1 - i].fm_hz, 1e-12 * std::abs(w.samples[0].fm_hz) + 1e-12);
      }
    }
  }
  const auto odd = generate_hs(1, 5.3, 6.0, 10e-3, 513);
  EXPECT_EQ(odd.samples[256].am, 1.0);
}

TEST(GenerateHs, SweepSpansMuTimesBetaOverPi) {
  const double beta = 5.3, mu = 6.0, T = 10e-3;
  const auto w = generate_hs(1, beta, mu, T, 512);
  const double beta_t = 2.0 * beta / T;
  EXPECT_NEAR(bandwidth(w), mu * beta_t / M_PI, 0.01 * mu * beta_t / M_PI);
}

TEST(GenerateHs, HigherOrderSweepFollowsIntegratedPower) {
  // For n = 2 the sweep is proportional to the running integral of sech^2(beta s^2).
  const auto w = generate_hs(2, 4.0, 3.0, 10e-3, 256);
  const double beta_t = 2.0 * 4.0 / 10e-3;
  EXPECT_NEAR(w.samples.back().fm_hz, -3.0 * beta_t / (2.0 * M_PI) * std::tanh(4.0), 1e-6);
  for (std::size_t i = 1; i < w.size(); ++i) EXPECT_LE(w.samples[i].fm_hz, w.samples[i - 1].fm_hz);
}

TEST(GenerateHs, RejectsBadArguments) {
  EXPECT_EQ(kind_of([] { generate_hs(1, 5.3, 6.0, 0.0, 512); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { generate_hs(1, 5.3, 6.0, std::nan(""), 512); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { generate_hs(1, 5.3, 6.0, 10e-3, 15); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { generate_hs(0, 5.3, 6.0, 10e-3, 64); }), ErrorKind::InvalidArgument);
}

TEST(GenerateFoci, UnitAmaxIsIdentity) {
  const auto hs = generate_hs(1, 5.3, 6.0, 10e-3, 512);
  const auto f = generate_foci(hs, 1.0);
  for (std::size_t i = 0; i < hs.size(); ++i) {
    EXPECT_NEAR(f.samples[i].am, hs.samples[i].am, 1e-12);
    EXPECT_NEAR(f.samples[i].fm_hz, hs.samples[i].fm_hz, 1e-12);
    EXPECT_NEAR(f.samples[i].gm, hs.samples[i].gm, 1e-12);
  }
}

TEST(GenerateFoci, GradientRisesFromCenterToEdges) {
  const auto hs = generate_hs(1, 5.3, 6.0, 10e-3, 513);
  const auto f = generate_foci(hs, 10.0);
  EXPECT_NEAR(f.samples[256].gm, 0.1, 1e-12);
  double gm_max = 0.0;
  for (const auto &s : f.samples) gm_max = std::max(gm_max, s.gm);
  EXPECT_NEAR(gm_max, 1.0, 1e-12);
  EXPECT_NEAR(f.samples.front().gm, 1.0, 1e-12);
  EXPECT_NEAR(f.samples.back().gm, 1.0, 1e-12);
  EXPECT_GE(bandwidth(f), bandwidth(hs));
}

TEST(GenerateFoci, ScalesEveryChannelByTheShapeFactor) {
  const auto hs = generate_hs(1, 5.3, 6.0, 10e-3, 512);
  const double a_max = 10.0;
  const auto f = generate_foci(hs, a_max);
  for (std::size_t i = 0; i < hs.size(); ++i) {
    const double am = hs.samples[i].am;
    const double A = am < 1.0 / a_max ? a_max : 1.0 / am;
    EXPECT_NEAR(f.samples[i].am, std::min(1.0, A * am), 1e-12);
    EXPECT_NEAR(f.samples[i].fm_hz, A * hs.samples[i].fm_hz, 1e-9);
    EXPECT_NEAR(f.samples[i].gm, A / a_max, 1e-12);
  }
  EXPECT_EQ(f.size(), hs.size());
  EXPECT_EQ(f.dt_s, hs.dt_s);
}

TEST(GenerateFoci, RejectsWrongInputs) {
  const auto hs = generate_hs(1, 5.3, 6.0, 10e-3, 64);
  EXPECT_EQ(kind_of([&] { generate_foci(hs, 0.5); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { generate_foci(generate_foci(hs, 2.0), 2.0); }), ErrorKind::InvalidArgument);
}

TEST(ResampleTrfoci, IdentityWarpReproducesInput) {
  const auto f = generate_foci(generate_hs(1, 5.3, 6.0, 10e-3, 512), 10.0);
  std::vector<double> warp(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) warp[i] = f.time_of(i);
  const auto r = resample_trfoci(f, warp);
  EXPECT_EQ(r.family, PulseFamily::TRFOCI);
  ASSERT_EQ(r.size(), f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_NEAR(r.samples[i].am, f.samples[i].am, 1e-9);
    EXPECT_NEAR(r.samples[i].fm_hz, f.samples[i].fm_hz, 1e-9 * std::abs(f.samples.front().fm_hz));
    EXPECT_NEAR(r.samples[i].gm, f.samples[i].gm, 1e-9);
  }
}

TEST(ResampleTrfoci, WarpsPreserveDurationAndPhaseSweep) {
  const auto f = generate_foci(generate_hs(1, 5.3, 1.1, 20e-3, 512), 10.0);
  for (double slowdown : {0.1, 0.3, 0.6}) {
    const auto r = resample_trfoci(f, default_trfoci_warp(f.size(), f.duration_s(), slowdown));
    EXPECT_EQ(r.size(), f.size());
    EXPECT_DOUBLE_EQ(r.duration_s(), f.duration_s());
    // The sweep is antisymmetric, so its net integral is ~0; the excursion carries the phase sweep.
    EXPECT_NEAR(trapezoid_cycles(r), trapezoid_cycles(f), 1e-6);
    EXPECT_NEAR(phase_excursion_cycles(r), phase_excursion_cycles(f), 0.005 * phase_excursion_cycles(f)) << slowdown;
    double gm_max = 0.0;
    for (const auto &s : r.samples) {
      EXPECT_GE(s.gm, 0.0);
      gm_max = std::max(gm_max, s.gm);
    }
    EXPECT_EQ(gm_max, 1.0);
  }
}

TEST(ResampleTrfoci, RejectsNonMonotoneWarp) {
  const auto f = generate_foci(generate_hs(1, 5.3, 6.0, 10e-3, 64), 4.0);
  auto warp = default_trfoci_warp(f.size(), f.duration_s());
  std::swap(warp[10], warp[11]);
  EXPECT_EQ(kind_of([&] { resample_trfoci(f, warp); }), ErrorKind::InvalidArgument);
  warp = default_trfoci_warp(f.size(), f.duration_s());
  warp.back() = 2.0 * f.duration_s();
  EXPECT_EQ(kind_of([&] { resample_trfoci(f, warp); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { resample_trfoci(f, {0.0, 1.0}); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { default_trfoci_warp(64, 1e-3, 1.0); }), ErrorKind::InvalidArgument);
}

TEST(TrfociStyle, BundledDesignMatchesShippedFile) {
  const auto w = make_trfoci_style();
  EXPECT_EQ(w.size(), 512u);
  EXPECT_NEAR(w.duration_s(), 20e-3, 1e-15);
  const auto shipped = load_waveform(std::string(ADIAPLAN_DATA_DIR) + "/trfoci_style.json");
  EXPECT_EQ(shipped, w);
}

TEST(Bandwidth, ZeroForConstantFrequency) {
  PulseWaveform w;
  w.dt_s = 1e-4;
  w.samples.assign(20, PulseSample{1.0, 0.0, 1.0});
  EXPECT_EQ(bandwidth(w), 0.0);
}

TEST(SliceSelectionTest, GradientTimesThicknessIsBandwidth) {
  const auto s = make_slice_selection(make_trfoci_style(), 3.0);
  EXPECT_NEAR(s.nominal_gradient_hz_per_mm * s.thickness_mm, s.pulse_bandwidth_hz, 1e-9 * s.pulse_bandwidth_hz);
  EXPECT_THROW(make_slice_selection(0.0, 1000.0), Error);
  EXPECT_THROW(make_slice_selection(3.0, 0.0), Error);
}

TEST(WaveformFile, RoundTripIsExact) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> beta(2.0, 8.0), mu(0.5, 8.0), amax(1.0, 20.0);
  for (int trial = 0; trial < 5; ++trial) {
    const auto hs = generate_hs(1 + trial % 3, beta(rng), mu(rng), 10e-3 + 1e-3 * trial, 100 + 37 * trial);
    for (const auto &w : {hs, generate_foci(hs, amax(rng))}) {
      const auto path = temp_path("wave.json");
      save_waveform(w, path);
      const auto first = slurp(path);
      const auto back = load_waveform(path);
      EXPECT_EQ(back, w);
      save_waveform(back, path);
      EXPECT_EQ(slurp(path), first);
      std::filesystem::remove(path);
    }
  }
}

TEST(WaveformFile, RejectsInvariantViolations) {
  auto w = generate_hs(1, 5.3, 6.0, 10e-3, 32);
  auto doc = to_json(w);
  doc["am"][3] = 1.5;
  EXPECT_EQ(kind_of([&] { waveform_from_json(doc); }), ErrorKind::Validation);

  doc = to_json(w);
  doc["am"] = {1.0};
  doc["fm_hz"] = {0.0};
  doc["gm"] = {1.0};
  doc["duration_s"] = doc["dt_s"];
  EXPECT_EQ(kind_of([&] { waveform_from_json(doc); }), ErrorKind::Validation);

  doc = to_json(w);
  doc["fm_hz"][0] = nullptr; // how a NaN would appear after a JSON writer
  EXPECT_EQ(kind_of([&] { waveform_from_json(doc); }), ErrorKind::Validation);

  doc = to_json(w);
  doc["gm"].erase(0);
  EXPECT_EQ(kind_of([&] { waveform_from_json(doc); }), ErrorKind::Parse);

  doc = to_json(w);
  doc["duration_s"] = 1.0;
  EXPECT_EQ(kind_of([&] { waveform_from_json(doc); }), ErrorKind::Validation);

  w.samples[5].fm_hz = std::nan("");
  EXPECT_EQ(kind_of([&] { serialize_waveform(w); }), ErrorKind::Validation);
}

TEST(WaveformFile, MalformedTextReportsLine) {
  try {
    parse_waveform("{\n \"name\": \"x\",\n \"am\": [1.0,\n}");
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parse);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
  EXPECT_EQ(kind_of([] { parse_waveform("{\"family\": \"HS\"}"); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([] { load_waveform("/nonexistent/wave.json"); }), ErrorKind::Io);
}
