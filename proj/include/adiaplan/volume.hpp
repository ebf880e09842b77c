#pragma once

#include <adiaplan/error.hpp>

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace adiaplan {

enum class VolumeIntent { RelativeB1, AbsoluteB1Hz, Intensity, Mask, ErrorPercent };

inline const char *to_string(VolumeIntent i) {
  switch (i) {
  case VolumeIntent::RelativeB1: return "RELATIVE_B1";
  case VolumeIntent::AbsoluteB1Hz: return "ABSOLUTE_B1_HZ";
  case VolumeIntent::Intensity: return "INTENSITY";
  case VolumeIntent::Mask: return "MASK";
  case VolumeIntent::ErrorPercent: return "ERROR_PERCENT";
  }
  return "INTENSITY";
}

/// Unrecognized names map to Intensity.
inline VolumeIntent parse_intent(const std::string &s) {
  for (auto i : {VolumeIntent::RelativeB1, VolumeIntent::AbsoluteB1Hz, VolumeIntent::Intensity, VolumeIntent::Mask,
                 VolumeIntent::ErrorPercent})
    if (s == to_string(i)) return i;
  return VolumeIntent::Intensity;
}

/// On-disk sample type.
enum class DataType { Float32, Int16 };

using Dims = std::array<std::size_t, 3>;

/// 3D scalar field on a voxel grid. data is x-fastest; affine maps voxel
/// indices (i, j, k, 1) to world millimetres.
struct Volume {
  Dims dims{0, 0, 0};
  Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();
  std::vector<double> data;
  VolumeIntent intent = VolumeIntent::Intensity;
  DataType dtype = DataType::Float32;

  std::size_t size() const noexcept { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept { return i + dims[0] * (j + dims[1] * k); }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return data[index(i, j, k)]; }
  double &at(std::size_t i, std::size_t j, std::size_t k) { return data[index(i, j, k)]; }

  Eigen::Vector3d world(double i, double j, double k) const { return (affine * Eigen::Vector4d(i, j, k, 1.0)).head<3>(); }
  Eigen::Vector3d world(std::size_t flat) const {
    const std::size_t i = flat % dims[0];
    const std::size_t j = (flat / dims[0]) % dims[1];
    const std::size_t k = flat / (dims[0] * dims[1]);
    return world(static_cast<double>(i), static_cast<double>(j), static_cast<double>(k));
  }

  /// Column norms of the linear part of the affine.
  Eigen::Vector3d voxel_size_mm() const { return affine.topLeftCorner<3, 3>().colwise().norm().transpose(); }
};

inline void validate(const Volume &v) {
  for (auto d : v.dims)
    if (d == 0) fail(ErrorKind::Validation, "volume dimensions must be positive");
  if (v.data.size() != v.size())
    fail(ErrorKind::Validation, "volume data length " + std::to_string(v.data.size()) + " does not match dims (" + std::to_string(v.size()) + ")");
  if (!v.affine.allFinite()) fail(ErrorKind::Validation, "affine has non-finite entries");
  if (std::abs(v.affine.topLeftCorner<3, 3>().determinant()) <= 1e-12) fail(ErrorKind::Validation, "affine is not invertible");
  if (v.intent == VolumeIntent::Mask) {
    for (double x : v.data)
      if (x != 0.0 && x != 1.0) fail(ErrorKind::Validation, "mask volumes may only contain 0 and 1");
  }
}

inline Volume make_volume(const Dims &dims, const Eigen::Matrix4d &affine, VolumeIntent intent, double fill = 0.0) {
  Volume v;
  v.dims = dims;
  v.affine = affine;
  v.intent = intent;
  v.dtype = intent == VolumeIntent::Mask ? DataType::Int16 : DataType::Float32;
  v.data.assign(v.size(), fill);
  validate(v);
  return v;
}

/// Axis-aligned affine for a grid of `dims` covering `fov_mm`, centred on the origin.
inline Eigen::Matrix4d centered_affine(const Dims &dims, const Eigen::Vector3d &fov_mm) {
  Eigen::Matrix4d a = Eigen::Matrix4d::Identity();
  for (int d = 0; d < 3; ++d) {
    const double voxel = fov_mm[d] / static_cast<double>(dims[d]);
    a(d, d) = voxel;
    a(d, 3) = -0.5 * voxel * static_cast<double>(dims[d] - 1);
  }
  return a;
}

inline bool same_grid(const Volume &a, const Volume &b, double tol = 1e-6) {
  return a.dims == b.dims && (a.affine - b.affine).cwiseAbs().maxCoeff() <= tol;
}

inline Volume like(const Volume &ref, VolumeIntent intent, double fill = 0.0) { return make_volume(ref.dims, ref.affine, intent, fill); }

} // namespace adiaplan
