#pragma once

#include <adiaplan/error.hpp>
#include <adiaplan/parallel.hpp>
#include <adiaplan/volume.hpp>

#include <algorithm>
#include <cmath>
#include <optional>

namespace adiaplan {

/// Trilinear interpolation of a volume at world positions. Positions outside
/// the hull of voxel centres yield std::nullopt.
class TrilinearSampler {
public:
  explicit TrilinearSampler(const Volume &v) : v_(v) {
    validate(v);
    inverse_ = v.affine.inverse();
  }

  Eigen::Vector3d to_voxel(const Eigen::Vector3d &world_mm) const { return (inverse_ * world_mm.homogeneous()).head<3>(); }

  std::optional<double> operator()(const Eigen::Vector3d &world_mm) const { return at_voxel(to_voxel(world_mm)); }

  std::optional<double> at_voxel(Eigen::Vector3d x) const {
    std::size_t lo[3], hi[3];
    double frac[3];
    for (int d = 0; d < 3; ++d) {
      const double n = static_cast<double>(v_.dims[static_cast<std::size_t>(d)]);
      if (!(x[d] >= -hull_eps && x[d] <= n - 1.0 + hull_eps)) return std::nullopt;
      const double snapped = std::round(x[d]);
      if (std::abs(x[d] - snapped) < snap_eps) x[d] = snapped;
      x[d] = std::clamp(x[d], 0.0, n - 1.0);
      const double f = std::floor(x[d]);
      lo[d] = static_cast<std::size_t>(f);
      hi[d] = std::min(lo[d] + 1, v_.dims[static_cast<std::size_t>(d)] - 1);
      frac[d] = x[d] - f;
    }
    double acc = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
      double weight = 1.0;
      std::size_t idx[3];
      for (int d = 0; d < 3; ++d) {
        const bool upper = (corner >> d) & 1;
        weight *= upper ? frac[d] : 1.0 - frac[d];
        idx[d] = upper ? hi[d] : lo[d];
      }
      if (weight != 0.0) acc += weight * v_.at(idx[0], idx[1], idx[2]);
    }
    return acc;
  }

  static constexpr double hull_eps = 1e-6;
  static constexpr double snap_eps = 1e-9;

private:
  const Volume &v_;
  Eigen::Matrix4d inverse_;
};

inline std::optional<double> trilinear_sample(const Volume &v, const Eigen::Vector3d &world_mm) { return TrilinearSampler(v)(world_mm); }

struct ResliceResult {
  Volume values; ///< sampled data; 0 where the target voxel lies outside the source
  Volume valid;  ///< MASK volume, 1 where the sample was inside the source hull
};

/// Resamples src onto the grid (target_affine, target_dims).
inline ResliceResult reslice_to(const Volume &src, const Eigen::Matrix4d &target_affine, const Dims &target_dims, unsigned threads = 1) {
  for (auto d : target_dims)
    if (d == 0) fail(ErrorKind::InvalidArgument, "target dimensions must be positive");
  if (!target_affine.allFinite() || std::abs(target_affine.topLeftCorner<3, 3>().determinant()) <= 1e-12)
    fail(ErrorKind::InvalidArgument, "target affine is not invertible");
  const TrilinearSampler sampler(src);
  ResliceResult out{make_volume(target_dims, target_affine, src.intent == VolumeIntent::Mask ? VolumeIntent::Intensity : src.intent),
                    make_volume(target_dims, target_affine, VolumeIntent::Mask)};
  const Eigen::Matrix4d target_to_src = src.affine.inverse() * target_affine;
  parallel_for(target_dims[2], threads, [&](std::size_t k) {
    for (std::size_t j = 0; j < target_dims[1]; ++j) {
      for (std::size_t i = 0; i < target_dims[0]; ++i) {
        const Eigen::Vector3d x = (target_to_src * Eigen::Vector4d(static_cast<double>(i), static_cast<double>(j), static_cast<double>(k), 1.0)).head<3>();
        const auto value = sampler.at_voxel(x);
        const std::size_t flat = out.values.index(i, j, k);
        out.values.data[flat] = value.value_or(0.0);
        out.valid.data[flat] = value ? 1.0 : 0.0;
      }
    }
  });
  return out;
}

inline ResliceResult reslice_like(const Volume &src, const Volume &target, unsigned threads = 1) {
  return reslice_to(src, target.affine, target.dims, threads);
}

} // namespace adiaplan
