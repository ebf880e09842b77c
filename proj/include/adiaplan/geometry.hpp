#pragma once

// Slice-stack geometry of a 2D multi-slice acquisition and the assignment of
// volume voxels to its slabs.

#include <adiaplan/error.hpp>
#include <adiaplan/volume.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace adiaplan {

struct SliceStackGeometry {
  std::size_t n_slices = 0;
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  std::vector<Eigen::Vector3d> center_mm;
  double thickness_mm = 0.0;
  std::array<double, 2> in_plane_extent_mm{0.0, 0.0};
};

inline void validate(const SliceStackGeometry &g) {
  if (g.n_slices < 1) fail(ErrorKind::Validation, "geometry needs at least one slice");
  if (g.center_mm.size() != g.n_slices) fail(ErrorKind::Validation, "geometry needs one center per slice");
  if (!g.normal.allFinite() || std::abs(g.normal.norm() - 1.0) > 1e-9) fail(ErrorKind::Validation, "slice normal must be a unit vector");
  if (!(g.thickness_mm > 0.0) || !std::isfinite(g.thickness_mm)) fail(ErrorKind::Validation, "slice thickness must be positive");
  int direction = 0;
  for (std::size_t i = 0; i < g.n_slices; ++i) {
    if (!g.center_mm[i].allFinite()) fail(ErrorKind::Validation, "slice center " + std::to_string(i) + " is not finite");
    if (i == 0) continue;
    const double step = (g.center_mm[i] - g.center_mm[i - 1]).dot(g.normal);
    const int sign = step > 0.0 ? 1 : (step < 0.0 ? -1 : 0);
    if (sign == 0 || (direction != 0 && sign != direction))
      fail(ErrorKind::Validation, "slice centers must be strictly monotone along the normal");
    direction = sign;
  }
}

/// Evenly spaced stack: center_i = first + i * spacing * normal.
inline SliceStackGeometry make_geometry(std::size_t n_slices, const Eigen::Vector3d &normal, const Eigen::Vector3d &first_center_mm,
                                        double spacing_mm, double thickness_mm, std::array<double, 2> extent_mm = {0.0, 0.0}) {
  SliceStackGeometry g;
  g.n_slices = n_slices;
  g.normal = normal.normalized();
  g.thickness_mm = thickness_mm;
  g.in_plane_extent_mm = extent_mm;
  for (std::size_t i = 0; i < n_slices; ++i) g.center_mm.push_back(first_center_mm + static_cast<double>(i) * spacing_mm * g.normal);
  validate(g);
  return g;
}

/// One slice per plane of the reference volume's third voxel axis.
inline SliceStackGeometry geometry_from_reference(const Volume &ref) {
  validate(ref);
  const Eigen::Vector3d axis = ref.affine.block<3, 1>(0, 2);
  const Eigen::Vector3d voxel = ref.voxel_size_mm();
  SliceStackGeometry g;
  g.n_slices = ref.dims[2];
  g.normal = axis.normalized();
  g.thickness_mm = axis.norm();
  g.in_plane_extent_mm = {voxel[0] * static_cast<double>(ref.dims[0]), voxel[1] * static_cast<double>(ref.dims[1])};
  const double ci = 0.5 * static_cast<double>(ref.dims[0] - 1), cj = 0.5 * static_cast<double>(ref.dims[1] - 1);
  for (std::size_t k = 0; k < ref.dims[2]; ++k) g.center_mm.push_back(ref.world(ci, cj, static_cast<double>(k)));
  validate(g);
  return g;
}

// Geometry file: {n_slices, normal[3], first_center_mm[3], spacing_mm,
// thickness_mm, extent_mm[2]} with optional centers_mm[[x,y,z], ...] that
// overrides first_center_mm/spacing_mm.

inline nlohmann::json to_json(const SliceStackGeometry &g) {
  validate(g);
  auto vec = [](const Eigen::Vector3d &v) { return nlohmann::json::array({v[0], v[1], v[2]}); };
  nlohmann::json centers = nlohmann::json::array();
  for (const auto &c : g.center_mm) centers.push_back(vec(c));
  const double spacing = g.n_slices > 1 ? (g.center_mm[1] - g.center_mm[0]).dot(g.normal) : g.thickness_mm;
  return {{"n_slices", g.n_slices},
          {"normal", vec(g.normal)},
          {"first_center_mm", vec(g.center_mm.front())},
          {"spacing_mm", spacing},
          {"thickness_mm", g.thickness_mm},
          {"extent_mm", {g.in_plane_extent_mm[0], g.in_plane_extent_mm[1]}},
          {"centers_mm", centers}};
}

inline SliceStackGeometry geometry_from_json(const nlohmann::json &doc) {
  auto vec3 = [](const nlohmann::json &j, const std::string &what) {
    if (!j.is_array() || j.size() != 3) fail(ErrorKind::Parse, what + " must be an array of 3 numbers");
    Eigen::Vector3d v;
    for (int d = 0; d < 3; ++d) {
      if (!j[static_cast<std::size_t>(d)].is_number()) fail(ErrorKind::Parse, what + " must be an array of 3 numbers");
      v[d] = j[static_cast<std::size_t>(d)].get<double>();
    }
    return v;
  };
  auto number = [&](const char *field) {
    if (!doc.contains(field) || !doc.at(field).is_number()) fail(ErrorKind::Parse, std::string("missing or non-numeric field '") + field + "'");
    return doc.at(field).get<double>();
  };
  if (!doc.is_object()) fail(ErrorKind::Parse, "geometry document must be a JSON object");
  if (!doc.contains("n_slices") || !doc.at("n_slices").is_number_integer()) fail(ErrorKind::Parse, "missing integer field 'n_slices'");
  const auto n = doc.at("n_slices").get<long long>();
  if (n < 1) fail(ErrorKind::Validation, "n_slices must be >= 1");
  if (!doc.contains("normal")) fail(ErrorKind::Parse, "missing field 'normal'");
  const Eigen::Vector3d normal = vec3(doc.at("normal"), "normal");
  if (std::abs(normal.norm() - 1.0) > 1e-9) fail(ErrorKind::Validation, "normal must be a unit vector");
  const double thickness = number("thickness_mm");
  std::array<double, 2> extent{0.0, 0.0};
  if (doc.contains("extent_mm")) {
    const auto &e = doc.at("extent_mm");
    if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) fail(ErrorKind::Parse, "extent_mm must hold 2 numbers");
    extent = {e[0].get<double>(), e[1].get<double>()};
  }

  SliceStackGeometry g;
  g.n_slices = static_cast<std::size_t>(n);
  g.normal = normal;
  g.thickness_mm = thickness;
  g.in_plane_extent_mm = extent;
  if (doc.contains("centers_mm")) {
    const auto &cs = doc.at("centers_mm");
    if (!cs.is_array() || cs.size() != g.n_slices) fail(ErrorKind::Parse, "centers_mm must hold n_slices points");
    for (std::size_t i = 0; i < cs.size(); ++i) g.center_mm.push_back(vec3(cs[i], "centers_mm[" + std::to_string(i) + "]"));
  } else {
    if (!doc.contains("first_center_mm")) fail(ErrorKind::Parse, "missing field 'first_center_mm'");
    const Eigen::Vector3d first = vec3(doc.at("first_center_mm"), "first_center_mm");
    const double spacing = number("spacing_mm");
    for (std::size_t i = 0; i < g.n_slices; ++i) g.center_mm.push_back(first + static_cast<double>(i) * spacing * normal);
  }
  validate(g);
  return g;
}

inline void save_geometry(const SliceStackGeometry &g, const std::string &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  out << to_json(g).dump(1) << "\n";
}

inline SliceStackGeometry load_geometry(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open geometry file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return geometry_from_json(nlohmann::json::parse(ss.str()));
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorKind::Parse, path + ": " + e.what());
  } catch (const Error &e) {
    throw Error(e.kind(), path + ": " + e.detail());
  }
}

/// Masked voxel values (and their flat indices) per slice, in voxel order.
struct SlicePartition {
  std::vector<std::vector<double>> values;
  std::vector<std::vector<std::size_t>> voxels;
};

/// A masked voxel belongs to the first slice (lowest index) whose slab
/// |(p - center_i) . normal| <= thickness / 2 contains its centre; voxels in no
/// slab are dropped.
inline SlicePartition partition_slices(const Volume &v, const SliceStackGeometry &geom, const Volume &mask) {
  validate(v);
  validate(geom);
  validate(mask);
  if (!same_grid(v, mask)) fail(ErrorKind::InvalidArgument, "mask grid does not match the volume grid");
  SlicePartition out;
  out.values.resize(geom.n_slices);
  out.voxels.resize(geom.n_slices);
  const double half = 0.5 * geom.thickness_mm + 1e-9;
  std::vector<double> offsets(geom.n_slices);
  for (std::size_t s = 0; s < geom.n_slices; ++s) offsets[s] = geom.center_mm[s].dot(geom.normal);

  std::size_t masked = 0;
  for (std::size_t flat = 0; flat < v.size(); ++flat) {
    if (mask.data[flat] == 0.0) continue;
    ++masked;
    const double along = v.world(flat).dot(geom.normal);
    for (std::size_t s = 0; s < geom.n_slices; ++s) {
      if (std::abs(along - offsets[s]) <= half) {
        out.values[s].push_back(v.data[flat]);
        out.voxels[s].push_back(flat);
        break;
      }
    }
  }
  if (masked == 0) fail(ErrorKind::EmptyInput, "mask selects no voxels");
  return out;
}

} // namespace adiaplan
