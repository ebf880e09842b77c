#pragma once

// Single-file NIfTI-1 subset: magic "n+1", 348-byte header, data at byte 352,
// 3D only, float32 (datatype 16) or int16 (datatype 4). The voxel-to-world
// affine is stored in srow_x/y/z with sform_code 1. Reading falls back to the
// qform quaternion, then to pixdim, when no sform is present. Volume intent is
// round-tripped through intent_name.

#include <adiaplan/error.hpp>
#include <adiaplan/volume.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace adiaplan {

namespace nifti {

inline constexpr std::size_t header_size = 348;
inline constexpr std::size_t data_offset = 352;
inline constexpr std::int16_t dt_int16 = 4;
inline constexpr std::int16_t dt_float32 = 16;

namespace detail {

template <typename T>
T byteswap_value(T v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

class Reader {
public:
  Reader(const std::vector<unsigned char> &bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    T v;
    std::memcpy(&v, bytes_.data() + offset, sizeof(T));
    return swap_ ? byteswap_value(v) : v;
  }

  std::string text(std::size_t offset, std::size_t len) const {
    std::string s(reinterpret_cast<const char *>(bytes_.data() + offset), len);
    return s.substr(0, s.find('\0'));
  }

private:
  const std::vector<unsigned char> &bytes_;
  bool swap_;
};

class Writer {
public:
  explicit Writer(std::vector<unsigned char> &bytes) : bytes_(bytes) {}

  template <typename T>
  void put(std::size_t offset, T v) {
    std::memcpy(bytes_.data() + offset, &v, sizeof(T));
  }

  void text(std::size_t offset, std::size_t len, const std::string &s) {
    std::memcpy(bytes_.data() + offset, s.data(), std::min(len, s.size()));
  }

private:
  std::vector<unsigned char> &bytes_;
};

inline Eigen::Matrix4d quaternion_affine(const Reader &r) {
  const double b = r.get<float>(256), c = r.get<float>(260), d = r.get<float>(264);
  const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
  Eigen::Matrix3d rot;
  rot << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
         2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
         2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b;
  const double qfac = r.get<float>(76) < 0.0f ? -1.0 : 1.0;
  Eigen::Vector3d pix(r.get<float>(80), r.get<float>(84), qfac * r.get<float>(88));
  Eigen::Matrix4d aff = Eigen::Matrix4d::Identity();
  aff.topLeftCorner<3, 3>() = rot * pix.asDiagonal();
  aff(0, 3) = r.get<float>(268);
  aff(1, 3) = r.get<float>(272);
  aff(2, 3) = r.get<float>(276);
  return aff;
}

} // namespace detail

/// Encodes a volume as a complete .nii byte stream.
inline std::vector<unsigned char> encode(const Volume &v) {
  validate(v);
  const bool is_int16 = v.dtype == DataType::Int16;
  const std::size_t elem = is_int16 ? 2 : 4;
  std::vector<unsigned char> bytes(data_offset + elem * v.size(), 0);
  detail::Writer w(bytes);

  w.put<std::int32_t>(0, static_cast<std::int32_t>(header_size));
  w.put<char>(38, 'r');
  const std::int16_t dim[8] = {3, static_cast<std::int16_t>(v.dims[0]), static_cast<std::int16_t>(v.dims[1]),
                               static_cast<std::int16_t>(v.dims[2]), 1, 1, 1, 1};
  for (std::size_t d = 0; d < 3; ++d)
    if (v.dims[d] > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max()))
      fail(ErrorKind::InvalidArgument, "dimension too large for NIfTI-1");
  for (int i = 0; i < 8; ++i) w.put<std::int16_t>(40 + 2 * i, dim[i]);
  w.put<std::int16_t>(70, is_int16 ? dt_int16 : dt_float32);
  w.put<std::int16_t>(72, static_cast<std::int16_t>(8 * elem));
  const Eigen::Vector3d vox = v.voxel_size_mm();
  const float pixdim[8] = {1.0f, static_cast<float>(vox[0]), static_cast<float>(vox[1]), static_cast<float>(vox[2]), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) w.put<float>(76 + 4 * i, pixdim[i]);
  w.put<float>(108, static_cast<float>(data_offset));
  w.put<float>(112, 1.0f);
  w.put<float>(116, 0.0f);
  w.put<char>(123, 2); // NIFTI_UNITS_MM
  w.text(148, 80, "adiaplan");
  w.put<std::int16_t>(252, 0);
  w.put<std::int16_t>(254, 1);
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 4; ++col) w.put<float>(280 + 16 * row + 4 * col, static_cast<float>(v.affine(row, col)));
  w.text(328, 16, to_string(v.intent));
  w.text(344, 4, std::string("n+1\0", 4));

  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = v.data[i];
    if (is_int16) {
      if (!(x == std::round(x)) || x < std::numeric_limits<std::int16_t>::min() || x > std::numeric_limits<std::int16_t>::max())
        fail(ErrorKind::Validation, "value " + std::to_string(x) + " at voxel " + std::to_string(i) + " is not representable as int16");
      w.put<std::int16_t>(data_offset + 2 * i, static_cast<std::int16_t>(x));
    } else {
      w.put<float>(data_offset + 4 * i, static_cast<float>(x));
    }
  }
  return bytes;
}

inline Volume decode(const std::vector<unsigned char> &bytes) {
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) fail(ErrorKind::UnsupportedFormat, "gzip-compressed NIfTI is not supported");
  if (bytes.size() < data_offset) fail(ErrorKind::CorruptFile, "file shorter than the NIfTI-1 header");
  bool swap = false;
  {
    std::int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, bytes.data(), 4);
    if (sizeof_hdr != static_cast<std::int32_t>(header_size)) {
      if (detail::byteswap_value(sizeof_hdr) != static_cast<std::int32_t>(header_size))
        fail(ErrorKind::UnsupportedFormat, "sizeof_hdr is not 348 (not a NIfTI-1 file)");
      swap = true;
    }
  }
  const detail::Reader r(bytes, swap);
  const std::string magic(reinterpret_cast<const char *>(bytes.data() + 344), 4);
  if (magic != std::string("n+1\0", 4)) fail(ErrorKind::UnsupportedFormat, "only single-file NIfTI-1 ('n+1') is supported");

  const auto ndim = r.get<std::int16_t>(40);
  if (ndim != 3) fail(ErrorKind::UnsupportedFormat, "dim[0] = " + std::to_string(ndim) + "; only 3D volumes are supported");
  Volume v;
  for (int d = 0; d < 3; ++d) {
    const auto n = r.get<std::int16_t>(42 + 2 * d);
    if (n <= 0) fail(ErrorKind::CorruptFile, "non-positive dimension in header");
    v.dims[static_cast<std::size_t>(d)] = static_cast<std::size_t>(n);
  }
  const auto datatype = r.get<std::int16_t>(70);
  std::size_t elem = 0;
  if (datatype == dt_float32) {
    v.dtype = DataType::Float32;
    elem = 4;
  } else if (datatype == dt_int16) {
    v.dtype = DataType::Int16;
    elem = 2;
  } else {
    fail(ErrorKind::UnsupportedFormat, "datatype code " + std::to_string(datatype) + " is not supported (float32=16, int16=4)");
  }
  const float vox_offset = r.get<float>(108);
  if (!(vox_offset >= static_cast<float>(data_offset)) || vox_offset != std::floor(vox_offset))
    fail(ErrorKind::CorruptFile, "invalid vox_offset");
  const auto offset = static_cast<std::size_t>(vox_offset);
  const std::size_t expected = offset + elem * v.size();
  if (bytes.size() != expected)
    fail(ErrorKind::CorruptFile, "file holds " + std::to_string(bytes.size()) + " bytes, header implies " + std::to_string(expected));

  const auto sform_code = r.get<std::int16_t>(254);
  const auto qform_code = r.get<std::int16_t>(252);
  if (sform_code > 0) {
    v.affine = Eigen::Matrix4d::Identity();
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 4; ++col) v.affine(row, col) = r.get<float>(280 + 16 * row + 4 * col);
  } else if (qform_code > 0) {
    v.affine = detail::quaternion_affine(r);
  } else {
    v.affine = Eigen::Matrix4d::Identity();
    for (int d = 0; d < 3; ++d) v.affine(d, d) = r.get<float>(80 + 4 * d);
  }
  v.intent = parse_intent(r.text(328, 16));

  const float slope = r.get<float>(112), inter = r.get<float>(116);
  const bool scaled = std::isfinite(slope) && slope != 0.0f && (slope != 1.0f || inter != 0.0f);
  v.data.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double raw = v.dtype == DataType::Int16 ? static_cast<double>(r.get<std::int16_t>(offset + 2 * i))
                                                  : static_cast<double>(r.get<float>(offset + 4 * i));
    v.data[i] = scaled ? raw * slope + inter : raw;
  }
  if (scaled) v.dtype = DataType::Float32;
  if (v.intent == VolumeIntent::Mask)
    for (double &x : v.data) x = x > 0.5 ? 1.0 : 0.0;
  try {
    validate(v);
  } catch (const Error &e) {
    fail(ErrorKind::CorruptFile, e.detail());
  }
  return v;
}

} // namespace nifti

inline void save_volume(const Volume &v, const std::string &path) {
  const auto bytes = nifti::encode(v);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "failed writing " + path);
}

inline Volume load_volume(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open volume " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return nifti::decode(bytes);
  } catch (const Error &e) {
    throw Error(e.kind(), path + ": " + e.detail());
  }
}

} // namespace adiaplan
