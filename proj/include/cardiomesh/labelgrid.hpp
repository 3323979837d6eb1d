#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cardiomesh/core.hpp"

namespace cardio {

enum class View { LAX2CH, LAX3CH, LAX4CH, SAX };

inline std::string to_string(View v) {
  switch (v) {
    case View::LAX2CH: return "LAX2CH";
    case View::LAX3CH: return "LAX3CH";
    case View::LAX4CH: return "LAX4CH";
    case View::SAX: return "SAX";
  }
  return "?";
}

inline View view_from_string(const std::string& s) {
  if (s == "LAX2CH" || s == "2ch") return View::LAX2CH;
  if (s == "LAX3CH" || s == "3ch") return View::LAX3CH;
  if (s == "LAX4CH" || s == "4ch") return View::LAX4CH;
  if (s == "SAX" || s == "sax") return View::SAX;
  throw Error("unknown view name: " + s);
}

// Structure names used in per-view label maps.
// Codes are injected via config; only the names are fixed.
namespace label {
inline const std::string LV_CAVITY = "lv_cavity";
inline const std::string LV_MYO = "lv_myo";
inline const std::string RV_CAVITY = "rv_cavity";
inline const std::string LA_CAVITY = "la_cavity";
inline const std::string RA_CAVITY = "ra_cavity";
inline const std::string AORTA = "aorta";
}  // namespace label

using LabelMap = std::map<std::string, int>;

// Integer label grid for one CMR view, 2D+t (LAX, nz=1) or 3D+t (SAX),
// with a voxel-index -> patient-mm affine. Immutable after construction.
class LabelVolume {
public:
  LabelVolume(std::array<int, 4> dims, std::array<double, 3> spacing, Mat4 affine,
              std::vector<int32_t> data, View view, LabelMap label_map)
      : dims_(dims), spacing_(spacing), affine_(affine), data_(std::move(data)),
        view_(view), label_map_(std::move(label_map)) {
    require(dims_[0] > 0 && dims_[1] > 0 && dims_[2] > 0 && dims_[3] > 0,
            "LabelVolume: non-positive dimension");
    require(static_cast<size_t>(dims_[0]) * dims_[1] * dims_[2] * dims_[3] == data_.size(),
            "LabelVolume: data size does not match dims");
    require(std::abs(affine_.block<3, 3>(0, 0).determinant()) > 1e-12,
            "LabelVolume: singular affine orientation block");
    for (int32_t v : data_) {
      if (v == 0) continue;
      bool known = false;
      for (const auto& [name, code] : label_map_)
        if (code == v) { known = true; break; }
      require(known, "LabelVolume: label code " + std::to_string(v) + " not in label map");
    }
  }

  int nx() const { return dims_[0]; }
  int ny() const { return dims_[1]; }
  int nz() const { return dims_[2]; }
  int nt() const { return dims_[3]; }
  const std::array<double, 3>& spacing() const { return spacing_; }
  const Mat4& affine() const { return affine_; }
  View view() const { return view_; }
  const LabelMap& label_map() const { return label_map_; }

  std::optional<int> label_code(const std::string& name) const {
    auto it = label_map_.find(name);
    if (it == label_map_.end()) return std::nullopt;
    return it->second;
  }

  int32_t at(int i, int j, int k, int t) const {
    return data_[index(i, j, k, t)];
  }

  size_t index(int i, int j, int k, int t) const {
    require(i >= 0 && i < dims_[0] && j >= 0 && j < dims_[1] && k >= 0 && k < dims_[2] &&
                t >= 0 && t < dims_[3],
            "LabelVolume: index out of bounds");
    return ((static_cast<size_t>(t) * dims_[2] + k) * dims_[1] + j) * dims_[0] + i;
  }

  const std::vector<int32_t>& data() const { return data_; }

private:
  std::array<int, 4> dims_;
  std::array<double, 3> spacing_;
  Mat4 affine_;
  std::vector<int32_t> data_;
  View view_;
  LabelMap label_map_;
};

inline Vec3 voxel_to_patient(const LabelVolume& vol, int i, int j, int k) {
  require(i >= 0 && i < vol.nx() && j >= 0 && j < vol.ny() && k >= 0 && k < vol.nz(),
          "voxel_to_patient: index out of bounds");
  Eigen::Vector4d h(static_cast<double>(i), static_cast<double>(j),
                    static_cast<double>(k), 1.0);
  Eigen::Vector4d p = vol.affine() * h;
  return p.head<3>();
}

// Count voxels equal to `code` in one frame, optionally restricted to a
// closed slice range [slice_lo, slice_hi].
inline long count_label(const LabelVolume& vol, int frame, int code,
                        std::optional<std::pair<int, int>> slices = std::nullopt) {
  require(frame >= 0 && frame < vol.nt(), "count_label: frame out of range");
  int k0 = 0, k1 = vol.nz() - 1;
  if (slices) {
    k0 = slices->first;
    k1 = slices->second;
    require(k0 >= 0 && k1 < vol.nz() && k0 <= k1, "count_label: slice range out of range");
  }
  long n = 0;
  for (int k = k0; k <= k1; ++k)
    for (int j = 0; j < vol.ny(); ++j)
      for (int i = 0; i < vol.nx(); ++i)
        if (vol.at(i, j, k, frame) == code) ++n;
  return n;
}

// One subject's segmentations, at most one volume per view, shared nt.
struct ViewSet {
  std::string subject_id;
  std::map<View, LabelVolume> volumes;

  void add(LabelVolume vol) {
    require(!volumes.count(vol.view()), "ViewSet: duplicate view " + to_string(vol.view()));
    if (!volumes.empty())
      require(volumes.begin()->second.nt() == vol.nt(), "ViewSet: views disagree on frame count");
    volumes.emplace(vol.view(), std::move(vol));
  }

  const LabelVolume* get(View v) const {
    auto it = volumes.find(v);
    return it == volumes.end() ? nullptr : &it->second;
  }

  int nt() const {
    require(!volumes.empty(), "ViewSet: empty");
    return volumes.begin()->second.nt();
  }
};

namespace nifti_detail {

inline bool needs_swap(const char* hdr) {
  int32_t sz;
  std::memcpy(&sz, hdr, 4);
  if (sz == 348) return false;
  int32_t sw = __builtin_bswap32(static_cast<uint32_t>(sz));
  require(sw == 348, "read_nifti: sizeof_hdr is not 348 in either byte order");
  return true;
}

template <typename T>
T read_field(const char* hdr, size_t off, bool swap) {
  T v;
  std::memcpy(&v, hdr + off, sizeof(T));
  if (swap) {
    if constexpr (sizeof(T) == 2) {
      uint16_t u;
      std::memcpy(&u, &v, 2);
      u = __builtin_bswap16(u);
      std::memcpy(&v, &u, 2);
    } else if constexpr (sizeof(T) == 4) {
      uint32_t u;
      std::memcpy(&u, &v, 4);
      u = __builtin_bswap32(u);
      std::memcpy(&v, &u, 4);
    }
  }
  return v;
}

// qform quaternion -> rotation matrix, per the NIFTI-1 standard.
inline Mat3 quaternion_rotation(double b, double c, double d, double qfac) {
  double t = 1.0 - b * b - c * c - d * d;
  double a = t > 0 ? std::sqrt(t) : 0.0;
  Mat3 r;
  r << a * a + b * b - c * c - d * d, 2 * b * c - 2 * a * d, 2 * b * d + 2 * a * c,
       2 * b * c + 2 * a * d, a * a + c * c - b * b - d * d, 2 * c * d - 2 * a * b,
       2 * b * d - 2 * a * c, 2 * c * d + 2 * a * b, a * a + d * d - c * c - b * b;
  if (qfac < 0) r.col(2) *= -1.0;
  return r;
}

}  // namespace nifti_detail

// Strict NIFTI-1 single-file reader: uncompressed .nii only, datatypes
// uint8/int16/uint16/float32 (float labels must be integral). The affine is
// taken from srow_* when sform_code>0, else the qform quaternion, else a
// diagonal spacing map. Both byte orders accepted.
inline LabelVolume read_nifti(const std::string& path, View view, LabelMap label_map) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "read_nifti: cannot open " + path);
  char magic2[2] = {0, 0};
  in.read(magic2, 2);
  require(in.gcount() == 2, "read_nifti: file too short: " + path);
  require(!(static_cast<unsigned char>(magic2[0]) == 0x1f &&
            static_cast<unsigned char>(magic2[1]) == 0x8b),
          "read_nifti: gzip input not supported, decompress " + path + " first");
  in.seekg(0);
  char hdr[348];
  in.read(hdr, 348);
  require(in.gcount() == 348, "read_nifti: truncated header: " + path);

  using namespace nifti_detail;
  bool swap = needs_swap(hdr);
  require(std::memcmp(hdr + 344, "n+1", 3) == 0, "read_nifti: magic is not n+1 (single-file)");

  std::array<int16_t, 8> dim;
  for (int i = 0; i < 8; ++i) dim[i] = read_field<int16_t>(hdr, 40 + 2 * i, swap);
  require(dim[0] >= 1 && dim[0] <= 7, "read_nifti: bad ndim");
  int nx = dim[1], ny = dim[0] >= 2 ? dim[2] : 1, nz = dim[0] >= 3 ? dim[3] : 1,
      nt = dim[0] >= 4 ? dim[4] : 1;
  if (nt == 0) nt = 1;
  require(nx > 0 && ny > 0 && nz > 0 && nt > 0, "read_nifti: non-positive dims");

  int16_t datatype = read_field<int16_t>(hdr, 70, swap);
  std::array<float, 8> pixdim;
  for (int i = 0; i < 8; ++i) pixdim[i] = read_field<float>(hdr, 76 + 4 * i, swap);
  float vox_offset = read_field<float>(hdr, 108, swap);
  int16_t qform_code = read_field<int16_t>(hdr, 252, swap);
  int16_t sform_code = read_field<int16_t>(hdr, 254, swap);

  Mat4 affine = Mat4::Identity();
  if (sform_code > 0) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        affine(r, c) = read_field<float>(hdr, 280 + 16 * r + 4 * c, swap);
  } else if (qform_code > 0) {
    double b = read_field<float>(hdr, 256, swap);
    double c = read_field<float>(hdr, 260, swap);
    double d = read_field<float>(hdr, 264, swap);
    double qfac = pixdim[0] >= 0 ? 1.0 : -1.0;
    Mat3 r = quaternion_rotation(b, c, d, qfac);
    for (int col = 0; col < 3; ++col) affine.block<3, 1>(0, col) = r.col(col) * pixdim[col + 1];
    affine(0, 3) = read_field<float>(hdr, 268, swap);
    affine(1, 3) = read_field<float>(hdr, 272, swap);
    affine(2, 3) = read_field<float>(hdr, 276, swap);
  } else {
    affine(0, 0) = pixdim[1];
    affine(1, 1) = pixdim[2];
    affine(2, 2) = pixdim[3];
  }

  size_t nvox = static_cast<size_t>(nx) * ny * nz * nt;
  size_t off = static_cast<size_t>(vox_offset);
  require(off >= 348, "read_nifti: vox_offset before end of header");
  in.seekg(static_cast<std::streamoff>(off));

  std::vector<int32_t> data(nvox);
  auto read_all = [&](auto tag, size_t elem_size) {
    using Elem = decltype(tag);
    std::vector<Elem> buf(nvox);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(nvox * elem_size));
    require(static_cast<size_t>(in.gcount()) == nvox * elem_size,
            "read_nifti: truncated data section: " + path);
    for (size_t i = 0; i < nvox; ++i) {
      Elem v = buf[i];
      if (swap && elem_size == 2) {
        uint16_t u;
        std::memcpy(&u, &v, 2);
        u = __builtin_bswap16(u);
        std::memcpy(&v, &u, 2);
      } else if (swap && elem_size == 4) {
        uint32_t u;
        std::memcpy(&u, &v, 4);
        u = __builtin_bswap32(u);
        std::memcpy(&v, &u, 4);
      }
      if constexpr (std::is_same_v<Elem, float>) {
        require(std::floor(v) == v, "read_nifti: non-integral float label value");
        data[i] = static_cast<int32_t>(v);
      } else {
        data[i] = static_cast<int32_t>(v);
      }
    }
  };

  switch (datatype) {
    case 2: read_all(uint8_t{}, 1); break;    // DT_UINT8
    case 4: read_all(int16_t{}, 2); break;    // DT_INT16
    case 512: read_all(uint16_t{}, 2); break; // DT_UINT16
    case 16: read_all(float{}, 4); break;     // DT_FLOAT32
    default:
      throw Error("read_nifti: unsupported datatype " + std::to_string(datatype) +
                  " (supported: uint8, int16, uint16, float32)");
  }

  std::array<double, 3> spacing = {std::abs(pixdim[1]), std::abs(pixdim[2]), std::abs(pixdim[3])};
  if (spacing[2] == 0.0) spacing[2] = 1.0;
  return LabelVolume({nx, ny, nz, nt}, spacing, affine, std::move(data), view,
                     std::move(label_map));
}

// Minimal NIFTI-1 single-file writer (int16 data, native byte order, sform
// affine). Labels must fit in int16.
inline void write_nifti(const LabelVolume& vol, const std::string& path) {
  char hdr[352] = {};
  auto put = [&](size_t off, auto v) { std::memcpy(hdr + off, &v, sizeof(v)); };
  put(0, int32_t{348});
  int16_t dim[8] = {4, static_cast<int16_t>(vol.nx()), static_cast<int16_t>(vol.ny()),
                    static_cast<int16_t>(vol.nz()), static_cast<int16_t>(vol.nt()), 1, 1, 1};
  for (int i = 0; i < 8; ++i) put(40 + 2 * i, dim[i]);
  put(70, int16_t{4});   // DT_INT16
  put(72, int16_t{16});  // bitpix
  float pixdim[8] = {1.0f, static_cast<float>(vol.spacing()[0]),
                     static_cast<float>(vol.spacing()[1]), static_cast<float>(vol.spacing()[2]),
                     1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) put(76 + 4 * i, pixdim[i]);
  put(108, float{352});  // vox_offset
  put(252, int16_t{0});  // qform_code
  put(254, int16_t{1});  // sform_code
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      put(280 + 16 * r + 4 * c, static_cast<float>(vol.affine()(r, c)));
  std::memcpy(hdr + 344, "n+1\0", 4);

  std::ofstream out(path, std::ios::binary);
  require(out.good(), "write_nifti: cannot open " + path);
  out.write(hdr, 352);
  std::vector<int16_t> buf(vol.data().size());
  for (size_t i = 0; i < buf.size(); ++i) {
    require(vol.data()[i] >= std::numeric_limits<int16_t>::min() &&
                vol.data()[i] <= std::numeric_limits<int16_t>::max(),
            "write_nifti: label out of int16 range");
    buf[i] = static_cast<int16_t>(vol.data()[i]);
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * 2));
  require(out.good(), "write_nifti: write failure on " + path);
}

}  // namespace cardio
