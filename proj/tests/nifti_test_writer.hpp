// Independent NIFTI-1 writer for round-trip testing. Deliberately written
// from the format description, sharing no code with the library reader or
// writer: explicit byte-by-byte header assembly with optional big-endian
// output.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace testnifti {

struct Spec {
  int16_t dims[4] = {1, 1, 1, 1};       // nx ny nz nt
  float pixdim[3] = {1.f, 1.f, 1.f};    // sx sy sz
  float srow[12] = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};  // row-major 3x4
  int16_t sform_code = 1;
  int16_t datatype = 2;  // 2=uint8 4=int16 512=uint16 16=float32
  bool big_endian = false;
};

namespace detail {

inline void put_bytes(std::vector<unsigned char>& h, size_t off, const void* p, size_t n,
                      bool swap) {
  const unsigned char* b = static_cast<const unsigned char*>(p);
  for (size_t i = 0; i < n; ++i) h[off + i] = swap ? b[n - 1 - i] : b[i];
}

template <typename T>
void put(std::vector<unsigned char>& h, size_t off, T v, bool swap) {
  put_bytes(h, off, &v, sizeof(T), swap);
}

}  // namespace detail

// values are truncated/cast to the requested datatype by the caller's
// responsibility; they are stored verbatim per element.
inline void write(const std::string& path, const Spec& s, const std::vector<double>& values) {
  using detail::put;
  size_t nvox = static_cast<size_t>(s.dims[0]) * s.dims[1] * s.dims[2] * s.dims[3];
  if (values.size() != nvox) throw std::runtime_error("testnifti: value count mismatch");
  bool sw = s.big_endian;  // host assumed little-endian (x86/arm64 test boxes)

  std::vector<unsigned char> h(352, 0);
  put<int32_t>(h, 0, 348, sw);
  put<int16_t>(h, 40, 4, sw);  // ndim
  for (int i = 0; i < 4; ++i) put<int16_t>(h, 42 + 2 * i, s.dims[i], sw);
  for (int i = 4; i < 7; ++i) put<int16_t>(h, 42 + 2 * i, 1, sw);
  put<int16_t>(h, 70, s.datatype, sw);
  int16_t bitpix = s.datatype == 2 ? 8 : (s.datatype == 16 ? 32 : 16);
  put<int16_t>(h, 72, bitpix, sw);
  put<float>(h, 76, 1.f, sw);
  for (int i = 0; i < 3; ++i) put<float>(h, 80 + 4 * i, s.pixdim[i], sw);
  put<float>(h, 108, 352.f, sw);  // vox_offset
  put<int16_t>(h, 252, 0, sw);    // qform_code
  put<int16_t>(h, 254, s.sform_code, sw);
  for (int i = 0; i < 12; ++i) put<float>(h, 280 + 4 * i, s.srow[i], sw);
  h[344] = 'n';
  h[345] = '+';
  h[346] = '1';
  h[347] = 0;

  std::ofstream out(path, std::ios::binary);
  if (!out.good()) throw std::runtime_error("testnifti: cannot open " + path);
  out.write(reinterpret_cast<const char*>(h.data()), 352);
  std::vector<unsigned char> buf;
  for (double v : values) {
    unsigned char e[4];
    size_t n = 0;
    switch (s.datatype) {
      case 2: {
        e[0] = static_cast<unsigned char>(static_cast<uint8_t>(v));
        n = 1;
        break;
      }
      case 4: {
        int16_t x = static_cast<int16_t>(v);
        std::memcpy(e, &x, 2);
        n = 2;
        break;
      }
      case 512: {
        uint16_t x = static_cast<uint16_t>(v);
        std::memcpy(e, &x, 2);
        n = 2;
        break;
      }
      case 16: {
        float x = static_cast<float>(v);
        std::memcpy(e, &x, 4);
        n = 4;
        break;
      }
      default: throw std::runtime_error("testnifti: datatype");
    }
    if (sw)
      for (size_t i = 0; i < n; ++i) buf.push_back(e[n - 1 - i]);
    else
      for (size_t i = 0; i < n; ++i) buf.push_back(e[i]);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out.good()) throw std::runtime_error("testnifti: write failure");
}

}  // namespace testnifti
