#include "atlaspl/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace atlaspl {
namespace {

struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");
static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");

constexpr std::int16_t kUint8 = 2;
constexpr std::int16_t kInt16 = 4;
constexpr std::int16_t kInt32 = 8;
constexpr std::int16_t kFloat32 = 16;
constexpr std::int16_t kComplex64 = 32;
constexpr std::int16_t kFloat64 = 64;
constexpr std::int16_t kRgb24 = 128;
constexpr std::int16_t kComplex128 = 1792;
constexpr std::int16_t kRgba32 = 2304;
constexpr std::int16_t kIntentVector = 1007;
constexpr std::int16_t kIntentRgb = 2003;
constexpr std::int16_t kIntentRgba = 2004;

template <typename T>
void swap_bytes(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  std::reverse(p, p + sizeof(T));
}

template <typename T, std::size_t N>
void swap_bytes(T (&arr)[N]) {
  for (auto& v : arr) swap_bytes(v);
}

void swap_header(Nifti1Header& h) {
  swap_bytes(h.sizeof_hdr);
  swap_bytes(h.extents);
  swap_bytes(h.session_error);
  swap_bytes(h.dim);
  swap_bytes(h.intent_p1);
  swap_bytes(h.intent_p2);
  swap_bytes(h.intent_p3);
  swap_bytes(h.intent_code);
  swap_bytes(h.datatype);
  swap_bytes(h.bitpix);
  swap_bytes(h.slice_start);
  swap_bytes(h.pixdim);
  swap_bytes(h.vox_offset);
  swap_bytes(h.scl_slope);
  swap_bytes(h.scl_inter);
  swap_bytes(h.slice_end);
  swap_bytes(h.cal_max);
  swap_bytes(h.cal_min);
  swap_bytes(h.slice_duration);
  swap_bytes(h.toffset);
  swap_bytes(h.glmax);
  swap_bytes(h.glmin);
  swap_bytes(h.qform_code);
  swap_bytes(h.sform_code);
  swap_bytes(h.quatern_b);
  swap_bytes(h.quatern_c);
  swap_bytes(h.quatern_d);
  swap_bytes(h.qoffset_x);
  swap_bytes(h.qoffset_y);
  swap_bytes(h.qoffset_z);
  swap_bytes(h.srow_x);
  swap_bytes(h.srow_y);
  swap_bytes(h.srow_z);
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  // gzread passes uncompressed files through unchanged.
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> buf;
  unsigned char chunk[1 << 16];
  for (;;) {
    const int n = gzread(f, chunk, sizeof(chunk));
    if (n < 0) {
      gzclose(f);
      throw FormatError(path.string() + ": read/decompression failure");
    }
    if (n == 0) break;
    buf.insert(buf.end(), chunk, chunk + n);
  }
  gzclose(f);
  return buf;
}

struct Decoded {
  Dims dims;
  Spacing spacing;
  std::vector<double> values;
};

template <typename T>
void decode_as(const unsigned char* src, std::size_t n, bool swap, std::vector<double>& out) {
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, src + i * sizeof(T), sizeof(T));
    if (swap) swap_bytes(v);
    out[i] = static_cast<double>(v);
  }
}

Decoded decode(const std::filesystem::path& path) {
  const auto buf = read_all(path);
  if (buf.size() < sizeof(Nifti1Header)) {
    throw FormatError(path.string() + ": file shorter than a NIfTI-1 header");
  }
  Nifti1Header h;
  std::memcpy(&h, buf.data(), sizeof(h));
  bool swap = false;
  if (h.sizeof_hdr != 348) {
    swap_bytes(h.sizeof_hdr);
    if (h.sizeof_hdr != 348) throw FormatError(path.string() + ": bad sizeof_hdr");
    swap_bytes(h.sizeof_hdr);
    swap_header(h);
    swap = true;
  }
  if (std::memcmp(h.magic, "n+1\0", 4) != 0) {
    throw FormatError(path.string() + ": magic is not \"n+1\" (single-file NIfTI-1 required)");
  }
  if (h.dim[0] != 3) {
    throw UnsupportedShapeError(path.string() + ": expected a 3D image, header dim[0]=" +
                                std::to_string(h.dim[0]));
  }
  if (h.intent_code == kIntentVector || h.intent_code == kIntentRgb ||
      h.intent_code == kIntentRgba) {
    throw UnsupportedShapeError(path.string() + ": vector-valued data is not supported");
  }
  Decoded out;
  out.dims = {h.dim[1], h.dim[2], h.dim[3]};
  if (out.dims.x <= 0 || out.dims.y <= 0 || out.dims.z <= 0) {
    throw FormatError(path.string() + ": non-positive dimension");
  }
  auto sp = [](float f) { return (std::isfinite(f) && f != 0.0f) ? std::abs(static_cast<double>(f)) : 1.0; };
  out.spacing = {sp(h.pixdim[1]), sp(h.pixdim[2]), sp(h.pixdim[3])};

  std::size_t width = 0;
  switch (h.datatype) {
    case kUint8: width = 1; break;
    case kInt16: width = 2; break;
    case kInt32:
    case kFloat32: width = 4; break;
    case kFloat64: width = 8; break;
    case kRgb24:
    case kRgba32:
    case kComplex64:
    case kComplex128:
      throw UnsupportedShapeError(path.string() + ": vector/complex datatype " +
                                  std::to_string(h.datatype));
    default:
      throw FormatError(path.string() + ": unsupported datatype " + std::to_string(h.datatype));
  }
  if (!std::isfinite(h.vox_offset) || h.vox_offset < 348.0f) {
    throw FormatError(path.string() + ": invalid vox_offset");
  }
  for (const float* row : {h.srow_x, h.srow_y, h.srow_z}) {
    for (int c = 0; c < 4; ++c) {
      if (h.sform_code > 0 && !std::isfinite(row[c])) throw FormatError(path.string() + ": non-finite sform");
    }
  }
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  const std::size_t n = out.dims.count();
  if (buf.size() < offset + n * width) {
    throw FormatError(path.string() + ": truncated voxel data");
  }
  const unsigned char* src = buf.data() + offset;
  switch (h.datatype) {
    case kUint8: decode_as<std::uint8_t>(src, n, swap, out.values); break;
    case kInt16: decode_as<std::int16_t>(src, n, swap, out.values); break;
    case kInt32: decode_as<std::int32_t>(src, n, swap, out.values); break;
    case kFloat32: decode_as<float>(src, n, swap, out.values); break;
    case kFloat64: decode_as<double>(src, n, swap, out.values); break;
  }
  if (std::isfinite(h.scl_slope) && h.scl_slope != 0.0f &&
      !(h.scl_slope == 1.0f && h.scl_inter == 0.0f)) {
    const double slope = h.scl_slope;
    const double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
    for (auto& v : out.values) v = v * slope + inter;
  }
  return out;
}

Nifti1Header make_header(const Dims& d, const Spacing& s, std::int16_t datatype, std::int16_t bitpix) {
  Nifti1Header h;
  std::memset(&h, 0, sizeof(h));
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(d.x);
  h.dim[2] = static_cast<std::int16_t>(d.y);
  h.dim[3] = static_cast<std::int16_t>(d.z);
  for (int a = 4; a < 8; ++a) h.dim[a] = 1;
  h.datatype = datatype;
  h.bitpix = bitpix;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(s.x);
  h.pixdim[2] = static_cast<float>(s.y);
  h.pixdim[3] = static_cast<float>(s.z);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // mm
  h.sform_code = 1;
  h.srow_x[0] = h.pixdim[1];
  h.srow_y[1] = h.pixdim[2];
  h.srow_z[2] = h.pixdim[3];
  std::memcpy(h.magic, "n+1\0", 4);
  return h;
}

void check_writable_dims(const Dims& d) {
  constexpr int kMax = std::numeric_limits<std::int16_t>::max();
  if (d.x > kMax || d.y > kMax || d.z > kMax) {
    throw ShapeError("grid " + to_string(d) + " exceeds NIfTI-1 dimension limit");
  }
}

template <typename Raw>
void write_file(const std::filesystem::path& path, const Nifti1Header& h, const std::vector<Raw>& raw) {
  std::vector<char> bytes(352 + raw.size() * sizeof(Raw), 0);
  std::memcpy(bytes.data(), &h, sizeof(h));
  if (!raw.empty()) std::memcpy(bytes.data() + 352, raw.data(), raw.size() * sizeof(Raw));

  if (path.extension() == ".gz") {
    gzFile f = gzopen(path.string().c_str(), "wb");
    if (f == nullptr) throw IoError("cannot open " + path.string() + " for writing");
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    if (gzclose(f) != Z_OK || n != static_cast<int>(bytes.size())) {
      throw IoError("write failed: " + path.string());
    }
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

template <typename Src>
void save_float32(const Grid<Src>& v, const std::filesystem::path& path) {
  check_writable_dims(v.dims());
  std::vector<float> raw(v.size());
  for (std::size_t n = 0; n < v.size(); ++n) raw[n] = static_cast<float>(v[n]);
  write_file(path, make_header(v.dims(), v.spacing(), kFloat32, 32), raw);
}

}  // namespace

Volume load_volume(const std::filesystem::path& path) {
  auto d = decode(path);
  std::vector<float> vals(d.values.size());
  for (std::size_t n = 0; n < vals.size(); ++n) vals[n] = static_cast<float>(d.values[n]);
  Volume v(d.dims, d.spacing, std::move(vals));
  require_finite(v);
  return v;
}

LabelMap load_labels(const std::filesystem::path& path) {
  auto d = decode(path);
  std::vector<std::uint16_t> vals(d.values.size());
  for (std::size_t n = 0; n < vals.size(); ++n) {
    const double x = d.values[n];
    if (!(x >= 0.0 && x <= 65535.0) || x != std::floor(x)) {
      throw FormatError(path.string() + ": label value " + std::to_string(x) +
                        " is not a non-negative integer");
    }
    vals[n] = static_cast<std::uint16_t>(x);
  }
  return LabelMap(d.dims, d.spacing, std::move(vals));
}

void save_volume(const Volume& v, const std::filesystem::path& path) { save_float32(v, path); }

void save_volume(const ScalarField& v, const std::filesystem::path& path) { save_float32(v, path); }

void save_volume(const LabelMap& v, const std::filesystem::path& path) {
  check_writable_dims(v.dims());
  const int top = max_label(v);
  if (top <= 255) {
    std::vector<std::uint8_t> raw(v.values().begin(), v.values().end());
    write_file(path, make_header(v.dims(), v.spacing(), kUint8, 8), raw);
  } else if (top <= 32767) {
    std::vector<std::int16_t> raw(v.values().begin(), v.values().end());
    write_file(path, make_header(v.dims(), v.spacing(), kInt16, 16), raw);
  } else {
    std::vector<std::int32_t> raw(v.values().begin(), v.values().end());
    write_file(path, make_header(v.dims(), v.spacing(), kInt32, 32), raw);
  }
}

}  // namespace atlaspl
