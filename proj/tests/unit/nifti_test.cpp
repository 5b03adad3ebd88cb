#include "doctest.h"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "atlaspl/nifti.hpp"
#include "atlaspl/phantom.hpp"
#include "support/helpers.hpp"

using namespace atlaspl;
using testing_support::TempDir;

namespace {

// Minimal hand-built header: int16 data with a scale factor, written without
// going through save_volume.
std::string handmade_int16(Dims d, float slope, float inter, short dim0 = 3) {
  std::string bytes(352, '\0');
  auto put = [&](std::size_t off, const auto& v) { std::memcpy(bytes.data() + off, &v, sizeof(v)); };
  put(0, std::int32_t{348});
  const std::int16_t dims[8] = {dim0, static_cast<std::int16_t>(d.x), static_cast<std::int16_t>(d.y),
                                static_cast<std::int16_t>(d.z), 1, 1, 1, 1};
  std::memcpy(bytes.data() + 40, dims, sizeof(dims));
  put(70, std::int16_t{4});   // datatype int16
  put(72, std::int16_t{16});  // bitpix
  const float pix[8] = {1.0f, 2.0f, 1.5f, 3.0f, 0, 0, 0, 0};
  std::memcpy(bytes.data() + 76, pix, sizeof(pix));
  put(108, 352.0f);
  put(112, slope);
  put(116, inter);
  std::memcpy(bytes.data() + 344, "n+1\0", 4);
  for (std::size_t n = 0; n < d.count(); ++n) {
    const auto v = static_cast<std::int16_t>(static_cast<int>(n) - 5);
    bytes.append(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  return bytes;
}

void write_raw(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("float volume round-trips") {
  TempDir tmp("nifti");
  PhantomSpec spec = PhantomSpec::desk_default();
  spec.seed = 3;
  const Subject s = generate_subject(spec, 0);
  save_volume(s.image, tmp / "img.nii");
  const Volume back = load_volume(tmp / "img.nii");
  CHECK(back.dims() == Dims{64, 64, 64});
  CHECK(back.spacing() == s.image.spacing());
  CHECK(back == s.image);
}

TEST_CASE("label map round-trips with the narrowest integer type") {
  TempDir tmp("nifti");
  LabelMap m(Dims{5, 4, 3}, Spacing{0.5, 1.0, 2.0});
  for (std::size_t n = 0; n < m.size(); ++n) m[n] = static_cast<std::uint16_t>(n % 4);
  save_volume(m, tmp / "lab.nii");
  CHECK(load_labels(tmp / "lab.nii") == m);
  CHECK(std::filesystem::file_size(tmp / "lab.nii") == 352 + m.size());

  m[0] = 300;
  save_volume(m, tmp / "wide.nii");
  CHECK(load_labels(tmp / "wide.nii") == m);
  CHECK(std::filesystem::file_size(tmp / "wide.nii") == 352 + 2 * m.size());
}

TEST_CASE("scale slope and intercept are applied") {
  TempDir tmp("nifti");
  const Dims d{3, 2, 2};
  write_raw(tmp / "scaled.nii", handmade_int16(d, 0.5f, 10.0f));
  const Volume v = load_volume(tmp / "scaled.nii");
  CHECK(v.spacing() == Spacing{2.0, 1.5, 3.0});
  for (std::size_t n = 0; n < v.size(); ++n) CHECK(v[n] == doctest::Approx((static_cast<int>(n) - 5) * 0.5 + 10.0));
}

TEST_CASE("gzip input is accepted") {
  TempDir tmp("nifti");
  const std::string raw = handmade_int16(Dims{3, 2, 2}, 1.0f, 0.0f);
  const auto gz = (tmp / "img.nii.gz").string();
  gzFile f = gzopen(gz.c_str(), "wb");
  gzwrite(f, raw.data(), static_cast<unsigned>(raw.size()));
  gzclose(f);
  const Volume v = load_volume(gz);
  CHECK(v.dims() == Dims{3, 2, 2});
  CHECK(v[0] == -5.0f);
}

TEST_CASE("malformed inputs") {
  TempDir tmp("nifti");
  SUBCASE("wrong magic") {
    std::string raw = handmade_int16(Dims{2, 2, 2}, 1.0f, 0.0f);
    std::memcpy(raw.data() + 344, "ni1\0", 4);
    write_raw(tmp / "bad.nii", raw);
    CHECK_THROWS_AS(load_volume(tmp / "bad.nii"), FormatError);
  }
  SUBCASE("4D header") {
    write_raw(tmp / "four.nii", handmade_int16(Dims{2, 2, 2}, 1.0f, 0.0f, 4));
    CHECK_THROWS_AS(load_volume(tmp / "four.nii"), UnsupportedShapeError);
  }
  SUBCASE("truncated data") {
    std::string raw = handmade_int16(Dims{2, 2, 2}, 1.0f, 0.0f);
    raw.resize(raw.size() - 3);
    write_raw(tmp / "short.nii", raw);
    CHECK_THROWS_AS(load_volume(tmp / "short.nii"), FormatError);
  }
  SUBCASE("fractional labels") {
    write_raw(tmp / "frac.nii", handmade_int16(Dims{2, 2, 2}, 0.5f, 0.0f));
    CHECK_THROWS_AS(load_labels(tmp / "frac.nii"), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_volume(tmp / "nope.nii"), IoError); }
}

TEST_CASE("saving into a missing directory is an I/O error naming the path") {
  TempDir tmp("nifti");
  const Volume v(Dims{2, 2, 2}, {});
  const auto target = tmp / "no/such/dir/x.nii";
  try {
    save_volume(v, target);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(target.string()) != std::string::npos);
  }
}
