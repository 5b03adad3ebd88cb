#include "doctest.h"

#include <cmath>
#include <vector>

#include "atlaspl/phantom.hpp"
#include "atlaspl/rng.hpp"
#include "atlaspl/similarity.hpp"
#include "support/helpers.hpp"
#include "support/oracles.hpp"

using namespace atlaspl;
using testing_support::noise_volume;
using testing_support::TempDir;

namespace {

Volume line(std::vector<float> v) {
  const int n = static_cast<int>(v.size());
  return Volume(Dims{n, 1, 1}, {}, std::move(v));
}

}  // namespace

TEST_CASE("bin_index follows the min-max formula") {
  const IntensityRange r{0.0, 10.0};
  CHECK(bin_index(0.0, r, 4) == 0);
  CHECK(bin_index(2.49, r, 4) == 0);
  CHECK(bin_index(2.5, r, 4) == 1);
  CHECK(bin_index(9.99, r, 4) == 3);
  CHECK(bin_index(10.0, r, 4) == 3);
  CHECK(bin_index(7.0, IntensityRange{7.0, 7.0}, 4) == 0);
}

TEST_CASE("joint histogram") {
  SUBCASE("identical inputs fill the diagonal") {
    const Volume x = line({0, 1, 2, 3});
    const auto h = joint_histogram(x, x, 4);
    CHECK(h.n == 4);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) CHECK(h.count(a, b) == (a == b ? 1 : 0));
  }
  SUBCASE("constant x puts all mass in row 0") {
    const auto h = joint_histogram(line({5, 5, 5, 5}), line({0, 1, 2, 3}), 4);
    std::int64_t row0 = 0;
    for (int b = 0; b < 4; ++b) row0 += h.count(0, b);
    CHECK(row0 == 4);
  }
  SUBCASE("hand-computed 2-bin case") {
    const auto h = joint_histogram(line({0, 1}), line({1, 0}), 2);
    CHECK(h.count(0, 1) == 1);
    CHECK(h.count(1, 0) == 1);
    CHECK(h.count(0, 0) == 0);
    CHECK(h.count(1, 1) == 0);
  }
  SUBCASE("counts sum to n") {
    const Volume a = noise_volume(Dims{9, 8, 7}, 1), b = noise_volume(Dims{9, 8, 7}, 2);
    const auto h = joint_histogram(a, b, 16);
    std::int64_t total = 0;
    for (auto c : h.counts) total += c;
    CHECK(total == h.n);
    CHECK(h.n == 9 * 8 * 7);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(joint_histogram(line({0, 1}), line({0, 1, 2}), 4), ShapeError);
    CHECK_THROWS_AS(joint_histogram(line({0, 1}), line({0, 1}), 1), DegenerateInputError);
  }
}

TEST_CASE("mutual information identities") {
  const Volume a = noise_volume(Dims{16, 16, 16}, 4, 0.0, 100.0);

  const auto self = joint_histogram(a, a, 64);
  CHECK(std::abs(mutual_information(self) - marginal_entropy_x(self)) <= 1e-12);

  Volume flat(a.dims(), {}, 3.0f);
  CHECK(mutual_information(joint_histogram(flat, a, 64)) == 0.0);
  CHECK(mutual_information(joint_histogram(a, flat, 64)) == 0.0);

  const Volume b = noise_volume(a.dims(), 5, 0.0, 100.0);
  CHECK(mutual_information(joint_histogram(a, b, 32)) ==
        doctest::Approx(oracle::brute_force_mi(a, b, 32)).epsilon(1e-12));
}

TEST_CASE("mutual information is symmetric and non-negative") {
  for (unsigned seed = 0; seed < 10; ++seed) {
    const Volume a = noise_volume(Dims{10, 9, 8}, seed);
    Volume b = noise_volume(Dims{10, 9, 8}, seed + 100);
    for (std::size_t n = 0; n < b.size(); ++n) b[n] += 0.5f * a[n];
    const double ab = mutual_information(joint_histogram(a, b, 16));
    const double ba = mutual_information(joint_histogram(b, a, 16));
    CHECK(ab >= 0.0);
    CHECK(std::abs(ab - ba) <= 1e-12);
  }
}

TEST_CASE("adding independent noise does not raise expected MI") {
  // Per seed: d = MI(x, y) - MI(x, y + noise). The mean of d over seeds must
  // not be significantly negative (3 standard errors).
  const Dims d{24, 24, 24};
  std::vector<double> diffs;
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    CounterRng rng(seed, 0);
    Volume x(d, {}), y(d, {}), y_noisy(d, {});
    for (std::size_t n = 0; n < x.size(); ++n) {
      x[n] = static_cast<float>(rng.uniform(0.0, 10.0));
      y[n] = x[n] + static_cast<float>(rng.normal());
      y_noisy[n] = y[n] + static_cast<float>(3.0 * rng.normal());
    }
    diffs.push_back(mutual_information(joint_histogram(x, y, 32)) -
                    mutual_information(joint_histogram(x, y_noisy, 32)));
  }
  double mean = 0.0;
  for (double v : diffs) mean += v;
  mean /= static_cast<double>(diffs.size());
  double var = 0.0;
  for (double v : diffs) var += (v - mean) * (v - mean);
  var /= static_cast<double>(diffs.size() - 1);
  const double se = std::sqrt(var / static_cast<double>(diffs.size()));
  CHECK(mean >= -3.0 * se);
}

TEST_CASE("structure similarity") {
  const Volume a = noise_volume(Dims{12, 12, 12}, 9);
  const BoundingBox box{{2, 3, 4}, {9, 10, 8}, 1};
  const auto cropped = crop(a, box);
  const auto h = joint_histogram(cropped, cropped, 64);
  CHECK(structure_similarity(a, a, box) == doctest::Approx(marginal_entropy_x(h)).epsilon(1e-12));
}

TEST_CASE("matched structure scores above a displaced one") {
  PhantomSpec spec = PhantomSpec::desk_default();
  spec.seed = 12;
  const Subject ref = generate_subject(spec, 0);
  const Subject matched = generate_subject(spec, 1);
  PhantomSpec moved = spec;
  moved.structures[0].center[1] += 6.0;
  const Subject displaced = generate_subject(moved, 1);

  const std::vector<LabelMap> maps{ref.labels};
  const BoundingBox box = structure_bbox(maps, 1, 0);
  const double s_match = structure_similarity(ref.image, matched.image, box);
  const double s_disp = structure_similarity(ref.image, displaced.image, box);
  CHECK(s_match > s_disp);
  CHECK(s_match == doctest::Approx(oracle::brute_force_mi(crop(ref.image, box), crop(matched.image, box), 64))
                       .epsilon(1e-12));
}

TEST_CASE("similarity matrix") {
  const Dims d{12, 10, 8};
  const BoundingBox box{{1, 1, 1}, {10, 8, 6}, 2};

  SUBCASE("identical images give equal off-diagonal entries") {
    const Volume a = noise_volume(d, 3);
    const std::vector<Volume> imgs{a, a, a};
    const auto m = build_similarity_matrix(imgs, {"a", "b", "c"}, box, 16, 1);
    CHECK(m.at(0, 1) == m.at(0, 2));
    CHECK(m.at(0, 1) == m.at(1, 2));
  }

  SUBCASE("matches a nested-loop oracle, symmetric, worker-independent") {
    std::vector<Volume> imgs;
    std::vector<std::string> ids;
    for (unsigned s = 0; s < 6; ++s) {
      Volume v = noise_volume(d, s);
      if (s > 0)
        for (std::size_t n = 0; n < v.size(); ++n) v[n] = 0.6f * v[n] + 0.4f * imgs[0][n];
      imgs.push_back(v);
      ids.push_back("img" + std::to_string(s));
    }
    const auto m1 = build_similarity_matrix(imgs, ids, box, 16, 1);
    const auto m4 = build_similarity_matrix(imgs, ids, box, 16, 4);
    CHECK(m1.scores == m4.scores);
    CHECK(m1.structure_id == 2);
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      for (std::size_t j = 0; j < imgs.size(); ++j) {
        CHECK(m1.at(i, j) == m1.at(j, i));
        CHECK(m1.at(i, j) >= 0.0);
        CHECK(std::abs(m1.at(i, j) - oracle::brute_force_mi(crop(imgs[i], box), crop(imgs[j], box), 16)) <= 1e-10);
      }
    }
    CHECK(m1.score("img2", "img4") == m1.at(2, 4));
    CHECK_THROWS_AS((void)m1.index_of("nope"), ManifestError);
  }

  SUBCASE("mismatched inputs") {
    const std::vector<Volume> imgs{noise_volume(d, 1), noise_volume(Dims{4, 4, 4}, 2)};
    CHECK_THROWS_AS(build_similarity_matrix(imgs, {"a", "b"}, box, 16, 1), ShapeError);
    const std::vector<Volume> two{noise_volume(d, 1), noise_volume(d, 2)};
    CHECK_THROWS(build_similarity_matrix(two, {"a"}, box, 16, 1));
    CHECK_THROWS(build_similarity_matrix(two, {"a", "a"}, box, 16, 1));
  }
}

TEST_CASE("similarity matrix persists exactly enough to replay") {
  TempDir tmp("sim");
  const Dims d{8, 8, 8};
  std::vector<Volume> imgs;
  for (unsigned s = 0; s < 4; ++s) imgs.push_back(noise_volume(d, s));
  const BoundingBox box{{0, 1, 2}, {7, 6, 5}, 3};
  const auto m = build_similarity_matrix(imgs, {"w", "x", "y", "z"}, box, 8, 1);
  write_similarity(m, tmp / "s.tsv");
  CHECK(std::filesystem::exists(tmp / "s.json"));

  const std::string text = testing_support::read_bytes(tmp / "s.tsv");
  CHECK(text.rfind("image_id\tw\tx\ty\tz\n", 0) == 0);

  const auto back = read_similarity(tmp / "s.tsv");
  CHECK(back.image_ids == m.image_ids);
  CHECK(back.structure_id == 3);
  CHECK(back.bins == 8);
  CHECK(back.bbox.lo == box.lo);
  CHECK(back.bbox.hi == box.hi);
  for (std::size_t n = 0; n < m.scores.size(); ++n) CHECK(back.scores[n] == doctest::Approx(m.scores[n]).epsilon(1e-8));

  // Writing what was read reproduces the same bytes.
  write_similarity(back, tmp / "again.tsv");
  CHECK(testing_support::read_bytes(tmp / "again.tsv") == text);
}
