#include "doctest.h"

#include <sstream>

#include "json.hpp"

#include "atlaspl/cli.hpp"
#include "atlaspl/curriculum.hpp"
#include "atlaspl/manifest.hpp"
#include "atlaspl/metrics.hpp"
#include "atlaspl/nifti.hpp"
#include "support/helpers.hpp"

using namespace atlaspl;
using testing_support::read_bytes;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string log;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, log;
  const int code = cli::run(args, out, log);
  return {code, out.str(), log.str()};
}

std::string s(const fs::path& p) { return p.string(); }

}  // namespace

TEST_CASE("manifest round-trip and validation") {
  TempDir tmp("manifest");
  DatasetManifest m;
  m.structures = {{1, "left"}, {2, "right"}};
  m.images = {{"a", "img/a.nii", fs::path("lab/a.nii")}, {"b", "img/b.nii", std::nullopt}};
  m.expert_labeled = {"a"};
  m.bboxes = {{{1, 2, 3}, {4, 5, 6}, 2}};
  m.save(tmp / "m.json");
  const auto back = DatasetManifest::load(tmp / "m.json");
  CHECK(back.base_dir == tmp.path());
  CHECK(back.images.size() == 2);
  CHECK(back.image("b").labels == std::nullopt);
  CHECK(back.resolve(back.image("a").image) == tmp.path() / "img/a.nii");
  CHECK(back.is_expert("a"));
  CHECK_FALSE(back.is_expert("b"));
  CHECK(back.structure_name(2) == "right");
  CHECK(back.bboxes[0].hi == Index3{4, 5, 6});
  CHECK_THROWS_AS((void)back.structure_name(3), ManifestError);

  SUBCASE("expert without labels") {
    m.expert_labeled = {"b"};
    CHECK_THROWS_AS(m.validate(), ManifestError);
  }
  SUBCASE("duplicate ids") {
    m.images.push_back(m.images.front());
    CHECK_THROWS_AS(m.validate(), ManifestError);
  }
  SUBCASE("unknown expert") {
    m.expert_labeled = {"zzz"};
    CHECK_THROWS_AS(m.validate(), ManifestError);
  }
  SUBCASE("malformed json") {
    std::ofstream(tmp / "bad.json") << "{\"structures\": [";
    CHECK_THROWS_AS(DatasetManifest::load(tmp / "bad.json"), ManifestError);
  }
}

TEST_CASE("usage errors exit 1 with usage text") {
  auto r = invoke({"similarity", "--no-such-flag"});
  CHECK(r.code == cli::kUsage);
  CHECK(r.out.find("Usage") != std::string::npos);

  r = invoke({"frobnicate"});
  CHECK(r.code == cli::kUsage);

  r = invoke({});
  CHECK(r.code == cli::kUsage);

  r = invoke({"similarity", "--out", "/tmp/x"});
  CHECK(r.code == cli::kUsage);
}

TEST_CASE("missing manifest is a data error with a JSON log line") {
  TempDir tmp("cli");
  const auto r = invoke({"similarity", "--manifest", s(tmp / "absent.json"), "--out", s(tmp / "o")});
  CHECK(r.code == cli::kDataError);
  const auto line = nlohmann::json::parse(r.log.substr(0, r.log.find('\n')));
  CHECK(line["level"] == "error");
  CHECK(line["step"] == "similarity");
  CHECK(line.contains("ts"));
  CHECK(line.contains("metrics"));
}

TEST_CASE("phantom to pseudo-labels end to end") {
  TempDir tmp("cli");
  const fs::path data = tmp / "d";
  const fs::path out = tmp / "o";
  REQUIRE(invoke({"gen-phantom", "--n", "7", "--seed", "3", "--dims", "32", "--experts", "3", "--out", s(data)}).code ==
          0);
  CHECK(fs::exists(data / "images/sub006.nii"));
  const auto m = DatasetManifest::load(data / "manifest.json");
  CHECK(m.expert_labeled == std::vector<std::string>{"sub000", "sub001", "sub002"});
  CHECK(load_volume(data / "images/sub000.nii").dims() == Dims{32, 32, 32});

  const auto sim1 = invoke({"similarity", "--manifest", s(data / "manifest.json"), "--out", s(out), "--workers", "1"});
  REQUIRE(sim1.code == 0);
  const std::string tsv = read_bytes(out / "similarity/structure_2.tsv");
  REQUIRE(invoke({"similarity", "--manifest", s(data / "manifest.json"), "--out", s(out), "--workers", "3"}).code == 0);
  CHECK(read_bytes(out / "similarity/structure_2.tsv") == tsv);
  CHECK(fs::exists(out / "bboxes.json"));

  const auto pl = invoke({"pseudo-label", "--manifest", s(data / "manifest.json"), "--out", s(out), "--k", "3"});
  REQUIRE(pl.code == 0);
  for (const auto* name : {"structure_1", "structure_2", "structure_3"}) {
    const auto trace = read_trace(out / "trace" / (std::string(name) + ".jsonl"));
    CHECK(trace.steps.size() == 4);
    CHECK_FALSE(trace.error);
    CHECK(fs::exists(out / name / "sub000.nii"));
    CHECK(fs::exists(out / name / "sub006.nii"));
  }
  CHECK(fs::exists(out / "combined/sub003.nii"));
  CHECK_FALSE(fs::exists(out / "combined/sub000.nii"));
  CHECK(read_bytes(out / "report.tsv").find("pseudo-label\t1\t4\t") != std::string::npos);

  const auto lm = nlohmann::json::parse(read_bytes(out / "labeled_manifest.json"));
  CHECK(lm["images"].size() == 7);
  CHECK(lm["images"][0]["source"] == "expert");
  CHECK(lm["images"][4]["source"] == "pseudo");
  CHECK(lm["images"][4]["labels"] == "combined/sub004.nii");
  CHECK(lm["images"][4]["structure_labels"]["2"] == "structure_2/sub004.nii");

  // The evaluate subcommand agrees with the pipeline's own report.
  const fs::path ev = tmp / "ev";
  REQUIRE(invoke({"evaluate", "--pred", s(out / "combined/sub003.nii"), "--truth", s(data / "labels/sub003.nii"),
               "--structures", "3", "--out", s(ev)})
              .code == 0);
  const auto rep = nlohmann::json::parse(read_bytes(ev / "report.json"));
  const auto full = nlohmann::json::parse(read_bytes(out / "report.json"));
  CHECK(rep["images"][0]["dice"] == full["images"][0]["dice"]);

  // Persisted matrices built with a different bin count are refused.
  const auto bad = invoke({"pseudo-label", "--manifest", s(data / "manifest.json"), "--out", s(out), "--bins", "32"});
  CHECK(bad.code == cli::kDataError);
}

TEST_CASE("config file supplies defaults and flags override it") {
  TempDir tmp("cli");
  const fs::path data = tmp / "d";
  REQUIRE(invoke({"gen-phantom", "--n", "5", "--seed", "1", "--dims", "24", "--experts", "3", "--out", s(data)}).code == 0);
  nlohmann::json cfg{{"manifest", s(data / "manifest.json")},
                     {"out_dir", s(tmp / "from_config")},
                     {"k", 2},
                     {"structures", {1}},
                     {"fusion", {{"radius", 0}, {"sigma", 4.0}}}};
  std::ofstream(tmp / "cfg.json") << cfg.dump();
  REQUIRE(invoke({"pseudo-label", "--config", s(tmp / "cfg.json")}).code == 0);
  CHECK(read_trace(tmp / "from_config/trace/structure_1.jsonl").k == 2);
  CHECK_FALSE(fs::exists(tmp / "from_config/trace/structure_2.jsonl"));

  REQUIRE(invoke({"pseudo-label", "--config", s(tmp / "cfg.json"), "--k", "3", "--out", s(tmp / "flag")}).code == 0);
  CHECK(read_trace(tmp / "flag/trace/structure_1.jsonl").k == 3);

  CHECK(invoke({"pseudo-label", "--config", s(tmp / "cfg.json"), "--k", "1", "--out", s(tmp / "k1")}).code ==
        cli::kUsage);
  CHECK(invoke({"pseudo-label", "--config", s(tmp / "cfg.json"), "--k", "4", "--out", s(tmp / "k4")}).code ==
        cli::kDataError);
}

TEST_CASE("fuse and combine subcommands") {
  TempDir tmp("cli");
  const Dims d{6, 6, 6};
  const LabelMap a = testing_support::cube_labels(d, {1, 1, 1}, 3, 2);
  LabelMap b = a;
  b.at(0, 0, 0) = 2;
  save_volume(a, tmp / "a.nii");
  save_volume(b, tmp / "b.nii");
  save_volume(a, tmp / "c.nii");

  const auto r = invoke({"fuse", "--atlas-labels", s(tmp / "a.nii"), "--atlas-labels", s(tmp / "b.nii"),
                      "--atlas-labels", s(tmp / "c.nii"), "--structure", "2", "--method", "staple", "--out",
                      s(tmp / "f")});
  REQUIRE(r.code == 0);
  const LabelMap fused = load_labels(tmp / "f/labels.nii");
  CHECK(fused == binarize(a, 2));
  const auto info = nlohmann::json::parse(read_bytes(tmp / "f/fusion.json"));
  CHECK(info["raters"].size() == 3);

  CHECK(invoke({"fuse", "--atlas-labels", s(tmp / "a.nii"), "--atlas-labels", s(tmp / "b.nii"), "--method", "lop",
             "--out", s(tmp / "g")})
            .code == cli::kUsage);

  ScalarField p1(d, {}, 0.2), p2(d, {}, 0.7);
  p1.at(0, 0, 0) = 0.9;
  save_volume(p1, tmp / "p1.nii");
  save_volume(p2, tmp / "p2.nii");
  REQUIRE(invoke({"combine", "--posterior", s(tmp / "p1.nii"), "--posterior", s(tmp / "p2.nii"), "--out",
               s(tmp / "comb.nii")})
              .code == 0);
  const LabelMap comb = load_labels(tmp / "comb.nii");
  CHECK(comb.at(0, 0, 0) == 1);
  CHECK(comb.at(3, 3, 3) == 2);
}
