#include "atlaspl/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"

namespace atlaspl {

void DatasetManifest::validate() const {
  if (structures.empty()) throw ManifestError("manifest declares no structures");
  std::set<int> sids;
  for (const auto& s : structures) {
    if (s.id <= 0) throw ManifestError("structure ids must be positive");
    if (!sids.insert(s.id).second) throw ManifestError("duplicate structure id " + std::to_string(s.id));
  }
  std::set<std::string> ids;
  for (const auto& im : images) {
    if (im.id.empty()) throw ManifestError("image with empty id");
    if (!ids.insert(im.id).second) throw ManifestError("duplicate image id '" + im.id + "'");
  }
  std::set<std::string> experts;
  for (const auto& e : expert_labeled) {
    if (!ids.contains(e)) throw ManifestError("expert id '" + e + "' is not an image");
    if (!experts.insert(e).second) throw ManifestError("expert id '" + e + "' listed twice");
    if (!image(e).labels) throw ManifestError("expert id '" + e + "' has no label map");
  }
  for (const auto& b : bboxes) {
    if (!sids.contains(b.structure_id)) {
      throw ManifestError("bbox for undeclared structure " + std::to_string(b.structure_id));
    }
  }
}

const ImageEntry& DatasetManifest::image(const std::string& id) const {
  const auto it = std::find_if(images.begin(), images.end(), [&](const ImageEntry& e) { return e.id == id; });
  if (it == images.end()) throw ManifestError("unknown image id '" + id + "'");
  return *it;
}

std::filesystem::path DatasetManifest::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

bool DatasetManifest::is_expert(const std::string& id) const {
  return std::find(expert_labeled.begin(), expert_labeled.end(), id) != expert_labeled.end();
}

std::string DatasetManifest::structure_name(int id) const {
  for (const auto& s : structures) {
    if (s.id == id) return s.name.empty() ? "structure_" + std::to_string(id) : s.name;
  }
  throw ManifestError("unknown structure id " + std::to_string(id));
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& s : j.at("structures")) {
      m.structures.push_back({s.at("id").get<int>(), s.value("name", std::string{})});
    }
    for (const auto& im : j.at("images")) {
      ImageEntry e;
      e.id = im.at("id").get<std::string>();
      e.image = im.at("image").get<std::string>();
      if (im.contains("labels") && !im.at("labels").is_null()) e.labels = im.at("labels").get<std::string>();
      m.images.push_back(std::move(e));
    }
    if (j.contains("expert_labeled")) m.expert_labeled = j.at("expert_labeled").get<std::vector<std::string>>();
    if (j.contains("bboxes")) {
      for (const auto& b : j.at("bboxes")) {
        m.bboxes.push_back({b.at("lo").get<Index3>(), b.at("hi").get<Index3>(), b.at("structure_id").get<int>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
  m.validate();
  return m;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  auto& st = j["structures"] = nlohmann::ordered_json::array();
  for (const auto& s : structures) st.push_back({{"id", s.id}, {"name", s.name}});
  auto& ims = j["images"] = nlohmann::ordered_json::array();
  for (const auto& e : images) {
    nlohmann::ordered_json row{{"id", e.id}, {"image", e.image.generic_string()}};
    if (e.labels) row["labels"] = e.labels->generic_string();
    ims.push_back(std::move(row));
  }
  j["expert_labeled"] = expert_labeled;
  if (!bboxes.empty()) {
    auto& bb = j["bboxes"] = nlohmann::ordered_json::array();
    for (const auto& b : bboxes) bb.push_back({{"structure_id", b.structure_id}, {"lo", b.lo}, {"hi", b.hi}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace atlaspl
