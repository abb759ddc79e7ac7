#include "dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mvs {

std::vector<const ManifestRecord*> DatasetManifest::split_records(const std::string& split) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(&r);
  return out;
}

std::string serialize_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  json header;
  header["manifest"] = "mvshape-dataset";
  header["version"] = 1;
  header["camera"] = m.camera;
  header["seed"] = m.seed;
  header["image_size"] = m.image_size;
  header["classes"] = primitive_names();
  json pal = json::object();
  for (const auto& c : palette()) pal[c.name] = {c.r, c.g, c.b};
  header["palette"] = pal;
  os << header.dump() << "\n";

  for (const auto& r : m.records) {
    json j;
    j["id"] = r.id;
    j["class"] = r.cls;
    j["class_fine"] = r.cls_fine;
    j["captions"] = r.captions;
    j["views"] = r.views;
    json poses = json::array();
    for (const auto& p : r.poses) poses.push_back({p.radius, p.azimuth_deg, p.elevation_deg});
    j["poses"] = poses;
    j["split"] = r.split;
    os << j.dump() << "\n";
  }
  return os.str();
}

DatasetManifest parse_manifest_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("manifest: empty input");
  json header = json::parse(line);
  if (header.value("manifest", "") != "mvshape-dataset")
    throw std::runtime_error("manifest: unrecognized header");

  DatasetManifest m;
  m.camera = header.at("camera").get<std::string>();
  m.seed = header.at("seed").get<std::uint64_t>();
  m.image_size = header.at("image_size").get<int>();

  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.cls = j.at("class").get<std::string>();
    r.cls_fine = j.at("class_fine").get<std::string>();
    r.captions = j.at("captions").get<std::vector<std::string>>();
    r.views = j.at("views").get<std::vector<std::string>>();
    for (const auto& p : j.at("poses")) {
      CameraPose pose;
      pose.radius = p.at(0).get<double>();
      pose.azimuth_deg = p.at(1).get<double>();
      pose.elevation_deg = p.at(2).get<double>();
      r.poses.push_back(pose);
    }
    r.split = j.at("split").get<std::string>();
    m.records.push_back(std::move(r));
  }
  return m;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("manifest: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_manifest_text(buf.str());
}

DatasetManifest generate_dataset(const GenSpec& spec, const std::string& out_dir) {
  if (spec.objects_per_class <= 0) throw std::invalid_argument("generate_dataset: empty spec");
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw std::runtime_error("generate_dataset: cannot create output dir " + out_dir);

  Rng root(spec.seed);
  DatasetManifest manifest;
  manifest.camera = camera_setting_name(spec.camera);
  manifest.seed = spec.seed;
  manifest.image_size = spec.image_size;

  // val objects are every fifth index within a class at the default 0.2
  int val_every = spec.val_fraction > 0 ? std::max(1, static_cast<int>(1.0 / spec.val_fraction))
                                        : spec.objects_per_class + 1;

  for (const auto& cls : primitive_names()) {
    for (int k = 0; k < spec.objects_per_class; ++k) {
      char idbuf[64];
      std::snprintf(idbuf, sizeof(idbuf), "%s_%03d", cls.c_str(), k);
      SceneSpec scene;
      scene.id = idbuf;
      scene.primitive = primitive_from_name(cls);

      Rng orng = root.child(scene.id);
      scene.color_index = static_cast<int>(orng.next_below(palette().size()));
      scene.scale = static_cast<float>(orng.uniform(0.6, 1.0));
      scene.lambert = static_cast<float>(orng.uniform(0.3, 0.9));

      ManifestRecord rec;
      rec.id = scene.id;
      rec.cls = cls;
      rec.cls_fine = palette().at(scene.color_index).name + " " + cls;
      rec.captions = all_captions(scene);
      rec.split = (k % val_every == val_every - 1) ? "val" : "train";

      fs::path obj_dir = fs::path(out_dir) / "images" / scene.id;
      fs::create_directories(obj_dir, ec);
      if (ec) throw std::runtime_error("generate_dataset: cannot create " + obj_dir.string());

      for (int v = 0; v < spec.views_per_object; ++v) {
        CameraPose pose = sample_camera(spec.camera, orng);
        Image img = render_view(scene, pose, spec.image_size);
        char name[32];
        std::snprintf(name, sizeof(name), "view%02d.ppm", v);
        write_ppm((obj_dir / name).string(), img);
        rec.views.push_back("images/" + scene.id + "/" + name);
        rec.poses.push_back(pose);
      }
      manifest.records.push_back(std::move(rec));
    }
  }

  std::ofstream os(fs::path(out_dir) / "manifest.jsonl", std::ios::binary);
  if (!os) throw std::runtime_error("generate_dataset: cannot write manifest");
  os << serialize_manifest(manifest);
  if (!os) throw std::runtime_error("generate_dataset: manifest write failed");
  return manifest;
}

std::vector<Image> load_record_views(const std::string& data_dir, const ManifestRecord& rec,
                                     int count) {
  if (count < 1 || count > static_cast<int>(rec.views.size()))
    throw std::invalid_argument("load_record_views: count out of range for " + rec.id);
  std::vector<Image> views;
  views.reserve(count);
  for (int i = 0; i < count; ++i)
    views.push_back(read_ppm((fs::path(data_dir) / rec.views[i]).string()));
  return views;
}

}  // namespace mvs
