#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "captions.hpp"
#include "image.hpp"
#include "scene.hpp"

namespace mvs {

struct ManifestRecord {
  std::string id;
  std::string cls;       // primitive label (coarse, 5 classes)
  std::string cls_fine;  // color x primitive label (40 classes)
  std::vector<std::string> captions;  // coarse..fine, see captions.hpp
  std::vector<std::string> views;     // paths relative to the dataset root
  std::vector<CameraPose> poses;      // one per view
  std::string split;                  // "train" | "val"

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::string camera;  // camera setting name
  std::uint64_t seed = 0;
  int image_size = 0;
  std::vector<ManifestRecord> records;  // ordered by id

  bool operator==(const DatasetManifest&) const = default;

  std::vector<const ManifestRecord*> split_records(const std::string& split) const;
};

// JSON-per-line serialization. The first line is a header object carrying
// the palette, class list, and generation settings; every following line
// is one record with fields id, class, class_fine, captions, views,
// poses, split.
std::string serialize_manifest(const DatasetManifest& m);
DatasetManifest parse_manifest_text(const std::string& text);
DatasetManifest load_manifest(const std::string& path);

struct GenSpec {
  int objects_per_class = 60;
  int views_per_object = 12;
  CameraSetting camera = CameraSetting::FullSphere;
  std::uint64_t seed = 7;
  int image_size = 32;
  double val_fraction = 0.2;
};

// Renders every object of every class from independently sampled poses
// and writes images plus manifest under out_dir. Byte-deterministic per
// seed: each object draws from its own id-keyed stream.
DatasetManifest generate_dataset(const GenSpec& spec, const std::string& out_dir);

// First `count` views of a record, loaded from disk.
std::vector<Image> load_record_views(const std::string& data_dir, const ManifestRecord& rec,
                                     int count);

}  // namespace mvs
