#pragma once

#include <array>
#include <string>
#include <vector>

#include "image.hpp"
#include "rng.hpp"

namespace mvs {

enum class Primitive { Sphere, Cube, Cylinder, Cone, Ring };

const std::vector<std::string>& primitive_names();  // {"sphere","cube","cylinder","cone","ring"}
Primitive primitive_from_name(const std::string& name);
const std::string& primitive_name(Primitive p);

struct PaletteColor {
  std::string name;
  float r, g, b;
};

// Fixed 8-color palette; names appear in captions, values in renders.
const std::array<PaletteColor, 8>& palette();
int palette_index(const std::string& name);

// One procedural object: closed primitive set, palette color, overall
// scale, and the diffuse mix of its flat+Lambert shading.
struct SceneSpec {
  std::string id;
  Primitive primitive = Primitive::Sphere;
  int color_index = 0;
  float scale = 1.0f;    // in [0.6, 1.0]
  float lambert = 0.6f;  // diffuse weight in [0.3, 0.9]
};

struct CameraPose {
  double radius = 1.8;
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;

  bool operator==(const CameraPose&) const = default;
};

enum class CameraSetting { UpperHem, ExtendedHem, FullSphere };

CameraSetting camera_setting_from_name(const std::string& name);  // upper|extended|full
const std::string& camera_setting_name(CameraSetting s);

struct CameraRanges {
  double radius_min, radius_max;
  double azimuth_min, azimuth_max;
  double elevation_min, elevation_max;
};

// UpperHem [0,60], ExtendedHem [-30,60], FullSphere [-90,90]; radius
// [1.5,2.2] and azimuth [0,360) for all settings.
CameraRanges camera_ranges(CameraSetting s);

// Uniform sample of each pose coordinate within its range; look-at is
// always the origin.
CameraPose sample_camera(CameraSetting s, Rng& rng);

// Analytic ray-traced render: flat color modulated by a single
// directional Lambert term (light rides with the camera), white
// background. Deterministic for identical inputs.
Image render_view(const SceneSpec& scene, const CameraPose& pose, int resolution);

// Low-level variant used by tests; an empty primitive list renders the
// bare background.
struct PlacedPrimitive {
  Primitive primitive;
  float scale;
};
Image render_primitives(const std::vector<PlacedPrimitive>& prims, const CameraPose& pose,
                        int resolution, float r, float g, float b, float lambert);

}  // namespace mvs
