#include "scene.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mvs {

namespace {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
Vec3 normalized(Vec3 a) {
  double n = norm(a);
  return {a.x / n, a.y / n, a.z / n};
}

constexpr double kDeg2Rad = M_PI / 180.0;
constexpr double kFovYDeg = 45.0;
constexpr double kTMin = 1e-6;

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal;
  bool ok = false;
};

void consider(Hit& best, double t, Vec3 n) {
  if (t > kTMin && t < best.t) {
    best.t = t;
    best.normal = n;
    best.ok = true;
  }
}

void hit_sphere(Vec3 o, Vec3 d, Vec3 center, double radius, Hit& best) {
  Vec3 oc = o - center;
  double b = dot(oc, d);
  double c = dot(oc, oc) - radius * radius;
  double disc = b * b - c;
  if (disc < 0) return;
  double s = std::sqrt(disc);
  for (double t : {-b - s, -b + s}) {
    if (t > kTMin && t < best.t) {
      Vec3 p = o + d * t;
      consider(best, t, normalized(p - center));
    }
  }
}

void hit_box(Vec3 o, Vec3 d, double half, Hit& best) {
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  int axis = -1;
  const double ov[3] = {o.x, o.y, o.z};
  const double dv[3] = {d.x, d.y, d.z};
  for (int i = 0; i < 3; ++i) {
    if (std::abs(dv[i]) < 1e-12) {
      if (ov[i] < -half || ov[i] > half) return;
      continue;
    }
    double t1 = (-half - ov[i]) / dv[i];
    double t2 = (half - ov[i]) / dv[i];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > tmin) {
      tmin = t1;
      axis = i;
    }
    tmax = std::min(tmax, t2);
    if (tmin > tmax) return;
  }
  if (axis < 0 || tmin <= kTMin || tmin >= best.t) return;
  Vec3 p = o + d * tmin;
  Vec3 n{0, 0, 0};
  const double pv[3] = {p.x, p.y, p.z};
  if (axis == 0) n.x = pv[0] > 0 ? 1 : -1;
  if (axis == 1) n.y = pv[1] > 0 ? 1 : -1;
  if (axis == 2) n.z = pv[2] > 0 ? 1 : -1;
  consider(best, tmin, n);
}

void hit_cylinder(Vec3 o, Vec3 d, double radius, double half_h, Hit& best) {
  // side surface
  double a = d.x * d.x + d.y * d.y;
  if (a > 1e-12) {
    double b = o.x * d.x + o.y * d.y;
    double c = o.x * o.x + o.y * o.y - radius * radius;
    double disc = b * b - a * c;
    if (disc >= 0) {
      double s = std::sqrt(disc);
      for (double t : {(-b - s) / a, (-b + s) / a}) {
        if (t <= kTMin || t >= best.t) continue;
        Vec3 p = o + d * t;
        if (p.z >= -half_h && p.z <= half_h)
          consider(best, t, normalized({p.x, p.y, 0}));
      }
    }
  }
  // caps
  if (std::abs(d.z) > 1e-12) {
    for (double zc : {half_h, -half_h}) {
      double t = (zc - o.z) / d.z;
      if (t <= kTMin || t >= best.t) continue;
      Vec3 p = o + d * t;
      if (p.x * p.x + p.y * p.y <= radius * radius)
        consider(best, t, {0, 0, zc > 0 ? 1.0 : -1.0});
    }
  }
}

// apex at z=+half_h, base disk of the given radius at z=-half_h
void hit_cone(Vec3 o, Vec3 d, double radius, double half_h, Hit& best) {
  double k = radius / (2.0 * half_h);
  double k2 = k * k;
  double zo = half_h - o.z;  // height below apex at origin of ray
  double a = d.x * d.x + d.y * d.y - k2 * d.z * d.z;
  double b = o.x * d.x + o.y * d.y + k2 * d.z * zo;
  double c = o.x * o.x + o.y * o.y - k2 * zo * zo;
  auto side_at = [&](double t) {
    if (t <= kTMin || t >= best.t) return;
    Vec3 p = o + d * t;
    if (p.z < -half_h || p.z > half_h) return;
    consider(best, t, normalized({p.x, p.y, k2 * (half_h - p.z)}));
  };
  if (std::abs(a) < 1e-12) {
    if (std::abs(b) > 1e-12) side_at(-c / (2.0 * b));
  } else {
    double disc = b * b - a * c;
    if (disc >= 0) {
      double s = std::sqrt(disc);
      side_at((-b - s) / a);
      side_at((-b + s) / a);
    }
  }
  // base cap
  if (std::abs(d.z) > 1e-12) {
    double t = (-half_h - o.z) / d.z;
    if (t > kTMin && t < best.t) {
      Vec3 p = o + d * t;
      if (p.x * p.x + p.y * p.y <= radius * radius) consider(best, t, {0, 0, -1});
    }
  }
}

void hit_ring(Vec3 o, Vec3 d, double ring_radius, double minor_radius, Hit& best) {
  for (int i = 0; i < 8; ++i) {
    double ang = i * (2.0 * M_PI / 8.0);
    hit_sphere(o, d, {ring_radius * std::cos(ang), ring_radius * std::sin(ang), 0.0},
               minor_radius, best);
  }
}

void hit_primitive(const PlacedPrimitive& pp, Vec3 o, Vec3 d, Hit& best) {
  double s = pp.scale;
  switch (pp.primitive) {
    case Primitive::Sphere:
      hit_sphere(o, d, {0, 0, 0}, 0.5 * s, best);
      break;
    case Primitive::Cube:
      hit_box(o, d, 0.33 * s, best);
      break;
    case Primitive::Cylinder:
      hit_cylinder(o, d, 0.30 * s, 0.45 * s, best);
      break;
    case Primitive::Cone:
      hit_cone(o, d, 0.38 * s, 0.40 * s, best);
      break;
    case Primitive::Ring:
      hit_ring(o, d, 0.40 * s, 0.14 * s, best);
      break;
    default:
      throw std::invalid_argument("render: unknown primitive");
  }
}

}  // namespace

const std::vector<std::string>& primitive_names() {
  static const std::vector<std::string> names = {"sphere", "cube", "cylinder", "cone", "ring"};
  return names;
}

Primitive primitive_from_name(const std::string& name) {
  const auto& names = primitive_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Primitive>(i);
  throw std::invalid_argument("unknown primitive: " + name);
}

const std::string& primitive_name(Primitive p) {
  return primitive_names().at(static_cast<std::size_t>(p));
}

const std::array<PaletteColor, 8>& palette() {
  static const std::array<PaletteColor, 8> colors = {{
      {"red", 1.00f, 0.05f, 0.05f},
      {"green", 0.05f, 0.80f, 0.10f},
      {"blue", 0.10f, 0.15f, 1.00f},
      {"yellow", 1.00f, 0.90f, 0.05f},
      {"orange", 1.00f, 0.55f, 0.05f},
      {"purple", 0.55f, 0.05f, 0.80f},
      {"cyan", 0.05f, 0.80f, 0.90f},
      {"magenta", 0.90f, 0.05f, 0.70f},
  }};
  return colors;
}

int palette_index(const std::string& name) {
  const auto& p = palette();
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i].name == name) return static_cast<int>(i);
  throw std::invalid_argument("unknown color: " + name);
}

CameraSetting camera_setting_from_name(const std::string& name) {
  if (name == "upper") return CameraSetting::UpperHem;
  if (name == "extended") return CameraSetting::ExtendedHem;
  if (name == "full") return CameraSetting::FullSphere;
  throw std::invalid_argument("unknown camera setting: " + name);
}

const std::string& camera_setting_name(CameraSetting s) {
  static const std::vector<std::string> names = {"upper", "extended", "full"};
  return names.at(static_cast<std::size_t>(s));
}

CameraRanges camera_ranges(CameraSetting s) {
  CameraRanges r{1.5, 2.2, 0.0, 360.0, 0.0, 0.0};
  switch (s) {
    case CameraSetting::UpperHem:
      r.elevation_min = 0.0;
      r.elevation_max = 60.0;
      break;
    case CameraSetting::ExtendedHem:
      r.elevation_min = -30.0;
      r.elevation_max = 60.0;
      break;
    case CameraSetting::FullSphere:
      r.elevation_min = -90.0;
      r.elevation_max = 90.0;
      break;
  }
  return r;
}

CameraPose sample_camera(CameraSetting s, Rng& rng) {
  CameraRanges r = camera_ranges(s);
  CameraPose pose;
  pose.radius = rng.uniform(r.radius_min, r.radius_max);
  pose.azimuth_deg = rng.uniform(r.azimuth_min, r.azimuth_max);
  pose.elevation_deg = rng.uniform(r.elevation_min, r.elevation_max);
  return pose;
}

Image render_primitives(const std::vector<PlacedPrimitive>& prims, const CameraPose& pose,
                        int resolution, float r, float g, float b, float lambert) {
  if (resolution <= 0) throw std::invalid_argument("render: resolution must be positive");

  double az = pose.azimuth_deg * kDeg2Rad;
  double el = pose.elevation_deg * kDeg2Rad;
  Vec3 eye{pose.radius * std::cos(el) * std::cos(az), pose.radius * std::cos(el) * std::sin(az),
           pose.radius * std::sin(el)};
  Vec3 forward = normalized(eye * -1.0);
  Vec3 up_hint{0, 0, 1};
  if (std::abs(dot(forward, up_hint)) > 0.999) up_hint = {1, 0, 0};
  Vec3 right = normalized(cross(forward, up_hint));
  Vec3 up = cross(right, forward);
  double tan_half = std::tan(0.5 * kFovYDeg * kDeg2Rad);

  // The light travels with the camera, so shading depends only on the
  // relative geometry of the camera and the surface.
  Vec3 light = forward * -1.0;

  Image img(resolution, resolution);
  img.fill(1.0f, 1.0f, 1.0f);
  float ambient = 1.0f - lambert;

  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      double ndc_x = (2.0 * (x + 0.5) / resolution - 1.0) * tan_half;
      double ndc_y = (1.0 - 2.0 * (y + 0.5) / resolution) * tan_half;
      Vec3 dir = normalized(forward + right * ndc_x + up * ndc_y);
      Hit hit;
      for (const auto& pp : prims) hit_primitive(pp, eye, dir, hit);
      if (!hit.ok) continue;
      double diffuse = std::max(0.0, dot(hit.normal, light));
      float shade = std::min(1.0f, ambient + lambert * static_cast<float>(diffuse));
      float* px = img.pixel(x, y);
      px[0] = r * shade;
      px[1] = g * shade;
      px[2] = b * shade;
    }
  }
  return img;
}

Image render_view(const SceneSpec& scene, const CameraPose& pose, int resolution) {
  const PaletteColor& c = palette().at(static_cast<std::size_t>(scene.color_index));
  return render_primitives({{scene.primitive, scene.scale}}, pose, resolution, c.r, c.g, c.b,
                           scene.lambert);
}

}  // namespace mvs
