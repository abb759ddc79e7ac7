#include "captions.hpp"

#include <cstdio>
#include <stdexcept>

namespace mvs {

std::string format_scale(float scale) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.3f", static_cast<double>(scale));
  return buf;
}

const std::string& shading_word(float lambert) {
  static const std::string flat = "flat", soft = "soft", strong = "strong";
  if (lambert < 0.5f) return flat;
  if (lambert < 0.7f) return soft;
  return strong;
}

std::string caption_scene(const SceneSpec& scene, CaptionGranularity granularity) {
  const std::string& cls = primitive_name(scene.primitive);
  const std::string& color = palette().at(static_cast<std::size_t>(scene.color_index)).name;
  switch (granularity) {
    case CaptionGranularity::ClassOnly:
      return "a 3d model of a " + cls;
    case CaptionGranularity::ColorClass:
      return "a " + color + " " + cls;
    case CaptionGranularity::Fine:
      return "a " + color + " " + cls + " with " + shading_word(scene.lambert) +
             " shading at scale " + format_scale(scene.scale);
  }
  throw std::invalid_argument("caption_scene: unknown granularity");
}

std::vector<std::string> all_captions(const SceneSpec& scene) {
  return {caption_scene(scene, CaptionGranularity::ClassOnly),
          caption_scene(scene, CaptionGranularity::ColorClass),
          caption_scene(scene, CaptionGranularity::Fine)};
}

const std::vector<std::string>& class_prompt_templates() {
  static const std::vector<std::string> templates = {
      "a {}",
      "a 3d model of a {}",
      "a photo of a {}",
      "a rendering of a {}",
  };
  return templates;
}

std::string fill_template(const std::string& tmpl, const std::string& label) {
  std::size_t pos = tmpl.find("{}");
  if (pos == std::string::npos) throw std::invalid_argument("template without {}: " + tmpl);
  return tmpl.substr(0, pos) + label + tmpl.substr(pos + 2);
}

std::vector<std::string> grammar_words() {
  std::vector<std::string> words = {"a",     "3d",     "model", "of",    "with", "shading",
                                    "at",    "scale",  "photo", "rendering"};
  for (const auto& c : palette()) words.push_back(c.name);
  for (const auto& p : primitive_names()) words.push_back(p);
  words.push_back("flat");
  words.push_back("soft");
  words.push_back("strong");
  // formatted scale tokens 0.600 .. 1.000
  for (int i = 600; i <= 1000; ++i) words.push_back(format_scale(static_cast<float>(i) / 1000.0f));
  return words;
}

}  // namespace mvs
