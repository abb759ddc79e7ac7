#pragma once

#include <string>
#include <vector>

#include "scene.hpp"

namespace mvs {

enum class CaptionGranularity { ClassOnly, ColorClass, Fine };

// Template-filled caption for a scene. Fine granularity appends shading
// and scale qualifiers so captions are near-unique per scene.
std::string caption_scene(const SceneSpec& scene, CaptionGranularity granularity);

// All three granularities, coarse to fine.
std::vector<std::string> all_captions(const SceneSpec& scene);

// Shading qualifier derived from the Lambert weight.
const std::string& shading_word(float lambert);

// Prompt templates for zero-shot classification; "{}" is replaced by the
// class label.
const std::vector<std::string>& class_prompt_templates();
std::string fill_template(const std::string& tmpl, const std::string& label);

// Every word the caption grammar and the prompt templates can emit,
// including the formatted scale tokens. The text vocabulary is built
// from this closed list.
std::vector<std::string> grammar_words();

std::string format_scale(float scale);  // three decimals

}  // namespace mvs
