#pragma once

#include <memory>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "text.hpp"

namespace mvs {

// A complete model bundle: frozen-capable image and text branches, the
// learned logit scale, and (after fine-tuning) the multi-view shape
// branch. Persisted as three sidecar files sharing one path prefix:
//   <prefix>.ddcp   checkpoint with every parameter
//   <prefix>.cfg    plain-text key=value architecture description
//   <prefix>.vocab  token<TAB>id lines
struct ModelBundle {
  EncoderConfig image_cfg;  // also the architecture of the shape branch
  EncoderConfig shape_cfg;  // valid when has_shape
  TextConfig text_cfg;
  Vocab vocab;

  ParamStore<float> params;
  VitWeights<float> image;
  TextWeights<float> text;
  Var<float> logit_scale;
  bool has_shape = false;
  VitWeights<float> shape;

  static ModelBundle create(const EncoderConfig& image_cfg, const TextConfig& text_cfg,
                            const Vocab& vocab, std::uint64_t seed);

  // Registers the shape branch initialized from this bundle's image
  // weights ("same" initialization).
  void attach_shape_copy(const EncoderConfig& shape_cfg);

  // Registers the shape branch initialized from another bundle's image
  // weights (the mismatched-initialization ablation).
  void attach_shape_from(const ModelBundle& donor, const EncoderConfig& shape_cfg);

  void save(const std::string& prefix) const;
  static ModelBundle load(const std::string& prefix);

  double tau() const { return std::exp(-static_cast<double>(logit_scale->value[0])); }

  // Inference helpers (no gradients retained by the caller).
  std::vector<float> encode_views_image(const std::vector<Image>& views) const;
  std::vector<float> encode_views_shape(const std::vector<Image>& views) const;
  std::vector<float> encode_caption(const std::string& caption) const;
};

// Vocabulary over the repo's closed caption grammar.
Vocab build_grammar_vocab(int max_len);

}  // namespace mvs
