#pragma once

#include <string>
#include <vector>

#include "model.hpp"

namespace mvs {

enum class HeadMode { MeanOverHeads, SingleHead };

// One post-softmax attention row from a cross-view layer: length m*L
// (CLS columns included), nonnegative, sums to 1.
struct AttentionRecord {
  int layer = 0;
  HeadMode head_mode = HeadMode::MeanOverHeads;
  int head = 0;  // meaningful for SingleHead
  int query_token = 0;  // flattened index in [0, m*L)
  int views = 0;
  int tokens_per_view = 0;
  std::vector<float> row;
};

// Runs the shape branch over the views, captures the layer's post-softmax
// probabilities, and returns the row of the flattened (view, patch)
// query. `patch` indexes the 0-based non-CLS patch grid. The layer must
// be a cross-view (MVA) layer. Capturing never perturbs the forward
// values: the embedding computed alongside is returned via out_embedding
// when requested.
AttentionRecord extract_attention(const ModelBundle& model, const std::vector<Image>& views,
                                  int layer, int view, int patch, HeadMode head_mode,
                                  int head = 0, std::vector<float>* out_embedding = nullptr);

// Default layer: the first trainable MVA layer.
int first_mva_layer(const EncoderConfig& shape_cfg);

// Per view: drop CLS columns, reshape to the patch grid, min-max
// normalize jointly across all views, bilinearly upsample and alpha-blend
// (0.5) over the originals. Writes one PPM per view named
// <id>_view<j>_tok<p>.ppm under out_dir and returns the paths.
std::vector<std::string> render_heatmap(const AttentionRecord& record,
                                        const std::vector<Image>& views,
                                        const std::string& out_dir, const std::string& id);

}  // namespace mvs
