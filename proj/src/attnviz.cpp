#include "attnviz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

namespace mvs {

int first_mva_layer(const EncoderConfig& shape_cfg) {
  require(shape_cfg.mva_enabled, "attention viz: cross-view attention is disabled");
  require(shape_cfg.frozen_prefix < shape_cfg.depth,
          "attention viz: no trainable layers");
  return shape_cfg.frozen_prefix;
}

AttentionRecord extract_attention(const ModelBundle& model, const std::vector<Image>& views,
                                  int layer, int view, int patch, HeadMode head_mode, int head,
                                  std::vector<float>* out_embedding) {
  require(model.has_shape, "attention viz: model has no shape branch");
  const EncoderConfig& cfg = model.shape_cfg;
  int m = static_cast<int>(views.size());
  require(m >= 1, "attention viz: need at least one view");
  bool is_mva_layer = cfg.mva_enabled && layer >= cfg.frozen_prefix && layer < cfg.depth;
  if (!is_mva_layer) throw std::invalid_argument("layer has no cross-view attention");
  require(view >= 0 && view < m, "attention viz: view index out of range");
  require(patch >= 0 && patch < cfg.patch_count(), "attention viz: patch index out of range");

  AttentionCapture<float> capture;
  capture.layer = layer;

  EncoderConfig run_cfg = cfg;
  run_cfg.max_views = std::max(run_cfg.max_views, m);
  auto emb = encode_shape<float>(views, model.shape, run_cfg, /*use_mva=*/true, &capture);
  if (out_embedding)
    out_embedding->assign(emb->value.data(), emb->value.data() + emb->value.numel());

  int L = cfg.tokens_per_view();
  std::size_t total = static_cast<std::size_t>(m) * L;
  require(!capture.head_probs.empty(), "attention viz: capture failed");
  require(capture.head_probs[0].rows() == total, "attention viz: unexpected capture shape");

  AttentionRecord record;
  record.layer = layer;
  record.head_mode = head_mode;
  record.head = head;
  record.views = m;
  record.tokens_per_view = L;
  // CLS sits at slot 0 of each view; patch p is token p+1
  record.query_token = view * L + 1 + patch;

  record.row.assign(total, 0.0f);
  if (head_mode == HeadMode::SingleHead) {
    require(head >= 0 && head < cfg.heads, "attention viz: head index out of range");
    const auto& probs = capture.head_probs.at(static_cast<std::size_t>(head));
    for (std::size_t j = 0; j < total; ++j)
      record.row[j] = probs.at(static_cast<std::size_t>(record.query_token), j);
  } else {
    for (const auto& probs : capture.head_probs)
      for (std::size_t j = 0; j < total; ++j)
        record.row[j] += probs.at(static_cast<std::size_t>(record.query_token), j);
    float inv = 1.0f / static_cast<float>(capture.head_probs.size());
    for (auto& v : record.row) v *= inv;
  }
  return record;
}

namespace {

// bilinear upsample of a per-patch grid to image resolution
float sample_bilinear(const std::vector<float>& grid, int gw, int gh, float x, float y) {
  x = std::clamp(x, 0.0f, static_cast<float>(gw - 1));
  y = std::clamp(y, 0.0f, static_cast<float>(gh - 1));
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  int x1 = std::min(x0 + 1, gw - 1);
  int y1 = std::min(y0 + 1, gh - 1);
  float fx = x - x0, fy = y - y0;
  float a = grid[y0 * gw + x0] * (1 - fx) + grid[y0 * gw + x1] * fx;
  float b = grid[y1 * gw + x0] * (1 - fx) + grid[y1 * gw + x1] * fx;
  return a * (1 - fy) + b * fy;
}

}  // namespace

std::vector<std::string> render_heatmap(const AttentionRecord& record,
                                        const std::vector<Image>& views,
                                        const std::string& out_dir, const std::string& id) {
  int m = record.views;
  require(static_cast<int>(views.size()) == m, "render_heatmap: view count mismatch");
  int L = record.tokens_per_view;
  int patches = L - 1;
  int per_side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(patches))));
  require(per_side * per_side == patches, "render_heatmap: patch grid is not square");

  // joint min-max over every non-CLS entry of the whole row
  float lo = std::numeric_limits<float>::infinity();
  float hi = -std::numeric_limits<float>::infinity();
  for (int j = 0; j < m; ++j) {
    for (int p = 0; p < patches; ++p) {
      float v = record.row[static_cast<std::size_t>(j) * L + 1 + p];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  float span = hi - lo;
  float inv_span = span > 0 ? 1.0f / span : 0.0f;

  std::filesystem::create_directories(out_dir);
  std::vector<std::string> paths;
  for (int j = 0; j < m; ++j) {
    const Image& base = views[static_cast<std::size_t>(j)];
    std::vector<float> grid(static_cast<std::size_t>(patches));
    for (int p = 0; p < patches; ++p) {
      float v = record.row[static_cast<std::size_t>(j) * L + 1 + p];
      grid[static_cast<std::size_t>(p)] = span > 0 ? (v - lo) * inv_span : 0.5f;
    }

    Image out(base.width, base.height);
    for (int y = 0; y < base.height; ++y) {
      for (int x = 0; x < base.width; ++x) {
        float gx = (x + 0.5f) * per_side / base.width - 0.5f;
        float gy = (y + 0.5f) * per_side / base.height - 0.5f;
        float h = sample_bilinear(grid, per_side, per_side, gx, gy);
        const float* src = base.pixel(x, y);
        float* dst = out.pixel(x, y);
        // blue-to-red heat ramp, alpha 0.5 over the original
        float hr = h, hg = 0.0f, hb = 1.0f - h;
        dst[0] = 0.5f * src[0] + 0.5f * hr;
        dst[1] = 0.5f * src[1] + 0.5f * hg;
        dst[2] = 0.5f * src[2] + 0.5f * hb;
      }
    }
    char name[128];
    std::snprintf(name, sizeof(name), "%s_view%d_tok%d.ppm", id.c_str(), j,
                  record.query_token % L - 1);
    std::string path = (std::filesystem::path(out_dir) / name).string();
    write_ppm(path, out);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace mvs
