#pragma once

#include <optional>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "image.hpp"
#include "params.hpp"

namespace mvs {

// Vision-transformer configuration shared by the image and shape
// branches. The frozen prefix always attends per view; the suffix
// attends across views when mva_enabled.
struct EncoderConfig {
  int image_size = 32;
  int patch_size = 8;
  int width = 64;  // token channels
  int depth = 4;
  int heads = 4;
  int frozen_prefix = 2;
  bool mva_enabled = true;
  bool train_mlp = false;
  int embed_dim = 64;
  int max_views = 6;

  int head_dim() const { return width / heads; }
  int patches_per_side() const { return image_size / patch_size; }
  int patch_count() const { return patches_per_side() * patches_per_side(); }
  int tokens_per_view() const { return patch_count() + 1; }  // +1 CLS
  int patch_dim() const { return patch_size * patch_size * 3; }

  void validate() const {
    require(image_size > 0 && patch_size > 0, "encoder config: sizes must be positive");
    require(image_size % patch_size == 0, "encoder config: image_size not divisible by patch_size");
    require(heads > 0 && width % heads == 0, "encoder config: width not divisible by heads");
    require(depth >= 1, "encoder config: depth must be >= 1");
    require(frozen_prefix >= 0 && frozen_prefix <= depth,
            "encoder config: frozen_prefix out of range");
    require(embed_dim >= 1 && max_views >= 1, "encoder config: bad embed_dim/max_views");
  }

  std::string serialize() const;                    // key=value lines
  static EncoderConfig parse(const std::string&);   // inverse
};

inline std::string EncoderConfig::serialize() const {
  std::string s;
  auto kv = [&s](const char* k, int v) { s += std::string(k) + " = " + std::to_string(v) + "\n"; };
  kv("image_size", image_size);
  kv("patch_size", patch_size);
  kv("width", width);
  kv("depth", depth);
  kv("heads", heads);
  kv("frozen_prefix", frozen_prefix);
  kv("mva_enabled", mva_enabled ? 1 : 0);
  kv("train_mlp", train_mlp ? 1 : 0);
  kv("embed_dim", embed_dim);
  kv("max_views", max_views);
  return s;
}

inline EncoderConfig EncoderConfig::parse(const std::string& text) {
  EncoderConfig cfg;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string v) {
      v.erase(0, v.find_first_not_of(" \t"));
      v.erase(v.find_last_not_of(" \t\r") + 1);
      return v;
    };
    std::string key = trim(line.substr(0, eq));
    int value = std::stoi(trim(line.substr(eq + 1)));
    if (key == "image_size") cfg.image_size = value;
    else if (key == "patch_size") cfg.patch_size = value;
    else if (key == "width") cfg.width = value;
    else if (key == "depth") cfg.depth = value;
    else if (key == "heads") cfg.heads = value;
    else if (key == "frozen_prefix") cfg.frozen_prefix = value;
    else if (key == "mva_enabled") cfg.mva_enabled = value != 0;
    else if (key == "train_mlp") cfg.train_mlp = value != 0;
    else if (key == "embed_dim") cfg.embed_dim = value;
    else if (key == "max_views") cfg.max_views = value;
    else throw std::invalid_argument("encoder config: unknown key " + key);
  }
  cfg.validate();
  return cfg;
}

template <typename T>
struct BlockWeights {
  Var<T> ln1_g, ln1_b;
  Var<T> wq, bq, wk, wv, bv, wo, bo;  // no key bias: it cancels in softmax
  Var<T> ln2_g, ln2_b;
  Var<T> w1, b1, w2, b2;
};

template <typename T>
struct VitWeights {
  Var<T> patch_w, patch_b;  // [patch_dim, width], [width]
  Var<T> cls;               // [1, width]
  Var<T> pos;               // [tokens_per_view, width]
  std::vector<BlockWeights<T>> blocks;
  Var<T> ln_post_g, ln_post_b;
  Var<T> proj;  // [width, embed_dim]
};

// Registers freshly initialized ViT weights under `prefix` and returns
// the handles. Weight scales follow fan-in; embeddings use 0.02.
template <typename T>
VitWeights<T> init_vit(ParamStore<T>& store, const std::string& prefix, const EncoderConfig& cfg,
                       Rng& rng) {
  cfg.validate();
  VitWeights<T> w;
  int k = cfg.width;
  int mlp = 4 * k;
  w.patch_w = store.add(prefix + "patch.w", fan_in_init<T>(cfg.patch_dim(), k, rng));
  w.patch_b = store.add(prefix + "patch.b", Tensor<T>({std::size_t(k)}));
  // the CLS anchor starts large so every view's summary opens near a
  // shared direction and the contrastive logits start near-uniform
  w.cls = store.add(prefix + "cls", normal_init<T>({1, std::size_t(k)}, 0.2, rng));
  w.pos = store.add(prefix + "pos",
                    normal_init<T>({std::size_t(cfg.tokens_per_view()), std::size_t(k)}, 0.02, rng));
  for (int layer = 0; layer < cfg.depth; ++layer) {
    std::string lp = prefix + "blocks." + std::to_string(layer) + ".";
    BlockWeights<T> b;
    b.ln1_g = store.add(lp + "ln1.g", Tensor<T>::full({std::size_t(k)}, T(1)));
    b.ln1_b = store.add(lp + "ln1.b", Tensor<T>({std::size_t(k)}));
    b.wq = store.add(lp + "attn.wq", fan_in_init<T>(k, k, rng));
    b.bq = store.add(lp + "attn.bq", Tensor<T>({std::size_t(k)}));
    b.wk = store.add(lp + "attn.wk", fan_in_init<T>(k, k, rng));
    b.wv = store.add(lp + "attn.wv", fan_in_init<T>(k, k, rng));
    b.bv = store.add(lp + "attn.bv", Tensor<T>({std::size_t(k)}));
    b.wo = store.add(lp + "attn.wo", residual_fan_in_init<T>(k, k, cfg.depth, rng));
    b.bo = store.add(lp + "attn.bo", Tensor<T>({std::size_t(k)}));
    b.ln2_g = store.add(lp + "ln2.g", Tensor<T>::full({std::size_t(k)}, T(1)));
    b.ln2_b = store.add(lp + "ln2.b", Tensor<T>({std::size_t(k)}));
    b.w1 = store.add(lp + "mlp.w1", fan_in_init<T>(k, mlp, rng));
    b.b1 = store.add(lp + "mlp.b1", Tensor<T>({std::size_t(mlp)}));
    b.w2 = store.add(lp + "mlp.w2", residual_fan_in_init<T>(mlp, k, cfg.depth, rng));
    b.b2 = store.add(lp + "mlp.b2", Tensor<T>({std::size_t(k)}));
    w.blocks.push_back(std::move(b));
  }
  w.ln_post_g = store.add(prefix + "ln_post.g", Tensor<T>::full({std::size_t(k)}, T(1)));
  w.ln_post_b = store.add(prefix + "ln_post.b", Tensor<T>({std::size_t(k)}));
  w.proj = store.add(prefix + "proj", fan_in_init<T>(k, cfg.embed_dim, rng));
  return w;
}

// Re-binds handles to parameters already present in the store (after a
// checkpoint load).
template <typename T>
VitWeights<T> bind_vit(ParamStore<T>& store, const std::string& prefix, const EncoderConfig& cfg) {
  VitWeights<T> w;
  w.patch_w = store.var(prefix + "patch.w");
  w.patch_b = store.var(prefix + "patch.b");
  w.cls = store.var(prefix + "cls");
  w.pos = store.var(prefix + "pos");
  for (int layer = 0; layer < cfg.depth; ++layer) {
    std::string lp = prefix + "blocks." + std::to_string(layer) + ".";
    BlockWeights<T> b;
    b.ln1_g = store.var(lp + "ln1.g");
    b.ln1_b = store.var(lp + "ln1.b");
    b.wq = store.var(lp + "attn.wq");
    b.bq = store.var(lp + "attn.bq");
    b.wk = store.var(lp + "attn.wk");
    b.wv = store.var(lp + "attn.wv");
    b.bv = store.var(lp + "attn.bv");
    b.wo = store.var(lp + "attn.wo");
    b.bo = store.var(lp + "attn.bo");
    b.ln2_g = store.var(lp + "ln2.g");
    b.ln2_b = store.var(lp + "ln2.b");
    b.w1 = store.var(lp + "mlp.w1");
    b.b1 = store.var(lp + "mlp.b1");
    b.w2 = store.var(lp + "mlp.w2");
    b.b2 = store.var(lp + "mlp.b2");
    w.blocks.push_back(std::move(b));
  }
  w.ln_post_g = store.var(prefix + "ln_post.g");
  w.ln_post_b = store.var(prefix + "ln_post.b");
  w.proj = store.var(prefix + "proj");
  return w;
}

// Post-softmax attention snapshot of one layer: one [tokens, tokens]
// matrix per head. Capturing copies values only and cannot perturb the
// forward computation.
template <typename T>
struct AttentionCapture {
  int layer = -1;  // which block to record
  std::vector<Tensor<T>> head_probs;
  bool mva_joint = false;  // whether the recorded matrices span all views
};

// Flattens non-overlapping patches of one view into rows.
template <typename T>
Tensor<T> patch_matrix(const Image& img, const EncoderConfig& cfg) {
  require(img.width == cfg.image_size && img.height == cfg.image_size,
          "patchify: image size mismatch");
  int ps = cfg.patch_size;
  int per_side = cfg.patches_per_side();
  Tensor<T> out({std::size_t(cfg.patch_count()), std::size_t(cfg.patch_dim())});
  for (int py = 0; py < per_side; ++py) {
    for (int px = 0; px < per_side; ++px) {
      T* row = out.row_ptr(py * per_side + px);
      std::size_t o = 0;
      for (int dy = 0; dy < ps; ++dy) {
        for (int dx = 0; dx < ps; ++dx) {
          const float* p = img.pixel(px * ps + dx, py * ps + dy);
          row[o++] = static_cast<T>(p[0]);
          row[o++] = static_cast<T>(p[1]);
          row[o++] = static_cast<T>(p[2]);
        }
      }
    }
  }
  return out;
}

// Patch projection + CLS + positional table for one view: [L, width].
// The positional table is shared across views and carries no view index.
template <typename T>
Var<T> patchify(const Image& img, const VitWeights<T>& w, const EncoderConfig& cfg) {
  cfg.validate();
  auto patches = constant(patch_matrix<T>(img, cfg));
  auto projected = linear(patches, w.patch_w, w.patch_b);     // [P, k]
  auto tokens = concat_rows<T>({w.cls, projected});           // [L, k]
  return add(tokens, w.pos);
}

// softmax(Q K^T / sqrt(d_k)) V for one head.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 Tensor<T>* probs_out = nullptr) {
  require(q->value.cols() == k->value.cols() && k->value.rows() == v->value.rows(),
          "attention: shape mismatch");
  T scale_factor = T(1) / std::sqrt(static_cast<T>(q->value.cols()));
  auto scores = scale(matmul_bt(q, k), scale_factor);
  auto probs = softmax_rows(scores);
  if (probs_out) *probs_out = probs->value;
  return matmul(probs, v);
}

// Scaled-dot-product attention over every head in one graph node. Rows
// are split into `chunks` equal blocks and attention runs independently
// inside each block, so one call covers per-view attention (chunks =
// view count), cross-view attention (chunks = 1), and whole-batch
// evaluation (chunks = objects). Row-wise arithmetic is identical to the
// per-head composition of attention().
template <typename T>
Var<T> fused_head_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                            std::size_t chunks = 1,
                            std::vector<Tensor<T>>* probs_out = nullptr) {
  std::size_t rows = q->value.rows();
  std::size_t width = q->value.cols();
  require(k->value.rows() == rows && v->value.rows() == rows && k->value.cols() == width &&
              v->value.cols() == width,
          "attention: shape mismatch");
  require(heads >= 1 && width % heads == 0, "attention: heads must divide width");
  require(chunks >= 1 && rows % chunks == 0, "attention: chunk count must divide rows");
  std::size_t tn = rows / chunks;  // tokens attended jointly
  std::size_t dk = width / heads;
  T scale_factor = T(1) / std::sqrt(static_cast<T>(dk));

  auto probs = std::make_shared<std::vector<Tensor<T>>>();
  probs->reserve(chunks * heads);
  Tensor<T> out({rows, width});
  Tensor<T> qh({tn, dk}), kh({tn, dk}), vh({tn, dk}), oh({tn, dk});

  auto copy_block_in = [tn, dk, width](const Tensor<T>& src, std::size_t r0, std::size_t c0,
                                       Tensor<T>& dst) {
    for (std::size_t i = 0; i < tn; ++i)
      std::copy(src.data() + (r0 + i) * width + c0, src.data() + (r0 + i) * width + c0 + dk,
                dst.data() + i * dk);
  };

  for (std::size_t c = 0; c < chunks; ++c) {
    std::size_t r0 = c * tn;
    for (int h = 0; h < heads; ++h) {
      std::size_t c0 = h * dk;
      copy_block_in(q->value, r0, c0, qh);
      copy_block_in(k->value, r0, c0, kh);
      copy_block_in(v->value, r0, c0, vh);

      Tensor<T> scores({tn, tn});
      gemm_nt_acc(qh.data(), kh.data(), scores.data(), tn, dk, tn);
      Tensor<T> p({tn, tn});
      for (std::size_t i = 0; i < tn; ++i) {
        const T* srow = scores.row_ptr(i);
        T* prow = p.row_ptr(i);
        T mx = srow[0] * scale_factor;
        for (std::size_t j = 1; j < tn; ++j) mx = std::max(mx, srow[j] * scale_factor);
        CompensatedSum<T> denom;
        for (std::size_t j = 0; j < tn; ++j) {
          prow[j] = std::exp(srow[j] * scale_factor - mx);
          denom.add(prow[j]);
        }
        T d = denom.value();
        for (std::size_t j = 0; j < tn; ++j) prow[j] /= d;
      }

      oh.fill(T(0));
      gemm_nn_acc(p.data(), vh.data(), oh.data(), tn, tn, dk);
      for (std::size_t i = 0; i < tn; ++i)
        std::copy(oh.data() + i * dk, oh.data() + i * dk + dk,
                  out.data() + (r0 + i) * width + c0);
      probs->push_back(std::move(p));
    }
  }
  if (probs_out) *probs_out = *probs;  // detached copy for inspection

  return detail::make_op<T>(
      std::move(out), {q, k, v},
      [q, k, v, probs, heads, chunks, tn, dk, width, scale_factor](Node<T>& nd) {
        Tensor<T> qh({tn, dk}), kh({tn, dk}), vh({tn, dk}), doh({tn, dk});
        auto copy_in = [tn, dk, width](const Tensor<T>& src, std::size_t r0, std::size_t c0,
                                       Tensor<T>& dst) {
          for (std::size_t i = 0; i < tn; ++i)
            std::copy(src.data() + (r0 + i) * width + c0,
                      src.data() + (r0 + i) * width + c0 + dk, dst.data() + i * dk);
        };
        auto add_block_out = [tn, dk, width](const Tensor<T>& src, std::size_t r0,
                                             std::size_t c0, Tensor<T>& dst) {
          for (std::size_t i = 0; i < tn; ++i) {
            const T* s = src.data() + i * dk;
            T* d = dst.data() + (r0 + i) * width + c0;
            for (std::size_t j = 0; j < dk; ++j) d[j] += s[j];
          }
        };
        if (q->requires_grad) q->ensure_grad();
        if (k->requires_grad) k->ensure_grad();
        if (v->requires_grad) v->ensure_grad();
        for (std::size_t c = 0; c < chunks; ++c) {
          std::size_t r0 = c * tn;
          for (int h = 0; h < heads; ++h) {
            std::size_t c0 = h * dk;
            const Tensor<T>& p = (*probs)[c * heads + static_cast<std::size_t>(h)];
            copy_in(nd.grad, r0, c0, doh);

            if (v->requires_grad) {
              Tensor<T> dvh({tn, dk});
              gemm_tn_acc(p.data(), doh.data(), dvh.data(), tn, tn, dk);
              add_block_out(dvh, r0, c0, v->grad);
            }
            if (q->requires_grad || k->requires_grad) {
              copy_in(v->value, r0, c0, vh);
              Tensor<T> dp({tn, tn});
              gemm_nt_acc(doh.data(), vh.data(), dp.data(), tn, dk, tn);
              // softmax backward per row, then scale
              Tensor<T> ds({tn, tn});
              for (std::size_t i = 0; i < tn; ++i) {
                const T* prow = p.row_ptr(i);
                const T* dprow = dp.row_ptr(i);
                T* dsrow = ds.row_ptr(i);
                CompensatedSum<T> dot;
                for (std::size_t j = 0; j < tn; ++j) dot.add(dprow[j] * prow[j]);
                T s = dot.value();
                for (std::size_t j = 0; j < tn; ++j)
                  dsrow[j] = prow[j] * (dprow[j] - s) * scale_factor;
              }
              copy_in(q->value, r0, c0, qh);
              copy_in(k->value, r0, c0, kh);
              if (q->requires_grad) {
                Tensor<T> dqh({tn, dk});
                gemm_nn_acc(ds.data(), kh.data(), dqh.data(), tn, tn, dk);
                add_block_out(dqh, r0, c0, q->grad);
              }
              if (k->requires_grad) {
                Tensor<T> dkh({tn, dk});
                gemm_tn_acc(ds.data(), qh.data(), dkh.data(), tn, tn, dk);
                add_block_out(dkh, r0, c0, k->grad);
              }
            }
          }
        }
      });
}

// Multi-head attention over a token matrix [Tn, width]; rows split into
// `chunks` independent attention groups.
template <typename T>
Var<T> multi_head_attention(const Var<T>& x, const BlockWeights<T>& b, int heads,
                            std::size_t chunks = 1,
                            std::vector<Tensor<T>>* probs_out = nullptr) {
  auto q = linear(x, b.wq, b.bq);
  auto k = matmul(x, b.wk);
  auto v = linear(x, b.wv, b.bv);
  auto merged = fused_head_attention(q, k, v, heads, chunks, probs_out);
  return linear(merged, b.wo, b.bo);
}

// One pre-norm transformer block; attention runs within each of the
// `chunks` equal row blocks (1 = all rows attend jointly). LN/MLP are
// per-token and need no chunk handling.
template <typename T>
Var<T> transformer_block_chunked(const Var<T>& x, const BlockWeights<T>& b, int heads,
                                 std::size_t chunks,
                                 std::vector<Tensor<T>>* probs_sink = nullptr) {
  auto normed = layer_norm(x, b.ln1_g, b.ln1_b, T(1e-5));
  auto attn_out = multi_head_attention(normed, b, heads, chunks, probs_sink);
  auto h = add(x, attn_out);
  auto normed2 = layer_norm(h, b.ln2_g, b.ln2_b, T(1e-5));
  auto mid = gelu(linear(normed2, b.w1, b.b1));
  auto mlp_out = linear(mid, b.w2, b.b2);
  return add(h, mlp_out);
}

// View-oriented wrapper: attention spans all views when `joint` is set,
// otherwise each view attends to itself.
template <typename T>
Var<T> transformer_block(const Var<T>& x, const BlockWeights<T>& b, const EncoderConfig& cfg,
                         std::size_t views, bool joint,
                         AttentionCapture<T>* capture = nullptr, int layer_index = -1) {
  bool record = capture && capture->layer == layer_index;
  std::vector<Tensor<T>>* probs_sink = record ? &capture->head_probs : nullptr;
  if (record) {
    capture->head_probs.clear();
    capture->mva_joint = joint || views == 1;
  }
  std::size_t chunks = (joint || views == 1) ? 1 : views;
  return transformer_block_chunked(x, b, cfg.heads, chunks, probs_sink);
}

// Builds [views*L, width] token rows from projected patches, the CLS
// parameter, and the shared positional table, in one graph node. Row
// arithmetic matches patchify() exactly.
template <typename T>
Var<T> assemble_view_tokens(const Var<T>& proj, const Var<T>& cls, const Var<T>& pos,
                            std::size_t views) {
  std::size_t k = proj->value.cols();
  std::size_t L = pos->value.rows();
  std::size_t P = L - 1;
  require(proj->value.rows() == views * P, "assemble_view_tokens: patch row mismatch");
  require(cls->value.numel() == k && pos->value.cols() == k,
          "assemble_view_tokens: width mismatch");
  Tensor<T> out({views * L, k});
  const T* cls_row = cls->value.data();
  for (std::size_t v = 0; v < views; ++v) {
    T* t0 = out.data() + v * L * k;
    const T* pos0 = pos->value.data();
    for (std::size_t j = 0; j < k; ++j) t0[j] = cls_row[j] + pos0[j];
    for (std::size_t p = 0; p < P; ++p) {
      const T* src = proj->value.row_ptr(v * P + p);
      const T* posr = pos->value.row_ptr(p + 1);
      T* dst = out.data() + (v * L + p + 1) * k;
      for (std::size_t j = 0; j < k; ++j) dst[j] = src[j] + posr[j];
    }
  }
  return detail::make_op<T>(std::move(out), {proj, cls, pos},
                            [proj, cls, pos, views, L, P, k](Node<T>& nd) {
    if (cls->requires_grad) {
      cls->ensure_grad();
      for (std::size_t v = 0; v < views; ++v) {
        const T* d = nd.grad.data() + v * L * k;
        for (std::size_t j = 0; j < k; ++j) cls->grad[j] += d[j];
      }
    }
    if (pos->requires_grad) {
      pos->ensure_grad();
      for (std::size_t v = 0; v < views; ++v) {
        const T* d0 = nd.grad.data() + v * L * k;
        for (std::size_t j = 0; j < k; ++j) pos->grad[j] += d0[j];
        for (std::size_t p = 0; p < P; ++p) {
          const T* d = nd.grad.data() + (v * L + p + 1) * k;
          T* g = pos->grad.data() + (p + 1) * k;
          for (std::size_t j = 0; j < k; ++j) g[j] += d[j];
        }
      }
    }
    if (proj->requires_grad) {
      proj->ensure_grad();
      for (std::size_t v = 0; v < views; ++v) {
        for (std::size_t p = 0; p < P; ++p) {
          const T* d = nd.grad.data() + (v * L + p + 1) * k;
          T* g = proj->grad.data() + (v * P + p) * k;
          for (std::size_t j = 0; j < k; ++j) g[j] += d[j];
        }
      }
    }
  });
}

// Patch rows of every view stacked, projected once, assembled into token
// rows: [views*L, width].
template <typename T>
Var<T> view_tokens(const std::vector<Image>& views, const VitWeights<T>& w,
                   const EncoderConfig& cfg) {
  std::size_t nv = views.size();
  std::size_t P = cfg.patch_count();
  std::size_t pd = cfg.patch_dim();
  Tensor<T> patches({nv * P, pd});
  for (std::size_t v = 0; v < nv; ++v) {
    Tensor<T> one = patch_matrix<T>(views[v], cfg);
    std::copy(one.data(), one.data() + one.numel(), patches.data() + v * P * pd);
  }
  auto projected = linear(constant(std::move(patches)), w.patch_w, w.patch_b);
  return assemble_view_tokens(projected, w.cls, w.pos, nv);
}

// Whole-batch encoder: every object contributes the same number of
// views; returns unit-norm embeddings [objects, embed_dim]. Row-for-row
// identical to running encode_shape per object.
template <typename T>
Var<T> encode_shape_batch(const std::vector<std::vector<Image>>& objects,
                          const VitWeights<T>& w, const EncoderConfig& cfg, bool use_mva) {
  cfg.validate();
  std::size_t n = objects.size();
  require(n >= 1, "encode batch: empty batch");
  std::size_t m = objects[0].size();
  require(m >= 1, "encode batch: at least one view required");
  require(static_cast<int>(m) <= cfg.max_views, "encode batch: view count exceeds max_views");
  std::vector<Image> flat;
  flat.reserve(n * m);
  for (const auto& views : objects) {
    require(views.size() == m, "encode batch: ragged view counts");
    flat.insert(flat.end(), views.begin(), views.end());
  }

  Var<T> x = view_tokens(flat, w, cfg);
  std::size_t L = cfg.tokens_per_view();
  for (int layer = 0; layer < cfg.depth; ++layer) {
    bool joint = use_mva && m > 1 && layer >= cfg.frozen_prefix;
    std::size_t chunks = joint ? n : n * m;
    x = transformer_block_chunked(x, w.blocks[layer], cfg.heads, chunks);
  }
  x = layer_norm(x, w.ln_post_g, w.ln_post_b, T(1e-5));
  std::vector<std::size_t> cls_rows(n * m);
  for (std::size_t v = 0; v < n * m; ++v) cls_rows[v] = v * L;
  auto cls = gather_rows(x, cls_rows);
  auto projected = matmul(cls, w.proj);           // [n*m, embed]
  return l2_normalize_rows(segment_mean_rows(projected, m));
}

// Runs the transformer over m views and returns the per-view projected
// CLS embeddings, [m, embed_dim], without averaging or normalization.
template <typename T>
Var<T> forward_view_tokens(const std::vector<Image>& views, const VitWeights<T>& w,
                           const EncoderConfig& cfg, bool use_mva,
                           AttentionCapture<T>* capture = nullptr) {
  cfg.validate();
  std::size_t m = views.size();
  require(m >= 1, "encode: at least one view required");
  require(static_cast<int>(m) <= cfg.max_views, "encode: view count exceeds max_views");

  Var<T> x = view_tokens(views, w, cfg);

  std::size_t L = cfg.tokens_per_view();
  for (int layer = 0; layer < cfg.depth; ++layer) {
    // frozen prefix always attends within a view; the suffix attends
    // across views only when MVA is enabled
    bool joint = use_mva && layer >= cfg.frozen_prefix;
    x = transformer_block(x, w.blocks[layer], cfg, m, joint, capture, layer);
  }

  x = layer_norm(x, w.ln_post_g, w.ln_post_b, T(1e-5));
  std::vector<std::size_t> cls_rows(m);
  for (std::size_t j = 0; j < m; ++j) cls_rows[j] = j * L;
  auto cls = gather_rows(x, cls_rows);  // [m, width]
  return matmul(cls, w.proj);           // [m, embed_dim]
}

// Unit-norm shape embedding: mean of the projected per-view CLS vectors,
// then one final L2 normalization, so a single view reduces exactly to
// the plain image-encoder embedding.
template <typename T>
Var<T> encode_shape(const std::vector<Image>& views, const VitWeights<T>& w,
                    const EncoderConfig& cfg, bool use_mva,
                    AttentionCapture<T>* capture = nullptr) {
  auto projected = forward_view_tokens(views, w, cfg, use_mva, capture);
  return l2_normalize_rows(mean_rows(projected));  // [1, embed_dim]
}

}  // namespace mvs
