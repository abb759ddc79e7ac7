#include "trainer.hpp"

#include <fstream>
#include <unordered_map>

#include "loss.hpp"
#include "optimizer.hpp"
#include "schedule.hpp"

namespace mvs {

namespace {

struct TrainSet {
  std::vector<const ManifestRecord*> records;
  std::vector<std::vector<Image>> views;  // aligned with records
};

TrainSet load_split(const DatasetManifest& manifest, const std::string& data_dir,
                    const std::string& split) {
  TrainSet set;
  set.records = manifest.split_records(split);
  if (set.records.empty()) throw std::runtime_error("trainer: split '" + split + "' is empty");
  set.views.reserve(set.records.size());
  for (const auto* rec : set.records)
    set.views.push_back(load_record_views(data_dir, *rec, static_cast<int>(rec->views.size())));
  return set;
}

std::ofstream open_metrics(const std::string& path) {
  std::ofstream os;
  if (!path.empty()) {
    os.open(path);
    if (!os) throw std::runtime_error("trainer: cannot write metrics to " + path);
    os << "step,lr,loss\n";
  }
  return os;
}

void maybe_checkpoint(const ModelBundle& model, const std::string& prefix, int every, int epoch) {
  if (prefix.empty() || every <= 0) return;
  if ((epoch + 1) % every != 0) return;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_epoch%03d", epoch + 1);
  model.save(prefix + buf);
}

}  // namespace

TrainResult pretrain_clip(ModelBundle& model, const DatasetManifest& manifest,
                          const std::string& data_dir, const PretrainOptions& opts) {
  require(opts.epochs >= 1 && opts.batch_size >= 2, "pretrain: bad epochs/batch");
  TrainSet train = load_split(manifest, data_dir, "train");

  model.params.set_all_trainable(true);
  AdamOptimizer<float> adam;
  Rng rng = Rng(opts.seed).child("pretrain");
  std::ofstream metrics = open_metrics(opts.metrics_csv);

  std::size_t n = train.records.size();
  std::size_t steps_per_epoch = (n + opts.batch_size - 1) / opts.batch_size;
  std::size_t total_steps = steps_per_epoch * opts.epochs;

  TrainResult result;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::size_t step = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0;
    std::size_t epoch_batches = 0;
    for (std::size_t start = 0; start < n; start += opts.batch_size) {
      std::size_t count = std::min<std::size_t>(opts.batch_size, n - start);
      if (count < 2) continue;  // a single pair carries no contrastive signal

      std::vector<std::vector<Image>> image_batch;
      std::vector<Var<float>> text_embs;
      image_batch.reserve(count);
      text_embs.reserve(count);
      for (std::size_t b = 0; b < count; ++b) {
        std::size_t ri = order[start + b];
        const auto& views = train.views[ri];
        std::size_t view_idx = rng.next_below(views.size());
        image_batch.push_back({views[view_idx]});
        const auto& captions = train.records[ri]->captions;
        const std::string& caption = captions[rng.next_below(captions.size())];
        text_embs.push_back(encode_text<float>(caption, model.vocab, model.text, model.text_cfg));
      }
      auto f_img = encode_shape_batch<float>(image_batch, model.image, model.image_cfg,
                                             /*use_mva=*/false);
      auto f_txt = concat_rows(text_embs);
      auto inv_tau = exp_elem(model.logit_scale);
      auto loss = scale(add(info_nce(f_img, f_txt, inv_tau), info_nce(f_txt, f_img, inv_tau)),
                        0.5f);

      if (step == 0) {
        result.initial_loss = loss->value[0];
        result.first_batch_size = count;
      }
      model.params.zero_grad();
      backward(loss);
      double lr = cosine_lr(step, total_steps, opts.lr, opts.lr_floor);
      adam.step(model.params, lr);
      clamp_logit_scale(model.logit_scale);

      epoch_loss += loss->value[0];
      ++epoch_batches;
      if (metrics.is_open()) metrics << step << "," << lr << "," << loss->value[0] << "\n";
      result.final_loss = loss->value[0];
      ++step;
    }
    double mean = epoch_batches ? epoch_loss / epoch_batches : 0.0;
    if (epoch == 0) result.first_epoch_mean_loss = mean;
    result.last_epoch_mean_loss = mean;
    maybe_checkpoint(model, opts.ckpt_prefix, opts.ckpt_every_epochs, epoch);
  }
  result.steps = step;
  return result;
}

bool finetune_trainable(const std::string& name, const EncoderConfig& shape_cfg) {
  if (name == "logit_scale") return true;
  if (name == "shape.proj") return true;
  const std::string blocks = "shape.blocks.";
  if (name.rfind(blocks, 0) != 0) return false;
  std::size_t dot = name.find('.', blocks.size());
  if (dot == std::string::npos) return false;
  int layer = std::stoi(name.substr(blocks.size(), dot - blocks.size()));
  if (layer < shape_cfg.frozen_prefix) return false;
  std::string rest = name.substr(dot + 1);
  if (rest.rfind("attn.", 0) == 0) return true;
  if (shape_cfg.train_mlp && rest.rfind("mlp.", 0) == 0) return true;
  return false;
}

TrainResult finetune_shape(ModelBundle& model, const DatasetManifest& manifest,
                           const std::string& data_dir, const FinetuneOptions& opts) {
  require(model.has_shape, "finetune: attach the shape branch first");
  require(opts.view_min >= 1 && opts.view_min <= opts.view_max, "finetune: bad view range");
  require(opts.view_max <= model.shape_cfg.max_views,
          "finetune: view range exceeds the configured maximum");
  TrainSet train = load_split(manifest, data_dir, "train");
  for (const auto* rec : train.records)
    require(opts.view_max <= static_cast<int>(rec->views.size()),
            "finetune: view range exceeds available views for " + rec->id);

  model.params.set_trainable_where(
      [&](const std::string& name) { return finetune_trainable(name, model.shape_cfg); });

  // The image and text branches are frozen, so their contributions are
  // constants: cache every per-view projected (pre-normalization) image
  // vector and every caption embedding once.
  std::size_t embed = static_cast<std::size_t>(model.image_cfg.embed_dim);
  std::vector<std::vector<Tensor<float>>> image_view_proj(train.records.size());
  std::vector<std::vector<Tensor<float>>> caption_embs(train.records.size());
  for (std::size_t ri = 0; ri < train.records.size(); ++ri) {
    for (const auto& view : train.views[ri]) {
      auto proj = forward_view_tokens<float>({view}, model.image, model.image_cfg,
                                             /*use_mva=*/false);
      image_view_proj[ri].push_back(proj->value);
    }
    for (const auto& caption : train.records[ri]->captions) {
      auto emb = encode_text<float>(caption, model.vocab, model.text, model.text_cfg);
      caption_embs[ri].push_back(emb->value);
    }
  }
  auto frozen_image_embedding = [&](std::size_t ri, const std::vector<std::size_t>& picks) {
    Tensor<float> out({1, embed});
    for (std::size_t c = 0; c < embed; ++c) {
      CompensatedSum<float> acc;
      for (std::size_t p : picks) acc.add(image_view_proj[ri][p][c]);
      out[c] = acc.value() / static_cast<float>(picks.size());
    }
    CompensatedSum<float> norm2;
    for (std::size_t c = 0; c < embed; ++c) norm2.add(out[c] * out[c]);
    float inv = 1.0f / std::sqrt(norm2.value());
    for (std::size_t c = 0; c < embed; ++c) out[c] *= inv;
    return out;
  };

  AdamOptimizer<float> adam;
  Rng rng = Rng(opts.seed).child("finetune");
  std::ofstream metrics = open_metrics(opts.metrics_csv);

  std::size_t n = train.records.size();
  std::size_t steps_per_epoch = (n + opts.batch_size - 1) / opts.batch_size;
  std::size_t total_steps = steps_per_epoch * opts.epochs;

  TrainResult result;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::size_t step = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0;
    std::size_t epoch_batches = 0;
    for (std::size_t start = 0; start < n; start += opts.batch_size) {
      std::size_t count = std::min<std::size_t>(opts.batch_size, n - start);
      if (count < 2) continue;

      // one view count per step, uniform over [view_min, view_max]
      std::size_t m = opts.view_min + rng.next_below(opts.view_max - opts.view_min + 1);

      std::vector<std::vector<Image>> shape_batch;
      std::vector<Var<float>> image_embs, text_embs;
      shape_batch.reserve(count);
      image_embs.reserve(count);
      text_embs.reserve(count);
      for (std::size_t b = 0; b < count; ++b) {
        std::size_t ri = order[start + b];
        const auto& stored = train.views[ri];
        auto picks = rng.sample_without_replacement(stored.size(), m);
        std::vector<Image> sampled;
        sampled.reserve(m);
        for (std::size_t p : picks) sampled.push_back(stored[p]);
        shape_batch.push_back(std::move(sampled));

        // frozen branch: same views, cross-view attention off
        image_embs.push_back(constant(frozen_image_embedding(ri, picks)));
        std::size_t caption_idx = rng.next_below(train.records[ri]->captions.size());
        text_embs.push_back(constant(caption_embs[ri][caption_idx]));
      }
      auto f_shape = encode_shape_batch<float>(shape_batch, model.shape, model.shape_cfg,
                                               model.shape_cfg.mva_enabled);
      auto f_image = concat_rows(image_embs);
      auto f_text = concat_rows(text_embs);
      auto loss = full_loss(f_shape, f_image, f_text, exp_elem(model.logit_scale));

      if (step == 0) {
        result.initial_loss = loss->value[0];
        result.first_batch_size = count;
      }
      model.params.zero_grad();
      backward(loss);
      double lr = cosine_lr(step, total_steps, opts.lr, opts.lr_floor);
      adam.step(model.params, lr);
      clamp_logit_scale(model.logit_scale);

      epoch_loss += loss->value[0];
      ++epoch_batches;
      if (metrics.is_open()) metrics << step << "," << lr << "," << loss->value[0] << "\n";
      result.final_loss = loss->value[0];
      ++step;
    }
    double mean = epoch_batches ? epoch_loss / epoch_batches : 0.0;
    if (epoch == 0) result.first_epoch_mean_loss = mean;
    result.last_epoch_mean_loss = mean;
    maybe_checkpoint(model, opts.ckpt_prefix, opts.ckpt_every_epochs, epoch);
  }
  result.steps = step;
  return result;
}

// --- evaluation ---

ClassPromptSet build_primitive_prompts(const ModelBundle& model) {
  return build_class_embeddings(primitive_names(), class_prompt_templates(),
                                [&](const std::string& s) { return model.encode_caption(s); });
}

namespace {

std::vector<float> encode_record(const ModelBundle& model, const std::string& data_dir,
                                 const ManifestRecord& rec, int n_views, bool shape_branch) {
  auto views = load_record_views(data_dir, rec, n_views);
  return shape_branch ? model.encode_views_shape(views) : model.encode_views_image(views);
}

}  // namespace

RankMetrics classify_split(const ModelBundle& model, const DatasetManifest& manifest,
                           const std::string& data_dir, const std::string& split, int n_views,
                           bool shape_branch) {
  auto prompts = build_primitive_prompts(model);
  auto records = manifest.split_records(split);
  require(!records.empty(), "classify: empty split " + split);

  std::vector<std::vector<std::size_t>> rankings;
  std::vector<std::size_t> truth;
  for (const auto* rec : records) {
    auto emb = encode_record(model, data_dir, *rec, n_views, shape_branch);
    auto ranked = classify(emb, prompts);
    std::vector<std::size_t> order;
    order.reserve(ranked.size());
    for (const auto& r : ranked) order.push_back(static_cast<std::size_t>(r.class_index));
    rankings.push_back(std::move(order));
    truth.push_back(static_cast<std::size_t>(primitive_from_name(rec->cls)));
  }
  return compute_metrics(rankings, truth);
}

std::vector<SweepRow> eval_view_sweep(const ModelBundle& model, const DatasetManifest& manifest,
                                      const std::string& data_dir, const std::string& split,
                                      const std::vector<int>& view_counts, bool shape_branch) {
  std::vector<SweepRow> rows;
  rows.reserve(view_counts.size());
  for (int v : view_counts)
    rows.push_back({v, classify_split(model, manifest, data_dir, split, v, shape_branch)});
  return rows;
}

EmbeddingIndex embed_split(const ModelBundle& model, const DatasetManifest& manifest,
                           const std::string& data_dir, const std::string& split, int n_views,
                           bool shape_branch) {
  auto records = manifest.split_records(split);
  require(!records.empty(), "embed: empty split " + split);
  EmbeddingIndex index;
  for (const auto* rec : records)
    index.add(rec->id, encode_record(model, data_dir, *rec, n_views, shape_branch));
  return index;
}

RankMetrics retrieval_eval(const ModelBundle& model, const DatasetManifest& manifest,
                           const std::string& data_dir, const std::string& split, int n_views) {
  auto records = manifest.split_records(split);
  require(!records.empty(), "retrieval: empty split " + split);
  EmbeddingIndex index = embed_split(model, manifest, data_dir, split, n_views, true);

  std::vector<std::vector<std::size_t>> rankings;
  std::vector<std::size_t> truth;
  for (std::size_t q = 0; q < records.size(); ++q) {
    const auto& captions = records[q]->captions;
    auto query = model.encode_caption(captions.back());  // finest caption
    auto scored = index.topk(query.data(), static_cast<int>(index.size()));
    std::vector<std::size_t> order;
    order.reserve(scored.size());
    for (const auto& s : scored) order.push_back(s.row);
    rankings.push_back(std::move(order));
    truth.push_back(q);
  }
  return compute_metrics(rankings, truth);
}

}  // namespace mvs
