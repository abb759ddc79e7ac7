#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "model.hpp"
#include "protocols.hpp"

namespace mvs {

struct PretrainOptions {
  int epochs = 30;
  int batch_size = 64;
  double lr = 3e-4;
  double lr_floor = 0.0;
  std::uint64_t seed = 7;
  std::string metrics_csv;    // written when non-empty: step,lr,loss
  std::string ckpt_prefix;    // periodic checkpoints when non-empty
  int ckpt_every_epochs = 0;  // 0 disables periodic checkpoints
};

struct TrainResult {
  double initial_loss = 0;          // before the first update
  double first_epoch_mean_loss = 0;
  double last_epoch_mean_loss = 0;
  double final_loss = 0;
  std::size_t steps = 0;
  std::size_t first_batch_size = 0;
};

// Stage 1: joint image+text contrastive pretraining on single views.
// Every parameter (plus the logit scale) trains.
TrainResult pretrain_clip(ModelBundle& model, const DatasetManifest& manifest,
                          const std::string& data_dir, const PretrainOptions& opts);

enum class InitMode { Same, Fresh };

struct FinetuneOptions {
  int view_min = 1;
  int view_max = 6;
  int epochs = 30;
  int batch_size = 64;
  double lr = 3e-4;
  double lr_floor = 0.0;
  std::uint64_t seed = 7;
  std::string metrics_csv;
  std::string ckpt_prefix;
  int ckpt_every_epochs = 0;
};

// Stage 2: the shape branch must already be attached (see
// ModelBundle::attach_shape_copy / attach_shape_from). Trains only the
// suffix attention parameters, the shape projection, the logit scale,
// and the suffix MLPs when shape_cfg.train_mlp is set; everything else
// stays bit-identical. f_image and f_text come from the frozen branches
// over the same sampled views / a randomly chosen caption.
TrainResult finetune_shape(ModelBundle& model, const DatasetManifest& manifest,
                           const std::string& data_dir, const FinetuneOptions& opts);

// The trainable-parameter predicate used by finetune_shape, exposed for
// the freezing-contract tests.
bool finetune_trainable(const std::string& param_name, const EncoderConfig& shape_cfg);

// --- evaluation protocols ---

ClassPromptSet build_primitive_prompts(const ModelBundle& model);

// Zero-shot / fine-tuned classification of a manifest split at a fixed
// view count (the first n stored views of each record).
RankMetrics classify_split(const ModelBundle& model, const DatasetManifest& manifest,
                           const std::string& data_dir, const std::string& split, int n_views,
                           bool shape_branch);

struct SweepRow {
  int views;
  RankMetrics metrics;
};
std::vector<SweepRow> eval_view_sweep(const ModelBundle& model, const DatasetManifest& manifest,
                                      const std::string& data_dir, const std::string& split,
                                      const std::vector<int>& view_counts, bool shape_branch);

// Shape-embedding index over a split (ids are record ids).
EmbeddingIndex embed_split(const ModelBundle& model, const DatasetManifest& manifest,
                           const std::string& data_dir, const std::string& split, int n_views,
                           bool shape_branch);

// Fine-grained caption-to-shape retrieval over a split: each record's
// finest caption queries the split's shape-embedding index; the target
// is the record itself.
RankMetrics retrieval_eval(const ModelBundle& model, const DatasetManifest& manifest,
                           const std::string& data_dir, const std::string& split, int n_views);

}  // namespace mvs
