#pragma once

#include <string>
#include <vector>

#include "config.hpp"
#include "dataset.hpp"
#include "model.hpp"
#include "trainer.hpp"

namespace mvs::pipeline {

// RunConfig -> typed option structs
GenSpec gen_spec_from(const RunConfig& cfg);
EncoderConfig encoder_cfg_from(const RunConfig& cfg);
TextConfig text_cfg_from(const RunConfig& cfg);
PretrainOptions pretrain_opts_from(const RunConfig& cfg);
FinetuneOptions finetune_opts_from(const RunConfig& cfg);

// Subcommand bodies; every writer stays inside the directory it is given.
DatasetManifest generate(const RunConfig& cfg, const std::string& data_dir);

// Pretrains the toy CLIP and saves the bundle under out_prefix.
TrainResult pretrain(const RunConfig& cfg, const std::string& data_dir,
                     const std::string& out_prefix);

// Loads the pretrained bundle, attaches the shape branch per cfg "init"
// (fresh pretrains a donor from a shifted seed), fine-tunes and saves
// under out_prefix.
TrainResult finetune(const RunConfig& cfg, const std::string& data_dir,
                     const std::string& clip_prefix, const std::string& out_prefix);

struct GradCheckItem {
  std::string name;
  double max_rel_error;
};

struct GradCheckReport {
  std::vector<GradCheckItem> items;
  double max_rel_error = 0;
};

// Canonical double-precision gradient-check suite: every differentiable
// op on random small shapes plus the four-term loss through a two-layer
// encoder pair.
GradCheckReport grad_check_suite(std::uint64_t seed = 1234, int shapes_per_op = 20);

// accuracy-vs-views sweep written as CSV (views,top1,top3,top5)
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

}  // namespace mvs::pipeline
