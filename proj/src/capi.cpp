#include "mvshape.h"

#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>

#include "attnviz.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "index.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "trainer.hpp"
#include "version.hpp"

namespace {

thread_local std::string g_last_error;

mvs_status fail(mvs_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

template <typename Fn>
mvs_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return MVS_OK;
  } catch (const std::invalid_argument& e) {
    return fail(MVS_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::domain_error& e) {
    return fail(MVS_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::exception& e) {
    std::string what = e.what();
    bool io = what.find("cannot open") != std::string::npos ||
              what.find("cannot write") != std::string::npos ||
              what.find("truncated") != std::string::npos;
    return fail(io ? MVS_ERR_IO : MVS_ERR_RUNTIME, what);
  }
}

mvs_status require_arg(bool ok, const char* message) {
  return ok ? MVS_OK : fail(MVS_ERR_INVALID_ARGUMENT, message);
}

std::string copy_out(const std::string& value, char* out, size_t capacity) {
  if (out && capacity > 0) {
    std::size_t n = std::min(value.size(), capacity - 1);
    std::memcpy(out, value.data(), n);
    out[n] = '\0';
  }
  return value;
}

}  // namespace

struct mvs_config {
  mvs::RunConfig cfg;
};

struct mvs_model {
  mvs::ModelBundle bundle;
};

struct mvs_index {
  mvs::EmbeddingIndex index;
};

extern "C" {

const char* mvs_version(void) { return mvs::version(); }

const char* mvs_last_error(void) { return g_last_error.c_str(); }

/* ---- config ---- */

mvs_config* mvs_config_create(void) {
  try {
    return new mvs_config{};
  } catch (...) {
    return nullptr;
  }
}

void mvs_config_free(mvs_config* cfg) { delete cfg; }

mvs_status mvs_config_load_file(mvs_config* cfg, const char* path) {
  if (auto rc = require_arg(cfg && path, "config_load_file: null argument")) return rc;
  return guarded([&] { cfg->cfg.load_file(path); });
}

mvs_status mvs_config_set(mvs_config* cfg, const char* key, const char* value) {
  if (auto rc = require_arg(cfg && key && value, "config_set: null argument")) return rc;
  return guarded([&] { cfg->cfg.set(key, value); });
}

mvs_status mvs_config_get(const mvs_config* cfg, const char* key, char* out, size_t capacity) {
  if (auto rc = require_arg(cfg && key, "config_get: null argument")) return rc;
  return guarded([&] {
    const std::string& value = cfg->cfg.get(key);
    if (out && capacity <= value.size())
      throw std::invalid_argument("config_get: buffer too small");
    copy_out(value, out, capacity);
  });
}

mvs_status mvs_config_write_file(const mvs_config* cfg, const char* path) {
  if (auto rc = require_arg(cfg && path, "config_write_file: null argument")) return rc;
  return guarded([&] { cfg->cfg.write_file(path); });
}

/* ---- pipeline ---- */

mvs_status mvs_generate_dataset(const mvs_config* cfg, const char* data_dir) {
  if (auto rc = require_arg(cfg && data_dir, "generate_dataset: null argument")) return rc;
  return guarded([&] { mvs::pipeline::generate(cfg->cfg, data_dir); });
}

mvs_status mvs_pretrain(const mvs_config* cfg, const char* data_dir, const char* out_prefix) {
  if (auto rc = require_arg(cfg && data_dir && out_prefix, "pretrain: null argument")) return rc;
  return guarded([&] { mvs::pipeline::pretrain(cfg->cfg, data_dir, out_prefix); });
}

mvs_status mvs_finetune(const mvs_config* cfg, const char* data_dir, const char* clip_prefix,
                        const char* out_prefix) {
  if (auto rc = require_arg(cfg && data_dir && clip_prefix && out_prefix,
                            "finetune: null argument"))
    return rc;
  return guarded([&] { mvs::pipeline::finetune(cfg->cfg, data_dir, clip_prefix, out_prefix); });
}

mvs_status mvs_embed_split(const mvs_config* cfg, const char* data_dir, const char* model_prefix,
                           const char* split, int32_t views, const char* embeddings_path,
                           const char* ids_path) {
  if (auto rc = require_arg(cfg && data_dir && model_prefix && split && embeddings_path &&
                                ids_path && views >= 1,
                            "embed_split: bad argument"))
    return rc;
  return guarded([&] {
    auto manifest = mvs::load_manifest(std::string(data_dir) + "/manifest.jsonl");
    auto model = mvs::ModelBundle::load(model_prefix);
    auto index =
        mvs::embed_split(model, manifest, data_dir, split, views, model.has_shape);
    index.save(embeddings_path, ids_path);
  });
}

mvs_status mvs_classify_split(const mvs_config* cfg, const char* data_dir,
                              const char* model_prefix, const char* split, int32_t views,
                              int32_t use_shape_branch, const char* out_csv, double* top1,
                              double* top3, double* top5) {
  if (auto rc = require_arg(cfg && data_dir && model_prefix && split && views >= 1,
                            "classify_split: bad argument"))
    return rc;
  return guarded([&] {
    auto manifest = mvs::load_manifest(std::string(data_dir) + "/manifest.jsonl");
    auto model = mvs::ModelBundle::load(model_prefix);
    auto metrics =
        mvs::classify_split(model, manifest, data_dir, split, views, use_shape_branch != 0);
    if (top1) *top1 = metrics.top1;
    if (top3) *top3 = metrics.top3;
    if (top5) *top5 = metrics.top5;
    if (out_csv && *out_csv)
      mvs::pipeline::write_sweep_csv(out_csv, {{views, metrics}});
  });
}

mvs_status mvs_eval_view_sweep(const mvs_config* cfg, const char* data_dir,
                               const char* model_prefix, const char* split,
                               const int32_t* view_counts, int32_t count,
                               int32_t use_shape_branch, const char* out_csv) {
  if (auto rc = require_arg(cfg && data_dir && model_prefix && split && view_counts &&
                                count >= 1 && out_csv,
                            "eval_view_sweep: bad argument"))
    return rc;
  return guarded([&] {
    auto manifest = mvs::load_manifest(std::string(data_dir) + "/manifest.jsonl");
    auto model = mvs::ModelBundle::load(model_prefix);
    std::vector<int> views(view_counts, view_counts + count);
    auto rows =
        mvs::eval_view_sweep(model, manifest, data_dir, split, views, use_shape_branch != 0);
    mvs::pipeline::write_sweep_csv(out_csv, rows);
  });
}

mvs_status mvs_retrieval_eval(const mvs_config* cfg, const char* data_dir,
                              const char* model_prefix, const char* split, int32_t views,
                              const char* out_csv, double* rr1, double* rr5) {
  if (auto rc = require_arg(cfg && data_dir && model_prefix && split && views >= 1,
                            "retrieval_eval: bad argument"))
    return rc;
  return guarded([&] {
    auto manifest = mvs::load_manifest(std::string(data_dir) + "/manifest.jsonl");
    auto model = mvs::ModelBundle::load(model_prefix);
    auto metrics = mvs::retrieval_eval(model, manifest, data_dir, split, views);
    if (rr1) *rr1 = metrics.rr1;
    if (rr5) *rr5 = metrics.rr5;
    if (out_csv && *out_csv) {
      std::ofstream os(out_csv);
      if (!os) throw std::runtime_error(std::string("cannot write ") + out_csv);
      os << "rr1,rr5,top1,top3,top5\n";
      os << metrics.rr1 << "," << metrics.rr5 << "," << metrics.top1 << "," << metrics.top3
         << "," << metrics.top5 << "\n";
    }
  });
}

mvs_status mvs_grad_check(double* max_rel_error) {
  if (auto rc = require_arg(max_rel_error != nullptr, "grad_check: null output")) return rc;
  return guarded([&] {
    auto report = mvs::pipeline::grad_check_suite();
    *max_rel_error = report.max_rel_error;
  });
}

mvs_status mvs_attention_heatmaps(const mvs_config* cfg, const char* data_dir,
                                  const char* model_prefix, const char* object_id, int32_t layer,
                                  int32_t view, int32_t patch, const char* out_dir) {
  if (auto rc = require_arg(cfg && data_dir && model_prefix && object_id && out_dir,
                            "attention_heatmaps: null argument"))
    return rc;
  return guarded([&] {
    auto manifest = mvs::load_manifest(std::string(data_dir) + "/manifest.jsonl");
    auto model = mvs::ModelBundle::load(model_prefix);
    const mvs::ManifestRecord* rec = nullptr;
    for (const auto& r : manifest.records)
      if (r.id == object_id) rec = &r;
    if (!rec) throw std::invalid_argument(std::string("unknown object id: ") + object_id);
    int n_views = std::min<int>(model.shape_cfg.max_views, static_cast<int>(rec->views.size()));
    auto views = mvs::load_record_views(data_dir, *rec, n_views);
    int use_layer = layer >= 0 ? layer : mvs::first_mva_layer(model.shape_cfg);
    auto record = mvs::extract_attention(model, views, use_layer, view, patch,
                                         mvs::HeadMode::MeanOverHeads);
    mvs::render_heatmap(record, views, out_dir, rec->id);
  });
}

/* ---- model handle ---- */

mvs_model* mvs_model_load(const char* prefix) {
  if (!prefix) {
    fail(MVS_ERR_INVALID_ARGUMENT, "model_load: null prefix");
    return nullptr;
  }
  try {
    auto* m = new mvs_model{mvs::ModelBundle::load(prefix)};
    g_last_error.clear();
    return m;
  } catch (const std::exception& e) {
    fail(MVS_ERR_IO, e.what());
    return nullptr;
  }
}

void mvs_model_free(mvs_model* model) { delete model; }

int32_t mvs_model_embed_dim(const mvs_model* model) {
  return model ? model->bundle.image_cfg.embed_dim : 0;
}

int32_t mvs_model_has_shape_branch(const mvs_model* model) {
  return model && model->bundle.has_shape ? 1 : 0;
}

mvs_status mvs_model_encode_views(const mvs_model* model, const char* const* image_paths,
                                  int32_t n_views, float* out) {
  if (auto rc = require_arg(model && image_paths && out && n_views >= 1,
                            "encode_views: bad argument"))
    return rc;
  return guarded([&] {
    std::vector<mvs::Image> views;
    views.reserve(n_views);
    for (int32_t i = 0; i < n_views; ++i) views.push_back(mvs::read_ppm(image_paths[i]));
    std::vector<float> emb = model->bundle.has_shape
                                 ? model->bundle.encode_views_shape(views)
                                 : model->bundle.encode_views_image(views);
    std::memcpy(out, emb.data(), emb.size() * sizeof(float));
  });
}

mvs_status mvs_model_encode_text(const mvs_model* model, const char* text, float* out) {
  if (auto rc = require_arg(model && text && out, "encode_text: null argument")) return rc;
  return guarded([&] {
    std::vector<float> emb = model->bundle.encode_caption(text);
    std::memcpy(out, emb.data(), emb.size() * sizeof(float));
  });
}

/* ---- index handle ---- */

mvs_index* mvs_index_create(int32_t dim) {
  if (dim < 1) {
    fail(MVS_ERR_INVALID_ARGUMENT, "index_create: dim must be positive");
    return nullptr;
  }
  return new mvs_index{mvs::EmbeddingIndex(dim)};
}

mvs_index* mvs_index_open(const char* embeddings_path, const char* ids_path) {
  if (!embeddings_path || !ids_path) {
    fail(MVS_ERR_INVALID_ARGUMENT, "index_open: null path");
    return nullptr;
  }
  try {
    auto* idx = new mvs_index{mvs::EmbeddingIndex::load(embeddings_path, ids_path)};
    g_last_error.clear();
    return idx;
  } catch (const std::exception& e) {
    fail(MVS_ERR_IO, e.what());
    return nullptr;
  }
}

void mvs_index_free(mvs_index* index) { delete index; }

int64_t mvs_index_size(const mvs_index* index) {
  return index ? static_cast<int64_t>(index->index.size()) : 0;
}

int32_t mvs_index_dim(const mvs_index* index) { return index ? index->index.dim() : 0; }

mvs_status mvs_index_add(mvs_index* index, const char* id, const float* vec, int32_t dim) {
  if (auto rc = require_arg(index && id && vec && dim >= 1, "index_add: bad argument")) return rc;
  return guarded([&] { index->index.add(id, std::vector<float>(vec, vec + dim)); });
}

mvs_status mvs_index_save(const mvs_index* index, const char* embeddings_path,
                          const char* ids_path) {
  if (auto rc = require_arg(index && embeddings_path && ids_path, "index_save: null argument"))
    return rc;
  return guarded([&] { index->index.save(embeddings_path, ids_path); });
}

mvs_status mvs_index_find(const mvs_index* index, const char* id, int64_t* out_row) {
  if (auto rc = require_arg(index && id && out_row, "index_find: null argument")) return rc;
  *out_row = index->index.find(id);
  if (*out_row < 0) return fail(MVS_ERR_INVALID_ARGUMENT, std::string("unknown id: ") + id);
  return MVS_OK;
}

mvs_status mvs_index_get_id(const mvs_index* index, int64_t row, char* out, size_t capacity) {
  if (auto rc = require_arg(index && out && row >= 0 &&
                                row < static_cast<int64_t>(index->index.size()),
                            "index_get_id: bad argument"))
    return rc;
  return guarded([&] {
    const std::string& id = index->index.id_of(static_cast<std::size_t>(row));
    if (capacity <= id.size()) throw std::invalid_argument("index_get_id: buffer too small");
    copy_out(id, out, capacity);
  });
}

mvs_status mvs_index_get_row(const mvs_index* index, int64_t row, float* out, int32_t dim) {
  if (auto rc = require_arg(index && out && row >= 0 &&
                                row < static_cast<int64_t>(index->index.size()) &&
                                dim == index->index.dim(),
                            "index_get_row: bad argument"))
    return rc;
  std::memcpy(out, index->index.row(static_cast<std::size_t>(row)),
              static_cast<std::size_t>(dim) * sizeof(float));
  return MVS_OK;
}

mvs_status mvs_index_topk(const mvs_index* index, const float* query, int32_t dim, int32_t k,
                          int64_t* out_rows, float* out_scores) {
  if (auto rc = require_arg(index && query && out_rows && dim == index->index.dim(),
                            "index_topk: bad argument"))
    return rc;
  return guarded([&] {
    auto scored = index->index.topk(query, k);
    for (std::size_t i = 0; i < scored.size(); ++i) {
      out_rows[i] = static_cast<int64_t>(scored[i].row);
      if (out_scores) out_scores[i] = scored[i].score;
    }
  });
}

mvs_status mvs_index_concept_mix(const mvs_index* index, const float* a, const float* b,
                                 int32_t dim, const char* const* exclude_ids, int32_t n_exclude,
                                 int64_t* out_row) {
  if (auto rc = require_arg(index && a && b && out_row && dim == index->index.dim(),
                            "concept_mix: bad argument"))
    return rc;
  return guarded([&] {
    std::vector<std::size_t> exclude;
    for (int32_t i = 0; i < n_exclude; ++i) {
      std::int64_t row = index->index.find(exclude_ids[i]);
      if (row >= 0) exclude.push_back(static_cast<std::size_t>(row));
    }
    *out_row = static_cast<int64_t>(index->index.concept_mix(a, b, exclude));
  });
}

}  // extern "C"
