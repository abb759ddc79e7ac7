/*
 * mvshape — multi-view contrastive 3D shape representation learning.
 *
 * C interface to the pipeline: procedural dataset generation, two-stage
 * contrastive training (toy CLIP pretrain + multi-view fine-tune),
 * embedding/classification/retrieval evaluation, concept mixing,
 * attention heatmaps and the gradient-check suite.
 *
 * All functions returning mvs_status yield MVS_OK (0) on success; on
 * failure they return a nonzero code and mvs_last_error() carries a
 * human-readable message for the calling thread.
 */

#ifndef MVSHAPE_H
#define MVSHAPE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MVS_API __declspec(dllexport)
#else
#define MVS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef int32_t mvs_status;

enum {
  MVS_OK = 0,
  MVS_ERR_INVALID_ARGUMENT = 1,
  MVS_ERR_IO = 2,
  MVS_ERR_RUNTIME = 3
};

MVS_API const char* mvs_version(void);

/* Message for the most recent failure on this thread; empty if none. */
MVS_API const char* mvs_last_error(void);

/* ------------------------------------------------------------------ */
/* run configuration (key=value; flags override file values)          */
/* ------------------------------------------------------------------ */

typedef struct mvs_config mvs_config;

MVS_API mvs_config* mvs_config_create(void);
MVS_API void mvs_config_free(mvs_config* cfg);
MVS_API mvs_status mvs_config_load_file(mvs_config* cfg, const char* path);
MVS_API mvs_status mvs_config_set(mvs_config* cfg, const char* key, const char* value);
MVS_API mvs_status mvs_config_get(const mvs_config* cfg, const char* key, char* out,
                                  size_t capacity);
MVS_API mvs_status mvs_config_write_file(const mvs_config* cfg, const char* path);

/* ------------------------------------------------------------------ */
/* pipeline stages                                                     */
/* ------------------------------------------------------------------ */

/* Renders the procedural dataset (images + manifest.jsonl) under
 * data_dir. Byte-deterministic for a fixed seed. */
MVS_API mvs_status mvs_generate_dataset(const mvs_config* cfg, const char* data_dir);

/* Stage 1: joint image+text contrastive pretraining on single views.
 * Writes <out_prefix>.ddcp/.cfg/.vocab and <out_prefix>_metrics.csv. */
MVS_API mvs_status mvs_pretrain(const mvs_config* cfg, const char* data_dir,
                                const char* out_prefix);

/* Stage 2: attaches the multi-view shape branch to the pretrained
 * bundle (init=same copies the image branch, init=fresh pretrains an
 * independent donor) and fine-tunes it with the four-term loss. */
MVS_API mvs_status mvs_finetune(const mvs_config* cfg, const char* data_dir,
                                const char* clip_prefix, const char* out_prefix);

/* Shape embeddings of one manifest split -> embedding store + id
 * sidecar (embeddings_path / ids_path). */
MVS_API mvs_status mvs_embed_split(const mvs_config* cfg, const char* data_dir,
                                   const char* model_prefix, const char* split, int32_t views,
                                   const char* embeddings_path, const char* ids_path);

/* Prompt-ensemble zero-shot classification of a split at a fixed view
 * count. Any of the out pointers may be NULL. use_shape_branch=0
 * evaluates the frozen image branch (view-averaged). */
MVS_API mvs_status mvs_classify_split(const mvs_config* cfg, const char* data_dir,
                                      const char* model_prefix, const char* split, int32_t views,
                                      int32_t use_shape_branch, const char* out_csv, double* top1,
                                      double* top3, double* top5);

/* Accuracy-vs-view-count sweep, written as CSV (views,top1,top3,top5). */
MVS_API mvs_status mvs_eval_view_sweep(const mvs_config* cfg, const char* data_dir,
                                       const char* model_prefix, const char* split,
                                       const int32_t* view_counts, int32_t count,
                                       int32_t use_shape_branch, const char* out_csv);

/* Fine-grained caption-to-shape retrieval over a split; RR@k out
 * pointers may be NULL. */
MVS_API mvs_status mvs_retrieval_eval(const mvs_config* cfg, const char* data_dir,
                                      const char* model_prefix, const char* split, int32_t views,
                                      const char* out_csv, double* rr1, double* rr5);

/* Double-precision gradient checks over every differentiable op plus an
 * end-to-end loss; writes the worst relative error. */
MVS_API mvs_status mvs_grad_check(double* max_rel_error);

/* Cross-view attention heatmaps for one object: extracts the post-
 * softmax row of the flattened (view, patch) query at the first
 * trainable MVA layer (or `layer` if >= 0) and writes one overlay PPM
 * per view under out_dir. */
MVS_API mvs_status mvs_attention_heatmaps(const mvs_config* cfg, const char* data_dir,
                                          const char* model_prefix, const char* object_id,
                                          int32_t layer, int32_t view, int32_t patch,
                                          const char* out_dir);

/* ------------------------------------------------------------------ */
/* model handle                                                        */
/* ------------------------------------------------------------------ */

typedef struct mvs_model mvs_model;

MVS_API mvs_model* mvs_model_load(const char* prefix);
MVS_API void mvs_model_free(mvs_model* model);
MVS_API int32_t mvs_model_embed_dim(const mvs_model* model);
MVS_API int32_t mvs_model_has_shape_branch(const mvs_model* model);

/* Unit-norm embedding of n_views PPM images through the shape branch
 * (falls back to the image branch when none is attached). out must hold
 * embed_dim floats. */
MVS_API mvs_status mvs_model_encode_views(const mvs_model* model, const char* const* image_paths,
                                          int32_t n_views, float* out);

MVS_API mvs_status mvs_model_encode_text(const mvs_model* model, const char* text, float* out);

/* ------------------------------------------------------------------ */
/* embedding index handle                                              */
/* ------------------------------------------------------------------ */

typedef struct mvs_index mvs_index;

MVS_API mvs_index* mvs_index_create(int32_t dim);
MVS_API mvs_index* mvs_index_open(const char* embeddings_path, const char* ids_path);
MVS_API void mvs_index_free(mvs_index* index);
MVS_API int64_t mvs_index_size(const mvs_index* index);
MVS_API int32_t mvs_index_dim(const mvs_index* index);
MVS_API mvs_status mvs_index_add(mvs_index* index, const char* id, const float* vec, int32_t dim);
MVS_API mvs_status mvs_index_save(const mvs_index* index, const char* embeddings_path,
                                  const char* ids_path);
MVS_API mvs_status mvs_index_find(const mvs_index* index, const char* id, int64_t* out_row);
MVS_API mvs_status mvs_index_get_id(const mvs_index* index, int64_t row, char* out,
                                    size_t capacity);
MVS_API mvs_status mvs_index_get_row(const mvs_index* index, int64_t row, float* out,
                                     int32_t dim);

/* Exact cosine top-k (descending, ties in insertion order). */
MVS_API mvs_status mvs_index_topk(const mvs_index* index, const float* query, int32_t dim,
                                  int32_t k, int64_t* out_rows, float* out_scores);

/* Row maximizing min(<row,a>, <row,b>) outside the excluded ids. */
MVS_API mvs_status mvs_index_concept_mix(const mvs_index* index, const float* a, const float* b,
                                         int32_t dim, const char* const* exclude_ids,
                                         int32_t n_exclude, int64_t* out_row);

#ifdef __cplusplus
}
#endif

#endif /* MVSHAPE_H */
