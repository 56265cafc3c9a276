#ifndef LATL_H
#define LATL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum LatlStatus {
  LATL_STATUS_OK = 0,
  LATL_STATUS_NULL_POINTER = 1,
  LATL_STATUS_INVALID_UTF8 = 2,
  LATL_STATUS_IO = 3,
  LATL_STATUS_FORMAT = 4,
  LATL_STATUS_INVALID_ARGUMENT = 5,
  LATL_STATUS_UNKNOWN_LANGUAGE = 6,
  LATL_STATUS_NUMERIC = 7,
  LATL_STATUS_BUFFER_TOO_SMALL = 8,
  LATL_STATUS_PANIC = 9,
} LatlStatus;

typedef enum LatlMetric {
  LATL_METRIC_COSINE = 0,
  LATL_METRIC_EUCLIDEAN = 1,
} LatlMetric;

/*
 A loaded checkpoint.
 */
typedef struct LatlModel LatlModel;

/*
 Language vectors with codes and family labels.
 */
typedef struct LatlSpace LatlSpace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL after a
 success. Valid until the next call into the library on this thread.
 */
const char *latl_last_error(void);

/*
 Releases a string returned by this library. NULL is ignored.

 # Safety
 `s` must be NULL or a string obtained from this library, freed once.
 */
void latl_string_free(char *s);

/*
 Loads a checkpoint file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LatlStatus latl_model_load(const char *path, struct LatlModel **out);

/*
 # Safety
 `model` must be NULL or a handle from [`latl_model_load`], freed once.
 */
void latl_model_free(struct LatlModel *model);

/*
 Number of languages (flags) the model knows.

 # Safety
 `model` must be a live handle; `out` must be writable.
 */
enum LatlStatus latl_model_language_count(const struct LatlModel *model, size_t *out);

/*
 Translates `text` into the language `tgt_lang`. On success `*out_text`
 receives a string to release with [`latl_string_free`] and `*out_score`
 the hypothesis score.

 # Safety
 `model` must be a live handle, the strings NUL-terminated and the output
 pointers writable.
 */
enum LatlStatus latl_translate(const struct LatlModel *model,
                               const char *tgt_lang,
                               const char *text,
                               size_t beam_size,
                               size_t max_len,
                               double length_norm,
                               char **out_text,
                               double *out_score);

/*
 The model's language space, minus the codes in `exclude` (a
 comma-separated list, or NULL).

 # Safety
 `model` must be a live handle, `exclude` NULL or NUL-terminated, `out`
 writable.
 */
enum LatlStatus latl_space_from_model(const struct LatlModel *model,
                                      const char *exclude,
                                      struct LatlSpace **out);

/*
 Loads a `lang<TAB>family<TAB>v1..vd` table.

 # Safety
 `path` must be NUL-terminated; `out` writable.
 */
enum LatlStatus latl_space_load_tsv(const char *path, struct LatlSpace **out);

/*
 # Safety
 `space` must be NULL or a handle from this library, freed once.
 */
void latl_space_free(struct LatlSpace *space);

/*
 Number of languages and vector width.

 # Safety
 `space` must be a live handle; the outputs writable.
 */
enum LatlStatus latl_space_shape(const struct LatlSpace *space, size_t *out_len, size_t *out_dim);

/*
 Code of language `index`, released with [`latl_string_free`].

 # Safety
 `space` must be a live handle; `out` writable.
 */
enum LatlStatus latl_space_code(const struct LatlSpace *space, size_t index, char **out);

/*
 Row-major `len × len` distances into `out` (capacity `out_len`).

 # Safety
 `space` must be a live handle; `out` valid for `out_len` writes.
 */
enum LatlStatus latl_space_distances(const struct LatlSpace *space,
                                     enum LatlMetric metric,
                                     double *out,
                                     size_t out_len);

/*
 Exact t-SNE. Writes `x0 y0 x1 y1 ...` into `out_xy` (capacity
 `out_len`, at least `2 × len`) and the final KL into `out_kl`.

 # Safety
 `space` must be a live handle; the outputs valid for writing.
 */
enum LatlStatus latl_space_tsne(const struct LatlSpace *space,
                                double perplexity,
                                size_t iterations,
                                double learning_rate,
                                uint64_t seed,
                                double *out_xy,
                                size_t out_len,
                                double *out_kl);

/*
 UPGMA tree as a Newick string, released with [`latl_string_free`].

 # Safety
 `space` must be a live handle; `out` writable.
 */
enum LatlStatus latl_space_newick(const struct LatlSpace *space,
                                  enum LatlMetric metric,
                                  char **out);

/*
 Cuts the UPGMA tree into `k` clusters. Writes one cluster id per
 language into `out_assignment` and the family purity and silhouette.

 # Safety
 `space` must be a live handle; the outputs valid for writing.
 */
enum LatlStatus latl_space_cut(const struct LatlSpace *space,
                               enum LatlMetric metric,
                               size_t k,
                               size_t *out_assignment,
                               size_t out_len,
                               double *out_purity,
                               double *out_silhouette);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATL_H */
