#ifndef FEWSHOT_INSPECT_H
#define FEWSHOT_INSPECT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum FsiStatus {
  FSI_STATUS_OK = 0,
  FSI_STATUS_NULL_POINTER = 1,
  FSI_STATUS_INVALID_UTF8 = 2,
  FSI_STATUS_INVALID_ARGUMENT = 3,
  // Dataset, embedding or config file could not be read or is invalid.
  FSI_STATUS_IO = 4,
  // The value is undefined (e.g. MCC with an empty marginal).
  FSI_STATUS_NOT_AVAILABLE = 5,
  FSI_STATUS_SELECTION = 6,
  FSI_STATUS_OUT_OF_RANGE = 7,
  // A panic was caught at the boundary.
  FSI_STATUS_INTERNAL = 99,
} FsiStatus;

// Parsed verdict class.
typedef enum FsiClassification {
  FSI_CLASSIFICATION_NON_DEFECTIVE = 0,
  FSI_CLASSIFICATION_DEFECTIVE = 1,
  FSI_CLASSIFICATION_FORMAT_ERROR = 2,
} FsiClassification;

typedef struct FsiCorpus FsiCorpus;

typedef struct FsiSelection FsiSelection;

typedef struct FsiStore FsiStore;

typedef struct FsiVerdict FsiVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread. Valid until the next
// failing call on the same thread; do not free.
const char *fsi_last_error(void);

// Release a string returned by this library.
//
// # Safety
// `s` must come from this library and not have been freed.
void fsi_string_free(char *s);

// The inspection question for `product`.
//
// # Safety
// `product` must be a NUL-terminated string and `out` a valid pointer.
enum FsiStatus fsi_build_question(const char *product, char **out);

// Parse model output and normalize its boxes for a `width` x `height` image.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum FsiStatus fsi_verdict_parse(const char *text,
                                 uint32_t width,
                                 uint32_t height,
                                 struct FsiVerdict **out);

// # Safety
// `v` must be a live verdict handle.
enum FsiClassification fsi_verdict_classification(const struct FsiVerdict *v);

// # Safety
// `v` must be a live verdict handle or NULL.
size_t fsi_verdict_box_count(const struct FsiVerdict *v);

// Box `index` as `[x1, y1, x2, y2]`, normalized to [0, 1].
//
// # Safety
// `v` must be a live verdict handle and `out` point to 4 doubles.
enum FsiStatus fsi_verdict_box(const struct FsiVerdict *v, size_t index, double *out);

// Anomaly mode text; `NOT_AVAILABLE` when the answer has none.
//
// # Safety
// `v` must be a live verdict handle and `out` a valid pointer.
enum FsiStatus fsi_verdict_mode(const struct FsiVerdict *v, char **out);

// # Safety
// `v` must come from `fsi_verdict_parse` and not have been freed.
void fsi_verdict_free(struct FsiVerdict *v);

// F1-score; `NOT_AVAILABLE` when undefined.
//
// # Safety
// `out` must be a valid pointer.
enum FsiStatus fsi_f1(uint64_t tp, uint64_t fp, uint64_t tn, uint64_t fn_, double *out);

// Matthews correlation coefficient; `NOT_AVAILABLE` when any marginal is 0.
//
// # Safety
// `out` must be a valid pointer.
enum FsiStatus fsi_mcc(uint64_t tp, uint64_t fp, uint64_t tn, uint64_t fn_, double *out);

// Rank AUROC of `scores` against binary `labels` (non-zero is positive).
//
// # Safety
// `scores` and `labels` must point to `n` elements; `out` must be valid.
enum FsiStatus fsi_auroc(const double *scores, const uint8_t *labels, size_t n, double *out);

// Load a dataset (`kind` is `mvtec`, `visa` or `custom`).
//
// # Safety
// `kind` and `root` must be NUL-terminated strings and `out` valid.
enum FsiStatus fsi_corpus_load(const char *kind, const char *root, struct FsiCorpus **out);

// # Safety
// `c` must be a live corpus handle or NULL.
size_t fsi_corpus_len(const struct FsiCorpus *c);

// # Safety
// `c` must come from `fsi_corpus_load` and not have been freed. Stores
// loaded against it must be freed first.
void fsi_corpus_free(struct FsiCorpus *c);

// Load a sidecar embedding file and check it against `corpus`.
//
// # Safety
// `corpus` must be live, `path` NUL-terminated and `out` valid.
enum FsiStatus fsi_store_load(const struct FsiCorpus *corpus,
                              const char *path,
                              struct FsiStore **out);

// # Safety
// `s` must come from `fsi_store_load` and not have been freed.
void fsi_store_free(struct FsiStore *s);

// Choose examples for `query_id` from the other annotated images of its
// category. `store` may be NULL for the `random` strategy.
//
// # Safety
// Handles must be live (or `store` NULL), strings NUL-terminated, `out` valid.
enum FsiStatus fsi_select(const struct FsiCorpus *corpus,
                          const struct FsiStore *store,
                          const char *strategy,
                          const char *query_id,
                          const char *shot_plan,
                          uint64_t seed,
                          struct FsiSelection **out);

// # Safety
// `s` must be a live selection handle or NULL.
size_t fsi_selection_len(const struct FsiSelection *s);

// Image id of example `index`, in slot order.
//
// # Safety
// `s` must be a live selection handle and `out` valid.
enum FsiStatus fsi_selection_id(const struct FsiSelection *s, size_t index, char **out);

// Selection score of example `index`: distance for `ours`, similarity for
// `rices`, `NOT_AVAILABLE` for `random`.
//
// # Safety
// `s` must be a live selection handle and `out` valid.
enum FsiStatus fsi_selection_score(const struct FsiSelection *s, size_t index, double *out);

// # Safety
// `s` must come from `fsi_select` and not have been freed.
void fsi_selection_free(struct FsiSelection *s);

// Run an experiment from a TOML config file and return its report as JSON.
//
// # Safety
// `config_path` must be NUL-terminated and `report_json` valid.
enum FsiStatus fsi_run(const char *config_path, char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEWSHOT_INSPECT_H */
