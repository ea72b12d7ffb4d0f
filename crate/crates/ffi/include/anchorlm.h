#ifndef ANCHORLM_H
#define ANCHORLM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AlmStatus {
  ALM_STATUS_OK = 0,
  ALM_STATUS_NULL_POINTER = 1,
  ALM_STATUS_USAGE = 2,
  ALM_STATUS_INPUT = 3,
  ALM_STATUS_CONTRACT = 4,
  ALM_STATUS_NUMERIC = 5,
  ALM_STATUS_CONFIG = 6,
  ALM_STATUS_INVALID_UTF8 = 7,
  ALM_STATUS_PANIC = 8,
} AlmStatus;

// Opaque model handle.
typedef struct AlmModel AlmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, empty after success.
// The pointer stays valid until the next library call on this thread.
const char *alm_last_error(void);

// # Safety
// `s` must come from this library or be null.
void alm_string_free(char *s);

// Loads a checkpoint directory, or a training run directory holding one.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum AlmStatus alm_model_load(const char *path, struct AlmModel **out);

// # Safety
// `model` must come from `alm_model_load` or be null.
void alm_model_free(struct AlmModel *model);

// Window length of the model, 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t alm_model_context_len(const struct AlmModel *model);

// Vocabulary size of the model, 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t alm_model_vocab_size(const struct AlmModel *model);

// Greedy continuation of `prompt`. `reduce` non-zero enables cache
// reduction (anchor-masked models only). On success `*out_text` holds the
// decoded tokens and, if non-null, `*out_final_live` the live cache size.
//
// # Safety
// Pointers must be valid; `prompt` NUL-terminated.
enum AlmStatus alm_generate(const struct AlmModel *model,
                            const char *prompt,
                            size_t max_new,
                            int32_t reduce,
                            char **out_text,
                            size_t *out_final_live);

// Log-probability of `continuation` following `context`.
//
// # Safety
// Pointers must be valid; strings NUL-terminated.
enum AlmStatus alm_score(const struct AlmModel *model,
                         const char *context,
                         const char *continuation,
                         double *out_logprob);

// Perplexity of `text` (one document per line) with the model's own mask
// and annotation, over windows of the full context length.
//
// # Safety
// Pointers must be valid; `text` NUL-terminated.
enum AlmStatus alm_perplexity(const struct AlmModel *model, const char *text, double *out_ppl);

// Writes the `len * len` row-major anchor mask (1 = visible) to `out`.
//
// # Safety
// `is_anchor` and `seq_index` must hold `len` elements, `out` `len * len`.
enum AlmStatus alm_anchor_mask(const uint8_t *is_anchor,
                               const size_t *seq_index,
                               size_t len,
                               uint8_t *out);

// Applies one cache reduction to entries at strictly increasing
// `positions`. `keep_out[i]` is set to 1 for survivors and `*kept` to
// their count.
//
// # Safety
// `positions`, `is_anchor` and `keep_out` must hold `len` elements.
enum AlmStatus alm_reduce(const size_t *positions,
                          const uint8_t *is_anchor,
                          size_t len,
                          size_t protected_upto,
                          uint8_t *keep_out,
                          size_t *kept);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANCHORLM_H */
