#ifndef GDK_H
#define GDK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GdkStatus {
  GDK_STATUS_OK = 0,
  GDK_STATUS_NULL_POINTER = 1,
  GDK_STATUS_INVALID_UTF8 = 2,
  GDK_STATUS_INVALID_ARGUMENT = 3,
  GDK_STATUS_MALFORMED = 4,
  GDK_STATUS_UNKNOWN_NAME = 5,
  GDK_STATUS_PHASE_ORDERING = 6,
  GDK_STATUS_BACKEND = 7,
  GDK_STATUS_PANIC = 8,
} GdkStatus;

/*
 Opaque hashing sentence embedder.
 */
typedef struct GdkHashEmbedder GdkHashEmbedder;

/*
 Opaque toy language model.
 */
typedef struct GdkToyLm GdkToyLm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null after a success.
 The pointer stays valid until the next gdk call on the same thread.
 */
const char *gdk_last_error_message(void);

/*
 # Safety

 `s` must be null or a string returned by this library that has not been
 freed yet.
 */
void gdk_string_free(char *s);

size_t gdk_relation_count(void);

/*
 Name of the relation at `index` in registry order.

 # Safety

 `out` must be a valid pointer to writable storage for one `char *`.
 */
enum GdkStatus gdk_relation_name(size_t index, char **out);

/*
 # Safety

 String arguments must be null-terminated; `out` must be writable.
 */
enum GdkStatus gdk_render_facet(const char *facet,
                                const char *concept,
                                const char *country,
                                char **out);

/*
 # Safety

 String arguments must be null-terminated; `out` must be writable.
 */
enum GdkStatus gdk_render_relation(const char *head,
                                   const char *relation,
                                   const char *tail,
                                   char **out);

/*
 Keep the JSONL assertions scoring strictly above `threshold`.

 # Safety

 `jsonl` must be null-terminated; `out` must be writable.
 */
enum GdkStatus gdk_filter_assertions(const char *jsonl, double threshold, char **out);

/*
 # Safety

 `a` and `b` must point to `len` grades each; `out` must be writable.
 */
enum GdkStatus gdk_cohen_kappa(const uint8_t *a, const uint8_t *b, size_t len, double *out);

/*
 Softmax attention over `count` row-major embeddings of width `dim`.

 # Safety

 `embeddings` must hold `count * dim` values and `query` `dim` values.
 `out_vector` must have room for `dim` values and `out_weights` for `count`.
 */
enum GdkStatus gdk_attention_pool(const double *embeddings,
                                  size_t count,
                                  size_t dim,
                                  const double *query,
                                  double *out_vector,
                                  double *out_weights);

/*
 Mean per-answer binary cross-entropy over four logits.

 # Safety

 `scores` must point to four values; `out` must be writable.
 */
enum GdkStatus gdk_bce_loss(const double *scores, size_t gold_index, double *out);

/*
 Build a toy model from JSON `[[prefix_tokens, {token: prob}], ...]`.

 # Safety

 `table_json` must be null-terminated; `out` must be writable. The handle
 is released with [`gdk_toy_lm_free`].
 */
enum GdkStatus gdk_toy_lm_new(const char *table_json, struct GdkToyLm **out);

/*
 # Safety

 `lm` must be null or a handle from [`gdk_toy_lm_new`] not yet freed.
 */
void gdk_toy_lm_free(struct GdkToyLm *lm);

/*
 Beam search from a whitespace-separated context; writes a JSON array of
 `{tokens, log_prob}` best first.

 # Safety

 `lm` must be a live handle, `context` null-terminated, `out` writable.
 */
enum GdkStatus gdk_beam_search(const struct GdkToyLm *lm,
                               const char *context,
                               size_t beam_width,
                               size_t max_len,
                               size_t num_return,
                               char **out);

/*
 Per-relation inferences for a JSON generation request; writes the JSON
 inference set.

 # Safety

 `lm` must be a live handle, `request_json` null-terminated, `out` writable.
 */
enum GdkStatus gdk_generate_inferences(const struct GdkToyLm *lm,
                                       const char *request_json,
                                       char **out);

/*
 # Safety

 `out` must be writable. The handle is released with
 [`gdk_hash_embedder_free`].
 */
enum GdkStatus gdk_hash_embedder_new(size_t dimension, uint64_t seed, struct GdkHashEmbedder **out);

/*
 # Safety

 `embedder` must be null or a handle from [`gdk_hash_embedder_new`] not yet
 freed.
 */
void gdk_hash_embedder_free(struct GdkHashEmbedder *embedder);

/*
 Unit-norm embedding of `text` into `out`, which must hold exactly the
 embedder's dimension.

 # Safety

 `embedder` must be a live handle, `text` null-terminated and `out` must
 have room for `out_len` values.
 */
enum GdkStatus gdk_hash_embedder_embed(const struct GdkHashEmbedder *embedder,
                                       const char *text,
                                       double *out,
                                       size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GDK_H */
