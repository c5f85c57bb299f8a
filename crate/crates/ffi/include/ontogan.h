#ifndef ONTOGAN_H
#define ONTOGAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OzStatus {
  OZ_STATUS_OK = 0,
  OZ_STATUS_NULL_POINTER = -1,
  OZ_STATUS_INVALID_ARGUMENT = -2,
  OZ_STATUS_IO = -3,
  OZ_STATUS_FORMAT = -4,
  OZ_STATUS_SHAPE = -5,
  OZ_STATUS_NOT_FOUND = -6,
  OZ_STATUS_RUNTIME = -7,
  OZ_STATUS_PANIC = -8,
} OzStatus;

/*
 Concept embedding table.
 */
typedef struct OzEmbeddings OzEmbeddings;

/*
 Generator checkpoint.
 */
typedef struct OzGan OzGan;

typedef struct OzKgcMetrics {
  double mrr;
  double hit10;
  double hit5;
  double hit1;
} OzKgcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or null. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *oz_last_error_message(void);

/*
 Loads a generator checkpoint into `*out`.

 # Safety
 `path` is a valid C string and `out` is writable.
 */
enum OzStatus oz_gan_load(const char *path, struct OzGan **out);

/*
 # Safety
 `gan` is null or came from [`oz_gan_load`] and was not freed.
 */
void oz_gan_free(struct OzGan *gan);

/*
 Width of generated features, or 0 for a null handle.

 # Safety
 `gan` is null or a live handle.
 */
size_t oz_gan_feature_dim(const struct OzGan *gan);

/*
 Width of the conditioning embedding, or 0 for a null handle.

 # Safety
 `gan` is null or a live handle.
 */
size_t oz_gan_embedding_dim(const struct OzGan *gan);

/*
 Writes `n` generated rows (row-major, `n * feature_dim` values) for one
 class embedding into `out`.

 # Safety
 `embedding` holds `embedding_len` values and `out` has room for `out_len`.
 */
enum OzStatus oz_gan_generate(const struct OzGan *gan,
                              const double *embedding,
                              size_t embedding_len,
                              size_t n,
                              uint64_t seed,
                              double *out,
                              size_t out_len);

/*
 Loads a concept embedding table into `*out`.

 # Safety
 `path` is a valid C string and `out` is writable.
 */
enum OzStatus oz_embeddings_load(const char *path, struct OzEmbeddings **out);

/*
 # Safety
 `table` is null or came from [`oz_embeddings_load`] and was not freed.
 */
void oz_embeddings_free(struct OzEmbeddings *table);

/*
 # Safety
 `table` is null or a live handle.
 */
size_t oz_embeddings_dim(const struct OzEmbeddings *table);

/*
 # Safety
 `table` is null or a live handle.
 */
size_t oz_embeddings_len(const struct OzEmbeddings *table);

/*
 Copies the embedding of `concept` into `out`.

 # Safety
 `concept` is a valid C string and `out` has room for `out_len` values.
 */
enum OzStatus oz_embeddings_get(const struct OzEmbeddings *table,
                                const char *concept,
                                double *out,
                                size_t out_len);

/*
 Harmonic mean of seen and unseen accuracy; 0 when both are 0.
 */
double oz_harmonic_mean(double acc_seen, double acc_unseen);

/*
 MRR and Hit@{10,5,1} of 1-based ranks.

 # Safety
 `ranks` holds `n` values and `out` is writable.
 */
enum OzStatus oz_kgc_metrics(const uint64_t *ranks, size_t n, struct OzKgcMetrics *out);

/*
 Expected MRR of uniformly random rankings over the given candidate counts.

 # Safety
 `counts` holds `n` values and `out` is writable.
 */
enum OzStatus oz_random_mrr(const uint64_t *counts, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ONTOGAN_H */
