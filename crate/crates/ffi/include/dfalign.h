#ifndef DFALIGN_H
#define DFALIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which split of a dataset.
 */
typedef enum DfaSplit {
  DFA_SPLIT_TRAIN = 0,
  DFA_SPLIT_TEST = 1,
} DfaSplit;

typedef enum DfaStatus {
  DFA_STATUS_OK = 0,
  DFA_STATUS_NULL_POINTER = 1,
  DFA_STATUS_CONFIG = 2,
  DFA_STATUS_PARSE = 3,
  DFA_STATUS_IO = 4,
  DFA_STATUS_SHAPE = 5,
  DFA_STATUS_VALIDATION = 6,
  DFA_STATUS_RUNTIME = 7,
  DFA_STATUS_INVALID_UTF8 = 8,
  DFA_STATUS_BUFFER_TOO_SMALL = 9,
  DFA_STATUS_PANIC = 10,
} DfaStatus;

/**
 * Run configuration.
 */
typedef struct DfaConfig DfaConfig;

/**
 * Synthetic dataset with its category split.
 */
typedef struct DfaDataset DfaDataset;

/**
 * Model parameters plus the seed they were built from.
 */
typedef struct DfaModel DfaModel;

/**
 * One scored temporal interval.
 */
typedef struct DfaProposal {
  size_t video;
  double start;
  double end;
  size_t category;
  double score;
} DfaProposal;

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call on this thread.
 */
const char *dfa_last_error(void);

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void dfa_string_free(char *s);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum DfaStatus dfa_config_default(struct DfaConfig **out);

/**
 * Parses and validates a JSON config; unknown keys are rejected.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum DfaStatus dfa_config_from_json(const char *json, struct DfaConfig **out);

/**
 * Canonical JSON of the config as a new string (free with
 * [`dfa_string_free`]).
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be valid for writes.
 */
enum DfaStatus dfa_config_to_json(const struct DfaConfig *cfg, char **out);

/**
 * Writes the 64-character hex config hash plus a NUL into `buf`, which
 * must hold at least 65 bytes.
 *
 * # Safety
 * `cfg` must be a live handle; `buf` must be valid for `len` bytes.
 */
enum DfaStatus dfa_config_hash(const struct DfaConfig *cfg, char *buf, size_t len);

/**
 * # Safety
 * `cfg` must be NULL or a live handle not used afterwards.
 */
void dfa_config_free(struct DfaConfig *cfg);

/**
 * Generates the synthetic dataset described by the config's `data` section.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be valid for writes.
 */
enum DfaStatus dfa_dataset_generate(const struct DfaConfig *cfg, struct DfaDataset **out);

/**
 * Writes a dataset directory.
 *
 * # Safety
 * Handles must be live; `dir` must be a NUL-terminated path.
 */
enum DfaStatus dfa_dataset_save(const struct DfaDataset *ds,
                                const struct DfaConfig *cfg,
                                const char *dir);

/**
 * Reads a dataset directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated path; `out` must be valid for writes.
 */
enum DfaStatus dfa_dataset_load(const char *dir, struct DfaDataset **out);

/**
 * Number of videos in one split.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be valid for writes.
 */
enum DfaStatus dfa_dataset_num_videos(const struct DfaDataset *ds,
                                      enum DfaSplit split,
                                      size_t *out);

/**
 * # Safety
 * `ds` must be NULL or a live handle not used afterwards.
 */
void dfa_dataset_free(struct DfaDataset *ds);

/**
 * Untrained model built from `seed`.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be valid for writes.
 */
enum DfaStatus dfa_model_new(const struct DfaConfig *cfg, uint64_t seed, struct DfaModel **out);

/**
 * Trains a fresh model from `seed` on the seen split of `ds`.
 *
 * # Safety
 * Handles must be live; `out` must be valid for writes.
 */
enum DfaStatus dfa_model_train(const struct DfaConfig *cfg,
                               const struct DfaDataset *ds,
                               uint64_t seed,
                               struct DfaModel **out);

/**
 * Writes a checkpoint.
 *
 * # Safety
 * `model` must be a live handle; `path` must be a NUL-terminated path.
 */
enum DfaStatus dfa_model_save(const struct DfaModel *model, const char *path);

/**
 * Reads a checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated path; `out` must be valid for writes.
 */
enum DfaStatus dfa_model_load(const char *path, struct DfaModel **out);

/**
 * Evaluates on the unseen split of `ds`; `out` receives the metrics JSON
 * (free with [`dfa_string_free`]).
 *
 * # Safety
 * Handles must be live; `out` must be valid for writes.
 */
enum DfaStatus dfa_model_evaluate(const struct DfaModel *model,
                                  const struct DfaDataset *ds,
                                  char **out);

/**
 * # Safety
 * `model` must be NULL or a live handle not used afterwards.
 */
void dfa_model_free(struct DfaModel *model);

/**
 * Temporal IoU of `[a_start, a_end]` and `[b_start, b_end]`.
 */
double dfa_tiou(double a_start, double a_end, double b_start, double b_end);

/**
 * Gaussian Soft-NMS. `out` must hold `n` entries; `*out_len` receives the
 * number kept, in descending score order.
 *
 * # Safety
 * `props` must be valid for `n` reads and `out` for `n` writes (either may
 * be NULL when `n == 0`); `out_len` must be valid for writes.
 */
enum DfaStatus dfa_soft_nms(const struct DfaProposal *props,
                            size_t n,
                            double sigma,
                            double floor,
                            struct DfaProposal *out,
                            size_t *out_len);

/**
 * Monte-Carlo check of the config's diffusion schedule on random vectors;
 * `all_pass` receives 1 or 0.
 *
 * # Safety
 * `cfg` must be a live handle; `all_pass` must be valid for writes.
 */
enum DfaStatus dfa_mc_verify(const struct DfaConfig *cfg,
                             size_t samples,
                             uint64_t seed,
                             int32_t *all_pass);

#endif  /* DFALIGN_H */
