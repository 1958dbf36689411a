/* openmod C ABI. See crates/ffi/src/lib.rs for ownership rules. */

#pragma once

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum openmod_status {
  OPENMOD_OK = 0,
  // Null pointer or malformed UTF-8/JSON argument.
  OPENMOD_INVALID_ARGUMENT = 1,
  // Filesystem or file-format failure.
  OPENMOD_IO_ERROR = 2,
  // Configuration or contract violation (bad stage tag, empty split, ...).
  OPENMOD_VALIDATION_ERROR = 3,
  OPENMOD_INTERNAL_ERROR = 4,
} openmod_status;

// Opaque checkpoint handle.
typedef struct OpenmodCheckpoint OpenmodCheckpoint;

// Word error rate counts for a reference/hypothesis pair.
typedef struct OpenmodWerCounts {
  uint64_t substitutions;
  uint64_t deletions;
  uint64_t insertions;
  uint64_t reference_len;
  double wer;
} OpenmodWerCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version string; static storage, do not free.
const char *openmod_version(void);

// Message for the most recent failure on this thread, or NULL. Free with
// `openmod_string_free`.
char *openmod_last_error(void);

// # Safety
// `s` must be a pointer previously returned by this library, not yet freed.
void openmod_string_free(char *s);

// Score whitespace-separated word sequences. The reference must be
// non-empty.
//
// # Safety
// `reference` and `hypothesis` must be valid NUL-terminated strings and
// `out` a valid pointer.
enum openmod_status openmod_wer(const char *reference,
                                const char *hypothesis,
                                struct OpenmodWerCounts *out);

// Generate a corpus directory. `config_json` may be NULL for the built-in
// default corpus.
//
// # Safety
// Pointer arguments must be null or valid NUL-terminated strings.
enum openmod_status openmod_generate_corpus(const char *config_json,
                                            const char *out_dir,
                                            bool force);

// Open a checkpoint directory; NULL on failure (see `openmod_last_error`).
//
// # Safety
// `dir` must be a valid NUL-terminated string.
struct OpenmodCheckpoint *openmod_checkpoint_open(const char *dir);

// # Safety
// `handle` must be a pointer from `openmod_checkpoint_open`, not yet freed.
void openmod_checkpoint_free(struct OpenmodCheckpoint *handle);

// Training-stage tag of the checkpoint. Free with `openmod_string_free`.
//
// # Safety
// `handle` must be a live checkpoint handle.
char *openmod_checkpoint_stage(const struct OpenmodCheckpoint *handle);

// Content hash covering config, freeze mask, stage and all tensors.
//
// # Safety
// `handle` must be a live checkpoint handle.
char *openmod_checkpoint_content_hash(const struct OpenmodCheckpoint *handle);

// Tunable/total scalar parameter counts under the checkpoint's freeze mask.
//
// # Safety
// `handle` must be a live checkpoint handle; out pointers must be valid or
// null.
enum openmod_status openmod_checkpoint_count_tunable(const struct OpenmodCheckpoint *handle,
                                                     uint64_t *tunable,
                                                     uint64_t *total,
                                                     double *ratio);

// Decode a corpus split and return the WER report as JSON. `split` is
// train|val|test; `modality` is audio|visual|audio_visual.
//
// # Safety
// `handle` must be a live checkpoint handle; string arguments valid and
// NUL-terminated; `out_report_json` a valid pointer.
enum openmod_status openmod_evaluate(const struct OpenmodCheckpoint *handle,
                                     const char *corpus_dir,
                                     const char *split,
                                     const char *modality,
                                     uint32_t beam_size,
                                     char **out_report_json);

// Run one training stage, writing a checkpoint directory. `stage` is
// pretrain|asr|prompt|finetune; `stage_config_json` may be NULL for desk
// defaults; `input_checkpoint` is required for every stage except pretrain;
// `split_manifest` is required for the prompt stage.
//
// # Safety
// Pointer arguments must be null or valid NUL-terminated strings.
enum openmod_status openmod_train(const char *stage,
                                  const char *corpus_dir,
                                  const char *input_checkpoint,
                                  const char *split_manifest,
                                  const char *out_dir,
                                  const char *stage_config_json,
                                  bool force);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
