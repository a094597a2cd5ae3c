#ifndef SCENECOT_H
#define SCENECOT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum ScStatus {
  SC_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  SC_STATUS_NULL_POINTER = 1,
  /**
   * An input string was not valid UTF-8.
   */
  SC_STATUS_INVALID_UTF8 = 2,
  /**
   * The input was well-typed but rejected, e.g. a schema violation.
   */
  SC_STATUS_INVALID_INPUT = 3,
  /**
   * A numeric argument was outside its allowed range.
   */
  SC_STATUS_OUT_OF_RANGE = 4,
  /**
   * A caller-provided buffer was too small; the needed size was written.
   */
  SC_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * Reading or writing a file failed.
   */
  SC_STATUS_IO = 6,
  /**
   * The library panicked; this is a bug.
   */
  SC_STATUS_PANIC = 7,
} ScStatus;

/**
 * Parsed sections of one raw rollout.
 */
typedef struct ScTaggedOutput ScTaggedOutput;

/**
 * A toy token policy.
 */
typedef struct ScToyPolicy ScToyPolicy;

/**
 * Reward components of one rollout under the default reward settings.
 */
typedef struct ScRewardBreakdown {
  uint8_t r_label;
  uint8_t r_json;
  uint8_t r_prompt;
  double r_format;
  bool gate_passed;
  double r_understanding;
  double r_image;
  double r_final;
} ScRewardBreakdown;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or NULL if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *sc_last_error_message(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must be NULL or a pointer returned by this library that has not been
 * freed yet.
 */
void sc_string_free(char *s);

/**
 * Library version as a static string. Do not free.
 */
const char *sc_version(void);

/**
 * Validates a structured-vision JSON document. Writes whether it is valid
 * to `out_valid` and, if `out_report` is not NULL, the report as JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string; out pointers must be NULL or
 * valid for writes.
 */
enum ScStatus sc_validate_state(const char *json, bool *out_valid, char **out_report);

/**
 * Canonical JSON of a valid structured-vision document. Invalid input
 * gives [`ScStatus::InvalidInput`] with the violations in the last error.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid for writes.
 */
enum ScStatus sc_canonicalize(const char *json, char **out);

/**
 * Splits raw rollout text into its tagged sections. Never fails on
 * content; malformed tags just leave sections absent.
 *
 * # Safety
 * `raw` must be a NUL-terminated string and `out` valid for writes.
 */
enum ScStatus sc_tagged_parse(const char *raw, struct ScTaggedOutput **out);

/**
 * Releases a tagged-output handle. NULL is ignored.
 *
 * # Safety
 * `handle` must be NULL or a live handle from [`sc_tagged_parse`].
 */
void sc_tagged_free(struct ScTaggedOutput *handle);

/**
 * Trimmed structure-vision section, or NULL in `out` when absent.
 *
 * # Safety
 * `handle` must be a live handle and `out` valid for writes.
 */
enum ScStatus sc_tagged_structure_vision(const struct ScTaggedOutput *handle, char **out);

/**
 * Trimmed final-prompt section, or NULL in `out` when absent.
 *
 * # Safety
 * `handle` must be a live handle and `out` valid for writes.
 */
enum ScStatus sc_tagged_final_prompt(const struct ScTaggedOutput *handle, char **out);

/**
 * Format reward of a parsed rollout. Only the format fields and
 * `gate_passed` of `out` are written.
 *
 * # Safety
 * `handle` must be a live handle and `out` valid for writes.
 */
enum ScStatus sc_tagged_format_reward(const struct ScTaggedOutput *handle,
                                      bool strict_json_schema,
                                      struct ScRewardBreakdown *out);

/**
 * Full gated reward from the three format flags, the judge's three 0 to 2
 * scores and the two image scores in [0, 1]. When the gate fails the
 * understanding and image fields are left at zero.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum ScStatus sc_reward(bool label,
                        bool json,
                        bool prompt,
                        int64_t perception,
                        int64_t completeness,
                        int64_t faithfulness,
                        double hps,
                        double vlm,
                        struct ScRewardBreakdown *out);

/**
 * Group-relative advantages: (r − mean) / (population std + std_eps).
 * `rewards` and `out` both hold `len` values.
 *
 * # Safety
 * `rewards` must hold `len` readable values and `out` `len` writable ones.
 */
enum ScStatus sc_group_advantages(const double *rewards, size_t len, double std_eps, double *out);

/**
 * Creates a toy policy whose parameters are Gaussian noise of std `scale`
 * drawn from `seed`. A `scale` of zero gives the uniform policy.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum ScStatus sc_toy_policy_new(size_t position_buckets,
                                uint64_t seed,
                                double scale,
                                struct ScToyPolicy **out);

/**
 * Loads a toy policy from a JSON checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for writes.
 */
enum ScStatus sc_toy_policy_load(const char *path, struct ScToyPolicy **out);

/**
 * Releases a policy handle. NULL is ignored.
 *
 * # Safety
 * `handle` must be NULL or a live policy handle.
 */
void sc_toy_policy_free(struct ScToyPolicy *handle);

/**
 * Number of parameters, or 0 for a NULL handle.
 *
 * # Safety
 * `handle` must be NULL or a live policy handle.
 */
size_t sc_toy_policy_param_count(const struct ScToyPolicy *handle);

/**
 * Vocabulary size of the toy policy and tokenizer.
 */
size_t sc_toy_vocab_size(void);

/**
 * Per-token log-probabilities of `completion` given `prompt`; writes
 * `completion_len` values to `out`.
 *
 * # Safety
 * Array pointers must hold the stated number of elements.
 */
enum ScStatus sc_toy_policy_logprobs(const struct ScToyPolicy *handle,
                                     const uint32_t *prompt,
                                     size_t prompt_len,
                                     const uint32_t *completion,
                                     size_t completion_len,
                                     double *out);

/**
 * Samples up to `max_len` tokens. Writes the count to `out_len` and the
 * tokens to `out_tokens`, which must have room for `max_len` entries.
 *
 * # Safety
 * Array pointers must hold the stated number of elements.
 */
enum ScStatus sc_toy_policy_sample(const struct ScToyPolicy *handle,
                                   const uint32_t *prompt,
                                   size_t prompt_len,
                                   size_t max_len,
                                   uint64_t seed,
                                   uint32_t *out_tokens,
                                   size_t *out_len);

/**
 * Encodes text with the toy tokenizer. `capacity` is the room in
 * `out_tokens`; the needed count always goes to `out_len`, and
 * [`ScStatus::BufferTooSmall`] is returned when it exceeds `capacity`.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out_tokens` must hold
 * `capacity` writable entries.
 */
enum ScStatus sc_toy_encode(const char *text,
                            uint32_t *out_tokens,
                            size_t capacity,
                            size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCENECOT_H */
