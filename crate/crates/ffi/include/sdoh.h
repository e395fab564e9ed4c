#ifndef SDOH_H
#define SDOH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every fallible entry point.
 */
typedef enum SdohStatus {
  SDOH_STATUS_OK = 0,
  SDOH_STATUS_NULL_ARGUMENT = 1,
  SDOH_STATUS_INVALID_UTF8 = 2,
  SDOH_STATUS_PARSE_ERROR = 3,
  SDOH_STATUS_INVALID_ARGUMENT = 4,
  SDOH_STATUS_DATA_ERROR = 5,
  SDOH_STATUS_PANIC = 6,
} SdohStatus;

typedef enum SdohDialect {
  SDOH_DIALECT_TUPLE = 0,
  SDOH_DIALECT_JSON = 1,
} SdohDialect;

typedef enum SdohFormat {
  SDOH_FORMAT_BRAT = 0,
  SDOH_FORMAT_JSON = 1,
  SDOH_FORMAT_TUPLE = 2,
} SdohFormat;

/**
 * An owned list of events.
 */
typedef struct SdohEvents SdohEvents;

/**
 * Accumulates per-document counts.
 */
typedef struct SdohScorer SdohScorer;

/**
 * Collects sampled responses for one note and votes over them.
 */
typedef struct SdohVote SdohVote;

/**
 * Micro-averaged counts and scores.
 */
typedef struct SdohCounts {
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
  double precision;
  double recall;
  double f1;
} SdohCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The
 * pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *sdoh_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sdoh_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void sdoh_string_free(char *s);

/**
 * Parses a model response. Malformed objects are skipped; the number of
 * syntax repairs applied is written to `repairs` when it is non-null.
 *
 * # Safety
 * `raw` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SdohStatus sdoh_events_parse_response(const char *raw,
                                           struct SdohEvents **out,
                                           size_t *repairs);

/**
 * Reads events from a BRAT `.ann` body and its note text.
 *
 * # Safety
 * `ann` and `note` must be NUL-terminated strings, `out` writable.
 */
enum SdohStatus sdoh_events_from_brat(const char *ann, const char *note, struct SdohEvents **out);

/**
 * # Safety
 * `events` must be null or a live handle.
 */
size_t sdoh_events_len(const struct SdohEvents *events);

/**
 * Renders events in the response list format.
 *
 * # Safety
 * `events` must be a live handle and `out` writable.
 */
enum SdohStatus sdoh_events_render(const struct SdohEvents *events,
                                   enum SdohDialect dialect,
                                   char **out);

/**
 * Writes events as a BRAT `.ann` body for `note`.
 *
 * # Safety
 * `events` must be a live handle, `note` a NUL-terminated string and
 * `out` writable.
 */
enum SdohStatus sdoh_events_to_brat(const struct SdohEvents *events, const char *note, char **out);

/**
 * Applies post-processing against `note` and returns the kept events
 * as a new handle.
 *
 * # Safety
 * `events` must be a live handle, `note` a NUL-terminated string and
 * `out` writable.
 */
enum SdohStatus sdoh_events_post_process(const struct SdohEvents *events,
                                         const char *note,
                                         struct SdohEvents **out);

/**
 * # Safety
 * `events` must be null or a handle not yet freed.
 */
void sdoh_events_free(struct SdohEvents *events);

/**
 * Converts one annotation body between BRAT and the list formats.
 *
 * # Safety
 * `input` and `note` must be NUL-terminated strings, `out` writable.
 */
enum SdohStatus sdoh_convert(const char *input,
                             enum SdohFormat from,
                             enum SdohFormat to,
                             const char *note,
                             char **out);

struct SdohScorer *sdoh_scorer_new(void);

/**
 * Scores one document and adds its counts.
 *
 * # Safety
 * All three pointers must be live handles.
 */
enum SdohStatus sdoh_scorer_add(struct SdohScorer *scorer,
                                const struct SdohEvents *pred,
                                const struct SdohEvents *gold);

/**
 * Micro-averaged counts over everything added so far.
 *
 * # Safety
 * `scorer` must be a live handle and `out` writable.
 */
enum SdohStatus sdoh_scorer_micro(const struct SdohScorer *scorer, struct SdohCounts *out);

/**
 * Full report (per type, per cell and micro) as JSON.
 *
 * # Safety
 * `scorer` must be a live handle and `out` writable.
 */
enum SdohStatus sdoh_scorer_report_json(const struct SdohScorer *scorer, char **out);

/**
 * # Safety
 * `scorer` must be null or a handle not yet freed.
 */
void sdoh_scorer_free(struct SdohScorer *scorer);

struct SdohVote *sdoh_vote_new(void);

/**
 * Adds one sample. The events are copied.
 *
 * # Safety
 * Both pointers must be live handles.
 */
enum SdohStatus sdoh_vote_add_sample(struct SdohVote *vote, const struct SdohEvents *sample);

/**
 * Per-event majority over the samples added so far. A `threshold` of
 * zero means a strict majority of the sample count.
 *
 * # Safety
 * `vote` must be a live handle and `out` writable.
 */
enum SdohStatus sdoh_vote_compile(const struct SdohVote *vote,
                                  size_t threshold,
                                  struct SdohEvents **out);

/**
 * # Safety
 * `vote` must be null or a handle not yet freed.
 */
void sdoh_vote_free(struct SdohVote *vote);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDOH_H */
