#ifndef JACKUP_H
#define JACKUP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stdint.h>

typedef enum JackupStatus {
  JACKUP_STATUS_OK = 0,
  JACKUP_STATUS_NULL_ARGUMENT = 1,
  JACKUP_STATUS_INVALID_UTF8 = 2,
  // Sentence framing is broken (missing `*`, bad field count, ...).
  JACKUP_STATUS_FRAMING = 3,
  JACKUP_STATUS_CHECKSUM = 4,
  // Well-framed sentence whose payload could not be decoded.
  JACKUP_STATUS_DECODE = 5,
  // Invalid configuration, infeasible clustering or an inconsistent time budget.
  JACKUP_STATUS_CONFIG = 6,
  JACKUP_STATUS_IO = 7,
  // Input was readable but unusable (missing columns, too few fixes, ...).
  JACKUP_STATUS_DATA = 8,
  JACKUP_STATUS_PANIC = 9,
} JackupStatus;

// Opaque streaming AIVDM decoder.
typedef struct JackupDecoder JackupDecoder;

// One decoded position fix. Unavailable values are NaN (`sog`, `cog`)
// or -1 (`nav_status`).
typedef struct JackupPosition {
  // Milliseconds since the Unix epoch.
  int64_t timestamp_ms;
  uint32_t mmsi;
  double lat;
  double lon;
  double sog;
  double cog;
  int16_t nav_status;
} JackupPosition;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *jackup_last_error(void);

// Library version as a static string.
const char *jackup_version(void);

// Great-circle distance in metres between two (lat, lon) points in degrees.
double jackup_haversine_m(double lat1, double lon1, double lat2, double lon2);

// New decoder. With `strict`, framing and checksum failures are returned
// from `jackup_decoder_push` instead of being counted and skipped.
struct JackupDecoder *jackup_decoder_new(bool strict);

// Frees a decoder without reading its counters. Null is ignored.
//
// # Safety
// `decoder` must be null or a pointer from `jackup_decoder_new` that has
// not been freed yet.
void jackup_decoder_free(struct JackupDecoder *decoder);

// Feeds one line. When the line completes a position report, `*out` is
// filled and `*produced` set to true; otherwise `*produced` is false.
//
// # Safety
// `decoder` must come from `jackup_decoder_new`; `line` must be a
// NUL-terminated string; `out` and `produced` must be writable.
enum JackupStatus jackup_decoder_push(struct JackupDecoder *decoder,
                                      const char *line,
                                      struct JackupPosition *out,
                                      bool *produced);

// Counters so far as a JSON object, written to `*json`. Partial
// multipart messages are not counted until `jackup_decoder_finish`.
// Free the string with `jackup_string_free`.
//
// # Safety
// `decoder` must come from `jackup_decoder_new`; `json` must be writable.
enum JackupStatus jackup_decoder_stats_json(const struct JackupDecoder *decoder, char **json);

// Frees the decoder and writes its final counters to `*json`, counting
// multipart messages still waiting for fragments as incomplete. The
// handle is invalid afterwards, even on failure.
//
// # Safety
// `decoder` must come from `jackup_decoder_new` and not be used again;
// `json` must be writable.
enum JackupStatus jackup_decoder_finish(struct JackupDecoder *decoder, char **json);

// Runs the full analysis for the farm config at `config_path` and writes
// the report bundle. `out_dir` may be null to use the directory from the
// config. The report JSON is written to `*report_json`; free it with
// `jackup_string_free`.
//
// # Safety
// `config_path` must be a NUL-terminated string, `out_dir` null or one,
// and `report_json` writable.
enum JackupStatus jackup_analyze(const char *config_path, const char *out_dir, char **report_json);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void jackup_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JACKUP_H */
