#ifndef PPAT_H
#define PPAT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Number of cumulative sub-sketches per sketch.
#define PPAT_SUB_SKETCH_COUNT 12

typedef enum PpatStatus {
  PPAT_STATUS_OK = 0,
  PPAT_STATUS_NULL_POINTER = 1,
  PPAT_STATUS_INVALID_UTF8 = 2,
  PPAT_STATUS_SCHEMA = 3,
  PPAT_STATUS_EMPTY_SKETCH = 4,
  PPAT_STATUS_INVALID_ARGUMENT = 5,
  PPAT_STATUS_IO = 6,
  PPAT_STATUS_MODEL = 7,
  PPAT_STATUS_BUFFER_TOO_SMALL = 8,
  PPAT_STATUS_PANIC = 9,
} PpatStatus;

// A loaded model checkpoint.
typedef struct PpatModel PpatModel;

// A validated sketch.
typedef struct PpatSketch PpatSketch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a success.
// The pointer stays valid until the next `ppat_*` call on the same thread.
const char *ppat_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ppat_version(void);

// Parse and validate sketch JSON.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a writable pointer.
enum PpatStatus ppat_sketch_parse(const char *json, struct PpatSketch **out);

// # Safety
// `sketch` must come from [`ppat_sketch_parse`] and not be used afterwards. Null is ignored.
void ppat_sketch_free(struct PpatSketch *sketch);

// # Safety
// `sketch` must be a live handle and `out` writable.
enum PpatStatus ppat_sketch_stroke_count(const struct PpatSketch *sketch, size_t *out);

// Writes the stroke counts of the 12 cumulative sub-sketches to `out`.
//
// # Safety
// `out` must point to at least [`PPAT_SUB_SKETCH_COUNT`] writable `size_t`s.
enum PpatStatus ppat_sketch_cumulative_counts(const struct PpatSketch *sketch, size_t *out);

// Rasterizes into `buf` as row-major RGB, `width * height * 3` bytes.
// On `BufferTooSmall` the required length is still written to `required`.
//
// # Safety
// `buf` must hold `buf_len` writable bytes; `required` may be null.
enum PpatStatus ppat_sketch_render_rgb(const struct PpatSketch *sketch,
                                       uint32_t width,
                                       uint32_t height,
                                       uint8_t *buf,
                                       size_t buf_len,
                                       size_t *required);

// Loads a checkpoint written by `ppat train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum PpatStatus ppat_model_load(const char *path, struct PpatModel **out);

// # Safety
// `model` must come from [`ppat_model_load`] and not be used afterwards. Null is ignored.
void ppat_model_free(struct PpatModel *model);

// Runs the model and writes the assessment as a JSON string to `out_json`.
// A null `caption` uses the built-in deterministic caption for the sketch.
//
// # Safety
// Handles must be live, `caption` null or NUL-terminated, `out_json` writable.
// The returned string must be released with [`ppat_string_free`].
enum PpatStatus ppat_model_assess(const struct PpatModel *model,
                                  const struct PpatSketch *sketch,
                                  const char *caption,
                                  char **out_json);

// # Safety
// `s` must come from this library and not be used afterwards. Null is ignored.
void ppat_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PPAT_H */
