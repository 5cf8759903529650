#ifndef MPVSTEREO_H
#define MPVSTEREO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum MpvStatus {
  MPV_STATUS_OK = 0,
  MPV_STATUS_NULL_POINTER = 1,
  MPV_STATUS_INVALID_ARGUMENT = 2,
  MPV_STATUS_IO = 3,
  MPV_STATUS_FORMAT = 4,
  MPV_STATUS_DIMENSION = 5,
  MPV_STATUS_DEGENERATE = 6,
  MPV_STATUS_TRAINING = 7,
  MPV_STATUS_INTERNAL = 8,
} MpvStatus;

// Trained recognition cascade.
typedef struct MpvCascade MpvCascade;

// Disparity map; pixels may be invalid.
typedef struct MpvDisparity MpvDisparity;

// Grayscale 8-bit image.
typedef struct MpvImage MpvImage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length
// excluding the terminator, or 0 when there is no error.
size_t mpv_last_error_message(char *buf, size_t len);

// Copies a `width × height` image whose rows are `stride` bytes apart.
enum MpvStatus mpv_image_new(const uint8_t *data,
                             size_t width,
                             size_t height,
                             size_t stride,
                             struct MpvImage **out);

// Loads a binary PGM or 8-bit grayscale PNG.
enum MpvStatus mpv_image_load(const char *path, struct MpvImage **out);

size_t mpv_image_width(const struct MpvImage *img);

size_t mpv_image_height(const struct MpvImage *img);

void mpv_image_free(struct MpvImage *img);

// Computes a disparity map. `config_path` may be null; `d_max` of 0 keeps
// the configured value and a negative `threads` keeps the configured width.
enum MpvStatus mpv_match(const struct MpvImage *left,
                         const struct MpvImage *right,
                         const char *config_path,
                         uint32_t d_max,
                         int32_t threads,
                         struct MpvDisparity **out);

size_t mpv_disparity_width(const struct MpvDisparity *d);

size_t mpv_disparity_height(const struct MpvDisparity *d);

// Disparity at (x, y), or -1 for invalid pixels and bad arguments.
int32_t mpv_disparity_get(const struct MpvDisparity *d, size_t x, size_t y);

// Writes row-major disparities into `buf` of `len` floats; invalid
// pixels are +inf.
enum MpvStatus mpv_disparity_copy(const struct MpvDisparity *d, float *buf, size_t len);

enum MpvStatus mpv_disparity_save_pfm(const struct MpvDisparity *d, const char *path);

void mpv_disparity_free(struct MpvDisparity *d);

enum MpvStatus mpv_cascade_load(const char *path, struct MpvCascade **out);

size_t mpv_cascade_stage_count(const struct MpvCascade *c);

// Classifies a whole image as one window. `accepted` receives 1 or 0 and
// `stages_evaluated` the number of stages run; either may be null.
enum MpvStatus mpv_cascade_classify(const struct MpvCascade *c,
                                    const struct MpvImage *window,
                                    int32_t *accepted,
                                    size_t *stages_evaluated);

void mpv_cascade_free(struct MpvCascade *c);

// Runs the full frame pipeline and returns the detection record as a
// NUL-terminated JSON string in `out_json`, to be released with
// `mpv_string_free`. `cascade` and `config_path` may be null.
enum MpvStatus mpv_detect(const struct MpvImage *left,
                          const struct MpvImage *right,
                          const struct MpvCascade *cascade,
                          const char *config_path,
                          int32_t threads,
                          int32_t with_timings,
                          char **out_json);

void mpv_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MPVSTEREO_H */
