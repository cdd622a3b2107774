#ifndef DSM_H
#define DSM_H

#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call. Values match the library's error codes.
 */
typedef enum DsmStatus {
  DSM_STATUS_OK = 0,
  DSM_STATUS_INVALID_ARGUMENT = 1,
  DSM_STATUS_RESOURCE_LIMIT = 2,
  DSM_STATUS_SHAPE = 3,
  DSM_STATUS_NON_FINITE = 4,
  DSM_STATUS_INVALID_STATE = 5,
  DSM_STATUS_CONFIG = 6,
  DSM_STATUS_FORMAT = 7,
  DSM_STATUS_CONSISTENCY = 8,
  DSM_STATUS_VERSION = 9,
  DSM_STATUS_CORRUPTION = 10,
  DSM_STATUS_IO = 11,
  DSM_STATUS_NULL_POINTER = 100,
  DSM_STATUS_PANIC = 101,
} DsmStatus;

/*
 Precomputed orthonormal 2D DCT for one grid shape.
 */
typedef struct DsmDctPlan DsmDctPlan;

/*
 Dynamic mask generator with randomly initialized weights.
 */
typedef struct DsmMaskGenerator DsmMaskGenerator;

/*
 Copies the last error message of this thread into `buf` (NUL-terminated,
 truncated to `capacity`). Returns the full message length without the
 terminator, or 0 when there is no error.

 # Safety
 `buf` must be null or valid for `capacity` bytes of writes.
 */
size_t dsm_last_error_message(char *buf, size_t capacity);

/*
 Creates a plan for `height x width` grids.

 # Safety
 `out` must be valid for one pointer write.
 */
enum DsmStatus dsm_dct_plan_new(size_t height, size_t width, struct DsmDctPlan **out);

/*
 # Safety
 `plan` must be null or a pointer from [`dsm_dct_plan_new`] not yet freed.
 */
void dsm_dct_plan_free(struct DsmDctPlan *plan);

/*
 Forward transform of a row-major grid. `input` and `output` may alias.

 # Safety
 `plan` must be live; `input` and `output` must each hold `len` doubles.
 */
enum DsmStatus dsm_dct2(const struct DsmDctPlan *plan,
                        const double *input,
                        double *output,
                        size_t len);

/*
 Inverse transform of a row-major spectrum. `input` and `output` may alias.

 # Safety
 As for [`dsm_dct2`].
 */
enum DsmStatus dsm_idct2(const struct DsmDctPlan *plan,
                         const double *input,
                         double *output,
                         size_t len);

/*
 Writes the row-major index of every zigzag position, low frequencies
 first, into `out`.

 # Safety
 `out` must hold `len` values.
 */
enum DsmStatus dsm_zigzag_indices(size_t height, size_t width, size_t *out, size_t len);

/*
 Creates a generator for `height x width` spectra pooled to `bands`
 bands with hidden width `hidden`, initialized from `seed`.

 # Safety
 `out` must be valid for one pointer write.
 */
enum DsmStatus dsm_mask_generator_new(size_t height,
                                      size_t width,
                                      size_t bands,
                                      size_t hidden,
                                      double mask_gain,
                                      uint64_t seed,
                                      struct DsmMaskGenerator **out);

/*
 # Safety
 `generator` must be null or a pointer from [`dsm_mask_generator_new`]
 not yet freed.
 */
void dsm_mask_generator_free(struct DsmMaskGenerator *generator);

/*
 Writes the row-major mask for one spectrum into `mask`.

 # Safety
 `generator` must be live; `spectrum` and `mask` must each hold `len`
 doubles.
 */
enum DsmStatus dsm_generate_mask(const struct DsmMaskGenerator *generator,
                                 const double *spectrum,
                                 double *mask,
                                 size_t len);

#endif /* DSM_H */
