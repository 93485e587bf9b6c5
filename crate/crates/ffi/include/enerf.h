#ifndef ENERF_H
#define ENERF_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum EnerfStatus {
  ENERF_STATUS_OK = 0,
  ENERF_STATUS_NULL_POINTER = 1,
  ENERF_STATUS_INVALID_ARGUMENT = 2,
  ENERF_STATUS_IO = 3,
  ENERF_STATUS_DATASET = 4,
  ENERF_STATUS_CHECKPOINT = 5,
  ENERF_STATUS_CONFIG = 6,
  ENERF_STATUS_CHANNEL_UNAVAILABLE = 7,
  ENERF_STATUS_NAN_LOSS = 8,
  ENERF_STATUS_BUFFER_TOO_SMALL = 9,
  ENERF_STATUS_RUNTIME = 10,
  ENERF_STATUS_PANIC = 11,
} EnerfStatus;

// Output channel selector for rendering and evaluation.
typedef enum EnerfChannel {
  ENERF_CHANNEL_FINE = 0,
  ENERF_CHANNEL_MID = 1,
  ENERF_CHANNEL_COARSE = 2,
} EnerfChannel;

// A set of posed views with their images.
typedef struct EnerfDataset EnerfDataset;

// A trained model restored from a checkpoint.
typedef struct EnerfModel EnerfModel;

// Training state: model, optimizer and step counter.
typedef struct EnerfTrainer EnerfTrainer;

// Loss components of one training step.
typedef struct EnerfStepLog {
  uint64_t step;
  double total;
  double prop;
  double fine_mse;
  double sh_fine;
  double sh_mid;
  double sh_coarse;
  double psnr_train;
} EnerfStepLog;

// Mean held-out metrics. Channels the variant lacks are NaN.
typedef struct EnerfEvalSummary {
  uint32_t views;
  double psnr_fine;
  double ssim_fine;
  double psnr_mid;
  double ssim_mid;
  double psnr_coarse;
  double ssim_coarse;
} EnerfEvalSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if it succeeded.
// The pointer stays valid until the next enerf call on the same thread.
const char *enerf_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *enerf_version(void);

// Renders a dataset of a scene. `config_toml` may be null; its `scene`
// section supplies the view counts, resolution, rig and seed.
//
// # Safety
// `config_toml` is null or a NUL-terminated string; `out` is writable.
enum EnerfStatus enerf_dataset_generate(const char *config_toml, struct EnerfDataset **out);

// # Safety
// `dir` is a NUL-terminated path; `out` is writable.
enum EnerfStatus enerf_dataset_load(const char *dir, struct EnerfDataset **out);

// # Safety
// `ds` is a live dataset handle; `dir` is a NUL-terminated path.
enum EnerfStatus enerf_dataset_save(const struct EnerfDataset *ds, const char *dir);

// Writes the frame count and image size. Any output pointer may be null.
//
// # Safety
// `ds` is a live dataset handle; non-null outputs are writable.
enum EnerfStatus enerf_dataset_info(const struct EnerfDataset *ds,
                                    uint32_t *frames,
                                    uint32_t *width,
                                    uint32_t *height);

// # Safety
// `ds` is null or a handle not yet freed.
void enerf_dataset_free(struct EnerfDataset *ds);

// Initialises training on `ds`. `config_toml` may be null for defaults;
// `variant` may be null to keep the config's variant.
//
// # Safety
// `ds` is a live dataset handle; strings are null or NUL-terminated; `out` is writable.
enum EnerfStatus enerf_trainer_new(const struct EnerfDataset *ds,
                                   const char *config_toml,
                                   const char *variant,
                                   struct EnerfTrainer **out);

// Continues training from a checkpoint written by [`enerf_trainer_save`].
//
// # Safety
// As for [`enerf_trainer_new`]; `checkpoint` is a NUL-terminated path.
enum EnerfStatus enerf_trainer_resume(const struct EnerfDataset *ds,
                                      const char *config_toml,
                                      const char *checkpoint,
                                      struct EnerfTrainer **out);

// Runs one optimisation step. `log` may be null.
//
// # Safety
// `trainer` and `ds` are live handles; `log` is null or writable.
enum EnerfStatus enerf_trainer_step(struct EnerfTrainer *trainer,
                                    const struct EnerfDataset *ds,
                                    struct EnerfStepLog *log);

// Steps completed so far, or 0 for a null handle.
//
// # Safety
// `trainer` is null or a live handle.
uint64_t enerf_trainer_steps_done(const struct EnerfTrainer *trainer);

// # Safety
// `trainer` is a live handle; `path` is a NUL-terminated path.
enum EnerfStatus enerf_trainer_save(const struct EnerfTrainer *trainer, const char *path);

// # Safety
// `trainer` is null or a handle not yet freed.
void enerf_trainer_free(struct EnerfTrainer *trainer);

// # Safety
// `path` is a NUL-terminated path; `out` is writable.
enum EnerfStatus enerf_model_load(const char *path, struct EnerfModel **out);

// Whether the model's variant produces `channel`.
//
// # Safety
// `model` is null or a live handle.
bool enerf_model_has_channel(const struct EnerfModel *model, enum EnerfChannel channel);

// Renders frame `frame` of `ds` into `rgb` as `width * height * 3` row-major
// floats in `[0, 1]`. `len` is the capacity of `rgb` in floats.
//
// # Safety
// `model` and `ds` are live handles; `rgb` holds at least `len` floats.
enum EnerfStatus enerf_model_render_frame(const struct EnerfModel *model,
                                          const struct EnerfDataset *ds,
                                          uint32_t frame,
                                          enum EnerfChannel channel,
                                          float *rgb,
                                          size_t len);

// Evaluates on the held-out views of `ds`.
//
// # Safety
// `model` and `ds` are live handles; `out` is writable.
enum EnerfStatus enerf_model_evaluate(const struct EnerfModel *model,
                                      const struct EnerfDataset *ds,
                                      struct EnerfEvalSummary *out);

// # Safety
// `model` is null or a handle not yet freed.
void enerf_model_free(struct EnerfModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENERF_H */
