/* C API for the tafcal shared library.
 *
 * All functions return a tfc_status; on failure tfc_last_error() holds a
 * human-readable message for the calling thread. Out-parameters are written
 * only on TFC_OK. Handles are opaque and must be released with the matching
 * *_free function. Reports are JSON documents.
 */

#ifndef TAFCAL_H
#define TAFCAL_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tfc_status {
  TFC_OK = 0,
  TFC_ERR_INVALID_ARGUMENT = 1,
  TFC_ERR_CONFIG = 2,
  TFC_ERR_IO = 3,
  TFC_ERR_STATE = 4,
  TFC_ERR_NUMERIC = 5,
  TFC_ERR_INTERNAL = 6
} tfc_status;

typedef struct tfc_dataset tfc_dataset;
typedef struct tfc_checkpoint tfc_checkpoint;
typedef struct tfc_report tfc_report;

const char* tfc_version(void);
const char* tfc_status_name(tfc_status status);

/* Message for the most recent failure on this thread; empty if none. */
const char* tfc_last_error(void);

/* --- configuration ------------------------------------------------------ */

/* Parses `json_text`, applies dotted-key overrides ("style.eta=0.7"), and
 * validates against the schema selected by `kind` ("train" or "synthetic").
 * On success *effective_json_out is a malloc'd canonical config; release it
 * with tfc_string_free. */
tfc_status tfc_config_render(const char* json_text, const char* const* overrides,
                             size_t n_overrides, const char* kind, char** effective_json_out);
void tfc_string_free(char* s);

/* --- datasets ------------------------------------------------------------ */

tfc_status tfc_dataset_generate(const char* config_json, tfc_dataset** out);
tfc_status tfc_dataset_save(const tfc_dataset* ds, const char* dir, int packed);
tfc_status tfc_dataset_load(const char* dir, tfc_dataset** out);
size_t tfc_dataset_size(const tfc_dataset* ds);
void tfc_dataset_free(tfc_dataset* ds);

/* --- commands ------------------------------------------------------------ */

/* Generates a dataset from config text and writes it under out_dir. */
tfc_status tfc_gen_data(const char* config_json, const char* const* overrides,
                        size_t n_overrides, const char* out_dir, int packed,
                        tfc_report** report_out);

/* Trains per config text; writes checkpoint + report.json under out_dir. */
tfc_status tfc_train(const char* config_json, const char* const* overrides, size_t n_overrides,
                     const char* out_dir, tfc_report** report_out);

/* dataset_dir may be NULL to use the dataset recorded in the checkpoint.
 * split is one of "target", "train", "val", "all". eval.json is written
 * under out_dir (or the checkpoint directory when out_dir is NULL). */
tfc_status tfc_evaluate(const char* ckpt_dir, const char* dataset_dir, const char* split,
                        int calibrated, double tau, const char* out_dir,
                        tfc_report** report_out);

/* seeds_csv like "0,1,2" (NULL for the default three seeds). */
tfc_status tfc_ablate(const char* config_json, const char* const* overrides, size_t n_overrides,
                      const char* seeds_csv, int jobs, const char* out_dir,
                      tfc_report** report_out);

/* axis is "strength" or "layer". */
tfc_status tfc_sweep(const char* config_json, const char* const* overrides, size_t n_overrides,
                     const char* axis, const char* seeds_csv, int jobs, const char* out_dir,
                     tfc_report** report_out);

/* stage is "pre" or "post"; writes one CSV row per dataset sample. */
tfc_status tfc_export_embeddings(const char* ckpt_dir, const char* dataset_dir,
                                 const char* stage, double tau, const char* csv_path,
                                 tfc_report** report_out);

tfc_status tfc_inspect(const char* ckpt_dir, tfc_report** report_out);

/* --- checkpoints ---------------------------------------------------------- */

tfc_status tfc_checkpoint_open(const char* dir, tfc_checkpoint** out);
const char* tfc_checkpoint_dir(const tfc_checkpoint* ckpt);
void tfc_checkpoint_free(tfc_checkpoint* ckpt);

/* --- reports -------------------------------------------------------------- */

const char* tfc_report_json(const tfc_report* report);
void tfc_report_free(tfc_report* report);

#ifdef __cplusplus
}
#endif

#endif /* TAFCAL_H */
