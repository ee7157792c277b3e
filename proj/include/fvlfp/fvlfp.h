/* C interface to the federated fair prompt-tuning simulator.
 *
 * Every function returns an fvlfp_status. On failure the message is kept in
 * thread-local storage and can be read with fvlfp_last_error() until the
 * next call on the same thread. Strings handed out through char** must be
 * released with fvlfp_string_free. */
#ifndef FVLFP_H
#define FVLFP_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define FVLFP_API __declspec(dllexport)
#else
#define FVLFP_API __attribute__((visibility("default")))
#endif

typedef enum fvlfp_status {
  FVLFP_OK = 0,
  FVLFP_INVALID_ARGUMENT = 1,
  FVLFP_PARSE = 2,
  FVLFP_CONFIG = 3,
  FVLFP_DIMENSION = 4,
  FVLFP_NUMERIC = 5,
  FVLFP_IO = 6,
  FVLFP_DATA = 7,
  FVLFP_INTERNAL = 8
} fvlfp_status;

typedef struct fvlfp_config fvlfp_config;
typedef struct fvlfp_report fvlfp_report;
typedef struct fvlfp_sweep fvlfp_sweep;

typedef struct fvlfp_metrics {
  double a_b;
  double phi_a;
  double phi_demo;
  double phi_eq;
  double f_global;
  int has_f_global;
} fvlfp_metrics;

typedef struct fvlfp_sweep_cell {
  const char* value;  /* axis value; owned by the sweep */
  const char* method; /* owned by the sweep */
  size_t repeat;
  uint64_t seed;
  int ok;
  const char* error; /* empty when ok */
  fvlfp_metrics final_metrics;
  uint64_t backbone_hash;
} fvlfp_sweep_cell;

FVLFP_API const char* fvlfp_last_error(void);
FVLFP_API const char* fvlfp_status_name(fvlfp_status status);
FVLFP_API void fvlfp_string_free(char* s);

/* Configuration */
FVLFP_API fvlfp_status fvlfp_config_new(fvlfp_config** out);
FVLFP_API fvlfp_status fvlfp_config_parse(const char* text, fvlfp_config** out);
FVLFP_API fvlfp_status fvlfp_config_load(const char* path, fvlfp_config** out);
FVLFP_API fvlfp_status fvlfp_config_set(fvlfp_config* config, const char* key, const char* value);
FVLFP_API fvlfp_status fvlfp_config_get(const fvlfp_config* config, const char* key, char** value);
FVLFP_API fvlfp_status fvlfp_config_validate(const fvlfp_config* config);
FVLFP_API fvlfp_status fvlfp_config_serialize(const fvlfp_config* config, char** text);
FVLFP_API fvlfp_status fvlfp_config_hash(const fvlfp_config* config, uint64_t* hash);
FVLFP_API void fvlfp_config_free(fvlfp_config* config);

/* Single runs */
FVLFP_API fvlfp_status fvlfp_run(const fvlfp_config* config, fvlfp_report** out);
FVLFP_API fvlfp_status fvlfp_report_write(const fvlfp_report* report, const char* dir);
FVLFP_API fvlfp_status fvlfp_report_complete(const fvlfp_report* report, int* complete, char** failure);
FVLFP_API fvlfp_status fvlfp_report_round_count(const fvlfp_report* report, size_t* count);
/* Global test-set metrics after round index (0 = initial prompts). */
FVLFP_API fvlfp_status fvlfp_report_round(const fvlfp_report* report, size_t index, fvlfp_metrics* out);
FVLFP_API fvlfp_status fvlfp_report_backbone_hash(const fvlfp_report* report, uint64_t* hash);
FVLFP_API fvlfp_status fvlfp_report_csv(const fvlfp_report* report, char** text);
FVLFP_API fvlfp_status fvlfp_report_markdown(const fvlfp_report* report, char** text);
FVLFP_API void fvlfp_report_free(fvlfp_report* report);

/* Sweeps. axis is alpha, clients or method. With a non-NULL out_dir every
 * cell and the combined tables are written there. */
FVLFP_API fvlfp_status fvlfp_sweep_preset(const fvlfp_config* base, const char* preset, const char* out_dir,
                                          fvlfp_sweep** out);
FVLFP_API fvlfp_status fvlfp_sweep_run(const fvlfp_config* base, const char* axis, const char* const* values,
                                       size_t value_count, const char* const* methods, size_t method_count,
                                       size_t repeats, const char* out_dir, fvlfp_sweep** out);
FVLFP_API fvlfp_status fvlfp_sweep_cell_count(const fvlfp_sweep* sweep, size_t* count);
FVLFP_API fvlfp_status fvlfp_sweep_get_cell(const fvlfp_sweep* sweep, size_t index, fvlfp_sweep_cell* out);
FVLFP_API fvlfp_status fvlfp_sweep_all_ok(const fvlfp_sweep* sweep, int* ok);
FVLFP_API fvlfp_status fvlfp_sweep_markdown(const fvlfp_sweep* sweep, char** text);
FVLFP_API void fvlfp_sweep_free(fvlfp_sweep* sweep);

/* Preset overrides (key=value lines) applied before user settings. */
FVLFP_API fvlfp_status fvlfp_preset_overrides(const char* preset, char** text);

/* Writes train.emb and eval.emb for the configured synthetic world. */
FVLFP_API fvlfp_status fvlfp_generate_data(const fvlfp_config* config, const char* dir);

/* Markdown table of the final metrics of every run directory under dir. */
FVLFP_API fvlfp_status fvlfp_collect_report(const char* dir, char** text);

#ifdef __cplusplus
}
#endif

#endif
