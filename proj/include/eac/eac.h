#ifndef EAC_EAC_H
#define EAC_EAC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define EAC_API __declspec(dllexport)
#else
#define EAC_API __attribute__((visibility("default")))
#endif

typedef enum eac_status {
  EAC_OK = 0,
  EAC_ERR_CONFIG = 1,
  EAC_ERR_DATA = 2,
  EAC_ERR_NUMERIC = 3,
  EAC_ERR_ARGUMENT = 4,
  EAC_ERR_IO = 5,
  EAC_ERR_INTERNAL = 6
} eac_status;

typedef struct eac_pool eac_pool;
typedef struct eac_experiment eac_experiment;

EAC_API const char* eac_version(void);
/* Message of the last failed call on this thread; "" after a success. */
EAC_API const char* eac_last_error(void);
/* Frees strings returned through char** out-parameters. */
EAC_API void eac_string_free(char* s);

/* Prompt pool. mode is "lowrank" or "full". */
EAC_API eac_status eac_pool_create(const char* const* node_ids, size_t n, size_t d, size_t k, const char* mode,
                                   uint64_t seed, eac_pool** out);
EAC_API eac_status eac_pool_expand(eac_pool* pool, const char* const* new_ids, size_t count, int period_index);
EAC_API eac_status eac_pool_shape(const eac_pool* pool, size_t* rows, size_t* cols);
/* Writes rows * cols doubles (row-major); capacity is the buffer length. */
EAC_API eac_status eac_pool_materialize(const eac_pool* pool, double* out, size_t capacity);
EAC_API eac_status eac_pool_param_count(const eac_pool* pool, size_t* tunable, size_t* materialized,
                                        double* ratio);
EAC_API eac_status eac_pool_save(const eac_pool* pool, const char* path);
/* expected_d of 0 accepts any width. */
EAC_API eac_status eac_pool_load(const char* path, size_t expected_d, eac_pool** out);
EAC_API void eac_pool_destroy(eac_pool* pool);

/* Experiments: a JSON config plus one data source. */
EAC_API eac_status eac_experiment_create(const char* config_path, eac_experiment** out);
EAC_API eac_status eac_experiment_create_json(const char* config_json, eac_experiment** out);
/* Inline synthetic stream, e.g. "n0=40,growth=10,periods=3,T=2000,seed=7". */
EAC_API eac_status eac_experiment_use_synth(eac_experiment* exp, const char* synth_spec);
EAC_API eac_status eac_experiment_use_manifest(eac_experiment* exp, const char* manifest_path);
/* seeds may be NULL to use the configured ones. out_dir may be NULL to skip
   writing files. A run manifest is written to out_dir even on failure. */
EAC_API eac_status eac_experiment_run(eac_experiment* exp, const uint64_t* seeds, size_t n_seeds,
                                      const char* out_dir);
/* Text table of the last run. */
EAC_API eac_status eac_experiment_table(const eac_experiment* exp, char** out);
/* Aggregate JSON report of the last run. */
EAC_API eac_status eac_experiment_report(const eac_experiment* exp, char** out);
EAC_API void eac_experiment_destroy(eac_experiment* exp);

/* Writes a synthetic stream directory; the manifest path is returned in
   manifest_out when it is not NULL. */
EAC_API eac_status eac_synth_write(const char* synth_spec, const char* out_dir, char** manifest_out);

/* what: "hetero", "svd", "prop1" or "prop2". options_json carries the inputs
   (see the README). The JSON result is returned and, when out_dir is not
   NULL, also written there. */
EAC_API eac_status eac_analyze(const char* what, const char* options_json, const char* out_dir, char** json_out);

/* corrupt may be NULL or name a case whose gradient is deliberately broken. */
EAC_API eac_status eac_gradcheck(size_t n_seeds, const char* corrupt, char** json_out, int* all_passed);

#ifdef __cplusplus
}
#endif

#endif
