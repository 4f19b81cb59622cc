#ifndef FCI_H
#define FCI_H

/*
 * C interface to the flow-based conformal inference toolkit.
 *
 * Every function that can fail returns an fci_status. On failure the message
 * is available from fci_last_error() until the next failing call on the same
 * thread. Handles are opaque; each *_create / *_load has a matching
 * *_destroy, which accepts NULL.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FCI_API __declspec(dllexport)
#else
#define FCI_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fci_status {
  FCI_OK = 0,
  FCI_ERR_INVALID_ARGUMENT = 1,
  FCI_ERR_CONFIG = 2,
  FCI_ERR_IO = 3,
  FCI_ERR_DATA = 4,
  FCI_ERR_RUNTIME = 5,
  FCI_ERR_INTERNAL = 6
} fci_status;

typedef enum fci_pvalue_mode {
  FCI_PVALUE_SMOOTHED = 0,
  FCI_PVALUE_PAPER_LITERAL = 1
} fci_pvalue_mode;

typedef struct fci_experiment fci_experiment;
typedef struct fci_model fci_model;
typedef struct fci_pool fci_pool;

FCI_API const char* fci_version(void);
FCI_API const char* fci_last_error(void);
FCI_API const char* fci_status_name(fci_status status);
/* Silences (quiet != 0) or restores progress messages on stderr. */
FCI_API void fci_set_quiet(int quiet);

/* Experiments ------------------------------------------------------------ */

FCI_API fci_status fci_experiment_create_reference(fci_experiment** out);
FCI_API fci_status fci_experiment_load(const char* config_path, fci_experiment** out);
FCI_API fci_status fci_experiment_from_json(const char* json_text, fci_experiment** out);
FCI_API void fci_experiment_destroy(fci_experiment* exp);

FCI_API fci_status fci_experiment_set_seed(fci_experiment* exp, uint64_t seed);
FCI_API fci_status fci_experiment_set_alpha(fci_experiment* exp, double alpha);
FCI_API fci_status fci_experiment_set_output_dir(fci_experiment* exp, const char* dir);
FCI_API fci_status fci_experiment_set_p_value_mode(fci_experiment* exp, fci_pvalue_mode mode);
FCI_API fci_status fci_experiment_set_baselines(fci_experiment* exp, int enabled);
FCI_API fci_status fci_experiment_set_epochs(fci_experiment* exp, size_t epochs);
FCI_API fci_status fci_experiment_clear_contamination_rates(fci_experiment* exp);
FCI_API fci_status fci_experiment_add_contamination_rate(fci_experiment* exp, double rate);

FCI_API fci_status fci_experiment_validate(const fci_experiment* exp);
/* Borrowed pointer, valid until the handle changes or is destroyed. */
FCI_API const char* fci_experiment_output_dir(const fci_experiment* exp);
/*
 * Writes the config as JSON into buf (NUL-terminated) when capacity allows.
 * *needed receives the required size including the terminator.
 */
FCI_API fci_status fci_experiment_to_json(const fci_experiment* exp, char* buf, size_t capacity, size_t* needed);

FCI_API fci_status fci_experiment_gen_data(fci_experiment* exp);
FCI_API fci_status fci_experiment_train(fci_experiment* exp);
FCI_API fci_status fci_experiment_calibrate(fci_experiment* exp);
/* test_file may be NULL to use every configured contamination rate. */
FCI_API fci_status fci_experiment_predict(fci_experiment* exp, const char* test_file);
FCI_API fci_status fci_experiment_evaluate(fci_experiment* exp, const char* test_file);
FCI_API fci_status fci_experiment_run(fci_experiment* exp);

/* Trained class models --------------------------------------------------- */

FCI_API fci_status fci_model_load(const char* path, fci_model** out);
FCI_API void fci_model_destroy(fci_model* model);
FCI_API fci_status fci_model_info(const fci_model* model, int* label, size_t* input_dim, size_t* latent_dim);
/* x is rows x cols row-major; z receives rows x latent_dim. */
FCI_API fci_status fci_model_encode(const fci_model* model, const double* x, size_t rows, size_t cols, double* z);
/* Non-conformity scores |I(x)|^2, one per row. */
FCI_API fci_status fci_model_scores(const fci_model* model, const double* x, size_t rows, size_t cols,
                                    double* scores);

/* Score pools ------------------------------------------------------------ */

FCI_API fci_status fci_pool_create(int label, const double* scores, size_t n, fci_pool** out);
FCI_API fci_status fci_pool_load_csv(const char* path, fci_pool** out);
FCI_API void fci_pool_destroy(fci_pool* pool);
FCI_API fci_status fci_pool_size(const fci_pool* pool, size_t* n);
FCI_API fci_status fci_pool_p_value(const fci_pool* pool, double score, fci_pvalue_mode mode, double* p_value);

/* Stateless helpers ------------------------------------------------------ */

/*
 * Labels (1-based, ascending) whose p-value is >= alpha. labels must hold
 * num_classes entries; *size of 0 means the point is an outlier.
 */
FCI_API fci_status fci_predictive_set(const double* p_values, size_t num_classes, double alpha, int* labels,
                                      size_t* size);
/* Unbiased squared MMD with a Gaussian kernel; bandwidth <= 0 selects the median heuristic. */
FCI_API fci_status fci_mmd2_unbiased(const double* u, size_t m, const double* v, size_t n, size_t dim,
                                     double bandwidth, double* out);

#ifdef __cplusplus
}
#endif

#endif
