#ifndef SEELAB_SEELAB_H
#define SEELAB_SEELAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(SEELAB_BUILDING)
#    define SEELAB_API __declspec(dllexport)
#  else
#    define SEELAB_API __declspec(dllimport)
#  endif
#else
#  define SEELAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes. */
typedef enum seelab_status {
  SEELAB_OK = 0,
  SEELAB_VERIFY_FAILED = 1,
  SEELAB_CONFIG_ERROR = 2,
  SEELAB_MISSING_ARTIFACT = 3,
  SEELAB_NUMERICAL_ABORT = 4,
  SEELAB_INTERNAL_ERROR = 5
} seelab_status;

typedef struct seelab_config seelab_config;
typedef struct seelab_result seelab_result;

typedef void (*seelab_log_fn)(const char* line, void* user);

typedef struct seelab_options {
  int has_seed;            /* nonzero: `seed` replaces the config seed */
  uint64_t seed;
  int force;               /* overwrite or restart existing outputs */
  int jobs;                /* sweep worker threads, >= 1 */
  const char* output_root; /* NULL: $SEELAB_OUTPUT_ROOT, then "." */
  int iteration_limit;     /* train: stop after this many iterations, -1 for none */
  const char* mutation;    /* verify: "none" or "gamma-scaling"; NULL means none */
  seelab_log_fn log;       /* progress lines, may be NULL */
  void* log_user;
} seelab_options;

SEELAB_API void seelab_options_init(seelab_options* options);

/* Message of the last failed call on this thread ("" if none). */
SEELAB_API const char* seelab_last_error(void);
SEELAB_API const char* seelab_version(void);

/* Configs. */
SEELAB_API seelab_status seelab_config_load(const char* path, const seelab_options* options, seelab_config** out);
SEELAB_API seelab_status seelab_config_parse(const char* json_text, seelab_config** out);
SEELAB_API seelab_status seelab_config_default(const char* dataset, seelab_config** out);
SEELAB_API seelab_status seelab_config_set_seed(seelab_config* config, uint64_t seed);
/* Canonical JSON; release with seelab_string_free. */
SEELAB_API seelab_status seelab_config_to_json(const seelab_config* config, char** out);
SEELAB_API seelab_status seelab_config_output_dir(const seelab_config* config, const seelab_options* options,
                                                  char** out);
SEELAB_API void seelab_config_free(seelab_config* config);
SEELAB_API void seelab_string_free(char* s);

/* Commands. On SEELAB_OK or SEELAB_VERIFY_FAILED `*out` holds a result. */
SEELAB_API seelab_status seelab_pretrain(const seelab_config* config, const seelab_options* options,
                                         seelab_result** out);
SEELAB_API seelab_status seelab_train(const seelab_config* config, const seelab_options* options,
                                      seelab_result** out);
SEELAB_API seelab_status seelab_sweep(const seelab_config* config, const seelab_options* options,
                                      seelab_result** out);
SEELAB_API seelab_status seelab_toy(const seelab_config* config, const seelab_options* options,
                                    seelab_result** out);
/* report_path may be NULL. */
SEELAB_API seelab_status seelab_verify(const seelab_options* options, const char* report_path, seelab_result** out);

SEELAB_API int seelab_result_exit_code(const seelab_result* result);
SEELAB_API const char* seelab_result_summary(const seelab_result* result);
SEELAB_API const char* seelab_result_report(const seelab_result* result);
SEELAB_API void seelab_result_free(seelab_result* result);

/* Stateless numerics on caller-owned arrays. */
SEELAB_API seelab_status seelab_flatten_distribution(const double* probs, size_t n, double gamma, double* out);
SEELAB_API seelab_status seelab_closed_form_policy(const double* p_ref, const double* rewards, size_t n, double beta,
                                                   double gamma, double* out);
SEELAB_API seelab_status seelab_bt_probability(double r_w, double r_l, double* out);
/* Images are row-major, width * height pixels in [0, peak]. */
SEELAB_API seelab_status seelab_psnr(const double* a, const double* b, int width, int height, double peak,
                                     double* out);
SEELAB_API seelab_status seelab_ssim(const double* a, const double* b, int width, int height, double peak,
                                     double* out);
SEELAB_API seelab_status seelab_entropy_1d(const double* img, int width, int height, int bins, double* out);

#ifdef __cplusplus
}
#endif

#endif
