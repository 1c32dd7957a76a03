#ifndef CKCONV_CKCONV_H_
#define CKCONV_CKCONV_H_

/* C interface to the continuous-kernel convolution engine. Every verb takes
 * a JSON options document and, on success, stores a heap-allocated JSON
 * result in *result_json (release it with ckc_string_free; passing a null
 * result pointer skips the copy). On failure *result_json is set to null,
 * the returned status classifies the error and ckc_last_error(eng) carries
 * the human-readable message. */

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ckc_status {
  CKC_OK = 0,
  CKC_ERROR = 1,        /* internal errors, API misuse, bad shapes */
  CKC_CONFIG_ERROR = 2, /* invalid options, horizon violations */
  CKC_DATA_ERROR = 3,   /* unreadable or malformed inputs */
  CKC_DIVERGED = 4      /* optimization produced non-finite numbers */
} ckc_status;

typedef struct ckc_engine ckc_engine;

ckc_engine* ckc_engine_create(void);
void ckc_engine_destroy(ckc_engine* eng);

/* Message of the most recent failing call on this engine ("" when the last
 * call succeeded). The pointer stays valid until the next call on eng. */
const char* ckc_last_error(const ckc_engine* eng);

/* Train a model on a synthetic task; writes metrics.jsonl + checkpoint.json
 * under options["out_dir"]. */
ckc_status ckc_train(ckc_engine* eng, const char* options_json, char** result_json);

/* Run a checkpoint over fresh or CSV data, optionally on a strided grid or
 * with randomly dropped steps; can dump rendered kernels to CSV. */
ckc_status ckc_evaluate(ckc_engine* eng, const char* options_json, char** result_json);

/* Fit one kernel network to a named 1-d target curve. */
ckc_status ckc_fit_kernel(ckc_engine* eng, const char* options_json, char** result_json);

/* Write a synthetic task dataset as CSV. */
ckc_status ckc_generate(ckc_engine* eng, const char* options_json, char** result_json);

/* Probe grid-transfer consistency of random untrained layers. */
ckc_status ckc_resample_report(ckc_engine* eng, const char* options_json, char** result_json);

/* Check convolution-of-a-recurrence-kernel against the unrolled recurrence. */
ckc_status ckc_equivalence_report(ckc_engine* eng, const char* options_json, char** result_json);

/* Grid-then-refine search over the kernel frequency parameter. */
ckc_status ckc_sweep(ckc_engine* eng, const char* options_json, char** result_json);

void ckc_string_free(char* s);

const char* ckc_version(void);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* CKCONV_CKCONV_H_ */
