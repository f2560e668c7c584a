/*
 * srkd — sequential recommendation with masked-prediction training and
 * temperature distillation, behind a plain C interface.
 *
 * Every entry point returns srkd_status (0 on success); the message for the
 * latest failure on the calling thread is available via srkd_last_error().
 * Strings returned through char** out-parameters are heap-allocated and must
 * be released with srkd_string_free().
 *
 * Pipeline functions take an srkd_config: a string key/value store that can
 * be filled from a `key = value` file (srkd_config_load_file) and/or
 * individual srkd_config_set calls; later assignments win.
 *
 * Recognized keys per entry point (defaults in parentheses):
 *
 *  srkd_prepare: input, format (ml-1m|tsv, default ml-1m), min_count (5),
 *      max_len (50), seed (7), out, tokenmap_out [optional]
 *  srkd_train: data, out, log [optional], layers (2), hidden (256),
 *      heads (4), ffn_dim (4*hidden), dropout (0.1), tie_output (true),
 *      lr (2e-5), batch_size (32), max_epochs (150), patience (5),
 *      rho (0.55), grad_clip (0), seed (7), selection_metric (NDCG@10),
 *      init (scratch_all|scratch_embed|scratch_layer|from_checkpoint),
 *      init_checkpoint [required by the non-scratch_all modes]
 *  srkd_distill: data, teacher, out, log [optional], student arch keys as in
 *      srkd_train (layers (2), hidden (256), heads (4), ...), lr (1e-4),
 *      alpha (0.5), temperature (1.5), rho (0.35), batch_size, max_epochs,
 *      patience, seed
 *  srkd_eval: data, checkpoint, split (test|val, default test), ks (5,10)
 *  srkd_sweep: axis (rho|alpha|temperature|mapping_seed|init_mode),
 *      values (comma separated), plus the base keys the axis needs:
 *      data for rho/alpha/temperature/init_mode, teacher for
 *      alpha/temperature, init_checkpoint for init_mode, input+format for
 *      mapping_seed, and the train/distill keys above; split (val)
 *  srkd_stability: input, format, min_count, max_len, seeds (comma
 *      separated), plus train keys; split (val)
 *  srkd_bench: teacher_checkpoint, student_checkpoint, tokenmap,
 *      requests (100), warmup (10), k (10), seed (7)
 *  srkd_server_start: checkpoint, tokenmap, port (0 = any free port),
 *      deadline_ms (1000), max_concurrency (2)
 */
#ifndef SRKD_H
#define SRKD_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum srkd_status {
    SRKD_OK = 0,
    SRKD_ERR_PARAM = 1,
    SRKD_ERR_IO = 2,
    SRKD_ERR_FORMAT = 3,
    SRKD_ERR_DATA = 4,
    SRKD_ERR_SHAPE = 5,
    SRKD_ERR_CONTRACT = 6,
    SRKD_ERR_NUMERIC = 7,
    SRKD_ERR_CONFIG = 8,
    SRKD_ERR_INTERNAL = 9
} srkd_status;

const char* srkd_version(void);

/* Message for the calling thread's most recent failure ("" if none). */
const char* srkd_last_error(void);

void srkd_string_free(char* s);

/* ---- configuration ---------------------------------------------------- */

typedef struct srkd_config srkd_config;

srkd_config* srkd_config_new(void);
void srkd_config_free(srkd_config* config);
srkd_status srkd_config_load_file(srkd_config* config, const char* path);
srkd_status srkd_config_set(srkd_config* config, const char* key, const char* value);
/* NULL when the key is absent; the pointer stays valid until the next
 * mutation of the config. */
const char* srkd_config_get(const srkd_config* config, const char* key);

/* ---- pipeline --------------------------------------------------------- */

srkd_status srkd_prepare(const srkd_config* config);
srkd_status srkd_train(const srkd_config* config);
srkd_status srkd_distill(const srkd_config* config);
srkd_status srkd_eval(const srkd_config* config, char** json_out);
srkd_status srkd_sweep(const srkd_config* config, char** json_out);
srkd_status srkd_stability(const srkd_config* config, char** json_out);
srkd_status srkd_bench(const srkd_config* config, char** json_out);

/* ---- serving ---------------------------------------------------------- */

typedef struct srkd_bundle srkd_bundle;

srkd_status srkd_bundle_open(const char* checkpoint_path,
                             const char* tokenmap_path, srkd_bundle** out);
void srkd_bundle_close(srkd_bundle* bundle);

/* json_out: {"items": [...], "scores": [...], "dropped_unknown": n} */
srkd_status srkd_recommend(const srkd_bundle* bundle, const char* const* items,
                           size_t item_count, int k, char** json_out);

typedef struct srkd_server srkd_server;

srkd_status srkd_server_start(const srkd_config* config, srkd_server** out);
int srkd_server_port(const srkd_server* server);
void srkd_server_stop(srkd_server* server);

#ifdef __cplusplus
}
#endif

#endif /* SRKD_H */
