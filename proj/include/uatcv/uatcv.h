/* Copyright (C) 2026 The uatcv Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef UATCV_H
#define UATCV_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define UATCV_API __declspec(dllexport)
#else
#define UATCV_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum uatcv_status {
    UATCV_OK = 0,
    UATCV_E_SHAPE = 1,
    UATCV_E_CAPACITY = 2,
    UATCV_E_RANGE = 3,
    UATCV_E_SPEC = 4,
    UATCV_E_PARSE = 5,
    UATCV_E_VALIDATION = 6,
    UATCV_E_RANK = 7,
    UATCV_E_IO = 8,
    UATCV_E_INTERNAL = 9,
    UATCV_E_ARGUMENT = 10,
    /* the command ran and its output is valid, but a check exceeded tol */
    UATCV_VERIFY_FAILED = 11
} uatcv_status;

typedef enum uatcv_command {
    UATCV_CMD_LOWER = 0,
    UATCV_CMD_VERIFY,
    UATCV_CMD_EXPAND,
    UATCV_CMD_CLASSIFY,
    UATCV_CMD_ANALYZE,
    UATCV_CMD_REPORT
} uatcv_command;

typedef enum uatcv_format { UATCV_FORMAT_TEXT = 0, UATCV_FORMAT_LATEX = 1 } uatcv_format;

typedef struct uatcv_network uatcv_network;

typedef struct uatcv_options {
    int has_seed;
    uint64_t seed;
    size_t trials;
    double tol;
    uatcv_format format;
    /* analyze; lora_layer / prune_layer < 0 selects the default */
    long lora_layer;
    const char* lora_target;
    size_t lora_rank;
    long prune_layer;
    const size_t* prune_channels;
    size_t prune_count;
} uatcv_options;

UATCV_API const char* uatcv_version(void);
UATCV_API const char* uatcv_status_name(uatcv_status s);

/* Message and layer index (-1 when none) of the last failure on this thread. */
UATCV_API const char* uatcv_last_error(void);
UATCV_API long uatcv_last_error_layer(void);

UATCV_API size_t uatcv_element_cap(void);
UATCV_API uatcv_status uatcv_set_element_cap(size_t cap);

UATCV_API uatcv_status uatcv_network_parse(const char* text, size_t len, uatcv_network** out);
UATCV_API uatcv_status uatcv_network_load(const char* path, uatcv_network** out);
UATCV_API void uatcv_network_free(uatcv_network* net);
UATCV_API size_t uatcv_network_layer_count(const uatcv_network* net);
/* Canonical spec JSON; free with uatcv_string_free. */
UATCV_API uatcv_status uatcv_network_emit(const uatcv_network* net, char** out);

UATCV_API void uatcv_options_init(uatcv_options* opts);

/* Runs one command. *out receives what the command prints; *latex (may be
 * NULL) receives the report's LaTeX sidecar or NULL. Free both with
 * uatcv_string_free. Returns UATCV_VERIFY_FAILED with valid outputs when a
 * verification check fails. */
UATCV_API uatcv_status uatcv_run(const uatcv_network* net, uatcv_command cmd, const uatcv_options* opts, char** out,
                                 char** latex);

UATCV_API void uatcv_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif
