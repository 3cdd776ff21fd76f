#include <stdio.h>
#include <string.h>
#include "dfalign.h"

int main(void) {
    DfaConfig *cfg = NULL;
    if (dfa_config_from_json("{\"nope\": 1}", &cfg) != DFA_STATUS_CONFIG || cfg != NULL) return 1;
    if (dfa_last_error() == NULL) return 2;
    if (dfa_config_default(&cfg) != DFA_STATUS_OK) return 3;
    char hash[65];
    if (dfa_config_hash(cfg, hash, sizeof hash) != DFA_STATUS_OK || strlen(hash) != 64) return 4;
    DfaProposal props[2] = {{0, 0.0, 10.0, 1, 0.9}, {0, 0.0, 10.0, 1, 0.8}};
    DfaProposal out[2];
    size_t n = 0;
    if (dfa_soft_nms(props, 2, 0.5, 0.001, out, &n) != DFA_STATUS_OK || n != 2) return 5;
    if (dfa_tiou(0.0, 10.0, 5.0, 15.0) <= 0.33 || dfa_tiou(0.0, 10.0, 5.0, 15.0) >= 0.34) return 6;
    dfa_config_free(cfg);
    printf("%s %.12f\n", hash, out[1].score);
    return 0;
}
