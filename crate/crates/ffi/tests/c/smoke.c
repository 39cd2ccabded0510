#include <math.h>
#include <stdio.h>
#include "asymlab.h"

#define CHECK(call)                                                         \
    do {                                                                    \
        AsymStatus s_ = (call);                                             \
        if (s_ != ASYM_STATUS_OK) {                                         \
            char msg[256];                                                  \
            asym_last_error(msg, sizeof msg);                               \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, msg);         \
            return 1;                                                       \
        }                                                                   \
    } while (0)

int main(void) {
    AsymDataset *ds = NULL;
    AsymParams *p = NULL, *trained = NULL;
    size_t n = 0, d = 0;
    double l0 = 0, l1 = 0, lam = 0;

    CHECK(asym_dataset_generate(4, 4, 0.5, ASYM_FEATURE_MODE_EXACT_NORM, 8, 0.01, 1, false, &ds));
    CHECK(asym_dataset_shape(ds, &n, &d));
    if (n != 8 || d != 4) return 2;
    CHECK(asym_params_init(16, 1, true, &p));
    CHECK(asym_loss(p, ds, &l0));
    CHECK(asym_train(p, ds, 0.05, 50, &trained, &l1));
    CHECK(asym_kernel_lambda_min(trained, ds, &lam));
    if (!(l1 <= l0) || !isfinite(lam)) return 3;

    if (asym_params_init(2, 1, true, NULL) != ASYM_STATUS_NULL_POINTER) return 4;
    AsymParams *odd = NULL;
    if (asym_params_init(3, 1, true, &odd) != ASYM_STATUS_INVALID_ARGUMENT) return 5;
    if (asym_last_error(NULL, 0) == 0) return 6;

    asym_params_free(trained);
    asym_params_free(p);
    asym_dataset_free(ds);
    printf("ok %s\n", asym_version());
    return 0;
}
