#include <stdio.h>
#include "quantctl.h"

int main(void) {
    QcExperiment *exp = NULL;
    if (qc_experiment_preset("smoke", &exp) != QC_STATUS_OK) {
        char msg[512];
        qc_last_error(msg, sizeof msg);
        fprintf(stderr, "preset: %s\n", msg);
        return 1;
    }
    QcClosedLoop *lp = NULL;
    if (qc_loop_new(exp, 8, 1, 0, &lp) != QC_STATUS_OK) return 2;
    double cost = 0.0, sum = 0.0;
    for (int t = 0; t < 1000; t++) {
        if (qc_loop_step(lp, &cost) != QC_STATUS_OK) return 3;
        sum += cost;
    }
    if (qc_loop_step(NULL, &cost) != QC_STATUS_NULL_POINTER) return 4;
    printf("ok mean cost %f\n", sum / 1000.0);
    qc_loop_free(lp);
    qc_experiment_free(exp);
    return 0;
}
