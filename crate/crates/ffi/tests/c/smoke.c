#include <stdio.h>
#include <math.h>
#include "exitflow.h"

static const char *CONFIG =
    "schema = 1\n"
    "name = \"c_smoke\"\n"
    "[domain]\nkind = \"interval\"\nlo = 0.0\nhi = 1.0\n"
    "[cost]\nkind = \"zero\"\n"
    "[dynamics]\nkind = \"profile\"\nprofile = { kind = \"constant\", value = 1.0 }\n"
    "[grid]\nh = 0.0625\n";

int main(void) {
    ExfConfig *cfg = NULL;
    if (exf_config_parse(CONFIG, &cfg) != EXF_STATUS_OK) {
        fprintf(stderr, "parse: %s\n", exf_last_error());
        return 1;
    }
    ExfSolution *sol = NULL;
    if (exf_solve(cfg, &sol) != EXF_STATUS_OK) {
        fprintf(stderr, "solve: %s\n", exf_last_error());
        return 1;
    }
    double v = 0.0;
    exf_solution_value(sol, 0.0, 0.25, 0.0, &v);
    if (fabs(v - 0.25) > 0.07) {
        fprintf(stderr, "value %f\n", v);
        return 1;
    }
    if (exf_solve(NULL, &sol) != EXF_STATUS_NULL_POINTER) {
        return 1;
    }
    exf_solution_free(sol);
    exf_config_free(cfg);
    printf("exitflow %s ok\n", exf_version());
    return 0;
}
