#include <stdio.h>
#include <string.h>

#include "uavmec.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        UavmecStatus st_ = (call);                                         \
        if (st_ != UAVMEC_STATUS_OK) {                                     \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)st_,             \
                    uavmec_last_error());                                  \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    const char *toml = "[time]\nn_slots = 16\nhorizon_s = 60.0\n[users]\ncount = 4\n";
    UavmecScenario *s = NULL;
    UavmecTasks *t = NULL;
    UavmecSolution *sol = NULL;
    UavmecMetrics m;
    size_t nu, nm, nn;
    double xy[2];

    CHECK(uavmec_scenario_from_toml(toml, &s));
    CHECK(uavmec_scenario_dims(s, &nu, &nm, &nn));
    CHECK(uavmec_tasks_generate(s, 5, &t));
    CHECK(uavmec_solve(s, t, UAVMEC_POLICY_JTORATC, 5, &sol));
    CHECK(uavmec_solution_metrics(sol, &m));
    CHECK(uavmec_solution_position(sol, 0, nn - 1, xy));

    if (uavmec_solution_position(sol, nm, 0, xy) != UAVMEC_STATUS_INVALID_ARGUMENT ||
        strlen(uavmec_last_error()) == 0) {
        fprintf(stderr, "out-of-range index not rejected\n");
        return 1;
    }
    printf("%zu %zu %zu %.17g %d\n", nu, nm, nn, m.objective, m.converged ? 1 : 0);

    uavmec_solution_free(sol);
    uavmec_tasks_free(t);
    uavmec_scenario_free(s);
    return 0;
}
