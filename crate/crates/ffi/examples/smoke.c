/* Build: cc examples/smoke.c -Iinclude -L../../target/debug -lnes_ffi -lm -lpthread -ldl */
#include <stdio.h>
#include "nes_ffi.h"

int main(int argc, char **argv) {
    const char *path = argc > 1 ? argv[1] : "../core/scenarios/six_robot.json";
    NesScenario *s = NULL;
    if (nes_scenario_from_file(path, &s) != NES_STATUS_OK) {
        fprintf(stderr, "load failed: %s\n", nes_last_error());
        return 1;
    }
    size_t n = nes_scenario_agent_count(s) * nes_scenario_dim(s);
    double y[64];
    if (n > 64 || nes_oracle(s, y, 64) != NES_STATUS_OK) {
        fprintf(stderr, "oracle failed\n");
        return 1;
    }
    NesRun *r = NULL;
    NesStatus st = nes_run(s, &r);
    if (st != NES_STATUS_OK) {
        fprintf(stderr, "run failed (%d): %s\n", (int)st, nes_last_error());
        nes_scenario_free(s);
        return 1;
    }
    double xi[64];
    nes_run_final_xi(r, xi, 64);
    printf("rounds %zu converged %d first %.6f (equilibrium %.6f)\n",
           nes_run_iterations(r), (int)nes_run_converged(r), xi[0], y[0]);
    nes_run_free(r);
    nes_scenario_free(s);
    return 0;
}
