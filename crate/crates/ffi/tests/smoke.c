#include <math.h>
#include <stdio.h>
#include "henon_lab.h"

int main(void) {
    double a_star = 0.0;
    if (hl_boundary_param(0.0, 8, HlPrecision_Standard, &a_star) != HlStatus_Ok) return 1;
    if (fabs(a_star + 1.401155189) > 1e-8) return 2;

    HlMap *map = NULL;
    HlTower *tower = NULL;
    if (hl_map_henon(a_star, 0.0, &map) != HlStatus_Ok) return 3;
    if (hl_tower_build(map, 3, HlPrecision_Standard, &tower) != HlStatus_Ok) return 4;
    double d = 0.0;
    hl_tower_log_delta(tower, 3, &d);
    if (!(isinf(d) && d < 0)) return 5;

    if (hl_map_eval(NULL, 0.0, 0.0, &d, NULL) != HlStatus_NullPointer) return 6;
    char msg[64];
    if (hl_last_error_message(msg, sizeof msg) == 0) return 7;

    hl_tower_free(tower);
    hl_map_free(map);
    printf("ok\n");
    return 0;
}
