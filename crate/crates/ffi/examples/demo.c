#include <stdio.h>
#include <assert.h>
#include "facekit.h"

int main(void) {
    double a[4] = {0, 0, 2, 2};
    double b[4] = {1, 1, 3, 3};
    double v = 0;
    assert(fk_iou(a, b, &v) == FK_STATUS_OK);
    printf("iou %.6f\n", v);

    FkGrid *grid = NULL;
    assert(fk_grid_builtin(640, 640, &grid) == FK_STATUS_OK);
    printf("anchors %zu\n", fk_grid_len(grid));
    fk_grid_free(grid);

    FkChain *chain = NULL;
    assert(fk_chain_builtin(&chain) == FK_STATUS_OK);
    uint64_t stride = 0, rf = 0;
    assert(fk_chain_layer_geometry(chain, "conv4_3", &stride, &rf) == FK_STATUS_OK);
    printf("conv4_3 stride %llu rf %llu\n", (unsigned long long)stride, (unsigned long long)rf);
    fk_chain_free(chain);

    assert(fk_iou(NULL, b, &v) == FK_STATUS_NULL_POINTER);
    printf("error: %s\n", fk_last_error());
    printf("version %s\n", fk_version());
    return 0;
}
