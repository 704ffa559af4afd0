/* Build: cc smoke.c -I../include ../../../target/debug/libfusion_shap_ffi.a -lm -lpthread -ldl */
#include <stdio.h>
#include "fusion_shap.h"

int main(int argc, char **argv) {
    if (argc < 2) {
        fprintf(stderr, "usage: %s model.json\n", argv[0]);
        return 2;
    }
    FsModel *model = NULL;
    FsStatus s = fs_model_load(argv[1], &model);
    if (s != FS_STATUS_OK) {
        fprintf(stderr, "%s: %s\n", fs_status_name(s), fs_last_error_message());
        return 1;
    }
    size_t shape[3];
    fs_model_input_shape(model, shape);
    size_t n = shape[0] * shape[1] * shape[2];
    double image[4096], map[4096];
    if (n > 4096) {
        fs_model_free(model);
        return 1;
    }
    for (size_t i = 0; i < n; i++) image[i] = 0.5;
    s = fs_explain(model, NULL, "grad", image, n, -1, 0, map, n);
    printf("status=%s first=%g\n", fs_status_name(s), map[0]);
    s = fs_explain(model, NULL, "grad", image, n - 1, -1, 0, map, n);
    printf("status=%s message=%s\n", fs_status_name(s), fs_last_error_message());
    fs_model_free(model);
    return 0;
}
