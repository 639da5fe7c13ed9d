/* Minimal consumer of the boxdistill C API: generate a scene, project its
 * points, and print a few records.
 *
 * Build (from the repository root, after `cargo build -p boxdistill-ffi`):
 *   cc crates/ffi/examples/demo.c -Icrates/ffi/include \
 *      target/debug/libboxdistill_ffi.a -lpthread -ldl -lm -o demo
 */
#include <stdio.h>
#include <stdlib.h>

#include "boxdistill.h"

static void die(const char *what, bd_status status) {
    char message[256] = {0};
    bd_last_error_message(message, sizeof message);
    fprintf(stderr, "%s failed (%d): %s\n", what, (int)status, message);
    exit(1);
}

int main(void) {
    printf("boxdistill %s\n", bd_version());

    bd_scene *scene = NULL;
    bd_status status = bd_scene_generate(7, 0, 0, &scene);
    if (status != BD_OK) {
        die("bd_scene_generate", status);
    }

    size_t points = 0, boxes = 0, in_view = 0;
    bd_scene_point_count(scene, &points);
    bd_scene_box_count(scene, &boxes);
    status = bd_scene_projected_count(scene, &in_view);
    if (status != BD_OK) {
        die("bd_scene_projected_count", status);
    }
    printf("scene: %zu points, %zu boxes, %zu in view\n", points, boxes, in_view);

    bd_projected_point *records = calloc(in_view, sizeof *records);
    size_t written = 0;
    status = bd_scene_project(scene, records, in_view, &written);
    if (status != BD_OK) {
        die("bd_scene_project", status);
    }
    for (size_t i = 0; i < written && i < 3; i++) {
        printf(
            "point %llu -> pixel (%u, %u), depth %.3f m\n",
            (unsigned long long)records[i].source_index,
            records[i].pixel_u,
            records[i].pixel_v,
            records[i].depth);
    }

    free(records);
    bd_scene_free(scene);
    printf("ok\n");
    return 0;
}
