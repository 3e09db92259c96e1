#include <stdio.h>
#include "fieldgraph.h"

/* Usage: smoke <graph.json>. Prints "<param_count> <n> <n_real> <first prediction>". */
int main(int argc, char **argv) {
    if (argc != 2) return 2;
    FgModel *model = NULL;
    FgGraph *graph = NULL;
    size_t params = 0, n = 0, n_real = 0;
    if (fg_model_init(0, &model) != FG_STATUS_OK) return 1;
    if (fg_model_param_count(model, &params) != FG_STATUS_OK) return 1;
    if (fg_graph_load(argv[1], &graph) != FG_STATUS_OK) {
        fprintf(stderr, "%s\n", fg_last_error_message());
        return 1;
    }
    fg_graph_node_count(graph, &n, &n_real);
    double out[64];
    if (n > 64 || fg_predict(model, graph, out, n) != FG_STATUS_OK) return 1;
    if (fg_predict(model, graph, out, n - 1) != FG_STATUS_BUFFER_TOO_SMALL) return 1;
    printf("%zu %zu %zu %.17g\n", params, n, n_real, out[0]);
    fg_graph_free(graph);
    fg_model_free(model);
    return 0;
}
