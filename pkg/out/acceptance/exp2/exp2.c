/* exp2 kernel generated by progpoly; schedule dense, 1 sub-domain(s) */
#include <stddef.h>

static const double exp2_coeffs[1][7] = {
    {0x1.fffffffa746ecp-1, 0x1.62e45735dc99cp-1, 0x1.ec09123bfebc2p-3, 0x1.c6e01b5543233p-5, 0x1.333b1979f5078p-7, 0x1.3309d4a9141b4p-10, 0x1.7211b363d1c63p-11},
};

/* term counts per format: fp(16,8)=6, fp(19,8)=7 */
/* compile without contraction (-ffp-contract=off) so no multiply-add is fused */
static double exp2_kernel(double x, int terms) {
    size_t sub = 0;
    const double *c = exp2_coeffs[sub];
    double s = x;
    double acc = c[terms - 1];
    for (int j = terms - 2; j >= 0; j--) acc = acc * s + c[j];
    return acc;
}
