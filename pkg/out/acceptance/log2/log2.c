/* log2 kernel generated by progpoly; schedule odd, 1 sub-domain(s) */
#include <stddef.h>

static const double log2_coeffs[1][4] = {
    {0x1.715460ce698b8p+1, 0x1.ed43983245254p-1, 0x1.9fdee4df9d4a2p-2, 0x1.3174a1f86664cp+2},
};

/* term counts per format: fp(16,8)=3, fp(19,8)=4 */
/* compile without contraction (-ffp-contract=off) so no multiply-add is fused */
static double log2_kernel(double x, int terms) {
    size_t sub = 0;
    const double *c = log2_coeffs[sub];
    double s = x * x;
    double acc = c[terms - 1];
    for (int j = terms - 2; j >= 0; j--) acc = acc * s + c[j];
    return acc * x;
}
