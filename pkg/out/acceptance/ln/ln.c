/* ln kernel generated by progpoly; schedule odd, 1 sub-domain(s) */
#include <stddef.h>

static const double ln_coeffs[1][4] = {
    {0x1.71546ea141a83p+1, 0x1.ec9fbafdab008p-1, 0x1.1a2e21444bba2p-1, 0x1.b2ef1ae8f48eep-1},
};

/* term counts per format: fp(16,8)=3, fp(19,8)=4 */
/* compile without contraction (-ffp-contract=off) so no multiply-add is fused */
static double ln_kernel(double x, int terms) {
    size_t sub = 0;
    const double *c = ln_coeffs[sub];
    double s = x * x;
    double acc = c[terms - 1];
    for (int j = terms - 2; j >= 0; j--) acc = acc * s + c[j];
    return acc * x;
}
