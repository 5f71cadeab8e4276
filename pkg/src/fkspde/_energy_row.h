/* One row of a one-dimensional interaction energy:
 *   sum_l w[l] * max(|ak - b[l]|, floor)^e0
 * Built with vector math and cloned per ISA so the loader picks the widest
 * variant the CPU supports. The clip count is a double so the loop vectorises
 * at every width. */
#ifndef FKSPDE_ENERGY_ROW_H
#define FKSPDE_ENERGY_ROW_H

#include <math.h>

#if defined(__GNUC__) && !defined(__clang__) && defined(__x86_64__) && defined(__linux__)
#define FKSPDE_CLONES __attribute__((target_clones("avx512f", "avx2", "default")))
#else
#define FKSPDE_CLONES
#endif

FKSPDE_CLONES
static double fkspde_energy_row(const double *b, const double *w, long n, double ak, double floor_,
                                double e0, double *nclip)
{
    double row = 0.0, nc = 0.0;
    for (long l = 0; l < n; l++) {
        double x = fabs(ak - b[l]);
        nc += (x < floor_) ? 1.0 : 0.0;
        x = fmax(x, floor_);
        row += w[l] * exp(e0 * log(x));
    }
    *nclip += nc;
    return row;
}

#endif
