"""Pure numpy implementation of the interaction-energy kernels.

Signature-compatible with the compiled ``_kernels_c`` module; selected at
import time when the extension is missing or ``FKSPDE_PURE_PYTHON=1``.

Arrays
------
mid : (P, n, d) float64
    Per-path states frozen at cell midpoints.
n_alive : (P,) int64
    Number of leading cells each path contributes (exit or horizon cut).
w : (n, n) float64
    Exact temporal cell weights.
exps : (d,) float64
    Spatial exponents 2*H_m - 2 (all negative).
"""

import numpy as np


def _spatial(diff, exps, floor):
    a = np.abs(diff)
    clipped = np.any(a < floor, axis=-1)
    a = np.maximum(a, floor)
    if a.shape[-1] == 1:
        return a[..., 0] ** exps[0], clipped
    return np.exp(np.sum(exps * np.log(a), axis=-1)), clipped


def pair_energy_batch(mid_a, mid_b, n_a, n_b, w, exps, floor):
    """Cross energies sum_{k<n_a, l<n_b} w_kl prod_m max(|a_km - b_lm|, floor)^e_m."""
    P = mid_a.shape[0]
    energy = np.zeros(P)
    clipped = np.zeros(P, dtype=np.int64)
    for p in range(P):
        na, nb = int(n_a[p]), int(n_b[p])
        if na == 0 or nb == 0:
            continue
        diff = mid_a[p, :na, None, :] - mid_b[p, None, :nb, :]
        f, c = _spatial(diff, exps, floor)
        energy[p] = np.sum(w[:na, :nb] * f)
        clipped[p] = int(np.count_nonzero(c))
    return energy, clipped


def self_energy_batch(mid, n_alive, w, exps, floor):
    """Self energies of each path against itself (diagonal cells floored)."""
    return pair_energy_batch(mid, mid, n_alive, n_alive, w, exps, floor)
