"""Pure numpy fallback for the per-diagonal exchange accumulation."""
import numpy as np


def accumulate_diagonals(G, weights, offsets, woffsets):
    """out[group] = W_group @ G[group] for every difference group.

    ``G`` is (n_pairs, 16) complex, ordered by group; ``weights`` holds the
    row-major real (n_g, n_g) matrix of each group back to back.
    """
    out = np.zeros_like(G)
    gr = np.ascontiguousarray(G.real)
    gi = np.ascontiguousarray(G.imag)
    for g in range(len(offsets) - 1):
        a, b = offsets[g], offsets[g + 1]
        n = b - a
        if n == 0:
            continue
        w = weights[woffsets[g] : woffsets[g + 1]].reshape(n, n)
        out[a:b].real = w @ gr[a:b]
        out[a:b].imag = w @ gi[a:b]
    return out
