"""Cutoff momentum lattice and free Dirac spinor algebra.

Natural units (hbar = c = m = 1).  Dirac matrices use the standard
representation, so ``beta = diag(1, 1, -1, -1)``.
"""
from __future__ import annotations

import itertools
from functools import cached_property

import numpy as np

SIGMA = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)

ALPHA = np.zeros((3, 4, 4), dtype=complex)
for _i in range(3):
    ALPHA[_i, :2, 2:] = SIGMA[_i]
    ALPHA[_i, 2:, :2] = SIGMA[_i]
BETA = np.diag([1.0, 1.0, -1.0, -1.0]).astype(complex)
IDENTITY4 = np.eye(4, dtype=complex)


def kinetic_energy(p):
    """E(p) = sqrt(1 + |p|^2); ``p`` may be a single 3-vector or an (..., 3) array."""
    p = np.asarray(p, dtype=float)
    return np.sqrt(1.0 + np.sum(p * p, axis=-1))


def dirac_symbol(p) -> np.ndarray:
    """Momentum symbol alpha.p + beta of the free Dirac operator.

    Vectorized over leading axes: an (..., 3) input gives (..., 4, 4).
    """
    p = np.asarray(p, dtype=float)
    return np.einsum("...i,ijk->...jk", p, ALPHA) + BETA


def free_projector(p) -> np.ndarray:
    """Negative-energy projector P0(p) = (1 - D0(p)/E(p)) / 2."""
    p = np.asarray(p, dtype=float)
    d = dirac_symbol(p)
    e = kinetic_energy(p)[..., None, None]
    return 0.5 * (IDENTITY4 - d / e)


class MomentumLattice:
    """Points of the cubic grid h*Z^3 inside the closed ball |p| <= cutoff.

    Points are ordered lexicographically by their integer coordinates, as are
    the difference vectors ``k = p - q`` that index charge densities.
    Instances are treated as immutable; derived tables are computed lazily
    and cached.
    """

    def __init__(self, h: float, cutoff: float):
        self.h = float(h)
        self.cutoff = float(cutoff)
        n = int(np.floor(self.cutoff / self.h + 1e-9))
        r2 = (self.cutoff / self.h) ** 2 * (1 + 1e-12)
        ints = [v for v in itertools.product(range(-n, n + 1), repeat=3) if v[0] ** 2 + v[1] ** 2 + v[2] ** 2 <= r2]
        self.ints = np.array(ints, dtype=np.int64).reshape(-1, 3)
        self.points = self.ints * self.h
        self._index = {tuple(v): i for i, v in enumerate(ints)}

    def __repr__(self):
        return f"MomentumLattice(h={self.h!r}, cutoff={self.cutoff!r}, M={self.size})"

    @property
    def size(self) -> int:
        return len(self.ints)

    @property
    def weight(self) -> float:
        """Quadrature weight h^3 of one lattice cell."""
        return self.h**3

    def same_as(self, other: "MomentumLattice") -> bool:
        return self is other or (self.h == other.h and self.cutoff == other.cutoff and self.size == other.size)

    def index_of(self, n) -> int:
        """Ordinal of the point with integer coordinates ``n``; KeyError if outside."""
        return self._index[tuple(int(x) for x in n)]

    def point(self, i: int) -> np.ndarray:
        return self.points[i]

    @cached_property
    def _diff_data(self):
        d = (self.ints[:, None, :] - self.ints[None, :, :]).reshape(-1, 3)
        uniq, inverse = np.unique(d, axis=0, return_inverse=True)
        return uniq, inverse.reshape(self.size, self.size)

    @property
    def diff_ints(self) -> np.ndarray:
        return self._diff_data[0]

    @property
    def diff_points(self) -> np.ndarray:
        return self._diff_data[0] * self.h

    @property
    def diff_count(self) -> int:
        return len(self._diff_data[0])

    @property
    def pair_diff(self) -> np.ndarray:
        """(M, M) array: index into ``diff_points`` of ``points[i] - points[j]``."""
        return self._diff_data[1]

    @cached_property
    def diff_index(self) -> dict:
        return {tuple(v): i for i, v in enumerate(self.diff_ints.tolist())}

    @cached_property
    def zero_diff(self) -> int:
        return self.diff_index[(0, 0, 0)]

    @cached_property
    def diff_negation(self) -> np.ndarray:
        """Permutation mapping the index of k to the index of -k."""
        return np.array([self.diff_index[tuple(v)] for v in (-self.diff_ints).tolist()], dtype=np.int64)

    @cached_property
    def diff_sq_norms(self) -> np.ndarray:
        """|k|^2 on the difference lattice (physical units)."""
        return np.sum(self.diff_points**2, axis=1)

    @cached_property
    def dirac_blocks(self) -> np.ndarray:
        return dirac_symbol(self.points)

    @cached_property
    def vacuum_blocks(self) -> np.ndarray:
        return free_projector(self.points)

    @cached_property
    def energies(self) -> np.ndarray:
        return kinetic_energy(self.points)

    @cached_property
    def diagonal_groups(self):
        """Group ordered point pairs (i, j) by their difference p_i - p_j.

        Returns ``order`` (flattened pair indices i*M + j sorted stably by
        difference index), ``offsets`` (group boundaries in ``order``) and,
        per group, the flattened matrix of integer |s_a - s_b|^2 between the
        second points of the pairs, concatenated, with ``sq_offsets``.
        """
        m = self.size
        flat = self.pair_diff.ravel()
        order = np.argsort(flat, kind="stable").astype(np.int64)
        counts = np.bincount(flat, minlength=self.diff_count)
        offsets = np.zeros(self.diff_count + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        sq_offsets = np.zeros(self.diff_count + 1, dtype=np.int64)
        np.cumsum(counts.astype(np.int64) ** 2, out=sq_offsets[1:])
        sq = np.empty(sq_offsets[-1], dtype=np.int64)
        second = self.ints[order % m]
        for g in range(self.diff_count):
            s = second[offsets[g] : offsets[g + 1]]
            delta = s[:, None, :] - s[None, :, :]
            sq[sq_offsets[g] : sq_offsets[g + 1]] = np.sum(delta * delta, axis=-1).ravel()
        return order, offsets, sq, sq_offsets


def build_lattice(h: float, cutoff: float) -> MomentumLattice:
    """Build the ball-cut momentum lattice.

    A cutoff below ``h`` is accepted and yields the origin alone (M = 1).
    """
    if not np.isfinite(h) or h <= 0:
        raise ValueError(f"lattice spacing h must be positive, got {h!r}")
    if not np.isfinite(cutoff) or cutoff <= 0:
        raise ValueError(f"cutoff must be positive, got {cutoff!r}")
    return MomentumLattice(h, cutoff)



def pineq_ratios(lattice: MomentumLattice) -> np.ndarray:
    """Tr(P0(p) P0perp(q)) * 2 E((p+q)/2)^2 / |p-q|^2 over ordered pairs p != q.

    The traces come from the projector matrices themselves; the ratio is
    bounded by 1 for every pair of momenta.
    """
    pts = lattice.points
    proj = lattice.vacuum_blocks
    tr_pp = np.einsum("iab,jba->ij", proj, proj).real
    tr_mixed = 2.0 - tr_pp
    mid = 0.5 * (pts[:, None, :] + pts[None, :, :])
    gap = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    off = ~np.eye(lattice.size, dtype=bool)
    return tr_mixed[off] * 2.0 * kinetic_energy(mid)[off] ** 2 / gap[off]
