"""Hilbert-Schmidt kernel operators on the cutoff momentum lattice.

An operator ``A`` is stored through its momentum kernel ``A(p, q)``, a 4x4
block for every ordered pair of lattice points, laid out as a dense
``(4M, 4M)`` array with row index ``4*i + a``.  Operators act by the
Riemann sum ``(A f)(p) = sum_q A(p, q) f(q) h^3``, so

* products carry one factor ``h^3`` on the contracted index,
* ``tr A = sum_p Tr A(p, p) h^3`` and ``||A||_HS^2 = sum |A(p, q)|^2 h^6``.

``KernelOperator.matrix`` (the kernel times ``h^3``) is the unitarily
equivalent plain matrix on C^{4M}; spectral calculus is done on it.

Constants table (unitary Fourier convention, f^(k) = (2pi)^-3/2 int f e^{-ikx}):

========================  ==============================================
density of Q              (2pi)^-3/2 h^3 sum_{p-q=k} Tr Q(p, q)
Coulomb transform 1/|x|   (2pi)^-3/2 4pi / |k|^2
rho * 1/|x|               4pi rho^(k) / |k|^2
multiplication by V(x)    kernel (2pi)^-3/2 V^(p - q)
Q(x,y) / |x - y|          kernel (2pi)^-3 sum_k 4pi/|k|^2 Q(p-k, q-k) h^3
D(f, g)                   4pi sum_{k != 0} conj(f^) g^ / |k|^2 h^3
========================  ==============================================

The k = 0 Coulomb mode is dropped everywhere (uniform neutralizing
background).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .lattice import IDENTITY4, MomentumLattice

FOURIER = (2.0 * np.pi) ** -1.5
FOUR_PI = 4.0 * np.pi


class LatticeMismatch(ValueError):
    pass


def _check_same(a: MomentumLattice, b: MomentumLattice):
    if not a.same_as(b):
        raise LatticeMismatch(f"operands live on different lattices: {a!r} vs {b!r}")


class KernelOperator:
    """Block kernel of an operator on the cutoff space.

    ``hermitian`` is an assertion carried along for documentation and
    debug checks (:meth:`check_hermitian`); it is never enforced silently.
    """

    __slots__ = ("lattice", "data", "hermitian")

    def __init__(self, lattice: MomentumLattice, data, hermitian: bool = False):
        data = np.asarray(data, dtype=complex)
        n = 4 * lattice.size
        if data.shape != (n, n):
            raise ValueError(f"kernel data must have shape {(n, n)}, got {data.shape}")
        self.lattice = lattice
        self.data = data
        self.hermitian = bool(hermitian)

    # construction

    @classmethod
    def zeros(cls, lattice: MomentumLattice) -> "KernelOperator":
        n = 4 * lattice.size
        return cls(lattice, np.zeros((n, n), dtype=complex), hermitian=True)

    @classmethod
    def from_matrix(cls, lattice: MomentumLattice, matrix, hermitian: bool = False) -> "KernelOperator":
        return cls(lattice, np.asarray(matrix, dtype=complex) / lattice.weight, hermitian)

    @classmethod
    def block_diagonal(cls, lattice: MomentumLattice, blocks, hermitian: bool = False) -> "KernelOperator":
        """Operator acting pointwise in momentum, ``(A f)(p) = blocks[p] f(p)``."""
        m = lattice.size
        data = np.zeros((m, 4, m, 4), dtype=complex)
        idx = np.arange(m)
        data[idx, :, idx, :] = np.asarray(blocks) / lattice.weight
        return cls(lattice, data.reshape(4 * m, 4 * m), hermitian)

    # views

    @property
    def matrix(self) -> np.ndarray:
        return self.data * self.lattice.weight

    @property
    def blocks(self) -> np.ndarray:
        """(M, 4, M, 4) view of the kernel."""
        m = self.lattice.size
        return self.data.reshape(m, 4, m, 4)

    def pair_blocks(self) -> np.ndarray:
        """(M, M, 4, 4) copy with the pair index first."""
        return np.ascontiguousarray(self.blocks.transpose(0, 2, 1, 3))

    @classmethod
    def from_pair_blocks(cls, lattice, pairs, hermitian=False) -> "KernelOperator":
        m = lattice.size
        return cls(lattice, np.ascontiguousarray(pairs.transpose(0, 2, 1, 3)).reshape(4 * m, 4 * m), hermitian)

    # algebra

    def dagger(self) -> "KernelOperator":
        return KernelOperator(self.lattice, self.data.conj().T, self.hermitian)

    def __add__(self, other):
        _check_same(self.lattice, other.lattice)
        return KernelOperator(self.lattice, self.data + other.data, self.hermitian and other.hermitian)

    def __sub__(self, other):
        _check_same(self.lattice, other.lattice)
        return KernelOperator(self.lattice, self.data - other.data, self.hermitian and other.hermitian)

    def __neg__(self):
        return KernelOperator(self.lattice, -self.data, self.hermitian)

    def __mul__(self, scalar):
        real = np.isreal(scalar)
        return KernelOperator(self.lattice, self.data * scalar, self.hermitian and bool(real))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return product(self, other)

    def hermiticity_error(self) -> float:
        return float(np.linalg.norm(self.data - self.data.conj().T)) * self.lattice.weight

    def check_hermitian(self, tol: float = 1e-12):
        err = self.hermiticity_error()
        scale = 1.0 + hs_norm(self)
        if err > tol * scale:
            raise AssertionError(f"operator flagged Hermitian is not: ||A - A^*||_HS = {err:.3e}")
        return self

    def __repr__(self):
        return f"KernelOperator(M={self.lattice.size}, hermitian={self.hermitian})"


@dataclass
class ChargeDensity:
    """Fourier amplitudes rho^(k) on the difference lattice."""

    lattice: MomentumLattice
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.lattice.diff_count,):
            raise ValueError(f"density needs {self.lattice.diff_count} modes, got {self.values.shape}")

    @classmethod
    def zeros(cls, lattice):
        return cls(lattice, np.zeros(lattice.diff_count, dtype=complex))

    def __add__(self, other):
        _check_same(self.lattice, other.lattice)
        return ChargeDensity(self.lattice, self.values + other.values)

    def __sub__(self, other):
        _check_same(self.lattice, other.lattice)
        return ChargeDensity(self.lattice, self.values - other.values)

    def __mul__(self, scalar):
        return ChargeDensity(self.lattice, self.values * scalar)

    __rmul__ = __mul__

    def symmetry_error(self) -> float:
        """max |rho(-k) - conj(rho(k))|; zero for densities real in position space."""
        v = self.values
        return float(np.max(np.abs(v[self.lattice.diff_negation] - v.conj()), initial=0.0))


# free operators


def free_dirac(lattice: MomentumLattice) -> KernelOperator:
    return KernelOperator.block_diagonal(lattice, lattice.dirac_blocks, hermitian=True)


def free_vacuum(lattice: MomentumLattice) -> KernelOperator:
    return KernelOperator.block_diagonal(lattice, lattice.vacuum_blocks, hermitian=True)


def abs_free_dirac(lattice: MomentumLattice) -> KernelOperator:
    """|D0|, i.e. E(p) times the identity block."""
    blocks = lattice.energies[:, None, None] * IDENTITY4
    return KernelOperator.block_diagonal(lattice, blocks, hermitian=True)


# Hilbert-Schmidt structure


def hs_inner(a: KernelOperator, b: KernelOperator) -> complex:
    """tr(A^* B)."""
    _check_same(a.lattice, b.lattice)
    return complex(np.vdot(a.data, b.data)) * a.lattice.weight**2


def hs_norm(a: KernelOperator) -> float:
    return float(np.linalg.norm(a.data)) * a.lattice.weight


def product(a: KernelOperator, b: KernelOperator) -> KernelOperator:
    _check_same(a.lattice, b.lattice)
    return KernelOperator(a.lattice, (a.data @ b.data) * a.lattice.weight)


def commutator(a: KernelOperator, b: KernelOperator) -> KernelOperator:
    """[A, B] = AB - BA.  Anti-Hermitian when both operands are Hermitian."""
    _check_same(a.lattice, b.lattice)
    w = a.lattice.weight
    return KernelOperator(a.lattice, (a.data @ b.data - b.data @ a.data) * w)


def trace(a: KernelOperator) -> complex:
    return complex(np.trace(a.data)) * a.lattice.weight


def p0_blocks(a: KernelOperator):
    """(A^{++}, A^{--}, A^{+-}, A^{-+}) relative to the free vacuum P0.

    ``A^{++} = (1 - P0) A (1 - P0)``, ``A^{--} = P0 A P0``,
    ``A^{+-} = (1 - P0) A P0``, ``A^{-+} = P0 A (1 - P0)``.
    """
    lat = a.lattice
    minus = lat.vacuum_blocks
    plus = IDENTITY4 - minus
    blk = a.blocks

    def sandwich(left, right):
        out = np.einsum("pab,pbqc,qcd->paqd", left, blk, right, optimize=True)
        return KernelOperator(lat, out.reshape(a.data.shape))

    pp, mm = sandwich(plus, plus), sandwich(minus, minus)
    pp.hermitian = mm.hermitian = a.hermitian
    return pp, mm, sandwich(plus, minus), sandwich(minus, plus)


def _diagonal_blocks(a: KernelOperator) -> np.ndarray:
    m = a.lattice.size
    idx = np.arange(m)
    return a.blocks[idx, :, idx, :]


def _p0_trace_from_diagonal(lat: MomentumLattice, diag: np.ndarray) -> float:
    # tr P0 A P0 + tr P0perp A P0perp only needs the diagonal blocks,
    # since P0 is diagonal in momentum.
    minus = lat.vacuum_blocks
    plus = IDENTITY4 - minus
    tr_mm = np.einsum("pab,pba->", minus, diag)
    tr_pp = np.einsum("pab,pba->", plus, diag)
    return (tr_pp + tr_mm) * lat.weight


def p0_trace(a: KernelOperator) -> float:
    """tr A^{++} + tr A^{--}; real part returned (imaginary part is round-off for Hermitian A)."""
    return float(np.real(_p0_trace_from_diagonal(a.lattice, _diagonal_blocks(a))))


def p0_trace_product(a: KernelOperator, b: KernelOperator) -> float:
    """p0_trace(A B) without forming the full product."""
    _check_same(a.lattice, b.lattice)
    lat = a.lattice
    diag = np.einsum("pasb,sbpc->pac", a.blocks, b.blocks, optimize=True) * lat.weight
    return float(np.real(_p0_trace_from_diagonal(lat, diag)))


# densities and the Coulomb space


def block_traces(a: KernelOperator) -> np.ndarray:
    """(M, M) matrix of Tr_{C^4} A(p, q)."""
    return np.einsum("iaja->ij", a.blocks)


def density(q: KernelOperator) -> ChargeDensity:
    """rho_Q^(k) = (2pi)^-3/2 h^3 sum over pairs with p - q = k of Tr Q(p, q).

    Pair form of the half-shift integral: with p' = p + k/2 and q' = p - k/2
    every ordered pair of lattice points is visited exactly once.
    """
    lat = q.lattice
    tr = block_traces(q).ravel()
    key = lat.pair_diff.ravel()
    n = lat.diff_count
    vals = np.bincount(key, weights=tr.real, minlength=n) + 1j * np.bincount(key, weights=tr.imag, minlength=n)
    return ChargeDensity(lat, vals * FOURIER * lat.weight)


def _coulomb_weights(lat: MomentumLattice) -> np.ndarray:
    """h^3 / |k|^2 with the k = 0 mode removed."""
    k2 = lat.diff_sq_norms
    w = np.zeros_like(k2)
    nz = k2 > 0
    w[nz] = lat.weight / k2[nz]
    return w


def coulomb_norm(rho: ChargeDensity) -> float:
    """(sum_{k != 0} |rho(k)|^2 / |k|^2 h^3)^(1/2)."""
    w = _coulomb_weights(rho.lattice)
    return float(np.sqrt(np.sum(w * np.abs(rho.values) ** 2)))


def coulomb_pairing(f: ChargeDensity, g: ChargeDensity) -> complex:
    """D(f, g) = 4pi sum_{k != 0} conj(f(k)) g(k) / |k|^2 h^3.

    Real for densities that are real in position space; returned as a
    complex number so callers can see the round-off.
    """
    _check_same(f.lattice, g.lattice)
    w = _coulomb_weights(f.lattice)
    return complex(FOUR_PI * np.sum(w * f.values.conj() * g.values))


# mean-field potentials


def potential_symbol(rho: ChargeDensity, alpha: float) -> np.ndarray:
    """alpha (2pi)^-3/2 4pi rho(k)/|k|^2 on the difference lattice (zero at k = 0)."""
    lat = rho.lattice
    k2 = lat.diff_sq_norms
    out = np.zeros(lat.diff_count, dtype=complex)
    nz = k2 > 0
    out[nz] = alpha * FOURIER * FOUR_PI * rho.values[nz] / k2[nz]
    return out


def direct_potential(rho: ChargeDensity, alpha: float) -> KernelOperator:
    """Multiplication by alpha rho * 1/|x|, restricted to the cutoff space."""
    lat = rho.lattice
    m = lat.size
    scalar = potential_symbol(rho, alpha)[lat.pair_diff]
    data = np.zeros((m, 4, m, 4), dtype=complex)
    for a in range(4):
        data[:, a, :, a] = scalar
    sym_ok = rho.symmetry_error() <= 1e-14 * (1.0 + float(np.max(np.abs(rho.values), initial=0.0)))
    return KernelOperator(lat, data.reshape(4 * m, 4 * m), hermitian=sym_ok)


def _exchange_weights(lat: MomentumLattice) -> tuple:
    cache = getattr(lat, "_exchange_weights_cache", None)
    if cache is None:
        order, offsets, sq, sq_offsets = lat.diagonal_groups
        w = np.zeros(sq.shape, dtype=float)
        nz = sq > 0
        # (2pi)^-3 4pi / |k|^2 h^3 with |k|^2 = h^2 * sq
        w[nz] = (2.0 * np.pi) ** -3 * FOUR_PI * lat.h / sq[nz]
        cache = (order, offsets, w, sq_offsets)
        lat._exchange_weights_cache = cache
    return cache


def exchange_operator(q: KernelOperator, alpha: float, method: str = "diagonal") -> KernelOperator:
    """alpha Q(x, y)/|x - y| restricted to the cutoff space.

    ``method="diagonal"`` groups kernel entries by the difference d = p - q
    and convolves each group with the Coulomb weights over the centre
    variable (the hot path, compiled when available).  ``method="naive"``
    sums over every shift k directly and serves as the oracle.
    """
    if method == "naive":
        return _exchange_naive(q, alpha)
    if method != "diagonal":
        raise ValueError(f"unknown exchange method {method!r}")
    lat = q.lattice
    m = lat.size
    order, offsets, w, woffsets = _exchange_weights(lat)
    pairs = q.pair_blocks().reshape(m * m, 16)
    g = np.ascontiguousarray(pairs[order])
    acc = _backend.kernels.accumulate_diagonals(g, w, offsets, woffsets)
    out = np.empty_like(pairs)
    out[order] = acc
    out *= alpha
    return KernelOperator.from_pair_blocks(lat, out.reshape(m, m, 4, 4), hermitian=q.hermitian)


def _point_lookup(ints: np.ndarray, radius: int):
    """Dense integer grid -> ordinal lookup covering |coords| <= radius."""
    size = 2 * radius + 1
    grid = -np.ones((size, size, size), dtype=np.int64)
    shifted = ints + radius
    grid[shifted[:, 0], shifted[:, 1], shifted[:, 2]] = np.arange(len(ints))

    def lookup(query):
        query = np.asarray(query) + radius
        inside = np.all((query >= 0) & (query < size), axis=-1)
        res = -np.ones(query.shape[:-1], dtype=np.int64)
        qi = query[inside]
        res[inside] = grid[qi[:, 0], qi[:, 1], qi[:, 2]]
        return res

    return lookup


def _exchange_naive(q: KernelOperator, alpha: float) -> KernelOperator:
    lat = q.lattice
    m = lat.size
    radius = int(np.max(np.abs(lat.ints), initial=0))
    lookup = _point_lookup(lat.ints, radius)
    src = q.pair_blocks()
    out = np.zeros_like(src)
    pref = alpha * (2.0 * np.pi) ** -3 * FOUR_PI * lat.weight
    for k, k2 in zip(lat.diff_ints, lat.diff_sq_norms):
        if k2 == 0:
            continue
        shifted = lookup(lat.ints - k)
        valid = np.nonzero(shifted >= 0)[0]
        if len(valid) == 0:
            continue
        s = shifted[valid]
        out[np.ix_(valid, valid)] += (pref / k2) * src[np.ix_(s, s)]
    return KernelOperator.from_pair_blocks(lat, out, hermitian=q.hermitian)


# densities of commutators with unrestricted potentials


def _extended_points(lat: MomentumLattice):
    """Integer points within three cutoff radii: contains B + (B - B)."""
    r = int(np.max(np.abs(lat.ints), initial=0))
    rng = np.arange(-3 * r, 3 * r + 1)
    g = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    r2 = 9 * (lat.cutoff / lat.h) ** 2 * (1 + 1e-12)
    return g[np.sum(g * g, axis=1) <= r2], r


def _mode_sum(rows, cols, values, radius):
    """Accumulate values[i, j] by the mode rows[i] - cols[j]; returns a dense grid."""
    size = 2 * radius + 1
    d = rows[:, None, :] - cols[None, :, :] + radius
    flat = (d[..., 0] * size + d[..., 1]) * size + d[..., 2]
    n = size**3
    v = values.ravel()
    return np.bincount(flat.ravel(), weights=v.real, minlength=n) + 1j * np.bincount(
        flat.ravel(), weights=v.imag, minlength=n
    )


def potential_commutator_density(rho: ChargeDensity, q: KernelOperator, alpha: float) -> np.ndarray:
    """Density modes of [phi, Q] for phi = alpha rho * 1/|x| acting on all momenta.

    The multiplication operator is not restricted to the cutoff ball, so
    phi Q and Q phi have kernels reaching outside it; their densities
    coincide mode by mode.  Returns the difference on every mode of the
    extended difference grid.
    """
    _check_same(rho.lattice, q.lattice)
    lat = q.lattice
    ext, r = _extended_points(lat)
    dlook = _point_lookup(lat.diff_ints, 2 * r)
    sym = potential_symbol(rho, alpha)

    def phi(rows, cols):
        idx = dlook(rows[:, None, :] - cols[None, :, :])
        out = np.zeros(idx.shape, dtype=complex)
        ok = idx >= 0
        out[ok] = sym[idx[ok]]
        return out

    tq = block_traces(q)
    w = lat.weight
    left = (phi(ext, lat.ints) @ tq) * w
    right = (tq @ phi(lat.ints, ext)) * w
    modes = _mode_sum(ext, lat.ints, left, 4 * r) - _mode_sum(lat.ints, ext, right, 4 * r)
    return modes * FOURIER * w


def _exchange_block(q: KernelOperator, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """R(p, s) = (2pi)^-3 sum_j 4pi/|j|^2 Q(p - j, s - j) h^3 for arbitrary point sets."""
    lat = q.lattice
    r = int(np.max(np.abs(lat.ints), initial=0))
    inner = _point_lookup(lat.ints, r)
    src = q.pair_blocks()
    out = np.zeros((len(rows), len(cols), 4, 4), dtype=complex)
    pref = (2.0 * np.pi) ** -3 * FOUR_PI * lat.weight
    for j, j2 in zip(lat.diff_ints, lat.diff_sq_norms):
        if j2 == 0:
            continue
        rs = inner(rows - j)
        cs = inner(cols - j)
        ri = np.nonzero(rs >= 0)[0]
        ci = np.nonzero(cs >= 0)[0]
        if len(ri) == 0 or len(ci) == 0:
            continue
        out[np.ix_(ri, ci)] += (pref / j2) * src[np.ix_(rs[ri], cs[ci])]
    return out


def exchange_commutator_density(q: KernelOperator, alpha: float) -> np.ndarray:
    """Density modes of [R_Q, Q] with R_Q = alpha Q(x, y)/|x - y| acting on all momenta.

    Same convention as :func:`potential_commutator_density`.
    """
    lat = q.lattice
    ext, r = _extended_points(lat)
    qp = q.pair_blocks()
    m = lat.size
    w = lat.weight
    r_eb = _exchange_block(q, ext, lat.ints) * alpha
    r_be = _exchange_block(q, lat.ints, ext) * alpha
    # traces of products, contracting (s, b) for each spinor index a
    left = np.zeros((len(ext), m), dtype=complex)
    right = np.zeros((m, len(ext)), dtype=complex)
    for a in range(4):
        left += r_eb[:, :, a, :].reshape(len(ext), 4 * m) @ qp[:, :, :, a].transpose(0, 2, 1).reshape(4 * m, m)
        right += qp[:, :, a, :].reshape(m, 4 * m) @ r_be[:, :, :, a].transpose(0, 2, 1).reshape(4 * m, len(ext))
    modes = _mode_sum(ext, lat.ints, left * w, 4 * r) - _mode_sum(lat.ints, ext, right * w, 4 * r)
    return modes * FOURIER * w
