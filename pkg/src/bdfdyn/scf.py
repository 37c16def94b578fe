"""Self-consistent stationary states P = chi_(-inf, lam)(D_Q)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import hermitian_eigensystem
from .energy import ExternalSource, assemble, bdf_energy
from .kernels import KernelOperator, commutator, free_vacuum, hs_norm, p0_trace

logger = logging.getLogger(__name__)


class SpectralGapError(ValueError):
    """The Fermi level sits on (or too close to) an eigenvalue."""

    def __init__(self, lam, eigenvalue, gap_tol):
        super().__init__(
            f"ambiguous filling: eigenvalue {eigenvalue:.15g} lies within {gap_tol:.3e} of lambda = {lam:.15g}"
        )
        self.lam = lam
        self.eigenvalue = eigenvalue


class ChargeTargetError(ValueError):
    pass


@dataclass
class ScfSettings:
    max_iter: int = 200
    tol: float = 1e-12
    damping: float = 1.0
    lam: float = 0.0
    N: Optional[int] = None
    gap_tol: Optional[float] = None
    commutator_tol: float = 1e-9

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass
class ScfResult:
    P: KernelOperator
    D: KernelOperator
    iterations: int
    residual: float
    commutator_norm: float
    energy: float
    charge: float
    gap: float
    lam: float
    converged: bool
    gamma_rank: int = 0
    charges: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
            "commutator_norm": self.commutator_norm,
            "energy": self.energy,
            "charge": self.charge,
            "gap": self.gap,
            "lambda": float(self.lam),
            "gamma_rank": self.gamma_rank,
            "charges": list(self.charges),
        }


def default_gap_tol(lattice) -> float:
    return 1e-10 * float(np.sqrt(1.0 + lattice.cutoff**2))


def _eigh(D: KernelOperator):
    """Ascending eigenpairs; block-diagonal operators are solved per momentum."""
    w, v = hermitian_eigensystem(D)
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _projector(lattice, v, occupied) -> KernelOperator:
    vo = v[:, occupied]
    p = vo @ vo.conj().T
    return KernelOperator.from_matrix(lattice, 0.5 * (p + p.conj().T), hermitian=True)


def _check_gap(w, lam, gap_tol):
    i = int(np.argmin(np.abs(w - lam)))
    gap = float(abs(w[i] - lam))
    if gap < gap_tol:
        raise SpectralGapError(lam, float(w[i]), gap_tol)
    return gap


def spectral_projector(D: KernelOperator, lam: float, gap_tol: Optional[float] = None) -> KernelOperator:
    """chi_(-inf, lam)(D) for Hermitian D."""
    gap_tol = default_gap_tol(D.lattice) if gap_tol is None else gap_tol
    w, v = _eigh(D)
    _check_gap(w, lam, gap_tol)
    return _projector(D.lattice, v, w < lam)


def _finish(src, P, lam, iterations, residual, converged, charges, gap_tol) -> ScfResult:
    lat = src.lattice
    q = P - free_vacuum(lat)
    q.hermitian = True
    d = assemble(q, src).D
    w, _ = _eigh(d)
    gap = float(np.min(np.abs(w - lam)))
    comm = hs_norm(commutator(d, P))
    return ScfResult(
        P=P,
        D=d,
        iterations=iterations,
        residual=residual,
        commutator_norm=comm,
        energy=bdf_energy(q, src),
        charge=p0_trace(q),
        gap=gap,
        lam=lam,
        converged=converged,
        gamma_rank=int(np.count_nonzero((w >= 0) & (w < lam))),
        charges=charges,
    )


def _iterate(src, settings, P_start, fill, gap_each_iterate=True):
    """Damped fixed-point loop; ``fill(w)`` returns (occupied mask, lambda)."""
    lat = src.lattice
    p0 = free_vacuum(lat)
    gap_tol = default_gap_tol(lat) if settings.gap_tol is None else settings.gap_tol
    P = P_start if P_start is not None else p0
    q_in = P - p0
    best = (np.inf, P, settings.lam)
    charges = []
    lam = settings.lam
    residual = np.inf
    for it in range(1, settings.max_iter + 1):
        w, v = _eigh(assemble(q_in, src).D)
        occupied, lam = fill(w)
        if gap_each_iterate:
            _check_gap(w, lam, gap_tol)
        p_new = _projector(lat, v, occupied)
        charges.append(p0_trace(p_new - p0))
        residual = hs_norm(p_new - P)
        P = p_new
        logger.debug("scf iteration %d: residual %.3e charge %.12f", it, residual, charges[-1])
        if residual < best[0]:
            best = (residual, P, lam)
        if residual <= settings.tol:
            return _finish(src, P, lam, it, residual, True, charges, gap_tol)
        q_in = (P - p0) * settings.damping + q_in * (1.0 - settings.damping)
    logger.warning("scf did not converge in %d iterations (residual %.3e)", settings.max_iter, residual)
    residual, P, lam = best
    return _finish(src, P, lam, settings.max_iter, residual, False, charges, gap_tol)


def scf_solve(src: ExternalSource, settings: ScfSettings = None, P_start: Optional[KernelOperator] = None) -> ScfResult:
    """Iterate P_{n+1} = chi_(-inf, lam)(D_{Q_in}) with linear mixing of the Q inputs.

    Non-convergence is reported through ``converged=False`` with the
    iterate of smallest residual, not raised.
    """
    settings = settings or ScfSettings()
    lam = settings.lam
    return _iterate(src, settings, P_start, lambda w: (w < lam, lam))


def charge_target_solve(src: ExternalSource, N: int, settings: ScfSettings = None) -> ScfResult:
    """Stationary state of total charge N.

    Each iteration fills the lowest rank(P0) + N mean-field levels and sets
    lambda to the middle of the gap above the last filled level, which is
    the only lambda giving charge N for that operator.  At convergence the
    result equals chi_(-inf, lambda)(D_Q) for the reported lambda.

    Intermediate operators may have the Fermi level inside a degenerate
    pair (an odd N in a Kramers-degenerate field); the fill then follows
    the eigensolver's order and only the converged operator must have a gap
    of at least ``gap_tol`` at lambda.
    """
    if N < 0:
        raise ChargeTargetError(f"target charge must be >= 0, got {N}")
    settings = settings or ScfSettings()
    lat = src.lattice
    n_fill = 2 * lat.size + N
    if n_fill >= 4 * lat.size:
        raise ChargeTargetError(f"charge {N} needs more than the {2 * lat.size} positive-energy states on the lattice")

    def fill(w):
        mask = np.zeros(len(w), dtype=bool)
        mask[:n_fill] = True
        return mask, 0.5 * (w[n_fill - 1] + w[n_fill])

    gap_tol = default_gap_tol(lat) if settings.gap_tol is None else settings.gap_tol
    res = _iterate(src, settings, None, fill, gap_each_iterate=False)
    if res.gap < gap_tol:
        raise ChargeTargetError(
            f"no lambda gives charge {N}: the mean-field gap at lambda = {res.lam:.15g} is {res.gap:.3e} < {gap_tol:.3e}"
        )
    if round(res.charge) != N:
        raise ChargeTargetError(f"converged to charge {res.charge:.6f}, not {N}")
    return res
