"""Mean-field operator D_Q and the Bogoliubov-Dirac-Fock energy."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .kernels import (
    FOURIER,
    ChargeDensity,
    KernelOperator,
    LatticeMismatch,
    coulomb_norm,
    coulomb_pairing,
    density,
    direct_potential,
    exchange_operator,
    free_dirac,
    hs_inner,
    hs_norm,
    p0_blocks,
    p0_trace_product,
)
from .lattice import MomentumLattice

logger = logging.getLogger(__name__)

CRITICAL_COUPLING = 4.0 / np.pi


@dataclass
class ExternalSource:
    """Fixed external charge density ``n`` with coupling ``alpha`` and total charge ``Z``."""

    n: ChargeDensity
    alpha: float
    Z: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"coupling alpha must be >= 0, got {self.alpha}")
        if self.alpha >= CRITICAL_COUPLING:
            warnings.warn(
                f"alpha = {self.alpha} >= 4/pi: the energy is no longer coercive, global bounds do not apply",
                RuntimeWarning,
                stacklevel=2,
            )

    @property
    def lattice(self) -> MomentumLattice:
        return self.n.lattice


def build_gaussian_source(Z: float, width: float, alpha: float, lattice: MomentumLattice) -> ExternalSource:
    """Smeared nucleus: n^(k) = Z (2pi)^-3/2 exp(-width^2 |k|^2 / 2)."""
    if not width > 0:
        raise ValueError(f"source width must be positive, got {width}")
    vals = Z * FOURIER * np.exp(-0.5 * width**2 * lattice.diff_sq_norms)
    return ExternalSource(ChargeDensity(lattice, vals.astype(complex)), alpha, Z)


def no_source(lattice: MomentumLattice, alpha: float) -> ExternalSource:
    return ExternalSource(ChargeDensity.zeros(lattice), alpha, 0.0)


@dataclass
class MeanFieldOperator:
    D: KernelOperator
    V: KernelOperator


def _check_lattice(q: KernelOperator, src: ExternalSource):
    if not q.lattice.same_as(src.lattice):
        raise LatticeMismatch(f"state lattice {q.lattice!r} does not match source lattice {src.lattice!r}")


def potential(q: KernelOperator, src: ExternalSource, exchange_sign: float = 1.0) -> KernelOperator:
    """V_Q = alpha (rho_Q - n) * 1/|x| - alpha Q(x, y)/|x - y|.

    ``exchange_sign`` exists for mutation tests only.
    """
    _check_lattice(q, src)
    rho = density(q) - src.n
    v = direct_potential(rho, src.alpha) - exchange_sign * exchange_operator(q, src.alpha)
    # both pieces are Hermitian in exact arithmetic; symmetrize away round-off
    data = 0.5 * (v.data + v.data.conj().T)
    return KernelOperator(q.lattice, data, hermitian=True)


def assemble(q: KernelOperator, src: ExternalSource) -> MeanFieldOperator:
    v = potential(q, src)
    d = free_dirac(q.lattice) + v
    d.hermitian = True
    return MeanFieldOperator(d, v)


@dataclass
class EnergyTerms:
    kinetic: float
    external: float
    direct: float
    exchange: float
    imaginary: float

    @property
    def total(self) -> float:
        return self.kinetic + self.external + self.direct + self.exchange


def energy_terms(q: KernelOperator, src: ExternalSource) -> EnergyTerms:
    """Individual contributions to the BDF energy.

    ``imaginary`` is the largest imaginary part that was discarded, a
    round-off diagnostic.
    """
    _check_lattice(q, src)
    a = src.alpha
    rho = density(q)
    kinetic = p0_trace_product(free_dirac(q.lattice), q)
    ext = -a * coulomb_pairing(rho, src.n)
    direct = 0.5 * a * coulomb_pairing(rho, rho)
    exch = -0.5 * a * hs_inner(q, exchange_operator(q, 1.0))
    imag = max(abs(ext.imag), abs(direct.imag), abs(exch.imag))
    return EnergyTerms(kinetic, ext.real, direct.real, exch.real, imag)


def bdf_energy(q: KernelOperator, src: ExternalSource) -> float:
    """E(Q) = tr_P0(D0 Q) - alpha D(rho_Q, n) + alpha/2 D(rho_Q, rho_Q) - alpha/2 tr(Q R_Q)."""
    return energy_terms(q, src).total


def energy_gradient(q: KernelOperator, src: ExternalSource, direction: KernelOperator) -> float:
    """Directional derivative of the energy: tr_P0(D_Q h)."""
    return p0_trace_product(assemble(q, src).D, direction)


@dataclass
class CoercivityReport:
    lhs: float
    rhs: float
    slack: float
    hs_norm_sq: float
    kinetic: float
    projector_residual: float

    def as_dict(self):
        return dict(self.__dict__)


def coercivity_report(q: KernelOperator, src: ExternalSource) -> CoercivityReport:
    """Both sides of the coercivity bound, with D(rho, rho) = 4pi ||rho||_C^2.

    lhs = E(Q) + alpha/2 D(n, n),
    rhs = (1 - alpha pi/4) tr_P0(D0 Q) + alpha/2 D(rho_Q - n, rho_Q - n).
    The projector property of ``Q + P0`` is measured through the residual of
    Q^2 = Q^{++} - Q^{--}; a negative slack is logged, not raised.
    """
    a = src.alpha
    e = bdf_energy(q, src)
    kinetic = p0_trace_product(free_dirac(q.lattice), q)
    n_c = coulomb_norm(src.n)
    rho_minus_n = coulomb_norm(density(q) - src.n)
    lhs = e + 0.5 * a * 4.0 * np.pi * n_c**2
    rhs = (1.0 - a * np.pi / 4.0) * kinetic + 0.5 * a * 4.0 * np.pi * rho_minus_n**2
    pp, mm, _, _ = p0_blocks(q)
    resid = hs_norm((q @ q) - (pp - mm))
    slack = lhs - rhs
    if slack < -1e-9 * abs(lhs):
        logger.warning("coercivity slack %.3e is negative (lhs %.6e, rhs %.6e)", slack, lhs, rhs)
    return CoercivityReport(lhs, rhs, slack, hs_norm(q) ** 2, kinetic, resid)
