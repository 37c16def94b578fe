"""Built-in invariant checks, run by ``bdfdyn selftest``.

Every check measures a residual and compares it with a fixed threshold on
a small lattice (h = 1, cutoff 1.5 unless a configuration says otherwise).
The random samplers here are shared with the test suite.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import EvolutionState, build_initial_state, run
from .energy import ExternalSource, bdf_energy, build_gaussian_source, energy_gradient, energy_terms, no_source
from .io import read_snapshot, write_snapshot
from .kernels import (
    ChargeDensity,
    KernelOperator,
    abs_free_dirac,
    commutator,
    coulomb_norm,
    coulomb_pairing,
    density,
    direct_potential,
    exchange_commutator_density,
    exchange_operator,
    free_dirac,
    free_vacuum,
    hs_norm,
    p0_blocks,
    p0_trace,
    p0_trace_product,
    potential_commutator_density,
    trace,
)
from .lattice import ALPHA, BETA, MomentumLattice, build_lattice, pineq_ratios
from .scf import ScfSettings, scf_solve, spectral_projector

DEFAULT_SEED = 20260417


# samplers


def random_hermitian(lattice: MomentumLattice, rng: np.random.Generator, scale: float = 1.0) -> KernelOperator:
    """Hermitian kernel whose matrix form has complex Gaussian entries of size ``scale``."""
    n = 4 * lattice.size
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return KernelOperator.from_matrix(lattice, scale * 0.5 * (a + a.conj().T), hermitian=True)


def random_density(lattice: MomentumLattice, rng: np.random.Generator) -> ChargeDensity:
    """Density with rho(-k) = conj(rho(k))."""
    v = rng.standard_normal(lattice.diff_count) + 1j * rng.standard_normal(lattice.diff_count)
    return ChargeDensity(lattice, 0.5 * (v + v[lattice.diff_negation].conj()))


def unitary_from(h: KernelOperator, eps: float) -> np.ndarray:
    w, v = np.linalg.eigh(h.matrix)
    return (v * np.exp(1j * eps * w)) @ v.conj().T


def perturbed_vacuum(lattice: MomentumLattice, rng: np.random.Generator, eps: float = 0.3) -> KernelOperator:
    """U P0 U* with U = exp(i eps H) for a random Hermitian H of unit operator norm."""
    h = random_hermitian(lattice, rng)
    h = h * (1.0 / np.max(np.abs(np.linalg.eigvalsh(h.matrix))))
    u = unitary_from(h, eps)
    m = u @ free_vacuum(lattice).matrix @ u.conj().T
    return KernelOperator.from_matrix(lattice, 0.5 * (m + m.conj().T), hermitian=True)


# report


@dataclass
class Check:
    name: str
    residual: float
    threshold: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.residual = float(self.residual)
        self.passed = bool(np.isfinite(self.residual) and self.residual <= self.threshold)


@dataclass
class SelftestReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name) -> Check:
        return next(c for c in self.checks if c.name == name)

    def format(self) -> str:
        lines = [
            f"{'PASS' if c.passed else 'FAIL'}  {c.name:<32s} residual {c.residual:.3e}  threshold {c.threshold:.1e}"
            for c in self.checks
        ]
        lines.append(f"{sum(c.passed for c in self.checks)}/{len(self.checks)} checks passed")
        return "\n".join(lines)

    def as_dict(self):
        return {"passed": self.passed, "checks": [asdict(c) for c in self.checks]}


# individual checks


def _spinor_checks(lat):
    mats = list(ALPHA) + [BETA]
    worst = 0.0
    for i, a in enumerate(mats):
        for j, b in enumerate(mats):
            target = 2.0 * np.eye(4) if i == j else 0.0
            worst = max(worst, np.abs(a @ b + b @ a - target).max())
    p0 = lat.vacuum_blocks
    d0 = lat.dirac_blocks
    idem = np.abs(p0 @ p0 - p0).max()
    comm = np.abs(d0 @ p0 - p0 @ d0).max()
    return [
        Check("dirac_anticommutation", worst, 1e-15),
        Check("free_projector_idempotence", idem, 1e-14),
        Check("free_projector_commutation", comm, 1e-14),
        Check("pineq_max_ratio", pineq_ratios(lat).max(), 1.0 + 1e-12),
    ]


def _kernel_checks(lat, rng, alpha):
    q = random_hermitian(lat, rng)
    rho = random_density(lat, rng)
    phi_q = np.abs(potential_commutator_density(rho, q, alpha)).max()
    phi_p0 = np.abs(density(commutator(direct_potential(rho, alpha), free_vacuum(lat))).values).max()
    r_q = np.abs(exchange_commutator_density(q, alpha)).max()
    naive = exchange_operator(q, 1.0, method="naive")
    fast = exchange_operator(q, 1.0)
    exch = hs_norm(naive - fast) / hs_norm(naive)
    pairing = abs(coulomb_pairing(rho, rho) - 4 * np.pi * coulomb_norm(rho) ** 2) / (4 * np.pi * coulomb_norm(rho) ** 2)

    P = perturbed_vacuum(lat, rng)
    Q = P - free_vacuum(lat)
    pp, mm, _, _ = p0_blocks(Q)
    blocks = hs_norm(Q @ Q - (pp - mm))
    kin = p0_trace_product(free_dirac(lat), Q)
    abs_kin = trace(abs_free_dirac(lat) @ Q @ Q).real
    charge = p0_trace(Q)
    cube = trace(Q @ Q @ Q).real
    return [
        Check("density_commutator_phi_Q", phi_q, 1e-12),
        Check("density_commutator_phi_P0", phi_p0, 1e-12),
        Check("density_commutator_R_Q", r_q, 1e-12),
        Check("exchange_paths", exch, 1e-12),
        Check("coulomb_pairing_norm", pairing, 1e-12),
        Check("blocks_identity", blocks, 1e-10),
        Check("kinetic_abs_identity", abs(kin - abs_kin) / abs(abs_kin), 1e-9),
        Check("kinetic_hs_bound", max(hs_norm(Q) ** 2 - abs_kin, 0.0), 0.0),
        Check("charge_integer", abs(charge - round(charge)), 1e-8),
        Check("charge_cubic_trace", abs(charge - cube), 1e-8),
    ]


def _energy_checks(lat, rng, src):
    P = perturbed_vacuum(lat, rng, 0.2)
    q = P - free_vacuum(lat)
    eps = 1e-4
    worst = 0.0
    for _ in range(3):
        h = random_hermitian(lat, rng)
        h = h * (1.0 / hs_norm(h))
        fd = (bdf_energy(q + h * eps, src) - bdf_energy(q - h * eps, src)) / (2 * eps)
        g = energy_gradient(q, src, h)
        worst = max(worst, abs(fd - g) / (1.0 + abs(g)))
    terms = energy_terms(q, src)
    scale = max(abs(terms.kinetic), abs(terms.external), abs(terms.direct), abs(terms.exchange), 1.0)

    # alpha = 0, n = 0: invariance under a unitary commuting with D0 and P0
    free = no_source(lat, 0.0)
    w, v = np.linalg.eigh(free_dirac(lat).matrix)
    u = (v * np.exp(-0.7j * w)) @ v.conj().T
    moved = KernelOperator.from_matrix(lat, u @ P.matrix @ u.conj().T) - free_vacuum(lat)
    e0 = bdf_energy(q, free)
    gauge = abs(bdf_energy(moved, free) - e0) / (1.0 + abs(e0))
    return [
        Check("energy_gradient", worst, 1e-6),
        Check("energy_terms_real", terms.imaginary / scale, 1e-12),
        Check("free_energy_invariance", gauge, 1e-12),
    ]


def energy_conservation_check(src: ExternalSource, dt: float = 0.02, n_steps: int = 50) -> list:
    """Short N=1 run: charge, idempotence and energy drift residuals."""
    records = []
    run(build_initial_state(1, src), dt, n_steps, src, sink=records.append)
    e = np.array([r.energy for r in records])
    c = np.array([r.charge for r in records])
    idem = max(r.idempotence_residual for r in records)
    drift = np.abs(e - e[0]).max() / (1.0 + abs(e[0]))
    return [
        Check("charge_conservation", np.abs(c - 1.0).max(), 1e-8),
        Check("idempotence_preservation", idem, 1e-10),
        Check("energy_conservation", drift, 1e-8),
    ]


def _stationarity_checks(lat, src, tmpdir):
    vac = no_source(lat, src.alpha)
    records = []
    run(EvolutionState.from_projector(free_vacuum(lat)), 0.05, 20, vac, sink=records.append)
    vac_worst = max(max(abs(x) for x in r.as_tuple()[1:]) for r in records)

    res = scf_solve(src, ScfSettings(tol=1e-13))
    fixed = hs_norm(spectral_projector(res.D, res.lam) - res.P)

    state = build_initial_state(1, src)
    path = os.path.join(tmpdir, "selftest.bdfk")
    write_snapshot(state, path)
    back = read_snapshot(path, lat)
    same = 0.0 if np.array_equal(back.P.data, state.P.data) else 1.0
    return [
        Check("free_vacuum_stationarity", vac_worst, 1e-12),
        Check("scf_commutator", res.commutator_norm, 1e-9),
        Check("scf_fixed_point", fixed, 1e-9),
        Check("scf_charge_integer", abs(res.charge - round(res.charge)), 1e-8),
        Check("snapshot_roundtrip", same, 0.0),
    ]


def run_selftest(config=None, seed: int = DEFAULT_SEED) -> SelftestReport:
    """Run every check; a configuration, when given, supplies lattice and source."""
    if config is not None:
        lat = build_lattice(config.lattice.h, config.lattice.cutoff)
        Z, width, alpha = config.source.Z, config.source.width, config.source.alpha
    else:
        lat = build_lattice(1.0, 1.5)
        Z, width, alpha = 1.0, 1.0, 0.05
    src = build_gaussian_source(Z, width, alpha, lat)
    rng = np.random.default_rng(seed)
    checks = _spinor_checks(lat)
    checks += _kernel_checks(lat, rng, alpha)
    checks += _energy_checks(lat, rng, src)
    checks += energy_conservation_check(src)
    with tempfile.TemporaryDirectory() as tmpdir:
        checks += _stationarity_checks(lat, src, tmpdir)
    return SelftestReport(checks)
