"""Time evolution i dP/dt = [D_Q, P] of the projector P = Q + P0."""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import Callable, Optional

import numpy as np

from .energy import ExternalSource, assemble, bdf_energy
from .kernels import (
    KernelOperator,
    commutator,
    coulomb_norm,
    density,
    free_vacuum,
    hs_norm,
    p0_trace,
)

logger = logging.getLogger(__name__)


class NumericalAbort(RuntimeError):
    """Raised when the state leaves the admissible set (idempotence or finiteness)."""


@dataclass
class EvolutionState:
    t: float
    P: KernelOperator
    Q: KernelOperator
    step_index: int = 0

    @classmethod
    def from_projector(cls, P: KernelOperator, t: float = 0.0, step_index: int = 0) -> "EvolutionState":
        q = P - free_vacuum(P.lattice)
        q.hermitian = P.hermitian
        return cls(float(t), P, q, int(step_index))

    @property
    def lattice(self):
        return self.P.lattice


@dataclass
class ObservableRecord:
    t: float
    charge: float
    energy: float
    hs_norm_Q: float
    coulomb_norm_rho_minus_n: float
    idempotence_residual: float
    commutator_norm: float

    def as_tuple(self):
        return tuple(getattr(self, f.name) for f in fields(self))


RECORD_FIELDS = tuple(f.name for f in fields(ObservableRecord))


def idempotence_residual(P: KernelOperator) -> float:
    m = P.matrix
    return float(np.linalg.norm(m @ m - m))


def observe(state: EvolutionState, src: ExternalSource) -> ObservableRecord:
    q = state.Q
    d = assemble(q, src).D
    return ObservableRecord(
        t=state.t,
        charge=p0_trace(q),
        energy=bdf_energy(q, src),
        hs_norm_Q=hs_norm(q),
        coulomb_norm_rho_minus_n=coulomb_norm(density(q) - src.n),
        idempotence_residual=idempotence_residual(state.P),
        commutator_norm=hs_norm(commutator(d, state.P)),
    )


def rhs(q: KernelOperator, src: ExternalSource) -> KernelOperator:
    """F(Q) = [D_Q, Q] + [V_Q, P0], so that i dQ/dt = F(Q).

    Equal to [D_Q, Q + P0] because D0 commutes with P0; anti-Hermitian.
    """
    mf = assemble(q, src)
    return commutator(mf.D, q) + commutator(mf.V, free_vacuum(q.lattice))


def hermitian_eigensystem(D: KernelOperator):
    """Eigenvalues and eigenvectors of the Hermitian matrix form of ``D``.

    A generator with no off-diagonal momentum blocks (a translation-invariant
    mean field) is diagonalized block by block, which keeps its eigenvectors
    exactly block-diagonal.
    """
    m = D.matrix
    asym = np.linalg.norm(m - m.conj().T)
    if not np.isfinite(asym) or asym > 1e-8 * (1.0 + np.linalg.norm(m)):
        raise NumericalAbort(f"mean-field operator is not Hermitian (||D - D^*|| = {asym:.3e})")
    m = 0.5 * (m + m.conj().T)
    size = D.lattice.size
    blocks = m.reshape(size, 4, size, 4)
    diag = np.einsum("iaib->iab", blocks)
    try:
        if np.count_nonzero(blocks) == np.count_nonzero(diag):
            wb, vb = np.linalg.eigh(diag)
            v = np.zeros((size, 4, size, 4), dtype=complex)
            idx = np.arange(size)
            v[idx, :, idx, :] = vb
            return wb.reshape(-1), v.reshape(4 * size, 4 * size)
        return np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalAbort(f"eigendecomposition failed: {exc}") from exc


def propagator(D: KernelOperator, dt: float) -> np.ndarray:
    """exp(-i dt D) in matrix form, from a Hermitian eigendecomposition."""
    w, v = hermitian_eigensystem(D)
    return (v * np.exp(-1j * dt * w)) @ v.conj().T


def conjugate_step(D: KernelOperator, dt: float, P: KernelOperator) -> KernelOperator:
    """exp(-i dt D) P exp(i dt D), applied as an increment in the eigenbasis of D.

    With D = V diag(w) V*, the result is P + V (F o V*PV) V* where
    F_ij = exp(-i dt (w_i - w_j)) - 1.  Entries between degenerate levels get
    an exact zero increment, so a stationary state does not pick up the
    systematic drift that repeated multiplication by a rounded unitary causes.
    """
    w, v = hermitian_eigensystem(D)
    half = 0.5 * dt * (w[:, None] - w[None, :])
    f = -2j * np.sin(half) * np.exp(-1j * half)
    pt = v.conj().T @ P.matrix @ v
    m = P.matrix + v @ (f * pt) @ v.conj().T
    return KernelOperator.from_matrix(P.lattice, 0.5 * (m + m.conj().T), hermitian=True)


def step_unitary(state: EvolutionState, dt: float, src: ExternalSource) -> EvolutionState:
    """Predictor-corrector conjugation step, second order.

    The half-step projector built from D at time t supplies the midpoint
    mean field; the full step conjugates P(t) by exp(-i dt D_mid).
    """
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    d1 = assemble(state.Q, src).D
    half = EvolutionState.from_projector(conjugate_step(d1, 0.5 * dt, state.P))
    d2 = assemble(half.Q, src).D
    p_new = conjugate_step(d2, dt, state.P)
    return EvolutionState.from_projector(p_new, state.t + dt, state.step_index + 1)


def step_rk4(state: EvolutionState, dt: float, src: ExternalSource) -> EvolutionState:
    """Classical Runge-Kutta step on dQ/dt = -i F(Q).  Does not keep P idempotent."""
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    q = state.Q

    def f(x):
        return rhs(x, src) * (-1j)

    k1 = f(q)
    k2 = f(q + k1 * (0.5 * dt))
    k3 = f(q + k2 * (0.5 * dt))
    k4 = f(q + k3 * dt)
    q_new = q + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
    data = 0.5 * (q_new.data + q_new.data.conj().T)
    q_new = KernelOperator(q.lattice, data, hermitian=True)
    p_new = q_new + free_vacuum(q.lattice)
    p_new.hermitian = True
    return EvolutionState(state.t + dt, p_new, q_new, state.step_index + 1)


INTEGRATORS = {"unitary": step_unitary, "rk4": step_rk4}


def positive_free_orbitals(lattice) -> np.ndarray:
    """Positive-energy eigenvectors of D0 in matrix form, sorted by energy.

    Ties are broken by lattice ordinal, then by the eigenvector order LAPACK
    returns for the 4x4 block, so the choice is deterministic.
    """
    m = lattice.size
    vecs, keys = [], []
    for i in range(m):
        w, v = np.linalg.eigh(lattice.dirac_blocks[i])
        for c in (2, 3):
            psi = np.zeros(4 * m, dtype=complex)
            psi[4 * i : 4 * i + 4] = v[:, c]
            vecs.append(psi)
            keys.append((round(float(w[c]), 12), i, c))
    order = sorted(range(len(keys)), key=keys.__getitem__)
    return np.array([vecs[j] for j in order]).T


def build_initial_state(N: int, src: ExternalSource, mode: str = "free_orbitals", scf_settings=None) -> EvolutionState:
    """P_I = (reference sea) + sum of N positive-energy orbital projectors.

    ``free_orbitals``: sea P0, orbitals of D0.  ``scf_orbitals``: sea is the
    self-consistent vacuum of ``src``, orbitals are the lowest positive
    eigenvectors of its mean-field operator.
    """
    lat = src.lattice
    if N < 0:
        raise ValueError(f"electron number must be >= 0, got {N}")
    if N > 2 * lat.size:
        raise ValueError(f"N = {N} exceeds the {2 * lat.size} positive-energy states of the lattice")
    if mode == "free_orbitals":
        base = free_vacuum(lat).matrix
        orbitals = positive_free_orbitals(lat)[:, :N]
    elif mode == "scf_orbitals":
        from .scf import ScfSettings, scf_solve

        res = scf_solve(src, scf_settings or ScfSettings())
        base = res.P.matrix
        w, v = np.linalg.eigh(res.D.matrix)
        pos = np.nonzero(w > res.lam)[0]
        if N > len(pos):
            raise ValueError(f"N = {N} exceeds the available positive-energy mean-field states")
        orbitals = v[:, pos[:N]]
    else:
        raise ValueError(f"unknown initial-state mode {mode!r}")
    p = base + orbitals @ orbitals.conj().T
    p = 0.5 * (p + p.conj().T)
    return EvolutionState.from_projector(KernelOperator.from_matrix(lat, p, hermitian=True))


def run(
    state0: EvolutionState,
    dt: float,
    n_steps: int,
    src: ExternalSource,
    integrator: str = "unitary",
    sink: Optional[Callable[[ObservableRecord], None]] = None,
    record_interval: int = 1,
    idempotence_hard_limit: float = 1e-6,
    emit_initial: bool = True,
    on_step: Optional[Callable[[EvolutionState], None]] = None,
) -> EvolutionState:
    """Advance ``n_steps`` fixed steps.

    A record is emitted whenever the absolute step index is a multiple of
    ``record_interval`` (the starting state included when ``emit_initial``),
    so a resumed run lines up with an uninterrupted one.
    """
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    if record_interval < 1:
        raise ValueError(f"record_interval must be >= 1, got {record_interval}")
    step = INTEGRATORS[integrator]
    state = state0
    t0, k0 = state0.t, state0.step_index
    # a state on the k * dt grid keeps t = k * dt, so a resumed run reproduces
    # the clock of the uninterrupted one bit for bit
    on_grid = abs(t0 - k0 * dt) <= 4 * np.finfo(float).eps * max(1.0, abs(t0))
    if sink is not None and emit_initial and state.step_index % record_interval == 0:
        sink(observe(state, src))
    for n in range(1, n_steps + 1):
        state = step(state, dt, src)
        # fixed-step clock, no running sum
        state.t = (k0 + n) * dt if on_grid else t0 + n * dt
        state.step_index = k0 + n
        resid = idempotence_residual(state.P)
        logger.debug("step %d: idempotence residual %.3e", state.step_index, resid)
        if not np.isfinite(resid) or resid > idempotence_hard_limit:
            raise NumericalAbort(f"idempotence residual {resid:.3e} exceeds hard limit at step {state.step_index}")
        if sink is not None and state.step_index % record_interval == 0:
            sink(observe(state, src))
        if on_step is not None:
            on_step(state)
    return state
