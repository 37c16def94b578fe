"""Acceptance criteria on the h = 0.5, cutoff 1.5 lattice (M = 123, dimension 492).

Each test records one PASS/FAIL line through the ``criterion`` fixture
before asserting; the lines are repeated in the terminal summary.
"""
import numpy as np
import pytest

from bdfdyn.dynamics import EvolutionState, build_initial_state, idempotence_residual, run
from bdfdyn.energy import bdf_energy, build_gaussian_source, energy_gradient, no_source
from bdfdyn.io import read_snapshot, write_snapshot
from bdfdyn.kernels import (
    KernelOperator,
    abs_free_dirac,
    commutator,
    coulomb_norm,
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
from bdfdyn.lattice import build_lattice, pineq_ratios
from bdfdyn.scf import ScfSettings, scf_solve
from bdfdyn.selftest import perturbed_vacuum, random_density, random_hermitian

pytestmark = pytest.mark.slow

H, CUTOFF = 0.5, 1.5
Z, WIDTH, ALPHA = 1.0, 1.0, 0.05
HORIZON = 5.0


@pytest.fixture(scope="module")
def lat():
    lattice = build_lattice(H, CUTOFF)
    assert lattice.size == 123
    return lattice


@pytest.fixture(scope="module")
def src(lat):
    return build_gaussian_source(Z, WIDTH, ALPHA, lat)


def charged_run(src, dt, per_step=False):
    """N = 1 free-orbital run to t = 5; optional per-step idempotence and tr(Q^3)."""
    records, steps = [], []

    def on_step(state):
        p = state.P.matrix
        q = state.Q
        qq = q @ q
        steps.append(
            (
                float(np.linalg.norm(p @ p - p)),
                float(np.sum(qq.data * q.data.T).real) * q.lattice.weight**2,
                p0_trace(q),
                q.hermiticity_error(),
            )
        )

    s0 = build_initial_state(1, src)
    if per_step:
        on_step(s0)
    run(s0, dt, int(round(HORIZON / dt)), src, sink=records.append, record_interval=5,
        on_step=on_step if per_step else None)
    return records, np.array(steps)


@pytest.fixture(scope="module")
def run_coarse(src):
    return charged_run(src, 0.02)


@pytest.fixture(scope="module")
def run_fine(src):
    return charged_run(src, 0.01, per_step=True)


def test_c01_free_vacuum_stationarity(lat, criterion):
    records = []
    run(EvolutionState.from_projector(free_vacuum(lat)), 0.05, 1000, no_source(lat, 0.1), sink=records.append)
    worst = max(max(abs(x) for x in r.as_tuple()[1:]) for r in records)
    ok = criterion(1, "free-vacuum stationarity", worst <= 1e-12 and len(records) == 1001,
                   f"max |observable| over 1001 records = {worst:.2e} (limit 1e-12)")
    assert ok


def test_c02_charge_conservation(run_fine, criterion):
    records, steps = run_fine
    dev = max(abs(r.charge - 1.0) for r in records)
    cubic = np.abs(steps[:, 1] - steps[:, 2]).max()
    ok = criterion(2, "charge conservation", dev <= 1e-8 and cubic <= 1e-8,
                   f"max |charge - 1| = {dev:.2e}, max |tr Q^3 - charge| = {cubic:.2e} (limits 1e-8)")
    assert ok


def test_c03_energy_conservation_order(run_coarse, run_fine, criterion):
    e_c = np.array([r.energy for r in run_coarse[0]])
    e_f = np.array([r.energy for r in run_fine[0]])
    drift_c = np.abs(e_c - e_c[0]).max()
    drift_f = np.abs(e_f - e_f[0]).max()
    ratio = drift_c / drift_f
    bound = 1e-6 * (1 + abs(e_c[0]))
    ok = criterion(3, "energy conservation and order", 3.5 <= ratio <= 4.5 and drift_c <= bound,
                   f"drift(0.02) = {drift_c:.3e}, drift(0.01) = {drift_f:.3e}, ratio {ratio:.3f} "
                   f"(window [3.5, 4.5]), bound {bound:.1e}")
    assert ok


def test_c04_idempotence(run_fine, criterion):
    _, steps = run_fine
    worst = steps[:, 0].max()
    herm = steps[:, 3].max()
    ok = criterion(4, "idempotence preservation", worst <= 1e-10 and len(steps) == 501,
                   f"max ||P^2 - P|| over {len(steps)} steps = {worst:.2e} (limit 1e-10); "
                   f"max ||Q - Q*|| = {herm:.1e}")
    assert ok


def test_c05_vanishing_densities(lat, criterion):
    rng = np.random.default_rng(5)
    worst = np.zeros(3)
    scale = 0.0
    for _ in range(50):
        q = random_hermitian(lat, rng)
        rho = random_density(lat, rng)
        phi = direct_potential(rho, ALPHA)
        worst[0] = max(worst[0], np.abs(potential_commutator_density(rho, q, ALPHA)).max())
        worst[1] = max(worst[1], np.abs(density(commutator(phi, free_vacuum(lat))).values).max())
        worst[2] = max(worst[2], np.abs(exchange_commutator_density(q, ALPHA)).max())
        scale = max(scale, np.abs(density(phi @ q).values).max())
    ok = criterion(5, "vanishing-density identities", worst.max() <= 1e-12,
                   f"max mode of rho[phi,Q] {worst[0]:.1e}, rho[phi,P0] {worst[1]:.1e}, rho[R_Q,Q] {worst[2]:.1e} "
                   f"(limit 1e-12; uncancelled rho(phi Q) reaches {scale:.1e})")
    assert ok


def test_c06_pineq_sweep(lat, criterion):
    r = pineq_ratios(lat)
    ok = criterion(6, "Pineq sweep", r.max() <= 1 + 1e-12,
                   f"max ratio {r.max():.6f} over {len(r)} ordered pairs (limit 1 + 1e-12)")
    assert ok


def test_c07_projector_difference_identities(lat, criterion):
    rng = np.random.default_rng(7)
    d0, abs_d0 = free_dirac(lat), abs_free_dirac(lat)
    blocks_res = kin_rel = 0.0
    bound_gap = np.inf
    for i in range(20):
        q = perturbed_vacuum(lat, rng, 0.05 + 0.1 * i) - free_vacuum(lat)
        pp, mm, _, _ = p0_blocks(q)
        qq = q @ q
        blocks_res = max(blocks_res, hs_norm(qq - (pp - mm)))
        kin = p0_trace_product(d0, q)
        abs_form = trace(abs_d0 @ qq).real
        kin_rel = max(kin_rel, abs(kin - abs_form) / abs(abs_form))
        bound_gap = min(bound_gap, abs_form - hs_norm(q) ** 2)
    ok = criterion(7, "projector-difference identities", blocks_res <= 1e-10 and kin_rel <= 1e-9 and bound_gap >= 0,
                   f"max ||Q^2 - (Q++ - Q--)|| = {blocks_res:.1e}, max rel kinetic mismatch {kin_rel:.1e}, "
                   f"min tr(|D0|Q^2) - ||Q||^2 = {bound_gap:.3e}")
    assert ok


def test_c08_gradient(lat, src, criterion):
    rng = np.random.default_rng(8)
    q = perturbed_vacuum(lat, rng, 0.3) - free_vacuum(lat)
    eps = 1e-4
    worst = 0.0
    for _ in range(10):
        h = random_hermitian(lat, rng)
        h = h * (1.0 / hs_norm(h))
        fd = (bdf_energy(q + h * eps, src) - bdf_energy(q - h * eps, src)) / (2 * eps)
        g = energy_gradient(q, src, h)
        worst = max(worst, abs(fd - g) / (1 + abs(g)))
    ok = criterion(8, "gradient check", worst <= 1e-6, f"max |FD - tr_P0(D_Q h)| / (1 + |.|) = {worst:.2e} (limit 1e-6)")
    assert ok


def test_c09_exchange_paths(lat, criterion):
    rng = np.random.default_rng(9)
    worst = 0.0
    n = 4 * lat.size
    for _ in range(10):
        q = KernelOperator(lat, rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
        a = exchange_operator(q, 1.0, method="naive")
        b = exchange_operator(q, 1.0)
        worst = max(worst, hs_norm(a - b) / hs_norm(a))
    ok = criterion(9, "exchange oracle equivalence", worst <= 1e-12, f"max relative HS difference {worst:.1e} (limit 1e-12)")
    assert ok


def test_c10_scf_stationarity(lat, src, criterion):
    res = scf_solve(src, ScfSettings(tol=1e-13))
    records = []
    run(EvolutionState.from_projector(res.P), 0.05, 200, src, sink=records.append, record_interval=10)
    e = np.array([r.energy for r in records])
    c = np.array([r.charge for r in records])
    e_rel = np.abs(e - e[0]).max() / abs(e[0])
    # the vacuum charge is 0, so its drift is measured against 1 + |charge|
    c_rel = np.abs(c - c[0]).max() / (1 + abs(c[0]))
    ok = criterion(10, "SCF stationarity handoff",
                   res.converged and res.commutator_norm <= 1e-9 and e_rel <= 1e-9 and c_rel <= 1e-9,
                   f"{res.iterations} iterations, ||[D,P]|| = {res.commutator_norm:.1e}, energy {e[0]:.6e} "
                   f"rel drift {e_rel:.1e}, charge drift {c_rel:.1e} over 200 steps")
    assert ok


def test_c11_coercivity_bound(run_fine, src, criterion):
    records, _ = run_fine
    e_init = records[0].energy
    n_c = coulomb_norm(src.n)
    bound = (e_init + 0.5 * ALPHA * 4 * np.pi * n_c**2) / (1 - ALPHA * np.pi / 4)
    worst = max(r.hs_norm_Q**2 for r in records)
    ok = criterion(11, "coercivity boundedness", worst <= 1.05 * bound,
                   f"max ||Q(t)||^2 = {worst:.6f} against bound {bound:.6f} (5% slack)")
    assert ok


def test_c12_resume_determinism(lat, src, tmp_path_factory, criterion):
    dt, n = 0.02, 20
    s0 = build_initial_state(1, src)
    whole = []
    run(s0, dt, n, src, sink=whole.append)
    first, second = [], []
    mid = run(s0, dt, n // 2, src, sink=first.append)
    path = tmp_path_factory.mktemp("resume") / "mid.bdfk"
    write_snapshot(mid, path)
    run(read_snapshot(path, lat), dt, n - n // 2, src, sink=second.append, emit_initial=False)
    a = np.array([r.as_tuple() for r in whole])
    b = np.array([r.as_tuple() for r in first + second])
    worst = np.abs(a - b).max() if a.shape == b.shape else np.inf
    ok = criterion(12, "persistence determinism", worst <= 1e-12, f"max entry difference {worst:.1e} (bit-identical: {np.array_equal(a, b)}) over {len(a)} records")
    assert ok
