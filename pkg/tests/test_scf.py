import numpy as np
import pytest

from bdfdyn.dynamics import EvolutionState, run
from bdfdyn.energy import assemble, bdf_energy, build_gaussian_source, no_source
from bdfdyn.kernels import KernelOperator, free_dirac, free_vacuum, hs_norm, p0_trace
from bdfdyn.scf import (
    ChargeTargetError,
    ScfSettings,
    SpectralGapError,
    charge_target_solve,
    scf_solve,
    spectral_projector,
)
from bdfdyn.selftest import random_hermitian, unitary_from


@pytest.fixture(scope="module")
def vacuum_scf(gaussian):
    return scf_solve(gaussian, ScfSettings(tol=1e-13))


@pytest.fixture(scope="module")
def bound_source(small):
    # strong enough to pull two Kramers-degenerate levels into (0, 1)
    return build_gaussian_source(10.0, 1.0, 0.5, small)


def test_no_source_gives_free_vacuum_in_one_iteration(small):
    res = scf_solve(no_source(small, 0.1))
    assert res.converged and res.iterations == 1
    assert res.residual < 1e-13
    assert hs_norm(res.P - free_vacuum(small)) < 1e-13


def test_spectral_projector_of_free_dirac(small):
    p = spectral_projector(free_dirac(small), 0.0)
    assert hs_norm(p - free_vacuum(small)) < 1e-13


def test_level_on_eigenvalue_is_refused(small):
    # E(0) = 1 is an eigenvalue of D0
    with pytest.raises(SpectralGapError):
        spectral_projector(free_dirac(small), 1.0)


def test_weak_gaussian_vacuum(vacuum_scf):
    res = vacuum_scf
    assert res.converged
    assert res.commutator_norm <= 1e-9
    assert abs(res.charge) < 1e-8
    assert res.gamma_rank == 0
    # vacuum polarization: the screened state differs from P0 but only slightly
    assert 0 < hs_norm(res.P - free_vacuum(res.P.lattice)) < 1e-2


def test_fixed_point_consistency(vacuum_scf, gaussian):
    q = vacuum_scf.P - free_vacuum(gaussian.lattice)
    again = spectral_projector(assemble(q, gaussian).D, vacuum_scf.lam)
    assert hs_norm(again - vacuum_scf.P) <= 1e-12


def test_charge_is_integer_at_every_iterate(vacuum_scf):
    assert len(vacuum_scf.charges) == vacuum_scf.iterations
    assert all(abs(c - round(c)) <= 1e-8 for c in vacuum_scf.charges)


def test_vacuum_is_local_minimum(vacuum_scf, gaussian, rng):
    lat = gaussian.lattice
    p0 = free_vacuum(lat)
    e_bar = bdf_energy(vacuum_scf.P - p0, gaussian)
    for _ in range(20):
        h = random_hermitian(lat, rng)
        h = h * (1.0 / np.abs(np.linalg.eigvalsh(h.matrix)).max())
        u = unitary_from(h, rng.uniform(0.001, 0.02))
        trial = KernelOperator.from_matrix(lat, u @ vacuum_scf.P.matrix @ u.conj().T)
        assert hs_norm(trial - vacuum_scf.P) <= 0.1
        assert bdf_energy(trial - p0, gaussian) >= e_bar - 1e-12


def test_damped_iteration_reaches_same_state(vacuum_scf, gaussian):
    res = scf_solve(gaussian, ScfSettings(tol=1e-13, damping=0.6))
    assert res.converged
    assert hs_norm(res.P - vacuum_scf.P) < 1e-11


def test_non_convergence_is_reported(gaussian):
    res = scf_solve(gaussian, ScfSettings(tol=1e-300, max_iter=3))
    assert not res.converged
    assert res.iterations == 3 and np.isfinite(res.residual)


def test_level_inside_gap_above_bound_states(bound_source):
    # both members of the lowest Kramers pair lie in (0, 1)
    w = np.linalg.eigvalsh(assemble(KernelOperator.zeros(bound_source.lattice), bound_source).D.matrix)
    lam = 0.5 * (w[2 * bound_source.lattice.size + 1] + w[2 * bound_source.lattice.size + 2])
    res = scf_solve(bound_source, ScfSettings(lam=lam, tol=1e-12, damping=0.5, max_iter=400))
    assert res.converged
    assert res.charge == pytest.approx(2.0, abs=1e-8)
    assert res.gamma_rank == 2


def test_charge_target_zero_without_source(small):
    res = charge_target_solve(no_source(small, 0.1), 0)
    assert res.lam == 0.0
    assert hs_norm(res.P - free_vacuum(small)) < 1e-13


@pytest.mark.parametrize("N", [1, 2])
def test_charge_target_binds_n_electrons(bound_source, N):
    res = charge_target_solve(bound_source, N, ScfSettings(tol=1e-12, max_iter=300))
    assert res.converged
    assert res.charge == pytest.approx(N, abs=1e-8)
    assert res.gamma_rank == N
    assert res.commutator_norm <= 1e-9
    # the reported lambda reproduces the state as a spectral projector
    assert hs_norm(spectral_projector(res.D, res.lam) - res.P) < 1e-10


def test_bound_state_is_stationary_under_evolution(bound_source):
    res = charge_target_solve(bound_source, 1, ScfSettings(tol=1e-13, max_iter=300))
    records = []
    run(EvolutionState.from_projector(res.P), 0.05, 20, bound_source, sink=records.append, record_interval=5)
    e0, c0 = records[0].energy, records[0].charge
    for r in records:
        assert abs(r.energy - e0) <= 1e-9 * abs(e0)
        assert abs(r.charge - c0) <= 1e-9 * abs(c0)


def test_charge_target_errors(small, gaussian):
    with pytest.raises(ChargeTargetError):
        charge_target_solve(gaussian, -1)
    with pytest.raises(ChargeTargetError):
        charge_target_solve(gaussian, 2 * small.size)


def test_settings_validation():
    for bad in (dict(damping=0.0), dict(damping=1.5), dict(tol=0.0), dict(max_iter=0)):
        with pytest.raises(ValueError):
            ScfSettings(**bad)
