import numpy as np
import pytest

from ptdyn.anderson import SolverConfig
from ptdyn.dynamics import DenseState, PTState, SDState
from ptdyn.errors import ConfigError, PropagationError, SingularMidpointError
from ptdyn.integrators import (
    initial_state,
    propagate,
    pt_im_step,
    rk4_dense_step,
    sd_im_step,
    step_count,
)
from ptdyn.model import DrivenMatrixModel, LatticeModel, build_grid, dense_density, fermi_dirac_init

from .conftest import random_occupation, random_orthonormal

CFG = SolverConfig()


def _static(model):
    return DrivenMatrixModel(model.static, np.zeros_like(model.static))


def test_pt_stationary_state_is_fixed(small_linear):
    model = _static(small_linear)
    init = fermi_dirac_init(model, 2.0, n_electrons=3, rank=5)
    state = initial_state(init, "pt")
    new, rep = pt_im_step(model, state, 0.01, CFG)
    np.testing.assert_allclose(new.phi, state.phi, atol=1e-12)
    np.testing.assert_allclose(new.sigma, state.sigma, atol=1e-12)
    assert rep.iterations <= 1


def test_pt_step_conserves_invariants(random_model):
    phi = random_orthonormal(8, 3, seed=1)
    sigma = random_occupation(3, seed=1)
    state = PTState(0.0, phi, sigma)
    for _ in range(5):
        new, rep = pt_im_step(random_model, state, 0.05, CFG)
        assert rep.converged and rep.residual <= CFG.tol
        assert rep.ortho_defect <= 10 * CFG.tol
        assert abs(np.trace(new.sigma) - np.trace(state.sigma)) <= 10 * CFG.tol
        s2_old = np.trace(state.sigma @ state.sigma)
        s2_new = np.trace(new.sigma @ new.sigma)
        assert abs(s2_new - s2_old) <= 10 * CFG.tol
        np.testing.assert_array_equal(new.sigma, new.sigma.conj().T)
        state = new


def test_pt_step_conserves_invariants_nonlinear(small_yukawa):
    init = fermi_dirac_init(small_yukawa, 1.0, n_electrons=3, rank=5)
    state = initial_state(init, "pt")
    for _ in range(3):
        new, rep = pt_im_step(small_yukawa, state, 0.01, CFG)
        assert rep.ortho_defect <= 10 * CFG.tol
        assert abs(np.trace(new.sigma) - np.trace(state.sigma)) <= 10 * CFG.tol
        state = new


def test_sd_cayley_phase():
    energies = np.array([-1.0, 0.3, 2.0])
    model = DrivenMatrixModel(np.diag(energies), np.zeros((3, 3)))
    psi = np.zeros((3, 1), dtype=complex)
    psi[1, 0] = 1.0
    h, eps = 0.1, energies[1]
    new, _ = sd_im_step(model, SDState(0.0, psi, np.eye(1)), h, CFG)
    factor = (1 - 0.5j * h * eps) / (1 + 0.5j * h * eps)
    np.testing.assert_allclose(new.psi, factor * psi, atol=1e-11)


def test_sd_step_preserves_orthonormality(random_model):
    state = SDState(0.0, random_orthonormal(8, 3, seed=2), random_occupation(3, seed=2))
    for _ in range(5):
        state, rep = sd_im_step(random_model, state, 0.05, CFG)
        assert rep.ortho_defect <= 10 * CFG.tol


def _dense_reference(model, rho, h, n):
    t = 0.0
    for _ in range(n):
        rho = rk4_dense_step(model, t, rho, h)
        t += h
    return rho


@pytest.mark.parametrize("scheme", ["pt", "sd"])
def test_small_instance_against_dense_rk4(scheme):
    # 100 steps of 1e-3 against RK4 at 1e-5, N_g = 16, N = 3; a slower drive
    # than the production one keeps the midpoint error below 1e-6
    model = LatticeModel(build_grid(1, 16), omega=2 * np.pi)
    init = fermi_dirac_init(model, 1.0, n_electrons=2, rank=3)
    traj = propagate(model, init, scheme, 1e-3, 0.1, sample_every=10)
    rho_ref = init.density
    worst = 0.0
    for k in range(1, len(traj)):
        rho_ref = _dense_reference_from(model, rho_ref, traj.times[k - 1], 1e-5, 1000)
        worst = max(worst, np.linalg.norm(traj.density(k) - rho_ref))
    assert worst <= 1e-6


@pytest.mark.parametrize("scheme", ["pt", "sd"])
def test_midpoint_error_is_second_order(small_linear, scheme):
    init = fermi_dirac_init(small_linear, 1.0, n_electrons=2, rank=3)
    rho_ref = _dense_reference_from(small_linear, init.density, 0.0, 1e-5, 5000)
    errs = [
        np.linalg.norm(propagate(small_linear, init, scheme, h, 0.05).density(-1) - rho_ref)
        for h in (5e-3, 2.5e-3, 1.25e-3)
    ]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    np.testing.assert_allclose(rates, 2.0, atol=0.1)


def _dense_reference_from(model, rho, t0, h, n):
    for j in range(n):
        rho = rk4_dense_step(model, t0 + j * h, rho, h)
    return rho


def test_rk4_preserves_trace_and_hermiticity(random_model):
    rho = dense_density(random_orthonormal(8, 3, seed=5), random_occupation(3, seed=5))
    out = _dense_reference(random_model, rho, 1e-3, 50)
    assert abs(np.trace(out) - np.trace(rho)) <= 1e-12
    np.testing.assert_array_equal(out, out.conj().T)


def test_rk4_is_fourth_order(random_model):
    rho = dense_density(random_orthonormal(8, 3, seed=6), random_occupation(3, seed=6))
    exact = _dense_reference(random_model, rho, 1e-4, 2000)
    errs = [np.linalg.norm(_dense_reference(random_model, rho, 0.2 / n, n) - exact) for n in (10, 20, 40)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 3.7)


def test_rk4_static_eigenprojector():
    model = DrivenMatrixModel(np.diag([0.0, 1.0, 3.0]), np.zeros((3, 3)))
    rho = np.diag([1.0, 0.5, 0.0]).astype(complex)
    np.testing.assert_allclose(rk4_dense_step(model, 0.0, rho, 0.1), rho, atol=1e-15)


@pytest.mark.parametrize("scheme", ["pt", "sd", "dense"])
def test_zero_final_time(small_linear, scheme):
    init = fermi_dirac_init(small_linear, 1.0, n_electrons=2, rank=3)
    traj = propagate(small_linear, init, scheme, 0.01, 0.0)
    assert len(traj) == 1 and traj.reports == []
    np.testing.assert_allclose(traj.density(0), init.density, atol=1e-14)


def test_propagation_is_deterministic(small_yukawa):
    init = fermi_dirac_init(small_yukawa, 1.0, n_electrons=2, rank=4)
    a = propagate(small_yukawa, init, "pt", 0.01, 0.05)
    b = propagate(small_yukawa, init, "pt", 0.01, 0.05)
    for sa, sb in zip(a.states, b.states):
        np.testing.assert_array_equal(sa.phi, sb.phi)
        np.testing.assert_array_equal(sa.sigma, sb.sigma)


def test_pt_and_sd_agree_on_density(small_linear):
    init = fermi_dirac_init(small_linear, 1.0, n_electrons=2, rank=3)
    pt = propagate(small_linear, init, "pt", 1e-3, 0.05, sample_every=25)
    sd = propagate(small_linear, init, "sd", 1e-3, 0.05, sample_every=25)
    np.testing.assert_allclose(pt.times, sd.times, rtol=0, atol=1e-15)
    for k in range(len(pt)):
        assert np.linalg.norm(pt.density(k) - sd.density(k)) <= 1e-5


def test_sampling_and_time_grid(small_linear):
    init = fermi_dirac_init(small_linear, 1.0, n_electrons=2, rank=3)
    traj = propagate(small_linear, init, "sd", 0.01, 0.07, sample_every=3)
    np.testing.assert_allclose(traj.times, [0.0, 0.03, 0.06, 0.07], atol=1e-15)
    assert len(traj.reports) == 7
    assert traj.mu == init.mu


def test_step_count_rules():
    assert step_count(0.01, 1.0) == 100
    assert step_count(1e-4, 1.0) == 10_000
    with pytest.raises(ConfigError):
        step_count(0.03, 1.0)
    with pytest.raises(ConfigError):
        step_count(0.0, 1.0)
    with pytest.raises(ConfigError):
        step_count(1e-12, 1e3)


def test_initial_state_conversions(small_linear):
    init = fermi_dirac_init(small_linear, 1.0, n_electrons=2, rank=3)
    assert isinstance(initial_state(init, "pt"), PTState)
    assert isinstance(initial_state(init, "sd"), SDState)
    assert isinstance(initial_state(init, "dense"), DenseState)
    with pytest.raises(ConfigError):
        initial_state(init, "rk45")
    with pytest.raises(ConfigError):
        initial_state(DenseState(0.0, init.density), "pt")


def test_singular_midpoint_is_reported(random_model):
    phi = random_orthonormal(8, 2, seed=0)
    phi[:, 1] = phi[:, 0]
    with pytest.raises(SingularMidpointError):
        pt_im_step(random_model, PTState(0.0, phi, np.eye(2, dtype=complex)), 0.1, CFG)


def test_failed_step_carries_partial_trajectory(random_model):
    init = PTState(0.0, random_orthonormal(8, 3, seed=1), random_occupation(3, seed=1))
    cfg = SolverConfig(max_iter=2)
    with pytest.raises(PropagationError) as info:
        propagate(random_model, init, "pt", 0.5, 2.0, cfg=cfg)
    assert info.value.step == 1
    assert len(info.value.trajectory) == 1


def test_qr_cleanup_keeps_orthonormality(random_model):
    init = PTState(0.0, random_orthonormal(8, 3, seed=3), random_occupation(3, seed=3))
    cfg = SolverConfig(qr_cleanup=True, tol=1e-6)
    traj = propagate(random_model, init, "pt", 0.05, 0.5, cfg=cfg)
    phi = traj.orbitals(-1)
    assert np.linalg.norm(phi.conj().T @ phi - np.eye(3)) <= 1e-13
