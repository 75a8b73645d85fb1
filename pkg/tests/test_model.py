import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptdyn.errors import ConfigError
from ptdyn.model import (
    LatticeModel,
    assemble_hamiltonian,
    build_grid,
    dense_density,
    fermi_dirac,
    fermi_dirac_init,
    kinetic_matrix,
    periodic_distance,
    solve_chemical_potential,
)

from .conftest import random_occupation, random_orthonormal


def test_production_grid():
    g = build_grid(4, 64)
    assert g.n_points == 256
    assert g.dx == pytest.approx(8 * np.pi / 256, rel=1e-15)


def test_smallest_grid():
    g = build_grid(1, 4)
    np.testing.assert_allclose(g.x, [0, np.pi / 2, np.pi, 3 * np.pi / 2], atol=1e-15)


def test_grid_length_identity():
    g = build_grid(2, 8)
    assert g.dx * g.n_points == pytest.approx(4 * np.pi, rel=1e-15)
    assert np.all(np.diff(g.x) > 0)


@pytest.mark.parametrize("cells, m", [(1, 3), (0, 8), (2, 1), (1 << 10, 1 << 10)])
def test_grid_rejects(cells, m):
    with pytest.raises(ConfigError):
        build_grid(cells, m)


@pytest.mark.parametrize("lap", ["spectral", "fd"])
def test_kinetic_kills_constants(lap):
    t = kinetic_matrix(build_grid(3, 8), lap)
    np.testing.assert_allclose(t @ np.ones(24), 0, atol=1e-12)


@pytest.mark.parametrize("lap", ["spectral", "fd"])
def test_kinetic_symmetric_psd(lap):
    t = kinetic_matrix(build_grid(2, 16), lap)
    np.testing.assert_array_equal(t, t.T)
    assert np.linalg.eigvalsh(t).min() > -1e-10


def test_spectral_plane_wave_eigenpair():
    g = build_grid(1, 16)
    v = np.exp(1j * g.x)
    t = kinetic_matrix(g, "spectral")
    np.testing.assert_allclose(t @ v, 0.5 * v, atol=1e-12)


def test_spectral_eigenvalues_are_k_squared_over_two():
    g = build_grid(2, 8)
    n = g.n_points
    k = np.arange(-n // 2 + 1, n // 2 + 1) / g.cells
    np.testing.assert_allclose(
        np.linalg.eigvalsh(kinetic_matrix(g, "spectral")), np.sort(0.5 * k**2), atol=1e-10
    )


def test_fd_matches_spectral_to_second_order():
    # Rayleigh quotients of the assembled matrices on the k=1 plane wave
    gaps = []
    for m in (8, 16, 32):
        g = build_grid(1, m)
        v = np.exp(1j * g.x) / np.sqrt(m)
        lam = [np.real(v.conj() @ kinetic_matrix(g, lap) @ v) for lap in ("spectral", "fd")]
        assert lam[0] == pytest.approx(0.5, abs=1e-12)
        gaps.append(abs(lam[0] - lam[1]))
        assert gaps[-1] <= g.dx**2 / 24 * 1.01
    assert gaps[0] / gaps[1] == pytest.approx(4, rel=0.05)
    assert gaps[1] / gaps[2] == pytest.approx(4, rel=0.05)


def test_unknown_laplacian():
    with pytest.raises(ConfigError):
        kinetic_matrix(build_grid(1, 8), "chebyshev")


def test_linear_hamiltonian_at_zero_time():
    g = build_grid(2, 16)
    model = LatticeModel(g, laplacian="spectral")
    h = assemble_hamiltonian(model, 0.0)
    np.testing.assert_array_equal(h, kinetic_matrix(g) + np.diag(np.cos(g.x)))


def test_drive_vanishes_after_half_period():
    g = build_grid(4, 16)
    model = LatticeModel(g, omega=16 * np.pi)
    h = model.hamiltonian(1 / 16)
    np.testing.assert_allclose(h, model.static, atol=1e-13)
    # and is present elsewhere
    assert np.abs(model.hamiltonian(1 / 32) - model.static).max() > 1


def test_drive_shape():
    g = build_grid(4, 16)
    model = LatticeModel(g, omega=2.0, amplitude=10.0)
    t = 0.3
    expected = 10 * np.sin(g.x / 4) * np.sin(2.0 * t)
    np.testing.assert_allclose(np.diag(model.hamiltonian(t) - model.static), expected, atol=1e-13)


def test_yukawa_zero_density_reduces_to_linear_part():
    g = build_grid(1, 16)
    nl = LatticeModel(g, "yukawa")
    lin = LatticeModel(g, "linear", potential="x2")
    z = np.zeros((16, 16))
    np.testing.assert_allclose(nl.hamiltonian(0.7, z), lin.hamiltonian(0.7), atol=1e-14)


def test_yukawa_kernel_symmetry():
    g = build_grid(2, 8)
    model = LatticeModel(g, "yukawa", kappa=0.3, eps0=1.5)
    k = model.kernel
    np.testing.assert_array_equal(k, k.T)
    d = periodic_distance(g)
    np.testing.assert_allclose(k, 2 * np.pi / (0.3 * 1.5) * np.exp(-0.3 * d), rtol=1e-15)
    # translation covariance on the torus
    shift = 3
    np.testing.assert_allclose(k, np.roll(np.roll(k, shift, 0), shift, 1), rtol=1e-13)
    assert d.max() <= g.length / 2 + 1e-12


def test_yukawa_exchange_entries():
    g = build_grid(1, 8)
    model = LatticeModel(g, "yukawa", kappa=0.5, eps0=2.0)
    phi = random_orthonormal(8, 3, seed=1)
    rho = dense_density(phi, np.diag([1.0, 0.5, 0.25]))
    u = model.hamiltonian(0.0, rho) - model.hamiltonian(0.0, np.zeros_like(rho))
    j, l = 2, 6
    dist = min(abs(g.x[j] - g.x[l]), g.length - abs(g.x[j] - g.x[l]))
    expected = -g.dx * 2 * np.pi / (0.5 * 2.0) * np.exp(-0.5 * dist) * rho[j, l]
    assert u[j, l] == pytest.approx(expected, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.floats(-5, 5))
def test_assembled_hamiltonian_hermitian(seed, t):
    g = build_grid(1, 8)
    model = LatticeModel(g, "yukawa", kappa=0.2, eps0=1.0)
    phi = random_orthonormal(8, 3, seed)
    sig = random_occupation(3, seed)
    h = model.hamiltonian(t, (phi, sig))
    assert np.max(np.abs(h - h.conj().T)) <= 1e-13
    h_lin = LatticeModel(g).hamiltonian(t)
    assert np.max(np.abs(h_lin - h_lin.conj().T)) <= 1e-13


def test_yukawa_rejects_non_hermitian_density():
    model = LatticeModel(build_grid(1, 8), "yukawa")
    rho = np.zeros((8, 8), dtype=complex)
    rho[0, 1] = 1.0
    with pytest.raises(ConfigError):
        model.hamiltonian(0.0, rho)
    with pytest.raises(ConfigError):
        model.hamiltonian(0.0, None)


def test_nan_time_rejected():
    with pytest.raises(ConfigError):
        LatticeModel(build_grid(1, 8)).hamiltonian(float("nan"))


def test_dense_density_projector():
    phi = random_orthonormal(10, 4, seed=2)
    rho = dense_density(phi, np.eye(4))
    np.testing.assert_allclose(rho @ rho, rho, atol=1e-12)


def test_dense_density_trace():
    phi = random_orthonormal(10, 4, seed=5)
    sig = random_occupation(4, seed=5)
    assert np.trace(dense_density(phi, sig)).real == pytest.approx(np.trace(sig).real, abs=1e-12)


def test_dense_density_brute_force():
    rng = np.random.default_rng(11)
    phi = rng.standard_normal((8, 3)) + 1j * rng.standard_normal((8, 3))
    sig = random_occupation(3, seed=11)
    expected = np.zeros((8, 8), dtype=complex)
    for j in range(8):
        for l in range(8):
            expected[j, l] = sum(
                phi[j, a] * sig[a, b] * np.conj(phi[l, b]) for a in range(3) for b in range(3)
            )
    np.testing.assert_allclose(dense_density(phi, sig), expected, atol=1e-12)


def test_dense_density_shape_mismatch():
    with pytest.raises(ConfigError):
        dense_density(np.zeros((8, 3)), np.eye(2))


def test_chemical_potential_hits_electron_count():
    e = np.linspace(-3, 7, 40)
    mu = solve_chemical_potential(e, 12.5, beta=2.0)
    assert np.sum(fermi_dirac(e, mu, 2.0)) == pytest.approx(12.5, abs=1e-10)


def test_zero_temperature_limit_is_a_projector():
    model = LatticeModel(build_grid(2, 16), laplacian="fd")
    init = fermi_dirac_init(model, 1e6, n_electrons=5, rank=9)
    occ = init.occupations
    np.testing.assert_allclose(occ, [1] * 5 + [0] * 4, atol=1e-6)


def test_zero_temperature_limit_monotone():
    model = LatticeModel(build_grid(2, 16), laplacian="fd")
    dist = []
    for beta in (0.5, 1, 2, 4, 8, 16, 32):
        occ = fermi_dirac_init(model, beta, n_electrons=5, rank=12).occupations
        dist.append(np.linalg.norm(occ - np.round(occ)))
    assert all(a > b for a, b in zip(dist, dist[1:]))


def test_chemical_potential_fd():
    # the 3-point Laplacian reproduces the published value to all printed digits
    model = LatticeModel(build_grid(4, 64), laplacian="fd")
    init = fermi_dirac_init(model, 1.453, n_electrons=20, rank=64)
    assert init.mu == pytest.approx(3.299, abs=5e-4)
    assert abs(np.trace(init.sigma) - 20) <= 1e-10


def test_chemical_potential_spectral():
    model = LatticeModel(build_grid(4, 64), laplacian="spectral")
    init = fermi_dirac_init(model, 1.453, n_electrons=20, rank=64)
    assert abs(init.mu - 3.299) <= 0.5
    assert abs(np.trace(init.sigma) - 20) <= 1e-10


@pytest.mark.parametrize("kind", ["linear", "yukawa"])
def test_low_rank_init_invariants(kind):
    model = LatticeModel(build_grid(2, 16), kind, laplacian="fd", kappa=0.5, eps0=5.0)
    init = fermi_dirac_init(model, 1.5, n_electrons=6, rank=10)
    phi, sig = init.phi, init.sigma
    assert np.linalg.norm(phi.conj().T @ phi - np.eye(10)) <= 1e-12
    assert abs(np.trace(sig) - 6) <= 1e-10
    occ = init.occupations
    assert np.all(occ > 0) and np.all(occ <= 1)
    np.testing.assert_array_equal(sig, np.diag(occ))
    assert np.all(np.diff(init.energies) >= 0)


def test_yukawa_init_is_self_consistent():
    model = LatticeModel(build_grid(2, 16), "yukawa", laplacian="fd", kappa=0.5, eps0=1.0)
    init = fermi_dirac_init(model, 1.5, n_electrons=6, rank=10)
    assert init.scf_iterations > 1
    h = model.hamiltonian(0.0, init.density)
    # the kept orbitals are (nearly) eigenvectors of the self-consistent H
    resid = h @ init.phi - init.phi * init.energies[None, :]
    assert np.linalg.norm(resid) < 1e-7


def test_init_with_given_mu():
    model = LatticeModel(build_grid(2, 16), laplacian="fd")
    init = fermi_dirac_init(model, 2.0, mu=1.0, rank=10)
    np.testing.assert_allclose(init.occupations, fermi_dirac(init.energies, 1.0, 2.0))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_electrons=11, rank=10),
        dict(n_electrons=3, rank=40),
        dict(n_electrons=3, mu=1.0, rank=10),
        dict(rank=10),
        dict(n_electrons=-1, rank=10),
    ],
)
def test_init_rejects(kwargs):
    model = LatticeModel(build_grid(2, 16))
    with pytest.raises(ConfigError):
        fermi_dirac_init(model, 1.0, **kwargs)


def test_init_rejects_bad_beta():
    with pytest.raises(ConfigError):
        fermi_dirac_init(LatticeModel(build_grid(2, 16)), 0.0, n_electrons=2, rank=4)
