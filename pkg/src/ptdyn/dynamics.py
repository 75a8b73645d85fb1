"""Right-hand sides of the von Neumann equation and its low-rank gauges.

A density ``rho = Phi sigma Phi^dagger`` can be propagated in any gauge; the
parallel-transport (PT) gauge keeps ``Phi^dagger dPhi = 0`` and moves the
occupation matrix ``sigma`` instead, while the Schroedinger gauge keeps
``sigma`` frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError


@dataclass(frozen=True)
class PTState:
    t: float
    phi: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)

    @property
    def orbitals(self):
        return self.phi

    @property
    def occupation(self):
        return self.sigma


@dataclass(frozen=True)
class SDState:
    t: float
    psi: np.ndarray = field(repr=False)
    sigma0: np.ndarray = field(repr=False)

    @property
    def orbitals(self):
        return self.psi

    @property
    def occupation(self):
        return self.sigma0


@dataclass(frozen=True)
class DenseState:
    t: float
    rho: np.ndarray = field(repr=False)


def matmul(a, b):
    """``a @ b`` that keeps a real ``a`` real when ``b`` is complex."""
    if np.isrealobj(a) and np.iscomplexobj(b):
        b = np.ascontiguousarray(b)
        out = a @ b.view(np.float64)
        return out.view(np.complex128)
    return a @ b


def commutator(a, b):
    return matmul(a, b) - matmul(a.T, b.T).T


def _check_block(phi, sigma):
    if phi.ndim != 2 or sigma.shape != (phi.shape[1], phi.shape[1]):
        raise ConfigError(f"shape mismatch: phi {phi.shape}, sigma {sigma.shape}")
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(sigma))):
        raise NumericalError("non-finite entries in state")


def rhs_von_neumann(model, t, rho):
    """drho/dt = -i [H(t, rho), rho]."""
    h = model.hamiltonian(t, rho)
    hr = matmul(h, rho)
    d = -1j * (hr - hr.conj().T)
    return 0.5 * (d + d.conj().T)


def rhs_pt(model, state: PTState):
    """Parallel-transport right-hand side ``(dPhi, dsigma)``."""
    phi, sigma = state.phi, state.sigma
    _check_block(phi, sigma)
    h = model.hamiltonian(state.t, (phi, sigma))
    hphi = matmul(h, phi)
    reduced = phi.conj().T @ hphi
    dphi = -1j * (hphi - phi @ reduced)
    dsigma = -1j * (reduced @ sigma - sigma @ reduced)
    return dphi, dsigma


def rhs_sd(model, state: SDState):
    """Schroedinger-gauge right-hand side ``dPsi = -i H Psi``."""
    psi, sigma0 = state.psi, state.sigma0
    _check_block(psi, sigma0)
    h = model.hamiltonian(state.t, (psi, sigma0))
    return -1j * matmul(h, psi)


def rhs_gauge(model, t, phi, sigma, gauge):
    """Low-rank dynamics with an arbitrary Hermitian gauge generator ``gauge``.

    ``gauge = 0`` gives the PT dynamics and ``gauge = H`` the Schroedinger one.
    """
    _check_block(phi, sigma)
    gauge = np.asarray(gauge)
    if gauge.shape != (phi.shape[0], phi.shape[0]):
        raise ConfigError(f"gauge generator has shape {gauge.shape}")
    if np.max(np.abs(gauge - gauge.conj().T), initial=0.0) > 1e-12 * max(1.0, np.abs(gauge).max()):
        raise ConfigError("gauge generator is not Hermitian")
    h = model.hamiltonian(t, (phi, sigma))
    hphi = matmul(h, phi)
    gphi = matmul(gauge, phi)
    reduced_h = phi.conj().T @ hphi
    reduced_g = phi.conj().T @ gphi
    dphi = -1j * (hphi - phi @ reduced_h + phi @ reduced_g)
    red = reduced_h - reduced_g
    dsigma = -1j * (red @ sigma - sigma @ red)
    return dphi, dsigma


def density_derivative(phi, sigma, dphi, dsigma):
    """d(Phi sigma Phi^dagger)/dt by the product rule."""
    a = dphi @ sigma @ phi.conj().T
    return a + a.conj().T + phi @ dsigma @ phi.conj().T
