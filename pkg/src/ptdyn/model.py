"""Spatial grid, model Hamiltonians and the Fermi-Dirac low-rank initial state.

All lattice quantities live on a periodic 1D grid with ``L`` unit cells of
length ``2*pi`` each, discretized by ``m`` points per cell.  Wavefunctions
are stored as columns of an ``(n_points, N)`` array that is orthonormal in
the plain Euclidean inner product.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .errors import ConfigError, ConvergenceError, NumericalError

logger = logging.getLogger(__name__)

MAX_GRID_POINTS = 1 << 15
HERMITIAN_INPUT_TOL = 1e-8

LINEAR = "linear"
YUKAWA = "yukawa"


@dataclass(frozen=True)
class Grid1D:
    cells: int
    points_per_cell: int
    x: np.ndarray = field(repr=False)

    @property
    def n_points(self) -> int:
        return self.cells * self.points_per_cell

    @property
    def dx(self) -> float:
        return 2.0 * np.pi * self.cells / self.n_points

    @property
    def length(self) -> float:
        return 2.0 * np.pi * self.cells


def build_grid(cells: int, points_per_cell: int) -> Grid1D:
    """Equidistant periodic grid on ``[0, 2*pi*cells)``."""
    if int(cells) != cells or cells < 1:
        raise ConfigError(f"cell count must be a positive integer, got {cells!r}")
    if int(points_per_cell) != points_per_cell or points_per_cell < 4:
        raise ConfigError(f"need at least 4 points per cell, got {points_per_cell!r}")
    cells, points_per_cell = int(cells), int(points_per_cell)
    n = cells * points_per_cell
    if n > MAX_GRID_POINTS:
        raise ConfigError(f"grid with {n} points exceeds the dense limit {MAX_GRID_POINTS}")
    x = 2.0 * np.pi * cells * np.arange(n) / n
    x.setflags(write=False)
    return Grid1D(cells, points_per_cell, x)


def kinetic_matrix(grid: Grid1D, laplacian: str = "spectral") -> np.ndarray:
    """Dense real symmetric matrix of ``-1/2 d^2/dx^2`` with periodic boundaries.

    ``laplacian="spectral"`` gives the Fourier collocation operator, whose
    eigenvectors are the discrete plane waves with wavenumbers
    ``k = n / L`` for ``n = -N/2+1, ..., N/2``.  ``laplacian="fd"`` gives the
    3-point central difference stencil.
    """
    n = grid.n_points
    offsets = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    if laplacian == "spectral":
        k = np.fft.fftfreq(n, d=1.0 / n) / grid.cells
        k[n // 2] = abs(k[n // 2])  # Nyquist mode taken as +N/2
        column = np.fft.ifft(0.5 * k**2).real
        return column[offsets]
    if laplacian == "fd":
        column = np.zeros(n)
        column[0] = 1.0
        column[1] = column[-1] = -0.5
        return column[offsets] / grid.dx**2
    raise ConfigError(f"unknown laplacian discretization {laplacian!r}")


def periodic_distance(grid: Grid1D) -> np.ndarray:
    d = np.abs(grid.x[:, None] - grid.x[None, :])
    return np.minimum(d, grid.length - d)


def _check_time(t):
    t = float(t)
    if not np.isfinite(t):
        raise ConfigError(f"time must be finite, got {t}")
    return t


def dense_density(phi: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """``phi @ sigma @ phi^dagger``, symmetrized."""
    phi = np.asarray(phi)
    sigma = np.asarray(sigma)
    if phi.ndim != 2 or sigma.shape != (phi.shape[1], phi.shape[1]):
        raise ConfigError(
            f"shape mismatch: phi {phi.shape} and sigma {sigma.shape} are not conformable"
        )
    rho = (phi @ sigma) @ phi.conj().T
    return 0.5 * (rho + rho.conj().T)


def _as_density(rho):
    """Resolve a dense density or a ``(phi, sigma)`` pair to a dense matrix."""
    if isinstance(rho, tuple):
        return dense_density(*rho)
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ConfigError(f"density must be a square matrix, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T), initial=0.0) > HERMITIAN_INPUT_TOL:
        raise ConfigError("density matrix is not Hermitian")
    return rho


class Hamiltonian:
    """Time- and (optionally) density-dependent Hermitian matrix H(t, rho).

    Subclasses implement :meth:`hamiltonian`.  The explicit time derivatives
    :meth:`d_t` and :meth:`d_tt` are only needed by the error-bound
    diagnostics and are defined for density-independent models.
    """

    density_dependent = False
    grid = None

    @property
    def size(self) -> int:
        raise NotImplementedError

    def hamiltonian(self, t, rho=None) -> np.ndarray:
        raise NotImplementedError

    def d_t(self, t) -> np.ndarray:
        raise NotImplementedError

    def d_tt(self, t) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        """JSON-serializable description, used for cache keys."""
        raise NotImplementedError


class LatticeModel(Hamiltonian):
    """Driven 1D lattice, optionally with a screened (Yukawa) exchange term.

    H(t, rho) = -1/2 Laplacian + V(x) + A sin(x/L) sin(omega t) [+ U[rho]]

    with ``(U[rho])_jl = -dx K(x_j, x_l) rho_jl`` and
    ``K(x, y) = 2 pi / (kappa eps0) exp(-kappa d(x, y))``, ``d`` being the
    periodic distance.
    """

    def __init__(
        self,
        grid: Grid1D,
        kind: str = LINEAR,
        *,
        potential: str | None = None,
        amplitude: float = 10.0,
        omega: float = 16 * np.pi,
        kappa: float = 0.01,
        eps0: float = 100.0,
        laplacian: str = "fd",
    ):
        if kind not in (LINEAR, YUKAWA):
            raise ConfigError(f"unknown model kind {kind!r}")
        if potential is None:
            potential = "cos" if kind == LINEAR else "x2"
        if kind == YUKAWA and (kappa <= 0 or eps0 <= 0):
            raise ConfigError("Yukawa parameters kappa and eps0 must be positive")
        self.grid = grid
        self.kind = kind
        self.potential = potential
        self.amplitude = float(amplitude)
        self.omega = float(omega)
        self.kappa = float(kappa)
        self.eps0 = float(eps0)
        self.laplacian = laplacian
        self.density_dependent = kind == YUKAWA

        x = grid.x
        if potential == "cos":
            v = np.cos(x)
        elif potential == "x2":
            v = x**2
        elif potential == "zero":
            v = np.zeros_like(x)
        else:
            raise ConfigError(f"unknown static potential {potential!r}")
        self.static_potential = v
        self.kinetic = kinetic_matrix(grid, laplacian)
        self.static = self.kinetic + np.diag(v)
        self.drive = self.amplitude * np.sin(x / grid.cells)
        if self.density_dependent:
            self.kernel = (2 * np.pi / (self.kappa * self.eps0)) * np.exp(
                -self.kappa * periodic_distance(grid)
            )
        else:
            self.kernel = None

    @property
    def size(self) -> int:
        return self.grid.n_points

    def exchange(self, rho) -> np.ndarray:
        return -self.grid.dx * self.kernel * rho

    def hamiltonian(self, t, rho=None) -> np.ndarray:
        t = _check_time(t)
        h = self.static + np.diag(self.drive * np.sin(self.omega * t))
        if not self.density_dependent:
            return h
        if rho is None:
            raise ConfigError("the Yukawa model needs a density to assemble H")
        h = h + self.exchange(_as_density(rho))
        return 0.5 * (h + h.conj().T)

    def d_t(self, t) -> np.ndarray:
        return np.diag(self.drive * self.omega * np.cos(self.omega * t))

    def d_tt(self, t) -> np.ndarray:
        return np.diag(-self.drive * self.omega**2 * np.sin(self.omega * t))

    def params(self) -> dict:
        p = {
            "model": "lattice",
            "kind": self.kind,
            "L": self.grid.cells,
            "m": self.grid.points_per_cell,
            "potential": self.potential,
            "amplitude": self.amplitude,
            "omega": self.omega,
            "laplacian": self.laplacian,
        }
        if self.density_dependent:
            p.update(kappa=self.kappa, eps0=self.eps0)
        return p


class DrivenMatrixModel(Hamiltonian):
    """H(t) = (static + sin(omega t) drive) / scale for explicit small matrices.

    Used for desk-scale oracle checks and the two-level adiabatic scan, where
    ``scale`` plays the role of the singular-perturbation parameter.
    """

    def __init__(self, static, drive, omega=1.0, scale=1.0):
        static = np.asarray(static)
        drive = np.asarray(drive)
        if static.shape != drive.shape or static.ndim != 2 or static.shape[0] != static.shape[1]:
            raise ConfigError("static and drive must be square matrices of equal shape")
        for name, a in (("static", static), ("drive", drive)):
            if np.max(np.abs(a - a.conj().T)) > 1e-13:
                raise ConfigError(f"{name} part is not Hermitian")
        if scale <= 0:
            raise ConfigError("scale must be positive")
        self.static = static
        self.drive = drive
        self.omega = float(omega)
        self.scale = float(scale)

    @property
    def size(self) -> int:
        return self.static.shape[0]

    def hamiltonian(self, t, rho=None) -> np.ndarray:
        t = _check_time(t)
        return (self.static + np.sin(self.omega * t) * self.drive) / self.scale

    def d_t(self, t) -> np.ndarray:
        return self.omega * np.cos(self.omega * t) * self.drive / self.scale

    def d_tt(self, t) -> np.ndarray:
        return -(self.omega**2) * np.sin(self.omega * t) * self.drive / self.scale

    def params(self) -> dict:
        digest = hashlib.sha256()
        for a in (self.static, self.drive):
            digest.update(np.ascontiguousarray(a, dtype=complex).tobytes())
        return {
            "model": "matrix",
            "size": self.size,
            "matrices_sha256": digest.hexdigest(),
            "omega": self.omega,
            "scale": self.scale,
        }

    @classmethod
    def random(cls, size, seed=0, omega=2.0, drive_strength=1.0):
        """Seeded random Hermitian model, for oracle tests."""
        rng = np.random.default_rng(seed)

        def herm():
            a = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
            return 0.5 * (a + a.conj().T)

        return cls(herm(), drive_strength * herm(), omega=omega)


def assemble_hamiltonian(model: Hamiltonian, t, rho=None) -> np.ndarray:
    return model.hamiltonian(t, rho)


def fermi_dirac(energies, mu, beta):
    return expit(-beta * (np.asarray(energies) - mu))


def solve_chemical_potential(energies, n_electrons, beta):
    """Chemical potential with ``sum f(e - mu) = n_electrons``."""
    energies = np.asarray(energies, dtype=float)
    if not 0 < n_electrons < len(energies):
        raise ConfigError(
            f"cannot place {n_electrons} electrons in {len(energies)} levels at finite temperature"
        )
    lo = energies.min() - 50.0 / beta - 1.0
    hi = energies.max() + 50.0 / beta + 1.0

    def excess(mu):
        return float(np.sum(fermi_dirac(energies, mu, beta))) - n_electrons

    if excess(lo) > 0 or excess(hi) < 0:
        raise ConvergenceError(
            f"chemical potential not bracketed in [{lo:.6g}, {hi:.6g}] "
            f"(spectrum [{energies.min():.6g}, {energies.max():.6g}])"
        )
    mu = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    # brentq stops on the bracket width; nudge until the trace itself is on target
    for _ in range(200):
        err = excess(mu)
        if abs(err) <= 1e-11 * max(1.0, n_electrons):
            break
        slope = beta * np.sum(fermi_dirac(energies, mu, beta) * fermi_dirac(-energies, -mu, beta))
        if slope <= 0:
            break
        mu -= err / slope
    if abs(excess(mu)) > 1e-10:
        raise ConvergenceError(
            f"chemical potential search missed the electron count by {excess(mu):.3e}",
            best_residual=abs(excess(mu)),
        )
    return mu


@dataclass(frozen=True)
class LowRankInit:
    phi: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    mu: float
    beta: float
    n_electrons: float
    rank: int
    energies: np.ndarray = field(repr=False)
    mu_full: float = float("nan")
    scf_iterations: int = 0

    @property
    def occupations(self) -> np.ndarray:
        return np.diag(self.sigma).copy()

    @property
    def density(self) -> np.ndarray:
        return dense_density(self.phi, self.sigma)


def _fermi_dirac_from_matrix(h, beta, n_electrons, mu, rank):
    energies, vectors = np.linalg.eigh(h)
    if n_electrons is not None:
        mu_full = solve_chemical_potential(energies, n_electrons, beta)
    else:
        mu_full = float(mu)
    occ = fermi_dirac(energies, mu_full, beta)
    # largest occupations are the lowest levels; eigh returns ascending order
    selected = np.arange(rank)
    e_sel = energies[selected]
    if n_electrons is None:
        mu_trunc = mu_full
        occ_sel = occ[selected]
    elif n_electrons == rank:
        mu_trunc = float("inf")
        occ_sel = np.ones(rank)
    else:
        mu_trunc = solve_chemical_potential(e_sel, n_electrons, beta)
        occ_sel = fermi_dirac(e_sel, mu_trunc, beta)
    phi = np.ascontiguousarray(vectors[:, selected], dtype=complex)
    sigma = np.diag(occ_sel)
    return phi, sigma, mu_trunc, mu_full, e_sel


def fermi_dirac_init(
    model: Hamiltonian,
    beta: float,
    *,
    n_electrons: float | None = None,
    mu: float | None = None,
    rank: int,
    scf_mixing: float = 0.5,
    scf_tol: float = 1e-9,
    scf_max_iter: int = 200,
    self_consistent: bool = True,
) -> LowRankInit:
    """Rank-``rank`` truncation of the Fermi-Dirac state of H(0).

    Exactly one of ``n_electrons`` and ``mu`` must be given.  With
    ``n_electrons`` the chemical potential is solved on the full spectrum,
    the lowest ``rank`` levels are kept and the chemical potential is then
    re-solved on the kept levels so the truncated trace equals
    ``n_electrons``.  For density-dependent models H(0, rho) and rho are
    iterated to self-consistency with linear mixing, unless
    ``self_consistent=False``, in which case the state is built from the
    density-independent part H(0, 0) alone.
    """
    if beta <= 0:
        raise ConfigError("inverse temperature must be positive")
    if (n_electrons is None) == (mu is None):
        raise ConfigError("give exactly one of n_electrons and mu")
    n_g = model.size
    rank = int(rank)
    if not 0 < rank < n_g:
        raise ConfigError(f"rank must lie in (0, {n_g}), got {rank}")
    if n_electrons is not None:
        if n_electrons <= 0:
            raise ConfigError("electron count must be positive")
        if n_electrons > rank:
            raise ConfigError(f"electron count {n_electrons} exceeds rank {rank}")

    if not model.density_dependent or not self_consistent:
        h0 = model.hamiltonian(0.0, np.zeros((n_g, n_g)) if model.density_dependent else None)
        phi, sigma, mu_t, mu_f, e = _fermi_dirac_from_matrix(h0, beta, n_electrons, mu, rank)
        return LowRankInit(phi, sigma, mu_t, beta, float(np.trace(sigma)), rank, e, mu_f)

    rho = np.zeros((n_g, n_g), dtype=complex)
    for it in range(1, scf_max_iter + 1):
        phi, sigma, mu_t, mu_f, e = _fermi_dirac_from_matrix(
            model.hamiltonian(0.0, rho), beta, n_electrons, mu, rank
        )
        rho_out = dense_density(phi, sigma)
        change = np.linalg.norm(rho_out - rho)
        logger.debug("scf iteration %d: |drho| = %.3e", it, change)
        if change <= scf_tol:
            return LowRankInit(
                phi, sigma, mu_t, beta, float(np.trace(sigma)), rank, e, mu_f, scf_iterations=it
            )
        rho = rho + scf_mixing * (rho_out - rho)
        if not np.all(np.isfinite(rho)):
            raise NumericalError("self-consistent initialization produced non-finite values")
    raise ConvergenceError(
        f"self-consistent initialization did not converge in {scf_max_iter} iterations",
        best_residual=change,
        iterations=scf_max_iter,
    )
