"""Error metrics, observables, conservation monitors and commutator bounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import DenseState, PTState, commutator, matmul
from .errors import ConfigError
from .model import dense_density

QUANTITIES = ("phi", "sigma", "psi", "rho")
NORMS = ("2", "fro")


def matrix_norm(a, kind="2"):
    if kind == "2":
        return float(np.linalg.norm(a, 2))
    if kind == "fro":
        return float(np.linalg.norm(a))
    raise ConfigError(f"unknown norm {kind!r}; expected one of {NORMS}")


def _extract(traj, k, quantity):
    state = traj.states[k]
    if quantity == "rho":
        return traj.density(k)
    if isinstance(state, DenseState):
        raise ConfigError(f"a dense trajectory has no {quantity!r} factor")
    if quantity == "sigma":
        return state.occupation
    return state.orbitals


def shared_samples(numeric, reference, rtol=1e-9):
    """Index pairs ``(i, j)`` with matching sample times."""
    t_num = numeric.times
    t_ref = reference.times
    scale = max(numeric.h, reference.h)
    pairs = []
    for i, t in enumerate(t_num):
        j = int(np.searchsorted(t_ref, t - rtol * scale))
        if j < len(t_ref) and abs(t_ref[j] - t) <= rtol * scale:
            pairs.append((i, j))
    return pairs


def relative_error(numeric, reference, quantity="rho", norm="2"):
    """sup_k |X_k - X(t_k)| / |X(t_k)| over the samples both trajectories share."""
    if quantity not in QUANTITIES:
        raise ConfigError(f"unknown quantity {quantity!r}; expected one of {QUANTITIES}")
    pairs = shared_samples(numeric, reference)
    if not pairs:
        raise ConfigError("trajectories share no sample times")
    worst = 0.0
    for i, j in pairs:
        x = _extract(numeric, i, quantity)
        x_ref = _extract(reference, j, quantity)
        if x.shape != x_ref.shape:
            raise ConfigError(f"{quantity} shapes differ: {x.shape} vs {x_ref.shape}")
        worst = max(worst, matrix_norm(x - x_ref, norm) / matrix_norm(x_ref, norm))
    return worst


@dataclass
class ErrorSeries:
    step_sizes: np.ndarray
    errors: dict = field(default_factory=dict)
    norm: str = "2"


def convergence_order(step_sizes, errors=None):
    """Least-squares slope of log(error) against log(h).

    Accepts either two sequences or an :class:`ErrorSeries` together with
    the name of the quantity to fit.
    """
    if isinstance(step_sizes, ErrorSeries):
        series = step_sizes
        step_sizes, errors = series.step_sizes, series.errors[errors]
    h = np.asarray(step_sizes, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size < 3 or h.size != e.size:
        raise ConfigError("a convergence order needs at least 3 (h, error) pairs")
    if np.any(h <= 0) or np.any(e <= 0):
        raise ConfigError("step sizes and errors must be positive to fit an order")
    slope, _ = np.polyfit(np.log(h), np.log(e), 1)
    return float(slope)


def dipole(grid, rho):
    """<x> = sum_j x_j rho_jj, for a dense density or a ``(phi, sigma)`` pair."""
    if isinstance(rho, tuple):
        phi, sigma = rho
        diag = np.einsum("ja,ja->j", phi @ sigma, phi.conj())
    else:
        diag = np.diagonal(rho)
    return float(np.real(grid.x @ diag))


def dipole_series(grid, traj):
    out = []
    for k, s in enumerate(traj.states):
        if isinstance(s, DenseState):
            out.append(dipole(grid, s.rho))
        else:
            out.append(dipole(grid, (s.orbitals, s.occupation)))
    return np.array(out)


@dataclass
class ConservationReport:
    times: np.ndarray
    ortho_defect: np.ndarray
    tr_sigma: np.ndarray
    tr_sigma2: np.ndarray
    tr_sigma3: np.ndarray

    def drift(self):
        return {
            "ortho_defect": float(np.max(self.ortho_defect)),
            "tr_sigma": float(np.max(np.abs(self.tr_sigma - self.tr_sigma[0]))),
            "tr_sigma2": float(np.max(np.abs(self.tr_sigma2 - self.tr_sigma2[0]))),
            "tr_sigma3": float(np.max(np.abs(self.tr_sigma3 - self.tr_sigma3[0]))),
        }


def conservation_report(traj):
    """Orthogonality defect and traces of sigma, sigma^2, sigma^3 per sample.

    For a dense trajectory the traces refer to rho and the orthogonality
    defect is reported as NaN.
    """
    ortho, t1, t2, t3 = [], [], [], []
    for s in traj.states:
        if isinstance(s, DenseState):
            ortho.append(np.nan)
            m = s.rho
        else:
            phi = s.orbitals
            ortho.append(np.linalg.norm(phi.conj().T @ phi - np.eye(phi.shape[1])))
            m = s.occupation
        m2 = m @ m
        t1.append(np.trace(m).real)
        t2.append(np.trace(m2).real)
        t3.append(np.trace(m2 @ m).real)
    return ConservationReport(traj.times, *(np.array(v) for v in (ortho, t1, t2, t3)))


PT_TERMS = ("c1", "ct1", "ctt1", "c2", "ct_c", "c_ct", "c3")


@dataclass
class BoundReport:
    """Per-sample values of the terms entering the local error bounds.

    ``projector`` and ``density`` map term names to arrays over samples:
    ``c1 = |[H,X]|``, ``ct1 = |[H_t,X]|``, ``ctt1 = |[H_tt,X]|``,
    ``c2 = |[H,[H,X]]|``, ``ct_c = |[H_t,[H,X]]|``, ``c_ct = |[H,[H_t,X]]|``,
    ``c3 = |[H,[H,[H,X]]]|`` for ``X = P`` and ``X = rho``.  ``orbital``
    holds ``h3psi``, ``hht``, ``hth`` and ``htt`` (|H^3 Psi|, |H H_t Psi|,
    |H_t H Psi|, |H_tt Psi|).
    """

    times: np.ndarray
    h: float
    projector: dict
    density: dict
    orbital: dict

    @staticmethod
    def third_derivative_bound(terms):
        return terms["ctt1"] + 2 * terms["ct_c"] + terms["c_ct"] + terms["c3"]

    @property
    def bound_projector(self):
        return self.third_derivative_bound(self.projector)

    @property
    def bound_density(self):
        return self.third_derivative_bound(self.density)

    @property
    def pt_aggregate(self):
        """(bound on |d^3 P| + bound on |d^3 rho|) h^2 per sample."""
        return (self.bound_projector + self.bound_density) * self.h**2

    @property
    def sd_aggregate(self):
        o = self.orbital
        return (o["h3psi"] + o["hht"] + 2 * o["hth"] + o["htt"]) * self.h**2

    @property
    def h3psi_term(self):
        return self.orbital["h3psi"] * self.h**2


def _nested_terms(ham, ham_t, ham_tt, x):
    c1 = commutator(ham, x)
    ct1 = commutator(ham_t, x)
    c2 = commutator(ham, c1)
    return {
        "c1": c1,
        "ct1": ct1,
        "ctt1": commutator(ham_tt, x),
        "c2": c2,
        "ct_c": commutator(ham_t, c1),
        "c_ct": commutator(ham, ct1),
        "c3": commutator(ham, c2),
    }


def commutator_bounds(model, traj, h):
    """Evaluate the commutator and non-commutator bound terms along ``traj``.

    Only density-independent Hamiltonians are supported: for them every
    term involving derivatives of H with respect to rho vanishes.
    """
    if model.density_dependent:
        raise ConfigError(
            "commutator bounds are only evaluated for density-independent models; "
            "the H_rho and H_rhorho contraction terms are not implemented"
        )
    proj = {k: [] for k in PT_TERMS}
    dens = {k: [] for k in PT_TERMS}
    orb = {k: [] for k in ("h3psi", "hht", "hth", "htt")}
    for s in traj.states:
        if isinstance(s, DenseState):
            raise ConfigError("commutator bounds need a low-rank (PT or SD) trajectory")
        phi, sigma = s.orbitals, s.occupation
        ham = model.hamiltonian(s.t)
        ham_t = model.d_t(s.t)
        ham_tt = model.d_tt(s.t)
        p = phi @ phi.conj().T
        rho = dense_density(phi, sigma)
        for store, x in ((proj, p), (dens, rho)):
            for key, val in _nested_terms(ham, ham_t, ham_tt, x).items():
                store[key].append(matrix_norm(val))
        hphi = matmul(ham, phi)
        h2phi = matmul(ham, hphi)
        orb["h3psi"].append(matrix_norm(matmul(ham, h2phi)))
        orb["hht"].append(matrix_norm(matmul(ham, matmul(ham_t, phi))))
        orb["hth"].append(matrix_norm(matmul(ham_t, hphi)))
        orb["htt"].append(matrix_norm(matmul(ham_tt, phi)))

    def arr(d):
        return {k: np.array(v) for k, v in d.items()}

    return BoundReport(traj.times, float(h), arr(proj), arr(dens), arr(orb))


def orbital_error_histogram(numeric, reference, energies=None, k=-1):
    """Per-orbital 2-norm errors at sample ``k`` (default: the final one).

    Returns ``(energies, errors)``; energies default to the initial orbital
    energies stored on the reference trajectory.
    """
    x = _extract(numeric, k, "phi")
    x_ref = _extract(reference, k, "phi")
    if x.shape != x_ref.shape:
        raise ConfigError(f"orbital blocks differ in shape: {x.shape} vs {x_ref.shape}")
    if abs(numeric.states[k].t - reference.states[k].t) > 1e-9 * max(numeric.h, reference.h):
        raise ConfigError("numeric and reference samples are at different times")
    if energies is None:
        energies = reference.energies if reference.energies is not None else numeric.energies
    errors = np.linalg.norm(x - x_ref, axis=0)
    if energies is None:
        energies = np.full(errors.shape, np.nan)
    return np.asarray(energies, dtype=float), errors
