"""Implicit midpoint steppers (PT and Schroedinger gauge) and a dense RK4 reference."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .anderson import SolverConfig, anderson_solve
from .dynamics import DenseState, PTState, SDState, matmul, rhs_von_neumann
from .errors import ConfigError, NumericalError, PropagationError, PTDynError, SingularMidpointError
from .model import LowRankInit, dense_density

logger = logging.getLogger(__name__)

SCHEMES = ("pt", "sd", "dense")
MAX_STEPS = 10**9
MAX_GRAM_CONDITION = 1e8


@dataclass
class StepReport:
    iterations: int
    residual: float
    ortho_defect: float
    wall_time: float
    converged: bool = True


def _pack(*blocks):
    return np.concatenate([np.ascontiguousarray(b).ravel() for b in blocks]).view(np.float64)


def _unpack(x, shapes):
    z = x.view(np.complex128)
    out, start = [], 0
    for shape in shapes:
        size = shape[0] * shape[1]
        out.append(z[start : start + size].reshape(shape))
        start += size
    return out


def ortho_defect(phi):
    return float(np.linalg.norm(phi.conj().T @ phi - np.eye(phi.shape[1])))


def _density_arg(model, phi, sigma):
    return (phi, sigma) if model.density_dependent else None


def _check_step(h):
    h = float(h)
    if not (np.isfinite(h) and h > 0):
        raise ConfigError(f"step size must be positive, got {h}")
    return h


def pt_im_step(model, state: PTState, h, cfg: SolverConfig = SolverConfig()):
    """One implicit-midpoint step of the parallel-transport dynamics.

    Solves

        Phi+   = Phi   - i h (I - P_m) H_m Phi_m
        sigma+ = sigma - i h [Phi_m^dagger H_m Phi_m, sigma_m]

    with midpoint averages ``Phi_m``, ``sigma_m``, the projector
    ``P_m = Phi_m (Phi_m^dagger Phi_m)^{-1} Phi_m^dagger`` and
    ``H_m = H(t + h/2, Phi_m sigma_m Phi_m^dagger)``.
    """
    h = _check_step(h)
    start = time.perf_counter()
    phi0, sigma0 = state.phi, state.sigma
    shapes = (phi0.shape, sigma0.shape)
    t_mid = state.t + 0.5 * h
    h_fixed = None if model.density_dependent else model.hamiltonian(t_mid)
    eye = np.eye(phi0.shape[1])

    def step_map(x):
        phi1, sigma1 = _unpack(x, shapes)
        phi_m = 0.5 * (phi0 + phi1)
        sigma_m = 0.5 * (sigma0 + sigma1)
        ham = h_fixed if h_fixed is not None else model.hamiltonian(t_mid, (phi_m, sigma_m))
        hphi = matmul(ham, phi_m)
        gram = phi_m.conj().T @ phi_m
        # |G - I|_F < 1/2 bounds cond(G) by 3; only then skip the SVD
        if np.linalg.norm(gram - eye) >= 0.5 and np.linalg.cond(gram) > MAX_GRAM_CONDITION:
            raise SingularMidpointError("midpoint orbitals are nearly linearly dependent")
        reduced = phi_m.conj().T @ hphi
        dphi = hphi - phi_m @ np.linalg.solve(gram, reduced)
        dsigma = reduced @ sigma_m - sigma_m @ reduced
        return _pack(phi0 - 1j * h * dphi, sigma0 - 1j * h * dsigma)

    x, rep = anderson_solve(step_map, _pack(phi0, sigma0), cfg)
    phi1, sigma1 = (a.copy() for a in _unpack(x, shapes))
    sigma1 = 0.5 * (sigma1 + sigma1.conj().T)
    if cfg.qr_cleanup:
        phi1 = _qr_orthonormalize(phi1)
    new = PTState(state.t + h, phi1, sigma1)
    report = StepReport(rep.iterations, rep.residual, ortho_defect(phi1), time.perf_counter() - start)
    return new, report


def sd_im_step(model, state: SDState, h, cfg: SolverConfig = SolverConfig()):
    """One implicit-midpoint step of the Schroedinger-gauge dynamics.

    ``i (Psi+ - Psi) / h = H(t + h/2, Psi_m sigma0 Psi_m^dagger) Psi_m``.
    """
    h = _check_step(h)
    start = time.perf_counter()
    psi0, sigma0 = state.psi, state.sigma0
    shapes = (psi0.shape,)
    t_mid = state.t + 0.5 * h
    h_fixed = None if model.density_dependent else model.hamiltonian(t_mid)

    def step_map(x):
        (psi1,) = _unpack(x, shapes)
        psi_m = 0.5 * (psi0 + psi1)
        ham = h_fixed if h_fixed is not None else model.hamiltonian(t_mid, (psi_m, sigma0))
        return _pack(psi0 - 1j * h * matmul(ham, psi_m))

    x, rep = anderson_solve(step_map, _pack(psi0), cfg)
    (psi1,) = _unpack(x, shapes)
    psi1 = psi1.copy()
    if cfg.qr_cleanup:
        psi1 = _qr_orthonormalize(psi1)
    new = SDState(state.t + h, psi1, sigma0)
    report = StepReport(rep.iterations, rep.residual, ortho_defect(psi1), time.perf_counter() - start)
    return new, report


def _qr_orthonormalize(phi):
    q, r = np.linalg.qr(phi)
    # keep column phases continuous with the input
    return q * np.sign(np.real(np.diag(r)))[None, :]


def rk4_dense_step(model, t, rho, h):
    """Classical RK4 step of the von Neumann equation for a dense density."""
    h = _check_step(h)
    k1 = rhs_von_neumann(model, t, rho)
    k2 = rhs_von_neumann(model, t + h / 2, rho + (h / 2) * k1)
    k3 = rhs_von_neumann(model, t + h / 2, rho + (h / 2) * k2)
    k4 = rhs_von_neumann(model, t + h, rho + h * k3)
    out = rho + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite density after RK4 step at t={t}")
    return 0.5 * (out + out.conj().T)


def _dense_step(model, state: DenseState, h, cfg=None):
    start = time.perf_counter()
    rho = rk4_dense_step(model, state.t, state.rho, h)
    return DenseState(state.t + h, rho), StepReport(0, 0.0, 0.0, time.perf_counter() - start)


_STEPPERS = {"pt": pt_im_step, "sd": sd_im_step, "dense": _dense_step}


@dataclass
class Trajectory:
    """States sampled every ``sample_every`` steps, plus one report per step."""

    scheme: str
    h: float
    sample_every: int
    states: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    energies: np.ndarray | None = None
    mu: float | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def __len__(self):
        return len(self.states)

    def orbitals(self, k):
        return self.states[k].orbitals

    def occupation(self, k):
        return self.states[k].occupation

    def density(self, k):
        s = self.states[k]
        if isinstance(s, DenseState):
            return s.rho
        return dense_density(s.orbitals, s.occupation)


def initial_state(init, scheme, t0=0.0):
    """Turn a :class:`LowRankInit` (or a state) into the start state of ``scheme``."""
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if isinstance(init, LowRankInit):
        phi, sigma = init.phi, np.asarray(init.sigma, dtype=complex)
    elif isinstance(init, PTState):
        phi, sigma = init.phi, init.sigma
        t0 = init.t
    elif isinstance(init, SDState):
        phi, sigma = init.psi, np.asarray(init.sigma0, dtype=complex)
        t0 = init.t
    elif isinstance(init, DenseState):
        if scheme != "dense":
            raise ConfigError("a dense density can only be propagated with the dense scheme")
        return init
    else:
        raise ConfigError(f"cannot start a propagation from {type(init).__name__}")
    phi = np.ascontiguousarray(phi, dtype=complex)
    if scheme == "pt":
        return PTState(t0, phi, np.array(sigma, dtype=complex))
    if scheme == "sd":
        return SDState(t0, phi, np.array(sigma, dtype=complex))
    return DenseState(t0, dense_density(phi, sigma))


def step_count(h, t_final):
    h = _check_step(h)
    if t_final < 0:
        raise ConfigError("final time must be nonnegative")
    n = int(round(t_final / h))
    if n > MAX_STEPS:
        raise ConfigError(f"{n} steps exceed the limit of {MAX_STEPS}")
    if abs(n * h - t_final) > 1e-9 * max(1.0, t_final):
        raise ConfigError(f"final time {t_final} is not a multiple of the step {h}")
    return n


def propagate(model, init, scheme, h, t_final, sample_every=1, cfg: SolverConfig = SolverConfig()):
    """Propagate on the uniform grid ``t_n = n h`` and return a :class:`Trajectory`.

    The initial state and every ``sample_every``-th state are kept, as well
    as the final state.  A failing step raises :class:`PropagationError`
    with the partial trajectory attached.
    """
    n_steps = step_count(h, t_final)
    if sample_every < 1:
        raise ConfigError("sample_every must be a positive integer")
    state = initial_state(init, scheme)
    t0 = state.t
    traj = Trajectory(scheme, float(h), int(sample_every), [state])
    if isinstance(init, LowRankInit):
        traj.energies = init.energies
        traj.mu = init.mu
    stepper = _STEPPERS[scheme]
    for n in range(1, n_steps + 1):
        try:
            new, report = stepper(model, state, h, cfg)
        except PTDynError as exc:
            raise PropagationError(f"step {n} (t={state.t:.6g}) failed: {exc}", step=n, trajectory=traj) from exc
        # pin time to the uniform grid instead of accumulating roundoff
        state = type(new)(t0 + n * h, *_payload(new))
        traj.reports.append(report)
        if n % sample_every == 0 or n == n_steps:
            traj.states.append(state)
    logger.debug(
        "%s: %d steps, mean %.2f iterations",
        scheme,
        n_steps,
        np.mean([r.iterations for r in traj.reports]) if traj.reports else 0.0,
    )
    return traj


def _payload(state):
    if isinstance(state, PTState):
        return state.phi, state.sigma
    if isinstance(state, SDState):
        return state.psi, state.sigma0
    return (state.rho,)
