"""Experiment drivers behind the command-line interface.

Each driver takes an :class:`ExperimentConfig`, runs the propagations it
needs (references go through the on-disk cache) and returns plain result
objects; writing files is left to :mod:`ptdyn.cli`.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import cached_propagation, load_trajectory
from .config import ExperimentConfig
from .diagnostics import (
    commutator_bounds,
    conservation_report,
    convergence_order,
    dipole_series,
    orbital_error_histogram,
    relative_error,
    shared_samples,
)
from .errors import ConfigError
from .integrators import propagate
from .model import DrivenMatrixModel, LatticeModel, build_grid, fermi_dirac_init

logger = logging.getLogger(__name__)

CACHE_FORMAT_VERSION = 1


def build_model(cfg: ExperimentConfig) -> LatticeModel:
    m = cfg.model
    return LatticeModel(
        build_grid(m.L, m.m),
        m.kind,
        potential=m.potential,
        amplitude=m.amplitude,
        omega=m.omega,
        kappa=m.kappa,
        eps0=m.eps0,
        laplacian=m.laplacian,
    )


def build_init(cfg: ExperimentConfig, model, n_electrons=None, rank=None):
    i = cfg.init
    if n_electrons is None and i.mu is None:
        n_electrons = i.n_electrons
    return fermi_dirac_init(
        model,
        i.beta,
        n_electrons=n_electrons,
        mu=i.mu if n_electrons is None else None,
        rank=i.rank if rank is None else rank,
        self_consistent=i.self_consistent,
    )


def samples_per(h, sample_dt):
    """Steps between stored samples so that samples land every ``sample_dt``."""
    return max(1, int(round(sample_dt / h)))


def map_ordered(fn, items, threads=1):
    """``[fn(x) for x in items]``, optionally on a thread pool; order is kept."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, x) for x in items]
        return [f.result() for f in futures]


@dataclass
class Propagator:
    """Bundles model, initial state and caching policy for one configuration."""

    cfg: ExperimentConfig
    model: object
    init: object
    use_cache: bool = True
    cache_dir: object = None

    def payload(self, scheme, h, t_final, sample_every):
        init = self.init
        return {
            "version": CACHE_FORMAT_VERSION,
            "model": self.model.params(),
            "init": {
                "beta": init.beta,
                "n_electrons": init.n_electrons,
                "rank": init.rank,
                "mu": init.mu,
                "self_consistent": self.cfg.init.self_consistent,
            },
            "scheme": scheme,
            "h": float(h),
            "t_final": float(t_final),
            "sample_every": int(sample_every),
            "solver": asdict(self.cfg.solver),
        }

    def run(self, scheme, h, t_final, sample_every=1, cache=False):
        def compute():
            return propagate(self.model, self.init, scheme, h, t_final, sample_every, self.cfg.solver)

        if not cache:
            return compute()
        traj, hit = cached_propagation(
            self.payload(scheme, h, t_final, sample_every),
            compute,
            enabled=self.use_cache,
            directory=self.cache_dir,
        )
        logger.info("%s reference at h=%g: %s", scheme, h, "cache hit" if hit else "computed")
        return traj

    def reference(self, scheme, t_final):
        ref = self.cfg.reference
        if ref.file:
            traj = load_trajectory(ref.file)
            if traj.times[-1] < t_final - 1e-12:
                raise ConfigError(f"reference file {ref.file} ends before t = {t_final}")
            return traj
        ref_scheme = scheme if ref.scheme == "same" else ref.scheme
        return self.run(
            ref_scheme, ref.h, t_final, samples_per(ref.h, self.cfg.run.sample_dt), cache=True
        )


def make_propagator(cfg, use_cache=True, cache_dir=None, n_electrons=None, rank=None):
    model = build_model(cfg)
    init = build_init(cfg, model, n_electrons=n_electrons, rank=rank)
    return Propagator(cfg, model, init, use_cache, cache_dir)


# -- run ---------------------------------------------------------------------


@dataclass
class RunResult:
    trajectory: object
    conservation: object
    mu: float


def run_experiment(cfg: ExperimentConfig, use_cache=True, cache_dir=None) -> RunResult:
    prop = make_propagator(cfg, use_cache, cache_dir)
    r = cfg.run
    traj = prop.run(r.scheme, r.h, r.t_final, samples_per(r.h, r.sample_dt))
    return RunResult(traj, conservation_report(traj), prop.init.mu)


# -- sweep over step sizes -----------------------------------------------------

ERROR_QUANTITIES = {"pt": ("phi", "sigma", "rho"), "sd": ("psi", "rho"), "dense": ("rho",)}


@dataclass
class SweepHResult:
    step_sizes: list
    errors: dict  # scheme -> quantity -> list over h
    slopes: dict  # scheme -> quantity -> slope or None
    norm: str
    mu: float


def _errors_against(traj, ref, quantities, norm):
    return {q: relative_error(traj, ref, q, norm) for q in quantities}


def sweep_h(cfg: ExperimentConfig, schemes=("pt", "sd"), threads=1, use_cache=True, cache_dir=None):
    hs = list(cfg.run.h_list) or [cfg.run.h]
    prop = make_propagator(cfg, use_cache, cache_dir)
    t_final = cfg.run.t_final
    refs = {s: prop.reference(s, t_final) for s in schemes}

    def one(job):
        scheme, h = job
        traj = prop.run(scheme, h, t_final, samples_per(h, cfg.run.sample_dt))
        if not shared_samples(traj, refs[scheme]):
            raise ConfigError(f"h={h}: no sample times shared with the reference")
        return _errors_against(traj, refs[scheme], ERROR_QUANTITIES[scheme], cfg.run.norm)

    jobs = [(s, h) for s in schemes for h in hs]
    results = map_ordered(one, jobs, threads)
    errors = {s: {q: [] for q in ERROR_QUANTITIES[s]} for s in schemes}
    for (s, _), res in zip(jobs, results):
        for q, v in res.items():
            errors[s][q].append(v)
    slopes = {}
    for s in schemes:
        slopes[s] = {}
        for q, vals in errors[s].items():
            ok = len(hs) >= 3 and all(v > 0 for v in vals)
            slopes[s][q] = convergence_order(hs, vals) if ok else None
    return SweepHResult(hs, errors, slopes, cfg.run.norm, prop.init.mu)


# -- sweep over electron counts ------------------------------------------------


@dataclass
class NePoint:
    n_electrons: float
    rank: int
    mu: float
    errors: dict  # e.g. "pt_phi", "sd_psi", "pt_rho_2", "sd_rho_fro"
    bound_pt: float
    bound_sd: float
    h3psi: float
    hist_energies: np.ndarray = field(repr=False)
    hist_pt: np.ndarray = field(repr=False)
    hist_sd: np.ndarray = field(repr=False)


def bound_maxima(model, traj, h):
    rep = commutator_bounds(model, traj, h)
    return float(rep.pt_aggregate.max()), float(rep.sd_aggregate.max()), float(rep.h3psi_term.max())


def sweep_ne_point(cfg, n_e, use_cache=True, cache_dir=None, with_errors=True):
    if cfg.model.kind != "linear":
        raise ConfigError("the electron-count sweep needs the linear model (bound terms assume dH/drho = 0)")
    rank = int(round(n_e)) + cfg.sweep.rank_offset
    prop = make_propagator(cfg, use_cache, cache_dir, n_electrons=n_e, rank=rank)
    h, t_final = cfg.run.h, cfg.run.t_final
    every = samples_per(h, cfg.run.sample_dt)
    pt = prop.run("pt", h, t_final, every)
    b_pt, b_sd, h3 = bound_maxima(prop.model, pt, h)
    errors = {}
    hist_e = hist_pt = hist_sd = np.array([])
    if with_errors:
        sd = prop.run("sd", h, t_final, every)
        pt_ref = prop.reference("pt", t_final)
        sd_ref = prop.reference("sd", t_final)
        errors["pt_phi"] = relative_error(pt, pt_ref, "phi", "2")
        errors["pt_sigma"] = relative_error(pt, pt_ref, "sigma", "2")
        errors["sd_psi"] = relative_error(sd, sd_ref, "psi", "2")
        for norm in ("2", "fro"):
            errors[f"pt_rho_{norm}"] = relative_error(pt, pt_ref, "rho", norm)
            errors[f"sd_rho_{norm}"] = relative_error(sd, sd_ref, "rho", norm)
        hist_e, hist_pt = orbital_error_histogram(pt, pt_ref, prop.init.energies)
        _, hist_sd = orbital_error_histogram(sd, sd_ref, prop.init.energies)
    return NePoint(n_e, rank, prop.init.mu, errors, b_pt, b_sd, h3, hist_e, hist_pt, hist_sd)


def sweep_ne(cfg: ExperimentConfig, threads=1, use_cache=True, cache_dir=None, with_errors=True):
    counts = list(cfg.sweep.n_electrons) or [cfg.init.n_electrons]
    return map_ordered(
        lambda n: sweep_ne_point(cfg, n, use_cache, cache_dir, with_errors), counts, threads
    )


# -- dipole ------------------------------------------------------------------


@dataclass
class DipoleResult:
    times: np.ndarray
    pt: np.ndarray
    sd: np.ndarray
    ref: np.ndarray

    @property
    def sup_pt(self):
        return float(np.max(np.abs(self.pt - self.ref)))

    @property
    def sup_sd(self):
        return float(np.max(np.abs(self.sd - self.ref)))


def dipole_experiment(cfg: ExperimentConfig, threads=1, use_cache=True, cache_dir=None):
    prop = make_propagator(cfg, use_cache, cache_dir)
    h = cfg.dipole.h_coarse
    t_final = cfg.run.t_final
    ref_scheme = "sd" if cfg.reference.scheme == "same" else cfg.reference.scheme
    if cfg.reference.file:
        ref = load_trajectory(cfg.reference.file)
    else:
        ref = prop.run(ref_scheme, cfg.reference.h, t_final, samples_per(cfg.reference.h, h), cache=True)
    pt, sd = map_ordered(lambda s: prop.run(s, h, t_final, 1), ("pt", "sd"), threads)
    pairs = shared_samples(pt, ref)
    if len(pairs) != len(pt):
        raise ConfigError("the reference does not provide every coarse sample time")
    grid = prop.model.grid
    idx = [j for _, j in pairs]
    d_ref = dipole_series(grid, ref)[idx]
    return DipoleResult(pt.times, dipole_series(grid, pt), dipole_series(grid, sd), d_ref)


# -- bounds --------------------------------------------------------------------


@dataclass
class ScanResult:
    eps: np.ndarray
    pt_aggregate: np.ndarray
    sd_aggregate: np.ndarray
    h3psi: np.ndarray

    def exponent(self, values):
        return float(np.polyfit(np.log(self.eps), np.log(values), 1)[0])

    @property
    def pt_exponent(self):
        return self.exponent(self.pt_aggregate)

    @property
    def sd_exponent(self):
        return self.exponent(self.sd_aggregate)


def two_level_model(scan, eps):
    static = np.array([[-scan.detuning, scan.coupling], [scan.coupling, scan.detuning]])
    return DrivenMatrixModel(static, np.diag([1.0, -1.0]), omega=scan.omega, scale=eps)


def adiabatic_scan(cfg: ExperimentConfig) -> ScanResult:
    """Maxima over time of the bound aggregates for H/eps on a two-level model.

    The state starts in the ground state of H(0) and is propagated with
    PT-IM at the fine step ``scan.h``; the aggregates are reported for the
    nominal step ``run.h``.
    """
    scan = cfg.scan
    if len(scan.eps) < 2:
        raise ConfigError("the adiabatic scan needs at least two eps values")
    pt_agg, sd_agg, h3 = [], [], []
    for eps in scan.eps:
        model = two_level_model(scan, eps)
        init = fermi_dirac_init(model, 1.0, n_electrons=1, rank=1)
        traj = propagate(model, init, "pt", scan.h, scan.t_final, scan.sample_every, cfg.solver)
        a, b, c = bound_maxima(model, traj, cfg.run.h)
        pt_agg.append(a)
        sd_agg.append(b)
        h3.append(c)
    return ScanResult(np.array(scan.eps), np.array(pt_agg), np.array(sd_agg), np.array(h3))


def bounds_along_run(cfg: ExperimentConfig, use_cache=True, cache_dir=None):
    """Per-sample bound terms along the PT trajectory of the run section."""
    if cfg.model.kind != "linear":
        raise ConfigError("bound terms are only available for the linear model")
    prop = make_propagator(cfg, use_cache, cache_dir)
    r = cfg.run
    traj = prop.run("pt", r.h, r.t_final, samples_per(r.h, r.sample_dt))
    return commutator_bounds(prop.model, traj, r.h)
