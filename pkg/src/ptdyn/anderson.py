"""Anderson mixing for fixed-point problems ``x = T(x)`` on real vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, NumericalError

# history columns whose Gram matrix is worse conditioned than this are dropped
_MAX_GRAM_CONDITION = 1e13


@dataclass(frozen=True)
class SolverConfig:
    mixing_dim: int = 20
    damping: float = 0.5
    tol: float = 1e-10
    max_iter: int = 500
    reg: float = 1e-12
    qr_cleanup: bool = False

    def __post_init__(self):
        if int(self.mixing_dim) != self.mixing_dim or self.mixing_dim < 0:
            raise ConfigError(f"mixing dimension must be a nonnegative integer, got {self.mixing_dim}")
        if not 0 < self.damping <= 1:
            raise ConfigError(f"damping must lie in (0, 1], got {self.damping}")
        if not self.tol > 0:
            raise ConfigError(f"tolerance must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.reg < 0:
            raise ConfigError("regularization must be nonnegative")


@dataclass
class SolveReport:
    iterations: int
    residual: float
    evaluations: int
    converged: bool


def _relative_residual(r, x):
    return np.linalg.norm(r) / max(np.linalg.norm(x), 1.0)


def anderson_solve(fixed_point_map, x0, cfg: SolverConfig = SolverConfig()):
    """Solve ``x = T(x)`` by Anderson mixing with ``C0 = damping * I``.

    Keeps the last ``cfg.mixing_dim`` pairs of iterate differences ``S`` and
    residual differences ``Y`` and updates

        x_{k+1} = x_k - C0 (r_k - Y g) - S g,   g = argmin |Y g - r_k|

    with ``r_k = x_k - T(x_k)``.  With ``mixing_dim = 0`` this is the damped
    iteration ``x_{k+1} = x_k - damping * r_k``.  Returns ``(x, report)``
    where ``x`` is the first iterate meeting the relative tolerance.
    """
    x = np.array(x0, dtype=float, copy=True)
    if not np.all(np.isfinite(x)):
        raise NumericalError("initial guess contains non-finite values")
    alpha = cfg.damping
    depth = cfg.mixing_dim
    # difference pairs live in fixed slots; age < 0 marks an empty or dropped slot
    s_buf = y_buf = None
    gram = np.zeros((depth, depth))
    age = np.full(depth, -1)
    used = 0
    x_prev = r_prev = None
    best = np.inf

    for k in range(cfg.max_iter):
        tx = fixed_point_map(x)
        if not np.all(np.isfinite(tx)):
            raise NumericalError(f"fixed-point map returned non-finite values at iteration {k}")
        r = x - tx
        res = _relative_residual(r, x)
        best = min(best, res)
        if res <= cfg.tol:
            return x, SolveReport(k, res, k + 1, True)

        if x_prev is not None and depth > 0:
            if s_buf is None:
                s_buf = np.empty((depth, x.size))
                y_buf = np.empty((depth, x.size))
            if used < depth:
                slot = used
                used += 1
            else:
                slot = int(np.argmin(age))
            s_buf[slot] = x - x_prev
            np.subtract(r, r_prev, out=y_buf[slot])
            age[slot] = k
            row = y_buf[:used] @ y_buf[slot]
            gram[slot, :used] = row
            gram[:used, slot] = row

        step = alpha * r
        while used:
            act = np.flatnonzero(age[:used] >= 0)
            if act.size == 0:
                break
            sub = gram[np.ix_(act, act)]
            scale = np.trace(sub) / act.size
            if scale > 0 and np.linalg.cond(sub) < _MAX_GRAM_CONDITION:
                gamma = np.zeros(used)
                rhs = (y_buf[:used] @ r)[act]
                gamma[act] = np.linalg.solve(sub + cfg.reg * scale * np.eye(act.size), rhs)
                step += gamma @ s_buf[:used] - alpha * (gamma @ y_buf[:used])
                break
            # rank-deficient history: forget the oldest pair and retry
            age[act[np.argmin(age[act])]] = -1

        x_prev, r_prev = x, r
        x = x - step

    raise ConvergenceError(
        f"Anderson mixing did not converge in {cfg.max_iter} iterations "
        f"(best relative residual {best:.3e}, tolerance {cfg.tol:.1e})",
        best_residual=best,
        iterations=cfg.max_iter,
    )

