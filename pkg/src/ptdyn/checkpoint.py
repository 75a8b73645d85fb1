"""Binary trajectory checkpoints and the on-disk reference cache.

File layout (all little-endian)::

    7 bytes   magic b"PTPROP1"
    1 byte    kind: b"P" (PT), b"S" (Schroedinger gauge) or b"D" (dense)
    int64     n_g, n, count, sample_every
    float64   h, mu
    float64   n initial orbital energies (NaN when unknown)
    count x   float64 t, then the complex blocks of the state with real and
              imaginary parts interleaved, row-major:
              P: phi (n_g x n), sigma (n x n)
              S: psi (n_g x n), sigma0 (n x n)
              D: rho (n_g x n_g)

Only sampled states are stored; per-step solver reports are not.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .dynamics import DenseState, PTState, SDState
from .errors import ConfigError
from .integrators import Trajectory

MAGIC = b"PTPROP1"
_HEADER = struct.Struct("<qqqqdd")
_KINDS = {"pt": b"P", "sd": b"S", "dense": b"D"}
_SCHEMES = {v: k for k, v in _KINDS.items()}
CACHE_ENV = "PTDYN_CACHE_DIR"


def _blocks(state):
    if isinstance(state, PTState):
        return state.phi, state.sigma
    if isinstance(state, SDState):
        return state.psi, state.sigma0
    return (state.rho,)


def _shapes(kind, n_g, n):
    if kind == "dense":
        return [(n_g, n_g)]
    return [(n_g, n), (n, n)]


def save_trajectory(traj: Trajectory, path):
    """Write ``traj`` to ``path`` atomically."""
    if not traj.states:
        raise ConfigError("cannot save an empty trajectory")
    first = _blocks(traj.states[0])
    n_g = first[0].shape[0]
    n = first[0].shape[1] if traj.scheme != "dense" else n_g
    energies = np.full(n, np.nan) if traj.energies is None else np.asarray(traj.energies, float)
    if energies.shape != (n,):
        energies = np.full(n, np.nan)
    mu = np.nan if traj.mu is None else float(traj.mu)
    parts = [
        MAGIC,
        _KINDS[traj.scheme],
        _HEADER.pack(n_g, n, len(traj.states), traj.sample_every, traj.h, mu),
        energies.astype("<f8").tobytes(),
    ]
    for s in traj.states:
        parts.append(struct.pack("<d", s.t))
        for b in _blocks(s):
            parts.append(np.ascontiguousarray(b, dtype="<c16").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            for p in parts:
                fh.write(p)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_trajectory(path) -> Trajectory:
    data = Path(path).read_bytes()
    if data[:7] != MAGIC:
        raise ConfigError(f"{path}: not a trajectory checkpoint")
    kind = _SCHEMES.get(data[7:8])
    if kind is None:
        raise ConfigError(f"{path}: unknown trajectory kind {data[7:8]!r}")
    off = 8
    n_g, n, count, sample_every, h, mu = _HEADER.unpack_from(data, off)
    off += _HEADER.size
    energies = np.frombuffer(data, "<f8", n, off).copy()
    off += 8 * n
    shapes = _shapes(kind, n_g, n)
    per_sample = 8 + 16 * sum(a * b for a, b in shapes)
    if len(data) != off + count * per_sample:
        raise ConfigError(f"{path}: truncated or corrupt checkpoint")
    states = []
    for _ in range(count):
        (t,) = struct.unpack_from("<d", data, off)
        off += 8
        blocks = []
        for shape in shapes:
            size = shape[0] * shape[1]
            blocks.append(np.frombuffer(data, "<c16", size, off).reshape(shape).astype(complex))
            off += 16 * size
        if kind == "pt":
            states.append(PTState(t, *blocks))
        elif kind == "sd":
            states.append(SDState(t, *blocks))
        else:
            states.append(DenseState(t, *blocks))
    traj = Trajectory(kind, h, sample_every, states)
    traj.energies = None if np.all(np.isnan(energies)) else energies
    traj.mu = None if np.isnan(mu) else mu
    return traj


def cache_dir():
    root = os.environ.get(CACHE_ENV)
    if root:
        return Path(root)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "ptdyn"


def cache_key(payload: dict) -> str:
    """Content hash of a JSON-serializable description of a propagation."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=repr)
    return hashlib.sha256(text.encode()).hexdigest()


def cached_propagation(payload: dict, compute, enabled=True, directory=None):
    """Return the trajectory stored under the hash of ``payload``, computing it on a miss.

    Returns ``(trajectory, hit)``.
    """
    if not enabled:
        return compute(), False
    path = Path(directory or cache_dir()) / f"{cache_key(payload)}.ptprop"
    if path.exists():
        try:
            return load_trajectory(path), True
        except ConfigError:
            path.unlink()
    traj = compute()
    save_trajectory(traj, path)
    return traj, False
