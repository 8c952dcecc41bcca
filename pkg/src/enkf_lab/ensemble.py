"""Ensemble containers, sample statistics, and keyed Gaussian sampling.

Every random draw is addressed by a DrawKey and generated from its own
counter-based stream (Philox keyed by a hash of the fields). Draws therefore
do not depend on evaluation order or ensemble size: the first N members of a
larger ensemble are bit-identical to the members of the size-N ensemble, as
if each role indexed one fixed infinite sequence of draws.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .model import GaussianState

_MASK64 = 0xFFFFFFFFFFFFFFFF
_KEY_STRUCT = struct.Struct("<Qqqqq")
_HEADER_STRUCT = struct.Struct("<qq")

# Jitter scales tried (relative to mean diagonal) when factoring a
# semidefinite covariance; PSD inputs such as a singular prior are legal.
_JITTER_SCALES = (1e-14, 1e-12, 1e-10)


class Role(IntEnum):
    """Separates the independent draw families of one experiment."""

    INIT = 0
    DATA_PERTURBATION = 1


@dataclass(frozen=True)
class DrawKey:
    """Address of one random draw.

    member is the 0-based column index; step 0 is reserved for the initial
    ensemble. Distinct keys map to statistically independent streams.
    """

    experiment_seed: int
    replicate: int
    step: int
    member: int
    role: Role

    def philox_key(self) -> np.ndarray:
        # 128-bit Philox key from a SHA-256 of the packed fields; stable
        # across platforms and sessions.
        payload = _KEY_STRUCT.pack(
            self.experiment_seed & _MASK64,
            self.replicate,
            self.step,
            self.member,
            int(self.role),
        )
        digest = hashlib.sha256(payload).digest()
        return np.frombuffer(digest[:16], dtype=np.uint64).copy()


@dataclass(frozen=True, eq=False)
class Ensemble:
    """m x N matrix with ensemble members as columns; N >= 2 always.

    Single-member ensembles are rejected: the 1/N sample covariance is
    identically zero there and the size asymptotics are meaningless.
    """

    members: np.ndarray

    def __post_init__(self):
        members = np.asarray(self.members, dtype=np.float64)
        if members.ndim != 2:
            raise ValueError(f"members must be a 2-d array, got ndim {members.ndim}")
        if members.shape[1] < 2:
            raise ValueError(f"ensemble needs at least 2 members, got {members.shape[1]}")
        if not np.all(np.isfinite(members)):
            raise ValueError("ensemble entries must be finite")
        object.__setattr__(self, "members", members)

    @property
    def state_dim(self) -> int:
        return self.members.shape[0]

    @property
    def size(self) -> int:
        return self.members.shape[1]


def sample_mean(ensemble: Ensemble) -> np.ndarray:
    """Equally weighted mean of the member columns."""
    return ensemble.members.mean(axis=1)


def sample_cov(ensemble: Ensemble) -> np.ndarray:
    """1/N-normalized sample covariance of the members, symmetrized.

    Note the 1/N (not 1/(N-1)) normalization: this is the second-moment
    covariance mean(x x^T) - mean(x) mean(x)^T, evaluated in centered form.
    """
    x = ensemble.members
    centered = x - x.mean(axis=1, keepdims=True)
    cov = (centered @ centered.T) / x.shape[1]
    return 0.5 * (cov + cov.T)


def _cov_factor(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular G with G G^T = cov (jittered if only semidefinite)."""
    if not cov.any():
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    base = np.trace(cov) / cov.shape[0]
    eye = np.eye(cov.shape[0])
    for eps in _JITTER_SCALES:
        try:
            return np.linalg.cholesky(cov + (eps * base) * eye)
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError(
        "covariance factorization failed even after jitter fallback"
    )


def gaussian_draw(key: DrawKey, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """One draw from N(mean, cov) on the key's stream.

    Returns mean + G z with G a fixed lower-triangular factor of cov and z
    standard normal from the keyed stream; bit-identical for identical
    (key, mean, cov).
    """
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    factor = _cov_factor(cov)
    gen = np.random.Generator(np.random.Philox(key=key.philox_key()))
    return mean + factor @ gen.standard_normal(mean.shape[0])


def _reseat(bit_gen: np.random.Philox, key: np.ndarray) -> None:
    # Rewinding a shared Philox to a fresh keyed state is bit-identical to
    # constructing Philox(key=...) anew and roughly 10x cheaper.
    state = bit_gen.state
    state["state"]["counter"][:] = 0
    state["state"]["key"][:] = key
    state["buffer_pos"] = 4
    state["has_uint32"] = 0
    state["uinteger"] = 0
    bit_gen.state = state


def _draw_ensemble(
    seed: int, replicate: int, step: int, role: Role, n: int,
    mean: np.ndarray, cov: np.ndarray,
) -> Ensemble:
    if n < 2:
        raise ValueError(f"ensemble size must be at least 2, got {n}")
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    factor = _cov_factor(cov)
    dim = mean.shape[0]
    bit_gen = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
    gen = np.random.Generator(bit_gen)
    members = np.empty((dim, n))
    for i in range(n):
        _reseat(bit_gen, DrawKey(seed, replicate, step, i, role).philox_key())
        # Per-column matvec keeps member i independent of n (prefix property).
        members[:, i] = mean + factor @ gen.standard_normal(dim)
    return Ensemble(members)


def init_ensemble(seed: int, replicate: int, n: int, init: GaussianState) -> Ensemble:
    """Draw the initial ensemble: column i ~ N(u0, Q0) on its INIT stream.

    The first N columns for any larger size N' > N are bit-identical to the
    size-N ensemble.
    """
    return _draw_ensemble(seed, replicate, 0, Role.INIT, n, init.mean, init.cov)


def perturb_data(
    seed: int, replicate: int, k: int, n: int, data: np.ndarray, r_cov: np.ndarray
) -> Ensemble:
    """Draw the step-k perturbed-data ensemble: column i ~ N(d, R).

    Streams are separated from the initial-ensemble streams by role, and the
    same prefix property applies.
    """
    if k < 1:
        raise ValueError(f"data perturbations exist only for steps k >= 1, got {k}")
    return _draw_ensemble(seed, replicate, k, Role.DATA_PERTURBATION, n, data, r_cov)


# ---------------------------------------------------------------------------
# Serialization: flat binary (header m, N as little-endian int64, then
# column-major float64 payload) for checkpointing, CSV (one member per row)
# for inspection.
# ---------------------------------------------------------------------------


def write_ensemble(path, ensemble: Ensemble) -> None:
    payload = ensemble.members.astype("<f8").ravel(order="F").tobytes()
    with open(Path(path), "wb") as fh:
        fh.write(_HEADER_STRUCT.pack(ensemble.state_dim, ensemble.size))
        fh.write(payload)


def read_ensemble(path) -> Ensemble:
    with open(Path(path), "rb") as fh:
        header = fh.read(_HEADER_STRUCT.size)
        if len(header) != _HEADER_STRUCT.size:
            raise ValueError(f"truncated ensemble file {path}")
        dim, n = _HEADER_STRUCT.unpack(header)
        payload = fh.read()
    expected = dim * n * 8
    if len(payload) != expected:
        raise ValueError(
            f"ensemble file {path} has {len(payload)} payload bytes, expected {expected}"
        )
    members = np.frombuffer(payload, dtype="<f8").reshape((dim, n), order="F")
    return Ensemble(members.copy())


def write_ensemble_csv(path, ensemble: Ensemble) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for i in range(ensemble.size):
            writer.writerow(f"{v:.17g}" for v in ensemble.members[:, i])
