"""Linear-Gaussian filtering problems: per-step affine dynamics, observation
operators, data vectors, and the Gaussian initial condition.

Step indices are 1-based throughout the library; index 0 denotes the initial
state before any dynamics or data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Symmetry is checked relative to the matrix max-norm; the tolerance covers
# double-precision round-off from ordinary construction.
SYMMETRY_RTOL = 1e-12
# Covariances may be semidefinite; eigenvalues are allowed to dip this far
# (relative to the spectral norm) below zero before being called indefinite.
PSD_EIG_RTOL = 1e-10


class ModelFormatError(ValueError):
    """A model file or dict cannot be parsed into a LinearModel."""


class ValidationError(ValueError):
    """A structurally well-formed model violates its constraints."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _as_array(value, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != ndim:
        kind = "matrix" if ndim == 2 else "vector"
        raise ValueError(f"{name} must be a {kind}, got array of ndim {arr.ndim}")
    return arr


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Gaussian state estimate with mean vector and covariance matrix."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_array(self.mean, "mean", 1)
        cov = _as_array(self.cov, "cov", 2)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError(
                f"cov shape {cov.shape} does not match mean dimension {mean.shape[0]}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def validate_gaussian_state(state: GaussianState) -> None:
    """Check symmetry and positive semidefiniteness of the covariance.

    Raises ValueError on violation. Semidefinite (including singular and all
    zero) covariances are legal.
    """
    if not _is_symmetric(state.cov):
        raise ValueError("state covariance is not symmetric")
    eigs = np.linalg.eigvalsh(0.5 * (state.cov + state.cov.T))
    bound = -PSD_EIG_RTOL * max(np.abs(eigs).max(), 1e-300)
    if eigs.min() < bound:
        raise ValueError(
            f"state covariance is not positive semidefinite (min eigenvalue {eigs.min():g})"
        )


@dataclass(frozen=True, eq=False)
class StepSpec:
    """One filtering step: dynamics u -> A u + b, observation operator H,
    data-error covariance R, and the observed data vector."""

    A: np.ndarray
    b: np.ndarray
    H: np.ndarray
    R: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _as_array(self.A, "A", 2))
        object.__setattr__(self, "b", _as_array(self.b, "b", 1))
        object.__setattr__(self, "H", _as_array(self.H, "H", 2))
        object.__setattr__(self, "R", _as_array(self.R, "R", 2))
        object.__setattr__(self, "data", _as_array(self.data, "data", 1))


@dataclass(frozen=True, eq=False)
class LinearModel:
    """A sequence of StepSpec plus the state and observation dimensions.

    Immutable after construction; safe to share across concurrent workers.
    Time-invariant models are represented by repeating one step (the data
    vector may still differ per step).
    """

    steps: tuple[StepSpec, ...]
    state_dim: int
    obs_dim: int

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.state_dim < 1:
            raise ValueError("state_dim must be a positive integer")
        if self.obs_dim < 1:
            raise ValueError("obs_dim must be a positive integer")

    def __len__(self) -> int:
        return len(self.steps)

    def step(self, k: int) -> StepSpec:
        """Return the spec of step k (1-based)."""
        if not 1 <= k <= len(self.steps):
            raise ValueError(f"step index {k} out of range 1..{len(self.steps)}")
        return self.steps[k - 1]


@dataclass
class ValidationResult:
    ok: bool
    violations: list[str]

    def __bool__(self) -> bool:
        return self.ok


def _is_symmetric(mat: np.ndarray) -> bool:
    if mat.shape[0] != mat.shape[1]:
        return False
    scale = np.abs(mat).max()
    return np.abs(mat - mat.T).max() <= SYMMETRY_RTOL * scale


def _is_spd(mat: np.ndarray) -> bool:
    # Strict positive definiteness, probed by whether a symmetric
    # factorization succeeds (cheaper than an eigendecomposition).
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return False
    return True


def validate_model(model: LinearModel) -> ValidationResult:
    """Check every dimensional and positivity constraint of the model.

    Returns a ValidationResult whose ``violations`` list identifies each
    failed constraint by step index (1-based) and field.
    """
    m, d = model.state_dim, model.obs_dim
    violations: list[str] = []
    for k, step in enumerate(model.steps, start=1):
        if step.A.shape != (m, m):
            violations.append(f"A has shape {step.A.shape}, expected ({m}, {m}) at step {k}")
        if step.b.shape != (m,):
            violations.append(f"b has length {step.b.shape[0]}, expected {m} at step {k}")
        if step.H.shape != (d, m):
            violations.append(f"H has shape {step.H.shape}, expected ({d}, {m}) at step {k}")
        if step.data.shape != (d,):
            violations.append(f"data has length {step.data.shape[0]}, expected {d} at step {k}")
        if step.R.shape != (d, d):
            violations.append(f"R has shape {step.R.shape}, expected ({d}, {d}) at step {k}")
        elif not _is_symmetric(step.R):
            violations.append(f"R not symmetric at step {k}")
        elif not _is_spd(step.R):
            violations.append(f"R not positive definite at step {k}")
    return ValidationResult(ok=not violations, violations=violations)


def apply_model(model: LinearModel, k: int, states: np.ndarray) -> np.ndarray:
    """Apply the step-k dynamics column-wise: each column x becomes A x + b."""
    step = model.step(k)
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] != model.state_dim:
        raise ValueError(
            f"states must have {model.state_dim} rows, got shape {states.shape}"
        )
    return step.A @ states + step.b[:, None]


# ---------------------------------------------------------------------------
# JSON model files
#
# {"state_dim": m, "obs_dim": d,
#  "init": {"mean": [...], "cov": [[...]]},
#  "steps": [{"A": [[...]], "b": [...], "H": [[...]], "R": [[...]],
#             "data": [...]}, ...]}
#
# A step may carry "repeat": n to stand for n consecutive identical steps,
# sharing its "data" unless an explicit "data_sequence" list (one data vector
# per repetition) is given.
# ---------------------------------------------------------------------------


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ModelFormatError(f"missing key {key!r} in {where}")
    return mapping[key]


def _expand_step(raw: dict, index: int) -> list[StepSpec]:
    if not isinstance(raw, dict):
        raise ModelFormatError(f"step {index} must be an object")
    where = f"step {index}"
    base = {name: _require(raw, name, where) for name in ("A", "b", "H", "R")}
    data_sequence = raw.get("data_sequence")
    repeat = raw.get("repeat")
    if data_sequence is not None:
        if not isinstance(data_sequence, list) or not data_sequence:
            raise ModelFormatError(f"data_sequence must be a non-empty list in {where}")
        if repeat is not None and repeat != len(data_sequence):
            raise ModelFormatError(
                f"repeat={repeat} does not match data_sequence length "
                f"{len(data_sequence)} in {where}"
            )
        data_list = data_sequence
    else:
        data = _require(raw, "data", where)
        if repeat is None:
            repeat = 1
        if not isinstance(repeat, int) or repeat < 1:
            raise ModelFormatError(f"repeat must be a positive integer in {where}")
        data_list = [data] * repeat
    try:
        return [StepSpec(data=data, **base) for data in data_list]
    except (ValueError, TypeError) as exc:
        raise ModelFormatError(f"malformed arrays in {where}: {exc}") from exc


def model_from_dict(raw: dict) -> tuple[LinearModel, GaussianState]:
    """Build a (model, initial state) pair from a parsed model dict."""
    if not isinstance(raw, dict):
        raise ModelFormatError("model file must contain a JSON object")
    state_dim = _require(raw, "state_dim", "model")
    obs_dim = _require(raw, "obs_dim", "model")
    if not isinstance(state_dim, int) or not isinstance(obs_dim, int):
        raise ModelFormatError("state_dim and obs_dim must be integers")
    raw_steps = _require(raw, "steps", "model")
    if not isinstance(raw_steps, list):
        raise ModelFormatError("steps must be a list")
    steps: list[StepSpec] = []
    for i, raw_step in enumerate(raw_steps):
        steps.extend(_expand_step(raw_step, i))
    raw_init = _require(raw, "init", "model")
    if not isinstance(raw_init, dict):
        raise ModelFormatError("init must be an object with mean and cov")
    try:
        init = GaussianState(
            mean=_require(raw_init, "mean", "init"),
            cov=_require(raw_init, "cov", "init"),
        )
        model = LinearModel(steps=tuple(steps), state_dim=state_dim, obs_dim=obs_dim)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model: {exc}") from exc
    return model, init


def model_to_dict(model: LinearModel, init: GaussianState) -> dict:
    """Inverse of model_from_dict, without repeat-compression."""
    return {
        "state_dim": model.state_dim,
        "obs_dim": model.obs_dim,
        "init": {"mean": init.mean.tolist(), "cov": init.cov.tolist()},
        "steps": [
            {
                "A": step.A.tolist(),
                "b": step.b.tolist(),
                "H": step.H.tolist(),
                "R": step.R.tolist(),
                "data": step.data.tolist(),
            }
            for step in model.steps
        ],
    }


def load_model(path, validate: bool = True) -> tuple[LinearModel, GaussianState]:
    """Load a model JSON file; optionally enforce the model constraints.

    With ``validate=True`` a constraint violation raises ValidationError
    (carrying the violation list); parse problems raise ModelFormatError and
    I/O problems OSError regardless.
    """
    with open(Path(path), "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    model, init = model_from_dict(raw)
    if validate:
        result = validate_model(model)
        if not result.ok:
            raise ValidationError(result.violations)
        validate_gaussian_state(init)
        if init.dim != model.state_dim:
            raise ValidationError(
                [f"init mean has length {init.dim}, expected {model.state_dim}"]
            )
    return model, init
