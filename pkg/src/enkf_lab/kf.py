"""Exact Kalman filter recursions for linear-Gaussian models.

The filter propagates the exact filtering mean and covariance and exposes the
exact gain, which doubles as the reference gain for the ensemble experiments.
All covariance outputs are explicitly symmetrized; SPD systems are solved via
a symmetric factorization, never by forming an inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import GaussianState, LinearModel, validate_gaussian_state

# Gains are plain (state_dim x obs_dim) float arrays.
GainMatrix = np.ndarray


def kf_forecast(prior: GaussianState, model: LinearModel, k: int) -> GaussianState:
    """Push a Gaussian state through the step-k dynamics.

    The forecast is the exact law of the affine image: mean A u + b,
    covariance A Q A^T (the dynamics carry no process noise).
    """
    step = model.step(k)
    if step.A.shape[1] != prior.dim:
        raise ValueError(
            f"state dimension {prior.dim} does not match dynamics {step.A.shape}"
        )
    mean = step.A @ prior.mean + step.b
    cov = step.A @ prior.cov @ step.A.T
    cov = 0.5 * (cov + cov.T)
    return GaussianState(mean, cov)


def kf_gain(forecast_cov: np.ndarray, H: np.ndarray, R: np.ndarray) -> GainMatrix:
    """Gain Q^f H^T (H Q^f H^T + R)^{-1}, via a Cholesky solve.

    Solves the SPD system (H Q^f H^T + R) Z = H Q^f and returns Z^T; R must be
    symmetric positive definite, which keeps the system well-posed even when
    the forecast covariance is rank deficient or zero.
    """
    forecast_cov = np.asarray(forecast_cov, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    innovation_cov = H @ forecast_cov @ H.T + R
    innovation_cov = 0.5 * (innovation_cov + innovation_cov.T)
    try:
        factor = scipy.linalg.cho_factor(innovation_cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"innovation covariance is not positive definite: {exc}"
        ) from exc
    gain = scipy.linalg.cho_solve(factor, H @ forecast_cov).T
    if not np.all(np.isfinite(gain)):
        raise np.linalg.LinAlgError("Kalman gain has non-finite entries")
    return np.ascontiguousarray(gain)


def kf_analysis(
    forecast: GaussianState, gain: GainMatrix, H: np.ndarray, data: np.ndarray
) -> GaussianState:
    """Condition a forecast on the data: u + L (d - H u), (I - L H) Q^f."""
    H = np.asarray(H, dtype=np.float64)
    data = np.asarray(data, dtype=np.float64)
    innovation = data - H @ forecast.mean
    mean = forecast.mean + gain @ innovation
    cov = (np.eye(forecast.dim) - gain @ H) @ forecast.cov
    cov = 0.5 * (cov + cov.T)
    return GaussianState(mean, cov)


@dataclass(frozen=True, eq=False)
class KalmanStep:
    forecast: GaussianState
    gain: GainMatrix
    analysis: GaussianState


@dataclass(frozen=True, eq=False)
class KalmanTrajectory:
    """Output of a filter run: the initial state plus one record per step."""

    init: GaussianState
    steps: tuple[KalmanStep, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def analysis(self, k: int) -> GaussianState:
        """Filtering distribution after step k; k=0 is the initial state."""
        if k == 0:
            return self.init
        return self._step(k).analysis

    def forecast(self, k: int) -> GaussianState:
        return self._step(k).forecast

    def gain(self, k: int) -> GainMatrix:
        return self._step(k).gain

    def _step(self, k: int) -> KalmanStep:
        if not 1 <= k <= len(self.steps):
            raise ValueError(f"step index {k} out of range 1..{len(self.steps)}")
        return self.steps[k - 1]


def kf_run(model: LinearModel, init: GaussianState) -> KalmanTrajectory:
    """Run the full forecast/gain/analysis recursion over all model steps."""
    validate_gaussian_state(init)
    if init.dim != model.state_dim:
        raise ValueError(
            f"init dimension {init.dim} does not match state_dim {model.state_dim}"
        )
    steps: list[KalmanStep] = []
    state = init
    for k in range(1, len(model.steps) + 1):
        step = model.step(k)
        forecast = kf_forecast(state, model, k)
        gain = kf_gain(forecast.cov, step.H, step.R)
        state = kf_analysis(forecast, gain, step.H, step.data)
        steps.append(KalmanStep(forecast=forecast, gain=gain, analysis=state))
    return KalmanTrajectory(init=init, steps=tuple(steps))
