"""Perturbed-observation EnKF, the exact-gain reference ensemble, and the
coupled advance of both on shared draws.

The coupled construction runs two ensembles side by side from one initial
ensemble: X is updated with the gain computed from its own forecast sample
covariance, the reference ensemble U with the exact Kalman gain. Each step
draws a single perturbed-data ensemble and feeds it to both updates, so
member-wise differences X_i - U_i isolate the sampling error of the gain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ensemble import Ensemble, perturb_data, init_ensemble, sample_cov
from .kf import GainMatrix, KalmanTrajectory, kf_gain, kf_run
from .model import GaussianState, LinearModel, apply_model

# Test hook: maps a step index to a replacement for the forecast sample
# covariance used in the gain computation.
CovOverride = Callable[[int], np.ndarray]


@dataclass(frozen=True, eq=False)
class CoupledState:
    """Both ensembles after step ``step``, with the gains of the last analysis.

    At step 0 the ensembles are one and the same object; the gains are None
    because no analysis has happened yet.
    """

    enkf_ensemble: Ensemble
    reference_ensemble: Ensemble
    step: int
    ensemble_gain: GainMatrix | None = None
    exact_gain: GainMatrix | None = None

    def __post_init__(self):
        if self.enkf_ensemble.members.shape != self.reference_ensemble.members.shape:
            raise ValueError(
                "EnKF and reference ensembles must have identical shape, got "
                f"{self.enkf_ensemble.members.shape} and "
                f"{self.reference_ensemble.members.shape}"
            )
        if self.step == 0 and not np.array_equal(
            self.enkf_ensemble.members, self.reference_ensemble.members
        ):
            raise ValueError("at step 0 both ensembles must be bit-identical")

    @property
    def size(self) -> int:
        return self.enkf_ensemble.size


def enkf_forecast(model: LinearModel, k: int, ensemble: Ensemble) -> Ensemble:
    """Push every member through the step-k dynamics."""
    return Ensemble(apply_model(model, k, ensemble.members))


def ensemble_gain(forecast_cov: np.ndarray, H: np.ndarray, R: np.ndarray) -> GainMatrix:
    """Gain from the forecast sample covariance; same formula and solver as
    the exact gain, so both stay comparable entry for entry."""
    return kf_gain(forecast_cov, H, R)


def enkf_analysis(
    forecast: Ensemble, data_ensemble: Ensemble, gain: GainMatrix, H: np.ndarray
) -> Ensemble:
    """Member-wise update x_i + K (d_i - H x_i), applied as one matrix expression."""
    if forecast.size != data_ensemble.size:
        raise ValueError(
            f"forecast has {forecast.size} members but data ensemble has "
            f"{data_ensemble.size}"
        )
    xf = forecast.members
    return Ensemble(xf + gain @ (data_ensemble.members - H @ xf))


def reference_analysis(
    forecast: Ensemble, data_ensemble: Ensemble, exact_gain: GainMatrix, H: np.ndarray
) -> Ensemble:
    """Member-wise update with the exact Kalman gain instead of the sample gain."""
    return enkf_analysis(forecast, data_ensemble, exact_gain, H)


def coupled_step(
    state: CoupledState,
    model: LinearModel,
    seed: int,
    replicate: int,
    kf_trajectory: KalmanTrajectory,
    forecast_cov_override: CovOverride | None = None,
) -> CoupledState:
    """Advance both ensembles by one step on one shared perturbed-data draw.

    The data ensemble is drawn exactly once here and passed to both analyses;
    there is deliberately no API to redraw it. The exact gain comes from the
    precomputed filter trajectory (it does not depend on the ensemble), and
    the ensemble gain from the forecast sample covariance of X, unless the
    ``forecast_cov_override`` test hook substitutes another matrix.
    """
    k = state.step + 1
    step = model.step(k)
    x_forecast = enkf_forecast(model, k, state.enkf_ensemble)
    u_forecast = enkf_forecast(model, k, state.reference_ensemble)
    data_ensemble = perturb_data(seed, replicate, k, state.size, step.data, step.R)
    if forecast_cov_override is not None:
        forecast_cov = forecast_cov_override(k)
    else:
        forecast_cov = sample_cov(x_forecast)
    gain = ensemble_gain(forecast_cov, step.H, step.R)
    exact = kf_trajectory.gain(k)
    x_analysis = enkf_analysis(x_forecast, data_ensemble, gain, step.H)
    u_analysis = reference_analysis(u_forecast, data_ensemble, exact, step.H)
    return CoupledState(
        enkf_ensemble=x_analysis,
        reference_ensemble=u_analysis,
        step=k,
        ensemble_gain=gain,
        exact_gain=exact,
    )


def coupled_run(
    model: LinearModel,
    init: GaussianState,
    seed: int,
    replicate: int,
    n: int,
    kf_trajectory: KalmanTrajectory | None = None,
    forecast_cov_override: CovOverride | None = None,
) -> list[CoupledState]:
    """Run the coupled construction over all model steps.

    Returns one CoupledState per step plus the shared initial state at index
    0, where X and U are the same ensemble. Fully deterministic given
    (seed, replicate, n). Pass a precomputed ``kf_trajectory`` when running
    many replicates; the exact gains are replicate-independent.
    """
    if kf_trajectory is None:
        kf_trajectory = kf_run(model, init)
    initial = init_ensemble(seed, replicate, n, init)
    states = [CoupledState(enkf_ensemble=initial, reference_ensemble=initial, step=0)]
    for _ in range(len(model.steps)):
        states.append(
            coupled_step(
                states[-1], model, seed, replicate, kf_trajectory,
                forecast_cov_override,
            )
        )
    return states
