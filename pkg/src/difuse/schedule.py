"""Noise-schedule tables and closed-form diffusion algebra.

Everything here is pure: schedules are immutable float64 tables, and the
step operations are plain functions of (state, step index, schedule).  Scalar
coefficients are computed in float64 and applied to whatever array type the
caller passes (Python floats, numpy arrays, torch tensors), so the outputs
keep the caller's dtype and autograd graph.

Step indices are 0-based: ``t`` ranges over ``[0, T - 1]`` and ``alpha_bar[t]``
is the signal fraction after ``t + 1`` perturbation steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import torch

__all__ = [
    "NoiseSchedule",
    "LatentState",
    "make_linear_schedule",
    "q_sample",
    "predict_x0",
    "posterior_mean",
    "posterior_mean_from_x0",
    "posterior_variance",
    "sample_prev",
    "to_model_range",
    "from_model_range",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step beta/alpha tables of a T-step forward perturbation process.

    ``beta_tilde`` is the true posterior variance of each reverse step;
    ``beta_tilde[0]`` is pinned to ``beta[0]`` because the t=0 posterior has
    no predecessor variance of its own.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray
    kind: str = "linear"
    beta_start: float = 0.0
    beta_end: float = 0.0

    def __post_init__(self) -> None:
        for name in ("beta", "alpha", "alpha_bar", "beta_tilde"):
            arr = getattr(self, name)
            if arr.shape != (self.T,):
                raise ValueError(f"{name} must have shape ({self.T},), got {arr.shape}")


@dataclass(frozen=True)
class LatentState:
    """A brightness/chroma latent paired with its current step index."""

    t: int
    value: Any

    def __post_init__(self) -> None:
        if self.t < -1:
            raise ValueError(f"step index must be >= -1, got {self.t}")


def make_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Build a schedule whose betas are evenly spaced from start to end.

    Requires ``T >= 2`` and ``0 < beta_start <= beta_end < 1``.
    """
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_start < 1.0) or not (0.0 < beta_end < 1.0):
        raise ValueError(f"betas must lie in (0, 1), got [{beta_start}, {beta_end}]")
    if beta_start > beta_end:
        raise ValueError(f"beta_start {beta_start} exceeds beta_end {beta_end}")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    # Posterior variance beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
    beta_tilde = np.empty(T, dtype=np.float64)
    beta_tilde[0] = beta[0]
    beta_tilde[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    return NoiseSchedule(
        T=T,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        beta_tilde=beta_tilde,
        kind="linear",
        beta_start=float(beta_start),
        beta_end=float(beta_end),
    )


def _check_step(t: int, sched: NoiseSchedule) -> None:
    if not isinstance(t, (int, np.integer)):
        raise TypeError(f"step index must be an int, got {type(t).__name__}")
    if not 0 <= t < sched.T:
        raise ValueError(f"step index {t} outside [0, {sched.T - 1}]")


def _check_same_shape(a: Any, b: Any, what: str) -> None:
    sa = getattr(a, "shape", ())
    sb = getattr(b, "shape", ())
    if tuple(sa) != tuple(sb):
        raise ValueError(f"{what}: shape mismatch {tuple(sa)} vs {tuple(sb)}")


def _sqrt(x: Any) -> Any:
    if isinstance(x, torch.Tensor):
        return torch.sqrt(x)
    return np.sqrt(x)


def _exp(x: Any) -> Any:
    if isinstance(x, torch.Tensor):
        return torch.exp(x)
    return np.exp(x)


def _clip01(x: Any) -> Any:
    if isinstance(x, torch.Tensor):
        return torch.clamp(x, 0.0, 1.0)
    return np.clip(x, 0.0, 1.0)


def to_model_range(img: Any, scale: float = 2.0) -> Any:
    """Map [0, 1] pixel values onto a zero-centered diffusion range.

    The reverse chain starts from standard-normal noise and clips clean-image
    estimates, so the working range must be centered on zero; training and
    sampling both apply this map and invert it with :func:`from_model_range`.
    ``scale`` sets the width of the image of [0, 1]: the default 2 gives
    [-1, 1], while low-variance components (chroma sits near its neutral
    value) use a larger scale so their signal is not dwarfed by unit noise.
    """
    return (img - 0.5) * scale


def from_model_range(x: Any, scale: float = 2.0) -> Any:
    """Invert :func:`to_model_range` back to [0, 1] pixel values."""
    return x / scale + 0.5


def q_sample(x0: Any, t: int, eps: Any, sched: NoiseSchedule) -> Any:
    """Jump directly to step t: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    _check_step(t, sched)
    _check_same_shape(x0, eps, "q_sample")
    abar = float(sched.alpha_bar[t])
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps


def predict_x0(x_t: Any, eps_pred: Any, t: int, sched: NoiseSchedule) -> Any:
    """Invert q_sample for a predicted noise: (x_t - sqrt(1-abar)*eps) / sqrt(abar)."""
    _check_step(t, sched)
    _check_same_shape(x_t, eps_pred, "predict_x0")
    abar = float(sched.alpha_bar[t])
    return (x_t - math.sqrt(1.0 - abar) * eps_pred) / math.sqrt(abar)


def posterior_mean(x_t: Any, eps_pred: Any, t: int, sched: NoiseSchedule) -> Any:
    """Reverse-step mean (1/sqrt(alpha_t)) * (x_t - beta_t/sqrt(1-abar_t) * eps)."""
    _check_step(t, sched)
    _check_same_shape(x_t, eps_pred, "posterior_mean")
    alpha = float(sched.alpha[t])
    abar = float(sched.alpha_bar[t])
    coef = float(sched.beta[t]) / math.sqrt(1.0 - abar)
    return (x_t - coef * eps_pred) / math.sqrt(alpha)


def posterior_mean_from_x0(x_t: Any, x0: Any, t: int, sched: NoiseSchedule) -> Any:
    """True posterior mean of step t-1 given (x_t, x0); abar_{-1} is taken as 1."""
    _check_step(t, sched)
    _check_same_shape(x_t, x0, "posterior_mean_from_x0")
    beta = float(sched.beta[t])
    abar = float(sched.alpha_bar[t])
    abar_prev = float(sched.alpha_bar[t - 1]) if t > 0 else 1.0
    coef_x0 = math.sqrt(abar_prev) * beta / (1.0 - abar)
    coef_xt = math.sqrt(float(sched.alpha[t])) * (1.0 - abar_prev) / (1.0 - abar)
    return coef_x0 * x0 + coef_xt * x_t


def posterior_variance(v_pred: Any, t: int, sched: NoiseSchedule) -> Any:
    """Interpolate log-variance between beta_tilde_t (v=0) and beta_t (v=1).

    ``v_pred`` is clamped to [0, 1] before interpolation, so the returned
    variance always lies inside [beta_tilde_t, beta_t].
    """
    _check_step(t, sched)
    v = _clip01(v_pred)
    log_beta = math.log(float(sched.beta[t]))
    log_tilde = math.log(float(sched.beta_tilde[t]))
    return _exp(v * log_beta + (1.0 - v) * log_tilde)


def sample_prev(
    x_t: Any,
    eps_pred: Any,
    v_pred: Any,
    t: int,
    sched: NoiseSchedule,
    z: Any,
    x0_bounds: tuple[float, float] | None = None,
) -> Any:
    """One reverse step: posterior mean plus sqrt(learned variance) times z.

    The caller supplies the standard-normal draw ``z`` for t >= 1 and must
    pass ``z = 0`` at t = 0 (the final step is deterministic).

    With ``x0_bounds = (lo, hi)`` the mean is formed through the clean-image
    estimate clipped to that interval instead of directly from ``eps_pred``.
    Both routes agree whenever the estimate already lies inside the bounds;
    clipping keeps long free-running chains anchored to the data range, so
    samplers should pass the valid pixel interval here.
    """
    _check_step(t, sched)
    if x0_bounds is None:
        mean = posterior_mean(x_t, eps_pred, t, sched)
    else:
        lo, hi = x0_bounds
        if not lo < hi:
            raise ValueError(f"x0_bounds must satisfy lo < hi, got ({lo}, {hi})")
        x0_hat = predict_x0(x_t, eps_pred, t, sched)
        if isinstance(x0_hat, torch.Tensor):
            x0_hat = torch.clamp(x0_hat, lo, hi)
        else:
            x0_hat = np.clip(x0_hat, lo, hi)
        mean = posterior_mean_from_x0(x_t, x0_hat, t, sched)
    var = posterior_variance(v_pred, t, sched)
    return mean + _sqrt(var) * z
