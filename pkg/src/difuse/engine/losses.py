"""Training objectives: hybrid diffusion loss, fusion-control loss, contrast loss."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor

from ..schedule import (
    NoiseSchedule,
    posterior_mean,
    posterior_mean_from_x0,
    posterior_variance,
)

__all__ = [
    "gaussian_kl",
    "hybrid_loss",
    "sobel_gradients",
    "signed_absmax",
    "fcm_loss",
    "contrast_loss",
]

_SOBEL_X = torch.tensor(
    [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]
).reshape(1, 1, 3, 3)
_SOBEL_Y = torch.tensor(
    [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]]
).reshape(1, 1, 3, 3)


def gaussian_kl(mu1: Tensor, var1, mu2: Tensor, var2) -> Tensor:
    """Elementwise KL(N(mu1, var1) || N(mu2, var2)) for diagonal Gaussians."""
    log_ratio = torch.log(torch.as_tensor(var2 / var1))
    return 0.5 * (log_ratio + (var1 + (mu1 - mu2) ** 2) / var2 - 1.0)


def _gaussian_nll(x: Tensor, mean: Tensor, var) -> Tensor:
    return 0.5 * (math.log(2.0 * math.pi) + torch.log(torch.as_tensor(var)) + (x - mean) ** 2 / var)


def hybrid_loss(
    eps_true: Tensor,
    eps_pred: Tensor,
    x0: Tensor,
    x_t: Tensor,
    t: int,
    v_pred: Tensor,
    sched: NoiseSchedule,
    lambda_vlb: float = 1e-3,
    detach_mean: bool = True,
) -> Tensor:
    """Noise-prediction MSE plus a down-weighted variational term.

    The variational term is the KL between the true reverse posterior and the
    model's (mean detached, so only the variance head learns from it); at
    t = 0 it is the Gaussian negative log-likelihood of x0 instead.
    ``detach_mean=False`` turns the stop-gradient off, which makes the loss an
    ordinary differentiable function (used by finite-difference checks).
    """
    if eps_true.shape != eps_pred.shape or x0.shape != x_t.shape:
        raise ValueError("hybrid_loss: operand shape mismatch")
    mse = torch.mean((eps_true - eps_pred) ** 2)
    var_pred = posterior_variance(v_pred, t, sched)
    mean_eps = eps_pred.detach() if detach_mean else eps_pred
    mean_pred = posterior_mean(x_t, mean_eps, t, sched)
    if t > 0:
        mean_true = posterior_mean_from_x0(x_t, x0, t, sched)
        var_true = float(sched.beta_tilde[t])
        vlb = torch.mean(gaussian_kl(mean_true, var_true, mean_pred, var_pred))
    else:
        vlb = torch.mean(_gaussian_nll(x0, mean_pred, var_pred))
    return mse + lambda_vlb * vlb


def sobel_gradients(img: Tensor) -> tuple[Tensor, Tensor]:
    """Sobel x/y responses with replicate padding (constant images give 0)."""
    squeeze = img.ndim == 2
    if squeeze:
        img = img.reshape(1, 1, *img.shape)
    if img.ndim != 4:
        raise ValueError(f"expected (H, W) or (B, C, H, W), got {tuple(img.shape)}")
    c = img.shape[1]
    kx = _SOBEL_X.to(dtype=img.dtype, device=img.device).expand(c, 1, 3, 3)
    ky = _SOBEL_Y.to(dtype=img.dtype, device=img.device).expand(c, 1, 3, 3)
    padded = F.pad(img, (1, 1, 1, 1), mode="replicate")
    gx = F.conv2d(padded, kx, groups=c)
    gy = F.conv2d(padded, ky, groups=c)
    if squeeze:
        return gx[0, 0], gy[0, 0]
    return gx, gy


def signed_absmax(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise value with the larger magnitude, sign preserved."""
    return torch.where(a.abs() >= b.abs(), a, b)


def fcm_loss(
    x0_hat: Tensor,
    x_bright: Tensor,
    y: Tensor,
    gamma_int: float = 1.0,
    gamma_grad: float = 0.2,
) -> Tensor:
    """Fusion objective: track the brighter source and the stronger gradient.

    Intensity term: L1 between |x0_hat| and max(|x_bright|, |y|).  Gradient
    term: L1 between the Sobel responses of x0_hat and the per-direction
    larger-magnitude source response.  Weighted gamma_int / gamma_grad.
    """
    if x0_hat.shape != x_bright.shape or x0_hat.shape != y.shape:
        raise ValueError("fcm_loss: operand shape mismatch")
    intensity = torch.mean(
        (x0_hat.abs() - torch.maximum(x_bright.abs(), y.abs())).abs()
    )
    gx_f, gy_f = sobel_gradients(x0_hat)
    gx_x, gy_x = sobel_gradients(x_bright)
    gx_y, gy_y = sobel_gradients(y)
    gx_t = signed_absmax(gx_x, gx_y)
    gy_t = signed_absmax(gy_x, gy_y)
    gradient = 0.5 * (torch.mean((gx_f - gx_t).abs()) + torch.mean((gy_f - gy_t).abs()))
    return gamma_int * intensity + gamma_grad * gradient


def contrast_loss(
    x0_hat: Tensor, mask: Tensor, penalty_weight: float = 10.0
) -> Tensor:
    """Negated in/out mean separation plus an in-range penalty on masked values.

    Minimizing this pushes the masked region away from the rest of the image
    while keeping its values inside [0, 1].
    """
    if x0_hat.shape != mask.shape:
        raise ValueError("contrast_loss: operand shape mismatch")
    m = mask.sum()
    n = (1.0 - mask).sum()
    if m.item() == 0.0 or n.item() == 0.0:
        raise ValueError("contrast_loss needs both masked and unmasked pixels")
    mean_in = (x0_hat * mask).sum() / m
    mean_out = (x0_hat * (1.0 - mask)).sum() / n
    overshoot = F.relu(x0_hat - 1.0) + F.relu(-x0_hat)
    penalty = (overshoot * mask).sum() / m
    return -(mean_in - mean_out).abs() + penalty_weight * penalty
