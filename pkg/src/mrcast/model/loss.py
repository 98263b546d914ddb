"""Composite training loss: clipped squared error on the mean forecast plus
averaged pinball loss on the quantile forecasts.
"""

from __future__ import annotations

import numpy as np

from .config import QUANTILES

SQUARED_ERROR_CLIP = 25.0  # ~(5 sigma)^2 in normalized space


def composite_loss(
    mean_pred: np.ndarray,
    quantile_pred: np.ndarray,
    target: np.ndarray,
    clip: float = SQUARED_ERROR_CLIP,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus gradients w.r.t. both prediction blocks.

    Args:
        mean_pred: (B, L) mean forecasts in normalized space.
        quantile_pred: (B, Q, L) quantile forecasts, Q = 9.
        target: (B, L) normalized targets.
        clip: per-element cap on squared-error contributions; pinball terms
            are not clipped.

    Returns:
        (loss, d_mean, d_quantile) with gradient arrays matching the inputs.
    """
    mean_pred = np.atleast_2d(mean_pred)
    target = np.atleast_2d(target)
    B, L = mean_pred.shape
    q = np.asarray(QUANTILES)[None, :, None]

    err = mean_pred - target
    se = err * err
    mse_term = float(np.minimum(se, clip).mean())
    d_mean = np.where(se < clip, 2.0 * err, 0.0) / (B * L)

    diff = target[:, None, :] - quantile_pred
    pinball = np.where(diff >= 0.0, q * diff, (q - 1.0) * diff)
    quant_term = float(pinball.mean())
    Q = quantile_pred.shape[1]
    d_quant = np.where(diff > 0.0, -q, np.where(diff < 0.0, 1.0 - q, 0.0)) / (B * Q * L)

    return mse_term + quant_term, d_mean, d_quant
