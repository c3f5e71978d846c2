"""Training losses: multiclass cross-entropy, concordance correlation coefficient
(CCC) and its loss form, reconstruction MSE, and the weighted total.

CCC is computed in covariance form with population (1/N) moments,
``2 cov(x, y) / (var x + var y + (mean x - mean y)^2)``, which recovers the usual
Pearson-based formula in non-degenerate cases and stays defined when one input is
constant (zero covariance, positive denominator).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import torch
from torch import Tensor

LOSS_ONE_MINUS_CCC = "one_minus_ccc"
LOSS_NEG_CCC = "neg_ccc"


def cross_entropy(logits: Tensor, labels: Tensor) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], stabilized by max subtraction."""
    if logits.dim() != 2 or logits.shape[1] < 2:
        raise ValueError(f"logits must be (N, M) with M >= 2, got {tuple(logits.shape)}")
    if labels.dim() != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError("labels must be (N,) matching logits")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(f"label out of range for {logits.shape[1]} classes")
    log_probs = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    return -log_probs[torch.arange(logits.shape[0]), labels].mean()


def ccc(x: Tensor, y: Tensor) -> Tensor:
    """Concordance correlation coefficient of two 1-D tensors, in [-1, 1].

    Both-constant-and-equal inputs give 1 by continuity; both constant but unequal
    give 0 (zero covariance over a positive denominator).
    """
    x = x.reshape(-1)
    y = y.reshape(-1)
    if x.shape != y.shape or x.shape[0] < 2:
        raise ValueError("ccc needs two equal-length inputs with N >= 2")
    mean_x = x.mean()
    mean_y = y.mean()
    dx = x - mean_x
    dy = y - mean_y
    cov = (dx * dy).mean()
    denom = (dx * dx).mean() + (dy * dy).mean() + (mean_x - mean_y) ** 2
    if denom == 0:
        return torch.ones((), dtype=x.dtype, device=x.device)
    return 2.0 * cov / denom


def ccc_loss(preds: Tensor, targets: Tensor, form: str = LOSS_ONE_MINUS_CCC) -> Tensor:
    """Mean over attribute columns of (1 - CCC), or of -CCC with ``form="neg_ccc"``."""
    if preds.shape != targets.shape or preds.dim() != 2:
        raise ValueError(f"preds/targets must share an (N, K) shape, got {tuple(preds.shape)} vs {tuple(targets.shape)}")
    if preds.shape[0] < 2:
        raise ValueError("ccc_loss needs N >= 2 (batch statistics undefined for one sample)")
    per_attr = torch.stack([ccc(preds[:, k], targets[:, k]) for k in range(preds.shape[1])])
    if form == LOSS_ONE_MINUS_CCC:
        return (1.0 - per_attr).mean()
    if form == LOSS_NEG_CCC:
        return (-per_attr).mean()
    raise ValueError(f"unknown regression loss form {form!r}")


def recon_mse(x_pool: Tensor, rec: Tensor) -> Tensor:
    """Mean squared error between pooled input features and their reconstruction."""
    if x_pool.shape != rec.shape:
        raise ValueError(f"shape mismatch {tuple(x_pool.shape)} vs {tuple(rec.shape)}")
    return ((x_pool - rec) ** 2).mean()


Scalar = Union[float, Tensor]


@dataclass
class LossValue:
    """Total loss and its two terms; total == pred_term + alpha * recon_term exactly."""

    total: Scalar
    pred_term: Scalar
    recon_term: Scalar
    alpha: float

    def detach(self) -> "LossValue":
        def to_float(v):
            return float(v.detach()) if isinstance(v, Tensor) else float(v)

        return LossValue(to_float(self.total), to_float(self.pred_term), to_float(self.recon_term), self.alpha)


def total_loss(pred_term: Scalar, recon_term: Scalar, alpha: float) -> LossValue:
    """Weighted sum of the prediction and reconstruction terms."""
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    return LossValue(pred_term + alpha * recon_term, pred_term, recon_term, alpha)
