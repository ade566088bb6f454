"""Contrastive alignment loss, Student's-T likelihood, total objective and point metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import StudentTParams


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.07
    normalize_cls: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


@dataclass
class LossReport:
    forecast_nll: float
    contrastive: float
    total: float
    contrastive_ts_to_text: float = 0.0
    contrastive_text_to_ts: float = 0.0

    def to_dict(self):
        return asdict(self)


def similarity_logits(ts_cls: torch.Tensor, text_cls: torch.Tensor, config: ContrastiveConfig = ContrastiveConfig()):
    if config.normalize_cls:
        ts_cls = F.normalize(ts_cls, dim=-1)
        text_cls = F.normalize(text_cls, dim=-1)
    return ts_cls @ text_cls.transpose(-1, -2) / config.temperature


def contrastive_loss_from_logits(logits: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Symmetric InfoNCE on a B x B logit matrix with matched pairs on the diagonal.

    Returns (total, row term, column term); total is the sum of the two
    directional mean cross-entropies.
    """
    if logits.ndim != 2 or logits.shape[0] != logits.shape[1]:
        raise ValueError("logits must be a square matrix")
    B = logits.shape[0]
    if B == 0:
        raise ValueError("contrastive loss needs a batch of at least one pair")
    diag = torch.arange(B)
    rows = -torch.log_softmax(logits, dim=1)[diag, diag].mean()
    cols = -torch.log_softmax(logits, dim=0)[diag, diag].mean()
    return rows + cols, rows, cols


def contrastive_loss(
    ts_cls: torch.Tensor, text_cls: torch.Tensor, config: ContrastiveConfig = ContrastiveConfig()
) -> torch.Tensor:
    if ts_cls.shape[0] == 0:
        raise ValueError("contrastive loss needs a batch of at least one pair")
    return contrastive_loss_from_logits(similarity_logits(ts_cls, text_cls, config))[0]


def studentt_log_density(params: StudentTParams, y: torch.Tensor) -> torch.Tensor:
    mu, sigma, nu = params.location, params.scale, params.dof
    z = (y - mu) / sigma
    return (
        torch.lgamma((nu + 1) / 2)
        - torch.lgamma(nu / 2)
        - 0.5 * torch.log(nu * math.pi)
        - torch.log(sigma)
        - (nu + 1) / 2 * torch.log1p(z * z / nu)
    )


def studentt_nll(params: StudentTParams, target: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood over horizon steps and batch."""
    if not torch.isfinite(target).all():
        raise ValueError("target contains non-finite values")
    return -studentt_log_density(params, target).mean()


def total_loss(forecast: torch.Tensor, contrastive: torch.Tensor | None, use_contrastive: bool = True) -> torch.Tensor:
    if not use_contrastive or contrastive is None:
        return forecast
    return forecast + contrastive


def mse_mae(predictions, truths) -> tuple[float, float]:
    """MSE and MAE averaged over steps, then windows."""
    pred = np.asarray(predictions, dtype=np.float64)
    true = np.asarray(truths, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {true.shape}")
    if pred.size == 0:
        raise ValueError("no predictions to score")
    err = pred - true
    if err.ndim == 1:
        err = err[None]
    mse = float(np.mean(np.mean(err**2, axis=-1)))
    mae = float(np.mean(np.mean(np.abs(err), axis=-1)))
    return mse, mae
