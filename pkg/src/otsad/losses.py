"""The three head losses and their unweighted sum.

Reconstruction: mean squared error of the masked reconstruction, averaged
over the normal samples of the batch only. Deviation: prior-anchored
regression pushing normal scores to zero and anomalous scores past a
margin. Contrastive: anomaly-aware supervised contrastive objective whose
anchors and positives are normal samples only; anomalous samples (real or
synthetic, any y > 0) appear solely inside denominators, so their mutual
similarity is never maximized. A vanilla two-class supervised contrastive
variant is kept for the ablation that motivates the anomaly-aware form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

DEFAULT_MARGIN = 5.0  # z-score confidence margin for the deviation head
DEFAULT_TEMPERATURE = 0.07


@dataclass(frozen=True)
class LossBreakdown:
    rec: float
    dev: float
    con: float
    total: float


def total_loss(rec, dev, con) -> LossBreakdown:
    """Unweighted sum of the three heads, with the breakdown preserved."""
    parts = {"rec": float(rec), "dev": float(dev), "con": float(con)}
    for name, value in parts.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} non-finite: {value}")
    return LossBreakdown(
        rec=parts["rec"],
        dev=parts["dev"],
        con=parts["con"],
        total=parts["rec"] + parts["dev"] + parts["con"],
    )


def reconstruction_loss(
    x_hat: torch.Tensor,
    x: torch.Tensor,
    labels: torch.Tensor,
    elementwise: str = "mean",
) -> torch.Tensor:
    """Squared reconstruction error averaged over the normal samples only.

    The per-sample squared norm is reduced as a mean over the K*L elements
    (scale-free across window geometries); pass elementwise="sum" for the
    literal summed squared norm. Samples with y > 0 are excluded; a batch
    with no normals contributes zero.
    """
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch: x_hat {tuple(x_hat.shape)} vs x {tuple(x.shape)}")
    if labels.shape[0] != x.shape[0]:
        raise ValueError(
            f"got {labels.shape[0]} labels for {x.shape[0]} samples"
        )
    if elementwise not in ("mean", "sum"):
        raise ValueError(f"elementwise must be 'mean' or 'sum', got {elementwise!r}")
    per_sample = ((x_hat - x) ** 2).flatten(1)
    per_sample = per_sample.mean(dim=1) if elementwise == "mean" else per_sample.sum(dim=1)
    normal = labels == 0
    if not bool(normal.any()):
        return x.new_zeros(())
    return per_sample[normal].mean()


def deviation_loss(
    dev_scores: torch.Tensor,
    labels: torch.Tensor,
    margin: float = DEFAULT_MARGIN,
) -> torch.Tensor:
    """Mean of (1-y)*|dev| + y*max(0, margin - dev) over the batch.

    Soft labels interpolate between the inlier and outlier terms, which is
    what WMix-mixed samples rely on.
    """
    if dev_scores.shape != labels.shape:
        raise ValueError(
            f"got {tuple(labels.shape)} labels for {tuple(dev_scores.shape)} scores"
        )
    if margin <= 0:
        raise ValueError(f"margin must be positive, got {margin}")
    inlier = dev_scores.abs()
    outlier = torch.clamp(margin - dev_scores, min=0.0)
    return ((1.0 - labels) * inlier + labels * outlier).mean()


def _pairwise_log_prob(embeddings: torch.Tensor, temperature: float) -> torch.Tensor:
    """log softmax of pairwise similarities, self-pairs excluded.

    Row i holds log[ exp(g_i.g_j/t) / sum_{b != i} exp(g_i.g_b/t) ]; the
    log-sum-exp is max-shifted internally, so logits up to 1/t are safe.
    """
    n = embeddings.shape[0]
    logits = embeddings @ embeddings.T / temperature
    eye = torch.eye(n, dtype=torch.bool, device=embeddings.device)
    logits = logits.masked_fill(eye, float("-inf"))
    return logits - torch.logsumexp(logits, dim=1, keepdim=True)


def contrastive_loss(
    embeddings: torch.Tensor,
    labels: torch.Tensor,
    temperature: float = DEFAULT_TEMPERATURE,
) -> torch.Tensor:
    """Anomaly-aware supervised contrastive loss, summed over normal anchors.

    Anchors and positives are the normal samples (y == 0); every other
    sample of the batch, anomalous ones included, enlarges the anchor's
    denominator. Requires at least two normal samples and unit-norm
    embeddings.
    """
    _check_contrastive_inputs(embeddings, labels, temperature)
    normal = labels == 0
    if int(normal.sum()) < 2:
        raise ValueError(
            "contrastive loss undefined: fewer than 2 normal samples in the batch"
        )
    log_prob = _pairwise_log_prob(embeddings, temperature)
    positives = normal.unsqueeze(0) & ~torch.eye(
        len(labels), dtype=torch.bool, device=embeddings.device
    )
    pos_log_prob = (log_prob * positives).sum(dim=1) / positives.sum(dim=1)
    return -pos_log_prob[normal].sum()


def vanilla_supervised_contrastive_loss(
    embeddings: torch.Tensor,
    labels: torch.Tensor,
    temperature: float = DEFAULT_TEMPERATURE,
) -> torch.Tensor:
    """Two-class supervised contrastive loss (classes y == 0 and y > 0).

    Every sample whose class has another member anchors, with same-class
    samples as positives -- anomalies attract each other here, which the
    anomaly-aware variant deliberately avoids. Classes with a single member
    contribute no anchor terms; a batch of singletons is undefined.
    """
    _check_contrastive_inputs(embeddings, labels, temperature)
    anomalous = labels > 0
    same_class = anomalous.unsqueeze(0) == anomalous.unsqueeze(1)
    positives = same_class & ~torch.eye(
        len(labels), dtype=torch.bool, device=embeddings.device
    )
    n_pos = positives.sum(dim=1)
    anchors = n_pos > 0
    if not bool(anchors.any()):
        raise ValueError(
            "vanilla supervised contrastive loss undefined: every class is a singleton"
        )
    log_prob = _pairwise_log_prob(embeddings, temperature)
    pos_log_prob = (log_prob * positives).sum(dim=1)[anchors] / n_pos[anchors]
    return -pos_log_prob.sum()


def _check_contrastive_inputs(embeddings, labels, temperature):
    if embeddings.dim() != 2:
        raise ValueError(f"embeddings must be (B, d), got {tuple(embeddings.shape)}")
    if labels.shape[0] != embeddings.shape[0]:
        raise ValueError(
            f"got {labels.shape[0]} labels for {embeddings.shape[0]} embeddings"
        )
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
