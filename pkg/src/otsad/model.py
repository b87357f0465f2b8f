"""Learnable components: shared TCN encoder, mirrored decoder, score heads.

The encoder maps a (K, L) window to a D-dimensional embedding via dilated
causal convolutions with residual connections, global average pooling over
time, and a linear projection. The decoder mirrors the channel schedule
with length-preserving transposed convolutions. Two small heads sit on the
embedding: a deviation network producing a scalar anomaly score against a
fixed unit-Gaussian prior, and a normalized linear projection used by the
contrastive head.

Masked reconstruction runs K encoder/decoder passes per window (batched as
one forward over K masked copies); pass k sees the window with variable k
zeroed and contributes exactly row k of the output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .scoring import ScoreNormalizer

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    k: int
    l: int
    feature_dim: int = 120  # D
    projection_dim: int = 32  # d
    channels: int = 64
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4)
    tcn_dropout: float = 0.1
    head_hidden: int = 64
    head_dropout: float = 0.25
    deviation_prior_mean: float = 0.0
    deviation_prior_std: float = 1.0
    norm_eps: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(self.dilations))


class _CausalBlock(nn.Module):
    """Residual block: left-padded dilated conv, ReLU, dropout."""

    def __init__(self, c_in: int, c_out: int, kernel_size: int, dilation: int, dropout: float):
        super().__init__()
        self.pad = (kernel_size - 1) * dilation
        self.conv = nn.Conv1d(c_in, c_out, kernel_size, dilation=dilation)
        self.dropout = nn.Dropout(dropout)
        self.downsample = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else None

    def forward(self, x):
        h = self.conv(F.pad(x, (self.pad, 0)))
        h = self.dropout(torch.relu(h))
        res = x if self.downsample is None else self.downsample(x)
        return h + res


class TCNEncoder(nn.Module):
    """Dilated causal TCN + global average pooling -> D-vector."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        blocks = []
        c_in = config.k
        for dilation in config.dilations:
            blocks.append(
                _CausalBlock(
                    c_in, config.channels, config.kernel_size, dilation, config.tcn_dropout
                )
            )
            c_in = config.channels
        self.blocks = nn.Sequential(*blocks)
        self.to_embedding = nn.Linear(config.channels, config.feature_dim)
        self.sequences_encoded = 0  # instrumentation for pass-count checks

    def forward(self, x):
        self.sequences_encoded += x.shape[0]
        h = self.blocks(x)
        return self.to_embedding(h.mean(dim=-1))


class _TransposedBlock(nn.Module):
    """Length-preserving transposed conv block with residual connection."""

    def __init__(self, c_in: int, c_out: int, kernel_size: int, dilation: int, dropout: float):
        super().__init__()
        # symmetric padding keeps the output length equal to the input length
        self.conv = nn.ConvTranspose1d(
            c_in, c_out, kernel_size, dilation=dilation,
            padding=(kernel_size - 1) * dilation // 2,
        )
        self.dropout = nn.Dropout(dropout)
        self.downsample = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else None

    def forward(self, x):
        h = self.dropout(torch.relu(self.conv(x)))
        res = x if self.downsample is None else self.downsample(x)
        return h + res


class MirroredDecoder(nn.Module):
    """D-vector -> (K, L) window, reversing the encoder's channel schedule."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.channels = config.channels
        self.l = config.l
        self.from_embedding = nn.Linear(config.feature_dim, config.channels * config.l)
        blocks = [
            _TransposedBlock(
                config.channels, config.channels, config.kernel_size, d, config.tcn_dropout
            )
            for d in reversed(config.dilations[1:])
        ]
        self.blocks = nn.Sequential(*blocks)
        self.to_window = nn.ConvTranspose1d(
            config.channels, config.k, config.kernel_size,
            dilation=config.dilations[0],
            padding=(config.kernel_size - 1) * config.dilations[0] // 2,
        )

    def forward(self, z):
        h = self.from_embedding(z).reshape(-1, self.channels, self.l)
        h = self.blocks(h)
        return self.to_window(h)


class DeviationHead(nn.Module):
    """Two linear layers with batch norm, PReLU, and dropout -> scalar."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(config.feature_dim, config.head_hidden),
            nn.BatchNorm1d(config.head_hidden),
            nn.PReLU(),
            nn.Dropout(config.head_dropout),
            nn.Linear(config.head_hidden, 1),
        )

    def forward(self, z):
        return self.net(z).squeeze(-1)


class ProjectionHead(nn.Module):
    """Fully connected layer followed by L2 normalization -> unit d-vector."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.linear = nn.Linear(config.feature_dim, config.projection_dim)
        self.eps = config.norm_eps

    def forward(self, z):
        g = self.linear(z)
        return g / (g.norm(dim=-1, keepdim=True) + self.eps)


class ModelBundle(nn.Module):
    """Encoder, decoder, deviation head, and projection head as one unit.

    Mutable while training; switch to eval() for deterministic scoring.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = TCNEncoder(config)
        self.decoder = MirroredDecoder(config)
        self.deviation_head = DeviationHead(config)
        self.projection_head = ProjectionHead(config)

    def _check_window(self, x: torch.Tensor):
        if x.shape[-2:] != (self.config.k, self.config.l):
            raise ValueError(
                f"window shape {tuple(x.shape[-2:])} does not match the "
                f"configured ({self.config.k}, {self.config.l})"
            )

    def extract_features(self, x: torch.Tensor) -> torch.Tensor:
        """(B, K, L) or (K, L) -> feature embedding(s) of length D."""
        single = x.dim() == 2
        if single:
            x = x.unsqueeze(0)
        self._check_window(x)
        z = self.encoder(x)
        return z.squeeze(0) if single else z

    def reconstruct_masked_copy(self, masked: torch.Tensor) -> torch.Tensor:
        """Decoder applied to encoder output; separated out for stubbing."""
        return self.decoder(self.encoder(masked))

    def masked_reconstruct(self, x: torch.Tensor) -> torch.Tensor:
        """Assemble the reconstruction row-wise from K masked passes.

        Copy k of each window has variable k zeroed; its decoder output
        contributes only row k, so every output row is predicted from the
        other variables. The K passes run as one batched forward.
        """
        single = x.dim() == 2
        if single:
            x = x.unsqueeze(0)
        self._check_window(x)
        b, k, l = x.shape
        idx = torch.arange(k, device=x.device)
        stack = x.unsqueeze(1).expand(b, k, k, l).clone()
        stack[:, idx, idx, :] = 0
        out = self.reconstruct_masked_copy(stack.reshape(b * k, k, l))
        x_hat = out.reshape(b, k, k, l)[:, idx, idx, :]
        return x_hat.squeeze(0) if single else x_hat

    def deviation_score(self, z: torch.Tensor) -> torch.Tensor:
        """Standardized deviation against the Gaussian prior (mean 0, std 1)."""
        single = z.dim() == 1
        if single:
            z = z.unsqueeze(0)
        dev = (self.deviation_head(z) - self.config.deviation_prior_mean) / (
            self.config.deviation_prior_std
        )
        return dev.squeeze(0) if single else dev

    def project(self, z: torch.Tensor) -> torch.Tensor:
        """Unit-norm contrastive projection of a feature embedding."""
        single = z.dim() == 1
        if single:
            z = z.unsqueeze(0)
        g = self.projection_head(z)
        return g.squeeze(0) if single else g


def build_model(config: ModelConfig, seed: int | None = None) -> ModelBundle:
    """Construct a bundle; with a seed, initialization is reproducible."""
    if seed is not None:
        torch.manual_seed(seed)
    return ModelBundle(config)


# ---------------------------------------------------------------------------
# checkpoint archive


def save_checkpoint(
    path: str | Path,
    bundle: ModelBundle,
    normalizer: ScoreNormalizer | None = None,
    meta: dict | None = None,
):
    """Persist parameters, hyperparameters, and scoring statistics."""
    payload = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "model_config": asdict(bundle.config),
        "state_dict": bundle.state_dict(),
        "normalizer": None if normalizer is None else asdict(normalizer),
        "meta": meta or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


@dataclass
class Checkpoint:
    bundle: ModelBundle
    normalizer: ScoreNormalizer | None
    meta: dict


def load_checkpoint(path: str | Path) -> Checkpoint:
    payload = torch.load(Path(path), weights_only=True)
    version = payload.get("checkpoint_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )
    cfg_fields = dict(payload["model_config"])
    cfg_fields["dilations"] = tuple(cfg_fields["dilations"])
    bundle = ModelBundle(ModelConfig(**cfg_fields))
    bundle.load_state_dict(payload["state_dict"])
    bundle.eval()
    normalizer = (
        ScoreNormalizer(**payload["normalizer"]) if payload["normalizer"] else None
    )
    return Checkpoint(bundle=bundle, normalizer=normalizer, meta=payload["meta"])
