"""Test-time anomaly scoring: per-head scores and their combination.

Three scores per sample: the masked-reconstruction error normalized into
[0, 1] with min/max statistics fitted on held-out normal training data,
the raw deviation-head output, and one minus the mean cosine similarity
between the sample's projection and a fixed random reference set of normal
training projections. The final score is their (optionally masked) sum; no
decision threshold is applied anywhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import SampleWindow

ALL_SCORES = frozenset({"rec", "dev", "con"})

SCORES_CSV_COLUMNS = ("sample_id", "class_tag", "y", "s_rec", "s_dev", "s_con", "s")


@dataclass(frozen=True)
class ScoreNormalizer:
    """Min/max of raw reconstruction error over held-out normal samples."""

    min_raw: float
    max_raw: float

    def __post_init__(self):
        if not self.min_raw <= self.max_raw:
            raise ValueError(
                f"normalizer must satisfy min <= max, got "
                f"({self.min_raw}, {self.max_raw})"
            )

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        """Affine map to [0, 1], clamped for out-of-range test values."""
        raw = np.asarray(raw, dtype=np.float64)
        span = self.max_raw - self.min_raw
        if span == 0.0:
            return np.where(raw <= self.min_raw, 0.0, 1.0)
        return np.clip((raw - self.min_raw) / span, 0.0, 1.0)


@dataclass(frozen=True)
class ScoreTriple:
    s_rec: float
    s_dev: float
    s_con: float
    s: float


@dataclass(frozen=True)
class ScoringContext:
    """Fitted normalizer plus the reference projection set P.

    P is drawn once per evaluation with a recorded seed and reused for
    every sample scored under this context.
    """

    normalizer: ScoreNormalizer
    reference_projections: torch.Tensor  # (|P|, d), unit rows
    p_seed: int

    def __post_init__(self):
        if self.reference_projections.shape[0] < 1:
            raise ValueError("reference set P must contain at least one sample")

    @property
    def p_size(self) -> int:
        return int(self.reference_projections.shape[0])


def stack_windows(windows) -> tuple[np.ndarray, np.ndarray]:
    """Stack SampleWindows into (B, K, L) values and (B,) labels."""
    values = np.stack([w.values for w in windows]).astype(np.float32)
    labels = np.array([w.label for w in windows], dtype=np.float32)
    return values, labels


def _as_batch(x) -> torch.Tensor:
    if isinstance(x, SampleWindow):
        x = x.values
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))
    if x.dim() == 2:
        x = x.unsqueeze(0)
    return x


def raw_reconstruction_error(bundle, x: torch.Tensor) -> torch.Tensor:
    """Per-sample mean squared masked-reconstruction error (training reduction)."""
    x_hat = bundle.masked_reconstruct(x)
    return ((x_hat - x) ** 2).flatten(1).mean(dim=1)


def build_scoring_context(
    bundle,
    normalizer: ScoreNormalizer,
    normal_windows,
    p_size: int = 64,
    seed: int = 0,
    batch_size: int = 256,
) -> ScoringContext:
    """Draw the reference set P from normal training windows and project it."""
    if p_size < 1:
        raise ValueError(f"p_size must be >= 1, got {p_size}")
    windows = list(normal_windows)
    if any(not w.is_normal for w in windows):
        raise ValueError("reference set P must be drawn from normal samples only")
    if p_size > len(windows):
        raise ValueError(
            f"p_size={p_size} exceeds the {len(windows)} available normal windows"
        )
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(windows), size=p_size, replace=False)
    chosen = [windows[i] for i in idx]

    bundle.eval()
    projections = []
    with torch.no_grad():
        for lo in range(0, len(chosen), batch_size):
            values, _ = stack_windows(chosen[lo : lo + batch_size])
            x = torch.from_numpy(values)
            projections.append(bundle.project(bundle.extract_features(x)))
    return ScoringContext(
        normalizer=normalizer,
        reference_projections=torch.cat(projections),
        p_seed=seed,
    )


def score_rec(bundle, x, normalizer: ScoreNormalizer) -> float:
    """Normalized masked-reconstruction error in [0, 1]."""
    if normalizer is None:
        raise ValueError("score_rec requires a fitted normalizer")
    bundle.eval()
    with torch.no_grad():
        raw = raw_reconstruction_error(bundle, _as_batch(x))
    return float(normalizer.normalize(raw.numpy())[0])


def score_dev(bundle, x) -> float:
    """Raw deviation-head output (unbounded, no normalization)."""
    bundle.eval()
    with torch.no_grad():
        z = bundle.extract_features(_as_batch(x))
        return float(bundle.deviation_score(z)[0])


def score_con(bundle, x, context: ScoringContext) -> float:
    """One minus the mean cosine similarity against the reference set P."""
    bundle.eval()
    with torch.no_grad():
        g = bundle.project(bundle.extract_features(_as_batch(x)))
        sims = g @ context.reference_projections.T
        return float(1.0 - sims.mean(dim=1)[0])


def score_batch(
    bundle,
    x: torch.Tensor,
    context: ScoringContext,
    score_mask: frozenset[str] = ALL_SCORES,
) -> list[ScoreTriple]:
    """All three component scores for a batch; s sums the masked-in ones."""
    _check_mask(score_mask)
    bundle.eval()
    with torch.no_grad():
        raw = raw_reconstruction_error(bundle, x).numpy()
        s_rec = context.normalizer.normalize(raw)
        z = bundle.extract_features(x)
        s_dev = bundle.deviation_score(z).numpy().astype(np.float64)
        g = bundle.project(z)
        sims = g @ context.reference_projections.T
        s_con = (1.0 - sims.mean(dim=1)).numpy().astype(np.float64)

    triples = []
    for i in range(x.shape[0]):
        parts = {"rec": float(s_rec[i]), "dev": float(s_dev[i]), "con": float(s_con[i])}
        total = 0.0
        for name in ("rec", "dev", "con"):
            if name in score_mask:
                total += parts[name]
        triples.append(
            ScoreTriple(s_rec=parts["rec"], s_dev=parts["dev"], s_con=parts["con"], s=total)
        )
    return triples


def score_sample(
    bundle,
    x,
    context: ScoringContext,
    score_mask: frozenset[str] = ALL_SCORES,
) -> ScoreTriple:
    """Score a single window."""
    return score_batch(bundle, _as_batch(x), context, score_mask)[0]


def score_windows(
    bundle,
    windows,
    context: ScoringContext,
    score_mask: frozenset[str] = ALL_SCORES,
    batch_size: int = 256,
) -> list[ScoreTriple]:
    """Score a pool of SampleWindows in fixed-order batches."""
    windows = list(windows)
    out: list[ScoreTriple] = []
    for lo in range(0, len(windows), batch_size):
        values, _ = stack_windows(windows[lo : lo + batch_size])
        out.extend(score_batch(bundle, torch.from_numpy(values), context, score_mask))
    return out


def _check_mask(score_mask):
    if not score_mask:
        raise ValueError("score mask must name at least one component")
    unknown = set(score_mask) - ALL_SCORES
    if unknown:
        raise ValueError(f"unknown score components {sorted(unknown)}")


# ---------------------------------------------------------------------------
# scores.csv


@dataclass(frozen=True)
class ScoreTable:
    sample_ids: tuple[str, ...]
    class_tags: tuple[str, ...]
    y: np.ndarray
    s_rec: np.ndarray
    s_dev: np.ndarray
    s_con: np.ndarray
    s: np.ndarray


def write_scores_csv(path: str | Path, windows, triples) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORES_CSV_COLUMNS)
        for w, t in zip(windows, triples):
            writer.writerow(
                [
                    w.sample_id,
                    w.class_tag,
                    repr(float(w.label)),
                    repr(t.s_rec),
                    repr(t.s_dev),
                    repr(t.s_con),
                    repr(t.s),
                ]
            )
    return path


def read_scores_csv(path: str | Path) -> ScoreTable:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCORES_CSV_COLUMNS:
            raise ValueError(
                f"unexpected scores.csv columns {reader.fieldnames}; "
                f"expected {list(SCORES_CSV_COLUMNS)}"
            )
        rows = list(reader)
    return ScoreTable(
        sample_ids=tuple(r["sample_id"] for r in rows),
        class_tags=tuple(r["class_tag"] for r in rows),
        y=np.array([float(r["y"]) for r in rows]),
        s_rec=np.array([float(r["s_rec"]) for r in rows]),
        s_dev=np.array([float(r["s_dev"]) for r in rows]),
        s_con=np.array([float(r["s_con"]) for r in rows]),
        s=np.array([float(r["s"]) for r in rows]),
    )
