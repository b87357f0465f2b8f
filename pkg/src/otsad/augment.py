"""Synthetic anomaly augmentation: contextual outlier exposure and window mixup.

Both techniques manufacture labeled anomalies from existing windows so the
discriminative and contrastive heads see anomalous gradient signal even when
only a handful of real anomalies exist. COE swaps two variables inside a
short window (breaking inter-sensor structure, hard label 1); WMix blends
two windows with a Beta-distributed weight and mixes their labels softly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SampleWindow

COE_TAG = "synthetic-coe"
WMIX_TAG = "synthetic-wmix"


@dataclass(frozen=True)
class AugmentConfig:
    """Knobs for the two augmentation routes.

    alpha is the Beta(alpha, alpha) shape for the WMix weight; 0.05 makes
    the draw strongly bimodal so mixes stay close to one parent. The COE
    fraction range bounds the swapped window length relative to L.
    """

    alpha: float = 0.05
    coe_frac_lo: float = 0.1
    coe_frac_hi: float = 0.3

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 < self.coe_frac_lo <= self.coe_frac_hi <= 1.0:
            raise ValueError(
                f"COE fraction range must satisfy 0 < lo <= hi <= 1, "
                f"got [{self.coe_frac_lo}, {self.coe_frac_hi}]"
            )


def swap_channel_window(
    values: np.ndarray, u: int, v: int, start: int, stop: int
) -> np.ndarray:
    """Swap rows u and v of a copy of ``values`` inside [start, stop)."""
    out = np.asarray(values).copy()
    out[u, start:stop], out[v, start:stop] = (
        values[v, start:stop].copy(),
        values[u, start:stop].copy(),
    )
    return out


def coe_augment(
    x: SampleWindow, config: AugmentConfig, rng: np.random.Generator
) -> SampleWindow:
    """Contextual outlier exposure: swap two variables inside a short window.

    The swap is value-preserving (same multiset, self-inverse) and leaves
    the input untouched; the result carries a hard anomaly label.
    """
    k, l = x.values.shape
    if k < 2:
        raise ValueError(f"COE needs at least 2 variables, got K={k}")
    frac = rng.uniform(config.coe_frac_lo, config.coe_frac_hi)
    width = max(1, round(frac * l))
    start = int(rng.integers(0, l - width + 1))
    u, v = rng.choice(k, size=2, replace=False)
    swapped = swap_channel_window(x.values, int(u), int(v), start, start + width)
    return SampleWindow(values=swapped, label=1.0, class_tag=COE_TAG)


def wmix_augment(
    x_i: SampleWindow,
    x_j: SampleWindow,
    config: AugmentConfig,
    rng: np.random.Generator,
    gamma: float | None = None,
) -> SampleWindow:
    """Window mixup: convex combination of two windows with a soft label.

    gamma ~ Beta(alpha, alpha) unless forced. The mixed label must land in
    (0, 1], so at least one parent must be anomalous; degenerate draws that
    would zero the label are resampled.
    """
    if x_i.values.shape != x_j.values.shape:
        raise ValueError(
            f"WMix parents must share a shape, got {x_i.values.shape} "
            f"vs {x_j.values.shape}"
        )
    if gamma is None:
        if x_i.label == 0.0 and x_j.label == 0.0:
            raise ValueError("WMix needs at least one anomalous parent (y > 0)")
        y_new = 0.0
        while y_new <= 0.0:
            gamma = float(rng.beta(config.alpha, config.alpha))
            y_new = gamma * x_i.label + (1.0 - gamma) * x_j.label
    else:
        y_new = gamma * x_i.label + (1.0 - gamma) * x_j.label
    mixed = gamma * x_i.values.astype(np.float64) + (1.0 - gamma) * x_j.values.astype(
        np.float64
    )
    return SampleWindow(
        values=mixed.astype(np.float32),
        label=min(float(y_new), 1.0),
        class_tag=WMIX_TAG,
    )
