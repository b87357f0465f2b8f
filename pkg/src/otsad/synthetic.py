"""Deterministic synthetic multivariate time-series benchmark generator.

Normal windows share structure across channels: every channel is the sum of
two sinusoids (common frequencies, channel-specific amplitude and phase,
common random time origin per window), a shared AR(1) latent driver with
channel-specific loading, and a small channel-private AR(1) noise term.
Because channels are tied through the time origin and the driver, any
channel is largely predictable from the others, which is what masked
reconstruction exploits.

Three anomaly classes are injected into otherwise-normal windows:

* ``spike``       - additive burst of 5 sigma on 1-3 channels,
* ``scale``       - 1-3 channels multiplied by a factor in [2, 3],
* ``decorrelate`` - two channels swap content inside a sub-window, leaving
  per-channel statistics plausible but breaking inter-sensor dependency
  (detectable only by cross-channel reconstruction).

All windows are per-channel z-scored with statistics of the training
normal pool. Everything is deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .augment import swap_channel_window
from .data import NORMAL_TAG, OpenSetDataset, SampleWindow, Setting, save_dataset

ANOMALY_CLASSES = ("spike", "scale", "decorrelate")

_DRIVER_PHI = 0.9
_DRIVER_SCALE = 0.25
_NOISE_PHI = 0.8
_NOISE_SCALE = 0.08
_AR_BURN_IN = 64
_ANOMALY_FRAC_RANGE = (0.15, 0.35)
_SPIKE_SIGMA = 5.0
_SCALE_RANGE = (2.0, 3.0)


@dataclass(frozen=True)
class GeneratorConfig:
    k: int = 8
    l: int = 128
    n_train_normal: int = 2000
    n_train_anomaly_per_class: int = 30
    n_test_normal: int = 400
    n_test_anomaly_per_class: int = 40
    anomaly_classes: tuple[str, ...] = ANOMALY_CLASSES
    sampling_rate_hz: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "anomaly_classes", tuple(self.anomaly_classes))
        unknown = set(self.anomaly_classes) - set(ANOMALY_CLASSES)
        if unknown:
            raise ValueError(
                f"unknown anomaly classes {sorted(unknown)}; "
                f"supported: {ANOMALY_CLASSES}"
            )
        if self.k < 2 or self.l < 8:
            raise ValueError(f"need K >= 2 and L >= 8, got K={self.k}, L={self.l}")
        for name in (
            "n_train_normal",
            "n_train_anomaly_per_class",
            "n_test_normal",
            "n_test_anomaly_per_class",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_json(cls, path: str | Path) -> "GeneratorConfig":
        fields = json.loads(Path(path).read_text())
        if "anomaly_classes" in fields:
            fields["anomaly_classes"] = tuple(fields["anomaly_classes"])
        return cls(**fields)


@dataclass(frozen=True)
class DatasetParams:
    """Per-dataset waveform parameters, drawn once from the seed."""

    freqs: np.ndarray  # (2,) cycles per window, shared by all channels
    amps: np.ndarray  # (K, 2)
    phases: np.ndarray  # (K, 2)
    driver_load: np.ndarray  # (K,)


def draw_dataset_params(config: GeneratorConfig, rng: np.random.Generator) -> DatasetParams:
    freqs = np.array([rng.uniform(2.0, 4.0), rng.uniform(5.0, 9.0)])
    amps = rng.uniform(0.8, 1.2, size=(config.k, 2))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(config.k, 2))
    driver_load = rng.uniform(0.5, 1.0, size=config.k)
    return DatasetParams(freqs=freqs, amps=amps, phases=phases, driver_load=driver_load)


def _ar1(rng: np.random.Generator, n: int, phi: float, scale: float) -> np.ndarray:
    innovations = rng.normal(0.0, scale, size=n + _AR_BURN_IN)
    series = lfilter([1.0], [1.0, -phi], innovations)
    return series[_AR_BURN_IN:]


def sample_normal_window(
    params: DatasetParams, l: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw one raw (un-normalized) normal window of shape (K, L)."""
    k = params.amps.shape[0]
    tau = rng.uniform(0.0, l)
    driver = _ar1(rng, l, _DRIVER_PHI, _DRIVER_SCALE)
    noise = np.stack([_ar1(rng, l, _NOISE_PHI, _NOISE_SCALE) for _ in range(k)])
    t = (np.arange(l) + tau) / l
    window = np.zeros((k, l))
    for j in range(2):
        angle = 2.0 * np.pi * params.freqs[j] * t[None, :] + params.phases[:, j, None]
        window += params.amps[:, j, None] * np.sin(angle)
    window += params.driver_load[:, None] * driver[None, :]
    window += noise
    return window


def inject_anomaly(
    values: np.ndarray,
    anomaly_class: str,
    channel_sigmas: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Corrupt a copy of a raw normal window with one anomaly class."""
    if anomaly_class not in ANOMALY_CLASSES:
        raise ValueError(f"unknown anomaly class {anomaly_class!r}")
    k, l = values.shape
    out = values.copy()
    frac = rng.uniform(*_ANOMALY_FRAC_RANGE)
    width = max(4, round(frac * l))
    start = int(rng.integers(0, l - width + 1))
    stop = start + width

    if anomaly_class == "decorrelate":
        u, v = rng.choice(k, size=2, replace=False)
        return swap_channel_window(out, int(u), int(v), start, stop)

    n_chan = int(rng.integers(1, min(3, k) + 1))
    chans = rng.choice(k, size=n_chan, replace=False)
    if anomaly_class == "spike":
        for c in chans:
            sign = 1.0 if rng.random() < 0.5 else -1.0
            out[c, start:stop] += sign * _SPIKE_SIGMA * channel_sigmas[c]
    else:  # scale
        factor = rng.uniform(*_SCALE_RANGE)
        for c in chans:
            out[c, start:stop] *= factor
    return out


def generate_synthetic_dataset(
    config: GeneratorConfig,
    rng_seed: int,
    out_dir: str | Path | None = None,
) -> OpenSetDataset:
    """Generate the full dataset; optionally persist manifest + samples.

    The anomaly pool holds every generated training anomaly (all classes
    marked seen); use build_setting to subsample it for an experiment.
    """
    rng = np.random.default_rng(rng_seed)
    params = draw_dataset_params(config, rng)

    train_normals = [
        sample_normal_window(params, config.l, rng)
        for _ in range(config.n_train_normal)
    ]
    test_normals = [
        sample_normal_window(params, config.l, rng)
        for _ in range(config.n_test_normal)
    ]
    if not train_normals:
        raise ValueError("generator needs at least one training normal window")

    stacked = np.concatenate(train_normals, axis=1)
    mu = stacked.mean(axis=1)
    sigma = stacked.std(axis=1)
    sigma[sigma == 0.0] = 1.0

    train_anomalies: list[tuple[str, np.ndarray]] = []
    test_anomalies: list[tuple[str, np.ndarray]] = []
    for cls in config.anomaly_classes:
        for _ in range(config.n_train_anomaly_per_class):
            base = sample_normal_window(params, config.l, rng)
            train_anomalies.append((cls, inject_anomaly(base, cls, sigma, rng)))
    for cls in config.anomaly_classes:
        for _ in range(config.n_test_anomaly_per_class):
            base = sample_normal_window(params, config.l, rng)
            test_anomalies.append((cls, inject_anomaly(base, cls, sigma, rng)))

    def zscore(w: np.ndarray) -> np.ndarray:
        return (w - mu[:, None]) / sigma[:, None]

    normal_pool = tuple(
        SampleWindow(zscore(w), 0.0, NORMAL_TAG, f"train_normal/{i:06d}.bin")
        for i, w in enumerate(train_normals)
    )
    anomaly_pool = tuple(
        SampleWindow(zscore(w), 1.0, cls, f"train_anomaly/{i:06d}.bin")
        for i, (cls, w) in enumerate(train_anomalies)
    )
    test_pool = tuple(
        SampleWindow(zscore(w), 0.0, NORMAL_TAG, f"test/{i:06d}.bin")
        for i, w in enumerate(test_normals)
    ) + tuple(
        SampleWindow(zscore(w), 1.0, cls, f"test/{i + config.n_test_normal:06d}.bin")
        for i, (cls, w) in enumerate(test_anomalies)
    )

    classes = frozenset(config.anomaly_classes)
    dataset = OpenSetDataset(
        normal_pool=normal_pool,
        anomaly_pool=anomaly_pool,
        test_pool=test_pool,
        seen_classes=frozenset(cls for cls, _ in train_anomalies),
        all_classes=classes,
        setting=Setting.OG,
        k=config.k,
        l=config.l,
        sampling_rate_hz=config.sampling_rate_hz,
    )
    if out_dir is not None:
        save_dataset(dataset, out_dir)
    return dataset
