"""Core data model: windows, open-set datasets, manifests, masking, batches.

A sample is one time interval of ``K`` variables over ``L`` timestamps,
stored as a (K, L) float matrix. Datasets are split into a normal pool,
a (small) labeled anomaly pool used during training, and a test pool.
The anomaly pool is restricted to a set of *seen* anomaly classes; the
test pool may contain classes never seen in training.

Manifests are JSON files listing the splits; each sample lives in its own
flat binary file (little-endian float32, row-major K x L), which keeps the
on-disk format language-neutral and bit-exact.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

NORMAL_TAG = "normal"

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

#: split name -> role; order fixed for deterministic serialization
SPLIT_NAMES = ("train_normal", "train_anomaly", "test")


class DatasetError(ValueError):
    """Raised when a manifest, sample file, or dataset invariant is invalid."""


class Setting(str, enum.Enum):
    """Experimental regime for the training anomaly pool.

    U: unsupervised, no labeled anomalies.
    OG: general open-set, labeled anomalies drawn from all classes.
    OH: hard open-set, labeled anomalies drawn from a single class.
    """

    U = "u"
    OG = "og"
    OH = "oh"


@dataclass(frozen=True, eq=False)
class SampleWindow:
    """One K x L time interval with a soft anomaly label and class tag.

    label is 0 exactly for normal windows and in (0, 1] otherwise;
    class_tag is "normal" iff label == 0.
    """

    values: np.ndarray
    label: float
    class_tag: str
    sample_id: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise DatasetError(
                f"sample {self.sample_id or '<in-memory>'}: values must be a 2-D "
                f"K x L matrix, got shape {v.shape}"
            )
        if not np.isfinite(v).all():
            raise DatasetError(
                f"sample {self.sample_id or '<in-memory>'}: non-finite values"
            )
        if not 0.0 <= self.label <= 1.0:
            raise DatasetError(
                f"sample {self.sample_id or '<in-memory>'}: label {self.label} "
                f"outside [0, 1]"
            )
        if (self.label == 0.0) != (self.class_tag == NORMAL_TAG):
            raise DatasetError(
                f"sample {self.sample_id or '<in-memory>'}: label {self.label} "
                f"inconsistent with class tag {self.class_tag!r} "
                f"(label 0 <=> tag 'normal')"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def l(self) -> int:
        return self.values.shape[1]

    @property
    def is_normal(self) -> bool:
        return self.label == 0.0


@dataclass(frozen=True, eq=False)
class OpenSetDataset:
    """Partitioned dataset plus the open-set descriptor.

    normal_pool is X_n (size N), anomaly_pool is X_a (size A with A << N),
    seen_classes is the class set C available during training and
    all_classes the full class set S (C subset of S).
    """

    normal_pool: tuple[SampleWindow, ...]
    anomaly_pool: tuple[SampleWindow, ...]
    test_pool: tuple[SampleWindow, ...]
    seen_classes: frozenset[str]
    all_classes: frozenset[str]
    setting: Setting
    k: int
    l: int
    sampling_rate_hz: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "normal_pool", tuple(self.normal_pool))
        object.__setattr__(self, "anomaly_pool", tuple(self.anomaly_pool))
        object.__setattr__(self, "test_pool", tuple(self.test_pool))
        object.__setattr__(self, "seen_classes", frozenset(self.seen_classes))
        object.__setattr__(self, "all_classes", frozenset(self.all_classes))
        self._validate()

    def _validate(self):
        n, a = len(self.normal_pool), len(self.anomaly_pool)
        if a > 0.05 * n:
            raise DatasetError(
                f"anomaly pool too large: A={a} exceeds 5% of N={n} "
                f"(labeled anomalies must stay scarce)"
            )
        for w in self.normal_pool:
            if not w.is_normal:
                raise DatasetError(f"non-normal sample {w.sample_id!r} in normal pool")
        for w in self.anomaly_pool:
            if w.is_normal:
                raise DatasetError(f"normal sample {w.sample_id!r} in anomaly pool")
            if w.class_tag not in self.seen_classes:
                raise DatasetError(
                    f"anomaly {w.sample_id!r} has class {w.class_tag!r} "
                    f"outside seen classes {sorted(self.seen_classes)}"
                )
        if not self.seen_classes <= self.all_classes:
            raise DatasetError(
                f"seen classes {sorted(self.seen_classes)} not a subset of "
                f"all classes {sorted(self.all_classes)}"
            )
        if self.setting is Setting.OH and len(self.seen_classes) != 1:
            raise DatasetError(
                f"hard setting requires exactly one seen class, "
                f"got {sorted(self.seen_classes)}"
            )
        for pool_name, pool in (
            ("normal", self.normal_pool),
            ("anomaly", self.anomaly_pool),
            ("test", self.test_pool),
        ):
            for w in pool:
                if w.values.shape != (self.k, self.l):
                    raise DatasetError(
                        f"{pool_name} sample {w.sample_id!r}: shape "
                        f"{w.values.shape} does not match declared "
                        f"({self.k}, {self.l})"
                    )
                if w.class_tag != NORMAL_TAG and w.class_tag not in self.all_classes:
                    raise DatasetError(
                        f"{pool_name} sample {w.sample_id!r}: unknown class "
                        f"tag {w.class_tag!r}"
                    )
        # labeled anomalies used in training must not come from the test set
        train_ids = {w.sample_id for w in self.anomaly_pool if w.sample_id}
        test_ids = {w.sample_id for w in self.test_pool if w.sample_id}
        leaked = train_ids & test_ids
        if leaked:
            raise DatasetError(
                f"training anomalies leak into the test pool: {sorted(leaked)[:5]}"
            )

    @property
    def n_normal(self) -> int:
        return len(self.normal_pool)

    @property
    def n_anomaly(self) -> int:
        return len(self.anomaly_pool)


# ---------------------------------------------------------------------------
# variable masking


def mask_variable(values: np.ndarray, k: int) -> np.ndarray:
    """Zero out variable ``k`` (row index, 0-based); all other rows unchanged.

    Pure selection: the input is copied, never mutated.
    """
    values = np.asarray(values)
    if not 0 <= k < values.shape[0]:
        raise IndexError(f"variable index {k} out of range for K={values.shape[0]}")
    out = values.copy()
    out[k, :] = 0
    return out


def keep_only_variable(values: np.ndarray, k: int) -> np.ndarray:
    """Zero out every variable except ``k``; complementary to mask_variable."""
    values = np.asarray(values)
    if not 0 <= k < values.shape[0]:
        raise IndexError(f"variable index {k} out of range for K={values.shape[0]}")
    out = np.zeros_like(values)
    out[k, :] = values[k, :]
    return out


# ---------------------------------------------------------------------------
# manifest I/O


def _read_sample_file(path: Path, k: int, l: int) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(f"sample file missing: {path}")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != k * l:
        rows = raw.size / l if l else float("nan")
        raise DatasetError(
            f"sample file {path}: expected {k}x{l}={k * l} float32 values, "
            f"got {raw.size} (~{rows:.2f} rows of length {l})"
        )
    return raw.reshape(k, l)


def _write_sample_file(path: Path, values: np.ndarray):
    np.ascontiguousarray(values, dtype="<f4").tofile(path)


def load_dataset(manifest_path: str | Path) -> OpenSetDataset:
    """Load and validate an OpenSetDataset from a JSON manifest.

    Every referenced sample file must exist and parse to the declared
    K x L shape; failures name the offending sample.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DatasetError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc

    for key in ("format_version", "k", "l", "setting", "all_classes", "splits"):
        if key not in manifest:
            raise DatasetError(f"manifest {manifest_path} missing field {key!r}")
    if manifest["format_version"] != MANIFEST_VERSION:
        raise DatasetError(
            f"unsupported manifest version {manifest['format_version']} "
            f"(expected {MANIFEST_VERSION})"
        )

    k, l = int(manifest["k"]), int(manifest["l"])
    all_classes = frozenset(manifest["all_classes"])
    seen_classes = frozenset(manifest.get("seen_classes", []))
    setting = Setting(manifest["setting"])
    base = manifest_path.parent

    pools: dict[str, list[SampleWindow]] = {name: [] for name in SPLIT_NAMES}
    for split in SPLIT_NAMES:
        for entry in manifest["splits"].get(split, []):
            rel = entry["file"]
            values = _read_sample_file(base / rel, k, l)
            try:
                window = SampleWindow(
                    values=values,
                    label=float(entry["label"]),
                    class_tag=entry["class"],
                    sample_id=rel,
                )
            except DatasetError as exc:
                raise DatasetError(f"in split {split!r}: {exc}") from exc
            pools[split].append(window)

    return OpenSetDataset(
        normal_pool=tuple(pools["train_normal"]),
        anomaly_pool=tuple(pools["train_anomaly"]),
        test_pool=tuple(pools["test"]),
        seen_classes=seen_classes,
        all_classes=all_classes,
        setting=setting,
        k=k,
        l=l,
        sampling_rate_hz=float(manifest.get("sampling_rate_hz", 1.0)),
    )


def save_dataset(dataset: OpenSetDataset, out_dir: str | Path) -> Path:
    """Write manifest + per-sample binary files under ``out_dir``.

    Returns the manifest path. Output is byte-deterministic for a given
    dataset (sorted JSON keys, fixed file naming).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = {
        "train_normal": dataset.normal_pool,
        "train_anomaly": dataset.anomaly_pool,
        "test": dataset.test_pool,
    }
    manifest_splits: dict[str, list[dict]] = {}
    for split, pool in splits.items():
        (out_dir / split).mkdir(exist_ok=True)
        entries = []
        for i, w in enumerate(pool):
            rel = f"{split}/{i:06d}.bin"
            _write_sample_file(out_dir / rel, w.values)
            entries.append(
                {"file": rel, "class": w.class_tag, "label": float(w.label)}
            )
        manifest_splits[split] = entries

    manifest = {
        "format_version": MANIFEST_VERSION,
        "k": dataset.k,
        "l": dataset.l,
        "sampling_rate_hz": dataset.sampling_rate_hz,
        "setting": dataset.setting.value,
        "seen_classes": sorted(dataset.seen_classes),
        "all_classes": sorted(dataset.all_classes),
        "splits": manifest_splits,
    }
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


# ---------------------------------------------------------------------------
# open-set setting construction


def default_eta(dataset: OpenSetDataset, setting: Setting) -> int:
    """Labeled-anomaly budget: ceil(0.1% of training normals) per seen class."""
    per_class = max(1, math.ceil(0.001 * dataset.n_normal))
    if setting is Setting.OH:
        return per_class
    classes = {w.class_tag for w in dataset.anomaly_pool}
    return per_class * max(1, len(classes))


def build_setting(
    dataset: OpenSetDataset,
    setting: Setting,
    seen_class: str | None = None,
    eta: int | None = None,
    rng_seed: int = 0,
) -> OpenSetDataset:
    """Subsample the anomaly pool to ``eta`` samples for the chosen setting.

    U drops all anomalies. OG draws eta anomalies spanning the available
    classes as evenly as possible; OH draws eta anomalies of ``seen_class``
    only. Selection is a prefix of a seeded permutation, so for a fixed
    seed the eta=6 selection contains the eta=3 one (nested sweeps).
    """
    if setting is Setting.U:
        return replace(
            dataset, anomaly_pool=(), seen_classes=frozenset(), setting=Setting.U
        )

    if eta is None:
        eta = default_eta(dataset, setting)
    if eta < 1:
        raise DatasetError(f"eta must be a positive integer, got {eta}")

    rng = np.random.default_rng(rng_seed)
    by_class: dict[str, list[int]] = {}
    for i, w in enumerate(dataset.anomaly_pool):
        by_class.setdefault(w.class_tag, []).append(i)

    if setting is Setting.OH:
        if seen_class is None:
            raise DatasetError("hard setting requires a seen_class")
        if seen_class not in dataset.all_classes:
            raise DatasetError(
                f"seen class {seen_class!r} not among dataset classes "
                f"{sorted(dataset.all_classes)}"
            )
        candidates = by_class.get(seen_class, [])
        if eta > len(candidates):
            raise DatasetError(
                f"eta={eta} exceeds the {len(candidates)} available "
                f"anomalies of class {seen_class!r}"
            )
        order = rng.permutation(len(candidates))
        chosen = [candidates[j] for j in order[:eta]]
    else:  # OG: round-robin over a seeded class order for an even, nested draw
        total = len(dataset.anomaly_pool)
        if eta > total:
            raise DatasetError(
                f"eta={eta} exceeds the {total} available anomalies"
            )
        classes = sorted(by_class)
        class_order = [classes[j] for j in rng.permutation(len(classes))]
        per_class_order = {
            c: [by_class[c][j] for j in rng.permutation(len(by_class[c]))]
            for c in classes
        }
        chosen = []
        depth = 0
        while len(chosen) < eta:
            for c in class_order:
                if depth < len(per_class_order[c]):
                    chosen.append(per_class_order[c][depth])
                    if len(chosen) == eta:
                        break
            depth += 1

    pool = tuple(dataset.anomaly_pool[i] for i in sorted(chosen))
    seen = frozenset(w.class_tag for w in pool)
    return replace(dataset, anomaly_pool=pool, seen_classes=seen, setting=setting)


# ---------------------------------------------------------------------------
# mini-batch assembly


def make_minibatch(
    dataset: OpenSetDataset,
    batch_size: int,
    anomaly_quota: int,
    synth_quota: int,
    rng: np.random.Generator,
    augment_config=None,
    use_coe: bool = True,
    use_wmix: bool = True,
    replace_normals: bool = True,
) -> list[SampleWindow]:
    """Assemble a shuffled batch of normals, real anomalies, and synthetics.

    Real anomalies are drawn with replacement (the pool is tiny); synthetic
    anomalies come from the augment module. Without replacement, the batch
    cannot exceed the number of distinct normals.
    """
    from .augment import AugmentConfig, coe_augment, wmix_augment

    if anomaly_quota + synth_quota >= batch_size:
        raise DatasetError(
            f"quotas ({anomaly_quota} real + {synth_quota} synthetic) must "
            f"leave room for normals in a batch of {batch_size}"
        )
    if anomaly_quota > 0 and not dataset.anomaly_pool:
        raise DatasetError("anomaly_quota > 0 but the anomaly pool is empty")
    n_normal = batch_size - anomaly_quota - synth_quota
    if not replace_normals and n_normal > dataset.n_normal:
        raise DatasetError(
            f"batch needs {n_normal} distinct normals but only "
            f"{dataset.n_normal} are available"
        )
    if augment_config is None:
        augment_config = AugmentConfig()

    idx = rng.choice(dataset.n_normal, size=n_normal, replace=replace_normals)
    batch = [dataset.normal_pool[i] for i in idx]
    for i in rng.choice(dataset.n_anomaly, size=anomaly_quota, replace=True):
        batch.append(dataset.anomaly_pool[i])

    for _ in range(synth_quota):
        coe_ok = use_coe and dataset.k >= 2
        base = dataset.normal_pool[rng.integers(dataset.n_normal)]
        if use_wmix and (coe_ok or dataset.anomaly_pool) and (
            not coe_ok or rng.random() < 0.5
        ):
            # anomalous parent: a real seen anomaly when available, else a
            # fresh contextual swap (wmix needs a strictly positive label)
            if dataset.anomaly_pool:
                parent = dataset.anomaly_pool[rng.integers(dataset.n_anomaly)]
            else:
                parent = coe_augment(base, augment_config, rng)
                base = dataset.normal_pool[rng.integers(dataset.n_normal)]
            batch.append(wmix_augment(base, parent, augment_config, rng))
        elif coe_ok:
            batch.append(coe_augment(base, augment_config, rng))
        else:
            raise DatasetError(
                "synth_quota > 0 but no augmentation route is available "
                "(COE disabled / K < 2, and WMix lacks an anomalous parent)"
            )

    order = rng.permutation(len(batch))
    return [batch[i] for i in order]
