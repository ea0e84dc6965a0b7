"""Label corruption: transition matrices, noise sampling, manifests, audits.

Instance-independent noise is modeled by a row-stochastic transition matrix
``rows[t][n] = P(given label = n | true label = t)``. Two symmetric
conventions are supported because "noise spread uniformly with probability
P" is read differently across the literature:

* ``uniform_all``: every class (including the true one) receives P/C, so
  the diagonal is ``1 - P + P/C`` and the realized corruption rate is
  ``P * (C - 1) / C``.
* ``uniform_off_diagonal``: only the other classes receive ``P / (C - 1)``
  and the realized corruption rate is P itself.

Asymmetric noise flips class t to class ``(t + 1) mod C`` with rate P.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

MANIFEST_FORMAT = "corruption-manifest-v1"

SYMMETRIC_CONVENTIONS = ("uniform_all", "uniform_off_diagonal")

_ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class TransitionMatrix:
    """C x C row-stochastic label corruption model."""

    num_classes: int
    rows: np.ndarray
    kind: str  # "symmetric" | "asymmetric"

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        object.__setattr__(self, "rows", rows)
        c = self.num_classes
        if c < 2:
            raise ValidationError(f"num_classes must be >= 2, got {c}")
        if rows.shape != (c, c):
            raise ValidationError(f"rows must be {c}x{c}, got shape {rows.shape}")
        if np.any(rows < -1e-12) or np.any(rows > 1 + 1e-12):
            raise ValidationError("transition probabilities must lie in [0, 1]")
        sums = rows.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > _ROW_SUM_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ValidationError(f"row {bad} sums to {sums[bad]!r}, expected 1.0")
        if self.kind == "symmetric":
            off = rows[~np.eye(c, dtype=bool)].reshape(c, c - 1)
            if np.any(np.abs(off - off[:, :1]) > 1e-12):
                raise ValidationError("symmetric matrix needs equal off-diagonal entries per row")
        elif self.kind == "asymmetric":
            for t in range(c):
                allowed = {t, (t + 1) % c}
                nonzero = set(np.flatnonzero(rows[t] > 1e-12).tolist())
                if not nonzero <= allowed:
                    raise ValidationError(
                        f"asymmetric row {t} may only place mass on itself and class {(t + 1) % c}"
                    )
        else:
            raise ValidationError(f"unknown matrix kind {self.kind!r}")
        rows.setflags(write=False)


@dataclass(frozen=True)
class CorruptionRecord:
    """One sample's labels: the hidden truth and the (possibly flipped) given label."""

    index: int
    true_label: int
    given_label: int
    corrupted: bool

    def __post_init__(self):
        if self.corrupted != (self.true_label != self.given_label):
            raise ValidationError(
                f"record {self.index}: corrupted flag inconsistent with labels "
                f"({self.true_label} -> {self.given_label})"
            )


@dataclass
class NoisyDataset:
    """Images plus aligned corruption records and a provenance manifest.

    ``images`` is an (N, H, W, C) float32 array with values in [0, 1].
    Training code must only ever read ``given_label``; ``true_label`` exists
    for evaluation and audits.
    """

    images: np.ndarray
    records: list[CorruptionRecord]
    num_classes: int
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.records):
            raise ValidationError(
                f"{len(self.images)} images but {len(self.records)} records"
            )
        for rec in self.records:
            for name in ("true_label", "given_label"):
                value = getattr(rec, name)
                if not 0 <= value < self.num_classes:
                    raise ValidationError(
                        f"record {rec.index}: {name}={value} outside [0, {self.num_classes})"
                    )

    def __len__(self) -> int:
        return len(self.records)

    @property
    def given_labels(self) -> np.ndarray:
        return np.array([r.given_label for r in self.records], dtype=np.int64)

    @property
    def true_labels(self) -> np.ndarray:
        return np.array([r.true_label for r in self.records], dtype=np.int64)


def build_symmetric_matrix(rate: float, num_classes: int,
                           convention: str = "uniform_all") -> TransitionMatrix:
    """Uniform label noise at the given rate under the chosen convention."""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"rate must be in [0, 1), got {rate}")
    if num_classes < 2:
        raise ValidationError(f"num_classes must be >= 2, got {num_classes}")
    if convention not in SYMMETRIC_CONVENTIONS:
        raise ValidationError(
            f"convention must be one of {SYMMETRIC_CONVENTIONS}, got {convention!r}"
        )
    c = num_classes
    if convention == "uniform_all":
        rows = np.full((c, c), rate / c)
        np.fill_diagonal(rows, 1.0 - rate + rate / c)
    else:
        rows = np.full((c, c), rate / (c - 1))
        np.fill_diagonal(rows, 1.0 - rate)
    return TransitionMatrix(num_classes=c, rows=rows, kind="symmetric")


def build_asymmetric_matrix(rate: float, num_classes: int) -> TransitionMatrix:
    """Circular next-class flip noise: t goes to (t+1) mod C with the given rate."""
    if not 0.0 <= rate < 0.5:
        raise ValidationError(
            f"rate must be in [0, 0.5) (classes blur together beyond 50%), got {rate}"
        )
    if num_classes == 2:
        raise ValidationError(
            "asymmetric noise with 2 classes degenerates to symmetric; "
            "use build_symmetric_matrix"
        )
    if num_classes < 3:
        raise ValidationError(f"num_classes must be >= 3, got {num_classes}")
    c = num_classes
    rows = np.zeros((c, c))
    np.fill_diagonal(rows, 1.0 - rate)
    for t in range(c):
        rows[t, (t + 1) % c] = rate
    return TransitionMatrix(num_classes=c, rows=rows, kind="asymmetric")


def apply_transition(labels, matrix: TransitionMatrix, seed: int,
                     sampler=None) -> list[CorruptionRecord]:
    """Corrupt each label independently by sampling its transition row.

    Pure function of (labels, matrix, seed): repeated calls give identical
    records. ``sampler(rng, row) -> class`` replaces the per-label draw
    (a testing seam for forcing outcomes).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ValidationError(f"labels must be 1-D, got shape {labels.shape}")
    bad = np.flatnonzero((labels < 0) | (labels >= matrix.num_classes))
    if bad.size:
        i = int(bad[0])
        raise ValidationError(
            f"label {labels[i]} at index {i} outside [0, {matrix.num_classes})"
        )
    rng = np.random.default_rng(seed)
    if sampler is None:
        # Inverse-CDF draw, vectorized over the whole label sequence.
        cum = np.cumsum(matrix.rows, axis=1)[labels]
        u = rng.random(labels.size)
        given = np.minimum((cum < u[:, None]).sum(axis=1), matrix.num_classes - 1)
    else:
        given = np.array([sampler(rng, matrix.rows[t]) for t in labels], dtype=np.int64)
    return [
        CorruptionRecord(index=i, true_label=int(t), given_label=int(g),
                         corrupted=bool(t != g))
        for i, (t, g) in enumerate(zip(labels, given))
    ]


def realized_noise_rate(records) -> float:
    """Fraction of records whose given label differs from the truth."""
    records = list(records)
    if not records:
        raise ValidationError("cannot compute a noise rate over zero records")
    return sum(r.corrupted for r in records) / len(records)


def expected_corruption_rate(matrix: TransitionMatrix, labels=None) -> float:
    """Expected corrupted fraction: mean of (1 - diagonal) over the label mix."""
    diag = np.diag(matrix.rows)
    if labels is None:
        return float(np.mean(1.0 - diag))
    labels = np.asarray(labels, dtype=np.int64)
    return float(np.mean(1.0 - diag[labels]))


def corrupt_dataset(dataset: NoisyDataset, matrix: TransitionMatrix, seed: int,
                    manifest_extra: dict | None = None) -> NoisyDataset:
    """Apply a transition matrix to a dataset's given labels (from its true labels)."""
    records = apply_transition(dataset.true_labels, matrix, seed)
    manifest = {
        "format": MANIFEST_FORMAT,
        "kind": matrix.kind,
        "seed": seed,
        "num_classes": dataset.num_classes,
        **(manifest_extra or {}),
    }
    manifest["realized_rate"] = realized_noise_rate(records)
    return NoisyDataset(images=dataset.images, records=records,
                        num_classes=dataset.num_classes, manifest=manifest)


def inject_instance_dependent(clean_dataset: NoisyDataset, rate: float,
                              proxy_config, seed: int,
                              accuracy_tolerance: float = 0.02) -> NoisyDataset:
    """Image-conditional noise via an under-trained proxy classifier.

    Trains a plain supervised proxy on the clean labels, tracks its
    training-set accuracy after every epoch, picks the earliest epoch whose
    accuracy lands within ``accuracy_tolerance`` of ``1 - rate`` (falling
    back to the closest epoch that did not overshoot the band), and adopts
    that epoch's predictions as the given labels.
    """
    from . import training  # deferred: training depends on this module

    if any(r.corrupted for r in clean_dataset.records):
        raise ValidationError("instance-dependent injection needs a zero-corruption dataset")
    if not 0.0 < rate < 0.5:
        raise ValidationError(f"rate must be in (0, 0.5), got {rate}")

    target = 1.0 - rate
    accuracies, predictions = training.train_proxy_with_predictions(
        clean_dataset, proxy_config, seed=seed
    )
    accuracies = np.asarray(accuracies)
    within = np.flatnonzero(np.abs(accuracies - target) <= accuracy_tolerance)
    if within.size:
        chosen = int(within[0])
    else:
        under = np.flatnonzero(accuracies <= target + accuracy_tolerance)
        if not under.size:
            raise ValidationError(
                "proxy overshot the target training accuracy at every epoch: "
                f"closest achieved {accuracies.min():.4f} vs target {target:.4f}"
            )
        gaps = np.abs(accuracies[under] - target)
        chosen = int(under[np.argmin(gaps)])

    true_labels = clean_dataset.true_labels
    given = predictions[chosen]
    records = [
        CorruptionRecord(index=i, true_label=int(t), given_label=int(g),
                         corrupted=bool(t != g))
        for i, (t, g) in enumerate(zip(true_labels, given))
    ]
    manifest = {
        "format": MANIFEST_FORMAT,
        "kind": "instance_dependent",
        "rate": rate,
        "seed": seed,
        "num_classes": clean_dataset.num_classes,
        "proxy_epoch": chosen + 1,
        "proxy_train_accuracy": float(accuracies[chosen]),
        "realized_rate": realized_noise_rate(records),
    }
    return NoisyDataset(images=clean_dataset.images, records=records,
                        num_classes=clean_dataset.num_classes, manifest=manifest)


def write_manifest(path, records, header: dict) -> None:
    """Persist corruption records as `index,true_label,given_label,corrupted` lines.

    The header block is `# key: value` lines; the first line names the
    format version. This layout is stable: extend with new header keys only.
    """
    lines = [f"# {MANIFEST_FORMAT}"]
    for key, value in header.items():
        if key == "format":
            continue
        lines.append(f"# {key}: {value}")
    lines.append("index,true_label,given_label,corrupted")
    for r in records:
        lines.append(f"{r.index},{r.true_label},{r.given_label},{int(r.corrupted)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    """Load a manifest written by :func:`write_manifest`.

    Returns ``(records, header)``; header values come back as strings.
    """
    records: list[CorruptionRecord] = []
    header: dict[str, str] = {}
    with open(path) as fh:
        first = fh.readline().strip()
        if first != f"# {MANIFEST_FORMAT}":
            raise ValidationError(f"{path}: not a {MANIFEST_FORMAT} file (got {first!r})")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                header[key.strip()] = value.strip()
            elif line.startswith("index,"):
                continue
            else:
                idx, true, given, corrupted = line.split(",")
                records.append(CorruptionRecord(
                    index=int(idx), true_label=int(true), given_label=int(given),
                    corrupted=bool(int(corrupted)),
                ))
    return records, header
