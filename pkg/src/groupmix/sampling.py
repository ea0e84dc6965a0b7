"""Mini-group batch sampling: fixed-size same-label groups, K groups per batch.

Groups are formed from GIVEN labels only; the sampler never looks at the
hidden truth. With group size 1 the scheme degenerates to conventional
shuffled batching, which :func:`plain_batches` provides directly (it is
also the sampler for the purely supervised baselines and the contrastive
warm-up stage, where labels must not influence batch composition).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ValidationError
from .seeding import derive_seed

REMAINDER_POLICIES = ("drop", "resample")


@dataclass(frozen=True)
class MiniGroup:
    """M dataset indices sharing one given label."""

    member_indices: tuple[int, ...]
    given_label: int


@dataclass(frozen=True)
class MiniGroupBatch:
    """K mini-groups consumed in one optimization step (batch size K*M)."""

    groups: tuple[MiniGroup, ...]
    group_size: int

    @property
    def groups_per_batch(self) -> int:
        return len(self.groups)

    @property
    def batch_size(self) -> int:
        return len(self.groups) * self.group_size

    @property
    def sample_indices(self) -> np.ndarray:
        """Flat indices, group-major: members of group 0, then group 1, ..."""
        return np.array([i for g in self.groups for i in g.member_indices], dtype=np.int64)

    @property
    def group_labels(self) -> np.ndarray:
        return np.array([g.given_label for g in self.groups], dtype=np.int64)

    def describe(self) -> str:
        """Compact composition string for audit/debug logs."""
        parts = [f"label={g.given_label}:{list(g.member_indices)}"
                 for g in self.groups]
        return f"batch[K={self.groups_per_batch},M={self.group_size}] " + " ".join(parts)


def build_groups(records, group_size: int, seed: int,
                 remainder_policy: str = "resample") -> list[MiniGroup]:
    """Partition each given-label class into shuffled chunks of ``group_size``.

    Leftover samples smaller than a full group are dropped or padded by
    resampling from the same class, per ``remainder_policy``. Pads prefer
    indices outside the leftover chunk so a group never self-duplicates
    unless the class itself is smaller than the group size.
    """
    if group_size < 1:
        raise ValidationError(f"group_size must be >= 1, got {group_size}")
    if remainder_policy not in REMAINDER_POLICIES:
        raise ValidationError(
            f"remainder_policy must be one of {REMAINDER_POLICIES}, got {remainder_policy!r}"
        )
    by_label: dict[int, list[int]] = {}
    for r in records:
        by_label.setdefault(r.given_label, []).append(r.index)

    rng = np.random.default_rng(derive_seed(seed, "build_groups"))
    groups: list[MiniGroup] = []
    for label in sorted(by_label):
        indices = np.array(by_label[label], dtype=np.int64)
        if remainder_policy == "drop" and indices.size < group_size:
            warnings.warn(
                f"class {label} has {indices.size} samples (< group size "
                f"{group_size}) and contributes no groups under 'drop'",
                stacklevel=2,
            )
            continue
        order = rng.permutation(indices)
        full = indices.size // group_size
        for k in range(full):
            members = order[k * group_size:(k + 1) * group_size]
            groups.append(MiniGroup(tuple(int(i) for i in members), int(label)))
        rest = order[full * group_size:]
        if rest.size and remainder_policy == "resample":
            pool = np.setdiff1d(indices, rest)
            if pool.size == 0:
                pool = indices
            need = group_size - rest.size
            pads = rng.choice(pool, size=need, replace=pool.size < need)
            members = np.concatenate([rest, pads])
            groups.append(MiniGroup(tuple(int(i) for i in members), int(label)))
    if not groups:
        raise ValidationError(
            f"no class provided at least {group_size} samples; nothing to sample"
        )
    return groups


def iterate_batches(groups: list[MiniGroup], groups_per_batch: int, seed: int,
                    epoch: int = 0) -> Iterator[MiniGroupBatch]:
    """Yield one epoch of batches: groups shuffled, K at a time, partial dropped.

    The shuffle seed is derived from (seed, epoch), so each epoch has a
    distinct but reproducible order.
    """
    if groups_per_batch < 1:
        raise ValidationError(f"groups_per_batch must be >= 1, got {groups_per_batch}")
    if groups_per_batch > len(groups):
        raise ValidationError(
            f"groups_per_batch={groups_per_batch} exceeds available groups ({len(groups)})"
        )
    sizes = {len(g.member_indices) for g in groups}
    if len(sizes) != 1:
        raise ValidationError(f"groups have mixed sizes {sorted(sizes)}")
    group_size = sizes.pop()

    rng = np.random.default_rng(derive_seed(seed, "batches", epoch))
    order = rng.permutation(len(groups))
    for start in range(0, len(groups) - groups_per_batch + 1, groups_per_batch):
        chosen = tuple(groups[i] for i in order[start:start + groups_per_batch])
        yield MiniGroupBatch(groups=chosen, group_size=group_size)


def plain_batches(num_samples: int, batch_size: int, seed: int,
                  epoch: int = 0) -> Iterator[np.ndarray]:
    """Conventional shuffled batching; the label-free reference sampler."""
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    if batch_size > num_samples:
        raise ValidationError(
            f"batch_size={batch_size} exceeds dataset size ({num_samples})"
        )
    rng = np.random.default_rng(derive_seed(seed, "plain", epoch))
    order = rng.permutation(num_samples)
    for start in range(0, num_samples - batch_size + 1, batch_size):
        yield order[start:start + batch_size].astype(np.int64)
