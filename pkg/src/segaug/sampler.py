"""Mini-batch construction from a similarity manifest.

Each batch holds four mutually similar images drawn from one group and
``batch_size - 4`` unrelated images drawn from the pool.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

POSITIVES_PER_BATCH = 4


class SamplerError(ValueError):
    pass


class NoEligibleGroupError(SamplerError):
    pass


class InsufficientPoolError(SamplerError):
    pass


class ManifestParseError(SamplerError):
    pass


@dataclass(frozen=True)
class SimilarityManifest:
    groups: tuple[tuple[str, ...], ...]
    pool: tuple[str, ...]

    def __post_init__(self):
        groups = tuple(tuple(g) for g in self.groups)
        pool = tuple(self.pool)
        seen: set[str] = set()
        for ids in (*groups, pool):
            for i in ids:
                if not i:
                    raise ValueError("image ids must be non-empty")
                if i in seen:
                    raise ValueError(f"duplicate image id {i!r}")
                seen.add(i)
        for g in groups:
            if len(g) < 2:
                raise ValueError(f"similarity group {g} has fewer than 2 members")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "pool", pool)

    @property
    def eligible_groups(self) -> list[tuple[str, ...]]:
        return [g for g in self.groups if len(g) >= POSITIVES_PER_BATCH]


@dataclass(frozen=True)
class BatchSpec:
    positives: tuple[str, ...]
    negatives: tuple[str, ...]

    @property
    def ids(self) -> tuple[str, ...]:
        return self.positives + self.negatives

    def __len__(self):
        return len(self.positives) + len(self.negatives)


def sample_batch(
    manifest: SimilarityManifest, batch_size: int, rng: np.random.Generator
) -> BatchSpec:
    if batch_size < POSITIVES_PER_BATCH + 1:
        raise ValueError(f"batch_size must be at least {POSITIVES_PER_BATCH + 1}")
    groups = manifest.eligible_groups
    if not groups:
        raise NoEligibleGroupError(
            f"no similarity group has {POSITIVES_PER_BATCH} or more members"
        )
    n_neg = batch_size - POSITIVES_PER_BATCH
    if len(manifest.pool) < n_neg:
        raise InsufficientPoolError(
            f"pool has {len(manifest.pool)} ids, batch needs {n_neg} negatives"
        )
    group = groups[int(rng.integers(len(groups)))]
    pos_idx = rng.choice(len(group), size=POSITIVES_PER_BATCH, replace=False)
    neg_idx = rng.choice(len(manifest.pool), size=n_neg, replace=False)
    return BatchSpec(
        positives=tuple(group[int(i)] for i in pos_idx),
        negatives=tuple(manifest.pool[int(i)] for i in neg_idx),
    )


def batch_labels(spec: BatchSpec) -> np.ndarray:
    return np.concatenate(
        [np.ones(len(spec.positives), dtype=np.int64), np.zeros(len(spec.negatives), dtype=np.int64)]
    )


def parse_manifest(text: str) -> SimilarityManifest:
    """Parse ``[group]`` / ``[pool]`` sections, one id per line.

    Every ``[group]`` header starts a new group; ``[pool]`` sections
    accumulate. Blank lines and ``#`` comments are ignored.
    """
    groups: list[list[str]] = []
    pool: list[str] = []
    current: list[str] | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[group]":
            current = []
            groups.append(current)
        elif line == "[pool]":
            current = pool
        elif line.startswith("["):
            raise ManifestParseError(f"line {lineno}: unknown section {line}")
        elif current is None:
            raise ManifestParseError(f"line {lineno}: id outside of any section")
        else:
            current.append(line)
    try:
        return SimilarityManifest(tuple(tuple(g) for g in groups), tuple(pool))
    except ValueError as exc:
        raise ManifestParseError(str(exc)) from None


def load_manifest(path) -> SimilarityManifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def format_batch(spec: BatchSpec) -> str:
    return ",".join(spec.positives) + "|" + ",".join(spec.negatives)
