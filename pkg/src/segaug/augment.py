"""Segment-level logo augmentation: color change, removal and rotation.

A run segments the image once, draws a shared selection of segments, and
then for every (segment, transform) pair flips an independent coin with
probability ``p``. Transforms are applied phase by phase in the order
color change, rotation, removal, always against the original segment map.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

from .image import Color, RasterImage
from .segmentation import (
    DEFAULT_CONNECTIVITY,
    DEFAULT_DROP_BITS,
    Connectivity,
    SegmentMap,
    segment_image,
)

RNG_ALGORITHM = "numpy.PCG64"

COLOR_CHANGE = "color_change"
ROTATION = "rotation"
REMOVAL = "removal"
TRANSFORM_ORDER = (COLOR_CHANGE, ROTATION, REMOVAL)

NPolicyKind = Literal["fixed", "third_of_L", "half_of_L"]


class AugmentError(Exception):
    pass


class UnknownSegmentError(AugmentError, KeyError):
    pass


class BackgroundSegmentError(AugmentError):
    """Raised when a transform targets the background segment."""


class LargestSegmentError(AugmentError):
    """Raised when removal targets the largest non-background segment."""


@dataclass(frozen=True)
class NPolicy:
    kind: NPolicyKind = "third_of_L"
    k: int = 1

    def __post_init__(self):
        if self.kind not in ("fixed", "third_of_L", "half_of_L"):
            raise ValueError(f"unknown n policy {self.kind!r}")
        if self.kind == "fixed" and self.k < 0:
            raise ValueError("fixed(k) needs k >= 0")

    @classmethod
    def parse(cls, text: str) -> "NPolicy":
        """Accepts ``third_of_L``, ``half_of_L``, ``fixed(k)`` or a bare integer."""
        text = text.strip()
        if text in ("third_of_L", "half_of_L"):
            return cls(text)
        if text.startswith("fixed(") and text.endswith(")"):
            text = text[6:-1]
        try:
            return cls("fixed", int(text))
        except ValueError:
            raise ValueError(f"cannot parse n policy {text!r}") from None

    def resolve(self, n_eligible: int) -> int:
        if self.kind == "fixed":
            return self.k
        if self.kind == "third_of_L":
            return max(1, n_eligible // 3)
        return max(1, n_eligible // 2)

    def __str__(self):
        return f"fixed({self.k})" if self.kind == "fixed" else self.kind


@dataclass(frozen=True)
class AugmentationConfig:
    n_policy: NPolicy = field(default_factory=NPolicy)
    p: float = 0.5
    transforms: frozenset[str] = frozenset({COLOR_CHANGE})
    seed: int = 0
    rotation_range_deg: tuple[float, float] = (-90.0, 90.0)
    min_area: int = 4
    drop_bits: int = DEFAULT_DROP_BITS
    connectivity: Connectivity = DEFAULT_CONNECTIVITY

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        transforms = frozenset(self.transforms)
        if not transforms:
            raise ValueError("at least one transform must be enabled")
        unknown = transforms - set(TRANSFORM_ORDER)
        if unknown:
            raise ValueError(f"unknown transforms: {sorted(unknown)}")
        object.__setattr__(self, "transforms", transforms)
        lo, hi = self.rotation_range_deg
        if not -180.0 <= lo <= hi <= 180.0:
            raise ValueError(f"rotation range {self.rotation_range_deg} not within [-180, 180]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def ordered_transforms(self) -> tuple[str, ...]:
        return tuple(t for t in TRANSFORM_ORDER if t in self.transforms)

    def make_rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))


@dataclass(frozen=True)
class Decision:
    segment_id: int
    transform: str
    params: Any  # [r, g, b] | angle in degrees | None
    applied: bool

    def to_json(self) -> dict:
        return {
            "segment_id": self.segment_id,
            "transform": self.transform,
            "params": self.params,
            "applied": self.applied,
        }


@dataclass(frozen=True)
class AugmentationRecord:
    source: str
    seed: int
    decisions: tuple[Decision, ...]
    selected: tuple[int, ...] = ()

    @property
    def applied_count(self) -> int:
        return sum(d.applied for d in self.decisions)


def hash64(master_seed: int, key: str) -> int:
    """Stable 64-bit seed derived from a master seed and a string key."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(master_seed).to_bytes(8, "little", signed=False))
    h.update(key.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def manifest_line(src: str, dst: str, record: AugmentationRecord) -> str:
    obj = {
        "src": src,
        "dst": dst,
        "seed": record.seed,
        "rng": RNG_ALGORITHM,
        "decisions": [d.to_json() for d in record.decisions],
    }
    return json.dumps(obj, separators=(",", ":"))


# selection -------------------------------------------------------------------


def eligible_segments(seg_map: SegmentMap, min_area: int) -> list[int]:
    return [
        s.id for s in seg_map.segments if s.id != seg_map.background_id and s.area >= min_area
    ]


def largest_foreground_segment(seg_map: SegmentMap) -> int | None:
    best = None
    for s in seg_map.segments:
        if s.id != seg_map.background_id and (best is None or s.area > best.area):
            best = s
    return None if best is None else best.id


def select_segments(
    seg_map: SegmentMap, config: AugmentationConfig, rng: np.random.Generator
) -> list[int]:
    eligible = eligible_segments(seg_map, config.min_area)
    if not eligible:
        return []
    n = min(config.n_policy.resolve(len(eligible)), len(eligible))
    picked = rng.choice(len(eligible), size=n, replace=False)
    return [eligible[int(i)] for i in picked]


# transforms --------------------------------------------------------------------


def _check_target(image: RasterImage, seg_map: SegmentMap, segment_id: int) -> None:
    if (image.height, image.width) != seg_map.labels.shape:
        raise ValueError("segment map and image dimensions differ")
    if segment_id not in seg_map:
        raise UnknownSegmentError(segment_id)


def color_change(
    image: RasterImage, seg_map: SegmentMap, segment_id: int, new_color
) -> RasterImage:
    _check_target(image, seg_map, segment_id)
    out = image.copy_array()
    out[seg_map.mask(segment_id)] = Color.of(new_color)
    return RasterImage(out)


def remove_segment(image: RasterImage, seg_map: SegmentMap, segment_id: int) -> RasterImage:
    """Fill a segment with the background's mean color.

    The background itself and the largest non-background segment are refused.
    """
    _check_target(image, seg_map, segment_id)
    if segment_id == seg_map.background_id:
        raise BackgroundSegmentError(f"segment {segment_id} is the background")
    if segment_id == largest_foreground_segment(seg_map):
        raise LargestSegmentError(f"segment {segment_id} is the largest segment")
    out = image.copy_array()
    out[seg_map.mask(segment_id)] = seg_map.background.mean_color
    return RasterImage(out)


def _cos_sin(angle_deg: float) -> tuple[float, float]:
    # exact values at quarter turns so axis-aligned rotations do not pick up
    # 1e-16 noise that flips nearest-neighbour rounding
    q, r = divmod(angle_deg, 90.0)
    if r == 0.0:
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(q) % 4]
    t = math.radians(angle_deg)
    return math.cos(t), math.sin(t)


def rotated_footprint(
    seg_map: SegmentMap, segment_id: int, angle_deg: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Inverse-map nearest-neighbour rotation of a segment mask about its centroid.

    Positive angles turn counter-clockwise as displayed (y axis pointing
    down). Returns ``(dst_y, dst_x, src_y, src_x)`` for every in-canvas
    destination pixel whose source lies on the segment.
    """
    info = seg_map.segments[segment_id]
    cx, cy = info.centroid
    min_x, min_y, max_x, max_y = info.bbox
    h, w = seg_map.labels.shape
    radius = max(math.hypot(x - cx, y - cy) for x in (min_x, max_x) for y in (min_y, max_y))
    reach = int(math.ceil(radius)) + 1
    x0, x1 = max(0, int(math.floor(cx)) - reach), min(w - 1, int(math.ceil(cx)) + reach)
    y0, y1 = max(0, int(math.floor(cy)) - reach), min(h - 1, int(math.ceil(cy)) + reach)
    dst_y, dst_x = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    dx = dst_x - cx
    dy = dst_y - cy
    c, s = _cos_sin(angle_deg)
    src_x = np.floor(cx + dx * c - dy * s + 0.5).astype(np.int64)
    src_y = np.floor(cy + dx * s + dy * c + 0.5).astype(np.int64)
    inside = (src_x >= 0) & (src_x < w) & (src_y >= 0) & (src_y < h)
    hit = np.zeros_like(inside)
    hit[inside] = seg_map.labels[src_y[inside], src_x[inside]] == segment_id
    return dst_y[hit], dst_x[hit], src_y[hit], src_x[hit]


def rotate_segment(
    image: RasterImage, seg_map: SegmentMap, segment_id: int, angle_deg: float
) -> RasterImage:
    """Erase a segment, rotate it about its centroid and paste it back on top."""
    _check_target(image, seg_map, segment_id)
    if segment_id == seg_map.background_id:
        raise BackgroundSegmentError(f"segment {segment_id} is the background")
    if not math.isfinite(angle_deg):
        raise ValueError("angle must be finite")
    src = image.pixels
    out = image.copy_array()
    out[seg_map.mask(segment_id)] = seg_map.background.mean_color
    dy, dx, sy, sx = rotated_footprint(seg_map, segment_id, angle_deg)
    out[dy, dx] = src[sy, sx]
    return RasterImage(out)


# pipeline --------------------------------------------------------------------


def _draw_params(transform: str, config: AugmentationConfig, rng: np.random.Generator):
    if transform == COLOR_CHANGE:
        return [int(v) for v in rng.integers(0, 256, size=3)]
    if transform == ROTATION:
        lo, hi = config.rotation_range_deg
        return float(rng.uniform(lo, hi))
    return None


def plan_decisions(
    selected: list[int], config: AugmentationConfig, rng: np.random.Generator
) -> list[Decision]:
    """One Bernoulli(p) draw per (segment, transform), followed by its parameter draw.

    Parameters are drawn whether or not the transform fires, which keeps
    the draw sequence independent of earlier outcomes.
    """
    decisions = []
    for seg_id in selected:
        for transform in config.ordered_transforms:
            applied = bool(rng.random() < config.p)
            params = _draw_params(transform, config, rng)
            decisions.append(Decision(seg_id, transform, params if applied else None, applied))
    return decisions


def augment_image(
    image: RasterImage,
    config: AugmentationConfig,
    rng: np.random.Generator | None = None,
    source: str = "",
) -> tuple[RasterImage, AugmentationRecord]:
    if rng is None:
        rng = config.make_rng()
    seg_map = segment_image(image, config.drop_bits, config.connectivity)
    selected = select_segments(seg_map, config, rng)
    decisions = plan_decisions(selected, config, rng)

    largest = largest_foreground_segment(seg_map)
    final = []
    for d in decisions:
        if d.applied and d.transform == REMOVAL and d.segment_id == largest:
            d = Decision(d.segment_id, d.transform, None, False)
        final.append(d)

    out = image
    for transform in TRANSFORM_ORDER:
        for d in final:
            if not d.applied or d.transform != transform:
                continue
            if transform == COLOR_CHANGE:
                out = color_change(out, seg_map, d.segment_id, d.params)
            elif transform == ROTATION:
                out = rotate_segment(out, seg_map, d.segment_id, d.params)
            else:
                out = remove_segment(out, seg_map, d.segment_id)

    record = AugmentationRecord(
        source=source, seed=config.seed, decisions=tuple(final), selected=tuple(selected)
    )
    return out, record
