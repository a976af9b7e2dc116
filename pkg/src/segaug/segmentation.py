"""Color quantization and connected-component segmentation of logo images.

Pixels of identical (quantized) color that touch under 4- or 8-adjacency
form one segment. Labels are dense and numbered in raster-scan order of
each segment's first pixel, so label assignment is a pure function of the
input image.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.ndimage import find_objects
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .image import Color, RasterImage

Connectivity = Literal["four", "eight"]

DEFAULT_DROP_BITS = 3
DEFAULT_CONNECTIVITY: Connectivity = "eight"


@dataclass(frozen=True)
class SegmentInfo:
    id: int
    area: int
    bbox: tuple[int, int, int, int]  # min_x, min_y, max_x, max_y (inclusive)
    mean_color: Color
    centroid: tuple[float, float]  # (x, y)
    touches_border: bool


@dataclass(frozen=True, eq=False)
class SegmentMap:
    """Per-pixel segment labels plus per-segment statistics.

    ``labels`` is a read-only ``(height, width)`` int array with values in
    ``[0, len(segments))``.
    """

    labels: np.ndarray
    segments: tuple[SegmentInfo, ...]
    background_id: int

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def num_segments(self) -> int:
        return len(self.segments)

    @property
    def background(self) -> SegmentInfo:
        return self.segments[self.background_id]

    def mask(self, segment_id: int) -> np.ndarray:
        return self.labels == segment_id

    def __contains__(self, segment_id) -> bool:
        return isinstance(segment_id, (int, np.integer)) and 0 <= segment_id < len(self.segments)


def quantize(image: RasterImage, drop_bits: int) -> RasterImage:
    """Clear the ``drop_bits`` low bits of every channel."""
    if not 0 <= drop_bits <= 7:
        raise ValueError(f"drop_bits must be in [0, 7], got {drop_bits}")
    if drop_bits == 0:
        return image
    keep = np.uint8((0xFF << drop_bits) & 0xFF)
    return RasterImage(image.pixels & keep)


def _neighbour_offsets(connectivity: Connectivity) -> list[tuple[int, int]]:
    # (dy, dx) for half of the neighbourhood; the graph is undirected
    if connectivity == "four":
        return [(0, 1), (1, 0)]
    if connectivity == "eight":
        return [(0, 1), (1, 0), (1, 1), (1, -1)]
    raise ValueError(f"connectivity must be 'four' or 'eight', got {connectivity!r}")


def _raw_components(pixels: np.ndarray, connectivity: Connectivity) -> np.ndarray:
    h, w, _ = pixels.shape
    key = (
        (pixels[..., 0].astype(np.int32) << 16)
        | (pixels[..., 1].astype(np.int32) << 8)
        | pixels[..., 2].astype(np.int32)
    )
    # horizontal runs of one color become single graph nodes
    starts = np.ones((h, w), dtype=bool)
    starts[:, 1:] = key[:, 1:] != key[:, :-1]
    run = np.cumsum(starts.ravel()).reshape(h, w) - 1
    n_runs = int(run[-1, -1]) + 1
    rows, cols = [], []
    for dy, dx in _neighbour_offsets(connectivity):
        if dy == 0:
            continue
        x0, x1 = max(0, -dx), w - max(0, dx)
        if h < 2 or x1 <= x0:
            continue
        a = key[:-1, x0:x1]
        b = key[1:, x0 + dx:x1 + dx]
        same = a == b
        rows.append(run[:-1, x0:x1][same])
        cols.append(run[1:, x0 + dx:x1 + dx][same])
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        pair = np.unique(r * n_runs + c)
        r, c = np.divmod(pair, n_runs)
    else:
        r = c = np.empty(0, dtype=np.int64)
    graph = coo_matrix((np.ones(r.size, dtype=np.int8), (r, c)), shape=(n_runs, n_runs))
    _, comp = connected_components(graph, directed=False)
    # runs are numbered in raster order, so ranking components by their
    # first run gives raster first-encounter labels
    return _relabel_first_encounter(comp)[run]


def _relabel_first_encounter(raw: np.ndarray) -> np.ndarray:
    uniq, first = np.unique(raw, return_index=True)
    remap = np.empty(uniq.size, dtype=np.int64)
    remap[np.argsort(first, kind="stable")] = np.arange(uniq.size)
    return remap[np.searchsorted(uniq, raw)]


def identify_background(segments) -> int:
    """Id of the largest-area segment that touches the image border.

    Ties go to the lowest id.
    """
    best = None
    for seg in segments:
        if seg.touches_border and (best is None or seg.area > best.area):
            best = seg
    if best is None:
        raise ValueError("no segment touches the image border")
    return best.id


def _segment_stats(labels: np.ndarray, pixels: np.ndarray) -> tuple[SegmentInfo, ...]:
    h, w = labels.shape
    k = int(labels.max()) + 1
    flat = labels.ravel()
    area = np.bincount(flat, minlength=k)
    ys = np.repeat(np.arange(h, dtype=np.float64), w)
    xs = np.tile(np.arange(w, dtype=np.float64), h)

    boxes = find_objects(labels + 1)
    min_y = [b[0].start for b in boxes]
    max_y = [b[0].stop - 1 for b in boxes]
    min_x = [b[1].start for b in boxes]
    max_x = [b[1].stop - 1 for b in boxes]

    sum_x = np.bincount(flat, weights=xs, minlength=k)
    sum_y = np.bincount(flat, weights=ys, minlength=k)
    rgb = pixels.reshape(-1, 3).astype(np.int64)
    # integer channel sums; round half up
    sums = np.stack([np.bincount(flat, weights=rgb[:, c], minlength=k) for c in range(3)], 1)
    sums = sums.astype(np.int64)
    means = (2 * sums + area[:, None]) // (2 * area[:, None])

    border = np.zeros(k, dtype=bool)
    border[labels[0, :]] = True
    border[labels[-1, :]] = True
    border[labels[:, 0]] = True
    border[labels[:, -1]] = True

    return tuple(
        SegmentInfo(
            id=i,
            area=int(area[i]),
            bbox=(int(min_x[i]), int(min_y[i]), int(max_x[i]), int(max_y[i])),
            mean_color=Color(*(int(v) for v in means[i])),
            centroid=(float(sum_x[i] / area[i]), float(sum_y[i] / area[i])),
            touches_border=bool(border[i]),
        )
        for i in range(k)
    )


def label_components(
    image: RasterImage,
    connectivity: Connectivity = DEFAULT_CONNECTIVITY,
    stats_image: RasterImage | None = None,
) -> SegmentMap:
    """Label maximal connected regions of identical color.

    Segment statistics (notably ``mean_color``) are computed from
    ``stats_image`` when given, otherwise from ``image``. This lets callers
    label a quantized copy while keeping the original colors.
    """
    pixels = image.pixels
    if stats_image is not None and stats_image.pixels.shape != pixels.shape:
        raise ValueError("stats_image must have the same dimensions as image")
    labels = _raw_components(pixels, connectivity)
    labels = labels.reshape(image.height, image.width)
    labels.setflags(write=False)
    source = stats_image.pixels if stats_image is not None else pixels
    segments = _segment_stats(labels, source)
    return SegmentMap(labels=labels, segments=segments, background_id=identify_background(segments))


def segment_image(
    image: RasterImage,
    drop_bits: int = DEFAULT_DROP_BITS,
    connectivity: Connectivity = DEFAULT_CONNECTIVITY,
) -> SegmentMap:
    """Quantize, then label; statistics come from the unquantized pixels."""
    return label_components(quantize(image, drop_bits), connectivity, stats_image=image)


# debug output ----------------------------------------------------------------


def label_color(segment_id: int) -> Color:
    digest = hashlib.blake2b(segment_id.to_bytes(8, "little"), digest_size=3).digest()
    return Color(*digest)


def render_labels(seg_map: SegmentMap) -> RasterImage:
    """Paint each segment in a distinct color derived from its id."""
    palette = np.array([label_color(i) for i in range(seg_map.num_segments)], dtype=np.uint8)
    return RasterImage(palette[seg_map.labels])


def segment_report(seg_map: SegmentMap) -> str:
    lines = ["# id area min_x min_y max_x max_y mean_r mean_g mean_b background"]
    for s in seg_map.segments:
        lines.append(
            f"{s.id} {s.area} {' '.join(map(str, s.bbox))} "
            f"{s.mean_color.r} {s.mean_color.g} {s.mean_color.b} "
            f"{int(s.id == seg_map.background_id)}"
        )
    return "\n".join(lines) + "\n"
