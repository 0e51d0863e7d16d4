"""Graph-based superpixel segmentation (Felzenszwalb/Huttenlocher style).

Greedy union-find over grid edges sorted by weight. Two components C1, C2
joined by an edge of weight w merge when

    w <= min(Int(C1) + k/|C1|, Int(C2) + k/|C2|)

where Int(C) is the largest edge weight accepted inside C so far and k is
the scale constant: larger k tolerates larger internal contrast, producing
fewer, bigger components. A final pass sweeps the same ascending edge order
and folds any component smaller than ``min_size`` into its lowest-weight
neighbor.

Edge weights are absolute intensity differences, so the image should be on
the scale the defaults were tuned for ([0, 255]); callers holding unit-range
images multiply by 255 first. Edge order ties are broken by (weight,
row-major source pixel, direction) to keep the output deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter


@dataclass(frozen=True)
class FHConfig:
    scale_k: float = 100.0
    min_size: int = 20
    smoothing_sigma: float = 0.8
    connectivity: int = 4

    def __post_init__(self):
        if self.scale_k <= 0:
            raise ValueError("scale_k must be > 0")
        if self.min_size < 1:
            raise ValueError("min_size must be >= 1")
        if self.smoothing_sigma < 0:
            raise ValueError("smoothing_sigma must be >= 0")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


@dataclass
class SuperpixelMap:
    """Dense component ids over the pixel grid (ids in 0..n_components-1)."""

    labels: np.ndarray

    @property
    def n_components(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


@dataclass(frozen=True)
class ComponentStats:
    component_id: int
    size: int
    bbox: tuple[int, int, int, int]  # (row0, col0, row1, col1), inclusive


def _grid_edges(image: np.ndarray, connectivity: int):
    """Edge arrays (src, dst, weight, direction) for the pixel grid.

    Directions: 0 = right, 1 = down, 2 = down-right, 3 = down-left.
    src is the row-major index of the upper/left endpoint.
    """
    h, w = image.shape
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)
    srcs, dsts, wts, dirs = [], [], [], []

    def add(a, b, direction):
        srcs.append(a.ravel())
        dsts.append(b.ravel())
        wts.append(np.abs(image.flat[a.ravel()] - image.flat[b.ravel()]))
        dirs.append(np.full(a.size, direction, dtype=np.int8))

    if w > 1:
        add(idx[:, :-1], idx[:, 1:], 0)
    if h > 1:
        add(idx[:-1, :], idx[1:, :], 1)
    if connectivity == 8 and h > 1 and w > 1:
        add(idx[:-1, :-1], idx[1:, 1:], 2)
        add(idx[:-1, 1:], idx[1:, :-1], 3)
    if not srcs:
        empty = np.empty(0)
        return empty.astype(np.int64), empty.astype(np.int64), empty, empty.astype(np.int8)
    return (
        np.concatenate(srcs),
        np.concatenate(dsts),
        np.concatenate(wts).astype(np.float64),
        np.concatenate(dirs),
    )


class _UnionFind:
    __slots__ = ("parent", "size", "internal")

    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)
        self.internal = np.zeros(n, dtype=np.float64)

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:  # path compression
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int, weight: float) -> int:
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        self.internal[a] = max(self.internal[a], self.internal[b], weight)
        return a


def fh_segment(
    image: np.ndarray, cfg: FHConfig = FHConfig(), debug_dump=None
) -> SuperpixelMap:
    """Partition a grayscale image into superpixels.

    ``debug_dump``: optional path; writes the component map as an indexed
    PNG (ids folded mod 256) for visual inspection.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {image.shape}")
    if not np.isfinite(image).all():
        raise ValueError("image contains non-finite values")
    if cfg.smoothing_sigma > 0:
        image = gaussian_filter(image, cfg.smoothing_sigma)

    h, w = image.shape
    src, dst, weight, direction = _grid_edges(image, cfg.connectivity)
    order = np.lexsort((direction, src, weight))
    src, dst, weight = src[order], dst[order], weight[order]

    uf = _UnionFind(h * w)
    k = cfg.scale_k
    find, union = uf.find, uf.union
    size, internal = uf.size, uf.internal
    for i in range(len(weight)):
        a = find(int(src[i]))
        b = find(int(dst[i]))
        if a == b:
            continue
        wgt = weight[i]
        if wgt <= internal[a] + k / size[a] and wgt <= internal[b] + k / size[b]:
            union(a, b, wgt)

    # Fold undersized components into their lowest-weight neighbor; ascending
    # edge order makes the first merging edge the cheapest one available.
    min_size = cfg.min_size
    if min_size > 1:
        for i in range(len(weight)):
            a = find(int(src[i]))
            b = find(int(dst[i]))
            if a != b and (size[a] < min_size or size[b] < min_size):
                union(a, b, weight[i])

    labels = np.empty(h * w, dtype=np.int64)
    remap: dict[int, int] = {}
    for p in range(h * w):
        root = find(p)
        if root not in remap:
            remap[root] = len(remap)
        labels[p] = remap[root]
    result = SuperpixelMap(labels=labels.reshape(h, w))
    if debug_dump is not None:
        dump_superpixels(result, debug_dump)
    return result


def dump_superpixels(sp: SuperpixelMap, path) -> None:
    """Write the component map as an indexed PNG (ids folded mod 256)."""
    from .imgio import save_mask_png

    save_mask_png(path, sp.labels % 256)


def component_stats(sp: SuperpixelMap) -> list[ComponentStats]:
    """Per-component pixel count and tight bounding box."""
    labels = sp.labels
    n = sp.n_components
    sizes = np.bincount(labels.ravel(), minlength=n)
    h, w = labels.shape
    rows = np.repeat(np.arange(h), w)
    cols = np.tile(np.arange(w), h)
    flat = labels.ravel()
    r0 = np.full(n, h, dtype=np.int64)
    c0 = np.full(n, w, dtype=np.int64)
    r1 = np.full(n, -1, dtype=np.int64)
    c1 = np.full(n, -1, dtype=np.int64)
    np.minimum.at(r0, flat, rows)
    np.minimum.at(c0, flat, cols)
    np.maximum.at(r1, flat, rows)
    np.maximum.at(c1, flat, cols)
    return [
        ComponentStats(i, int(sizes[i]), (int(r0[i]), int(c0[i]), int(r1[i]), int(c1[i])))
        for i in range(n)
    ]


def partition_sets(labels: np.ndarray) -> set[frozenset[int]]:
    """Relabeling-invariant view of a label map, for partition equality checks."""
    flat = np.asarray(labels).ravel()
    groups: dict[int, list[int]] = {}
    for pixel, lab in enumerate(flat):
        groups.setdefault(int(lab), []).append(pixel)
    return {frozenset(v) for v in groups.values()}
