"""
Point-cloud and box geometry kernels.

Everything here is a pure function. Point sets are ``(N, 3)`` float arrays in
scene units (the synthetic scenes live in the unit cube). Boxes are
axis-aligned and described by center and full extent along each axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import BoundsError, DegenerateInputError, ShapeError


def as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"expected an (N, 3) point array, got shape {pts.shape}")
    if pts.shape[0] < 1:
        raise BoundsError("point set is empty")
    if not np.all(np.isfinite(pts)):
        raise ShapeError("point coordinates must be finite")
    return pts


@dataclass(frozen=True)
class Box3D:
    center: tuple
    size: tuple
    category: int
    score: float | None = None

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        s = tuple(float(v) for v in self.size)
        if len(c) != 3 or len(s) != 3:
            raise ShapeError("box center and size must be 3-vectors")
        if not all(v > 0 for v in s):
            raise ShapeError(f"box size must be strictly positive, got {s}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "category", int(self.category))

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]

    def bounds(self):
        c, s = np.asarray(self.center), np.asarray(self.size)
        return c - s / 2, c + s / 2


def farthest_point_sample(points, k: int, start_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling.

    Each new index maximizes the minimum squared distance to the points already
    chosen; ties go to the smallest index. Returns ``k`` distinct indices,
    starting with ``start_index``.
    """
    pts = as_points(points)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise BoundsError(f"cannot sample k={k} points from a set of {n}")
    if not 0 <= start_index < n:
        raise BoundsError(f"start_index {start_index} out of range for {n} points")

    selected = np.empty(k, dtype=np.int64)
    selected[0] = start_index
    min_d2 = np.sum((pts - pts[start_index]) ** 2, axis=1)
    min_d2[start_index] = -1.0
    for i in range(1, k):
        # argmax returns the first maximum, which is the smallest index
        nxt = int(np.argmax(min_d2))
        selected[i] = nxt
        d2 = np.sum((pts - pts[nxt]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
        min_d2[selected[: i + 1]] = -1.0
    return selected


def ball_query(points, centers, radius: float, max_samples: int) -> list[np.ndarray]:
    """Group point indices around each center.

    A group holds up to ``max_samples`` indices within ``radius`` (inclusive),
    ascending. A center with no neighbour gets its nearest point repeated
    ``max_samples`` times, so groups are never empty.
    """
    pts = as_points(points)
    ctr = as_points(centers)
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if max_samples < 1:
        raise ValueError(f"max_samples must be >= 1, got {max_samples}")

    d2 = np.sum((ctr[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    within = d2 <= radius * radius
    groups = []
    for row in range(ctr.shape[0]):
        idx = np.flatnonzero(within[row])[:max_samples]
        if idx.size == 0:
            idx = np.full(max_samples, int(np.argmin(d2[row])), dtype=np.int64)
        groups.append(idx.astype(np.int64))
    return groups


def pad_groups(groups: Sequence[np.ndarray], max_samples: int) -> np.ndarray:
    """Stack variable-size groups into ``(len(groups), max_samples)`` by
    repeating each group's first index (max-pooling ignores duplicates)."""
    out = np.empty((len(groups), max_samples), dtype=np.int64)
    for i, g in enumerate(groups):
        out[i, : g.size] = g
        out[i, g.size :] = g[0]
    return out


def _rotation_entries(w, x, y, z):
    return (
        (1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)),
        (2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)),
        (2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)),
    )


def quaternion_to_rotation(q):
    """Rotation matrix of a quaternion ``(w, x, y, z)``.

    The quaternion is L2-normalized first, so any nonzero scale gives the same
    rotation. Accepts a numpy array (shape ``(4,)`` or ``(..., 4)``) or a torch
    tensor; the torch path is differentiable and batched over leading dims.
    """
    if isinstance(q, torch.Tensor):
        if q.shape[-1] != 4:
            raise ShapeError(f"quaternion must have 4 components, got {tuple(q.shape)}")
        norm = torch.linalg.vector_norm(q, dim=-1, keepdim=True)
        if bool((norm == 0).any()):
            raise DegenerateInputError("cannot convert a zero quaternion to a rotation")
        w, x, y, z = (q / norm).unbind(-1)
        rows = [torch.stack(r, dim=-1) for r in _rotation_entries(w, x, y, z)]
        return torch.stack(rows, dim=-2)

    arr = np.asarray(q, dtype=np.float64)
    if arr.shape[-1] != 4:
        raise ShapeError(f"quaternion must have 4 components, got {arr.shape}")
    norm = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DegenerateInputError("cannot convert a zero quaternion to a rotation")
    w, x, y, z = np.moveaxis(arr / norm, -1, 0)
    entries = _rotation_entries(w, x, y, z)
    return np.stack([np.stack(r, axis=-1) for r in entries], axis=-2)


def _overlap(ca, sa, cb, sb):
    # interval overlap written via centre distance, so that identical boxes
    # overlap by exactly their size (no rounding from c +- s/2)
    return np.clip(np.minimum(np.minimum(sa, sb), (sa + sb) / 2 - np.abs(ca - cb)), 0.0, None)


def box_iou(a: Box3D, b: Box3D) -> float:
    """Axis-aligned 3D intersection over union."""
    inter = float(np.prod(_overlap(np.asarray(a.center), np.asarray(a.size),
                                   np.asarray(b.center), np.asarray(b.size))))
    union = a.volume + b.volume - inter
    return inter / union


def box_iou_matrix(centers_a, sizes_a, centers_b, sizes_b) -> np.ndarray:
    """Pairwise IoU between two box arrays, shape ``(len(a), len(b))``."""
    ca, sa = np.asarray(centers_a, float).reshape(-1, 3), np.asarray(sizes_a, float).reshape(-1, 3)
    cb, sb = np.asarray(centers_b, float).reshape(-1, 3), np.asarray(sizes_b, float).reshape(-1, 3)
    inter = np.prod(_overlap(ca[:, None], sa[:, None], cb[None], sb[None]), axis=2)
    va, vb = np.prod(sa, axis=1), np.prod(sb, axis=1)
    return inter / (va[:, None] + vb[None] - inter)


def nms_3d(boxes: Sequence[Box3D], iou_threshold: float) -> list[int]:
    """Greedy per-category non-maximum suppression.

    Boxes are visited by descending score (earlier index wins a tie); a box is
    dropped when its IoU with an already kept box of the same category
    exceeds ``iou_threshold``. Returns kept indices in visiting order.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    if any(b.score is None for b in boxes):
        raise ValueError("nms_3d needs scored boxes")
    if not boxes:
        return []
    scores = np.array([b.score for b in boxes], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    centers = np.array([b.center for b in boxes])
    sizes = np.array([b.size for b in boxes])
    cats = np.array([b.category for b in boxes])
    iou = box_iou_matrix(centers, sizes, centers, sizes)

    kept: list[int] = []
    suppressed = np.zeros(len(boxes), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        kept.append(int(i))
        suppressed |= (cats == cats[i]) & (iou[i] > iou_threshold)
    return kept
