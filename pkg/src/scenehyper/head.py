"""
Detection head with a disentangled center offset.

The base offset ``dq = W_c o_hat`` is modulated by a length factor
``r in (0.9, 1.1)`` and a rotation from a predicted quaternion (identity
quaternion added to the raw regression), giving
``center = q + R(quat) (r dq)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ShapeError
from .geometry import quaternion_to_rotation

Tensor = torch.Tensor

R_MIN, R_SPAN = 0.9, 0.2


def regress_base_offset(o_hat: Tensor, W_c: Tensor, bias: Tensor | None = None) -> Tensor:
    if W_c.shape[-2:] != (3, o_hat.shape[-1]):
        raise ShapeError(f"W_c must be (3, {o_hat.shape[-1]}), got {tuple(W_c.shape)}")
    out = torch.matmul(o_hat, W_c.transpose(-1, -2))
    return out if bias is None else out + bias


def length_scale(pre_activation: Tensor) -> Tensor:
    return R_MIN + R_SPAN * torch.sigmoid(pre_activation)


def r_head(o_hat: Tensor, layer: nn.Module) -> Tensor:
    """Length factor in (0.9, 1.1), one per candidate."""
    return length_scale(layer(o_hat)).squeeze(-1)


def R_head(o_hat: Tensor, layer: nn.Module) -> Tensor:
    """Raw quaternion regression plus the identity quaternion (unnormalized)."""
    raw = layer(o_hat)
    identity = torch.zeros(4, dtype=raw.dtype)
    identity[0] = 1.0
    return raw + identity


def disentangled_offset(delta_q: Tensor, r: Tensor, R_quat: Tensor) -> Tensor:
    rot = quaternion_to_rotation(R_quat)
    scaled = delta_q * r.unsqueeze(-1)
    return torch.matmul(rot, scaled.unsqueeze(-1)).squeeze(-1)


@dataclass
class BoxPredictions:
    centers: Tensor  # (B, K, 3)
    log_sizes: Tensor  # (B, K, 3)
    class_logits: Tensor  # (B, K, num_classes)
    objectness_logits: Tensor  # (B, K)
    delta_q: Tensor
    r: Tensor | None
    R_quat: Tensor | None

    @property
    def sizes(self) -> Tensor:
        return torch.exp(self.log_sizes)

    @property
    def scores(self) -> Tensor:
        return torch.sigmoid(self.objectness_logits)


class DetectionHead(nn.Module):
    """Box regression from candidate positions and fused features.

    With ``ddh=False`` the length/rotation branches are absent and the head
    is the plain offset head ``center = q + W_c o_hat``.
    """

    def __init__(self, width: int, num_classes: int, ddh: bool = True,
                 size_prior: float = 1.0, dtype=None):
        super().__init__()
        self.ddh = ddh
        self.offset = nn.Linear(width, 3, dtype=dtype)
        self.size = nn.Linear(width, 3, dtype=dtype)
        self.classes = nn.Linear(width, num_classes, dtype=dtype)
        self.objectness = nn.Linear(width, 1, dtype=dtype)
        if ddh:
            self.length = nn.Linear(width, 1, dtype=dtype)
            self.rotation = nn.Linear(width, 4, dtype=dtype)
            nn.init.zeros_(self.rotation.weight)
            nn.init.zeros_(self.rotation.bias)
        with torch.no_grad():
            self.size.bias.fill_(float(np.log(size_prior)))

    def forward(self, positions: Tensor, o_hat: Tensor) -> BoxPredictions:
        delta_q = regress_base_offset(o_hat, self.offset.weight, self.offset.bias)
        r = quat = None
        if self.ddh:
            r = r_head(o_hat, self.length)
            quat = R_head(o_hat, self.rotation)
            offset = disentangled_offset(delta_q, r, quat)
        else:
            offset = delta_q
        return BoxPredictions(
            centers=positions + offset,
            log_sizes=self.size(o_hat),
            class_logits=self.classes(o_hat),
            objectness_logits=self.objectness(o_hat).squeeze(-1),
            delta_q=delta_q,
            r=r,
            R_quat=quat,
        )


def predict_boxes(positions: Tensor, o_hat: Tensor, head: DetectionHead) -> BoxPredictions:
    return head(positions, o_hat)


@dataclass
class Targets:
    """Padded ground truth for a batch: ``mask`` marks real boxes."""

    centers: Tensor  # (B, M, 3)
    sizes: Tensor  # (B, M, 3)
    classes: Tensor  # (B, M) long
    mask: Tensor  # (B, M) bool

    @classmethod
    def from_boxes(cls, scenes_boxes, dtype=torch.float32, max_boxes: int | None = None):
        m = max([len(b) for b in scenes_boxes] + [1]) if max_boxes is None else max_boxes
        n = len(scenes_boxes)
        centers = np.zeros((n, m, 3))
        sizes = np.ones((n, m, 3))
        classes = np.zeros((n, m), dtype=np.int64)
        mask = np.zeros((n, m), dtype=bool)
        for i, boxes in enumerate(scenes_boxes):
            for j, box in enumerate(boxes):
                centers[i, j], sizes[i, j] = box.center, box.size
                classes[i, j], mask[i, j] = box.category, True
        return cls(torch.from_numpy(centers).to(dtype), torch.from_numpy(sizes).to(dtype),
                   torch.from_numpy(classes), torch.from_numpy(mask))

    def index(self, rows) -> "Targets":
        rows = torch.as_tensor(rows, dtype=torch.long)
        return Targets(self.centers[rows], self.sizes[rows], self.classes[rows], self.mask[rows])


def points_in_boxes(points: Tensor, targets: Targets) -> Tensor:
    """(B, P, M) membership of each point in each real GT box (closed bounds)."""
    rel = (points.unsqueeze(-2) - targets.centers.unsqueeze(-3)).abs()
    inside = (rel <= targets.sizes.unsqueeze(-3) / 2).all(dim=-1)
    return inside & targets.mask.unsqueeze(-2)


def assign_candidates(positions: Tensor, targets: Targets) -> Tensor:
    """GT index per candidate, or -1.

    A candidate is assigned to the box containing it whose center is nearest;
    equal distances go to the lower GT index.
    """
    with torch.no_grad():
        inside = points_in_boxes(positions, targets)
        d2 = ((positions.unsqueeze(-2) - targets.centers.unsqueeze(-3)) ** 2).sum(-1)
        d2 = torch.where(inside, d2, torch.full_like(d2, float("inf")))
        best = d2.argmin(dim=-1)
        return torch.where(inside.any(dim=-1), best, torch.full_like(best, -1))


DEFAULT_LOSS_WEIGHTS = {
    "objectness": 1.0,
    "center": 10.0,
    "size": 5.0,
    "class": 1.0,
    "sampling": 1.0,
}


def detection_loss(pred: BoxPredictions, positions: Tensor, targets: Targets,
                   sampling_logits: Tensor | None = None, sampling_points: Tensor | None = None,
                   weights: dict | None = None, smooth_beta: float = 0.05):
    """Total loss and per-term breakdown.

    Positive candidates (inside a GT box) contribute center/size/class terms;
    all candidates contribute objectness; every propagated point contributes
    the sampling-score term (target: inside any GT box).
    """
    w = dict(DEFAULT_LOSS_WEIGHTS)
    if weights:
        w.update(weights)
    assigned = assign_candidates(positions, targets)
    positive = assigned >= 0
    zero = pred.centers.sum() * 0.0

    terms = {}
    terms["objectness"] = F.binary_cross_entropy_with_logits(
        pred.objectness_logits, positive.to(pred.objectness_logits.dtype)
    )
    if bool(positive.any()):
        gt = assigned.clamp(min=0)
        gt_centers = torch.gather(targets.centers, 1, gt.unsqueeze(-1).expand(-1, -1, 3))
        gt_sizes = torch.gather(targets.sizes, 1, gt.unsqueeze(-1).expand(-1, -1, 3))
        gt_classes = torch.gather(targets.classes, 1, gt)
        terms["center"] = F.smooth_l1_loss(
            pred.centers[positive], gt_centers[positive], beta=smooth_beta
        )
        terms["size"] = F.smooth_l1_loss(
            pred.log_sizes[positive], torch.log(gt_sizes[positive]), beta=smooth_beta
        )
        terms["class"] = F.cross_entropy(pred.class_logits[positive], gt_classes[positive])
    else:
        terms["center"] = terms["size"] = terms["class"] = zero
    if sampling_logits is not None:
        labels = points_in_boxes(sampling_points, targets).any(dim=-1)
        terms["sampling"] = F.binary_cross_entropy_with_logits(
            sampling_logits, labels.to(sampling_logits.dtype)
        )
    else:
        terms["sampling"] = zero
    total = sum(w[k] * v for k, v in terms.items())
    return total, terms
