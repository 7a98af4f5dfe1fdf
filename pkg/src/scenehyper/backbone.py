"""
Hierarchical point encoder.

Four set-abstraction stages (farthest point sampling + ball query + shared
per-point MLP + max-pool), two feature-propagation stages back up to the
second level, and a learned per-point score whose top-k points become the
object candidates. The candidates double as the scene query for the
hypernetwork (their first ``n_d`` positions).

Sampling and grouping depend only on coordinates, so they are computed once
per scene in numpy (:func:`build_plan`) and the torch side only gathers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, ShapeError
from .geometry import as_points, ball_query, farthest_point_sample, pad_groups

Tensor = torch.Tensor


@dataclass(frozen=True)
class EncoderConfig:
    downsample_sizes: tuple = (256, 128, 64, 32)
    radii: tuple = (0.1, 0.2, 0.4, 0.6)
    max_samples: tuple = (16, 16, 16, 16)
    sa_widths: tuple = (32, 48, 64, 64)
    fp_width: int = 64
    num_candidates: int = 32
    n_d: int = 16

    def __post_init__(self):
        sizes, radii = tuple(self.downsample_sizes), tuple(self.radii)
        if not (len(sizes) == len(radii) == len(self.max_samples) == len(self.sa_widths)):
            raise ConfigurationError("encoder stage lists must have equal lengths")
        if len(sizes) < 3:
            raise ConfigurationError("encoder needs at least 3 set-abstraction stages")
        if any(b >= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigurationError(f"downsample sizes must strictly decrease: {sizes}")
        if any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] <= 0:
            raise ConfigurationError(f"radii must be positive and strictly increase: {radii}")
        if self.num_candidates > self.memory_size:
            raise ConfigurationError(
                f"num_candidates={self.num_candidates} exceeds the {self.memory_size} propagated points"
            )
        if not 1 <= self.n_d:
            raise ConfigurationError("n_d must be positive")

    @property
    def memory_size(self) -> int:
        """Point count of the propagated level (the second SA level)."""
        return self.downsample_sizes[1]

    @property
    def fp_levels(self) -> list[tuple[int, int]]:
        """(coarse, fine) SA level pairs visited by feature propagation."""
        return [(lvl, lvl - 1) for lvl in range(len(self.downsample_sizes), 2, -1)]


@dataclass
class ScenePlan:
    """Coordinate-only sampling structure of one scene.

    Levels are numbered 1..L for the SA outputs; ``points[l-1]`` holds level
    ``l``. ``groups[s]``/``rel[s]`` describe stage ``s`` (0-based), indices
    point into the previous level (raw points for stage 0).
    """

    points: list = field(default_factory=list)
    groups: list = field(default_factory=list)
    rel: list = field(default_factory=list)
    fp_idx: list = field(default_factory=list)
    fp_weight: list = field(default_factory=list)


def interpolation_weights(coarse_points, fine_points, k: int = 3):
    """Inverse-distance weights over the ``k`` nearest coarse points.

    A fine point that coincides with a coarse point takes that point's value
    exactly. With fewer than ``k`` coarse points the spare slots get weight 0.
    """
    coarse = as_points(coarse_points)
    fine = as_points(fine_points)
    m = coarse.shape[0]
    use = min(k, m)
    d2 = np.sum((fine[:, None, :] - coarse[None, :, :]) ** 2, axis=2)
    order = np.argsort(d2, axis=1, kind="stable")[:, :use]
    dist = np.sqrt(np.take_along_axis(d2, order, axis=1))
    exact = dist[:, :1] == 0.0
    with np.errstate(divide="ignore"):
        inv = np.where(dist > 0, 1.0 / np.where(dist > 0, dist, 1.0), 0.0)
    inv = np.where(exact, np.eye(use)[0], inv)
    weight = inv / inv.sum(axis=1, keepdims=True)
    if use < k:
        order = np.concatenate([order, np.repeat(order[:, :1], k - use, axis=1)], axis=1)
        weight = np.concatenate([weight, np.zeros((fine.shape[0], k - use))], axis=1)
    return order.astype(np.int64), weight


def build_plan(points, config: EncoderConfig) -> ScenePlan:
    pts = as_points(points)
    if pts.shape[0] < config.downsample_sizes[0]:
        raise ConfigurationError(
            f"scene has {pts.shape[0]} points, needs at least {config.downsample_sizes[0]}"
        )
    plan = ScenePlan()
    prev = pts
    for k, radius, samples in zip(config.downsample_sizes, config.radii, config.max_samples):
        centers = prev[farthest_point_sample(prev, k, 0)]
        groups = pad_groups(ball_query(prev, centers, radius, samples), samples)
        plan.points.append(centers)
        plan.groups.append(groups)
        plan.rel.append((prev[groups] - centers[:, None, :]) / radius)
        prev = centers
    for coarse, fine in config.fp_levels:
        idx, w = interpolation_weights(plan.points[coarse - 1], plan.points[fine - 1])
        plan.fp_idx.append(idx)
        plan.fp_weight.append(w)
    return plan


def collate_plans(plans: Sequence[ScenePlan], dtype=torch.float32) -> dict:
    """Stack plans into batched tensors (all shapes are fixed by the config)."""
    out = {
        "points": [torch.from_numpy(np.stack([p.points[i] for p in plans])).to(dtype)
                   for i in range(len(plans[0].points))],
        "groups": [torch.from_numpy(np.stack([p.groups[i] for p in plans]))
                   for i in range(len(plans[0].groups))],
        "rel": [torch.from_numpy(np.stack([p.rel[i] for p in plans])).to(dtype)
                for i in range(len(plans[0].rel))],
        "fp_idx": [torch.from_numpy(np.stack([p.fp_idx[i] for p in plans]))
                   for i in range(len(plans[0].fp_idx))],
        "fp_weight": [torch.from_numpy(np.stack([p.fp_weight[i] for p in plans])).to(dtype)
                      for i in range(len(plans[0].fp_weight))],
    }
    return out


def index_batch(batch: dict, rows) -> dict:
    """Select scenes ``rows`` from a collated batch."""
    rows = torch.as_tensor(rows, dtype=torch.long)
    return {key: [t[rows] for t in value] for key, value in batch.items()}


def mlp(widths: Sequence[int], dtype=None, final_activation: bool = True) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        layers.append(nn.Linear(a, b, dtype=dtype))
        if final_activation or i < len(widths) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def _gather(features: Tensor, index: Tensor) -> Tensor:
    """``features`` (B, P, C) gathered at ``index`` (B, ...) -> (B, ..., C)."""
    b = features.shape[0]
    flat = index.reshape(b, -1)
    out = torch.gather(features, 1, flat.unsqueeze(-1).expand(-1, -1, features.shape[-1]))
    return out.reshape(*index.shape, features.shape[-1])


def group_pool(features: Tensor | None, groups: Tensor, rel: Tensor, stage_net: nn.Module) -> Tensor:
    """Shared MLP over ``[rel_xyz, feature]`` of every group member, max-pooled."""
    grouped = rel if features is None else torch.cat([rel, _gather(features, groups)], dim=-1)
    return stage_net(grouped).max(dim=-2).values


def interpolate(coarse_features: Tensor, idx: Tensor, weight: Tensor) -> Tensor:
    neighbours = _gather(coarse_features, idx)  # (B, n_fine, k, C)
    return (neighbours * weight.unsqueeze(-1)).sum(dim=-2)


def set_abstraction(points, features, k: int, radius: float, max_samples: int, stage_net):
    """One set-abstraction stage on a single scene.

    ``points`` is ``(N, 3)``, ``features`` ``(N, C)`` or None. Returns the
    FPS-selected sub-points (numpy) and their pooled features ``(k, C')``.
    """
    pts = as_points(points)
    if k > pts.shape[0]:
        raise ConfigurationError(f"cannot abstract {k} centers from {pts.shape[0]} points")
    centers = pts[farthest_point_sample(pts, k, 0)]
    groups = pad_groups(ball_query(pts, centers, radius, max_samples), max_samples)
    dtype = next(stage_net.parameters()).dtype
    rel = torch.from_numpy((pts[groups] - centers[:, None, :]) / radius).to(dtype)
    feats = None if features is None else features.unsqueeze(0)
    pooled = group_pool(feats, torch.from_numpy(groups).unsqueeze(0), rel.unsqueeze(0), stage_net)
    return centers, pooled[0]


def feature_propagation(coarse_points, coarse_feats, fine_points, fine_feats, stage_net):
    """Interpolate coarse features onto fine points, concatenate skip features
    and transform. Single scene, features are ``(P, C)`` tensors."""
    coarse = np.asarray(coarse_points, dtype=np.float64).reshape(-1, 3)
    if coarse.shape[0] < 1:
        raise ConfigurationError("feature propagation needs at least one coarse point")
    idx, w = interpolation_weights(coarse, fine_points)
    interp = interpolate(
        coarse_feats.unsqueeze(0),
        torch.from_numpy(idx).unsqueeze(0),
        torch.from_numpy(w).to(coarse_feats.dtype).unsqueeze(0),
    )[0]
    if fine_feats is not None:
        interp = torch.cat([interp, fine_feats], dim=-1)
    return stage_net(interp)


class Candidates(NamedTuple):
    positions: Tensor  # (B, K, 3)
    features: Tensor  # (B, K, C)
    indices: Tensor  # (B, K) into the propagated level


def top_candidates(scores: Tensor, num_candidates: int) -> Tensor:
    """Indices of the highest scores, descending; equal scores keep index order."""
    if num_candidates > scores.shape[-1]:
        raise ConfigurationError(
            f"num_candidates={num_candidates} exceeds the {scores.shape[-1]} available points"
        )
    order = torch.sort(scores.detach(), dim=-1, descending=True, stable=True).indices
    return order[..., :num_candidates]


def sample_candidates(points: Tensor, point_features: Tensor, num_candidates: int, scoring_net):
    """Score every point and keep the top ``num_candidates`` as candidates.

    Batched: ``points`` (B, P, 3), ``point_features`` (B, P, C). Returns the
    :class:`Candidates` and the raw per-point score logits (B, P).
    """
    scores = scoring_net(point_features).squeeze(-1)
    idx = top_candidates(scores, num_candidates)
    cand = Candidates(_gather(points, idx), _gather(point_features, idx), idx)
    return cand, scores


def scene_query(positions: Tensor, n_d: int) -> Tensor:
    """First ``n_d`` candidate positions; cyclically repeated if there are fewer."""
    k = positions.shape[-2]
    idx = torch.arange(n_d) % k
    return positions[..., idx, :]


class BackboneOutput(NamedTuple):
    candidates: Candidates
    memory_points: Tensor
    memory_features: Tensor
    sampling_logits: Tensor
    query: Tensor


class PointBackbone(nn.Module):
    def __init__(self, config: EncoderConfig, dtype=None):
        super().__init__()
        self.config = config
        stages = []
        in_width = 0
        for width in config.sa_widths:
            stages.append(mlp([in_width + 3, width, width], dtype=dtype))
            in_width = width
        self.sa = nn.ModuleList(stages)
        fps = []
        coarse_width = config.sa_widths[-1]
        for coarse, fine in config.fp_levels:
            skip = config.sa_widths[fine - 1]
            fps.append(mlp([coarse_width + skip, config.fp_width], dtype=dtype))
            coarse_width = config.fp_width
        self.fp = nn.ModuleList(fps)
        self.scoring = mlp([config.fp_width, config.fp_width // 2, 1], dtype=dtype,
                           final_activation=False)

    @property
    def out_width(self) -> int:
        return self.config.fp_width

    def forward(self, batch: dict) -> BackboneOutput:
        feats: list[Tensor] = []
        prev = None
        for stage, net in enumerate(self.sa):
            prev = group_pool(prev, batch["groups"][stage], batch["rel"][stage], net)
            feats.append(prev)
        current = feats[-1]
        for i, ((coarse, fine), net) in enumerate(zip(self.config.fp_levels, self.fp)):
            interp = interpolate(current, batch["fp_idx"][i], batch["fp_weight"][i])
            current = net(torch.cat([interp, feats[fine - 1]], dim=-1))
        mem_points = batch["points"][1]
        if current.shape[1] != mem_points.shape[1]:
            raise ShapeError("feature propagation did not end on the memory level")
        cand, logits = sample_candidates(mem_points, current, self.config.num_candidates, self.scoring)
        query = scene_query(cand.positions, self.config.n_d)
        return BackboneOutput(cand, mem_points, current, logits, query)


def encode_scene(points, config: EncoderConfig, backbone: PointBackbone) -> BackboneOutput:
    """Run ``backbone`` on a single scene's point array."""
    dtype = next(backbone.parameters()).dtype
    batch = collate_plans([build_plan(points, config)], dtype=dtype)
    return backbone(batch)
