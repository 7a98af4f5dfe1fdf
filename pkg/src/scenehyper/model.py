"""
The full detector: point backbone, candidate decoder with scene-conditioned
fusion, and detection head. Also the dataset preparation that turns scenes
into batched tensors.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .backbone import BackboneOutput, PointBackbone, build_plan, collate_plans, index_batch
from .data import PointScene
from .decoder import Decoder
from .geometry import Box3D, nms_3d
from .harness.config import TrainConfig
from .head import BoxPredictions, DetectionHead, Targets, detection_loss
from .hypernet import SceneHyperNetwork


class SceneConditionedDetector(nn.Module):
    def __init__(self, config: TrainConfig, dtype=torch.float32):
        super().__init__()
        self.config = config
        self.backbone = PointBackbone(config.encoder_config(), dtype=dtype)
        self.decoder = Decoder(config.decoder_config(), self.backbone.out_width, dtype=dtype)
        shape = config.layer_shape()
        self.hypernet = None
        if shape is not None:
            self.hypernet = SceneHyperNetwork(
                shape, c_a=config.c_a, c_s=config.c_s, n_d=config.n_d, c_n=config.c_n,
                c_h=config.c_h or None, use_agnostic=config.agnostic,
                use_specific=config.specific, dtype=dtype,
            )
        self.head = DetectionHead(config.width, config.num_classes, ddh=config.ddh,
                                  size_prior=config.size_prior, dtype=dtype)

    def forward(self, batch: dict, fuse: bool = True) -> tuple[BoxPredictions, BackboneOutput]:
        """``fuse=False`` (or no hypernetwork) feeds the head ``o`` instead of ``o_hat``."""
        enc = self.backbone(batch)
        generated = None
        if fuse and self.hypernet is not None:
            generated = self.hypernet(enc.query)
        cand = enc.candidates
        o_hat = self.decoder(cand.features, cand.positions, enc.memory_features,
                             enc.memory_points, generated)
        return self.head(cand.positions, o_hat), enc

    def loss(self, batch: dict, targets: Targets, fuse: bool = True):
        pred, enc = self(batch, fuse=fuse)
        return detection_loss(pred, enc.candidates.positions, targets,
                              enc.sampling_logits, enc.memory_points,
                              weights=self.config.loss_weights())


def build_model(config: TrainConfig, dtype=torch.float32) -> SceneConditionedDetector:
    """Seeded construction: the same config always yields the same weights."""
    torch.manual_seed(config.seed)
    return SceneConditionedDetector(config, dtype=dtype)


@dataclass
class PreparedSplit:
    scenes: list
    batch: dict
    targets: Targets

    def __len__(self):
        return len(self.scenes)

    def select(self, rows) -> tuple[dict, Targets]:
        return index_batch(self.batch, rows), self.targets.index(rows)


_PLAN_CACHE: dict = {}


def prepare_split(scenes: Sequence[PointScene], config: TrainConfig, dtype=torch.float32) -> PreparedSplit:
    enc = config.encoder_config()
    plans = []
    for s in scenes:
        key = (s.scene_id, s.points.tobytes(), enc)
        plan = _PLAN_CACHE.get(key)
        if plan is None:
            plan = build_plan(s.points, enc)
            _PLAN_CACHE[key] = plan
        plans.append(plan)
    max_boxes = max([len(s.boxes) for s in scenes] + [1])
    return PreparedSplit(list(scenes), collate_plans(plans, dtype=dtype),
                         Targets.from_boxes([s.boxes for s in scenes], dtype=dtype, max_boxes=max_boxes))


def predictions_to_boxes(pred: BoxPredictions, nms_iou: float | None = 0.25) -> list[list[Box3D]]:
    """Per-scene scored boxes (argmax category, sigmoid objectness), NMS'd."""
    centers = pred.centers.detach().double().numpy()
    sizes = pred.sizes.detach().double().numpy()
    cats = pred.class_logits.detach().argmax(-1).numpy()
    scores = pred.scores.detach().double().numpy()
    out = []
    for b in range(centers.shape[0]):
        boxes = [
            Box3D(tuple(centers[b, k]), tuple(np.maximum(sizes[b, k], 1e-6)), int(cats[b, k]),
                  float(scores[b, k]))
            for k in range(centers.shape[1])
        ]
        if nms_iou is not None:
            boxes = [boxes[i] for i in nms_3d(boxes, nms_iou)]
        out.append(boxes)
    return out


@torch.no_grad()
def predict_split(model: SceneConditionedDetector, split: PreparedSplit, fuse: bool = True,
                  batch_size: int = 50, nms_iou: float | None = 0.25) -> dict:
    model.eval()
    out = {}
    for start in range(0, len(split), batch_size):
        rows = list(range(start, min(start + batch_size, len(split))))
        batch, _ = split.select(rows)
        pred, _ = model(batch, fuse=fuse)
        for row, boxes in zip(rows, predictions_to_boxes(pred, nms_iou)):
            out[split.scenes[row].scene_id] = boxes
    model.train()
    return out
