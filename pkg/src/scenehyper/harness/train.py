"""
Two-stage training and checkpoint evaluation.

Stage one runs ``warmup_epochs`` with the scene fusion bypassed (the head
sees ``o``); stage two runs ``finetune_epochs`` with the generated
parameters applied. Hypernetwork parameters get no gradient during stage
one because they are not on the computation path.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
import torch

from ..data import dataset_fingerprint, load_specs, load_split
from ..errors import ConfigurationError, ReportError
from ..evaluation import DetectionReport, class_accuracy, mean_ap, write_prediction_dump
from ..model import PreparedSplit, build_model, predict_split, prepare_split
from .checkpoint import file_hash, load_state, read_checkpoint, save_checkpoint
from .config import TrainConfig, parse_config_text, save_config

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.log"
BEST_CKPT = "best.ckpt"
LAST_CKPT = "last.ckpt"
EVAL_TEXT = "eval.txt"
EVAL_FILE = "eval.json"


def configure_determinism() -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


def cosine_lr(step: int, total: int, lr: float, lr_min: float) -> float:
    if total <= 1:
        return lr
    return lr_min + 0.5 * (lr - lr_min) * (1 + math.cos(math.pi * step / (total - 1)))


def gt_boxes(split: PreparedSplit) -> dict:
    return {s.scene_id: list(s.boxes) for s in split.scenes}


def validate(model, split: PreparedSplit, fuse: bool, thresholds=(0.25, 0.5), nms_iou=0.25):
    preds = predict_split(model, split, fuse=fuse, nms_iou=nms_iou)
    return mean_ap(preds, gt_boxes(split), thresholds), preds


@torch.no_grad()
def mean_loss(model, split: PreparedSplit, fuse: bool, batch_size: int) -> float:
    total, count = 0.0, 0
    for start in range(0, len(split), batch_size):
        rows = list(range(start, min(start + batch_size, len(split))))
        batch, targets = split.select(rows)
        loss, _ = model.loss(batch, targets, fuse=fuse)
        total += loss.item() * len(rows)
        count += len(rows)
    return total / count


def train(config: TrainConfig, data_dir, out_dir, epoch_callback=None) -> Path:
    """Train and return the path of the best-validation checkpoint.

    Writes ``metrics.log`` (one ``epoch train_loss val_map25 val_map50`` line
    per epoch, epoch 0 being the initialization), ``config.cfg``,
    ``best.ckpt`` and ``last.ckpt`` into ``out_dir``.
    """
    configure_determinism()
    data_dir, out_dir = Path(data_dir), Path(out_dir)
    train_scenes = load_split(data_dir, "train")
    val_scenes = load_split(data_dir, "val")
    if not train_scenes:
        raise ConfigurationError(f"{data_dir}: empty training split")
    if not val_scenes:
        raise ReportError(f"{data_dir}: empty validation split")
    out_dir.mkdir(parents=True, exist_ok=True)

    train_split = prepare_split(train_scenes, config)
    val_split = prepare_split(val_scenes, config)
    data_hash = dataset_fingerprint(data_dir)

    model = build_model(config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    steps_per_epoch = math.ceil(len(train_split) / config.batch_size)
    total_steps = steps_per_epoch * config.total_epochs
    save_config(config, out_dir / "config.cfg")

    def fuse_at(epoch: int) -> bool:
        return config.fusion_enabled and epoch > config.warmup_epochs

    metrics_path = out_dir / METRICS_FILE
    lines = []

    def record(epoch, train_loss, report):
        line = (f"{epoch} {train_loss:.6f} {report.mean_ap[0.25]:.6f} "
                f"{report.mean_ap[0.5]:.6f}")
        lines.append(line)
        metrics_path.write_text("\n".join(lines) + "\n")
        log.info("epoch %s", line)

    init_fuse = fuse_at(1)
    report, _ = validate(model, val_split, init_fuse, nms_iou=config.nms_iou)
    record(0, mean_loss(model, train_split, init_fuse, 50), report)

    manifest_base = {"config_hash": config.hash(), "config": config.to_text(), "data_hash": data_hash}
    best = -1.0
    step = 0
    for epoch in range(1, config.total_epochs + 1):
        fuse = fuse_at(epoch)
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_split))
        losses = []
        for start in range(0, len(order), config.batch_size):
            rows = order[start:start + config.batch_size]
            batch, targets = train_split.select(rows)
            for group in optimizer.param_groups:
                group["lr"] = cosine_lr(step, total_steps, config.lr, config.lr_min)
            optimizer.zero_grad(set_to_none=True)
            loss, _ = model.loss(batch, targets, fuse=fuse)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            losses.append(loss.item() * len(rows))
            step += 1
        train_loss = sum(losses) / len(train_split)
        report, _ = validate(model, val_split, fuse, nms_iou=config.nms_iou)
        record(epoch, train_loss, report)
        if epoch_callback is not None:
            epoch_callback(epoch, model, fuse)
        score = report.mean_ap[0.25]
        manifest = dict(manifest_base, epoch=epoch, fused=fuse,
                        metrics={"train_loss": round(train_loss, 6),
                                 "val_map25": round(report.mean_ap[0.25], 6),
                                 "val_map50": round(report.mean_ap[0.5], 6)})
        # only fused epochs are eligible once fusion exists, so the kept
        # checkpoint matches how evaluation runs it
        if (fuse or not config.fusion_enabled) and score > best:
            best = score
            save_checkpoint(out_dir / BEST_CKPT, model, manifest)
    last_manifest = dict(manifest_base, epoch=config.total_epochs, fused=fuse_at(config.total_epochs))
    save_checkpoint(out_dir / LAST_CKPT, model, last_manifest)
    if not (out_dir / BEST_CKPT).exists():
        save_checkpoint(out_dir / BEST_CKPT, model, last_manifest)
    evaluate(out_dir / BEST_CKPT, data_dir).write(out_dir / EVAL_TEXT, out_dir / EVAL_FILE)
    return out_dir / BEST_CKPT


def load_model(ckpt_path):
    manifest, tensors = read_checkpoint(ckpt_path)
    if "config" not in manifest:
        raise ConfigurationError(f"{ckpt_path}: checkpoint manifest has no config")
    config = parse_config_text(manifest["config"], path=f"{ckpt_path}:config")
    model = build_model(config)
    load_state(model, tensors)
    model.eval()
    return model, config, manifest


def ambiguity_categories(data_dir) -> list[int] | None:
    """Categories that belong to an ambiguity group of the dataset's scene types."""
    path = Path(data_dir) / "specs.json"
    if not path.is_file():
        return None
    cats = {c for spec in load_specs(path) for group in spec.ambiguity_groups for c in group}
    return sorted(cats) or None


def evaluate(ckpt_path, data_dir, thresholds=(0.25, 0.5), dump_path=None,
             split: str = "val") -> DetectionReport:
    """Run a checkpoint over a split, optionally dumping predictions."""
    configure_determinism()
    model, config, manifest = load_model(ckpt_path)
    scenes = load_split(data_dir, split)
    if not scenes:
        raise ReportError(f"{data_dir}: empty {split} split")
    prepared = prepare_split(scenes, config)
    fuse = bool(manifest.get("fused", config.fusion_enabled))
    preds = predict_split(model, prepared, fuse=fuse, nms_iou=config.nms_iou)
    gts = gt_boxes(prepared)
    report = mean_ap(preds, gts, thresholds, config={
        "checkpoint_sha256": file_hash(ckpt_path),
        "epoch": manifest.get("epoch"),
        "attention": config.attention,
        "split": split,
        "scenes": len(scenes),
    })
    report.config["class_accuracy@0.25"] = round(class_accuracy(preds, gts), 6)
    ambiguous = ambiguity_categories(data_dir)
    if ambiguous is not None and any(g.category in ambiguous for b in gts.values() for g in b):
        report.config["ambiguity_accuracy@0.25"] = round(class_accuracy(preds, gts, ambiguous), 6)
    if dump_path is not None:
        write_prediction_dump(preds, dump_path)
    return report
