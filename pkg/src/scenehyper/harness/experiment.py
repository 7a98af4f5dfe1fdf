"""
Ablation runner: trains every variant over several seeds and summarizes
seed-medians of detection mAP and ambiguity-pair accuracy.

Training is deterministic, so a finished run is reused whenever its config,
dataset and training code are unchanged. The key is stored next to the run
as ``run.key``; anything else forces a retrain.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..data import build_dataset, dataset_fingerprint, default_specs
from .config import TrainConfig
from .train import EVAL_FILE, train

log = logging.getLogger(__name__)

VARIANTS = {
    "none": dict(attention="none"),
    "ssa": dict(attention="ssa"),
    "msa": dict(attention="msa"),
    "msa-no_agnostic": dict(attention="msa", agnostic=False),
    "msa-no_specific": dict(attention="msa", specific=False),
}
SEEDS = (0, 1, 2)
BENCHMARK_SCENES = 1000
BENCHMARK_SEED = 0
KEY_FILE = "run.key"
SECONDS_FILE = "run.seconds"

# modules whose source decides what a training run produces
_TRAINING_SOURCES = (
    "backbone.py", "data.py", "decoder.py", "evaluation.py", "geometry.py", "head.py",
    "hypernet.py", "model.py", "harness/checkpoint.py", "harness/config.py", "harness/train.py",
)


def code_fingerprint() -> str:
    root = Path(__file__).resolve().parent.parent
    h = hashlib.sha256()
    for rel in _TRAINING_SOURCES:
        h.update(rel.encode())
        h.update((root / rel).read_bytes())
    return h.hexdigest()


def run_key(config: TrainConfig, data_hash: str) -> str:
    return hashlib.sha256(f"{config.hash()} {data_hash} {code_fingerprint()}".encode()).hexdigest()


def ensure_benchmark(data_dir, num_scenes: int = BENCHMARK_SCENES, seed: int = BENCHMARK_SEED) -> Path:
    """Generate the default benchmark unless an identical one is already there."""
    data_dir = Path(data_dir)
    stamp = data_dir / "benchmark.json"
    expected = {"scenes": num_scenes, "seed": seed,
                "specs": [s.to_json() for s in default_specs()], "code": code_fingerprint()}
    if stamp.is_file() and json.loads(stamp.read_text()) == expected:
        return data_dir
    build_dataset(default_specs(), num_scenes, seed, data_dir)
    stamp.write_text(json.dumps(expected, indent=1) + "\n")
    return data_dir


@dataclass
class RunResult:
    variant: str
    seed: int
    map25: float
    map50: float
    ambiguity_accuracy: float
    class_accuracy: float
    seconds: float  # wall time of the training run, cached or not
    cached: bool


def _result(variant, seed, run_dir, cached) -> RunResult:
    summary = json.loads((run_dir / EVAL_FILE).read_text())
    cfg = summary["config"]
    seconds = float((run_dir / SECONDS_FILE).read_text())
    return RunResult(variant, seed, summary["mean_ap"]["0.25"], summary["mean_ap"]["0.5"],
                     cfg["ambiguity_accuracy@0.25"], cfg["class_accuracy@0.25"], seconds, cached)


def run_variant(variant: str, seed: int, data_dir, out_dir, base: TrainConfig | None = None) -> RunResult:
    config = (base or TrainConfig()).with_updates(seed=seed, **VARIANTS[variant])
    run_dir = Path(out_dir) / f"{variant}_s{seed}"
    key = run_key(config, dataset_fingerprint(data_dir))
    key_path = run_dir / KEY_FILE
    complete = all((run_dir / f).is_file() for f in (EVAL_FILE, SECONDS_FILE))
    if complete and key_path.is_file() and key_path.read_text().strip() == key:
        log.info("reusing %s", run_dir)
        return _result(variant, seed, run_dir, True)
    if key_path.exists():
        key_path.unlink()
    start = time.perf_counter()
    train(config, data_dir, run_dir)
    (run_dir / SECONDS_FILE).write_text(f"{time.perf_counter() - start:.1f}\n")
    key_path.write_text(key + "\n")
    return _result(variant, seed, run_dir, False)


def run_ablation(data_dir, out_dir, variants: Sequence[str] = tuple(VARIANTS),
                 seeds: Sequence[int] = SEEDS, base: TrainConfig | None = None) -> list[RunResult]:
    return [run_variant(v, s, data_dir, out_dir, base) for v in variants for s in seeds]


def medians(results: Sequence[RunResult]) -> dict:
    """``{variant: {"map25": ..., "map50": ..., "ambiguity_accuracy": ...}}`` over seeds."""
    out = {}
    for variant in dict.fromkeys(r.variant for r in results):
        rows = [r for r in results if r.variant == variant]
        out[variant] = {
            name: statistics.median(getattr(r, name) for r in rows)
            for name in ("map25", "map50", "ambiguity_accuracy", "class_accuracy")
        }
    return out


def format_results(results: Sequence[RunResult]) -> str:
    lines = ["variant seed map25 map50 ambiguity_acc class_acc seconds"]
    for r in results:
        secs = f"{r.seconds:.0f}" + (" (cached)" if r.cached else "")
        lines.append(f"{r.variant} {r.seed} {r.map25:.4f} {r.map50:.4f} "
                     f"{r.ambiguity_accuracy:.4f} {r.class_accuracy:.4f} {secs}")
    lines.append("")
    lines.append("median over seeds:")
    for variant, m in medians(results).items():
        lines.append(f"{variant} map25={m['map25']:.4f} map50={m['map50']:.4f} "
                     f"ambiguity_acc={m['ambiguity_accuracy']:.4f} class_acc={m['class_accuracy']:.4f}")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="train all ablation variants and summarize")
    parser.add_argument("--data", required=True, help="benchmark directory (generated if absent)")
    parser.add_argument("--out", required=True, help="directory holding one subdirectory per run")
    parser.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    parser.add_argument("--seeds", nargs="+", type=int, default=list(SEEDS))
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    ensure_benchmark(args.data)
    results = run_ablation(args.data, args.out, args.variants, args.seeds)
    text = format_results(results)
    Path(args.out, "ablation.txt").write_text(text)
    sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
