"""
End-to-end walk through the harness on a small dataset.

1. Generate 60 rooms from the default three scene types.
2. Train a small MSA detector: a short warmup with fusion bypassed, then a
   short finetune stage with the generated layers active.
3. Evaluate the best checkpoint at IoU 0.25 and 0.5 and dump predictions.
4. Render the loss curve, per-category AP bars and a summary table.

The model is deliberately tiny so this finishes in under a minute; numbers
are not meaningful at this size. The full benchmark lives in 03.

Run:  python3 demos/02_train_and_evaluate.py [out_dir]
"""
import sys
import tempfile
from pathlib import Path

from scenehyper.data import build_dataset, default_specs
from scenehyper.harness.config import TrainConfig
from scenehyper.harness.report import report
from scenehyper.harness.train import evaluate, train

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="scenehyper_demo_"))
data, run = out / "data", out / "run"

entries = build_dataset(default_specs(), 60, seed=0, out_dir=data)
print(f"generated {len(entries)} scenes into {data}")

config = TrainConfig(
    downsample_sizes=(64, 32, 16, 8), radii=(0.15, 0.3, 0.5, 0.7), max_samples=(8, 8, 8, 8),
    sa_widths=(16, 16, 32, 32), fp_width=32, num_candidates=16, n_d=8,
    decoder_layers=2, width=16, attention_heads=2, ffn_width=32,
    embed_count=4, unit_fan_in=4, c_a=8, c_s=8,
    warmup_epochs=3, finetune_epochs=3, batch_size=8,
)
best = train(config, data, run)
print("metrics (epoch train_loss val_map25 val_map50):")
print((run / "metrics.log").read_text())

result = evaluate(best, data, thresholds=(0.25, 0.5), dump_path=run / "predictions.txt")
print(result.to_text())

for path in report([run], out / "report"):
    print("wrote", path)
