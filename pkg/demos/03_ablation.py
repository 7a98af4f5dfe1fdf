"""
The ablation study on the default benchmark.

Trains the fusion-free baseline, SSA, MSA and the two single-branch MSA
variants over seeds 0, 1 and 2 (about 16 minutes per run on one core),
then prints per-run numbers and seed-medians and renders a comparison
report. Finished runs are cached, so rerunning only retrains what changed.

Pass the same directory the acceptance suite uses to share its cache:

    python3 demos/03_ablation.py ~/.cache/scenehyper-acceptance
"""
import sys
from pathlib import Path

from scenehyper.harness.experiment import VARIANTS, ensure_benchmark, format_results, run_ablation
from scenehyper.harness.report import report

root = Path(sys.argv[1] if len(sys.argv) > 1 else "ablation").expanduser()
data = ensure_benchmark(root / "data")
results = run_ablation(data, root / "runs")
print(format_results(results))

run_dirs = [root / "runs" / f"{v}_s0" for v in VARIANTS]
for path in report(run_dirs, root / "report"):
    print("wrote", path)
