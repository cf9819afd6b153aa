"""Run a few of the registered studies and print their verdicts.

    python3 demos/experiment_tour.py [outdir]

Tables and result.json land under outdir (default: a temporary directory).
"""
import sys
import tempfile

from noetherkit.experiments import ExperimentConfig, run

CONFIGS = [
    {"experiment": "q-init", "seed": 0, "params": {"m": 30, "h": 20, "n": 10, "samples": 500}},
    {"experiment": "ellipse", "seed": 0, "params": {"a": 3.0, "q_grid": [0.5, 1.0, 4.0]}},
    {"experiment": "radial-convergence", "seed": 0,
     "params": {"lambda_grid": [0.25, 0.5, 1.0, 2.0], "T": 5.0}},
]

outdir = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="noetherkit-")
for raw in CONFIGS:
    result = run(ExperimentConfig.from_dict(raw))
    root = result.write(outdir)
    print(f"{result.name}: {'PASS' if result.passed else 'FAIL'}  ({root})")
    for v in result.verdicts:
        tag = "PASS" if v.passed else "FAIL"
        soft = "" if v.asserted else " (soft)"
        print(f"  {tag} {v.name}{soft}: {v.value:.4g} {v.comparison} {v.threshold:.4g}")
