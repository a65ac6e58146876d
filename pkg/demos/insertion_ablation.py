"""A reduced insertion ablation through the command-line entry point.

One seed, short training and 50 evaluation episodes per variant; the
acceptance suite runs the full grid (3 seeds, 3000 steps, 100 episodes).
"""

import sys
import tempfile
from pathlib import Path

import yaml

from contactvla.cli import main, read_metrics

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="ablate_"))
config = out / "small.yaml"
out.mkdir(parents=True, exist_ok=True)
config.write_text(yaml.safe_dump({"training": {"steps": 600, "demos": 100, "checkpoint_every": 300}}))

main(["ablate", "--config", str(config), "--out", str(out / "runs"), "--episodes", "50", "--num-seeds", "1",
      "--variants", "full", "no-force", "baseline"])
print(open(out / "runs" / "ablation.csv").read())
m = read_metrics(out / "runs" / "full" / "seed_0" / "eval" / "metrics.csv")
print("full-variant expert shares:", [round(float(m[f"expert_{e}_share"]), 3) for e in range(8)])
