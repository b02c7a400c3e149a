#!/usr/bin/env python3
"""Time the batch collision checks across library sizes, cloud sizes,
resolutions, and peer counts; writes plot-ready CSVs.

Plot (one-liner, needs matplotlib + pandas):
  python3 -c "import pandas as pd, matplotlib.pyplot as p; d = pd.read_csv('bench_obstacle.csv'); d.groupby(['n_prims','cloud_points']).p50_ms.mean().unstack().plot(marker='o'); p.savefig('bench_obstacle.png')"
"""

import sys
from pathlib import Path

from mpswarm.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

if __name__ == "__main__":
    libs = [str(CONFIGS / f"lib{n}.yaml") for n in (37, 73, 109, 181, 361)]
    rc = main(
        ["bench", "obstacle", "--library-config", *libs, "-o", "bench_obstacle.csv"]
    )
    rc |= main(
        ["bench", "agents", "--library-config", str(CONFIGS / "lib73.yaml"),
         "-o", "bench_agents.csv"]
    )
    sys.exit(rc)
