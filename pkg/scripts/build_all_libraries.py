#!/usr/bin/env python3
"""Build every library config in configs/ (library + relations files)."""

import sys
from pathlib import Path

from mpswarm.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

if __name__ == "__main__":
    rc = 0
    for cfg in sorted(CONFIGS.glob("lib*.yaml")):
        print(f"=== {cfg.name} ===")
        rc |= main(["build-library", str(cfg)])
    sys.exit(rc)
