#!/usr/bin/env python
"""Run the smoke configuration end to end (seconds, not minutes)."""

import sys
from pathlib import Path

from rexeval.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(main(["run-all", "--config", str(ROOT / "fixtures" / "smoke.ini"),
                   *sys.argv[1:]]))
