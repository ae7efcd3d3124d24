#!/usr/bin/env python
"""Recompute a run's report cells from its per-instance audit logs.

Usage: verify_audit.py RUN_DIR [MODEL:CELL ...]

With no cell arguments, every cell that has an audit log is checked.
Exits nonzero if any recomputed aggregate disagrees with the report.
"""

import argparse
import sys
from pathlib import Path

from rexeval.pipeline import AUDIT_DIR, REPORT_JSON
from rexeval.report import AuditMismatch, EvaluationReport, verify_against_audit


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("run_dir", help="run directory holding report.json and audit/")
    parser.add_argument("cells", nargs="*", metavar="MODEL:CELL",
                        help="specific cells to check, e.g. oracle:mrr_ae")
    args = parser.parse_args(argv)

    run = Path(args.run_dir)
    report_path = run / REPORT_JSON
    if not report_path.exists():
        print(f"error: no {REPORT_JSON} in {run}", file=sys.stderr)
        return 1
    report = EvaluationReport.load(report_path)
    cells = None
    if args.cells:
        try:
            cells = [tuple(c.split(":", 1)) for c in args.cells]
        except ValueError:
            print("error: cells must look like MODEL:CELL", file=sys.stderr)
            return 2
    try:
        checked = verify_against_audit(report, run / AUDIT_DIR, cells=cells)
    except AuditMismatch as exc:
        print(f"MISMATCH: {exc}", file=sys.stderr)
        return 1
    if not checked:
        print("error: no audit logs found (was the run made with --audit?)",
              file=sys.stderr)
        return 1
    for model, key, reported, recomputed in checked:
        print(f"ok {model}:{key} reported={reported!r} recomputed={recomputed!r}")
    print(f"{len(checked)} cell(s) verified")
    return 0


if __name__ == "__main__":
    sys.exit(main())
