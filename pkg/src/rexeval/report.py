"""Evaluation reports: a lossless JSON form and a plain-text table.

The table marks the per-column best among non-privileged models and
footnotes every cell that excluded instances. The JSON form carries
every MetricResult so any cell can be traced back to its inputs, and
`verify_against_audit` recomputes cells from per-instance audit logs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .metrics import HIGHER, MetricResult

# column key, table header, cell format
COLUMNS = (
    ("air", "AIR↑", "{:.2f}"),
    ("air_generated", "AIR-gen↑", "{:.2f}"),
    ("mrr_ae", "MRR-AE↑", "{:.2f}"),
    ("tlae", "TLAE↓", "{:.3f}"),
    ("tlae_gold", "TLAE-gold↓", "{:.3f}"),
    ("entail", "Entail↑", "{:.2f}"),
    ("gm_f1", "GM-F1↑", "{:.3f}"),
    ("cnll", "CNLL↓", "{:.3f}"),
    ("rmse", "RMSE↓", "{:.3f}"),
)


@dataclass
class ModelRow:
    model: str
    privileged: bool
    note: str
    cells: dict[str, MetricResult]

    def to_dict(self) -> dict:
        return {"model": self.model, "privileged": self.privileged, "note": self.note,
                "cells": {key: cell.to_dict() for key, cell in self.cells.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelRow":
        return cls(d["model"], d["privileged"], d.get("note", ""),
                   {key: MetricResult.from_dict(c) for key, c in d["cells"].items()})


@dataclass
class EvaluationReport:
    config_hash: str
    corpus_fingerprint: str
    seeds: dict[str, int]
    settings: dict
    regressor_validation_mse: float | None
    rows: list[ModelRow]
    # measured, not part of the report's identity: never serialized, never compared
    wall_time_seconds: float | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "corpus_fingerprint": self.corpus_fingerprint,
            "seeds": dict(self.seeds),
            "settings": dict(self.settings),
            "regressor_validation_mse": self.regressor_validation_mse,
            "rows": [row.to_dict() for row in self.rows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(d["config_hash"], d["corpus_fingerprint"], dict(d["seeds"]),
                   dict(d["settings"]), d.get("regressor_validation_mse"),
                   [ModelRow.from_dict(r) for r in d["rows"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EvaluationReport":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def row(self, model: str) -> ModelRow:
        for r in self.rows:
            if r.model == model:
                return r
        raise KeyError(f"no row for model '{model}'")


def _best_values(report: EvaluationReport, key: str) -> float | None:
    """Best value in a column among non-privileged rows."""
    contenders = [row.cells[key].value for row in report.rows
                  if not row.privileged and key in row.cells]
    if not contenders:
        return None
    direction = next(row.cells[key].direction for row in report.rows if key in row.cells)
    return max(contenders) if direction == HIGHER else min(contenders)


def format_table(report: EvaluationReport) -> str:
    columns = [c for c in COLUMNS if any(c[0] in row.cells for row in report.rows)]
    best = {key: _best_values(report, key) for key, _, _ in columns}

    footnotes: list[str] = []
    grid: list[list[str]] = []
    for row in report.rows:
        name = row.model + (" (privileged)" if row.privileged else "")
        rendered = [name]
        for key, _, fmt in columns:
            cell = row.cells.get(key)
            if cell is None:
                rendered.append("-")
                continue
            text = fmt.format(cell.value)
            if not row.privileged and best[key] is not None and cell.value == best[key]:
                text = f"*{text}*"
            if cell.excluded > 0:
                footnotes.append(f"[{len(footnotes) + 1}] {row.model} {key}: "
                                 f"{cell.excluded} of {cell.attempted} instances excluded")
                text += f"[{len(footnotes)}]"
            rendered.append(text)
        grid.append(rendered)

    headers = ["model"] + [header for _, header, _ in columns]
    widths = [max(len(headers[c]), *(len(g[c]) for g in grid)) for c in range(len(headers))]
    lines = [
        "explanation faithfulness and coherence report",
        f"config hash: {report.config_hash}",
        f"corpus fingerprint: {report.corpus_fingerprint}",
        "seeds: " + " ".join(f"{k}={v}" for k, v in sorted(report.seeds.items())),
        "settings: " + " ".join(f"{k}={v}" for k, v in sorted(report.settings.items())),
    ]
    if report.regressor_validation_mse is not None:
        lines.append(f"aux regressor validation mse: {report.regressor_validation_mse:.4f}")
    lines.append("")
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for rendered in grid:
        lines.append("  ".join(v.ljust(w) for v, w in zip(rendered, widths)).rstrip())
    lines.append("")
    lines.append("*value* marks the per-column best among non-privileged models.")
    lines.extend(footnotes)
    for row in report.rows:
        if row.note:
            lines.append(f"note {row.model}: {row.note}")
    return "\n".join(lines) + "\n"


class AuditMismatch(ValueError):
    pass


def _read_audit(path: Path) -> list[dict]:
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        return []
    columns = lines[0].split("\t")
    return [dict(zip(columns, line.split("\t"), strict=True)) for line in lines[1:]]


def _recompute(name: str, rows: list[dict]) -> float:
    name = {"air_generated": "air", "tlae_gold": "tlae"}.get(name, name)
    if name == "air":
        flipped = sum(int(r["flipped"]) for r in rows)
        return 100.0 * (1.0 - flipped / len(rows))
    if name == "mrr_ae":
        return 100.0 * (sum(float(r["reciprocal_rank"]) for r in rows) / len(rows))
    if name == "tlae":
        return sum(float(r["squared_error"]) for r in rows) / len(rows)
    if name == "entail":
        return 100.0 * sum(int(r["entailed"]) for r in rows) / len(rows)
    if name == "gm_f1":
        return sum(float(r["f1"]) for r in rows) / len(rows)
    if name == "cnll":
        return sum(float(r["score"]) for r in rows) / len(rows)
    if name == "rmse":
        return math.sqrt(sum(float(r["squared_error"]) for r in rows) / len(rows))
    raise ValueError(f"no audit recomputation rule for metric '{name}'")


def verify_against_audit(report: EvaluationReport, audit_dir, cells=None,
                         tol: float = 1e-9) -> list[tuple[str, str, float, float]]:
    """Recompute report cells from per-instance audit logs.

    `cells` optionally restricts the check to (model, column-key) pairs;
    by default every cell with an audit log is verified. Returns the
    checked (model, key, reported, recomputed) tuples and raises
    AuditMismatch on any disagreement beyond `tol` (relative to the
    reported magnitude) or any instance-count mismatch.
    """
    audit_dir = Path(audit_dir)
    checked: list[tuple[str, str, float, float]] = []
    wanted = set(cells) if cells is not None else None
    for row in report.rows:
        for key, cell in row.cells.items():
            if wanted is not None and (row.model, key) not in wanted:
                continue
            path = audit_dir / row.model / f"{key}.tsv"
            if not path.exists():
                if wanted is not None:
                    raise AuditMismatch(f"no audit log at {path}")
                continue
            rows = _read_audit(path)
            if len(rows) != cell.count:
                raise AuditMismatch(
                    f"{row.model}/{key}: audit has {len(rows)} instances, "
                    f"report says {cell.count}")
            recomputed = _recompute(cell.name, rows)
            if abs(recomputed - cell.value) > tol * max(1.0, abs(cell.value)):
                raise AuditMismatch(
                    f"{row.model}/{key}: reported {cell.value!r} but audit "
                    f"recomputes to {recomputed!r}")
            checked.append((row.model, key, cell.value, recomputed))
    if wanted is not None and len(checked) < len(wanted):
        missing = wanted - {(m, k) for m, k, _, _ in checked}
        raise AuditMismatch(f"cells not found in report: {sorted(missing)}")
    return checked
