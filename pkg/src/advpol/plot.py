"""Turn curve CSVs into gnuplot data blocks (one indexed block per group)."""

from __future__ import annotations

import csv
from collections import OrderedDict
from pathlib import Path


def gnuplot_blocks(path: str | Path, group_by: str | None = "mode", x: str | None = None,
                   y: str = "mean", err: str | None = "sem") -> str:
    """Blocks are separated by two blank lines so ``plot ... index i`` picks
    group i; each block starts with a comment naming the group."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        rows = list(reader)
    if x is None:
        x = cols[0] if cols[0] != group_by else cols[1]
    missing = [c for c in (x, y) if c not in cols]
    if missing:
        raise ValueError(f"{path}: missing column(s) {missing}; have {cols}")
    if err is not None and err not in cols:
        err = None
    groups: "OrderedDict[str, list[dict]]" = OrderedDict()
    for r in rows:
        key = r[group_by] if group_by and group_by in cols else "all"
        groups.setdefault(key, []).append(r)
    out = []
    for name, rs in groups.items():
        lines = [f"# {name}", f"# {x} {y}" + (f" {err}" if err else "")]
        for r in rs:
            lines.append(" ".join([r[x], r[y]] + ([r[err]] if err else [])))
        out.append("\n".join(lines))
    return "\n\n\n".join(out) + "\n"
