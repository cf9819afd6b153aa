"""Result containers, provenance and deterministic trial plumbing."""
from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from ..io import atomic_write_text, canonical_json, csv_text

SCHEMA_VERSION = 1


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def column(self, name):
        j = self.columns.index(name)
        return [row[j] for row in self.rows]

    def to_csv(self):
        return csv_text(self.columns, self.rows)


@dataclass(frozen=True)
class Verdict:
    """A named check; `asserted=False` marks a soft verdict that is only recorded."""

    name: str
    passed: bool
    value: float
    threshold: float
    comparison: str
    table: str
    asserted: bool = True

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "value": _num(self.value),
                "threshold": _num(self.threshold), "comparison": self.comparison,
                "table": self.table, "asserted": self.asserted}


def _num(x):
    # json has no nan/inf
    return float(x) if np.isfinite(x) else None


def check(name, value, threshold, comparison, table, asserted=True):
    ops = {"<=": lambda a, b: a <= b, "<": lambda a, b: a < b,
           ">=": lambda a, b: a >= b, ">": lambda a, b: a > b,
           "==": lambda a, b: a == b}
    value = float(value)
    passed = bool(np.isfinite(value) and ops[comparison](value, float(threshold)))
    return Verdict(name, passed, value, float(threshold), comparison, table, asserted)


def git_style_hash(obj):
    """sha1 over 'blob <len>\\0<canonical json>', the way git names a blob."""
    data = canonical_json(obj).encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class ExperimentResult:
    name: str
    tables: dict
    verdicts: list
    config: dict

    def __post_init__(self):
        for v in self.verdicts:
            if v.table not in self.tables:
                raise ValueError(f"verdict {v.name!r} refers to missing table {v.table!r}")

    @property
    def passed(self):
        return all(v.passed for v in self.verdicts if v.asserted)

    def verdict(self, name):
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def provenance(self):
        return {"config": self.config, "input_hash": git_style_hash(self.config),
                "schema": SCHEMA_VERSION}

    def to_json(self):
        body = {"experiment": self.name, "passed": self.passed,
                "verdicts": [v.to_dict() for v in self.verdicts],
                "tables": sorted(self.tables), "provenance": self.provenance}
        return canonical_json(body) + "\n"

    def write(self, outdir):
        """Write <outdir>/<name>/tables/*.csv and result.json; returns the run directory."""
        root = os.path.join(os.fspath(outdir), self.name)
        for tname, table in sorted(self.tables.items()):
            atomic_write_text(os.path.join(root, "tables", f"{tname}.csv"), table.to_csv())
        atomic_write_text(os.path.join(root, "result.json"), self.to_json())
        return root


def trial_rng(seed, *index):
    return np.random.default_rng([int(seed), *(int(i) for i in index)])


def max_workers():
    raw = os.environ.get("NOETHERKIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"NOETHERKIT_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def map_trials(fn, items):
    """Ordered map over independent trials, threaded up to NOETHERKIT_THREADS."""
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def spearman(x, y):
    """Rank correlation; nan when either side is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return float("nan")
    return float(spearmanr(x, y).statistic)


def require_grid(name, grid):
    grid = list(grid)
    if not grid:
        raise ValueError(f"{name} must be non-empty")
    return grid
