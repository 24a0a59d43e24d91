"""Benchmark harness: algorithm x backend x dataset x minsup grids, CSV and SVG output."""

from __future__ import annotations

import csv
import gc
import io
import itertools
import logging
import time
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .apriori import MiningResult, apriori_mine
from .datasets import (ConfigurationError, SyntheticParams, TransactionDatabase, absolute_minsup,
                       generate_synthetic, read_spmf)
from .fpgrowth import fpgrowth_mine
from .mapreduce import Backend, BackendKind
from .parallel import mr_apriori, pfp_mine

log = logging.getLogger(__name__)

ALGORITHMS = ("apriori", "fpgrowth", "mr_apriori", "pfp")
ORACLE_MAX_ITEMS = 20


class OracleTooLarge(ValueError):
    pass


class VerificationError(RuntimeError):
    def __init__(self, cell, detail):
        self.cell = cell
        super().__init__(f"verification failed for {cell}: {detail}")


def brute_force_oracle(db: TransactionDatabase, minsup_abs: int) -> MiningResult:
    """Enumerate every itemset over the items present and count it by subset scan."""
    t0 = time.perf_counter()
    present = np.unique(db.items).tolist()
    if len(present) > ORACLE_MAX_ITEMS:
        raise OracleTooLarge(f"{len(present)} distinct items exceeds the oracle limit of {ORACLE_MAX_ITEMS}")
    pos = {item: b for b, item in enumerate(present)}
    masks = [sum(1 << pos[i] for i in t) for t in db]
    frequent = {}
    for k in range(1, len(present) + 1):
        for combo in itertools.combinations(range(len(present)), k):
            m = sum(1 << b for b in combo)
            support = sum(1 for t in masks if t & m == m)
            if support >= minsup_abs:
                frequent[tuple(present[b] for b in combo)] = support
    return MiningResult(frequent, minsup_abs, "oracle", "sequential", time.perf_counter() - t0)


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    path: str | None = None
    synthetic: SyntheticParams | None = None
    db: TransactionDatabase | None = field(default=None, compare=False, repr=False)

    def load(self) -> TransactionDatabase:
        if self.db is not None:
            return self.db
        if self.synthetic is not None:
            return generate_synthetic(self.synthetic, name=self.name)
        if self.path is None:
            raise ConfigurationError(f"dataset {self.name!r} has neither a path nor synthetic params")
        return read_spmf(self.path, name=self.name)


@dataclass
class BenchConfig:
    datasets: list
    minsups: list
    algorithms: list = field(default_factory=lambda: ["apriori", "fpgrowth"])
    backends: list = field(default_factory=lambda: ["sequential"])
    partitions: int = 4
    workers: int = 4
    trials: int = 3
    verify: bool = False
    warmup: bool = False
    groups: int | None = None
    spill_dir: str | None = None

    def validate(self):
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if not self.datasets or not self.algorithms or not self.backends or not self.minsups:
            raise ConfigurationError("datasets, minsups, algorithms and backends must be non-empty")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigurationError(f"unknown algorithm {a!r}")
        for b in self.backends:
            BackendKind(b)


@dataclass
class BenchmarkRecord:
    dataset: str
    algorithm: str
    backend: str
    minsup_rel: float
    minsup_abs: int
    trial_times: list
    mean_time: float
    num_frequent: int
    verified: bool = False


@dataclass
class DatasetError:
    dataset: str
    message: str


class BenchRun(list):
    """Records of one grid run; ``errors`` lists datasets that failed to load."""

    def __init__(self, records=(), errors=()):
        super().__init__(records)
        self.errors = list(errors)


def run_miner(algorithm, db, minsup_abs, backend: Backend, partitions, groups=None) -> MiningResult:
    if algorithm == "apriori":
        return apriori_mine(db, minsup_abs)
    if algorithm == "fpgrowth":
        return fpgrowth_mine(db, minsup_abs)
    if algorithm == "mr_apriori":
        return mr_apriori(db, minsup_abs, backend, partitions)
    if algorithm == "pfp":
        return pfp_mine(db, minsup_abs, backend, partitions, groups)
    raise ConfigurationError(f"unknown algorithm {algorithm!r}")


def _timed(fn):
    # timeit-style: collect first, no collector pauses inside the timed call
    gc.collect()
    enabled = gc.isenabled()
    gc.disable()
    try:
        t = time.perf_counter()
        result = fn()
        return time.perf_counter() - t, result
    finally:
        if enabled:
            gc.enable()


def run_benchmark(config: BenchConfig, progress=None) -> BenchRun:
    """Run every grid cell sequentially; only the mining call is timed.

    Sequential algorithms (apriori, fpgrowth) ignore the backend but still
    get one record per backend so grids stay rectangular.
    """
    config.validate()
    run = BenchRun()
    for spec in config.datasets:
        try:
            db = spec.load()
        except (OSError, ValueError) as e:
            log.error("dataset %s failed to load: %s", spec.name, e)
            run.errors.append(DatasetError(spec.name, str(e)))
            continue
        if len(db) == 0:
            run.errors.append(DatasetError(spec.name, "dataset is empty"))
            continue
        oracle_ok = np.unique(db.items).size <= ORACLE_MAX_ITEMS
        for minsup in config.minsups:
            s = absolute_minsup(minsup, len(db))
            oracle = brute_force_oracle(db, s).frequent if (config.verify and oracle_ok) else None
            reference = None
            for algo in config.algorithms:
                for kind in config.backends:
                    backend = Backend(kind, workers=config.workers, spill_dir=config.spill_dir)
                    cell = f"{spec.name}/{algo}/{kind}/minsup={minsup:g}"
                    call = lambda: run_miner(algo, db, s, backend, config.partitions, config.groups)  # noqa: E731
                    if config.warmup:
                        call()
                    times = []
                    result = None
                    for _ in range(config.trials):
                        dt, result = _timed(call)
                        times.append(dt)
                    if oracle is not None and result.frequent != oracle:
                        raise VerificationError(cell, "result differs from brute-force oracle")
                    if reference is None:
                        reference = result.frequent
                    elif result.frequent != reference:
                        raise VerificationError(cell, "result differs from other cells of the same dataset/minsup")
                    rec = BenchmarkRecord(spec.name, algo, kind, minsup, s, times,
                                          sum(times) / len(times), len(result.frequent), oracle is not None)
                    run.append(rec)
                    if progress is not None:
                        progress(rec)
    return run


# --------------------------------------------------------------------------
# CSV

def csv_header(trials=3):
    return (["dataset", "algorithm", "backend", "minsup_rel", "minsup_abs"]
            + [f"trial{i + 1}" for i in range(trials)] + ["mean_ms", "num_frequent", "verified"])


def _row_order(r: BenchmarkRecord):
    return (r.dataset, r.algorithm, r.backend, r.minsup_rel)


def emit_csv(records) -> str:
    """One row per record, times in milliseconds with 3 decimals, sorted by cell."""
    records = sorted(records, key=_row_order)
    trials = max((len(r.trial_times) for r in records), default=3)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(csv_header(trials))
    for r in records:
        times = [f"{1e3 * t:.3f}" for t in r.trial_times] + [""] * (trials - len(r.trial_times))
        w.writerow([r.dataset, r.algorithm, r.backend, repr(float(r.minsup_rel)), r.minsup_abs, *times,
                    f"{1e3 * r.mean_time:.3f}", r.num_frequent, "true" if r.verified else "false"])
    return out.getvalue()


def parse_csv(text) -> list[BenchmarkRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return []
    header = rows[0]
    trial_cols = [i for i, h in enumerate(header) if h.startswith("trial")]
    idx = {h: i for i, h in enumerate(header)}
    out = []
    for row in rows[1:]:
        times = [float(row[i]) / 1e3 for i in trial_cols if row[i] != ""]
        out.append(BenchmarkRecord(row[idx["dataset"]], row[idx["algorithm"]], row[idx["backend"]],
                                   float(row[idx["minsup_rel"]]), int(row[idx["minsup_abs"]]), times,
                                   float(row[idx["mean_ms"]]) / 1e3, int(row[idx["num_frequent"]]),
                                   row[idx["verified"]] == "true"))
    return out


# --------------------------------------------------------------------------
# SVG

_PALETTE = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f"]


def minsup_label(m):
    return f"{100 * m:.6g}%"


def emit_svg_chart(records, group_by="backend") -> str:
    """Grouped bar chart: one group per (dataset, minsup), one bar per ``group_by`` value."""
    records = list(records)
    if not records:
        raise ValueError("no records to chart")
    if group_by not in ("backend", "algorithm"):
        raise ValueError("group_by must be 'backend' or 'algorithm'")
    other = "algorithm" if group_by == "backend" else "backend"
    multi = len({getattr(r, other) for r in records}) > 1

    def gkey(r):
        return (r.dataset, r.minsup_rel) + ((getattr(r, other),) if multi else ())

    groups = sorted({gkey(r) for r in records}, key=lambda g: tuple(str(x) for x in g))
    series = sorted({getattr(r, group_by) for r in records})
    by_cell = {(gkey(r), getattr(r, group_by)): r for r in records}
    labels = [f"{g[0]} @ {minsup_label(g[1])}" + (f" / {g[2]}" if multi else "") for g in groups]
    title = "; ".join(labels) if len(labels) <= 3 else f"Mean mining time by {group_by}"

    bar_w, gap, left, top, plot_h = 28, 24, 70, 50, 260
    group_w = len(series) * bar_w + gap
    width = left + len(groups) * group_w + 160
    height = top + plot_h + 90
    vmax = max(1e3 * r.mean_time for r in records) or 1.0

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<title>{escape(title)}</title>',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{width - 150}" y2="{top + plot_h}" stroke="black"/>',
        f'<text x="16" y="{top + plot_h / 2:.1f}" transform="rotate(-90 16 {top + plot_h / 2:.1f})" '
        f'text-anchor="middle">mean time (ms)</text>',
    ]
    for i in range(5):
        v = vmax * i / 4
        y = top + plot_h - plot_h * i / 4
        parts.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    for gi, g in enumerate(groups):
        x0 = left + gap / 2 + gi * group_w
        for si, s in enumerate(series):
            r = by_cell.get((g, s))
            if r is None:
                continue
            h = plot_h * (1e3 * r.mean_time) / vmax
            x = x0 + si * bar_w
            parts.append(
                f'<rect class="bar" x="{x:.1f}" y="{top + plot_h - h:.3f}" width="{bar_w - 4}" '
                f'height="{h:.3f}" fill="{_PALETTE[si % len(_PALETTE)]}" data-series="{escape(s)}" '
                f'data-mean-ms="{1e3 * r.mean_time:.3f}"><title>{escape(s)}: '
                f'{1e3 * r.mean_time:.3f} ms</title></rect>')
        parts.append(f'<text x="{x0 + len(series) * bar_w / 2:.1f}" y="{top + plot_h + 16}" '
                     f'text-anchor="middle">{escape(labels[gi])}</text>')
    parts.append(f'<text x="{(left + width - 150) / 2:.1f}" y="{top + plot_h + 40}" '
                 f'text-anchor="middle">dataset @ minimum support</text>')
    for si, s in enumerate(series):
        y = top + 10 + si * 18
        parts.append(f'<rect x="{width - 140}" y="{y}" width="12" height="12" '
                     f'fill="{_PALETTE[si % len(_PALETTE)]}"/>')
        parts.append(f'<text x="{width - 122}" y="{y + 10}">{escape(s)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
