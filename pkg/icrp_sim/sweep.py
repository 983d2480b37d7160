"""
Interval x TF x seed sweeps and the CSV tables the CLI prints.

Cells are independent single-threaded runs, so they may go through a
process pool; rows are sorted by key before formatting, which keeps the
output byte-identical whatever the completion order.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import groupby, product
from typing import Iterable, Optional, Sequence

import numpy as np

from .debug import debug_log
from .metrics import RunMetrics
from .network import run
from .phy import TransportFormatId
from .scenario import Scenario, with_cell

DEFAULT_INTERVALS_S = (6.0, 12.0, 18.0, 24.0, 30.0, 42.0, 60.0, 90.0, 120.0)
DEFAULT_SEEDS = (1, 2, 3, 4, 5)

SWEEP_COLUMNS = (
    "kind", "interval_s", "tf", "seed", "runs", "generated", "delivered",
    "pdr_pct", "pdr_std", "status_pct", "status_std", "error",
)
RUN_COLUMNS = (
    "source", "generated", "delivered", "pdr_pct", "status_count", "status_pct",
    "uc_time_fraction", "dominant_route",
)


@dataclass(frozen=True)
class CellResult:
    interval_s: float
    tf: TransportFormatId
    seed: int
    generated: int = 0
    delivered: int = 0
    pdr_pct: Optional[float] = None
    status_pct: Optional[float] = None
    error: str = ""

    @property
    def key(self) -> tuple[float, int, int]:
        return (self.interval_s, int(self.tf), self.seed)


@dataclass(frozen=True)
class SweepRow:
    kind: str
    interval_s: float
    tf: TransportFormatId
    seed: Optional[int]
    runs: int
    generated: int
    delivered: int
    pdr_pct: Optional[float]
    pdr_std: Optional[float]
    status_pct: Optional[float]
    status_std: Optional[float]
    error: str = ""


def run_cell(base: Scenario, interval_s: float, tf: TransportFormatId, seed: int,
             duration: Optional[float] = None) -> CellResult:
    """One sweep cell; a failing run becomes an error row instead of an exception."""
    try:
        metrics: RunMetrics = run(with_cell(base, interval_s=interval_s, tf=tf, seed=seed, duration=duration))
    except Exception as exc:  # noqa: BLE001 - reported per row
        debug_log(f"sweep cell interval={interval_s} tf={tf.name} seed={seed} failed: {exc!r}")
        return CellResult(interval_s, tf, seed, error=f"{type(exc).__name__}: {exc}")
    return CellResult(
        interval_s, tf, seed,
        generated=metrics.generated,
        delivered=metrics.delivered_unique,
        pdr_pct=metrics.pdr_pct,
        status_pct=metrics.status_pct,
        error="" if metrics.generated else "no packets generated",
    )


def _run_cell_args(args: tuple) -> CellResult:
    return run_cell(*args)


def _mean_std(values: Sequence[float]) -> tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def aggregate(results: Iterable[CellResult]) -> list[SweepRow]:
    """Per-seed rows followed by a mean row for every (interval, tf) group."""
    rows: list[SweepRow] = []
    ordered = sorted(results, key=lambda r: r.key)
    for (interval_s, tf_value), group in groupby(ordered, key=lambda r: r.key[:2]):
        cells = list(group)
        tf = TransportFormatId(tf_value)
        for c in cells:
            rows.append(SweepRow(
                kind="run", interval_s=interval_s, tf=tf, seed=c.seed, runs=1,
                generated=c.generated, delivered=c.delivered,
                pdr_pct=c.pdr_pct, pdr_std=None, status_pct=c.status_pct, status_std=None,
                error=c.error,
            ))
        ok = [c for c in cells if not c.error and c.pdr_pct is not None]
        pdr, pdr_std = _mean_std([c.pdr_pct for c in ok])
        status, status_std = _mean_std([c.status_pct for c in ok])
        failed = len(cells) - len(ok)
        rows.append(SweepRow(
            kind="mean", interval_s=interval_s, tf=tf, seed=None, runs=len(ok),
            generated=sum(c.generated for c in ok), delivered=sum(c.delivered for c in ok),
            pdr_pct=pdr, pdr_std=pdr_std, status_pct=status, status_std=status_std,
            error=f"{failed} failed" if failed else "",
        ))
    return rows


def sweep(
    base: Scenario,
    intervals: Sequence[float],
    tfs: Sequence[TransportFormatId],
    seeds: Sequence[int],
    *,
    workers: int = 1,
    duration: Optional[float] = None,
) -> list[SweepRow]:
    if not intervals or not tfs or not seeds:
        raise ValueError("intervals, tfs and seeds must all be non-empty")
    cells = [
        (base, float(i), TransportFormatId.parse(tf), int(s), duration)
        for i, tf, s in product(sorted(set(intervals)), sorted(set(tfs)), sorted(set(seeds)))
    ]
    debug_log(f"sweep cells={len(cells)} workers={workers}")
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
            results = list(pool.map(_run_cell_args, cells))
    else:
        results = [_run_cell_args(c) for c in cells]
    return aggregate(results)


def _fmt(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def _write(columns: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def format_sweep_csv(rows: Iterable[SweepRow]) -> str:
    return _write(SWEEP_COLUMNS, (
        (r.kind, r.interval_s, r.tf.name, r.seed, r.runs, r.generated, r.delivered,
         r.pdr_pct, r.pdr_std, r.status_pct, r.status_std, r.error)
        for r in rows
    ))


def format_run_csv(metrics: RunMetrics) -> str:
    rows: list[tuple[object, ...]] = []
    for source, generated in metrics.per_source_generated.items():
        route = metrics.dominant_routes.get(source)
        rows.append((
            source, generated, metrics.per_source_delivered.get(source, 0),
            metrics.per_source_pdr.get(source), None, None,
            metrics.uc_time_fraction.get(source),
            "-".join(str(n) for n in route) if route else None,
        ))
    rows.append((
        "all", metrics.generated, metrics.delivered_unique, metrics.pdr_pct,
        metrics.status_count, metrics.status_pct, None, None,
    ))
    return _write(RUN_COLUMNS, rows)


def summary_lines(metrics: RunMetrics) -> list[str]:
    """Human-readable counters printed to stderr after a run."""

    def pairs(mapping: dict) -> str:
        return " ".join(f"{k}={v}" for k, v in mapping.items()) or "-"

    latency = "-" if metrics.mean_latency_s is None else f"{metrics.mean_latency_s:.3f}s"
    return [
        f"tf usage: {pairs(dict(metrics.tf_usage))}",
        f"transmissions: {pairs(dict(metrics.transmissions_by_kind))}",
        f"losses: {pairs(dict(metrics.loss_reasons))}",
        f"mean latency {latency}, max delivered hops {metrics.max_delivered_hops}, "
        f"bc fallbacks {metrics.bc_fallbacks}, route invalidations {metrics.route_invalidations}, "
        f"queue drops {metrics.queue_drops}, anomalies {metrics.anomalies}",
    ]
