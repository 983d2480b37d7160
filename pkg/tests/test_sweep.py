import csv
import io

import pytest

import icrp_sim.sweep as sweep_mod
from icrp_sim.phy import TransportFormatId
from icrp_sim.sweep import CellResult, aggregate, format_run_csv, format_sweep_csv, sweep
from icrp_sim.metrics import RunMetrics

from conftest import single_link

TF1, TF2, TF3 = TransportFormatId.TF1, TransportFormatId.TF2, TransportFormatId.TF3


def fake_cells():
    return [
        CellResult(interval, tf, seed, generated=100, delivered=90 - seed, pdr_pct=90.0 - seed, status_pct=float(seed))
        for interval in (42.0, 18.0)
        for tf in (TF3, TF1, TF2)
        for seed in (5, 4, 3, 2, 1)
    ]


def test_aggregate_cardinality_and_order():
    rows = aggregate(fake_cells())
    assert len(rows) == 36
    assert sum(r.kind == "mean" for r in rows) == 6
    keys = [(r.interval_s, int(r.tf)) for r in rows]
    assert keys == sorted(keys)
    first_group = rows[:6]
    assert [r.seed for r in first_group] == [1, 2, 3, 4, 5, None]


def test_mean_rows_use_sample_stddev():
    mean = aggregate(fake_cells())[5]
    assert mean.kind == "mean" and mean.runs == 5
    assert mean.pdr_pct == pytest.approx(87.0)
    assert mean.pdr_std == pytest.approx(1.5811388, rel=1e-6)
    assert mean.status_std == pytest.approx(1.5811388, rel=1e-6)


def test_single_seed_has_zero_stddev():
    rows = aggregate([CellResult(18.0, TF3, 1, 10, 9, 90.0, 10.0)])
    assert rows[-1].pdr_std == 0.0


def test_failed_run_is_reported_per_row():
    cells = [CellResult(18.0, TF3, 1, 10, 9, 90.0, 10.0), CellResult(18.0, TF3, 2, error="RuntimeError: boom")]
    rows = aggregate(cells)
    assert rows[1].error == "RuntimeError: boom"
    assert rows[2].runs == 1 and rows[2].error == "1 failed"


def test_sweep_csv_layout():
    text = format_sweep_csv(aggregate([CellResult(18.0, TF3, 1, 3, 2, 200 / 3, 100 / 3)]))
    lines = list(csv.reader(io.StringIO(text)))
    assert lines[0] == list(sweep_mod.SWEEP_COLUMNS)
    assert lines[1] == ["run", "18", "TF3", "1", "1", "3", "2", "66.6667", "", "33.3333", "", ""]
    assert lines[2][0] == "mean" and lines[2][3] == ""


def test_sweep_rejects_empty_lists():
    with pytest.raises(ValueError):
        sweep(single_link(), [], [TF3], [1])


def test_exceptions_inside_a_cell_do_not_abort_the_sweep(monkeypatch):
    real_run = sweep_mod.run

    def flaky(scenario):
        if scenario.seed == 2:
            raise RuntimeError("boom")
        return real_run(scenario)

    monkeypatch.setattr(sweep_mod, "run", flaky)
    rows = sweep(single_link(), [120.0], [TF3], [1, 2], duration=360.0)
    assert [r.kind for r in rows] == ["run", "run", "mean"]
    assert rows[0].pdr_pct == 100.0
    assert rows[1].error == "RuntimeError: boom"


def test_sweep_output_is_reproducible():
    args = (single_link(), [60.0, 120.0], [TF2, TF3], [1, 2])
    first = format_sweep_csv(sweep(*args, duration=600.0))
    second = format_sweep_csv(sweep(*args, duration=600.0))
    assert first == second


def test_parallel_and_serial_sweeps_match():
    args = (single_link(), [60.0, 120.0], [TF3], [1, 2])
    serial = format_sweep_csv(sweep(*args, duration=600.0, workers=1))
    parallel = format_sweep_csv(sweep(*args, duration=600.0, workers=2))
    assert serial == parallel


def test_run_csv_has_a_row_per_source_and_a_total():
    m = RunMetrics(
        generated=4, delivered_unique=3, pdr_pct=75.0, status_count=1, status_pct=25.0,
        per_source_generated={5: 4}, per_source_delivered={5: 3}, per_source_pdr={5: 75.0},
        uc_time_fraction={5: 0.5}, dominant_routes={5: (5, 1, 0)},
    )
    lines = list(csv.reader(io.StringIO(format_run_csv(m))))
    assert lines[0][0] == "source"
    assert lines[1] == ["5", "4", "3", "75", "", "", "0.5", "5-1-0"]
    assert lines[2] == ["all", "4", "3", "75", "1", "25", "", ""]
