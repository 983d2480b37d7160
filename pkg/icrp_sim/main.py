"""
CLI entry for icrp-sim

Usage:
  icrp-sim run --scenario scenarios/ring.yaml --seed 3 --duration 7200 --out run.csv
  icrp-sim sweep --scenario scenarios/ring.yaml --intervals 18,42 --tfs TF1,TF2,TF3 --seeds 1-5
  icrp-sim validate --scenario scenarios/ring.yaml

Exit codes: 0 ok, 1 scenario/runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import NoReturn, Optional

import numpy as np

from .channel import transmission_loss
from .config import default_workers, load_scenario, override
from .errors import ScenarioError
from .network import run
from .phy import TransportFormatId
from .scenario import Role, Scenario
from .sweep import (
    DEFAULT_INTERVALS_S,
    DEFAULT_SEEDS,
    format_run_csv,
    format_sweep_csv,
    summary_lines,
    sweep,
)

PREFIX = "[icrp-sim]"


def _err(message: str) -> None:
    print(f"{PREFIX} {message}", file=sys.stderr)


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    if any(not v > 0 for v in values):
        raise argparse.ArgumentTypeError("intervals must be > 0")
    return values


def _tf_list(text: str) -> list[TransportFormatId]:
    out = []
    for item in (v.strip() for v in text.split(",")):
        if not item:
            continue
        try:
            out.append(TransportFormatId.parse(int(item) if item.isdigit() else item))
        except (KeyError, ValueError):
            raise argparse.ArgumentTypeError(f"unknown transport format {item!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("list must not be empty")
    return out


def _seed_list(text: str) -> list[int]:
    """'1,2,7' or '1-5' (inclusive) or a mix of both."""
    seeds: list[int] = []
    try:
        for item in (v.strip() for v in text.split(",")):
            if not item:
                continue
            if "-" in item:
                lo, hi = (int(p) for p in item.split("-", 1))
                if hi < lo:
                    raise ValueError(item)
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(item))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a seed list: {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("list must not be empty")
    if any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be >= 0")
    return seeds


def _positive(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icrp-sim", description="Underwater acoustic ICRP network simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario and print per-source PDR")
    p_run.add_argument("--scenario", required=True, type=Path)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--duration", type=_positive, help="simulated seconds of traffic")
    p_run.add_argument("--out", type=Path, help="write the CSV here instead of stdout")

    p_sweep = sub.add_parser("sweep", help="PDR / STATUS %% over packet intervals, TFs and seeds")
    p_sweep.add_argument("--scenario", required=True, type=Path)
    p_sweep.add_argument("--intervals", type=_float_list, default=list(DEFAULT_INTERVALS_S))
    p_sweep.add_argument("--tfs", type=_tf_list, default=list(TransportFormatId))
    p_sweep.add_argument("--seeds", type=_seed_list, default=list(DEFAULT_SEEDS))
    p_sweep.add_argument("--duration", type=_positive)
    p_sweep.add_argument("--workers", type=int, default=None,
                         help="parallel runs (default: $ICRP_SIM_WORKERS or 1)")
    p_sweep.add_argument("--out", type=Path)

    p_val = sub.add_parser("validate", help="check a scenario and print its link budget")
    p_val.add_argument("--scenario", required=True, type=Path)
    return parser


def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out.write_text(text, encoding="utf-8")


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = override(load_scenario(args.scenario), seed=args.seed, duration=args.duration)
    metrics = run(scenario)
    if metrics.generated == 0:
        _err("no packets generated: PDR and STATUS % are undefined")
    _emit(format_run_csv(metrics), args.out)
    for line in summary_lines(metrics):
        _err(line)
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    base = load_scenario(args.scenario)
    workers = args.workers if args.workers is not None else default_workers()
    rows = sweep(base, args.intervals, args.tfs, args.seeds, workers=max(1, workers), duration=args.duration)
    _emit(format_sweep_csv(rows), args.out)
    failed = [r for r in rows if r.kind == "run" and r.error]
    if failed:
        _err(f"{len(failed)} of {sum(r.kind == 'run' for r in rows)} runs reported errors")
    return 0


def link_budget_lines(scenario: Scenario) -> list[str]:
    counts = {role: sum(n.role is role for n in scenario.nodes) for role in Role}
    sl = scenario.source_level_db
    ch = scenario.channel
    lines = [
        f"nodes: {len(scenario.nodes)} (sink {counts[Role.SINK]}, relays {counts[Role.RELAY]}, "
        f"sensors {counts[Role.SENSOR]}), sources {len(scenario.sources)}",
        f"source level: {sl:.2f} dB re 1 uPa (calibrated at {scenario.calibration_range_m:g} m)"
        if scenario.phy.source_level_db is None else f"source level: {sl:.2f} dB re 1 uPa (fixed)",
        f"noise {ch.noise_db:g} dB, threshold {ch.threshold_db:g} dB, f {ch.frequency_khz:g} kHz, k {ch.spreading_k:g}",
    ]
    for tf in TransportFormatId:
        bits = scenario.traffic.payload_bits
        lines.append(
            f"{tf.name}: data {scenario.phy.airtime(bits, tf):.4f} s, "
            f"ack {scenario.phy.airtime(scenario.phy.ack_bits, tf):.4f} s, "
            f"{len(scenario.phy.frames(bits, tf))} frame(s) per packet"
        )
    pos = np.array([n.position for n in scenario.nodes], dtype=float)
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    ranges = np.unique(np.round(dist[np.triu_indices(len(pos), k=1)], 3))
    if ranges.size:
        snr = sl - transmission_loss(ranges, ch) - ch.noise_db
        for d, s in zip(ranges, snr):
            mark = "ok" if s >= ch.threshold_db - 1e-9 else "below threshold"
            lines.append(f"range {d:10.1f} m: SINR {s:7.2f} dB ({mark})")
    return lines


def _cmd_validate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    for line in link_budget_lines(scenario):
        print(line)
    return 0


def main(argv: list[str] | None = None) -> NoReturn:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "sweep": _cmd_sweep, "validate": _cmd_validate}[args.command]
    try:
        code = handler(args)
    except ScenarioError as exc:
        _err(f"invalid scenario: {exc}")
        code = 1
    except OSError as exc:
        _err(f"{exc.strerror or exc}: {exc.filename or ''}".rstrip(": "))
        code = 1
    except KeyboardInterrupt:
        code = 130
    sys.exit(code)


if __name__ == "__main__":
    main()
