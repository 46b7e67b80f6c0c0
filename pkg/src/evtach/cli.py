"""Command-line front end: ``evtach simulate | estimate | evaluate``.

Results go to stdout (or ``--out``), diagnostics to stderr.

Exit codes: 0 success, 1 invalid input or configuration, 2 I/O failure,
3 no target could be estimated.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EvTachError, EventParseError, EventValidationError, SceneError
from .estimator import EstimatorParams, estimate_speed, rmae
from .events import load_events, store_events
from .simulator import SceneSpec, simulate, single_propeller_scene

log = logging.getLogger("evtach")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_NO_TARGET = 0, 1, 2, 3

_PARAM_FLAGS = {
    "t_l": ("--t-l", int),
    "t_s_initial": ("--t-s-initial", int),
    "eta": ("--eta", float),
    "temporal_scale": ("--temporal-scale", float),
    "grid_size": ("--grid-size", int),
    "epsilon": ("--epsilon", float),
    "k_max": ("--k-max", int),
    "n_pairs": ("--pairs", int),
}


class UsageError(Exception):
    pass


def _add_param_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("estimator parameters")
    for name, (flag, typ) in _PARAM_FLAGS.items():
        g.add_argument(flag, dest=name, type=typ, default=None)
    g.add_argument("--capture-len", dest="capture_len", type=int, default=None)


def resolve_params(args: argparse.Namespace) -> EstimatorParams:
    overrides = {
        name: getattr(args, name)
        for name in list(_PARAM_FLAGS) + ["capture_len"]
        if getattr(args, name, None) is not None
    }
    try:
        return replace(EstimatorParams(), **overrides)
    except ValueError as exc:
        raise UsageError(f"invalid estimator parameters: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evtach", description="Rotational speed estimation from event streams."
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic event stream")
    s.add_argument("--in", dest="input", required=True, help="SceneSpec JSON")
    s.add_argument("--out", required=True, help="event file (.csv or .bin)")
    s.add_argument("--truth", default=None, help="ground-truth JSON (default: truth.json next to --out)")
    s.add_argument("--seed", type=int, default=None)

    e = sub.add_parser("estimate", help="estimate rotational speeds from an event file")
    e.add_argument("--in", dest="input", required=True, help="event file (.csv or .bin)")
    e.add_argument("--out", default=None, help="write results here instead of stdout")
    e.add_argument("--format", choices=("json", "csv"), default="json")
    e.add_argument("--heatmap", default=None, help="dump the capture-window heatmap as CSV")
    _add_param_flags(e)

    v = sub.add_parser("evaluate", help="RMAE sweep over simulated scenes")
    v.add_argument("--in", dest="input", default=None, help="sweep spec JSON")
    v.add_argument("--out", default=None, help="CSV destination (default stdout)")
    v.add_argument("--format", choices=("csv", "json"), default="csv")
    v.add_argument("--speeds", default=None, help="comma-separated rpm list")
    v.add_argument("--blades", default=None, help="comma-separated blade counts")
    v.add_argument("--repeats", type=int, default=None, help="runs per configuration (M)")
    v.add_argument("--seed", type=int, default=None, help="base seed")
    _add_param_flags(v)
    return parser


def _echo(params: dict) -> None:
    print("params: " + json.dumps(params, sort_keys=True), file=sys.stderr)


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(out).write_text(text)


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        scene = SceneSpec.load(args.input)
        if args.seed is not None:
            scene = replace(scene, seed=args.seed)
        scene.validate()
    except OSError as exc:
        print(f"error: cannot read scene {args.input}: {exc}", file=sys.stderr)
        return EXIT_IO
    except SceneError as exc:
        print(f"error: invalid scene: {exc}", file=sys.stderr)
        return EXIT_INVALID
    _echo(scene.to_dict())
    sim = simulate(scene)
    truth_path = args.truth or str(Path(args.out).with_name("truth.json"))
    try:
        store_events(sim.stream, args.out)
        sim.truth.dump(truth_path)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    log.info("wrote %d events to %s, truth to %s", len(sim.stream), args.out, truth_path)
    return EXIT_OK


# --------------------------------------------------------------------------
# estimate
# --------------------------------------------------------------------------

def _targets_csv(targets: list[dict]) -> str:
    buf = io.StringIO()
    cols = ["id", "centroid_x", "centroid_y", "rpm_initial", "rpm_refined", "direction",
            "theta_c", "n_blades", "n_events", "pairs_converged", "error"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for t in targets:
        w.writerow([
            t["id"], t["centroid"][0], t["centroid"][1], t["rpm_initial"], t["rpm_refined"],
            t["direction"], t["theta_c"], t["n_blades"], t["n_events"],
            sum(t["pairs_converged"]), t["error"] or "",
        ])
    return buf.getvalue()


def cmd_estimate(args: argparse.Namespace) -> int:
    params = resolve_params(args)
    try:
        stream = load_events(args.input)
    except OSError as exc:
        print(f"error: cannot read {args.input}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EventParseError, EventValidationError) as exc:
        print(f"error: {args.input}: {exc}", file=sys.stderr)
        return EXIT_INVALID

    if args.heatmap:
        from .extraction import build_heatmap

        window = stream.window(0, params.capture_len)
        Path(args.heatmap).write_text(build_heatmap(window, params.grid_size).to_csv())

    if len(stream) == 0:
        estimates = []
    elif stream.duration < params.capture_len:
        print(
            f"error: stream lasts {stream.duration} us, shorter than capture_len "
            f"{params.capture_len} us",
            file=sys.stderr,
        )
        return EXIT_INVALID
    else:
        estimates = estimate_speed(stream, params)

    result = {"targets": [e.to_dict() for e in estimates], "params": params.to_dict()}
    for e in estimates:
        if not e.ok:
            print(f"target {e.target_id}: {e.error}", file=sys.stderr)
    text = json.dumps(result, indent=2) + "\n" if args.format == "json" else _targets_csv(result["targets"])
    if args.format == "csv":
        _echo(result["params"])
    try:
        _write(text, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if any(e.ok for e in estimates) else EXIT_NO_TARGET


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    speeds: tuple[float, ...] = (300, 600, 1000, 2000, 3000, 4500, 6000)
    blades: tuple[int, ...] = (3,)
    repeats: int = 30
    seed: int = 0
    # keyword arguments for simulator.single_propeller_scene
    scene: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.speeds or any(not (math.isfinite(s) and s > 0) for s in self.speeds):
            raise UsageError("speeds must be a non-empty list of positive rpm values")
        if not self.blades or any(not 1 <= b <= 8 for b in self.blades):
            raise UsageError("blade counts must lie in [1, 8]")
        if self.repeats < 1:
            raise UsageError(f"repeats must be >= 1, got {self.repeats}")
        allowed = {
            "duration", "width", "height", "center", "blade_length", "blade_width",
            "events_per_blade_ms", "noise_fraction", "jitter_amp",
        }
        unknown = set(self.scene) - allowed
        if unknown:
            raise UsageError(f"unknown scene options in sweep: {sorted(unknown)}")


def _csv_list(text: str, typ):
    try:
        return tuple(typ(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"bad list {text!r}") from None


def resolve_sweep(args: argparse.Namespace) -> SweepSpec:
    data: dict = {}
    if args.input:
        try:
            with open(args.input) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.input}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise UsageError("sweep spec must be a JSON object")
        unknown = set(data) - set(SweepSpec.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown sweep fields: {sorted(unknown)}")
        for key in ("speeds", "blades"):
            if key in data:
                data[key] = tuple(data[key])
    if args.speeds is not None:
        data["speeds"] = _csv_list(args.speeds, float)
    if args.blades is not None:
        data["blades"] = _csv_list(args.blades, int)
    if args.repeats is not None:
        data["repeats"] = args.repeats
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        spec = SweepSpec(**data)
    except TypeError as exc:
        raise UsageError(f"malformed sweep spec: {exc}") from None
    spec.validate()
    return spec


def run_one(rpm: float, n_blades: int, seed: int, scene_kw: dict, params: EstimatorParams) -> tuple[float, float, float]:
    """Simulate one scene and estimate it: (rpm_initial, rpm_refined, seconds).

    A run that yields no usable estimate reports NaN speeds.
    """
    scene = single_propeller_scene(rpm, n_blades=n_blades, seed=seed, **scene_kw)
    sim = simulate(scene)
    t0 = time.perf_counter()
    estimates = estimate_speed(sim.stream, params)
    elapsed = time.perf_counter() - t0
    center = np.asarray(scene.propellers[0].center)
    ok = [e for e in estimates if e.ok]
    if not ok:
        return math.nan, math.nan, elapsed
    best = min(ok, key=lambda e: float(np.hypot(*(np.asarray(e.centroid) - center))))
    return best.rpm_initial, best.rpm_refined, elapsed


def _run_job(job):
    return run_one(*job)


def _workers() -> int:
    raw = os.environ.get("EVTACH_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer EVTACH_THREADS=%r", raw)
    return max(1, os.cpu_count() or 1)


def _row_error(values: list[float], truth: float) -> float:
    # a failed run counts as a 100 % error
    return rmae([v if math.isfinite(v) else 0.0 for v in values], truth)


def run_sweep(spec: SweepSpec, params: EstimatorParams, workers: int = 1) -> list[dict]:
    configs = [(float(s), int(b)) for s in spec.speeds for b in spec.blades]
    jobs = [
        (rpm, nb, spec.seed + i, spec.scene, params)
        for rpm, nb in configs
        for i in range(spec.repeats)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=1))
    else:
        results = [_run_job(j) for j in jobs]

    rows = []
    for c, (rpm, nb) in enumerate(configs):
        chunk = results[c * spec.repeats:(c + 1) * spec.repeats]
        init = [r[0] for r in chunk]
        ref = [r[1] for r in chunk]
        rows.append({
            "speed": rpm,
            "n_blades": nb,
            "rmae_initial": _row_error(init, rpm),
            "rmae_refined": _row_error(ref, rpm),
            "mean_runtime_ms": 1000.0 * float(np.mean([r[2] for r in chunk])),
            "n_failed": sum(not math.isfinite(v) for v in ref),
        })
    return rows


def rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(
        buf,
        ["speed", "n_blades", "rmae_initial", "rmae_refined", "mean_runtime_ms", "n_failed"],
        lineterminator="\n",
    )
    w.writeheader()
    for r in rows:
        w.writerow({
            **r,
            "rmae_initial": f"{r['rmae_initial']:.6g}",
            "rmae_refined": f"{r['rmae_refined']:.6g}",
            "mean_runtime_ms": f"{r['mean_runtime_ms']:.1f}",
        })
    return buf.getvalue()


def cmd_evaluate(args: argparse.Namespace) -> int:
    try:
        params = resolve_params(args)
        spec = resolve_sweep(args)
    except OSError as exc:
        print(f"error: cannot read sweep spec: {exc}", file=sys.stderr)
        return EXIT_IO
    _echo({"estimator": params.to_dict(), "sweep": asdict(spec)})
    rows = run_sweep(spec, params, _workers())
    if args.format == "json":
        text = json.dumps({"rows": rows, "params": params.to_dict(), "sweep": asdict(spec)}, indent=2) + "\n"
    else:
        text = rows_csv(rows)
    try:
        _write(text, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse reports usage errors with status 2; that code means I/O here
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    handler = {"simulate": cmd_simulate, "estimate": cmd_estimate, "evaluate": cmd_evaluate}
    try:
        return handler[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EvTachError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
