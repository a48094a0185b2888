"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 resource cap hit,
4 at least one acceptance verdict failed.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .attachment import ModelError, ensure_phi_table
from .config import ConfigError, RunConfig, default_run_config, parse_config
from .ctbp import CSV_COLUMNS as CTBP_COLUMNS
from .ctbp import ctbp_rows, run_ctbp
from .experiments import (SUITES, TRAJECTORY_COLUMNS, ModelSpec, calibrate, fmt,
                          replicate_map, run_experiment, write_csv, write_summary)
from .graphsim import ConfigError as ModelConfigError
from .graphsim import grow, race, trajectory_rows
from .malthusian import (NoMalthusianRate, RegimeError, check_assumptions, default_grid,
                         solve_lambda_star)
from .pointproc import ResourceCapError
from .rng import GENERATOR_ID, derive_stream

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_VERDICT = 0, 2, 3, 4

DEFAULT_MODEL = {"f": {"kind": "power", "alpha": 0.3}, "m": {"kind": "constant", "m": 1}}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--seed", type=_u64, metavar="U64", help="master seed (overrides file)")
    common.add_argument("--reps", type=_positive, metavar="N", help="replicate count")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=_positive, metavar="N",
                        help="worker threads (changes wall time only, never results)")
    p = argparse.ArgumentParser(prog="hubsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hubsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate-graph", parents=[common], help="grow graphs, write trajectories.csv")
    sub.add_parser("simulate-ctbp", parents=[common], help="run the branching process, write ctbp.csv")
    sub.add_parser("race", parents=[common], help="run the two-coordinate race chain")
    sub.add_parser("malthusian", parents=[common], help="solve for the Malthusian rate")
    sub.add_parser("check-assumptions", parents=[common], help="numerical assumption report")
    e = sub.add_parser("experiment", parents=[common], help="run one experiment suite")
    e.add_argument("name", nargs="?", choices=SUITES, help="defaults to the config's experiment")
    c = sub.add_parser("calibrate", parents=[common], help="pilot run; records, never edits, thresholds")
    c.add_argument("name", nargs="?", choices=SUITES)
    return p


def _model(rc: RunConfig) -> ModelSpec:
    return rc.model or ModelSpec.from_specs(DEFAULT_MODEL["f"], DEFAULT_MODEL["m"])


def _out_dir(args, rc: RunConfig) -> Optional[Path]:
    d = args.out or rc.out_dir
    if d is None:
        return None
    path = Path(d)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _provenance(rc: RunConfig, seed: int, model: ModelSpec, extra: dict) -> dict:
    return {"master_seed": seed, "generator": GENERATOR_ID, "code_version": __version__,
            "model": model.label(), **extra}


def cmd_simulate_graph(args, rc: RunConfig) -> int:
    model = _model(rc)
    seed = rc.master_seed if args.seed is None else args.seed
    n_max = int(rc.scales.get("n_max", 10**4))
    if n_max > rc.max_vertices:
        raise ResourceCapError(f"n_max={n_max} exceeds resources.max_vertices={rc.max_vertices}")
    ck = rc.scales.get("checkpoints") or sorted(
        {min(n_max, 10**j) for j in range(int(math.log10(n_max)) + 1)} | {n_max})
    reps = args.reps or rc.replicates or 1
    recs = replicate_map(lambda r: grow(model.f, model.m, n_max, ck,
                                        seed=derive_stream(seed, r, "simulate-graph")),
                         reps, args.threads or rc.threads)
    table = ensure_phi_table(model.f, degree_needed=max(int(r.d_max.max()) for r in recs) + 2)
    rows = [row for r, rec in enumerate(recs) for row in trajectory_rows(rec, r, table)]
    out = _out_dir(args, rc)
    if out is None:
        w = sys.stdout
        w.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        for row in rows:
            w.write(",".join(fmt(v) for v in row) + "\n")
    else:
        write_csv(out / "trajectories.csv", TRAJECTORY_COLUMNS, rows)
        _write_json(out / "run.json", _provenance(rc, seed, model, {
            "command": "simulate-graph", "n_max": n_max, "checkpoints": list(map(int, ck)),
            "replicates": reps, "purpose": "simulate-graph"}))
    return EXIT_OK


def cmd_simulate_ctbp(args, rc: RunConfig) -> int:
    model = _model(rc)
    seed = rc.master_seed if args.seed is None else args.seed
    sc = rc.scales
    if "until_size" in sc and "until_time" in sc:
        raise ConfigError(["scales: give only one of until_size and until_time"])
    lam = solve_lambda_star(model.f).lambda_star
    reps = args.reps or rc.replicates or 1

    def one(r):
        st = run_ctbp(model.f, until_size=sc.get("until_size"),
                      until_time=None if "until_size" in sc else float(sc.get("until_time", 5.0)),
                      seed=derive_stream(seed, r, "simulate-ctbp"), max_size=rc.max_vertices)
        times = sc.get("times") or list(np.linspace(0.0, st.clock, 6))
        return ctbp_rows(st, r, model.f, lam, [min(float(t), st.clock) for t in times])

    rows = [row for chunk in replicate_map(one, reps, args.threads or rc.threads) for row in chunk]
    out = _out_dir(args, rc)
    if out is None:
        sys.stdout.write(",".join(CTBP_COLUMNS) + "\n")
        for row in rows:
            sys.stdout.write(",".join(fmt(v) for v in row) + "\n")
    else:
        write_csv(out / "ctbp.csv", CTBP_COLUMNS, rows)
        _write_json(out / "run.json", _provenance(rc, seed, model, {
            "command": "simulate-ctbp", "lambda_star": lam, "replicates": reps}))
    return EXIT_OK


def cmd_race(args, rc: RunConfig) -> int:
    model = _model(rc)
    seed = rc.master_seed if args.seed is None else args.seed
    init = tuple(int(v) for v in rc.scales.get("init", (1, 1)))
    steps = int(rc.scales.get("steps", 1000))
    reps = args.reps or rc.replicates or 1
    res = replicate_map(lambda r: race(model.f, init, steps, derive_stream(seed, r, "race")),
                        reps, args.threads or rc.threads)
    rows = [(r, x.lead_changes, x.tie_visits, int(x.path[-1, 0]), int(x.path[-1, 1]))
            for r, x in enumerate(res)]
    header = ("replicate", "lead_changes", "tie_visits", "final_x1", "final_x2")
    out = _out_dir(args, rc)
    if out is None:
        sys.stdout.write(",".join(header) + "\n")
        for row in rows:
            sys.stdout.write(",".join(fmt(v) for v in row) + "\n")
    else:
        write_csv(out / "race.csv", header, rows)
        write_csv(out / "race_paths.csv", ("replicate", "step", "x1", "x2"),
                  [(r, j, int(p[0]), int(p[1])) for r, x in enumerate(res)
                   for j, p in enumerate(x.path)])
        _write_json(out / "run.json", _provenance(rc, seed, model, {
            "command": "race", "init": init, "steps": steps, "replicates": reps}))
    return EXIT_OK


def cmd_malthusian(args, rc: RunConfig) -> int:
    model = _model(rc)
    res = solve_lambda_star(model.f)
    doc = {"attachment": model.f.describe(), "lambda_star": res.lambda_star,
           "bracket": list(res.bracket), "rho_at_bracket": list(res.rho_at_bracket),
           "truncation_k": res.truncation_k, "tail_bound": res.tail_bound,
           "clock_offset": res.offset}
    print(json.dumps(doc, indent=2, sort_keys=True))
    out = _out_dir(args, rc)
    if out is not None:
        _write_json(out / "malthusian.json", doc)
    return EXIT_OK


def cmd_check_assumptions(args, rc: RunConfig) -> int:
    model = _model(rc)
    table = ensure_phi_table(model.f, degree_needed=1 << 20)
    rep = check_assumptions(model.f, table, default_grid(table))
    doc = {"attachment": model.f.describe(), "phi2_status": table.phi2_status.value,
           **rep.as_record(), "notes": rep.notes}
    print(json.dumps(doc, indent=2, sort_keys=True, default=str))
    out = _out_dir(args, rc)
    if out is not None:
        _write_json(out / "assumptions.json", doc)
    return EXIT_OK


def cmd_experiment(args, rc: RunConfig) -> int:
    cfg = rc.experiment_config(args.name, args.seed, args.reps, args.out)
    summary = run_experiment(cfg, args.threads or rc.threads)
    out = Path(cfg.out_dir or f"out/{cfg.name}")
    write_summary(summary, out)
    for r in summary.rows:
        print(f"{r.verdict:5s} {r.metric} = {fmt(r.estimate)} (predicted {fmt(r.predicted)})")
    print(f"wrote {out}")
    return EXIT_VERDICT if summary.failed else EXIT_OK


def cmd_calibrate(args, rc: RunConfig) -> int:
    names = [args.name] if args.name else ([rc.experiment] if rc.experiment else list(SUITES))
    out = Path(args.out or rc.out_dir or "calibration")
    for name in names:
        cfg = rc.experiment_config(name, args.seed, args.reps, str(out))
        path = calibrate(cfg, out, args.threads or rc.threads)
        print(f"pilot for {name}: {path}")
    return EXIT_OK


COMMANDS = {
    "simulate-graph": cmd_simulate_graph,
    "simulate-ctbp": cmd_simulate_ctbp,
    "race": cmd_race,
    "malthusian": cmd_malthusian,
    "check-assumptions": cmd_check_assumptions,
    "experiment": cmd_experiment,
    "calibrate": cmd_calibrate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = parse_config(args.config) if args.config else default_run_config()
        return COMMANDS[args.command](args, rc)
    except (ConfigError, ModelConfigError, ModelError, RegimeError, NoMalthusianRate) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceCapError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
