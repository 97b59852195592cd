"""Command-line entry point: batch simulation, mode comparison, scoring, serving.

Exit codes: 0 success, 1 runtime error, 2 configuration error. All files are
written atomically (temp + rename), so a failing run leaves no partial output.
Same flags and seed give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import socket
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import CapexError, ScenarioError
from .learner import learner_from_dict, learner_to_dict
from .model import Instantiation, ModelState
from .scenario import BUNDLED, load_scenario
from .scoring import ReferenceSpec, favourable_contexts, render_score_table
from .subject import run_trial

TRACE_COLUMNS = [
    "iteration", "mode", "query", "situation", "attributes", "outcome",
    "model_error", "kl_to_truth", "promoted_vars", "error",
]


def _fmt_inst(inst: Instantiation) -> str:
    return "|".join(f"{k}={v}" for k, v in inst.key())


def _fmt_float(x) -> str:
    return "" if x is None else repr(float(x))


def _atomic_write(path: Path, data: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(data)
    os.replace(tmp, path)


def _trace_csv(trace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for row in trace:
        writer.writerow([
            row.iteration,
            row.mode,
            _fmt_inst(row.query),
            _fmt_inst(row.situation),
            _fmt_inst(row.attributes),
            _fmt_inst(row.outcome),
            _fmt_float(row.model_error),
            _fmt_float(row.kl_to_truth),
            ";".join(row.promoted),
            row.error or "",
        ])
    return buf.getvalue()


def _trace_jsonl(trace) -> str:
    return "".join(json.dumps(row.to_json_obj()) + "\n" for row in trace)


def cmd_simulate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    overrides = {
        "r_threshold": args.r_threshold,
        "n_min": args.n_min,
        "refine_enabled": False if args.no_refine else None,
    }
    try:
        result = run_trial(scenario, args.mode, args.iters, args.seed, overrides)
    except CapexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.trace_csv:
        _atomic_write(Path(args.trace_csv), _trace_csv(result.trace))
    if args.trace_jsonl:
        _atomic_write(Path(args.trace_jsonl), _trace_jsonl(result.trace))
    if args.model_out:
        doc = learner_to_dict(result.state, rng_seed=args.seed)
        _atomic_write(Path(args.model_out), json.dumps(doc, indent=2) + "\n")
    final_me = result.trace[-1].model_error if result.trace else None
    promos = ";".join(name for _, name in result.promotions) or "-"
    print(
        f"simulate {scenario.name} mode={args.mode} iters={args.iters} seed={args.seed} "
        f"model_error={_fmt_float(final_me) or 'n/a'} "
        f"kl_to_truth={_fmt_float(result.final_kl) or 'n/a'} promotions={promos}"
    )
    return 0


def _one_compare_run(task):
    scenario_name, mode, iters, seed = task
    scenario = load_scenario(scenario_name)
    res = run_trial(scenario, mode, iters, seed)
    return [row.kl_to_truth for row in res.trace]


def cmd_compare(args) -> int:
    try:
        load_scenario(args.scenario)   # validate before any output
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    seeds = [args.seed_base + i for i in range(args.seeds)]
    tasks = {
        mode: [(args.scenario, mode, args.iters, s) for s in seeds]
        for mode in ("active", "passive")
    }
    curves: dict[str, np.ndarray] = {}
    try:
        for mode, mode_tasks in tasks.items():
            if args.jobs > 1:
                with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                    rows = list(pool.map(_one_compare_run, mode_tasks))
            else:
                rows = [_one_compare_run(t) for t in mode_tasks]
            curves[mode] = np.array(rows, dtype=np.float64)
    except CapexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_dir = Path(args.out_dir)
    for mode, data in curves.items():
        mean = data.mean(axis=0)
        sd = data.std(axis=0, ddof=1) if data.shape[0] > 1 else np.zeros(data.shape[1])
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "mean_kl", "sd_kl"])
        for i in range(data.shape[1]):
            writer.writerow([i + 1, repr(float(mean[i])), repr(float(sd[i]))])
        _atomic_write(out_dir / f"{mode}_curve.csv", buf.getvalue())
    a = float(curves["active"].mean(axis=0)[-1])
    p = float(curves["passive"].mean(axis=0)[-1])
    dominated = "yes" if a <= p else "no"
    print(
        f"compare {args.scenario} seeds={args.seeds} iters={args.iters}: "
        f"final mean kl active={a!r} passive={p!r} active_dominated={dominated}"
    )
    return 0


def _load_reference(ref_arg: str, model: ModelState) -> ReferenceSpec:
    if ref_arg in BUNDLED:
        scenario = load_scenario(ref_arg)
        if scenario.reference is None:
            raise ScenarioError(f"scenario {ref_arg!r} has no reference")
        return ReferenceSpec.from_json(scenario.reference, model.structure)
    path = Path(ref_arg)
    if not path.exists():
        raise ScenarioError(f"reference {ref_arg!r} is neither a bundled scenario nor a file")
    return ReferenceSpec.from_json(json.loads(path.read_text()), model.structure)


def cmd_score(args) -> int:
    try:
        doc = json.loads(Path(args.model).read_text())
        model = learner_from_dict(doc).model
        ref = _load_reference(args.reference, model)
        if not 0.0 < args.threshold < 1.0:
            raise ScenarioError("threshold must lie in (0, 1)")
    except (ScenarioError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        report = favourable_contexts(model, ref, args.threshold)
    except CapexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(render_score_table(report))
    if args.json_out:
        _atomic_write(Path(args.json_out), report.to_json() + "\n")
    return 0


def cmd_serve(args) -> int:
    data_dir = Path(args.data_dir)
    try:
        data_dir.mkdir(parents=True, exist_ok=True)
        probe = data_dir / ".writable"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: data dir {data_dir} is not writable: {exc}", file=sys.stderr)
        return 1
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        try:
            sock.bind((args.host, args.port))
        except OSError as exc:
            print(f"error: cannot bind {args.host}:{args.port}: {exc}", file=sys.stderr)
            return 1
    import uvicorn

    from .service import create_app

    app = create_app(data_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capex",
        description="Learn capability models by experimentation, refine them, score them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one learning trial against a simulated subject")
    sim.add_argument("--scenario", required=True, help=f"bundled name ({', '.join(BUNDLED)}) or JSON path")
    sim.add_argument("--mode", choices=("active", "passive"), default="active")
    sim.add_argument("--iters", type=int, default=150)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--r-threshold", type=float, default=None, dest="r_threshold")
    sim.add_argument("--n-min", type=int, default=None, dest="n_min")
    sim.add_argument("--no-refine", action="store_true")
    sim.add_argument("--trace-csv", default=None)
    sim.add_argument("--trace-jsonl", default=None)
    sim.add_argument("--model-out", default=None)
    sim.set_defaults(func=cmd_simulate)

    cmp_ = sub.add_parser("compare", help="active vs passive kl curves over many seeds")
    cmp_.add_argument("--scenario", required=True)
    cmp_.add_argument("--seeds", type=int, default=20)
    cmp_.add_argument("--seed-base", type=int, default=0)
    cmp_.add_argument("--iters", type=int, default=150)
    cmp_.add_argument("--out-dir", default=".")
    cmp_.add_argument("--jobs", type=int, default=1)
    cmp_.set_defaults(func=cmd_compare)

    sc = sub.add_parser("score", help="score a learned model against a reference")
    sc.add_argument("--model", required=True, help="model JSON written by simulate")
    sc.add_argument("--reference", required=True,
                    help="bundled scenario name or reference JSON path")
    sc.add_argument("--threshold", type=float, default=0.5)
    sc.add_argument("--json-out", default=None)
    sc.set_defaults(func=cmd_score)

    srv = sub.add_parser("serve", help="serve the session API")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    srv.add_argument("--data-dir", default=os.environ.get("CAPEX_DATA_DIR", "./capex-data"))
    srv.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CapexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
