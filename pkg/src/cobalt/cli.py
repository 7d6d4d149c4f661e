"""Command-line interface: ``cobalt {embed,optimize,enumerate,report,sweep}``.

Exit codes: 0 success, 1 usage or input error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DEFAULT_ENUM_CAP = 1_000_000

log = logging.getLogger("cobalt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _limit_threads(n):
    # must run before numpy is imported to take effect
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config_dict(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    # relative file references are resolved against the config's directory
    for key in ("structure", "catalog"):
        if isinstance(data.get(key), str) and not Path(data[key]).is_absolute():
            data[key] = str((path.parent / data[key]).resolve())
    return data


def resolve_config(args):
    from .errors import ValidationError
    from .loop import RunConfig

    data = load_config_dict(args.config) if getattr(args, "config", None) else {}
    if os.environ.get("COBALT_SEED"):
        try:
            data["seed"] = int(os.environ["COBALT_SEED"])
        except ValueError:
            raise UsageError(f"COBALT_SEED must be an integer, got {os.environ['COBALT_SEED']!r}") from None
    for flag, key in (("method", "method"), ("budget", "budget"), ("seed", "seed"), ("structure", "structure"), ("catalog", "catalog")):
        v = getattr(args, flag, None)
        if v is not None:
            data[key] = v
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        data[k.strip()] = _parse_value(v)
    try:
        return RunConfig.from_dict(data)
    except (ValidationError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_manifest(cfg, problem, outputs: dict) -> dict:
    import numpy as np

    from . import __version__

    cat_hash = hashlib.sha256(np.ascontiguousarray(problem.catalog.values, dtype="<f8").tobytes()).hexdigest()
    return {
        "manifest_hash": cfg.config_hash,
        "config": cfg.to_dict(),
        "version": __version__,
        "catalog_hash": cat_hash,
        "anchor_hash": problem.anchors.content_hash,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "outputs": outputs,
    }


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _problem(cfg):
    from .errors import ValidationError
    from .loop import build_problem

    try:
        return build_problem(cfg)
    except (ValidationError, ValueError) as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------- embed


def cmd_embed(args) -> int:
    from .catalog import bundled_catalog, load_catalog
    from .loop import embed
    from .manifold import save_anchors

    if args.m < 1:
        raise UsageError(f"--m must be at least 1, got {args.m}")
    if args.k < 1:
        raise UsageError(f"--k must be at least 1, got {args.k}")
    if args.catalog:
        if not Path(args.catalog).exists():
            raise UsageError(f"catalog file not found: {args.catalog}")
        catalog = load_catalog(args.catalog)
    else:
        catalog = bundled_catalog()
    if args.m > catalog.n - 1:
        raise UsageError(f"--m must be below the catalog size {catalog.n}")
    anchors = embed(catalog, args.method, args.k, args.m)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sidecar = save_anchors(anchors, out)
    print(f"anchors: {out} ({anchors.n} x {anchors.m})")
    print(f"metadata: {sidecar}")
    print(f"residual_stress: {anchors.residual_stress:.6f}")
    print(f"content_hash: {anchors.content_hash}")
    return EXIT_OK


# ---------------------------------------------------------------- optimize


def _execute(cfg, problem, out_dir: Path, stem: str = "run"):
    from .loop import run

    result = run(cfg, problem)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = result.write_log(out_dir / f"{stem}.jsonl")
    best = result.best
    summary = {
        "manifest_hash": cfg.config_hash,
        "method": cfg.method,
        "seed": cfg.seed,
        "n_evaluations": len(result.observations),
        "found_feasible": result.found_feasible,
        "best_design": list(best.design),
        "best_ids": [problem.catalog.ids[i] for i in best.design],
        "best_y_obs": best.y_obs,
        "best_feasible": best.feasible,
        "best_constraints": best.robust_constraints,
    }
    summary_path = out_dir / f"{stem}.summary.json"
    _write_json(summary_path, summary)
    manifest = build_manifest(cfg, problem, {"log": str(log_path), "summary": str(summary_path)})
    _write_json(out_dir / f"{stem}.manifest.json", manifest)
    return result, summary


def cmd_optimize(args) -> int:
    cfg = resolve_config(args)
    problem = _problem(cfg)
    result, summary = _execute(cfg, problem, Path(args.out_dir))
    status = "feasible" if summary["best_feasible"] else "NO FEASIBLE DESIGN FOUND"
    print(f"method={cfg.method} seed={cfg.seed} evaluations={summary['n_evaluations']}")
    print(f"best design {summary['best_design']} y_obs={summary['best_y_obs']:.6g} ({status})")
    print(f"log: {Path(args.out_dir) / 'run.jsonl'}")
    return EXIT_OK


# ---------------------------------------------------------------- enumerate


def enumerate_designs(problem, cap: int = DEFAULT_ENUM_CAP):
    """Evaluate every design of the tensor grid; returns (designs, observations)."""
    import itertools

    from .loop import substream_seed

    total = problem.grid.n_combinations
    if total > cap:
        raise UsageError(f"refusing to enumerate {total} combinations (cap {cap})")
    designs = list(itertools.product(*[range(s) for s in problem.grid.sizes]))
    seed = problem.config.seed
    obs = [problem.oracle.safe_call(d, substream_seed(seed, "enumerate", i)) for i, d in enumerate(designs)]
    return designs, obs


def cmd_enumerate(args) -> int:
    from .loop import select_incumbent

    cfg = resolve_config(args)
    problem = _problem(cfg)
    designs, obs = enumerate_designs(problem, args.cap)
    best = select_incumbent(obs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    names = sorted({k for o in obs for k in o.robust_constraints})
    with out.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# manifest {cfg.config_hash}\n")
        w = csv.writer(fh)
        w.writerow(["index"] + [f"x{i}" for i in range(problem.e)] + ["y_obs", "mean_J", "std_J", "noise_var", "mass"] + names + ["feasible"])
        for i, (d, o) in enumerate(zip(designs, obs)):
            w.writerow(
                [i, *d, repr(o.y_obs), repr(o.mean_J), repr(o.std_J), repr(o.noise_var), repr(o.mass)]
                + [repr(o.robust_constraints.get(k, float("nan"))) for k in names]
                + [int(o.feasible)]
            )
    b = obs[best]
    print(f"combinations: {len(designs)}")
    print(f"argmin: index={best} design={list(b.design)} y_obs={b.y_obs:.10g} feasible={b.feasible}")
    print(f"table: {out}")
    return EXIT_OK


# ---------------------------------------------------------------- report


def read_log(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"log file not found: {path}")
    records = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: malformed record {i}: {exc.msg}") from None
        if not isinstance(rec, dict) or "event" not in rec or "config_hash" not in rec:
            raise UsageError(f"{path}: malformed record {i}: missing event or config_hash")
        records.append(rec)
    if not records:
        raise UsageError(f"{path}: empty log")
    return records


def _evaluations(records):
    return [r for r in records if "observation" in r]


def _best_so_far(evals):
    import math

    out, best = [], math.inf
    for r in evals:
        o = r["observation"]
        if o["feasible"] and o["y_obs"] < best:
            best = o["y_obs"]
        out.append(best)
    return out


def cmd_report(args) -> int:
    import numpy as np

    logs = [read_log(p) for p in args.logs]
    hashes = {recs[0]["config_hash"] for recs in logs}
    if len(hashes) != 1:
        raise UsageError(f"refusing to aggregate logs from different configurations: {sorted(hashes)}")
    manifest = hashes.pop()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def writer(name, header):
        fh = (out_dir / name).open("w", newline="", encoding="utf-8")
        fh.write(f"# manifest {manifest}\n")
        w = csv.writer(fh)
        w.writerow(header)
        return fh, w

    curves = [_best_so_far(_evaluations(recs)) for recs in logs]
    T = min(len(c) for c in curves)
    if len(logs) == 1:
        fh, w = writer("convergence.csv", ["evaluation", "best_feasible"])
        for i, v in enumerate(curves[0]):
            w.writerow([i + 1, repr(v)])
    else:
        arr = np.array([c[:T] for c in curves])
        fh, w = writer("convergence.csv", ["evaluation", "median", "q25", "q75", "n_runs"])
        for i in range(T):
            col = arr[:, i]
            q25, med, q75 = np.quantile(col, [0.25, 0.5, 0.75]) if np.all(np.isfinite(col)) else _inf_quantiles(col)
            w.writerow([i + 1, repr(float(med)), repr(float(q25)), repr(float(q75)), len(logs)])
    fh.close()

    names = sorted({k for recs in logs for r in _evaluations(recs) for k in r["observation"]["robust_constraints"]})
    fh, w = writer("constraints.csv", ["run", "seed", "evaluation"] + names)
    for k, recs in enumerate(logs):
        for r in _evaluations(recs):
            c = r["observation"]["robust_constraints"]
            w.writerow([k, r.get("seed", ""), r["index"] + 1] + [repr(c.get(n, float("nan"))) for n in names])
    fh.close()

    fh, w = writer("trajectory.csv", ["run", "seed", "evaluation", "design", "latent"])
    for k, recs in enumerate(logs):
        for r in _evaluations(recs):
            w.writerow([k, r.get("seed", ""), r["index"] + 1, " ".join(map(str, r["observation"]["design"])), " ".join(repr(v) for v in r.get("latent", []))])
    fh.close()

    fh, w = writer("trust_region.csv", ["run", "seed", "iteration", "length"])
    for k, recs in enumerate(logs):
        for r in recs:
            if r["event"] == "iteration" and "trust_region" in r:
                w.writerow([k, r.get("seed", ""), r["t"], repr(r["trust_region"]["length"])])
    fh.close()
    print(f"report for {len(logs)} run(s), manifest {manifest}: {out_dir}")
    return EXIT_OK


def _inf_quantiles(col):
    import numpy as np

    s = np.sort(col)
    n = len(s)
    return s[int(0.25 * (n - 1))], s[int(0.5 * (n - 1))], s[int(0.75 * (n - 1))]


# ---------------------------------------------------------------- sweep


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    values = [_parse_value(v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    key = args.param.replace(".", "_")
    out_dir = Path(args.out_dir)
    rows = []
    for v in values:
        try:
            vcfg = cfg.replace(**{key: v})
        except (TypeError, ValueError) as exc:
            raise UsageError(f"cannot set {args.param}={v}: {exc}") from None
        problem = _problem(vcfg)
        for s in seeds:
            scfg = vcfg.replace(seed=s)
            result, summary = _execute(scfg, problem, out_dir, stem=f"{key}={v}_seed={s}")
            rows.append([args.param, v, s, summary["best_y_obs"], int(summary["best_feasible"])])
            print(f"{args.param}={v} seed={s} best={summary['best_y_obs']:.6g} feasible={summary['best_feasible']}")
    with (out_dir / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# manifest {cfg.config_hash}\n")
        w = csv.writer(fh)
        w.writerow(["param", "value", "seed", "best_y_obs", "feasible"])
        w.writerows(rows)
    return EXIT_OK


# ---------------------------------------------------------------- entry


def _add_run_flags(p, with_method=True):
    p.add_argument("--config", help="JSON config with flat (dotted) RunConfig keys")
    p.add_argument("--structure", help="structure JSON (overrides config)")
    p.add_argument("--catalog", help="catalog CSV (overrides config)")
    p.add_argument("--seed", type=int, help="master seed (overrides config and COBALT_SEED)")
    p.add_argument("--budget", type=int, help="oracle evaluation budget T")
    if with_method:
        p.add_argument("--method", choices=["cobalt", "rs", "ga", "crbo"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cobalt", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="limit for inner numerical parallelism")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("embed", help="embed a catalog and lock its anchor set")
    p.add_argument("--catalog", help="catalog CSV (default: bundled 54-section catalog)")
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--method", choices=["isomap", "pca"], default="isomap")
    p.add_argument("--out", default="anchors.csv")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("optimize", help="run COBALT or a baseline")
    _add_run_flags(p)
    p.add_argument("--out-dir", default="cobalt_run")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("enumerate", help="exhaustively evaluate a small problem")
    _add_run_flags(p, with_method=False)
    p.add_argument("--cap", type=int, default=DEFAULT_ENUM_CAP)
    p.add_argument("--out", default="enumeration.csv")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("report", help="convert run logs to plot-ready CSV")
    p.add_argument("logs", nargs="+")
    p.add_argument("--out-dir", default="report")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="sensitivity sweep over one config key")
    _add_run_flags(p)
    p.add_argument("--param", required=True, help="config key, e.g. kappa or saas.tau0")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    p.add_argument("--out-dir", default="sweep")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        _limit_threads(args.threads)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"cobalt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        from .errors import CobaltError, ParseError

        if isinstance(exc, ParseError):
            print(f"cobalt: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        kind = "error" if isinstance(exc, CobaltError) else type(exc).__name__
        print(f"cobalt: runtime {kind}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
