"""Command-line front end: ``ices train | eval | sweep | gradcheck | plot``.

Exit codes: 0 success, 1 usage error, 2 invalid config or input file,
3 numeric abort (or a failed gradient check).
"""

from __future__ import annotations

import argparse
import ast
import csv
import datetime as dt
import hashlib
import json
import logging
import math
import os
import statistics
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import VARIANTS, ConfigValidationError, ExperimentConfig, dump_config, make_env, parse_config
from .nn import NumericError
from .trainer import build_learners, evaluate, metrics_header, metrics_line, run_training

log = logging.getLogger("ices")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3
METRICS, MANIFEST, CHECKPOINT, DIAGNOSTIC = "metrics.csv", "manifest.json", "checkpoint.bin", "diagnostic.txt"
ARTIFACTS = (METRICS, MANIFEST, CHECKPOINT, DIAGNOSTIC)
SWEEP_KEYS = {"alpha": ("algo.alpha_start", "algo.alpha_end"), "beta": ("algo.beta",)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- config plumbing -------------------------------------------------------------------------
def _literal(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def parse_overrides(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = _literal(raw.strip())
    return out


def resolve_config(args) -> ExperimentConfig:
    cfg = parse_config(Path(args.config)) if getattr(args, "config", None) else ExperimentConfig()
    changes = parse_overrides(getattr(args, "set", None))
    for flag, key in (("seed", "seed"), ("variant", "variant"), ("out", "out_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = value
    return cfg.replace(**changes) if changes else cfg


def content_hash(text: str) -> str:
    """Git blob hash of the serialized config."""
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


# -- train -------------------------------------------------------------------------------------
def prepare_out_dir(out: Path, force: bool) -> None:
    existing = [p.name for p in out.iterdir()] if out.is_dir() else []
    if existing and not force:
        raise UsageError(f"{out} already holds {', '.join(sorted(existing))}; pass --force to overwrite")
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    for name in ARTIFACTS:
        (out / name).unlink(missing_ok=True)


def train_run(cfg: ExperimentConfig, out: Path) -> dict:
    """Train into ``out``; returns the manifest.  Raises NumericError after writing a diagnostic file."""
    text = dump_config(cfg)
    started = _now()
    rows = []
    with open(out / METRICS, "w", newline="") as fh:
        fh.write(metrics_header())

        def on_row(row):
            rows.append(row)
            fh.write(metrics_line(row))
            fh.flush()
            log.info("step %d  win %.2f  return %.3f", row["step"], row["test_win_rate"], row["test_return_mean"])

        try:
            result = run_training(cfg, on_row=on_row)
        except NumericError as exc:
            last = rows[-1]["step"] if rows else 0
            (out / DIAGNOSTIC).write_text(
                f"numeric abort: {exc}\nlast logged step: {last}\nconfig hash: {content_hash(text)}\n\n"
                f"{traceback.format_exc()}\n{text}")
            raise
    checkpoint.save(out / CHECKPOINT, result.exploiter.store.state())
    manifest = {
        "config": text,
        "config_hash": content_hash(text),
        "started": started,
        "finished": _now(),
        "steps": result.steps,
        "episodes": result.episodes,
        "train_events": result.train_events,
        "final_metrics": {k: _clean(v) for k, v in rows[-1].items()} if rows else {},
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    prepare_out_dir(out, args.force)
    try:
        manifest = train_run(cfg, out)
    except NumericError as exc:
        log.error("numeric abort: %s (see %s)", exc, out / DIAGNOSTIC)
        return EXIT_NUMERIC
    final = manifest["final_metrics"]
    print(json.dumps({"out_dir": str(out), "steps": manifest["steps"],
                      "test_win_rate": final.get("test_win_rate"), "test_return_mean": final.get("test_return_mean")}))
    return EXIT_OK


# -- eval ---------------------------------------------------------------------------------------
def cmd_eval(args) -> int:
    if args.episodes <= 0:
        raise UsageError("--episodes must be positive")
    run_dir = Path(args.run_dir)
    if args.config:
        cfg = parse_config(Path(args.config))
    else:
        manifest_path = run_dir / MANIFEST
        if not manifest_path.is_file():
            raise UsageError(f"{manifest_path} not found; pass --config")
        cfg = parse_config(json.loads(manifest_path.read_text())["config"])
    ckpt = Path(args.checkpoint) if args.checkpoint else run_dir / CHECKPOINT
    try:
        state = checkpoint.load(ckpt)
    except FileNotFoundError:
        raise UsageError(f"checkpoint {ckpt} not found") from None
    except checkpoint.CheckpointError as exc:
        raise ConfigValidationError(f"{ckpt}: {exc}") from None
    seed = cfg.seed if args.seed is None else args.seed
    env = make_env(cfg.env, seed=seed)
    learners = build_learners(cfg.replace(variant="qmix_baseline"), env, np.random.default_rng(seed))
    try:
        learners.exploiter.store.load(state)
    except (KeyError, ValueError) as exc:
        raise ConfigValidationError(f"checkpoint does not match the config: {exc}") from None
    stats = evaluate(learners.exploiter, env, args.episodes, np.random.default_rng(seed))
    print(json.dumps({"episodes": args.episodes, **stats}))
    return EXIT_OK


# -- sweep --------------------------------------------------------------------------------------
def _sweep_child(job: tuple[str, str]) -> tuple[str, str | None]:
    text, out = job
    cfg = parse_config(text)
    try:
        train_run(cfg, Path(out))
    except NumericError as exc:
        return out, str(exc)
    return out, None


def _format_value(v: float) -> str:
    return repr(float(v))


def cmd_sweep(args) -> int:
    values = [_literal(v) for v in args.values.split(",") if v.strip()] if args.values else []
    if not values:
        raise UsageError("sweep needs at least one value")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise UsageError(f"sweep values must be numbers: {args.values}")
    base = resolve_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base.seed]
    root = Path(base.out_dir)
    if (root / "summary.csv").exists() and not args.force:
        raise UsageError(f"{root} already holds a sweep; pass --force to overwrite")
    jobs, layout = [], []
    for value in values:
        child = base.replace(**{k: float(value) for k in SWEEP_KEYS[args.param]})
        value_dir = root / f"{args.param}_{_format_value(value)}"
        for seed in seeds:
            out = value_dir if len(seeds) == 1 else value_dir / f"seed_{seed}"
            prepare_out_dir(out, args.force)
            cfg = child.replace(seed=seed, out_dir=str(out))
            jobs.append((dump_config(cfg), str(out)))
            layout.append((value, seed, out))
    width = max(1, min(int(os.environ.get("ICES_THREADS", "1") or 1), len(jobs)))
    if width == 1:
        outcomes = [_sweep_child(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=width) as pool:
            outcomes = list(pool.map(_sweep_child, jobs))
    failures = {out: err for out, err in outcomes if err is not None}
    with open(root / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["param", "value", "seeds", "median_test_win_rate", "median_test_return_mean", "runs"])
        for value in values:
            runs = [(seed, out) for v, seed, out in layout if v == value]
            finals = [_final_row(out) for _, out in runs if str(out) not in failures]
            wins = [f["test_win_rate"] for f in finals if f.get("test_win_rate") is not None]
            rets = [f["test_return_mean"] for f in finals if f.get("test_return_mean") is not None]
            writer.writerow([args.param, _format_value(value), " ".join(str(s) for s, _ in runs),
                             repr(statistics.median(wins)) if wins else "nan",
                             repr(statistics.median(rets)) if rets else "nan",
                             " ".join(str(o) for _, o in runs)])
    print(root / "summary.csv")
    if failures:
        for out, err in failures.items():
            log.error("numeric abort in %s: %s", out, err)
        return EXIT_NUMERIC
    return EXIT_OK


def _final_row(out: Path) -> dict:
    return json.loads((Path(out) / MANIFEST).read_text())["final_metrics"]


# -- gradcheck ---------------------------------------------------------------------------------------
def cmd_gradcheck(args) -> int:
    from .diagnostics import COMPONENTS, TOLERANCE, gradient_report

    corrupt = set(args.inject_fault or [])
    if corrupt - set(COMPONENTS):
        raise UsageError(f"unknown component(s): {', '.join(sorted(corrupt - set(COMPONENTS)))}")
    results = gradient_report(args.seed, corrupt)
    for r in results:
        print(f"{r.name:<8} max_rel_err={r.error:.3e}  {'ok' if r.ok else 'FAIL'}  {r.detail}".rstrip())
    bad = [r.name for r in results if not r.ok]
    if bad:
        print(f"gradient check failed (tolerance {TOLERANCE:g}): {', '.join(bad)}")
        return EXIT_NUMERIC
    print(f"all {len(results)} components within {TOLERANCE:g}")
    return EXIT_OK


# -- plot ----------------------------------------------------------------------------------------
class CsvFormatError(ValueError):
    pass


def read_curve(path: Path, x: str = "step", y: str = "test_win_rate") -> tuple[np.ndarray, np.ndarray]:
    """Parse a metrics CSV into (steps, values); errors carry the file and line number."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise CsvFormatError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise CsvFormatError(f"{path}:1: empty file, expected a header row")
        for col in (x, y):
            if col not in header:
                raise CsvFormatError(f"{path}:1: missing column {col!r}")
        ix, iy = header.index(x), header.index(y)
        xs, ys = [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
            try:
                xs.append(float(row[ix]))
                ys.append(float(row[iy]))
            except ValueError:
                raise CsvFormatError(f"{path}:{line}: non-numeric value in {x!r} or {y!r}") from None
    return np.array(xs), np.array(ys)


def median_curve(curves: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise median over the steps every curve reports."""
    common = sorted(set.intersection(*(set(xs.tolist()) for xs, _ in curves)))
    ys = [[float(c[1][np.flatnonzero(c[0] == s)[0]]) for c in curves] for s in common]
    return np.array(common), np.array([float(np.median(v)) for v in ys])


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = [Path(p) for p in args.metrics]
    curves = [read_curve(p) for p in paths]
    fig, ax = plt.subplots(figsize=(6, 4))
    for path, (xs, ys) in zip(paths, curves):
        label = path.parent.name if path.name == METRICS and path.parent.name else path.stem
        ax.plot(xs, ys, marker="o", markersize=2, linewidth=1, alpha=0.7, label=label)
    if len(curves) > 1:
        xs, ys = median_curve(curves)
        ax.plot(xs, ys, color="black", linewidth=2.5, label="median")
    ax.set_xlabel("environment steps")
    ax.set_ylabel("test win rate")
    ax.set_ylim(-0.05, 1.05)
    if args.title:
        ax.set_title(args.title)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg")
    plt.close(fig)
    print(out)
    return EXIT_OK


# -- entry point --------------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    parser = _Parser(prog="ices", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_flags(p, out_help):
        p.add_argument("--config", metavar="PATH", help="config document (defaults apply when omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--out", metavar="DIR", help=out_help)
        p.add_argument("--force", action="store_true", help="overwrite existing artifacts")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. algo.beta=0.1 or env.episode_limit=20")

    p = sub.add_parser("train", parents=[common], help="run one experiment")
    run_flags(p, "run directory (overrides run.out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="greedy evaluation of a trained checkpoint")
    p.add_argument("run_dir", metavar="RUN_DIR")
    p.add_argument("--config", metavar="PATH", help="config to rebuild the networks (default: the run manifest)")
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="one run per value of alpha or beta")
    run_flags(p, "sweep root directory")
    p.add_argument("--param", required=True, choices=sorted(SWEEP_KEYS))
    p.add_argument("--values", required=True, help="comma separated, e.g. 0.05,0.1,0.2")
    p.add_argument("--seeds", help="comma separated seed list shared by every value")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every loss")
    p.add_argument("--seed", type=int)
    p.add_argument("--inject-fault", action="append", metavar="COMPONENT", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("plot", parents=[common], help="win-rate curves from metrics CSVs as SVG")
    p.add_argument("metrics", nargs="+", metavar="CSV")
    p.add_argument("--out", default="win_rate.svg", metavar="FILE")
    p.add_argument("--title")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"ices: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ices: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigValidationError, CsvFormatError) as exc:
        print(f"ices: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericError as exc:
        print(f"ices: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
