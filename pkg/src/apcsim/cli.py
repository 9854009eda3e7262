"""Command-line interface: ``apcsim generate | fit | grid | theory | plotdata``.

Structured reports are JSON with a ``schema`` field; tabular output is CSV.
Every output carries a run manifest (tool version, configuration, seed,
arguments) that is enough to rerun the command. The manifest timestamp is
taken from ``SOURCE_DATE_EPOCH`` when that variable is set and is ``null``
otherwise, so repeated runs produce byte-identical files.

Exit codes: 0 success (including fits flagged as not converged), 1 usage
error, 2 I/O error, 3 data validation error.
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
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import evaluate_fit, run_grid
from .datagen import (
    CaseSpec,
    EffectSet,
    artificial_effects,
    enumerate_cases,
    expected_cell_means,
    generate_dataset,
    get_case,
    read_csv,
)
from .design import cell_means
from .errors import DataFormatError, InputDomainError
from .grid import GridSpec, centering_indexes, index_weight_sum, weight_gap, weight_ratios
from .inference import FitConfig, fit
from .models import ModelKind

SCHEMA = 1

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 1, 2, 3

log = logging.getLogger("apcsim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers


def _json_safe(obj):
    """Recursively convert numpy types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_json_safe(obj), indent=2) + "\n"


def _timestamp() -> str | None:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None:
        return None
    try:
        return datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()
    except (ValueError, OverflowError, OSError):
        raise UsageError(f"SOURCE_DATE_EPOCH is not a valid epoch: {epoch!r}") from None


# Arguments that choose where or how fast output is produced, not what it is.
# Leaving them out keeps reports from identical runs byte-identical.
_NOT_IN_MANIFEST = ("func", "log_level", "out", "jobs")


def _manifest(command: str, args: argparse.Namespace, argv, **extra) -> dict:
    arguments = {k: v for k, v in vars(args).items() if k not in _NOT_IN_MANIFEST}
    return {
        "tool": "apcsim",
        "version": __version__,
        "command": command,
        "args": arguments,
        "timestamp": _timestamp(),
        **extra,
    }


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    p = Path(path)
    if p.parent and not p.parent.exists():
        raise OSError(f"directory does not exist: {p.parent}")
    p.write_text(text, encoding="utf-8", newline="\n")


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json") if path.suffix.lower() == ".csv" else Path(str(path) + ".json")


def _grid_spec(args) -> GridSpec:
    return GridSpec(args.I, args.J, args.T, gamma=args.gamma)


def _fit_config(args, method: str) -> FitConfig:
    return FitConfig(
        method=method,
        chains=args.chains,
        iterations=args.iter,
        warmup=args.warmup,
        thin=args.thin,
        seed=args.seed,
        restarts=args.restarts,
        sigma_floor=args.sigma_floor,
        rhat_threshold=args.rhat_threshold,
        sampler=args.sampler,
    )


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _sign(x: int) -> str:
    return {1: "+", 0: "0", -1: "-"}[x]


# ---------------------------------------------------------------- commands


def cmd_generate(args, argv) -> int:
    spec = _grid_spec(args)
    case = get_case(args.case, args.slope, args.nl)
    beta = artificial_effects(case, spec)
    data = generate_dataset(beta, spec, args.seed, case)
    out = Path(args.out)
    sidecar = {
        "schema": SCHEMA,
        "kind": "truth",
        "case_id": args.case,
        "case": case.to_dict(),
        "signs": case.label,
        "spec": spec.to_dict(),
        "seed": args.seed,
        "beta": beta.to_dict(),
        "manifest": _manifest("generate", args, argv, spec=spec.to_dict(), seed=args.seed),
    }
    _write_text(str(out), data.to_csv())
    _write_text(str(_sidecar(out)), _dumps(sidecar))
    log.info("wrote %d rows to %s", data.N, out)
    return EXIT_OK


def _load_truth(path: Path) -> dict | None:
    if not path.exists():
        return None
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("kind") != "truth" or "beta" not in doc:
        return None
    return doc


def cmd_fit(args, argv) -> int:
    data_path = Path(args.data)
    truth_path = Path(args.truth) if args.truth else _sidecar(data_path)
    truth_doc = _load_truth(truth_path)
    if args.truth and truth_doc is None:
        raise DataFormatError(f"{truth_path}: not a truth sidecar written by 'generate'")
    data = read_csv(data_path)
    if truth_doc is not None:
        spec_d = truth_doc["spec"]
        if (spec_d["I"], spec_d["J"], spec_d["T"]) != (data.spec.I, data.spec.J, data.spec.T):
            raise DataFormatError(f"{truth_path}: grid does not match {data_path}")
        data.spec = GridSpec(data.spec.I, data.spec.J, data.spec.T, gamma=spec_d.get("gamma"))
        data.seed = truth_doc.get("seed")
    cfg = _fit_config(args, args.method)
    kind = ModelKind.parse(args.model)
    result = fit(kind, data, cfg)
    report = {
        "schema": SCHEMA,
        "kind": "fit",
        **result.to_dict(),
        "data": str(data_path),
        "spec": data.spec.to_dict(),
    }
    if truth_doc is not None:
        beta = EffectSet.from_dict(truth_doc["beta"])
        v = centering_indexes(data.spec)
        br = evaluate_fit(int(truth_doc.get("case_id", 0)), _case_from_doc(truth_doc), beta, result, v)
        report["bias"] = {
            "s": br.s,
            "grade": br.grade,
            "nonlinear_error": br.nonlinear_error,
            "decomposition": br.decomposition.to_dict(),
            "truth": str(truth_path),
        }
    report["manifest"] = _manifest("fit", args, argv, config=cfg.to_dict(), spec=data.spec.to_dict(), seed=cfg.seed)
    _write_text(args.out, _dumps(report))
    if not result.converged:
        log.warning("fit did not converge (max rhat %s)", result.max_rhat)
    return EXIT_OK


def _case_from_doc(doc: dict) -> CaseSpec:
    c = doc["case"]
    return CaseSpec(c["signA"], c["signP"], c["signC"], c["slope_mag"], c["nl_mag"])


def _parse_ids(text: str | None, n: int) -> list[int]:
    if text is None:
        return list(range(1, n + 1))
    try:
        ids = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--cases expects comma-separated integers, got {text!r}") from None
    for i in ids:
        if not 1 <= i <= n:
            raise UsageError(f"case id {i} outside 1..{n}")
    return ids


def cmd_grid(args, argv) -> int:
    spec = _grid_spec(args)
    cfg = _fit_config(args, args.method)
    models = [ModelKind.parse(m) for m in args.models.split(",") if m.strip()]
    if not models:
        raise UsageError("--models needs at least one model")
    all_cases = enumerate_cases(args.slope, args.nl)
    ids = _parse_ids(args.cases, len(all_cases))
    reports = run_grid(spec, [all_cases[i - 1] for i in ids], models, cfg, jobs=args.jobs, case_ids=ids)
    rows = [r.to_dict() for r in reports]
    doc = {
        "schema": SCHEMA,
        "kind": "grid",
        "spec": spec.to_dict(),
        "config": cfg.to_dict(),
        "rows": rows,
        "manifest": _manifest("grid", args, argv, config=cfg.to_dict(), spec=spec.to_dict(), seed=cfg.seed),
    }
    out = Path(args.out)
    _write_text(str(out), _dumps(doc))
    table = [
        [
            r.case_id,
            _sign(r.case.signA),
            _sign(r.case.signP),
            _sign(r.case.signC),
            r.model.value,
            "nan" if not math.isfinite(r.s) else f"{r.s:.6f}",
            r.grade,
            str(r.converged).lower(),
        ]
        for r in reports
    ]
    csv_path = out.with_suffix(".csv") if out.suffix.lower() != ".csv" else Path(str(out) + ".table.csv")
    _write_text(str(csv_path), _csv_text(["case", "A", "P", "C", "model", "s", "grade", "converged"], table))
    return EXIT_OK


def cmd_theory(args, argv) -> int:
    spec = GridSpec(args.I, args.J, gamma=None)
    rw_ratio, sq_ratio = weight_ratios(spec.I, spec.J)
    gap = weight_gap(spec.I, spec.J)
    doc = {
        "schema": SCHEMA,
        "kind": "theory",
        "I": spec.I,
        "J": spec.J,
        "K": spec.K,
        "sum_vA2": index_weight_sum(spec.I),
        "sum_vP2": index_weight_sum(spec.J),
        "sum_vC2": index_weight_sum(spec.K),
        "ratio_random_walk": rw_ratio,
        "ratio_squared": sq_ratio,
        "weight_gap": gap,
        "gap_positive": gap > 0,
        "manifest": _manifest("theory", args, argv),
    }
    _write_text(args.out, _dumps(doc))
    return EXIT_OK


PLOT_DIGITS = 12


def _plot_value(y: float) -> str:
    """Twelve significant digits, so surfaces equal up to rounding print alike."""
    return f"{float(y):.{PLOT_DIGITS}g}"


def _surface_rows(means: np.ndarray) -> list[list]:
    I, J = means.shape
    rows = []
    for j in range(J):
        for i in range(I):
            rows.append([j + 1, j - i + I, _plot_value(means[i, j])])
    return rows


def cmd_plotdata(args, argv) -> int:
    if args.case is not None:
        spec = _grid_spec(args)
        case = get_case(args.case, args.slope, args.nl)
        beta = artificial_effects(case, spec)
        if args.noisy:
            means = cell_means(generate_dataset(beta, spec, args.seed, case))
        else:
            means = expected_cell_means(beta, spec.I, spec.J)
        header, rows = ["series", "x", "y"], _surface_rows(means)
    elif args.data is not None:
        header, rows = ["series", "x", "y"], _surface_rows(cell_means(read_csv(args.data)))
    else:
        path = Path(args.fit)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            point = EffectSet.from_dict(doc["point"])
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from None
        except (KeyError, TypeError):
            raise DataFormatError(f"{path}: not a fit report") from None
        rows = []
        for name, blk in zip(("age", "period", "cohort"), point.blocks):
            rows += [[name, m + 1, _plot_value(y)] for m, y in enumerate(blk)]
        header = ["series", "x", "y"]
    _write_text(args.out, _csv_text(header, rows))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_grid_args(p, with_seed: bool = True):
    p.add_argument("--I", type=int, default=10, help="age groups (default 10)")
    p.add_argument("--J", type=int, default=10, help="period groups (default 10)")
    p.add_argument("--T", type=int, default=10, help="replicates per cell (default 10)")
    p.add_argument("--gamma", type=float, default=0.1, help="noise standard deviation (default 0.1)")
    p.add_argument("--slope", type=float, default=0.1, help="linear slope magnitude (default 0.1)")
    p.add_argument("--nl", type=float, default=0.05, help="alternating component amplitude (default 0.05)")
    if with_seed:
        p.add_argument("--seed", type=int, default=1234, help="RNG seed (default 1234)")


def _add_fit_args(p):
    d = FitConfig()
    p.add_argument("--method", choices=("map", "mcmc"), default="mcmc")
    p.add_argument("--chains", type=int, default=d.chains)
    p.add_argument("--iter", type=int, default=d.iterations, help="iterations per chain, warmup included")
    p.add_argument("--warmup", type=int, default=d.warmup)
    p.add_argument("--thin", type=int, default=d.thin)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--restarts", type=int, default=d.restarts, help="MAP multistart count")
    p.add_argument("--sigma-floor", dest="sigma_floor", type=float, default=d.sigma_floor)
    p.add_argument("--rhat-threshold", dest="rhat_threshold", type=float, default=d.rhat_threshold)
    p.add_argument("--sampler", choices=("collapsed", "hmc"), default=d.sampler)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="apcsim", description="Regularized APC model simulation study")
    parser.add_argument("--version", action="version", version=f"apcsim {__version__}")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="write an artificial dataset and its true effects")
    g.add_argument("--case", type=int, required=True, help="case number 1..13")
    _add_grid_args(g)
    g.add_argument("--out", required=True, help="CSV path; true effects go to the .json sidecar")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit one model to a dataset CSV")
    f.add_argument("--model", required=True, choices=("re", "rr", "rw"))
    f.add_argument("--data", required=True, help="dataset CSV with header i,j,k,y")
    f.add_argument("--truth", help="truth sidecar (default: the data path with .json)")
    _add_fit_args(f)
    f.add_argument("--out", help="report path (default stdout)")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("grid", help="fit every case with every model and score the bias")
    r.add_argument("--models", default="re,rr,rw", help="comma-separated subset of re,rr,rw")
    r.add_argument("--cases", help="comma-separated case numbers (default all 13)")
    r.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPUs available)")
    _add_grid_args(r, with_seed=False)
    _add_fit_args(r)
    r.add_argument("--out", required=True, help="JSON report path; the table goes next to it as .csv")
    r.set_defaults(func=cmd_grid)

    t = sub.add_parser("theory", help="index-weight sums and ratios of a table size")
    t.add_argument("--I", type=int, default=10)
    t.add_argument("--J", type=int, default=10)
    t.add_argument("--out", help="output path (default stdout)")
    t.set_defaults(func=cmd_theory)

    pd = sub.add_parser("plotdata", help="long-format series,x,y data for plotting")
    src = pd.add_mutually_exclusive_group(required=True)
    src.add_argument("--case", type=int, help="noise-free cell means of a case, by period and cohort")
    src.add_argument("--fit", help="fit report JSON; exports the three effect blocks")
    src.add_argument("--data", help="dataset CSV; exports its cell means by period and cohort")
    _add_grid_args(pd)
    pd.add_argument("--noisy", action="store_true", help="with --case, use sampled data instead")
    pd.add_argument("--out", help="CSV path (default stdout)")
    pd.set_defaults(func=cmd_plotdata)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"apcsim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataFormatError as exc:
        print(f"apcsim: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InputDomainError as exc:
        print(f"apcsim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"apcsim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
