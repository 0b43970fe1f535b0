"""``pacbound`` command line: compute, sweep and verify.

Every flag can also be set through an environment variable named
``PACBOUND_<FLAG>`` (upper case, dashes as underscores). A flag given on the
command line wins over the environment, which wins over the built-in default.

Exit codes: 0 success, 2 input error, 3 solver non-convergence (the report is
still written), 4 verification failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from . import __version__
from .bounds import BoundResult, single_task_maurer, single_task_mcallester
from .ensemble import ComplexityBudget, Ensemble, build_ensemble
from .unionbound import (
    LambdaGrid,
    MetaBudget,
    View,
    meta_sample_catoni,
    meta_sample_kl,
    meta_task_catoni,
    meta_task_kl,
    meta_task_pinsker,
    run_bound_suite,
)
from .verify import (
    COVERAGE_FAMILIES,
    FAMILIES,
    GeneratorConfig,
    coverage_campaign,
    mgf_campaign,
    oracle_campaign,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3
EXIT_VERIFY = 4

BOUND_CHOICES = ("standard", "kl", "catoni", "joint", "pinsker", "baselines", "meta")
SWEEP_PARAMS = ("total_kl", "empirical_risk_shift")  # plus m_<k>


class InputError(Exception):
    pass


# -- canonical serialization ------------------------------------------------------


def _canon(x):
    if isinstance(x, Enum):
        return x.value
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
        return float(f"{x:.12g}")
    if isinstance(x, dict):
        return {str(k): _canon(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_canon(v) for v in x]
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, floats at 12 significant digits, newline-terminated."""
    return json.dumps(_canon(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def _metadata(seed) -> dict:
    meta = {"artifact": "pacbound", "version": __version__, "seed": seed}
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        meta["timestamp"] = int(epoch)
    return meta


# -- instance loading --------------------------------------------------------------


def _schema() -> dict:
    return json.loads(resources.files("pacbound").joinpath("schemas/instance.json").read_text())


def _where(path) -> str:
    out = "$"
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def validate_instance(doc) -> None:
    errors = sorted(Draft202012Validator(_schema()).iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if not errors:
        return
    lines = []
    for err in errors:
        if err.context:
            err = best_match(err.context)
        lines.append(f"{_where(err.absolute_path)}: {err.message}")
    raise InputError("invalid instance:\n  " + "\n  ".join(lines))


def read_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def load_instance(path) -> dict:
    doc = read_json(path)
    validate_instance(doc)
    return doc


@dataclass
class Instance:
    ensemble: Ensemble
    budget: ComplexityBudget
    view: View
    meta: MetaBudget | None


def build_instance(doc: dict) -> Instance:
    try:
        e = build_ensemble([(t["m"], t["empirical_risk"]) for t in doc["tasks"]])
        bud = doc["budget"]
        if "total_kl" in bud:
            b = ComplexityBudget(delta=doc["delta"], total_kl=bud["total_kl"])
        else:
            b = ComplexityBudget(delta=doc["delta"], hyper_kl=bud["hyper_kl"],
                                 per_task_kl=tuple(bud["per_task_kl"]))
        b.check_tasks(e.n)
        mb = None
        if "meta" in doc:
            m = doc["meta"]
            mb = MetaBudget(e.n, m["m_max"], m["meta_kl"], m["expected_inner_kl"], doc["delta"])
            mb.check(e)
    except ValueError as exc:
        raise InputError(f"invalid instance: {exc}") from None
    return Instance(e, b, View(doc.get("view", "task")), mb)


# -- option resolution ---------------------------------------------------------------


def _env_name(dest: str) -> str:
    return "PACBOUND_" + dest.upper()


class _Options:
    """Flags registered with default None, resolved as flag > env > default."""

    def __init__(self):
        self.specs = {}

    def add(self, parser, *flags, dest, default, type=str, choices=None, help=""):
        self.specs[dest] = (default, type, choices)
        env = _env_name(dest)
        parser.add_argument(*flags, dest=dest, default=None, help=f"{help} [env {env}; default {default}]")

    def resolve(self, args) -> None:
        for dest, (default, typ, choices) in self.specs.items():
            if not hasattr(args, dest):
                continue
            raw = getattr(args, dest)
            source = "flag"
            if raw is None:
                raw = os.environ.get(_env_name(dest))
                source = "env"
            if raw is None:
                setattr(args, dest, default)
                continue
            try:
                val = typ(raw)
            except (TypeError, ValueError):
                raise InputError(f"bad value {raw!r} for {dest} (from {source})") from None
            if choices is not None and val not in choices:
                raise InputError(f"{dest} must be one of {', '.join(map(str, choices))}, got {val!r} (from {source})")
            setattr(args, dest, val)


def _bounds_list(text: str) -> tuple:
    items = tuple(x.strip() for x in str(text).split(",") if x.strip())
    bad = [x for x in items if x not in BOUND_CHOICES]
    if bad or not items:
        raise ValueError(text)
    return items


def parse_lambda_grid(text: str, e: Ensemble, view: View) -> LambdaGrid | None:
    """Preset name (exponential, linear), ``none``, or comma-separated values.

    A value with slashes (``300/400``) gives one multiplier per task.
    """
    text = str(text).strip()
    if text == "none":
        return None
    if text in ("exponential", "linear"):
        return LambdaGrid.preset(text, e, view)
    vals = []
    for item in text.split(","):
        parts = item.strip().split("/")
        try:
            nums = tuple(float(p) for p in parts)
        except ValueError:
            raise InputError(f"bad lambda grid entry {item!r}") from None
        vals.append(nums[0] if len(nums) == 1 else nums)
    try:
        return LambdaGrid.custom(vals)
    except ValueError as exc:
        raise InputError(f"bad lambda grid: {exc}") from None


# -- compute ---------------------------------------------------------------------------


def _result_dict(r: BoundResult, label: str) -> dict:
    diag = {k: v for k, v in r.diagnostics.items() if k != "wall_time"}
    return {"label": label, "kind": r.kind, "value": r.value, "delta_share": r.delta_consumed,
            "empirical": r.empirical, "params": r.params, "diagnostics": diag,
            "vacuous": r.vacuous, "converged": r.converged}


def compute_report(doc: dict, opts: dict) -> tuple[dict, bool]:
    """Evaluate every selected bound for one instance document."""
    inst = build_instance(doc)
    e, b = inst.ensemble, inst.budget
    view = View(opts.get("view") or inst.view)
    bounds = set(opts.get("bounds", BOUND_CHOICES))
    grid = parse_lambda_grid(opts.get("lambda_grid", "exponential"), e, view) if "catoni" in bounds else None
    if not ({"standard", "kl"} & bounds) and grid is None:
        raise InputError("the selected bounds leave the suite empty")
    try:
        suite = run_bound_suite(e, b, view, grid, include_kl="kl" in bounds,
                                include_standard="standard" in bounds, include_joint="joint" in bounds)
    except ValueError as exc:
        raise InputError(str(exc)) from None

    prefix = "task" if view is View.TASK else "sample"
    results = []
    for label, r in zip(suite.labels, suite.members):
        if label == "standard":
            label = "standard_rate" if view is View.TASK else "pinsker_sample"
        elif label == "kl":
            label = f"{prefix}_kl"
        else:
            label = f"{prefix}_{label}"
        results.append(_result_dict(r, label))
    if "pinsker" in bounds:
        for r in suite.derived:
            results.append(_result_dict(r, r.kind.value))
    results.append(_result_dict(suite.pointwise_min, "pointwise_min"))
    if suite.joint is not None:
        results.append(_result_dict(suite.joint, "task_joint"))
    best = min((r for r in results if r["label"] in ("pointwise_min", "task_joint")), key=lambda r: r["value"])

    report = {
        "metadata": _metadata(opts.get("seed")),
        "instance": {
            "n": e.n, "total_samples": e.total_samples, "harmonic_mean": e.harmonic_mean,
            "harmonic_mean_exact": e.harmonic_mean_exact, "min_samples": e.min_samples,
            "max_samples": e.max_samples, "task_centric_empirical": e.task_centric_empirical,
            "sample_centric_empirical": e.sample_centric_empirical, "kl": b.kl, "delta": b.delta,
        },
        "settings": {"view": view, "bounds": sorted(bounds),
                     "lambda_grid": grid.describe() if grid is not None else None,
                     "maurer_denominator": opts.get("maurer_denom", "m"),
                     "meta_denominator": opts.get("meta_denom", "n")},
        "delta_shares": [str(s) for s in suite.delta_shares],
        "results": results,
        "best": {"label": best["label"], "value": best["value"]},
    }
    if b.is_decomposed:
        report["instance"]["hyper_kl"] = b.hyper_kl
        report["instance"]["per_task_kl"] = list(b.per_task_kl)
    converged = suite.converged

    if e.n == 1 and "baselines" in bounds:
        t = e.tasks[0]
        report["baselines"] = [
            _result_dict(single_task_mcallester(t.sample_count, t.empirical_risk, b.kl, b.delta), "mcallester"),
            _result_dict(single_task_maurer(t.sample_count, t.empirical_risk, b.kl, b.delta,
                                            opts.get("maurer_denom", "m")), "maurer"),
        ]
    if inst.meta is not None and "meta" in bounds:
        mb = inst.meta
        denom = opts.get("meta_denom", "n")
        inner = opts.get("meta_inner_lambda") or e.n * e.harmonic_mean
        inner_s = opts.get("meta_inner_lambda") or float(e.total_samples)
        outer = opts.get("meta_outer_lambda") or float(e.n)
        metas = [
            _result_dict(meta_task_kl(e, mb, denom), "meta_task_kl"),
            _result_dict(meta_sample_kl(e, mb, denom), "meta_sample_kl"),
            _result_dict(meta_task_catoni(e, mb, inner, outer), "meta_task_catoni"),
            _result_dict(meta_sample_catoni(e, mb, inner_s, outer), "meta_sample_catoni"),
            _result_dict(meta_task_pinsker(e, mb, denom), "meta_task_pinsker"),
        ]
        report["meta"] = {"budget": {"m_max": mb.m_max, "meta_kl": mb.meta_kl,
                                     "expected_inner_kl": mb.expected_inner_kl, "complexity": mb.complexity},
                          "results": metas}
        converged = converged and all(m["converged"] for m in metas)
    report["converged"] = bool(converged)
    return report, bool(converged)


def _write(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _compute_opts(args) -> dict:
    return {"bounds": args.bounds, "lambda_grid": args.lambda_grid, "maurer_denom": args.maurer_denom,
            "meta_denom": args.meta_denom, "view": args.view, "seed": args.seed,
            "meta_inner_lambda": args.meta_inner_lambda, "meta_outer_lambda": args.meta_outer_lambda}


def cmd_compute(args) -> int:
    doc = load_instance(args.instance)
    report, converged = compute_report(doc, _compute_opts(args))
    _write(dumps(report), args.output)
    return EXIT_OK if converged else EXIT_NONCONVERGED


# -- sweep ------------------------------------------------------------------------------


def apply_sweep(doc: dict, param: str, value: float) -> dict:
    out = copy.deepcopy(doc)
    if param == "total_kl":
        if not value >= 0.0:
            raise InputError(f"total_kl must be >= 0, got {value!r}")
        out["budget"] = {"total_kl": value}
    elif param == "empirical_risk_shift":
        for i, t in enumerate(out["tasks"]):
            q = t["empirical_risk"] + value
            if not 0.0 <= q <= 1.0:
                raise InputError(f"shift {value!r} moves task {i + 1}'s empirical risk outside [0, 1]")
            t["empirical_risk"] = q
    elif param.startswith("m_"):
        try:
            k = int(param[2:])
        except ValueError:
            raise InputError(f"unknown sweep parameter {param!r}") from None
        if not 1 <= k <= len(out["tasks"]):
            raise InputError(f"{param}: task index out of range 1..{len(out['tasks'])}")
        if value != int(value) or value < 1:
            raise InputError(f"{param} values must be positive integers, got {value!r}")
        out["tasks"][k - 1]["m"] = int(value)
    else:
        raise InputError(f"unknown sweep parameter {param!r}")
    validate_instance(out)
    return out


def _sweep_point(job):
    doc, opts = job
    return compute_report(doc, opts)


def _parse_values(text) -> list[float]:
    items = [x.strip() for x in str(text).split(",") if x.strip()]
    if not items:
        raise InputError("the sweep needs at least one value")
    try:
        return [float(x) for x in items]
    except ValueError:
        raise InputError(f"bad sweep values {text!r}") from None


SWEEP_COLUMNS = ("sweep_value", "bound_kind", "bound_value", "empirical_risk", "gap_to_standard")


def sweep_rows(values, reports) -> list[dict]:
    rows = []
    for v, rep in zip(values, reports):
        by_label = {r["label"]: r for r in rep["results"]}
        std = by_label.get("standard_rate") or by_label.get("pinsker_sample")
        fast = [r for r in rep["results"] if r["label"] not in ("standard_rate", "pointwise_min",
                                                                   "pinsker_task", "pinsker_sample")]
        entries = [(r["label"], r["value"], r["empirical"]) for r in rep["results"]]
        if fast:
            f = min(fast, key=lambda r: r["value"])
            entries.append(("fast_rate_best", f["value"], f["empirical"]))
        for label, val, emp in entries:
            rows.append({"sweep_value": v, "bound_kind": label, "bound_value": val, "empirical_risk": emp,
                         "gap_to_standard": (std["value"] - val) if std is not None else None})
    return rows


def _csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r[k] is None else (f"{r[k]:.12g}" if isinstance(r[k], float) else r[k]))
                    for k in SWEEP_COLUMNS})
    return buf.getvalue()


def cmd_sweep(args) -> int:
    doc = load_instance(args.template)
    if args.param is None:
        raise InputError("--param is required")
    values = _parse_values(args.values)
    docs = [apply_sweep(doc, args.param, v) for v in values]
    opts = _compute_opts(args)
    jobs = [(d, opts) for d in docs]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as ex:
            outs = list(ex.map(_sweep_point, jobs))
    else:
        outs = [_sweep_point(j) for j in jobs]
    reports = [r for r, _ in outs]
    converged = all(c for _, c in outs)
    for r in reports:
        r.pop("metadata", None)
    report = {"metadata": _metadata(args.seed), "param": args.param, "values": values,
              "points": reports, "converged": converged}
    rows = sweep_rows(values, reports)
    outdir = Path(args.output or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "sweep.json").write_text(dumps(report))
    (outdir / "sweep.csv").write_text(_csv_text(_canon_rows(rows)))
    return EXIT_OK if converged else EXIT_NONCONVERGED


def _canon_rows(rows):
    return [{k: (_canon(v) if isinstance(v, float) else v) for k, v in r.items()} for r in rows]


# -- verify -------------------------------------------------------------------------------


def _generator(cfg: dict) -> GeneratorConfig:
    try:
        return GeneratorConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.items()})
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad generator config: {exc}") from None


def run_verify(suite: str, cfg: dict, seed: int, workers: int) -> dict:
    cfg = dict(cfg)
    try:
        if suite == "mgf":
            return mgf_campaign(seed=seed, **cfg)
        if suite == "oracle":
            return oracle_campaign(seed=seed, **cfg)
        if suite == "coverage":
            fams = tuple(cfg.pop("families", COVERAGE_FAMILIES))
            bad = [f for f in fams if f not in FAMILIES]
            if bad:
                raise InputError(f"unknown bound families: {', '.join(bad)}")
            gen = _generator(cfg.pop("generator", {}))
            trials = int(cfg.pop("trials", 2000))
            if cfg:
                raise InputError(f"unknown coverage config keys: {', '.join(sorted(cfg))}")
            return coverage_campaign(fams, trials, seed, gen, workers)
    except TypeError as exc:
        raise InputError(f"bad {suite} config: {exc}") from None
    raise InputError(f"unknown verification suite {suite!r}")


def cmd_verify(args) -> int:
    cfg = read_json(args.config) if args.config else {}
    if not isinstance(cfg, dict):
        raise InputError("the config must be a JSON object")
    result = run_verify(args.suite, cfg, args.seed, args.workers)
    report = {"metadata": _metadata(args.seed), "suite": args.suite, "config": cfg, "result": result}
    _write(dumps(report), args.output)
    return EXIT_OK if result["passed"] else EXIT_VERIFY


# -- entry point ----------------------------------------------------------------------------


def _positive_int(x) -> int:
    v = int(x)
    if v < 1:
        raise ValueError(x)
    return v


def _positive_float(x) -> float:
    v = float(x)
    if not (v > 0.0 and math.isfinite(v)):
        raise ValueError(x)
    return v


def build_parser() -> tuple[argparse.ArgumentParser, _Options]:
    opts = _Options()
    p = argparse.ArgumentParser(prog="pacbound", description="Certified PAC-Bayes risk bounds for unbalanced multi-task learning.")
    p.add_argument("--version", action="version", version=f"pacbound {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        opts.add(sp, "--seed", dest="seed", default=0, type=int, help="master seed")
        opts.add(sp, "--workers", dest="workers", default=1, type=_positive_int, help="worker processes")
        opts.add(sp, "-o", "--output", dest="output", default=None, help="output path")

    def bound_opts(sp):
        opts.add(sp, "--bounds", dest="bounds", default=BOUND_CHOICES, type=_bounds_list,
                 help=f"comma-separated subset of {','.join(BOUND_CHOICES)}")
        opts.add(sp, "--lambda-grid", dest="lambda_grid", default="exponential",
                 help="exponential, linear, none, or values such as 200,300/400")
        opts.add(sp, "--maurer-denom", dest="maurer_denom", default="m", choices=("m", "2m"),
                 help="denominator of the single-task kl bound")
        opts.add(sp, "--meta-denom", dest="meta_denom", default="n", choices=("n", "2n"),
                 help="denominator of the environment-level kl step")
        opts.add(sp, "--view", dest="view", default=None, choices=(None, "task", "sample"),
                 help="override the instance's view")
        opts.add(sp, "--meta-inner-lambda", dest="meta_inner_lambda", default=None, type=_positive_float,
                 help="inner Catoni multiplier for meta bounds (default n*m_h, or M for the sample view)")
        opts.add(sp, "--meta-outer-lambda", dest="meta_outer_lambda", default=None, type=_positive_float,
                 help="outer Catoni multiplier for meta bounds (default n)")

    c = sub.add_parser("compute", help="evaluate the bound suite for one instance")
    c.add_argument("instance")
    bound_opts(c)
    common(c)
    c.set_defaults(func=cmd_compute)

    s = sub.add_parser("sweep", help="evaluate the suite along one parameter")
    s.add_argument("template")
    opts.add(s, "--param", dest="param", default=None, help="m_<k> (1-based), total_kl or empirical_risk_shift")
    opts.add(s, "--values", dest="values", default="", help="comma-separated sweep values")
    bound_opts(s)
    common(s)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="run a verification campaign")
    v.add_argument("suite", choices=("coverage", "mgf", "oracle"))
    opts.add(v, "--config", dest="config", default=None, help="JSON config for the campaign")
    common(v)
    v.set_defaults(func=cmd_verify)
    return p, opts


def main(argv=None) -> int:
    parser, opts = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        opts.resolve(args)
        return args.func(args)
    except InputError as exc:
        print(f"pacbound: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
