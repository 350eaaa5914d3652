"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 numerical failure.  Errors are
reported on stderr as a single line ``syncon: error[input|numeric]: reason``.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import platform
import sys

import numpy as np

from . import __version__, svg
from .asymptotics import (LimitError, LimitSpec, did_limit, gamma_many_groups, gamma_two_groups,
                          limit_spec_for, limit_weights)
from .config import ConfigError, RunConfig, config_hash, file_sha256
from .dgp import DgpError, FactorDGP, SimSeed, loading_matrix, simulate
from .estimators import EstimatorError, EstimatorKind, estimate
from .mc import STREAM_STRIDE, McConfig, McError, misallocation, run_mc
from .panel import PanelError, detrend_by_control_mean, load_panel, save_panel
from .placebo import PlaceboConfig, PlaceboError, placebo_scatter, run_placebo
from .qp import ConstraintSet, QpError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
INPUT_ERRORS = (PanelError, ConfigError, DgpError, McError, LimitError, PlaceboError, EstimatorError,
                OSError, ValueError, TypeError, KeyError)
NUMERIC_ERRORS = (QpError, np.linalg.LinAlgError, FloatingPointError)


class NumericFailure(RuntimeError):
    pass


def _g(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else format(x, ".17g")


def jsonable(v):
    """numpy-aware conversion; non-finite floats become strings."""
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def _dump(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def _versions() -> dict:
    out = {"syncon": __version__, "numpy": np.__version__, "python": platform.python_version()}
    try:
        import numba
        out["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        out["numba"] = None
    return out


class _Outputs:
    def __init__(self, directory, formats):
        self.dir = directory
        self.formats = formats
        self.files = []
        os.makedirs(directory, exist_ok=True)

    def write(self, name, text, fmt=None):
        if fmt is not None and fmt not in self.formats:
            return
        with open(os.path.join(self.dir, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.files.append(name)

    def manifest(self, command, effective, seed):
        doc = dict(command=command, config=effective, config_sha256=config_hash(effective),
                   seed=seed, versions=_versions(), outputs=sorted(self.files))
        with open(os.path.join(self.dir, "manifest.json"), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _config(args) -> RunConfig:
    return RunConfig.load(args.config) if args.config else RunConfig()


def _outputs(args, cfg: RunConfig) -> _Outputs:
    directory = args.out or cfg.output_dir or "syncon_out"
    return _Outputs(directory, cfg.formats)


def _panel_inputs(args, cfg: RunConfig, need_treated=True) -> dict:
    sec = cfg.section("panel") or {}
    path = args.panel or (cfg.resolve(sec["path"]) if "path" in sec else None)
    if path is None:
        raise ConfigError("a panel is required: --panel or panel.path")
    treated = getattr(args, "treated", None) or sec.get("treated")
    period = getattr(args, "treat_period", None)
    period = period if period is not None else sec.get("treatment_period")
    if need_treated and (treated is None or period is None):
        raise ConfigError("--treated and --treat-period (or panel.treated/treatment_period) are required")
    return dict(path=str(path), sha256=file_sha256(path), treated=treated,
                treatment_period=None if period is None else int(period))


def _load(inputs) -> object:
    return load_panel(inputs["path"], inputs["treated"], inputs["treatment_period"])


def _kind(method: str, constraints: str | None) -> EstimatorKind:
    if constraints is None:
        return EstimatorKind.parse(method)
    if EstimatorKind.parse(method).weight_constraints is None and not method.startswith("custom"):
        raise EstimatorError(f"--constraints applies to sc-type methods, not {method!r}")
    return EstimatorKind.custom(ConstraintSet.parse(constraints))


# -- fit ---------------------------------------------------------------------

def fit_outputs(panel, report) -> dict:
    """Text of weights.csv, effects.csv and summary.json for a fit."""
    w_rows = ["unit,weight"] + [f"{u},{_g(w)}" for u, w in zip(panel.unit_labels[1:], report.weights)]
    e_rows = ["period,effect"] + [f"{int(p)},{_g(v)}" for p, v in
                                  zip(report.effects.period_labels, report.effects.values)]
    summary = dict(method=report.kind.name, treated=panel.unit_labels[0],
                   treatment_period=panel.treatment_period, t0=panel.t0,
                   pre_rmspe=report.pre_rmspe, intercept=report.intercept,
                   weights_sum=float(np.sum(report.weights)) if report.weights.size else None,
                   diagnostics=report.diagnostics)
    return {"weights.csv": "\n".join(w_rows) + "\n", "effects.csv": "\n".join(e_rows) + "\n",
            "summary.json": _dump(summary)}


def cmd_fit(args) -> int:
    cfg = _config(args)
    inputs = _panel_inputs(args, cfg)
    kind = _kind(args.method, args.constraints)
    panel = _load(inputs)
    report = estimate(panel, kind, num_factors=args.num_factors)
    if not np.all(np.isfinite(report.effects.values)):
        raise NumericFailure("non-finite effect estimates")
    out = _outputs(args, cfg)
    for name, text in fit_outputs(panel, report).items():
        out.write(name, text)
    effective = dict(panel=inputs, method=kind.name, num_factors=args.num_factors)
    out.manifest("fit", effective, None)
    return EXIT_OK


# -- simulate ----------------------------------------------------------------

def _dgp(cfg: RunConfig) -> FactorDGP:
    sec = cfg.section("dgp")
    return FactorDGP() if sec is None else FactorDGP.from_dict(sec)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    dgp = _dgp(cfg)
    seed = args.seed if args.seed is not None else 0
    stream = args.t0 * STREAM_STRIDE + args.rep
    panel = simulate(dgp, args.t0, args.t1, SimSeed(seed, stream))
    out = _outputs(args, cfg)
    buf = io.StringIO()
    save_panel(panel, buf)
    out.write("panel.csv", buf.getvalue())
    effective = dict(dgp=dgp.to_dict(), t0=args.t0, t1=args.t1, rep=args.rep)
    out.manifest("simulate", effective, seed)
    return EXIT_OK


# -- mc ----------------------------------------------------------------------

def mc_config(args, cfg: RunConfig) -> McConfig:
    sec = cfg.section("mc") or {}
    if "dgp" not in sec and cfg.section("dgp") is not None:
        sec["dgp"] = cfg.section("dgp")
    if args.reps is not None:
        sec["reps"] = args.reps
    if args.seed is not None:
        sec["base_seed"] = args.seed
    return McConfig.from_dict(sec)


def cmd_mc(args) -> int:
    cfg = _config(args)
    config = mc_config(args, cfg)
    summary = run_mc(config, workers=args.workers)
    out = _outputs(args, cfg)
    out.write("mc.csv", summary.to_csv(), "csv")
    out.write("mc.json", summary.to_json(), "json")
    out.manifest("mc", config.to_dict(), config.base_seed)
    finite = [c for c in summary.cells if c.t0 != "inf"]
    if finite and all(c.reps == 0 for c in finite):
        raise NumericFailure("every Monte Carlo cell failed; see mc.csv")
    return EXIT_OK


# -- asymptotics -------------------------------------------------------------

def asymptotics_report(spec: LimitSpec, dgp: FactorDGP | None = None) -> dict:
    theta0 = theta = None
    if dgp is not None and dgp.R > 0:
        _, _, theta0, theta = loading_matrix(dgp)
    rows = {}
    for name, cs in (("sc", ConstraintSet.sc()), ("sc_demeaned", ConstraintSet.demeaned())):
        res = limit_weights(spec, cs, theta0, theta)
        rows[name] = res
    did = did_limit(spec)
    if theta is not None and np.max(np.abs(theta.T @ did.weights - theta0)) > 1e-12:
        did.asymptotic_variance = math.inf
    rows["did"] = did
    out = {}
    for name, res in rows.items():
        entry = dict(weights=res.weights, reconstructed_loadings=res.reconstructed_loadings,
                     asymptotic_bias=res.asymptotic_bias, gamma_variance=res.asymptotic_variance,
                     se=math.sqrt(res.asymptotic_variance), in_phi=res.in_phi)
        if dgp is not None:
            entry["mu_hat1"], entry["theta_hat1"] = misallocation(res.weights, dgp)
        out[name] = entry
    doc = dict(estimators=out)
    if dgp is not None and dgp.hetero is None:
        gam = {}
        if dgp.K == 2 and dgp.J % 2 == 0:
            gam["gamma_two_groups"] = gamma_two_groups(dgp.sigma2, dgp.J)
        if dgp.J >= 4 and dgp.J % 2 == 0 and dgp.K == dgp.J // 2:
            gam["gamma_many_groups"] = gamma_many_groups(dgp.sigma2, dgp.J)
        doc["gamma"] = gam
    return doc


def _asymptotics_csv(doc) -> str:
    rows = ["estimator,mu_hat1,asymptotic_bias,gamma_variance,se,in_phi"]
    for name, e in doc["estimators"].items():
        rows.append(",".join([name, _g(e.get("mu_hat1", math.nan)), _g(e["asymptotic_bias"]),
                              _g(e["gamma_variance"]), _g(e["se"]), str(bool(e["in_phi"])).lower()]))
    return "\n".join(rows) + "\n"


def cmd_asymptotics(args) -> int:
    cfg = _config(args)
    limit = cfg.section("limit")
    if limit is not None:
        spec, dgp = LimitSpec.from_dict(limit), None
        effective = dict(limit=spec.to_dict())
    else:
        dgp = _dgp(cfg)
        spec = limit_spec_for(dgp)
        effective = dict(dgp=dgp.to_dict())
    doc = asymptotics_report(spec, dgp)
    out = _outputs(args, cfg)
    out.write("asymptotics.json", _dump(doc), "json")
    out.write("asymptotics.csv", _asymptotics_csv(doc), "csv")
    out.manifest("asymptotics", effective, None)
    return EXIT_OK


# -- placebo -----------------------------------------------------------------

def placebo_config(args, cfg: RunConfig) -> PlaceboConfig:
    sec = cfg.section("placebo") or {}
    if args.window:
        try:
            first, last = (int(x) for x in args.window.split("-"))
        except ValueError:
            raise PlaceboError(f"--window must look like 1980-1988, got {args.window!r}") from None
        sec["window"] = [first, last]
    if args.methods:
        sec["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.num_factors is not None:
        sec["num_factors"] = args.num_factors
    return PlaceboConfig.from_dict(sec)


def cmd_placebo(args) -> int:
    cfg = _config(args)
    config = placebo_config(args, cfg)
    inputs = _panel_inputs(args, cfg, need_treated=False)
    with open(inputs["path"], encoding="utf-8") as fh:
        fh.readline()
        first = fh.readline().split(",")[0].strip()
    if not first:
        raise PanelError("panel CSV has no data rows", row=2)
    panel = load_panel(inputs["path"], first, config.window[1])
    report = run_placebo(panel, config, workers=args.workers)
    out = _outputs(args, cfg)
    out.write("placebo_rmse.csv", report.to_rmse_csv(), "csv")
    out.write("placebo_detail.csv", report.to_detail_csv(), "csv")
    names = [m.name for m in config.methods]
    if len(names) >= 2:
        out.write("placebo_scatter.svg", placebo_scatter(report, names[0], names[1]), "svg")
    effective = dict(panel=dict(path=inputs["path"], sha256=inputs["sha256"]), placebo=config.to_dict())
    out.manifest("placebo", effective, None)
    return EXIT_OK


# -- detrend -----------------------------------------------------------------

def detrend_outputs(panel, kind: EstimatorKind) -> dict:
    """Transformed panel plus the before/after treated-vs-synthetic SVG."""
    tr = detrend_by_control_mean(panel)
    panels = []
    for title, p in (("Original", panel), ("De-trended", tr)):
        rep = estimate(p, kind)
        synth = rep.weights @ p.controls + rep.intercept
        marker = float(p.period_labels[p.t0]) - 0.5
        panels.append((title, p.period_labels, {"treated": p.treated, "synthetic": synth}, marker))
    buf = io.StringIO()
    save_panel(tr, buf)
    return {"detrended.csv": buf.getvalue(), "detrend.svg": svg.line_panels(panels)}


def cmd_detrend(args) -> int:
    cfg = _config(args)
    inputs = _panel_inputs(args, cfg)
    kind = EstimatorKind.parse(args.method)
    panel = _load(inputs)
    files = detrend_outputs(panel, kind)
    out = _outputs(args, cfg)
    out.write("detrended.csv", files["detrended.csv"], "csv")
    out.write("detrend.svg", files["detrend.svg"], "svg")
    out.manifest("detrend", dict(panel=inputs, method=kind.name), None)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _common(p, workers=False):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--reps", type=int, help="replications")
    if workers:
        p.add_argument("--workers", type=int, help="worker processes (default: SYNCON_WORKERS or 1)")


def _panel_args(p, treated=True):
    p.add_argument("--panel", help="long CSV with header unit,period,outcome")
    if treated:
        p.add_argument("--treated", help="treated unit label")
        p.add_argument("--treat-period", type=int, dest="treat_period", help="first treated period")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="syncon", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"syncon {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one estimator on a panel")
    _panel_args(p)
    p.add_argument("--method", default="sc", help="sc, sc_demeaned, did, sc_iv, sc_mean_predictor, ife")
    p.add_argument("--constraints", help="comma list of nonneg,sum1,intercept (sc-type methods)")
    p.add_argument("--num-factors", type=int, dest="num_factors", help="factors for ife")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="draw one panel from a factor DGP")
    p.add_argument("--t0", type=int, default=20)
    p.add_argument("--t1", type=int, default=1)
    p.add_argument("--rep", type=int, default=0, help="replication index (same streams as mc)")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mc", help="Monte Carlo table")
    _common(p, workers=True)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("asymptotics", help="large-T0 weights, bias and variance")
    _common(p)
    p.set_defaults(func=cmd_asymptotics)

    p = sub.add_parser("placebo", help="one-step-ahead placebo RMSE")
    _panel_args(p, treated=False)
    p.add_argument("--window", help="inclusive period range, e.g. 1980-1988")
    p.add_argument("--methods", help="comma list of estimators")
    p.add_argument("--num-factors", type=int, dest="num_factors")
    _common(p, workers=True)
    p.set_defaults(func=cmd_placebo)

    p = sub.add_parser("detrend", help="control-mean de-trending with a before/after plot")
    _panel_args(p)
    p.add_argument("--method", default="sc")
    _common(p)
    p.set_defaults(func=cmd_detrend)
    return ap


def _fail(kind: str, exc) -> None:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"syncon: error[{kind}]: {msg}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with np.errstate(all="ignore"):
            return args.func(args)
    except (NumericFailure, *NUMERIC_ERRORS) as exc:
        _fail("numeric", exc)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        _fail("input", exc)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
