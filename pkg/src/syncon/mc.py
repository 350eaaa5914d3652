"""Monte Carlo harness: replicate a DGP, fit estimators, aggregate.

Replication ``i`` of the cell with ``t0`` pre-periods draws from
``SimSeed(base_seed, stream=t0 * 10**7 + i)``, so every cell and every
replication has its own random streams.  Per-replication results are kept in
replication order and reduced with numpy's pairwise sums, which makes the
summary independent of how the work was split across processes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .asymptotics import LimitError, did_limit, fixed_weight_limit, limit_spec_for, limit_weights
from .dgp import FactorDGP, SimSeed, loading_matrix, simulate
from .estimators import (DID, SC, SC_DEMEANED, EstimatorError, EstimatorKind, default_num_factors,
                         estimate, infeasible_weights)

STREAM_STRIDE = 10**7
CHUNK = 200
CSV_COLUMNS = ("panel", "t0", "estimator", "mu_hat1", "theta_hat1", "bias", "se", "mc_error",
               "reps", "seed", "fe_hat", "n_failed", "error")


class McError(ValueError):
    pass


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SYNCON_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class McConfig:
    dgp: FactorDGP = field(default_factory=FactorDGP)
    t0_grid: tuple = (20, 50, 100)
    reps: int = 5000
    estimators: tuple = (SC, SC_DEMEANED, DID)
    base_seed: int = 0
    include_asymptotic_row: bool = True
    t1: int = 1
    average_post: bool = False
    num_factors: int | None = None
    panel: str = ""

    def __post_init__(self):
        if int(self.reps) < 1:
            raise McError("reps must be >= 1")
        grid = tuple(int(t) for t in self.t0_grid)
        if not grid or min(grid) < 2:
            raise McError("t0_grid needs entries >= 2")
        if max(grid) >= STREAM_STRIDE or int(self.reps) > STREAM_STRIDE:
            raise McError("t0 and reps must stay below 10**7")
        if int(self.t1) < 1:
            raise McError("t1 must be >= 1")
        ests = tuple(e if isinstance(e, EstimatorKind) else EstimatorKind.parse(str(e))
                     for e in self.estimators)
        if not ests:
            raise McError("at least one estimator is required")
        object.__setattr__(self, "t0_grid", grid)
        object.__setattr__(self, "estimators", ests)
        object.__setattr__(self, "reps", int(self.reps))
        object.__setattr__(self, "t1", int(self.t1))

    @property
    def factors(self) -> int:
        return self.num_factors if self.num_factors is not None else default_num_factors(self.dgp)

    def to_dict(self) -> dict:
        return dict(dgp=self.dgp.to_dict(), t0_grid=list(self.t0_grid), reps=self.reps,
                    estimators=[e.name for e in self.estimators], base_seed=self.base_seed,
                    include_asymptotic_row=self.include_asymptotic_row, t1=self.t1,
                    average_post=self.average_post, num_factors=self.num_factors, panel=self.panel)

    @classmethod
    def from_dict(cls, data: dict) -> McConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise McError(f"unknown mc keys: {sorted(unknown)}")
        d = dict(data)
        if "dgp" in d and isinstance(d["dgp"], dict):
            d["dgp"] = FactorDGP.from_dict(d["dgp"])
        if "t0_grid" in d:
            d["t0_grid"] = tuple(d["t0_grid"])
        if "estimators" in d:
            d["estimators"] = tuple(d["estimators"])
        return cls(**d)


@dataclass
class McCell:
    panel: str
    t0: int | str
    estimator: str
    mu_hat1: float
    theta_hat1: float
    bias: float
    se: float
    mc_error: float
    reps: int
    seed: int
    fe_hat: float = math.nan
    n_failed: int = 0
    error: str = ""

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in CSV_COLUMNS}


@dataclass
class McSummary:
    config: McConfig
    cells: list
    draws: dict = field(default_factory=dict)

    def cell(self, t0, estimator) -> McCell:
        name = estimator.name if isinstance(estimator, EstimatorKind) else str(estimator)
        for c in self.cells:
            if c.t0 == t0 and c.estimator == name:
                return c
        raise KeyError((t0, name))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        show_theta = self.config.dgp.R > 0
        for c in self.cells:
            row = c.as_dict()
            if not show_theta:
                row["theta_hat1"] = None
            w.writerow([_fmt(row[k]) for k in CSV_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        show_theta = self.config.dgp.R > 0
        rows = []
        for c in self.cells:
            row = {k: _json_value(v) for k, v in c.as_dict().items()}
            if not show_theta:
                row["theta_hat1"] = None
            rows.append(row)
        return json.dumps(dict(config=self.config.to_dict(), cells=rows), indent=2, sort_keys=True) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def misallocation(weights, dgp: FactorDGP) -> tuple[float, float]:
    """Weight mass on controls sharing the treated unit's stationary / random-walk group."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (dgp.J,):
        raise McError(f"expected {dgp.J} weights, got shape {w.shape}")
    mu_mass = float(w[dgp.stationary_groups == 1].sum())
    theta_mass = float(w[dgp.nonstationary_groups == 1].sum()) if dgp.R > 0 else 1.0
    return mu_mass, theta_mass


def _fe_mass(weights, dgp):
    if not dgp.has_fixed_effects or weights.shape[0] != dgp.J:
        return math.nan
    return float(weights @ np.asarray(dgp.fixed_effects[1:]))


def _run_chunk(config: McConfig, t0: int, start: int, stop: int):
    """Fit every estimator on replications ``start..stop-1`` of one cell."""
    n, k = stop - start, len(config.estimators)
    eff = np.full((n, k), np.nan)
    mu = np.full((n, k), np.nan)
    theta = np.full((n, k), np.nan)
    fe = np.full((n, k), np.nan)
    errors = [""] * k
    dgp = config.dgp
    for i in range(n):
        panel = simulate(dgp, t0, config.t1, SimSeed(config.base_seed, t0 * STREAM_STRIDE + start + i))
        for j, kind in enumerate(config.estimators):
            try:
                rep = estimate(panel, kind, dgp=dgp, num_factors=config.factors)
            except (EstimatorError, LimitError, ValueError, np.linalg.LinAlgError) as exc:
                if not errors[j]:
                    errors[j] = f"rep {start + i}: {exc}"
                continue
            values = rep.effects.values
            eff[i, j] = values.mean() if config.average_post else values[0]
            if rep.weights.shape[0] == dgp.J:
                mu[i, j], theta[i, j] = misallocation(rep.weights, dgp)
                fe[i, j] = _fe_mass(rep.weights, dgp)
    return eff, mu, theta, fe, errors


def run_mc(config: McConfig, workers: int | None = None) -> McSummary:
    """Run every (t0, estimator) cell; failures are recorded per cell."""
    workers = default_workers() if workers is None else max(1, int(workers))
    tasks = [(t0, s, min(s + CHUNK, config.reps)) for t0 in config.t0_grid
             for s in range(0, config.reps, CHUNK)]
    if workers == 1 or len(tasks) == 1:
        results = [_run_chunk(config, *t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, config, *t) for t in tasks]
            results = [f.result() for f in futures]

    truth = float(config.dgp.treatment_effect)
    cells, draws = [], {}
    for t0 in config.t0_grid:
        parts = [r for t, r in zip(tasks, results) if t[0] == t0]
        eff = np.concatenate([p[0] for p in parts])
        mu = np.concatenate([p[1] for p in parts])
        theta = np.concatenate([p[2] for p in parts])
        fe = np.concatenate([p[3] for p in parts])
        for j, kind in enumerate(config.estimators):
            ok = np.isfinite(eff[:, j])
            vals = eff[ok, j]
            n = int(vals.shape[0])
            errs = [p[4][j] for p in parts if p[4][j]]
            draws[(t0, kind.name)] = vals
            if n == 0:
                cells.append(McCell(config.panel, t0, kind.name, math.nan, math.nan, math.nan, math.nan,
                                    math.nan, 0, config.base_seed, math.nan, config.reps,
                                    errs[0] if errs else "no successful replication"))
                continue
            se = float(np.std(vals, ddof=1)) if n > 1 else 0.0
            cells.append(McCell(
                panel=config.panel, t0=t0, estimator=kind.name,
                mu_hat1=_mean(mu[ok, j]), theta_hat1=_mean(theta[ok, j]),
                bias=float(np.mean(vals)) - truth, se=se, mc_error=se / math.sqrt(n),
                reps=n, seed=config.base_seed, fe_hat=_mean(fe[ok, j]),
                n_failed=config.reps - n, error=errs[0] if errs else ""))
    if config.include_asymptotic_row:
        cells.extend(asymptotic_rows(config))
    return McSummary(config, cells, draws)


def _mean(x) -> float:
    x = x[np.isfinite(x)]
    return float(np.mean(x)) if x.size else math.nan


def asymptotic_rows(config: McConfig) -> list:
    """Analytic T0 = infinity cells for the estimators that have a closed limit."""
    dgp = config.dgp
    rows = []
    try:
        spec = limit_spec_for(dgp)
    except LimitError as exc:
        return [_limit_failure(config, kind, str(exc)) for kind in config.estimators]
    _, _, theta0, theta = loading_matrix(dgp)
    nonstat = dgp.R > 0
    for kind in config.estimators:
        try:
            if kind.tag == "DID":
                res = did_limit(spec)
                weights = res.weights
                var = res.asymptotic_variance
                if nonstat and np.max(np.abs(theta.T @ weights - theta0)) > 1e-12:
                    var = math.inf
            elif kind.tag == "SC_INFEASIBLE":
                weights = infeasible_weights(dgp)
                res = fixed_weight_limit(spec, weights, intercept=False)
                var = res.asymptotic_variance
            elif kind.weight_constraints is not None:
                if nonstat:
                    res = limit_weights(spec, kind.weight_constraints, theta0, theta)
                else:
                    res = limit_weights(spec, kind.weight_constraints)
                weights = res.weights
                var = res.asymptotic_variance
            else:
                raise LimitError(f"no analytic limit for {kind.name}")
        except (LimitError, EstimatorError) as exc:
            rows.append(_limit_failure(config, kind, str(exc)))
            continue
        mu_mass, theta_mass = misallocation(weights, dgp)
        rows.append(McCell(config.panel, "inf", kind.name, mu_mass, theta_mass, res.asymptotic_bias,
                           math.sqrt(var), 0.0, 0, config.base_seed, _fe_mass(weights, dgp)))
    return rows


def _limit_failure(config, kind, message):
    return McCell(config.panel, "inf", kind.name, math.nan, math.nan, math.nan, math.nan, math.nan,
                  0, config.base_seed, math.nan, 0, message)


def finite_t_comparison(config: McConfig, summary: McSummary | None = None,
                        workers: int | None = None) -> dict:
    """Same-group weight mass by T0, ending with the analytic limit.

    Returns ``{estimator: {"t0": [...], "mu_hat1": [...], "monotone": bool,
    "below_limit": bool}}``; ``monotone`` checks that the mass does not
    decrease along the grid (within one MC standard error).
    """
    if len(config.t0_grid) < 2:
        raise McError("finite_t_comparison needs at least two t0 values")
    if summary is None:
        cfg = config if config.include_asymptotic_row else McConfig.from_dict(
            {**config.to_dict(), "include_asymptotic_row": True})
        summary = run_mc(cfg, workers=workers)
    out = {}
    for kind in config.estimators:
        finite = [summary.cell(t0, kind) for t0 in config.t0_grid]
        try:
            limit = summary.cell("inf", kind)
        except KeyError:
            limit = None
        t0s = list(config.t0_grid) + (["inf"] if limit is not None else [])
        values = [c.mu_hat1 for c in finite] + ([limit.mu_hat1] if limit is not None else [])
        mass_se = [_mass_se(summary, c) for c in finite]
        monotone = all(values[i + 1] >= values[i] - mass_se[i] for i in range(len(finite) - 1))
        below = limit is not None and all(c.mu_hat1 <= limit.mu_hat1 + s for c, s in zip(finite, mass_se))
        out[kind.name] = dict(t0=t0s, mu_hat1=values, monotone=bool(monotone), below_limit=bool(below))
    return out


def _mass_se(summary, cell):
    # the weight mass is bounded in [0, 1]; use a conservative sd bound
    return 0.5 / math.sqrt(max(cell.reps, 1))
