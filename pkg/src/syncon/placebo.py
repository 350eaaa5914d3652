"""One-step-ahead placebo comparison of estimators on untreated data.

For every unit ``j`` and target period ``t`` in the window, ``j`` plays the
treated unit, the estimator is fit on periods strictly before ``t``, and its
counterfactual for ``t`` is compared with the observed ``y_jt``.  Periods
after ``t`` are dropped before fitting, so they cannot influence the cell.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import svg
from .estimators import DID, SC, SC_DEMEANED, EstimatorError, EstimatorKind, estimate
from .mc import default_workers
from .panel import Panel
from .qp import QpError


class PlaceboError(ValueError):
    pass


@dataclass(frozen=True)
class PlaceboConfig:
    window: tuple
    methods: tuple = (SC, SC_DEMEANED, DID)
    min_train: int = 5
    num_factors: int | None = None

    def __post_init__(self):
        if len(self.window) != 2 or int(self.window[0]) > int(self.window[1]):
            raise PlaceboError("window must be (first, last) with first <= last")
        methods = tuple(m if isinstance(m, EstimatorKind) else EstimatorKind.parse(str(m))
                        for m in self.methods)
        if not methods:
            raise PlaceboError("at least one method is required")
        for m in methods:
            if m.tag == "SC_INFEASIBLE":
                raise PlaceboError("the infeasible estimator needs a known DGP")
            if m.tag == "IFE" and self.num_factors is None:
                raise PlaceboError("IFE needs num_factors")
        if int(self.min_train) < 1:
            raise PlaceboError("min_train must be >= 1")
        object.__setattr__(self, "window", (int(self.window[0]), int(self.window[1])))
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "min_train", int(self.min_train))

    def to_dict(self) -> dict:
        return dict(window=list(self.window), methods=[m.name for m in self.methods],
                    min_train=self.min_train, num_factors=self.num_factors)

    @classmethod
    def from_dict(cls, data: dict) -> PlaceboConfig:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise PlaceboError(f"unknown placebo keys: {sorted(unknown)}")
        d = dict(data)
        if "window" not in d:
            raise PlaceboError("placebo.window is required")
        d["window"] = tuple(d["window"])
        if "methods" in d:
            d["methods"] = tuple(d["methods"])
        return cls(**d)


@dataclass
class PlaceboCell:
    unit: str
    method: str
    year: int
    truth: float
    prediction: float
    error: str = ""

    @property
    def residual(self) -> float:
        return self.truth - self.prediction


@dataclass
class PlaceboReport:
    config: PlaceboConfig
    units: tuple
    cells: list = field(default_factory=list)

    @property
    def window_years(self) -> list:
        first, last = self.config.window
        return sorted({c.year for c in self.cells if first <= c.year <= last})

    def rmse(self, unit: str, method) -> float:
        """Root mean squared error over the window (NaN if any cell failed)."""
        name = method.name if isinstance(method, EstimatorKind) else str(method)
        cells = [c for c in self.cells if c.unit == unit and c.method == name]
        if not cells or any(c.error for c in cells):
            return math.nan
        return math.sqrt(sum(c.residual ** 2 for c in cells) / len(cells))

    def rmse_table(self) -> dict:
        return {(u, m.name): self.rmse(u, m) for u in self.units for m in self.config.methods}

    def failures(self) -> list:
        return [c for c in self.cells if c.error]

    def to_rmse_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["unit", "method", "rmse"])
        for (u, m), v in self.rmse_table().items():
            w.writerow([u, m, "" if math.isnan(v) else format(v, ".17g")])
        return buf.getvalue()

    def to_detail_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["unit", "method", "year", "truth", "prediction", "error"])
        for c in self.cells:
            pred = "" if math.isnan(c.prediction) else format(c.prediction, ".17g")
            w.writerow([c.unit, c.method, c.year, format(c.truth, ".17g"), pred, c.error])
        return buf.getvalue()


def _check(panel: Panel, config: PlaceboConfig):
    periods = [int(p) for p in panel.period_labels]
    first, last = config.window
    if first not in periods or last not in periods:
        raise PlaceboError(f"window {first}-{last} is outside the panel's periods "
                           f"{periods[0]}-{periods[-1]}")
    train = periods.index(first)
    if train < config.min_train:
        raise PlaceboError(f"window starts too early: {train} training periods before {first}, "
                           f"min_train is {config.min_train}")


def placebo_cell(panel: Panel, unit: str, year: int, method: EstimatorKind,
                 num_factors: int | None = None) -> PlaceboCell:
    """Fit ``method`` with ``unit`` treated at ``year`` using only earlier periods."""
    periods = [int(p) for p in panel.period_labels]
    k = periods.index(int(year))
    reordered = panel.with_treated(unit)
    sub = Panel(reordered.outcomes[:, : k + 1], k, reordered.period_labels[: k + 1],
                reordered.unit_labels)
    truth = float(sub.treated[k])
    try:
        rep = estimate(sub, method, num_factors=num_factors)
    except (EstimatorError, QpError, ValueError, np.linalg.LinAlgError) as exc:
        return PlaceboCell(unit, method.name, int(year), truth, math.nan, str(exc) or type(exc).__name__)
    return PlaceboCell(unit, method.name, int(year), truth, truth - float(rep.effects.values[0]))


def _unit_cells(panel, config, unit):
    first, last = config.window
    years = [int(p) for p in panel.period_labels if first <= int(p) <= last]
    return [placebo_cell(panel, unit, y, m, config.num_factors) for m in config.methods for y in years]


def run_placebo(panel: Panel, config: PlaceboConfig, workers: int | None = None) -> PlaceboReport:
    """Every (unit, method, year) cell in the window; failures are kept per cell."""
    _check(panel, config)
    units = panel.unit_labels
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1:
        chunks = [_unit_cells(panel, config, u) for u in units]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_unit_cells, panel, config, u) for u in units]
            chunks = [f.result() for f in futures]
    return PlaceboReport(config, tuple(units), [c for chunk in chunks for c in chunk])


def placebo_scatter(report: PlaceboReport, method_x, method_y) -> str:
    """SVG scatter of per-unit RMSE, one method per axis, with the identity line."""
    names = [m.name for m in report.config.methods]
    mx = method_x.name if isinstance(method_x, EstimatorKind) else str(method_x)
    my = method_y.name if isinstance(method_y, EstimatorKind) else str(method_y)
    for m in (mx, my):
        if m not in names:
            raise PlaceboError(f"method {m!r} is not in the report")
    xs = [report.rmse(u, mx) for u in report.units]
    ys = [report.rmse(u, my) for u in report.units]
    return svg.scatter(xs, ys, report.units, f"RMSE {mx}", f"RMSE {my}", "Per-unit placebo RMSE")
