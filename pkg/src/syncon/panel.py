"""Balanced outcome panels and the pre-estimation transforms."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np


class PanelError(ValueError):
    """Invalid panel data.  ``missing`` lists absent (unit, period) cells."""

    def __init__(self, message: str, missing: list | None = None, row: int | None = None):
        super().__init__(message)
        self.missing = missing or []
        self.row = row


@dataclass(frozen=True)
class Panel:
    """Outcomes for J+1 units over T periods; row 0 is always the treated unit.

    ``t0`` counts the pre-treatment periods.  Arrays are copied and frozen on
    construction, so a panel can be shared freely between threads.
    """

    outcomes: np.ndarray
    t0: int
    period_labels: np.ndarray
    unit_labels: tuple

    def __post_init__(self):
        y = np.array(self.outcomes, dtype=float)
        if y.ndim != 2:
            raise PanelError("outcomes must be a (units x periods) matrix")
        n_units, T = y.shape
        if n_units < 2:
            raise PanelError("need a treated unit and at least one control")
        if not np.all(np.isfinite(y)):
            raise PanelError("outcomes contain missing or non-finite values")
        t0 = int(self.t0)
        if not 1 <= t0 < T:
            raise PanelError(f"t0={t0} must satisfy 1 <= t0 < T={T}")
        periods = np.array(self.period_labels, dtype=np.int64)
        if periods.shape != (T,):
            raise PanelError("one period label per column is required")
        if np.any(np.diff(periods) <= 0):
            raise PanelError("period labels must be strictly increasing")
        units = tuple(str(u) for u in self.unit_labels)
        if len(units) != n_units:
            raise PanelError("one unit label per row is required")
        if len(set(units)) != n_units:
            raise PanelError("unit labels must be unique")
        y.setflags(write=False)
        periods.setflags(write=False)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "t0", t0)
        object.__setattr__(self, "period_labels", periods)
        object.__setattr__(self, "unit_labels", units)

    treated_index = 0

    @property
    def J(self) -> int:
        return self.outcomes.shape[0] - 1

    @property
    def T(self) -> int:
        return self.outcomes.shape[1]

    @property
    def t1(self) -> int:
        return self.T - self.t0

    @property
    def treated(self) -> np.ndarray:
        return self.outcomes[0]

    @property
    def controls(self) -> np.ndarray:
        return self.outcomes[1:]

    @property
    def pre(self) -> np.ndarray:
        return self.outcomes[:, : self.t0]

    @property
    def post(self) -> np.ndarray:
        return self.outcomes[:, self.t0:]

    @property
    def post_labels(self) -> np.ndarray:
        return self.period_labels[self.t0:]

    @property
    def treatment_period(self) -> int:
        return int(self.period_labels[self.t0])

    def replace(self, outcomes=None, t0=None, unit_labels=None, period_labels=None) -> Panel:
        return Panel(
            outcomes=self.outcomes if outcomes is None else outcomes,
            t0=self.t0 if t0 is None else t0,
            period_labels=self.period_labels if period_labels is None else period_labels,
            unit_labels=self.unit_labels if unit_labels is None else unit_labels,
        )

    def with_treated(self, label: str, treatment_period: int | None = None) -> Panel:
        """Same data with ``label`` moved to row 0 (other units keep their order)."""
        if label not in self.unit_labels:
            raise PanelError(f"unknown unit {label!r}")
        i = self.unit_labels.index(label)
        order = [i] + [k for k in range(self.J + 1) if k != i]
        t0 = self.t0 if treatment_period is None else _count_before(self.period_labels, treatment_period)
        return Panel(self.outcomes[order], t0, self.period_labels,
                     tuple(self.unit_labels[k] for k in order))


@dataclass(frozen=True)
class EffectSeries:
    values: np.ndarray
    period_labels: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        p = np.array(self.period_labels, dtype=np.int64)
        if v.shape != p.shape:
            raise ValueError("one effect per post-treatment period")
        v.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "period_labels", p)

    def __len__(self):
        return self.values.shape[0]


def _count_before(periods, treatment_period) -> int:
    return int(np.sum(np.asarray(periods) < int(treatment_period)))


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8"), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8")), True
    if isinstance(source, io.TextIOBase):
        return source, False
    # binary stream
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def load_panel(source, treated: str, treatment_period: int) -> Panel:
    """Read a long CSV with header ``unit,period,outcome``.

    ``source`` may be a path, raw bytes, or a text/binary file object.  The
    treated unit is moved to row 0, periods are sorted, and ``t0`` counts the
    periods strictly before ``treatment_period``.
    """
    fh, close = _open_text(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["unit", "period", "outcome"]:
            raise PanelError("CSV header must be exactly: unit,period,outcome", row=1)
        cells = {}
        units, periods = [], set()
        for rowno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != 3:
                raise PanelError(f"row {rowno}: expected 3 fields, got {len(rec)}", row=rowno)
            unit = rec[0].strip()
            try:
                period = int(rec[1].strip())
            except ValueError:
                raise PanelError(f"row {rowno}: period {rec[1]!r} is not an integer", row=rowno) from None
            try:
                value = float(rec[2].strip())
            except ValueError:
                raise PanelError(f"row {rowno}: outcome {rec[2]!r} is not numeric", row=rowno) from None
            if not np.isfinite(value):
                raise PanelError(f"row {rowno}: outcome must be finite", row=rowno)
            key = (unit, period)
            if key in cells:
                raise PanelError(f"row {rowno}: duplicate cell unit={unit} period={period}", row=rowno)
            cells[key] = value
            if unit not in units:
                units.append(unit)
            periods.add(period)
    finally:
        if close:
            fh.close()

    if not cells:
        raise PanelError("CSV has no data rows")
    treated = str(treated)
    if treated not in units:
        raise PanelError(f"unknown treated unit {treated!r}")
    period_list = sorted(periods)
    missing = [(u, p) for u in units for p in period_list if (u, p) not in cells]
    if missing:
        shown = ", ".join(f"({u}, {p})" for u, p in missing[:10])
        more = "" if len(missing) <= 10 else f" and {len(missing) - 10} more"
        raise PanelError(f"unbalanced panel: missing cells {shown}{more}", missing=missing)
    order = [treated] + [u for u in units if u != treated]
    y = np.array([[cells[(u, p)] for p in period_list] for u in order])
    t0 = _count_before(period_list, treatment_period)
    if not 1 <= t0 < len(period_list):
        raise PanelError(f"treatment period {treatment_period} leaves t0={t0} pre-periods "
                         f"out of {len(period_list)}")
    return Panel(y, t0, np.array(period_list), tuple(order))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_panel(panel: Panel, dest) -> None:
    """Write the long CSV format with 17 significant digits (lossless)."""
    rows = ["unit,period,outcome"]
    for label, series in zip(panel.unit_labels, panel.outcomes):
        for p, v in zip(panel.period_labels, series):
            rows.append(f"{label},{int(p)},{_fmt(v)}")
    _write(dest, "\n".join(rows) + "\n")


def save_wide(panel: Panel, dest) -> None:
    """Wide CSV: a ``period`` column followed by one column per unit."""
    rows = [",".join(["period", *panel.unit_labels])]
    for k, p in enumerate(panel.period_labels):
        rows.append(",".join([str(int(p))] + [_fmt(v) for v in panel.outcomes[:, k]]))
    _write(dest, "\n".join(rows) + "\n")


def _write(dest, text):
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        dest.write(text)


def demean_pre(panel: Panel) -> Panel:
    """Subtract each unit's pre-treatment mean from its whole series."""
    y = panel.outcomes
    return panel.replace(outcomes=y - y[:, : panel.t0].mean(axis=1, keepdims=True))


def detrend_by_control_mean(panel: Panel) -> Panel:
    """Subtract the cross-sectional control average at each period from every unit."""
    y = panel.outcomes
    return panel.replace(outcomes=y - y[1:].mean(axis=0, keepdims=True))


def difference_against_base(panel: Panel, base) -> Panel:
    """Difference every unit against a base control, which is then dropped.

    ``base`` is a unit label, or a row index (>= 1).  Weights fit on the result
    without an adding-up constraint map back to sum-to-one weights on the
    original controls, the base receiving one minus their sum.
    """
    if isinstance(base, (int, np.integer)) and not isinstance(base, bool):
        idx = int(base)
        if not 0 <= idx <= panel.J:
            raise PanelError(f"base index {idx} out of range")
    else:
        if str(base) not in panel.unit_labels:
            raise PanelError(f"base unit {base!r} is not in the panel")
        idx = panel.unit_labels.index(str(base))
    if idx == 0:
        raise PanelError("cannot difference against the treated unit")
    if panel.J < 2:
        raise PanelError("differencing needs at least two controls")
    keep = [k for k in range(panel.J + 1) if k != idx]
    y = panel.outcomes[keep] - panel.outcomes[idx]
    return panel.replace(outcomes=y, unit_labels=tuple(panel.unit_labels[k] for k in keep))
