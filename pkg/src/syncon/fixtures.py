"""Synthetic panels shaped like the state cigarette-sales data.

Nothing here is real data.  The shipped CSV is produced by
:func:`smoking_like_panel` with its default seed and can be regenerated with
``python3 scripts/make_fixture.py``.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .panel import Panel, load_panel

FIXTURE_NAME = "smoking_synthetic.csv"
FIXTURE_SEED = 1989
FIRST_YEAR, LAST_YEAR = 1970, 2000
TREATED = "S03"
TREATMENT_YEAR = 1989


def smoking_like_panel(seed: int = FIXTURE_SEED, units: int = 39) -> Panel:
    """Declining common trend, unit levels, two AR(1) factors and noise.

    The last unit sits far below every other unit's level, so no convex
    combination of the others tracks it without an intercept.
    """
    rng = np.random.default_rng(seed)
    years = np.arange(FIRST_YEAR, LAST_YEAR + 1)
    T = years.shape[0]
    trend = 130.0 - 2.2 * (years - FIRST_YEAR) - 0.02 * (years - FIRST_YEAR) ** 2
    factors = np.zeros((2, T))
    for t in range(1, T):
        factors[:, t] = 0.7 * factors[:, t - 1] + rng.normal(0.0, 3.0, size=2)
    level = rng.normal(0.0, 15.0, size=units)
    level[-1] = level[:-1].min() - 40.0
    load = rng.uniform(0.0, 1.0, size=(units, 2))
    noise = rng.normal(0.0, 2.0, size=(units, T))
    y = trend + level[:, None] + load @ factors + noise
    labels = tuple(f"S{k + 1:02d}" for k in range(units))
    t0 = int(np.sum(years < TREATMENT_YEAR))
    return Panel(np.round(y, 6), t0, years, labels).with_treated(TREATED)


def load_fixture(treated: str = TREATED, treatment_year: int = TREATMENT_YEAR) -> Panel:
    """The shipped CSV as a :class:`Panel`."""
    with resources.files("syncon").joinpath("data", FIXTURE_NAME).open("rb") as fh:
        return load_panel(fh, treated, treatment_year)


def fixture_path():
    return resources.files("syncon").joinpath("data", FIXTURE_NAME)
