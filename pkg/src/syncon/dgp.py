"""Linear factor data-generating processes with grouped common factors.

Control ``j`` (1-based) belongs to stationary group ``ceil(j / (J/K))`` and,
when ``R > 0``, to non-stationary group ``ceil(j / (J/R))``.  The treated unit
shares group 1 of both kinds.  Potential outcomes are

    y_jt = delta_t + lambda^k_t + gamma^r_t + fe_j + trend_j * t**degree + eps_jt

with stationary AR(1) ``lambda``, Gaussian random-walk ``gamma`` and i.i.d.
``delta``.  In post-treatment periods ``post_shift`` is added to ``lambda^1``
(selection on the stationary factor) and ``treatment_effect`` to the treated
outcome.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .panel import Panel

# object ids that separate the random streams of a single draw
_DELTA = 0
_LAMBDA = 1_000
_GAMMA = 2_000
_EPS = 3_000


class DgpError(ValueError):
    pass


@dataclass(frozen=True)
class FactorDGP:
    J: int = 20
    K: int = 10
    R: int = 0
    sigma2: float = 1.0
    rho: float = 0.5
    delta_variance: float = 1.0
    post_shift: float = 1.0
    fixed_effects: tuple | None = None
    trend: int | None = None
    trend_loadings: tuple | None = None
    hetero: tuple | None = None
    treatment_effect: float = 0.0

    def __post_init__(self):
        J, K, R = int(self.J), int(self.K), int(self.R)
        if J < 1 or K < 1:
            raise DgpError("J and K must be positive")
        if J % K:
            raise DgpError(f"J={J} is not divisible by K={K}")
        if R < 0 or (R > 0 and J % R):
            raise DgpError(f"J={J} is not divisible by R={R}")
        if self.sigma2 < 0 or self.delta_variance < 0:
            raise DgpError("variances must be non-negative")
        if not abs(self.rho) < 1:
            raise DgpError("|rho| must be < 1")
        for name in ("fixed_effects", "trend_loadings", "hetero"):
            val = getattr(self, name)
            if val is not None:
                arr = tuple(float(v) for v in val)
                if len(arr) != J + 1:
                    raise DgpError(f"{name} needs J+1={J + 1} entries, got {len(arr)}")
                object.__setattr__(self, name, arr)
        if self.hetero is not None and min(self.hetero) < 0:
            raise DgpError("hetero variances must be non-negative")
        if self.trend is not None and int(self.trend) < 0:
            raise DgpError("trend degree must be >= 0")

    @property
    def stationary_groups(self) -> np.ndarray:
        """Group (1-based) of each control."""
        size = self.J // self.K
        return np.arange(self.J) // size + 1

    @property
    def nonstationary_groups(self) -> np.ndarray:
        if self.R == 0:
            return np.ones(self.J, dtype=int)
        size = self.J // self.R
        return np.arange(self.J) // size + 1

    @property
    def variances(self) -> np.ndarray:
        if self.hetero is not None:
            return np.array(self.hetero)
        return np.full(self.J + 1, float(self.sigma2))

    @property
    def has_fixed_effects(self) -> bool:
        return self.fixed_effects is not None and any(v != 0 for v in self.fixed_effects)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("fixed_effects", "trend_loadings", "hetero"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> FactorDGP:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise DgpError(f"unknown dgp keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class SimSeed:
    base: int
    stream: int = 0

    def generator(self, obj: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.base), spawn_key=(int(self.stream), int(obj)))
        return np.random.Generator(np.random.PCG64(ss))


def fixed_effect_pattern(name: str, J: int = 20) -> tuple:
    """Unit fixed effects (treated first) for the three alternative designs.

    ``"A"``: odd controls share the treated unit's unit effect.
    ``"B"``: the first half of the controls do.
    ``"C"``: the second half do, so no simplex weights match the loadings.
    """
    j = np.arange(1, J + 1)
    half = J // 2
    if name.upper() == "A":
        ctrl = (j % 2 == 1).astype(float)
    elif name.upper() == "B":
        ctrl = (j <= half).astype(float)
    elif name.upper() == "C":
        ctrl = (j > half).astype(float)
    else:
        raise DgpError(f"unknown fixed-effect pattern {name!r}")
    return (1.0, *ctrl.tolist())


def hetero_pattern(J: int = 20, low: float = 0.5) -> tuple:
    """Variance 1 for the treated unit and odd controls, ``low`` for even controls."""
    j = np.arange(1, J + 1)
    return (1.0, *np.where(j % 2 == 1, 1.0, low).tolist())


def simulate(dgp: FactorDGP, t0: int, t1: int, seed: SimSeed) -> Panel:
    """Draw one panel with ``t0`` pre- and ``t1`` post-treatment periods."""
    if t0 < 2 or t1 < 1:
        raise DgpError("need t0 >= 2 and t1 >= 1")
    T = t0 + t1
    J = dgp.J

    delta = np.sqrt(dgp.delta_variance) * seed.generator(_DELTA).standard_normal(T)
    innov = np.empty((dgp.K, T))
    for k in range(dgp.K):
        innov[k] = seed.generator(_LAMBDA + k).standard_normal(T)
    lam = kernels.ar1_paths(innov, float(dgp.rho))
    lam[0, t0:] += dgp.post_shift

    sgroup = np.concatenate([[1], dgp.stationary_groups]) - 1
    y = delta[None, :] + lam[sgroup]

    if dgp.R > 0:
        steps = np.empty((dgp.R, T))
        for r in range(dgp.R):
            steps[r] = seed.generator(_GAMMA + r).standard_normal(T)
        gam = kernels.random_walk_paths(steps)
        rgroup = np.concatenate([[1], dgp.nonstationary_groups]) - 1
        y = y + gam[rgroup]

    if dgp.fixed_effects is not None:
        y = y + np.asarray(dgp.fixed_effects)[:, None]
    if dgp.trend is not None:
        load = np.ones(J + 1) if dgp.trend_loadings is None else np.asarray(dgp.trend_loadings)
        t = np.arange(1, T + 1, dtype=float)
        y = y + load[:, None] * t[None, :] ** int(dgp.trend)

    sd = np.sqrt(dgp.variances)
    for j in range(J + 1):
        y[j] += sd[j] * seed.generator(_EPS + j).standard_normal(T)

    y[0, t0:] += dgp.treatment_effect
    labels = tuple(f"u{j:02d}" for j in range(J + 1))
    return Panel(y, t0, np.arange(1, T + 1), labels)


def loading_matrix(dgp: FactorDGP):
    """Exact loadings ``(mu0, mu, theta0, theta)`` implied by the group design.

    ``mu`` (J x F) holds the stationary loadings; when unit fixed effects are
    present a constant factor is prepended whose loadings are the fixed
    effects.  ``theta`` (J x R) holds the random-walk loadings.
    """
    J, K, R = dgp.J, dgp.K, dgp.R
    mu = np.zeros((J, K))
    mu[np.arange(J), dgp.stationary_groups - 1] = 1.0
    mu0 = np.zeros(K)
    mu0[0] = 1.0
    if dgp.has_fixed_effects:
        fe = np.asarray(dgp.fixed_effects)
        mu = np.column_stack([fe[1:], mu])
        mu0 = np.concatenate([[fe[0]], mu0])
    theta = np.zeros((J, R))
    theta0 = np.zeros(R)
    if R > 0:
        theta[np.arange(J), dgp.nonstationary_groups - 1] = 1.0
        theta0[0] = 1.0
    return mu0, mu, theta0, theta
