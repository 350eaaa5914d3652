"""Treatment-effect estimators built on the weight problem.

Every estimator returns an :class:`EstimateReport` whose effects are
``y0t - counterfactual_t`` for the post-treatment periods.  Weights are
always fit on pre-treatment data only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dgp import FactorDGP, loading_matrix
from .panel import EffectSeries, Panel
from .qp import ConstraintSet, QpError, QpProblem, QpSolution, _solve_problem, fit_weights, solve_qp

IV_RIDGE = 1e-8
FLAT_DIAMETER = 0.1
FLAT_SLACK = 0.01
IFE_MAX_ITER = 10_000
IFE_TOL = 1e-9


class EstimatorError(ValueError):
    pass


_TAGS = ("SC", "SC_DEMEANED", "DID", "SC_INFEASIBLE", "SC_MEAN_PREDICTOR", "SC_IV", "IFE", "CUSTOM")


@dataclass(frozen=True)
class EstimatorKind:
    """Estimator tag; ``CUSTOM`` carries its constraint set.

    ``custom(ConstraintSet.sc())`` normalizes to ``SC`` and
    ``custom(ConstraintSet.demeaned())`` to ``SC_DEMEANED``.
    """

    tag: str
    constraints: ConstraintSet | None = None

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise EstimatorError(f"unknown estimator {self.tag!r}")
        if (self.tag == "CUSTOM") != (self.constraints is not None):
            raise EstimatorError("only CUSTOM carries a constraint set")

    @classmethod
    def custom(cls, constraints: ConstraintSet) -> EstimatorKind:
        if constraints == ConstraintSet.sc():
            return SC
        if constraints == ConstraintSet.demeaned():
            return SC_DEMEANED
        return cls("CUSTOM", constraints)

    @property
    def weight_constraints(self) -> ConstraintSet | None:
        """Constraint set of the pre-period fit, for the QP-based kinds."""
        if self.tag == "SC":
            return ConstraintSet.sc()
        if self.tag == "SC_DEMEANED":
            return ConstraintSet.demeaned()
        return self.constraints

    @property
    def name(self) -> str:
        if self.tag == "CUSTOM":
            return "custom:" + self.constraints.to_text()
        return self.tag.lower()

    @classmethod
    def parse(cls, text: str) -> EstimatorKind:
        """Inverse of :attr:`name`; also accepts ``demeaned`` and ``iv``."""
        t = text.strip().lower()
        if t.startswith("custom:"):
            return cls.custom(ConstraintSet.parse(t[len("custom:"):]))
        aliases = {"demeaned": "SC_DEMEANED", "sc_demeaned": "SC_DEMEANED", "iv": "SC_IV",
                   "infeasible": "SC_INFEASIBLE", "mean_predictor": "SC_MEAN_PREDICTOR"}
        tag = aliases.get(t, t.upper())
        if tag not in _TAGS or tag == "CUSTOM":
            raise EstimatorError(f"unknown estimator {text!r}")
        return cls(tag)

    def __str__(self):
        return self.name


SC = EstimatorKind("SC")
SC_DEMEANED = EstimatorKind("SC_DEMEANED")
DID = EstimatorKind("DID")
SC_INFEASIBLE = EstimatorKind("SC_INFEASIBLE")
SC_MEAN_PREDICTOR = EstimatorKind("SC_MEAN_PREDICTOR")
SC_IV = EstimatorKind("SC_IV")
IFE = EstimatorKind("IFE")


@dataclass
class EstimateReport:
    kind: EstimatorKind
    weights: np.ndarray
    intercept: float
    effects: EffectSeries
    pre_rmspe: float
    diagnostics: dict = field(default_factory=dict)


def weighted_effects(panel: Panel, weights, intercept: float = 0.0) -> tuple[EffectSeries, float]:
    """Post-period effects and pre-period RMSPE for fixed weights and intercept."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (panel.J,):
        raise EstimatorError(f"expected {panel.J} weights, got shape {w.shape}")
    gap = panel.treated - w @ panel.controls - intercept
    rmspe = float(np.sqrt(np.mean(gap[: panel.t0] ** 2)))
    return EffectSeries(gap[panel.t0:], panel.post_labels), rmspe


def _report(kind, panel, w, intercept, diagnostics):
    effects, rmspe = weighted_effects(panel, w, intercept)
    return EstimateReport(kind, np.asarray(w, dtype=float), float(intercept), effects, rmspe, diagnostics)


def estimate(panel: Panel, kind: EstimatorKind, *, dgp: FactorDGP | None = None,
             num_factors: int | None = None) -> EstimateReport:
    """Fit ``kind`` on ``panel``.

    ``dgp`` is required for ``SC_INFEASIBLE``; ``num_factors`` for ``IFE``.
    """
    if not isinstance(kind, EstimatorKind):
        raise EstimatorError(f"unknown estimator {kind!r}")
    if kind.tag == "DID":
        diff = panel.treated - panel.controls.mean(axis=0)
        w = np.full(panel.J, 1.0 / panel.J)
        return _report(kind, panel, w, float(diff[: panel.t0].mean()), {})
    if kind.tag == "IFE":
        if num_factors is None:
            raise EstimatorError("IFE needs num_factors")
        return ife_estimate(panel, num_factors)
    if kind.tag == "SC_INFEASIBLE":
        if dgp is None:
            raise EstimatorError("SC_INFEASIBLE needs the dgp")
        return _report(kind, panel, infeasible_weights(dgp), 0.0, {})
    if kind.tag == "SC_MEAN_PREDICTOR":
        sol = mean_predictor_weights(panel)
    elif kind.tag == "SC_IV":
        sol = iv_sc_weights(panel)
    else:
        sol = fit_weights(panel, kind.weight_constraints)
    diag = dict(sol.diagnostics)
    diag["kkt_residual"] = sol.kkt_residual
    return _report(kind, panel, sol.weights, sol.intercept, diag)


# -- infeasible oracle ------------------------------------------------------

def min_norm_phi(mu0, mu, tol: float = 1e-8) -> np.ndarray:
    """Minimal-norm simplex weights with ``mu' w = mu0`` (``mu`` is J x F)."""
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    mu0 = np.atleast_1d(np.asarray(mu0, dtype=float))
    J = mu.shape[0]
    problem = QpProblem(gram=np.eye(J), linear=np.zeros(J), constant=0.0,
                        constraints=ConstraintSet.sc())
    try:
        sol = _solve_problem(problem, 1e-10, extra_A=mu.T, extra_b=mu0)
    except QpError:
        raise EstimatorError("no exact-loading weights exist") from None
    w = sol.weights
    if np.max(np.abs(mu.T @ w - mu0)) > tol or abs(w.sum() - 1.0) > tol or w.min() < -tol:
        raise EstimatorError("no exact-loading weights exist")
    return w


def infeasible_weights(dgp: FactorDGP) -> np.ndarray:
    """Oracle weights: the minimal-norm element of the exact-loading set."""
    mu0, mu, theta0, theta = loading_matrix(dgp)
    return min_norm_phi(np.concatenate([mu0, theta0]), np.hstack([mu, theta]))


# -- mean pre-treatment outcome as the only predictor ----------------------

def mean_predictor_weights(panel: Panel) -> QpSolution:
    """Simplex weights matching the pre-period mean only (minimal-norm pick)."""
    m = panel.controls[:, : panel.t0].mean(axis=1)
    m0 = float(panel.treated[: panel.t0].mean())
    problem = QpProblem(gram=np.outer(m, m), linear=m * m0, constant=m0 * m0,
                        constraints=ConstraintSet.sc())
    sol = solve_qp(problem)
    sol.diagnostics["underdetermined"] = bool(sol.diagnostics.get("nonunique", False))
    return sol


# -- IV-like GMM with lagged control outcomes as instruments ----------------

def iv_moments(panel: Panel):
    """Linear moment system ``g(v) = b - A v`` in the free weights ``v``.

    ``v`` holds the first J-1 weights; the last is one minus their sum.
    Returns ``(b, A, Z, u0, X)`` with per-period instruments ``Z`` and the
    differenced outcomes used to build the moment covariance.
    """
    pre = panel.pre
    Z = pre[1:, :-1].T                      # lagged controls, (n x J)
    yt = pre[:, 1:]
    u0 = yt[0] - yt[-1]                     # y0t - yJt
    X = (yt[1:-1] - yt[-1]).T               # (n x J-1)
    n = Z.shape[0]
    b = Z.T @ u0 / n
    A = Z.T @ X / n
    return b, A, Z, u0, X


def iv_criterion(panel: Panel, weights, weighting=None) -> float:
    """GMM criterion ``g(w)' W g(w)`` (identity weighting by default)."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (panel.J,):
        raise EstimatorError(f"expected {panel.J} weights")
    pre = panel.pre
    g = pre[1:, :-1] @ (pre[0, 1:] - w @ pre[1:, 1:]) / (panel.t0 - 1)
    W = np.eye(panel.J) if weighting is None else weighting
    return float(g @ W @ g)


def _expand(v):
    return np.concatenate([v, [1.0 - v.sum()]])


def iv_sc_weights(panel: Panel) -> QpSolution:
    """Two-step GMM weights under adding-up, instruments = lagged controls.

    The moments only pin down the exact-loading set, which is usually not a
    point.  The reported weights minimize ``n Q(w) + log(n) |w|^2``: the
    penalty vanishes relative to ``n Q`` but still selects the minimal-norm
    element of the identified set in the limit.  The unpenalized two-step
    minimizer is kept in ``diagnostics["gmm_point"]``.
    """
    J = panel.J
    if panel.t0 < J + 2:
        raise EstimatorError(f"IV needs t0 >= J + 2 = {J + 2}, got {panel.t0}")
    if J < 2:
        raise EstimatorError("IV needs at least two controls")
    b, A, Z, u0, X = iv_moments(panel)
    n = Z.shape[0]
    v1 = np.linalg.lstsq(A, b, rcond=None)[0]
    resid = u0 - X @ v1
    h = Z * resid[:, None]
    S = np.cov(h, rowvar=False, bias=True).reshape(J, J) + IV_RIDGE * np.eye(J)
    if np.linalg.cond(S) > 1e14:
        raise EstimatorError("moment covariance is singular even after the ridge")
    W = np.linalg.inv(S)
    W = 0.5 * (W + W.T)
    M = A.T @ W @ A
    rhs = A.T @ W @ b
    v2 = np.linalg.lstsq(M, rhs, rcond=None)[0]
    g = b - A @ v2
    qmin = float(g @ W @ g)

    D = np.vstack([np.eye(J - 1), -np.ones((1, J - 1))])
    last = np.zeros(J)
    last[-1] = 1.0
    kappa = np.log(n)
    H = n * M + kappa * D.T @ D
    v = np.linalg.solve(H, n * rhs - kappa * D.T @ last)

    # diameter (in w-space) of {Q <= (1 + slack) Qmin}
    ev, vec = np.linalg.eigh(M)
    lmax = max(float(ev[-1]), 1e-300)
    if ev[0] <= 1e-12 * lmax:
        diameter = np.inf
    else:
        Mh = vec @ np.diag(ev ** -0.5) @ vec.T
        diameter = 2.0 * float(np.sqrt(max(FLAT_SLACK * qmin, 0.0) * np.linalg.eigvalsh(Mh @ D.T @ D @ Mh)[-1]))
    gv = b - A @ v
    diagnostics = dict(
        j_statistic=n * qmin,
        flat_criterion=bool(diameter > FLAT_DIAMETER),
        criterion_diameter=diameter,
        gmm_point=_expand(v2),
        first_step=_expand(v1),
        penalty=kappa,
        weighting=W,
    )
    grad = H @ v - (n * rhs - kappa * D.T @ last)
    return QpSolution(weights=_expand(v), intercept=0.0, objective=float(gv @ W @ gv),
                      kkt_residual=float(np.max(np.abs(grad))) / n, iterations=2, diagnostics=diagnostics)


# -- interactive fixed effects ----------------------------------------------

def _pca_start(y, t0, r):
    """Pre-period principal components with post factors from the controls."""
    pre = y[:, :t0]
    m = pre.mean(axis=1)
    U, S, _ = np.linalg.svd(pre - m[:, None], full_matrices=False)
    L = U[:, :r] * S[:r] / np.sqrt(t0)
    Lc = L[1:]
    if np.linalg.matrix_rank(Lc) < r:
        raise EstimatorError("control loadings are rank deficient")
    F = np.linalg.lstsq(Lc, y[1:, t0:] - m[1:, None], rcond=None)[0]
    return m[0] + L[0] @ F


def ife_estimate(panel: Panel, num_factors: int, max_iter: int = IFE_MAX_ITER,
                 tol: float = IFE_TOL) -> EstimateReport:
    """Interactive fixed effects counterfactual with a known number of factors.

    The model ``y_it = a_i + l_i'f_t + e_it`` is fit by least squares on every
    observed cell, treating the treated unit's post-treatment outcomes as
    missing.  The counterfactual is the fitted value in those cells.
    Iterations start from principal components of the pre-period panel.
    """
    r = int(num_factors)
    N, T = panel.outcomes.shape
    if r < 1:
        raise EstimatorError("num_factors must be >= 1")
    if r > min(panel.J, T) - 1 or r > panel.t0 - 1:
        raise EstimatorError(f"num_factors={r} exceeds min(J, T) - 1 = {min(panel.J, T) - 1} "
                             f"or t0 - 1 = {panel.t0 - 1}")
    y = np.ascontiguousarray(panel.outcomes)
    start = _pca_start(y, panel.t0, r)
    fit0, iters, change = kernels.ife_em(y, panel.t0, r, np.ascontiguousarray(start), max_iter, tol)
    if not np.all(np.isfinite(fit0)):
        raise EstimatorError("factor iterations diverged")
    gap = panel.treated - fit0
    effects = EffectSeries(gap[panel.t0:], panel.post_labels)
    rmspe = float(np.sqrt(np.mean(gap[: panel.t0] ** 2)))
    diagnostics = dict(iterations=int(iters), converged=bool(change < tol), last_change=float(change),
                       num_factors=r)
    return EstimateReport(IFE, np.zeros(0), float("nan"), effects, rmspe, diagnostics)


def default_num_factors(dgp: FactorDGP) -> int:
    """Factors identified from the panel: the common shock is absorbed by the groups."""
    return dgp.K + dgp.R + (1 if dgp.trend is not None else 0)
