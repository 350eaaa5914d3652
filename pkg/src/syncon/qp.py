"""Least-squares weight problems under the synthetic-control constraint sets.

Every estimator and every large-sample calculation in the package reduces to

    minimize  constant - 2 linear'w + w' gram w

over one of the sets generated by non-negativity, adding-up, and a free
intercept.  :func:`solve_qp` handles all eight combinations; singular grams
are resolved by returning the minimal-norm minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .panel import Panel

KKT_TOL = 1e-10
FEAS_TOL = 1e-10
PSD_TOL = 1e-8
# eigenvalues below this fraction of the largest one are treated as zero
RANK_TOL = 1e-9


class QpError(ValueError):
    """Raised for malformed or numerically unsolvable weight problems."""


@dataclass(frozen=True)
class ConstraintSet:
    nonneg: bool = True
    sum_to_one: bool = True
    intercept: bool = False

    @classmethod
    def sc(cls) -> ConstraintSet:
        return cls(True, True, False)

    @classmethod
    def demeaned(cls) -> ConstraintSet:
        return cls(True, True, True)

    @classmethod
    def hsiao(cls) -> ConstraintSet:
        return cls(False, False, True)

    @classmethod
    def parse(cls, text: str) -> ConstraintSet:
        """Parse a comma list such as ``"nonneg,sum1,intercept"``.

        An empty string or ``"none"`` disables everything.
        """
        names = {"nonneg": "nonneg", "sum1": "sum_to_one", "sum_to_one": "sum_to_one",
                 "intercept": "intercept"}
        flags = dict(nonneg=False, sum_to_one=False, intercept=False)
        for tok in (t.strip().lower() for t in text.split(",")):
            if tok in ("", "none"):
                continue
            if tok not in names:
                raise ValueError(f"unknown constraint {tok!r}; expected nonneg, sum1, intercept")
            flags[names[tok]] = True
        return cls(**flags)

    def to_text(self) -> str:
        parts = [name for name, on in (("nonneg", self.nonneg), ("sum1", self.sum_to_one),
                                       ("intercept", self.intercept)) if on]
        return ",".join(parts) or "none"


@dataclass
class QpProblem:
    """Quadratic weight problem.

    ``mean_treated``/``mean_controls`` are the first moments that go with
    ``gram``/``linear``; they are needed only to profile out an intercept.
    """

    gram: np.ndarray
    linear: np.ndarray
    constant: float = 0.0
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    mean_treated: float | None = None
    mean_controls: np.ndarray | None = None

    @property
    def size(self) -> int:
        return int(np.asarray(self.linear).shape[0])

    def objective(self, w) -> float:
        """Criterion value at ``w`` with the intercept (if any) profiled out."""
        G, c, k = _centered(self)
        w = np.asarray(w, dtype=float)
        return float(k - 2.0 * c @ w + w @ G @ w)


@dataclass
class QpSolution:
    weights: np.ndarray
    intercept: float
    objective: float
    kkt_residual: float
    iterations: int
    diagnostics: dict = field(default_factory=dict)


def _centered(problem: QpProblem):
    G = np.asarray(problem.gram, dtype=float)
    c = np.asarray(problem.linear, dtype=float)
    k = float(problem.constant)
    if problem.constraints.intercept:
        if problem.mean_controls is None or problem.mean_treated is None:
            raise QpError("intercept requires mean_treated and mean_controls")
        m = np.asarray(problem.mean_controls, dtype=float)
        m0 = float(problem.mean_treated)
        G = G - np.outer(m, m)
        c = c - m * m0
        k = k - m0 * m0
    return G, c, k


def _validate(problem: QpProblem):
    G = np.asarray(problem.gram, dtype=float)
    c = np.asarray(problem.linear, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise QpError(f"gram must be square, got shape {G.shape}")
    if c.ndim != 1 or c.shape[0] != G.shape[0]:
        raise QpError(f"linear has length {c.shape[0] if c.ndim else 0}, gram is {G.shape[0]}x{G.shape[1]}")
    if G.shape[0] == 0:
        raise QpError("empty problem")
    if problem.mean_controls is not None and np.asarray(problem.mean_controls).shape != c.shape:
        raise QpError("mean_controls must match the number of weights")
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(c))):
        raise QpError("non-finite entries in the problem")
    if np.max(np.abs(G - G.T)) > PSD_TOL * max(1.0, np.max(np.abs(G))):
        raise QpError("gram is not symmetric")


def _equality_rows(n, sum_to_one, extra_A, extra_b):
    rows, rhs = [], []
    if sum_to_one:
        rows.append(np.ones(n))
        rhs.append(1.0)
    if extra_A is not None:
        for a, b in zip(np.atleast_2d(extra_A), np.atleast_1d(extra_b)):
            rows.append(np.asarray(a, dtype=float))
            rhs.append(float(b))
    if not rows:
        return np.zeros((0, n)), np.zeros(0)
    return np.array(rows), np.array(rhs)


def _independent_rows(A, b, point=None):
    """Orthonormal basis for the row space of ``A`` with matching right-hand side.

    If ``point`` is given the right-hand side is evaluated there (it must
    satisfy ``A x = b``); otherwise the system is reduced via the SVD.
    """
    if A.shape[0] == 0:
        return A, b
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > 1e-10 * max(1.0, s[0])
    Q = Vt[keep]
    if point is not None:
        return Q, Q @ point
    rhs = (U[:, keep].T @ b) / s[keep]
    if np.max(np.abs(A @ (Q.T @ rhs) - b)) > 1e-8 * max(1.0, np.max(np.abs(b))):
        raise QpError("inconsistent equality constraints")
    return Q, rhs


def _strict_solve(H, c, E, e, nonneg, max_iter=None):
    """Solve with a positive definite Hessian; returns (x, iterations)."""
    n = H.shape[0]
    meq = E.shape[0]
    if nonneg:
        C = np.vstack([E, np.eye(n)])
        d = np.concatenate([e, np.zeros(n)])
    else:
        C = E.copy()
        d = e.copy()
    C = np.ascontiguousarray(C, dtype=float)
    d = np.ascontiguousarray(d, dtype=float)
    if max_iter is None:
        max_iter = 10 * n * n + 10 * (meq + 1)
    x, _, _, iters, status = kernels.dual_active_set(
        np.ascontiguousarray(H), np.ascontiguousarray(c), C, d, meq, 1e-13, max_iter)
    if status == kernels.INFEASIBLE:
        raise QpError("constraints are infeasible")
    if status == kernels.MAX_ITER:
        only_simplex = meq == 0 or (
            meq == 1 and np.allclose(E[0], E[0, 0]) and abs(e[0] / (E[0, 0] * n) - 1.0) < 1e-12)
        if not only_simplex:
            raise QpError("active-set iteration limit reached")
        x0 = np.full(n, 1.0 / n) if meq else np.zeros(n)
        x, more = kernels.projected_gradient(
            np.ascontiguousarray(H), np.ascontiguousarray(c), bool(nonneg), bool(meq), x0, 1e-15, 200000)
        iters += more
    return np.asarray(x), int(iters)


def kkt_residual(G, c, w, E, nonneg, active_tol=1e-9):
    """Size of the projected gradient of ``w'Gw - 2c'w`` at ``w``.

    Recomputes multipliers from scratch: equality multipliers by least squares
    on the free coordinates, bound multipliers from what remains.  A
    coordinate counts as at its bound when it is below ``active_tol`` times
    the largest weight; complementarity ``w_i |g_i|`` is charged for those.
    The result also includes primal infeasibility.
    """
    g = G @ w - c
    n = w.shape[0]
    if nonneg:
        at_bound = w <= active_tol * max(1.0, float(np.max(np.abs(w))))
    else:
        at_bound = np.zeros(n, dtype=bool)
    free = ~at_bound
    res = 0.0
    if E.shape[0]:
        if free.any():
            nu, *_ = np.linalg.lstsq(E[:, free].T, g[free], rcond=None)
        else:
            nu = np.zeros(E.shape[0])
        g = g - E.T @ nu
    if free.any():
        res = max(res, float(np.max(np.abs(g[free]))))
    if at_bound.any():
        res = max(res, float(np.max(np.maximum(-g[at_bound], 0.0))))
        res = max(res, float(np.max(np.abs(w[at_bound] * g[at_bound]))))
    if nonneg:
        res = max(res, float(np.max(np.maximum(-w, 0.0))))
    return res


def _min_norm_optimum(G, c, E, e, nonneg, eigvals, eigvecs):
    """Minimal-norm minimizer for a singular gram.

    Stage one runs proximal-point iterations (each a strictly convex QP) to
    reach an optimal point; stage two minimizes ``|w|`` over the optimal set,
    which is cut out by fixing ``G w`` and the null-space part of ``c``.
    """
    n = G.shape[0]
    lmax = max(float(eigvals[-1]), 0.0)
    pos = eigvals > RANK_TOL * max(lmax, 1e-300)
    if pos.any():
        rho = max(float(eigvals[pos].min()), 1e-6 * lmax)
    else:
        rho = 1.0
    H = G + rho * np.eye(n)
    if E.shape[0] and nonneg is False:
        w = np.linalg.lstsq(E, e, rcond=None)[0]
    elif E.shape[0]:
        w = np.full(n, 1.0 / n)
    else:
        w = np.zeros(n)
    iters = 0
    kkt_tol = 1e-13 * max(1.0, lmax)
    for _ in range(5000):
        w_new, k = _strict_solve(H, c + rho * w, E, e, nonneg)
        iters += k
        step = np.max(np.abs(w_new - w))
        w = w_new
        face = _face_solve(G, c, E, e, w, nonneg)
        if face is not None and kkt_residual(G, c, face, E, nonneg) <= kkt_tol:
            w = face
            break
        if step < 1e-15 * max(1.0, np.max(np.abs(w))):
            break

    U = eigvecs[:, pos]
    null = eigvecs[:, ~pos]
    rows = [U.T]
    c_null = null.T @ c
    if null.shape[1] and np.linalg.norm(c_null) > 1e-12 * max(1.0, np.linalg.norm(c)):
        rows.append((null @ c_null)[None, :])
    if E.shape[0]:
        rows.append(E)
    A = np.vstack(rows) if rows else np.zeros((0, n))
    Q, q = _independent_rows(A, None, point=w)
    if Q.shape[0] >= n:
        return w, iters
    try:
        x, k = _strict_solve(np.eye(n), np.zeros(n), Q, q, nonneg)
    except QpError:
        # the optimal set is numerically a point
        return w, iters
    return x, iters + k


def _face_solve(G, c, E, e, w, nonneg, bound_tol=1e-14):
    """Minimal-norm stationary point of the face of ``w`` (bounds at zero held fixed).

    If that point is infeasible, step from ``w`` toward it until a weight
    hits zero, fix the weight at its bound and repeat (a primal active-set
    sweep; the convex objective decreases along every step).  Returns
    ``None`` if no feasible face point is found.
    """
    n = w.shape[0]
    free = (w > bound_tol) if nonneg else np.ones(n, dtype=bool)
    w = np.where(free, w, 0.0)
    for _ in range(n + 1):
        nf = int(free.sum())
        if nf == 0:
            return None
        Ef = E[:, free]
        m = Ef.shape[0]
        K = np.zeros((nf + m, nf + m))
        K[:nf, :nf] = G[np.ix_(free, free)]
        K[:nf, nf:] = Ef.T
        K[nf:, :nf] = Ef
        rhs = np.concatenate([c[free], e])
        sol = np.linalg.lstsq(K, rhs, rcond=1e-12)[0]
        x = np.zeros(n)
        x[free] = sol[:nf]
        if not nonneg or x.min() >= -1e-13:
            return np.where(x < 0.0, 0.0, x) if nonneg else x
        neg = free & (x < 0.0)
        alpha = np.min(w[neg] / (w[neg] - x[neg]))
        w = w + alpha * (x - w)
        hit = neg & (w <= 1e-15 + 1e-12 * np.abs(x))
        if not hit.any():
            hit = neg & (w == np.min(w[neg]))
        w[hit] = 0.0
        free = free & ~hit
    return None


def _solve(G, c, nonneg, sum_to_one, extra_A=None, extra_b=None):
    """Core solver on a validated, centered problem.  Returns (w, iterations, info)."""
    n = G.shape[0]
    if extra_A is None:
        E = np.full((1, n), 1.0 / np.sqrt(n)) if sum_to_one else np.zeros((0, n))
        e = np.full(1, 1.0 / np.sqrt(n)) if sum_to_one else np.zeros(0)
    else:
        E, e = _independent_rows(*_equality_rows(n, sum_to_one, extra_A, extra_b))
    scale = float(np.trace(G)) / n
    if not scale > 0.0:
        scale = 1.0
    Gs = G / scale
    cs = c / scale
    eigvals, eigvecs = np.linalg.eigh(Gs)
    lmax = max(float(eigvals[-1]), 0.0)
    if eigvals[0] < -PSD_TOL * max(1.0, lmax):
        raise QpError(f"gram is not positive semi-definite (min eigenvalue {eigvals[0] * scale:.3g})")
    singular = eigvals[0] <= RANK_TOL * max(lmax, 1e-300)
    if singular:
        w, iters = _min_norm_optimum(Gs, cs, E, e, nonneg, eigvals, eigvecs)
    else:
        w, iters = _strict_solve(Gs, cs, E, e, nonneg)
        # polish ill-conditioned solves with an exact solve on the final face
        polished = _face_solve(Gs, cs, E, e, w, nonneg)
        if polished is not None and (kkt_residual(Gs, cs, polished, E, nonneg)
                                     < kkt_residual(Gs, cs, w, E, nonneg)):
            w = polished
    if nonneg:
        w = np.where(w < 0.0, 0.0, w)
    info = dict(rank_deficient=bool(singular), scale=scale, E=E, Gs=Gs, cs=cs,
                rank=int(np.sum(eigvals > RANK_TOL * max(lmax, 1e-300))))
    return w, iters, info


def _nonunique(Gs, w, E, nonneg):
    """True when the optimum admits a feasible flat direction of the gram."""
    n = w.shape[0]
    free = (w > 1e-12) if nonneg else np.ones(n, dtype=bool)
    if not free.any():
        return False
    Z = np.eye(n)[:, free]
    if E.shape[0]:
        # directions inside the equality constraints
        Ef = E[:, free]
        _, s, Vt = np.linalg.svd(Ef)
        r = int(np.sum(s > 1e-10))
        basis = Vt[r:].T
        if basis.shape[1] == 0:
            return False
        Z = Z @ basis
    M = Z.T @ Gs @ Z
    ev = np.linalg.eigvalsh(M)
    return bool(ev[0] <= RANK_TOL * max(float(np.max(np.abs(np.linalg.eigvalsh(Gs)))), 1e-300))


def solve_qp(problem: QpProblem, tol: float = KKT_TOL) -> QpSolution:
    """Global minimizer of the weight problem under its constraint set.

    When the optimum is not unique the minimal Euclidean-norm optimum is
    returned and ``diagnostics["nonunique"]`` is set.
    """
    if not tol > 0:
        raise QpError("tol must be positive")
    _validate(problem)
    return _solve_problem(problem, tol)


def _solve_problem(problem, tol, extra_A=None, extra_b=None):
    cons = problem.constraints
    G, c, k = _centered(problem)
    G = 0.5 * (G + G.T)
    w, iters, info = _solve(G, c, cons.nonneg, cons.sum_to_one, extra_A, extra_b)
    kkt = kkt_residual(info["Gs"], info["cs"], w, info["E"], cons.nonneg)
    intercept = 0.0
    if cons.intercept:
        intercept = float(problem.mean_treated - np.asarray(problem.mean_controls) @ w)
    objective = float(k - 2.0 * c @ w + w @ G @ w)
    diagnostics = dict(
        rank_deficient=info["rank_deficient"],
        nonunique=_nonunique(info["Gs"], w, info["E"], cons.nonneg) if info["rank_deficient"] else False,
        kkt_ok=bool(kkt <= tol),
    )
    return QpSolution(weights=w, intercept=intercept, objective=objective,
                      kkt_residual=kkt, iterations=iters, diagnostics=diagnostics)


def problem_from_panel(panel: Panel, constraints: ConstraintSet) -> QpProblem:
    """Pre-treatment moments of a panel as a weight problem."""
    pre = np.ascontiguousarray(panel.outcomes[:, : panel.t0])
    G, b, yy, m, my = kernels.second_moments(np.ascontiguousarray(pre[1:]), np.ascontiguousarray(pre[0]))
    return QpProblem(gram=G, linear=b, constant=yy, constraints=constraints,
                     mean_treated=my, mean_controls=m)


def fit_weights(panel: Panel, constraints: ConstraintSet) -> QpSolution:
    """Fit weights on the pre-treatment periods of ``panel``."""
    if panel.t0 < 2 and not constraints.sum_to_one:
        raise QpError("need at least two pre-treatment periods")
    problem = problem_from_panel(panel, constraints)
    sol = _solve_problem(problem, KKT_TOL)
    sol.diagnostics["overfit_regime"] = panel.t0 <= panel.J
    return sol


def brute_force_simplex(problem: QpProblem, step: float) -> QpSolution:
    """Best point of the simplex lattice with spacing ``step`` (J <= 4).

    Exhaustive; intended as an independent check of :func:`solve_qp`.
    """
    J = problem.size
    if J > 4:
        raise QpError("brute force is limited to J <= 4")
    n = int(round(1.0 / step))
    if n <= 0 or abs(n * step - 1.0) > 1e-9:
        raise QpError("step must divide 1 evenly")
    G, c, k = _centered(problem)
    lattice = _simplex_lattice(J, n)
    values = k - 2.0 * lattice @ c + np.einsum("ij,jk,ik->i", lattice, G, lattice)
    i = int(np.argmin(values))
    best, best_val = lattice[i], values[i]
    intercept = 0.0
    if problem.constraints.intercept:
        intercept = float(problem.mean_treated - np.asarray(problem.mean_controls) @ best)
    return QpSolution(weights=best, intercept=intercept, objective=float(best_val),
                      kkt_residual=float("nan"), iterations=int(lattice.shape[0]))


def _simplex_lattice(J, n):
    axes = np.meshgrid(*([np.arange(n + 1)] * (J - 1)), indexing="ij")
    head = np.stack([a.ravel() for a in axes], axis=1) if J > 1 else np.zeros((1, 0), dtype=int)
    head = head[head.sum(axis=1) <= n]
    pts = np.concatenate([head, n - head.sum(axis=1, keepdims=True)], axis=1)
    return pts.astype(float) / n
