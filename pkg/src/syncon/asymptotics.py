"""Large-T0 limits of the weight problems and the resulting bias/variance.

As T0 grows the pre-treatment criterion converges to

    Q(w) = sigma2 (1 + w'w) + (mu0 - mu'w)' Omega (mu0 - mu'w)

with ``Omega`` the pre-period second moment of the stationary factors
(centered at ``omega0`` when an intercept is fitted).  Everything below
evaluates that object exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dgp import FactorDGP, loading_matrix
from .qp import ConstraintSet, QpProblem, _solve_problem, solve_qp

IN_PHI_TOL = 1e-8


class LimitError(ValueError):
    pass


@dataclass(frozen=True)
class LimitSpec:
    """Loadings and factor moments of a stationary linear factor model.

    ``mu`` is J x F (one row per control).  ``post_mean`` is the mean of the
    factors in post-treatment periods given treatment.
    """

    mu0: np.ndarray
    mu: np.ndarray
    omega0: np.ndarray
    Omega0: np.ndarray
    sigma2: float
    post_mean: np.ndarray

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        F = mu0.shape[0]
        if mu.shape[1] != F:
            raise LimitError(f"mu has {mu.shape[1]} factor columns, mu0 has {F}")
        omega0 = np.atleast_1d(np.asarray(self.omega0, dtype=float))
        Omega0 = np.atleast_2d(np.asarray(self.Omega0, dtype=float))
        post = np.atleast_1d(np.asarray(self.post_mean, dtype=float))
        if omega0.shape != (F,) or post.shape != (F,) or Omega0.shape != (F, F):
            raise LimitError("factor moments do not match the number of factors")
        if self.sigma2 < 0:
            raise LimitError("sigma2 must be non-negative")
        if np.max(np.abs(Omega0 - Omega0.T)) > 1e-12:
            raise LimitError("Omega0 must be symmetric")
        if np.linalg.eigvalsh(Omega0)[0] < -1e-10:
            raise LimitError("Omega0 is not positive semi-definite")
        if np.linalg.eigvalsh(Omega0 - np.outer(omega0, omega0))[0] < -1e-10:
            raise LimitError("Omega0 - omega0 omega0' is not positive semi-definite")
        for name, val in (("mu0", mu0), ("mu", mu), ("omega0", omega0), ("Omega0", Omega0),
                          ("post_mean", post)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def J(self) -> int:
        return self.mu.shape[0]

    @property
    def centered_moment(self) -> np.ndarray:
        return self.Omega0 - np.outer(self.omega0, self.omega0)

    def to_dict(self) -> dict:
        return dict(mu0=self.mu0.tolist(), mu=self.mu.tolist(), omega0=self.omega0.tolist(),
                    Omega0=self.Omega0.tolist(), sigma2=self.sigma2, post_mean=self.post_mean.tolist())

    @classmethod
    def from_dict(cls, data: dict) -> LimitSpec:
        unknown = set(data) - {"mu0", "mu", "omega0", "Omega0", "sigma2", "post_mean"}
        if unknown:
            raise LimitError(f"unknown limit keys: {sorted(unknown)}")
        return cls(**data)

    def restrict(self, keep) -> LimitSpec:
        """Spec on a subset of the controls."""
        return LimitSpec(self.mu0, self.mu[np.asarray(keep)], self.omega0, self.Omega0,
                         self.sigma2, self.post_mean)


@dataclass
class LimitResult:
    weights: np.ndarray
    reconstructed_loadings: np.ndarray
    asymptotic_bias: float
    asymptotic_variance: float
    in_phi: bool
    objective: float = float("nan")


def limit_problem(spec: LimitSpec, constraints: ConstraintSet) -> QpProblem:
    """The limiting criterion as a weight problem (intercept profiled by the solver)."""
    mu, mu0, Om = spec.mu, spec.mu0, spec.Omega0
    gram = spec.sigma2 * np.eye(spec.J) + mu @ Om @ mu.T
    linear = mu @ Om @ mu0
    constant = spec.sigma2 + mu0 @ Om @ mu0
    return QpProblem(gram=gram, linear=linear, constant=float(constant), constraints=constraints,
                     mean_treated=float(mu0 @ spec.omega0), mean_controls=mu @ spec.omega0)


def _bias(spec: LimitSpec, w, centered: bool) -> float:
    gap = spec.mu0 - spec.mu.T @ w
    post = spec.post_mean - spec.omega0 if centered else spec.post_mean
    return float(post @ gap)


def gamma_variance(spec: LimitSpec, weights) -> float:
    """Asymptotic variance of the effect estimate at fixed weights."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (spec.J,):
        raise LimitError(f"expected {spec.J} weights, got shape {w.shape}")
    gap = spec.mu0 - spec.mu.T @ w
    return float(spec.sigma2 * (1.0 + w @ w) + gap @ spec.centered_moment @ gap)


def limit_weights(spec: LimitSpec, constraints: ConstraintSet, theta0=None, theta=None) -> LimitResult:
    """Probability limit of the weights and the implied bias and variance.

    ``theta0``/``theta`` (R and J x R) are loadings on random-walk factors.
    Any mismatch there makes the criterion diverge, so in the limit the
    weights must reproduce ``theta0`` exactly; that enters as an equality.
    """
    problem = limit_problem(spec, constraints)
    if theta is None:
        sol = solve_qp(problem)
    else:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
        if theta.shape != (spec.J, theta0.shape[0]):
            raise LimitError("theta must be J x R with R = len(theta0)")
        sol = _solve_problem(problem, 1e-10, extra_A=theta.T, extra_b=theta0)
        if np.max(np.abs(theta.T @ sol.weights - theta0)) > 1e-8:
            raise LimitError("no admissible weights reproduce the random-walk loadings")
    w = sol.weights
    recon = spec.mu.T @ w
    return LimitResult(
        weights=w,
        reconstructed_loadings=recon,
        asymptotic_bias=_bias(spec, w, constraints.intercept),
        asymptotic_variance=gamma_variance(spec, w),
        in_phi=bool(np.linalg.norm(spec.mu0 - recon) <= IN_PHI_TOL),
        objective=sol.objective,
    )


def fixed_weight_limit(spec: LimitSpec, weights, intercept: bool) -> LimitResult:
    """Bias and variance for weights chosen without looking at the data (e.g. DID)."""
    w = np.asarray(weights, dtype=float)
    recon = spec.mu.T @ w
    return LimitResult(w, recon, _bias(spec, w, intercept), gamma_variance(spec, w),
                       bool(np.linalg.norm(spec.mu0 - recon) <= IN_PHI_TOL))


def did_limit(spec: LimitSpec) -> LimitResult:
    return fixed_weight_limit(spec, np.full(spec.J, 1.0 / spec.J), intercept=True)


def gamma_two_groups(sigma2: float, J: int) -> float:
    """Limiting misallocation with two equal groups of controls."""
    if J < 2 or J % 2:
        raise LimitError("J must be even and >= 2")
    if sigma2 < 0:
        raise LimitError("sigma2 must be non-negative")
    return sigma2 / (2.0 * sigma2 + J)


def gamma_many_groups(sigma2: float, J: int) -> float:
    """Limiting misallocation with J/2 groups of two controls."""
    if J < 4 or J % 2:
        raise LimitError("J must be even and >= 4")
    if sigma2 < 0:
        raise LimitError("sigma2 must be non-negative")
    return (J - 2) / J * sigma2 / (sigma2 + 2.0)


def group_spec(sigma2: float, J: int, K: int, post_shift: float = 1.0) -> LimitSpec:
    """Limit spec of the grouped stationary design (unit-variance, mean-zero factors)."""
    if K < 1 or J % K:
        raise LimitError(f"J={J} is not divisible by K={K}")
    return limit_spec_for(FactorDGP(J=J, K=K, sigma2=sigma2, post_shift=post_shift))


def gamma_consistency_check(sigma2: float, J: int, K: int) -> float:
    """Misallocation of the limiting weights for K equal groups, solved numerically."""
    spec = group_spec(sigma2, J, K)
    res = limit_weights(spec, ConstraintSet.sc())
    same = np.arange(J) < J // K
    return float(1.0 - res.weights[same].sum())


def limit_spec_for(dgp: FactorDGP) -> LimitSpec:
    """LimitSpec of a :class:`~syncon.dgp.FactorDGP` (stationary part only).

    The common shock and any deterministic trend load equally on every unit
    by default and drop out under the adding-up constraint; they are not part
    of the returned LimitSpec.  Heteroskedastic designs are not representable.
    """
    if dgp.hetero is not None:
        raise LimitError("heteroskedastic designs have no scalar sigma2")
    mu0, mu, _, _ = loading_matrix(dgp)
    F = mu0.shape[0]
    omega0 = np.zeros(F)
    Omega0 = np.eye(F)
    post = np.zeros(F)
    k0 = 0
    if dgp.has_fixed_effects:
        omega0[0] = 1.0
        post[0] = 1.0
        k0 = 1
    post[k0] = dgp.post_shift
    return LimitSpec(mu0, mu, omega0, Omega0, dgp.sigma2, post)


def linear_projection(spec: LimitSpec, var_lambda, include_noise: bool = False):
    """Coefficients ``(delta, delta1)`` of the projection of y0 on the controls.

    ``delta = [mu V mu']^{-1} mu V mu0`` and ``delta1 = E[lambda](mu0 - mu'delta)``
    with ``E[lambda]`` taken from ``spec.post_mean``.  With ``include_noise``
    the idiosyncratic variance is added to the control covariance.
    """
    V = np.atleast_2d(np.asarray(var_lambda, dtype=float))
    F = spec.mu0.shape[0]
    if V.shape != (F, F):
        raise LimitError(f"var_lambda must be {F}x{F}")
    A = spec.mu @ V @ spec.mu.T
    if include_noise:
        A = A + spec.sigma2 * np.eye(spec.J)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond >= 1e12:
        rank = int(np.linalg.matrix_rank(A))
        raise LimitError(f"mu V mu' is singular: rank {rank} < {spec.J}")
    delta = np.linalg.solve(A, spec.mu @ V @ spec.mu0)
    delta1 = float(spec.post_mean @ (spec.mu0 - spec.mu.T @ delta))
    return delta, delta1
