"""Exact zero-mean GP inference on top of kernel expressions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dpotrf, dpotri, dpotrs

from .grammar import summands
from .kernels import Kernel, ParamVector, bind, bound_params, gram
from .text import describe

__all__ = [
    "Dataset", "JitterPolicy", "SingularCovarianceError", "GPPosterior",
    "Component", "ComponentDecomposition", "build_covariance", "nll",
    "nll_grad", "nll_and_grad", "predict", "decompose_posterior",
    "posterior_components", "sample_prior", "rmse",
]

LOG_2PI = np.log(2.0 * np.pi)


class SingularCovarianceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Dataset:
    """One series: inputs ``X`` (N, D) with time in column 0, targets ``y``.

    Rows are sorted by time on construction.
    """

    id: str
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.size:
            raise ValueError(f"dataset {self.id!r}: X has shape {X.shape} but y has {y.size} entries")
        if y.size < 1:
            raise ValueError(f"dataset {self.id!r} is empty")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError(f"dataset {self.id!r} has non-finite entries")
        order = np.argsort(X[:, 0], kind="stable")
        object.__setattr__(self, "X", X[order])
        object.__setattr__(self, "y", y[order])

    @property
    def t(self) -> np.ndarray:
        return self.X[:, 0]

    def __len__(self):
        return self.y.size

    def split(self, holdout: int) -> tuple[Dataset, Dataset | None]:
        """Training prefix and the last ``holdout`` points."""
        if holdout <= 0:
            return self, None
        if holdout >= len(self):
            raise ValueError(f"holdout {holdout} leaves no training data in {self.id!r}")
        n = len(self) - holdout
        return Dataset(self.id, self.X[:n], self.y[:n]), Dataset(self.id, self.X[n:], self.y[n:])


@dataclass(frozen=True)
class JitterPolicy:
    """Diagonal jitter: ``base * mean(diag K)``, multiplied by ``factor``
    after each failed factorization, at most ``max_escalations`` times."""

    base: float = 1e-8
    factor: float = 10.0
    max_escalations: int = 6


DEFAULT_JITTER = JitterPolicy()


def _factor(K: np.ndarray, jitter: JitterPolicy, what="covariance"):
    if not np.all(np.isfinite(K)):
        raise SingularCovarianceError(f"non-finite {what}")
    scale = float(np.mean(np.diag(K)))
    if not scale > 0:
        scale = 1.0
    amount = jitter.base * scale
    diag = np.diag(K).copy()
    Kj = np.array(K, dtype=float, order="F")
    for _ in range(jitter.max_escalations + 1):
        np.fill_diagonal(Kj, diag + amount)
        L, info = dpotrf(Kj, lower=1, clean=1)
        if info == 0:
            return L, amount
        amount *= jitter.factor
    raise SingularCovarianceError(f"{what} not positive definite after jitter {amount / jitter.factor:.3g}")


def _params(expr, params):
    if params is None:
        return bound_params(expr)
    return params


def build_covariance(expr: Kernel, params, Xa, Xb=None) -> np.ndarray:
    return gram(expr, _params(expr, params), Xa, Xb)


@dataclass
class _Fit:
    L: np.ndarray
    alpha: np.ndarray
    jitter: float
    nll: float


def _fit(expr, params, dataset, jitter) -> _Fit:
    K = gram(expr, params, dataset.X)
    try:
        L, amount = _factor(K, jitter)
    except SingularCovarianceError as err:
        raise SingularCovarianceError(f"{describe(expr)}: {err}") from None
    alpha, _ = dpotrs(L, dataset.y, lower=1)
    value = 0.5 * dataset.y @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * len(dataset) * LOG_2PI
    return _Fit(L, alpha, amount, float(value))


def nll(expr: Kernel, params, dataset: Dataset, jitter: JitterPolicy = DEFAULT_JITTER) -> float:
    """Negative log marginal likelihood of ``dataset`` under ``expr``."""
    return _fit(expr, _params(expr, params), dataset, jitter).nll


def nll_and_grad(expr: Kernel, params, dataset: Dataset, jitter: JitterPolicy = DEFAULT_JITTER):
    """``(nll, gradient, jitter_used)`` from a single factorization."""
    params = _params(expr, params)
    K, dK = gram(expr, params, dataset.X, grad=True)
    value, W, amount = nll_and_weights(K, dataset.y, jitter, describe(expr))
    g = 0.5 * (np.reshape(dK, (len(dK), -1)) @ W.ravel()) if dK else np.zeros(0)
    return value, g, amount


def nll_and_weights(K: np.ndarray, y: np.ndarray, jitter: JitterPolicy = DEFAULT_JITTER, label="covariance"):
    """NLL of ``y`` under a prebuilt covariance, plus ``W = K^-1 - a a^T``.

    The gradient along a derivative matrix ``dK`` is ``0.5 * sum(W * dK)``.
    """
    try:
        L, amount = _factor(K, jitter)
    except SingularCovarianceError as err:
        raise SingularCovarianceError(f"{label}: {err}") from None
    alpha, _ = dpotrs(L, y, lower=1)
    value = 0.5 * y @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * y.size * LOG_2PI
    Kinv, info = dpotri(L, lower=1)
    if info != 0:
        raise SingularCovarianceError(f"{label}: inverse failed (info={info})")
    # dpotri fills the lower triangle only; L's upper triangle was zero
    W = Kinv + Kinv.T
    W.flat[::y.size + 1] *= 0.5
    W -= np.outer(alpha, alpha)
    return float(value), W, amount


def nll_grad(expr: Kernel, params, dataset: Dataset, jitter: JitterPolicy = DEFAULT_JITTER) -> np.ndarray:
    return nll_and_grad(expr, params, dataset, jitter)[1]


@dataclass
class GPPosterior:
    X: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)


def _clamp(var: np.ndarray) -> np.ndarray:
    if np.any(var < -1e-10):
        raise SingularCovarianceError(f"negative predictive variance {var.min():.3g}")
    return np.maximum(var, 0.0)


def _as_inputs(X):
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def predict(expr: Kernel, params, train: Dataset, X_star, jitter: JitterPolicy = DEFAULT_JITTER) -> GPPosterior:
    params = _params(expr, params)
    X_star = _as_inputs(X_star)
    fit = _fit(expr, params, train, jitter)
    Ks = gram(expr, params, X_star, train.X)
    mean = Ks @ fit.alpha
    V = solve_triangular(fit.L, Ks.T, lower=True, check_finite=False)
    prior = np.diag(gram(expr, params, X_star))
    return GPPosterior(X_star, mean, _clamp(prior - np.sum(V**2, axis=0)))


@dataclass
class Component:
    description: str
    mean: np.ndarray
    var: np.ndarray


@dataclass
class ComponentDecomposition:
    X: np.ndarray
    components: list[Component] = field(default_factory=list)

    @property
    def total_mean(self) -> np.ndarray:
        return np.sum([c.mean for c in self.components], axis=0)


def posterior_components(expr, params, parts, train, X_star, jitter=DEFAULT_JITTER) -> ComponentDecomposition:
    """Posterior of each additive part of ``expr``.

    ``parts`` is a list of ``(label, part_expr, part_params)`` whose kernels
    sum to ``expr``; the conditioning uses the Gram matrix of ``expr``.
    """
    params = _params(expr, params)
    X_star = _as_inputs(X_star)
    fit = _fit(expr, params, train, jitter)
    out = ComponentDecomposition(X_star)
    for label, part, pp in parts:
        Ks = gram(part, pp, X_star, train.X)
        V = solve_triangular(fit.L, Ks.T, lower=True, check_finite=False)
        prior = np.diag(gram(part, pp, X_star))
        out.components.append(Component(label, Ks @ fit.alpha, _clamp(prior - np.sum(V**2, axis=0))))
    return out


def decompose_posterior(expr: Kernel, params, train: Dataset, X_star,
                        jitter: JitterPolicy = DEFAULT_JITTER) -> ComponentDecomposition:
    """Split the posterior over the maximal summands of the canonical kernel."""
    params = _params(expr, params)
    bound = bind(expr, params)
    parts = [(describe(s), s, bound_params(s)) for s in summands(bound)]
    return posterior_components(expr, params, parts, train, X_star, jitter)


def sample_prior(expr: Kernel, params, X, seed=0, jitter: JitterPolicy = DEFAULT_JITTER) -> np.ndarray:
    """One draw ``L z`` from the zero-mean prior at inputs ``X``.

    ``seed`` is an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    K = gram(expr, _params(expr, params), X)
    L, _ = _factor(K, jitter, "prior covariance")
    return L @ rng.standard_normal(K.shape[0])


def rmse(predicted, actual) -> float:
    predicted = np.asarray(predicted, dtype=float).ravel()
    actual = np.asarray(actual, dtype=float).ravel()
    if predicted.size != actual.size:
        raise ValueError(f"length mismatch: {predicted.size} vs {actual.size}")
    if predicted.size == 0:
        raise ValueError("rmse of empty input")
    return float(np.sqrt(np.mean((predicted - actual) ** 2)))
