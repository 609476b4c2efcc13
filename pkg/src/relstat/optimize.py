"""Hyperparameter optimization by nonlinear conjugate gradients.

``minimize_cg`` is a generic Polak-Ribière+ minimizer with a strong-Wolfe
line search.  ``optimize_model`` wires it to the joint likelihood of a kernel
over one or more series, with data-informed random restarts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.signal import lombscargle

from .gp import DEFAULT_JITTER, Dataset, JitterPolicy, SingularCovarianceError
from .kernels import (
    ChangePoint, ChangeWindow, Constant, Kernel, KernelError, Linear,
    ParamVector, Periodic, SpectralMixture, SquaredExp, WhiteNoise,
    parametric_nodes, param_slots,
)
from .relational import Layout, ScaleFactors, joint_objective
from .text import describe

__all__ = [
    "OptimizeConfig", "OptimizeResult", "OptimizationError", "minimize_cg",
    "init_params", "init_extras", "optimize_model", "spectral_peaks",
]

log = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizeConfig:
    max_iter: int = 200
    gtol: float = 1e-5
    ftol: float = 1e-9
    restarts: int = 3
    c1: float = 1e-4
    c2: float = 0.9
    seed: int = 0
    jitter: JitterPolicy = DEFAULT_JITTER
    check_wolfe: bool = False

    def __post_init__(self):
        if min(self.gtol, self.ftol, self.c1, self.c2) <= 0:
            raise ValueError("tolerances must be positive")
        if not self.c1 < self.c2 < 1:
            raise ValueError("line search needs 0 < c1 < c2 < 1")
        if self.restarts < 1:
            raise ValueError("at least one restart is required")


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    n_iter: int
    restart: int = 0
    converged: bool = False
    init_fun: float = np.inf
    history: list[float] = field(default_factory=list, repr=False)


def _safe(fun):
    def wrapped(x):
        try:
            with np.errstate(all="ignore"):
                f, g = fun(x)
        except (SingularCovarianceError, KernelError, FloatingPointError, np.linalg.LinAlgError):
            return np.inf, None
        if not np.isfinite(f) or g is None or not np.all(np.isfinite(g)):
            return np.inf, None
        return float(f), np.asarray(g, dtype=float)
    return wrapped


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic through two points with slopes, or None."""
    with np.errstate(all="ignore"):
        return _cubic(a, fa, da, b, fb, db)


def _cubic(a, fa, da, b, fb, db):
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = np.copysign(np.sqrt(rad), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t if np.isfinite(t) else None


class _LineSearch:
    """Strong-Wolfe search along ``p`` followed by one secant refinement."""

    def __init__(self, fun, x, f0, g0, p, c1, c2, max_evals=40):
        self.fun, self.x, self.p = fun, x, p
        self.f0, self.d0 = f0, float(g0 @ p)
        self.c1, self.c2 = c1, c2
        self.evals, self.max_evals = 0, max_evals

    def phi(self, a):
        self.evals += 1
        x = self.x + a * self.p
        f, g = self.fun(x)
        with np.errstate(all="ignore"):
            d = float(g @ self.p) if g is not None else np.nan
        return f, d, x, g

    def armijo(self, a, f):
        return np.isfinite(f) and f <= self.f0 + self.c1 * a * self.d0

    def curvature(self, d):
        return abs(d) <= -self.c2 * self.d0

    def run(self, a1):
        best = self._wolfe(a1)
        if best is None:
            return None
        a, f, d, x, g = best
        # secant step on phi'; exact on quadratics
        if d > self.d0 and abs(d) > 0.1 * abs(self.d0) and self.evals < self.max_evals:
            a_s = a * self.d0 / (self.d0 - d)
            if np.isfinite(a_s) and a_s > 0 and abs(a_s - a) > 1e-10 * a:
                fs, ds, xs, gs = self.phi(a_s)
                if self.armijo(a_s, fs) and self.curvature(ds) and fs <= f:
                    return a_s, fs, ds, xs, gs
        return best

    def _wolfe(self, a):
        a_prev, f_prev, d_prev = 0.0, self.f0, self.d0
        first = True
        while self.evals < self.max_evals:
            f, d, x, g = self.phi(a)
            if not self.armijo(a, f) or (not first and f >= f_prev):
                return self._zoom(a_prev, f_prev, d_prev, a, f, d)
            if self.curvature(d):
                return a, f, d, x, g
            if d >= 0:
                return self._zoom(a, f, d, a_prev, f_prev, d_prev)
            a_prev, f_prev, d_prev = a, f, d
            a = a * 4.0
            first = False
        return None

    def _zoom(self, lo, f_lo, d_lo, hi, f_hi, d_hi):
        while self.evals < self.max_evals:
            width = hi - lo
            if abs(width) < 1e-16 * max(abs(lo), abs(hi), 1e-300):
                break
            a = None
            if np.isfinite(f_hi) and np.isfinite(d_hi):
                a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            lo_edge, hi_edge = sorted((lo + 0.1 * width, hi - 0.1 * width))
            if a is None or not lo_edge <= a <= hi_edge:
                a = lo + 0.5 * width
            f, d, x, g = self.phi(a)
            if not self.armijo(a, f) or f >= f_lo:
                hi, f_hi, d_hi = a, f, d
            else:
                if self.curvature(d):
                    return a, f, d, x, g
                if d * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, f, d
        return None


def minimize_cg(fun: Callable, x0, config: OptimizeConfig = OptimizeConfig(), rng=None) -> OptimizeResult:
    """Minimize ``fun(x) -> (value, gradient)`` from ``x0``.

    Polak-Ribière+ directions (reset to steepest descent whenever the
    coefficient is negative or the direction is not a descent direction).
    Non-finite values and raised numerical errors count as ``+inf``.  If the
    start itself is non-finite, up to 10 Gaussian perturbations are tried.
    """
    fun = _safe(fun)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    tries = 0
    while not np.isfinite(f):
        if tries == 10:
            raise OptimizationError("objective is not finite at the initial point")
        x = np.asarray(x0, dtype=float) + rng.normal(scale=0.1, size=x.size)
        f, g = fun(x)
        tries += 1

    init_fun = f
    history = [f]
    p = -g
    gnorm = float(np.linalg.norm(g))
    alpha = 1.0 / max(gnorm, 1e-12)
    f_prev = None
    stalls = 0
    converged = gnorm <= config.gtol
    it = 0
    while not converged and it < config.max_iter:
        it += 1
        d0 = float(g @ p)
        if d0 >= 0:
            p, d0 = -g, -float(g @ g)
        if f_prev is not None:
            alpha = 1.01 * 2.0 * (f - f_prev) / d0 if d0 < 0 and f < f_prev else alpha
            alpha = max(alpha, 1e-12)
        step = _LineSearch(fun, x, f, g, p, config.c1, config.c2).run(alpha)
        if step is None and not np.array_equal(p, -g):
            p = -g
            step = _LineSearch(fun, x, f, g, p, config.c1, config.c2).run(1.0 / max(gnorm, 1e-12))
        if step is None:
            break
        a, f_new, _, x_new, g_new = step
        if config.check_wolfe:
            d_new = float(g_new @ p)
            assert f_new <= f + config.c1 * a * float(g @ p) + 1e-12 * abs(f)
            assert abs(d_new) <= -config.c2 * float(g @ p) + 1e-12
        beta = max(0.0, float(g_new @ (g_new - g)) / float(g @ g))
        f_prev, f = f, f_new
        x, p = x_new, -g_new + beta * p
        g = g_new
        alpha = a
        history.append(f)
        gnorm = float(np.linalg.norm(g))
        # a single tiny decrease is often just a poor direction; require two
        stalls = stalls + 1 if abs(f_prev - f) <= config.ftol * max(abs(f), abs(f_prev)) else 0
        converged = gnorm <= config.gtol or stalls >= 2
    return OptimizeResult(x, f, gnorm, it, 0, converged, init_fun, history)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _stats(datasets: Sequence[Dataset]):
    t = np.concatenate([d.t for d in datasets])
    lo, hi = float(t.min()), float(t.max())
    span = hi - lo if hi > lo else 1.0
    steps = [np.diff(d.t) for d in datasets if len(d) > 1]
    steps = np.concatenate(steps) if steps else np.array([span])
    steps = steps[steps > 0]
    dt = float(np.median(steps)) if steps.size else span
    var = float(np.median([np.var(d.y) if len(d) > 1 else d.y[0] ** 2 for d in datasets]))
    return lo, span, 0.5 / dt, max(var, 1e-12)


def spectral_peaks(datasets: Sequence[Dataset], n: int) -> np.ndarray:
    """Frequencies of the ``n`` strongest Lomb-Scargle peaks, pooled over series."""
    lo, span, nyquist, _ = _stats(datasets)
    freqs = np.linspace(0.5 / span, nyquist, max(64, 8 * max(len(d) for d in datasets)))
    power = np.zeros_like(freqs)
    for d in datasets:
        y = d.y - d.y.mean()
        if len(d) < 3 or not np.any(y):
            continue
        pw = lombscargle(d.t, y, 2 * np.pi * freqs)
        power += pw / pw.max()
    interior = (power[1:-1] > power[:-2]) & (power[1:-1] >= power[2:])
    idx = np.flatnonzero(interior) + 1
    idx = idx[np.argsort(-power[idx], kind="stable")]
    out = list(freqs[idx[:n]])
    while len(out) < n:
        out.append(freqs[np.argmax(power)] * (len(out) + 1) if power.any() else nyquist / (len(out) + 2))
    return np.array(out[:n])


def _lognormal(rng, size=None):
    return np.exp(rng.normal(scale=0.3, size=size))


def _fresh(node: Kernel, stats, rng, restart: int, var: float, peaks) -> list[float]:
    lo, span, nyquist, _ = stats
    if isinstance(node, (WhiteNoise, Constant)):
        return [var * _lognormal(rng)]
    if isinstance(node, Linear):
        return [var / (span / 2) ** 2 * _lognormal(rng), rng.uniform(lo, lo + span)]
    if isinstance(node, SquaredExp):
        return [var * _lognormal(rng), span / 4 * _lognormal(rng)]
    if isinstance(node, Periodic):
        choices = [1.0 / f for f in peaks] + [span / 8]
        period = choices[restart % len(choices)]
        return [var * _lognormal(rng), _lognormal(rng), period * _lognormal(rng)]
    if isinstance(node, SpectralMixture):
        return _sm_init(node.q, stats, rng, restart, var, peaks)
    if isinstance(node, ChangePoint):
        return [rng.uniform(lo, lo + span), 10.0 / span * _lognormal(rng)]
    if isinstance(node, ChangeWindow):
        return [rng.uniform(lo, lo + span), span / 8 * _lognormal(rng), 10.0 / span * _lognormal(rng)]
    raise TypeError(f"no initializer for {node!r}")


def _sm_init(q, stats, rng, restart, var, peaks):
    _, span, nyquist, _ = stats
    if restart == 0 and len(peaks) >= q:
        mus = np.asarray(peaks[:q], dtype=float)
    else:
        mus = rng.uniform(0.0, nyquist, size=q)
        if len(peaks):
            # half the components start near spectral peaks
            k = min(len(peaks), q // 2 + 1)
            mus[:k] = rng.choice(peaks, size=k, replace=len(peaks) < k)
    mus = np.clip(mus * _lognormal(rng, q) ** 0.1, 1e-6 * nyquist, nyquist)
    v = 1.0 / (4 * np.pi**2 * (span / 4) ** 2)
    out = []
    for mu in mus:
        out += [var / q * _lognormal(rng), mu, v * _lognormal(rng)]
    return out


def init_params(expr: Kernel, datasets: Sequence[Dataset], seed=0, restart: int = 0,
                unit_variance: bool = False) -> ParamVector:
    """Data-informed starting point for ``expr``.

    Nodes that already carry parameters keep them on restart 0 and are
    jittered multiplicatively on later restarts.  Fresh nodes take
    heuristics from the data (variances from ``var(y)``, lengthscales a
    quarter of the input range, locations uniform over the range) times
    lognormal noise.  Restart ``r`` starts periods at the ``r``-th strongest
    periodogram peak, with an eighth of the range as the last choice.
    ``unit_variance`` sets the variance scale to 1, for kernels that are
    rescaled per series.
    """
    if not datasets:
        raise ValueError("init_params needs at least one dataset")
    rng = np.random.default_rng([int(seed), int(restart)])
    stats = _stats(datasets)
    var = 1.0 if unit_variance else stats[3]
    peaks = spectral_peaks(datasets, 4)
    natural = []
    for _, node in parametric_nodes(expr):
        fresh = _fresh(node, stats, rng, restart, var, peaks)
        if node.params is None:
            natural += fresh
        elif restart == 0:
            natural += list(node.params)
        else:
            jitter = [_lognormal(rng) if tr == "log" else 1.0 for _, tr in node.own_slots()]
            natural += [p * j for p, j in zip(node.params, jitter)]
    return ParamVector.from_natural(expr, natural)


def init_extras(layout: Layout, datasets: Sequence[Dataset], seed=0, restart: int = 0) -> list[np.ndarray]:
    """Starting scale factors and spectral mixtures, one vector per series."""
    rng = np.random.default_rng([int(seed), int(restart), 1])
    out = []
    for d in datasets:
        e = []
        stats = _stats([d])
        if layout.free_scales:
            mean, var = float(np.mean(d.y)), stats[3]
            b2 = max(mean**2, 1e-2 * var) * _lognormal(rng)
            e += [np.log(b2), np.log(var * _lognormal(rng))]
        if layout.n_sm:
            nat = _sm_init(layout.q, stats, rng, restart, stats[3] * 0.5, spectral_peaks([d], layout.q))
            e += list(np.log(nat))
        out.append(np.array(e))
    return out


def optimize_model(expr: Kernel, datasets: Sequence[Dataset], mode: str = "none",
                   config: OptimizeConfig = OptimizeConfig(), q: int = 3,
                   fixed_scales: ScaleFactors | None = None, init=None,
                   init_extra: Sequence | None = None) -> tuple[OptimizeResult, Layout]:
    """Fit shared (and per-series) hyperparameters of ``expr``; best of all restarts.

    ``init`` overrides the shared starting point (unconstrained vector) on
    every restart; ``init_extra`` overrides the per-series extras on restart 0.
    Returns the winning result and the layout describing its vector.
    """
    layout = Layout(expr, mode, len(datasets), q, fixed_scales)
    fun = joint_objective(layout, datasets, config.jitter)
    best = None
    errors = []
    for r in range(config.restarts):
        if init is not None:
            shared = getattr(init, "values", init)
        else:
            shared = init_params(expr, datasets, config.seed, r, unit_variance=layout.relational).values
        extras = init_extras(layout, datasets, config.seed, r)
        if r == 0 and init_extra is not None:
            extras = [np.asarray(e, dtype=float) for e in init_extra]
        x0 = layout.join(shared, extras)
        try:
            res = minimize_cg(fun, x0, config, rng=np.random.default_rng([config.seed, r, 2]))
        except OptimizationError as err:
            errors.append(str(err))
            continue
        res.restart = r
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise OptimizationError(f"all restarts failed for {describe(expr)}: {'; '.join(errors)}")
    return best, layout
