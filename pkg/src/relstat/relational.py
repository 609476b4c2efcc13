"""Joint likelihood of several series under a shared kernel.

Three modes share one code path by building an *effective* kernel per series:

``none``
    the shared kernel ``k`` itself.
``scale_factors``
    ``b_j^2 + v_j^2 k``, written as ``CONST + CONST × k``.
``scale_plus_sm``
    ``b_j^2 + v_j^2 k + SM_j``, with a per-series spectral mixture.

The optimizer works on one flat vector: the shared kernel's slots first, then
each series' extras ``[log b^2, log v^2, sm...]`` in series order.  Frozen
scale factors drop out of the vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .gp import DEFAULT_JITTER, Dataset, JitterPolicy, nll, nll_and_weights
from .kernels import Constant, Kernel, Product, SpectralMixture, Sum, gram
from .text import describe

__all__ = ["MODES", "ScaleFactors", "Layout", "joint_nll", "joint_objective"]

MODES = ("none", "scale_factors", "scale_plus_sm")


@dataclass(frozen=True)
class ScaleFactors:
    """Per-series additive and multiplicative scales as ``log b^2``, ``log v^2``."""

    log_b2: np.ndarray
    log_v2: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.log_b2, dtype=float))
        v = np.atleast_1d(np.asarray(self.log_v2, dtype=float))
        if b.shape != v.shape:
            raise ValueError("one (b, v) pair per dataset")
        object.__setattr__(self, "log_b2", b)
        object.__setattr__(self, "log_v2", v)

    @classmethod
    def from_natural(cls, b, v) -> ScaleFactors:
        with np.errstate(divide="ignore"):
            return cls(np.log(np.square(b)), np.log(np.square(v)))

    @classmethod
    def identity(cls, m: int) -> ScaleFactors:
        return cls.from_natural(np.zeros(m), np.ones(m))

    def __len__(self):
        return self.log_b2.size

    @property
    def bias(self) -> np.ndarray:
        """``b_j^2``"""
        return np.exp(self.log_b2)

    @property
    def scale(self) -> np.ndarray:
        """``v_j^2``"""
        return np.exp(self.log_v2)


@dataclass(frozen=True)
class Layout:
    """How a flat optimization vector maps onto per-series effective kernels."""

    expr: Kernel
    mode: str
    n_datasets: int
    q: int = 3
    fixed_scales: ScaleFactors | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.fixed_scales is not None and len(self.fixed_scales) != self.n_datasets:
            raise ValueError("fixed scale factors must cover every dataset")

    @property
    def relational(self) -> bool:
        return self.mode != "none"

    @property
    def free_scales(self) -> bool:
        return self.relational and self.fixed_scales is None

    @property
    def n_shared(self) -> int:
        return self.expr.n_params

    @property
    def n_sm(self) -> int:
        return 3 * self.q if self.mode == "scale_plus_sm" else 0

    @property
    def n_extra(self) -> int:
        return (2 if self.free_scales else 0) + self.n_sm

    @property
    def size(self) -> int:
        return self.n_shared + self.n_datasets * self.n_extra

    def effective(self, with_sm: bool = True) -> Kernel:
        if not self.relational:
            return self.expr
        scaled = Sum((Constant(), Product((Constant(), self.expr))))
        if self.mode == "scale_plus_sm" and with_sm:
            return Sum((*scaled.terms, SpectralMixture(self.q)))
        return scaled

    def split(self, x):
        """``(shared, [extras_j])`` views of a flat vector."""
        x = np.asarray(x, dtype=float)
        shared = x[:self.n_shared]
        rest = x[self.n_shared:]
        return shared, [rest[j * self.n_extra:(j + 1) * self.n_extra] for j in range(self.n_datasets)]

    def join(self, shared, extras) -> np.ndarray:
        return np.concatenate([np.asarray(shared, dtype=float)] + [np.asarray(e, dtype=float) for e in extras])

    def scales(self, x) -> ScaleFactors | None:
        if not self.relational:
            return None
        if self.fixed_scales is not None:
            return self.fixed_scales
        _, extras = self.split(x)
        return ScaleFactors([e[0] for e in extras], [e[1] for e in extras])

    def sm_params(self, x) -> list[np.ndarray]:
        if self.mode != "scale_plus_sm":
            return []
        _, extras = self.split(x)
        return [e[-self.n_sm:] for e in extras]

    def dataset_theta(self, x, j: int, with_sm: bool = True) -> np.ndarray:
        """Unconstrained parameters of series ``j``'s effective kernel."""
        shared, extras = self.split(x)
        if not self.relational:
            return shared
        if self.fixed_scales is not None:
            bv = [self.fixed_scales.log_b2[j], self.fixed_scales.log_v2[j]]
            sm = extras[j]
        else:
            bv, sm = extras[j][:2], extras[j][2:]
        parts = [bv, shared]
        if self.mode == "scale_plus_sm" and with_sm:
            parts.append(sm)
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _layout_for(expr, datasets, mode, scales, sm):
    m = len(datasets)
    if mode != "none" and scales is None:
        raise ValueError(f"mode {mode!r} needs scale factors")
    if scales is not None and len(scales) != m:
        raise ValueError("one (b, v) pair per dataset")
    q = 3
    if mode == "scale_plus_sm":
        if sm is None or len(sm) != m:
            raise ValueError("scale_plus_sm needs one spectral-mixture vector per dataset")
        q = len(np.asarray(sm[0])) // 3
    return Layout(expr, mode, m, q)


def joint_nll(expr: Kernel, shared_params, datasets: Sequence[Dataset], mode: str = "none",
              scales: ScaleFactors | None = None, sm: Sequence | None = None,
              jitter: JitterPolicy = DEFAULT_JITTER, with_sm: bool = True):
    """Total and per-series NLL of ``datasets`` under the shared kernel.

    ``shared_params`` is the shared kernel's unconstrained vector (or a
    ``ParamVector``); ``scales`` and ``sm`` supply the per-series extras the
    mode requires.  ``with_sm=False`` scores the shared part alone.
    """
    theta = getattr(shared_params, "values", shared_params)
    theta = np.asarray(theta, dtype=float)
    layout = _layout_for(expr, datasets, mode, scales, sm)
    extras = []
    for j in range(len(datasets)):
        e = []
        if layout.relational:
            e += [scales.log_b2[j], scales.log_v2[j]]
        if layout.mode == "scale_plus_sm":
            e += list(np.asarray(sm[j], dtype=float))
        extras.append(np.array(e))
    x = layout.join(theta, extras)
    eff = layout.effective(with_sm)
    per = np.array([nll(eff, layout.dataset_theta(x, j, with_sm), d, jitter) for j, d in enumerate(datasets)])
    return float(per.sum()), per


def joint_objective(layout: Layout, datasets: Sequence[Dataset], jitter: JitterPolicy = DEFAULT_JITTER):
    """``f(x) -> (total nll, gradient)`` over the flat vector of ``layout``.

    Numerically the sum of per-series ``nll_and_grad`` on the effective
    kernels, but the shared Gram matrix is built once per distinct input grid.
    """
    label = describe(layout.effective())
    keys = [d.X.tobytes() for d in datasets]
    sm_kernel = SpectralMixture(layout.q) if layout.n_sm else None
    ns = layout.n_shared

    def fun(x):
        shared, extras = layout.split(x)
        sc = layout.scales(x)
        total = 0.0
        g = np.zeros(layout.size)
        cache = {}
        for j, d in enumerate(datasets):
            if keys[j] not in cache:
                Ks, dKs = gram(layout.expr, shared, d.X, grad=True)
                cache[keys[j]] = Ks, np.reshape(dKs, (ns, Ks.size))
            Ks, dKs = cache[keys[j]]
            base = ns + j * layout.n_extra
            if layout.relational:
                b2, v2 = np.exp(sc.log_b2[j]), np.exp(sc.log_v2[j])
                K = b2 + v2 * Ks
            else:
                v2, K = 1.0, Ks
            if sm_kernel is not None:
                Ksm, dKsm = gram(sm_kernel, extras[j][-layout.n_sm:], d.X, grad=True)
                K = K + Ksm
            value, W, _ = nll_and_weights(K, d.y, jitter, label)
            w = W.ravel()
            total += value
            g[:ns] += 0.5 * v2 * (dKs @ w)
            k = base
            if layout.free_scales:
                g[k] += 0.5 * b2 * w.sum()
                g[k + 1] += 0.5 * v2 * (Ks.ravel() @ w)
                k += 2
            if sm_kernel is not None:
                g[k:k + layout.n_sm] += 0.5 * (np.reshape(dKsm, (layout.n_sm, Ksm.size)) @ w)
        return total, g

    return fun
