"""Kernel expression trees and their evaluation.

A kernel expression is an immutable tree of base kernels (``WN``, ``C``,
``LIN``, ``SE``, ``PER``, ``SM{Q}``) combined with ``Sum``, ``Product``,
``ChangePoint`` and ``ChangeWindow`` nodes.  Parametric nodes may carry their
hyperparameters (natural values) in ``params``; that field is ignored by
equality and hashing so trees compare structurally.

Hyperparameters are optimized in an unconstrained space: positive quantities
are stored as logarithms, locations and offsets as-is.  The flat layout of the
unconstrained vector is a pre-order traversal: a node's own slots, then its
children left to right.

All base kernels act on the first input column only.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Kernel", "WhiteNoise", "Constant", "Linear", "SquaredExp", "Periodic",
    "SpectralMixture", "Sum", "Product", "ChangePoint", "ChangeWindow",
    "Slot", "ParamVector", "KernelError", "param_count", "param_slots",
    "eval_kernel", "eval_kernel_grad", "gram", "bind", "bound_params",
    "is_bound", "parametric_nodes", "spectral_density", "dominant_frequency",
]

LOG = "log"
IDENTITY = "identity"


class KernelError(ValueError):
    """Invalid parameters or inputs for a kernel expression."""


@dataclass(frozen=True)
class Kernel:
    """Base class of all expression nodes."""

    #: (slot name, transform) pairs owned by this node
    def own_slots(self) -> tuple[tuple[str, str], ...]:
        return ()

    @property
    def children(self) -> tuple[Kernel, ...]:
        return ()

    @cached_property
    def n_params(self) -> int:
        return len(self.own_slots()) + sum(c.n_params for c in self.children)

    @cached_property
    def _log_mask(self) -> np.ndarray:
        return np.array([s.transform == LOG for s in param_slots(self)], dtype=bool)

    def _eval(self, theta, xa, xb, grad):
        raise NotImplementedError

    def __str__(self) -> str:
        from .text import describe
        return describe(self)

    # operator sugar for building trees by hand
    def __add__(self, other: Kernel) -> Sum:
        return Sum((self, other))

    def __mul__(self, other: Kernel) -> Product:
        return Product((self, other))


def _pdiff(xa, xb):
    return xa[:, None] - xb[None, :]


# ---------------------------------------------------------------------------
# base kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WhiteNoise(Kernel):
    params: tuple | None = field(default=None, compare=False, repr=False)

    def own_slots(self):
        return (("variance", LOG),)

    def _eval(self, theta, xa, xb, grad):
        K = np.exp(theta[0]) * (xa[:, None] == xb[None, :])
        return K, [K] if grad else None


@dataclass(frozen=True)
class Constant(Kernel):
    params: tuple | None = field(default=None, compare=False, repr=False)

    def own_slots(self):
        return (("variance", LOG),)

    def _eval(self, theta, xa, xb, grad):
        K = np.full((xa.size, xb.size), np.exp(theta[0]))
        return K, [K] if grad else None


@dataclass(frozen=True)
class Linear(Kernel):
    """``s2 * (x - offset) * (x' - offset)``."""

    params: tuple | None = field(default=None, compare=False, repr=False)

    def own_slots(self):
        return (("variance", LOG), ("offset", IDENTITY))

    def _eval(self, theta, xa, xb, grad):
        s2, c = np.exp(theta[0]), theta[1]
        da, db = xa - c, xb - c
        K = s2 * np.outer(da, db)
        if not grad:
            return K, None
        return K, [K, -s2 * (da[:, None] + db[None, :])]


@dataclass(frozen=True)
class SquaredExp(Kernel):
    """``s2 * exp(-(x - x')^2 / (2 l^2))``."""

    params: tuple | None = field(default=None, compare=False, repr=False)

    def own_slots(self):
        return (("variance", LOG), ("lengthscale", LOG))

    def _eval(self, theta, xa, xb, grad):
        s2, ell = np.exp(theta[0]), np.exp(theta[1])
        r2 = _pdiff(xa, xb) ** 2 / ell**2
        K = s2 * np.exp(-0.5 * r2)
        if not grad:
            return K, None
        return K, [K, K * r2]


@dataclass(frozen=True)
class Periodic(Kernel):
    """``s2 * exp(-2 sin^2(pi (x - x') / p) / l^2)``."""

    params: tuple | None = field(default=None, compare=False, repr=False)

    def own_slots(self):
        return (("variance", LOG), ("lengthscale", LOG), ("period", LOG))

    def _eval(self, theta, xa, xb, grad):
        s2, ell, period = np.exp(theta[:3])
        u = np.pi * _pdiff(xa, xb) / period
        s = np.sin(u)
        K = s2 * np.exp(-2.0 * s**2 / ell**2)
        if not grad:
            return K, None
        return K, [K, K * 4.0 * s**2 / ell**2, K * 2.0 * np.sin(2.0 * u) * u / ell**2]


@dataclass(frozen=True)
class SpectralMixture(Kernel):
    """Q-component spectral mixture on one input dimension.

    Slots per component: weight ``w``, frequency ``mu`` and spectral
    variance ``v``; ``k(tau) = sum_q w exp(-2 pi^2 tau^2 v) cos(2 pi tau mu)``.
    """

    q: int = 1
    params: tuple | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if int(self.q) < 1:
            raise KernelError(f"spectral mixture needs q >= 1, got {self.q}")

    def own_slots(self):
        out = []
        for i in range(self.q):
            out += [(f"weight_{i}", LOG), (f"frequency_{i}", LOG), (f"spectral_variance_{i}", LOG)]
        return tuple(out)

    def _eval(self, theta, xa, xb, grad):
        tau = _pdiff(xa, xb)
        K = np.zeros_like(tau)
        grads = [] if grad else None
        for w, mu, v in np.exp(theta.reshape(self.q, 3)):
            env = np.exp(-2.0 * np.pi**2 * tau**2 * v)
            arg = 2.0 * np.pi * tau * mu
            term = w * env * np.cos(arg)
            K += term
            if grad:
                grads += [term, -w * env * np.sin(arg) * arg, term * (-2.0 * np.pi**2 * tau**2 * v)]
        return K, grads


def spectral_density(sm_params, f) -> np.ndarray:
    """Power spectral density of a spectral mixture at frequencies ``f``.

    ``sm_params`` are natural ``(w, mu, v)`` triples, flattened.  The density
    is the symmetric Gaussian mixture ``sum_q w/2 [N(f; mu, v) + N(f; -mu, v)]``.
    """
    w, mu, v = np.asarray(sm_params, dtype=float).reshape(-1, 3).T
    f = np.asarray(f, dtype=float)[..., None]
    norm = w / (2.0 * np.sqrt(2.0 * np.pi * v))
    dens = norm * (np.exp(-0.5 * (f - mu) ** 2 / v) + np.exp(-0.5 * (f + mu) ** 2 / v))
    return dens.sum(axis=-1)


def dominant_frequency(sm_params) -> float:
    """Non-negative frequency where the mixture's spectral density peaks."""
    w, mu, v = np.asarray(sm_params, dtype=float).reshape(-1, 3).T
    top = float(np.max(mu + 4.0 * np.sqrt(v)))
    f = np.union1d(np.linspace(0.0, top, 4097), mu)
    return float(f[np.argmax(spectral_density(sm_params, f))])


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sum(Kernel):
    terms: tuple[Kernel, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(self.terms) < 2:
            raise KernelError("Sum needs at least two children")

    @property
    def children(self):
        return self.terms

    def _eval(self, theta, xa, xb, grad):
        K = 0.0
        grads = [] if grad else None
        i = 0
        for c in self.terms:
            Kc, gc = c._eval(theta[i:i + c.n_params], xa, xb, grad)
            i += c.n_params
            K = K + Kc
            if grad:
                grads += gc
        return K, grads


@dataclass(frozen=True)
class Product(Kernel):
    factors: tuple[Kernel, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if len(self.factors) < 2:
            raise KernelError("Product needs at least two children")

    @property
    def children(self):
        return self.factors

    def _eval(self, theta, xa, xb, grad):
        mats, subgrads = [], []
        i = 0
        for c in self.factors:
            Kc, gc = c._eval(theta[i:i + c.n_params], xa, xb, grad)
            i += c.n_params
            mats.append(Kc)
            subgrads.append(gc)
        K = mats[0]
        for m in mats[1:]:
            K = K * m
        if not grad:
            return K, None
        grads = []
        for j, gc in enumerate(subgrads):
            if not gc:
                continue
            rest = 1.0
            for k, m in enumerate(mats):
                if k != j:
                    rest = rest * m
            grads += [g * rest for g in gc]
        return K, grads


def _blend(wa, wb, dwa, dwb, left, right, xa, xb, theta, grad):
    """``wa wb' K1 + (1 - wa)(1 - wb') K2`` and its derivatives.

    ``dwa``/``dwb`` hold the derivatives of the weights w.r.t. the node's own
    slots.
    """
    K1, g1 = left._eval(theta[:left.n_params], xa, xb, grad)
    K2, g2 = right._eval(theta[left.n_params:], xa, xb, grad)
    ca, cb = 1.0 - wa, 1.0 - wb
    W1 = wa[:, None] * wb[None, :]
    W2 = ca[:, None] * cb[None, :]
    K = W1 * K1 + W2 * K2
    if not grad:
        return K, None
    own = []
    for da, db in zip(dwa, dwb):
        dW1 = da[:, None] * wb[None, :] + wa[:, None] * db[None, :]
        dW2 = -(da[:, None] * cb[None, :] + ca[:, None] * db[None, :])
        own.append(dW1 * K1 + dW2 * K2)
    return K, own + [W1 * g for g in g1] + [W2 * g for g in g2]


@dataclass(frozen=True)
class ChangePoint(Kernel):
    """``CP(k1, k2)``: ``k2`` left of the location, ``k1`` right of it.

    The sigmoid ``1 / (1 + exp(-s (x - location)))`` tends to 1 for inputs
    well past the location.
    """

    left: Kernel
    right: Kernel
    params: tuple | None = field(default=None, compare=False, repr=False)

    def own_slots(self):
        return (("location", IDENTITY), ("steepness", LOG))

    @property
    def children(self):
        return (self.left, self.right)

    def _eval(self, theta, xa, xb, grad):
        loc, s = theta[0], np.exp(theta[1])
        wa, wb = expit(s * (xa - loc)), expit(s * (xb - loc))
        dwa = dwb = ()
        if grad:
            sa, sb = wa * (1 - wa), wb * (1 - wb)
            dwa = (-s * sa, s * (xa - loc) * sa)
            dwb = (-s * sb, s * (xb - loc) * sb)
        return _blend(wa, wb, dwa, dwb, self.left, self.right, xa, xb, theta[2:], grad)


@dataclass(frozen=True)
class ChangeWindow(Kernel):
    """``CW(inner, outer)``: ``inner`` inside ``(start, start + width)``.

    The window weight is ``s1(x) (1 - s2(x))`` with sigmoids at both edges;
    ``outer`` receives the complementary weight.
    """

    inner: Kernel
    outer: Kernel
    params: tuple | None = field(default=None, compare=False, repr=False)

    def own_slots(self):
        return (("location", IDENTITY), ("width", LOG), ("steepness", LOG))

    @property
    def children(self):
        return (self.inner, self.outer)

    @staticmethod
    def _weight(x, l1, width, s, grad):
        l2 = l1 + width
        s1, s2 = expit(s * (x - l1)), expit(s * (x - l2))
        w = s1 * (1 - s2)
        if not grad:
            return w, ()
        p1, p2 = s1 * (1 - s1), s2 * (1 - s2)
        d_loc = -s * p1 * (1 - s2) + s1 * s * p2
        d_width = s1 * s * p2 * width
        d_steep = s * (x - l1) * p1 * (1 - s2) - s1 * s * (x - l2) * p2
        return w, (d_loc, d_width, d_steep)

    def _eval(self, theta, xa, xb, grad):
        l1, width, s = theta[0], np.exp(theta[1]), np.exp(theta[2])
        wa, dwa = self._weight(xa, l1, width, s, grad)
        wb, dwb = self._weight(xb, l1, width, s, grad)
        return _blend(wa, wb, dwa, dwb, self.inner, self.outer, xa, xb, theta[3:], grad)


# ---------------------------------------------------------------------------
# parameter bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Slot:
    path: tuple[int, ...]
    name: str
    transform: str


def _walk(expr: Kernel, path=()) -> Iterator[tuple[tuple[int, ...], Kernel]]:
    yield path, expr
    for i, c in enumerate(expr.children):
        yield from _walk(c, path + (i,))


def parametric_nodes(expr: Kernel) -> list[tuple[tuple[int, ...], Kernel]]:
    """Nodes owning slots, in parameter-vector order."""
    return [(p, n) for p, n in _walk(expr) if n.own_slots()]


def param_slots(expr: Kernel) -> tuple[Slot, ...]:
    return tuple(Slot(p, name, tr) for p, n in parametric_nodes(expr) for name, tr in n.own_slots())


def param_count(expr: Kernel) -> int:
    return expr.n_params


def _to_natural(values, transforms):
    out = np.array(values, dtype=float)
    logs = np.array([t == LOG for t in transforms], dtype=bool)
    with np.errstate(over="ignore"):
        out[logs] = np.exp(out[logs])
    return out


def _to_unconstrained(values, transforms):
    out = np.array(values, dtype=float)
    logs = np.array([t == LOG for t in transforms], dtype=bool)
    with np.errstate(divide="ignore"):
        out[logs] = np.log(out[logs])
    return out


@dataclass(frozen=True)
class ParamVector:
    """Unconstrained hyperparameters paired with the slots they fill."""

    values: np.ndarray
    slots: tuple[Slot, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != len(self.slots):
            raise KernelError(f"{v.size} values for {len(self.slots)} slots")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.slots)

    @classmethod
    def for_expr(cls, expr: Kernel, values) -> ParamVector:
        return cls(np.asarray(values, dtype=float), param_slots(expr))

    @classmethod
    def from_natural(cls, expr: Kernel, natural) -> ParamVector:
        slots = param_slots(expr)
        nat = np.asarray(natural, dtype=float).ravel()
        if nat.size != len(slots):
            raise KernelError(f"{nat.size} values for {len(slots)} slots")
        return cls(_to_unconstrained(nat, [s.transform for s in slots]), slots)

    def natural(self) -> np.ndarray:
        return _to_natural(self.values, [s.transform for s in self.slots])


def _theta(expr: Kernel, params) -> np.ndarray:
    theta = params.values if isinstance(params, ParamVector) else np.asarray(params, dtype=float).ravel()
    if theta.size != expr.n_params:
        raise KernelError(f"expression {expr} takes {expr.n_params} parameters, got {theta.size}")
    with np.errstate(over="ignore"):
        nat = np.where(expr._log_mask, np.exp(theta), theta)
    if not np.all(np.isfinite(nat)):
        raise KernelError(f"non-finite parameter for {expr}: {nat}")
    return theta


def _column(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1)
    if x.ndim == 1:
        return x
    return x[:, 0]


def gram(expr: Kernel, params, xa, xb=None, grad: bool = False):
    """Covariance matrix between row sets ``xa`` and ``xb``.

    ``xa``/``xb`` are 1-D arrays of inputs or (N, D) matrices whose first
    column is used.  With ``grad=True`` also returns the list of derivative
    matrices, one per unconstrained slot.
    """
    theta = _theta(expr, params)
    xa = _column(xa)
    xb = xa if xb is None else _column(xb)
    K, g = expr._eval(theta, xa, xb, grad)
    K = np.broadcast_to(K, (xa.size, xb.size)).astype(float, copy=True)
    return (K, g) if grad else K


def _point(x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise KernelError("a single input point must be a vector")
    return x


def eval_kernel(expr: Kernel, params, x, x2) -> float:
    x, x2 = _point(x), _point(x2)
    if x.shape != x2.shape:
        raise KernelError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    return float(gram(expr, params, x[:1], x2[:1])[0, 0])


def eval_kernel_grad(expr: Kernel, params, x, x2) -> np.ndarray:
    x, x2 = _point(x), _point(x2)
    if x.shape != x2.shape:
        raise KernelError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    _, g = gram(expr, params, x[:1], x2[:1], grad=True)
    return np.array([float(np.broadcast_to(m, (1, 1))[0, 0]) for m in g])


# ---------------------------------------------------------------------------
# carrying parameters on the tree
# ---------------------------------------------------------------------------

def _rebuild(node: Kernel, children: Sequence[Kernel]) -> Kernel:
    if isinstance(node, Sum):
        return Sum(tuple(children))
    if isinstance(node, Product):
        return Product(tuple(children))
    if isinstance(node, ChangePoint):
        return dataclasses.replace(node, left=children[0], right=children[1])
    if isinstance(node, ChangeWindow):
        return dataclasses.replace(node, inner=children[0], outer=children[1])
    return node


def bind(expr: Kernel, params) -> Kernel:
    """Copy of ``expr`` whose parametric nodes carry natural values from ``params``."""
    theta = params.values if isinstance(params, ParamVector) else np.asarray(params, dtype=float)
    if theta.size != expr.n_params:
        raise KernelError(f"expression {expr} takes {expr.n_params} parameters, got {theta.size}")
    it = iter(range(theta.size))

    def go(node):
        k = len(node.own_slots())
        idx = [next(it) for _ in range(k)]
        kids = [go(c) for c in node.children]
        out = _rebuild(node, kids)
        if k:
            nat = _to_natural(theta[idx], [t for _, t in node.own_slots()])
            out = dataclasses.replace(out, params=tuple(float(v) for v in nat))
        return out

    return go(expr)


def is_bound(expr: Kernel) -> bool:
    return all(n.params is not None for _, n in parametric_nodes(expr))


def bound_params(expr: Kernel) -> ParamVector:
    """Unconstrained vector gathered from a fully bound expression."""
    slots = param_slots(expr)
    nat = []
    for _, n in parametric_nodes(expr):
        if n.params is None:
            raise KernelError(f"unbound node {n!r} in {expr}")
        nat += list(n.params)
    return ParamVector(_to_unconstrained(nat, [s.transform for s in slots]), slots)
