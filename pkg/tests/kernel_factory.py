"""Random kernel trees and parameters shared by the test modules."""

import re

import numpy as np

from relstat.kernels import (
    ChangePoint, ChangeWindow, Constant, Linear, ParamVector, Periodic, Product,
    SpectralMixture, SquaredExp, Sum, WhiteNoise, parametric_nodes,
)

BASES = (WhiteNoise, Constant, Linear, SquaredExp, Periodic)

# natural-value ranges per (node type, slot name); all inputs live in [-2, 2]
RANGES = {
    "variance": (0.5, 2.0),
    "lengthscale": (0.6, 2.5),
    "period": (1.0, 3.0),
    "offset": (-1.0, 1.0),
    "location": (-1.0, 1.0),
    "steepness": (0.5, 3.0),
    "width": (0.5, 2.0),
    "weight": (0.3, 1.5),
    "frequency": (0.05, 0.8),
    "spectral_variance": (0.01, 0.3),
}


def random_base(rng, sm=True):
    kinds = list(BASES) + ([SpectralMixture] if sm else [])
    cls = kinds[rng.integers(len(kinds))]
    if cls is SpectralMixture:
        return SpectralMixture(int(rng.integers(1, 3)))
    return cls()


def random_kernel(rng, depth=3, sm=True):
    """A random tree with at most ``depth`` operator levels."""
    if depth == 0 or rng.random() < 0.3:
        return random_base(rng, sm)
    op = rng.integers(4)
    a, b = random_kernel(rng, depth - 1, sm), random_kernel(rng, depth - 1, sm)
    if op == 0:
        return Sum((a, b))
    if op == 1:
        return Product((a, b))
    if op == 2:
        return ChangePoint(a, b)
    return ChangeWindow(a, b)


def random_params(expr, rng) -> ParamVector:
    natural = []
    for _, node in parametric_nodes(expr):
        for name, _ in node.own_slots():
            lo, hi = RANGES[re.sub(r"_\d+$", "", name)]
            natural.append(rng.uniform(lo, hi))
    return ParamVector.from_natural(expr, natural)


def with_noise(expr, noise=0.2):
    """``expr + WN`` so Gram matrices are well conditioned."""
    return Sum((expr, WhiteNoise(params=(noise,))))


def noisy_params(expr, rng, noise=0.2) -> ParamVector:
    p = random_params(expr, rng)
    return ParamVector.for_expr(with_noise(expr), np.r_[p.values, np.log(noise)])


# one tree per operator and base kernel, so sweeps always cover all of them
COVERAGE = (
    WhiteNoise(), Constant(), Linear(), SquaredExp(), Periodic(), SpectralMixture(2),
    Sum((SquaredExp(), Periodic())),
    Product((Linear(), SquaredExp())),
    ChangePoint(SquaredExp(), Linear()),
    ChangeWindow(Periodic(), SquaredExp()),
    ChangeWindow(Sum((SquaredExp(), WhiteNoise())), Constant()),
    Product((ChangePoint(SpectralMixture(1), Constant()), SquaredExp())),
)
