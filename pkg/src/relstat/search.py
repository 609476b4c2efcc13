"""Greedy kernel-structure search scored by BIC.

Three drivers share one loop:

* ``ckl_search``: one series, one kernel.
* ``rkl_search``: one kernel shared by all series, each with its own bias and
  scale (``b_j^2 + v_j^2 k``).
* ``srkl_search``: the shared, scaled kernel plus a per-series spectral
  mixture.  Depths are ranked by the BIC of the shared part alone, and every
  depth's winner is kept.

Each search starts from ``WN``; depth ``d`` holds the candidates reached by
``d`` expansions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gp import Dataset, GPPosterior, SingularCovarianceError, nll_and_grad, posterior_components, predict
from .grammar import DEFAULT_GRAMMAR, GrammarRules, expand, summands
from .kernels import (
    Constant, Kernel, ParamVector, Product, SpectralMixture, WhiteNoise,
    bind, bound_params,
)
from .optimize import OptimizationError, OptimizeConfig, optimize_model
from .relational import Layout, ScaleFactors, joint_nll
from .text import describe

__all__ = [
    "bic", "joint_nll", "ModelCandidate", "DepthRecord", "SearchTrace",
    "SearchFailed", "evaluate_candidate", "ckl_search", "rkl_search",
    "srkl_search", "overfit_diagnostic", "candidate_predict",
    "candidate_components",
]

log = logging.getLogger(__name__)


class SearchFailed(RuntimeError):
    pass


def bic(total_nll: float, param_count: int, n_points: int) -> float:
    """``2 nll + P ln |D|``."""
    if n_points < 1:
        raise ValueError(f"BIC needs at least one data point, got {n_points}")
    if param_count < 0:
        raise ValueError("negative parameter count")
    return 2.0 * float(total_nll) + param_count * np.log(n_points)


@dataclass
class ModelCandidate:
    """An optimized kernel and its scores.

    ``expr`` carries the optimized shared hyperparameters on its nodes;
    ``x`` is the full optimization vector described by ``layout``.
    """

    expr: Kernel
    layout: Layout
    x: np.ndarray
    per_dataset_nll: np.ndarray
    total_nll: float
    n_params: int
    n_points: int
    bic: float
    jitter: float
    shared_nll: float | None = None
    selection_params: int | None = None
    selection_bic: float | None = None
    converged: bool = True

    @property
    def mode(self) -> str:
        return self.layout.mode

    @property
    def description(self) -> str:
        return describe(self.expr)

    @property
    def params(self) -> ParamVector:
        return bound_params(self.expr)

    @property
    def scales(self) -> ScaleFactors | None:
        return self.layout.scales(self.x)

    @property
    def sm(self) -> list[np.ndarray]:
        return self.layout.sm_params(self.x)

    @property
    def score(self) -> float:
        return self.bic if self.selection_bic is None else self.selection_bic

    def rank_key(self):
        p = self.n_params if self.selection_params is None else self.selection_params
        return (self.score, p, self.description)

    def extras(self) -> list[np.ndarray]:
        return self.layout.split(self.x)[1]


@dataclass
class DepthRecord:
    depth: int
    candidates: list[ModelCandidate]
    best: ModelCandidate
    failures: list[str] = field(default_factory=list)


@dataclass
class SearchTrace:
    mode: str
    depths: list[DepthRecord] = field(default_factory=list)
    aborted: bool = False

    @property
    def bests(self) -> list[ModelCandidate]:
        return [d.best for d in self.depths]

    @property
    def nll_shared(self) -> list[float]:
        """Per-depth total NLL of the winner's shared part (SRKL)."""
        return [d.best.shared_nll if d.best.shared_nll is not None else d.best.total_nll for d in self.depths]

    @property
    def nll_full(self) -> list[float]:
        return [d.best.total_nll for d in self.depths]

    @property
    def best(self) -> ModelCandidate:
        """Winner across depths by the same score that picks each depth's winner
        (the shared-kernel BIC for SRKL)."""
        return min(self.bests, key=ModelCandidate.rank_key)


def evaluate_candidate(layout: Layout, x, datasets: Sequence[Dataset], config: OptimizeConfig) -> ModelCandidate:
    """Score an optimized vector: per-series NLL, parameter count and BIC."""
    eff = layout.effective()
    per, jit = [], []
    for j, d in enumerate(datasets):
        v, _, amount = nll_and_grad(eff, layout.dataset_theta(x, j), d, config.jitter)
        per.append(v)
        jit.append(amount)
    per = np.array(per)
    n_points = sum(len(d) for d in datasets)
    shared, _ = layout.split(x)
    expr = bind(layout.expr, shared)
    total = float(per.sum())
    cand = ModelCandidate(expr, layout, np.array(x, dtype=float), per, total, layout.size, n_points,
                          bic(total, layout.size, n_points), float(max(jit)))
    if layout.mode == "scale_plus_sm":
        scored = Layout(layout.expr, "scale_factors", layout.n_datasets, layout.q, layout.fixed_scales)
        try:
            s_total, _ = joint_nll(layout.expr, shared, datasets, "scale_factors", layout.scales(x),
                                   jitter=config.jitter)
        except SingularCovarianceError:
            s_total = np.inf
        cand.shared_nll = s_total
        cand.selection_params = scored.size
        cand.selection_bic = bic(s_total, scored.size, n_points) if np.isfinite(s_total) else np.inf
    return cand


def _fit(expr, datasets, mode, config, q, fixed_scales, init_extra):
    res, layout = optimize_model(expr, datasets, mode, config, q, fixed_scales, init_extra=init_extra)
    cand = evaluate_candidate(layout, res.x, datasets, config)
    cand.converged = res.converged
    return cand


def _greedy(datasets, mode, grammar, max_depth, config, q=3, fixed_scales=None) -> SearchTrace:
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    if not datasets:
        raise ValueError("no datasets")
    trace = SearchTrace(mode)
    frontier = [WhiteNoise()]
    parent = None
    for depth in range(max_depth + 1):
        if depth > 0:
            frontier = expand(parent.expr, grammar)
            if not frontier:
                break
        init_extra = parent.extras() if parent is not None and parent.layout.n_extra else None
        scored, failures = [], []
        for expr in frontier:
            try:
                scored.append(_fit(expr, datasets, mode, config, q, fixed_scales, init_extra))
            except (OptimizationError, SingularCovarianceError) as err:
                failures.append(f"{describe(expr)}: {err}")
        scored = [c for c in scored if np.isfinite(c.score)] or scored
        if not scored:
            if depth == 0:
                raise SearchFailed(f"no candidate could be fitted: {'; '.join(failures)}")
            log.warning("all %d candidates failed at depth %d; stopping", len(frontier), depth)
            trace.aborted = True
            break
        best = min(scored, key=ModelCandidate.rank_key)
        trace.depths.append(DepthRecord(depth, scored, best, failures))
        log.info("depth %d: %s (score %.3f) from %d candidates", depth, best.description, best.score, len(scored))
        parent = best
    return trace


def ckl_search(dataset: Dataset, grammar: GrammarRules = DEFAULT_GRAMMAR, max_depth: int = 2,
               config: OptimizeConfig = OptimizeConfig()) -> tuple[ModelCandidate, SearchTrace]:
    trace = _greedy([dataset], "none", grammar, max_depth, config)
    return trace.best, trace


def rkl_search(datasets: Sequence[Dataset], grammar: GrammarRules = DEFAULT_GRAMMAR, max_depth: int = 2,
               config: OptimizeConfig = OptimizeConfig(),
               fixed_scales: ScaleFactors | None = None) -> tuple[ModelCandidate, SearchTrace]:
    """Shared-kernel search; ``fixed_scales`` freezes ``(b_j, v_j)``."""
    trace = _greedy(list(datasets), "scale_factors", grammar, max_depth, config, fixed_scales=fixed_scales)
    return trace.best, trace


def srkl_search(datasets: Sequence[Dataset], grammar: GrammarRules = DEFAULT_GRAMMAR, max_depth: int = 2,
                q: int = 3, config: OptimizeConfig = OptimizeConfig()) -> tuple[list[ModelCandidate], SearchTrace]:
    """Shared plus distinctive search.

    Returns the per-depth winners (one per depth, depth 0 included) and the
    trace; ``trace.best`` is the winner with the lowest shared-kernel BIC.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    trace = _greedy(list(datasets), "scale_plus_sm", grammar, max_depth, config, q=q)
    return trace.bests, trace


def overfit_diagnostic(trace, nll_full=None) -> int | None:
    """First depth where the shared NLL still falls but the full NLL rises.

    Accepts a ``SearchTrace`` or two sequences ``(nll_shared, nll_full)``.
    """
    if nll_full is None:
        shared, full = list(trace.nll_shared), list(trace.nll_full)
    else:
        shared, full = list(trace), list(nll_full)
    if len(shared) != len(full):
        raise ValueError(f"sequence lengths differ: {len(shared)} vs {len(full)}")
    if len(shared) == 1:
        shared, full = shared * 2, full * 2
    for t in range(1, len(shared)):
        if shared[t] < shared[t - 1] and full[t] > full[t - 1]:
            return t
    return None


# ---------------------------------------------------------------------------
# using a fitted candidate
# ---------------------------------------------------------------------------

def _effective(cand: ModelCandidate, j: int):
    return cand.layout.effective(), cand.layout.dataset_theta(cand.x, j)


def candidate_predict(cand: ModelCandidate, j: int, train: Dataset, X_star, jitter=None) -> GPPosterior:
    """Posterior of series ``j`` under the candidate's effective kernel."""
    eff, theta = _effective(cand, j)
    kw = {} if jitter is None else {"jitter": jitter}
    return predict(eff, theta, train, X_star, **kw)


def candidate_components(cand: ModelCandidate, j: int, train: Dataset, X_star, jitter=None):
    """Posterior decomposition of series ``j``.

    Parts are the canonical summands of the shared kernel (scaled by
    ``v_j^2`` in relational modes), then the bias ``b_j^2`` and the
    distinctive spectral mixture when present.
    """
    layout = cand.layout
    eff, theta = _effective(cand, j)
    parts = []
    if not layout.relational:
        for s in summands(cand.expr):
            parts.append((describe(s), s, bound_params(s)))
    else:
        scales = cand.scales
        log_b2, log_v2 = scales.log_b2[j], scales.log_v2[j]
        for s in summands(cand.expr):
            parts.append((describe(s), Product((Constant(), s)), np.r_[log_v2, bound_params(s).values]))
        if np.isfinite(log_b2):
            parts.append(("bias", Constant(), np.array([log_b2])))
        if layout.mode == "scale_plus_sm":
            parts.append((f"SM{layout.q} (distinctive)", SpectralMixture(layout.q), cand.sm[j]))
    kw = {} if jitter is None else {"jitter": jitter}
    return posterior_components(eff, theta, parts, train, X_star, **kw)
