"""Sum-of-products normal form and grammar expansion of kernel expressions."""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass

from .kernels import (
    ChangePoint, ChangeWindow, Constant, Kernel, Linear, Periodic, Product,
    SquaredExp, Sum, WhiteNoise,
)
from .text import describe

__all__ = ["GrammarRules", "DEFAULT_GRAMMAR", "canonicalize", "summands", "expand", "dedup_key"]

PRODUCTIONS = ("add", "mul", "cp", "cw", "base", "const")


@dataclass(frozen=True)
class GrammarRules:
    """Production set over a base-kernel alphabet.

    Production names: ``add`` (S -> S + B), ``mul`` (S -> S × B),
    ``cp`` (S -> CP(S, S)), ``cw`` (S -> CW(S, S)), ``base`` (S -> B) and
    ``const`` (S -> C).
    """

    productions: tuple[str, ...] = PRODUCTIONS
    bases: tuple[type, ...] = (WhiteNoise, Constant, Linear, SquaredExp, Periodic)
    max_pair_summands: int = 4

    def __post_init__(self):
        unknown = set(self.productions) - set(PRODUCTIONS)
        if unknown:
            raise ValueError(f"unknown productions: {sorted(unknown)}")


DEFAULT_GRAMMAR = GrammarRules()


def _terms(expr: Kernel) -> list[tuple[Kernel, ...]]:
    if isinstance(expr, Sum):
        return [t for c in expr.terms for t in _terms(c)]
    if isinstance(expr, Product):
        out = [()]
        for c in expr.factors:
            out = [a + b for a in out for b in _terms(c)]
        return out
    if isinstance(expr, ChangePoint):
        return [(dataclasses.replace(expr, left=canonicalize(expr.left), right=canonicalize(expr.right)),)]
    if isinstance(expr, ChangeWindow):
        return [(dataclasses.replace(expr, inner=canonicalize(expr.inner), outer=canonicalize(expr.outer)),)]
    return [(expr,)]


def _product(factors):
    factors = sorted(factors, key=describe)
    return factors[0] if len(factors) == 1 else Product(tuple(factors))


def summands(expr: Kernel) -> list[Kernel]:
    """Maximal additive terms of the canonical form, sorted."""
    return sorted((_product(t) for t in _terms(expr)), key=describe)


def canonicalize(expr: Kernel) -> Kernel:
    """Flatten sums, distribute products over sums and sort children.

    Parameters carried on the nodes travel with them; a factor shared by
    several distributed terms appears once per term with the same values.
    """
    terms = summands(expr)
    return terms[0] if len(terms) == 1 else Sum(tuple(terms))


def dedup_key(expr: Kernel) -> str:
    return describe(canonicalize(expr))


def _add(s, b):
    return Sum((*s.terms, b)) if isinstance(s, Sum) else Sum((s, b))


def _mul(s, b):
    return Product((*s.factors, b)) if isinstance(s, Product) else Product((s, b))


def _rewrite(site: Kernel, grammar: GrammarRules, productions=None) -> list[Kernel]:
    prods = grammar.productions if productions is None else productions
    out = []
    for p in prods:
        if p == "add":
            out += [_add(site, B()) for B in grammar.bases if site != B()]
        elif p == "mul":
            out += [_mul(site, B()) for B in grammar.bases if site != B()]
        elif p == "cp":
            out.append(ChangePoint(site, site))
        elif p == "cw":
            out.append(ChangeWindow(site, site))
        elif p == "base":
            out += [B() for B in grammar.bases]
        elif p == "const":
            out.append(Constant())
    return out


def _splice(others, replacement):
    parts = list(others)
    if isinstance(replacement, Sum):
        parts += replacement.terms
    else:
        parts.append(replacement)
    return parts[0] if len(parts) == 1 else Sum(tuple(parts))


def expand(expr: Kernel, grammar: GrammarRules = DEFAULT_GRAMMAR) -> list[Kernel]:
    """One-step rewrites of ``expr``, deduplicated up to canonical form.

    Productions apply at the root, at every maximal summand, and (for
    ``mul`` only) at every pair of summands when there are at most
    ``grammar.max_pair_summands`` of them.  Nodes copied from ``expr`` keep
    their parameters; newly introduced base kernels are unbound.
    """
    candidates = list(_rewrite(expr, grammar))
    terms = summands(expr)
    if len(terms) > 1:
        for i, site in enumerate(terms):
            others = terms[:i] + terms[i + 1:]
            candidates += [_splice(others, r) for r in _rewrite(site, grammar)]
        if "mul" in grammar.productions and len(terms) <= grammar.max_pair_summands:
            for i, j in itertools.combinations(range(len(terms)), 2):
                others = [t for k, t in enumerate(terms) if k not in (i, j)]
                pair = Sum((terms[i], terms[j]))
                candidates += [_splice(others, Product((pair, B()))) for B in grammar.bases]

    seen = {dedup_key(expr)}
    out = []
    for c in candidates:
        key = dedup_key(c)
        if key not in seen:
            seen.add(key)
            out.append(c)
    return out
