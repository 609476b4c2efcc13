import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from relstat.grammar import DEFAULT_GRAMMAR, GrammarRules, canonicalize, dedup_key, expand, summands
from relstat.kernels import (
    ChangePoint, ChangeWindow, Constant, Linear, Periodic, Product, SpectralMixture,
    SquaredExp, Sum, WhiteNoise, bind, bound_params, gram, param_count,
)
from relstat.text import KernelSyntaxError, describe, parse_kernel

from kernel_factory import random_kernel, random_params

A, B, C = SquaredExp(), Periodic(), Linear()


class TestDescribeParse:
    def test_currency_kernel(self):
        k = ChangeWindow(Sum((SquaredExp(), ChangeWindow(Sum((WhiteNoise(), SquaredExp())), WhiteNoise()))), Constant())
        assert describe(k) == "CW(SE + CW(WN + SE, WN), CONST)"
        assert parse_kernel(describe(k)) == k

    def test_simple(self):
        assert describe(WhiteNoise()) == "WN"
        assert parse_kernel("SE + LIN") == Sum((SquaredExp(), Linear()))
        assert parse_kernel("CP(SE, PER × LIN)") == ChangePoint(SquaredExp(), Product((Periodic(), Linear())))

    def test_aliases_and_whitespace(self):
        assert parse_kernel("C*SE") == parse_kernel("CONST × SE")
        assert parse_kernel("  SM3+WN ") == Sum((SpectralMixture(3), WhiteNoise()))
        assert parse_kernel("(SE + PER) × LIN") == Product((Sum((A, B)), C))

    def test_precedence(self):
        assert parse_kernel("SE + PER × LIN") == Sum((A, Product((B, C))))

    def test_nested_sums_keep_shape(self):
        k = Sum((Sum((A, B)), C))
        assert describe(k) == "(SE + PER) + LIN"
        assert parse_kernel(describe(k)) == k

    @pytest.mark.parametrize("text, offset", [("SE +", 4), ("SE ++ PER", 4), ("CP(SE PER)", 6), ("SE)", 2)])
    def test_syntax_errors(self, text, offset):
        with pytest.raises(KernelSyntaxError) as err:
            parse_kernel(text)
        assert err.value.offset == offset

    def test_unknown_name(self):
        with pytest.raises(KernelSyntaxError, match="unknown"):
            parse_kernel("RBF + WN")

    def test_round_trip_random_trees(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            k = random_kernel(rng, 4)
            assert parse_kernel(describe(k)) == k


class TestCanonicalize:
    def test_distributes(self):
        k = Product((Sum((A, B)), C))
        # children sort by their text: "LIN × PER" < "LIN × SE"
        assert canonicalize(k) == Sum((Product((C, B)), Product((C, A))))
        assert summands(k) == [Product((C, B)), Product((C, A))]

    def test_flattens(self):
        assert canonicalize(Sum((Sum((A, B)), C))) == Sum((C, B, A))

    def test_inside_changepoints(self):
        k = ChangePoint(Sum((B, A)), WhiteNoise())
        assert canonicalize(k) == ChangePoint(Sum((B, A)), WhiteNoise())
        assert canonicalize(ChangePoint(Sum((A, B)), WhiteNoise())) == canonicalize(k)

    def test_preserves_values(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            k = bind(e := random_kernel(rng, 3), random_params(e, rng))
            c = canonicalize(k)
            x, y = rng.uniform(-2, 2, 100), rng.uniform(-2, 2, 100)
            K1 = np.diag(gram(k, bound_params(k), x, y))
            K2 = np.diag(gram(c, bound_params(c), x, y))
            assert_allclose(K2, K1, rtol=1e-12, atol=1e-12)

    def test_param_count_without_distribution(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            terms = [random_kernel(rng, 1) for _ in range(int(rng.integers(1, 5)))]
            k = terms[0] if len(terms) == 1 else Sum(tuple(terms))
            assert param_count(canonicalize(k)) == param_count(k)

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            c = canonicalize(random_kernel(rng, 3))
            assert canonicalize(c) == c


class TestExpand:
    def test_from_white_noise(self):
        keys = {dedup_key(k) for k in expand(WhiteNoise())}
        for text in ["WN + SE", "WN + LIN", "WN + PER", "WN + C", "WN × SE", "CP(WN, WN)", "CW(WN, WN)"]:
            assert dedup_key(parse_kernel(text)) in keys
        assert dedup_key(WhiteNoise()) not in keys

    def test_empty_grammar(self):
        assert expand(parse_kernel("SE + PER"), GrammarRules(productions=())) == []

    def test_summand_pair_product(self):
        k1, k2, k3 = SquaredExp(), Periodic(), Linear()
        keys = {dedup_key(k) for k in expand(Sum((k1, k2, k3)))}
        target = Sum((k2, Product((Sum((k1, k3)), SquaredExp()))))
        assert dedup_key(target) in keys

    def test_deduplicated_and_parseable(self):
        out = expand(parse_kernel("WN + SE × PER"))
        keys = [dedup_key(k) for k in out]
        assert len(keys) == len(set(keys))
        for k in out:
            assert parse_kernel(describe(k)) == k

    def test_copied_nodes_keep_params(self):
        k = bind(SquaredExp(), np.log([2.0, 3.0]))
        for cand in expand(k):
            for s in summands(cand):
                if s == SquaredExp():
                    assert s.params == pytest.approx((2.0, 3.0))

    def test_finite_and_default(self):
        assert len(expand(WhiteNoise(), DEFAULT_GRAMMAR)) == 14

    def test_unknown_production(self):
        with pytest.raises(ValueError):
            GrammarRules(productions=("add", "nope"))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_expansions_are_well_formed(seed):
    rng = np.random.default_rng(seed)
    k = random_kernel(rng, 2, sm=False)
    for cand in expand(k):
        assert param_count(cand) >= 1
        assert parse_kernel(describe(cand)) == cand
