"""The reference implementation itself, and the freshness of its frozen output."""

import math

import numpy as np
import pytest

import oracle


def test_frozen_cases_are_current():
    assert oracle.generate() == oracle.load()


def test_closed_forms():
    se = oracle.parse("SE")
    assert oracle.gram(se, [math.log(2.0), 0.0], [0.3], [0.3])[0, 0] == pytest.approx(2.0)
    cp = oracle.parse("CP(C, C)")
    # at the location both sigmoids are 1/2: 0.25 k1 + 0.25 k2
    theta = [0.5, math.log(3.0), math.log(4.0), math.log(8.0)]
    assert oracle.gram(cp, theta, [0.5], [0.5])[0, 0] == pytest.approx(0.25 * 4 + 0.25 * 8)
    wn = oracle.parse("WN")
    assert oracle.gram(wn, [0.0], [0.0, 1.0], [0.0, 1.0]).tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_scalar_density():
    tree = oracle.parse("WN")
    y, s2 = 0.7, 1.9
    # jitter is relative to the diagonal, so it rescales the variance
    var = s2 * (1 + oracle.JITTER)
    want = 0.5 * y**2 / var + 0.5 * math.log(var) + 0.5 * math.log(2 * math.pi)
    assert oracle.nll(tree, [math.log(s2)], [0.0], [y]) == pytest.approx(want, rel=1e-12)


def test_parser_precedence():
    assert oracle.parse("SE + PER × LIN") == ("+", [("SE",), ("x", [("PER",), ("LIN",)])])
    assert oracle.parse("(SE + PER) × SM2")[1][1] == ("SM", 2)
    assert len(oracle.transforms(oracle.parse("CW(SE, LIN)"))) == 3 + 2 + 2


def test_fixture_shape():
    cases = oracle.load()
    assert len(cases["density"]) == 100 and len(cases["gradient"]) == 100 and len(cases["decomposition"]) == 50
    assert all(2 <= len(c["x"]) <= 8 for c in cases["density"])
    assert np.isfinite([c["nll"] for c in cases["density"]]).all()
