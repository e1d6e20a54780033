import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import (
    cvejic_naive,
    entropy_naive,
    mi_naive,
    piella_naive,
    q0_naive,
    qabf_naive,
)

from dipfuse.imagecore import Image
from dipfuse.metrics import (
    cvejic_q,
    entropy,
    evaluate_all,
    mutual_information_metric,
    petrovic_qabf,
    petrovic_qabf_flagged,
    piella_q,
    qabf_self_constant,
    uiqi_window,
)


def c0_by_hand():
    qg = 0.9994 / (1 + math.exp(-15 * (1 - 0.5)))
    qa = 0.9879 / (1 + math.exp(-22 * (1 - 0.8)))
    return qg * qa


def rand_image(seed, shape=(16, 16)):
    return Image(np.random.default_rng(seed).random(shape))


def test_self_constant_value():
    assert qabf_self_constant() == pytest.approx(c0_by_hand(), abs=1e-15)
    assert round(qabf_self_constant(), 4) == 0.9748


class TestUIQI:
    def test_identical(self):
        x = [0.1, 0.5, 0.3, 0.9]
        assert uiqi_window(x, x) == pytest.approx(1.0, abs=1e-15)

    def test_anticorrelated(self):
        x = np.array([0.2, 0.4, 0.6, 0.8])
        y = -x + 2 * x.mean()
        # same mean and variance, sigma_xy = -sigma_x^2 => Q0 = -2 mu^2 / (2 mu^2) = -1
        mx, my = x.mean(), y.mean()
        vx = np.sum((x - mx) ** 2) / 3
        expected = -1.0 * (2 * mx * my) / (mx ** 2 + my ** 2) * (2 * vx) / (2 * vx)
        assert uiqi_window(x, y) == pytest.approx(expected, abs=1e-12)
        assert uiqi_window(x, y) == pytest.approx(-1.0, abs=1e-12)

    def test_constant_equal(self):
        assert uiqi_window([0.3] * 4, [0.3] * 4) == 1.0

    def test_constant_different(self):
        assert uiqi_window([0.3] * 4, [0.4] * 4) == 0.0

    def test_one_constant(self):
        assert uiqi_window([0.3] * 4, [0.1, 0.2, 0.3, 0.4]) == 0.0

    @settings(max_examples=50)
    @given(arrays(np.float64, 9, elements=st.floats(0, 1)),
           arrays(np.float64, 9, elements=st.floats(0, 1)))
    def test_matches_naive(self, x, y):
        got = uiqi_window(x, y)
        ref = q0_naive(x.tolist(), y.tolist())
        assert got == pytest.approx(ref, rel=1e-9, abs=1e-12)
        assert -1 - 1e-12 <= got <= 1 + 1e-12


class TestPetrovic:
    @pytest.mark.parametrize("seed", range(3))
    def test_self_fusion_constant(self, seed):
        a = rand_image(seed, (20, 24))
        assert petrovic_qabf(a, a, a) == pytest.approx(c0_by_hand(), abs=1e-12)

    def test_constant_sources_flagged(self):
        a = Image(np.full((8, 8), 0.2))
        b = Image(np.full((8, 8), 0.7))
        assert petrovic_qabf_flagged(a, b, rand_image(1, (8, 8))) == (0.0, True)

    def test_swap(self):
        a, b, f = rand_image(1), rand_image(2), rand_image(3)
        assert petrovic_qabf(a, b, f) == petrovic_qabf(b, a, f)

    def test_vertical_edge_orientation(self):
        # sx == 0 everywhere for a horizontal step: alpha = pi/2 in both images
        x = np.zeros((8, 8))
        x[4:] = 1.0
        a = Image(x)
        assert petrovic_qabf(a, a, a) == pytest.approx(c0_by_hand(), abs=1e-12)

    def test_too_small(self):
        with pytest.raises(ValueError):
            petrovic_qabf(*(Image(np.zeros((2, 5))),) * 3)


class TestMI:
    def test_four_codes(self):
        a = Image(np.array([[0, 1], [2, 3]]) / 255)
        b = Image(np.full((2, 2), 0.5))
        assert mutual_information_metric(a, b, a) == pytest.approx(2.0, abs=1e-15)

    def test_all_constant(self):
        c = Image(np.full((4, 4), 0.25))
        assert mutual_information_metric(c, c, c) == 0.0

    def test_swap(self):
        a, b, f = rand_image(4), rand_image(5), rand_image(6)
        assert mutual_information_metric(a, b, f) == mutual_information_metric(b, a, f)

    def test_entropy(self):
        a = rand_image(7, (10, 10))
        assert entropy(a) == pytest.approx(entropy_naive(a.pixels), abs=1e-12)


class TestLocalIndices:
    def test_piella_identity(self):
        a = rand_image(8)
        assert piella_q(a, a, a) == pytest.approx(1.0, abs=1e-12)

    def test_piella_informative_source_selected(self):
        a = rand_image(9)
        b = Image(np.full((16, 16), 0.4))
        assert piella_q(a, b, a) == pytest.approx(1.0, abs=1e-12)

    def test_cvejic_identity(self):
        a = rand_image(10)
        assert cvejic_q(a, a, a) == pytest.approx(1.0, abs=1e-12)

    def test_cvejic_uncorrelated_second_source(self):
        a = Image(np.clip(np.linspace(0, 1, 256).reshape(16, 16) + 0.0, 0, 1))
        b = rand_image(11)
        got = cvejic_q(a, b, a)
        assert got == pytest.approx(cvejic_naive(a.pixels, b.pixels, a.pixels), abs=1e-12)
        # mu leans on the source that is the fused image; Q0(a, a) = 1
        assert got > piella_q(Image(np.full((16, 16), 0.5)), b, a) - 1
        assert got > 0.5

    @pytest.mark.parametrize("fn", [piella_q, cvejic_q])
    def test_swap(self, fn):
        a, b, f = rand_image(12), rand_image(13), rand_image(14)
        assert fn(a, b, f) == fn(b, a, f)

    @pytest.mark.parametrize("fn", [piella_q, cvejic_q])
    def test_too_small(self, fn):
        x = Image(np.zeros((7, 20)))
        with pytest.raises(ValueError):
            fn(x, x, x)

    @pytest.mark.parametrize("fn", [piella_q, cvejic_q])
    def test_constant_triple(self, fn):
        c = Image(np.full((9, 9), 0.3))
        assert fn(c, c, c) == 1.0


@pytest.mark.parametrize("seed", range(4))
def test_naive_agreement(seed):
    rng = np.random.default_rng(100 + seed)
    a, b, f = (rng.random((16, 16)) for _ in range(3))
    assert petrovic_qabf(a, b, f) == pytest.approx(qabf_naive(a, b, f), abs=1e-12)
    assert mutual_information_metric(Image(a), Image(b), Image(f)) == pytest.approx(
        mi_naive(a, f) + mi_naive(b, f), abs=1e-12)
    assert piella_q(a, b, f) == pytest.approx(piella_naive(a, b, f), abs=1e-12)
    assert cvejic_q(a, b, f) == pytest.approx(cvejic_naive(a, b, f), abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_report_ranges_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b, f = (Image(rng.random((12, 12)) ** rng.uniform(0.5, 3)) for _ in range(3))
    r = evaluate_all(a, b, f)
    s = evaluate_all(b, a, f)
    assert (r.pe, r.mi, r.q, r.cv) == (s.pe, s.mi, s.q, s.cv)
    assert 0 <= r.pe <= 1
    assert 0 <= r.mi <= entropy(a) + entropy(b) + 1e-12
    assert -1 <= r.q <= 1 and -1 <= r.cv <= 1


def test_evaluate_all_self_fusion():
    a = rand_image(20, (32, 32))
    r = evaluate_all(a, a, a)
    assert r.pe == pytest.approx(c0_by_hand(), abs=1e-12)
    assert r.mi == pytest.approx(2 * entropy(a), abs=1e-12)
    assert r.q == pytest.approx(1.0, abs=1e-12)
    assert r.cv == pytest.approx(1.0, abs=1e-12)


def test_evaluate_all_constant_triple():
    c = Image(np.full((10, 10), 0.6))
    r = evaluate_all(c, c, c)
    assert (r.pe, r.mi, r.q, r.cv) == (0.0, 0.0, 1.0, 1.0)
    assert r.flags == ["pe_degenerate"]


def test_report_json_layout():
    r = evaluate_all(rand_image(1), rand_image(2), rand_image(3), files={"a": "x.pgm"})
    payload = json.loads(r.to_json())
    assert list(payload) == ["pe", "mi", "q", "cv", "files"]
    for key in ("pe", "mi", "q", "cv"):
        assert len(repr(payload[key]).lstrip("-0.").replace(".", "").rstrip("0")) <= 10
        assert payload[key] == pytest.approx(getattr(r, key), rel=1e-9)
