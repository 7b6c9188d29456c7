import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icsim.errors import MismatchedSupport, OutOfRange, ZeroMassAtom
from icsim.probcore import (
    FiniteDistribution,
    JointSource,
    SliceConfig,
    SpectrumTable,
    auto_slice_config,
    dsbs_source,
    entropy_density,
    product_source,
    q_func,
    q_inv,
    spectrum,
    tv_distance,
)

# frozen oracle values for DSBS(0.25), all exact to float precision
LOG2_4_3 = 2.0 - math.log2(3.0)           # -log2(3/4)
DSBS_COND_ATOMS = [(LOG2_4_3, 0.75), (2.0, 0.25)]
DSBS_SUM_ATOMS = [(2 * LOG2_4_3, 0.75), (4.0, 0.25)]
DSBS_IC_MEAN = 0.75 * LOG2_4_3 + 0.25 * 2.0


def random_source(rng, nx=3, ny=3):
    mass = rng.random((nx, ny)) + 0.05
    mass /= mass.sum()
    return JointSource(tuple(range(nx)), tuple(range(ny)), mass)


class TestFiniteDistribution:
    def test_validation(self):
        with pytest.raises(MismatchedSupport):
            FiniteDistribution(("a",), np.array([0.5, 0.5]))
        with pytest.raises(OutOfRange):
            FiniteDistribution(("a", "b"), np.array([0.7, 0.7]))
        with pytest.raises(MismatchedSupport):
            FiniteDistribution(("a", "a"), np.array([0.5, 0.5]))

    def test_prob_lookup(self):
        d = FiniteDistribution(("a", "b"), np.array([0.25, 0.75]))
        assert d.prob("b") == 0.75

    def test_from_counts(self):
        d = FiniteDistribution.from_counts({"x": 3, "y": 1})
        assert d.prob("x") == 0.75


def test_tv_distance_basic():
    p = FiniteDistribution((0, 1), np.array([0.5, 0.5]))
    q = FiniteDistribution((0, 1), np.array([0.1, 0.9]))
    assert tv_distance(p, q) == pytest.approx(0.4, abs=1e-15)
    assert tv_distance(p, p) == 0.0
    with pytest.raises(MismatchedSupport):
        tv_distance(p, FiniteDistribution((0, 2), np.array([0.5, 0.5])))


class TestJointSource:
    def test_dsbs_marginals(self):
        src = dsbs_source(0.25)
        assert np.allclose(src.p_x, [0.5, 0.5])
        assert np.allclose(src.p_y, [0.5, 0.5])
        assert np.allclose(src.p_x_given_y, [[0.75, 0.25], [0.25, 0.75]])

    def test_json_round_trip(self):
        src = random_source(np.random.default_rng(0))
        back = JointSource.from_json(src.to_json())
        assert np.allclose(back.mass, src.mass)
        assert back.x_alphabet == src.x_alphabet

    def test_sample_matches_mass(self):
        src = dsbs_source(0.25)
        rng = np.random.default_rng(7)
        xi, yj = src.sample(rng, size=200_000)
        emp = np.zeros((2, 2))
        np.add.at(emp, (xi, yj), 1.0)
        emp /= emp.sum()
        assert np.abs(emp - src.mass).max() < 0.005

    def test_product_source(self):
        base = dsbs_source(0.25)
        prod = product_source(base, 2)
        assert len(prod.x_alphabet) == 4
        assert np.allclose(prod.mass, np.kron(base.mass, base.mass))


class TestDensities:
    def test_dsbs_cond_atoms(self):
        src = dsbs_source(0.25)
        assert entropy_density(src, "cond_x_given_y", 0, 0) == \
            pytest.approx(LOG2_4_3, abs=1e-15)
        assert entropy_density(src, "cond_x_given_y", 0, 1) == \
            pytest.approx(2.0, abs=1e-15)
        assert entropy_density(src, "joint", 0, 1) == pytest.approx(3.0)

    def test_zero_mass_raises(self):
        src = JointSource((0, 1), (0, 1),
                          np.array([[0.5, 0.0], [0.0, 0.5]]))
        with pytest.raises(ZeroMassAtom):
            entropy_density(src, "joint", 0, 1)

    def test_mutual_is_difference_of_entropies(self):
        # i(x ^ y) = h(x) - h(x|y) pointwise
        rng = np.random.default_rng(3)
        for _ in range(20):
            src = random_source(rng)
            for x in src.x_alphabet:
                for y in src.y_alphabet:
                    hx = -math.log2(src.p_x[src.x_index[x]])
                    hxy = entropy_density(src, "cond_x_given_y", x, y)
                    assert entropy_density(src, "mutual", x, y) == \
                        pytest.approx(hx - hxy, abs=1e-12)

    def test_sum_is_sum_of_conditionals(self):
        src = random_source(np.random.default_rng(5))
        for x in src.x_alphabet:
            for y in src.y_alphabet:
                expect = (entropy_density(src, "cond_x_given_y", x, y)
                          + entropy_density(src, "cond_y_given_x", x, y))
                assert entropy_density(src, "sum", x, y) == \
                    pytest.approx(expect, abs=1e-12)


class TestSpectrum:
    def test_dsbs_cond_spectrum(self):
        spec = spectrum(dsbs_source(0.25), "cond_x_given_y")
        assert spec.values == pytest.approx([v for v, _ in DSBS_COND_ATOMS])
        assert spec.probs == pytest.approx([p for _, p in DSBS_COND_ATOMS])

    def test_dsbs_sum_spectrum(self):
        spec = spectrum(dsbs_source(0.25), "sum")
        assert spec.values == pytest.approx([v for v, _ in DSBS_SUM_ATOMS])
        assert spec.probs == pytest.approx([p for _, p in DSBS_SUM_ATOMS])

    def test_tail_conventions(self):
        spec = SpectrumTable(np.array([1.0, 2.0, 3.0]),
                             np.array([0.5, 0.3, 0.2]))
        assert spec.tail_prob(1.5) == pytest.approx(0.5)
        # lower: min value whose tail is <= eps
        assert spec.eps_tail(0.2, "lower") == 2.0
        assert spec.eps_tail(0.5, "lower") == 1.0
        assert spec.eps_tail(0.0, "lower") == 3.0
        # upper: min value whose tail is strictly < eps
        assert spec.eps_tail(0.2, "upper") == 3.0
        assert spec.eps_tail(0.21, "upper") == 2.0
        assert spec.eps_tail(0.0, "upper") == math.inf
        # weak variant: sup over tails >= level
        assert spec.sup_tail_at_least(0.2) == 3.0
        assert spec.sup_tail_at_least(0.20001) == 2.0
        assert spec.sup_tail_at_least(0.9) == 1.0

    def test_merge_close_atoms(self):
        spec = SpectrumTable.from_atoms([1.0, 1.0 + 1e-14, 2.0],
                                        [0.25, 0.25, 0.5])
        assert spec.values.size == 2
        assert spec.probs[0] == pytest.approx(0.5)

    def test_convolution_oracle(self):
        # two-fold DSBS(0.25) conditional-sum density, worked by hand
        spec = spectrum(dsbs_source(0.25), "cond_x_given_y").convolve(
            spectrum(dsbs_source(0.25), "cond_x_given_y"))
        assert spec.values == pytest.approx(
            [2 * LOG2_4_3, LOG2_4_3 + 2.0, 4.0])
        assert spec.probs == pytest.approx([0.5625, 0.375, 0.0625])

    def test_product_source_spectrum_is_convolution(self):
        base = dsbs_source(0.3)
        conv = spectrum(base, "cond_x_given_y").convolve_n(3)
        prod = spectrum(product_source(base, 3), "cond_x_given_y")
        assert prod.values == pytest.approx(conv.values, abs=1e-9)
        assert prod.probs == pytest.approx(conv.probs, abs=1e-12)

    def test_moments(self):
        spec = spectrum(dsbs_source(0.25), "cond_x_given_y")
        ms = spec.moments()
        assert ms.mean == pytest.approx(DSBS_IC_MEAN, abs=1e-12)
        var = 0.75 * (LOG2_4_3 - ms.mean) ** 2 + 0.25 * (2 - ms.mean) ** 2
        assert ms.variance == pytest.approx(var, abs=1e-12)

    def test_mix_and_scale(self):
        a = SpectrumTable(np.array([0.0]), np.array([1.0]))
        b = SpectrumTable(np.array([1.0]), np.array([1.0]))
        m = a.mix(b, 0.25)
        assert m.probs == pytest.approx([0.25, 0.75])
        assert b.scale(3.0).values == pytest.approx([3.0])

    @given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6),
           st.floats(0.0, 0.99))
    @settings(max_examples=60, deadline=None)
    def test_tail_order_property(self, weights, eps):
        probs = np.array(weights) / sum(weights)
        vals = np.arange(len(weights), dtype=float)
        spec = SpectrumTable(vals, probs)
        lo = spec.eps_tail(eps, "lower")
        hi = spec.eps_tail(eps, "upper")
        assert lo <= hi
        assert spec.tail_prob(lo) <= eps + 1e-9
        if math.isfinite(hi):
            assert spec.tail_prob(hi) < eps + 1e-9


class TestSliceConfig:
    def test_boundaries(self):
        cfg = SliceConfig(lambda_min=1.0, lambda_max=5.0, delta=2.0,
                          gamma=3.0)
        assert cfg.n_slices == 2
        assert cfg.slice_of(0.5) == 0
        assert cfg.slice_of(1.0) == 1
        assert cfg.slice_of(2.999) == 1
        assert cfg.slice_of(3.0) == 2
        assert cfg.slice_of(5.0) == 0
        assert cfg.slice_floor(2) == 3.0

    def test_validation(self):
        with pytest.raises(OutOfRange):
            SliceConfig(2.0, 1.0, 1.0, 0.0)
        with pytest.raises(OutOfRange):
            SliceConfig(0.0, 1.0, -1.0, 0.0)

    def test_tail_mass(self):
        cfg = SliceConfig(0.0, 1.5, 1.0, 0.0)
        spec = spectrum(dsbs_source(0.25), "cond_x_given_y")
        assert cfg.tail_mass(spec) == pytest.approx(0.25)

    def test_auto_config_covers_atoms(self):
        spec = spectrum(dsbs_source(0.25), "cond_x_given_y")
        cfg = auto_slice_config(spec, gamma=3.0)
        for v in spec.values:
            assert cfg.slice_of(float(v)) >= 1
        assert float(cfg.delta).is_integer()


def test_q_inverse():
    assert q_inv(0.5) == pytest.approx(0.0, abs=1e-9)
    assert q_inv(0.1) == pytest.approx(1.2815515655, abs=1e-6)
    for eps in (0.01, 0.1, 0.25, 0.6):
        assert q_func(q_inv(eps)) == pytest.approx(eps, abs=1e-9)
