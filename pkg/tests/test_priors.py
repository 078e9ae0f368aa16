import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msqcd.priors import (ChangePointPrior, ParameterMixing, PatternPrior, elementary_symmetric,
                          log_elementary_symmetric, pattern_weight, prior_mass, prior_mean, prior_tail,
                          sample_change_point, sample_pattern)


def test_geometric_prior_values():
    p = ChangePointPrior.geometric(0.1)
    assert prior_mean(p) == pytest.approx(9.0)
    assert prior_mass(p, 0) == pytest.approx(0.1)
    assert prior_tail(p, 0) == pytest.approx(0.9)
    assert p.b == pytest.approx(0.9)  # sum_{k>=1} pi_k
    assert sum(prior_mass(p, k) for k in range(-1, 2000)) == pytest.approx(1.0)


def test_geometric_with_head_mass_normalizes():
    p = ChangePointPrior.geometric(0.2, pi_minus1=0.3)
    assert sum(p.mass(k) for k in range(-1, 3000)) == pytest.approx(1.0)
    assert p.mean == pytest.approx(sum(k * p.mass(k) for k in range(1, 3000)))


def test_table_prior():
    p = ChangePointPrior.table({0: 0.5, 1: 0.5})
    assert p.mean == pytest.approx(0.5)
    assert p.tail(0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        ChangePointPrior.table({0: 0.5, 1: 0.4})


def test_pattern_weight_examples():
    p = PatternPrior([1.0, 1.0], K=2)
    assert [pattern_weight(p, B) for B in ([0], [1], [0, 1])] == pytest.approx([1 / 3] * 3)
    p = PatternPrior([1.0, 1.0, 1.0], K=1)
    assert [p.weight([i]) for i in range(3)] == pytest.approx([1 / 3] * 3)
    with pytest.raises(ValueError):
        p.weight([0, 1])


@given(st.integers(1, 12), st.data())
def test_pattern_prior_normalizes_by_enumeration(N, data):
    K = data.draw(st.integers(1, N))
    w = data.draw(st.lists(st.floats(0.01, 5.0), min_size=N, max_size=N))
    p = PatternPrior(w, K)
    total = math.fsum(pB for _, pB in p.patterns())
    assert total == pytest.approx(1.0, rel=1e-12)


@given(st.lists(st.floats(0.01, 3.0), min_size=1, max_size=10))
def test_elementary_symmetric_vs_enumeration(values):
    v = np.array(values)
    e = elementary_symmetric(v)
    for k in range(1, v.size + 1):
        ref = math.fsum(float(np.prod(c)) for c in itertools.combinations(v, k))
        assert e[k] == pytest.approx(ref, rel=1e-12)
    le = log_elementary_symmetric(np.log(v), v.size)
    assert np.allclose(np.exp(le), e[1:], rtol=1e-12)


def test_parameter_mixing_grid():
    w = ParameterMixing.uniform_grid(0.1, 0.3, 0.01)
    assert w.size == 21 and w.points[0] == 0.1 and w.points[-1] == pytest.approx(0.3)
    assert w.weights.sum() == pytest.approx(1.0)
    assert w.stream_grid(4).shape == (21, 4)


def test_sample_pattern_examples(rng):
    assert sample_pattern(1.0, 5, rng) == (0, 1, 2, 3, 4)
    M = np.array([len(sample_pattern(0.1, 10, rng)) for _ in range(10 ** 5)])
    target = 10 * 0.1 * 0.9 ** 9
    phat = np.mean(M == 1)
    assert abs(phat - target) < 3 * math.sqrt(target * (1 - target) / M.size)
    assert all(sample_pattern(0.05, 3, rng, nonempty=True) for _ in range(200))


def test_geometric_sampler_mean(rng):
    p = ChangePointPrior.geometric(0.1)
    ks = p.sample(rng, 10 ** 5)
    assert abs(ks.mean() - 9) < 3 * ks.std(ddof=1) / math.sqrt(ks.size)
    assert isinstance(sample_change_point(p, rng), int)


def test_samplers_deterministic_given_seed():
    p = ChangePointPrior.geometric(0.3, pi_minus1=0.2)
    a = p.sample(np.random.default_rng(5), 100)
    b = p.sample(np.random.default_rng(5), 100)
    assert np.array_equal(a, b) and a.min() >= -1
