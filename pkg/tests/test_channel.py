import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from feedback_dmc.channel import (NonStochastic, RedundantInputs, DimensionMismatch,
                                  ZeroOutputProbability, bsc, dispersion, load_channel,
                                  mutual_information, new_dmc, posterior_factors,
                                  sample_output, useless_channel, w_partition)


def binary_entropy(p):
    return -p * math.log(p) - (1 - p) * math.log(1 - p)


def test_bsc_is_valid():
    d = new_dmc([0.5, 0.5], [[0.9, 0.1], [0.1, 0.9]])
    np.testing.assert_allclose(d.output_pmf, [0.5, 0.5])
    np.testing.assert_allclose(d.posterior, [[0.9, 0.1], [0.1, 0.9]])


def test_rejects_redundant_rows():
    with pytest.raises(RedundantInputs) as exc:
        new_dmc([0.5, 0.5], [[1, 0], [1, 0]])
    assert exc.value.pairs == [(0, 1)]


def test_merge_policy_keeps_first_row():
    d = new_dmc([0.2, 0.3, 0.5], [[1, 0], [0, 1], [1, 0]], redundant="merge")
    assert d.n_inputs == 2
    np.testing.assert_allclose(d.input_pmf, [0.7, 0.3])
    assert d.input_labels == (0, 1)


def test_rejects_bad_pmf_and_shapes():
    with pytest.raises(NonStochastic):
        new_dmc([0.6, 0.5], [[0.9, 0.1], [0.1, 0.9]])
    with pytest.raises(NonStochastic):
        new_dmc([0.5, 0.5], [[0.9, 0.2], [0.1, 0.9]])
    with pytest.raises(DimensionMismatch):
        new_dmc([0.5, 0.5], [[0.9, 0.1]])
    with pytest.raises(NonStochastic):
        new_dmc([0.5, 0.5], [[np.nan, 1.0], [0.1, 0.9]])


def test_zero_probability_inputs_are_stripped():
    d = new_dmc([0.0, 1.0], [[1, 0], [0, 1]])
    assert d.n_inputs == 1
    assert d.warnings and "stripped" in d.warnings[0]


def test_mutual_information_examples():
    # oracle: ln 2 minus the binary entropy, computed independently
    assert mutual_information(bsc(0.1)) == pytest.approx(math.log(2) - binary_entropy(0.1), abs=1e-12)
    assert mutual_information(bsc(0.1)) == pytest.approx(0.36806, abs=5e-6)
    assert mutual_information(bsc(0.0)) == pytest.approx(math.log(2))
    assert mutual_information(new_dmc([0.3, 0.7], [[0.4, 0.6], [0.4, 0.6]], "merge")) == 0.0


def test_dispersion_examples():
    # two-point variance of ln(2*0.9), ln(2*0.1) with weights 0.9, 0.1
    a, b = math.log(1.8), math.log(0.2)
    mean = 0.9 * a + 0.1 * b
    expect = 0.9 * (a - mean) ** 2 + 0.1 * (b - mean) ** 2
    assert dispersion(bsc(0.1)) == pytest.approx(expect, rel=1e-12)
    assert dispersion(bsc(0.1)) == pytest.approx(0.4345, abs=5e-5)
    assert dispersion(bsc(0.0)) == pytest.approx(0.0, abs=1e-15)
    assert dispersion(useless_channel()) == pytest.approx(0.0, abs=1e-15)


def test_w_partition_examples():
    np.testing.assert_allclose(w_partition(bsc(0.1)).boundaries, [0, 0.5, 1])
    d = new_dmc([0.2, 0.3, 0.5], np.eye(3))
    np.testing.assert_allclose(w_partition(d).boundaries, [0, 0.2, 0.5, 1])
    np.testing.assert_allclose(w_partition(useless_channel()).boundaries, [0, 1])
    part = w_partition(d)
    assert part.symbol_at(0.2) == 0 and part.symbol_at(0.2000001) == 1 and part.symbol_at(1.0) == 2


def test_posterior_factors_examples():
    np.testing.assert_allclose(posterior_factors(bsc(0.1), 0), [1.8, 0.2])
    np.testing.assert_allclose(posterior_factors(bsc(0.0), 1), [0, 2])
    np.testing.assert_allclose(posterior_factors(useless_channel(3), 2), [1.0])
    d = new_dmc([0.5, 0.5], [[0.5, 0.5, 0.0], [0.5, 0.5, 0.0]], "merge")
    with pytest.raises(ZeroOutputProbability):
        posterior_factors(d, 2)


def test_sample_output_examples():
    d = bsc(0.1)
    assert sample_output(d, 0, 0.05) == 0
    assert sample_output(d, 0, 0.95) == 1
    det = new_dmc([0.5, 0.5], [[0, 1], [1, 0]])
    assert all(sample_output(det, 0, u) == 1 for u in (0.0, 0.3, 0.999999))


def test_sample_output_frequencies():
    d = new_dmc([1 / 3] * 3, [[0.2, 0.5, 0.3], [0.6, 0.1, 0.3], [0.1, 0.1, 0.8]])
    rng = np.random.default_rng(0)
    us = rng.random(10**6)
    row = d.transition[0]
    cum = np.cumsum(row)
    # vectorised mirror of the scalar rule, spot-checked against it below
    ys = np.searchsorted(cum, us, side="right")
    for u in us[:2000]:
        assert sample_output(d, 0, u) == min(np.searchsorted(cum, u, side="right"), 2)
    counts = np.bincount(ys, minlength=3)
    sd = np.sqrt(len(us) * row * (1 - row))
    assert np.all(np.abs(counts - len(us) * row) <= 4 * sd)


def test_load_channel(tmp_path):
    assert load_channel("bsc:0.1").transition[0, 1] == pytest.approx(0.1)
    f = tmp_path / "ch.json"
    f.write_text(json.dumps({"input_pmf": [0.5, 0.5], "transition": [[0.8, 0.2], [0.3, 0.7]]}))
    assert load_channel(str(f)).n_outputs == 2


@st.composite
def channels(draw):
    nx = draw(st.integers(2, 4))
    ny = draw(st.integers(2, 4))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return new_dmc(rng.dirichlet(np.ones(nx)), rng.dirichlet(np.ones(ny), size=nx), "merge")


@settings(max_examples=60, deadline=None)
@given(channels())
def test_channel_invariants(d):
    assert d.output_pmf.sum() == pytest.approx(1.0, abs=1e-12)
    for y in range(d.n_outputs):
        if d.output_pmf[y] > 0:
            assert d.posterior[:, y].sum() == pytest.approx(1.0, abs=1e-12)
            assert d.input_pmf @ posterior_factors(d, y) == pytest.approx(1.0, abs=1e-12)
    assert mutual_information(d) > 0


def test_mutual_information_zero_iff_equal_rows():
    row = [0.2, 0.3, 0.5]
    d = new_dmc([0.5, 0.5], [row, row], redundant="merge")
    assert mutual_information(d) == 0.0
