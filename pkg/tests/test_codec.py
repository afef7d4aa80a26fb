import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from feedback_dmc.channel import (bsc, mutual_information, new_dmc, posterior_factors,
                                  useless_channel, w_partition)
from feedback_dmc.codec import (ConfigInvalid, PrecisionBudgetExceeded, ReplayMismatch,
                                SessionConfig, SessionFinished, SessionUnfinished, Transcript,
                                absorb_output, decode, encode_step, greedy_select,
                                information_gain, message_count_for_rate, new_session,
                                overlap_decomposition, replay_decoder, run_session,
                                select_for_arc, state_hash, true_log_mass)
from feedback_dmc.harness import oracle_session, random_channel, trial_message
from feedback_dmc.naive import NaiveCodec, ScaleExceeded, naive_session
from feedback_dmc.rng import mix_seed

BSC01 = bsc(0.1)
PROBES = np.linspace(0.0, 1.0, 65)


def cdf(tree, xs=PROBES):
    return np.array([tree.query_msg_point(float(x)) for x in xs])


class FixedShift:
    """Stands in for SharedRandomness with a constant U."""

    def __init__(self, u):
        self.u = u

    def next(self):
        return self.u


# ---------------------------------------------------------------- config

def test_message_count_for_rate():
    assert message_count_for_rate(100, 0.5) == 5184705528587072464087  # floor(e^50)
    assert message_count_for_rate(7, 0.0) == 1
    assert message_count_for_rate(3, 0.1) == 1
    with pytest.raises(ConfigInvalid):
        message_count_for_rate(10, -0.1)


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        SessionConfig(BSC01, 0, 4)
    with pytest.raises(ConfigInvalid):
        SessionConfig(BSC01, 4, 0)
    with pytest.raises(ConfigInvalid):
        SessionConfig(BSC01, 4, 4, v_mode="uniform")
    with pytest.raises(PrecisionBudgetExceeded):
        SessionConfig(BSC01, 10, 2**40, precision_bits=40)
    cfg = SessionConfig(BSC01, 10, 2**40)
    assert cfg.precision_bits >= 40 + math.ceil(math.log2(20)) + 8
    with pytest.raises(ConfigInvalid):
        new_session(SessionConfig(BSC01, 4, 4), 5)


# ---------------------------------------------------------------- sessions

def test_fresh_session_interval():
    enc, dec = new_session(SessionConfig(BSC01, 4, 4), 3)
    lo, hi = enc.tree.message_point(2, 4), enc.tree.message_point(3, 4)
    assert enc.tree.query_fixed(lo) == pytest.approx(0.5, abs=1e-15)
    assert enc.tree.query_fixed(hi) == pytest.approx(0.75, abs=1e-15)
    assert math.exp(true_log_mass(enc)) == pytest.approx(0.25, rel=1e-12)

    enc, _ = new_session(SessionConfig(BSC01, 4, 1), 1)
    assert true_log_mass(enc) == 0.0


def test_fresh_hashes_equal():
    enc, dec = new_session(SessionConfig(BSC01, 4, 8), 2)
    assert state_hash(enc) == state_hash(dec)


def test_hashes_equal_every_step():
    cfg = SessionConfig(BSC01, 80, 2**20, seed=11)
    res = run_session(cfg, 12345, check_sync=True)
    assert res.desync_step is None


def test_mismatched_seed_detected():
    cfg = SessionConfig(BSC01, 30, 64, seed=3)
    res = run_session(cfg, 5, check_sync=True, decoder_seed=4)
    assert res.desync_step == 1


def test_perturbed_mid_changes_hash():
    cfg = SessionConfig(BSC01, 5, 64, seed=1)
    enc, dec = new_session(cfg, 7)
    for y in (0, 1, 1):
        encode_step(enc)
        absorb_output(enc, y)
        absorb_output(dec, y)
    assert state_hash(enc) == state_hash(dec)
    dec.tree.prob_root.mid = math.nextafter(dec.tree.prob_root.mid, 1.0)
    assert state_hash(enc) != state_hash(dec)


def test_session_bounds():
    cfg = SessionConfig(BSC01, 2, 4, seed=0)
    enc, dec = new_session(cfg, 1)
    with pytest.raises(SessionUnfinished):
        decode(dec)
    for _ in range(2):
        encode_step(enc)
        absorb_output(enc, 0)
        absorb_output(dec, 0)
    with pytest.raises(SessionFinished):
        encode_step(enc)
    with pytest.raises(SessionFinished):
        absorb_output(dec, 0)
    decode(dec)


# ---------------------------------------------------------------- overlaps

def test_overlap_examples():
    part = [0.0, 0.5, 1.0]
    np.testing.assert_allclose(overlap_decomposition(0.0, 0.2, 0.1, part), [0.2, 0.0], atol=1e-15)
    np.testing.assert_allclose(overlap_decomposition(0.0, 0.2, 0.9, part), [0.1, 0.1], atol=1e-15)
    tri = w_partition(new_dmc([0.2, 0.3, 0.5], np.eye(3)))
    for u in (0.0, 0.37, 0.999):
        np.testing.assert_array_equal(overlap_decomposition(0.4, 1.0, u, tri),
                                      np.diff(tri.boundaries))


@settings(max_examples=300, deadline=None)
@given(t=st.floats(0, 1, exclude_max=True), s=st.floats(1e-9, 1.0),
       u=st.floats(0, 1, exclude_max=True),
       pmf=st.lists(st.floats(0.05, 1.0), min_size=2, max_size=5))
def test_overlap_sums_to_length(t, s, u, pmf):
    p = np.asarray(pmf) / sum(pmf)
    b = np.concatenate([[0.0], np.cumsum(p)])
    b[-1] = 1.0
    ell = overlap_decomposition(t, s, u, b)
    assert (ell >= 0).all()
    assert ell.sum() == pytest.approx(s, abs=1e-12)


# ---------------------------------------------------------------- greedy rule

def test_greedy_bsc_prefers_larger_overlap():
    assert greedy_select([0.3, 0.1], 0.4, BSC01)[0] == 0
    assert greedy_select([0.1, 0.3], 0.4, BSC01)[0] == 1
    assert greedy_select([0.2, 0.0], 0.2, BSC01)[0] == 0
    assert greedy_select([0.0, 0.2], 0.2, BSC01)[0] == 1


def test_greedy_ties_go_to_smallest_index():
    assert greedy_select([0.25, 0.25], 0.5, BSC01)[0] == 0


def test_greedy_matches_v_grid_brute_force():
    rng = np.random.default_rng(7)
    grid = (np.arange(10_000) + 0.5) / 10_000
    for _ in range(100):
        dmc = random_channel(rng, 3, 3)
        b = w_partition(dmc).boundaries
        start, s = rng.random(), rng.uniform(0.01, 1.0)
        x, v, w, ell = select_for_arc(start, s, dmc, b)
        gains = information_gain(ell / s, dmc)
        overlapped = np.flatnonzero(ell > 0)
        assert gains[x] >= gains[overlapped].max() - 1e-12
        # the transmitted point lies in x's cell
        assert x == w_partition(dmc).symbol_at(w)
        # objective as a function of v: gain of the symbol whose cell w lands in
        ws = (start + grid * s) % 1.0
        cells = np.clip(np.searchsorted(b, ws, side="right") - 1, 0, 2)
        brute = gains[cells].max()
        assert brute <= gains[x] + 1e-12
        if ell[x] > 2 * s / grid.size:
            assert brute == pytest.approx(gains[x], abs=1e-12)


def conditional_symbol_freq(dmc, s, draws, seed):
    """Symbol frequencies over uniform shifts, keeping arcs inside one cell."""
    b = w_partition(dmc).boundaries
    rng = np.random.default_rng(seed)
    counts = np.zeros(dmc.n_inputs)
    for u in rng.random(draws):
        lo = (0.3 + u) % 1.0
        if np.searchsorted(b, lo, side="right") != np.searchsorted(b, lo + s, side="left"):
            continue
        x, *_ = select_for_arc(0.3 + u, s, dmc, b)
        counts[x] += 1
    return counts / counts.sum(), int(counts.sum())


MARGINAL_DMC = new_dmc([0.5, 0.3, 0.2], [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6]])


def test_input_marginal_exact_law():
    # cell x holds an arc of length s only for a shift window of p(x) - s
    s = 0.2 / 4
    freq, kept = conditional_symbol_freq(MARGINAL_DMC, s, 100_000, 1)
    p_in = (MARGINAL_DMC.input_pmf - s) / (1 - 3 * s)
    assert (np.abs(freq - p_in) <= 4 * np.sqrt(p_in * (1 - p_in) / kept)).all()


def test_input_marginal_small_interval():
    freq, kept = conditional_symbol_freq(MARGINAL_DMC, 1e-5, 100_000, 2)
    p = MARGINAL_DMC.input_pmf
    assert (np.abs(freq - p) <= 4 * np.sqrt(p * (1 - p) / kept)).all()


# ---------------------------------------------------------------- encode

def test_encode_whole_circle_tie_break():
    enc, _ = new_session(SessionConfig(BSC01, 3, 1), 1)
    assert encode_step(enc) == 0


def test_encode_first_message_zero_shift():
    enc, _ = new_session(SessionConfig(bsc(0.2), 1, 2), 1)
    enc.shift = FixedShift(0.0)
    assert encode_step(enc) == 0
    enc, _ = new_session(SessionConfig(bsc(0.2), 1, 2), 2)
    enc.shift = FixedShift(0.0)
    assert encode_step(enc) == 1


def test_encode_deterministic():
    cfg = SessionConfig(BSC01, 50, 2**30, seed=99)
    a = run_session(cfg, 777)
    b = run_session(cfg, 777)
    assert [r.x for r in a.transcript.records] == [r.x for r in b.transcript.records]
    assert a.transcript.to_csv() == b.transcript.to_csv()


def test_encode_random_v_mode_is_deterministic():
    cfg = SessionConfig(BSC01, 30, 256, seed=5, v_mode="random")
    a = run_session(cfg, 17)
    b = run_session(cfg, 17)
    assert [r.v for r in a.transcript.records] == [r.v for r in b.transcript.records]


# ---------------------------------------------------------------- absorb

def test_absorb_worked_example():
    # U=0.1 sends probability-space [0,0.4] and [0.9,1] to symbol 0's cell
    cfg = SessionConfig(bsc(0.3), 1, 4)
    _, dec = new_session(cfg, 1)
    dec.shift = FixedShift(0.1)
    absorb_output(dec, 0)
    np.testing.assert_allclose(posterior_factors(cfg.dmc, 0), [1.4, 0.6])

    def expected(x):
        if x <= 0.4:
            return 1.4 * x
        if x <= 0.9:
            return 0.56 + 0.6 * (x - 0.4)
        return 0.86 + 1.4 * (x - 0.9)

    np.testing.assert_allclose(cdf(dec.tree), [expected(x) for x in PROBES], atol=1e-12)
    assert dec.tree.total_mass() == pytest.approx(1.0, abs=1e-12)


def test_absorb_useless_channel_leaves_map():
    cfg = SessionConfig(useless_channel(3), 20, 16, seed=2)
    enc, dec = new_session(cfg, 4)
    for y in (0, 2, 1, 1, 0):
        encode_step(enc)
        absorb_output(enc, y)
        absorb_output(dec, y)
    np.testing.assert_allclose(cdf(dec.tree), PROBES, atol=1e-15)


def test_absorb_creates_at_most_x_leaves():
    dmc = new_dmc([0.2, 0.3, 0.5], [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6]])
    cfg = SessionConfig(dmc, 40, 1000, seed=8)
    enc, dec = new_session(cfg, 500)
    rnd = random.Random(0)
    for _ in range(40):
        before = dec.tree.leaf_count
        encode_step(enc)
        y = rnd.randrange(3)
        absorb_output(enc, y)
        absorb_output(dec, y)
        assert dec.tree.leaf_count - before <= dmc.n_inputs
        assert dec.tree.total_mass() == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------- decode

@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_noiseless_decodes(m):
    cfg = SessionConfig(bsc(0.0), 16, 4, seed=m)
    res = run_session(cfg, m)
    assert res.decoded == m
    assert res.final_log_mass == pytest.approx(0.0, abs=1e-12)


def test_single_message_decodes_to_one():
    assert run_session(SessionConfig(BSC01, 5, 1, seed=1), 1).decoded == 1


def test_shared_tree_mode_matches_separate_trees():
    cfg = SessionConfig(BSC01, 60, 2**24, seed=21)
    a = run_session(cfg, 4242)
    b = run_session(cfg, 4242, shared_tree=True)
    assert a.decoded == b.decoded
    assert a.transcript.to_csv() == b.transcript.to_csv()


# ---------------------------------------------------------------- transcript

def test_transcript_csv_round_trip_and_replay():
    cfg = SessionConfig(BSC01, 25, 512, seed=12)
    res = run_session(cfg, 300)
    text = res.transcript.to_csv()
    assert text.splitlines()[0] == "# schema=1"
    assert text.splitlines()[1] == "step,u,x,y,v,w,S_i,ln_S_i"
    back = Transcript.from_csv(text)
    assert back.to_csv() == text
    rebuilt = replay_decoder(cfg, back)
    assert decode(rebuilt) == res.decoded
    back.records[3].u += 1e-3
    with pytest.raises(ReplayMismatch):
        replay_decoder(cfg, back)


def test_masses_in_unit_interval():
    res = run_session(SessionConfig(BSC01, 100, 2**30, seed=4), 99)
    for r in res.transcript.records:
        assert 0.0 < r.mass <= 1.0 + 1e-12


# ---------------------------------------------------------------- naive codec

def test_naive_initial_state():
    codec = NaiveCodec(SessionConfig(BSC01, 3, 8))
    np.testing.assert_array_equal(codec.s, np.full(8, 1 / 8))
    np.testing.assert_array_equal(codec.t, np.arange(8) / 8)


def test_naive_scale_limit():
    with pytest.raises(ScaleExceeded):
        NaiveCodec(SessionConfig(BSC01, 3, 2**16 + 1))


def test_naive_normalised():
    res = naive_session(SessionConfig(BSC01, 60, 64, seed=3), 10)
    for s in res.masses:
        assert math.fsum(s) == pytest.approx(1.0, abs=1e-12)


def test_naive_agrees_with_tree():
    for k in range(20):
        seed = mix_seed(123, k)
        cfg = SessionConfig(BSC01, 60, 64, seed=seed)
        rep = oracle_session(cfg, trial_message(seed, 64))
        assert rep.mismatches == 0, rep.notes


def test_median_equals_argmax_when_dominant():
    hits = 0
    for k in range(30):
        seed = mix_seed(9, k)
        cfg = SessionConfig(BSC01, 60, 64, seed=seed)
        m = trial_message(seed, 64)
        nres = naive_session(cfg, m, keep_masses=True)
        tres = run_session(cfg, m)
        if nres.max_mass > 0.5:
            hits += 1
            assert nres.decoded == tres.decoded
    assert hits > 20


# ---------------------------------------------------------------- concentration

def concentration_rate(dmc, rate_frac, n, trials, seed=0, cutoff=0.01):
    """Per-trial mean increase of ln S over steps that start with S <= cutoff."""
    rate = rate_frac * mutual_information(dmc)
    cfg0 = SessionConfig.from_rate(dmc, n, rate)
    M = cfg0.message_count
    per_trial = []
    for t in range(trials):
        tseed = mix_seed(seed, t)
        cfg = SessionConfig(dmc, n, M, seed=tseed)
        res = run_session(cfg, trial_message(tseed, M), shared_tree=True)
        prev = -math.log(M)
        inc = []
        for r in res.transcript.records:
            if prev <= math.log(cutoff):
                inc.append(r.log_mass - prev)
            prev = r.log_mass
        if inc:
            per_trial.append(np.mean(inc))
    return np.asarray(per_trial), cfg0.rate


def test_concentration_drift_between_rate_and_capacity():
    vals, rate = concentration_rate(BSC01, 0.5, 200, 200)
    mean = vals.mean()
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert rate - 3 * se <= mean <= mutual_information(BSC01) + 3 * se
