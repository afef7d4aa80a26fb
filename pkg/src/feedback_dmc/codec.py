"""Feedback encoder/decoder built on the dual tree.

Each message m owns the cell [(m-1)/M, m/M] of message space.  Every step
the whole probability space is rotated by a shared uniform shift U, the
encoder sends the input symbol whose W-cell gives the largest expected
log-gain for the true message's (rotated) interval, and both ends rescale
the pseudo-posterior by p(y|x)/p(y) on the rotated symbol cells.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .channel import Dmc, posterior_factors, sample_output, w_partition
from .ivtree import DualTree
from .rng import STREAM_NOISE, STREAM_SHIFT, STREAM_VPOINT, SplitMix64, mix_seed

GAIN_TIE_TOL = 1e-12
BREAK_TOL = 1e-15
CSV_SCHEMA = "# schema=1"
# extra message-space bits beyond the decode requirement, so split positions
# are as accurate as the float probability coordinates they come from
GUARD_BITS = 56


class ConfigInvalid(ValueError):
    pass


class PrecisionBudgetExceeded(ConfigInvalid):
    pass


class SessionFinished(RuntimeError):
    pass


class SessionUnfinished(RuntimeError):
    pass


class ReplayMismatch(RuntimeError):
    pass


def message_count_for_rate(n: int, rate: float) -> int:
    """M = max(1, floor(e^{nR})), exact for any size."""
    if rate < 0 or not math.isfinite(rate):
        raise ConfigInvalid(f"rate must be a finite nonnegative number, got {rate!r}")
    nr = n * rate
    with mpmath.workprec(int(nr * 1.4426950408889634) + 64):
        m = int(mpmath.floor(mpmath.exp(mpmath.mpf(nr))))
    return max(1, m)


def _slack_bits(n: int, n_inputs: int) -> int:
    return max(n * n_inputs - 1, 0).bit_length() + 8


def default_precision(n: int, message_count: int, n_inputs: int) -> int:
    return message_count.bit_length() + _slack_bits(n, n_inputs) + GUARD_BITS


@dataclass(frozen=True, eq=False)
class SessionConfig:
    dmc: Dmc
    n: int
    message_count: int
    seed: int = 0
    precision_bits: int | None = None
    v_mode: str = "midpoint"  # or "random": uniform over the chosen symbol's pieces
    boundaries: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigInvalid("block length n must be >= 1")
        if self.message_count < 1:
            raise ConfigInvalid("message count must be >= 1")
        if self.v_mode not in ("midpoint", "random"):
            raise ConfigInvalid(f"unknown v_mode {self.v_mode!r}")
        object.__setattr__(self, "boundaries", w_partition(self.dmc).boundaries)
        if self.precision_bits is None:
            object.__setattr__(self, "precision_bits",
                               default_precision(self.n, self.message_count, self.dmc.n_inputs))
        budget = self.precision_bits - _slack_bits(self.n, self.dmc.n_inputs)
        if budget < 0 or self.message_count > (1 << budget):
            raise PrecisionBudgetExceeded(
                f"M={self.message_count} needs more than {self.precision_bits} precision bits at n={self.n}")

    @classmethod
    def from_rate(cls, dmc: Dmc, n: int, rate: float, **kw) -> "SessionConfig":
        return cls(dmc, n, message_count_for_rate(n, rate), **kw)

    @property
    def rate(self) -> float:
        return math.log(self.message_count) / self.n


class SharedRandomness:
    """Per-step shift stream U_1, U_2, ... keyed by the session seed."""

    def __init__(self, seed: int):
        self.seed = seed
        self._gen = SplitMix64(mix_seed(seed, STREAM_SHIFT))

    def next(self) -> float:
        return self._gen.random()


@dataclass
class StepRecord:
    step: int
    u: float
    x: int
    v: float
    w: float
    y: int = -1
    log_mass: float = math.nan  # ln S_i after absorbing y (encoder side only)

    @property
    def mass(self) -> float:
        return math.exp(self.log_mass)


@dataclass
class Transcript:
    records: list[StepRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(CSV_SCHEMA + "\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["step", "u", "x", "y", "v", "w", "S_i", "ln_S_i"])
        for r in self.records:
            w.writerow([r.step, repr(float(r.u)), r.x, r.y, repr(float(r.v)), repr(float(r.w)),
                        repr(float(r.mass)), repr(float(r.log_mass))])
        return out.getvalue()

    @staticmethod
    def from_csv(text: str) -> "Transcript":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        recs = []
        for row in csv.DictReader(lines):
            recs.append(StepRecord(int(row["step"]), float(row["u"]), int(row["x"]),
                                   float(row["v"]), float(row["w"]), int(row["y"]),
                                   float(row.get("ln_S_i", "nan"))))
        return Transcript(recs)


@dataclass
class CodecState:
    config: SessionConfig
    tree: DualTree
    role: str
    shift: SharedRandomness
    message: int | None = None
    step: int = 0
    transcript: Transcript = field(default_factory=Transcript)
    pending_u: float | None = None
    vpoint: SplitMix64 | None = None
    _log_mass: float | None = None  # cached ln S for the current tree (encoder)
    _interval: tuple[int, int] | None = None  # fixed-point message cell (encoder)


def new_session(config: SessionConfig, message: int, decoder_seed: int | None = None):
    """Fresh encoder and decoder states for ``message`` (1-based).

    ``decoder_seed`` overrides the decoder's shift seed; it exists to test
    that desynchronisation is detected.
    """
    if not 1 <= message <= config.message_count:
        raise ConfigInvalid(f"message {message} outside [1, {config.message_count}]")
    enc = CodecState(config, DualTree(config.precision_bits), "encoder",
                     SharedRandomness(config.seed), message=message,
                     vpoint=SplitMix64(mix_seed(config.seed, STREAM_VPOINT)))
    dseed = config.seed if decoder_seed is None else decoder_seed
    dec = CodecState(config, DualTree(config.precision_bits), "decoder", SharedRandomness(dseed))
    return enc, dec


# ----------------------------------------------------------------------
# overlap decomposition and greedy selection

def arc_pieces(start: float, length: float, boundaries) -> list[tuple[int, float, float]]:
    """Split the circular arc [start, start+length] (mod 1) by symbol cells.

    Returns (symbol, offset, piece_length) triples in arc order; offsets are
    measured from ``start``.  Piece lengths of an arc that stays inside one
    cell equal ``length`` exactly, so tiny arcs keep full relative accuracy.
    """
    b = boundaries
    k = len(b) - 1
    a = start % 1.0
    remaining = min(length, 1.0)
    offset = 0.0
    pieces = []
    for _ in range(2 * k + 2):
        if remaining <= 0.0:
            break
        x = int(np.searchsorted(b, a, side="right")) - 1
        x = min(max(x, 0), k - 1)
        room = b[x + 1] - a
        take = remaining if remaining <= room else room
        if take > 0.0:
            if pieces and pieces[-1][0] == x:
                sx, so, sl = pieces[-1]
                pieces[-1] = (sx, so, sl + take)
            else:
                pieces.append((x, offset, take))
        remaining -= take
        offset += take
        a = b[x + 1]
        if a >= 1.0:
            a = 0.0
    return pieces


def overlap_decomposition(t: float, s: float, u: float, partition) -> np.ndarray:
    """Length of [t, t+s] + u (mod 1) inside each symbol cell."""
    bounds = partition.boundaries if hasattr(partition, "boundaries") else np.asarray(partition)
    k = len(bounds) - 1
    if s >= 1.0:
        return np.diff(bounds)
    ell = np.zeros(k)
    for x, _, length in arc_pieces(t + u, s, bounds):
        ell[x] += length
    return ell


def information_gain(r, dmc: Dmc) -> np.ndarray:
    """G(x) = sum_y p(y|x) ln(sum_x' r_x' p(y|x')/p(y)) for every x."""
    P = dmc.transition
    p_y = dmc.output_pmf
    mix = np.asarray(r, dtype=float) @ P
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.where(p_y > 0, np.log(mix) - np.log(np.where(p_y > 0, p_y, 1.0)), 0.0)
        terms = np.where(P > 0, P * log_ratio[None, :], 0.0)
    return terms.sum(axis=1)


def greedy_symbol(ell, s: float, dmc: Dmc) -> int:
    ell = np.asarray(ell, dtype=float)
    cand = np.flatnonzero(ell > 0)
    if cand.size == 0:
        raise ValueError("empty overlap")
    if cand.size == 1:
        return int(cand[0])
    gains = information_gain(ell / s, dmc)
    g = gains[cand]
    best = g.max()
    if best == -np.inf:
        return int(cand[0])
    return int(cand[np.flatnonzero(g >= best - GAIN_TIE_TOL)[0]])


def greedy_select(ell, s: float, dmc: Dmc, pieces=None, rand: float | None = None):
    """Greedy symbol x* and the in-interval position v* of the transmitted point.

    ``pieces`` are the (symbol, offset, length) triples from :func:`arc_pieces`;
    without them v* is None.  ``rand`` switches v* from the midpoint of the
    largest x*-piece to a uniform point over all x*-pieces.
    """
    x = greedy_symbol(ell, s, dmc)
    if pieces is None or s <= 0:
        return x, None
    own = [(o, ln) for sx, o, ln in pieces if sx == x]
    if rand is None:
        o, ln = max(own, key=lambda p: p[1])
        pos = o + 0.5 * ln
    else:
        target = rand * sum(ln for _, ln in own)
        for o, ln in own:
            if target <= ln:
                break
            target -= ln
        pos = o + min(target, ln)
    return x, min(max(pos / s, 0.0), 1.0)


def select_for_arc(start: float, s: float, dmc: Dmc, boundaries, rand: float | None = None):
    """Greedy choice for the arc [start, start+s]; returns (x, v, w, ell)."""
    if s >= 1.0:
        pieces = arc_pieces(start, 1.0, boundaries)
        ell = np.diff(boundaries)
        s = 1.0
    else:
        pieces = arc_pieces(start, s, boundaries)
        ell = np.zeros(len(boundaries) - 1)
        for sx, _, ln in pieces:
            ell[sx] += ln
    if s <= 0.0 or not pieces:
        # interval mass below float range: the arc is a point
        x = min(max(int(np.searchsorted(boundaries, start % 1.0, side="right")) - 1, 0),
                len(boundaries) - 2)
        return x, 0.5, start % 1.0, None
    x, v = greedy_select(ell, s, dmc, pieces, rand)
    w = (start + v * s) % 1.0
    return x, v, w, ell


# ----------------------------------------------------------------------
# per-step operations

def shifted_breakpoints(boundaries, u: float):
    """Sorted probability-space breakpoints (F(k) - u) mod 1 and segment symbols."""
    k = len(boundaries) - 1
    q = sorted({(float(boundaries[j]) - u) % 1.0 for j in range(k)})
    q = [c for c in q if BREAK_TOL < c < 1.0 - BREAK_TOL]
    edges = [0.0] + q + [1.0]
    symbols = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        w = (0.5 * (lo + hi) + u) % 1.0
        x = int(np.searchsorted(boundaries, w, side="right")) - 1
        symbols.append(min(max(x, 0), k - 1))
    return q, symbols


def _message_interval(state: CodecState) -> tuple[int, int]:
    # the big-int divisions cost O(P^2) bit operations, so compute them once
    if state._interval is None:
        cfg = state.config
        tree = state.tree
        state._interval = (tree.message_point(state.message - 1, cfg.message_count),
                           tree.message_point(state.message, cfg.message_count))
    return state._interval


def true_log_mass(state: CodecState) -> float:
    x0, x1 = _message_interval(state)
    return state.tree.log_interval_mass(x0, x1)


def encode_step(enc: CodecState) -> int:
    """Choose and record the next input symbol; the tree is not modified."""
    if enc.role != "encoder":
        raise ValueError("encode_step needs an encoder state")
    cfg = enc.config
    if enc.step >= cfg.n:
        raise SessionFinished(f"all {cfg.n} channel uses consumed")
    tree = enc.tree
    x0, x1 = _message_interval(enc)
    # read-only queries: the decoder cannot mirror them, and splaying here
    # would let the two tree copies drift apart in shape
    t = tree.query_fixed(x0, splay=False)
    log_s = enc._log_mass if enc._log_mass is not None else tree.log_interval_mass(x0, x1)
    s = math.exp(log_s)
    u = enc.shift.next()
    bounds = cfg.boundaries
    rand = enc.vpoint.random() if cfg.v_mode == "random" else None
    x, v, w, _ = select_for_arc(t + u, s, cfg.dmc, bounds, rand)
    enc.pending_u = u
    enc.transcript.records.append(StepRecord(enc.step + 1, u, x, float(v), float(w)))
    return x


def absorb_output(state: CodecState, y: int) -> None:
    """Rescale the pseudo-posterior after observing output ``y``."""
    cfg = state.config
    if state.step >= cfg.n:
        raise SessionFinished(f"all {cfg.n} channel uses consumed")
    if state.role == "encoder":
        if state.pending_u is None:
            raise RuntimeError("absorb_output before encode_step")
        u = state.pending_u
        state.pending_u = None
    else:
        u = state.shift.next()
    factors = posterior_factors(cfg.dmc, y)
    _rescale(state.tree, cfg, u, factors)
    state.step += 1
    if state.role == "encoder":
        state._log_mass = true_log_mass(state)
        rec = state.transcript.records[-1]
        rec.y = y
        rec.log_mass = state._log_mass
    else:
        state.transcript.records.append(StepRecord(state.step, u, -1, math.nan, math.nan, y))


def _rescale(tree: DualTree, cfg: SessionConfig, u: float, factors) -> None:
    q, symbols = shifted_breakpoints(cfg.boundaries, u)
    tree.apply_piecewise_rescale(q, [float(factors[x]) for x in symbols])


def decode(dec: CodecState) -> int:
    if dec.step < dec.config.n:
        raise SessionUnfinished(f"decoder at step {dec.step} of {dec.config.n}")
    return dec.tree.posterior_median(dec.config.message_count)


def state_hash(state: CodecState) -> int:
    return state.tree.state_hash()


def replay_decoder(config: SessionConfig, transcript: Transcript) -> CodecState:
    """Rebuild the decoder from a transcript, checking the shift stream."""
    dec = CodecState(config, DualTree(config.precision_bits), "decoder",
                     SharedRandomness(config.seed))
    for rec in transcript.records:
        u = dec.shift._gen.random()
        if u != rec.u:
            raise ReplayMismatch(f"step {rec.step}: shift {u!r} != recorded {rec.u!r}")
        _rescale(dec.tree, config, u, posterior_factors(config.dmc, rec.y))
        dec.step += 1
        dec.transcript.records.append(StepRecord(dec.step, u, -1, math.nan, math.nan, rec.y))
    return dec


@dataclass
class SessionResult:
    message: int
    decoded: int
    transcript: Transcript
    final_log_mass: float
    ops: int
    desync_step: int | None = None

    @property
    def error(self) -> bool:
        return self.decoded != self.message


def run_session(config: SessionConfig, message: int, check_sync: bool = False,
                shared_tree: bool = False, decoder_seed: int | None = None) -> SessionResult:
    """Simulate one block over the channel with noiseless feedback.

    With ``shared_tree`` the encoder reads the decoder's tree instead of
    maintaining its own copy (the two are identical by construction, which
    ``check_sync`` verifies step by step).  ``check_sync`` records the first
    step whose state hashes differ.
    """
    enc, dec = new_session(config, message, decoder_seed)
    if shared_tree:
        if check_sync:
            raise ValueError("check_sync needs separate trees")
        enc.tree = dec.tree
    noise = SplitMix64(mix_seed(config.seed, STREAM_NOISE))
    dmc = config.dmc
    desync = None
    for _ in range(config.n):
        x = encode_step(enc)
        y = sample_output(dmc, x, noise.random())
        if shared_tree:
            u = enc.pending_u
            dec.shift.next()
            _rescale(dec.tree, config, u, posterior_factors(dmc, y))
            dec.step += 1
            enc.pending_u = None
            enc.step += 1
            enc._log_mass = true_log_mass(enc)
            rec = enc.transcript.records[-1]
            rec.y = y
            rec.log_mass = enc._log_mass
        else:
            absorb_output(enc, y)
            absorb_output(dec, y)
        if check_sync and desync is None and state_hash(enc) != state_hash(dec):
            desync = enc.step
    ops = enc.tree.ops + (0 if shared_tree else dec.tree.ops)
    log_mass = enc._log_mass if enc._log_mass is not None else 0.0
    return SessionResult(message, decode(dec), enc.transcript, log_mass, ops, desync)
