"""Reference codec keeping every message's mass and start in flat arrays.

Linear in M per step, so it is only meant for small message sets.  It shares
the shift/noise streams and the greedy rule with the tree codec, which makes
step-by-step comparisons possible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .channel import posterior_factors, sample_output
from .codec import (SessionConfig, SharedRandomness, StepRecord, Transcript,
                    select_for_arc, shifted_breakpoints)
from .rng import STREAM_NOISE, STREAM_VPOINT, SplitMix64, mix_seed

MAX_MESSAGES = 1 << 16


class ScaleExceeded(ValueError):
    pass


class NaiveCodec:
    """Explicit masses s(m) and starts t(m) for all messages."""

    def __init__(self, config: SessionConfig):
        M = config.message_count
        if M > MAX_MESSAGES:
            raise ScaleExceeded(f"naive codec supports at most {MAX_MESSAGES} messages, got {M}")
        self.config = config
        self.s = np.full(M, 1.0 / M)
        self.t = np.arange(M) / M

    def select(self, message: int, u: float, rand: float | None = None):
        """Greedy (x, v, w) for ``message`` under shift ``u``."""
        cfg = self.config
        x, v, w, _ = select_for_arc(float(self.t[message - 1]) + u, float(self.s[message - 1]),
                                    cfg.dmc, cfg.boundaries, rand)
        return x, v, w

    def absorb(self, u: float, y: int) -> None:
        q, symbols = shifted_breakpoints(self.config.boundaries, u)
        f = posterior_factors(self.config.dmc, y)
        seg = np.asarray([float(f[x]) for x in symbols])
        self.s = kernels.naive_rescale(self.s, self.t, np.asarray(q, dtype=float), seg)
        self.t = np.empty_like(self.s)
        self.t[0] = 0.0
        np.cumsum(self.s[:-1], out=self.t[1:])

    def decode(self) -> int:
        return int(np.argmax(self.s)) + 1


@dataclass
class NaiveResult:
    message: int
    decoded: int
    transcript: Transcript
    masses: list[np.ndarray] = field(default_factory=list)  # s after each step

    @property
    def max_mass(self) -> float:
        return float(self.masses[-1].max()) if self.masses else 1.0


def naive_session(config: SessionConfig, message: int, outputs=None,
                  keep_masses: bool = True) -> NaiveResult:
    """Run one block with explicit arrays.

    ``outputs`` forces the channel outputs (e.g. to replay the tree codec's
    outputs); otherwise they are drawn from the session's noise stream.
    """
    codec = NaiveCodec(config)
    shift = SharedRandomness(config.seed)
    noise = SplitMix64(mix_seed(config.seed, STREAM_NOISE))
    vpoint = SplitMix64(mix_seed(config.seed, STREAM_VPOINT))
    trans = Transcript()
    history = []
    for i in range(config.n):
        u = shift.next()
        rand = vpoint.random() if config.v_mode == "random" else None
        x, v, w = codec.select(message, u, rand)
        y = sample_output(config.dmc, x, noise.random()) if outputs is None else int(outputs[i])
        codec.absorb(u, y)
        m_mass = float(codec.s[message - 1])
        trans.records.append(StepRecord(i + 1, u, x, float(v), float(w), y,
                                        math.log(m_mass) if m_mass > 0 else -math.inf))
        if keep_masses:
            history.append(codec.s.copy())
    return NaiveResult(message, codec.decode(), trans, history)
