"""Monte Carlo trials, runtime benchmark, exponent tables and oracle runs."""
from __future__ import annotations

import csv
import io
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from .channel import Dmc, new_dmc, sample_output
from .codec import (CSV_SCHEMA, SessionConfig, absorb_output, decode, encode_step,
                    new_session, run_session, state_hash)
from .exponents import ExponentCurve
from .naive import NaiveCodec
from .rng import STREAM_MESSAGE, STREAM_NOISE, SplitMix64, mix_seed


def default_parallelism() -> int:
    try:
        return max(1, int(os.environ.get("FEEDBACK_DMC_THREADS", "1")))
    except ValueError:
        return 1


def trial_message(trial_seed: int, message_count: int) -> int:
    return SplitMix64(mix_seed(trial_seed, STREAM_MESSAGE)).randbelow(message_count) + 1


@dataclass
class TrialStats:
    channel: str
    rate: float
    n: int
    message_count: int
    trials: int
    errors: int
    mean_decode_mass: float  # mean final pseudo-posterior mass of the true message
    wall_time_per_trial: float
    seed: int
    ci_low: float = field(init=False)
    ci_high: float = field(init=False)

    def __post_init__(self):
        if self.trials:
            lo, hi = proportion_confint(self.errors, self.trials, alpha=0.05, method="wilson")
            self.ci_low, self.ci_high = float(lo), float(hi)
        else:
            self.ci_low, self.ci_high = 0.0, 1.0

    @property
    def error_rate(self) -> float:
        return self.errors / self.trials if self.trials else math.nan

    def to_csv(self) -> str:
        """Deterministic body; the wall time goes to a trailing comment line."""
        out = io.StringIO()
        out.write(CSV_SCHEMA + "\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["channel", "R", "n", "M_bits", "trials", "errors", "error_rate",
                    "wilson_low", "wilson_high", "mean_decode_mass", "seed"])
        w.writerow([self.channel, f"{self.rate:.6g}", self.n, self.message_count.bit_length(),
                    self.trials, self.errors, f"{self.error_rate:.6g}", f"{self.ci_low:.6g}",
                    f"{self.ci_high:.6g}", f"{self.mean_decode_mass:.6g}", self.seed])
        out.write(f"# wall_time_per_trial={self.wall_time_per_trial:.6g}\n")
        return out.getvalue()


def _one_trial(args):
    dmc, n, message_count, precision_bits, trial_seed = args
    cfg = SessionConfig(dmc, n, message_count, seed=trial_seed, precision_bits=precision_bits)
    m = trial_message(trial_seed, message_count)
    t0 = time.perf_counter()
    res = run_session(cfg, m, shared_tree=True)
    wall = time.perf_counter() - t0
    return res.error, math.exp(res.final_log_mass), wall


def run_trials(dmc: Dmc, rate: float, n: int, trials: int, master_seed: int = 0,
               parallelism: int | None = None, channel_name: str = "",
               precision_bits: int | None = None, message_count: int | None = None) -> TrialStats:
    """Independent sessions with seeds mix(master, t) and uniform messages.

    Results depend only on ``master_seed``: trials are aggregated in index
    order whatever the worker count.
    """
    base = SessionConfig.from_rate(dmc, n, rate, precision_bits=precision_bits) \
        if message_count is None else SessionConfig(dmc, n, message_count, precision_bits=precision_bits)
    M = base.message_count
    jobs = [(dmc, n, M, base.precision_bits, mix_seed(master_seed, t)) for t in range(trials)]
    workers = default_parallelism() if parallelism is None else parallelism
    if workers > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_trial, jobs, chunksize=max(1, trials // (4 * workers))))
    else:
        results = [_one_trial(j) for j in jobs]
    errors = sum(1 for e, _, _ in results if e)
    mass = math.fsum(m for _, m, _ in results) / trials if trials else math.nan
    wall = statistics.median(w for _, _, w in results) if results else 0.0
    return TrialStats(channel_name, math.log(M) / n if M > 1 else 0.0, n, M, trials, errors,
                      mass, wall, master_seed)


@dataclass
class BenchRow:
    n: int
    total_ops: int
    wall_time: float
    rotations: int

    @property
    def n_log_n(self) -> float:
        return self.n * math.log(max(self.n, 2))

    @property
    def ops_ratio(self) -> float:
        return self.total_ops / self.n_log_n

    @property
    def wall_ratio(self) -> float:
        return self.wall_time / self.n_log_n


def bench_runtime(dmc: Dmc, rate: float, n_list, trials: int = 1, seed: int = 0) -> list[BenchRow]:
    """Per-n median word-op count and wall time of the tree codec (both ends)."""
    rows = []
    for n in n_list:
        ops, walls, rots = [], [], []
        for t in range(trials):
            tseed = mix_seed(seed, t)
            cfg = SessionConfig.from_rate(dmc, n, rate, seed=tseed)
            m = trial_message(tseed, cfg.message_count)
            enc, dec = new_session(cfg, m)
            noise = SplitMix64(mix_seed(tseed, STREAM_NOISE))
            t0 = time.perf_counter()
            for _ in range(n):
                x = encode_step(enc)
                y = sample_output(dmc, x, noise.random())
                absorb_output(enc, y)
                absorb_output(dec, y)
            decode(dec)
            walls.append(time.perf_counter() - t0)
            ops.append(enc.tree.ops + dec.tree.ops)
            rots.append(enc.tree.rotations + dec.tree.rotations)
        rows.append(BenchRow(n, int(statistics.median(ops)), statistics.median(walls),
                             int(statistics.median(rots))))
    return rows


def bench_csv(rows: list[BenchRow]) -> str:
    out = io.StringIO()
    out.write(CSV_SCHEMA + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["n", "total_ops", "ops_per_nlogn", "rotations", "wall_time", "wall_per_nlogn"])
    for r in rows:
        w.writerow([r.n, r.total_ops, f"{r.ops_ratio:.6g}", r.rotations,
                    f"{r.wall_time:.6g}", f"{r.wall_ratio:.6g}"])
    return out.getvalue()


def curve_csv(curve: ExponentCurve) -> str:
    out = io.StringIO()
    out.write(CSV_SCHEMA + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["R", "E_bound", "E_sp", "E_r"])
    for r, eb, esp, er in zip(curve.rates, curve.e_bound, curve.e_sp, curve.e_r):
        w.writerow([f"{r:.6g}", f"{eb:.6g}", f"{esp:.6g}", f"{er:.6g}"])
    return out.getvalue()


# ----------------------------------------------------------------------
# tree codec vs naive arrays

@dataclass
class OracleReport:
    sessions: int = 0
    steps: int = 0
    mass_mismatches: int = 0
    symbol_mismatches: int = 0
    decode_mismatches: int = 0
    desyncs: int = 0
    max_rel_error: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def mismatches(self) -> int:
        return self.mass_mismatches + self.symbol_mismatches + self.decode_mismatches + self.desyncs

    def merge(self, other: "OracleReport") -> None:
        for name in ("sessions", "steps", "mass_mismatches", "symbol_mismatches",
                     "decode_mismatches", "desyncs"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.max_rel_error = max(self.max_rel_error, other.max_rel_error)
        self.notes.extend(other.notes)

    def summary(self) -> str:
        return (f"sessions={self.sessions} steps={self.steps} mismatches={self.mismatches} "
                f"mass={self.mass_mismatches} symbol={self.symbol_mismatches} "
                f"decode={self.decode_mismatches} desync={self.desyncs} "
                f"max_rel_error={self.max_rel_error:.3g}")


def _rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.maximum(np.abs(a), np.abs(b))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 1e-300, np.abs(a - b) / scale, 0.0)
    return float(rel.max())


def oracle_session(config: SessionConfig, message: int, rel_tol: float = 1e-9,
                   decoder_seed: int | None = None) -> OracleReport:
    """Run the tree codec and the naive codec side by side on one session."""
    rep = OracleReport(sessions=1)
    enc, dec = new_session(config, message, decoder_seed)
    naive = NaiveCodec(config)
    noise = SplitMix64(mix_seed(config.seed, STREAM_NOISE))
    M = config.message_count
    for i in range(config.n):
        x = encode_step(enc)
        u = enc.pending_u
        nx, _, _ = naive.select(message, u)
        if nx != x:
            rep.symbol_mismatches += 1
            rep.notes.append(f"seed={config.seed} step={i + 1}: symbol {x} vs naive {nx}")
        y = sample_output(config.dmc, x, noise.random())
        absorb_output(enc, y)
        absorb_output(dec, y)
        naive.absorb(u, y)
        rep.steps += 1
        err = _rel_error(np.asarray(dec.tree.message_masses(M)), naive.s)
        rep.max_rel_error = max(rep.max_rel_error, err)
        if err > rel_tol:
            rep.mass_mismatches += 1
            rep.notes.append(f"seed={config.seed} step={i + 1}: mass rel error {err:.3g}")
        if state_hash(enc) != state_hash(dec):
            rep.desyncs += 1
    if naive.s.max() > 0.5 and decode(dec) != naive.decode():
        rep.decode_mismatches += 1
        rep.notes.append(f"seed={config.seed}: decode {decode(dec)} vs naive {naive.decode()}")
    return rep


def random_channel(rng: np.random.Generator, n_inputs: int, n_outputs: int) -> Dmc:
    while True:
        pmf = rng.dirichlet(np.ones(n_inputs))
        rows = rng.dirichlet(np.ones(n_outputs), size=n_inputs)
        if pmf.min() > 1e-3:
            return new_dmc(pmf, rows)


def verify_oracle(dmc: Dmc | None, sessions: int, message_count: int = 64, n: int = 60,
                  seed: int = 0, rel_tol: float = 1e-9, random_shape: tuple[int, int] | None = None,
                  desync: bool = False) -> OracleReport:
    """Paired tree/naive sessions; ``random_shape`` draws a fresh channel per session.

    ``desync`` gives every decoder a wrong shift seed (test hook).
    """
    if message_count > (1 << 16) or n > 512:
        raise ValueError("oracle runs need M <= 2**16 and n <= 512")
    report = OracleReport()
    rng = np.random.default_rng(seed)
    for k in range(sessions):
        ch = random_channel(rng, *random_shape) if random_shape else dmc
        sseed = mix_seed(seed, k)
        cfg = SessionConfig(ch, n, message_count, seed=sseed)
        m = trial_message(sseed, message_count)
        report.merge(oracle_session(cfg, m, rel_tol, sseed ^ 1 if desync else None))
    return report
