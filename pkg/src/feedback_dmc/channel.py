"""Discrete memoryless channels and their unit-interval input partition."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

TOL = 1e-12


class ChannelError(ValueError):
    pass


class NonStochastic(ChannelError):
    pass


class RedundantInputs(ChannelError):
    def __init__(self, pairs):
        self.pairs = list(pairs)
        super().__init__(f"redundant input pairs {self.pairs}")


class DimensionMismatch(ChannelError):
    pass


class ZeroOutputProbability(ChannelError):
    pass


@dataclass(frozen=True, eq=False)
class WPartition:
    """Cumulative input pmf: symbol x owns the cell (F[x], F[x+1]]."""

    boundaries: NDArray[np.float64]

    def symbol_at(self, w: float) -> int:
        """Inverse cdf F_X^{-1}(w), with cells closed on the right."""
        k = int(np.searchsorted(self.boundaries, w, side="left")) - 1
        return min(max(k, 0), len(self.boundaries) - 2)

    @property
    def n_symbols(self) -> int:
        return len(self.boundaries) - 1


@dataclass(frozen=True, eq=False)
class Dmc:
    """A validated channel: input pmf p(x) and transition rows p(y|x).

    Build through :func:`new_dmc`; zero-probability inputs are already
    stripped (see ``warnings``) so every row has p(x) > 0.
    """

    input_pmf: NDArray[np.float64]
    transition: NDArray[np.float64]
    output_pmf: NDArray[np.float64]
    posterior: NDArray[np.float64]  # p(x|y), shape |X| x |Y|, zero column where p(y)=0
    input_labels: tuple[int, ...]  # original indices of the kept inputs
    warnings: tuple[str, ...] = field(default=())

    @property
    def n_inputs(self) -> int:
        return self.transition.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.transition.shape[1]

    def describe(self) -> str:
        return json.dumps({"input_pmf": self.input_pmf.tolist(),
                           "transition": self.transition.tolist()})


def _as_float_array(a, ndim: int, name: str) -> NDArray[np.float64]:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonStochastic(f"{name} has non-finite entries")
    return arr


def new_dmc(input_pmf: Sequence[float], transition, redundant: str = "reject") -> Dmc:
    """Validate and build a channel.

    ``redundant`` is ``"reject"`` (raise :class:`RedundantInputs`) or
    ``"merge"`` (keep the first of each group of identical rows and give it
    the group's total input probability).
    """
    pmf = _as_float_array(input_pmf, 1, "input_pmf")
    rows = _as_float_array(transition, 2, "transition")
    if rows.shape[0] != pmf.shape[0] or rows.shape[1] == 0:
        raise DimensionMismatch(
            f"input_pmf has {pmf.shape[0]} entries but transition is {rows.shape}")
    if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > TOL:
        raise NonStochastic(f"input pmf must be nonnegative and sum to 1, got sum {pmf.sum()!r}")
    if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > TOL):
        raise NonStochastic("every transition row must be nonnegative and sum to 1")

    notes = []
    keep = [i for i in range(len(pmf)) if pmf[i] > 0]
    if len(keep) < len(pmf):
        dropped = [i for i in range(len(pmf)) if pmf[i] == 0]
        notes.append(f"stripped zero-probability inputs {dropped}")

    pairs = [(a, b) for i, a in enumerate(keep) for b in keep[i + 1:]
             if np.all(np.abs(rows[a] - rows[b]) <= TOL)]
    weights = {i: float(pmf[i]) for i in keep}
    if pairs:
        if redundant == "reject":
            raise RedundantInputs(pairs)
        if redundant != "merge":
            raise ValueError(f"unknown redundant-input policy {redundant!r}")
        merged_into = {}
        for a, b in pairs:
            root = merged_into.get(a, a)
            if b not in merged_into:
                merged_into[b] = root
                weights[root] += weights.pop(b)
        keep = [i for i in keep if i not in merged_into]
        notes.append(f"merged redundant inputs {pairs}")

    pmf_k = np.array([weights[i] for i in keep])
    pmf_k /= pmf_k.sum()
    rows_k = rows[keep].copy()
    p_y = pmf_k @ rows_k
    with np.errstate(divide="ignore", invalid="ignore"):
        post = np.where(p_y > 0, pmf_k[:, None] * rows_k / p_y, 0.0)
    pmf_k.setflags(write=False)
    rows_k.setflags(write=False)
    p_y.setflags(write=False)
    post.setflags(write=False)
    return Dmc(pmf_k, rows_k, p_y, post, tuple(keep), tuple(notes))


def bsc(p: float) -> Dmc:
    return new_dmc([0.5, 0.5], [[1 - p, p], [p, 1 - p]])


def useless_channel(n_outputs: int = 2) -> Dmc:
    row = np.full(n_outputs, 1.0 / n_outputs)
    return new_dmc([1.0], [row])


def load_channel(spec: str) -> Dmc:
    """Parse ``bsc:<p>`` or read a JSON file with ``input_pmf``/``transition``."""
    if spec.startswith("bsc:"):
        try:
            p = float(spec[4:])
        except ValueError as exc:
            raise ChannelError(f"bad crossover probability in {spec!r}") from exc
        if not 0 <= p <= 1:
            raise NonStochastic(f"crossover probability {p} outside [0, 1]")
        return bsc(p)
    if not os.path.exists(spec):
        raise ChannelError(f"channel spec {spec!r} is neither bsc:<p> nor an existing file")
    with open(spec) as fh:
        obj = json.load(fh)
    try:
        return new_dmc(obj["input_pmf"], obj["transition"], obj.get("redundant", "reject"))
    except KeyError as exc:
        raise ChannelError(f"channel file missing key {exc}") from exc


def mutual_information(dmc: Dmc) -> float:
    """I(X;Y) in nats."""
    p, rows, p_y = dmc.input_pmf, dmc.transition, dmc.output_pmf
    total = 0.0
    for x in range(dmc.n_inputs):
        for y in range(dmc.n_outputs):
            if rows[x, y] > 0:
                total += p[x] * rows[x, y] * math.log(rows[x, y] / p_y[y])
    return max(total, 0.0)


def dispersion(dmc: Dmc) -> float:
    """Variance of the information density ln(p(Y|X)/p(Y)), in nats^2."""
    p, rows, p_y = dmc.input_pmf, dmc.transition, dmc.output_pmf
    mean = mutual_information(dmc)
    var = 0.0
    for x in range(dmc.n_inputs):
        for y in range(dmc.n_outputs):
            if rows[x, y] > 0:
                var += p[x] * rows[x, y] * (math.log(rows[x, y] / p_y[y]) - mean) ** 2
    return var


def w_partition(dmc: Dmc) -> WPartition:
    b = np.concatenate([[0.0], np.cumsum(dmc.input_pmf)])
    b[-1] = 1.0
    b.setflags(write=False)
    return WPartition(b)


def posterior_factors(dmc: Dmc, y: int) -> NDArray[np.float64]:
    """p(x|y)/p(x) = p(y|x)/p(y) for every input x."""
    if not 0 <= y < dmc.n_outputs:
        raise IndexError(f"output {y} out of range")
    if dmc.output_pmf[y] <= 0:
        raise ZeroOutputProbability(f"p(y={y}) = 0")
    return dmc.transition[:, y] / dmc.output_pmf[y]


def sample_output(dmc: Dmc, x: int, unit_random: float) -> int:
    """Inverse-cdf draw from row ``x``; deterministic in ``unit_random``."""
    cum = np.cumsum(dmc.transition[x])
    y = int(np.searchsorted(cum, unit_random, side="right"))
    if y >= dmc.n_outputs:
        y = int(np.flatnonzero(dmc.transition[x] > 0)[-1])
    return y
