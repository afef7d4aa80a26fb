"""Moment generating functions and error-exponent curves.

phi(rho) is the ideal MGF of the per-step information loss, psi_s(rho) the
actual MGF of (S_1/s)^-rho when the true message currently holds mass s and
the greedy rule picks the input.  Psi is the min over nondecreasing
schedules tau(s) of sup_s psi_s(tau(s)); it caps the ending-phase penalty in
the exponent bound sup_rho -rho R - ln max(phi(rho), Psi).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize
from scipy.special import logsumexp

from . import kernels
from .channel import Dmc, dispersion, mutual_information, w_partition
from .codec import arc_pieces, greedy_symbol

RHO_MAX = 16.0
GL_ORDER = 24


class QuadratureFailure(RuntimeError):
    pass


class GridTooCoarse(RuntimeError):
    pass


# ----------------------------------------------------------------------
# ideal MGF

def _phi_terms(dmc: Dmc):
    P = dmc.transition
    pos = P > 0
    w = (dmc.input_pmf[:, None] * P)[pos]
    with np.errstate(divide="ignore"):
        lb = np.log(P / dmc.output_pmf[None, :])[pos]
    return np.ascontiguousarray(lb), np.ascontiguousarray(w)


def phi(dmc: Dmc, rho):
    """sum_x p(x) sum_y p(y|x) (p(y|x)/p(y))^-rho, scalar or array rho."""
    lb, w = _phi_terms(dmc)
    rhos = np.atleast_1d(np.asarray(rho, dtype=float))
    with np.errstate(over="ignore"):
        out = np.exp(logsumexp(-np.outer(rhos, lb), b=w, axis=1))
    return float(out[0]) if np.ndim(rho) == 0 else out


def log_phi(dmc: Dmc, rho: float) -> float:
    lb, w = _phi_terms(dmc)
    return float(logsumexp(-rho * lb, b=w))


def phi_derivative_at_zero(dmc: Dmc) -> float:
    return -mutual_information(dmc)


def phi_derivative_fd(dmc: Dmc, h: float = 1e-5) -> float:
    """Central difference of ln phi at 0 (phi extends smoothly to rho < 0)."""
    return (log_phi(dmc, h) - log_phi(dmc, -h)) / (2 * h)


def inf_phi(dmc: Dmc, rho_max: float = RHO_MAX) -> tuple[float, float]:
    """(min value, argmin) of phi on [0, rho_max]."""
    res = optimize.minimize_scalar(lambda r: log_phi(dmc, r), bounds=(0.0, rho_max),
                                   method="bounded", options={"xatol": 1e-10})
    r = float(res.x)
    if log_phi(dmc, 0.0) <= res.fun:
        r = 0.0
    return math.exp(log_phi(dmc, r)), r


# ----------------------------------------------------------------------
# actual MGF, BSC closed form

def psi_bsc_closed_form(p: float, s: float, rho: float) -> float:
    q = 1.0 - p
    d = q - p
    if s <= 0.5:
        regular = (1 - 2 * s) * (q * (2 * q) ** -rho + p * (2 * p) ** -rho)
        lq, lp = -math.log(2 * q), -math.log(2 * p)
        coef_q, coef_p = -q, p
        scale = 2 * s / d
        # N(rho) = 2s - (2s/d)[q (2q)^(1-rho) - p (2p)^(1-rho)]
        if abs(rho - 1) >= 1e-6:
            num = 2 * s - scale * (q * (2 * q) ** (1 - rho) - p * (2 * p) ** (1 - rho))
            return regular + num / (rho - 1)
    else:
        a = 2 * p + d / s
        b = 2 * q - d / s
        regular = (2 * s - 1) * (q * a ** -rho + p * b ** -rho)
        lq, lp = -math.log(a), -math.log(b)
        coef_q, coef_p = -q, p
        scale = 2 * s / d
        if abs(rho - 1) >= 1e-6:
            num = scale * (q * (1 - a ** (1 - rho)) - p * (1 - b ** (1 - rho)))
            return regular + num / (rho - 1)
    # removable singularity: N(1) = 0, use N'(1) + N''(1) e/2 + N'''(1) e^2/6
    e = rho - 1
    total = 0.0
    fact = 1.0
    for k in (1, 2, 3):
        fact *= k
        nk = scale * (coef_p * lp ** k + coef_q * lq ** k)
        total += nk * e ** (k - 1) / fact
    return regular + total


# ----------------------------------------------------------------------
# actual MGF, general channel

@dataclass
class _Piece:
    lo: float
    hi: float
    ell_mid: np.ndarray
    slope: np.ndarray
    mid: float

    def ell(self, a):
        return self.ell_mid + (np.asarray(a)[..., None] - self.mid) * self.slope


def _cell(bounds, w: float, right_closed: bool) -> int:
    side = "left" if right_closed else "right"
    k = int(np.searchsorted(bounds, w, side=side)) - 1
    return min(max(k, 0), len(bounds) - 2)


def _shift_pieces(dmc: Dmc, s: float) -> list[_Piece]:
    """Split arc starts a in [0, 1) where the cell overlaps change form."""
    bounds = w_partition(dmc).boundaries
    k = len(bounds) - 1
    cuts = {0.0, 1.0}
    for j in range(k):
        cuts.add(float(bounds[j]))
        cuts.add((float(bounds[j]) - s) % 1.0)
    cuts = sorted(cuts)
    pieces = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= 1e-15:
            continue
        mid = 0.5 * (lo + hi)
        ell = np.zeros(k)
        for x, _, ln in arc_pieces(mid, s, bounds):
            ell[x] += ln
        slope = np.zeros(k)
        slope[_cell(bounds, (mid + s) % 1.0, True)] += 1.0
        slope[_cell(bounds, mid, False)] -= 1.0
        pieces.append(_Piece(lo, hi, ell, slope, mid))
    return pieces


def _gains(r, dmc: Dmc):
    """Information gain G for every row of shares r (npts x |X|)."""
    P = dmc.transition
    mix = r @ P
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.log(mix / dmc.output_pmf)
    finite = np.isfinite(lr)
    g = np.where(finite, lr, 0.0) @ P.T
    bad = (~finite).astype(float) @ (P > 0).T
    g[bad > 0] = -np.inf
    return g


def _argmax_rows(g, cand):
    g = np.where(cand, g, -np.inf)
    best = g.max(axis=1, keepdims=True)
    ok = cand & ((g >= best - 1e-12) | (best == -np.inf))
    return np.argmax(ok, axis=1)


def _greedy_subpieces(dmc: Dmc, s: float, samples: int = 16):
    """(lo, hi, piece) intervals on which the greedy symbol is constant."""
    out = []
    for pc in _shift_pieces(dmc, s):
        cand = pc.ell_mid > 0
        t = np.linspace(pc.lo, pc.hi, samples + 2)[1:-1]
        xs = _argmax_rows(_gains(pc.ell(t) / s, dmc), cand[None, :])
        edges = [pc.lo]
        for j in range(len(t) - 1):
            if xs[j] != xs[j + 1]:
                a, b = int(xs[j]), int(xs[j + 1])

                def diff(v, a=a, b=b):
                    g = _gains(pc.ell(np.array([v])) / s, dmc)[0]
                    return g[a] - g[b]

                def picks_a(v, a=a):
                    g = _gains(pc.ell(np.array([v])) / s, dmc)
                    return _argmax_rows(g, cand[None, :])[0] == a
                fa, fb = diff(t[j]), diff(t[j + 1])
                if np.isfinite(fa) and np.isfinite(fb) and fa * fb < 0:
                    root = optimize.brentq(diff, t[j], t[j + 1], xtol=1e-15, rtol=1e-15)
                else:
                    # exact tie at a sample or a third symbol in between:
                    # bisect on the greedy choice itself
                    lo_v, hi_v = t[j], t[j + 1]
                    for _ in range(60):
                        m = 0.5 * (lo_v + hi_v)
                        if picks_a(m):
                            lo_v = m
                        else:
                            hi_v = m
                    root = 0.5 * (lo_v + hi_v)
                edges.append(root)
        edges.append(pc.hi)
        for lo, hi in zip(edges[:-1], edges[1:]):
            if hi > lo:
                out.append((lo, hi, pc))
    return out


def _integrand_factory(dmc: Dmc, s: float, pc: _Piece, lo: float, hi: float):
    x = greedy_symbol(pc.ell(0.5 * (lo + hi)), s, dmc)
    row = dmc.transition[x]
    ys = np.flatnonzero(row > 0)
    ratio = dmc.transition[:, ys] / dmc.output_pmf[ys]
    return x, row[ys], ratio


class PsiPanel:
    """Gauss-Legendre discretisation of psi_s; evaluate at many rho cheaply."""

    def __init__(self, dmc: Dmc, s: float, order: int = GL_ORDER):
        if not 0 < s < 1:
            raise ValueError("s must lie in (0, 1)")
        self.s = s
        nodes, wts = np.polynomial.legendre.leggauss(order)
        lbs, ws = [], []
        for lo, hi, pc in _greedy_subpieces(dmc, s):
            _, py, ratio = _integrand_factory(dmc, s, pc, lo, hi)
            half = 0.5 * (hi - lo)
            a = lo + half * (nodes + 1.0)
            mix = (pc.ell(a) / s) @ ratio  # (order, |ys|)
            with np.errstate(divide="ignore"):
                lbs.append(np.log(mix).ravel())
            ws.append((half * wts[:, None] * py[None, :]).ravel())
        self.log_base = np.ascontiguousarray(np.concatenate(lbs))
        self.weight = np.ascontiguousarray(np.concatenate(ws))

    def __call__(self, rho):
        rhos = np.atleast_1d(np.asarray(rho, dtype=float))
        out = kernels.mgf_sum(self.log_base, self.weight, np.ascontiguousarray(rhos))
        return float(out[0]) if np.ndim(rho) == 0 else out


def psi_numeric(dmc: Dmc, s: float, rho: float, method: str = "quad", tol: float = 1e-10) -> float:
    """psi_s(rho) by integrating over the uniform shift.

    ``method="quad"`` uses adaptive quadrature on each smooth sub-piece;
    ``"gauss"`` uses the fixed Gauss-Legendre panel.
    """
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    if rho == 0:
        return 1.0
    if method == "gauss":
        return PsiPanel(dmc, s)(rho)
    if method != "quad":
        raise ValueError(f"unknown method {method!r}")
    total = 0.0
    for lo, hi, pc in _greedy_subpieces(dmc, s):
        _, py, ratio = _integrand_factory(dmc, s, pc, lo, hi)

        def f(a, pc=pc, py=py, ratio=ratio):
            mix = (pc.ell(a) / s) @ ratio
            return float(py @ mix ** -rho)
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, err = integrate.quad(f, lo, hi, epsabs=tol, epsrel=tol, limit=200)
            except integrate.IntegrationWarning as exc:
                raise QuadratureFailure(f"s={s}, rho={rho}: {exc}") from exc
        if not math.isfinite(val) or err > 1e-8:
            raise QuadratureFailure(f"s={s}, rho={rho}: estimate {val} with error {err}")
        total += val
    return total


def psi_monte_carlo(dmc: Dmc, s: float, rho: float, draws: int = 10**6, seed: int = 0):
    """Sample mean and standard error of (S_1/s)^-rho over single greedy steps."""
    rng = np.random.default_rng(seed)
    shifts = rng.random(draws)
    outs = rng.random(draws)
    bounds = np.ascontiguousarray(w_partition(dmc).boundaries)
    ratios = kernels.step_ratios(float(s), shifts, outs, bounds,
                                 np.ascontiguousarray(dmc.transition),
                                 np.ascontiguousarray(dmc.output_pmf))
    vals = ratios ** -rho
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(draws))


# ----------------------------------------------------------------------
# Psi

@dataclass
class PsiSolution:
    value: float
    s_grid: np.ndarray
    tau: np.ndarray
    rho_min: np.ndarray
    psi_min: np.ndarray
    tol: float
    refinement_delta: float | None = None


def default_s_grid(points: int = 512, eps: float = 1e-6) -> np.ndarray:
    half = points // 2
    low = np.geomspace(eps, 0.5, half)
    high = 1.0 - np.geomspace(0.5, eps, points - half + 1)[1:]
    return np.concatenate([low, high])


def default_rho_grid(rho_max: float = 1e7, points: int = 1000) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(1e-3, rho_max, points)])


class _SRow:
    __slots__ = ("panel", "tab", "imin", "rho_min", "psi_min")


def _root(panel, level, a, b):
    f = lambda r: min(panel(r), 1e300) - level
    return optimize.brentq(f, a, b, xtol=1e-12, rtol=1e-12)


def _feasible_interval(row: _SRow, rho: np.ndarray, level: float):
    if row.psi_min > level:
        return None
    mask = row.tab <= level
    if mask.any():
        idx = np.flatnonzero(mask)
        if idx[-1] - idx[0] + 1 != idx.size:
            raise GridTooCoarse(f"feasible set at s={row.panel.s} is not an interval on the rho grid")
        i0, i1 = idx[0], idx[-1]
        lo = 0.0 if i0 == 0 else _root(row.panel, level, rho[i0 - 1], rho[i0])
        hi = math.inf if i1 == len(rho) - 1 else _root(row.panel, level, rho[i1], rho[i1 + 1])
    else:
        j = row.imin
        left = rho[max(j - 1, 0)]
        right = rho[min(j + 1, len(rho) - 1)]
        lo = _root(row.panel, level, left, row.rho_min) if row.psi_min < level else row.rho_min
        hi = _root(row.panel, level, row.rho_min, right) if row.psi_min < level else row.rho_min
    return lo, hi


def _schedule(rows, rho, level):
    taus = []
    running = 0.0
    for row in rows:
        iv = _feasible_interval(row, rho, level)
        if iv is None:
            return None
        running = max(running, iv[0])
        if running > iv[1]:
            return None
        taus.append(running)
    return np.array(taus)


def _solve_psi(dmc, s_grid, rho, tol):
    rows = []
    for s in s_grid:
        row = _SRow()
        row.panel = PsiPanel(dmc, float(s))
        row.tab = row.panel(rho)
        j = int(np.argmin(row.tab))
        row.imin = j
        if 0 < j < len(rho) - 1:
            res = optimize.minimize_scalar(row.panel, bounds=(rho[j - 1], rho[j + 1]),
                                           method="bounded", options={"xatol": 1e-9 * rho[j]})
            row.rho_min, row.psi_min = float(res.x), min(float(res.fun), row.tab[j])
            if row.tab[j] <= res.fun:
                row.rho_min = float(rho[j])
        else:
            row.rho_min, row.psi_min = float(rho[j]), float(row.tab[j])
        rows.append(row)
    lo = max(r.psi_min for r in rows)
    hi = 1.0
    tau = _schedule(rows, rho, lo)
    if tau is not None:
        return lo, tau, rows
    best = _schedule(rows, rho, hi)
    if best is None:
        raise GridTooCoarse("level 1 infeasible; psi grid does not reach rho = 0")
    while hi - lo > tol:
        level = 0.5 * (lo + hi)
        t = _schedule(rows, rho, level)
        if t is None:
            lo = level
        else:
            hi, best = level, t
    return hi, best, rows


def capital_psi(dmc: Dmc, s_grid=None, rho_grid=None, tol: float = 1e-4,
                refine_check: bool = False) -> PsiSolution:
    """Smallest level admitting a nondecreasing tau(s) with psi_s(tau(s)) <= level."""
    s_grid = default_s_grid() if s_grid is None else np.sort(np.asarray(s_grid, dtype=float))
    rho = default_rho_grid() if rho_grid is None else np.sort(np.asarray(rho_grid, dtype=float))
    value, tau, rows = _solve_psi(dmc, s_grid, rho, tol)
    delta = None
    if refine_check:
        coarse, _, _ = _solve_psi(dmc, s_grid[::2], rho, tol)
        delta = abs(value - coarse)
    return PsiSolution(value, s_grid, tau, np.array([r.rho_min for r in rows]),
                       np.array([r.psi_min for r in rows]), tol, delta)


# ----------------------------------------------------------------------
# exponents

def _maximize(f, lo: float, hi: float) -> tuple[float, float]:
    res = optimize.minimize_scalar(lambda r: -f(r), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    best_r, best = float(res.x), -float(res.fun)
    for r in (lo, hi):
        v = f(r)
        if v > best:
            best_r, best = r, v
    return best, best_r


def error_exponent_bound(dmc: Dmc, rate: float, psi, rho_max: float = RHO_MAX) -> float:
    """sup_rho -rho R - ln max(phi(rho), Psi), clamped at 0."""
    if rate >= mutual_information(dmc):
        return 0.0
    level = psi.value if isinstance(psi, PsiSolution) else float(psi)
    log_level = math.log(level)
    val, _ = _maximize(lambda r: -r * rate - max(log_phi(dmc, r), log_level), 0.0, rho_max)
    return max(val, 0.0)


def gallager_e0(dmc: Dmc, rho: float, q=None) -> float:
    """-ln sum_y (sum_x Q(x) p(y|x)^(1/(1+rho)))^(1+rho)."""
    Q = dmc.input_pmf if q is None else np.asarray(q, dtype=float)
    P = dmc.transition
    with np.errstate(divide="ignore"):
        lp = np.log(P)
        lq = np.log(Q)
    inner = logsumexp(lq[:, None] + lp / (1 + rho), axis=0)
    return float(-logsumexp((1 + rho) * inner))


def sphere_packing_exponent(dmc: Dmc, rate: float, q=None, rho_max: float = RHO_MAX) -> float:
    if q is None and rate >= mutual_information(dmc):
        return 0.0
    f = lambda r: gallager_e0(dmc, r, q) - r * rate
    # searching [0, 1] on its own keeps E_sp >= E_r exactly, not just to optimizer tolerance
    low, _ = _maximize(f, 0.0, 1.0)
    high, _ = _maximize(f, 1.0, rho_max)
    return max(low, high, 0.0)


def random_coding_exponent(dmc: Dmc, rate: float, q=None) -> float:
    if q is None and rate >= mutual_information(dmc):
        return 0.0
    val, _ = _maximize(lambda r: gallager_e0(dmc, r, q) - r * rate, 0.0, 1.0)
    return max(val, 0.0)


def dispersion_limit_ratio(dmc: Dmc, psi, rate: float) -> float:
    """E_bound(R)/(C - R)^2, to compare with 1/(2 sigma^2)."""
    c = mutual_information(dmc)
    if c <= 0:
        raise ValueError("channel has zero capacity under this input pmf")
    if rate >= c:
        raise ValueError("rate must be below the mutual information")
    return error_exponent_bound(dmc, rate, psi) / (c - rate) ** 2


@dataclass
class ExponentCurve:
    rates: np.ndarray
    e_bound: np.ndarray
    e_sp: np.ndarray
    e_r: np.ndarray
    capacity: float
    sigma2: float
    psi: float
    inf_phi: float


def exponent_curve(dmc: Dmc, rates, psi: PsiSolution | float | None = None) -> ExponentCurve:
    if psi is None:
        psi = capital_psi(dmc)
    level = psi.value if isinstance(psi, PsiSolution) else float(psi)
    rates = np.asarray(rates, dtype=float)
    eb = np.array([error_exponent_bound(dmc, r, level) for r in rates])
    esp = np.array([sphere_packing_exponent(dmc, r) for r in rates])
    er = np.array([random_coding_exponent(dmc, r) for r in rates])
    return ExponentCurve(rates, eb, esp, er, mutual_information(dmc), dispersion(dmc),
                         level, inf_phi(dmc)[0])
