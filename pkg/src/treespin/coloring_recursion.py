"""Type probabilities of the coloring model along a tree with frozen leaves.

For a vertex ``l`` levels above the leaves, ``p_r``, ``p2`` and ``p3`` are
the probabilities that its one-step change set has size 1, 2 or at least
3, and ``p_b = p_r + p2 / (k - 1)`` is the probability of being bad.

Each child blocks one of the ``m = k - 1`` other colors with probability
``q / m`` apiece (``q`` = bad probability one level down), so by
inclusion-exclusion over the set of unblocked colors

    p_r = sum_s (-1)^s C(m, s) (1 - q s / m)^d
    p2  = m sum_s (-1)^s C(m - 1, s) (1 - q (s + 1) / m)^d.

These alternating sums are exact in rational arithmetic.  In floating
point the same expectations are evaluated after Poissonization, where
every term is positive and everything is carried in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson
from statsmodels.stats.proportion import proportion_confint

from .errors import InvalidParams, PreconditionNotMet, TooLarge
from .rng import stream
from .spin_model import coloring_kernel
from .tree import TreeShape, broadcast_sample


@dataclass(frozen=True)
class TypeProbs:
    l: int
    p_r: float
    p2: float
    p3: float
    p_b: float
    log_p_b: float

    @property
    def p_g(self) -> float:
        return 1.0 - self.p_b


def _check(k: int, d: int) -> None:
    if k < 3 or d < 1:
        raise InvalidParams("need k >= 3 and d >= 1")


# -- exact rational mode ---------------------------------------------------


def step_fraction(k: int, d: int, q: Fraction) -> tuple[Fraction, Fraction]:
    """``(p_r, p2)`` one level up from bad probability ``q``, exactly."""
    m = k - 1
    p_r = sum((-1) ** s * math.comb(m, s) * (1 - q * s / m) ** d for s in range(m + 1))
    p2 = m * sum((-1) ** s * math.comb(m - 1, s) * (1 - q * (s + 1) / m) ** d for s in range(m))
    return Fraction(p_r), Fraction(p2)


def type_recursion_fraction(k: int, d: int, L: int) -> list[tuple[Fraction, Fraction, Fraction, Fraction]]:
    """Exact ``(p_r, p2, p3, p_b)`` for ``l = 0..L``."""
    _check(k, d)
    out = [(Fraction(1), Fraction(0), Fraction(0), Fraction(1))]
    q = Fraction(1)
    for _ in range(L):
        p_r, p2 = step_fraction(k, d, q)
        q = p_r + p2 / (k - 1)
        out.append((p_r, p2, 1 - p_r - p2, q))
    return out


# -- direct multinomial summation (oracle) ---------------------------------


def _compositions(d: int, m: int):
    if m == 1:
        yield (d,)
        return
    for first in range(d + 1):
        for rest in _compositions(d - first, m - 1):
            yield (first,) + rest


def step_multinomial(k: int, d: int, q: float) -> tuple[float, float]:
    """``(p_r, p2)`` by summing over every color-count vector of the children."""
    m = k - 1
    p_r = p2 = 0.0
    a = 1.0 - q
    for counts in _compositions(d, m):
        w = math.factorial(d) / math.prod(math.factorial(c) for c in counts) / m**d
        blocked = [1.0 - a**c for c in counts]
        p_r += w * math.prod(blocked)
        for j, c in enumerate(counts):
            p2 += w * a**c * math.prod(b for i, b in enumerate(blocked) if i != j)
    return p_r, p2


def type_recursion_multinomial(k: int, d: int, L: int) -> list[TypeProbs]:
    _check(k, d)
    out = [TypeProbs(0, 1.0, 0.0, 0.0, 1.0, 0.0)]
    q = 1.0
    for l in range(1, L + 1):
        p_r, p2 = step_multinomial(k, d, q)
        q = p_r + p2 / (k - 1)
        out.append(TypeProbs(l, p_r, p2, 1.0 - p_r - p2, q, math.log(q) if q > 0 else -math.inf))
    return out


# -- stable floating mode --------------------------------------------------


def _poisson_pmf(rho: float, n: int) -> np.ndarray:
    j = np.arange(n + 1)
    return np.exp(j * math.log(rho) - rho - gammaln(j + 1))


def _poly_mul(a: np.ndarray, b: np.ndarray, n: int) -> tuple[np.ndarray, float]:
    c = np.convolve(a, b)[: n + 1]
    s = c.sum()
    if s <= 0:
        return np.zeros(n + 1), -math.inf
    return c / s, math.log(s)


def _poly_pow(g: np.ndarray, m: int, n: int) -> tuple[np.ndarray, float]:
    """``g^m`` truncated at degree ``n``, as (normalised coefficients, log scale)."""
    result = np.zeros(n + 1)
    result[0] = 1.0
    log_r = 0.0
    if g.sum() <= 0:
        return np.zeros(n + 1), -math.inf
    base, log_b = g / g.sum(), math.log(g.sum())
    while m:
        if m & 1:
            result, s = _poly_mul(result, base, n)
            log_r += s + log_b
        m >>= 1
        if m:
            base, s = _poly_mul(base, base, n)
            log_b = 2 * log_b + s
    return result, log_r


def step_log(k: int, d: int, log_q: float) -> tuple[float, float]:
    """``(log p_r, log p2)`` one level up from ``log q``, with no cancellation.

    With ``N_c`` i.i.d. Poisson(d/m) the color counts conditioned on
    ``sum N_c = d`` are multinomial, so each expectation is a coefficient
    of a product of generating functions with positive coefficients.
    """
    m = k - 1
    rho = d / m
    pois = _poisson_pmf(rho, d)
    q = math.exp(log_q)
    j = np.arange(d + 1, dtype=float)
    if q == 0.0:
        gt = j.copy()
    elif q == 1.0:
        gt = (j > 0).astype(float)
    else:
        gt = -np.expm1(j * math.log1p(-q)) / q  # (1 - (1-q)^j) / q
    g = gt * pois
    a = np.exp(j * math.log1p(-q)) * pois if q < 1.0 else np.where(j == 0, pois, 0.0)
    log_norm = d * math.log(d) - d - gammaln(d + 1)  # log Pr(Poisson(d) = d)

    Gm, s_m = _poly_pow(g, m, d)
    log_pr = m * log_q + s_m + (math.log(Gm[d]) if Gm[d] > 0 else -math.inf) - log_norm
    Gm1, s_m1 = _poly_pow(g, m - 1, d)
    AG, s_ag = _poly_mul(a, Gm1, d)
    log_p2 = (m - 1) * log_q + math.log(m) + s_m1 + s_ag + (math.log(AG[d]) if AG[d] > 0 else -math.inf) - log_norm
    return float(min(log_pr, 0.0)), float(min(log_p2, 0.0))


def type_recursion_exact(k: int, d: int, L: int) -> list[TypeProbs]:
    """``TypeProbs`` for ``l = 0..L`` in log-stable floating point."""
    _check(k, d)
    out = [TypeProbs(0, 1.0, 0.0, 0.0, 1.0, 0.0)]
    log_q = 0.0
    for l in range(1, L + 1):
        lr, l2 = step_log(k, d, log_q)
        log_q = float(np.logaddexp(lr, l2 - math.log(k - 1)))
        p_r, p2 = math.exp(lr), math.exp(l2)
        out.append(TypeProbs(l, p_r, p2, max(1.0 - p_r - p2, 0.0), math.exp(log_q), log_q))
    return out


# -- Monte Carlo classification --------------------------------------------


@dataclass(frozen=True)
class LevelEstimate:
    height: int
    n: int
    rigid: int
    type2: int
    type3: int
    bad: int
    free: int

    def p(self, name: str) -> float:
        return getattr(self, name) / self.n

    def sigma(self, name: str) -> float:
        p = self.p(name)
        return math.sqrt(max(p * (1 - p), 0.0) / self.n)

    def interval(self, name: str, alpha: float = 0.05) -> tuple[float, float]:
        lo, hi = proportion_confint(getattr(self, name), self.n, alpha=alpha, method="wilson")
        return float(lo), float(hi)


def mc_estimate_probs(
    k: int,
    d: int,
    depth: int,
    samples: int,
    rng: np.random.Generator,
    chunk: int | None = None,
    max_cells: int = 50_000_000,
) -> list[LevelEstimate]:
    """Pooled type counts per height from broadcast samples of the coloring model.

    Vertices on one level have i.i.d. types, so counts are pooled over
    the level.  The root is classified against a virtual parent drawn
    from the kernel.
    """
    from .glauber import fast_classify_masks

    _check(k, d)
    kernel = coloring_kernel(k)
    shape = TreeShape(d, depth)
    if shape.n > max_cells:
        raise TooLarge("tree too large for Monte Carlo classification")
    chunk = chunk or max(1, min(samples, 2_000_000 // shape.n))
    full = (1 << k) - 1
    tallies = np.zeros((depth + 1, 6), dtype=np.int64)
    cdf = np.cumsum(kernel.M, axis=1)
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        X = broadcast_sample(shape, kernel, rng, size=b)
        u = rng.random(b)
        parent = np.minimum((u[:, None] >= cdf[X[:, 0]]).sum(axis=1), k - 1)
        C, bad = fast_classify_masks(X, shape, k, parent)
        sizes = _popcount(C)
        for l in range(depth + 1):
            r = shape.level_range(l)
            s = sizes[:, r.start : r.stop]
            tallies[depth - l] += [
                s.size,
                int((s == 1).sum()),
                int((s == 2).sum()),
                int((s >= 3).sum()),
                int(bad[:, r.start : r.stop].sum()),
                int((C[:, r.start : r.stop] == full).sum()),
            ]
        done += b
    return [LevelEstimate(h, *map(int, tallies[h])) for h in range(depth + 1)]


def _popcount(a: np.ndarray) -> np.ndarray:
    out = np.zeros(a.shape, dtype=np.int64)
    a = a.copy()
    while a.any():
        out += a & 1
        a >>= 1
    return out


# -- Poissonized upper bound and decay checks ------------------------------


@dataclass(frozen=True)
class PoissonBoundParams:
    k: int
    d: int
    beta_star: float

    @property
    def D(self) -> float:
        return math.log(self.k) + math.log(math.log(self.k)) + self.beta_star

    @property
    def p(self) -> float:
        """``Pr(Poisson((k - 1) D) < d)``."""
        return float(poisson.cdf(self.d - 1, (self.k - 1) * self.D))


def poisson_bound_sequence(params: PoissonBoundParams, L: int) -> list[float]:
    """``y_0 = 1``, ``y_l = exp(-(k - 2) exp(-y_{l-1} D)) + p``."""
    if params.D <= 0:
        raise InvalidParams("D must be positive")
    D, p, k = params.D, params.p, params.k
    y = [1.0]
    for _ in range(L):
        y.append(math.exp(-(k - 2) * math.exp(-y[-1] * D)) + p)
    return y


def first_below(log_pb: Sequence[float], d: int) -> int | None:
    """First level with ``p_b <= 1 / (e d)``."""
    cut = -1.0 - math.log(d)
    for l, v in enumerate(log_pb):
        if v <= cut:
            return l
    return None


@dataclass(frozen=True)
class DoubleExpCheck:
    l0: int
    envelope: tuple[bool, ...]  # level l0 + i: log p_b <= -(k/2)^i
    one_step: tuple[bool, ...]  # level l: p_b(l+1) <= (d p_b(l))^(k-2)

    @property
    def ok(self) -> bool:
        return all(self.envelope) and all(self.one_step)


def double_exp_check(k: int, d: int, log_pb: Sequence[float], l0: int | None = None) -> DoubleExpCheck:
    """Check the double-exponential envelope from ``l0`` on, in log space."""
    if l0 is None:
        l0 = first_below(log_pb, d)
        if l0 is None:
            raise PreconditionNotMet("p_b never drops to 1/(e d)")
    elif log_pb[l0] > -1.0 - math.log(d):
        raise PreconditionNotMet("p_b(l0) exceeds 1/(e d)")
    env = tuple(log_pb[l] <= -((k / 2) ** (l - l0)) for l in range(l0, len(log_pb)))
    step = tuple(
        log_pb[l + 1] == -math.inf
        or log_pb[l + 1] <= (k - 2) * (math.log(d) + log_pb[l]) + 1e-12 * abs(log_pb[l + 1])
        for l in range(len(log_pb) - 1)
    )
    return DoubleExpCheck(l0, env, step)


# -- threshold scan --------------------------------------------------------


def scan_degree(k: int, beta: float) -> int:
    return int(math.floor(k * (math.log(k) + math.log(math.log(k)) + beta)))


@dataclass(frozen=True)
class ScanRow:
    k: int
    d: int
    beta: float
    status: str
    certified: bool
    l0: int | None
    envelope_ok: bool | None
    dominated: bool | None
    levels: tuple[TypeProbs, ...]
    y: tuple[float, ...]


def threshold_scan(k_list: Iterable[int], beta: float, L: int = 40, beta_star: float | None = None) -> list[ScanRow]:
    """For each ``k`` run the recursion at ``d = floor(k (log k + log log k + beta))``."""
    rows = []
    for k in k_list:
        if k < 4:
            rows.append(ScanRow(k, 0, beta, "out_of_regime", False, None, None, None, (), ()))
            continue
        d = scan_degree(k, beta)
        bs = (1 + beta) / 2 if beta_star is None else beta_star
        levels = tuple(type_recursion_exact(k, d, L))
        log_pb = [t.log_p_b for t in levels]
        y = tuple(poisson_bound_sequence(PoissonBoundParams(k, d, bs), L))
        dominated = all(t.p_b <= yl * (1 + 1e-12) for t, yl in zip(levels, y))
        l0 = first_below(log_pb, d)
        if l0 is None:
            rows.append(ScanRow(k, d, beta, "not_certified", False, None, None, dominated, levels, y))
            continue
        chk = double_exp_check(k, d, log_pb, l0)
        env_ok = all(chk.envelope)
        status = "certified" if env_ok else "envelope_failed"
        rows.append(ScanRow(k, d, beta, status, env_ok, l0, env_ok, dominated, levels, y))
    return rows


SCAN_HEADER = ["k", "d", "beta", "l", "p_r", "p2", "p3", "p_b", "y_l", "certified", "l0", "log_p_b"]


def scan_csv_rows(rows: Sequence[ScanRow]) -> list[list]:
    out = []
    for r in rows:
        if r.status == "out_of_regime":
            out.append([r.k, "", r.beta, "", "", "", "", "", "", "out_of_regime", "", ""])
            continue
        for t, yl in zip(r.levels, r.y):
            out.append([
                r.k, r.d, r.beta, t.l, t.p_r, t.p2, t.p3, t.p_b, yl,
                str(r.certified).lower(), "" if r.l0 is None else r.l0,
                t.log_p_b if t.p_b < 1e-15 else "",
            ])
    return out


def recursion_csv_rows(k: int, d: int, L: int, beta_star: float | None = None) -> list[list]:
    """Single-instance table; ``y_l`` uses ``beta*`` implied by ``d`` unless given."""
    levels = type_recursion_exact(k, d, L)
    if beta_star is None:
        beta_star = d / k - math.log(k) - math.log(math.log(k)) if k >= 3 else 0.0
    params = PoissonBoundParams(k, d, beta_star)
    y = poisson_bound_sequence(params, L) if params.D > 0 else [float("nan")] * (L + 1)
    l0 = first_below([t.log_p_b for t in levels], d)
    return [
        [k, d, beta_star, t.l, t.p_r, t.p2, t.p3, t.p_b, yl, str(l0 is not None).lower(),
         "" if l0 is None else l0, t.log_p_b if t.p_b < 1e-15 else ""]
        for t, yl in zip(levels, y)
    ]
