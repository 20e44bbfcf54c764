"""Belief-propagation ratio recursion and its statistics.

A ratio vector ``r`` at a vertex is the conditional law of its state given
the boundary below it, divided entrywise by ``pi``; it lives on the slice
``{r >= 0, pi . r = 1}``.  Its deviation is ``max_c |r_c - 1|``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from .errors import DegenerateDenominator, InvalidParams, ZeroProbabilityBoundary
from .spin_model import SpinKernel
from .tree import DEFAULT_GUARD, TreeShape, all_boundaries, boundary_likelihoods, broadcast_sample


def ratio_step(children: Sequence[np.ndarray], kernel: SpinKernel) -> np.ndarray:
    """Combine the ratios of the ``d`` children into the parent's ratio."""
    num = np.ones(kernel.k)
    for r in children:
        num = num * (kernel.M @ np.asarray(r, dtype=float))
    den = float(kernel.pi @ num)
    if den <= 0:
        raise DegenerateDenominator("children ratios describe an impossible boundary")
    return num / den


def leaf_ratio(kernel: SpinKernel, state: int | None) -> np.ndarray:
    if state is None:
        return np.ones(kernel.k)
    r = np.zeros(kernel.k)
    r[state] = 1.0 / kernel.pi[state]
    return r


def ratio_from_boundary(shape: TreeShape, kernel: SpinKernel, boundary, x: int = 0, l: int | None = None) -> np.ndarray:
    """Ratio at ``x`` given states on ``L(x, l)``.

    ``boundary`` is a sequence over ``L(x, l)`` (``None`` entries are
    unconstrained) or a vertex -> state mapping.
    """
    l = shape.height(x) if l is None else l
    if l > shape.height(x):
        raise InvalidParams("l exceeds the height of x")
    width = shape.d**l
    if boundary is None:
        boundary = [None] * width
    elif isinstance(boundary, Mapping):
        boundary = [boundary.get(v) for v in shape.subtree_level(x, l)]
    if len(boundary) != width:
        raise InvalidParams(f"expected {width} boundary states")
    level = [leaf_ratio(kernel, s) for s in boundary]
    try:
        for _ in range(l):
            level = [ratio_step(level[i : i + shape.d], kernel) for i in range(0, len(level), shape.d)]
    except DegenerateDenominator as exc:
        raise ZeroProbabilityBoundary("boundary has zero probability") from exc
    return level[0]


def batch_ratios(kernel: SpinKernel, d: int, l: int, etas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Root ratios for many full boundaries at once.

    Returns ``(R, ok)`` where ``ok`` flags boundaries of positive
    probability; rows of ``R`` with ``ok`` false are NaN.
    """
    k = kernel.k
    B = len(etas)
    r = np.zeros((B, d**l, k))
    np.put_along_axis(r, etas[..., None], (1.0 / kernel.pi)[etas][..., None], axis=2)
    ok = np.ones(B, dtype=bool)
    for level in range(l - 1, -1, -1):
        pushed = r @ kernel.M.T
        num = pushed.reshape(B, d**level, d, k).prod(axis=2)
        den = num @ kernel.pi
        bad = ~(den > 0)
        ok &= ~bad.any(axis=1)
        r = num / np.where(bad, 1.0, den)[..., None]
    R = r[:, 0, :]
    R[~ok] = np.nan
    return R, ok


def deviation(r: np.ndarray) -> np.ndarray:
    return np.abs(np.asarray(r) - 1.0).max(axis=-1)


# -- contraction -----------------------------------------------------------


def _slice_vertices(pi: np.ndarray) -> np.ndarray:
    """Vertices of ``{u : pi . u = 0, |u|_inf <= 1}``."""
    k = len(pi)
    pts = []
    for j in range(k):
        others = [i for i in range(k) if i != j]
        for signs in itertools.product((-1.0, 1.0), repeat=k - 1):
            u = np.zeros(k)
            u[others] = signs
            u[j] = -(pi[others] @ u[others]) / pi[j]
            if abs(u[j]) <= 1 + 1e-12:
                pts.append(u)
    return np.array(pts)


def contraction_factor(kernel: SpinKernel, m: int) -> float:
    """Worst-case ratio ``|M^m r - 1|_inf / |r - 1|_inf`` over ratio vectors ``r != 1``.

    Since ``pi . (r - 1) = 0`` and the ratio is scale invariant, this is the
    infinity-norm of ``M^m`` on the hyperplane ``pi . u = 0``; the maximum
    of a convex function over that polytope sits at one of its vertices.
    """
    if m < 0:
        raise InvalidParams("m must be >= 0")
    if m == 0:
        return 1.0
    Mm = np.linalg.matrix_power(kernel.M, m)
    V = _slice_vertices(kernel.pi)
    return float(np.abs(V @ Mm.T).max())


def simplex_vertex_factor(kernel: SpinKernel, m: int) -> float:
    """The same ratio restricted to the extreme ratio vectors ``e_c / pi_c``."""
    if m == 0:
        return 1.0
    Mm = np.linalg.matrix_power(kernel.M, m)
    best = 0.0
    for c in range(kernel.k):
        r = np.zeros(kernel.k)
        r[c] = 1.0 / kernel.pi[c]
        best = max(best, deviation(Mm @ r) / deviation(r))
    return float(best)


def minimal_contraction_m(kernel: SpinKernel, target: float = 0.25, max_m: int = 1000) -> int | None:
    for m in range(max_m + 1):
        if contraction_factor(kernel, m) < target:
            return m
    return None


def contraction_table(kernel: SpinKernel, ms: Sequence[int]):
    return [(m, contraction_factor(kernel, m)) for m in ms]


# -- boundary statistics ---------------------------------------------------


@dataclass(frozen=True)
class _BoundaryTable:
    etas: np.ndarray
    mass: np.ndarray
    lik: np.ndarray
    R: np.ndarray
    ok: np.ndarray


def _boundary_table(shape: TreeShape, kernel: SpinKernel, l: int, guard: int) -> _BoundaryTable:
    if l > shape.depth:
        raise InvalidParams("l exceeds tree depth")
    etas = all_boundaries(kernel.k, shape.d**l, guard)
    lik = boundary_likelihoods(kernel, shape.d, l, etas)
    mass = lik @ kernel.pi
    R, ok = batch_ratios(kernel, shape.d, l, etas)
    return _BoundaryTable(etas, mass, lik, R, ok)


def mean_deviation_identity(shape: TreeShape, kernel: SpinKernel, l: int, c: int, guard: int = DEFAULT_GUARD) -> tuple[float, float]:
    """``(E|r(c) - 1|, 2 TV(law of level l given root c, law of level l))``."""
    t = _boundary_table(shape, kernel, l, guard)
    lhs = float((t.mass[t.ok] * np.abs(t.R[t.ok, c] - 1.0)).sum())
    rhs = float(np.abs(t.lik[:, c] - t.mass).sum())
    return lhs, rhs


def expected_deviation(shape: TreeShape, kernel: SpinKernel, l: int, guard: int = DEFAULT_GUARD) -> float:
    t = _boundary_table(shape, kernel, l, guard)
    return float((t.mass[t.ok] * deviation(t.R[t.ok])).sum())


@dataclass(frozen=True)
class TailEstimate:
    l: int
    z: float
    value: float
    ci_low: float
    ci_high: float
    exact: bool
    samples: int = 0


def deviation_tail(
    shape: TreeShape,
    kernel: SpinKernel,
    l: int,
    z: float,
    mode: str = "exact",
    samples: int = 10_000,
    rng: np.random.Generator | None = None,
    guard: int = DEFAULT_GUARD,
) -> TailEstimate:
    """``Pr(deviation of the root ratio > z)`` under the free Gibbs law of level ``l``."""
    if z <= 0:
        raise InvalidParams("z must be positive")
    if mode not in ("exact", "mc"):
        raise InvalidParams(f"unknown mode {mode!r}")
    exact = mode == "exact"
    if z >= 1.0 / kernel.pi_min:
        return TailEstimate(l, z, 0.0, 0.0, 0.0, exact, 0 if exact else samples)
    if exact:
        t = _boundary_table(shape, kernel, l, guard)
        g = float(t.mass[t.ok][deviation(t.R[t.ok]) > z].sum())
        return TailEstimate(l, z, g, g, g, True)
    if rng is None:
        raise InvalidParams("mc mode needs an rng")
    hits = mc_tail_count(kernel, shape.d, l, z, samples, rng)
    lo, hi = proportion_confint(hits, samples, alpha=0.05, method="wilson")
    return TailEstimate(l, z, hits / samples, float(lo), float(hi), False, samples)


def mc_tail_count(kernel: SpinKernel, d: int, l: int, z: float, samples: int, rng: np.random.Generator, chunk: int = 20_000) -> int:
    sub = TreeShape(d, l)
    bottom = sub.level_range(l)
    hits = 0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        X = broadcast_sample(sub, kernel, rng, size=m)
        R, ok = batch_ratios(kernel, d, l, X[:, bottom.start : bottom.stop])
        hits += int((deviation(R[ok]) > z).sum())
        done += m
    return hits
