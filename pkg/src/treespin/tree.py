"""Complete d-ary trees, configurations and exact boundary computations.

Vertices are numbered in breadth-first order: the root is 0 and the
children of ``v`` are ``d*v + 1 .. d*v + d``.  Every level, and every
level of every subtree, is therefore a contiguous index range.

A block ``B(x, l)`` is the part of the subtree ``T_x`` at relative depth
``0..l``; its bottom level is ``L(x, l)``.  When ``x`` is within ``l`` of
the leaves the block is all of ``T_x``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import InconsistentBoundary, InvalidParams, TooLarge, ZeroProbabilityBoundary
from .spin_model import SpinKernel

DEFAULT_GUARD = 5_000_000
PARENT = -1  # key of the virtual parent of the root in a frozen map


@dataclass(frozen=True)
class TreeShape:
    d: int
    depth: int

    def __post_init__(self):
        if self.d < 1 or self.depth < 0:
            raise InvalidParams("need d >= 1 and depth >= 0")

    @cached_property
    def level_start(self) -> tuple[int, ...]:
        starts = [0]
        for l in range(self.depth + 1):
            starts.append(starts[-1] + self.d**l)
        return tuple(starts)

    @property
    def n(self) -> int:
        return self.level_start[-1]

    @cached_property
    def parent_array(self) -> np.ndarray:
        p = np.arange(self.n) - 1
        p[1:] = (np.arange(1, self.n) - 1) // self.d
        p[0] = -1
        return p

    @cached_property
    def level_array(self) -> np.ndarray:
        lev = np.empty(self.n, dtype=np.int64)
        for l in range(self.depth + 1):
            lev[self.level_start[l] : self.level_start[l + 1]] = l
        return lev

    def parent(self, v: int) -> int:
        return -1 if v == 0 else (v - 1) // self.d

    def children(self, v: int) -> range:
        if self.level(v) == self.depth:
            return range(0)
        return range(self.d * v + 1, self.d * v + self.d + 1)

    def level(self, v: int) -> int:
        return int(self.level_array[v])

    def height(self, v: int) -> int:
        return self.depth - self.level(v)

    def level_range(self, l: int) -> range:
        return range(self.level_start[l], self.level_start[l + 1])

    def subtree_level(self, x: int, r: int) -> range:
        """Descendants of ``x`` at relative depth ``r`` (``L(x, r)``)."""
        if r < 0 or self.level(x) + r > self.depth:
            return range(0)
        a = x
        for _ in range(r):
            a = self.d * a + 1
        return range(a, a + self.d**r)

    def subtree(self, x: int, max_depth: int | None = None) -> list[int]:
        """``T_x`` truncated at relative depth ``max_depth``, in BFS order."""
        top = self.height(x) if max_depth is None else min(max_depth, self.height(x))
        out: list[int] = []
        for r in range(top + 1):
            out.extend(self.subtree_level(x, r))
        return out

    def block(self, x: int, l: int) -> list[int]:
        return self.subtree(x, l)

    def block_bottom(self, x: int, l: int) -> range:
        return self.subtree_level(x, min(l, self.height(x)))

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        child = np.arange(1, self.n)
        return self.parent_array[1:], child


@dataclass(frozen=True)
class BoundarySpec:
    """Frozen vertices; the key ``PARENT`` (-1) freezes the virtual parent of the root."""

    frozen: Mapping[int, int] = field(default_factory=dict)

    @property
    def parent_state(self) -> int | None:
        return self.frozen.get(PARENT)

    def vertices(self) -> set[int]:
        return {v for v in self.frozen if v != PARENT}

    @classmethod
    def free(cls) -> BoundarySpec:
        return cls({})

    @classmethod
    def with_parent(cls, c: int, frozen: Mapping[int, int] | None = None) -> BoundarySpec:
        f = dict(frozen or {})
        f[PARENT] = c
        return cls(f)


def check_boundary(shape: TreeShape, kernel: SpinKernel, boundary: BoundarySpec) -> None:
    compat = kernel.compat
    for v, s in boundary.frozen.items():
        if not 0 <= s < kernel.k:
            raise InconsistentBoundary(f"state {s} out of range")
        if v != PARENT and not 0 <= v < shape.n:
            raise InconsistentBoundary(f"vertex {v} out of range")
    for v, s in boundary.frozen.items():
        if v == PARENT:
            continue
        p = PARENT if v == 0 else shape.parent(v)
        if p in boundary.frozen and not compat[boundary.frozen[p], s]:
            raise InconsistentBoundary(f"frozen states clash on edge ({p}, {v})")


# -- configurations --------------------------------------------------------


def is_valid(shape: TreeShape, kernel: SpinKernel, config: Sequence[int], parent_state: int | None = None) -> bool:
    s = np.asarray(config)
    if s.shape != (shape.n,):
        return False
    if s.min() < 0 or s.max() >= kernel.k:
        return False
    p, c = shape.edges()
    ok = bool(kernel.compat[s[p], s[c]].all())
    if parent_state is not None:
        ok = ok and bool(kernel.compat[parent_state, s[0]])
    return ok


def gibbs_weight(shape: TreeShape, kernel: SpinKernel, config: Sequence[int], parent_state: int | None = None) -> float:
    """``pi(root) * prod M(parent, child)``; with a frozen parent ``c`` the root factor is ``M(c, root)``."""
    s = np.asarray(config)
    root = kernel.pi[s[0]] if parent_state is None else kernel.M[parent_state, s[0]]
    p, c = shape.edges()
    return float(root * np.prod(kernel.M[s[p], s[c]]))


def format_configuration(config: Sequence[int]) -> str:
    """One line, level order, states written 1..k."""
    return " ".join(str(int(s) + 1) for s in config)


def parse_configuration(line: str) -> tuple[int, ...]:
    try:
        out = tuple(int(tok) - 1 for tok in line.split())
    except ValueError as exc:
        raise InvalidParams(f"bad configuration line {line!r}") from exc
    if not out or min(out) < 0:
        raise InvalidParams("states are written 1..k")
    return out


def broadcast_sample(
    shape: TreeShape,
    kernel: SpinKernel,
    rng: np.random.Generator,
    root_state: int | None = None,
    parent_state: int | None = None,
    size: int | None = None,
):
    """Sample from the broadcast process (equivalently the free Gibbs law).

    Returns a tuple for ``size=None``, else an ``(size, n)`` int array.
    The root is forced to ``root_state`` if given, else drawn from
    ``M(parent_state, .)`` if a parent is given, else from ``pi``.
    """
    m = 1 if size is None else size
    X = np.empty((m, shape.n), dtype=np.int64)
    cdf = np.cumsum(kernel.M, axis=1)
    cdf[:, -1] = 1.0
    if root_state is not None:
        X[:, 0] = root_state
    else:
        base = kernel.pi if parent_state is None else kernel.M[parent_state]
        c0 = np.cumsum(base)
        c0[-1] = 1.0
        X[:, 0] = np.searchsorted(c0, rng.random(m), side="right")
    for l in range(1, shape.depth + 1):
        r = shape.level_range(l)
        par = shape.parent_array[r.start : r.stop]
        u = rng.random((m, len(r)))
        rows = cdf[X[:, par]]
        X[:, r.start : r.stop] = (u[..., None] >= rows).sum(axis=-1)
    X = np.minimum(X, kernel.k - 1)
    return tuple(int(v) for v in X[0]) if size is None else X


# -- exact enumeration -----------------------------------------------------


@dataclass(eq=False)
class StateSpace:
    """All configurations of positive weight under a boundary, lexicographically sorted."""

    shape: TreeShape
    kernel: SpinKernel
    boundary: BoundarySpec
    states: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self) -> Iterator[tuple[tuple[int, ...], float]]:
        for row, w in zip(self.states, self.weights):
            yield tuple(int(v) for v in row), float(w)

    @cached_property
    def radix(self) -> np.ndarray:
        k, n = self.kernel.k, self.shape.n
        if n * np.log2(max(k, 2)) > 62:
            raise TooLarge("state codes exceed 62 bits")
        return k ** np.arange(n - 1, -1, -1, dtype=np.int64)

    @cached_property
    def codes(self) -> np.ndarray:
        return self.states.astype(np.int64) @ self.radix

    def index(self, config: Sequence[int]) -> int:
        code = int(np.asarray(config, dtype=np.int64) @ self.radix)
        i = int(np.searchsorted(self.codes, code))
        if i >= len(self.codes) or self.codes[i] != code:
            raise KeyError(tuple(config))
        return i

    def lookup(self, codes: np.ndarray) -> np.ndarray:
        """Indices of ``codes`` in the space, -1 where absent."""
        i = np.searchsorted(self.codes, codes)
        i = np.minimum(i, len(self.codes) - 1)
        return np.where(self.codes[i] == codes, i, -1)

    @cached_property
    def free_vertices(self) -> list[int]:
        fixed = self.boundary.vertices()
        return [v for v in range(self.shape.n) if v not in fixed]

    @cached_property
    def moves(self) -> dict[int, np.ndarray]:
        """``moves[v][i, c]`` = index of state ``i`` with vertex ``v`` set to ``c`` (-1 if invalid)."""
        out = {}
        k = self.kernel.k
        for v in self.free_vertices:
            cur = self.states[:, v].astype(np.int64)
            tab = np.empty((len(self), k), dtype=np.int64)
            for c in range(k):
                tab[:, c] = self.lookup(self.codes + (c - cur) * self.radix[v])
            out[v] = tab
        return out


def enumerate_states(
    shape: TreeShape,
    kernel: SpinKernel,
    boundary: BoundarySpec | None = None,
    guard: int = DEFAULT_GUARD,
) -> StateSpace:
    """Exact enumeration of the (conditional) Gibbs law.

    The guard bounds the number of partial configurations kept at any
    point; ``TooLarge`` is raised beyond it.
    """
    boundary = boundary or BoundarySpec.free()
    check_boundary(shape, kernel, boundary)
    k = kernel.k
    M = kernel.M
    X = np.zeros((1, shape.n), dtype=np.int16)
    w = np.ones(1)
    pstate = boundary.parent_state
    for v in range(shape.n):
        cands = [boundary.frozen[v]] if v in boundary.frozen else range(k)
        parts_X, parts_w = [], []
        for c in cands:
            if v == 0:
                f = np.full(len(w), kernel.pi[c] if pstate is None else M[pstate, c])
            else:
                f = M[X[:, shape.parent(v)], c]
            keep = f > 0
            if not keep.any():
                continue
            Xc = X[keep].copy()
            Xc[:, v] = c
            parts_X.append(Xc)
            parts_w.append(w[keep] * f[keep])
        if not parts_X:
            raise ZeroProbabilityBoundary("boundary admits no configuration")
        X = np.concatenate(parts_X)
        w = np.concatenate(parts_w)
        if len(w) > guard:
            raise TooLarge(f"enumeration exceeds guard {guard}")
    order = np.lexsort(X.T[::-1])
    X, w = X[order], w[order]
    return StateSpace(shape, kernel, boundary, X, w / w.sum())


# -- sum-product -----------------------------------------------------------


def _upward(kernel: SpinKernel, d: int, leaf_msgs: np.ndarray, evidence: list[np.ndarray] | None = None):
    """Propagate level messages to the root.

    ``leaf_msgs`` has shape ``(B, d**l, k)``; ``evidence[r]`` (optional,
    shape ``(B, d**r, k)``) multiplies the messages at relative depth
    ``r``.  Returns ``(msg, logscale)`` with the root likelihood equal to
    ``msg * exp(logscale)`` and ``msg`` scaled to max 1 per row.
    """
    B, width, k = leaf_msgs.shape
    l = 0
    while d**l < width:
        l += 1
    m = leaf_msgs.astype(float)
    if evidence is not None and evidence[l] is not None:
        m = m * evidence[l]
    logscale = np.zeros(B)
    for r in range(l - 1, -1, -1):
        pushed = m @ kernel.M.T  # (B, d^{r+1}, k): sum_c' M(c, c') m(c')
        m = pushed.reshape(B, d**r, d, k).prod(axis=2)
        if evidence is not None and evidence[r] is not None:
            m = m * evidence[r]
        top = m.max(axis=2)
        top = np.where(top > 0, top, 1.0)
        m = m / top[..., None]
        logscale += np.log(top).sum(axis=1)
    return m[:, 0, :], logscale


def _evidence_from_boundary(shape: TreeShape, kernel: SpinKernel, boundary, x: int, l: int):
    k = kernel.k
    ev: list[np.ndarray | None] = [None] * (l + 1)
    if boundary is None:
        return ev
    if isinstance(boundary, Mapping):
        items = boundary.items()
    else:
        bottom = shape.subtree_level(x, l)
        if len(boundary) != len(bottom):
            raise InvalidParams(f"expected {len(bottom)} boundary states")
        items = ((v, s) for v, s in zip(bottom, boundary) if s is not None)
    for v, s in items:
        if v == PARENT:
            continue
        r = shape.level(v) - shape.level(x)
        level = shape.subtree_level(x, r)
        if r < 0 or r > l or v not in level:
            raise InvalidParams(f"vertex {v} is not in the truncated subtree of {x}")
        if ev[r] is None:
            ev[r] = np.ones((1, len(level), k))
        ind = np.zeros(k)
        ind[s] = 1.0
        ev[r][0, v - level.start] *= ind
    return ev


def conditional_root_marginal(
    shape: TreeShape,
    kernel: SpinKernel,
    boundary=None,
    x: int = 0,
    l: int | None = None,
    parent_state: int | None = None,
) -> np.ndarray:
    """Law of ``sigma_x`` given a partial assignment inside ``T_x`` (depth <= l).

    ``boundary`` is either a vertex -> state mapping or a sequence of
    states (``None`` = unconstrained) for the vertices of ``L(x, l)``.
    With ``parent_state`` the prior at ``x`` is ``M(parent_state, .)``,
    else ``pi``.
    """
    l = shape.height(x) if l is None else l
    if l > shape.height(x):
        raise InvalidParams("l exceeds the height of x")
    k = kernel.k
    ev = _evidence_from_boundary(shape, kernel, boundary, x, l)
    leaf = np.ones((1, kernel_width(shape.d, l), k))
    msg, _ = _upward(kernel, shape.d, leaf, ev)
    prior = kernel.pi if parent_state is None else kernel.M[parent_state]
    post = prior * msg[0]
    z = post.sum()
    if z <= 0:
        raise ZeroProbabilityBoundary("boundary has zero probability")
    return post / z


def kernel_width(d: int, l: int) -> int:
    return d**l


def all_boundaries(k: int, width: int, guard: int = DEFAULT_GUARD) -> np.ndarray:
    if k**width > guard:
        raise TooLarge(f"{k}^{width} boundary configurations exceed guard {guard}")
    return np.array(list(itertools.product(range(k), repeat=width)), dtype=np.int64).reshape(-1, width)


def boundary_likelihoods(kernel: SpinKernel, d: int, l: int, etas: np.ndarray) -> np.ndarray:
    """``P(sigma_{L_l} = eta | root = c)`` for every row ``eta``; shape ``(B, k)``."""
    k = kernel.k
    B = len(etas)
    leaf = np.zeros((B, d**l, k))
    np.put_along_axis(leaf, etas[..., None], 1.0, axis=2)
    msg, logscale = _upward(kernel, d, leaf)
    return msg * np.exp(logscale)[:, None]


def boundary_laws(shape: TreeShape, kernel: SpinKernel, l: int, guard: int = DEFAULT_GUARD):
    """All level-``l`` boundaries with their root-conditional likelihoods."""
    if l > shape.depth:
        raise InvalidParams("l exceeds tree depth")
    etas = all_boundaries(kernel.k, shape.d**l, guard)
    return etas, boundary_likelihoods(kernel, shape.d, l, etas)


def reconstruction_tv(shape: TreeShape, kernel: SpinKernel, l: int, c: int, c_prime: int, guard: int = DEFAULT_GUARD) -> float:
    """Total variation between the level-``l`` laws given root ``c`` and root ``c_prime``."""
    if c == c_prime:
        return 0.0
    _, lik = boundary_laws(shape, kernel, l, guard)
    return float(0.5 * np.abs(lik[:, c] - lik[:, c_prime]).sum())


def uniqueness_sup(shape: TreeShape, kernel: SpinKernel, l: int, guard: int = DEFAULT_GUARD) -> float:
    """Largest TV between root laws over pairs of positive-probability level-``l`` boundaries."""
    _, lik = boundary_laws(shape, kernel, l, guard)
    post = lik * kernel.pi[None, :]
    z = post.sum(axis=1)
    post = post[z > 0] / z[z > 0, None]
    post = np.unique(np.round(post, 14), axis=0)
    best = 0.0
    for i in range(len(post)):
        tv = 0.5 * np.abs(post[i + 1 :] - post[i]).sum(axis=1)
        if len(tv):
            best = max(best, float(tv.max()))
    return min(best, 1.0)


def reconstruction_table(shape: TreeShape, kernel: SpinKernel, levels: Sequence[int], guard: int = DEFAULT_GUARD):
    """Rows ``(l, c, c_prime, tv)`` with states written 1..k."""
    rows = []
    k = kernel.k
    for l in levels:
        _, lik = boundary_laws(shape, kernel, l, guard)
        for c in range(k):
            for cp in range(k):
                tv = 0.0 if c == cp else float(0.5 * np.abs(lik[:, c] - lik[:, cp]).sum())
                rows.append((l, c + 1, cp + 1, tv))
    return rows


def conditional_sample(
    shape: TreeShape,
    kernel: SpinKernel,
    boundary: BoundarySpec,
    rng: np.random.Generator,
    size: int | None = None,
):
    """Exact sample of the Gibbs law conditioned on the frozen vertices.

    Upward messages carry the evidence; states are then drawn top-down.
    """
    check_boundary(shape, kernel, boundary)
    k, M = kernel.k, kernel.M
    msg = np.ones((shape.n, k))
    for v in boundary.vertices():
        ind = np.zeros(k)
        ind[boundary.frozen[v]] = 1.0
        msg[v] = ind
    for l in range(shape.depth - 1, -1, -1):
        r = shape.level_range(l)
        ch = shape.level_range(l + 1)
        pushed = msg[ch.start : ch.stop] @ M.T
        msg[r.start : r.stop] *= pushed.reshape(len(r), shape.d, k).prod(axis=1)
        top = msg[r.start : r.stop].max(axis=1, keepdims=True)
        if (top <= 0).any():
            raise ZeroProbabilityBoundary("boundary admits no configuration")
        msg[r.start : r.stop] /= top
    m = 1 if size is None else size
    ps = boundary.parent_state
    prior = kernel.pi if ps is None else M[ps]
    root = prior * msg[0]
    if root.sum() <= 0:
        raise ZeroProbabilityBoundary("boundary admits no configuration")
    X = np.empty((m, shape.n), dtype=np.int64)
    c0 = np.cumsum(root / root.sum())
    X[:, 0] = np.minimum(np.searchsorted(c0, rng.random(m), side="right"), k - 1)
    for l in range(1, shape.depth + 1):
        r = shape.level_range(l)
        par = shape.parent_array[r.start : r.stop]
        p = M[X[:, par]] * msg[r.start : r.stop][None]
        cdf = np.cumsum(p, axis=-1)
        cdf /= cdf[..., -1:]
        u = rng.random((m, len(r)))
        X[:, r.start : r.stop] = np.minimum((u[..., None] >= cdf).sum(axis=-1), k - 1)
    return tuple(int(v) for v in X[0]) if size is None else X
