"""Single-site dynamics, reachability and the component dynamics.

Reachability questions are answered by breadth-first search over the
configuration graph whose edges are valid single-site moves.  Searches
only ever touch the vertices allowed to move; everything else stays at
its current value.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InconsistentBoundary, NotColoringModel, TooLarge
from .spin_model import SpinKernel
from .tree import (
    DEFAULT_GUARD,
    PARENT,
    BoundarySpec,
    StateSpace,
    TreeShape,
    check_boundary,
    enumerate_states,
    is_valid,
)

__all__ = [
    "BoundarySpec",
    "PARENT",
    "VertexClassification",
    "ComponentSet",
    "single_site_weights",
    "glauber_step",
    "glauber_move",
    "reachable",
    "one_step_change_set",
    "classify_vertex",
    "classify_all",
    "coloring_fast_classify",
    "fast_classify_masks",
    "component_of",
    "component_dynamics_step",
    "component_dynamics_move",
    "block_component_labels",
    "glauber_component_labels",
    "is_irreducible",
    "find_pinning_boundary",
]


@dataclass(frozen=True)
class VertexClassification:
    C: frozenset[int]
    type: str
    bad: bool | None
    free: bool

    @classmethod
    def from_change_set(cls, C, own: int, k: int, parent_state: int | None) -> VertexClassification:
        C = frozenset(int(c) for c in C)
        kind = "rigid" if len(C) == 1 else "type2" if len(C) == 2 else "type3"
        bad = None if parent_state is None else (C - {parent_state}) == {own}
        return cls(C, kind, bad, len(C) == k)


def _check_start(shape: TreeShape, kernel: SpinKernel, config, boundary: BoundarySpec) -> np.ndarray:
    s = np.asarray(config, dtype=np.int64)
    if not is_valid(shape, kernel, s, boundary.parent_state):
        raise InconsistentBoundary("configuration is not valid")
    for v in boundary.vertices():
        if s[v] != boundary.frozen[v]:
            raise InconsistentBoundary(f"vertex {v} disagrees with the boundary")
    return s


def single_site_weights(shape: TreeShape, kernel: SpinKernel, config, v: int, parent_state: int | None = None) -> np.ndarray:
    """Unnormalised conditional law of ``sigma_v`` given all other vertices."""
    M = kernel.M
    if v == 0:
        w = kernel.pi.copy() if parent_state is None else M[parent_state].copy()
    else:
        w = M[config[shape.parent(v)]].copy()
    for ch in shape.children(v):
        w *= M[:, config[ch]]
    return w


def glauber_move(config, shape: TreeShape, kernel: SpinKernel, boundary: BoundarySpec, rng: np.random.Generator):
    """One heat-bath update; returns ``(new_config, vertex, old, new)``."""
    boundary = boundary or BoundarySpec.free()
    s = _check_start(shape, kernel, config, boundary)
    movable = [v for v in range(shape.n) if v not in boundary.frozen]
    if not movable:
        return tuple(int(a) for a in s), -1, -1, -1
    v = movable[int(rng.integers(len(movable)))]
    w = single_site_weights(shape, kernel, s, v, boundary.parent_state)
    new = int(rng.choice(kernel.k, p=w / w.sum()))
    old = int(s[v])
    s[v] = new
    return tuple(int(a) for a in s), v, old, new


def glauber_step(config, shape: TreeShape, kernel: SpinKernel, boundary: BoundarySpec, rng: np.random.Generator):
    return glauber_move(config, shape, kernel, boundary, rng)[0]


# -- explicit breadth-first search -----------------------------------------


def reachable(
    shape: TreeShape,
    kernel: SpinKernel,
    config,
    movable: Sequence[int],
    parent_state: int | None = None,
    guard: int = DEFAULT_GUARD,
) -> list[tuple[int, ...]]:
    """Configurations reachable from ``config`` by valid moves of ``movable`` vertices.

    Results are the full configurations, sorted lexicographically.
    """
    compat = kernel.compat.tolist()
    k = kernel.k
    movable = sorted(movable)
    nbrs = []
    for v in movable:
        up = shape.parent(v) if v != 0 else None
        nbrs.append((v, up, tuple(shape.children(v))))
    start = tuple(int(a) for a in config)
    seen = {start}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for v, up, chs in nbrs:
            cur = s[v]
            for c in range(k):
                if c == cur:
                    continue
                if up is None:
                    if parent_state is not None and not compat[parent_state][c]:
                        continue
                elif not compat[s[up]][c]:
                    continue
                row = compat[c]
                if not all(row[s[ch]] for ch in chs):
                    continue
                t = s[:v] + (c,) + s[v + 1 :]
                if t not in seen:
                    seen.add(t)
                    if len(seen) > guard:
                        raise TooLarge(f"reachability search exceeds guard {guard}")
                    queue.append(t)
    return sorted(seen)


def one_step_change_set(
    config,
    shape: TreeShape,
    kernel: SpinKernel,
    x: int,
    bottom: int | None = None,
    guard: int = DEFAULT_GUARD,
) -> frozenset[int]:
    """States ``x`` can take as the final move of a path inside ``T_x``.

    Vertices of ``T_x`` at absolute level ``bottom`` (default: the leaves)
    and below are frozen, as is ``x`` until the final move.  The parent of
    ``x`` is ignored.
    """
    bottom = shape.depth if bottom is None else bottom
    own = int(config[x])
    if shape.level(x) >= bottom:
        return frozenset({own})
    rel_stop = bottom - shape.level(x)
    movable = [v for r in range(1, rel_stop) for v in shape.subtree_level(x, r)]
    chs = list(shape.children(x))
    reached = reachable(shape, kernel, config, movable, guard=guard)
    compat = kernel.compat
    C = {own}
    for c in range(kernel.k):
        if c in C:
            continue
        for s in reached:
            if all(compat[c, s[ch]] for ch in chs):
                C.add(c)
                break
    return frozenset(C)


def classify_vertex(
    config,
    shape: TreeShape,
    kernel: SpinKernel,
    x: int,
    parent_state: int | None = None,
    bottom: int | None = None,
    guard: int = DEFAULT_GUARD,
) -> VertexClassification:
    """Type, badness and freeness of ``x`` from its one-step change set.

    The parent state defaults to ``config[parent(x)]``; for the root it
    must be given or badness is left undetermined.
    """
    C = one_step_change_set(config, shape, kernel, x, bottom, guard)
    if parent_state is None and x != 0:
        parent_state = int(config[shape.parent(x)])
    return VertexClassification.from_change_set(C, int(config[x]), kernel.k, parent_state)


def classify_all(config, shape: TreeShape, kernel: SpinKernel, parent_state: int | None = None) -> list[VertexClassification]:
    return [
        classify_vertex(config, shape, kernel, v, parent_state if v == 0 else None)
        for v in range(shape.n)
    ]


# -- the coloring shortcut -------------------------------------------------


def fast_classify_masks(X: np.ndarray, shape: TreeShape, k: int, parent_states: np.ndarray | None = None):
    """Bottom-up bitmask classification of many coloring configurations.

    Returns ``(C, bad)`` with ``C[b, v]`` the change set of ``v`` as a
    bitmask and ``bad[b, v]`` its badness (root badness needs
    ``parent_states``; otherwise it is reported as False).
    """
    X = np.asarray(X, dtype=np.int64)
    B = X.shape[0]
    full = (1 << k) - 1
    own = np.left_shift(1, X)
    C = np.empty((B, shape.n), dtype=np.int64)
    bad = np.zeros((B, shape.n), dtype=bool)
    for l in range(shape.depth, -1, -1):
        r = shape.level_range(l)
        if l == shape.depth:
            C[:, r.start : r.stop] = own[:, r.start : r.stop]
        else:
            blocked = np.zeros((B, len(r)), dtype=np.int64)
            for j in range(shape.d):
                ch = np.arange(r.start, r.stop) * shape.d + 1 + j
                blocked |= np.where(bad[:, ch], own[:, ch], 0)
            C[:, r.start : r.stop] = own[:, r.start : r.stop] | (full & ~blocked)
        if l > 0:
            par = shape.parent_array[r.start : r.stop]
            pbit = own[:, par]
        elif parent_states is not None:
            pbit = np.left_shift(1, np.asarray(parent_states, dtype=np.int64))[:, None]
        else:
            continue
        bad[:, r.start : r.stop] = (C[:, r.start : r.stop] & ~pbit) == own[:, r.start : r.stop]
    return C, bad


def coloring_fast_classify(config, shape: TreeShape, kernel: SpinKernel, parent_state: int | None = None) -> list[VertexClassification]:
    """Linear-time classification for proper colorings.

    ``x`` can move to ``c`` in one step exactly when none of its bad
    children has color ``c``.
    """
    if not kernel.is_coloring():
        raise NotColoringModel("fast classification needs a proper-coloring kernel")
    X = np.asarray(config, dtype=np.int64)[None, :]
    ps = None if parent_state is None else np.array([parent_state])
    C, _ = fast_classify_masks(X, shape, kernel.k, ps)
    out = []
    for v in range(shape.n):
        bits = frozenset(c for c in range(kernel.k) if C[0, v] >> c & 1)
        p = parent_state if v == 0 else int(X[0, shape.parent(v)])
        out.append(VertexClassification.from_change_set(bits, int(X[0, v]), kernel.k, p))
    return out


# -- components ------------------------------------------------------------


@dataclass(frozen=True)
class ComponentSet:
    block: tuple[int, int]
    members: np.ndarray
    weights: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.weights)


def _log_weights(shape: TreeShape, kernel: SpinKernel, X: np.ndarray, parent_state: int | None) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logM = np.log(kernel.M)
        root = np.log(kernel.pi) if parent_state is None else logM[parent_state]
    p, c = shape.edges()
    return root[X[:, 0]] + logM[X[:, p], X[:, c]].sum(axis=1)


def component_of(
    config,
    shape: TreeShape,
    kernel: SpinKernel,
    block: tuple[int, int],
    boundary: BoundarySpec | None = None,
    guard: int = DEFAULT_GUARD,
) -> ComponentSet:
    """Configurations reachable by single-site moves inside ``B(x, l)``, with ``mu*``."""
    boundary = boundary or BoundarySpec.free()
    s = _check_start(shape, kernel, config, boundary)
    x, l = block
    movable = [v for v in shape.block(x, l) if v not in boundary.frozen]
    members = np.array(reachable(shape, kernel, s, movable, boundary.parent_state, guard), dtype=np.int64)
    lw = _log_weights(shape, kernel, members, boundary.parent_state)
    w = np.exp(lw - lw.max())
    seed = int(np.flatnonzero((members == s).all(axis=1))[0])
    return ComponentSet((x, l), members, w / w.sum(), seed)


def component_dynamics_move(
    config,
    shape: TreeShape,
    kernel: SpinKernel,
    l: int,
    rng: np.random.Generator,
    boundary: BoundarySpec | None = None,
    guard: int = DEFAULT_GUARD,
):
    """Resample ``B(x, l)`` for a uniform non-frozen ``x`` from ``mu*`` of its current component."""
    boundary = boundary or BoundarySpec.free()
    verts = [v for v in range(shape.n) if v not in boundary.frozen]
    if not verts:
        return tuple(int(a) for a in config), -1
    x = verts[int(rng.integers(len(verts)))]
    comp = component_of(config, shape, kernel, (x, l), boundary, guard)
    i = int(rng.choice(len(comp), p=comp.weights))
    return tuple(int(a) for a in comp.members[i]), x


def component_dynamics_step(config, shape, kernel, l, rng, boundary=None, guard=DEFAULT_GUARD):
    return component_dynamics_move(config, shape, kernel, l, rng, boundary, guard)[0]


def _move_graph_labels(space: StateSpace, vertices: Sequence[int]) -> tuple[int, np.ndarray]:
    N = len(space)
    rows, cols = [], []
    for v in vertices:
        tab = space.moves.get(v)
        if tab is None:
            continue
        i, c = np.nonzero(tab >= 0)
        rows.append(i)
        cols.append(tab[i, c])
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
    else:
        r = c = np.zeros(0, dtype=np.int64)
    A = coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(N, N)).tocsr()
    return connected_components(A, directed=False)


def glauber_component_labels(space: StateSpace) -> tuple[int, np.ndarray]:
    """Connected components of the whole single-site move graph."""
    return _move_graph_labels(space, space.free_vertices)


def block_component_labels(space: StateSpace, x: int, l: int) -> tuple[int, np.ndarray]:
    """Components of the move graph restricted to moves inside ``B(x, l)``."""
    return _move_graph_labels(space, space.shape.block(x, l))


def is_irreducible(
    shape: TreeShape,
    kernel: SpinKernel,
    boundary: BoundarySpec | None = None,
    guard: int = DEFAULT_GUARD,
) -> tuple[bool, int]:
    space = enumerate_states(shape, kernel, boundary, guard)
    count, _ = glauber_component_labels(space)
    return count == 1, int(count)


def find_pinning_boundary(
    shape: TreeShape,
    kernel: SpinKernel,
    guard: int = DEFAULT_GUARD,
) -> tuple[BoundarySpec, tuple[int, ...]] | None:
    """First boundary (root parent and leaves frozen) admitting a configuration with no valid move.

    Candidates are scanned in lexicographic order of (parent state,
    leaf states); returns the boundary and the frozen configuration.
    """
    import itertools

    leaves = list(shape.level_range(shape.depth))
    inner = [v for v in range(shape.n) if v not in leaves]
    if not inner:
        return None
    for ps in range(kernel.k):
        for leaf_states in itertools.product(range(kernel.k), repeat=len(leaves)):
            frozen = {PARENT: ps, **dict(zip(leaves, leaf_states))}
            b = BoundarySpec(frozen)
            try:
                check_boundary(shape, kernel, b)
                space = enumerate_states(shape, kernel, b, guard)
            except Exception:
                continue
            for row, _ in space:
                if all(
                    np.count_nonzero(single_site_weights(shape, kernel, row, v, ps)) == 1
                    for v in inner
                ):
                    return b, row
    return None
