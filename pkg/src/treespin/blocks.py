"""Exact connected components of block configuration graphs, without enumeration.

Inside a block ``B(x, l)`` with everything outside frozen, the subtrees
hanging below a vertex ``v`` only interact through ``v``.  So the
component of a configuration of ``T_v ∩ B`` (with the parent of ``v``
held at ``p``) is determined by an abstract state: the state of ``v``
together with the component of each child subtree under parent state
``sigma_v``.  Two abstract states are joined when ``v`` can flip from
``c`` to ``c'`` while each child subtree sits in a configuration lying in
the required component under both ``c`` and ``c'``.  Component weights
and label marginals are accumulated bottom-up alongside.

The block-level labels are the states on the cut level ``h`` (``eta``)
and a flag telling whether every vertex on level ``h + 2`` is free.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import EmptyGoodSet, InvalidParams
from .spin_model import SpinKernel
from .tree import PARENT, BoundarySpec, TreeShape, conditional_root_marginal, conditional_sample


class _UnionFind:
    def __init__(self, n: int):
        self.p = list(range(n))

    def find(self, a: int) -> int:
        while self.p[a] != a:
            self.p[a] = self.p[self.p[a]]
            a = self.p[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.p[max(ra, rb)] = min(ra, rb)


def _convolve(a: dict, b: dict) -> dict:
    out: dict = defaultdict(float)
    for (ea, fa), wa in a.items():
        for (eb, fb), wb in b.items():
            out[(ea + eb, fa and fb)] += wa * wb
    return out


@dataclass
class _Vertex:
    v: int
    rel: int
    in_children: list[int]
    states: list[tuple[int, tuple[int, ...]]]
    index: dict
    compmap: list[np.ndarray]  # per parent option: comp id per state, -1 if excluded
    ncomp: list[int]
    rootsets: list[list[set[int]]]
    labels: list[list[dict]]
    free: list[bool]


class BlockComponents:
    """Components of ``Omega`` restricted to ``B(x, l)`` with ``config`` frozen outside.

    ``parent_state`` is the frozen state of the parent of ``x``; for
    ``x = 0`` it may be ``None`` (no parent, prior ``pi``).  When ``cut``
    is given, labels record ``eta`` on relative level ``cut`` and whether
    all vertices on relative level ``cut + 2`` are free (paths inside the
    block, frozen states below it).
    """

    def __init__(
        self,
        shape: TreeShape,
        kernel: SpinKernel,
        x: int,
        l: int,
        config,
        parent_state: int | None = None,
        cut: int | None = None,
    ):
        self.shape, self.kernel, self.x, self.l = shape, kernel, x, l
        self.config = tuple(int(a) for a in config)
        if x != 0:
            parent_state = self.config[shape.parent(x)]
        self.parent_state = parent_state
        self.cut = cut
        self.free_level = None if cut is None else cut + 2
        self.l_eff = min(l, shape.height(x))
        k = kernel.k
        self._opts = list(range(k)) + [None]  # parent options; None = no parent
        self._links: dict = {}
        self.info: dict[int, _Vertex] = {}
        for r in range(self.l_eff, -1, -1):
            for v in shape.subtree_level(x, r):
                self._build(v, r)

    # -- construction ------------------------------------------------------

    def _build(self, v: int, rel: int) -> None:
        shape, kernel = self.shape, self.kernel
        k, M, compat = kernel.k, kernel.M, kernel.compat
        kids = list(shape.children(v))
        in_ch = kids if rel < self.l_eff else []
        frozen = [] if in_ch else kids
        allowed = [c for c in range(k) if all(compat[c, self.config[f]] for f in frozen)]
        fw = {c: float(np.prod([M[c, self.config[f]] for f in frozen])) for c in allowed}
        states = []
        for c in allowed:
            ranges = [range(self.info[y].ncomp[c]) for y in in_ch]
            for combo in itertools.product(*ranges):
                states.append((c, combo))
        index = {s: i for i, s in enumerate(states)}

        # freeness of each abstract state (only needed on the flagged level)
        free = []
        for c, combo in states:
            C = {c}
            for c2 in allowed:
                if c2 in C:
                    continue
                if all(
                    any(compat[c2, rr] for rr in self.info[y].rootsets[c][K])
                    for y, K in zip(in_ch, combo)
                ):
                    C.add(c2)
            free.append(len(C) == k)

        # label distribution of each abstract state, excluding the parent edge
        inner = []
        for (c, combo), fr in zip(states, free):
            dist: dict = {((), True): fw[c]}
            for y, K in zip(in_ch, combo):
                dist = _convolve(dist, self.info[y].labels[c][K])
            if self.cut is not None and rel == self.cut:
                dist = {((c,) + e, f): w for (e, f), w in dist.items()}
            if self.free_level is not None and rel == self.free_level:
                merged: dict = defaultdict(float)
                for (e, _), w in dist.items():
                    merged[(e, fr)] += w
                dist = dict(merged)
            inner.append(dist)

        compmap, ncomp, rootsets, labels = [], [], [], []
        for p in self._opts:
            ok = [i for i, (c, _) in enumerate(states) if p is None or compat[p, c]]
            uf = _UnionFind(len(states))
            ok_colors = sorted({states[i][0] for i in ok})
            for a_i, c in enumerate(ok_colors):
                for c2 in ok_colors[a_i + 1 :]:
                    links = [self._link(y, c, c2) for y in in_ch]
                    for pairs in itertools.product(*links):
                        s1 = (c, tuple(q[0] for q in pairs))
                        s2 = (c2, tuple(q[1] for q in pairs))
                        uf.union(index[s1], index[s2])
            ids = np.full(len(states), -1, dtype=np.int64)
            relabel: dict[int, int] = {}
            for i in ok:
                root = uf.find(i)
                if root not in relabel:
                    relabel[root] = len(relabel)
                ids[i] = relabel[root]
            m = len(relabel)
            rs = [set() for _ in range(m)]
            lab = [defaultdict(float) for _ in range(m)]
            for i in ok:
                c = states[i][0]
                K = ids[i]
                rs[K].add(c)
                edge = kernel.pi[c] if p is None else M[p, c]
                for key, w in inner[i].items():
                    lab[K][key] += edge * w
            compmap.append(ids)
            ncomp.append(m)
            rootsets.append(rs)
            labels.append([dict(d) for d in lab])
        self.info[v] = _Vertex(v, rel, in_ch, states, index, compmap, ncomp, rootsets, labels, free)
        if v == self.x:
            self._root_inner = inner

    def _link(self, y: int, c: int, c2: int) -> list[tuple[int, int]]:
        """Pairs (component under parent c, component under parent c2) sharing a configuration."""
        key = (y, c, c2)
        if key not in self._links:
            info = self.info[y]
            a, b = info.compmap[c], info.compmap[c2]
            pairs = sorted({(int(a[i]), int(b[i])) for i in range(len(info.states)) if a[i] >= 0 and b[i] >= 0})
            self._links[key] = pairs
        return self._links[key]

    # -- queries -----------------------------------------------------------

    def _popt(self) -> int:
        return self.kernel.k if self.parent_state is None else self.parent_state

    @property
    def count(self) -> int:
        return self.info[self.x].ncomp[self._popt()]

    def abstract_index(self, config, v: int | None = None) -> int:
        v = self.x if v is None else v
        info = self.info[v]
        c = int(config[v])
        combo = tuple(int(self.info[y].compmap[c][self.abstract_index(config, y)]) for y in info.in_children)
        return info.index[(c, combo)]

    def component_id(self, config) -> int:
        """Component of ``config`` (which must agree with the frozen states outside the block)."""
        i = self.abstract_index(config)
        return int(self.info[self.x].compmap[self._popt()][i])

    def is_good(self, config) -> bool:
        """Every vertex on the flagged level is free within the block."""
        if self.free_level is None:
            raise InvalidParams("no cut level configured")
        lev = self.shape.subtree_level(self.x, self.free_level)
        return all(self.info[y].free[self.abstract_index(config, y)] for y in lev)

    def component_law(self, K: int) -> dict:
        """``{(sigma_x, eta, good): probability}`` under ``mu*`` of component ``K``."""
        info = self.info[self.x]
        p = self.parent_state
        ids = info.compmap[self._popt()]
        out: dict = defaultdict(float)
        for i, (c, _) in enumerate(info.states):
            if ids[i] != K:
                continue
            edge = self.kernel.pi[c] if p is None else self.kernel.M[p, c]
            for (e, f), w in self._root_inner[i].items():
                out[(c, e, f)] += edge * w
        z = sum(out.values())
        return {key: w / z for key, w in out.items()}

    def component_weights(self) -> np.ndarray:
        lab = self.info[self.x].labels[self._popt()]
        w = np.array([sum(d.values()) for d in lab])
        return w / w.sum()


@dataclass(frozen=True)
class CondIndepResult:
    discrepancy: float
    etas: int
    good_mass: float
    rows: tuple


def check_condindep(
    shape: TreeShape,
    kernel: SpinKernel,
    l: int,
    cut: int,
    tau,
    c_prime: int | None = None,
    x: int = 0,
    parent_state: int | None = None,
) -> CondIndepResult:
    """Compare the ``mu*`` root law given (eta, good) with the free law given eta.

    ``tau`` is a full configuration; the block ``B(x, l)`` is resampled
    inside its component with ``tau`` frozen outside.  Returns the
    largest absolute difference over admissible ``eta`` (and over
    ``c_prime`` unless one is given).
    """
    if not 0 <= cut or not cut + 2 < l:
        raise InvalidParams("need 0 <= cut and cut + 2 < l")
    if l > shape.height(x):
        raise InvalidParams("block must fit inside the tree")
    eng = BlockComponents(shape, kernel, x, l, tau, parent_state, cut)
    ps = eng.parent_state
    law = eng.component_law(eng.component_id(tau))
    by_eta: dict = defaultdict(lambda: np.zeros(kernel.k))
    for (c, e, good), w in law.items():
        if good:
            by_eta[e][c] += w
    if not by_eta:
        raise EmptyGoodSet("no good configuration in the component of tau")
    cut_vertices = list(shape.subtree_level(x, cut))
    worst = 0.0
    rows = []
    cs = range(kernel.k) if c_prime is None else [c_prime]
    for e in sorted(by_eta):
        lhs = by_eta[e] / by_eta[e].sum()
        rhs = conditional_root_marginal(shape, kernel, dict(zip(cut_vertices, e)), x, cut, ps)
        diff = float(max(abs(lhs[c] - rhs[c]) for c in cs))
        worst = max(worst, diff)
        rows.append((e, tuple(lhs), tuple(rhs)))
    good_mass = float(sum(a.sum() for a in by_eta.values()))
    return CondIndepResult(worst, len(by_eta), good_mass, tuple(rows))


def good_boundary(shape: TreeShape, kernel: SpinKernel, x: int, l: int, rng: np.random.Generator, parent_state: int | None = None):
    """A configuration whose frozen level below ``B(x, l)`` copies grandparent states.

    This keeps the vertices two levels above the frozen level free,
    so the good set is nonempty.  Returns None if no compatible
    middle state exists somewhere.
    """
    b = BoundarySpec({} if parent_state is None else {PARENT: parent_state})
    s = list(conditional_sample(shape, kernel, b, rng))
    compat = kernel.compat
    top = shape.level(x) + l + 1
    if top > shape.depth:
        return tuple(s)
    for w in (v for r in [l + 1] for v in shape.subtree_level(x, r)):
        mid = shape.parent(w)
        g = shape.parent(mid)
        s[w] = s[g]
    for mid in shape.subtree_level(x, l):
        g = shape.parent(mid)
        opts = [c for c in range(kernel.k) if compat[s[g], c] and compat[c, s[g]]]
        if not opts:
            return None
        if s[mid] not in opts:
            s[mid] = opts[int(rng.integers(len(opts)))]
    # redraw everything below the frozen level so the whole tree stays valid
    below = {v: s[v] for v in range(shape.n) if shape.level(v) <= top}
    frozen = dict(below)
    if parent_state is not None:
        frozen[PARENT] = parent_state
    return conditional_sample(shape, kernel, BoundarySpec(frozen), rng)


@dataclass(frozen=True)
class MembershipResult:
    trials: int
    counterexamples: int
    attempts: int
    nontrivial: int


def claim_membership_trials(
    shape: TreeShape,
    kernel: SpinKernel,
    l: int,
    cut: int,
    trials: int,
    rng: np.random.Generator,
    x: int = 0,
    parent_state: int | None = None,
    max_attempts: int = 1_000_000,
) -> MembershipResult:
    """Good configurations sharing eta and everything below it lie in one component.

    Each trial draws ``tau``, then a good ``sigma`` of the block given
    ``tau``, then ``sigma'`` by redrawing the part above the cut given
    ``eta``; the two are compared by component id.
    """
    if not cut + 2 < l:
        raise InvalidParams("need cut + 2 < l")
    done = bad = attempts = nontrivial = 0
    block = set(shape.block(x, l))
    upper = set(shape.block(x, cut - 1)) if cut >= 1 else set()
    ps = parent_state if x == 0 else None
    while done < trials:
        tau = good_boundary(shape, kernel, x, l, rng, ps)
        if tau is None:
            raise EmptyGoodSet("no good boundary for this kernel")
        eng = BlockComponents(shape, kernel, x, l, tau, ps, cut)
        outside = {v: tau[v] for v in range(shape.n) if v not in block}
        if ps is not None:
            outside[PARENT] = ps
        for _ in range(50):
            attempts += 1
            if attempts > max_attempts:
                raise EmptyGoodSet("good configurations too rare")
            sigma = conditional_sample(shape, kernel, BoundarySpec(outside), rng)
            if eng.is_good(sigma):
                break
        else:
            continue
        keep = {v: sigma[v] for v in range(shape.n) if v not in upper}
        if ps is not None:
            keep[PARENT] = ps
        sigma2 = conditional_sample(shape, kernel, BoundarySpec(keep), rng)
        if sigma2 != sigma:
            nontrivial += 1
        if eng.component_id(sigma) != eng.component_id(sigma2):
            bad += 1
        done += 1
    return MembershipResult(done, bad, attempts, nontrivial)
