"""The acceptance suite: every criterion as a deterministic, seeded check.

``run_suite`` returns one result per criterion; ``format_report`` turns
them into a byte-stable text report (no timings, fixed float formatting).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import bp_ratio, coloring_recursion as cr, functionals as fn
from .blocks import check_condindep, claim_membership_trials, good_boundary
from .errors import NonErgodicChain, ZeroProbabilityBoundary
from .glauber import (
    classify_all,
    coloring_fast_classify,
    find_pinning_boundary,
    glauber_component_labels,
    is_irreducible,
)
from .rng import stream
from .spin_model import coloring_kernel, uniform_kernel
from .tree import BoundarySpec, TreeShape, all_boundaries, broadcast_sample, enumerate_states


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    lines: list[str] = field(default_factory=list)
    seconds: float = 0.0


def _fmt(x: float) -> str:
    return f"{x:.6e}"


# -- oracles shared by several criteria ------------------------------------


def enumeration_ratios(shape: TreeShape, kernel, l: int):
    """Conditional root ratios by grouping the enumerated Gibbs law by level ``l``."""
    space = enumerate_states(TreeShape(shape.d, l), kernel)
    bottom = space.shape.level_range(l)
    eta = space.states[:, bottom.start : bottom.stop].astype(np.int64)
    codes = eta @ (kernel.k ** np.arange(eta.shape[1] - 1, -1, -1))
    uniq, inv = np.unique(codes, return_inverse=True)
    joint = np.zeros((len(uniq), kernel.k))
    np.add.at(joint, (inv, space.states[:, 0]), space.weights)
    mass = joint.sum(axis=1)
    cond = joint / mass[:, None]
    return uniq, mass, cond / kernel.pi[None, :], joint


def _decode(code: int, k: int, width: int) -> list[int]:
    out = []
    for _ in range(width):
        out.append(code % k)
        code //= k
    return out[::-1]


INSTANCES_1 = [(3, 1), (3, 2), (3, 3), (4, 1), (4, 2)]


def criterion_1(seed: int) -> CriterionResult:
    t0 = time.perf_counter()
    worst = 0.0
    zero_ok = True
    lines = []
    for k, l in INSTANCES_1:
        kern = coloring_kernel(k)
        shape = TreeShape(2, l)
        codes, _, ratios, _ = enumeration_ratios(shape, kern, l)
        width = 2**l
        known = dict(zip(codes.tolist(), ratios))
        err = 0.0
        for code in range(k**width):
            eta = _decode(code, k, width)
            if code in known:
                r = bp_ratio.ratio_from_boundary(shape, kern, eta, 0, l)
                err = max(err, float(np.abs(r - known[code]).max()))
            else:
                try:
                    bp_ratio.ratio_from_boundary(shape, kern, eta, 0, l)
                    zero_ok = False
                except ZeroProbabilityBoundary:
                    pass
        worst = max(worst, err)
        lines.append(f"k={k} d=2 l={l} boundaries={k**width} positive={len(known)} max_err={_fmt(err)}")
    secs = time.perf_counter() - t0
    ok = worst < 1e-10 and zero_ok and secs < 60
    lines.append(f"zero-probability boundaries rejected: {zero_ok}")
    return CriterionResult(1, "ratio recursion equals enumeration", ok, lines, secs)


def criterion_2(seed: int) -> CriterionResult:
    t0 = time.perf_counter()
    worst = 0.0
    lines = []
    for k, l in INSTANCES_1:
        kern = coloring_kernel(k)
        shape = TreeShape(2, l)
        _, mass, _, joint = enumeration_ratios(shape, kern, l)
        for c in range(k):
            lhs, rhs = bp_ratio.mean_deviation_identity(shape, kern, l, c)
            # independent right-hand side: sum |P(eta | c) - P(eta)| from the enumeration
            oracle = float(np.abs(joint[:, c] / kern.pi[c] - mass).sum())
            worst = max(worst, abs(lhs - rhs), abs(rhs - oracle))
        lines.append(f"k={k} d=2 l={l} max|lhs-rhs|={_fmt(worst)}")
    lhs, rhs = bp_ratio.mean_deviation_identity(TreeShape(2, 1), coloring_kernel(3), 1, 0)
    hand = abs(lhs - 1) < 1e-12 and abs(rhs - 1) < 1e-12
    lines.append(f"k=3 d=2 l=1 c=1: lhs={lhs:.12f} rhs={rhs:.12f}")
    return CriterionResult(2, "duality identity", worst < 1e-12 and hand, lines, time.perf_counter() - t0)


def criterion_3(seed: int) -> CriterionResult:
    t0 = time.perf_counter()
    worst = 0.0
    lines = []
    for k in range(3, 9):
        kern = coloring_kernel(k)
        errs = [abs(bp_ratio.contraction_factor(kern, m) - (1 / (k - 1)) ** m) for m in (1, 2, 3)]
        worst = max(worst, *errs)
        m_min = bp_ratio.minimal_contraction_m(kern)
        lines.append(f"k={k} max_err={_fmt(max(errs))} minimal m with factor<1/4: {m_min}")
    return CriterionResult(3, "contraction factor of coloring kernels", worst < 1e-12, lines, time.perf_counter() - t0)


def dynamics_instances():
    for k in (3, 4, 6):
        for depth in (0, 1, 2):
            for parent in (None, 0):
                yield k, depth, parent


def _dynamics_list(depth: int):
    out = [("glauber", None), ("component", 1)]
    if depth > 1:
        out.append(("component", depth))
    return out


def criterion_4(seed: int) -> CriterionResult:
    t0 = time.perf_counter()
    ok = True
    lines = []
    for k, depth, parent in dynamics_instances():
        shape = TreeShape(2, depth)
        b = BoundarySpec.free() if parent is None else BoundarySpec.with_parent(parent)
        space = enumerate_states(shape, coloring_kernel(k), b)
        ncomp, _ = glauber_component_labels(space)
        for dyn, l in _dynamics_list(depth):
            chain = fn.transition_chain(shape, coloring_kernel(k), b, dyn, l, space=space)
            rev = fn.reversibility_residual(chain, np.random.default_rng(seed))
            rows = fn.row_sum_error(chain)
            good = rev < 1e-12 and rows < 1e-12
            conv = "disconnected"
            if ncomp == 1:
                res = fn.convergence_to_stationarity(chain)
                good = good and res.tv < 1e-8
                conv = f"tv={_fmt(res.tv)} at t={res.steps} ({res.method})"
            ok = ok and good
            tag = "free" if parent is None else f"parent={parent + 1}"
            lines.append(f"k={k} depth={depth} {tag} {chain.name} N={chain.N} rev={_fmt(rev)} {conv}")
    secs = time.perf_counter() - t0
    return CriterionResult(4, "dynamics reversible and convergent", ok and secs < 300, lines, secs)


def criterion_5(seed: int) -> CriterionResult:
    t0 = time.perf_counter()
    k3 = coloring_kernel(3)
    shape = TreeShape(2, 2)
    free_ok, free_count = is_irreducible(shape, k3)
    lines = [f"free boundary: irreducible={free_ok} components={free_count}"]
    parent_ok = True
    for c in range(3):
        irr, cnt = is_irreducible(shape, k3, BoundarySpec.with_parent(c))
        parent_ok = parent_ok and irr
        lines.append(f"parent frozen to {c + 1}: irreducible={irr} components={cnt}")
    found = find_pinning_boundary(shape, k3)
    pinned_ok = False
    if found is not None:
        b, row = found
        irr, cnt = is_irreducible(shape, k3, b)
        pinned_ok = cnt >= 2
        frozen = ",".join(f"{'p' if v < 0 else v}:{s + 1}" for v, s in sorted(b.frozen.items()))
        lines.append(f"pinning boundary {{{frozen}}} frozen config {' '.join(str(s + 1) for s in row)} components={cnt}")
    return CriterionResult(5, "irreducibility dichotomy", free_ok and parent_ok and pinned_ok, lines, time.perf_counter() - t0)


def criterion_6(seed: int) -> CriterionResult:
    t0 = time.perf_counter()
    k3 = coloring_kernel(3)
    shape = TreeShape(2, 5)
    worst = 0.0
    lines = []
    for rep in range(5):
        parent = rep % 3
        tau = good_boundary(shape, k3, 0, 4, stream(seed, 600 + rep), parent_state=parent)
        res = check_condindep(shape, k3, 4, 1, tau, parent_state=parent)
        worst = max(worst, res.discrepancy)
        lines.append(f"tau #{rep} parent={parent + 1}: etas={res.etas} good_mass={res.good_mass:.6f} max_discrepancy={_fmt(res.discrepancy)}")
    mem = claim_membership_trials(shape, k3, 4, 1, 200, stream(seed, 650), parent_state=0)
    lines.append(f"membership: trials={mem.trials} counterexamples={mem.counterexamples} nontrivial={mem.nontrivial} draws={mem.attempts}")
    ok = worst < 1e-10 and mem.counterexamples == 0 and mem.trials == 200
    return CriterionResult(6, "conditional independence on the good set", ok, lines, time.perf_counter() - t0)


def criterion_7(seed: int) -> CriterionResult:
    t0 = time.perf_counter()
    k3 = coloring_kernel(3)
    shape = TreeShape(2, 2)
    space = enumerate_states(shape, k3)
    mism = checked = 0
    for row, _ in space:
        for p in range(3):
            if p == row[0]:
                continue
            checked += 1
            mism += classify_all(row, shape, k3, p) != coloring_fast_classify(row, shape, k3, p)
    lines = [f"exhaustive depth 2: configurations x parent states = {checked}, mismatches = {mism}"]
    shape3 = TreeShape(2, 3)
    X = broadcast_sample(shape3, k3, stream(seed, 700), size=10_000)
    rng = stream(seed, 701)
    mism3 = 0
    for x in X:
        p = int(rng.choice([c for c in range(3) if c != x[0]]))
        mism3 += classify_all(x, shape3, k3, p) != coloring_fast_classify(x, shape3, k3, p)
    lines.append(f"random depth 3: samples = {len(X)}, mismatches = {mism3}")
    return CriterionResult(7, "fast classifier equals search", mism == 0 and mism3 == 0, lines, time.perf_counter() - t0)


def brute_force_types(k: int, d: int, depth: int):
    """Root type probabilities by enumerating configurations and classifying by search."""
    kern = coloring_kernel(k)
    shape = TreeShape(d, depth)
    tot = {"p_r": Fraction(0), "p2": Fraction(0), "p3": Fraction(0), "p_b": Fraction(0)}
    for p in range(k):
        space = enumerate_states(shape, kern, BoundarySpec.with_parent(p))
        for row, w in space:
            # under the coloring law every valid configuration has the same weight
            wf = Fraction(1, k * len(space))
            cls = classify_all(row, shape, kern, p)[0]
            key = {"rigid": "p_r", "type2": "p2", "type3": "p3"}[cls.type]
            tot[key] += wf
            if cls.bad:
                tot["p_b"] += wf
    return tot


def criterion_8(seed: int) -> CriterionResult:
    t0 = time.perf_counter()
    lines = []
    frac = cr.type_recursion_fraction(3, 2, 1)
    exact_ok = frac[0][3] == 1 and frac[1][3] == Fraction(3, 4)
    lines.append(f"p_b(l=0)={frac[0][3]} p_b(k=3,d=2,l=1)={frac[1][3]}")
    brute_ok = True
    for depth in (1, 2):
        bf = brute_force_types(3, 2, depth)
        ex = cr.type_recursion_fraction(3, 2, depth)[depth]
        same = (bf["p_r"], bf["p2"], bf["p3"], bf["p_b"]) == ex
        brute_ok = brute_ok and same
        lines.append(f"brute force k=3 d=2 depth={depth}: p_b={bf['p_b']} recursion={ex[3]} equal={same}")
    worst = 0.0
    for k in range(3, 8):
        for d in range(1, 7):
            a = cr.type_recursion_exact(k, d, 6)
            b = cr.type_recursion_multinomial(k, d, 6)
            for x, y in zip(a, b):
                worst = max(worst, abs(x.p_r - y.p_r), abs(x.p2 - y.p2), abs(x.p3 - y.p3), abs(x.p_b - y.p_b))
    lines.append(f"multinomial summation k=3..7 d=1..6 l<=6: max_err={_fmt(worst)}")
    est = cr.mc_estimate_probs(5, 5, 3, 100_000, stream(seed, 800))
    ex = cr.type_recursion_exact(5, 5, 3)
    mc_ok = True
    for e in est:
        t = ex[e.height]
        for name, val in (("rigid", t.p_r), ("type2", t.p2), ("type3", t.p3), ("bad", t.p_b)):
            sigma = math.sqrt(val * (1 - val) / e.n)
            dev = abs(e.p(name) - val)
            within = dev <= 3 * sigma if sigma > 0 else dev == 0
            mc_ok = mc_ok and within
        lines.append(
            f"mc k=5 d=5 height={e.height} n={e.n} p_b_hat={e.p('bad'):.6f} p_b={t.p_b:.6f} "
            f"p_r_hat={e.p('rigid'):.6f} p_r={t.p_r:.6f}"
        )
    lines.append(f"mc within 3 sigma: {mc_ok}")
    ok = exact_ok and brute_ok and worst < 1e-12 and mc_ok
    return CriterionResult(8, "type recursion ground truth", ok, lines, time.perf_counter() - t0)


def criterion_9(seed: int) -> CriterionResult:
    t0 = time.perf_counter()
    rows = cr.threshold_scan(range(10, 101), 0.2, L=40)
    bad = [r.k for r in rows if not (r.certified and r.dominated and r.l0 is not None and r.l0 <= 40)]
    l0s = [r.l0 for r in rows]
    lines = [
        f"k=10..100 beta=0.2: rows={len(rows)} failing={bad}",
        f"l0 range: {min(x for x in l0s if x is not None)}..{max(x for x in l0s if x is not None)}",
    ]
    for r in rows:
        if r.k in (10, 20, 50, 100):
            lines.append(f"k={r.k} d={r.d} l0={r.l0} log p_b(l0+2)={r.levels[r.l0 + 2].log_p_b:.6e}")
    secs = time.perf_counter() - t0
    return CriterionResult(9, "domination and double-exponential decay", not bad and secs < 600, lines, secs)


def criterion_10(seed: int) -> CriterionResult:
    t0 = time.perf_counter()
    ok = True
    lines = []
    for k, depth, parent in dynamics_instances():
        shape = TreeShape(2, depth)
        b = BoundarySpec.free() if parent is None else BoundarySpec.with_parent(parent)
        chain = fn.transition_chain(shape, coloring_kernel(k), b, "glauber")
        gap = fn.spectral_gap(chain)
        try:
            mix = fn.mixing_time_exact(chain)
            t_mix, finite = mix.t_mix, True
            label = "exact" if mix.exact else "lower bound"
        except NonErgodicChain:
            t_mix, finite, label = None, False, "infinite"
        consistent = (gap > 1e-12) == finite
        ok = ok and consistent and gap > 1e-12 and finite
        if k == 6 and depth in (0, 1) and parent is None:
            lines.append(f"k=6 d=2 depth={depth} n={shape.n}: gap={gap:.6f} t_mix={t_mix} ({label})")
        else:
            tag = "free" if parent is None else f"parent={parent + 1}"
            lines.append(f"k={k} depth={depth} {tag}: gap={gap:.6f} t_mix={t_mix} ({label})")
    return CriterionResult(10, "mixing probe", ok, lines, time.perf_counter() - t0)


CRITERIA: list[Callable[[int], CriterionResult]] = [
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
    criterion_6, criterion_7, criterion_8, criterion_9, criterion_10,
]


def run_suite(seed: int = 0, only: list[int] | None = None) -> list[CriterionResult]:
    return [c(seed) for i, c in enumerate(CRITERIA, 1) if only is None or i in only]


def format_report(results: list[CriterionResult], seed: int) -> str:
    out = [f"acceptance report (seed={seed})"]
    for r in results:
        out.append(f"[{'PASS' if r.passed else 'FAIL'}] {r.number}. {r.title}")
        out.extend("    " + line for line in r.lines)
    return "\n".join(out) + "\n"


def verify(seed: int = 0, repeat: bool = True, only: list[int] | None = None) -> tuple[str, bool]:
    """Run criteria 1-10; with ``repeat`` run them again and add the determinism check."""
    first = run_suite(seed, only)
    report = format_report(first, seed)
    ok = all(r.passed for r in first)
    if repeat:
        second = format_report(run_suite(seed, only), seed)
        same = second == report
        ok = ok and same
        report += f"[{'PASS' if same else 'FAIL'}] 11. determinism\n    second run byte-identical: {same}\n"
    return report, ok
