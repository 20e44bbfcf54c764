"""Exact chain functionals on enumerated state spaces.

Transition operators act on functions ``h`` over the enumerated states.
For a chain reversible w.r.t. ``mu`` the law after ``t`` steps from
``sigma`` has density ``P^t h`` with ``h = 1_sigma / mu(sigma)``, so every
computation below only ever applies ``P`` to column vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import NegativeFunction, NonErgodicChain, NotReversible, TooLarge
from .glauber import block_component_labels
from .spin_model import SpinKernel
from .tree import DEFAULT_GUARD, BoundarySpec, StateSpace, TreeShape, enumerate_states

DENSE_LIMIT = 10_000
ALL_STARTS_LIMIT = 3_000
POWERING_LIMIT = 1_000
SPARSE_NNZ_LIMIT = 5_000_000
REV_TOL = 1e-12


@dataclass
class Chain:
    """A reversible transition operator on an enumerated state space."""

    mu: np.ndarray
    matvec: callable
    matrix: sp.csr_matrix | None = None
    name: str = ""
    space: StateSpace | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return len(self.mu)

    def apply(self, h: np.ndarray) -> np.ndarray:
        return self.matvec(h)

    def dense(self) -> np.ndarray:
        if self.N > DENSE_LIMIT:
            raise TooLarge(f"{self.N} states exceed the dense limit")
        if self.matrix is not None:
            return self.matrix.toarray()
        return np.column_stack([self.matvec(e) for e in np.eye(self.N)])


def chain_from_matrix(P, mu, name: str = "") -> Chain:
    P = sp.csr_matrix(P, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return Chain(mu, lambda h: P @ h, P, name)


def _glauber_matrix(space: StateSpace) -> sp.csr_matrix:
    N = len(space)
    mu = space.weights
    verts = space.free_vertices
    rows, cols, vals = [], [], []
    for v in verts:
        tab = space.moves[v]
        w = np.where(tab >= 0, mu[np.maximum(tab, 0)], 0.0)
        prob = w / w.sum(axis=1, keepdims=True)
        i, c = np.nonzero(tab >= 0)
        rows.append(i)
        cols.append(tab[i, c])
        vals.append(prob[i, c] / len(verts))
    P = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    return P.tocsr()


def _component_matvec(labels: list[np.ndarray], counts: list[int], mu: np.ndarray):
    masses = [np.bincount(lab, weights=mu, minlength=m) for lab, m in zip(labels, counts)]
    nx = len(labels)

    def matvec(h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        out = np.zeros_like(h)
        for lab, m, mass in zip(labels, counts, masses):
            out += (np.bincount(lab, weights=mu * h, minlength=m) / mass)[lab]
        return out / nx

    return matvec


def _component_matrix(labels, counts, mu) -> sp.csr_matrix | None:
    N = len(mu)
    nnz = sum(int(np.bincount(lab, minlength=m).astype(np.int64) @ np.bincount(lab, minlength=m)) for lab, m in zip(labels, counts))
    if nnz > SPARSE_NNZ_LIMIT:
        return None
    total = None
    for lab, m in zip(labels, counts):
        mass = np.bincount(lab, weights=mu, minlength=m)
        order = np.argsort(lab, kind="stable")
        bounds = np.searchsorted(lab[order], np.arange(m + 1))
        r, c = [], []
        for K in range(m):
            members = order[bounds[K] : bounds[K + 1]]
            rr, cc = np.meshgrid(members, members, indexing="ij")
            r.append(rr.ravel())
            c.append(cc.ravel())
        r = np.concatenate(r)
        c = np.concatenate(c)
        Px = sp.coo_matrix((mu[c] / mass[lab[r]], (r, c)), shape=(N, N)).tocsr()
        total = Px if total is None else total + Px
    return total / len(labels)


def block_operator(space: StateSpace, x: int, l: int) -> sp.csr_matrix:
    """Resampling ``B(x, l)`` from ``mu*`` of the current component, as a matrix."""
    m, lab = block_component_labels(space, x, l)
    return _component_matrix([lab], [m], space.weights)


def transition_chain(
    shape: TreeShape,
    kernel: SpinKernel,
    boundary: BoundarySpec | None = None,
    dynamics: str = "glauber",
    l: int | None = None,
    guard: int = DEFAULT_GUARD,
    space: StateSpace | None = None,
) -> Chain:
    """Glauber or component dynamics as an operator over the enumerated states.

    Component dynamics picks a uniform non-frozen ``x`` and resamples
    ``B(x, l)`` from ``mu`` restricted to the current component.
    """
    space = space or enumerate_states(shape, kernel, boundary, guard)
    mu = space.weights
    if dynamics == "glauber":
        P = _glauber_matrix(space)
        return Chain(mu, lambda h: P @ h, P, "glauber", space)
    if dynamics != "component":
        raise ValueError(f"unknown dynamics {dynamics!r}")
    if l is None:
        raise ValueError("component dynamics needs a block size")
    labels, counts = [], []
    for x in space.free_vertices:
        m, lab = block_component_labels(space, x, l)
        labels.append(lab)
        counts.append(m)
    matvec = _component_matvec(labels, counts, mu)
    P = _component_matrix(labels, counts, mu)
    return Chain(mu, matvec, P, f"component(l={l})", space)


def transition_matrix(shape, kernel, boundary=None, dynamics="glauber", l=None, guard=DEFAULT_GUARD):
    chain = transition_chain(shape, kernel, boundary, dynamics, l, guard)
    if chain.matrix is None:
        raise TooLarge("transition matrix too dense to assemble")
    return chain.matrix, chain.mu


# -- checks ----------------------------------------------------------------


def row_sum_error(chain: Chain) -> float:
    return float(np.abs(chain.apply(np.ones(chain.N)) - 1.0).max())


def reversibility_residual(chain: Chain, rng: np.random.Generator | None = None, probes: int = 4) -> float:
    """Largest ``|mu_i P_ij - mu_j P_ji|``.

    Without an assembled matrix, ``<f, P g>_mu - <P f, g>_mu`` is used on
    random probe pairs, scaled by ``|f|_mu |g|_mu``.
    """
    if chain.matrix is not None:
        A = sp.diags(chain.mu) @ chain.matrix
        diff = (A - A.T).tocoo()
        return float(np.abs(diff.data).max()) if diff.nnz else 0.0
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    mu = chain.mu
    for _ in range(probes):
        f = rng.standard_normal(chain.N)
        g = rng.standard_normal(chain.N)
        a = mu @ (f * chain.apply(g))
        b = mu @ (chain.apply(f) * g)
        scale = np.sqrt(mu @ f**2) * np.sqrt(mu @ g**2)
        worst = max(worst, abs(a - b) / scale)
    return float(worst)


def stationarity_residual(chain: Chain) -> float:
    """``max |mu P - mu|`` via ``(mu P)_j = mu_j (P 1)_j`` for a reversible chain, checked directly when assembled."""
    if chain.matrix is not None:
        return float(np.abs(chain.matrix.T @ chain.mu - chain.mu).max())
    return float(np.abs(chain.mu * chain.apply(np.ones(chain.N)) - chain.mu).max())


def _require_reversible(chain: Chain) -> None:
    if reversibility_residual(chain) > 1e-10:
        raise NotReversible("chain is not reversible w.r.t. mu")


# -- spectra ---------------------------------------------------------------


def _sym_operator(chain: Chain):
    s = np.sqrt(chain.mu)
    return LinearOperator((chain.N, chain.N), matvec=lambda v: s * chain.apply(np.ravel(v) / s), dtype=float)


def eigenvalues(chain: Chain) -> np.ndarray:
    """All eigenvalues (descending) for small chains."""
    P = chain.dense()
    s = np.sqrt(chain.mu)
    S = (s[:, None] * P) / s[None, :]
    return np.sort(np.linalg.eigvalsh((S + S.T) / 2))[::-1]


def extreme_eigenvalues(chain: Chain) -> tuple[float, float]:
    """``(lambda_2, lambda_*)`` with ``lambda_*`` the largest modulus below the top."""
    if chain.N == 1:
        return 0.0, 0.0
    if chain.N <= DENSE_LIMIT:
        ev = eigenvalues(chain)
        return float(ev[1]), float(max(abs(ev[1]), abs(ev[-1])))
    op = _sym_operator(chain)
    v0 = np.sqrt(chain.mu)
    top = np.sort(eigsh(op, k=2, which="LA", tol=1e-10, v0=v0, return_eigenvectors=False))
    mags = np.sort(np.abs(eigsh(op, k=2, which="LM", tol=1e-10, v0=v0, return_eigenvectors=False)))
    return float(top[0]), float(mags[0])


def spectral_gap(P, mu=None) -> float:
    """``1 - lambda_2`` of a reversible chain."""
    chain = P if isinstance(P, Chain) else chain_from_matrix(P, mu)
    _require_reversible(chain)
    lam2, _ = extreme_eigenvalues(chain)
    return float(1.0 - lam2)


def tv_from_density(mu: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``TV(mu h, mu)`` for each column ``h`` of ``H``."""
    return 0.5 * (mu[:, None] * np.abs(H - 1.0)).sum(axis=0)


@dataclass(frozen=True)
class MixingResult:
    t_mix: int
    exact: bool
    starts: int


def _evolve(chain: Chain, H: np.ndarray, threshold: float, t_max: int) -> int:
    mu = chain.mu
    t = 0
    while tv_from_density(mu, H).max() > threshold:
        t += 1
        if t > t_max:
            raise NonErgodicChain(f"no mixing within {t_max} steps")
        H = chain.matrix @ H if chain.matrix is not None else np.column_stack([chain.apply(h) for h in H.T])
    return t


def declared_starts(chain: Chain) -> list[int]:
    """Extremal states: lightest and heaviest, plus the lexicographic ends."""
    mu = chain.mu
    return sorted({int(np.argmin(mu)), int(np.argmax(mu)), 0, chain.N - 1})


def mixing_time_exact(P, mu=None, threshold: float = 1 / (2 * np.e), t_max: int = 100_000, starts: Sequence[int] | None = None) -> MixingResult:
    """Least ``t`` with ``max_sigma TV(P^t(sigma, .), mu) <= threshold``.

    All starts are used up to ``ALL_STARTS_LIMIT`` states; above that a
    declared start set is used and the result is a lower bound.
    """
    chain = P if isinstance(P, Chain) else chain_from_matrix(P, mu)
    _, lam_star = extreme_eigenvalues(chain)
    if chain.N > 1 and lam_star >= 1 - 1e-12:
        raise NonErgodicChain("spectral gap is zero")
    mu = chain.mu
    exact = starts is None and chain.N <= ALL_STARTS_LIMIT
    idx = np.arange(chain.N) if exact else np.asarray(starts if starts is not None else declared_starts(chain))
    H = np.zeros((chain.N, len(idx)))
    H[idx, np.arange(len(idx))] = 1.0 / mu[idx]
    return MixingResult(_evolve(chain, H, threshold, t_max), exact, len(idx))


@dataclass(frozen=True)
class ConvergenceResult:
    tv: float
    steps: int
    method: str


def convergence_to_stationarity(chain: Chain, target: float = 1e-8, max_log2_steps: int = 60) -> ConvergenceResult:
    """Worst-start TV after matrix powering.

    Small chains square ``P`` until every row is within ``target``.  Large
    chains use ``max TV <= 0.5 * lambda_*^t * sqrt((1 - mu_min) / mu_min)``.
    """
    mu = chain.mu
    if chain.N <= POWERING_LIMIT:
        Q = chain.dense()
        steps = 1
        for _ in range(max_log2_steps):
            tv = 0.5 * np.abs(Q - mu[None, :]).sum(axis=1).max()
            if tv < target:
                return ConvergenceResult(float(tv), steps, "powering")
            Q = Q @ Q
            steps *= 2
        return ConvergenceResult(float(tv), steps, "powering")
    _, lam = extreme_eigenvalues(chain)
    mu_min = mu.min()
    pref = 0.5 * np.sqrt((1 - mu_min) / mu_min)
    if lam >= 1:
        return ConvergenceResult(1.0, 0, "spectral")
    steps = max(1, int(np.ceil(np.log(target / pref) / np.log(lam)))) if lam > 0 else 1
    bound = pref * lam**steps
    return ConvergenceResult(float(bound), steps, "spectral")


# -- entropy and Dirichlet form --------------------------------------------


def entropy(f, mu) -> float:
    f = np.asarray(f, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if (f < 0).any():
        raise NegativeFunction("entropy needs f >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        flogf = np.where(f > 0, f * np.log(np.where(f > 0, f, 1.0)), 0.0)
    m = float(mu @ f)
    val = float(mu @ flogf) - (m * np.log(m) if m > 0 else 0.0)
    return max(val, 0.0)


def dirichlet_form(f, P, mu=None) -> float:
    """``(1/2) sum mu(s) P(s, s') (f(s) - f(s'))^2``."""
    chain = P if isinstance(P, Chain) else chain_from_matrix(P, mu)
    f = np.asarray(f, dtype=float)
    if chain.matrix is not None:
        A = chain.matrix.tocoo()
        val = 0.5 * float((chain.mu[A.row] * A.data * (f[A.row] - f[A.col]) ** 2).sum())
    else:
        val = float(chain.mu @ (f * f) - chain.mu @ (f * chain.apply(f)))
    return max(val, 0.0)


def _ls_objective(chain: Chain):
    """``D(g) / Ent(g^2)`` and its gradient, written to avoid cancellation near constants."""
    mu = chain.mu

    def fun(g):
        h = g - mu @ g
        Ph = chain.apply(h)
        D = float(mu @ (h * (h - Ph)))
        dD = 2 * mu * (h - Ph)
        g2 = g * g
        S = float(mu @ g2)
        if S <= 0:
            return np.inf, np.zeros_like(g)
        t = g2 / S - 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            lt = np.log1p(t)
            phi = np.where(t > -1.0, (1.0 + t) * lt - t, 1.0)
        # each phi term is >= 0, so the sum has no cancellation
        E = S * float(mu @ phi)
        if E <= 1e-300:
            return np.inf, np.zeros_like(g)
        dE = 2 * mu * g * np.where(t > -1.0, lt, 0.0)
        R = D / E
        return R, (dD - R * dE) / E

    return fun


def log_sobolev_upper(P, mu=None, trials: int = 20, rng: np.random.Generator | None = None, history: bool = False):
    """Upper bound on the log-Sobolev constant ``inf D(sqrt f) / Ent(f)``.

    Each trial starts from a random positive function and is polished by
    L-BFGS.  With ``history`` the running minimum after each trial is
    also returned.
    """
    chain = P if isinstance(P, Chain) else chain_from_matrix(P, mu)
    rng = rng or np.random.default_rng(0)
    fun = _ls_objective(chain)
    best = np.inf
    trace = []
    for _ in range(trials):
        g0 = np.exp(rng.standard_normal(chain.N) * rng.uniform(0.1, 3.0))
        val0, _ = fun(g0)
        res = minimize(fun, g0, jac=True, method="L-BFGS-B", options={"maxiter": 500})
        val = min(val0, float(res.fun)) if np.isfinite(res.fun) else val0
        best = min(best, val)
        trace.append(best)
    if not np.isfinite(best):
        best = 0.0
    return (best, trace) if history else best


# -- block entropies -------------------------------------------------------


def _block_labels(space: StateSpace, l: int):
    return [(x, *block_component_labels(space, x, l)) for x in space.free_vertices]


def block_entropy_terms(f, space: StateSpace, l: int) -> dict[int, float]:
    """``mu(Ent*_{B(x,l)}(f))`` for each non-frozen ``x``."""
    f = np.asarray(f, dtype=float)
    if (f < 0).any():
        raise NegativeFunction("entropy needs f >= 0")
    mu = space.weights
    with np.errstate(divide="ignore", invalid="ignore"):
        flogf = np.where(f > 0, f * np.log(np.where(f > 0, f, 1.0)), 0.0)
    out = {}
    for x, m, lab in _block_labels(space, l):
        mass = np.bincount(lab, weights=mu, minlength=m)
        mf = np.bincount(lab, weights=mu * f, minlength=m) / mass
        mfl = np.bincount(lab, weights=mu * flogf, minlength=m) / mass
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = mfl - np.where(mf > 0, mf * np.log(np.where(mf > 0, mf, 1.0)), 0.0)
        out[x] = float(mass @ np.maximum(ent, 0.0))
    return out


def block_entropy_sum(f, shape: TreeShape, kernel: SpinKernel, l: int, boundary: BoundarySpec | None = None, guard: int = DEFAULT_GUARD, space: StateSpace | None = None) -> float:
    space = space or enumerate_states(shape, kernel, boundary, guard)
    return float(sum(block_entropy_terms(f, space, l).values()))


def comparison_probe(
    shape: TreeShape,
    kernel: SpinKernel,
    l: int,
    trials: int,
    rng: np.random.Generator,
    boundary: BoundarySpec | None = None,
    guard: int = DEFAULT_GUARD,
    min_entropy: float = 1e-9,
) -> float:
    """Largest ``Ent(f) / E*_l(f)`` over random positive ``f`` with ``Ent(f) > min_entropy``."""
    space = enumerate_states(shape, kernel, boundary, guard)
    mu = space.weights
    labels = _block_labels(space, l)
    best = 0.0
    for _ in range(trials):
        f = np.exp(rng.standard_normal(len(space)) * rng.uniform(0.1, 3.0))
        ent = entropy(f, mu)
        if ent <= min_entropy:
            continue
        total = 0.0
        flogf = f * np.log(f)
        for _, m, lab in labels:
            mass = np.bincount(lab, weights=mu, minlength=m)
            mf = np.bincount(lab, weights=mu * f, minlength=m) / mass
            mfl = np.bincount(lab, weights=mu * flogf, minlength=m) / mass
            total += float(mass @ np.maximum(mfl - mf * np.log(mf), 0.0))
        best = max(best, ent / total if total > 0 else np.inf)
    return best
