"""Reversible k-state channels and their potential form.

A spin system on a tree is described by a row-stochastic matrix ``M`` that
is reversible with respect to its stationary law ``pi``.  States are
``0..k-1`` internally; text formats use ``1..k``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.special import logsumexp

from .errors import (
    InvalidParams,
    ModelFileError,
    NonErgodicKernel,
    NonNormalizable,
    NonReversibleKernel,
)

TOL = 1e-12


class _Hard:
    """Tag for an infinite potential (a hard constraint)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "HARD"


HARD = _Hard()


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpinKernel:
    """Validated reversible, ergodic kernel.

    Build with :func:`make_kernel`, :func:`kernel_from_potentials`,
    :func:`coloring_kernel` or :func:`uniform_kernel`.
    """

    M: np.ndarray
    pi: np.ndarray
    hard_mask: np.ndarray = field(repr=False)
    p_min: float
    lam: float

    @property
    def k(self) -> int:
        return self.M.shape[0]

    @property
    def pi_min(self) -> float:
        return float(self.pi.min())

    @property
    def compat(self) -> np.ndarray:
        """Boolean k x k matrix, true where two states may be neighbours."""
        return ~self.hard_mask

    def is_coloring(self) -> bool:
        k = self.k
        if k < 3 or not np.array_equal(self.hard_mask, np.eye(k, dtype=bool)):
            return False
        off = self.M[~np.eye(k, dtype=bool)]
        return bool(np.allclose(off, 1.0 / (k - 1), rtol=0, atol=TOL))


@dataclass(frozen=True, eq=False)
class Potentials:
    """Pair potential ``U`` and one-body potential ``W``.

    Infinite entries are carried by the boolean masks; the float arrays
    hold 0 there.
    """

    U: np.ndarray
    U_hard: np.ndarray
    W: np.ndarray
    W_hard: np.ndarray

    @property
    def k(self) -> int:
        return len(self.W)

    @classmethod
    def from_entries(cls, k: int, U=None, W=None) -> Potentials:
        """Build from sparse entries ``{(i, j): value | HARD}`` and ``{i: value | HARD}``.

        Missing entries default to 0; ``U`` is symmetrised from whichever
        of ``(i, j)`` / ``(j, i)`` is given.
        """
        Uv = np.zeros((k, k))
        Uh = np.zeros((k, k), dtype=bool)
        seen: dict[tuple[int, int], object] = {}
        for (i, j), v in (U or {}).items():
            key = (min(i, j), max(i, j))
            if key in seen and not _same_value(seen[key], v):
                raise InvalidParams(f"U is not symmetric at {key}")
            seen[key] = v
            for a, b in ((i, j), (j, i)):
                if v is HARD:
                    Uh[a, b] = True
                    Uv[a, b] = 0.0
                else:
                    Uv[a, b] = float(v)
        Wv = np.zeros(k)
        Wh = np.zeros(k, dtype=bool)
        for i, v in (W or {}).items():
            if v is HARD:
                Wh[i] = True
            else:
                Wv[i] = float(v)
        return cls(_frozen(Uv), _frozen(Uh), _frozen(Wv), _frozen(Wh))


def _same_value(a, b) -> bool:
    if a is HARD or b is HARD:
        return a is b
    return float(a) == float(b)


def _period(adj: np.ndarray) -> int:
    """Period of a strongly connected digraph (gcd over edges of level differences)."""
    k = adj.shape[0]
    level = [-1] * k
    level[0] = 0
    queue = [0]
    for u in queue:
        for v in np.flatnonzero(adj[u]):
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(int(v))
    diffs = [level[u] + 1 - level[v] for u, v in zip(*np.nonzero(adj))]
    return reduce(math.gcd, (abs(x) for x in diffs), 0)


def check_ergodic(M: np.ndarray) -> None:
    adj = M > 0
    ncomp, _ = connected_components(adj.astype(np.int8), directed=True, connection="strong")
    if ncomp != 1:
        raise NonErgodicKernel(f"kernel graph has {ncomp} strongly connected components")
    per = _period(adj)
    if per != 1:
        raise NonErgodicKernel(f"kernel is periodic with period {per}")


def stationary_law(M: np.ndarray) -> np.ndarray:
    k = M.shape[0]
    A = M.T - np.eye(k)
    A[-1, :] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


def make_kernel(M, pi=None) -> SpinKernel:
    """Validate ``M`` (stochastic, ergodic, reversible) and wrap it."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise InvalidParams("M must be a square matrix")
    if (M < 0).any():
        raise InvalidParams("M has negative entries")
    if np.abs(M.sum(axis=1) - 1.0).max() > TOL:
        raise InvalidParams("rows of M must sum to 1")
    check_ergodic(M)
    pi = stationary_law(M) if pi is None else np.asarray(pi, dtype=float)
    flow = pi[:, None] * M
    if np.abs(flow - flow.T).max() > TOL:
        raise NonReversibleKernel("detailed balance fails")
    hard = M == 0
    lam = _second_eigenvalue(M, pi)
    return SpinKernel(
        M=_frozen(M),
        pi=_frozen(pi),
        hard_mask=_frozen(hard),
        p_min=float(M[~hard].min()),
        lam=lam,
    )


def kernel_from_potentials(pot: Potentials) -> SpinKernel:
    """Kernel with ``M(a, b) proportional to exp(-(U(a, b) + W(b)))``.

    The stationary law solves detailed balance directly,
    ``pi(a) proportional to exp(-W(a)) * Z(a)`` with ``Z(a)`` the row normaliser,
    and is cross-checked against the stationary equation.
    """
    k = pot.k
    expo = -(pot.U + pot.W[None, :])
    blocked = pot.U_hard | pot.W_hard[None, :]
    expo = np.where(blocked, -np.inf, expo)
    if np.isneginf(expo).all(axis=1).any():
        bad = int(np.flatnonzero(np.isneginf(expo).all(axis=1))[0])
        raise NonNormalizable(f"row {bad + 1} has no finite exponent")
    logZ = logsumexp(expo, axis=1)
    M = np.exp(expo - logZ[:, None])
    check_ergodic(M)
    logpi = np.where(pot.W_hard, -np.inf, -pot.W + logZ)
    pi = np.exp(logpi - logsumexp(logpi))
    if np.abs(pi - stationary_law(M)).max() > 1e-10:
        raise NonReversibleKernel("potential-derived stationary law disagrees with M")
    return make_kernel(M, pi)


def potentials_from_kernel(kernel: SpinKernel) -> Potentials:
    """Inverse map in the gauge ``W = -ln pi``, ``U(a, b) = -ln(M(a, b) / pi(b))``."""
    M, pi = kernel.M, kernel.pi
    hard = kernel.hard_mask
    with np.errstate(divide="ignore"):
        U = -np.log(np.where(hard, 1.0, M) / pi[None, :])
    U = np.where(hard, 0.0, 0.5 * (U + U.T))
    W = -np.log(pi)
    zeros = np.zeros(kernel.k, dtype=bool)
    return Potentials(_frozen(U), _frozen(hard), _frozen(W), _frozen(zeros))


def coloring_kernel(k: int) -> SpinKernel:
    """Proper k-colorings: uniform over the other k-1 states."""
    if k < 2:
        raise InvalidParams("coloring needs k >= 2")
    M = (np.ones((k, k)) - np.eye(k)) / (k - 1)
    return make_kernel(M, np.full(k, 1.0 / k))


def coloring_potentials(k: int) -> Potentials:
    return Potentials.from_entries(k, U={(c, c): HARD for c in range(k)})


def uniform_kernel(k: int) -> SpinKernel:
    return make_kernel(np.full((k, k), 1.0 / k), np.full(k, 1.0 / k))


def _second_eigenvalue(M: np.ndarray, pi: np.ndarray) -> float:
    if M.shape[0] == 1:
        return 0.0
    s = np.sqrt(pi)
    S = s[:, None] * M / s[None, :]
    ev = np.linalg.eigvalsh(0.5 * (S + S.T))
    # drop the Perron eigenvalue 1, keep the largest remaining modulus
    rest = np.delete(ev, int(np.argmin(np.abs(ev - 1.0))))
    order = sorted(rest, key=lambda x: (-round(abs(x), 12), x))
    return float(order[0])


def second_eigenvalue(kernel: SpinKernel) -> float:
    """Eigenvalue of ``M`` second largest in modulus, sign kept.

    Ties in modulus resolve to the negative value.
    """
    return kernel.lam


def kesten_stigum_ok(kernel: SpinKernel, d: int) -> tuple[bool, float]:
    """Return ``(d * lam**2 < 1, d * lam**2)``."""
    if d < 1:
        raise InvalidParams("d must be >= 1")
    value = d * kernel.lam**2
    return value < 1.0, value


# -- model files ---------------------------------------------------------

_KEY = re.compile(r"^(?:(k)|(type)|U\((\d+),(\d+)\)|W\((\d+)\))$")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    k: int
    kind: str
    U: dict = field(default_factory=dict)
    W: dict = field(default_factory=dict)

    def potentials(self) -> Potentials:
        if self.kind == "coloring":
            return coloring_potentials(self.k)
        return Potentials.from_entries(self.k, self.U, self.W)

    def kernel(self) -> SpinKernel:
        if self.kind == "coloring":
            if self.k < 2:
                raise InvalidParams("coloring needs k >= 2")
            # k = 2 goes through the potential map and fails as periodic
            if self.k == 2:
                return kernel_from_potentials(self.potentials())
            return coloring_kernel(self.k)
        return kernel_from_potentials(self.potentials())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return (
            self.k == other.k
            and self.kind == other.kind
            and format_model(self) == format_model(other)
        )


def _parse_value(text: str):
    text = text.strip()
    if text.lower() in ("hard", "inf", "+inf", "infinity"):
        return HARD
    try:
        return float(text)
    except ValueError as exc:
        raise ModelFileError(f"bad potential value {text!r}") from exc


def parse_model(text: str) -> ModelSpec:
    """Parse the ``key=value`` model format (1-based state indices)."""
    k = None
    kind = None
    U: dict = {}
    W: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ModelFileError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        m = _KEY.match(key.replace(" ", ""))
        if not m:
            raise ModelFileError(f"line {lineno}: unknown key {key!r}")
        if m.group(1):
            try:
                k = int(value)
            except ValueError as exc:
                raise ModelFileError(f"line {lineno}: k must be an integer") from exc
        elif m.group(2):
            if value not in ("coloring", "custom"):
                raise ModelFileError(f"line {lineno}: type must be coloring or custom")
            kind = value
        elif m.group(3):
            i, j = int(m.group(3)) - 1, int(m.group(4)) - 1
            U[(i, j)] = _parse_value(value)
        else:
            W[int(m.group(5)) - 1] = _parse_value(value)
    if k is None:
        raise ModelFileError("missing k=")
    if k < 1:
        raise ModelFileError("k must be positive")
    kind = kind or "custom"
    for (i, j) in U:
        if not (0 <= i < k and 0 <= j < k):
            raise ModelFileError(f"U({i + 1},{j + 1}) out of range")
    for i in W:
        if not 0 <= i < k:
            raise ModelFileError(f"W({i + 1}) out of range")
    if kind == "coloring" and (U or W):
        raise ModelFileError("type=coloring takes no U/W entries")
    # symmetry is validated here so parse errors surface early
    Potentials.from_entries(k, U, W)
    return ModelSpec(k=k, kind=kind, U=dict(U), W=dict(W))


def _fmt(v) -> str:
    return "hard" if v is HARD else repr(float(v))


def format_model(spec: ModelSpec) -> str:
    """Canonical text of a parsed model; ``parse_model`` inverts it exactly."""
    lines = [f"k={spec.k}", f"type={spec.kind}"]
    if spec.kind == "custom":
        sym = {}
        for (i, j), v in spec.U.items():
            sym[(min(i, j), max(i, j))] = v
        for (i, j) in sorted(sym):
            lines.append(f"U({i + 1},{j + 1})={_fmt(sym[(i, j)])}")
        for i in sorted(spec.W):
            lines.append(f"W({i + 1})={_fmt(spec.W[i])}")
    return "\n".join(lines) + "\n"
