"""Exhaustive oracles over the full allocation space ``[k]^n``.

States are encoded as base-``k`` integers with agent 0 as the most
significant digit, so integer order equals lexicographic order of
allocations.  Everything here is exponential in ``n`` and guarded by a
state-count cap.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .instance import Instance

__all__ = [
    "DEFAULT_CAP",
    "StateSpaceTooLarge",
    "StateSpace",
    "BruteForceResult",
    "GibbsDistribution",
    "CostBound",
    "all_potentials",
    "all_cost_profiles",
    "brute_force_optimum",
    "potential_gap",
    "capacitated_optimum",
    "transition_matrix",
    "gibbs_distribution",
    "stationarity_residual",
    "check_detailed_balance",
    "exact_tv_curve",
    "tv_distance",
    "cost_bound_u",
    "theorem_beta",
    "mixing_bound",
]

DEFAULT_CAP = 2_000_000
# dense chain evolution holds an N x N matrix
TV_CURVE_CAP = 4096
_CHUNK_ELEMS = 4_000_000


class StateSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class StateSpace:
    n: int
    k: int
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.size > self.cap:
            raise StateSpaceTooLarge(
                f"k^n = {self.k}^{self.n} = {self.size} states exceeds cap {self.cap}"
            )

    @property
    def size(self) -> int:
        return self.k ** self.n

    @property
    def powers(self) -> np.ndarray:
        return self.k ** np.arange(self.n - 1, -1, -1, dtype=np.int64)

    def encode(self, x) -> int:
        return int(np.dot(np.asarray(x, dtype=np.int64), self.powers))

    def decode(self, code: int) -> np.ndarray:
        if not 0 <= code < self.size:
            raise ValueError(f"state code {code} out of range")
        return (code // self.powers) % self.k

    def states(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        stop = self.size if stop is None else stop
        codes = np.arange(start, stop, dtype=np.int64)
        return (codes[:, None] // self.powers[None, :]) % self.k

    def chunks(self, per_state: int):
        step = max(1, _CHUNK_ELEMS // max(1, per_state))
        for start in range(0, self.size, step):
            stop = min(self.size, start + step)
            yield start, stop, self.states(start, stop)

    @classmethod
    def of(cls, inst: Instance, cap: int = DEFAULT_CAP) -> "StateSpace":
        return cls(inst.n, inst.k, cap)


def _holder_min(c, mask, c_empty):
    # mask (m, n) holders -> (m, n_clients)
    d = np.where(mask[:, :, None], c[None, :, :], np.inf).min(axis=1)
    return np.where(np.isinf(d), c_empty, d)


def all_potentials(inst: Instance, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Potential of every state, indexed by state code."""
    space = StateSpace.of(inst, cap)
    out = np.empty(space.size)
    n, k = inst.n, inst.k
    rows = np.arange(n)
    for start, stop, S in space.chunks(n * n):
        total = inst.f[rows[None, :], S].sum(axis=1)
        for l in range(k):
            D = _holder_min(inst.c, S == l, inst.c_empty)
            total += D @ inst.w[:, l]
        out[start:stop] = total
    return out


def all_cost_profiles(inst: Instance, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Array ``C[s, i, o] = c_i(o, x_{-i})`` for ``x`` = state ``s``."""
    space = StateSpace.of(inst, cap)
    n, k = inst.n, inst.k
    out = np.empty((space.size, n, k))
    for start, stop, S in space.chunks(n * n * k):
        for i in range(n):
            G = np.zeros((stop - start, k))
            for l in range(k):
                mask = S == l
                mask[:, i] = False
                D = _holder_min(inst.c, mask, inst.c_empty)
                G[:, l] = np.maximum(D - inst.c[i][None, :], 0.0) @ inst.w[:, l]
            out[start:stop, i, :] = G.sum(axis=1, keepdims=True) - G + inst.f[i][None, :]
    return out


@dataclass
class BruteForceResult:
    allocation: np.ndarray
    value: float
    optima: np.ndarray  # (m, n) all allocations within tie tolerance
    potentials: np.ndarray = field(repr=False)


def brute_force_optimum(inst: Instance, cap: int = DEFAULT_CAP,
                        tie_tol: float = 1e-9) -> BruteForceResult:
    """Global minimum of the potential by enumeration.

    The reported allocation is the smallest state code attaining the minimum;
    ``optima`` lists every state within ``tie_tol`` of it.
    """
    space = StateSpace.of(inst, cap)
    phi = all_potentials(inst, cap)
    best = int(np.argmin(phi))
    value = float(phi[best])
    codes = np.flatnonzero(phi <= value + tie_tol)
    optima = (codes[:, None] // space.powers[None, :]) % inst.k
    return BruteForceResult(space.decode(best), value, optima, phi)


def potential_gap(inst: Instance, cap: int = DEFAULT_CAP, tie_tol: float = 1e-9) -> float:
    """Distance from the optimum to the next potential level (inf if none)."""
    phi = all_potentials(inst, cap)
    lo = phi.min()
    rest = phi[phi > lo + tie_tol]
    return float(rest.min() - lo) if rest.size else math.inf


def capacitated_optimum(inst: Instance, cap: int = 100_000) -> tuple[float, list[list[int]]]:
    """Minimum objective of a capacitated instance by enumerating slot contents.

    Evaluates the capacitated objective directly on every filling of the
    ``sum(cache_sizes)`` slots, without going through the unit reduction.
    """
    from .objective import capacitated_potential

    slots = int(inst.cache_sizes.sum())
    if inst.k ** slots > cap:
        raise StateSpaceTooLarge(f"k^slots = {inst.k}^{slots} exceeds cap {cap}")
    bounds = np.cumsum(inst.cache_sizes)[:-1]
    best, best_contents = math.inf, None
    for fill in itertools.product(range(inst.k), repeat=slots):
        contents = [[int(v) for v in part] for part in np.split(np.array(fill), bounds)]
        val = capacitated_potential(inst, contents)
        if val < best:
            best, best_contents = val, contents
    return best, best_contents


def _softmax_rows(costs: np.ndarray, beta: float) -> np.ndarray:
    z = -beta * (costs - costs.min(axis=-1, keepdims=True))
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def transition_matrix(inst: Instance, beta: float, cap: int = DEFAULT_CAP,
                      profiles: np.ndarray | None = None) -> sp.csr_matrix:
    """Sparse Glauber transition matrix built from the player costs."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    space = StateSpace.of(inst, cap)
    n, k, N = inst.n, inst.k, space.size
    C = all_cost_profiles(inst, cap) if profiles is None else profiles
    probs = _softmax_rows(C, beta) / n  # (N, n, k)
    S = space.states()
    pw = space.powers
    src = np.repeat(np.arange(N, dtype=np.int64), n * k)
    shift = (np.arange(k)[None, None, :] - S[:, :, None]) * pw[None, :, None]
    dst = (np.arange(N, dtype=np.int64)[:, None, None] + shift).reshape(-1)
    P = sp.coo_matrix((probs.reshape(-1), (src, dst)), shape=(N, N)).tocsr()
    P.sum_duplicates()
    return P


@dataclass
class GibbsDistribution:
    beta: float
    probs: np.ndarray
    potentials: np.ndarray = field(repr=False)

    def mass(self, codes) -> float:
        return float(self.probs[np.asarray(codes, dtype=np.int64)].sum())


def gibbs_distribution(inst: Instance, beta: float, cap: int = DEFAULT_CAP,
                       potentials: np.ndarray | None = None) -> GibbsDistribution:
    """``pi(x) ~ exp(-beta * Phi(x))``, shifted by ``min Phi`` before exponentiating."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    phi = all_potentials(inst, cap) if potentials is None else potentials
    e = np.exp(-beta * (phi - phi.min()))
    return GibbsDistribution(beta, e / e.sum(), phi)


def stationarity_residual(P, pi: np.ndarray) -> float:
    """``||pi P - pi||_1``."""
    return float(np.abs(P.T @ pi - pi).sum())


def check_detailed_balance(inst: Instance, beta: float, cap: int = DEFAULT_CAP,
                           P=None, pi: np.ndarray | None = None) -> float:
    """Largest ``|pi(x) P[x,y] - pi(y) P[y,x]|`` over adjacent state pairs."""
    if P is None:
        P = transition_matrix(inst, beta, cap)
    if pi is None:
        pi = gibbs_distribution(inst, beta, cap).probs
    flow = sp.diags(pi) @ P
    diff = (flow - flow.T).tocoo()
    return float(np.abs(diff.data).max()) if diff.nnz else 0.0


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def exact_tv_curve(inst: Instance, beta: float, t_max: int,
                   cap: int = TV_CURVE_CAP, P=None) -> np.ndarray:
    """Worst-case distance to stationarity ``d(t)`` for ``t = 0..t_max``.

    The supremum over initial laws is a maximum over point masses because
    total variation is convex in the initial distribution.
    """
    if t_max < 0:
        raise ValueError("t_max must be nonnegative")
    space = StateSpace.of(inst, cap)
    N = space.size
    if P is None:
        P = transition_matrix(inst, beta, cap)
    pi = gibbs_distribution(inst, beta, cap).probs
    Pm = P.toarray() if N <= 1024 else P
    M = np.eye(N)
    d = np.empty(t_max + 1)
    d[0] = 0.5 * np.abs(M - pi[None, :]).sum(axis=1).max()
    for t in range(1, t_max + 1):
        M = M @ Pm if N <= 1024 else np.asarray((Pm.T @ M.T).T)
        d[t] = 0.5 * np.abs(M - pi[None, :]).sum(axis=1).max()
    return d


@dataclass
class CostBound:
    u_bar: float
    u_exact: float | None = None


def cost_bound_u(inst: Instance, exact: bool = False, cap: int = DEFAULT_CAP) -> CostBound:
    """Certified ``u_bar >= max_{i,x} c_i(x)``.

    Every ``(d - c_ij)^+`` term is at most ``empty_set_distance``, so
    ``u_bar = empty_set_distance * sum(w) + max(f)``.  With ``exact`` the true
    maximum is also enumerated.
    """
    u_bar = float(inst.c_empty * inst.w.sum() + inst.f.max())
    u_exact = None
    if exact:
        C = all_cost_profiles(inst, cap)
        u_exact = float(C.max())  # every (o, x_{-i}) is itself a state
    return CostBound(u_bar, u_exact)


def theorem_beta(inst: Instance, u: float | None = None) -> float:
    """Largest noise parameter ``k / (6 n u)`` covered by the fast-mixing guarantee."""
    if u is None:
        u = cost_bound_u(inst).u_bar
    if u <= 0:
        return math.inf
    return inst.k / (6.0 * inst.n * u)


def mixing_bound(n: int, t) -> np.ndarray:
    """``n * exp(-t / (7 n))``."""
    return n * np.exp(-np.asarray(t, dtype=float) / (7.0 * n))
