"""Glauber dynamics, best-response dynamics and coupled chains.

At every step one player ``i`` is drawn uniformly and re-samples its
resource from ``p(o) ~ exp(-beta * c_i(o, x_{-i}))``.

Random numbers come from :class:`numpy.random.Generator` (PCG64).  A chain
step consumes two uniforms ``(player, resource)`` and a coupled step four
``(player, coupling branch, draw, draw)``, so batch runs reproduce the
step-by-step API bit for bit.  Replicas drawn in one batch take consecutive
blocks of the stream in replica order; independent workers get children of
``numpy.random.SeedSequence(seed).spawn``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .exact import DEFAULT_CAP, StateSpace, StateSpaceTooLarge, brute_force_optimum
from .instance import Instance
from .objective import as_allocation, cost_profile

__all__ = [
    "make_rng",
    "spawn_rngs",
    "update_distribution",
    "StepRecord",
    "step",
    "GlauberConfig",
    "ChainTrace",
    "run",
    "BestResponseResult",
    "best_response_dynamics",
    "is_nash",
    "maximal_coupling_sample",
    "maximal_coupling_batch",
    "CoupledState",
    "CoupledRun",
    "coupled_run",
    "coupled_replicas",
    "default_workers",
    "MixingEstimate",
    "estimate_mixing",
]

_CHUNK = 1 << 20


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed, count: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(seed).spawn(count)]


def _arrays(inst: Instance):
    return (np.ascontiguousarray(inst.c), np.ascontiguousarray(inst.w),
            np.ascontiguousarray(inst.f), float(inst.c_empty))


def _softmax(costs: np.ndarray, beta: float) -> np.ndarray:
    e = np.exp(-beta * (costs - costs.min()))
    return e / np.cumsum(e)[-1]


def _draw(weights: np.ndarray, target) -> np.ndarray:
    """First index whose running weight exceeds ``target`` (as in the kernels)."""
    cdf = np.cumsum(weights)
    idx = np.searchsorted(cdf, np.asarray(target, dtype=float), side="right")
    # rounding can push the index past the last positive entry
    last = len(weights) - 1 - int(np.argmax(weights[::-1] > 0))
    return np.minimum(idx, last)


def update_distribution(inst: Instance, x, i: int, beta: float) -> np.ndarray:
    """Law of player ``i``'s next resource given the others' choices."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return _softmax(cost_profile(inst, x, i), beta)


@dataclass(frozen=True)
class StepRecord:
    player: int
    old: int
    new: int
    delta_cost: float


def step(inst: Instance, x, beta: float, rng: np.random.Generator):
    """One Glauber step; returns ``(new allocation, StepRecord)``."""
    x = as_allocation(inst, x).copy()
    u = rng.random(2)
    i = min(int(u[0] * inst.n), inst.n - 1)
    costs = cost_profile(inst, x, i)
    new = int(_draw(_softmax(costs, beta), u[1]))
    old = int(x[i])
    x[i] = new
    return x, StepRecord(i, old, new, float(costs[new] - costs[old]))


@dataclass
class GlauberConfig:
    beta: float
    steps: int
    seed: int = 0
    initial: object = "uniform-random"
    stride: int = 1
    target: float | None = None

    def validate(self) -> None:
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class ChainTrace:
    """Recorded trajectory; record 0 is the initial state (player -1)."""

    t: np.ndarray
    player: np.ndarray
    old: np.ndarray
    new: np.ndarray
    phi: np.ndarray
    initial_state: np.ndarray
    final_state: np.ndarray
    best_phi: float
    best_state: np.ndarray
    best_t: int
    hit_time: int | None = None
    state_counts: np.ndarray | None = field(default=None, repr=False)

    def rows(self):
        for r in range(len(self.t)):
            yield (int(self.t[r]), int(self.player[r]), int(self.old[r]),
                   int(self.new[r]), float(self.phi[r]))


def run(inst: Instance, config: GlauberConfig, count_states: bool = False) -> ChainTrace:
    """Simulate ``config.steps`` Glauber steps.

    ``config.target`` (e.g. a brute-force optimum value) sets ``hit_time`` to
    the first time ``Phi <= target + 1e-9``.  ``count_states`` tallies visits
    per encoded state (initial state included), which needs a small ``k^n``.
    """
    config.validate()
    rng = make_rng(config.seed)
    if isinstance(config.initial, str):
        if config.initial != "uniform-random":
            raise ValueError(f"unknown initial allocation {config.initial!r}")
        x = rng.integers(0, inst.k, size=inst.n).astype(np.int64)
    else:
        x = as_allocation(inst, config.initial).copy()
    x0 = x.copy()
    c, w, f, ce = _arrays(inst)
    target = -math.inf if config.target is None else config.target + 1e-9
    T, stride = config.steps, config.stride
    nrec_max = T // stride + 1
    rec_t = np.zeros(nrec_max, dtype=np.int64)
    rec_p = np.zeros(nrec_max, dtype=np.int64)
    rec_o = np.zeros(nrec_max, dtype=np.int64)
    rec_n = np.zeros(nrec_max, dtype=np.int64)
    rec_phi = np.zeros(nrec_max)
    if count_states:
        space = StateSpace(inst.n, inst.k)
        counts = np.zeros(space.size, dtype=np.int64)
        powers = space.powers
    else:
        counts = np.zeros(0, dtype=np.int64)
        powers = np.zeros(inst.n, dtype=np.int64)
    best_state = x.copy()
    chunk_best = x.copy()
    best_phi, best_t, hit = math.inf, 0, -1
    nrec = 0
    t0 = 0
    while True:
        m = min(_CHUNK, T - t0)
        U = rng.random((m, 2))
        got, b, bt, h, _ = K.glauber_nb(
            c, w, f, ce, float(config.beta), x, U, t0, stride, target,
            rec_t[nrec:], rec_p[nrec:], rec_o[nrec:], rec_n[nrec:], rec_phi[nrec:],
            chunk_best, counts, powers)
        nrec += got
        if b < best_phi:
            best_phi, best_t = b, bt
            best_state[:] = chunk_best
        if hit < 0 and h >= 0:
            hit = h
        t0 += m
        if t0 >= T:
            break
    return ChainTrace(
        rec_t[:nrec], rec_p[:nrec], rec_o[:nrec], rec_n[:nrec], rec_phi[:nrec],
        x0, x, float(best_phi), best_state, int(best_t),
        None if hit < 0 else int(hit), counts if count_states else None,
    )


@dataclass
class BestResponseResult:
    allocation: np.ndarray
    moves: int
    sweeps: int
    converged: bool
    message: str = ""


def best_response_dynamics(inst: Instance, initial=None, max_sweeps: int = 10_000,
                           tie_rule: str = "lowest", seed: int | None = None,
                           improve_tol: float = 1e-12) -> BestResponseResult:
    """Round-robin best response until no player can strictly improve.

    Players are scanned in index order; a player moves only if its best
    resource lowers its cost by more than ``improve_tol``.  Among tied best
    resources ``tie_rule="lowest"`` takes the smallest index and
    ``"random"`` picks uniformly using ``seed``.  A random initial allocation
    is drawn from ``seed`` when ``initial`` is None.
    """
    if tie_rule not in ("lowest", "random"):
        raise ValueError("tie_rule must be 'lowest' or 'random'")
    rng = make_rng(seed)
    if initial is None:
        x = rng.integers(0, inst.k, size=inst.n).astype(np.int64)
    else:
        x = as_allocation(inst, initial).copy()
    moves = 0
    for sweep in range(1, max_sweeps + 1):
        moved = False
        for i in range(inst.n):
            costs = cost_profile(inst, x, i)
            cur = costs[x[i]]
            lo = costs.min()
            if lo < cur - improve_tol:
                ties = np.flatnonzero(costs <= lo + improve_tol)
                x[i] = ties[0] if tie_rule == "lowest" else rng.choice(ties)
                moves += 1
                moved = True
        if not moved:
            return BestResponseResult(x, moves, sweep, True)
    return BestResponseResult(
        x, moves, max_sweeps, False,
        f"no equilibrium after {max_sweeps} sweeps ({moves} improving moves); "
        "the potential should rule this out",
    )


def is_nash(inst: Instance, x, tol: float = 1e-9):
    """Return ``(True, None)`` or ``(False, (i, l))`` naming an improving move."""
    x = as_allocation(inst, x)
    for i in range(inst.n):
        costs = cost_profile(inst, x, i)
        l = int(np.argmin(costs))
        if costs[l] < costs[x[i]] - tol:
            return False, (i, l)
    return True, None


def _check_dist(p, name):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} must be a nonnegative finite vector")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} sums to {p.sum()}, expected 1")
    return p


def _coupling_from_uniforms(mu, nu, U):
    m = np.minimum(mu, nu)
    overlap = np.cumsum(m)[-1]
    ra = np.maximum(mu - nu, 0.0)
    rb = np.maximum(nu - mu, 0.0)
    ta, tb = np.cumsum(ra)[-1], np.cumsum(rb)[-1]
    if overlap > 0:
        shared = _draw(m, U[:, 1] * overlap)
    else:
        shared = np.zeros(len(U), dtype=np.int64)
    if ta <= 0 or tb <= 0:
        return shared, shared.copy()
    same = U[:, 0] < overlap
    a = np.where(same, shared, _draw(ra, U[:, 1] * ta))
    b = np.where(same, shared, _draw(rb, U[:, 2] * tb))
    return a, b


def maximal_coupling_batch(mu, nu, rng: np.random.Generator, size: int):
    """``size`` independent maximal-coupling draws; row ``r`` uses three uniforms."""
    mu = _check_dist(mu, "mu")
    nu = _check_dist(nu, "nu")
    if mu.shape != nu.shape:
        raise ValueError("mu and nu must have the same length")
    return _coupling_from_uniforms(mu, nu, rng.random((size, 3)))


def maximal_coupling_sample(mu, nu, rng: np.random.Generator):
    """Draw ``(a, b)`` with ``a ~ mu``, ``b ~ nu`` and ``P(a != b) = TV(mu, nu)``.

    With probability ``sum(min(mu, nu))`` both take a common value from the
    normalized overlap; otherwise they are drawn independently from the
    normalized residuals ``(mu - nu)^+`` and ``(nu - mu)^+``.
    """
    a, b = maximal_coupling_batch(mu, nu, rng, 1)
    return int(a[0]), int(b[0])


@dataclass
class CoupledState:
    x: np.ndarray
    y: np.ndarray

    @property
    def rho(self) -> int:
        return int(np.count_nonzero(self.x != self.y))

    @property
    def coalesced(self) -> bool:
        return self.rho == 0


@dataclass
class CoupledRun:
    coalescence_time: int | None
    rho: np.ndarray
    final: CoupledState


def coupled_run(inst: Instance, x, y, beta: float, T: int, rng: np.random.Generator,
                stop_at_coalescence: bool = False) -> CoupledRun:
    """Two Glauber chains driven by a shared player and a maximal coupling.

    Each step picks one player for both chains and draws the two new
    resources from the maximal coupling of their update laws.  Once the
    chains meet, both laws coincide and they move together.
    """
    x = as_allocation(inst, x).copy()
    y = as_allocation(inst, y).copy()
    c, w, f, ce = _arrays(inst)
    U = rng.random((T, 4))
    rho = np.zeros(T + 1, dtype=np.int64)
    tau, steps = K.coupled_nb(c, w, f, ce, float(beta), x, y, U, rho, stop_at_coalescence)
    return CoupledRun(None if tau < 0 else int(tau), rho[:steps + 1], CoupledState(x, y))


def default_workers() -> int:
    """Worker cap from ``DATAPLACE_THREADS`` (default 1)."""
    raw = os.environ.get("DATAPLACE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"DATAPLACE_THREADS must be a positive integer, got {raw!r}") from None


def coupled_replicas(inst: Instance, x, y, beta: float, T: int, replicas: int,
                     rng: np.random.Generator, stop_at_coalescence: bool = True,
                     batch: int = 4096, workers: int | None = None):
    """Run ``replicas`` coupled chains from ``(x, y)`` for at most ``T`` steps.

    Returns ``(coalescence times with -1 for none, Hamming distance at the
    end)``; with ``stop_at_coalescence`` the end of a coalesced replica is
    its coalescence time.  Uniforms are drawn in replica order before the
    blocks are handed to ``workers`` threads, so results do not depend on
    the worker count.
    """
    x = as_allocation(inst, x)
    y = as_allocation(inst, y)
    c, w, f, ce = _arrays(inst)
    workers = default_workers() if workers is None else max(1, int(workers))
    taus = np.empty(replicas, dtype=np.int64)
    final = np.empty(replicas, dtype=np.int64)
    per = max(1, min(batch, (1 << 22) // max(1, 4 * T)))

    def work(start, stop, U):
        K.coupled_batch_nb(c, w, f, ce, float(beta), x, y, U, stop_at_coalescence,
                           taus[start:stop], final[start:stop])

    blocks = [(start, min(replicas, start + per)) for start in range(0, replicas, per)]
    if workers == 1 or len(blocks) == 1:
        for start, stop in blocks:
            work(start, stop, rng.random((stop - start, T, 4)))
        return taus, final
    with ThreadPoolExecutor(workers) as pool:
        pending = []
        for start, stop in blocks:
            pending.append(pool.submit(work, start, stop, rng.random((stop - start, T, 4))))
            if len(pending) >= 2 * workers:  # bound the memory held by queued blocks
                pending.pop(0).result()
        for fut in pending:
            fut.result()
    return taus, final


@dataclass
class MixingEstimate:
    t_mix: int | None
    epsilon: float
    exceedance: np.ndarray  # max over pairs of P(chains differ at t)
    pairs: list
    replicas: int
    horizon: int


def estimate_mixing(inst: Instance, beta: float, epsilon: float, replicas: int,
                    rng: np.random.Generator, n_random_pairs: int = 4,
                    horizon: int | None = None, max_horizon: int = 1 << 16,
                    cap: int = DEFAULT_CAP) -> MixingEstimate:
    """Coupling estimate of the first ``t`` with ``max_pairs P(Z^x_t != Z^y_t) <= epsilon``.

    Pairs are ``n_random_pairs`` uniform pairs plus, when the state space
    fits under ``cap``, the brute-force optimum against the allocation that
    differs from it in every coordinate.  The horizon doubles until the
    threshold is crossed or ``max_horizon`` is reached (``t_mix`` is then None).
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    n, k = inst.n, inst.k
    pairs = [(rng.integers(0, k, size=n), rng.integers(0, k, size=n))
             for _ in range(n_random_pairs)]
    try:
        StateSpace(n, k, cap)
        opt = brute_force_optimum(inst, cap).allocation
        pairs.append((opt, (opt + 1) % k))
    except StateSpaceTooLarge:
        z = rng.integers(0, k, size=n)
        pairs.append((z, (z + 1) % k))
    if horizon is None:
        horizon = max(16, int(math.ceil(7 * n * math.log(max(n, 2) / epsilon))))
    while True:
        ex = np.zeros(horizon + 1)
        for x, y in pairs:
            taus, _ = coupled_replicas(inst, x, y, beta, horizon, replicas, rng)
            hist = np.bincount(taus[taus >= 0], minlength=horizon + 1)
            # P(tau > t) for t = 0..horizon
            surv = (replicas - np.cumsum(hist[: horizon + 1])) / replicas
            ex = np.maximum(ex, surv)
        hits = np.flatnonzero(ex <= epsilon)
        if hits.size or horizon >= max_horizon:
            t_mix = int(hits[0]) if hits.size else None
            return MixingEstimate(t_mix, epsilon, ex, pairs, replicas, horizon)
        horizon = min(max_horizon, 2 * horizon)
