"""Potential function, player costs and single-move deltas.

For a unit-cache allocation ``x`` (``x[i]`` is the resource cached by agent
``i``) the global objective is::

    Phi(x) = sum_{j,l} w[j,l] * d(j, X^l) + sum_i f[i, x[i]]

with ``X^l = {i : x[i] == l}`` and ``d(j, S) = min_{i in S} c[i, j]``
(``empty_set_distance`` when ``S`` is empty).  Player ``i`` pays::

    c_i(x) = sum_{j,l} w[j,l] * (d(j, X^l) - c[i, j])^+ + f[i, x[i]]

and every unilateral change of ``c_i`` equals the change of ``Phi``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .instance import Instance

__all__ = [
    "MoveDelta",
    "as_allocation",
    "parse_allocation",
    "format_allocation",
    "holder_sets",
    "distance",
    "holder_distances",
    "potential",
    "player_cost",
    "player_costs",
    "cost_profile",
    "move_delta",
    "check_exact_potential",
    "capacitated_potential",
    "evacuated_potential",
]


def as_allocation(inst: Instance, x) -> np.ndarray:
    """Return ``x`` as an int64 array after range checks."""
    arr = np.asarray(x, dtype=np.int64).reshape(-1)
    if arr.shape != (inst.n,):
        raise ValueError(f"allocation must have length {inst.n}, got {arr.shape[0]}")
    if np.any((arr < 0) | (arr >= inst.k)):
        raise ValueError(f"allocation entries must lie in [0, {inst.k})")
    return arr


def parse_allocation(text: str) -> np.ndarray:
    """Parse a comma separated, 1-indexed allocation such as ``"1,2,1"``."""
    try:
        vals = [int(tok) for tok in text.replace(" ", "").split(",") if tok]
    except ValueError:
        raise ValueError(f"cannot parse allocation {text!r}") from None
    return np.array(vals, dtype=np.int64) - 1


def format_allocation(x) -> str:
    return ",".join(str(int(v) + 1) for v in x)


def holder_sets(x, k: int) -> list[np.ndarray]:
    x = np.asarray(x)
    return [np.flatnonzero(x == l) for l in range(k)]


def distance(inst: Instance, j: int, S) -> float:
    S = np.asarray(list(S), dtype=np.int64)
    if S.size == 0:
        return inst.c_empty
    return float(inst.c[S, j].min())


def _min_over_holders(c: np.ndarray, mask: np.ndarray, c_empty: float) -> np.ndarray:
    # mask: (n, k) holder indicator -> (n_clients, k) minimum distance
    big = np.where(mask[:, None, :], c[:, :, None], np.inf)
    d = big.min(axis=0)
    return np.where(np.isinf(d), c_empty, d)


def holder_distances(inst: Instance, x) -> np.ndarray:
    """Matrix ``D[j, l] = d(j, X^l)``."""
    x = np.asarray(x)
    mask = x[:, None] == np.arange(inst.k)[None, :]
    return _min_over_holders(inst.c, mask, inst.c_empty)


def potential(inst: Instance, x) -> float:
    x = np.asarray(x)
    D = holder_distances(inst, x)
    return float((inst.w * D).sum() + inst.f[np.arange(inst.n), x].sum())


def player_cost(inst: Instance, x, i: int) -> float:
    x = np.asarray(x)
    D = holder_distances(inst, x)
    gain = np.maximum(D - inst.c[i][:, None], 0.0)
    return float((inst.w * gain).sum() + inst.f[i, x[i]])


def player_costs(inst: Instance, x) -> np.ndarray:
    return np.array([player_cost(inst, x, i) for i in range(inst.n)])


def cost_profile(inst: Instance, x, i: int) -> np.ndarray:
    """Vector of ``c_i(o, x_{-i})`` over all resources ``o``.

    With ``i`` removed, let ``G[l] = sum_j w[j,l] (d(j, X^l - i) - c[i,j])^+``.
    When ``i`` caches ``o`` the ``l = o`` term vanishes (``i`` is its own
    nearest holder at distance ``c[i,j]`` or better) and the others are
    unchanged, so ``c_i(o, x_{-i}) = sum(G) - G[o] + f[i, o]``.
    """
    x = np.asarray(x)
    mask = x[:, None] == np.arange(inst.k)[None, :]
    mask[i, :] = False
    D = _min_over_holders(inst.c, mask, inst.c_empty)
    G = (inst.w * np.maximum(D - inst.c[i][:, None], 0.0)).sum(axis=0)
    return G.sum() - G + inst.f[i]


@dataclass(frozen=True)
class MoveDelta:
    player: int
    old: int
    new: int
    delta_cost: float
    delta_potential: float


def _dist_without(inst, holders: np.ndarray, i: int) -> np.ndarray:
    rest = holders[holders != i]
    if rest.size == 0:
        return np.full(inst.n, inst.c_empty)
    return inst.c[rest].min(axis=0)


def _dist_with(inst, holders: np.ndarray, i: int) -> np.ndarray:
    return np.minimum(_dist_without(inst, holders, i), inst.c[i])


def move_delta(inst: Instance, x, i: int, new: int) -> MoveDelta:
    """Cost and potential change when player ``i`` switches to ``new``.

    ``delta_cost`` sums the before/after ``(d - c_ij)^+`` terms of the two
    touched resources; ``delta_potential`` uses the closed form
    ``sum_j w^old (d(j, X^old - i) - c_ij)^+ - sum_j w^new (d(j, X^new) - c_ij)^+
    + f[i,new] - f[i,old]``.  Neither evaluates ``Phi`` in full.
    """
    x = np.asarray(x)
    old = int(x[i])
    new = int(new)
    if old == new:
        return MoveDelta(i, old, new, 0.0, 0.0)
    ci = inst.c[i]
    w_old, w_new = inst.w[:, old], inst.w[:, new]
    X_old = np.flatnonzero(x == old)
    X_new = np.flatnonzero(x == new)
    d_old = _dist_with(inst, X_old, i)          # i is in X^old
    d_old_minus = _dist_without(inst, X_old, i)
    d_new = _dist_without(inst, X_new, i)       # i is not in X^new
    d_new_plus = _dist_with(inst, X_new, i)
    fee = inst.f[i, new] - inst.f[i, old]

    pos = lambda a: np.maximum(a, 0.0)  # noqa: E731
    delta_cost = (
        (w_old * (pos(d_old_minus - ci) - pos(d_old - ci))).sum()
        + (w_new * (pos(d_new_plus - ci) - pos(d_new - ci))).sum()
        + fee
    )
    delta_potential = (
        (w_old * pos(d_old_minus - ci)).sum() - (w_new * pos(d_new - ci)).sum() + fee
    )
    return MoveDelta(i, old, new, float(delta_cost), float(delta_potential))


def check_exact_potential(inst: Instance, trials: int = 1000, seed: int = 0) -> float:
    """Largest ``|delta_cost - delta_potential|`` over random moves.

    Allocations are uniform on ``[k]^n``, so states with empty holder sets
    are exercised as well.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.integers(0, inst.k, size=inst.n)
        i = int(rng.integers(inst.n))
        new = int(rng.integers(inst.k))
        md = move_delta(inst, x, i, new)
        worst = max(worst, abs(md.delta_cost - md.delta_potential))
    return worst


def capacitated_potential(inst: Instance, contents: Sequence[Sequence[int]]) -> float:
    """Objective of a capacitated instance whose caches are filled slot by slot.

    ``contents[i]`` lists the ``u_i`` resources in agent ``i``'s slots; every
    slot pays its placement fee.
    """
    held = np.zeros((inst.n, inst.k), dtype=bool)
    fees = 0.0
    for i, slots in enumerate(contents):
        for l in slots:
            held[i, l] = True
            fees += inst.f[i, l]
    D = _min_over_holders(inst.c, held, inst.c_empty)
    return float((inst.w * D).sum() + fees)


def evacuated_potential(inst: Instance, x, j: int, keep_fee: bool = False) -> float:
    """Potential with agent ``j``'s cache emptied.

    ``j`` is removed from its holder set in every distance term; its
    placement fee is dropped unless ``keep_fee``.
    """
    x = np.asarray(x)
    mask = x[:, None] == np.arange(inst.k)[None, :]
    mask[j, :] = False
    D = _min_over_holders(inst.c, mask, inst.c_empty)
    fees = inst.f[np.arange(inst.n), x]
    total = (inst.w * D).sum() + fees.sum()
    if not keep_fee:
        total -= fees[j]
    return float(total)
