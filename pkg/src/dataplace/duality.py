"""LP dual of the placement relaxation, its ascent solver and NE certificates.

Dual variables are kept in demand-scaled form: ``beta[j, l]`` is the charge
per unit of demand of client ``(j, l)`` and item ``i`` pays
``alpha[i] >= max_l (sum_j w[j,l] (beta[j,l] - c[i,j])^+ - f[i,l])``.  The
compact dual function is::

    g(beta) = sum_{j,l} w[j,l] beta[j,l] - sum_i max(0, max_l bid[i,l])

The empty-set convention acts like a virtual holder of every resource at
distance ``empty_set_distance``, which caps ``beta <= empty_set_distance``.
Inside that box ``g(beta)`` lower-bounds the optimum potential.  Entries
with zero demand are pinned to 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .instance import Instance
from .objective import as_allocation, evacuated_potential, holder_distances, potential

__all__ = [
    "SELL_TOL",
    "DualEvaluation",
    "DualSolution",
    "DualConfig",
    "NotNashError",
    "NeQualityReport",
    "raw_bids",
    "eval_dual",
    "dual_subgradient",
    "project",
    "fractional_primal_value",
    "solve_dual",
    "grid_search_dual",
    "ne_dual_certificate",
    "ne_quality_bound",
]

SELL_TOL = 1e-12


def _check_beta(inst: Instance, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (inst.n, inst.k):
        raise ValueError(f"beta must have shape {(inst.n, inst.k)}, got {beta.shape}")
    if np.any(beta < 0) or not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite and nonnegative")
    return beta


def raw_bids(inst: Instance, beta) -> np.ndarray:
    """``bid[i, l] = sum_j w[j,l] (beta[j,l] - c[i,j])^+ - f[i,l]`` (not clamped)."""
    beta = np.asarray(beta, dtype=float)
    # gain[i, j, l] = (beta[j, l] - c[i, j])^+
    gain = np.maximum(beta[None, :, :] - inst.c[:, :, None], 0.0)
    return np.einsum("ijl,jl->il", gain, inst.w) - inst.f


@dataclass
class DualEvaluation:
    value: float
    assignment: np.ndarray  # winning resource per item, -1 when unsold
    alpha: np.ndarray
    bids: np.ndarray  # raw bids

    @property
    def y(self) -> np.ndarray:
        n, k = self.bids.shape
        y = np.zeros((n, k), dtype=np.int64)
        sold = self.assignment >= 0
        y[np.flatnonzero(sold), self.assignment[sold]] = 1
        return y


def eval_dual(inst: Instance, beta) -> DualEvaluation:
    """Dual value with the exact (integral) inner minimization over ``y``.

    Each item goes to its highest raw bid (smallest resource on ties) when
    that bid exceeds ``SELL_TOL``; otherwise it stays unsold.
    """
    beta = _check_beta(inst, beta)
    bids = raw_bids(inst, beta)
    best = np.argmax(bids, axis=1)
    top = bids[np.arange(inst.n), best]
    sold = top > SELL_TOL
    alpha = np.where(sold, top, 0.0)
    assignment = np.where(sold, best, -1)
    value = float((inst.w * beta).sum() - alpha.sum())
    return DualEvaluation(value, assignment, alpha, bids)


def dual_subgradient(inst: Instance, beta, ev: DualEvaluation | None = None) -> np.ndarray:
    """A supergradient of ``g`` at ``beta``.

    ``s[j, l] = w[j,l] (1 - #{i sold to l : beta[j,l] > c[i,j]})``; the strict
    inequality picks one element of the superdifferential at kinks.
    """
    beta = _check_beta(inst, beta)
    if ev is None:
        ev = eval_dual(inst, beta)
    y = ev.y.astype(float)  # (i, l)
    active = (beta[None, :, :] > inst.c[:, :, None]).astype(float)  # (i, j, l)
    covered = np.einsum("il,ijl->jl", y, active)
    return inst.w * (1.0 - covered)


def project(inst: Instance, beta: np.ndarray) -> np.ndarray:
    """Projection onto ``0 <= beta <= empty_set_distance`` with zero-demand entries at 0."""
    out = np.clip(beta, 0.0, inst.c_empty)
    out[inst.w <= 0] = 0.0
    return out


def fractional_primal_value(inst: Instance, y) -> float:
    """Cheapest LP primal cost for fixed fractional ``y`` (rows sum to <= 1).

    Each client is served nearest-first from the fractional holders of its
    resource; any unmet share goes to the virtual holder at
    ``empty_set_distance``.  This equals ``max_beta L(beta, y)`` over the box
    and hence bounds the dual optimum from above.
    """
    y = np.asarray(y, dtype=float)
    total = float((inst.f * y).sum())
    order = np.argsort(inst.c, axis=0, kind="stable")  # per client j, holders by distance
    for l in range(inst.k):
        if not np.any(inst.w[:, l] > 0):
            continue
        for j in range(inst.n):
            wj = inst.w[j, l]
            if wj <= 0:
                continue
            need = 1.0
            cost = 0.0
            for i in order[:, j]:
                take = min(need, y[i, l])
                if take > 0:
                    cost += take * inst.c[i, j]
                    need -= take
                if need <= 0:
                    break
            if need > 0:
                cost += need * inst.c_empty
            total += wj * cost
    return total


@dataclass
class DualSolution:
    """Feasible point of the demand-scaled dual."""

    beta: np.ndarray
    alpha: np.ndarray
    objective: float
    assignment: np.ndarray | None = None
    alpha_unclamped: np.ndarray | None = None
    iterations: int = 0
    converged: bool = True
    certified_gap: float = math.nan
    upper_bound: float = math.nan
    history: np.ndarray | None = field(default=None, repr=False)
    message: str = ""

    def u_vars(self, inst: Instance) -> np.ndarray:
        """``u[i, j, l] = w[j,l] (beta[j,l] - c[i,j])^+``."""
        gain = np.maximum(self.beta[None, :, :] - inst.c[:, :, None], 0.0)
        return gain * inst.w[None, :, :]

    def residuals(self, inst: Instance) -> dict:
        bids = raw_bids(inst, self.beta)
        return {
            "constraint": float(np.max(bids - self.alpha[:, None])),
            "negativity": float(max(0.0, -self.beta.min(), -self.alpha.min())),
            "objective": abs(float((inst.w * self.beta).sum() - self.alpha.sum())
                             - self.objective),
        }

    def is_feasible(self, inst: Instance, tol: float = 1e-9) -> bool:
        r = self.residuals(inst)
        return r["constraint"] <= tol and r["negativity"] <= tol


@dataclass
class DualConfig:
    max_iters: int = 50_000
    step_rule: str = "normalized"  # or "diminishing"
    step_a: float | None = None
    step_b: float = 10.0
    tol: float = 1e-4
    seed: int | None = None
    check_every: int = 50
    reference: float | None = None


def solve_dual(inst: Instance, config: DualConfig | None = None) -> DualSolution:
    """Projected supergradient ascent on ``g`` over the box.

    Steps are ``a / (b + t)`` along the supergradient (``"diminishing"``) or
    along the supergradient scaled to unit sup-norm (``"normalized"``).  The
    default ``a`` makes the first step move ``beta`` by a tenth of
    ``empty_set_distance``.  The best iterate is returned with ``alpha``
    recomputed, so it is exactly feasible.

    Convergence is certified by weak duality: the step-weighted average of
    the assignments over a window that restarts at every power of two is a
    fractional primal point whose cost
    (:func:`fractional_primal_value`) bounds the optimum from above, as does
    the cost of every integral assignment seen.  The run stops once
    ``upper - best <= tol * max(1, |best|)``; otherwise the best iterate is
    returned with ``converged=False``.
    """
    cfg = config or DualConfig()
    if cfg.step_rule not in ("diminishing", "normalized"):
        raise ValueError(f"unknown step rule {cfg.step_rule!r}")
    if cfg.seed is None:
        beta = np.zeros((inst.n, inst.k))
    else:
        rng = np.random.default_rng(cfg.seed)
        beta = project(inst, rng.uniform(0.0, inst.c_empty, size=(inst.n, inst.k)))
    if not np.any(inst.w > 0):
        ev = eval_dual(inst, beta * 0)
        # nothing to serve: the empty placement costs 0 and beta = 0 attains it
        return DualSolution(beta * 0, ev.alpha, ev.value, ev.assignment,
                            certified_gap=0.0, upper_bound=ev.value, message="no demand")
    ev = eval_dual(inst, beta)
    s = dual_subgradient(inst, beta, ev)
    smax = float(np.abs(s).max())
    a = cfg.step_a
    if a is None:
        a = 0.1 * inst.c_empty * (cfg.step_b + 1.0)
        if cfg.step_rule == "diminishing":
            a /= max(smax, 1e-12)
    best_beta, best_ev = beta.copy(), ev
    upper = math.inf
    # the averaging window restarts at every power of two so late iterates dominate
    y_sum = np.zeros((inst.n, inst.k))
    weight = 0.0
    window_end = 2
    history = [ev.value]
    converged = False
    t = 0
    gap = math.inf
    for t in range(1, cfg.max_iters + 1):
        step = a / (cfg.step_b + t)
        if t == window_end:
            upper = min(upper, fractional_primal_value(inst, y_sum / weight))
            y_sum[:] = 0.0
            weight = 0.0
            window_end *= 2
        y_sum += step * ev.y
        weight += step
        if cfg.step_rule == "normalized":
            norm = float(np.abs(s).max())
            direction = s / norm if norm > 0 else s
        else:
            direction = s
        beta = project(inst, beta + step * direction)
        ev = eval_dual(inst, beta)
        s = dual_subgradient(inst, beta, ev)
        if ev.value >= best_ev.value:  # on ties prefer the later iterate
            best_beta, best_ev = beta.copy(), ev
        history.append(best_ev.value)
        if t % cfg.check_every == 0 or t == cfg.max_iters:
            upper = min(upper, fractional_primal_value(inst, ev.y),
                        fractional_primal_value(inst, y_sum / weight))
            if cfg.reference is not None:
                upper = min(upper, cfg.reference)
            gap = upper - best_ev.value
            if gap <= cfg.tol * max(1.0, abs(best_ev.value)):
                converged = True
                break
    return DualSolution(
        best_beta, best_ev.alpha, best_ev.value, best_ev.assignment,
        iterations=t, converged=converged, certified_gap=float(gap),
        upper_bound=float(upper), history=np.array(history),
        message="" if converged else "tolerance not met",
    )


def grid_search_dual(inst: Instance, resolution: float = 0.05,
                     max_points: int = 50_000_000) -> tuple[float, np.ndarray]:
    """Maximize ``g`` over a regular grid on ``[0, empty_set_distance]`` per free coordinate.

    Zero-demand coordinates stay at 0.  Only practical for a handful of
    coordinates.
    """
    free = np.argwhere(inst.w > 0)
    axis = np.arange(0.0, inst.c_empty + 0.5 * resolution, resolution)
    axis = axis[axis <= inst.c_empty + 1e-12]
    m = len(free)
    if len(axis) ** m > max_points:
        raise ValueError(f"grid of {len(axis)}^{m} points exceeds max_points")
    best_val, best_beta = -math.inf, None
    if m == 0:
        beta = np.zeros((inst.n, inst.k))
        return eval_dual(inst, beta).value, beta
    mesh = np.stack(np.meshgrid(*([axis] * m), indexing="ij"), axis=-1).reshape(-1, m)
    for start in range(0, len(mesh), 200_000):
        block = mesh[start:start + 200_000]
        B = np.zeros((len(block), inst.n, inst.k))
        B[:, free[:, 0], free[:, 1]] = block
        gain = np.maximum(B[:, None, :, :] - inst.c[None, :, :, None], 0.0)
        bids = np.einsum("pijl,jl->pil", gain, inst.w) - inst.f[None]
        alpha = np.maximum(bids.max(axis=2), 0.0)
        vals = (B * inst.w[None]).sum(axis=(1, 2)) - alpha.sum(axis=1)
        p = int(np.argmax(vals))
        if vals[p] > best_val:
            best_val, best_beta = float(vals[p]), B[p].copy()
    return best_val, best_beta


class NotNashError(ValueError):
    def __init__(self, player: int, resource: int, gain: float):
        self.player, self.resource, self.gain = player, resource, gain
        super().__init__(
            f"not a Nash equilibrium: player {player + 1} lowers its cost by "
            f"{gain:.6g} moving to resource {resource + 1}"
        )


def _require_nash(inst: Instance, x, tol: float):
    from .objective import cost_profile

    for i in range(inst.n):
        costs = cost_profile(inst, x, i)
        l = int(np.argmin(costs))
        if costs[l] < costs[x[i]] - tol:
            raise NotNashError(i, l, float(costs[x[i]] - costs[l]))


def ne_dual_certificate(inst: Instance, x, tol: float = 1e-9) -> DualSolution:
    """Feasible dual point built from a pure Nash equilibrium ``x``.

    ``beta[j, l] = d(j, X^l)`` and ``alpha[i]`` is player ``i``'s marginal
    value ``sum_j w[j,x_i] (d(j, X^{x_i} - i) - c[i,j])^+ - f[i, x_i]``,
    clamped at 0 (the unclamped values are kept in ``alpha_unclamped``).
    """
    x = as_allocation(inst, x)
    _require_nash(inst, x, tol)
    beta = holder_distances(inst, x)
    beta[inst.w <= 0] = 0.0
    raw = np.empty(inst.n)
    for i in range(inst.n):
        l = x[i]
        rest = np.flatnonzero((x == l) & (np.arange(inst.n) != i))
        d_minus = inst.c[rest].min(axis=0) if rest.size else np.full(inst.n, inst.c_empty)
        raw[i] = (inst.w[:, l] * np.maximum(d_minus - inst.c[i], 0.0)).sum() - inst.f[i, l]
    alpha = np.maximum(raw, 0.0)
    obj = float((inst.w * beta).sum() - alpha.sum())
    return DualSolution(beta, alpha, obj, alpha_unclamped=raw,
                        message="alpha clamped" if np.any(raw < 0) else "")


@dataclass
class NeQualityReport:
    phi: float
    phi_star: float | None
    evacuated: np.ndarray  # Phi(x \ j), placement fee kept
    evacuated_no_fee: np.ndarray  # Phi(x \ j), placement fee dropped
    bound: float | None
    bound_no_fee: float | None
    certificate_objective: float
    holds: bool | None
    holds_no_fee: bool | None

    def as_dict(self) -> dict:
        return {
            "phi": self.phi,
            "phi_star": self.phi_star,
            "evacuated": self.evacuated.tolist(),
            "evacuated_no_fee": self.evacuated_no_fee.tolist(),
            "bound": self.bound,
            "bound_no_fee": self.bound_no_fee,
            "certificate_objective": self.certificate_objective,
            "holds": self.holds,
            "holds_no_fee": self.holds_no_fee,
        }


def ne_quality_bound(inst: Instance, x, phi_star: float | None = None,
                     tol: float = 1e-9) -> NeQualityReport:
    """Both sides of ``Phi(x) <= (Phi* + sum_j Phi(x \\ j)) / (n + 1)`` at a NE.

    ``Phi(x \\ j)`` removes ``j`` from its holder set.  The primary bound
    keeps ``j``'s placement fee, which is the form that follows from the
    certificate; the variant that also drops the fee is reported alongside.
    ``phi_star`` is enumerated when not given and the state space allows.
    """
    x = as_allocation(inst, x)
    cert = ne_dual_certificate(inst, x, tol)
    if phi_star is None:
        from .exact import StateSpaceTooLarge, brute_force_optimum

        try:
            phi_star = brute_force_optimum(inst).value
        except StateSpaceTooLarge:
            phi_star = None
    phi = potential(inst, x)
    keep = np.array([evacuated_potential(inst, x, j, keep_fee=True) for j in range(inst.n)])
    drop = np.array([evacuated_potential(inst, x, j, keep_fee=False) for j in range(inst.n)])
    if phi_star is None:
        bound = bound_nf = None
        holds = holds_nf = None
    else:
        bound = float((phi_star + keep.sum()) / (inst.n + 1))
        bound_nf = float((phi_star + drop.sum()) / (inst.n + 1))
        holds = phi <= bound + tol
        holds_nf = phi <= bound_nf + tol
    return NeQualityReport(phi, phi_star, keep, drop, bound, bound_nf,
                           cert.objective, holds, holds_nf)
