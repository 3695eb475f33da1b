"""First-price auction over unit cache slots driven by a dual charging vector.

Each agent's single cache slot is an item.  Resource ``l`` acts as a bidder
that charges client ``j`` the amount ``beta[j, l]`` per unit of demand and
bids ``(sum_j w[j,l] (beta[j,l] - c[i,j])^+ - f[i,l])^+`` for item ``i``.
Items go to the highest bid and the winner pays it.  The allocation is then
turned into a primal placement whose cost is compared with the welfare and
revenue of the auction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .duality import SELL_TOL, DualSolution, raw_bids
from .instance import Instance

__all__ = [
    "InfeasibleDualError",
    "AuctionOutcome",
    "PrimalSolution",
    "BoundCertificate",
    "AuditFinding",
    "AuditReport",
    "compute_bids",
    "run_auction",
    "build_primal",
    "certify_bound",
    "cs_audit",
]


class InfeasibleDualError(ValueError):
    pass


def compute_bids(inst: Instance, beta) -> np.ndarray:
    """Clamped bids, ``bid[i, l] >= 0``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (inst.n, inst.k) or np.any(beta < 0):
        raise ValueError("beta must be a nonnegative n x k matrix")
    return np.maximum(raw_bids(inst, beta), 0.0)


@dataclass
class AuctionOutcome:
    beta: np.ndarray
    bids: np.ndarray
    winners: np.ndarray  # resource per item, -1 when unsold
    payments: np.ndarray
    bundles: list[np.ndarray]
    utilities: np.ndarray
    social_welfare: float
    revenue: float
    gamma: float
    factor: float | None  # None when the welfare is not positive

    @property
    def y(self) -> np.ndarray:
        y = np.zeros(self.bids.shape, dtype=np.int64)
        sold = self.winners >= 0
        y[np.flatnonzero(sold), self.winners[sold]] = 1
        return y

    def as_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "bids": self.bids.tolist(),
            "winners": [int(l) + 1 if l >= 0 else None for l in self.winners],
            "payments": self.payments.tolist(),
            "bundles": [[int(i) + 1 for i in b] for b in self.bundles],
            "utilities": self.utilities.tolist(),
            "social_welfare": self.social_welfare,
            "revenue": self.revenue,
            "gamma": self.gamma,
            "factor": self.factor,
        }


def run_auction(inst: Instance, dual: DualSolution, tol: float = 1e-9) -> AuctionOutcome:
    """Sell every item to its highest bidder at that bid.

    Ties go to the smallest resource index; an item whose best bid is at
    most ``SELL_TOL`` stays unsold.  ``dual`` must be feasible.
    """
    if not dual.is_feasible(inst, tol):
        raise InfeasibleDualError(f"dual infeasible: {dual.residuals(inst)}")
    beta = np.asarray(dual.beta, dtype=float)
    bids = compute_bids(inst, beta)
    best = np.argmax(bids, axis=1)
    top = bids[np.arange(inst.n), best]
    sold = top > SELL_TOL
    winners = np.where(sold, best, -1)
    payments = np.where(sold, top, 0.0)
    bundles = [np.flatnonzero(winners == l) for l in range(inst.k)]
    charges = (inst.w * beta).sum(axis=0)  # collected by each resource
    paid = np.array([payments[b].sum() for b in bundles])
    utilities = charges - paid
    revenue = float(payments.sum())
    total_charge = float(charges.sum())
    welfare = total_charge - revenue
    gamma = revenue / total_charge if total_charge > 0 else 0.0
    factor = 1.0 / (1.0 - gamma) if welfare > 0 else None
    return AuctionOutcome(beta, bids, winners, payments, bundles, utilities,
                          welfare, revenue, gamma, factor)


@dataclass
class PrimalSolution:
    y: np.ndarray  # (n, k) 0/1, item i holds resource l
    connection: np.ndarray  # (n, k) serving agent of client j for l, -1 if uncovered
    cost: float
    uncovered: list[tuple[int, int]] = field(default_factory=list)

    def x(self) -> np.ndarray:
        """Connection indicator ``x[i, j, l]``."""
        n, k = self.y.shape
        out = np.zeros((n, n, k), dtype=np.int64)
        j, l = np.nonzero(self.connection >= 0)
        out[self.connection[j, l], j, l] = 1
        return out


def build_primal(inst: Instance, outcome: AuctionOutcome | np.ndarray) -> PrimalSolution:
    """Place the sold items and connect each client to its nearest holder.

    Accepts an outcome or a winner vector (-1 for unsold).  Ties go to the
    smallest agent index.  A client whose resource has no holder pays
    ``empty_set_distance`` per unit of demand and is listed as uncovered
    when its demand is positive.
    """
    winners = outcome.winners if isinstance(outcome, AuctionOutcome) else np.asarray(outcome)
    n, k = inst.n, inst.k
    y = np.zeros((n, k), dtype=np.int64)
    sold = winners >= 0
    y[np.flatnonzero(sold), winners[sold]] = 1
    connection = np.full((n, k), -1, dtype=np.int64)
    cost = float((inst.f * y).sum())
    uncovered = []
    for l in range(k):
        holders = np.flatnonzero(winners == l)
        if holders.size == 0:
            cost += float(inst.w[:, l].sum() * inst.c_empty)
            uncovered += [(j, l) for j in np.flatnonzero(inst.w[:, l] > 0)]
            continue
        near = holders[np.argmin(inst.c[holders], axis=0)]  # argmin keeps the first
        connection[:, l] = near
        cost += float((inst.w[:, l] * inst.c[near, np.arange(n)]).sum())
    return PrimalSolution(y, connection, cost, uncovered)


@dataclass
class BoundCertificate:
    cost: float
    social_welfare: float
    revenue: float
    gamma: float
    factor: float | None
    bound: float  # welfare + revenue
    holds: bool
    within_hypothesis: bool  # all placement fees zero
    phi_star: float | None
    ratio: float | None
    ratio_holds: bool | None
    identity_error: float | None
    solver_gap: float | None
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def certify_bound(inst: Instance, outcome: AuctionOutcome, primal: PrimalSolution,
                  phi_star: float | None = None, dual: DualSolution | None = None,
                  tol: float = 1e-9, ratio_tol: float = 1e-6) -> BoundCertificate:
    """Check ``cost <= SW + Rev`` and ``cost / Phi* <= 1 / (1 - gamma)``."""
    notes = []
    within = bool(np.all(inst.f == 0))
    if not within:
        notes.append("outside theorem hypothesis: placement fees are not all zero")
    sw, rev = outcome.social_welfare, outcome.revenue
    bound = sw + rev
    factor = outcome.factor
    identity = None
    if factor is None:
        notes.append(f"factor undefined: social welfare {sw:.6g} <= 0")
    else:
        identity = abs(factor - (1.0 + rev / sw))
    ratio = ratio_holds = None
    if phi_star is not None and phi_star > 0:
        ratio = primal.cost / phi_star
        if factor is not None:
            ratio_holds = ratio <= factor + ratio_tol
    solver_gap = None
    if dual is not None and not math.isnan(dual.certified_gap):
        solver_gap = float(dual.certified_gap)
        if not dual.converged:
            notes.append("dual solver tolerance not met")
    return BoundCertificate(primal.cost, sw, rev, outcome.gamma, factor, bound,
                            primal.cost <= bound + tol, within, phi_star, ratio,
                            ratio_holds, identity, solver_gap, notes)


@dataclass
class AuditFinding:
    case: int
    ok: bool
    detail: str


@dataclass
class AuditReport:
    findings: list[AuditFinding]
    gap: float
    cost: float
    dual_objective: float
    identity_error: float
    others_hold: bool  # cases 1-3 all satisfied
    identity_holds: bool | None  # only judged when others_hold

    def as_dict(self) -> dict:
        return {
            "findings": [f.__dict__ for f in self.findings],
            "gap": self.gap,
            "cost": self.cost,
            "dual_objective": self.dual_objective,
            "identity_error": self.identity_error,
            "others_hold": self.others_hold,
            "identity_holds": self.identity_holds,
        }


def cs_audit(inst: Instance, primal: PrimalSolution, dual: DualSolution,
             tol: float = 1e-9) -> AuditReport:
    """Complementary slackness audit of a primal placement against a dual point.

    Case 1: every sold item pays exactly its winner's raw bid.
    Case 2: every item is sold and every client with demand is connected.
    Case 3: a connected client is charged at least its connection cost.
    The gap ``sum u[i,j,l] (y[i,l] - x[i,j,l])`` equals ``cost - objective``
    whenever the three cases hold.
    """
    beta, alpha = dual.beta, dual.alpha
    y = primal.y
    x = primal.x()
    bids = raw_bids(inst, beta)
    findings = []

    items, res = np.nonzero(y)
    for i, l in zip(items, res):
        err = abs(alpha[i] - bids[i, l])
        if err > tol:
            findings.append(AuditFinding(
                1, False, f"item {i + 1}: alpha {alpha[i]:.6g} != bid {bids[i, l]:.6g}"))
    unsold_paid = [i for i in np.flatnonzero(y.sum(axis=1) == 0) if alpha[i] > tol]
    for i in unsold_paid:
        findings.append(AuditFinding(1, False, f"unsold item {i + 1} has alpha {alpha[i]:.6g}"))

    for i in np.flatnonzero(y.sum(axis=1) == 0):
        findings.append(AuditFinding(2, False, f"item {i + 1} unsold"))
    for j, l in primal.uncovered:
        findings.append(AuditFinding(
            2, False, f"client {j + 1} resource {l + 1} has no holder"))

    for j, l in zip(*np.nonzero(primal.connection >= 0)):
        if inst.w[j, l] <= 0:
            continue
        i = primal.connection[j, l]
        if beta[j, l] < inst.c[i, j] - tol:
            findings.append(AuditFinding(
                3, False, f"client {j + 1} resource {l + 1}: beta {beta[j, l]:.6g} "
                          f"< cost {inst.c[i, j]:.6g} to agent {i + 1}"))

    for case in (1, 2, 3):
        if not any(f.case == case for f in findings):
            findings.append(AuditFinding(case, True, "satisfied"))
    findings.sort(key=lambda f: f.case)

    u = dual.u_vars(inst)
    gap = float((u * (y[:, None, :] - x)).sum())
    objective = float((inst.w * beta).sum() - alpha.sum())
    err = abs(primal.cost - (objective + gap))
    others = all(f.ok for f in findings)
    return AuditReport(findings, gap, primal.cost, objective, err, others,
                       (err <= tol * max(1.0, abs(primal.cost))) if others else None)
