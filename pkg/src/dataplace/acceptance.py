"""Acceptance suite: eleven oracle-based checks at fixed tolerances.

Every check draws its instances from ``numpy.random.default_rng([seed, number])``
so a given suite seed always reproduces the same numbers.  Each check
returns a :class:`CriterionResult` whose ``passed`` flag covers both the
numeric tolerance and the wall-clock budget.
"""

from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from . import auction as A
from . import duality as D
from . import exact as E
from . import glauber as G
from .instance import gen_random, reduce_to_unit_cache, expand_allocation
from .objective import (capacitated_potential, check_exact_potential, move_delta,
                        potential)

__all__ = ["CriterionResult", "CRITERIA", "run_criterion", "run_suite", "format_table"]


@dataclass
class CriterionResult:
    number: int
    title: str
    ok: bool  # tolerance checks only
    seconds: float
    limit: float | None
    details: dict = field(default_factory=dict)

    @property
    def within_time(self) -> bool:
        return self.limit is None or self.seconds < self.limit

    @property
    def passed(self) -> bool:
        return self.ok and self.within_time

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        budget = f"{self.seconds:.1f}s" + (f" / {self.limit:.0f}s" if self.limit else "")
        summary = "; ".join(f"{k}={_fmt(v)}" for k, v in self.details.items()
                            if not isinstance(v, (list, dict)))
        return f"criterion {self.number:2d} {status}  {self.title} ({budget}) {summary}"

    def as_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": self.passed,
                "ok": self.ok, "seconds": self.seconds, "limit": self.limit,
                "details": _jsonable(self.details)}


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _rng(seed: int, number: int) -> np.random.Generator:
    return np.random.default_rng([seed, number])


def _seed(rng) -> int:
    return int(rng.integers(2**32))


def _sizes(max_states: int, n_min: int = 2, k_min: int = 2, k_max: int = 4):
    return [(n, k) for k in range(k_min, k_max + 1) for n in range(n_min, 13)
            if k <= n and k ** n <= max_states]


# 1 -------------------------------------------------------------------------

def c1_potential_identity(seed: int) -> dict:
    rng = _rng(seed, 1)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, min(4, n) + 1))
        inst = gen_random(_seed(rng), n, k)
        worst = max(worst, check_exact_potential(inst, trials=1000, seed=_seed(rng)))
    return {"ok": worst <= 1e-9, "instances": 200, "moves_each": 1000, "max_error": worst}


# 2 -------------------------------------------------------------------------

def c2_gibbs_stationarity(seed: int) -> dict:
    rng = _rng(seed, 2)
    sizes = _sizes(4096, n_min=1, k_min=1)
    worst_res = worst_db = 0.0
    for _ in range(20):
        n, k = sizes[int(rng.integers(len(sizes)))]
        inst = gen_random(_seed(rng), n, k)
        profiles = E.all_cost_profiles(inst)
        phi = E.all_potentials(inst)
        for beta in (0.0, 0.1, 1.0):
            P = E.transition_matrix(inst, beta, profiles=profiles)
            pi = E.gibbs_distribution(inst, beta, potentials=phi).probs
            worst_res = max(worst_res, E.stationarity_residual(P, pi))
            worst_db = max(worst_db, E.check_detailed_balance(inst, beta, P=P, pi=pi))
    return {"ok": worst_res <= 1e-10 and worst_db <= 1e-12, "instances": 20,
            "max_stationarity_residual": worst_res, "max_detailed_balance": worst_db}


# 3, 4 ----------------------------------------------------------------------

@functools.lru_cache(maxsize=4)
def _mixing_instances(seed: int):
    # dense P^t evolution keeps these at <= 256 states
    rng = _rng(seed, 3)
    sizes = _sizes(256)
    return [gen_random(_seed(rng), *sizes[int(rng.integers(len(sizes)))]) for _ in range(10)]


def c3_mixing_bound(seed: int, epsilon: float = 0.05) -> dict:
    rows = []
    ok = True
    for inst in _mixing_instances(seed):
        n = inst.n
        beta = E.theorem_beta(inst)
        t_eps = math.ceil(7 * n * math.log(n / epsilon))
        t_max = max(200 * n, t_eps)
        d = E.exact_tv_curve(inst, beta, t_max)
        t = np.arange(t_max + 1)
        slack = E.mixing_bound(n, t[: 200 * n + 1]) - d[: 200 * n + 1]
        bound_ok = bool(np.all(slack >= 0))
        eps_ok = bool(d[t_eps] < epsilon)
        ok &= bound_ok and eps_ok
        rows.append({"n": n, "k": inst.k, "beta": beta, "min_slack": float(slack.min()),
                     "t_eps": t_eps, "d_t_eps": float(d[t_eps])})
    return {"ok": ok, "instances": len(rows),
            "min_slack": min(r["min_slack"] for r in rows),
            "max_d_at_t_eps": max(r["d_t_eps"] for r in rows), "rows": rows}


def c4_coupling_contraction(seed: int, replicas: int = 100_000, pairs: int = 3) -> dict:
    rng = _rng(seed, 4)
    rows = []
    ok = True
    for inst in _mixing_instances(seed):
        n, k = inst.n, inst.k
        beta = E.theorem_beta(inst)
        target = 1.0 - 1.0 / (7 * n)
        for _ in range(pairs):
            x = rng.integers(0, k, size=n)
            y = x.copy()
            i = int(rng.integers(n))
            y[i] = (x[i] + 1 + int(rng.integers(k - 1))) % k
            _, rho = G.coupled_replicas(inst, x, y, beta, 1, replicas, rng,
                                        stop_at_coalescence=False)
            mean = float(rho.mean())
            sigma = float(rho.std(ddof=1) / math.sqrt(replicas))
            passed = mean <= target + 3 * sigma
            ok &= passed
            rows.append({"n": n, "mean_rho": mean, "target": target, "sigma": sigma})
    worst = max(rows, key=lambda r: r["mean_rho"] - r["target"])
    return {"ok": ok, "pairs": len(rows), "replicas": replicas,
            "worst_mean_rho": worst["mean_rho"], "worst_target": worst["target"],
            "rows": rows}


# 5 -------------------------------------------------------------------------

def c5_high_beta(seed: int, count: int = 5, steps: int = 1_000_000) -> dict:
    rng = _rng(seed, 5)
    sizes = _sizes(4096, n_min=3)
    rows = []
    attempts = 0
    while len(rows) < count:
        attempts += 1
        if attempts > 1000:
            break
        n, k = sizes[int(rng.integers(len(sizes)))]
        inst = gen_random(_seed(rng), n, k)
        gap = E.potential_gap(inst)
        if not gap >= 0.5 or math.isinf(gap):
            continue
        beta = 20.0 / gap
        bf = E.brute_force_optimum(inst)
        space = E.StateSpace.of(inst)
        codes = [space.encode(o) for o in bf.optima]
        mass = E.gibbs_distribution(inst, beta, potentials=bf.potentials).mass(codes)
        trace = G.run(inst, G.GlauberConfig(beta=beta, steps=steps, seed=_seed(rng),
                                            stride=steps, target=bf.value + 1e-9))
        rows.append({"n": n, "k": k, "gap": gap, "beta": beta, "optimum_mass": mass,
                     "hit_time": trace.hit_time,
                     "best_excess": trace.best_phi - bf.value})
    mass_ok = all(r["optimum_mass"] >= 0.99 for r in rows)
    hits = sum(r["hit_time"] is not None for r in rows)
    return {"ok": len(rows) == count and mass_ok and hits == len(rows),
            "instances": len(rows), "min_optimum_mass": min(r["optimum_mass"] for r in rows),
            "runs_hitting_optimum": hits, "rows": rows}


# 6, 7 ----------------------------------------------------------------------

@functools.lru_cache(maxsize=4)
def _nash_runs(seed: int):
    rng = _rng(seed, 6)
    out = []
    for _ in range(200):
        n = int(rng.integers(1, 8))
        k = int(rng.integers(1, min(4, n) + 1))
        inst = gen_random(_seed(rng), n, k)
        res = G.best_response_dynamics(inst, seed=_seed(rng))
        phi_star = E.brute_force_optimum(inst).value
        out.append((inst, res, phi_star))
    return out


def c6_best_response(seed: int) -> dict:
    runs = _nash_runs(seed)
    converged = nash = bound = 0
    worst_move = math.inf
    worst_bound = -math.inf
    for inst, res, phi_star in runs:
        converged += res.converged
        x = res.allocation
        # every unilateral move, evaluated through the incremental delta
        deltas = [move_delta(inst, x, i, l).delta_cost
                  for i in range(inst.n) for l in range(inst.k) if l != x[i]]
        low = min(deltas, default=0.0)
        worst_move = min(worst_move, low)
        nash += low >= -1e-9
        rep = D.ne_quality_bound(inst, x, phi_star=phi_star)
        worst_bound = max(worst_bound, rep.phi - rep.bound)
        bound += rep.phi <= rep.bound + 1e-9
    m = len(runs)
    return {"ok": converged == m and nash == m and bound == m, "instances": m,
            "converged": converged, "nash": nash, "bound_holds": bound,
            "most_negative_move_delta": worst_move, "max_phi_minus_bound": worst_bound}


def _tiny_dual_instances(seed: int):
    rng = _rng(seed, 7)
    shapes = [(2, 2), (3, 1)]
    return [gen_random(_seed(rng), *shapes[r % 2], cost_range=(0.5, 1.5),
                       fee_range=(0.0, 1.0)) for r in range(10)]


def c7_weak_duality(seed: int) -> dict:
    worst_res = 0.0
    worst_cert = -math.inf
    for inst, res, phi_star in _nash_runs(seed):
        cert = D.ne_dual_certificate(inst, res.allocation)
        r = cert.residuals(inst)
        worst_res = max(worst_res, r["constraint"], r["negativity"])
        worst_cert = max(worst_cert, cert.objective - phi_star)
    cert_ok = worst_res <= 1e-9 and worst_cert <= 1e-9
    rows = []
    for inst in _tiny_dual_instances(seed):
        phi_star = E.brute_force_optimum(inst).value
        grid, _ = D.grid_search_dual(inst, resolution=0.05)
        sol = D.solve_dual(inst)
        rows.append({"n": inst.n, "k": inst.k, "solver": sol.objective, "grid": grid,
                     "phi_star": phi_star, "converged": sol.converged})
    above = max(r["solver"] - r["phi_star"] for r in rows)
    below = max(r["grid"] - r["solver"] for r in rows)
    return {"ok": cert_ok and above <= 1e-9 and below <= 1e-3,
            "certificates": len(_nash_runs(seed)), "max_certificate_residual": worst_res,
            "max_certificate_minus_phi_star": worst_cert,
            "max_solver_minus_phi_star": above, "max_grid_minus_solver": below,
            "rows": rows}


# 8, 10 ---------------------------------------------------------------------

@functools.lru_cache(maxsize=4)
def _auction_runs(seed: int):
    rng = _rng(seed, 8)
    out = []
    for _ in range(100):
        n = int(rng.integers(2, 8))
        k = int(rng.integers(1, min(3, n) + 1))
        inst = gen_random(_seed(rng), n, k, fee_range=(0.0, 0.0))
        phi_star = E.brute_force_optimum(inst).value
        sol = D.solve_dual(inst)
        if not sol.converged:
            out.append((inst, sol, None, None, None))
            continue
        outcome = A.run_auction(inst, sol)
        primal = A.build_primal(inst, outcome)
        cert = A.certify_bound(inst, outcome, primal, phi_star=phi_star, dual=sol)
        audit = A.cs_audit(inst, primal, sol)
        out.append((inst, sol, outcome, cert, audit))
    return out


def c8_auction_bound(seed: int) -> dict:
    runs = _auction_runs(seed)
    done = [r for r in runs if r[3] is not None]
    certs = [r[3] for r in done]
    defined = [c for c in certs if c.factor is not None]
    bound_ok = all(c.holds for c in certs)
    ratio_ok = all(c.ratio_holds for c in defined if c.ratio is not None)
    ident_ok = all(c.identity_error <= 1e-9 for c in defined)
    return {"ok": bool(done) and bound_ok and ratio_ok and ident_ok,
            "instances": len(runs), "solver_converged": len(done),
            "factor_defined": len(defined),
            "max_cost_minus_bound": max(c.cost - c.bound for c in certs),
            "max_ratio_minus_factor": max((c.ratio - c.factor for c in defined
                                           if c.ratio is not None), default=-math.inf),
            "max_identity_error": max((c.identity_error for c in defined), default=0.0),
            "max_gamma": max((c.gamma for c in certs), default=0.0)}


def c10_gap_accounting(seed: int) -> dict:
    audits = [r[4] for r in _auction_runs(seed) if r[4] is not None]
    clean = [a for a in audits if a.others_hold]
    worst = max((a.identity_error for a in clean), default=0.0)
    return {"ok": bool(clean) and all(a.identity_holds for a in clean),
            "audited": len(audits), "all_other_conditions_hold": len(clean),
            "max_identity_error": worst}


# 9 -------------------------------------------------------------------------

def c9_unit_reduction(seed: int) -> dict:
    rng = _rng(seed, 9)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        k = int(rng.integers(1, 5))
        if 3 * n < k:
            k = 3 * n
        inst = gen_random(_seed(rng), n, k, cache_range=(1, 3))
        contents = [rng.integers(0, k, size=u).tolist() for u in inst.cache_sizes]
        unit = reduce_to_unit_cache(inst)
        a = capacitated_potential(inst, contents)
        b = potential(unit, expand_allocation(inst, contents))
        worst = max(worst, abs(a - b))
    worst_opt = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        if 2 * n < k:
            k = 2 * n
        inst = gen_random(_seed(rng), n, k, cache_range=(1, 2))
        direct, _ = E.capacitated_optimum(inst)
        reduced = E.brute_force_optimum(reduce_to_unit_cache(inst)).value
        worst_opt = max(worst_opt, abs(direct - reduced))
    return {"ok": worst <= 1e-9 and worst_opt <= 1e-9, "matched_allocations": 100,
            "max_objective_error": worst, "tiny_optima": 20, "max_optimum_error": worst_opt}


# 11 ------------------------------------------------------------------------

# two-sided tail mass beyond 3 standard deviations of a normal
THREE_SIGMA_P = 0.0027


def _chi2_ok(samples, p, draws):
    counts = np.bincount(samples, minlength=len(p))
    if np.any(counts[p <= 0]):
        return False, math.inf, 0
    mask = p > 0
    expected = draws * p[mask]
    stat = float(((counts[mask] - expected) ** 2 / expected).sum())
    df = int(mask.sum()) - 1
    if df == 0:
        return True, stat, df
    return chi2.sf(stat, df) >= THREE_SIGMA_P, stat, df


def c11_maximal_coupling(seed: int, pairs: int = 50, draws: int = 100_000) -> dict:
    rng = _rng(seed, 11)
    tv_fail = chi_fail = 0
    worst_z = 0.0
    for _ in range(pairs):
        k = int(rng.integers(2, 7))
        mu = rng.dirichlet(np.ones(k))
        nu = rng.dirichlet(np.ones(k))
        tv = E.tv_distance(mu, nu)
        a, b = G.maximal_coupling_batch(mu, nu, rng, draws)
        rate = float(np.mean(a != b))
        sigma = math.sqrt(tv * (1 - tv) / draws)
        z = abs(rate - tv) / sigma if sigma > 0 else (0.0 if rate == tv else math.inf)
        worst_z = max(worst_z, z)
        tv_fail += z > 3
        chi_fail += not _chi2_ok(a, mu, draws)[0]
        chi_fail += not _chi2_ok(b, nu, draws)[0]
    return {"ok": tv_fail == 0 and chi_fail == 0, "pairs": pairs, "draws": draws,
            "tv_failures": tv_fail, "chi2_failures": chi_fail, "max_tv_z": worst_z}


CRITERIA = {
    1: ("exact potential identity", c1_potential_identity, 30),
    2: ("Gibbs stationarity and detailed balance", c2_gibbs_stationarity, 60),
    3: ("exact mixing bound at the fast-mixing noise level", c3_mixing_bound, 300),
    4: ("one-step coupling contraction", c4_coupling_contraction, 120),
    5: ("high-beta concentration on the optimum", c5_high_beta, 180),
    6: ("best response reaches a Nash equilibrium", c6_best_response, 60),
    7: ("weak duality and equilibrium certificate", c7_weak_duality, 300),
    8: ("auction cost bound", c8_auction_bound, 300),
    9: ("unit-cache reduction", c9_unit_reduction, 60),
    10: ("complementary slackness gap accounting", c10_gap_accounting, None),
    11: ("maximal coupling correctness", c11_maximal_coupling, 60),
}


def run_criterion(number: int, seed: int = 0) -> CriterionResult:
    title, fn, limit = CRITERIA[number]
    start = time.perf_counter()
    details = fn(seed)
    seconds = time.perf_counter() - start
    ok = bool(details.pop("ok"))
    return CriterionResult(number, title, ok, seconds, limit, details)


def run_suite(seed: int = 0, only=None, progress=None) -> list[CriterionResult]:
    results = []
    for number in sorted(CRITERIA):
        if only and number not in only:
            continue
        res = run_criterion(number, seed)
        if progress:
            progress(res)
        results.append(res)
    return results


def format_table(results) -> str:
    lines = [r.line() for r in results]
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} criteria passed")
    return "\n".join(lines)
