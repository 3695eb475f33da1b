import math

import numpy as np
import pytest
from scipy.stats import chi2

from dataplace import _kernels as K
from dataplace import exact as E
from dataplace import glauber as G
from dataplace.instance import gen_random
from dataplace.objective import cost_profile, move_delta, potential

from conftest import make_unit

P3 = 0.0027  # two-sided 3-sigma tail


def _chi2_p(samples, p):
    counts = np.bincount(samples, minlength=len(p))
    mask = p > 0
    assert not np.any(counts[~mask])
    e = len(samples) * p[mask]
    return chi2.sf(((counts[mask] - e) ** 2 / e).sum(), mask.sum() - 1)


def test_update_distribution_uniform_at_zero_beta():
    inst = gen_random(1, 4, 3)
    np.testing.assert_allclose(G.update_distribution(inst, [0, 1, 2, 0], 2, 0.0), 1 / 3)


def test_update_distribution_two_to_one():
    inst = gen_random(3, 3, 2)
    x = [0, 1, 0]
    costs = cost_profile(inst, x, 1)
    beta = math.log(2) / abs(costs[1] - costs[0])
    p = G.update_distribution(inst, x, 1, beta)
    cheap = int(np.argmin(costs))
    assert p[cheap] == pytest.approx(2 / 3, abs=1e-12)
    assert p.sum() == pytest.approx(1, abs=1e-12)


def test_update_distribution_matches_transition_matrix():
    inst = gen_random(5, 3, 3)
    beta = 0.8
    P = E.transition_matrix(inst, beta).toarray()
    sp = E.StateSpace.of(inst)
    x = np.array([2, 0, 1])
    for i in range(3):
        p = G.update_distribution(inst, x, i, beta)
        for l in range(3):
            if l == x[i]:
                continue
            y = x.copy()
            y[i] = l
            assert P[sp.encode(x), sp.encode(y)] * 3 == pytest.approx(p[l], abs=1e-14)


def test_step_single_resource_never_moves():
    inst = gen_random(0, 3, 1)
    rng = G.make_rng(0)
    x = np.zeros(3, dtype=np.int64)
    for _ in range(50):
        x, rec = G.step(inst, x, 1.0, rng)
        assert np.all(x == 0) and rec.new == 0


def test_step_uniform_cells_at_zero_beta():
    inst = gen_random(2, 2, 2)
    rng = G.make_rng(11)
    x = np.zeros(2, dtype=np.int64)
    cells = np.zeros(4, dtype=int)
    T = 100_000
    for _ in range(T):
        x, rec = G.step(inst, x, 0.0, rng)
        cells[2 * rec.player + rec.new] += 1
    sigma = math.sqrt(T * 0.25 * 0.75)
    assert np.all(np.abs(cells - T / 4) <= 3 * sigma)


def test_step_deterministic():
    inst = gen_random(4, 4, 3)
    runs = []
    for _ in range(2):
        rng = G.make_rng(7)
        x = np.zeros(4, dtype=np.int64)
        for _ in range(200):
            x, _ = G.step(inst, x, 0.5, rng)
        runs.append(x.copy())
    np.testing.assert_array_equal(*runs)


def test_run_zero_steps():
    inst = gen_random(4, 3, 2)
    tr = G.run(inst, G.GlauberConfig(beta=1.0, steps=0, seed=3))
    assert len(tr.t) == 1 and tr.t[0] == 0
    np.testing.assert_array_equal(tr.initial_state, tr.final_state)


def test_run_equals_repeated_steps():
    inst = gen_random(6, 5, 3)
    cfg = G.GlauberConfig(beta=0.7, steps=3000, seed=42)
    tr = G.run(inst, cfg)
    rng = G.make_rng(42)
    x = rng.integers(0, inst.k, size=inst.n)
    np.testing.assert_array_equal(x, tr.initial_state)
    for t in range(1, 3001):
        x, rec = G.step(inst, x, 0.7, rng)
        assert (rec.player, rec.old, rec.new) == (tr.player[t], tr.old[t], tr.new[t])
    np.testing.assert_array_equal(x, tr.final_state)


def test_trace_potential_and_deltas():
    inst = gen_random(8, 5, 3)
    tr = G.run(inst, G.GlauberConfig(beta=0.3, steps=5000, seed=1))
    x = tr.initial_state.copy()
    assert tr.phi[0] == pytest.approx(potential(inst, x), abs=1e-9)
    for t in range(1, len(tr.t)):
        md = move_delta(inst, x, tr.player[t], tr.new[t])
        x[tr.player[t]] = tr.new[t]
        assert tr.phi[t] - tr.phi[t - 1] == pytest.approx(md.delta_cost, abs=1e-9)
        if t % 250 == 0:
            assert tr.phi[t] == pytest.approx(potential(inst, x), abs=1e-9)


def test_run_stride_and_chunked_uniforms():
    inst = gen_random(2, 3, 2)
    full = G.run(inst, G.GlauberConfig(beta=1.0, steps=2000, seed=5))
    strided = G.run(inst, G.GlauberConfig(beta=1.0, steps=2000, seed=5, stride=100))
    np.testing.assert_array_equal(strided.t, np.arange(0, 2001, 100))
    np.testing.assert_allclose(strided.phi, full.phi[::100], atol=1e-9)


def test_hand_high_beta_reaches_optimum(hand):
    tr = G.run(hand, G.GlauberConfig(beta=5.0, steps=10_000, seed=0))
    assert tr.best_phi == pytest.approx(2)


def test_long_run_frequencies_match_gibbs():
    inst = gen_random(3, 3, 2, cost_range=(0.2, 1.0), demand_range=(0, 0.5), fee_range=(0, 1))
    beta = 0.2
    tr = G.run(inst, G.GlauberConfig(beta=beta, steps=1_000_000, seed=9, stride=1_000_000),
               count_states=True)
    freq = tr.state_counts / tr.state_counts.sum()
    assert E.tv_distance(freq, E.gibbs_distribution(inst, beta).probs) <= 0.02


def test_config_validation():
    with pytest.raises(ValueError):
        G.GlauberConfig(beta=-1, steps=1).validate()
    with pytest.raises(ValueError):
        G.GlauberConfig(beta=1, steps=-1).validate()


def test_best_response_from_optimum_makes_no_moves():
    inst = gen_random(4, 5, 2)
    bf = E.brute_force_optimum(inst)
    res = G.best_response_dynamics(inst, bf.allocation)
    assert res.converged and res.moves == 0


def test_best_response_hand(hand):
    res = G.best_response_dynamics(hand, [0, 0])
    assert res.converged and res.moves <= 2
    assert potential(hand, res.allocation) == pytest.approx(2)


def test_best_response_returns_nash():
    for s in range(30):
        inst = gen_random(s, 5, 3)
        res = G.best_response_dynamics(inst, seed=s)
        x = res.allocation
        assert G.is_nash(inst, x)[0]
        for i in range(5):
            for l in range(3):
                assert move_delta(inst, x, i, l).delta_cost >= -1e-9


def test_best_response_sweep_guard(hand):
    res = G.best_response_dynamics(hand, [0, 0], max_sweeps=1)
    assert not res.converged and "sweeps" in res.message


def test_best_response_random_ties_deterministic():
    inst = gen_random(3, 6, 3, fee_range=(0, 0))
    a = G.best_response_dynamics(inst, tie_rule="random", seed=4)
    b = G.best_response_dynamics(inst, tie_rule="random", seed=4)
    np.testing.assert_array_equal(a.allocation, b.allocation)


def test_is_nash_names_move(hand):
    ok, move = G.is_nash(hand, [0, 0])
    assert not ok and move is not None


def test_coupling_identical_laws():
    rng = G.make_rng(0)
    a, b = G.maximal_coupling_batch([0.2, 0.5, 0.3], [0.2, 0.5, 0.3], rng, 10_000)
    assert np.all(a == b)


def test_coupling_disjoint_laws():
    rng = G.make_rng(0)
    a, b = G.maximal_coupling_batch([1.0, 0.0], [0.0, 1.0], rng, 1000)
    assert np.all(a == 0) and np.all(b == 1)
    assert G.maximal_coupling_sample([1.0, 0.0], [0.0, 1.0], rng) == (0, 1)


def test_coupling_disagreement_and_marginals():
    mu, nu = np.array([0.7, 0.3]), np.array([0.3, 0.7])
    R = 100_000
    a, b = G.maximal_coupling_batch(mu, nu, G.make_rng(1), R)
    sigma = math.sqrt(0.4 * 0.6 / R)
    assert abs(np.mean(a != b) - 0.4) <= 3 * sigma
    assert _chi2_p(a, mu) >= P3 and _chi2_p(b, nu) >= P3


def test_coupling_rejects_unnormalized():
    with pytest.raises(ValueError):
        G.maximal_coupling_batch([0.5, 0.6], [0.5, 0.5], G.make_rng(0), 1)
    with pytest.raises(ValueError):
        G.maximal_coupling_batch([1.0], [0.5, 0.5], G.make_rng(0), 1)


def test_coupling_kernel_matches_numpy():
    rng = np.random.default_rng(2)
    work = np.empty(6)
    for _ in range(200):
        k = int(rng.integers(1, 7))
        mu = rng.dirichlet(np.ones(k))
        nu = mu if rng.random() < 0.2 else rng.dirichlet(np.ones(k))
        U = rng.random((50, 3))
        a, b = G._coupling_from_uniforms(mu, nu, U)
        for r in range(50):
            ka, kb = K.coupling_nb(mu, nu, U[r, 0], U[r, 1], U[r, 2], work[:k])
            assert (ka, kb) == (a[r], b[r])


def test_coupled_run_same_start():
    inst = gen_random(1, 4, 2)
    run = G.coupled_run(inst, [0, 1, 0, 1], [0, 1, 0, 1], 1.0, 10, G.make_rng(0))
    assert run.coalescence_time == 0
    assert np.all(run.rho == 0)


def test_coupled_run_zero_beta_coalesces_at_cover_time():
    inst = gen_random(2, 5, 3)
    rng = G.make_rng(3)
    x, y = np.zeros(5, dtype=int), np.ones(5, dtype=int)
    state = rng.bit_generator.state
    run = G.coupled_run(inst, x, y, 0.0, 500, rng)
    assert np.all(np.diff(run.rho) <= 0)
    tau = run.coalescence_time
    assert tau is not None and np.all(run.rho[tau:] == 0)
    # replay the player draws: coalescence happens once every player was picked
    rng.bit_generator.state = state
    players = np.minimum((rng.random((500, 4))[:, 0] * 5).astype(int), 4)
    seen = np.zeros(5, dtype=bool)
    for t, i in enumerate(players, start=1):
        seen[i] = True
        if seen.all():
            assert tau == t
            break


def test_coupled_chains_stay_together():
    inst = gen_random(5, 4, 3)
    run = G.coupled_run(inst, [0, 0, 0, 0], [2, 2, 2, 2], 0.5, 3000, G.make_rng(8))
    tau = run.coalescence_time
    assert tau is not None
    assert np.all(run.rho[tau:] == 0)
    np.testing.assert_array_equal(run.final.x, run.final.y)


def test_coupled_marginals_match_transition_rows():
    inst = gen_random(6, 3, 2)
    beta = 0.9
    P = E.transition_matrix(inst, beta).toarray()
    sp = E.StateSpace.of(inst)
    x, y = np.array([0, 1, 0]), np.array([1, 1, 0])
    rng = G.make_rng(21)
    nx, ny = [], []
    for _ in range(20_000):
        run = G.coupled_run(inst, x, y, beta, 1, rng)
        nx.append(sp.encode(run.final.x))
        ny.append(sp.encode(run.final.y))
    assert _chi2_p(np.array(nx), P[sp.encode(x)]) >= P3
    assert _chi2_p(np.array(ny), P[sp.encode(y)]) >= P3


def test_replicas_match_single_runs():
    inst = gen_random(7, 4, 2)
    x, y = [0, 0, 1, 1], [1, 0, 1, 1]
    taus, final = G.coupled_replicas(inst, x, y, 0.3, 40, 5, G.make_rng(2),
                                     stop_at_coalescence=False)
    rng = G.make_rng(2)
    for r in range(5):
        run = G.coupled_run(inst, x, y, 0.3, 40, rng)
        assert taus[r] == (-1 if run.coalescence_time is None else run.coalescence_time)
        assert final[r] == run.rho[-1]


def test_replicas_independent_of_worker_count():
    inst = gen_random(3, 4, 3)
    args = (inst, [0, 0, 0, 0], [1, 1, 1, 1], 0.5, 100, 3000)
    a = G.coupled_replicas(*args, G.make_rng(1), batch=500, workers=1)
    b = G.coupled_replicas(*args, G.make_rng(1), batch=500, workers=3)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_one_step_contraction_at_theorem_beta():
    inst = gen_random(10, 4, 2)
    beta = E.theorem_beta(inst)
    R = 20_000
    _, rho = G.coupled_replicas(inst, [0, 1, 0, 1], [1, 1, 0, 1], beta, 1, R, G.make_rng(4),
                                stop_at_coalescence=False)
    assert rho.mean() <= 1 - 1 / 28 + 3 * rho.std(ddof=1) / math.sqrt(R)


def test_estimate_mixing_trivial_threshold():
    inst = gen_random(1, 3, 2)
    assert G.estimate_mixing(inst, 0.1, 1.0, 10, G.make_rng(0)).t_mix == 0


def test_estimate_mixing_within_theorem_bound_and_exact_curve():
    inst = gen_random(4, 4, 2)
    beta = E.theorem_beta(inst)
    eps = 0.1
    est = G.estimate_mixing(inst, beta, eps, 5000, G.make_rng(5))
    assert est.t_mix <= 1.5 * 7 * 4 * math.log(4 / eps)
    d = E.exact_tv_curve(inst, beta, 400)
    t_exact = int(np.flatnonzero(d < eps)[0])
    assert t_exact / 2 <= est.t_mix <= 2 * t_exact


def test_estimate_mixing_rejects_bad_arguments():
    inst = gen_random(1, 3, 2)
    with pytest.raises(ValueError):
        G.estimate_mixing(inst, 0.1, 0.1, 0, G.make_rng(0))


def test_spawned_streams_reproducible():
    a = [r.random() for r in G.spawn_rngs(5, 3)]
    b = [r.random() for r in G.spawn_rngs(5, 3)]
    assert a == b and len(set(a)) == 3


def test_threads_env(monkeypatch):
    monkeypatch.setenv("DATAPLACE_THREADS", "3")
    assert G.default_workers() == 3
    monkeypatch.setenv("DATAPLACE_THREADS", "many")
    with pytest.raises(ValueError):
        G.default_workers()
