import math

import numpy as np
import pytest

from dataplace import exact as E
from dataplace.instance import embed_uflp, gen_random, reduce_to_unit_cache
from dataplace.objective import player_cost, potential

from conftest import make_unit


def test_state_space_round_trip():
    sp = E.StateSpace(4, 3)
    for code in range(sp.size):
        assert sp.encode(sp.decode(code)) == code
    np.testing.assert_array_equal(sp.decode(1), [0, 0, 0, 1])


def test_state_space_cap():
    with pytest.raises(E.StateSpaceTooLarge):
        E.StateSpace(30, 3)


def test_all_potentials_match_pointwise():
    inst = gen_random(2, 4, 3)
    phi = E.all_potentials(inst)
    sp = E.StateSpace.of(inst)
    for code in range(0, sp.size, 7):
        assert phi[code] == pytest.approx(potential(inst, sp.decode(code)), abs=1e-12)


def test_hand_optimum(hand):
    bf = E.brute_force_optimum(hand)
    assert bf.value == 2
    assert sorted(map(tuple, bf.optima)) == [(0, 1), (1, 0)]
    np.testing.assert_array_equal(bf.allocation, [0, 1])


def test_zero_data_optimum():
    inst = make_unit([[0, 1, 2], [1, 0, 1], [2, 1, 0]], np.zeros((3, 2)), np.zeros((3, 2)))
    assert E.brute_force_optimum(inst).value == 0


def test_uflp_optimum():
    assert E.brute_force_optimum(embed_uflp([0, 100], [[0, 1], [1, 0]])).value == pytest.approx(1)


def test_optimum_is_lower_bound():
    inst = gen_random(3, 5, 2)
    bf = E.brute_force_optimum(inst)
    assert np.all(bf.potentials >= bf.value)


def test_capacitated_optimum_matches_reduction():
    inst = gen_random(1, 3, 3, cache_range=(1, 2))
    direct, contents = E.capacitated_optimum(inst)
    assert direct == pytest.approx(E.brute_force_optimum(reduce_to_unit_cache(inst)).value)
    assert [len(s) for s in contents] == inst.cache_sizes.tolist()


def test_transition_uniform_at_zero_beta():
    inst = gen_random(4, 3, 2)
    P = E.transition_matrix(inst, 0.0).toarray()
    n, k = 3, 2
    np.testing.assert_allclose(np.diag(P), 1 / k)
    off = P[~np.eye(len(P), dtype=bool)]
    np.testing.assert_allclose(np.sort(off[off > 0]), 1 / (n * k))
    assert np.count_nonzero(off) == len(P) * n * (k - 1)


def test_single_player_rows_are_softmax():
    inst = make_unit([[0]], [[1.0, 0.5, 0.2]], [[0.3, 0.0, 1.0]], check=False)
    beta = 0.7
    P = E.transition_matrix(inst, beta).toarray()
    costs = np.array([player_cost(inst, [l], 0) for l in range(3)])
    p = np.exp(-beta * costs)
    p /= p.sum()
    for row in P:
        np.testing.assert_allclose(row, p, atol=1e-15)


def test_row_sums():
    inst = gen_random(6, 5, 3)
    P = E.transition_matrix(inst, 1.3)
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1, atol=1e-12)


def test_gibbs_uniform_at_zero_beta():
    inst = gen_random(2, 3, 3)
    np.testing.assert_allclose(E.gibbs_distribution(inst, 0).probs, 3.0 ** -3)


def test_gibbs_ratio_hand(hand):
    pi = E.gibbs_distribution(hand, 1.0).probs
    sp = E.StateSpace.of(hand)
    ratio = pi[sp.encode([0, 1])] / pi[sp.encode([0, 0])]
    assert ratio == pytest.approx(math.exp(-(2 - 2 * 3.0)))


def test_gibbs_concentrates_on_integer_gap_instance():
    rng = np.random.default_rng(0)
    c = np.triu(rng.integers(1, 5, (4, 4)), 1).astype(float)
    inst = make_unit(c + c.T, rng.integers(0, 3, (4, 2)), rng.integers(0, 3, (4, 2)))
    bf = E.brute_force_optimum(inst)
    codes = [E.StateSpace.of(inst).encode(o) for o in bf.optima]
    assert E.gibbs_distribution(inst, 1e3).mass(codes) >= 1 - 1e-6


def test_detailed_balance_cases(hand):
    assert E.check_detailed_balance(gen_random(1, 3, 2), 0.0) <= 1e-15
    assert E.check_detailed_balance(gen_random(5, 4, 2), 0.3) <= 1e-12
    assert E.check_detailed_balance(hand, 1.0) <= 1e-12


def test_stationarity():
    inst = gen_random(9, 4, 3)
    P = E.transition_matrix(inst, 0.5)
    assert E.stationarity_residual(P, E.gibbs_distribution(inst, 0.5).probs) <= 1e-10


def test_tv_curve_start_and_monotone():
    inst = gen_random(3, 4, 2)
    beta = 0.4
    d = E.exact_tv_curve(inst, beta, 60)
    pi = E.gibbs_distribution(inst, beta).probs
    assert d[0] == pytest.approx(1 - pi.min())
    assert np.all(np.diff(d) <= 1e-15)


def test_tv_curve_dense_and_sparse_agree():
    inst = gen_random(4, 11, 2)  # 2048 states uses the sparse path
    P = E.transition_matrix(inst, 0.1)
    d = E.exact_tv_curve(inst, 0.1, 3, P=P)
    # one dense step computed independently
    Pd = P.toarray()
    pi = E.gibbs_distribution(inst, 0.1).probs
    assert d[1] == pytest.approx(0.5 * np.abs(Pd - pi).sum(axis=1).max(), abs=1e-12)


def test_mixing_bound_on_small_instance():
    inst = gen_random(12, 3, 2)
    beta = E.theorem_beta(inst)
    d = E.exact_tv_curve(inst, beta, 200 * 3)
    assert np.all(d <= E.mixing_bound(3, np.arange(601)))


def test_cost_bound_hand(hand):
    b = E.cost_bound_u(hand, exact=True)
    assert b.u_bar == 12
    # best single-player cost: an agent alone on a resource saves the other C_empty - 1 + C_empty
    assert b.u_exact == pytest.approx(max(player_cost(hand, x, i)
                                          for x in ([0, 0], [0, 1], [1, 0], [1, 1])
                                          for i in range(2)))


def test_cost_bound_zero_demand():
    inst = gen_random(1, 3, 2, demand_range=(0, 0))
    assert E.cost_bound_u(inst).u_bar == inst.f.max()


def test_cost_bound_dominates_exact():
    for s in range(50):
        inst = gen_random(s, 4, 2)
        b = E.cost_bound_u(inst, exact=True)
        assert b.u_exact <= b.u_bar + 1e-12


def test_theorem_beta_hand(hand):
    assert E.theorem_beta(hand) == pytest.approx(2 / (6 * 2 * 12))


def test_potential_gap():
    assert E.potential_gap(make_unit([[0]], [[1.0]], [[0.0]])) == math.inf
