import itertools

import numpy as np
import pytest

from dataplace import auction as A
from dataplace import duality as D
from dataplace.exact import brute_force_optimum
from dataplace.instance import gen_random
from dataplace.objective import potential

from conftest import make_unit


def _zero_fee(seed, n, k):
    return gen_random(seed, n, k, fee_range=(0, 0))


def test_bids_clamped_and_shaped(hand):
    np.testing.assert_allclose(A.compute_bids(hand, np.ones((2, 2))), 1)
    np.testing.assert_allclose(A.compute_bids(hand, np.zeros((2, 2))), 0)
    with pytest.raises(ValueError):
        A.compute_bids(hand, np.ones((3, 2)))


def test_bids_subtract_fee():
    inst = make_unit([[0, 2], [2, 0]], [[1, 1], [1, 1]], [[0.5, 5], [0, 0]], empty=3)
    bids = A.compute_bids(inst, np.full((2, 2), 3.0))
    # agent 1, resource 1: 1*(3-0) + 1*(3-2) - 0.5
    assert bids[0, 0] == pytest.approx(3.5)
    assert bids[0, 1] == 0  # 4 - 5 clamps at zero


def test_zero_beta_sells_nothing(hand):
    dual = D.DualSolution(np.zeros((2, 2)), np.zeros(2), 0.0)
    out = A.run_auction(hand, dual)
    assert np.all(out.winners == -1) and out.revenue == 0 and out.factor is None
    primal = A.build_primal(hand, out)
    assert primal.cost == pytest.approx(hand.w.sum() * hand.c_empty)
    assert len(primal.uncovered) == 4


def test_infeasible_dual_rejected(hand):
    dual = D.DualSolution(np.ones((2, 2)), np.zeros(2), 4.0)
    with pytest.raises(A.InfeasibleDualError):
        A.run_auction(hand, dual)


def test_winners_match_dual_assignment_and_accounts_balance():
    for s in range(30):
        inst = _zero_fee(s, 5, 3)
        dual = D.solve_dual(inst)
        out = A.run_auction(inst, dual)
        np.testing.assert_array_equal(out.winners, D.eval_dual(inst, dual.beta).assignment)
        # winners pay their own bid, never more than the best bid
        sold = out.winners >= 0
        np.testing.assert_allclose(out.payments[sold], out.bids[sold].max(axis=1))
        assert out.revenue == pytest.approx(sum(out.payments))
        total = float((inst.w * dual.beta).sum())
        assert out.social_welfare + out.revenue == pytest.approx(total)
        assert out.utilities.sum() == pytest.approx(out.social_welfare)
        if out.factor is not None:
            assert out.factor == pytest.approx(1 + out.revenue / out.social_welfare)


def test_unsold_below_threshold():
    inst = make_unit([[0]], [[1.0]], [[0.0]], empty=3)
    dual = D.DualSolution(np.array([[D.SELL_TOL / 2]]), np.zeros(1), D.SELL_TOL / 2)
    assert A.run_auction(inst, dual).winners[0] == -1


def test_primal_of_allocation_equals_potential():
    for s in range(20):
        inst = gen_random(s, 4, 2)
        for x in itertools.product(range(2), repeat=4):
            assert A.build_primal(inst, np.array(x)).cost == pytest.approx(potential(inst, x))


def test_primal_connects_to_nearest_holder():
    inst = gen_random(5, 5, 2)
    winners = np.array([0, 1, 0, -1, 1])
    p = A.build_primal(inst, winners)
    for l in range(2):
        holders = np.flatnonzero(winners == l)
        for j in range(5):
            i = p.connection[j, l]
            assert i in holders and inst.c[i, j] == inst.c[holders, j].min()
    x = p.x()
    assert np.all(x.sum(axis=0) == 1)
    assert np.all(x <= p.y[:, None, :])


def test_primal_at_optimum_matches_brute_force():
    inst = gen_random(8, 4, 3)
    opt = brute_force_optimum(inst)
    assert A.build_primal(inst, np.asarray(opt.allocation)).cost == pytest.approx(opt.value)


def test_certify_constructed_outcome():
    inst = _zero_fee(1, 3, 2)
    n, k = 3, 2
    winners = np.array([0, 1, 0])
    primal = A.build_primal(inst, winners)
    out = A.AuctionOutcome(np.zeros((n, k)), np.zeros((n, k)), winners, np.zeros(n),
                           [np.flatnonzero(winners == l) for l in range(k)], np.zeros(k),
                           primal.cost, 0.0, 0.0, 1.0)
    cert = A.certify_bound(inst, out, primal, phi_star=primal.cost)
    assert cert.holds and cert.ratio == pytest.approx(1) and cert.ratio_holds
    assert cert.within_hypothesis and cert.identity_error == 0


def test_certify_notes_fees():
    inst = gen_random(1, 3, 2, fee_range=(1, 2))
    dual = D.solve_dual(inst)
    out = A.run_auction(inst, dual)
    cert = A.certify_bound(inst, out, A.build_primal(inst, out))
    assert not cert.within_hypothesis
    assert any("fees" in n for n in cert.notes)


def test_hand_symmetric_tie_leaves_resource_uncovered(hand):
    # every optimal dual here is symmetric, so both items bid equally for
    # both resources and the smallest-index rule sends both to resource 1
    dual = D.solve_dual(hand)
    out = A.run_auction(hand, dual)
    np.testing.assert_array_equal(out.winners, [0, 0])
    primal = A.build_primal(hand, out)
    cert = A.certify_bound(hand, out, primal, phi_star=2.0)
    report = A.cs_audit(hand, primal, dual)
    assert cert.cost == pytest.approx(6.0)
    assert cert.holds == (cert.cost <= cert.bound + 1e-9)
    assert not report.others_hold
    assert [f.case for f in report.findings if not f.ok] == [2, 2]


def test_audit_identity_when_cases_hold():
    checked = 0
    for s in range(60):
        rng = np.random.default_rng(s)
        n = int(rng.integers(2, 6))
        inst = _zero_fee(s, n, int(rng.integers(1, min(3, n) + 1)))
        dual = D.solve_dual(inst)
        primal = A.build_primal(inst, A.run_auction(inst, dual))
        rep = A.cs_audit(inst, primal, dual)
        # the accounting identity cost = objective + gap + slack terms
        assert rep.gap >= -1e-9
        if rep.others_hold:
            checked += 1
            assert rep.identity_holds
            assert rep.cost == pytest.approx(rep.dual_objective + rep.gap, abs=1e-8)
    assert checked > 0


def test_audit_gap_bounded_by_revenue_without_fees():
    for s in range(30):
        inst = _zero_fee(s, 4, 2)
        dual = D.solve_dual(inst)
        out = A.run_auction(inst, dual)
        rep = A.cs_audit(inst, A.build_primal(inst, out), dual)
        assert rep.gap <= out.revenue + 1e-9


def test_audit_zero_beta_blames_coverage(hand):
    dual = D.DualSolution(np.zeros((2, 2)), np.zeros(2), 0.0)
    rep = A.cs_audit(hand, A.build_primal(hand, np.array([-1, -1])), dual)
    failed = {f.case for f in rep.findings if not f.ok}
    assert failed == {2}
    assert rep.gap == 0 and rep.identity_holds is None
