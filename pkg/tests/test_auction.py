import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foamlab.auction import AuctionParams, VolumeTargets, assign, epsilon_schedule
from foamlab.errors import AuctionError, ParameterError
from oracles import brute_force_assignment, exact_assignment


def _score(scores, labels):
    return scores[np.arange(len(labels)), labels].sum()


def test_diagonal_dominance():
    res = assign(np.array([[1.0, 0.0], [0.0, 1.0]]), VolumeTargets((1, 1)))
    assert res.labels.tolist() == [0, 1]


def test_only_feasible_assignment_is_all_complement():
    rng = np.random.default_rng(1)
    scores = rng.random((10, 4))
    res = assign(scores, VolumeTargets((0, 0, 0, 10)))
    assert np.all(res.labels == 3)
    assert np.all(np.isinf(res.prices[:3]))


def test_oracle_dp_matches_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(20):
        scores = rng.random((6, 3))
        assert exact_assignment(scores, (2, 2, 2)) == pytest.approx(brute_force_assignment(scores, (2, 2, 2)), abs=1e-12)


def test_six_cells_three_phases_against_enumeration():
    eps_min = 1e-6
    params = AuctionParams(eps_min=eps_min)
    rng = np.random.default_rng(2024)
    for _ in range(50):
        scores = rng.random((6, 3))
        res = assign(scores, VolumeTargets((2, 2, 2)), params)
        best = brute_force_assignment(scores, (2, 2, 2))
        assert np.bincount(res.labels, minlength=3).tolist() == [2, 2, 2]
        assert _score(scores, res.labels) >= best - 6 * eps_min


@pytest.mark.parametrize("rule", ["post", "pre"])
def test_eps_complementary_slackness(rule):
    rng = np.random.default_rng(5)
    scores = rng.random((200, 5))
    targets = VolumeTargets((40, 30, 50, 20, 60))
    res = assign(scores, targets, AuctionParams(price_rule=rule))
    net = scores - res.prices
    own = net[np.arange(200), res.labels]
    assert np.all(own >= net.max(1) - res.eps_final - 1e-12)
    assert np.bincount(res.labels, minlength=5).tolist() == list(targets.counts)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(2, 40),
    p=st.integers(2, 6),
    rule=st.sampled_from(["post", "pre"]),
)
def test_capacities_met_exactly(seed, n, p, rule):
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.integers(0, n + 1, size=p - 1))
    counts = np.diff(np.concatenate([[0], cuts, [n]]))
    scores = rng.random((n, p))
    res = assign(scores, VolumeTargets(tuple(counts)), AuctionParams(price_rule=rule))
    assert np.bincount(res.labels, minlength=p).tolist() == counts.tolist()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 12), p=st.integers(2, 4))
def test_near_optimal_against_exact(seed, n, p):
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, np.ones(p) / p)
    scores = rng.random((n, p))
    params = AuctionParams(eps_min=1e-7)
    res = assign(scores, VolumeTargets(tuple(counts)), params)
    assert _score(scores, res.labels) >= exact_assignment(scores, counts) - n * params.eps_min


def test_deterministic():
    rng = np.random.default_rng(9)
    scores = rng.random((500, 4))
    targets = VolumeTargets((100, 150, 50, 200))
    a = assign(scores, targets)
    b = assign(scores, targets)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.prices, b.prices)


def test_ties_break_toward_lower_phase():
    scores = np.full((4, 2), 0.5)
    res = assign(scores, VolumeTargets((2, 2)))
    assert sorted(res.labels.tolist()) == [0, 0, 1, 1]
    again = assign(scores, VolumeTargets((2, 2)))
    assert np.array_equal(res.labels, again.labels)


def test_monotone_prices_flag_runs():
    rng = np.random.default_rng(3)
    res = assign(rng.random((60, 3)), VolumeTargets((20, 20, 20)), check_monotone=True)
    assert res.levels >= 1


def test_bid_cap_raises_with_state():
    rng = np.random.default_rng(4)
    scores = rng.random((300, 4))
    with pytest.raises(AuctionError) as info:
        assign(scores, VolumeTargets((75, 75, 75, 75)), AuctionParams(eps0=1e-6, eps_min=1e-6, max_bids_per_cell=1))
    assert info.value.state is not None


@pytest.mark.parametrize(
    "kw",
    [dict(eps0=1e-8, eps_min=1e-7), dict(eps_min=0.0), dict(alpha=1.0), dict(price_rule="mid"), dict(max_bids_per_cell=0)],
)
def test_params_validation(kw):
    with pytest.raises(ParameterError):
        AuctionParams(**kw)


def test_targets_validation():
    with pytest.raises(ParameterError):
        VolumeTargets((3, -1))
    with pytest.raises(ParameterError):
        VolumeTargets.from_bubbles([5, 6], 10)
    t = VolumeTargets.from_bubbles([2, 3], 10)
    assert t.counts == (2, 3, 5)
    with pytest.raises(ParameterError):
        t.check(11)
    with pytest.raises(ParameterError):
        assign(np.zeros((9, 3)), t)


def test_schedule_examples():
    p = AuctionParams(eps0=1.0, alpha=4.0, eps_min=1e-9)
    assert epsilon_schedule(p, eps_bar=0.01) == pytest.approx((1, 0.25, 0.0625, 0.015625, 0.00390625))
    p = AuctionParams(eps0=0.005, alpha=4.0, eps_min=1e-9)
    assert epsilon_schedule(p, eps_bar=0.01) == (0.005,)
    p = AuctionParams(eps0=1.0, alpha=2.0, eps_min=1e-9)
    assert epsilon_schedule(p, eps_bar=0.3) == pytest.approx((1, 0.5, 0.25))


def test_schedule_uses_eps_min_over_cells():
    p = AuctionParams(eps0=1.0, alpha=10.0, eps_min=1e-3)
    sched = epsilon_schedule(p, n_cells=10)
    assert sched[-1] < 1e-4 <= sched[-2]
