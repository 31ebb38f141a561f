import numpy as np
import pytest

from aoisched.core import TerminalSpec, run_slots, symmetric_specs
from aoisched.indices import index_bernoulli, solve_decoupled
from aoisched.mdp import indifference_charge, rvi_decoupled, rvi_full
from aoisched.policies import OptimalPolicy

CASES = [(0.2, 20.0), (0.5, 5.0), (0.5, 20.0), (0.8, 50.0), (1.0, 20.0)]


def test_full_rate_unit_charge():
    res = rvi_decoupled(1.0, 1.0)
    assert res.J == pytest.approx(2.0, abs=1e-6)
    assert res.f[0, 0] == 0.0


def test_free_service_schedules_every_nonzero_d():
    res = rvi_decoupled(0.5, 0.0, D_max=10)
    # Always serving leaves h = a, and a is geometric with mean 1 / lam.
    assert res.J == pytest.approx(2.0, abs=1e-6)
    assert np.all(res.schedule[:, 1:])


@pytest.mark.parametrize("lam,m", CASES)
def test_threshold_structure_and_closed_form(lam, m):
    res = rvi_decoupled(lam, m, A_max=80)
    sol = solve_decoupled(lam, m)
    assert res.is_threshold()
    np.testing.assert_array_equal(res.thresholds()[:30], sol.thresholds(30))
    assert res.J == pytest.approx(sol.J_star, abs=1e-6)
    assert res.residual < 1e-8


@pytest.mark.parametrize("lam,m", CASES)
def test_differential_cost_identities(lam, m):
    # Far from the a-truncation so the cap does not bias f.
    res = rvi_decoupled(lam, m, A_max=200)
    sol = solve_decoupled(lam, m)
    f = res.f
    D = sol.thresholds(25)
    for a in range(1, 16):
        Da = int(D[a - 1])
        assert f[a - 1, 0] == pytest.approx(sol.f_zero(a), abs=1e-5)
        for d in range(Da, Da + 3):
            assert f[a - 1, d] - f[a - 1, 0] == pytest.approx(m, abs=1e-5)
        for d in range(Da):
            # Below threshold f depends on a + d only.
            assert f[a - 1, d] == pytest.approx(f[a + d - 1, 0], abs=1e-5)
            assert f[a - 1, d] == pytest.approx(sol.differential_cost(a, d), abs=1e-5)


@pytest.mark.parametrize("lam,m", [(0.2, 50.0), (0.8, 20.0)])
def test_truncation_doubling_is_stable(lam, m):
    r1 = rvi_decoupled(lam, m)
    r2 = rvi_decoupled(lam, m, A_max=2 * r1.f.shape[0], D_max=2 * (r1.f.shape[1] - 1))
    assert abs(r1.J - r2.J) < 1e-7


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        rvi_decoupled(0.0, 1.0)
    with pytest.raises(ValueError):
        rvi_decoupled(0.5, -1.0)


# -- indifference charge ------------------------------------------------------

def test_indifference_full_rate():
    flip = indifference_charge(1.0, 1, 3)
    assert index_bernoulli(1, 2, 1.0) <= flip <= index_bernoulli(1, 4, 1.0)


def test_indifference_zero_gap():
    assert indifference_charge(0.4, 3, 0) == 0.0


def test_indifference_within_slack():
    flip = indifference_charge(0.5, 2, 5)
    assert index_bernoulli(2, 4, 0.5) <= flip <= index_bernoulli(2, 6, 0.5)


# -- full network ---------------------------------------------------------------

def test_full_rate_pair_alternates():
    res = rvi_full(symmetric_specs(2, 1.0), D_max=10)
    assert res.J == pytest.approx(1.5, abs=1e-6)


def test_single_terminal_full_mdp_is_always_schedule():
    res = rvi_full([TerminalSpec(lam=0.5)], D_max=20)
    assert res.J == pytest.approx(2.0, abs=1e-6)


def test_unreliable_channel_raises_optimum():
    good = rvi_full(symmetric_specs(2, 0.8), A_max=20, D_max=20)
    bad = rvi_full([TerminalSpec(id=0, lam=0.8), TerminalSpec(id=1, lam=0.8, p_e=0.9)],
                   A_max=20, D_max=20)
    assert bad.J > good.J


def test_optimal_policy_replay_matches_gain():
    specs = symmetric_specs(2, 0.5)
    res = rvi_full(specs, A_max=25, D_max=25)
    m = run_slots(specs, OptimalPolicy(res), 300_000, seed=1)
    assert m.mean_aoi == pytest.approx(res.J, rel=0.01)


def test_state_budget_enforced():
    with pytest.raises(MemoryError):
        rvi_full(symmetric_specs(2, 0.5), A_max=100, D_max=100, max_states=1000)
