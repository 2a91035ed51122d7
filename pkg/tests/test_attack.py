"""Stealthy injection synthesis and the residue detector it evades."""
import numpy as np
import pytest

from resobs.attack import (
    AttackPlan,
    bdd_residue_test,
    bind_attack,
    generate_fdia,
    make_detector,
    residue_value,
    select_support,
    stealth_direction,
)
from resobs.errors import ConfigurationError, InvalidModelError
from resobs.linsys import discretize
from resobs.powergrid import build_reduced_model, load_default_case, steady_state


def grid_setup(dt=0.02):
    case = load_default_case()
    sys_d = discretize(build_reduced_model(case), dt)
    x0, _ = steady_state(case)
    u0 = np.concatenate([case.gen_power, case.demand_injection])
    y0 = sys_d.C @ x0 + sys_d.D @ u0
    return case, sys_d, x0, u0, y0


GEN_POWER_CHANNELS = (5, 6, 7, 10, 12)  # bus-power rows with a machine attached


def test_residue_vanishes_on_range_consistent_measurements():
    case, sys_d, x0, u0, y0 = grid_setup()
    assert residue_value(y0, u0, sys_d) < 1e-10
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = x0 + rng.normal(size=x0.size) * 0.1
        y = sys_d.C @ x + sys_d.D @ u0
        assert residue_value(y, u0, sys_d) < 1e-10


def test_residue_matches_direct_projector():
    # same quantity through the pseudoinverse projector instead of an
    # orthonormal basis
    case, sys_d, x0, u0, y0 = grid_setup()
    rng = np.random.default_rng(1)
    y = y0 + rng.normal(size=y0.size) * 0.05
    P = sys_d.C @ np.linalg.pinv(sys_d.C)
    r = y - sys_d.D @ u0
    want = float(np.linalg.norm(r - P @ r) / np.linalg.norm(y))
    assert abs(residue_value(y, u0, sys_d) - want) < 1e-12


def test_bdd_alarm_thresholding():
    case, sys_d, x0, u0, y0 = grid_setup()
    rng = np.random.default_rng(2)
    y = y0 + rng.normal(size=y0.size) * 0.05
    rv = residue_value(y, u0, sys_d)
    assert rv > 0.0
    low = bdd_residue_test(y, u0, sys_d, threshold=rv / 2.0)
    high = bdd_residue_test(y, u0, sys_d, threshold=rv * 2.0)
    assert low.alarm and not high.alarm
    assert low.residue == high.residue == rv
    with pytest.raises(ConfigurationError):
        bdd_residue_test(y, u0, sys_d, threshold=0.0)
    detector = make_detector(sys_d, threshold=rv * 2.0)
    residue, alarm = detector(y, u0)
    assert residue == rv and not alarm
    with pytest.raises(ConfigurationError):
        make_detector(sys_d, threshold=-1.0)


def test_residue_floor_guards_zero_measurements():
    case, sys_d, x0, u0, y0 = grid_setup()
    # zero measurement with a nonzero feedthrough: the floor keeps the
    # relative residue finite instead of dividing by zero
    rv = residue_value(np.zeros(y0.size), u0, sys_d)
    assert np.isfinite(rv)
    assert rv > 1.0


def test_select_support_draws_power_channels():
    case, sys_d, x0, u0, y0 = grid_setup()
    rng = np.random.default_rng(3)
    support = select_support(sys_d, case.n_b, None, rng)
    assert len(support) == 6  # 30 percent of 19 channels, rounded up
    assert all(case.n_g <= c < sys_d.n_outputs for c in support)
    assert support == tuple(sorted(set(support)))
    small = select_support(sys_d, case.n_b, 2, rng)
    assert len(small) == 2
    with pytest.raises(ConfigurationError):
        select_support(sys_d, case.n_b, 0, rng)
    with pytest.raises(ConfigurationError):
        select_support(sys_d, case.n_b, case.n_b + 1, rng)


def test_stealth_direction_exact_on_machine_channels():
    # the output range of this grid is a coordinate subspace: frequencies
    # and machine bus powers are free, pure load buses are pinned at zero.
    # Any injection confined to machine channels is therefore exactly
    # range-consistent, full support or not.
    case, sys_d, x0, u0, y0 = grid_setup()
    for support in ((5, 6), GEN_POWER_CHANNELS):
        desired = 0.2 * np.abs(y0[list(support)])
        e = stealth_direction(sys_d, support, desired)
        off = np.setdiff1d(np.arange(y0.size), support)
        assert np.array_equal(e[off], np.zeros(off.size))
        assert np.max(np.abs(e[list(support)] - desired)) < 1e-10
        assert residue_value(y0 + e, u0, sys_d) < 1e-10


def test_stealth_direction_zeroes_dead_channels():
    # a load-bus channel has no state sensitivity, so the fit leaves it
    # untouched rather than leaking out of range
    case, sys_d, x0, u0, y0 = grid_setup()
    support = (5, 6, 7, 8, 10, 12)  # channel 8 is the bus-4 power row
    desired = 0.2 * np.maximum(np.abs(y0[list(support)]), 0.01)
    e = stealth_direction(sys_d, support, desired)
    assert abs(e[8]) < 1e-12
    assert residue_value(y0 + e, u0, sys_d) < 1e-10
    with pytest.raises(InvalidModelError):
        stealth_direction(sys_d, support, np.ones(3))


def test_stealth_direction_leaks_on_generic_outputs():
    # no coordinate-subspace degeneracy on a random output map: restricting
    # the fitted vector to the support leaves an out-of-range part
    from conftest import random_observable_system

    rng = np.random.default_rng(12)
    sys_r = random_observable_system(rng, 2, 3)
    desired = np.array([1.0, -0.5])
    e = stealth_direction(sys_r, (0, 1), desired)
    y = sys_r.C @ rng.normal(size=2)
    assert residue_value(y + e, np.zeros(0), sys_r) > 1e-3


def test_bound_attack_is_silent_before_onset():
    case, sys_d, x0, u0, y0 = grid_setup()
    plan = AttackPlan(support=GEN_POWER_CHANNELS, onset=5, law="constant")
    bound = bind_attack(plan, sys_d, y0, case.n_b, np.random.default_rng(4))
    for k in range(5):
        assert np.array_equal(bound(k, y0), np.zeros(y0.size))
    e = bound(5, y0)
    assert np.count_nonzero(e) == len(GEN_POWER_CHANNELS)
    assert bound.scale_log == [(5, 1.0)]  # exactly stealthy: never rescaled
    assert residue_value(y0 + e, u0, sys_d) < plan.stealth_margin * plan.stealth_threshold


def test_law_factor_hand_values():
    case, sys_d, x0, u0, y0 = grid_setup()
    ramp = bind_attack(
        AttackPlan(support=GEN_POWER_CHANNELS, onset=200, law="ramp", ramp_samples=10),
        sys_d, y0, case.n_b, np.random.default_rng(5),
    )
    assert ramp.law_factor(200) == pytest.approx(0.1)
    assert ramp.law_factor(204) == pytest.approx(0.5)
    assert ramp.law_factor(209) == 1.0
    assert ramp.law_factor(500) == 1.0
    const = bind_attack(
        AttackPlan(support=GEN_POWER_CHANNELS, onset=200, law="constant"),
        sys_d, y0, case.n_b, np.random.default_rng(5),
    )
    assert const.law_factor(200) == 1.0
    assert const.law_factor(999) == 1.0


def test_attack_laws_shape_the_magnitudes():
    case, sys_d, x0, u0, y0 = grid_setup()
    support = (5, 6, 7)
    base = AttackPlan(support=support, onset=0, law="constant", stealth=False)
    bound = bind_attack(base, sys_d, y0, case.n_b, np.random.default_rng(6))
    e0, e1 = bound(0, y0), bound(1, y0)
    assert np.array_equal(e0, e1)
    assert np.count_nonzero(e0) == 3

    ramped = bind_attack(
        AttackPlan(support=support, onset=0, law="ramp", ramp_samples=4, stealth=False),
        sys_d, y0, case.n_b, np.random.default_rng(6),
    )
    assert np.allclose(ramped(0, y0), 0.25 * e0, atol=1e-15)
    assert np.allclose(ramped(3, y0), e0, atol=1e-15)

    jplan = AttackPlan(support=support, onset=0, law="random", stealth=False, random_bounds=(0.5, 1.5))
    ja = bind_attack(jplan, sys_d, y0, case.n_b, np.random.default_rng(7))
    jb = bind_attack(jplan, sys_d, y0, case.n_b, np.random.default_rng(7))
    ea, eb = ja(0, y0), jb(0, y0)
    assert np.array_equal(ea, eb)  # same seed, same jitter
    ratio = ea[list(support)] / e0[list(support)]
    assert np.all((ratio >= 0.5) & (ratio <= 1.5))
    assert not np.array_equal(ja(1, y0), ea)  # jitter refreshes per sample


def test_stealth_rescale_shrinks_leaky_attacks():
    from conftest import random_observable_system

    rng = np.random.default_rng(8)
    sys_r = random_observable_system(rng, 2, 3)
    y0 = sys_r.C @ np.array([2.0, -1.0])
    plan = AttackPlan(support=(0, 1), onset=0, law="constant", stealth=True, stealth_threshold=1e-6)
    bound = bind_attack(plan, sys_r, y0, 3, np.random.default_rng(8))
    e = bound(0, y0)
    k, scale = bound.scale_log[0]
    assert k == 0
    assert 0.0 < scale < 1.0
    assert residue_value(y0 + e, np.zeros(0), sys_r) <= plan.stealth_margin * plan.stealth_threshold


def test_generate_fdia_matches_bound_attack():
    case, sys_d, x0, u0, y0 = grid_setup()
    plan = AttackPlan(support=GEN_POWER_CHANNELS, onset=2, law="ramp", ramp_samples=5)
    one_shot = generate_fdia(plan, sys_d, y0, 4, np.random.default_rng(9), n_power_channels=case.n_b)
    bound = bind_attack(plan, sys_d, y0, case.n_b, np.random.default_rng(9))
    assert np.array_equal(one_shot, bound(4, y0))
    with pytest.raises(ConfigurationError):
        generate_fdia(plan, sys_d, y0, -1, np.random.default_rng(9))


def test_plan_validation():
    with pytest.raises(ConfigurationError):
        AttackPlan(onset=-1)
    with pytest.raises(ConfigurationError):
        AttackPlan(law="step")
    with pytest.raises(ConfigurationError):
        AttackPlan(magnitude=-0.1)
    with pytest.raises(ConfigurationError):
        AttackPlan(ramp_samples=0)
    with pytest.raises(ConfigurationError):
        AttackPlan(stealth_margin=0.0)
    with pytest.raises(ConfigurationError):
        AttackPlan(stealth_threshold=0.0)
    with pytest.raises(ConfigurationError):
        AttackPlan(random_bounds=(1.5, 0.5))
    with pytest.raises(ConfigurationError):
        AttackPlan(support=(3, 3))
    assert AttackPlan(support=(7, 5)).support == (5, 7)


def test_bind_attack_guards():
    case, sys_d, x0, u0, y0 = grid_setup()
    plan = AttackPlan(support=(5, 99))
    with pytest.raises(ConfigurationError):
        bind_attack(plan, sys_d, y0, case.n_b, np.random.default_rng(10))
    with pytest.raises(InvalidModelError):
        bind_attack(AttackPlan(support=(5,)), sys_d, np.ones(3), case.n_b, np.random.default_rng(10))
