import numpy as np
import pytest
from builders import device, line, make_case, one_market_case, ramp_feasible_start

from adamuc import generate_synthetic_case, init_state
from adamuc.checker import check_feasibility, score_solution
from adamuc.projections import (ProjectionConfig, assign_freeze_groups, build_ac_jacobians,
                                device_problem, economic_dispatch, linearized_power_flow,
                                network_withdrawals, project_device, ramp_constrained_pf_all,
                                reserve_cleanup, reserve_cleanup_all)
from adamuc.solvers import enumerate_device
from adamuc.state import state_from_solution, state_to_solution
from adamuc.surplus import HARD, bus_mismatch, eval_market_surplus


def ramp_violations(case, st):
    return [v for v in check_feasibility(case, state_to_solution(st))
            if v["constraint"] in ("ramp_up", "ramp_down")]


# -- economic dispatch ---------------------------------------------------------------

def test_one_block_market_dispatch():
    ed = economic_dispatch(one_market_case())
    assert ed.z_ed == pytest.approx(90.0)
    assert ed.P[0].tolist() == pytest.approx([1.0, 1.0])


def test_zero_demand_market_is_empty():
    ed = economic_dispatch(one_market_case(demand=0.0))
    assert ed.z_ed == pytest.approx(0.0, abs=1e-9)
    assert np.allclose(ed.P, 0.0)


def test_dispatch_bounds_feasible_witnesses():
    for seed in range(50):
        case = generate_synthetic_case(3 + seed % 6, 1 + seed % 3, seed)
        z_ed = economic_dispatch(case).z_ed
        rep = score_solution(case, case.witness, z_ed)
        assert rep.feasible
        assert rep.z_ms <= z_ed * (1 + 1e-6) + 1e-9


def test_split_by_time_dispatch_is_still_an_upper_bound():
    case = generate_synthetic_case(6, 3, 1)
    joint = economic_dispatch(case)
    split = economic_dispatch(case, split_by_time=True)
    assert split.heuristic
    assert split.z_ed >= joint.z_ed - 1e-6


# -- Jacobians -------------------------------------------------------------------------

def dc_case():
    return make_case(n_bus=3, devices=[device("g")], branches=[
        line("a", "b0", "b1", b_sr=-5.0), line("b", "b1", "b2", b_sr=-4.0),
        line("c", "b0", "b2", b_sr=-2.0)])


def test_flat_start_angle_jacobian_is_susceptance_matrix():
    case = dc_case()
    st = init_state(case)
    _, J_pth, *_ = build_ac_jacobians(st, 0)
    B = np.array([[7.0, -5.0, -2.0], [-5.0, 9.0, -4.0], [-2.0, -4.0, 6.0]])
    assert np.allclose(J_pth.toarray(), B)


def test_jacobian_columns_match_finite_differences():
    case = generate_synthetic_case(6, 1, 3)
    st = state_from_solution(case, case.witness)
    a = case.arrays
    v, th = st["v"][0].copy(), st["theta"][0].copy()
    phi, tau, ush = st["phi"][0], st["tau"][0], st["u_sh"][0]
    J = [M.toarray() for M in build_ac_jacobians(st, 0)]
    h = 1e-6
    for i in range(a.nb):
        for which, (Jp, Jq, Js) in (("v", (J[0], J[2], J[4])), ("theta", (J[1], J[3], J[5]))):
            e = np.zeros(a.nb)
            e[i] = h
            args_p = (v + e, th) if which == "v" else (v, th + e)
            args_m = (v - e, th) if which == "v" else (v, th - e)
            wp1, wq1, s1 = network_withdrawals(*args_p, phi, tau, ush, a)
            wp0, wq0, s0 = network_withdrawals(*args_m, phi, tau, ush, a)
            assert np.allclose((wp1 - wp0) / (2 * h), Jp[:, i], atol=1e-6)
            assert np.allclose((wq1 - wq0) / (2 * h), Jq[:, i], atol=1e-6)
            assert np.allclose((s1 - s0) / (2 * h), Js[:, i], atol=1e-6)


def test_apparent_power_jacobian_is_finite_at_zero_flow():
    st = init_state(dc_case())
    J = build_ac_jacobians(st, 0)
    assert all(np.all(np.isfinite(M.toarray())) for M in J)


# -- linearized power flow ---------------------------------------------------------------

def two_bus_case(cost=10.0, value=100.0):
    return make_case(devices=[
        device("g", "producer", "b0", p_min=0.0, p_max=2.0, blocks=((2.0, cost),)),
        device("c", "consumer", "b1", p_min=0.0, p_max=1.0, blocks=((1.0, value),)),
    ], branches=[line("l", "b0", "b1", b_sr=-10.0, s_max=5.0, s_max_ctg=5.0)])


def test_balanced_state_is_a_fixed_point():
    case = two_bus_case(cost=0.0, value=0.0)
    st = init_state(case)
    st["u_on"][:] = 1.0
    st["p_on"][:] = 0.0
    st["q"][:] = 0.0
    before = st.x.copy()
    linearized_power_flow(st, 0, ProjectionConfig(gamma=(1.0, 1.0, 1e2, 1e2, 0.0, 0.0)))
    assert np.abs(st.x - before).max() < 1e-8


def test_mismatch_is_reduced_and_limits_hold():
    case = two_bus_case()
    st = init_state(case)
    st["u_on"][:] = 1.0
    st["p_on"][0] = [0.6, 0.5]  # 0.1 surplus with flat voltages
    st["q"][:] = 0.0
    pm0, qm0 = bus_mismatch(st, 0)
    linearized_power_flow(st, 0)
    pm1, qm1 = bus_mismatch(st, 0)
    assert np.linalg.norm(np.r_[pm1, qm1]) < np.linalg.norm(np.r_[pm0, qm0])
    assert np.abs(np.r_[pm1, qm1]).max() < 1e-3
    assert not check_feasibility(case, state_to_solution(st))


# -- reserve cleanup -------------------------------------------------------------------

def zone_case(requirement, penalty=1000.0, cost=1.0):
    zone = {"id": "z", "kind": "p", "devices": ["g"], "requirements": {"rgu": [requirement]},
            "penalties": {"rgu": penalty}}
    g = device("g", p_min=0.0, p_max=2.0, reserve_max={"rgu": 2.0}, reserve_cost={"rgu": cost})
    return make_case(devices=[g], zones=[zone])


def test_no_requirement_means_no_reserves():
    st = init_state(zone_case(0.0))
    st["rgu"][:] = 0.7
    reserve_cleanup(st, 0)
    assert st["rgu"][0, 0] == 0.0


def test_cheap_supply_beats_shortfall():
    st = init_state(zone_case(1.0))
    st["u_on"][:] = 1.0
    st["p_on"][:] = 0.5
    reserve_cleanup(st, 0)
    assert st["rgu"][0, 0] == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(10))
def test_cleanup_never_raises_reserve_cost(seed):
    case = generate_synthetic_case(6, 2, seed)
    rng = np.random.default_rng(seed)
    st = state_from_solution(case, case.witness)
    for p in ("rgu", "rgd", "scr", "nsc", "rru_on", "rru_off", "rrd_on", "rrd_off", "qru", "qrd"):
        st[p][:] *= rng.uniform(0.0, 1.0, st[p].shape)
    before = eval_market_surplus(st, HARD)
    reserve_cleanup_all(st)
    after = eval_market_surplus(st, HARD)
    assert after.z_reserve <= before.z_reserve + 1e-7 * max(1.0, before.z_reserve)
    assert not check_feasibility(case, state_to_solution(st))


# -- device projection -------------------------------------------------------------------

def test_feasible_integral_trajectory_is_unchanged():
    case = generate_synthetic_case(5, 3, 2)
    st = state_from_solution(case, case.witness)
    before = st.x.copy()
    for j in range(case.arrays.nd):
        sol = project_device(st, j)
        assert sol.objective == pytest.approx(0.0, abs=1e-9)
    assert np.abs(st.x - before).max() < 1e-9


def test_half_commitment_stays_at_initial_status():
    for u0 in (0, 1):
        case = make_case(devices=[device("g", u0=u0, p0=0.0, p_min=0.0, p_max=1.0)])
        st = init_state(case)
        st["u_on"][:] = 0.5
        st["p_on"][:] = 0.0
        sol = project_device(st, 0)
        assert sol.u.tolist() == [float(u0)]


def test_projection_matches_enumeration_on_six_periods():
    case = generate_synthetic_case(5, 6, 4)
    st = state_from_solution(case, case.witness)
    rng = np.random.default_rng(0)
    st["u_on"][:] = rng.uniform(0, 1, st["u_on"].shape)
    for j in range(case.arrays.nd):
        prob = device_problem(st, j)
        ref = enumerate_device(prob)
        sol = project_device(st.copy(), j)
        assert sol.objective == pytest.approx(ref.objective, abs=1e-9)


# -- freeze groups and ramp-safe power flow ----------------------------------------------

def test_two_devices_split_one_per_group():
    g = assign_freeze_groups(one_market_case(), seed=0)
    assert len(g.group_a) == 1 and len(g.group_b) == 1


def test_freeze_groups_are_balanced_and_seeded():
    case = generate_synthetic_case(14, 4, 0)
    a, b = assign_freeze_groups(case, 5), assign_freeze_groups(case, 5)
    assert a.group_a.tolist() == b.group_a.tolist()
    assert abs(len(a.group_a) - len(a.group_b)) <= 1
    assert sorted(a.group_a.tolist() + a.group_b.tolist()) == list(range(case.arrays.nd))


def test_freeze_pattern_alternates():
    case = generate_synthetic_case(14, 4, 0)
    g = assign_freeze_groups(case, 1)
    in_a = np.zeros(case.arrays.nd, dtype=bool)
    in_a[g.group_a] = True
    # 1-based periods 2 and 4 freeze group a; 1 and 3 freeze group b
    for t in range(4):
        assert g.frozen_at(t).tolist() == (in_a if t % 2 == 1 else ~in_a).tolist()


def test_zero_mismatch_keeps_injections():
    case = two_bus_case(cost=0.0, value=0.0)
    st = init_state(case)
    st["u_on"][:] = 1.0
    st["p_on"][:] = 0.0
    st["q"][:] = 0.0
    before = st.x.copy()
    cfg = ProjectionConfig(gamma=(1.0, 1.0, 1e2, 1e2, 0.0, 0.0))
    ramp_constrained_pf_all(st, assign_freeze_groups(case, 0), cfg)
    assert np.abs(st.x - before).max() < 1e-8


def test_two_device_ramps_hold_after_projection():
    case = make_case(T=2, devices=[
        device("g", "producer", "b0", T=2, p_min=0.0, p_max=2.0, ramp=0.2, u0=1, p0=0.5),
        device("c", "consumer", "b1", T=2, p_min=0.0, p_max=2.0, ramp=0.2, u0=1, p0=0.5,
               blocks=((2.0, 50.0),)),
    ])
    st = init_state(case)
    st["u_on"][:] = 1.0
    st["p_on"][:] = [[0.6, 0.4], [0.7, 0.3]]
    assert not ramp_violations(case, st)
    ramp_constrained_pf_all(st, assign_freeze_groups(case, 0))
    P = np.vstack([[0.5, 0.5], st["p_on"]])
    assert np.all(np.abs(np.diff(P, axis=0)) <= 0.2 + 1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_concurrent_ramp_projection_keeps_ramps(seed):
    case = generate_synthetic_case(14, 6, seed)
    st = ramp_feasible_start(case, np.random.default_rng(seed))
    assert not ramp_violations(case, st)
    ramp_constrained_pf_all(st, assign_freeze_groups(case, seed))
    assert not ramp_violations(case, st)
