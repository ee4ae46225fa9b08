import numpy as np
import pytest
from builders import device, make_case
from fdcheck import adaptive_loss_derivative, near_witness_state, relative_error

from adamuc import generate_synthetic_case, init_state
from adamuc.state import state_from_solution
from adamuc.surplus import (HARD, PenaltyShape, SurplusModel, backprop_market_surplus,
                            branch_flow_partials, branch_flows, energy_cost,
                            eval_market_surplus, line_overload_penalty, penalized_linear,
                            power_balance_penalty, reserve_terms, soft_abs, soft_relu,
                            startup_shutdown)


def central(f, x, h=1e-4):
    """Fourth-order central difference."""
    return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h)


def random_state(case, seed):
    st = init_state(case)
    rng = np.random.default_rng(seed)
    st.x[:] = st.lo + (st.hi - st.lo) * rng.random(st.x.size)
    return st


# -- elementary pieces ---------------------------------------------------------

def test_zero_angle_branch_carries_nothing():
    pf, qf, pt, qt = branch_flows(1.0, 1.0, 0.0, 1.0, 0.0, -10.0, 0.0)
    assert pf == 0.0 and pt == 0.0
    assert qf == pytest.approx(0.0, abs=1e-15)


def test_lossless_line_flow_is_b_sin_delta():
    pf, _, pt, _ = branch_flows(1.0, 1.0, 0.1, 1.0, 0.0, -10.0, 0.0)
    assert pf == pytest.approx(10 * np.sin(0.1), rel=1e-12)
    assert pf == pytest.approx(0.99833, abs=1e-5)
    assert pt == pytest.approx(-pf, rel=1e-12)


@pytest.mark.parametrize("arg", range(4))
def test_branch_partials_match_finite_differences(arg):
    x0 = np.array([1.03, 0.97, 0.12, 1.02])
    params = (0.8, -7.5, 0.2)
    parts = branch_flow_partials(*x0, *params)
    for out in range(4):
        def f(h):
            x = x0.copy()
            x[arg] += h
            return branch_flows(*x, *params)[out]
        assert parts[out][arg] == pytest.approx(central(f, 0.0), abs=1e-10)


def test_overload_penalty_hard_values():
    z, _ = line_overload_penalty(3.0, 4.0, 0.0, 0.0, 5.0, 1.0, 1.0)
    assert z == 0.0
    z, _ = line_overload_penalty(3.0, 4.0, 0.0, 0.0, 4.0, 1.0, 1.0)
    assert z == pytest.approx(1.0)


def test_overload_penalty_soft_gradient():
    shape = PenaltyShape(1e-3, 0.7, 1.0)
    args = np.array([3.0, 4.0, -2.9, -3.8])
    _, grads = line_overload_penalty(*args, 4.0, 0.5, 2.0, shape)
    for k in range(4):
        def f(h):
            a = args.copy()
            a[k] += h
            return line_overload_penalty(*a, 4.0, 0.5, 2.0, shape)[0]
        assert grads[k] == pytest.approx(central(f, 0.0), abs=1e-8)


def test_startup_shutdown_indicators():
    su, sd, _, _ = startup_shutdown([1, 1, 0, 1], 0)
    assert su.tolist() == [1, 0, 0, 1]
    assert sd.tolist() == [0, 0, 1, 0]
    su, sd, z, _ = startup_shutdown([1, 1, 1], 1, 5.0, 7.0)
    assert su.tolist() == [0, 0, 0] and sd.tolist() == [0, 0, 0] and z == 0.0
    su, _, _, _ = startup_shutdown([0.3, 0.8], 0)
    assert su == pytest.approx([0.3, 0.5])


def test_startup_cost_gradient():
    u = np.array([0.2, 0.7, 0.4, 0.9])
    _, _, _, g = startup_shutdown(u, 0, 3.0, 2.0)
    for t in range(4):
        def f(h):
            v = u.copy()
            v[t] += h
            return startup_shutdown(v, 0, 3.0, 2.0)[2]
        assert g[t] == pytest.approx(central(f, 0.0), abs=1e-8)


BLOCKS = dict(start=np.array([0.0, 1.0]), size=np.array([1.0, 2.0]), price=np.array([10.0, 20.0]))


@pytest.mark.parametrize("p, cost, marg", [(0.0, 0.0, 10.0), (2.5, 40.0, 20.0), (3.0, 50.0, 20.0)])
def test_block_energy_cost(p, cost, marg):
    z, dz, excess = energy_cost(p, d=1.0, **BLOCKS)
    assert z == pytest.approx(cost)
    assert dz == pytest.approx(marg)
    assert not excess


def test_power_balance_penalty_values():
    zp, _, gp, _ = power_balance_penalty(0.0, 0.0, 1.0, 1.0, 1.0, PenaltyShape(1e-2, 1.0, 1.0))
    assert zp == pytest.approx(1e-2) and gp == 0.0
    zp, *_ = power_balance_penalty(1.0, 0.0, 1.0, 1e3, 1.0, PenaltyShape(1e-12, 1.0, 1.0))
    assert zp == pytest.approx(1e3)
    shape = PenaltyShape(1e-3, 1.0, 1.0)
    _, _, gp, _ = power_balance_penalty(0.37, 0.0, 1.0, 1.0, 1.0, shape)
    fd = central(lambda x: power_balance_penalty(x, 0.0, 1.0, 1.0, 1.0, shape)[0], 0.37)
    assert gp == pytest.approx(fd, abs=1e-8)


def test_soft_functions_reach_hard_forms():
    x = np.linspace(-2, 2, 9)
    assert np.allclose(soft_abs(x, 0.0)[0], np.abs(x))
    assert np.allclose(soft_relu(x, 0.0)[0], np.maximum(x, 0))
    assert np.all(soft_relu(x[x <= 0], 1e-3)[0] == 0.0)


def test_penalty_shape_validation():
    with pytest.raises(ValueError):
        PenaltyShape(-1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        PenaltyShape(1e-3, 0.05, 1.0)


# -- whole-model terms ------------------------------------------------------------

def zone_case(requirement=1.0, penalty=1e3, cost=0.0):
    zone = {"id": "z", "kind": "p", "devices": ["g"], "requirements": {"rgu": [requirement]},
            "penalties": {"rgu": penalty}}
    g = device("g", p_min=0.0, p_max=2.0, reserve_max={"rgu": 2.0}, reserve_cost={"rgu": cost})
    return make_case(devices=[g], zones=[zone])


def test_zonal_shortfall_hard_value():
    st = init_state(zone_case())
    st["rgu"][0, 0] = 0.4
    dev, zonal, _ = reserve_terms(st, HARD)
    assert dev == 0.0
    assert zonal == pytest.approx(600.0)


def test_empty_reserve_market_costs_nothing():
    st = init_state(zone_case(requirement=0.0, penalty=0.0))
    dev, zonal, _ = reserve_terms(st, HARD)
    assert dev == 0.0 and zonal == 0.0


def test_zonal_gradient_matches_finite_difference():
    st = init_state(zone_case(cost=3.0))
    st["rgu"][0, 0] = 0.4
    shape = PenaltyShape(1e-3, 0.8, 1.0)
    _, _, g = reserve_terms(st, shape)
    i = st.layout.slices["rgu"].start

    def f(h):
        s = st.copy()
        s.x[i] += h
        dev, zonal, _ = reserve_terms(s, shape)
        return dev + zonal
    assert g[i] == pytest.approx(central(f, 0.0), abs=1e-8)


def ramp_case():
    return make_case(T=2, devices=[device("g", T=2, p_min=0.0, p_max=1.0, ramp=0.1, u0=1, p0=0.0)])


def test_feasible_point_has_no_row_penalty():
    st = init_state(ramp_case())
    st["u_on"][:] = 1.0
    st["p_on"][:, 0] = [0.05, 0.1]
    z, _ = penalized_linear(st, PenaltyShape(1e-9, 1.0, 10.0))
    assert z == pytest.approx(0.0, abs=1e-12)


def test_single_violated_ramp_row():
    st = init_state(ramp_case())
    st["u_on"][:] = 1.0
    st["p_on"][:, 0] = [0.1, 0.4]
    z, g = penalized_linear(st, PenaltyShape(1e-6, 1.0, 10.0))
    # the shifted soft-ReLU gives rho * (0.2 - eps) up to O(eps^2)
    assert z == pytest.approx(2.0 - 10.0 * 1e-6, abs=1e-9)
    i = st.layout.slices["p_on"].start + 1  # p_on at t=1

    def f(h):
        s = st.copy()
        s.x[i] += h
        return penalized_linear(s, PenaltyShape(1e-6, 1.0, 10.0))[0]
    assert g[i] == pytest.approx(central(f, 0.0), abs=1e-8)


def empty_market():
    return make_case(devices=[
        device("g", "producer", u0=0, p_min=0.0, p_max=1.0),
        device("c", "consumer", u0=0, p_min=0.0, p_max=0.0, blocks=((0.0, 50.0),)),
    ])


def test_empty_market_scores_zero():
    st = init_state(empty_market())
    st["u_on"][:] = 0.0
    bd = eval_market_surplus(st, HARD)
    assert bd.z_ms == 0.0


def test_all_off_gradient_on_power_is_cost_marginal_only():
    st = init_state(empty_market())
    st["u_on"][:] = 0.0
    st["p_on"][:, 0] = 0.5
    g = backprop_market_surplus(st, HARD)
    gp = st.layout.view(g, "p_on")
    # with u = 0 the energy-cost marginal is scaled away and nothing else touches p_on
    assert np.all(gp == 0.0)
    st["u_on"][:, 0] = 1.0
    m = SurplusModel(st.case)
    _, g_cost = m.evaluate(st, HARD, terms={"z_cost"})
    assert st.layout.view(g_cost, "p_on")[0, 0] == pytest.approx(10.0)


def test_witness_balance_penalty_is_epsilon_floor():
    case = generate_synthetic_case(6, 3, 2)
    st = state_from_solution(case, case.witness)
    eps, beta = 1e-4, 0.5
    bd = eval_market_surplus(st, PenaltyShape(eps, beta, 1.0))
    a = case.arrays
    expect_p = beta * eps * a.d.sum() * case.penalties.c_p * a.nb
    expect_q = beta * eps * a.d.sum() * case.penalties.c_q * a.nb
    assert bd.z_p == pytest.approx(expect_p, rel=1e-5)
    assert bd.z_q == pytest.approx(expect_q, rel=1e-5)


def test_breakdown_terms_sum_to_total():
    case = generate_synthetic_case(5, 2, 0)
    bd = eval_market_surplus(random_state(case, 1), PenaltyShape(1e-3, 0.5, 100.0))
    signed = bd.z_value - sum(getattr(bd, k) for k in bd.PENALTIES)
    assert bd.z_ms == pytest.approx(signed, rel=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences_on_sampled_entries(seed):
    case = generate_synthetic_case(5, 2, seed)
    rng = np.random.default_rng(seed)
    st = near_witness_state(case, rng)
    shape = PenaltyShape(1e-3, 0.6, 50.0)
    m = SurplusModel(case)
    _, g = m.evaluate(st, shape)

    def evaluate(x):
        return m.evaluate(x, shape, grad=False)[0]
    for i in rng.choice(np.nonzero(~st.frozen)[0], 15, replace=False):
        e = np.zeros_like(st.x)
        e[i] = 1.0
        fd = adaptive_loss_derivative(evaluate, st.x, e, shape.eps)
        assert relative_error(fd, g[i]) < 1e-6, st.layout.locate(i)


def test_gradient_bit_identical_across_worker_counts():
    case = generate_synthetic_case(8, 4, 1)
    st = random_state(case, 2)
    shape = PenaltyShape(1e-3, 0.5, 10.0)
    g1 = backprop_market_surplus(st, shape, workers=1)
    g2 = backprop_market_surplus(st, shape, workers=2)
    g4 = backprop_market_surplus(st, shape, workers=4)
    assert np.array_equal(g1, g2) and np.array_equal(g1, g4)
