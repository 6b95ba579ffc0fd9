"""Cost-distribution recursions, closed forms, and the recursion solver."""

import math

import numpy as np
import pytest
import scipy.stats

import losscost as lc
from losscost import costdist as cd
from conftest import k1_instance, k2_reference


def chain_marginal(space, classes, horizon, steps):
    """Oracle: evolve the occupancy chain alone with identical stepping."""
    Q = lc.build_generator(space, classes)
    dt = horizon / steps
    m = np.zeros(len(space))
    m[0] = 1.0
    for _ in range(steps):
        m = m + dt * (Q.T @ m)
    return m


def test_shadow_zero_cost_is_pure_chain():
    classes = (
        lc.TrafficClass(1.0, 1.0, 1, 0),
        lc.TrafficClass(0.5, 2.0, 1, 0),
    )
    space = lc.enumerate_states(classes, lc.FullSharing(capacity=3))
    grid = lc.evolve_shadow_costs(space, classes, 2.0, 200, 5)
    assert np.all(grid.mass[:, 1:] == 0.0)
    np.testing.assert_allclose(grid.marginal, chain_marginal(space, classes, 2.0, 200), atol=1e-10)


def test_shadow_marginal_matches_chain():
    classes, space = k2_reference()
    grid = lc.evolve_shadow_costs(space, classes, 3.0, 300, 60)
    np.testing.assert_allclose(grid.marginal, chain_marginal(space, classes, 3.0, 300), atol=1e-10)


def test_mass_conservation_both_schemes():
    classes, space = k2_reference()
    for evolve in (lc.evolve_shadow_costs, lc.evolve_simple_costs):
        grid = evolve(space, classes, 4.0, 400, 25, warn=False)
        assert grid.mass.sum() + grid.leakage == pytest.approx(1.0, abs=1e-9)
        assert (grid.mass >= -1e-15).all()


def test_shadow_mean_approaches_cost_rate():
    # long horizon: accumulated cost per unit time converges to g; at
    # 50 mean holding times the residual transient sits inside 2%
    classes = (
        lc.TrafficClass(1.5, 1.0, 1, 1),
        lc.TrafficClass(0.8, 1.0, 2, 2),
    )
    space = lc.enumerate_states(classes, lc.FullSharing(capacity=4))
    dist = lc.stationary(space, classes)
    t = 50.0 / min(c.mu for c in classes)
    rate = cd.max_outflow_rate(space, classes)
    steps = int(math.ceil(t * rate / cd.STEP_LIMIT))
    bound = t * sum(c.lam * c.omega for c in classes)
    r_max = int(bound + 12 * math.sqrt(bound))
    grid = lc.evolve_shadow_costs(space, classes, t, steps, r_max, warn=False)
    assert grid.mean_cost() / t == pytest.approx(dist.g, rel=0.02)


def test_shadow_mean_matches_monte_carlo():
    classes = (lc.TrafficClass(1.0, 1.0, 1, 1),)
    space = lc.enumerate_states(classes, lc.FullSharing(capacity=1))
    grid = lc.evolve_shadow_costs(space, classes, 10.0, 400, 40)
    cfg = lc.SimConfig(horizon=10.0, replications=4000, seed=11)
    res = lc.simulate(space, classes, cfg)
    se = res.mean_cost_se()
    assert abs(grid.mean_cost() - res.mean_cost()) <= 3.0 * se


def test_simple_marginal_stays_stationary():
    classes, space = k2_reference()
    dist = lc.stationary(space, classes)
    grid = lc.evolve_simple_costs(space, classes, 2.0, 250, 40)
    np.testing.assert_allclose(grid.marginal, dist.pi, atol=1e-10)


def test_simple_evolution_matches_discrete_closed_form():
    classes, space = k2_reference()
    dist = lc.stationary(space, classes)
    t, steps, r_max = 2.0, 64, 40
    grid = lc.evolve_simple_costs(space, classes, t, steps, r_max)
    worst = 0.0
    for i in range(len(space)):
        for r in range(r_max + 1):
            ref = lc.closed_form_discrete(space, classes, steps, t / steps, i, r, dist=dist)
            worst = max(worst, abs(grid.mass[i, r] - ref))
    assert worst <= 1e-6


def test_non_blocking_states_never_charge():
    classes, space = k2_reference()
    dist = lc.stationary(space, classes)
    grid = lc.evolve_simple_costs(space, classes, 2.0, 100, 30)
    for i in range(len(space)):
        if space.admissible[i].all():
            assert np.all(grid.mass[i, 1:] == 0.0)
            for r in range(1, 6):
                assert lc.closed_form_discrete(space, classes, 100, 0.02, i, r, dist=dist) == 0.0
                assert lc.closed_form_continuous(space, classes, 2.0, i, r, dist=dist) == 0.0


def test_discrete_zero_cost_entry():
    classes, space = k1_instance()
    dist = lc.stationary(space, classes)
    n, dt = 50, 0.01
    i = space.index[(2,)]  # the blocking state
    lam_blocked = classes[0].lam
    want = (1.0 - dt * lam_blocked) ** n * dist.pi[i]
    assert lc.closed_form_discrete(space, classes, n, dt, i, 0, dist=dist) == pytest.approx(want, rel=1e-12)


def test_discrete_single_class_is_binomial():
    classes, space = k1_instance()
    dist = lc.stationary(space, classes)
    n, dt = 80, 0.005
    i = space.index[(2,)]
    p = dt * classes[0].lam
    for r in range(12):
        want = scipy.stats.binom.pmf(r, n, p) * dist.pi[i]
        got = lc.closed_form_discrete(space, classes, n, dt, i, r, dist=dist)
        assert got == pytest.approx(want, rel=1e-10, abs=1e-300)
    # mean of the binomial law times omega
    mean = sum(r * lc.closed_form_discrete(space, classes, n, dt, i, r, dist=dist) for r in range(n + 1))
    assert mean == pytest.approx(n * dt * classes[0].omega * classes[0].lam * dist.pi[i], rel=1e-10)


def test_continuous_two_blocked_classes_poisson():
    classes = (
        lc.TrafficClass(1.0, 1.0, 1, 1),
        lc.TrafficClass(0.7, 1.0, 1, 1),
    )
    space = lc.enumerate_states(classes, lc.FullSharing(capacity=2))
    dist = lc.stationary(space, classes)
    t = 1.3
    i = space.index[(1, 1)]  # both classes blocked, unit costs
    total = classes[0].lam + classes[1].lam
    for r in range(15):
        want = scipy.stats.poisson.pmf(r, t * total) * dist.pi[i]
        got = lc.closed_form_continuous(space, classes, t, i, r, dist=dist)
        assert abs(got - want) <= 1e-10


def test_continuous_sums_to_marginal_and_mean():
    classes, space = k2_reference()
    dist = lc.stationary(space, classes)
    t = 2.0
    for i in range(len(space)):
        vals = [lc.closed_form_continuous(space, classes, t, i, r, dist=dist) for r in range(200)]
        assert sum(vals) == pytest.approx(dist.pi[i], abs=1e-10)
        mean = sum(r * v for r, v in enumerate(vals))
        assert mean == pytest.approx(t * dist.r[i] * dist.pi[i], abs=1e-8)


def test_discrete_converges_to_continuous_at_rate_one_over_n():
    classes, space = k2_reference()
    dist = lc.stationary(space, classes)
    t = 5.0
    i = space.index[(2, 1)]
    errs = []
    ns = [2 ** k for k in range(8, 15)]
    for n in ns:
        e = max(
            abs(
                lc.closed_form_discrete(space, classes, n, t / n, i, r, dist=dist)
                - lc.closed_form_continuous(space, classes, t, i, r, dist=dist)
            )
            for r in range(12)
        )
        errs.append(e)
    slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.15)


def test_total_cost_mean_and_quantiles():
    classes, space = k2_reference()
    dist = lc.stationary(space, classes)
    total = lc.total_cost_distribution(space, classes, t=2.0)
    assert total.mean == pytest.approx(2.0 * dist.g, abs=1e-8)
    assert total.analytic_mean == pytest.approx(2.0 * dist.g, abs=1e-15)
    assert total.leakage <= 1e-6
    cum = np.cumsum(total.mass)
    assert cum[total.q95] >= 0.95
    assert total.q95 <= total.q99


def test_total_cost_zero_costs_point_mass():
    classes = (lc.TrafficClass(1.0, 1.0, 1, 0),)
    space = lc.enumerate_states(classes, lc.FullSharing(capacity=2))
    total = lc.total_cost_distribution(space, classes, t=3.0)
    assert total.mass[0] == pytest.approx(1.0, abs=1e-12)
    assert total.mean == 0.0


def test_step_size_guard():
    classes, space = k1_instance()
    with pytest.raises(cd.StepSizeError):
        lc.evolve_shadow_costs(space, classes, 10.0, 10, 10)


def test_leakage_warning():
    classes, space = k1_instance()
    with pytest.warns(UserWarning, match="leaked"):
        lc.evolve_shadow_costs(space, classes, 20.0, 400, 2)


def test_balance_counterexample_found():
    classes = (lc.TrafficClass(1.0, 1.0, 1, 1),)
    space = lc.enumerate_states(classes, lc.FullSharing(capacity=1))
    dist = lc.stationary(space, classes)
    report = lc.detailed_balance_counterexample(space, classes, t=1.0)
    assert report.found
    assert report.magnitude > 1e-6
    # some violation exists at r >= 1 across the empty -> full boundary
    t = 1.0
    lhs = classes[0].mu * 1 * lc.closed_form_continuous(space, classes, t, 1, 1, dist=dist)
    rhs = classes[0].lam * lc.closed_form_continuous(space, classes, t, 0, 1, dist=dist)
    assert abs(lhs - rhs) > 1e-6


def test_balance_holds_without_blocking():
    # capacity far above what thresholds allow: nothing ever blocks... use a
    # per-class policy none of whose states block except the very top, then
    # drop omega so charges vanish
    classes = (lc.TrafficClass(1.0, 1.0, 1, 0),)
    space = lc.enumerate_states(classes, lc.FullSharing(capacity=6))
    report = lc.detailed_balance_counterexample(space, classes)
    assert not report.found


def _worst_rel_residual(sol, upto):
    worst = 0.0
    for q in range(upto - 1):
        scale = max(abs(sol.f[q]), abs(sol.f[q + 1]), abs(sol.f[q + 2]), 1.0)
        worst = max(worst, abs(sol.residual(q)) / scale)
    return worst


def test_recursion_solver_residual():
    sol = lc.recursion_solve(1.5, 0.7, q_max=22)
    assert _worst_rel_residual(sol, 21) <= 1e-9
    assert sol.gamma[0] == 1.0
    assert sol.alpha[0] == pytest.approx(1.5 * (1.5 + 2 - 0.7))


def test_recursion_solver_boundary_relation():
    # the recursion instance at q = -1 with f vanishing below zero forces
    # f(1) = (a - 1) f(0)
    for rho, a in [(1.5, 0.7), (0.6, 3.3), (2.5, 0.25)]:
        sol = lc.recursion_solve(rho, a, q_max=3)
        assert sol.f[1] == pytest.approx((a - 1.0) * sol.f[0], rel=1e-10)


def test_recursion_solver_scale_linearity():
    base = lc.recursion_solve(1.5, 0.7, q_max=10, gamma1=1.0)
    double = lc.recursion_solve(1.5, 0.7, q_max=10, gamma1=2.0)
    np.testing.assert_allclose(double.f, 2.0 * np.array(base.f), rtol=1e-12)
    np.testing.assert_allclose(double.gamma[:5], 2.0 * np.array(base.gamma[:5]), rtol=1e-12)


def test_recursion_solver_matches_forward_iteration():
    rng = np.random.default_rng(5)
    done = 0
    while done < 10:
        rho = float(rng.uniform(0.3, 3.0))
        a = float(rng.uniform(-2.0, 4.0))
        if abs((a - rho) - round(a - rho)) < 1e-3:
            continue
        sol = lc.recursion_solve(rho, a, q_max=20)
        f = [sol.f[0], sol.f[1]]
        for q in range(19):
            f.append((q + a) * f[q + 1] - rho * (q + 1) * f[q])
        for q in range(21):
            assert abs(f[q] - sol.f[q]) <= 1e-9 * max(1.0, abs(sol.f[q]))
        done += 1


def test_recursion_solver_hypothesis_checks():
    with pytest.raises(lc.ModelError):
        lc.recursion_solve(0.0, 1.5, q_max=5)
    with pytest.raises(lc.ModelError):
        lc.recursion_solve(1.5, 3.5, q_max=5)  # a - rho = 2, an integer
    with pytest.raises(lc.ModelError):
        lc.recursion_solve(1.5, 0.7, q_max=5, gamma1=0.0)


def test_cost_exceeding_truncation_leaks_fully():
    # omega larger than the whole cost lattice: every charge leaks, and the
    # accounting must still balance
    classes = (lc.TrafficClass(1.0, 1.0, 1, 5),)
    space = lc.enumerate_states(classes, lc.FullSharing(capacity=1))
    for evolve in (lc.evolve_shadow_costs, lc.evolve_simple_costs):
        grid = evolve(space, classes, 2.0, 200, 2, warn=False)
        assert grid.mass.sum() + grid.leakage == pytest.approx(1.0, abs=1e-9)
        assert grid.leakage > 0.1
        assert np.all(grid.mass[:, 1:] == 0.0)
