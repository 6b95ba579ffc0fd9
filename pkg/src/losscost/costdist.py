"""Distributions of accumulated blocking cost over a finite horizon.

The joint process (state q, accumulated cost r) is tracked on an integer
cost lattice: every blocked class-j arrival adds the integer omega_j.  Two
charging schemes are implemented.

* The *shadow* scheme charges along the real trajectory: the joint law
  follows a discrete-step recursion driven by the same transition rates as
  the occupancy chain, started from an empty system.
* The *simple* scheme decouples cost from occupancy: in state q cost accrues
  as if the admission sets were frozen, which makes the joint law a product
  of the stationary law and per-state compound binomial/Poisson laws, given
  in closed form (`closed_form_discrete` / `closed_form_continuous`).

Both schemes generate the same average cost rate g, so the tractable simple
scheme is the practical risk model; the recursion for the shadow scheme is
kept as the reference dynamics.  A balance check that exhibits where the
product form fails for the shadow dynamics is included, as is a standalone
solver for the second-order cost recursion f(q+2) - (q+a) f(q+1) +
rho (q+1) f(q) = 0 that appears when separating such cost chains.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import mpmath as mp
import numpy as np

from .model import (
    ModelError,
    NumericsError,
    StateSpace,
    StationaryDistribution,
    TrafficClass,
    build_generator,
    stationary,
)

__all__ = [
    "CostGrid",
    "TotalCostDistribution",
    "BalanceViolation",
    "CostRecursionSolution",
    "StepSizeError",
    "max_outflow_rate",
    "evolve_shadow_costs",
    "evolve_simple_costs",
    "closed_form_discrete",
    "closed_form_continuous",
    "total_cost_distribution",
    "detailed_balance_counterexample",
    "recursion_solve",
    "write_cost_grid",
    "write_total_cost",
    "write_risk",
]

LEAKAGE_WARN = 1e-6
STEP_LIMIT = 0.5


class StepSizeError(ModelError):
    """Discrete step too coarse for the transition probabilities to be valid."""


@dataclass
class CostGrid:
    """Joint mass over (state index, accumulated cost r) after ``steps`` steps.

    ``mass[i, r]`` for r in 0..r_max; ``leakage`` is the probability mass that
    ran past r_max during the evolution (total mass + leakage = 1).
    """

    mass: np.ndarray
    horizon: float
    steps: int
    r_max: int
    leakage: float
    scheme: str

    @property
    def marginal(self) -> np.ndarray:
        """Occupancy marginal sum_r mass[., r]."""
        return self.mass.sum(axis=1)

    def total_cost(self) -> np.ndarray:
        """Cost marginal sum_q mass[q, .]."""
        return self.mass.sum(axis=0)

    def mean_cost(self) -> float:
        return float(self.total_cost() @ np.arange(self.r_max + 1))


def max_outflow_rate(space: StateSpace, classes: Sequence[TrafficClass]) -> float:
    """Largest total event rate over states: all arrivals plus departures."""
    lam_total = sum(c.lam for c in classes)
    mu = np.array([c.mu for c in classes])
    return float(lam_total + (space.occupancy * mu).sum(axis=1).max())


def _check_step(space, classes, horizon, steps) -> float:
    if steps < 1:
        raise ModelError(f"steps must be >= 1, got {steps}")
    if horizon <= 0:
        raise ModelError(f"horizon must be > 0, got {horizon}")
    dt = horizon / steps
    rate = max_outflow_rate(space, classes)
    if dt * rate > STEP_LIMIT:
        raise StepSizeError(
            f"step {dt:g} times peak rate {rate:g} is {dt * rate:.3g} > {STEP_LIMIT}; "
            f"use at least {math.ceil(horizon * rate / STEP_LIMIT)} steps"
        )
    return dt


def evolve_shadow_costs(
    space: StateSpace,
    classes: Sequence[TrafficClass],
    horizon: float,
    steps: int,
    r_max: int,
    warn: bool = True,
) -> CostGrid:
    """Evolve the joint (state, cost) law of the shadow scheme from empty.

    Per step of length horizon/steps: every arrival moves probability mass --
    admitted arrivals to (q+e_j, r), blocked arrivals to (q, r+omega_j) --
    and departures move (q, r) to (q-e_j, r).  Mass pushed past r_max is
    accumulated as leakage.
    """
    classes = tuple(classes)
    dt = _check_step(space, classes, horizon, steps)
    n = len(space)
    lam = np.array([c.lam for c in classes])
    mu = np.array([c.mu for c in classes])
    occ = space.occupancy

    mass = np.zeros((n, r_max + 1))
    mass[0, 0] = 1.0
    stay = 1.0 - dt * (lam.sum() + (occ * mu).sum(axis=1))

    leakage = 0.0
    for _ in range(steps):
        new = mass * stay[:, None]
        for j, c in enumerate(classes):
            blocked = ~space.admissible[:, j]
            if c.omega == 0:
                # blocked zero-cost arrivals land back where they started
                new[blocked] += dt * c.lam * mass[blocked]
            else:
                w = c.omega
                if w <= r_max:
                    new[blocked, w:] += dt * c.lam * mass[blocked, :-w]
                leakage += dt * c.lam * mass[blocked, max(0, r_max - w + 1):].sum()
            src = space.down[:, j] >= 0
            if src.any():
                # arrival admitted in the predecessor state q - e_j
                pred = space.down[src, j]
                ok = space.admissible[pred, j]
                tgt = np.flatnonzero(src)[ok]
                new[tgt] += dt * c.lam * mass[pred[ok]]
            has_up = space.up[:, j] >= 0
            if has_up.any():
                upidx = space.up[has_up, j]
                rate = mu[j] * (occ[has_up, j] + 1)
                new[np.flatnonzero(has_up)] += dt * rate[:, None] * mass[upidx]
        mass = new
    if warn and leakage > LEAKAGE_WARN:
        warnings.warn(f"cost truncation leaked {leakage:.3e} probability past r_max={r_max}")
    return CostGrid(mass=mass, horizon=horizon, steps=steps, r_max=r_max,
                    leakage=leakage, scheme="shadow")


def evolve_simple_costs(
    space: StateSpace,
    classes: Sequence[TrafficClass],
    horizon: float,
    steps: int,
    r_max: int,
    warn: bool = True,
) -> CostGrid:
    """Evolve the product-form simple scheme from the stationary occupancy.

    The occupancy marginal stays stationary, so the coupling term (the
    conditional cost law times the marginal increment) vanishes and each
    state's cost column evolves independently: in state q only blocked
    classes charge, moving mass from r to r + omega_j at rate lam_j.
    Cost starts at 0.
    """
    classes = tuple(classes)
    dt = _check_step(space, classes, horizon, steps)
    dist = stationary(space, classes)
    n = len(space)

    mass = np.zeros((n, r_max + 1))
    mass[:, 0] = dist.pi
    Q = build_generator(space, classes)

    leakage = 0.0
    for _ in range(steps):
        marg = mass.sum(axis=1)
        dmarg = dt * (Q.T @ marg)  # stationary start keeps this at rounding level
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = np.where(marg[:, None] > 0, mass / np.where(marg[:, None] > 0, marg[:, None], 1.0), 0.0)
        new = mass + cond * dmarg[:, None]
        for j, c in enumerate(classes):
            blocked = ~space.admissible[:, j]
            if not blocked.any():
                continue
            if c.omega == 0:
                continue  # charge and refund cancel exactly
            w = c.omega
            new[blocked] -= dt * c.lam * mass[blocked]
            if w <= r_max:
                new[blocked, w:] += dt * c.lam * mass[blocked, :-w]
            leakage += dt * c.lam * mass[blocked, max(0, r_max - w + 1):].sum()
        mass = new
    if warn and leakage > LEAKAGE_WARN:
        warnings.warn(f"cost truncation leaked {leakage:.3e} probability past r_max={r_max}")
    return CostGrid(mass=mass, horizon=horizon, steps=steps, r_max=r_max,
                    leakage=leakage, scheme="simple")


def _chargeable(space: StateSpace, classes: Sequence[TrafficClass], i: int) -> tuple[tuple[float, int], ...]:
    """(rate, cost) for blocked classes that actually charge in state i.

    Blocked classes with omega = 0 or lam = 0 never move cost mass; they are
    marginalized out exactly (their events are invisible on the cost lattice).
    """
    out = []
    for j in space.blocked_classes(i):
        c = classes[j]
        if c.omega > 0 and c.lam > 0:
            out.append((c.lam, c.omega))
    return tuple(out)


@lru_cache(maxsize=None)
def _cost_vectors(omegas: tuple[int, ...], r: int) -> tuple[tuple[int, ...], ...]:
    """All count vectors with sum_i omegas[i] * n_i = r (bounded knapsack)."""
    if r == 0:
        return ((0,) * len(omegas),)
    if not omegas:
        return ()
    head = omegas[0]
    out = []
    for n0 in range(r // head + 1):
        for rest in _cost_vectors(omegas[1:], r - head * n0):
            out.append((n0,) + rest)
    return tuple(out)


def closed_form_discrete(
    space: StateSpace,
    classes: Sequence[TrafficClass],
    n: int,
    step: float,
    state: int,
    r: int,
    dist: StationaryDistribution | None = None,
) -> float:
    """Simple-scheme joint probability of (state, cost r) after n steps of
    size ``step``, using the stationary occupancy marginal.

    Sums multinomial terms over all ways the charging classes of the state
    can split the cost r; evaluated in log domain.  Pass a precomputed
    ``dist`` when calling in a loop.
    """
    if r < 0:
        return 0.0
    classes = tuple(classes)
    if dist is None:
        dist = stationary(space, classes)
    return _discrete_factor(space, classes, n, step, state, r) * float(dist.pi[state])


def _discrete_factor(space, classes, n, step, state, r) -> float:
    charge = _chargeable(space, classes, state)
    rates = [lam for lam, _ in charge]
    decay = 1.0 - step * sum(rates)
    if decay < 0:
        raise StepSizeError(f"step {step:g} too large for blocked rate {sum(rates):g}")
    if not charge:
        return 1.0 if r == 0 else 0.0
    omegas = tuple(w for _, w in charge)
    log_beta = [math.log(step * lam) for lam in rates]
    total = 0.0
    for counts in _cost_vectors(omegas, r):
        s = sum(counts)
        if s > n:
            continue
        if decay == 0.0 and n > s:
            continue
        logp = math.lgamma(n + 1) - math.lgamma(n - s + 1)
        if n > s:
            logp += (n - s) * math.log(decay)
        for ci, lb in zip(counts, log_beta):
            logp += ci * lb - math.lgamma(ci + 1)
        total += math.exp(logp)
    return total


def closed_form_continuous(
    space: StateSpace,
    classes: Sequence[TrafficClass],
    t: float,
    state: int,
    r: int,
    dist: StationaryDistribution | None = None,
) -> float:
    """Continuous-time limit of the simple-scheme joint law.

    In state q the cost after time t is a compound Poisson sum over the
    charging classes; the joint probability is that law times pi(q).
    """
    if r < 0:
        return 0.0
    classes = tuple(classes)
    if dist is None:
        dist = stationary(space, classes)
    return _continuous_factor(space, classes, t, state, r) * float(dist.pi[state])


def _continuous_factor(space, classes, t, state, r) -> float:
    charge = _chargeable(space, classes, state)
    if not charge:
        return 1.0 if r == 0 else 0.0
    omegas = tuple(w for _, w in charge)
    log_rate = [math.log(t * lam) for lam, _ in charge]
    expo = -t * sum(lam for lam, _ in charge)
    total = 0.0
    for counts in _cost_vectors(omegas, r):
        logp = expo
        for ci, lr in zip(counts, log_rate):
            logp += ci * lr - math.lgamma(ci + 1)
        total += math.exp(logp)
    return total


@dataclass(frozen=True)
class TotalCostDistribution:
    """Cost marginal sum_q of the continuous simple-scheme law at time t."""

    t: float
    mass: np.ndarray
    mean: float
    analytic_mean: float
    q95: int
    q99: int
    leakage: float


def _quantile(cum: np.ndarray, level: float) -> int:
    return int(np.searchsorted(cum, level))


def total_cost_distribution(
    space: StateSpace,
    classes: Sequence[TrafficClass],
    t: float,
    r_max: int | None = None,
    leak_tol: float = LEAKAGE_WARN,
) -> TotalCostDistribution:
    """Marginal law of the accumulated cost at time t under the simple scheme.

    ``r_max`` defaults to mean + 10 sqrt(mean) of the dominating Poisson
    bound (all arrivals charging their cost) and is doubled until the
    truncated tail is below ``leak_tol``.
    """
    classes = tuple(classes)
    dist = stationary(space, classes)
    if r_max is None:
        bound = t * sum(c.lam * c.omega for c in classes)
        r_max = int(math.ceil(bound + 10.0 * math.sqrt(bound + 1.0))) + 1
    for _ in range(20):
        mass = np.zeros(r_max + 1)
        for i in range(len(space)):
            pi_i = float(dist.pi[i])
            if pi_i == 0.0:
                continue
            for r in range(r_max + 1):
                mass[r] += _continuous_factor(space, classes, t, i, r) * pi_i
        leakage = max(0.0, 1.0 - float(mass.sum()))
        if leakage <= leak_tol:
            break
        r_max *= 2
    mean = float(mass @ np.arange(r_max + 1))
    cum = np.cumsum(mass)
    return TotalCostDistribution(
        t=t,
        mass=mass,
        mean=mean,
        analytic_mean=t * dist.g,
        q95=_quantile(cum, 0.95),
        q99=_quantile(cum, 0.99),
        leakage=leakage,
    )


@dataclass(frozen=True)
class BalanceViolation:
    """Worst detailed-balance violation of the product-form cost law.

    The occupancy factor alone satisfies detailed balance, so any violation
    comes from neighbouring states with different admission sets: the
    product-form law cannot be the stationary shape of the shadow-scheme
    recursion.  ``found`` is False only when no state blocks anything.
    """

    found: bool
    state: int | None
    cls: int | None
    r: int | None
    lhs: float
    rhs: float
    magnitude: float


def detailed_balance_counterexample(
    space: StateSpace,
    classes: Sequence[TrafficClass],
    t: float = 1.0,
    r_limit: int = 25,
    tol: float = 1e-9,
) -> BalanceViolation:
    """Search (state, class, cost) for the largest violation of
    mu_i (q_i + 1) s(q+e_i, r) = lam_i s(q, r) under the product-form law."""
    classes = tuple(classes)
    dist = stationary(space, classes)
    worst = BalanceViolation(False, None, None, None, 0.0, 0.0, 0.0)
    for i in range(len(space)):
        for k in range(space.K):
            u = space.up[i, k]
            if u < 0:
                continue
            for r in range(r_limit + 1):
                lhs = (
                    classes[k].mu
                    * (space.states[i][k] + 1)
                    * _continuous_factor(space, classes, t, u, r)
                    * float(dist.pi[u])
                )
                rhs = classes[k].lam * _continuous_factor(space, classes, t, i, r) * float(dist.pi[i])
                gap = abs(lhs - rhs)
                if gap > worst.magnitude and gap > tol:
                    worst = BalanceViolation(True, i, k, r, lhs, rhs, gap)
    return worst


@dataclass(frozen=True)
class CostRecursionSolution:
    """Solution of f(q+2) - (q+a) f(q+1) + rho (q+1) f(q) = 0 for q >= 0.

    Built from the coefficient recurrences

        alpha_1 = gamma_1 rho (rho + 2 - a),
        gamma_{i+1} = alpha_i / i,   alpha_{i+1} = (rho/i) alpha_i (2 + rho - a + i)

    as a series of Gamma-function products sum_j gamma_j Gp(q + a - rho - j).
    The product Gp is continued below its defining range by its own step
    relation Gp(y+1) = y Gp(y), which makes the series convergent and the
    residual telescope away; the truncated floor/ceiling partial sums and
    their matching constant C (weighted so the leading residual pair cancels
    at q = 0) are the first terms of the same object.  The boundary
    convention f(q) = 0 for q < 0 is respected in the only way it can be
    seen from q >= 0: the recursion instance at q = -1 forces
    f(1) = (a - 1) f(0), which the series satisfies automatically.
    """

    rho: float
    a: float
    gamma: tuple[float, ...]
    alpha: tuple[float, ...]
    C: float
    f: tuple[float, ...]

    def residual(self, q: int) -> float:
        return self.f[q + 2] - (q + self.a) * self.f[q + 1] + self.rho * (q + 1) * self.f[q]


def _gamma_product(y: mp.mpf) -> mp.mpf:
    # Gp(y) = Gamma(y) / Gamma(y mod 1): equals the finite product
    # prod_{j=1..floor(y-1)} (j + frac) for y above 1 and continues it by
    # Gp(y+1) = y Gp(y) elsewhere.
    frac = y - mp.floor(y)
    return mp.gamma(y) / mp.gamma(frac)


def recursion_solve(
    rho: float,
    a: float,
    q_max: int,
    gamma1: float = 1.0,
    dps: int = 50,
) -> CostRecursionSolution:
    """Closed-form solve of the separated cost recursion on q = 0..q_max.

    Requires rho != 0 and a - rho not an integer (at integers the Gamma
    products degenerate and the two fundamental truncations coincide).
    Raises :class:`ModelError` on a hypothesis violation and
    :class:`NumericsError` if the matching constant's denominator vanishes.
    """
    if rho == 0.0:
        raise ModelError("rho must be nonzero")
    x = a - rho
    if abs(x - round(x)) < 1e-9:
        raise ModelError(
            f"a - rho = {x:g} is (numerically) an integer; the construction requires a - rho not in N"
        )
    if gamma1 == 0.0:
        raise ModelError("gamma1 must be nonzero (the solution scale)")

    with mp.workdps(dps):
        mrho, ma, mx = mp.mpf(rho), mp.mpf(a), mp.mpf(a) - mp.mpf(rho)
        tol = mp.mpf(10) ** (-(dps - 10))

        gammas = [mp.mpf(gamma1)]
        alphas = [mp.mpf(gamma1) * mrho * (mrho + 2 - ma)]

        def extend(upto: int) -> None:
            while len(gammas) < upto:
                i = len(gammas)
                gammas.append(alphas[-1] / i)
                alphas.append((mrho / i) * alphas[-1] * (2 + mrho - ma + i))

        def f_at(q: int) -> mp.mpf:
            total = mp.mpf(0)
            j = 1
            while True:
                extend(j)
                term = gammas[j - 1] * _gamma_product(q + mx - j)
                total += term
                if j > q + 5 and abs(term) < tol * (1 + abs(total)):
                    return total
                if j > 10 * (q + abs(x) + 50):
                    raise NumericsError(
                        f"cost-recursion series did not converge for rho={rho}, a={a}, q={q}"
                    )
                j += 1

        fvals = [f_at(q) for q in range(q_max + 1)]

        # matching constant: weight of the ceiling-truncated partial sum that
        # cancels the floor truncation's leading residual at the base point
        # (the smallest q whose floor truncation is non-empty)
        F = int(mp.floor(mx))
        q0 = max(0, 1 - F)

        def partial(q: int, terms: int) -> mp.mpf:
            if terms < 1:
                return mp.mpf(0)
            extend(terms)
            return mp.fsum(gammas[j - 1] * _gamma_product(q + mx - j) for j in range(1, terms + 1))

        def partial_residual(terms_offset: int) -> mp.mpf:
            vals = [partial(q0 + d, q0 + d + F + terms_offset) for d in (0, 1, 2)]
            return vals[2] - (q0 + ma) * vals[1] + mrho * (q0 + 1) * vals[0]

        a_floor = partial_residual(0)
        a_ceil = partial_residual(1)
        if abs(a_ceil) < tol * (1 + abs(a_floor)):
            raise NumericsError(
                f"matching constant undefined: denominator residual {mp.nstr(a_ceil, 5)} ~ 0"
            )
        C = -a_floor / a_ceil

        return CostRecursionSolution(
            rho=rho,
            a=a,
            gamma=tuple(float(gm) for gm in gammas),
            alpha=tuple(float(al) for al in alphas),
            C=float(C),
            f=tuple(float(v) for v in fvals),
        )


def _fmt(v: float) -> str:
    return format(float(v), ".17e")


def write_cost_grid(path: str | Path, space: StateSpace, grid: CostGrid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"q{k + 1}" for k in range(space.K)] + ["r", "probability"])
        for i, q in enumerate(space.states):
            for r in range(grid.r_max + 1):
                w.writerow([_fmt(grid.horizon)] + list(q) + [r, _fmt(grid.mass[i, r])])


def write_total_cost(path: str | Path, t: float, mass: np.ndarray) -> None:
    cum = np.cumsum(mass)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "r", "probability", "cumulative"])
        for r, (p, c) in enumerate(zip(mass, cum)):
            w.writerow([_fmt(t), r, _fmt(p), _fmt(c)])


def write_risk(path: str | Path, dist: TotalCostDistribution) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mean", "q95", "q99"])
        w.writerow([_fmt(dist.t), _fmt(dist.mean), dist.q95, dist.q99])
