"""Relative costs, shadow prices, and per-connection bill distributions.

The relative cost v(q) measures the expected excess future blocking cost of
starting the system in state q instead of in steady state.  It solves the
policy-evaluation (Howard) equation

    sum_{j admitted} lam_j (v(q+e_j) - v(q))
      - sum_j mu_j q_j (v(q) - v(q-e_j))  =  g - r(q)

where g is the average cost rate and r(q) the per-state blocking-cost rate.
The solution is unique up to an additive constant; everything here anchors
v(empty) = 0, which leaves the shadow prices p_k(q) = v(q+e_k) - v(q)
unchanged.

Besides the dense exact solve this module has the closed form for the
symmetric single-service-rate case, two cheap closed-form approximations for
asymmetric systems, and an iterative series completion that tries to refine
any starting approximation by per-class quasi-inversion of the generator.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, onenormest

from .model import (
    ModelError,
    NumericsError,
    StateSpace,
    TrafficClass,
    build_generator,
)

__all__ = [
    "RelativeCosts",
    "ShadowPriceTable",
    "BillDistribution",
    "SeriesResult",
    "solve_howard_exact",
    "howard_residual",
    "relative_cost_symmetric",
    "symmetric_relative_costs",
    "relative_cost_equal_bandwidth_approx",
    "relative_cost_general_approx",
    "series_refine",
    "shadow_prices",
    "bill_distribution",
    "write_relative_costs",
    "write_shadow_prices",
    "write_bill_distribution",
]

RESIDUAL_TOL = 1e-8
SERIES_CONVERGED_TOL = 1e-6
SERIES_STALL_TOL = 1e-10


@dataclass(frozen=True)
class RelativeCosts:
    """Relative cost per state, anchored to zero at ``anchor``."""

    v: np.ndarray
    g: float
    anchor: int
    residual: float


@dataclass(frozen=True)
class ShadowPriceTable:
    """Price per (state, class) pair with q + e_k inside the state space.

    ``p[i, k]`` is v(q_i + e_k) - v(q_i); NaN where class k cannot be
    admitted in state i.  Differences of v, so independent of the anchor.
    """

    p: np.ndarray

    def pairs(self, space: StateSpace):
        for i in range(len(space)):
            for k in range(space.K):
                if not math.isnan(self.p[i, k]):
                    yield i, k, float(self.p[i, k])


@dataclass(frozen=True)
class BillDistribution:
    """Per class: discrete law of the price charged to an admitted arrival.

    An arriving call samples the stationary state it finds (PASTA), so the
    price p_k(q) is charged with probability pi(q) over the states that admit
    class k, renormalized.  ``per_class[k]`` is a tuple of (price,
    probability) pairs sorted by price, prices closer than the merge
    tolerance collapsed into one atom.
    """

    per_class: tuple[tuple[tuple[float, float], ...], ...]

    def mean(self, k: int) -> float:
        return sum(p * w for p, w in self.per_class[k])


@dataclass(frozen=True)
class SeriesResult:
    """Outcome of the series completion.

    ``residual_history[0]`` is the residual of the starting approximation and
    entry n the residual after n correction terms.  ``converged`` means the
    final residual met the convergence tolerance; ``diverged`` means the
    residual grew three terms in a row and the best iterate was returned;
    ``monotone`` records whether the history was non-increasing.
    """

    costs: RelativeCosts
    residual_history: tuple[float, ...]
    converged: bool
    diverged: bool
    monotone: bool
    message: str


def howard_residual(
    space: StateSpace,
    classes: Sequence[TrafficClass],
    v: np.ndarray,
    g: float,
    r: np.ndarray,
) -> float:
    """Max-norm residual of the policy-evaluation equation for v."""
    Q = build_generator(space, classes)
    return float(np.max(np.abs(Q @ v - (g - r))))


def solve_howard_exact(
    space: StateSpace,
    classes: Sequence[TrafficClass],
    g: float,
    r: np.ndarray,
    anchor: int = 0,
    cond_limit: float = 1e12,
) -> RelativeCosts:
    """Solve the policy-evaluation equation by a dense anchored linear solve.

    The generator is singular (constants are in its null space), so the
    ``anchor`` row is replaced by v(anchor) = 0.  Fails with
    :class:`NumericsError` when the anchored system's estimated condition
    number exceeds ``cond_limit`` or the residual misses ``RESIDUAL_TOL``.
    """
    Q = build_generator(space, classes)
    n = len(space)
    A = Q.copy()
    rhs = (g - np.asarray(r, dtype=float)).copy()
    A[anchor, :] = 0.0
    A[anchor, anchor] = 1.0
    rhs[anchor] = 0.0

    lu, piv = scipy.linalg.lu_factor(A)
    if n > 1:
        inv_op = LinearOperator(
            (n, n),
            matvec=lambda x: scipy.linalg.lu_solve((lu, piv), x),
            rmatvec=lambda x: scipy.linalg.lu_solve((lu, piv), x, trans=1),
        )
        cond_est = onenormest(inv_op) * np.linalg.norm(A, 1)
        if cond_est > cond_limit:
            raise NumericsError(
                f"anchored system too ill-conditioned: estimate {cond_est:.3e} "
                f"exceeds limit {cond_limit:.1e}"
            )
    v = scipy.linalg.lu_solve((lu, piv), rhs)

    residual = float(np.max(np.abs(Q @ v - (g - r))))
    if residual > RESIDUAL_TOL:
        raise NumericsError(
            f"relative-cost solve residual {residual:.3e} exceeds {RESIDUAL_TOL:.1e}"
        )
    return RelativeCosts(v=v, g=g, anchor=anchor, residual=residual)


def _inner_sum(p: int, inv_rho: float) -> float:
    # S(p) = sum_{m=0}^{p} p!/(p-m)! * inv_rho^m, via S(p) = 1 + p*inv_rho*S(p-1)
    s = 1.0
    for k in range(1, p + 1):
        s = 1.0 + k * inv_rho * s
    return s


def _double_sum(q: int, rho: float) -> float:
    # sum_{i=1}^{q} sum_{m=0}^{q-i} (q-i)!/(q-i-m)! * rho^-m
    inv = 1.0 / rho
    total = 0.0
    s = 1.0
    for p in range(q):
        if p > 0:
            s = 1.0 + p * inv * s
        total += s
    return total


def relative_cost_symmetric(q: int, g: float, mu: float, rho: float) -> float:
    """Closed-form relative cost when every class shares one bandwidth and
    one service rate under full sharing; depends only on the total number of
    calls q.  rho is the total offered load sum_k lam_k / mu_k."""
    if q < 0:
        raise ValueError(f"call count must be >= 0, got {q}")
    if q == 0:
        return 0.0
    return g / (mu * rho) * _double_sum(q, rho)


def _require_equal(values, what: str) -> float:
    first = values[0]
    if any(v != first for v in values[1:]):
        raise ModelError(f"closed form requires equal {what} across classes, got {values}")
    return first


def symmetric_relative_costs(
    space: StateSpace, classes: Sequence[TrafficClass], g: float
) -> RelativeCosts:
    """Closed-form relative costs over a symmetric full-sharing space."""
    classes = tuple(classes)
    mu = _require_equal([c.mu for c in classes], "service rates")
    _require_equal([c.bandwidth for c in classes], "bandwidths")
    rho = sum(c.rho for c in classes)
    v = np.array(
        [relative_cost_symmetric(sum(q), g, mu, rho) for q in space.states]
    )
    return RelativeCosts(v=v, g=g, anchor=0, residual=math.nan)


def relative_cost_equal_bandwidth_approx(
    q: Sequence[int], classes: Sequence[TrafficClass], g: float
) -> float:
    """Occupancy-weighted closed-form approximation for equal bandwidths but
    class-dependent service rates.  Defined as 0 at the empty state."""
    classes = tuple(classes)
    _require_equal([c.bandwidth for c in classes], "bandwidths")
    total = sum(q)
    if total == 0:
        return 0.0
    rho = sum(c.rho for c in classes)
    ds = _double_sum(total, rho)
    return sum(
        (qj / total) * g / (c.mu * rho) * ds for qj, c in zip(q, classes) if qj > 0
    )


def relative_cost_general_approx(
    q: Sequence[int], classes: Sequence[TrafficClass], g: float
) -> float:
    """Bandwidth-scaled approximation for fully heterogeneous classes.

    Maps the occupied capacity c onto each class's own scale c // b_j and
    evaluates the symmetric closed form there with a bandwidth-weighted load.
    No accuracy guarantee; pair it with :func:`howard_residual` to see how
    good it is on a given instance.
    """
    classes = tuple(classes)
    c = sum(qj * cl.bandwidth for qj, cl in zip(q, classes))
    if c == 0:
        return 0.0
    b = sum(cl.bandwidth for cl in classes)
    rho = sum(cl.rho * (cl.bandwidth / b) ** 2 for cl in classes)
    if rho == 0.0:
        return 0.0
    out = 0.0
    for qj, cl in zip(q, classes):
        if qj == 0:
            continue
        rho_j = (b / cl.bandwidth) ** 2 * rho
        # standard floor; keeps the reduction to the symmetric form exact at
        # integer capacity ratios
        level = c // cl.bandwidth
        out += (
            (cl.bandwidth * qj / c)
            * (cl.bandwidth / b) ** 2
            * g
            / (cl.mu * rho)
            * _double_sum(level, rho_j)
        )
    return out


def _load_increment(q: int, rho: float) -> float:
    # E(q) = h1(q) - h1(q-1); satisfies rho*E(q+1) - q*E(q) = 1
    if q <= 0:
        return 0.0
    return _inner_sum(q - 1, 1.0 / rho) / rho


def default_series_start(classes: Sequence[TrafficClass]) -> Callable[[tuple[int, ...]], float]:
    """Symmetric-shaped starting approximation u(q) = h1(total q, rho) / sum_j mu_j."""
    classes = tuple(classes)
    rho = sum(c.rho for c in classes)
    mu_sum = sum(c.mu for c in classes)

    def u(q: tuple[int, ...]) -> float:
        total = sum(q)
        if total == 0:
            return 0.0
        return _double_sum(total, rho) / (rho * mu_sum)

    return u


class _BoxFn:
    """Function on the box lattice prod [0, limits_k], stored densely."""

    def __init__(self, limits: Sequence[int], values: np.ndarray | None = None):
        self.limits = tuple(limits)
        shape = tuple(l + 1 for l in self.limits)
        self.a = np.zeros(shape) if values is None else values

    @classmethod
    def from_callable(cls, limits, fn):
        out = cls(limits)
        for q in itertools.product(*[range(l + 1) for l in limits]):
            out.a[q] = fn(q)
        return out

    def points(self, shrink: int = 0):
        return itertools.product(*[range(l + 1 - shrink) for l in self.limits])


def _delta_k(f: _BoxFn, k: int, lam: float, mu: float) -> _BoxFn:
    # one-class generator without admission control; valid one layer inside
    out = _BoxFn(f.limits)
    a = f.a
    up = np.roll(a, -1, axis=k)
    dn = np.roll(a, 1, axis=k)
    qk = np.arange(a.shape[k]).reshape([-1 if ax == k else 1 for ax in range(a.ndim)])
    out.a = lam * (up - a) - mu * qk * (a - dn)
    # roll wrapped the edges; zero the top layer where up is meaningless
    idx = [slice(None)] * a.ndim
    idx[k] = -1
    out.a[tuple(idx)] = 0.0
    return out


def _h_k(f: _BoxFn, k: int, rho_k: float) -> _BoxFn:
    # per-class quasi-inverse: weighted sum of f over downward shifts along k,
    # with weight of f(q - s e_k) at level q_k equal to
    # sum_{i=1}^{s} (q_k-i)!/(q_k-s)! * rho_k^-(s-i)
    out = _BoxFn(f.limits)
    nk = f.a.shape[k]
    a = np.moveaxis(f.a, k, 0)
    res = np.moveaxis(out.a, k, 0)
    inv = 1.0 / rho_k
    for qk in range(1, nk):
        acc = np.zeros_like(a[0])
        for s in range(1, qk + 1):
            w = 0.0
            prod = 1.0  # (q_k - i)!/(q_k - s)! accumulated from i = s down to 1
            for i in range(s, 0, -1):
                w += prod * inv ** (s - i)
                prod *= qk - i + 1
            acc += w * a[qk - s]
        res[qk] = acc * inv
    return out


def series_refine(
    space: StateSpace,
    classes: Sequence[TrafficClass],
    g: float,
    r: np.ndarray,
    u: Callable[[tuple[int, ...]], float] | None = None,
    n_terms: int = 6,
) -> SeriesResult:
    """Complete a starting approximation by per-class correction terms.

    The first correction seed splits the unit cost-rate identity across
    classes, f1_j = c_j - D_j u with c_j(q) = rho_j E(q+1) - q_j E(q) (the
    shares c_j sum to one), and each further seed pushes the cross-class
    coupling one order higher:

        f_{n+1,j} = - sum_{k != j} D_k [ (1/mu_j) h(f_{n,j}; q_j, rho_j) ]

    where h is the exact one-class inverse of D_j.  All operators act on an
    enlarged box around the admitted region so that no admission boundary is
    seen by the recursion; the residual is always measured with the admission
    boundary in force.

    The corrections drive the residual of the *unconstrained* balance
    equation to zero, but on blocking instances the completed function can
    settle on a solution whose boundary increments disagree with the blocking
    costs, so the policy-equation residual may stall above the convergence
    tolerance.  That outcome is reported honestly via the flags instead of
    being iterated forever; use :func:`solve_howard_exact` when an exact
    answer is required.
    """
    classes = tuple(classes)
    K = space.K
    if u is None:
        u = default_series_start(classes)
    if any(c.lam == 0.0 for c in classes):
        # the per-class quasi-inverse weights carry inverse powers of the
        # per-class load
        raise ModelError("series completion requires a positive arrival rate per class")
    rho = sum(c.rho for c in classes)
    rho_j = [c.rho for c in classes]

    limits = [int(space.occupancy[:, k].max()) + n_terms + 2 for k in range(K)]
    ubox = _BoxFn.from_callable(limits, u)

    def share(q, j):
        total = sum(q)
        return rho_j[j] * _load_increment(total + 1, rho) - q[j] * _load_increment(total, rho)

    f = []
    for j in range(K):
        dju = _delta_k(ubox, j, classes[j].lam, classes[j].mu)
        fj = _BoxFn(limits)
        for q in ubox.points():
            fj.a[q] = share(q, j) - dju.a[q]
        f.append(fj)

    def measure(vbox: _BoxFn) -> tuple[np.ndarray, float]:
        v = np.array([vbox.a[q] for q in space.states])
        v = v - v[0]
        return v, howard_residual(space, classes, v, g, r)

    vbox = _BoxFn(limits, g * ubox.a.copy())
    v0, res0 = measure(vbox)
    history = [res0]
    best_v, best_res, best_terms = v0, res0, 0

    diverged = False
    message = ""
    grow_streak = 0
    for n in range(1, n_terms + 1):
        hs = [_h_k(f[j], j, rho_j[j]) for j in range(K)]
        for j in range(K):
            vbox.a += g * hs[j].a / classes[j].mu
        v, res = measure(vbox)
        history.append(res)
        if res < best_res:
            best_v, best_res, best_terms = v, res, n
        grow_streak = grow_streak + 1 if res > history[-2] else 0
        if grow_streak >= 3:
            diverged = True
            message = f"residual grew for {grow_streak} consecutive terms; returning best iterate (after {best_terms} terms)"
            break
        if res <= SERIES_CONVERGED_TOL:
            message = f"converged after {n} terms"
            break
        if abs(history[-2] - res) < SERIES_STALL_TOL:
            message = f"residual improvement below {SERIES_STALL_TOL:g} after {n} terms; stopping"
            break
        if n == n_terms:
            break
        nxt = []
        for j in range(K):
            hj = _BoxFn(limits, hs[j].a / classes[j].mu)
            acc = _BoxFn(limits)
            for k in range(K):
                if k != j:
                    acc.a -= _delta_k(hj, k, classes[k].lam, classes[k].mu).a
            nxt.append(acc)
        f = nxt

    converged = best_res <= SERIES_CONVERGED_TOL
    if not message:
        message = f"stopped after {len(history) - 1} terms without reaching {SERIES_CONVERGED_TOL:g}"
    monotone = all(b <= a + 1e-15 for a, b in zip(history, history[1:]))
    costs = RelativeCosts(v=best_v, g=g, anchor=0, residual=best_res)
    return SeriesResult(
        costs=costs,
        residual_history=tuple(history),
        converged=converged,
        diverged=diverged,
        monotone=monotone,
        message=message,
    )


def shadow_prices(costs: RelativeCosts | np.ndarray, space: StateSpace) -> ShadowPriceTable:
    """Price table p_k(q) = v(q+e_k) - v(q) over pairs with q+e_k admitted."""
    v = costs.v if isinstance(costs, RelativeCosts) else np.asarray(costs, dtype=float)
    n = len(space)
    p = np.full((n, space.K), np.nan)
    for i in range(n):
        for k in range(space.K):
            u = space.up[i, k]
            if u >= 0:
                p[i, k] = v[u] - v[i]
    return ShadowPriceTable(p=p)


def bill_distribution(
    prices: ShadowPriceTable,
    pi: np.ndarray,
    space: StateSpace,
    merge_tol: float = 1e-12,
) -> BillDistribution:
    """Law of the shadow price charged to an admitted arrival of each class."""
    per_class = []
    for k in range(space.K):
        mask = space.admissible[:, k]
        if not mask.any():
            raise ModelError(f"class {k} is never admissible")
        weight = pi[mask]
        total = weight.sum()
        if total <= 0:
            raise ModelError(f"class {k} admitting states carry zero probability")
        pk = prices.p[mask, k]
        order = np.argsort(pk)
        atoms: list[list[float]] = []
        for price, w in zip(pk[order], weight[order] / total):
            if atoms and price - atoms[-1][0] <= merge_tol:
                atoms[-1][1] += w
            else:
                atoms.append([price, w])
        per_class.append(tuple((float(p), float(w)) for p, w in atoms))
    return BillDistribution(per_class=tuple(per_class))


def _fmt(x: float) -> str:
    return format(float(x), ".17e")


def _state_header(space: StateSpace) -> list[str]:
    return [f"q{k + 1}" for k in range(space.K)]


def write_relative_costs(path: str | Path, space: StateSpace, costs: RelativeCosts) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_state_header(space) + ["v"])
        for q, v in zip(space.states, costs.v):
            w.writerow(list(q) + [_fmt(v)])


def write_shadow_prices(path: str | Path, space: StateSpace, table: ShadowPriceTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_state_header(space) + ["class", "price"])
        for i, k, price in table.pairs(space):
            w.writerow(list(space.states[i]) + [k + 1, _fmt(price)])


def write_bill_distribution(path: str | Path, bills: BillDistribution) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "price", "probability"])
        for k, atoms in enumerate(bills.per_class):
            for price, prob in atoms:
                w.writerow([k + 1, _fmt(price), _fmt(prob)])
