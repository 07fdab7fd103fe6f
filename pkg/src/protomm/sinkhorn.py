"""Entropic-regularized optimal transport in the log domain, plus an exact
small-instance oracle.

The iterative solver works on scaled dual potentials (f, g) so that the
plan is exp(-C/eps + f + g); updates are logsumexp steps and never leave
the log domain, which keeps eps as small as 1e-3 stable for costs in
[0, 2]. After the iteration stops, the plan is rounded onto the transport
polytope (row/column rescale plus a rank-one patch, after Altschuler et
al. 2017), so returned marginals hold to machine precision even when the
iteration stalls on a near-degenerate instance.

The exact solver enumerates basic supports (spanning trees of the
bipartite transport graph) and is deliberately exponential; it exists as
an independent ground truth for tests and is capped at 25 cells.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import Matrix, ProbVector
from .errors import ConfigError, DimensionError, NumericError, SizeError

# Stall detection, checked every _STALL_WINDOW iterations: stop when the
# marginal violation is bit-identical to the previous checkpoint (a
# floating-point fixpoint, reachable on near-degenerate instances at tiny
# epsilon), or when it is both below _STALL_NEAR_TOL and improving by less
# than a factor _STALL_FACTOR per window. The feasibility rounding absorbs
# the residual; at violations below _STALL_NEAR_TOL its effect on the
# transport cost is negligible.
_STALL_WINDOW = 500
_STALL_FACTOR = 0.999
_STALL_NEAR_TOL = 1e-6

# Epsilon annealing: warm phases start at an epsilon large enough that the
# Gibbs kernel spans at most e^_ANNEAL_SPREAD across the cost range, then
# shrink epsilon by _ANNEAL_RATIO per phase of _WARM_PHASE_ITERS iterations
# until the target is reached.
_ANNEAL_SPREAD = 20.0
_ANNEAL_RATIO = 3.0
_WARM_PHASE_ITERS = 100


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver knobs: entropic coefficient, iteration cap, marginal tolerance."""

    epsilon: float = 0.1
    max_iterations: int = 100
    tolerance: float = 1e-9

    def __post_init__(self) -> None:
        if not (np.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon!r}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations!r}")
        if not (np.isfinite(self.tolerance) and self.tolerance > 0.0):
            raise ConfigError(f"tolerance must be > 0, got {self.tolerance!r}")


@dataclass(frozen=True)
class OtSolution:
    """A transport plan with its realized cost and convergence diagnostics."""

    plan: Matrix
    transport_cost: float
    iterations: int
    marginal_violation: float


def _round_to_feasible(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project a nonnegative near-feasible plan exactly onto the marginals.

    Rows and columns are scaled down where they exceed their targets and the
    remaining deficit is filled with a rank-one nonnegative patch, so the
    output stays nonnegative and satisfies both marginals up to roundoff.
    """
    rs = plan.sum(axis=1)
    scale = np.where(rs > 0.0, np.minimum(1.0, a / np.where(rs > 0.0, rs, 1.0)), 0.0)
    p = plan * scale[:, None]
    cs = p.sum(axis=0)
    scale = np.where(cs > 0.0, np.minimum(1.0, b / np.where(cs > 0.0, cs, 1.0)), 0.0)
    p = p * scale[None, :]
    err_a = np.maximum(a - p.sum(axis=1), 0.0)
    err_b = np.maximum(b - p.sum(axis=0), 0.0)
    total = err_a.sum()
    if total > 0.0:
        p = p + np.outer(err_a, err_b) / total
    return p


def _warm_phase_count(cost_osc: float, epsilon: float) -> int:
    """Warm-start phases needed before iterating at the target epsilon.

    When the cost oscillation divided by epsilon exceeds what float64
    exponentials can span (~e^36), cells far below the current dual
    support become invisible and the iteration can freeze on a suboptimal
    coupling. Annealing epsilon from cost scale down to the target (x5
    per phase, warm-started potentials) keeps the kernel dense early and
    steers the duals into the right basin. Phases are a pure function of
    (oscillation, epsilon), so batched and standalone solves agree.
    """
    if cost_osc <= _ANNEAL_SPREAD * epsilon:
        return 0
    return int(np.ceil(np.log(cost_osc / (_ANNEAL_SPREAD * epsilon)) / np.log(_ANNEAL_RATIO)))


def _iterate_log_domain(
    a: np.ndarray,
    b: np.ndarray,
    cost: np.ndarray,
    config: SinkhornConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched log-domain Sinkhorn over strictly positive marginals.

    a: (B, n), b: (B, k), cost: (B, n, k). Returns (plans, iterations,
    violations) with per-problem early stopping: a finished problem's plan
    is frozen at the iteration where it converged (or stalled), so each
    batch slice is exactly what a standalone solve would produce. Slices
    may run individual epsilon-annealing schedules; convergence checks
    apply only once a slice reaches its target epsilon.
    """
    B, n, k = cost.shape
    eps_target = config.epsilon
    osc = cost.reshape(B, -1).max(axis=1) - cost.reshape(B, -1).min(axis=1)
    warm = np.array([_warm_phase_count(float(o), eps_target) for o in osc], dtype=np.int64)
    eps_now = eps_target * _ANNEAL_RATIO**warm.astype(np.float64)
    final_at = warm * _WARM_PHASE_ITERS  # global iteration where the target phase starts

    log_a = np.log(a)
    log_b = np.log(b)
    neg_c = cost / (-eps_now)[:, None, None]
    f = np.zeros((B, n))
    g = np.zeros((B, k))
    plans = np.zeros((B, n, k))
    viols = np.full(B, np.inf)
    iters = np.zeros(B, dtype=np.int64)
    prev_viol = np.full(B, np.inf)
    active = np.ones(B, dtype=bool)
    it = 0
    max_total = int(final_at.max()) + config.max_iterations
    while active.any() and it < max_total:
        if it > 0 and it % _WARM_PHASE_ITERS == 0:
            switching = active & (final_at > 0) & (it <= final_at)
            if switching.any():
                # entering the next phase: epsilon shrinks (bottoming out at
                # the target); unscaled dual potentials carry over, so the
                # scaled ones grow by the same ratio
                new_eps = np.maximum(eps_now[switching] / _ANNEAL_RATIO, eps_target)
                scale = eps_now[switching] / new_eps
                f[switching] *= scale[:, None]
                g[switching] *= scale[:, None]
                eps_now[switching] = new_eps
                neg_c[switching] = cost[switching] / (-new_eps)[:, None, None]
        it += 1
        idx = np.flatnonzero(active)
        m = neg_c[idx]
        z = m + g[idx][:, None, :]
        zmax = z.max(axis=2)
        fa = log_a[idx] - (zmax + np.log(np.exp(z - zmax[:, :, None]).sum(axis=2)))
        z = m + fa[:, :, None]
        zmax = z.max(axis=1)
        ga = log_b[idx] - (zmax + np.log(np.exp(z - zmax[:, None, :]).sum(axis=1)))
        p = np.exp(z + ga[:, None, :])
        v = np.maximum(
            np.abs(p.sum(axis=2) - a[idx]).max(axis=1),
            np.abs(p.sum(axis=1) - b[idx]).max(axis=1),
        )
        f[idx] = fa
        g[idx] = ga
        plans[idx] = p
        viols[idx] = v
        iters[idx] = it
        in_final = it > final_at[idx]
        done = in_final & (v <= config.tolerance)
        done |= in_final & (iters[idx] - final_at[idx] >= config.max_iterations)
        if it % _STALL_WINDOW == 0:
            frozen = in_final & (v == prev_viol[idx])
            crawling = in_final & (v < _STALL_NEAR_TOL) & (v >= _STALL_FACTOR * prev_viol[idx])
            done |= frozen | crawling
            prev_viol[idx] = np.where(in_final, v, np.inf)
        active[idx[done]] = False
    return plans, iters, viols


def _finish(plan: np.ndarray, a: np.ndarray, b: np.ndarray, cost: np.ndarray, iterations: int) -> OtSolution:
    p = _round_to_feasible(plan, a, b)
    if not np.isfinite(p).all():
        raise NumericError("transport plan contains non-finite entries")
    viol = max(
        float(np.abs(p.sum(axis=1) - a).max()),
        float(np.abs(p.sum(axis=0) - b).max()),
    )
    return OtSolution(
        plan=Matrix(p),
        transport_cost=float((p * cost).sum()),
        iterations=int(iterations),
        marginal_violation=viol,
    )


def _check_problem(a: ProbVector, b: ProbVector, cost: Matrix) -> None:
    if cost.rows != a.n or cost.cols != b.n:
        raise DimensionError(
            f"cost is {cost.rows}x{cost.cols} but marginals have lengths {a.n} and {b.n}"
        )


def solve_sinkhorn(a: ProbVector, b: ProbVector, cost: Matrix, config: SinkhornConfig) -> OtSolution:
    """Entropic OT between discrete distributions a and b under `cost`.

    Iterates log-domain scaling updates until the worst row/column marginal
    error drops below config.tolerance (or the iteration cap / a stall is
    hit), then rounds the plan exactly onto the marginals. The reported
    transport_cost is the Frobenius inner product of plan and cost; the
    entropy term is a solver device and is not included.

    When epsilon is small relative to the cost oscillation, a bounded
    number of warm-start phases at larger epsilon precede the target
    iteration (see _warm_phase_count); max_iterations caps the target
    phase only, while the reported iteration count includes the warm-up.

    Zero entries in a or b are allowed: those rows/columns are excluded
    from the updates and their plan entries are exactly 0.
    """
    _check_problem(a, b, cost)
    av = a.values
    bv = b.values
    cv = cost.values
    if (cv < 0.0).any():
        raise NumericError("cost entries must be >= 0")
    pos_r = av > 0.0
    pos_c = bv > 0.0
    if not pos_r.all() or not pos_c.all():
        sub_a = av[pos_r]
        sub_b = bv[pos_c]
        sub_c = cv[np.ix_(pos_r, pos_c)]
        plans, iters, _ = _iterate_log_domain(
            sub_a[None, :], sub_b[None, :], sub_c[None, :, :], config
        )
        full = np.zeros((a.n, b.n))
        full[np.ix_(pos_r, pos_c)] = plans[0]
        return _finish(full, av, bv, cv, int(iters[0]))
    plans, iters, _ = _iterate_log_domain(av[None, :], bv[None, :], cv[None, :, :], config)
    return _finish(plans[0], av, bv, cv, int(iters[0]))


def solve_sinkhorn_batch(
    a: ProbVector,
    bs: list[ProbVector],
    costs: list[Matrix],
    config: SinkhornConfig,
) -> list[OtSolution]:
    """Solve several problems sharing the row marginal `a` in one batch.

    Produces exactly the same solutions as calling solve_sinkhorn once per
    (b, cost) pair; the batching only amortizes per-iteration overhead.
    Falls back to individual solves when any marginal contains zeros.
    """
    if len(bs) != len(costs):
        raise DimensionError(f"{len(bs)} column marginals vs {len(costs)} cost matrices")
    if not bs:
        return []
    k = bs[0].n
    for b, c in zip(bs, costs):
        _check_problem(a, b, c)
        if (c.values < 0.0).any():
            raise NumericError("cost entries must be >= 0")
    if (
        (a.values <= 0.0).any()
        or any(b.n != k for b in bs)
        or any((b.values <= 0.0).any() for b in bs)
    ):
        return [solve_sinkhorn(a, b, c, config) for b, c in zip(bs, costs)]
    B = len(bs)
    av = np.broadcast_to(a.values, (B, a.n))
    bv = np.stack([b.values for b in bs])
    cv = np.stack([c.values for c in costs])
    plans, iters, _ = _iterate_log_domain(av, bv, cv, config)
    return [
        _finish(plans[i], a.values, bv[i], cv[i], int(iters[i]))
        for i in range(B)
    ]


_EXACT_CELL_LIMIT = 25
_support_cache: dict[tuple[int, int], np.ndarray] = {}


def _basic_supports(n: int, k: int) -> np.ndarray:
    """All cell index subsets of size n+k-1 for an n-by-k plan, cached."""
    key = (n, k)
    if key not in _support_cache:
        size = n + k - 1
        _support_cache[key] = np.array(
            list(itertools.combinations(range(n * k), size)), dtype=np.int64
        )
    return _support_cache[key]


def solve_exact_ot(a: ProbVector, b: ProbVector, cost: Matrix) -> OtSolution:
    """Exact (unregularized) OT by enumeration of candidate basic supports.

    Every vertex of the transport polytope is supported on a spanning tree
    of the bipartite graph, i.e. on some cell subset of size n+k-1; smaller
    supports appear as degenerate solutions within those subsets. For each
    subset the linear marginal equations are solved, infeasible or singular
    candidates are discarded, and the cheapest surviving plan is returned.
    Restricted to n*k <= 25 cells; intended as a test oracle only.
    """
    _check_problem(a, b, cost)
    n, k = cost.rows, cost.cols
    if n * k > _EXACT_CELL_LIMIT:
        raise SizeError(f"exact solver is limited to {_EXACT_CELL_LIMIT} cells, got {n * k}")
    av = a.values
    bv = b.values
    cv = cost.values.ravel()
    size = n + k - 1
    supports = _basic_supports(n, k)
    # Equations: n row sums plus the first k-1 column sums; the last column
    # is implied because both marginals sum to 1.
    rhs = np.concatenate([av, bv[:-1]])
    best_cost = np.inf
    best_x: np.ndarray | None = None
    best_support: np.ndarray | None = None
    chunk = 100_000
    for start in range(0, supports.shape[0], chunk):
        sub = supports[start : start + chunk]
        m = sub.shape[0]
        rows = sub // k
        cols = sub % k
        mats = np.zeros((m, size, size))
        arange_m = np.arange(m)
        for s in range(size):
            mats[arange_m, rows[:, s], s] = 1.0
            has_col_eq = cols[:, s] < k - 1
            mats[arange_m[has_col_eq], n + cols[has_col_eq, s], s] += 1.0
        ok = np.abs(np.linalg.det(mats)) > 0.5
        if not ok.any():
            continue
        x = np.linalg.solve(
            mats[ok], np.broadcast_to(rhs[:, None], (int(ok.sum()), size, 1)).copy()
        )[:, :, 0]
        feasible = (x >= -1e-9).all(axis=1)
        if not feasible.any():
            continue
        xf = x[feasible]
        sf = sub[ok][feasible]
        costs = (xf * cv[sf]).sum(axis=1)
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost = float(costs[i])
            best_x = xf[i]
            best_support = sf[i]
    if best_x is None:
        raise NumericError("no feasible basic solution found")
    flat = np.zeros(n * k)
    flat[best_support] = np.maximum(best_x, 0.0)
    plan = flat.reshape(n, k)
    viol = max(
        float(np.abs(plan.sum(axis=1) - av).max()),
        float(np.abs(plan.sum(axis=0) - bv).max()),
    )
    return OtSolution(
        plan=Matrix(plan),
        transport_cost=float((plan * cost.values).sum()),
        iterations=0,
        marginal_violation=viol,
    )
