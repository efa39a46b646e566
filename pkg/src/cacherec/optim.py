"""Recommendation-matrix optimizers.

Two policies are provided. The myopic policy minimizes the expected cost
of the next request only; it decomposes into one small LP per row,
solved exactly by a parametric greedy with bisection on the quality
multiplier. The stationary policy (`cars_solve`) minimizes the long-run
cost by alternating convex minimizations of an augmented Lagrangian in
which the stationarity condition of the request chain enters as a
penalized equality residual.
"""

from dataclasses import dataclass, field

import numpy as np

from .markov import expected_cost, stationary_direct
from .model import (
    CostVector,
    RecMatrix,
    RequestModel,
    SimilarityMatrix,
    StationaryVector,
)
from .qp import INFEASIBLE, QpProblem, solve_qp
from .qp import _threshold_rows

__all__ = [
    "OptimInputs",
    "CarsConfig",
    "CarsResult",
    "InfeasibleQualityError",
    "top_n_similarity",
    "myopic_solve",
    "residual_c",
    "augmented_lagrangian",
    "cars_pi_step",
    "cars_y_step",
    "cars_solve",
    "select_best",
]


class InfeasibleQualityError(ValueError):
    """A per-row quality floor exceeds what any feasible row can reach."""


@dataclass(frozen=True)
class OptimInputs:
    """Shared inputs of both optimizers.

    `quality` may be a scalar (uniform floor) or a per-row vector; it is
    stored as a vector. Construction verifies that every row can reach
    its floor: the best attainable row quality is the mean of the N
    largest off-diagonal similarities.
    """

    similarity: SimilarityMatrix
    model: RequestModel
    cost: CostVector
    quality: np.ndarray = 0.0

    def __post_init__(self):
        if not isinstance(self.similarity, SimilarityMatrix):
            object.__setattr__(self, "similarity", SimilarityMatrix(np.asarray(self.similarity)))
        if not isinstance(self.cost, CostVector):
            object.__setattr__(self, "cost", CostVector(np.asarray(self.cost)))
        k = self.similarity.size
        if self.model.size != k or self.cost.size != k:
            raise ValueError("similarity, model and cost sizes disagree")
        q = np.array(self.quality, dtype=float)
        if q.ndim == 0:
            q = np.full(k, float(q))
        if q.shape != (k,):
            raise ValueError(f"quality must be scalar or length {k}")
        if q.min() < 0.0 or q.max() > 1.0:
            raise ValueError("quality floors must lie in [0, 1]")
        q.flags.writeable = False
        object.__setattr__(self, "quality", q)
        best = self.max_quality()
        short = np.flatnonzero(best < q - 1e-12)
        if short.size:
            i = int(short[0])
            raise InfeasibleQualityError(
                f"row {i}: quality floor {q[i]} exceeds best attainable {best[i]:.6f} "
                f"(mean of the {self.model.list_size} largest similarities)"
            )

    @property
    def size(self) -> int:
        return self.similarity.size

    def max_quality(self) -> np.ndarray:
        """Best attainable quality per row: mean of the N largest u_ij, j != i."""
        u = np.asarray(self.similarity, dtype=float).copy()
        np.fill_diagonal(u, -np.inf)
        n = self.model.list_size
        top = -np.sort(-u, axis=1)[:, :n]
        return top.sum(axis=1) / n


def top_n_similarity(inputs: OptimInputs) -> RecMatrix:
    """Feasible warm start: mass 1/N on each row's N most similar items.

    Ties break toward the lowest index; the diagonal is excluded. This is
    the quality-maximal matrix, so it is feasible whenever the inputs are.
    """
    u = np.asarray(inputs.similarity, dtype=float)
    k = u.shape[0]
    n = inputs.model.list_size
    y = np.zeros((k, k))
    idx = np.arange(k)
    for i in range(k):
        r = u[i].copy()
        r[i] = -np.inf
        order = np.lexsort((idx, -r))
        y[i, order[:n]] = 1.0 / n
    return RecMatrix(y, n)


# ---------------------------------------------------------------------------
# Myopic policy
# ---------------------------------------------------------------------------

def _row_greedy(x, u, n, self_idx, t, prefer_high_quality):
    """Cheapest N-subset at reduced cost x - t*u, one of the two tie rules.

    Returns the row vector (mass 1/N on the selection) and its quality.
    Ties in the reduced cost break toward higher similarity when
    `prefer_high_quality`, then toward the lowest index either way.
    """
    r = x - t * u
    r[self_idx] = np.inf
    idx = np.arange(x.size)
    if prefer_high_quality:
        order = np.lexsort((idx, -u, r))
    else:
        order = np.lexsort((idx, r))
    sel = order[:n]
    y = np.zeros(x.size)
    y[sel] = 1.0 / n
    return y, float(u[sel].sum()) / n, float(x[sel].sum()) / n


def _solve_row_lp(x, u, n, self_idx, q):
    """Exact row LP: min sum y*x s.t. sum y = 1, 0 <= y <= 1/N, y[self]=0,
    sum y*u >= q.

    Parametric greedy: for a multiplier t on the quality constraint the
    optimum selects the N smallest reduced costs x - t*u. The achieved
    quality is nondecreasing in t, so bisection finds the critical
    multiplier and the final point blends the two adjacent greedy
    solutions so the quality lands exactly on the floor. Both blend ends
    minimize the same reduced cost, which makes the blend optimal.
    """
    y_cost, g_cost, _ = _row_greedy(x, u, n, self_idx, 0.0, False)
    if g_cost >= q - 1e-12:
        return y_cost
    y_hi0, g_hi0, _ = _row_greedy(x, u, n, self_idx, 0.0, True)
    if g_hi0 >= q:
        theta = (q - g_cost) / (g_hi0 - g_cost)
        return (1.0 - theta) * y_cost + theta * y_hi0

    gaps = np.diff(np.unique(u))
    gaps = gaps[gaps > 1e-15]
    if gaps.size == 0:
        raise InfeasibleQualityError(
            f"row {self_idx}: all similarities equal, quality {q} unreachable "
            f"(attains {g_cost:.6f})"
        )
    t_hi = (float(x.max() - x.min()) + 1.0) / float(gaps.min())
    y_top, g_top, _ = _row_greedy(x, u, n, self_idx, t_hi, True)
    if g_top < q - 1e-9:
        raise InfeasibleQualityError(
            f"row {self_idx}: quality floor {q} exceeds best attainable {g_top:.6f}"
        )
    t_lo = 0.0
    for _ in range(200):
        if t_hi - t_lo <= 1e-13 * (1.0 + t_hi):
            break
        mid = 0.5 * (t_lo + t_hi)
        _, g_mid, _ = _row_greedy(x, u, n, self_idx, mid, True)
        if g_mid >= q:
            t_hi = mid
        else:
            t_lo = mid
    y_lo, g_lo, _ = _row_greedy(x, u, n, self_idx, t_lo, True)
    y_hi, g_hi, _ = _row_greedy(x, u, n, self_idx, t_hi, True)
    if g_lo >= q:
        return y_lo
    theta = min(1.0, (q - g_lo) / (g_hi - g_lo))
    return (1.0 - theta) * y_lo + theta * y_hi


def myopic_solve(inputs: OptimInputs) -> RecMatrix:
    """Minimize the expected cost of the next request only.

    The one-step objective separates over rows, so each row solves its
    own small LP over the row polytope with its quality floor. Solutions
    are exact (parametric greedy), deterministic, and lowest-index on
    cost ties.
    """
    u = np.asarray(inputs.similarity, dtype=float)
    x = np.asarray(inputs.cost, dtype=float)
    q = inputs.quality
    n = inputs.model.list_size
    k = u.shape[0]
    y = np.zeros((k, k))
    for i in range(k):
        y[i] = _solve_row_lp(x, u[i], n, i, float(q[i]))
    return RecMatrix(y, n)


# ---------------------------------------------------------------------------
# Stationary-cost policy
# ---------------------------------------------------------------------------

def residual_c(pi, y, m: RequestModel) -> np.ndarray:
    """Stationarity residual ``c = pi^T - pi^T (a Y + (1-a) 1 p0^T)``.

    Vanishes exactly when pi is the stationary distribution of the chain
    induced by Y. Uses ``pi^T 1 p0^T = (sum pi) p0^T`` so the evaluation
    stays at one matrix-vector product.
    """
    pv = np.asarray(pi, dtype=float)
    yv = np.asarray(y, dtype=float)
    p0 = np.asarray(m.popularity, dtype=float)
    a = m.follow_prob
    return pv - a * (yv.T @ pv) - (1.0 - a) * pv.sum() * p0


def augmented_lagrangian(pi, y, lam, rho: float, inputs: OptimInputs) -> float:
    """Penalized objective ``pi.x + c.lam + (rho/2)||c||^2``."""
    c = residual_c(pi, y, inputs.model)
    pv = np.asarray(pi, dtype=float)
    x = np.asarray(inputs.cost, dtype=float)
    lv = np.asarray(lam, dtype=float)
    return float(pv @ x) + float(c @ lv) + 0.5 * rho * float(c @ c)


def cars_pi_step(
    y,
    lam,
    rho: float,
    inputs: OptimInputs,
    x0=None,
    tol: float = 1e-7,
    max_iter: int = 50000,
    return_solution: bool = False,
):
    """Minimize the penalized objective over the probability simplex.

    With Y fixed the residual is linear in pi, so this is a convex QP
    with quadratic operator ``rho (I-P)(I-P^T)`` applied as two
    matrix-vector products.
    """
    yv = np.asarray(y, dtype=float)
    p0 = np.asarray(inputs.model.popularity, dtype=float)
    a = inputs.model.follow_prob
    x = np.asarray(inputs.cost, dtype=float)
    lv = np.asarray(lam, dtype=float)
    k = p0.size

    def p_vec(v):  # P v
        return a * (yv @ v) + (1.0 - a) * float(p0 @ v)

    def pt_vec(v):  # P^T v
        return a * (yv.T @ v) + (1.0 - a) * v.sum() * p0

    def qmv(v):
        w = v - pt_vec(v)
        return rho * (w - p_vec(w))

    lin = x + lv - p_vec(lv)
    problem = QpProblem(
        linear=lin,
        quadratic=qmv,
        groups=[np.arange(k)],
        group_targets=np.array([1.0]),
        lower=0.0,
        upper=1.0,
    )
    sol = solve_qp(problem, tol=tol, max_iter=max_iter, x0=p0 if x0 is None else x0)
    if sol.status == INFEASIBLE:
        raise RuntimeError(f"stationary-step subproblem infeasible: {sol.message}")
    pi = StationaryVector(sol.point)
    return (pi, sol) if return_solution else pi


def _quality_row_prox(w, u_row, q_floor, lower, upper, kappa):
    """Minimize ``(kappa/2)||y - w||^2`` over the capped row polytope with
    a quality floor, returning the row and its floor multiplier.

    The unconstrained-floor solution is the plain sum/box projection; when
    it misses the floor the shifted projection ``y = proj(w + sigma u)``
    is steered by a few bracketed Newton steps on the nondecreasing map
    ``sigma -> u . y``, and the bracket endpoints are blended to land
    exactly on the floor. The multiplier is ``kappa sigma``. This is a
    warm-start device, so a tight budget beats exactness.
    """
    one = np.array([1.0])
    y, tau = _threshold_rows(w[None, :], one, lower, upper)
    got = float(u_row @ y[0])
    if got >= q_floor - 1e-12 or kappa <= 0.0:
        return y[0], 0.0

    def free_slope(yr):
        f = (yr > lower[0]) & (yr < upper[0])
        m = int(f.sum())
        if m == 0:
            return 0.0
        uf = u_row[f]
        return max(float(uf @ uf) - float(uf.sum()) ** 2 / m, 0.0)

    spread = float(np.ptp(w)) + float(upper[0].max()) + 1.0
    sg_lo, sg_hi = 0.0, None
    y_lo = y[0]
    y_hi = None
    sl = free_slope(y[0])
    sg = (q_floor - got) / sl if sl > 1e-9 else 1e-3 * spread
    for _ in range(16):
        y2, tau = _threshold_rows((w + sg * u_row)[None, :], one, lower, upper, tau0=tau)
        got2 = float(u_row @ y2[0])
        if abs(got2 - q_floor) <= 1e-10 * max(1.0, abs(q_floor)):
            return y2[0], kappa * sg
        if got2 < q_floor:
            sg_lo, y_lo = sg, y2[0]
        else:
            sg_hi, y_hi = sg, y2[0]
        sl = free_slope(y2[0])
        prop = sg + (q_floor - got2) / sl if sl > 1e-12 else None
        if sg_hi is None:
            sg = prop if (prop is not None and prop > sg) else 4.0 * sg + 1e-3 * spread
        elif prop is None or not (sg_lo < prop < sg_hi):
            sg = 0.5 * (sg_lo + sg_hi)
        else:
            sg = prop
    if y_hi is None:
        # quality is flat over the tried shifts; fall back to the greedy
        # maximal-quality row, the exact maximizer under box and sum
        free_cap = upper[0] - lower[0]
        budget = 1.0 - float(lower[0].sum())
        y_hi = np.array(lower[0])
        for j in np.argsort(-u_row):
            give = min(free_cap[j], budget)
            y_hi[j] += give
            budget -= give
            if budget <= 0.0:
                break
        sg_hi = sg
    gl = float(u_row @ y_lo)
    gh = float(u_row @ y_hi)
    if gh - gl <= 0.0 or gh < q_floor:
        return y_hi, kappa * sg_hi  # floor out of reach; best attainable row
    gamma = min(max((q_floor - gl) / (gh - gl), 0.0), 1.0)
    blend = (1.0 - gamma) * y_lo + gamma * y_hi
    return blend, kappa * (sg_lo + gamma * (sg_hi - sg_lo))


def _y_block_descent(y, pv, s_star, u, qv, cap, coef, max_sweeps=4, tol=1e-9):
    """Exact cyclic minimization of the recommendation subproblem.

    The penalized objective depends on Y only through ``s = Y^T pi``, so
    with the other rows held fixed each row solves a spherical prox over
    its own polytope, which `_quality_row_prox` does in closed form. Rows
    with vanishing stationary mass do not move the objective and keep
    their warm-start values. Returns the improved matrix and the per-row
    quality multipliers for seeding the dual ascent.
    """
    k = pv.size
    y = np.array(y, dtype=float, copy=True)
    theta = np.zeros(k)
    s = y.T @ pv
    eps_pv = 1e-12 * float(pv.max(initial=0.0))
    order = np.argsort(-pv)
    lo = np.zeros((1, k))
    for _ in range(max_sweeps):
        delta = 0.0
        for i in order:
            p_i = pv[i]
            if p_i <= eps_pv:
                break
            rest = s - p_i * y[i]
            w = (s_star - rest) / p_i
            hi = np.full((1, k), cap)
            hi[0, i] = 0.0
            row, th = _quality_row_prox(w, u[i], qv[i], lo, hi, coef * p_i * p_i)
            theta[i] = th
            delta = max(delta, float(np.abs(row - y[i]).max()))
            s = rest + p_i * row
            y[i] = row
        if delta <= tol:
            break
    return y, theta


def cars_y_step(
    pi,
    lam,
    rho: float,
    inputs: OptimInputs,
    y0=None,
    mu0=None,
    tol: float = 1e-7,
    max_iter: int = 50000,
    return_solution: bool = False,
):
    """Minimize the penalized objective over the recommendation polytope.

    With pi fixed the residual is affine in Y and couples entries
    column-wise (per-column quadratic blocks ``a^2 rho pi pi^T``), while
    the constraints act row-wise: row sums, box, zero diagonal, and the
    per-row quality floors handled by dual ascent inside the solver.
    """
    pv = np.asarray(pi, dtype=float)
    u = np.asarray(inputs.similarity, dtype=float)
    p0 = np.asarray(inputs.model.popularity, dtype=float)
    a = inputs.model.follow_prob
    n = inputs.model.list_size
    q = inputs.quality
    lv = np.asarray(lam, dtype=float)
    k = pv.size

    r = pv - (1.0 - a) * p0
    lin = (-a) * np.outer(pv, lv + rho * r).ravel()
    coef = a * a * rho

    def qmv(v):
        vm = v.reshape(k, k)
        return coef * np.outer(pv, pv @ vm).ravel()

    def gmv(v):
        return (u * v.reshape(k, k)).sum(axis=1)

    def grmv(w):
        return (u * w[:, None]).ravel()

    lower = np.zeros(k * k)
    upper = np.full(k * k, 1.0 / n)
    diag = np.arange(k) * (k + 1)
    upper[diag] = 0.0
    groups = [np.arange(i * k, (i + 1) * k) for i in range(k)]
    problem = QpProblem(
        linear=lin,
        quadratic=qmv,
        groups=groups,
        group_targets=np.ones(k),
        lower=lower,
        upper=upper,
        inequalities=(gmv, grmv, q),
    )
    if y0 is None:
        y0 = top_n_similarity(inputs)
    x_start = np.asarray(y0, dtype=float)
    mu_start = mu0
    if coef > 0.0:
        # an exact cyclic pass over the rows lands next to the optimum
        # and hands the dual ascent its quality multipliers
        s_star = (lv + rho * r) / (a * rho)
        x_start, mu_start = _y_block_descent(
            x_start, pv, s_star, u, np.asarray(q, dtype=float), 1.0 / n, coef,
        )
    sol = solve_qp(
        problem, tol=tol, max_iter=max_iter,
        x0=x_start.ravel(), mu0=mu_start,
    )
    if sol.status == INFEASIBLE:
        raise RuntimeError(f"recommendation-step subproblem infeasible: {sol.message}")
    ym = sol.point.reshape(k, k)

    # Restore any quality floor the dual ascent left marginally violated:
    # blend toward the quality-maximal row, which lands exactly on the floor
    # and stays inside the row polytope.
    got = (u * ym).sum(axis=1)
    short = np.flatnonzero(got < q - 1e-6)
    if short.size:
        y_top = np.asarray(top_n_similarity(inputs), dtype=float)
        g_top = (u * y_top).sum(axis=1)
        for i in short:
            theta = (q[i] - got[i]) / (g_top[i] - got[i])
            ym[i] = (1.0 - theta) * ym[i] + theta * y_top[i]

    rec = RecMatrix(ym, n)
    return (rec, sol) if return_solution else rec


@dataclass
class CarsConfig:
    """Knobs of the alternating stationary-cost solver."""

    rho: float = 1.0
    lambda0: np.ndarray | None = None
    y0: RecMatrix | None = None
    acc1: float = 1e-6
    acc2: float = 1e-5
    max_iter: int = 30
    multiplier_step: float = 0.5  # factor on rho in the dual update; 1.0 is the textbook step
    subproblem_tol: float = 1e-6
    subproblem_max_iter: int = 8000

    def __post_init__(self):
        if self.rho <= 0.0:
            raise ValueError("rho must be positive")
        if self.acc1 <= 0.0 or self.acc2 <= 0.0:
            raise ValueError("accuracy targets must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class CarsResult:
    """Outcome of the alternating solver, with full per-iteration traces.

    Trace entry 0 describes the starting matrix; entry i the i-th
    iteration. `best_y` is the minimum-true-cost iterate (earliest tie).
    """

    best_y: RecMatrix
    best_cost: float
    cost_trace: list
    residual_trace: list
    iterations: int
    converged: bool
    virtual_cost_trace: list = field(default_factory=list)
    lambda_norm_trace: list = field(default_factory=list)
    best_index: int = 0
    message: str = ""


def select_best(cost_trace) -> int:
    """Index of the minimum-cost iterate; earliest on ties."""
    trace = np.asarray(cost_trace, dtype=float)
    if trace.size == 0:
        raise ValueError("empty cost trace")
    return int(np.argmin(trace))


def cars_solve(inputs: OptimInputs, cfg: CarsConfig | None = None) -> CarsResult:
    """Alternating augmented-Lagrangian minimization of the stationary cost.

    Each iteration minimizes over the auxiliary distribution, then over
    the recommendation matrix, then raises the multiplier by
    ``multiplier_step * rho`` times the stationarity residual. The true
    cost of every iterate is evaluated from the exact stationary
    distribution of its matrix (the auxiliary distribution only converges
    to it as the residual vanishes). Terminates when both the squared
    residual norm and the true-cost change drop below their accuracies,
    or after `max_iter` iterations; returns the minimum-cost iterate.
    """
    cfg = cfg or CarsConfig()
    m = inputs.model
    x = np.asarray(inputs.cost, dtype=float)
    k = inputs.size

    y = cfg.y0 if cfg.y0 is not None else top_n_similarity(inputs)
    if not isinstance(y, RecMatrix):
        y = RecMatrix(np.asarray(y, dtype=float), m.list_size)
    lam = np.zeros(k) if cfg.lambda0 is None else np.asarray(cfg.lambda0, dtype=float).copy()

    pi_exact = stationary_direct(y, m)
    cost0 = expected_cost(pi_exact, x)
    cost_trace = [cost0]
    residual_trace = [0.0]
    virtual_trace = [cost0]
    lambda_trace = [float(np.linalg.norm(lam))]
    best_y, best_cost, best_idx = y, cost0, 0
    pi_warm = np.asarray(pi_exact, dtype=float)
    mu_warm = None
    converged = False
    message = ""

    for i in range(1, cfg.max_iter + 1):
        try:
            pi_i = cars_pi_step(
                y, lam, cfg.rho, inputs, x0=pi_warm,
                tol=cfg.subproblem_tol, max_iter=cfg.subproblem_max_iter,
            )
            y_next, sol = cars_y_step(
                pi_i, lam, cfg.rho, inputs, y0=y, mu0=mu_warm,
                tol=cfg.subproblem_tol, max_iter=cfg.subproblem_max_iter,
                return_solution=True,
            )
        except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            message = f"subproblem failed at iteration {i}: {exc}"
            break
        c = residual_c(pi_i, y_next, m)
        lam = lam + cfg.multiplier_step * cfg.rho * c
        cost_i = expected_cost(stationary_direct(y_next, m), x)
        eps1 = float(c @ c)
        eps2 = abs(cost_i - cost_trace[-1])
        cost_trace.append(cost_i)
        residual_trace.append(eps1)
        virtual_trace.append(float(np.asarray(pi_i) @ x))
        lambda_trace.append(float(np.linalg.norm(lam)))
        if cost_i < best_cost:
            best_y, best_cost, best_idx = y_next, cost_i, i
        y = y_next
        pi_warm = np.asarray(pi_i, dtype=float)
        mu_warm = sol.multipliers
        if eps1 <= cfg.acc1 and eps2 <= cfg.acc2:
            converged = True
            break

    return CarsResult(
        best_y=best_y,
        best_cost=best_cost,
        cost_trace=cost_trace,
        residual_trace=residual_trace,
        iterations=len(cost_trace) - 1,
        converged=converged,
        virtual_cost_trace=virtual_trace,
        lambda_norm_trace=lambda_trace,
        best_index=best_idx,
        message=message,
    )
