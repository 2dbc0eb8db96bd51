"""Dual coordinate ascent for the fixed-bias quadratic-kernel margin problem.

The relaxed minimal-norm objective over Mahalanobis matrices reduces to an
SVM dual with kernel k(x, y) = <x, y>^2 on the difference vectors
x_i - x0, box constraints 0 <= alpha_i <= C and no equality constraint
(the bias is frozen). The zero auxiliary point of that reduction has an
identically-zero kernel row and is never materialized.

Solves maximize

    g(alpha) = sum_i m_i alpha_i - 1/2 sum_ij alpha_i alpha_j K_ij

by seeded random-permutation coordinate sweeps with shrinking of
coefficients pinned at the box bounds.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from ._accel import get_kernels
from .errors import DimensionMismatch, Infeasible, ScaleExceeded
from .model import DualSolution, ExemplarProblem

# Hard margin runs with this cap; convergence then additionally checks that
# no coefficient is pinned there (which would mean the problem is infeasible).
HARD_MARGIN_CAP = 1e12

_AT_BOUND = 1.0 - 1e-12


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the coordinate-ascent solve.

    max_iterations caps full coordinate sweeps. kernel_cache_limit is the
    largest n for which the full n x n kernel matrix is precomputed; above
    it, kernel rows are recomputed on demand and only the gradient vector
    is kept.
    """

    tolerance: float = 1e-6
    max_iterations: int = 1000
    kernel_cache_limit: int = 8192
    shuffle_seed: int = 0

    def __post_init__(self):
        if not (self.tolerance > 0):
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def quadratic_kernel(a, b) -> float:
    """k(a, b) = <a, b>^2, the kernel of the outer-product feature map."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    return float(np.dot(a, b) ** 2)


def _kkt_violations(alphas, f, margins, cap):
    """Per-coefficient KKT violation of the box-constrained dual.

    At the lower bound only a gradient pointing inward (f < margin) is a
    violation; at the upper bound only f > margin; in the interior the
    gradient must vanish.
    """
    r = f - margins
    viol = np.abs(r)
    at_lo = alphas <= 0.0
    at_hi = alphas >= cap * _AT_BOUND
    viol[at_lo] = np.maximum(-r[at_lo], 0.0)
    viol[at_hi] = np.maximum(r[at_hi], 0.0)
    return viol


def solve_box_qp(margins, cap, cfg, K=None, Xt=None, backend=None):
    """Maximize g(alpha) over the box [0, cap]^n.

    Pass either a dense kernel matrix K or the difference-vector rows Xt
    (quadratic kernel recomputed on demand). Returns
    (alphas, f, sweeps, violation, converged) with f the exact gradient
    K @ alphas at exit.
    """
    margins = np.ascontiguousarray(margins, dtype=np.float64)
    n = margins.shape[0]
    kernels = get_kernels(backend)
    if K is not None:
        K = np.ascontiguousarray(K, dtype=np.float64)
        kdiag = np.ascontiguousarray(np.diag(K))
    else:
        Xt = np.ascontiguousarray(Xt, dtype=np.float64)
        kdiag = np.einsum("ij,ij->i", Xt, Xt) ** 2

    alphas = np.zeros(n)
    f = np.zeros(n)
    active = kdiag > 0.0
    rng = np.random.default_rng(cfg.shuffle_seed)
    shrink_tol = 10.0 * cfg.tolerance

    def exact_gradient():
        if K is not None:
            return K @ alphas
        supp = np.flatnonzero(alphas)
        if supp.size == 0:
            return np.zeros(n)
        rows = (Xt @ Xt[supp].T) ** 2
        return rows @ alphas[supp]

    sweeps = 0
    violation = np.inf
    converged = False
    while sweeps < cfg.max_iterations:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        order = rng.permutation(idx).astype(np.int64)
        if K is not None:
            kernels["sweep_cached"](K, alphas, f, order, margins, cap)
        else:
            kernels["sweep_ondemand"](Xt, kdiag, alphas, f, order, margins, cap)
        sweeps += 1

        viol = _kkt_violations(alphas, f, margins, cap)
        violation = float(viol[active].max()) if active.any() else 0.0
        if violation <= cfg.tolerance:
            # Re-check everything against the exactly recomputed gradient:
            # shrunk coefficients may have become violated meanwhile, and the
            # incrementally maintained f accumulates rounding.
            f = exact_gradient()
            viol = _kkt_violations(alphas, f, margins, cap)
            viol[kdiag <= 0.0] = 0.0
            violation = float(viol.max()) if n else 0.0
            if violation <= cfg.tolerance:
                converged = True
                break
            active = viol > 0.0
            continue

        # Shrink coefficients pinned at a bound with a comfortable margin.
        r = f - margins
        keep_lo = ~((alphas <= 0.0) & (r > shrink_tol))
        keep_hi = ~((alphas >= cap * _AT_BOUND) & (r < -shrink_tol))
        active &= keep_lo & keep_hi

    if not converged:
        f = exact_gradient()
        viol = _kkt_violations(alphas, f, margins, cap)
        viol[kdiag <= 0.0] = 0.0
        violation = float(viol.max()) if n else 0.0
        converged = violation <= cfg.tolerance

    return alphas, f, sweeps, violation, converged


def _dual_value(alphas, f, margins) -> float:
    return float(margins @ alphas - 0.5 * (alphas @ f))


def solve_dual(
    p: ExemplarProblem, cfg: SolverConfig | None = None, backend=None
) -> DualSolution:
    """Solve the fixed-bias quadratic-kernel dual of an exemplar problem.

    Degenerate negatives (equal to the query) keep alpha = 0; their kernel
    row is identically zero and they carry no constraint. Raises Infeasible
    when no nonzero difference vector exists, or when a hard-margin solve
    pins a coefficient at the internal cap.
    """
    cfg = cfg or SolverConfig()
    diffs = p.differences()
    nz = np.any(diffs != 0.0, axis=1)
    if not nz.any():
        raise Infeasible("every negative equals the query; no margin constraint exists")
    Xt = np.ascontiguousarray(diffs[nz])
    n = Xt.shape[0]
    margins = np.full(n, p.margin)
    cap = HARD_MARGIN_CAP if p.is_hard_margin else float(p.soft_margin_c)

    if n <= cfg.kernel_cache_limit:
        G = Xt @ Xt.T
        alphas, f, sweeps, violation, converged = solve_box_qp(
            margins, cap, cfg, K=G * G, backend=backend
        )
    else:
        alphas, f, sweeps, violation, converged = solve_box_qp(
            margins, cap, cfg, Xt=Xt, backend=backend
        )

    if p.is_hard_margin and np.any(alphas >= HARD_MARGIN_CAP * _AT_BOUND):
        raise Infeasible("hard-margin solve hit the internal coefficient cap")
    if not converged:
        warnings.warn(
            f"coordinate ascent stopped at violation {violation:.3e} after "
            f"{sweeps} sweeps (tolerance {cfg.tolerance:.1e})",
            RuntimeWarning,
        )

    full = np.zeros(p.n_negatives)
    full[nz] = alphas
    return DualSolution(
        alphas=full,
        iterations=sweeps,
        kkt_violation=violation,
        objective_value=_dual_value(alphas, f, margins),
        converged=converged,
    )


def dual_objective(p: ExemplarProblem, alphas) -> float:
    """g(alpha) for the problem's quadratic-kernel dual.

    At the optimum this equals half the squared Frobenius norm of the
    learned matrix.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (p.n_negatives,):
        raise ValueError(f"expected {p.n_negatives} alphas, got shape {alphas.shape}")
    if np.any(alphas < 0):
        raise ValueError("alphas must be nonnegative")
    diffs = p.differences()
    G = diffs @ diffs.T
    f = (G * G) @ alphas
    return _dual_value(alphas, f, np.full(p.n_negatives, p.margin))


ORACLE_MAX_N = 32
ORACLE_MAX_D = 8


def _pgd_ascend(K, margins, cap, coarse_tol, start=None, max_iter=200_000):
    """Nesterov-accelerated projected gradient ascent on the box dual."""
    n = margins.shape[0]
    step = 1.0 / max(float(np.linalg.eigvalsh(K)[-1]), 1e-30)
    alphas = np.zeros(n) if start is None else start.copy()
    y = alphas.copy()
    momentum = 1.0
    best_value = float(margins @ alphas - 0.5 * (alphas @ K @ alphas))
    it = 0
    for it in range(1, max_iter + 1):
        new = np.clip(y + step * (margins - K @ y), 0.0, cap)
        value = float(margins @ new - 0.5 * (new @ K @ new))
        if value < best_value:  # momentum overshot; restart from the iterate
            momentum = 1.0
            y = new
        else:
            nxt = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum**2))
            y = np.clip(new + ((momentum - 1.0) / nxt) * (new - alphas), 0.0, cap)
            momentum = nxt
            best_value = value
        alphas = new
        if it % 20 == 0:
            viol = float(_kkt_violations(alphas, K @ alphas, margins, cap).max())
            if viol <= coarse_tol:
                break
    return alphas, it


def _active_set_polish(K, margins, cap, alphas, tol, rounds=50):
    """Refine a near-solution by solving the KKT system on the free set."""
    alphas = alphas.copy()
    for _ in range(rounds):
        f = K @ alphas
        if float(_kkt_violations(alphas, f, margins, cap).max()) <= tol:
            break
        grad = margins - f
        at_lo = alphas <= 1e-12
        at_hi = alphas >= cap * _AT_BOUND
        free = (~at_lo & ~at_hi) | (at_lo & (grad > 0)) | (at_hi & (grad < 0))
        if not free.any():
            break
        idx = np.flatnonzero(free)
        rhs = margins[idx]
        pinned = np.flatnonzero(at_hi & ~free)
        if pinned.size:
            rhs = rhs - K[np.ix_(idx, pinned)] @ alphas[pinned]
        sol, *_ = np.linalg.lstsq(K[np.ix_(idx, idx)], rhs, rcond=None)
        new = alphas.copy()
        new[idx] = np.clip(sol, 0.0, cap)
        if np.allclose(new, alphas, rtol=0.0, atol=1e-15):
            break
        alphas = new
    return alphas


def oracle_solve(p: ExemplarProblem, tol: float = 1e-8) -> DualSolution:
    """Independent ground-truth solve for test-scale problems (n <= 32, d <= 8).

    Projected gradient ascent (step 1/lambda_max, Nesterov momentum with
    restart on objective decrease) identifies the active set, then a
    direct linear solve on the free coefficients polishes to the target
    violation. Shares no code with the coordinate-ascent path.
    """
    if p.n_negatives > ORACLE_MAX_N or p.dim > ORACLE_MAX_D:
        raise ScaleExceeded(
            f"oracle limited to n <= {ORACLE_MAX_N}, d <= {ORACLE_MAX_D}; "
            f"got n={p.n_negatives}, d={p.dim}"
        )
    diffs = p.differences()
    nz = np.any(diffs != 0.0, axis=1)
    if not nz.any():
        raise Infeasible("every negative equals the query")
    Z = diffs[nz]
    G = Z @ Z.T
    K = G * G
    n = K.shape[0]
    margins = np.full(n, p.margin)
    cap = HARD_MARGIN_CAP if p.is_hard_margin else float(p.soft_margin_c)

    alphas, it = _pgd_ascend(K, margins, cap, coarse_tol=max(tol, 1e-5))
    alphas = _active_set_polish(K, margins, cap, alphas, tol)
    f = K @ alphas
    violation = float(_kkt_violations(alphas, f, margins, cap).max())
    if violation > tol:  # polish stalled; grind on with plain PGD
        alphas, more = _pgd_ascend(K, margins, cap, coarse_tol=tol, start=alphas)
        it += more
        f = K @ alphas
        violation = float(_kkt_violations(alphas, f, margins, cap).max())

    full = np.zeros(p.n_negatives)
    full[nz] = alphas
    return DualSolution(
        alphas=full,
        iterations=it,
        kkt_violation=violation,
        objective_value=_dual_value(alphas, f, margins),
        converged=violation <= tol,
    )
