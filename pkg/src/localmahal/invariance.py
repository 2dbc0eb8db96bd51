"""Transformation-invariant local metrics.

Declared transformations contribute difference vectors T_j(x0) - x0; the
learned matrix must annihilate their span V. That is achieved by solving
the standard problem on the negatives' projections onto the orthogonal
complement of V: the resulting support directions live in the complement,
so M v = 0 for every v in V without any extra constraint machinery.
"""

import warnings

import numpy as np

from .errors import DimensionMismatch, Infeasible, IterationLimit
from .metric import _support_from_alphas
from .model import ExemplarProblem, LocalMetric, TangentSet, as_feature_vector, as_vector_bank
from .solver import SolverConfig, solve_dual

# Tangents whose Gram-Schmidt residual falls below this fraction of their
# original norm are linearly dependent on earlier ones and discarded.
DEPENDENT_TANGENT_TOL = 1e-10


def orthonormalize(rows: np.ndarray, drop_tol: float = DEPENDENT_TANGENT_TOL) -> np.ndarray:
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    Returns an orthonormal basis of the row span; near-dependent rows
    (residual norm <= drop_tol * original norm) are discarded.
    """
    basis = []
    for row in np.asarray(rows, dtype=np.float64):
        norm0 = np.linalg.norm(row)
        if norm0 == 0.0:
            continue
        v = row.copy()
        for _ in range(2):
            for b in basis:
                v -= (v @ b) * b
        norm = np.linalg.norm(v)
        if norm <= drop_tol * norm0:
            continue
        basis.append(v / norm)
    if not basis:
        return np.empty((0, rows.shape[1] if rows.ndim == 2 else len(rows)))
    return np.array(basis)


def build_tangent_set(x0, transformed) -> TangentSet:
    """TangentSet from transformation outputs T_j(x0)."""
    x0 = as_feature_vector(x0)
    transformed = np.asarray(transformed, dtype=np.float64)
    if transformed.size == 0:
        raw = np.empty((0, x0.shape[0]))
    else:
        raw = as_vector_bank(transformed, dim=x0.shape[0]) - x0
    return TangentSet(raw=raw, ortho_basis=orthonormalize(raw))


def tangent_set_from_raw(raw) -> TangentSet:
    """TangentSet directly from difference vectors T_j(x0) - x0."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raw = raw.reshape(0, raw.shape[1] if raw.ndim == 2 else 1)
    return TangentSet(raw=raw, ortho_basis=orthonormalize(raw))


def project_complement(t: TangentSet, v) -> np.ndarray:
    """Project v onto the orthogonal complement of the tangent span."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != t.dim:
        raise DimensionMismatch(f"expected dimension {t.dim}, got shape {v.shape}")
    B = t.ortho_basis
    if B.shape[0] == 0:
        return v.copy()
    return v - (v @ B.T) @ B if v.ndim == 2 else v - B.T @ (B @ v)


def build_invariant_metric(
    p: ExemplarProblem, t: TangentSet, cfg: SolverConfig | None = None
) -> LocalMetric:
    """Learn a local metric that annihilates the declared tangent directions.

    Negatives are projected onto the complement once, at assembly time.
    Raises Infeasible when every projected negative vanishes (all negatives
    lie in x0 + V). A hard-margin solve that fails to converge falls back
    to a soft margin with C = 1 and a warning.
    """
    cfg = cfg or SolverConfig()
    if t.dim != p.dim:
        raise DimensionMismatch(f"tangents have dimension {t.dim}, problem {p.dim}")
    D = p.differences()
    Z = project_complement(t, D)
    # Rows that are numerically inside the span project to rounding noise;
    # treat them as exact zeros so they cannot masquerade as separable.
    norms0 = np.linalg.norm(D, axis=1)
    residual = np.linalg.norm(Z, axis=1)
    Z = np.where((residual <= 1e-9 * norms0)[:, None], 0.0, Z)
    if not np.any(Z != 0.0):
        raise Infeasible("all negatives lie in the tangent span around the query")
    projected = ExemplarProblem(
        query=np.zeros(p.dim),
        negatives=Z,
        margin=p.margin,
        soft_margin_c=p.soft_margin_c,
    )
    try:
        sol = solve_dual(projected, cfg)
        if not sol.converged:
            raise IterationLimit("projected solve did not converge")
    except (Infeasible, IterationLimit):
        if not p.is_hard_margin:
            raise
        warnings.warn(
            "projected problem not separable at hard margin; retrying with soft margin C=1",
            RuntimeWarning,
        )
        soft = ExemplarProblem(
            query=np.zeros(p.dim), negatives=Z, margin=p.margin, soft_margin_c=1.0
        )
        sol = solve_dual(soft, cfg)
    alphas, dirs = _support_from_alphas(sol.alphas, Z)
    return LocalMetric(anchor=p.query, alphas=alphas, directions=dirs, basis_v=t)
