"""Shared domain types and their validity rules.

All types are immutable after construction (arrays are marked read-only)
and safe to share across concurrent workers. Violating an invariant raises
at construction time, not at first use.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch

HARD = "hard"

_ORTHO_TOL = 1e-10


def as_feature_vector(values) -> np.ndarray:
    """Coerce to a read-only 1-D float64 vector, rejecting NaN/Inf and d < 1."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"feature vector must be 1-D with d >= 1, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("feature vector contains NaN or Inf")
    v = v.copy()
    v.flags.writeable = False
    return v


def as_vector_bank(rows, dim=None) -> np.ndarray:
    """Coerce to a read-only (n, d) float64 matrix of feature vectors."""
    m = np.asarray(rows, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a nonempty 2-D bank of vectors, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("vector bank contains NaN or Inf")
    if dim is not None and m.shape[1] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {m.shape[1]}")
    m = m.copy()
    m.flags.writeable = False
    return m


@dataclass(frozen=True)
class ExemplarProblem:
    """One query point plus its bank of negatives.

    soft_margin_c is the box cap C, or the string "hard" for a hard margin.
    """

    query: np.ndarray
    negatives: np.ndarray
    margin: float = 2.0
    soft_margin_c: object = HARD

    def __post_init__(self):
        q = as_feature_vector(self.query)
        object.__setattr__(self, "query", q)
        neg = as_vector_bank(self.negatives)
        if neg.shape[1] != q.shape[0]:
            raise DimensionMismatch(
                f"query has dimension {q.shape[0]}, negatives have {neg.shape[1]}"
            )
        object.__setattr__(self, "negatives", neg)
        if not (self.margin > 0):
            raise ValueError(f"margin must be positive, got {self.margin}")
        if self.soft_margin_c != HARD:
            c = float(self.soft_margin_c)
            if not (c > 0):
                raise ValueError(f"soft_margin_c must be positive, got {c}")
            object.__setattr__(self, "soft_margin_c", c)

    @property
    def n_negatives(self) -> int:
        return self.negatives.shape[0]

    @property
    def dim(self) -> int:
        return self.query.shape[0]

    @property
    def is_hard_margin(self) -> bool:
        return self.soft_margin_c == HARD

    def differences(self) -> np.ndarray:
        """The difference vectors x_i - x0, one per negative."""
        return self.negatives - self.query


def validate_problem(p: ExemplarProblem) -> list[str]:
    """Return warnings for degenerate negatives (equal to the query).

    Dimension mismatches are hard errors and already rejected when the
    problem is constructed.
    """
    diffs = p.differences()
    warnings = []
    for i in np.flatnonzero(~np.any(diffs != 0.0, axis=1)):
        warnings.append(f"degenerate negative at index {i}")
    return warnings


@dataclass(frozen=True)
class DualSolution:
    """Coefficients of the dual solve, one alpha per negative."""

    alphas: np.ndarray
    iterations: int
    kkt_violation: float
    objective_value: float
    converged: bool = True

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64).copy()
        if a.ndim != 1:
            raise ValueError("alphas must be 1-D")
        if np.any(a < 0):
            raise ValueError("alphas must be nonnegative")
        a.flags.writeable = False
        object.__setattr__(self, "alphas", a)
        if self.kkt_violation < 0:
            raise ValueError("kkt_violation must be nonnegative")


@dataclass(frozen=True)
class TangentSet:
    """Transformation difference vectors and an orthonormal basis of their span."""

    raw: np.ndarray
    ortho_basis: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64).copy()
        basis = np.asarray(self.ortho_basis, dtype=np.float64).copy()
        if raw.ndim != 2:
            raise ValueError("raw tangents must form a 2-D array")
        if basis.ndim != 2 or basis.shape[1] != raw.shape[1]:
            raise ValueError("basis must be 2-D and share the tangents' dimension")
        if basis.shape[0] > 0:
            gram = basis @ basis.T
            if not np.allclose(gram, np.eye(basis.shape[0]), atol=_ORTHO_TOL):
                raise ValueError("ortho_basis is not orthonormal within 1e-10")
        raw.flags.writeable = False
        basis.flags.writeable = False
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "ortho_basis", basis)

    @property
    def dim(self) -> int:
        return self.raw.shape[1]

    @property
    def size(self) -> int:
        return self.ortho_basis.shape[0]


@dataclass(frozen=True)
class LocalMetric:
    """Learned PSD matrix in low-rank support form, anchored at one datum.

    The implied matrix is sum_k alphas[k] * outer(directions[k], directions[k]);
    it is PSD by construction and its rank is at most the support count.
    """

    anchor: np.ndarray
    alphas: np.ndarray
    directions: np.ndarray
    basis_v: TangentSet | None = None

    def __post_init__(self):
        anchor = as_feature_vector(self.anchor)
        object.__setattr__(self, "anchor", anchor)
        a = np.asarray(self.alphas, dtype=np.float64).copy()
        dirs = np.asarray(self.directions, dtype=np.float64).copy()
        if dirs.ndim != 2:
            dirs = dirs.reshape(len(a), -1) if len(a) else dirs.reshape(0, anchor.size)
        if a.ndim != 1 or dirs.shape[0] != a.shape[0]:
            raise ValueError("alphas and directions must align one-to-one")
        if dirs.shape[0] > 0 and dirs.shape[1] != anchor.shape[0]:
            raise DimensionMismatch(
                f"anchor has dimension {anchor.shape[0]}, directions {dirs.shape[1]}"
            )
        if np.any(a <= 0):
            raise ValueError("support alphas must be strictly positive")
        if self.basis_v is not None and self.basis_v.dim != anchor.shape[0]:
            raise DimensionMismatch("tangent basis dimension differs from anchor")
        a.flags.writeable = False
        dirs.flags.writeable = False
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "directions", dirs)

    @property
    def dim(self) -> int:
        return self.anchor.shape[0]

    @property
    def support_count(self) -> int:
        return self.alphas.shape[0]


@dataclass(frozen=True)
class EvalReport:
    """Results of one evaluation task: error rates, per-class breakdown, timings."""

    task_name: str
    error_rate: float
    per_class_errors: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.error_rate <= 1.0):
            raise ValueError(f"error_rate must be in [0,1], got {self.error_rate}")
