"""Build, evaluate, materialize and persist local metrics.

A solved dual yields the support form M = sum_k alpha_k u_k u_k^T with
u_k the difference vectors carrying nonzero coefficients. Distances are
evaluated in that low-rank form; the dense matrix is only materialized on
request and at bounded dimension.
"""

import io
import json
from dataclasses import asdict

import numpy as np

from .errors import DimensionLimit, DimensionMismatch, IterationLimit
from .model import ExemplarProblem, LocalMetric, TangentSet
from .solver import SolverConfig, solve_dual

# Coefficients below this fraction of the largest one are numerically zero
# and dropped, keeping the support-count rank bound meaningful.
SUPPORT_THRESHOLD = 1e-9

MATERIALIZE_DIM_LIMIT = 4096


def _support_from_alphas(alphas, directions):
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.size == 0 or alphas.max() <= 0.0:
        return np.empty(0), np.empty((0, directions.shape[1]))
    keep = alphas > SUPPORT_THRESHOLD * alphas.max()
    return alphas[keep], directions[keep]


def metric_from_solution(anchor, alphas, directions, basis_v=None) -> LocalMetric:
    """Package dual coefficients into support form, dropping numerically
    zero ones."""
    a, d = _support_from_alphas(alphas, np.asarray(directions, dtype=np.float64))
    return LocalMetric(anchor=anchor, alphas=a, directions=d, basis_v=basis_v)


def build_local_metric(
    p: ExemplarProblem, cfg: SolverConfig | None = None, basis_v: TangentSet | None = None
) -> LocalMetric:
    """Solve the exemplar problem and package the support-form metric."""
    cfg = cfg or SolverConfig()
    sol = solve_dual(p, cfg)
    if not sol.converged:
        raise IterationLimit(
            f"solve stopped at KKT violation {sol.kkt_violation:.3e} "
            f"after {sol.iterations} sweeps"
        )
    return metric_from_solution(p.query, sol.alphas, p.differences(), basis_v)


def mahal_distance_sq(m: LocalMetric, y) -> float:
    """Squared Mahalanobis distance from the metric's anchor to y.

    Computed in low-rank form without materializing the matrix. When a
    tangent basis is attached, the difference is first projected onto the
    basis's orthogonal complement (redundant in exact arithmetic, kept for
    numerical hygiene).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != m.anchor.shape:
        raise DimensionMismatch(f"expected dimension {m.dim}, got shape {y.shape}")
    diff = y - m.anchor
    if m.basis_v is not None and m.basis_v.size > 0:
        B = m.basis_v.ortho_basis
        diff = diff - B.T @ (B @ diff)
    if m.support_count == 0:
        return 0.0
    proj = m.directions @ diff
    return float(m.alphas @ (proj * proj))


def mahal_distance_sq_many(m: LocalMetric, Y: np.ndarray) -> np.ndarray:
    """Vectorized mahal_distance_sq over the rows of Y."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != m.dim:
        raise DimensionMismatch(f"expected (q, {m.dim}) queries, got {Y.shape}")
    D = Y - m.anchor
    if m.basis_v is not None and m.basis_v.size > 0:
        B = m.basis_v.ortho_basis
        D = D - (D @ B.T) @ B
    if m.support_count == 0:
        return np.zeros(Y.shape[0])
    P = D @ m.directions.T
    return (P * P) @ m.alphas


def materialize(m: LocalMetric, dim_limit: int = MATERIALIZE_DIM_LIMIT) -> np.ndarray:
    """Dense symmetric matrix sum_k alpha_k u_k u_k^T."""
    if m.dim > dim_limit:
        raise DimensionLimit(f"dimension {m.dim} exceeds materialization limit {dim_limit}")
    if m.support_count == 0:
        return np.zeros((m.dim, m.dim))
    M = (m.directions.T * m.alphas) @ m.directions
    return 0.5 * (M + M.T)


def metric_rank(m: LocalMetric, dim_limit: int = MATERIALIZE_DIM_LIMIT) -> int:
    """Numerical rank of the materialized matrix (threshold 1e-8 * s_max)."""
    if m.support_count == 0:
        return 0
    s = np.linalg.svd(materialize(m, dim_limit), compute_uv=False)
    return int(np.sum(s > 1e-8 * s[0]))


_MAGIC = b"LOCALMETRIC v1\n"


def save_metric(m: LocalMetric, path, cfg: SolverConfig | None = None) -> None:
    """Write a metric record file.

    Plain-text header (dimension, support count, tangent counts, config
    echo as JSON), blank line, then contiguous little-endian float64
    arrays: anchor, alphas, directions, raw tangents, tangent basis.
    Round-trips bit-exactly.
    """
    basis = m.basis_v
    header = io.BytesIO()
    header.write(_MAGIC)
    header.write(f"dim={m.dim}\n".encode())
    header.write(f"support={m.support_count}\n".encode())
    header.write(f"tangents_raw={0 if basis is None else basis.raw.shape[0]}\n".encode())
    header.write(f"tangents_basis={0 if basis is None else basis.size}\n".encode())
    cfg_echo = asdict(cfg) if cfg is not None else {}
    header.write(f"config={json.dumps(cfg_echo, sort_keys=True)}\n".encode())
    header.write(b"\n")
    with open(path, "wb") as fh:
        fh.write(header.getvalue())
        for arr in (m.anchor, m.alphas, m.directions):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        if basis is not None:
            fh.write(np.ascontiguousarray(basis.raw, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(basis.ortho_basis, dtype="<f8").tobytes())


def load_metric(path) -> tuple[LocalMetric, dict]:
    """Read a metric record file; returns (metric, config_echo)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_MAGIC):
        raise ValueError(f"{path}: not a metric record file")
    head_end = blob.index(b"\n\n", len(_MAGIC))
    fields = {}
    for line in blob[len(_MAGIC) : head_end].decode().splitlines():
        key, _, value = line.partition("=")
        fields[key] = value
    d = int(fields["dim"])
    k = int(fields["support"])
    n_raw = int(fields["tangents_raw"])
    n_basis = int(fields["tangents_basis"])
    cfg_echo = json.loads(fields.get("config", "{}"))

    body = blob[head_end + 2 :]
    expected = 8 * (d + k + k * d + n_raw * d + n_basis * d)
    if len(body) != expected:
        raise ValueError(f"{path}: payload is {len(body)} bytes, expected {expected}")

    def take(count, shape):
        nonlocal body
        arr = np.frombuffer(body[: 8 * count], dtype="<f8").reshape(shape).copy()
        body = body[8 * count :]
        return arr

    anchor = take(d, (d,))
    alphas = take(k, (k,))
    dirs = take(k * d, (k, d))
    basis = None
    if n_raw or n_basis:
        raw = take(n_raw * d, (n_raw, d))
        ob = take(n_basis * d, (n_basis, d))
        basis = TangentSet(raw=raw, ortho_basis=ob)
    return LocalMetric(anchor=anchor, alphas=alphas, directions=dirs, basis_v=basis), cfg_echo


def identity_metric(anchor) -> LocalMetric:
    """Metric whose materialization is the identity (support = unit axes).

    Its squared distance is the plain squared L2 distance; used as an
    oracle cross-check for nearest-neighbor search.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    d = anchor.shape[0]
    return LocalMetric(anchor=anchor, alphas=np.ones(d), directions=np.eye(d))
