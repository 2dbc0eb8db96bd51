"""Desk-scale reproduction of the evaluation protocols.

Per-exemplar metric learning over a training set, nearest-neighbor
classification with the local metrics, exemplar-SVM baselines, pair
verification on precomputed feature vectors, and solver benchmarking.
Everything is seeded and deterministic; wall-clock timings are the only
nondeterministic output and are reported separately from result files.
"""

import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._accel import AVAILABLE_BACKENDS, BACKEND, warm_up
from .dataio import LabeledSet
from .errors import InsufficientFolds
from .images import UNIT_SHIFTS, make_tangents, unflatten
from .invariance import build_invariant_metric, build_tangent_set
from .metric import build_local_metric, identity_metric, mahal_distance_sq_many
from .model import EvalReport, ExemplarProblem, HARD, LocalMetric
from .solver import SolverConfig, solve_box_qp, solve_dual

ALL_METHODS = ("l2", "esvm", "esvm_shifts", "local_mahal", "inv_mahal")

ALL_OTHER_CLASSES = "all-other-classes"


@dataclass(frozen=True)
class ExperimentConfig:
    train_limit: int = 2000
    test_limit: int = 1000
    k_neighbors: int = 3
    negatives_per_exemplar: object = 1000
    tangent_spec: tuple = UNIT_SHIFTS
    baseline_set: tuple = ALL_METHODS
    seed: int = 0
    workers: int = 1
    margin: float = 2.0
    soft_margin_c: object = HARD
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.k_neighbors < 1 or self.k_neighbors % 2 == 0:
            raise ValueError("k_neighbors must be odd and >= 1")
        if self.train_limit < 1 or self.test_limit < 1:
            raise ValueError("limits must be >= 1")
        unknown = set(self.baseline_set) - set(ALL_METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        object.__setattr__(self, "baseline_set", tuple(self.baseline_set))
        object.__setattr__(self, "tangent_spec", tuple(tuple(t) for t in self.tangent_spec))


def _exemplar_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _negatives_for(train: LabeledSet, index: int, cfg: ExperimentConfig) -> np.ndarray:
    other = np.flatnonzero(np.array(train.labels) != train.labels[index])
    if cfg.negatives_per_exemplar != ALL_OTHER_CLASSES:
        limit = int(cfg.negatives_per_exemplar)
        if other.size > limit:
            rng = np.random.default_rng(_exemplar_seed(cfg.seed, index))
            other = np.sort(rng.choice(other, size=limit, replace=False))
    return train.features[other]


def _tangent_rows(x0: np.ndarray, cfg: ExperimentConfig, image_shape):
    if image_shape is None:
        raise ValueError("tangent transformations need an image shape")
    img = unflatten(x0, *image_shape)
    return make_tangents(img, cfg.tangent_spec)


def learn_all_metrics(
    train: LabeledSet,
    cfg: ExperimentConfig,
    invariant: bool = False,
    image_shape=None,
):
    """One local metric per training datum; negatives are all other-class data,
    subsampled with per-exemplar seeding.

    Per-datum failures are recorded, not fatal: the result list holds None
    at failed indices and the failure map carries the messages.
    """
    if len(train.classes) < 2:
        raise ValueError("need at least two classes to form negatives")
    n = len(train)

    def learn_one(i):
        x0 = train.features[i]
        solver_cfg = SolverConfig(
            tolerance=cfg.solver.tolerance,
            max_iterations=cfg.solver.max_iterations,
            kernel_cache_limit=cfg.solver.kernel_cache_limit,
            shuffle_seed=_exemplar_seed(cfg.seed, i),
        )
        problem = ExemplarProblem(
            query=x0,
            negatives=_negatives_for(train, i, cfg),
            margin=cfg.margin,
            soft_margin_c=cfg.soft_margin_c,
        )
        if invariant:
            tset = build_tangent_set(x0, _tangent_rows(x0, cfg, image_shape) )
            return build_invariant_metric(problem, tset, solver_cfg)
        return build_local_metric(problem, solver_cfg)

    metrics = [None] * n
    failures = {}
    indices = range(n)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = pool.map(lambda i: _trap(learn_one, i), indices)
            for i, (m, err) in zip(indices, results):
                metrics[i] = m
                if err is not None:
                    failures[i] = err
    else:
        for i in indices:
            m, err = _trap(learn_one, i)
            metrics[i] = m
            if err is not None:
                failures[i] = err
    return metrics, failures


def _trap(fn, i):
    try:
        return fn(i), None
    except Exception as exc:  # per-datum failure, recorded not raised
        return None, f"{type(exc).__name__}: {exc}"


def _distance_matrix(metrics, queries: np.ndarray) -> np.ndarray:
    """(n_exemplars, n_queries) squared distances; failed exemplars get inf."""
    D = np.full((len(metrics), queries.shape[0]), np.inf)
    for i, m in enumerate(metrics):
        if m is not None:
            D[i] = mahal_distance_sq_many(m, queries)
    return D


def _vote(distances: np.ndarray, labels, classes, k: int) -> str:
    """Majority among the k nearest; ties by smaller member-distance sum,
    then smaller class index."""
    nearest = np.argsort(distances, kind="stable")[:k]
    tally = {}
    for idx in nearest:
        lab = labels[idx]
        count, dsum = tally.get(lab, (0, 0.0))
        tally[lab] = (count + 1, dsum + distances[idx])
    class_index = {c: i for i, c in enumerate(classes)}
    best = max(
        tally.items(),
        key=lambda kv: (kv[1][0], -kv[1][1], -class_index[kv[0]]),
    )
    return best[0]


def knn_classify(metrics, train_labels, query, k: int) -> str:
    """Classify one query by k-nearest local-metric distances."""
    usable = sum(m is not None for m in metrics)
    if k > usable:
        raise ValueError(f"k={k} exceeds the {usable} usable exemplars")
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    distances = _distance_matrix(metrics, q)[:, 0]
    classes = tuple(sorted(set(train_labels)))
    return _vote(distances, train_labels, classes, k)


def _predict_all(distance_matrix, labels, classes, k):
    return [
        _vote(distance_matrix[:, q], labels, classes, k)
        for q in range(distance_matrix.shape[1])
    ]


def _error_report(task, predictions, truth, cfg, timings, extras=None) -> EvalReport:
    truth = list(truth)
    wrong = sum(p != t for p, t in zip(predictions, truth))
    per_class = {}
    for cls in sorted(set(truth)):
        idx = [i for i, t in enumerate(truth) if t == cls]
        per_class[cls] = sum(predictions[i] != truth[i] for i in idx) / len(idx)
    echo = asdict(cfg)
    echo["tangent_spec"] = [list(t) for t in cfg.tangent_spec]
    return EvalReport(
        task_name=task,
        error_rate=wrong / len(truth) if truth else 0.0,
        per_class_errors=per_class,
        timings=timings,
        config_echo=echo,
        extras=extras or {},
    )


def exemplar_svm_baseline(
    x0,
    negatives,
    soft_c: float = 1.0,
    positives=None,
    solver_cfg: SolverConfig | None = None,
) -> np.ndarray:
    """Linear fixed-bias exemplar scorer: w with score(q) = w . (q - x0).

    Negatives enter as difference rows at margin 2; optional extra
    positives (e.g. shifted copies of x0) enter as negated difference rows
    at margin 0. Solved at soft margin (the linear problem need not be
    separable, unlike the quadratic one).
    """
    solver_cfg = solver_cfg or SolverConfig()
    x0 = np.asarray(x0, dtype=np.float64)
    diffs = np.asarray(negatives, dtype=np.float64) - x0
    diffs = diffs[np.any(diffs != 0.0, axis=1)]
    rows = [diffs]
    margins = [np.full(diffs.shape[0], 2.0)]
    if positives is not None and len(positives) > 0:
        pos = x0 - np.asarray(positives, dtype=np.float64)  # negated differences
        rows.append(pos)
        margins.append(np.zeros(pos.shape[0]))
    V = np.vstack(rows)
    m = np.concatenate(margins)
    alphas, _, _, _, _ = solve_box_qp(m, float(soft_c), solver_cfg, K=V @ V.T)
    return alphas @ V


def _esvm_distance_matrix(train, queries, cfg, image_shape, with_shifts):
    n = len(train)
    D = np.empty((n, queries.shape[0]))
    for i in range(n):
        x0 = train.features[i]
        positives = None
        if with_shifts:
            positives = _tangent_rows(x0, cfg, image_shape) if image_shape else None
        w = exemplar_svm_baseline(
            x0,
            _negatives_for(train, i, cfg),
            positives=positives,
            solver_cfg=SolverConfig(shuffle_seed=_exemplar_seed(cfg.seed, i)),
        )
        D[i] = (queries - x0) @ w
    return D


def evaluate_classification(
    train: LabeledSet, test: LabeledSet, cfg: ExperimentConfig, image_shape=None
) -> dict:
    """Error rate per method in cfg.baseline_set; returns method -> EvalReport."""
    if train.dim != test.dim:
        raise ValueError("train and test dimension differ")
    classes = tuple(sorted(set(train.labels)))
    reports = {}
    shared_metrics = {}

    for method in cfg.baseline_set:
        timings = {}
        extras = {}
        t0 = time.perf_counter()
        if method == "l2":
            sq = (
                np.sum(train.features**2, axis=1)[:, None]
                - 2.0 * train.features @ test.features.T
                + np.sum(test.features**2, axis=1)[None, :]
            )
            D = np.maximum(sq, 0.0)
        elif method in ("local_mahal", "inv_mahal"):
            invariant = method == "inv_mahal"
            metrics, failures = learn_all_metrics(
                train, cfg, invariant=invariant, image_shape=image_shape
            )
            shared_metrics[method] = metrics
            timings["learn"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            D = _distance_matrix(metrics, test.features)
            if failures:
                extras["learn_failures"] = len(failures)
        elif method in ("esvm", "esvm_shifts"):
            D = _esvm_distance_matrix(
                train, test.features, cfg, image_shape, method == "esvm_shifts"
            )
        else:
            raise ValueError(f"unknown method {method}")
        timings["score"] = time.perf_counter() - t0

        predictions = _predict_all(D, train.labels, classes, cfg.k_neighbors)
        reports[method] = _error_report(
            method, predictions, test.labels, cfg, timings, extras
        )
    return reports


def verify_pairs(pairs, negatives_bank, folds: int, cfg: ExperimentConfig):
    """Same/not-same verification on precomputed feature vectors.

    pairs: sequence of (vec_a, vec_b, same_bool). For each pair a metric is
    learned at each endpoint against the bank; the symmetric score is the
    mean of the two cross distances. The accept threshold is fit on the
    training folds and applied to the held-out fold.
    """
    if folds < 2:
        raise InsufficientFolds(f"need >= 2 folds, got {folds}")
    pairs = list(pairs)
    if len(pairs) < folds:
        raise InsufficientFolds(f"{len(pairs)} pairs cannot fill {folds} folds")
    bank = np.asarray(negatives_bank, dtype=np.float64)

    scores = np.empty(len(pairs))
    truth = np.array([bool(p[2]) for p in pairs])
    for i, (a, b, _) in enumerate(pairs):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        sc = 0.0
        for x0, other in ((a, b), (b, a)):
            solver_cfg = SolverConfig(shuffle_seed=_exemplar_seed(cfg.seed, i))
            prob = ExemplarProblem(
                query=x0, negatives=bank, margin=cfg.margin, soft_margin_c=cfg.soft_margin_c
            )
            metric = build_local_metric(prob, solver_cfg)
            sc += mahal_distance_sq_many(metric, other.reshape(1, -1))[0]
        scores[i] = 0.5 * sc

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(pairs))
    fold_slices = np.array_split(order, folds)
    fold_errors = []
    for held in range(folds):
        test_idx = fold_slices[held]
        train_idx = np.concatenate([fold_slices[j] for j in range(folds) if j != held])
        threshold = _best_threshold(scores[train_idx], truth[train_idx])
        pred = scores[test_idx] <= threshold
        fold_errors.append(float(np.mean(pred != truth[test_idx])))

    echo = asdict(cfg)
    echo["tangent_spec"] = [list(t) for t in cfg.tangent_spec]
    return EvalReport(
        task_name="verify_pairs",
        error_rate=float(np.mean(fold_errors)),
        per_class_errors={f"fold{j}": e for j, e in enumerate(fold_errors)},
        timings={},
        config_echo=echo,
        extras={"error_std": float(np.std(fold_errors)), "folds": folds},
    )


def _best_threshold(scores, truth) -> float:
    """Threshold (same iff score <= t) maximizing training accuracy."""
    uniq = np.unique(scores)
    candidates = np.concatenate(
        ([uniq[0] - 1.0], (uniq[:-1] + uniq[1:]) / 2.0, [uniq[-1] + 1.0])
    )
    best_t, best_acc = candidates[0], -1.0
    for t in candidates:
        acc = float(np.mean((scores <= t) == truth))
        if acc > best_acc:
            best_t, best_acc = t, acc
    return best_t


def _mnist_like(n: int, d: int, rng) -> np.ndarray:
    """Dense [0,1] vectors with MNIST-like sparsity (~80% zeros)."""
    vals = rng.random((n, d))
    mask = rng.random((n, d)) < 0.2
    return vals * mask


def bench_solver(sizes, cfg: SolverConfig | None = None, reps: int = 5, seed: int = 0,
                 backends=None) -> list[dict]:
    """Median wall-clock per solve over an (n, d) grid, per backend.

    Data is synthetic MNIST-like; the timed call is a full solve_dual.
    JIT compilation is warmed up before timing.
    """
    cfg = cfg or SolverConfig()
    reps = max(reps, 5)
    backends = list(backends) if backends else [BACKEND]
    rows = []
    machine = f"{platform.machine()}/{platform.processor() or 'unknown'}"
    for backend in backends:
        if backend not in AVAILABLE_BACKENDS:
            continue
        warm_up(backend)
        for n, d in sizes:
            rng = np.random.default_rng(seed)
            query = _mnist_like(1, d, rng)[0]
            negatives = _mnist_like(n, d, rng)
            problem = ExemplarProblem(query=query, negatives=negatives)
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                solve_dual(problem, cfg, backend=backend)
                times.append(time.perf_counter() - t0)
            rows.append(
                {
                    "backend": backend,
                    "n": n,
                    "d": d,
                    "median_sec": float(np.median(times)),
                    "min_sec": float(np.min(times)),
                    "max_sec": float(np.max(times)),
                    "reps": reps,
                    "machine": machine,
                }
            )
    return rows


def identity_metrics(train: LabeledSet) -> list[LocalMetric]:
    """Identity-matrix metric at every exemplar (L2 oracle cross-check)."""
    return [identity_metric(row) for row in train.features]


def write_reports_text(reports: dict, path) -> None:
    """Machine-parseable key=value report, one metric per line.

    Timings are deliberately excluded; they go to write_timings so result
    files are byte-identical across reruns with the same seed.
    """
    lines = []
    for method in sorted(reports):
        r = reports[method]
        lines.append(f"{method}.error_rate={r.error_rate!r}")
        for cls in sorted(r.per_class_errors):
            lines.append(f"{method}.class_error.{cls}={r.per_class_errors[cls]!r}")
        for key in sorted(r.extras):
            lines.append(f"{method}.{key}={r.extras[key]!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_reports_csv(reports: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method,error_rate\n")
        for method in sorted(reports):
            fh.write(f"{method},{reports[method].error_rate!r}\n")


def write_timings(reports: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for method in sorted(reports):
            for stage, secs in sorted(reports[method].timings.items()):
                fh.write(f"{method}.{stage}={secs!r}\n")


def random_small_problem(rng, max_n: int = 20, max_d: int = 5) -> ExemplarProblem:
    """Random test-scale problem with entries U[-1,1], degenerate rows removed."""
    n = int(rng.integers(2, max_n + 1))
    d = int(rng.integers(2, max_d + 1))
    query = rng.uniform(-1.0, 1.0, size=d)
    negatives = rng.uniform(-1.0, 1.0, size=(n, d))
    keep = np.any(negatives != query, axis=1)
    if not keep.any():
        negatives = query + np.eye(d)[:1]
    return ExemplarProblem(query=query, negatives=negatives[keep])


def run_oracle_check(trials: int = 100, seed: int = 0, include_invariant: bool = True):
    """Randomized solver-vs-oracle equivalence suite.

    Returns a list of (trial_index, message) for every violation of the
    1e-4 relative dual-objective agreement. The invariant leg checks the
    built metric's half squared norm against a projected-gradient solve in
    explicit complement-subspace coordinates.
    """
    from scipy.linalg import null_space

    from .metric import materialize
    from .solver import oracle_solve

    failures = []
    root = np.random.SeedSequence(seed)
    for trial, child in enumerate(root.spawn(trials)):
        rng = np.random.default_rng(child)
        p = random_small_problem(rng)
        ours = solve_dual(p, SolverConfig(shuffle_seed=trial))
        ref = oracle_solve(p)
        tol = 1e-4 * (1.0 + abs(ref.objective_value))
        if abs(ours.objective_value - ref.objective_value) > tol:
            failures.append(
                (trial, f"plain: {ours.objective_value} vs oracle {ref.objective_value}")
            )
        if not include_invariant:
            continue
        n_tangents = int(rng.integers(1, p.dim))
        tset = build_tangent_set(
            p.query, p.query + rng.uniform(-1.0, 1.0, size=(n_tangents, p.dim))
        )
        if tset.size >= p.dim:
            continue
        Cb = null_space(tset.ortho_basis if tset.size else np.zeros((1, p.dim)))
        coords = (p.negatives - p.query) @ Cb
        # Keep the comparison well conditioned: negatives nearly inside the
        # tangent span need coefficients ~ margin/|z|^4 and neither route
        # resolves them at a hard margin.
        keep = np.linalg.norm(coords, axis=1) >= 0.1
        if not keep.any():
            continue
        reduced = ExemplarProblem(
            query=p.query, negatives=p.negatives[keep], margin=p.margin
        )
        try:
            inv = build_invariant_metric(reduced, tset, SolverConfig(shuffle_seed=trial))
        except Exception as exc:
            failures.append((trial, f"invariant build failed: {exc}"))
            continue
        sub = ExemplarProblem(
            query=np.zeros(Cb.shape[1]), negatives=coords[keep], margin=p.margin
        )
        ref_inv = oracle_solve(sub)
        ours_obj = 0.5 * float(np.sum(materialize(inv) ** 2))
        tol = 1e-4 * (1.0 + abs(ref_inv.objective_value))
        if abs(ours_obj - ref_inv.objective_value) > tol:
            failures.append(
                (trial, f"invariant: {ours_obj} vs oracle {ref_inv.objective_value}")
            )
    return failures


def write_bench_table(rows: list[dict], path) -> None:
    cols = ["backend", "n", "d", "median_sec", "min_sec", "max_sec", "reps", "machine"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in cols) + "\n")
