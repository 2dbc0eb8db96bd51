"""Command-line front door.

Subcommands: learn, knn-eval, verify-pairs, bench, oracle-check. All
commands are batch-mode and deterministic given --seed. Exit codes:
0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import sys
import time

import numpy as np

from . import dataio, harness, images
from ._accel import AVAILABLE_BACKENDS, BACKEND
from .errors import LocalMahalError
from .invariance import build_invariant_metric, build_tangent_set, tangent_set_from_raw
from .metric import build_local_metric, mahal_distance_sq_many, metric_rank, save_metric
from .model import ExemplarProblem, HARD
from .solver import SolverConfig


def _expand_args_files(argv):
    """Replace every '--args-file FILE' with the file's lines (one flag each)."""
    out = []
    i = 0
    while i < len(argv):
        if argv[i] == "--args-file":
            if i + 1 >= len(argv):
                raise SystemExit(2)
            with open(argv[i + 1], "r", encoding="utf-8") as fh:
                out.extend(line.strip() for line in fh if line.strip())
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def _soft_c(value):
    if value == HARD:
        return HARD
    return float(value)


def _load_query_and_negatives(args, parser):
    table = dataio.read_feature_table(args.negatives)
    feats = table.features
    try:
        qidx = int(args.query)
        if not 0 <= qidx < feats.shape[0]:
            parser.error(f"--query index {qidx} out of range")
        query = feats[qidx]
        negatives = np.delete(feats, qidx, axis=0)
    except ValueError:
        query = dataio.read_feature_table(args.query).features[0]
        negatives = feats
    return query, negatives


def cmd_learn(args, parser) -> int:
    query, negatives = _load_query_and_negatives(args, parser)
    problem = ExemplarProblem(
        query=query, negatives=negatives, margin=args.margin, soft_margin_c=args.soft_c
    )
    cfg = SolverConfig(shuffle_seed=args.seed)

    tset = None
    if args.tangents_file:
        tset = tangent_set_from_raw(dataio.read_feature_table(args.tangents_file).features)
    elif args.tangents:
        if not args.image_shape:
            parser.error("--tangents needs --image-shape HxW")
        h, w = (int(v) for v in args.image_shape.lower().split("x"))
        img = images.unflatten(query, h, w)
        rows = images.make_tangents(img, images.parse_transforms(args.tangents))
        tset = build_tangent_set(query, rows)

    if tset is not None and tset.size == 0:
        tset = None  # blank tangents: identical to a plain run
    t0 = time.perf_counter()
    if tset is not None:
        metric = build_invariant_metric(problem, tset, cfg)
    else:
        metric = build_local_metric(problem, cfg)
    elapsed = time.perf_counter() - t0

    save_metric(metric, args.out, cfg)
    # Residual margin violation of the built metric over its negatives.
    dists = mahal_distance_sq_many(metric, problem.negatives)
    degenerate = ~np.any(problem.differences() != 0.0, axis=1)
    if tset is not None:
        from .invariance import project_complement

        degenerate |= ~np.any(project_complement(tset, problem.differences()) != 0.0, axis=1)
    residual = float(np.maximum(args.margin - dists[~degenerate], 0.0).max()) if (~degenerate).any() else 0.0
    print(f"support_count={metric.support_count}")
    print(f"rank={metric_rank(metric)}")
    print(f"solve_seconds={elapsed:.4f}")
    print(f"margin_violation={residual:.3e}")
    return 0


def _load_classification_data(args, parser):
    if args.table:
        if not args.test_table:
            parser.error("--table needs --test-table")
        return dataio.read_feature_table(args.table), dataio.read_feature_table(args.test_table), None
    needed = (args.train_images, args.train_labels, args.test_images, args.test_labels)
    if not all(needed):
        parser.error("need --table/--test-table or all four IDX flags")
    train_imgs = dataio.read_idx_images(args.train_images)
    train_labels = dataio.read_idx_labels(args.train_labels)
    test_imgs = dataio.read_idx_images(args.test_images)
    test_labels = dataio.read_idx_labels(args.test_labels)
    train_imgs, train_labels = train_imgs[: args.train_limit], train_labels[: args.train_limit]
    test_imgs, test_labels = test_imgs[: args.test_limit], test_labels[: args.test_limit]
    if args.deskew:
        train_imgs = [images.deskew(im) for im in train_imgs]
        test_imgs = [images.deskew(im) for im in test_imgs]
    shape = (train_imgs[0].height, train_imgs[0].width)
    return (
        dataio.images_to_set(train_imgs, train_labels),
        dataio.images_to_set(test_imgs, test_labels),
        shape,
    )


def cmd_knn_eval(args, parser) -> int:
    if args.k < 1 or args.k % 2 == 0:
        parser.error("--k must be odd and >= 1")
    train, test, shape = _load_classification_data(args, parser)
    train = dataio.LabeledSet(train.features[: args.train_limit], train.labels[: args.train_limit])
    test = dataio.LabeledSet(test.features[: args.test_limit], test.labels[: args.test_limit])
    negatives = (
        args.negatives if args.negatives == harness.ALL_OTHER_CLASSES else int(args.negatives)
    )
    cfg = harness.ExperimentConfig(
        train_limit=args.train_limit,
        test_limit=args.test_limit,
        k_neighbors=args.k,
        negatives_per_exemplar=negatives,
        tangent_spec=tuple(images.parse_transforms(args.tangents)),
        baseline_set=tuple(m.strip() for m in args.methods.split(",") if m.strip()),
        seed=args.seed,
        workers=args.workers,
        soft_margin_c=args.soft_c,
    )
    reports = harness.evaluate_classification(train, test, cfg, image_shape=shape)
    harness.write_reports_text(reports, args.report)
    harness.write_reports_csv(reports, args.report + ".csv")
    harness.write_timings(reports, args.report + ".timings")
    for method in sorted(reports):
        print(f"{method}: error_rate={reports[method].error_rate:.4f}")
    return 0


def cmd_verify_pairs(args, parser) -> int:
    if args.folds < 2:
        parser.error("--folds must be >= 2")
    feats = dataio.read_feature_table(args.features).features
    bank = dataio.read_feature_table(args.bank).features
    pairs = []
    with open(args.pairs, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            same, ia, ib = line.split(",")
            pairs.append((feats[int(ia)], feats[int(ib)], bool(int(same))))
    cfg = harness.ExperimentConfig(seed=args.seed, soft_margin_c=args.soft_c)
    report = harness.verify_pairs(pairs, bank, args.folds, cfg)
    harness.write_reports_text({"verify_pairs": report}, args.report)
    print(
        f"error_rate={report.error_rate:.4f} "
        f"+- {report.extras['error_std']:.4f} over {args.folds} folds"
    )
    return 0


def cmd_bench(args, parser) -> int:
    sizes = []
    for part in args.sizes.split(";"):
        part = part.strip()
        if part:
            n, d = part.lower().split("x")
            sizes.append((int(n), int(d)))
    if not sizes:
        parser.error("--sizes is empty")
    backends = AVAILABLE_BACKENDS if args.compare_backends else [BACKEND]
    rows = harness.bench_solver(sizes, reps=args.reps, seed=args.seed, backends=backends)
    if args.out:
        harness.write_bench_table(rows, args.out)
    for row in rows:
        print(
            f"backend={row['backend']} n={row['n']} d={row['d']} "
            f"median={row['median_sec']:.4f}s min={row['min_sec']:.4f}s"
        )
    return 0


def cmd_oracle_check(args, parser) -> int:
    failures = harness.run_oracle_check(trials=args.trials, seed=args.seed)
    if failures:
        for trial, message in failures:
            print(f"FAIL trial={trial} seed={args.seed}: {message}")
        return 1
    print(f"ok: {args.trials} trials, solver matches oracle within 1e-4 relative")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="localmahal",
        description="Local Mahalanobis metric learning from negative examples",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="learn one local metric and write a metric file")
    p.add_argument("--negatives", required=True, help="feature table of negatives")
    p.add_argument("--query", required=True, help="row index into --negatives, or a table file")
    p.add_argument("--margin", type=float, default=2.0)
    p.add_argument("--soft-c", type=_soft_c, default=HARD, help="box cap C, or 'hard'")
    p.add_argument("--tangents", help="descriptors, e.g. 'shift:1,0;rotate:5' or 'unit-shifts'")
    p.add_argument("--tangents-file", help="feature table of raw tangent vectors")
    p.add_argument("--image-shape", help="HxW, required with --tangents")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="metric file to write")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("knn-eval", help="local-metric kNN classification experiment")
    p.add_argument("--train-images")
    p.add_argument("--train-labels")
    p.add_argument("--test-images")
    p.add_argument("--test-labels")
    p.add_argument("--table", help="training feature table (instead of IDX)")
    p.add_argument("--test-table")
    p.add_argument("--methods", default="l2,local_mahal")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--train-limit", type=int, default=2000)
    p.add_argument("--test-limit", type=int, default=1000)
    p.add_argument("--negatives", default="1000", help="count or 'all-other-classes'")
    p.add_argument("--tangents", default="unit-shifts")
    p.add_argument("--deskew", action="store_true")
    p.add_argument("--soft-c", type=_soft_c, default=HARD)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_knn_eval)

    p = sub.add_parser("verify-pairs", help="same/not-same pair verification")
    p.add_argument("--features", required=True, help="feature table the pairs index into")
    p.add_argument("--pairs", required=True, help="CSV: same(0/1),index_a,index_b")
    p.add_argument("--bank", required=True, help="feature table of negatives")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--soft-c", type=_soft_c, default=HARD)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_verify_pairs)

    p = sub.add_parser("bench", help="solver wall-clock benchmark")
    p.add_argument("--sizes", default="5000x784", help="semicolon list of NxD")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--compare-backends", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle-check", help="randomized solver-vs-oracle suite")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        argv = _expand_args_files(argv)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except LocalMahalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
