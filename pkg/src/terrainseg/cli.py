"""``terrainseg`` command line.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import dataset, evaluation, features, mlp, reduce, segmentation, svm, synth
from .featureset import FeatureSet, read_csv, write_csv
from .imaging import ImageError, read_pnm, write_pgm, write_ppm
from .pipeline import Classifier, ConfigError, PipelineConfig, segment_image, train_classifier

log = logging.getLogger("terrainseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _mapper(jobs: int):
    """Order-preserving map over a thread pool (the numba kernels release the GIL)."""
    if jobs <= 1:
        return lambda fn, items: list(map(fn, items))

    def run(fn, items):
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))

    return run


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def _read_set(path, cfg: PipelineConfig) -> FeatureSet:
    fs = read_csv(path)
    want = features.DIMENSIONS[cfg.variant]
    if fs.dim == want:
        fs.variant = cfg.variant
        return fs
    matches = [v for v, d in features.DIMENSIONS.items() if d == fs.dim]
    if len(matches) == 1:
        fs.variant = matches[0]
        return fs
    raise dataset.DatasetError(
        f"{path}: {fs.dim}-dim descriptors do not match variant {cfg.variant}; pass --variant"
    )


def _parse_structure(text):
    try:
        parts = [int(p) for p in text.replace(",", "-").split("-")]
    except ValueError:
        raise UsageError(f"bad structure {text!r}; expected e.g. 36-60-60-5") from None
    if len(parts) != 4 or min(parts) < 1:
        raise UsageError(f"bad structure {text!r}; expected four positive layer sizes")
    return parts


def _parse_pow2_range(text):
    """``lo:hi`` exponents (inclusive) or a comma list of values."""
    try:
        if ":" in text:
            lo, hi = (int(v) for v in text.split(":"))
            return [2.0**e for e in range(lo, hi + 1)]
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"bad grid {text!r}; expected lo:hi exponents or a comma list") from None


def _build_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    d = cfg.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    if getattr(args, "variant", None):
        d["variant"] = args.variant
    if getattr(args, "box", None) is not None:
        d["box"] = args.box
    if getattr(args, "threshold", None) is not None:
        d["detector"]["blob_threshold"] = args.threshold
    if getattr(args, "drop_fraction", None) is not None:
        d["outlier"]["drop_fraction"] = args.drop_fraction
    if getattr(args, "radius_factor", None) is not None:
        d["splat"]["radius_factor"] = args.radius_factor
    if getattr(args, "min_weight", None) is not None:
        d["splat"]["min_weight"] = args.min_weight
    clf = d["classifier"]
    for name in ("k", "h", "algorithm", "epochs", "patience", "gamma", "C", "tol"):
        val = getattr(args, name, None)
        if val is not None:
            clf[name] = val
    if getattr(args, "classifier", None):
        clf["kind"] = args.classifier
    if getattr(args, "knn_mode", None):
        clf["knn_mode"] = args.knn_mode
    return PipelineConfig.from_dict(d)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg):
    tr, te = synth.generate_corpus(args.out_dir, args.train, args.test, cfg.seed, args.width, args.height)
    print(f"wrote {args.train} training and {args.test} test scenes to {args.out_dir}")
    print(tr)
    print(te)


def cmd_extract(args, cfg):
    if args.output and len(args.images) != 1:
        raise UsageError("--output takes a single image; use --out-dir for several")
    out_dir = args.out_dir or "."
    if not args.output:
        os.makedirs(out_dir, exist_ok=True)

    def one(path):
        fs = features.extract(_gray(path), cfg.variant, cfg.detector, cfg.box)
        dest = args.output or os.path.join(out_dir, _stem(path) + ".csv")
        write_csv(dest, fs)
        return dest, len(fs)

    for dest, n in args.mapper(one, args.images):
        print(f"{dest}\t{n}")


def _gray(path):
    from .imaging import to_grayscale

    try:
        return to_grayscale(read_pnm(path))
    except (OSError, ImageError, ValueError) as exc:
        raise dataset.DatasetError(f"{path}: {exc}") from None


def cmd_preprocess(args, cfg):
    pairs = dataset.read_manifest(args.manifest)

    def one(pair):
        img, mask_path = pair
        gray = _gray(img)
        fs = features.extract(gray, cfg.variant, cfg.detector, cfg.box)
        mask = dataset.load_mask(mask_path)
        if mask.shape != gray.shape:
            raise dataset.DatasetError(f"{mask_path}: mask size differs from {img}")
        return dataset.label_features(fs, mask)

    fs = FeatureSet.concat(args.mapper(one, pairs))
    before = len(fs)
    if not args.keep_outliers:
        fs = dataset.eliminate_outliers(fs, cfg.outlier)
    write_csv(args.output, fs)
    log.info("kept %d of %d labelled features", len(fs), before)
    print(f"{args.output}\t{len(fs)}")
    if args.dense_split:
        dense, sparse = dataset.dense_split(fs, args.dense_split)
        base, ext = os.path.splitext(args.output)
        for suffix, part in (("_dense", dense), ("_nondense", sparse)):
            write_csv(base + suffix + (ext or ".csv"), part)
            print(f"{base + suffix + (ext or '.csv')}\t{len(part)}")


def cmd_train(args, cfg):
    fs = dataset.labeled_only(_read_set(args.features, cfg))
    if args.structure:
        s = _parse_structure(args.structure)
        if s[0] != fs.dim or s[-1] != fs.class_count:
            raise UsageError(f"structure {args.structure} must start with {fs.dim} and end with {fs.class_count}")
        d = cfg.to_dict()
        d["classifier"]["hidden"] = s[1:3]
        cfg = PipelineConfig.from_dict(d)
    val = _read_set(args.validation, cfg) if args.validation else None
    clf = train_classifier(fs, cfg.classifier, cfg.seed, val)
    clf.save(args.output)
    print(f"{args.output}\t{clf.kind}\tparameters={clf.n_params}")
    if clf.kind == "svm":
        n_sv = sum(len(m.coef) for m in clf.model.machines.values())
        print(f"machines={len(clf.model.machines)}\tsupport_vectors={n_sv}")


def cmd_grid_search(args, cfg):
    fs = dataset.labeled_only(_read_set(args.features, cfg))
    gammas = _parse_pow2_range(args.gammas)
    Cs = _parse_pow2_range(args.Cs)
    skip = []
    for cell in args.skip or []:
        try:
            g, c = cell.split(",")
            skip.append((float(g), float(c)))
        except ValueError:
            raise UsageError(f"bad --skip cell {cell!r}; expected gamma,C") from None
    rep = svm.grid_search(
        fs.descriptors, fs.labels, gammas, Cs, seed=cfg.seed, holdout=args.holdout,
        folds=args.folds, skip=skip, class_count=fs.class_count, tol=cfg.classifier.tol,
    )
    text = svm.format_grid_csv(rep)
    with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    sys.stdout.write(text)
    if rep.best:
        g, c, acc = rep.best
        print(f"best gamma={g!r} C={c!r} accuracy={acc:.2f}")


def cmd_classify(args, cfg):
    clf = Classifier.load(args.model)
    fs = read_csv(args.features)
    cls, scores = clf.predict(fs.descriptors)
    m = clf.class_count
    with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index,class," + ",".join(f"s{i}" for i in range(m)) + "\n")
        for i, (c, s) in enumerate(zip(cls, scores)):
            fh.write(f"{i},{int(c)}," + ",".join("%.9g" % v for v in s) + "\n")
    labelled = fs.labels >= 0
    if labelled.any():
        err = evaluation.feature_error_rate(cls[labelled], fs.labels[labelled])
        print(f"{args.output}\t{len(fs)}\terror={err:.2f}")
    else:
        print(f"{args.output}\t{len(fs)}")


def _model_config(clf, args, cfg):
    """Follow the model's descriptor variant unless one was asked for explicitly."""
    if clf.variant and not args.variant and not args.config and clf.variant != cfg.variant:
        d = cfg.to_dict()
        d["variant"] = clf.variant
        return PipelineConfig.from_dict(d)
    return cfg


def cmd_segment(args, cfg):
    clf = Classifier.load(args.model)
    cfg = _model_config(clf, args, cfg)
    os.makedirs(args.out_dir, exist_ok=True)

    def one(path):
        seg = segment_image(path, clf, cfg)
        rgb = read_pnm(path)
        overlay = segmentation.render_overlay(rgb, seg.labels)
        base = os.path.join(args.out_dir, _stem(path))
        write_ppm(base + "_overlay.ppm", overlay)
        write_pgm(base + "_labels.pgm", seg.labels)
        return base, len(seg.features)

    for base, n in args.mapper(one, args.images):
        print(f"{base}_overlay.ppm\t{base}_labels.pgm\t{n}")


def cmd_evaluate(args, cfg):
    from .pipeline import image_feature_error

    clf = Classifier.load(args.model)
    cfg = _model_config(clf, args, cfg)
    pairs = dataset.read_manifest(args.manifest)
    label = args.label or f"{cfg.variant}-{clf.kind.upper()}"
    rates = args.mapper(lambda p: image_feature_error(p[0], p[1], clf, cfg), pairs)
    reports = [evaluation.EvalReport.from_rates(label, rates)]
    if args.pixel:

        def pix(p):
            seg = segment_image(p[0], clf, cfg)
            err, _ = evaluation.pixel_error_rate(seg.labels, dataset.load_mask(p[1]))
            return err

        reports.append(evaluation.EvalReport.from_rates(label + "-pixel", args.mapper(pix, pairs)))
    with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(evaluation.format_report_csv(reports))
    sys.stdout.write(evaluation.format_report_table(reports))


def cmd_reduce(args, cfg):
    fs = read_csv(args.features)
    if len(fs) == 0:
        raise dataset.DatasetError(f"{args.features}: no features")

    if args.method == "pca":
        model = reduce.pca_fit(fs.descriptors, 3)
        project = lambda X: reduce.pca_transform(model, X)  # noqa: E731
        log.info("explained variance ratio %s", model.explained_variance_ratio)
    else:
        bn = reduce.bottleneck_fit(fs.descriptors, 3, args.epochs, cfg.seed)
        project = bn.encode
        log.info("reconstruction error %.6g -> %.6g", bn.trace[0], bn.trace[-1])

    def write(path, part):
        Z = project(part.descriptors) if len(part) else np.zeros((0, 3))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(reduce.format_point_cloud(Z, part.labels))
        print(f"{path}\t{len(part)}")

    write(args.output, fs)
    if args.dense_split:
        dense, sparse = dataset.dense_split(fs, args.dense_split)
        base, ext = os.path.splitext(args.output)
        write(base + "_dense" + (ext or ".csv"), dense)
        write(base + "_nondense" + (ext or ".csv"), sparse)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    def globals_(defaults):
        parser = _Parser(add_help=False)
        g = parser.add_argument_group("global options")
        sup = {} if defaults else {"default": argparse.SUPPRESS}
        g.add_argument("--config", help="pipeline config (JSON); flags override its values", **sup)
        g.add_argument("--seed", type=int, help="random seed (default: config value, 0)", **sup)
        g.add_argument("--jobs", type=int, help="worker threads for per-image work", **({"default": 1} if defaults else sup))
        g.add_argument("--verbose", "-v", action="count", **({"default": 0} if defaults else sup))
        return parser

    # global flags are accepted before or after the command; the copy on each
    # command suppresses its defaults so it never overwrites an earlier value
    common = globals_(False)
    p = _Parser(prog="terrainseg", description="Texture-based terrain segmentation.", parents=[globals_(True)])
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_, parents=[common])
        sp.set_defaults(func=fn)
        return sp

    def feature_opts(sp):
        sp.add_argument("--variant", choices=sorted(features.VARIANTS))
        sp.add_argument("--box", type=int, help="grid-thinning box size in pixels")
        sp.add_argument("--threshold", type=float, help="blob response threshold")

    sp = add("synth", cmd_synth, "generate a synthetic terrain corpus")
    sp.add_argument("out_dir")
    sp.add_argument("--train", type=int, default=20)
    sp.add_argument("--test", type=int, default=10)
    sp.add_argument("--width", type=int, default=640)
    sp.add_argument("--height", type=int, default=480)

    sp = add("extract", cmd_extract, "extract thinned features from images into CSV files")
    sp.add_argument("images", nargs="+")
    sp.add_argument("--out-dir")
    sp.add_argument("--output", "-o", help="output CSV (single image only)")
    feature_opts(sp)

    sp = add("preprocess", cmd_preprocess, "build a labelled training set from a manifest")
    sp.add_argument("manifest")
    sp.add_argument("--output", "-o", required=True)
    sp.add_argument("--drop-fraction", type=float)
    sp.add_argument("--keep-outliers", action="store_true")
    sp.add_argument("--dense-split", type=int, metavar="N", help="also write dense/non-dense subsets")
    feature_opts(sp)

    sp = add("train", cmd_train, "train a classifier on a labelled feature CSV")
    sp.add_argument("features")
    sp.add_argument("--output", "-o", required=True)
    sp.add_argument("--classifier", choices=("knn", "mlp", "svm"))
    sp.add_argument("--validation", help="explicit validation CSV for MLP early stopping")
    sp.add_argument("--variant", choices=sorted(features.VARIANTS))
    sp.add_argument("--k", type=int)
    sp.add_argument("--h", type=float)
    sp.add_argument("--knn-mode", choices=("hybrid", "knn", "parzen"))
    sp.add_argument("--structure", help="MLP layer sizes, e.g. 36-60-60-5")
    sp.add_argument("--algorithm", choices=("rprop", "lma"))
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--C", type=float)
    sp.add_argument("--tol", type=float)

    sp = add("grid-search", cmd_grid_search, "SVM (gamma, C) grid search")
    sp.add_argument("features")
    sp.add_argument("--output", "-o", required=True)
    sp.add_argument("--variant", choices=sorted(features.VARIANTS))
    sp.add_argument("--gammas", default="-4:5", help="log2 range lo:hi or comma list (default -4:5)")
    sp.add_argument("--Cs", default="-1:7", help="log2 range lo:hi or comma list (default -1:7)")
    sp.add_argument("--holdout", type=float, default=0.3)
    sp.add_argument("--folds", type=int)
    sp.add_argument("--skip", action="append", metavar="GAMMA,C")
    sp.add_argument("--tol", type=float)

    sp = add("classify", cmd_classify, "classify features in a CSV with a trained model")
    sp.add_argument("model")
    sp.add_argument("features")
    sp.add_argument("--output", "-o", required=True)

    sp = add("segment", cmd_segment, "segment images into overlay PPMs and label PGMs")
    sp.add_argument("model")
    sp.add_argument("images", nargs="+")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--radius-factor", type=float)
    sp.add_argument("--min-weight", type=float)
    feature_opts(sp)

    sp = add("evaluate", cmd_evaluate, "per-image error-rate report over a test manifest")
    sp.add_argument("model")
    sp.add_argument("manifest")
    sp.add_argument("--output", "-o", required=True)
    sp.add_argument("--label")
    sp.add_argument("--pixel", action="store_true", help="also report pixel-level error")
    feature_opts(sp)

    sp = add("reduce", cmd_reduce, "project features to 3-D for plotting")
    sp.add_argument("features")
    sp.add_argument("--output", "-o", required=True)
    sp.add_argument("--method", choices=("pca", "bottleneck"), default="pca")
    sp.add_argument("--epochs", type=int, default=300)
    sp.add_argument("--dense-split", type=int, metavar="N")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    args.mapper = _mapper(args.jobs)
    try:
        cfg = _build_config(args)
        args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"terrainseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, np.linalg.LinAlgError, mlp.LmaDampingExhausted, svm.SvmConvergenceError) as exc:
        print(f"terrainseg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        if isinstance(exc, OSError) and exc.filename:
            msg = f"{exc.filename}: {exc.strerror}"
        else:
            msg = str(exc)
        print(f"terrainseg: error: {msg}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
