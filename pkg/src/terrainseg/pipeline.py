"""Glue between the modules: one config object, one classifier interface, per-image steps."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dataset, evaluation, features, knn, mlp, segmentation, svm
from .featureset import CLASS_NAMES, FeatureSet
from .imaging import load_gray, read_pnm

CLASSIFIERS = ("knn", "mlp", "svm")


class ConfigError(ValueError):
    pass


@dataclass
class ClassifierConfig:
    kind: str = "knn"
    # k-NN: three neighbours and the hybrid Parzen rule
    k: int = 3
    h: float | None = None
    knn_mode: str = "hybrid"
    # MLP: the larger of the two published structures; RPROP by default (LMA on
    # 6185 weights solves a 6185x6185 system per step)
    hidden: list = field(default_factory=lambda: [60, 60])
    algorithm: str = "rprop"
    epochs: int = 500
    patience: int = 20
    # SVM: the published grid-search optimum gamma = 2^3, C = 2^2
    gamma: float = 8.0
    C: float = 4.0
    tol: float = 1e-3

    def __post_init__(self):
        if self.kind not in CLASSIFIERS:
            raise ConfigError(f"unknown classifier {self.kind!r}; expected one of {', '.join(CLASSIFIERS)}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.h is not None and self.h <= 0:
            raise ConfigError("h must be > 0")
        if self.knn_mode not in ("hybrid", "knn", "parzen"):
            raise ConfigError(f"unknown k-NN mode {self.knn_mode!r}")
        if len(self.hidden) != 2 or any(int(n) < 1 for n in self.hidden):
            raise ConfigError("hidden must list two positive layer sizes")
        self.hidden = [int(n) for n in self.hidden]
        if self.algorithm not in ("rprop", "lma"):
            raise ConfigError(f"unknown training algorithm {self.algorithm!r}")
        if self.epochs < 0 or self.patience < 1:
            raise ConfigError("epochs must be >= 0 and patience >= 1")
        if self.gamma <= 0 or self.C <= 0 or self.tol <= 0:
            raise ConfigError("gamma, C and tol must be > 0")


@dataclass
class SplatConfig:
    radius_factor: float = 1.0
    min_weight: float = 1e-3

    def __post_init__(self):
        if self.radius_factor <= 0:
            raise ConfigError("radius_factor must be > 0")
        if self.min_weight < 0:
            raise ConfigError("min_weight must be >= 0")


@dataclass
class PipelineConfig:
    variant: str = "USURF36"
    detector: features.DetectorConfig = field(default_factory=features.DetectorConfig)
    box: int = 20  # thinning grid, 768 features at most on 640x480
    outlier: dataset.OutlierConfig = field(default_factory=dataset.OutlierConfig)  # drops 10%
    dense_neighbors: int = 5
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    splat: SplatConfig = field(default_factory=SplatConfig)
    seed: int = 0

    def __post_init__(self):
        try:
            features.check_variant(self.variant)
        except features.FeatureError as exc:
            raise ConfigError(str(exc)) from None
        if self.box < 1:
            raise ConfigError("box must be >= 1")
        if self.dense_neighbors < 1:
            raise ConfigError("dense_neighbors must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        sections = {
            "detector": features.DetectorConfig,
            "outlier": dataset.OutlierConfig,
            "classifier": ClassifierConfig,
            "splat": SplatConfig,
        }
        try:
            for key, typ in sections.items():
                if key in d:
                    sub = d[key]
                    bad = set(sub) - set(typ.__dataclass_fields__)
                    if bad:
                        raise ConfigError(f"unknown {key} keys: {', '.join(sorted(bad))}")
                    d[key] = typ(**sub)
            return cls(**d)
        except (features.FeatureError, dataset.DatasetError) as exc:
            raise ConfigError(str(exc)) from None
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


# ---------------------------------------------------------------------------
# classifier adapter


@dataclass
class Classifier:
    """A trained k-NN, MLP or SVM model behind one predict interface."""

    kind: str
    model: object
    training_set: FeatureSet | None = None

    @property
    def variant(self) -> str | None:
        return self.model.meta.get("variant")

    @property
    def class_count(self) -> int:
        if self.kind == "mlp":
            return int(self.model.structure[-1])
        return int(self.model.class_count)

    @property
    def n_params(self) -> int:
        """Stored coefficients: weights for the MLP, vectors x dims for k-NN, SV entries for SVM."""
        if self.kind == "mlp":
            return self.model.n_params
        if self.kind == "knn":
            return int(self.model.X.size)
        return int(sum(m.support_vectors.size + m.coef.size + 1 for m in self.model.machines.values()))

    def predict(self, X):
        """``(classes, scores)``; scores are non-negative, one row per input."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] == 0:
            return np.zeros(0, dtype=np.int64), np.zeros((0, self.class_count))
        if self.kind == "knn":
            cls, post = knn.classify(self.model, X)
        elif self.kind == "mlp":
            cls, post = mlp.classify(self.model, X)
        else:
            cls, _, post = svm.ovo_classify(self.model, X)
        return np.asarray(cls, dtype=np.int64), np.asarray(post, dtype=np.float64)

    def save(self, path) -> None:
        if self.kind == "knn":
            knn.save(self.model, path, self.training_set)
        elif self.kind == "mlp":
            mlp.save(self.model, path)
        else:
            svm.save(self.model, path)

    @classmethod
    def load(cls, path) -> "Classifier":
        with open(path, encoding="utf-8") as fh:
            head = fh.read(256)
        if head.startswith(f"# {knn.FORMAT_TAG}"):
            return cls("knn", knn.load(path))
        if '"terrainseg-mlp"' in head:
            return cls("mlp", mlp.load(path))
        if '"terrainseg-svm"' in head:
            return cls("svm", svm.load(path))
        raise ValueError(f"{path}: unrecognised model file")


def train_classifier(train: FeatureSet, cfg: ClassifierConfig, seed: int = 0, val: FeatureSet | None = None) -> Classifier:
    """Fit the configured classifier on a labelled set."""
    train = dataset.labeled_only(train)
    if len(train) == 0:
        raise dataset.DatasetError("training set has no labelled features")
    m = train.class_count
    if cfg.kind == "knn":
        model = knn.fit(train, k=cfg.k, h=cfg.h, mode=cfg.knn_mode)
        model.meta["class_names"] = list(train.class_names)
        return Classifier("knn", model, train)
    if cfg.kind == "mlp":
        structure = [train.dim, *cfg.hidden, m]
        v = None if val is None else (val.descriptors, val.labels)
        model, trace = mlp.train(
            train.descriptors, train.labels, structure, cfg.algorithm, seed=seed,
            epochs=cfg.epochs, val=v, patience=cfg.patience, class_count=m,
        )
        model.meta.update({"variant": train.variant, "class_names": list(train.class_names)})
        return Classifier("mlp", model)
    model = svm.ovo_train(train.descriptors, train.labels, cfg.gamma, cfg.C, class_count=m, tol=cfg.tol)
    model.meta.update({"variant": train.variant, "class_names": list(train.class_names)})
    return Classifier("svm", model)


# ---------------------------------------------------------------------------
# per-image steps


def load_image(path) -> np.ndarray:
    """Grayscale [0, 1] image from a PPM or PGM file."""
    return load_gray(path)


def extract_image(path, cfg: PipelineConfig) -> FeatureSet:
    """Detect, thin and describe one image."""
    return features.extract(load_image(path), cfg.variant, cfg.detector, cfg.box)


def labelled_features(image_path, mask_path, cfg: PipelineConfig) -> FeatureSet:
    fs = extract_image(image_path, cfg)
    mask = dataset.load_mask(mask_path)
    img_shape = np.asarray(read_pnm(image_path)).shape[:2]
    if mask.shape != img_shape:
        raise dataset.DatasetError(f"{mask_path}: mask {mask.shape} does not match image {img_shape}")
    return dataset.label_features(fs, mask)


def preprocess(pairs, cfg: PipelineConfig, drop: bool = True) -> FeatureSet:
    """Labelled, thinned features of every training pair, optionally with outliers removed."""
    pairs = list(pairs)
    if not pairs:
        raise dataset.DatasetError("empty manifest")
    fs = FeatureSet.concat([labelled_features(img, mask, cfg) for img, mask in pairs])
    if drop:
        fs = dataset.eliminate_outliers(fs, cfg.outlier)
    return fs


@dataclass
class Segmentation:
    labels: np.ndarray
    likelihood: segmentation.LikelihoodMap
    features: FeatureSet
    predictions: np.ndarray


def segment_image(path, classifier: Classifier, cfg: PipelineConfig) -> Segmentation:
    img = load_image(path)
    fs = features.extract(img, cfg.variant, cfg.detector, cfg.box)
    check_variant_match(classifier, cfg.variant, fs.dim)
    cls, scores = classifier.predict(fs.descriptors)
    h, w = img.shape
    lmap = segmentation.splat(fs.points, np.maximum(scores, 0.0), (w, h), cfg.splat.radius_factor)
    if lmap.scores.shape[-1] == 0:
        lmap = segmentation.LikelihoodMap(np.zeros((h, w, classifier.class_count)), lmap.weight)
    return Segmentation(segmentation.to_labels(lmap, cfg.splat.min_weight), lmap, fs, cls)


def check_variant_match(classifier: Classifier, variant: str, dim: int) -> None:
    v = classifier.variant
    if v and v != variant:
        raise ConfigError(f"model was trained on {v} features but the config asks for {variant}")
    expected = {"knn": lambda: classifier.model.dim, "mlp": lambda: classifier.model.structure[0]}
    if classifier.kind in expected and expected[classifier.kind]() != dim:
        raise ConfigError(f"model expects {expected[classifier.kind]()}-dim descriptors, got {dim}")


def image_feature_error(image_path, mask_path, classifier: Classifier, cfg: PipelineConfig) -> float:
    fs = labelled_features(image_path, mask_path, cfg)
    check_variant_match(classifier, cfg.variant, fs.dim)
    if len(fs) == 0:
        raise evaluation.EvaluationError(f"{image_path}: no labelled features")
    pred, _ = classifier.predict(fs.descriptors)
    return evaluation.feature_error_rate(pred, fs.labels)


def per_image_report(classifier: Classifier, pairs, cfg: PipelineConfig, label: str | None = None, mapper=map) -> evaluation.EvalReport:
    """Feature error rate of every test pair plus mean and sample std."""
    pairs = list(pairs)
    if not pairs:
        raise evaluation.EvaluationError("no test pairs")
    rates = list(mapper(lambda p: image_feature_error(p[0], p[1], classifier, cfg), pairs))
    label = label or f"{cfg.variant}-{classifier.kind.upper()}"
    return evaluation.EvalReport.from_rates(label, rates)


def class_names(n: int):
    return list(CLASS_NAMES[:n]) if n <= len(CLASS_NAMES) else [f"class{i}" for i in range(n)]


def resolve(path, base):
    return path if os.path.isabs(path) else os.path.join(base, path)
