"""Current-beam predictors fed by sensed features.

Three modalities map one sensing sample to a distribution over the 32
downsampled beams: planar GPS position alone, position plus height and
distance, and the camera-derived visual features (detection center and
apparent size).  All three share the same two-hidden-layer MLP shape and the
MLP column of the training table; the historical image-network column is kept
alongside for reference since its schedule differs.

GPS-derived features are min-max normalized with constants fitted on the
training split only.  Camera centers are already unit-square coordinates and
enter unnormalized; the apparent size is normalized like the GPS features.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import NormalizationSpec
from .metrics import topk_accuracy
from .nn import Adam, MlpClassifier, StepDecay, softmax_cross_entropy

MODALITY_FEATURES = {
    "position": ("gps_e", "gps_n"),
    "position_hd": ("gps_e", "gps_n", "height", "distance"),
    "vision": ("vis_u", "vis_v", "vis_size"),
}

# training-table column for the image network the vision branch replaces;
# unused by the MLP substitution but preserved for reference
RESNET_COLUMN = {"batch": 32, "base_lr": 1e-4, "decay_epochs": (4, 8, 12),
                 "lr_factor": 0.1, "epochs": 20}


class SkipSample(Exception):
    """Sample cannot feed the requested modality (e.g. not visible)."""


@dataclass(frozen=True)
class PredictorConfig:
    modality: str
    classes: int = 32
    hidden: tuple = (512, 512)
    batch: int = 32
    epochs: int = 100
    base_lr: float = 1e-2
    decay_epochs: tuple = (20, 40, 80)
    lr_factor: float = 0.1

    def __post_init__(self):
        if self.modality not in MODALITY_FEATURES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.classes < 2 or self.batch < 1 or self.epochs < 1:
            raise ValueError("classes, batch and epochs must be positive")
        if self.base_lr <= 0 or self.lr_factor <= 0:
            raise ValueError("learning rate settings must be positive")

    @property
    def feature_names(self):
        return MODALITY_FEATURES[self.modality]

    @property
    def input_dim(self):
        return len(self.feature_names)


def assemble_features(sample, modality, norm):
    """One input vector for the modality; normalization from the train split."""
    if modality not in MODALITY_FEATURES:
        raise ValueError(f"unknown modality {modality!r}")
    if modality == "vision":
        if not sample.visual.visible:
            raise SkipSample(f"flight {sample.flight_id} t={sample.t} not visible")
        return np.array([
            sample.visual.center_u,
            sample.visual.center_v,
            norm.normalize("vis_size", sample.visual.apparent_size),
        ])
    return np.array([norm.normalize(name, _raw_value(sample, name))
                     for name in MODALITY_FEATURES[modality]])


def _raw_value(sample, name):
    if name == "gps_e":
        return sample.gps[0]
    if name == "gps_n":
        return sample.gps[1]
    return getattr(sample, name)


def assemble_matrix(samples, modality, norm):
    """Stack features for all usable samples; returns (X, labels, kept indices)."""
    rows, labels, kept = [], [], []
    for i, s in enumerate(samples):
        try:
            rows.append(assemble_features(s, modality, norm))
        except SkipSample:
            continue
        labels.append(s.label)
        kept.append(i)
    if not rows:
        return (np.empty((0, len(MODALITY_FEATURES[modality]))),
                np.empty(0, dtype=int), [])
    return np.array(rows), np.array(labels, dtype=int), kept


@dataclass(frozen=True)
class PredictionOutput:
    """Distribution over beams plus the tie-broken descending ranking."""

    probabilities: np.ndarray
    ranking: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be a distribution over beams")
        expected = rank_beams(p)
        if not np.array_equal(np.asarray(self.ranking), expected):
            raise ValueError("ranking must sort probabilities descending, "
                             "ties broken by lower index")
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "ranking", expected)

    @classmethod
    def from_probabilities(cls, probabilities):
        p = np.asarray(probabilities, dtype=float)
        return cls(p, rank_beams(p))


def rank_beams(probabilities):
    """Indices by descending probability; equal probabilities keep index order."""
    p = np.asarray(probabilities)
    return np.argsort(-p, axis=-1, kind="stable")


@dataclass
class PredictorModel:
    net: MlpClassifier
    config: PredictorConfig
    norm: NormalizationSpec
    train_log: list = field(default_factory=list)

    def predict_proba(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((X.shape[0], self.config.classes))
        for start in range(0, X.shape[0], 2048):
            out[start:start + 2048] = self.net.predict_proba(
                X[start:start + 2048])
        return out

    def predict_output(self, x):
        return PredictionOutput.from_probabilities(self.predict_proba(x)[0])


def predict_topk(model, inputs, k):
    """Top-k ranked beam indices, [N, k]; ties resolved toward lower indices."""
    if not 1 <= k <= model.config.classes:
        raise ValueError(f"k must lie in [1, {model.config.classes}]")
    probs = model.predict_proba(inputs)
    return rank_beams(probs)[:, :k]


def train_predictor(train_samples, config, seed, norm=None):
    """Cross-entropy training on the assembled features, deterministic per seed."""
    if norm is None:
        norm = NormalizationSpec.fit(train_samples)
    X, y, _ = assemble_matrix(train_samples, config.modality, norm)
    n = X.shape[0]
    if n == 0:
        raise ValueError("no usable training samples for this modality")
    log = []
    if np.unique(y).size == 1:
        warnings.warn(f"degenerate training labels: all samples are beam {y[0]}")
        log.append({"warning": f"degenerate labels, single class {int(y[0])}"})
    net = MlpClassifier(config.input_dim, config.hidden, config.classes,
                        seed=(seed, 17))
    sched = StepDecay(config.base_lr, config.decay_epochs, config.lr_factor)
    opt = Adam(net.params, lr=config.base_lr)
    rng = np.random.default_rng((seed, 23))
    model = PredictorModel(net, config, norm, log)
    for epoch in range(config.epochs):
        lr = sched.at_epoch(epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch):
            idx = order[start:start + config.batch]
            logits, cache = net.forward(X[idx])
            loss, dlogits = softmax_cross_entropy(logits, y[idx])
            opt.step(net.params, net.backward(cache, dlogits), lr=lr)
            total += loss * idx.size
        ranks = rank_beams(model.predict_proba(X))[:, :1]
        log.append({
            "epoch": epoch,
            "lr": lr,
            "loss": total / n,
            "train_top1": topk_accuracy(ranks, y, 1),
        })
    return model


def training_fraction_sweep(train_samples, test_samples, fractions, config,
                            seed):
    """Retrain on seeded subsets of the train split; score on the fixed test set.

    Subset indices are sorted, so fraction 1.0 degenerates to the untouched
    training set and reproduces the baseline run bit for bit.
    """
    n = len(train_samples)
    rows = []
    for i, frac in enumerate(fractions):
        if not 0.0 < frac <= 1.0:
            raise ValueError(f"fraction {frac} outside (0, 1]")
        size = int(frac * n + 1e-9)
        if size < 1:
            rows.append({"fraction": frac, "train_size": 0,
                         "note": "skipped: subset smaller than one sample"})
            continue
        idx = np.sort(np.random.default_rng((seed, 41, i)).choice(
            n, size=size, replace=False))
        subset = [train_samples[int(j)] for j in idx]
        model = train_predictor(subset, config, seed)
        Xt, yt, _ = assemble_matrix(test_samples, config.modality, model.norm)
        ranks = rank_beams(model.predict_proba(Xt))
        rows.append({
            "fraction": frac,
            "train_size": size,
            "topk": {k: topk_accuracy(ranks[:, :k], yt, k)
                     for k in (1, 2, 3, 5)},
        })
    return rows
