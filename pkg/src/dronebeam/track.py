"""Future-beam trackers over sensing sequences, plus recursive rollout.

Three tracker flavors share one 2-layer GRU classifier with a softmax head
per future step: beam-only (past beam indices through a frozen Gaussian
embedding), position-aided (normalized GPS track), and vision-aided (camera
detection centers).  The recursive-rollout machinery replays a tracker over
long segments, feeding back its own top-1 predictions wherever the
beam-training schedule withholds ground truth.

Step conventions used throughout: a rollout segment spans observation steps
1..window+horizon.  Prediction i (i = 1..horizon) consumes window steps
i..i+window-1 and targets step window+i.  A schedule saturating every step
reproduces teacher forcing exactly; the first window steps are always ground
truth, so prediction 1 is teacher-forced by construction.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from .dataset import NormalizationSpec
from .metrics import topk_accuracy
from .nn import Adam, EmbeddingTable, GruClassifier, StepDecay, softmax_cross_entropy
from .predict import rank_beams

TRACKER_MODALITIES = ("beam_only", "position", "vision")
_DEFAULT_LR = {"beam_only": 1e-3, "position": 1e-2, "vision": 1e-2}


class SkipSequence(Exception):
    """Sequence cannot feed the requested modality (e.g. partial visibility)."""


@dataclass(frozen=True)
class TrackerConfig:
    modality: str
    window: int = 8
    horizon: int = 3
    classes: int = 32
    embed_dim: int = 20
    hidden: int = 128
    layers: int = 2
    dropout: float = 0.5
    batch: int = 512
    epochs: int = 200
    base_lr: float = None
    decay_epochs: tuple = (40, 120)
    lr_factor: float = 0.1

    def __post_init__(self):
        if self.modality not in TRACKER_MODALITIES:
            raise ValueError(f"unknown tracker modality {self.modality!r}")
        if self.base_lr is None:
            object.__setattr__(self, "base_lr", _DEFAULT_LR[self.modality])
        if min(self.window, self.horizon, self.classes, self.hidden,
               self.layers, self.batch, self.epochs) < 1:
            raise ValueError("structural settings must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def input_dim(self):
        return self.embed_dim if self.modality == "beam_only" else 2


def build_beam_embedding_table(num_beams=32, dim=20, seed=0):
    return EmbeddingTable(num_entries=num_beams, dim=dim, seed=seed)


def assemble_sequence_inputs(seq, modality, *, table=None, norm=None):
    """Input rows for one sequence window: [window, input_dim]."""
    if modality == "beam_only":
        return table.lookup([s.label for s in seq.window])
    if modality == "position":
        return np.array([[norm.normalize("gps_e", s.gps[0]),
                          norm.normalize("gps_n", s.gps[1])]
                         for s in seq.window])
    if modality == "vision":
        if not all(s.visual.visible for s in seq.window):
            raise SkipSequence(
                f"flight {seq.flight_id} t_start={seq.t_start} partly hidden")
        return np.array([[s.visual.center_u, s.visual.center_v]
                         for s in seq.window])
    raise ValueError(f"unknown tracker modality {modality!r}")


def assemble_sequence_tensor(sequences, config, *, table=None, norm=None):
    """Stack sequences into (X [N, window, D], futures [N, horizon], kept)."""
    rows, futures, kept = [], [], []
    for i, seq in enumerate(sequences):
        if len(seq.window) != config.window:
            raise ValueError(
                f"sequence window length {len(seq.window)} != {config.window}")
        if len(seq.futures) < config.horizon:
            raise ValueError("sequence has fewer futures than the horizon")
        try:
            rows.append(assemble_sequence_inputs(
                seq, config.modality, table=table, norm=norm))
        except SkipSequence:
            continue
        futures.append(list(seq.futures[:config.horizon]))
        kept.append(i)
    if not rows:
        return (np.empty((0, config.window, config.input_dim)),
                np.empty((0, config.horizon), dtype=int), [])
    return np.array(rows), np.array(futures, dtype=int), kept


@dataclass
class TrackerModel:
    net: GruClassifier
    config: TrackerConfig
    table: EmbeddingTable
    norm: NormalizationSpec
    train_log: list = field(default_factory=list)

    def head_proba(self, X):
        """Per-head probabilities for a batch of windows, chunked for memory."""
        X = np.asarray(X, dtype=float)
        out = [np.empty((X.shape[0], self.config.classes))
               for _ in range(self.config.horizon)]
        for start in range(0, X.shape[0], 2048):
            probs = self.net.predict_proba(X[start:start + 2048])
            for h in range(self.config.horizon):
                out[h][start:start + 2048] = probs[h]
        return out


def train_tracker(sequences, config, seed, *, norm=None, table=None):
    """Sum-of-heads cross-entropy training, deterministic per seed."""
    if not sequences:
        raise ValueError("empty sequence training set")
    if config.modality == "beam_only" and table is None:
        table = build_beam_embedding_table(config.classes, config.embed_dim,
                                           seed=(seed, 5))
    if config.modality != "beam_only" and norm is None:
        window_samples = [s for seq in sequences for s in seq.window]
        norm = NormalizationSpec.fit(window_samples)
    X, Y, _ = assemble_sequence_tensor(sequences, config, table=table,
                                       norm=norm)
    n = X.shape[0]
    if n == 0:
        raise ValueError("no usable sequences for this modality")
    net = GruClassifier(config.input_dim, config.hidden, config.layers,
                        config.classes, heads=config.horizon,
                        dropout=config.dropout, seed=(seed, 17))
    sched = StepDecay(config.base_lr, config.decay_epochs, config.lr_factor)
    opt = Adam(net.params, lr=config.base_lr)
    shuffle_rng = np.random.default_rng((seed, 23))
    drop_rng = np.random.default_rng((seed, 29))
    model = TrackerModel(net, config, table, norm, [])
    for epoch in range(config.epochs):
        lr = sched.at_epoch(epoch)
        order = shuffle_rng.permutation(n)
        total = 0.0
        hit1 = 0
        for start in range(0, n, config.batch):
            idx = order[start:start + config.batch]
            logits, cache = net.forward(X[idx], train=True,
                                        dropout_rng=drop_rng)
            dlist = []
            for h in range(config.horizon):
                loss, dl = softmax_cross_entropy(logits[h], Y[idx, h])
                total += loss * idx.size
                dlist.append(dl)
            hit1 += int(np.sum(np.argmax(logits[0], axis=1) == Y[idx, 0]))
            opt.step(net.params, net.backward(cache, dlist), lr=lr)
        model.train_log.append({
            "epoch": epoch,
            "lr": lr,
            "loss": total / n,
            "batch_top1_future1": 100.0 * hit1 / n,
        })
    return model


def predict_future(model, window_inputs, k):
    """Ranked top-k beams for each future step, from one assembled window."""
    X = np.asarray(window_inputs, dtype=float)
    if X.shape != (model.config.window, model.config.input_dim):
        raise ValueError(
            f"expected {model.config.window} input vectors of size "
            f"{model.config.input_dim}")
    if not 1 <= k <= model.config.classes:
        raise ValueError(f"k must lie in [1, {model.config.classes}]")
    probs = model.head_proba(X[None])
    return [rank_beams(p[0])[:k] for p in probs]


@dataclass(frozen=True)
class RolloutSchedule:
    """Which observation steps feed ground-truth beams during rollout."""

    gt_steps: frozenset
    horizon: int = 50
    window: int = 8

    def __post_init__(self):
        steps = frozenset(int(s) for s in self.gt_steps)
        object.__setattr__(self, "gt_steps", steps)
        last = self.window + self.horizon
        if steps and (min(steps) < 1 or max(steps) > last):
            raise ValueError(f"schedule steps must lie within [1, {last}]")
        if not set(range(1, self.window + 1)) <= steps:
            raise ValueError("the first window steps must be ground truth")

    @classmethod
    def initial_only(cls, horizon=50, window=8):
        return cls(frozenset(range(1, window + 1)), horizon, window)

    @classmethod
    def intermittent(cls, horizon=50, window=8):
        steps = set(range(1, window + 1)) | set(range(13, 21)) | set(range(33, 41))
        return cls(frozenset(steps), horizon, window)

    @classmethod
    def every_step(cls, horizon=50, window=8):
        return cls(frozenset(range(1, window + horizon + 1)), horizon, window)

    @classmethod
    def from_ranges(cls, ranges, horizon=50, window=8):
        """Parse inclusive step ranges like ["1-8", "13-20", "33-40"]."""
        steps = set()
        for token in ranges:
            m = re.fullmatch(r"\s*(\d+)\s*(?:-\s*(\d+)\s*)?", str(token))
            if not m:
                raise ValueError(f"bad schedule range {token!r}")
            lo = int(m.group(1))
            hi = int(m.group(2)) if m.group(2) else lo
            if hi < lo:
                raise ValueError(f"bad schedule range {token!r}")
            steps |= set(range(lo, hi + 1))
        return cls(frozenset(steps), horizon, window)

    @property
    def training_fraction(self):
        """Share of the horizon's steps that consume a ground-truth beam."""
        used = self.gt_steps & set(range(1, self.horizon + 1))
        return len(used) / self.horizon

    def provenance(self, i):
        """'g'/'p' flags for the window feeding prediction i."""
        return "".join("g" if s in self.gt_steps else "p"
                       for s in range(i, i + self.window))


@dataclass
class RolloutResult:
    """Per-step rankings [N, horizon, k], truths [N, horizon], provenance."""

    rankings: np.ndarray
    truths: np.ndarray
    provenance: tuple
    schedule: RolloutSchedule = None

    @property
    def horizon(self):
        return self.truths.shape[1]

    def per_step_topk(self, k):
        return np.array([
            topk_accuracy(self.rankings[:, i, :], self.truths[:, i], k)
            for i in range(self.horizon)
        ])

    def overall_topk(self, k):
        flat_r = self.rankings.reshape(-1, self.rankings.shape[2])
        return topk_accuracy(flat_r, self.truths.reshape(-1), k)


def _check_segments(segments, length):
    for seg in segments:
        if len(seg) < length:
            raise ValueError(f"segment needs >= {length} steps, got {len(seg)}")
        flights = {s.flight_id for s in seg[:length]}
        ts = [s.t for s in seg[:length]]
        if len(flights) != 1 or ts != list(range(ts[0], ts[0] + length)):
            raise ValueError("segment must be consecutive steps of one flight")


def recursive_rollout(model, segments, schedule, k=3):
    """Replay a beam-only tracker over segments under a feedback schedule.

    Window entries at scheduled steps take ground-truth labels; every other
    entry takes the model's own earlier top-1 prediction for that step,
    never retro-corrected.  Returns the future-1 top-k rankings per step.
    """
    if model.config.modality != "beam_only":
        raise ValueError("recursive rollout drives the beam-only tracker")
    if schedule.window != model.config.window:
        raise ValueError("schedule window does not match the tracker")
    if not 1 <= k <= model.config.classes:
        raise ValueError(f"k must lie in [1, {model.config.classes}]")
    w, horizon = schedule.window, schedule.horizon
    total = w + horizon
    segments = list(segments)
    _check_segments(segments, total)
    n = len(segments)
    if n == 0:
        raise ValueError("no segments to roll out")
    labels = np.array([[s.label for s in seg[:total]] for seg in segments])
    # entries[:, s-1] holds what the window would feed for observation step s
    entries = labels.copy()
    is_gt = np.array([s in schedule.gt_steps for s in range(1, total + 1)])
    rankings = np.empty((n, horizon, k), dtype=int)
    for i in range(1, horizon + 1):
        window_idx = np.arange(i - 1, i - 1 + w)
        X = model.table.lookup(entries[:, window_idx])
        probs = model.net.predict_proba(X)[0]
        ranked = rank_beams(probs)[:, :k]
        rankings[:, i - 1] = ranked
        target = w + i
        if not is_gt[target - 1]:
            entries[:, target - 1] = ranked[:, 0]
    truths = labels[:, w:]
    prov = tuple(schedule.provenance(i) for i in range(1, horizon + 1))
    return RolloutResult(rankings, truths, prov, schedule)


def sensed_rollout(model, segments, k=3, horizon=50):
    """Slide a position or vision tracker across segments with true inputs.

    No feedback loop exists for sensed modalities; every window entry is a
    sensor reading, marked 's' in the provenance.  Vision segments with any
    hidden frame are dropped; the kept segment indices are returned alongside.
    """
    if model.config.modality == "beam_only":
        raise ValueError("sensed rollout is for position or vision trackers")
    if not 1 <= k <= model.config.classes:
        raise ValueError(f"k must lie in [1, {model.config.classes}]")
    w = model.config.window
    total = w + horizon
    segments = list(segments)
    _check_segments(segments, total)
    feats, truths, kept = [], [], []
    for j, seg in enumerate(segments):
        seg = seg[:total]
        if model.config.modality == "vision":
            if not all(s.visual.visible for s in seg):
                continue
            rows = [[s.visual.center_u, s.visual.center_v] for s in seg]
        else:
            rows = [[model.norm.normalize("gps_e", s.gps[0]),
                     model.norm.normalize("gps_n", s.gps[1])] for s in seg]
        feats.append(rows)
        truths.append([s.label for s in seg[w:]])
        kept.append(j)
    if not feats:
        raise ValueError("no fully usable segments for this modality")
    feats = np.array(feats)
    truths = np.array(truths, dtype=int)
    n = feats.shape[0]
    rankings = np.empty((n, horizon, k), dtype=int)
    for i in range(1, horizon + 1):
        X = feats[:, i - 1 : i - 1 + w]
        probs = model.head_proba(X)[0]
        rankings[:, i - 1] = rank_beams(probs)[:, :k]
    prov = tuple("s" * w for _ in range(horizon))
    return RolloutResult(rankings, truths, prov, None), kept


ROLLOUT_CSV_HEADER = "step,true_beam,pred_top1,pred_top2,pred_top3,input_provenance"


def save_rollout_csv(result, path):
    """One row per (segment, step); segments concatenated, step restarting at 1."""
    if result.rankings.shape[2] < 3:
        raise ValueError("rollout CSV needs rankings of depth >= 3")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ROLLOUT_CSV_HEADER + "\n")
        n, horizon, _ = result.rankings.shape
        for j in range(n):
            for i in range(horizon):
                r = result.rankings[j, i]
                fh.write(f"{i + 1},{result.truths[j, i]},{r[0]},{r[1]},{r[2]},"
                         f"{result.provenance[i]}\n")
