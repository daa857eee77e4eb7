"""Sample containers, train/test splitting, min-max scaling, windowing, CSV I/O.

One SensingSample is one time step of one flight: noisy GPS, true height,
distance, speed and attitude, the camera-derived visual feature, the 32-beam
power vector and its argmax label.  Sequence datasets are sliding windows of
8 consecutive steps paired with the following 3 beam labels; windows never
cross flight boundaries or timestamp gaps.
"""

from dataclasses import dataclass

import numpy as np

CSV_HEADER = (
    ["flight_id", "t", "gps_e", "gps_n", "height", "distance", "speed", "pitch", "roll",
     "vis_u", "vis_v", "vis_size", "visible"]
    + [f"p{i}" for i in range(32)]
    + ["label"]
)

SEQ_CSV_HEADER = ["flight_id", "t_start", "label_t1", "label_t2", "label_t3"]


class SchemaError(ValueError):
    """CSV header does not match the expected schema."""


class ParseError(ValueError):
    """A CSV row could not be parsed; the message names the line."""


@dataclass(frozen=True)
class VisualFeature:
    """Normalized image-plane detection: center in [0,1]^2 when visible, size in (0,1]."""

    center_u: float
    center_v: float
    apparent_size: float
    visible: bool


@dataclass(frozen=True)
class SensingSample:
    flight_id: str
    t: int
    gps: np.ndarray          # observed (noisy) east, north in meters
    height: float
    distance: float
    speed: float
    pitch: float
    roll: float
    visual: VisualFeature
    power32: np.ndarray
    label: int

    def __post_init__(self):
        gps = np.asarray(self.gps, dtype=float)
        p32 = np.asarray(self.power32, dtype=float)
        if gps.shape != (2,):
            raise ValueError("gps must be a 2-vector")
        if p32.shape != (32,):
            raise ValueError("power32 must have 32 entries")
        if not 0 <= self.label < 32:
            raise ValueError("label must lie in [0, 32)")
        gps.flags.writeable = False
        p32.flags.writeable = False
        object.__setattr__(self, "gps", gps)
        object.__setattr__(self, "power32", p32)


@dataclass(frozen=True)
class SequenceSample:
    """8 consecutive samples of one flight plus the next 3 beam labels."""

    window: tuple
    futures: tuple

    def __post_init__(self):
        if len(self.window) < 1:
            raise ValueError("window must not be empty")
        fid = self.window[0].flight_id
        for a, b in zip(self.window, self.window[1:]):
            if b.flight_id != fid or b.t != a.t + 1:
                raise ValueError("window timestamps must be consecutive within one flight")

    @property
    def flight_id(self):
        return self.window[0].flight_id

    @property
    def t_start(self):
        return self.window[0].t


def split_train_test(samples, ratio, rng_seed):
    """Seeded shuffled split; the training side gets floor(ratio * n) items."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie strictly between 0 and 1")
    n = len(samples)
    n_train = int(ratio * n + 1e-9)
    perm = np.random.default_rng(rng_seed).permutation(n)
    train = [samples[i] for i in perm[:n_train]]
    test = [samples[i] for i in perm[n_train:]]
    return train, test


def split_by_flight(samples, ratio, rng_seed):
    """Split whole flights so no flight contributes to both sides."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie strictly between 0 and 1")
    flights = []
    for s in samples:
        if s.flight_id not in flights:
            flights.append(s.flight_id)
    n_train = int(ratio * len(flights) + 1e-9)
    perm = np.random.default_rng(rng_seed).permutation(len(flights))
    train_ids = {flights[i] for i in perm[:n_train]}
    train = [s for s in samples if s.flight_id in train_ids]
    test = [s for s in samples if s.flight_id not in train_ids]
    return train, test


def normalize_minmax(value, bounds):
    """(x - min) / (max - min); degenerate bounds map everything to 0.0.

    Values outside the fitted range land outside [0, 1] on purpose.
    """
    lo, hi = bounds
    if hi == lo:
        return np.zeros_like(np.asarray(value, dtype=float)) + 0.0
    return (np.asarray(value, dtype=float) - lo) / (hi - lo)


def denormalize_minmax(value, bounds):
    lo, hi = bounds
    if hi == lo:
        return np.zeros_like(np.asarray(value, dtype=float)) + lo
    return np.asarray(value, dtype=float) * (hi - lo) + lo


_FEATURE_GETTERS = {
    "gps_e": lambda s: s.gps[0],
    "gps_n": lambda s: s.gps[1],
    "height": lambda s: s.height,
    "distance": lambda s: s.distance,
    "speed": lambda s: s.speed,
    "vis_size": lambda s: s.visual.apparent_size,
}


class NormalizationSpec:
    """Per-feature min/max fitted on the training split only."""

    def __init__(self, bounds=None):
        self.bounds = dict(bounds or {})

    @classmethod
    def fit(cls, train_samples, features=None):
        names = list(features) if features is not None else list(_FEATURE_GETTERS)
        bounds = {}
        for name in names:
            get = _FEATURE_GETTERS[name]
            vals = np.array([get(s) for s in train_samples], dtype=float)
            if vals.size == 0:
                raise ValueError("cannot fit normalization on an empty training split")
            bounds[name] = (float(vals.min()), float(vals.max()))
        return cls(bounds)

    def normalize(self, name, value):
        return normalize_minmax(value, self.bounds[name])

    def denormalize(self, name, value):
        return denormalize_minmax(value, self.bounds[name])

    def to_dict(self):
        return {k: [v[0], v[1]] for k, v in sorted(self.bounds.items())}

    @classmethod
    def from_dict(cls, d):
        return cls({k: (float(v[0]), float(v[1])) for k, v in d.items()})


def build_sequences(samples, window=8, horizon=3):
    """Sliding windows with stride 1 inside runs of consecutive timestamps.

    A contiguous flight of n samples yields max(0, n - window - horizon + 1)
    sequences.  Gaps left by visibility filtering break runs.
    """
    if window < 1 or horizon < 1:
        raise ValueError("window and horizon must be positive")
    by_flight = {}
    for s in samples:
        by_flight.setdefault(s.flight_id, []).append(s)
    out = []
    for fid in by_flight:
        flight = sorted(by_flight[fid], key=lambda s: s.t)
        runs = []
        run = [flight[0]]
        for s in flight[1:]:
            if s.t == run[-1].t + 1:
                run.append(s)
            else:
                runs.append(run)
                run = [s]
        runs.append(run)
        for run in runs:
            for i in range(len(run) - window - horizon + 1):
                win = tuple(run[i : i + window])
                fut = tuple(run[i + window + j].label for j in range(horizon))
                out.append(SequenceSample(window=win, futures=fut))
    return out


def _fmt(x):
    return repr(float(x))


def save_dataset(path, samples):
    """Write the sample table as CSV with full-precision decimal floats."""
    with open(path, "w") as f:
        f.write(",".join(CSV_HEADER) + "\n")
        for s in samples:
            row = [
                s.flight_id,
                str(s.t),
                _fmt(s.gps[0]),
                _fmt(s.gps[1]),
                _fmt(s.height),
                _fmt(s.distance),
                _fmt(s.speed),
                _fmt(s.pitch),
                _fmt(s.roll),
                _fmt(s.visual.center_u),
                _fmt(s.visual.center_v),
                _fmt(s.visual.apparent_size),
                str(int(s.visual.visible)),
            ]
            row += [_fmt(p) for p in s.power32]
            row.append(str(int(s.label)))
            f.write(",".join(row) + "\n")


def load_dataset(path):
    with open(path) as f:
        header = f.readline().rstrip("\n").split(",")
        if header != CSV_HEADER:
            raise SchemaError(
                f"unexpected header: got {len(header)} columns, expected {len(CSV_HEADER)}"
            )
        samples = []
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != len(CSV_HEADER):
                raise ParseError(
                    f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(fields)}"
                )
            try:
                samples.append(
                    SensingSample(
                        flight_id=fields[0],
                        t=int(fields[1]),
                        gps=np.array([float(fields[2]), float(fields[3])]),
                        height=float(fields[4]),
                        distance=float(fields[5]),
                        speed=float(fields[6]),
                        pitch=float(fields[7]),
                        roll=float(fields[8]),
                        visual=VisualFeature(
                            center_u=float(fields[9]),
                            center_v=float(fields[10]),
                            apparent_size=float(fields[11]),
                            visible=bool(int(fields[12])),
                        ),
                        power32=np.array([float(x) for x in fields[13:45]]),
                        label=int(fields[45]),
                    )
                )
            except (ValueError, IndexError) as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(f"line {lineno}: {exc}") from exc
    return samples


def save_sequences(path, sequences):
    """Sequences serialize as (flight_id, t_start, future labels); windows are
    reconstructed from the sample table on load."""
    with open(path, "w") as f:
        f.write(",".join(SEQ_CSV_HEADER) + "\n")
        for q in sequences:
            fut = list(q.futures)
            f.write(f"{q.flight_id},{q.t_start},{fut[0]},{fut[1]},{fut[2]}\n")


def load_sequences(path, samples, window=8, horizon=3):
    index = {(s.flight_id, s.t): s for s in samples}
    out = []
    with open(path) as f:
        header = f.readline().rstrip("\n").split(",")
        if header != SEQ_CSV_HEADER:
            raise SchemaError(f"unexpected sequence header: {header}")
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != len(SEQ_CSV_HEADER):
                raise ParseError(f"line {lineno}: expected {len(SEQ_CSV_HEADER)} fields")
            try:
                fid, t0 = fields[0], int(fields[1])
                futures = tuple(int(x) for x in fields[2 : 2 + horizon])
                win = tuple(index[(fid, t0 + i)] for i in range(window))
            except KeyError as exc:
                raise ParseError(f"line {lineno}: references unknown sample {exc}") from exc
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            out.append(SequenceSample(window=win, futures=futures))
    return out


def label_histogram(samples, num_classes=32):
    counts = np.zeros(num_classes, dtype=int)
    for s in samples:
        counts[s.label] += 1
    return counts
